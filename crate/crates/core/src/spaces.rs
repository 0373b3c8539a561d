//! Finite element spaces on a triangulation: nonconforming Crouzeix–Raviart
//! and conforming piecewise-linear, both with homogeneous Dirichlet
//! conditions eliminated from the unknowns.
//!
//! The Crouzeix–Raviart (CR) space attaches one degree of freedom to each
//! interior edge; on a triangle the basis function of edge `l` (the edge
//! opposite vertex `l`) is `1 − 2λ_l` in barycentric coordinates. CR
//! functions are continuous only at edge midpoints, their gradients are
//! taken triangle by triangle (the *broken* gradient), and their element
//! mass matrix is exactly diagonal — which later makes L² integrals of
//! eigenfunctions cheap and exact. The conforming space has one unknown per
//! interior vertex and is a subspace of the CR space in the sense that
//! evaluating at edge midpoints embeds it exactly.

use crate::mesh::TriMesh;
use crate::sparse::{SparseError, SparseSymMatrix};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SpaceError {
    #[error("triangle {tri} has non-positive area {area:e}; cannot assemble")]
    Degenerate { tri: usize, area: f64 },
    #[error("coefficient vector has length {got}, space has {expected} unknowns")]
    LengthMismatch { got: usize, expected: usize },
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpaceKind {
    CrouzeixRaviart,
    ConformingP1,
}

/// Coefficient vector tagged with the kind of space it lives in.
///
/// The mesh and space are supplied from context; operations check lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct FEFunction {
    pub kind: SpaceKind,
    pub coeffs: Vec<f64>,
}

/// How vertex values are averaged over the incident-triangle patch when
/// postprocessing a CR function into a conforming one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AveragingRule {
    /// Plain mean over the patch (the default).
    #[default]
    Uniform,
    /// Mean weighted by triangle area.
    AreaWeighted,
}

/// Common interface of the two spaces: local basis data plus the local →
/// global degree-of-freedom maps, from which assembly and all elementwise
/// integrals follow.
pub trait FeSpace {
    fn mesh(&self) -> &TriMesh;
    fn kind(&self) -> SpaceKind;
    fn ndof(&self) -> usize;
    /// Global unknowns of the three local basis functions on triangle `k`;
    /// `None` marks a constrained (boundary) function.
    fn element_dofs(&self, k: usize) -> [Option<usize>; 3];
    /// Gradients of the three local basis functions (constant on `k`).
    fn basis_gradients(&self, k: usize) -> [[f64; 2]; 3];
    /// Exact integrals `∫_K b_i b_j` of local basis products.
    fn local_mass(&self, k: usize) -> [[f64; 3]; 3];
    /// Values of the local basis at a barycentric point.
    fn basis_values(&self, bary: [f64; 3]) -> [f64; 3];

    fn local_stiffness(&self, k: usize) -> [[f64; 3]; 3] {
        let g = self.basis_gradients(k);
        let area = self.mesh().area(k);
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = area * (g[i][0] * g[j][0] + g[i][1] * g[j][1]);
            }
        }
        s
    }

    /// Gradient of the function on triangle `k` (constrained basis
    /// functions contribute zero).
    fn element_gradient(&self, v: &FEFunction, k: usize) -> [f64; 2] {
        let g = self.basis_gradients(k);
        let dofs = self.element_dofs(k);
        let mut out = [0.0; 2];
        for l in 0..3 {
            if let Some(d) = dofs[l] {
                out[0] += v.coeffs[d] * g[l][0];
                out[1] += v.coeffs[d] * g[l][1];
            }
        }
        out
    }

    /// Evaluates the function at a point of triangle `k` given in
    /// barycentric coordinates.
    fn eval_bary(&self, v: &FEFunction, k: usize, bary: [f64; 3]) -> f64 {
        let b = self.basis_values(bary);
        let dofs = self.element_dofs(k);
        let mut out = 0.0;
        for l in 0..3 {
            if let Some(d) = dofs[l] {
                out += v.coeffs[d] * b[l];
            }
        }
        out
    }

    fn zero_function(&self) -> FEFunction {
        FEFunction {
            kind: self.kind(),
            coeffs: vec![0.0; self.ndof()],
        }
    }

    fn check_len(&self, v: &FEFunction) -> Result<(), SpaceError> {
        if v.coeffs.len() != self.ndof() {
            return Err(SpaceError::LengthMismatch {
                got: v.coeffs.len(),
                expected: self.ndof(),
            });
        }
        Ok(())
    }
}

/// Crouzeix–Raviart space: one unknown per interior edge.
pub struct CrSpace<'m> {
    mesh: &'m TriMesh,
    edge_dof: Vec<Option<usize>>,
    ndof: usize,
}

impl<'m> CrSpace<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let mut edge_dof = vec![None; mesh.edges().len()];
        let mut next = 0;
        for (e, edge) in mesh.edges().iter().enumerate() {
            if !edge.on_boundary {
                edge_dof[e] = Some(next);
                next += 1;
            }
        }
        CrSpace {
            mesh,
            edge_dof,
            ndof: next,
        }
    }

    /// Unknown attached to global edge `e`, if the edge is interior.
    pub fn edge_dof(&self, e: usize) -> Option<usize> {
        self.edge_dof[e]
    }

    /// Inverse of `edge_dof`: the interior edges in unknown order.
    pub fn dof_edges(&self) -> Vec<usize> {
        let mut out = vec![0; self.ndof];
        for (e, d) in self.edge_dof.iter().enumerate() {
            if let Some(d) = d {
                out[*d] = e;
            }
        }
        out
    }
}

impl FeSpace for CrSpace<'_> {
    fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    fn kind(&self) -> SpaceKind {
        SpaceKind::CrouzeixRaviart
    }

    fn ndof(&self) -> usize {
        self.ndof
    }

    fn element_dofs(&self, k: usize) -> [Option<usize>; 3] {
        self.mesh.triangle_edges(k).map(|e| self.edge_dof[e])
    }

    fn basis_gradients(&self, k: usize) -> [[f64; 2]; 3] {
        // φ_l = 1 − 2 λ_l, so ∇φ_l = −2 ∇λ_l.
        let g = bary_gradients(self.mesh, k);
        g.map(|[gx, gy]| [-2.0 * gx, -2.0 * gy])
    }

    fn local_mass(&self, k: usize) -> [[f64; 3]; 3] {
        // ∫_K (1−2λ_i)(1−2λ_j) = |K|/3 · δ_ij: the CR basis is L²-orthogonal
        // on every triangle.
        let third = self.mesh.area(k) / 3.0;
        let mut m = [[0.0; 3]; 3];
        for l in 0..3 {
            m[l][l] = third;
        }
        m
    }

    fn basis_values(&self, bary: [f64; 3]) -> [f64; 3] {
        bary.map(|l| 1.0 - 2.0 * l)
    }
}

/// Conforming piecewise-linear space: one unknown per interior vertex.
pub struct P1Space<'m> {
    mesh: &'m TriMesh,
    vertex_dof: Vec<Option<usize>>,
    ndof: usize,
}

impl<'m> P1Space<'m> {
    pub fn new(mesh: &'m TriMesh) -> Self {
        let mut vertex_dof = vec![None; mesh.vertices().len()];
        let mut next = 0;
        for (v, vert) in mesh.vertices().iter().enumerate() {
            if !vert.on_boundary {
                vertex_dof[v] = Some(next);
                next += 1;
            }
        }
        P1Space {
            mesh,
            vertex_dof,
            ndof: next,
        }
    }

    pub fn vertex_dof(&self, v: usize) -> Option<usize> {
        self.vertex_dof[v]
    }
}

impl FeSpace for P1Space<'_> {
    fn mesh(&self) -> &TriMesh {
        self.mesh
    }

    fn kind(&self) -> SpaceKind {
        SpaceKind::ConformingP1
    }

    fn ndof(&self) -> usize {
        self.ndof
    }

    fn element_dofs(&self, k: usize) -> [Option<usize>; 3] {
        self.mesh.triangles()[k]
            .vertices
            .map(|v| self.vertex_dof[v])
    }

    fn basis_gradients(&self, k: usize) -> [[f64; 2]; 3] {
        bary_gradients(self.mesh, k)
    }

    fn local_mass(&self, k: usize) -> [[f64; 3]; 3] {
        let f = self.mesh.area(k) / 12.0;
        let mut m = [[f; 3]; 3];
        for l in 0..3 {
            m[l][l] = 2.0 * f;
        }
        m
    }

    fn basis_values(&self, bary: [f64; 3]) -> [f64; 3] {
        bary
    }
}

/// Gradients of the barycentric coordinate functions on triangle `k`.
fn bary_gradients(mesh: &TriMesh, k: usize) -> [[f64; 2]; 3] {
    let c = mesh.tri_coords(k);
    let two_a = 2.0 * mesh.area(k);
    let mut g = [[0.0; 2]; 3];
    for l in 0..3 {
        let p1 = c[(l + 1) % 3];
        let p2 = c[(l + 2) % 3];
        g[l] = [(p1.1 - p2.1) / two_a, (p2.0 - p1.0) / two_a];
    }
    g
}

/// Barycentric coordinates of `(x, y)` with respect to triangle `k`.
pub fn barycentric(mesh: &TriMesh, k: usize, x: f64, y: f64) -> [f64; 3] {
    let c = mesh.tri_coords(k);
    let a = mesh.area(k);
    let sub =
        |p: (f64, f64), q: (f64, f64)| 0.5 * ((q.0 - p.0) * (y - p.1) - (x - p.0) * (q.1 - p.1));
    [
        sub(c[1], c[2]) / a,
        sub(c[2], c[0]) / a,
        sub(c[0], c[1]) / a,
    ]
}

// ----- assembly -----------------------------------------------------------

fn assemble<S, F>(space: &S, local: F) -> Result<SparseSymMatrix, SpaceError>
where
    S: FeSpace,
    F: Fn(&S, usize) -> [[f64; 3]; 3],
{
    let mesh = space.mesh();
    let mut triplets = Vec::new();
    for k in 0..mesh.triangles().len() {
        let area = mesh.area(k);
        if area <= 0.0 || !area.is_finite() {
            return Err(SpaceError::Degenerate { tri: k, area });
        }
        let m = local(space, k);
        let dofs = space.element_dofs(k);
        for i in 0..3 {
            let Some(gi) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(gj) = dofs[j] else { continue };
                if m[i][j] != 0.0 {
                    triplets.push((gi, gj, m[i][j]));
                }
            }
        }
    }
    Ok(SparseSymMatrix::from_triplets(space.ndof(), &triplets)?)
}

/// Stiffness matrix `a(b_i, b_j) = ∫ ∇b_i · ∇b_j` (broken gradients for CR).
pub fn assemble_stiffness<S: FeSpace>(space: &S) -> Result<SparseSymMatrix, SpaceError> {
    assemble(space, S::local_stiffness)
}

/// Mass matrix `(b_i, b_j)_{L²}`; diagonal for the CR space.
pub fn assemble_mass<S: FeSpace>(space: &S) -> Result<SparseSymMatrix, SpaceError> {
    assemble(space, S::local_mass)
}

// ----- interpolation and embedding ----------------------------------------

/// Interpolates a continuous function into the CR space by edge averages:
/// each interior-edge unknown becomes the mean of `w` along its edge
/// (three-point Gauss quadrature, exact for polynomials up to degree 5).
/// For piecewise-linear `w` this reduces to the edge-midpoint value, and the
/// broken gradient of the interpolant is the elementwise L² projection of
/// `∇w` onto piecewise constants.
pub fn cr_interpolate<F: Fn(f64, f64) -> f64>(space: &CrSpace, w: F) -> FEFunction {
    // Gauss–Legendre on [0,1]: exact through degree 5.
    let s = (0.6f64).sqrt() * 0.5;
    let nodes = [0.5 - s, 0.5, 0.5 + s];
    let weights = [5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0];
    let mesh = space.mesh();
    let mut f = space.zero_function();
    for (e, edge) in mesh.edges().iter().enumerate() {
        let Some(d) = space.edge_dof(e) else { continue };
        let a = &mesh.vertices()[edge.vertices[0]];
        let b = &mesh.vertices()[edge.vertices[1]];
        let mut avg = 0.0;
        for (t, wt) in nodes.iter().zip(&weights) {
            let x = a.x + t * (b.x - a.x);
            let y = a.y + t * (b.y - a.y);
            avg += wt * w(x, y);
        }
        f.coeffs[d] = avg;
    }
    f
}

/// Embeds a conforming function into the CR space on the same mesh by
/// evaluating at edge midpoints; the embedding is exact (the function is
/// unchanged as an element of L²).
pub fn embed_p1(p1: &P1Space, cr: &CrSpace, u: &FEFunction) -> Result<FEFunction, SpaceError> {
    assert_eq!(
        u.kind,
        SpaceKind::ConformingP1,
        "embed_p1 expects a conforming function"
    );
    p1.check_len(u)?;
    let mesh = cr.mesh();
    let value_at = |v: usize| p1.vertex_dof(v).map_or(0.0, |d| u.coeffs[d]);
    let mut f = cr.zero_function();
    for (e, edge) in mesh.edges().iter().enumerate() {
        if let Some(d) = cr.edge_dof(e) {
            f.coeffs[d] = 0.5 * (value_at(edge.vertices[0]) + value_at(edge.vertices[1]));
        }
    }
    Ok(f)
}

/// Averages a CR function into the conforming space: at each interior
/// vertex the (possibly jumping) traces of the neighbouring triangles are
/// averaged; boundary vertices keep the homogeneous Dirichlet value.
/// Composed with the embedding this is the identity on conforming functions
/// under the uniform rule.
pub fn postprocess_average(
    cr: &CrSpace,
    p1: &P1Space,
    v: &FEFunction,
    rule: AveragingRule,
) -> Result<FEFunction, SpaceError> {
    assert_eq!(
        v.kind,
        SpaceKind::CrouzeixRaviart,
        "postprocess expects a CR function"
    );
    cr.check_len(v)?;
    let mesh = cr.mesh();
    let mut out = p1.zero_function();
    for (vid, vert) in mesh.vertices().iter().enumerate() {
        let Some(dof) = p1.vertex_dof(vid) else {
            continue;
        };
        debug_assert!(!vert.on_boundary);
        let mut acc = 0.0;
        let mut wsum = 0.0;
        for &k in mesh.vertex_patch(vid) {
            let local = mesh.triangles()[k]
                .vertices
                .iter()
                .position(|&w| w == vid)
                .expect("patch triangle contains its vertex");
            let mut bary = [0.0; 3];
            bary[local] = 1.0;
            let trace = cr.eval_bary(v, k, bary);
            let w = match rule {
                AveragingRule::Uniform => 1.0,
                AveragingRule::AreaWeighted => mesh.area(k),
            };
            acc += w * trace;
            wsum += w;
        }
        out.coeffs[dof] = acc / wsum;
    }
    Ok(out)
}

/// Carries a CR function from a mesh to its refinement: each fine edge
/// unknown averages, over the fine triangles meeting that edge, the value
/// of the coarse function on the corresponding ancestor triangle at the
/// fine edge midpoint. On conforming (embedded) functions this reproduces
/// the fine interpolant exactly; across a coarse jump it averages the two
/// one-sided values, matching the CR edge-mean degrees of freedom.
///
/// `fine` must be a mesh produced by refining `coarse.mesh()` (its parent
/// map is interpreted against the coarse triangle ids).
pub fn transfer_to_refined(
    coarse: &CrSpace,
    v: &FEFunction,
    fine: &CrSpace,
) -> Result<FEFunction, SpaceError> {
    assert_eq!(v.kind, SpaceKind::CrouzeixRaviart);
    coarse.check_len(v)?;
    let fm = fine.mesh();
    let cm = coarse.mesh();
    assert_eq!(
        fm.parents().len(),
        fm.triangles().len(),
        "fine mesh must carry ancestry"
    );
    let mut out = fine.zero_function();
    for (e, edge) in fm.edges().iter().enumerate() {
        let Some(d) = fine.edge_dof(e) else { continue };
        let (mx, my) = fm.edge_midpoint(e);
        let (t0, t1) = edge.triangles;
        let mut acc = 0.0;
        let mut count = 0.0;
        for t in std::iter::once(t0).chain(t1) {
            let anc = fm.parents()[t];
            assert!(
                anc < cm.triangles().len(),
                "parent map does not match coarse mesh"
            );
            let bary = barycentric(cm, anc, mx, my);
            acc += coarse.eval_bary(v, anc, bary);
            count += 1.0;
        }
        out.coeffs[d] = acc / count;
    }
    Ok(out)
}

// ----- norms, inner products, source solves -------------------------------

/// Broken H¹ seminorm `(Σ_K ‖∇v‖²_{L²(K)})^{1/2}`, computed elementwise.
pub fn broken_seminorm<S: FeSpace>(space: &S, v: &FEFunction) -> f64 {
    energy_inner(space, v, v).max(0.0).sqrt()
}

/// Elementwise energy (broken H¹) inner product `Σ_K ∫_K ∇u · ∇v`.
pub fn energy_inner<S: FeSpace>(space: &S, u: &FEFunction, v: &FEFunction) -> f64 {
    let mesh = space.mesh();
    let mut acc = 0.0;
    for k in 0..mesh.triangles().len() {
        let gu = space.element_gradient(u, k);
        let gv = space.element_gradient(v, k);
        acc += mesh.area(k) * (gu[0] * gv[0] + gu[1] * gv[1]);
    }
    acc
}

/// Exact L² inner product via the local mass matrices.
pub fn l2_inner<S: FeSpace>(space: &S, u: &FEFunction, v: &FEFunction) -> f64 {
    let mesh = space.mesh();
    let mut acc = 0.0;
    for k in 0..mesh.triangles().len() {
        let m = space.local_mass(k);
        let dofs = space.element_dofs(k);
        for i in 0..3 {
            let Some(gi) = dofs[i] else { continue };
            for j in 0..3 {
                let Some(gj) = dofs[j] else { continue };
                acc += u.coeffs[gi] * m[i][j] * v.coeffs[gj];
            }
        }
    }
    acc
}

pub fn l2_norm<S: FeSpace>(space: &S, v: &FEFunction) -> f64 {
    l2_inner(space, v, v).max(0.0).sqrt()
}

/// Solves the discrete source problem `a(u, b_i) = (f, b_i)` for the given
/// right-hand side function (the discrete solution operator applied to a
/// member of the same space).
pub fn solve_source<S: FeSpace>(space: &S, f: &FEFunction) -> Result<FEFunction, SpaceError> {
    space.check_len(f)?;
    let a = assemble_stiffness(space)?;
    let m = assemble_mass(space)?;
    let rhs = m.matvec(&f.coeffs);
    let factor = a.factorize()?;
    Ok(FEFunction {
        kind: space.kind(),
        coeffs: factor.solve(&rhs),
    })
}
