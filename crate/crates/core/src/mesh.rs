//! Conforming triangular meshes with newest-vertex bisection.
//!
//! A [`TriMesh`] owns vertices, triangles and a derived edge table. The
//! triangle list is the source of truth: edges are rebuilt (and conformity is
//! re-checked) every time a mesh is constructed, so an inconsistent mesh
//! cannot be represented. Triangles are stored counterclockwise and every
//! interior edge is shared by exactly two of them ­— no hanging nodes, ever.
//!
//! Adaptive refinement uses newest-vertex bisection: each triangle carries a
//! *refinement edge* (as the local index of the opposite vertex), and
//! bisection inserts the midpoint of that edge. A marked triangle forces its
//! refinement edge to split; a completion sweep then propagates forced splits
//! until the refined mesh is conforming again. Within one sweep a triangle is
//! bisected at most twice, and on structured right-isosceles meshes all
//! descendants stay right-isosceles, so minimum angles never degrade.

use std::collections::HashMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("triangle {tri} is degenerate or clockwise (signed area {area:e})")]
    BadOrientation { tri: usize, area: f64 },
    #[error("triangle {tri} references vertex {vertex}, but only {nv} vertices exist")]
    IndexOutOfRange {
        tri: usize,
        vertex: usize,
        nv: usize,
    },
    #[error("vertex {vertex} is not used by any triangle")]
    UnusedVertex { vertex: usize },
    #[error("edge ({a},{b}) is shared by more than two triangles")]
    NonManifoldEdge { a: usize, b: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub on_boundary: bool,
}

/// Triangle with counterclockwise vertex ordering.
///
/// `refinement_edge` is the local index of the vertex *opposite* the edge
/// that newest-vertex bisection will split; `generation` counts how many
/// bisections separate the triangle from the initial mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub refinement_edge: u8,
    pub generation: u32,
}

/// Undirected edge; `triangles` lists one incident triangle (boundary) or two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub vertices: [usize; 2],
    pub triangles: (usize, Option<usize>),
    pub on_boundary: bool,
}

#[derive(Debug, Clone)]
pub struct TriMesh {
    vertices: Vec<Vertex>,
    triangles: Vec<Triangle>,
    edges: Vec<Edge>,
    /// `tri_edges[k][l]` is the global id of the edge opposite vertex `l`.
    tri_edges: Vec<[usize; 3]>,
    /// Triangles incident to each vertex, in triangle-id order.
    vertex_tris: Vec<Vec<usize>>,
    /// For refined meshes, the id of the triangle in the *previous* mesh
    /// that each triangle descends from; the identity map on generated ones.
    parent: Vec<usize>,
    domain_tag: String,
}

impl TriMesh {
    /// Builds a mesh from raw vertex coordinates and counterclockwise cells.
    ///
    /// Validates orientation, index ranges, vertex usage and edge conformity.
    /// Refinement edges are seeded on the longest edge of each triangle
    /// (ties broken by lowest local index).
    pub fn from_cells(
        coords: &[(f64, f64)],
        cells: &[[usize; 3]],
        domain_tag: &str,
    ) -> Result<TriMesh, MeshError> {
        let triangles: Vec<Triangle> = cells
            .iter()
            .map(|&vertices| Triangle {
                vertices,
                refinement_edge: 0,
                generation: 0,
            })
            .collect();
        let parent = (0..cells.len()).collect();
        let mut mesh = Self::assemble(coords, triangles, parent, domain_tag)?;
        for k in 0..mesh.triangles.len() {
            mesh.triangles[k].refinement_edge = mesh.longest_edge_local(k);
        }
        Ok(mesh)
    }

    /// Shared constructor: derives edges, flags boundaries, checks invariants.
    fn assemble(
        coords: &[(f64, f64)],
        triangles: Vec<Triangle>,
        parent: Vec<usize>,
        domain_tag: &str,
    ) -> Result<TriMesh, MeshError> {
        let nv = coords.len();
        let mut vertices: Vec<Vertex> = coords
            .iter()
            .map(|&(x, y)| Vertex {
                x,
                y,
                on_boundary: false,
            })
            .collect();

        for (k, t) in triangles.iter().enumerate() {
            for &v in &t.vertices {
                if v >= nv {
                    return Err(MeshError::IndexOutOfRange {
                        tri: k,
                        vertex: v,
                        nv,
                    });
                }
            }
            let area = signed_area(
                (vertices[t.vertices[0]].x, vertices[t.vertices[0]].y),
                (vertices[t.vertices[1]].x, vertices[t.vertices[1]].y),
                (vertices[t.vertices[2]].x, vertices[t.vertices[2]].y),
            );
            if area <= 0.0 || !area.is_finite() {
                return Err(MeshError::BadOrientation { tri: k, area });
            }
        }

        // Edge table: first-appearance ids keep numbering deterministic.
        let mut edge_ids: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = vec![[usize::MAX; 3]; triangles.len()];
        for (k, t) in triangles.iter().enumerate() {
            for l in 0..3 {
                let a = t.vertices[(l + 1) % 3];
                let b = t.vertices[(l + 2) % 3];
                let key = (a.min(b), a.max(b));
                match edge_ids.get(&key) {
                    None => {
                        let id = edges.len();
                        edge_ids.insert(key, id);
                        edges.push(Edge {
                            vertices: [key.0, key.1],
                            triangles: (k, None),
                            on_boundary: false,
                        });
                        tri_edges[k][l] = id;
                    }
                    Some(&id) => {
                        match edges[id].triangles {
                            (_, None) => edges[id].triangles.1 = Some(k),
                            _ => return Err(MeshError::NonManifoldEdge { a: key.0, b: key.1 }),
                        }
                        tri_edges[k][l] = id;
                    }
                }
            }
        }

        for e in &mut edges {
            e.on_boundary = e.triangles.1.is_none();
            if e.on_boundary {
                vertices[e.vertices[0]].on_boundary = true;
                vertices[e.vertices[1]].on_boundary = true;
            }
        }

        let mut vertex_tris = vec![Vec::new(); nv];
        for (k, t) in triangles.iter().enumerate() {
            for &v in &t.vertices {
                vertex_tris[v].push(k);
            }
        }
        if let Some(v) = vertex_tris.iter().position(|ts| ts.is_empty()) {
            return Err(MeshError::UnusedVertex { vertex: v });
        }

        Ok(TriMesh {
            vertices,
            triangles,
            edges,
            tri_edges,
            vertex_tris,
            parent,
            domain_tag: domain_tag.to_string(),
        })
    }

    fn longest_edge_local(&self, k: usize) -> u8 {
        let mut best = 0u8;
        let mut best_len = -1.0;
        for l in 0..3 {
            let len = self.edge_length(self.tri_edges[k][l as usize]);
            if len > best_len {
                best_len = len;
                best = l;
            }
        }
        best
    }

    // ----- accessors -------------------------------------------------------

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn domain_tag(&self) -> &str {
        &self.domain_tag
    }

    /// Global edge ids of triangle `k`; entry `l` is opposite local vertex `l`.
    pub fn triangle_edges(&self, k: usize) -> [usize; 3] {
        self.tri_edges[k]
    }

    /// Triangles incident to vertex `v`, in ascending triangle-id order.
    pub fn vertex_patch(&self, v: usize) -> &[usize] {
        &self.vertex_tris[v]
    }

    /// Id of the ancestor triangle in the mesh this one was refined from.
    pub fn parents(&self) -> &[usize] {
        &self.parent
    }

    pub fn tri_coords(&self, k: usize) -> [(f64, f64); 3] {
        let t = &self.triangles[k];
        [0, 1, 2].map(|i| {
            let v = &self.vertices[t.vertices[i]];
            (v.x, v.y)
        })
    }

    pub fn edge_length(&self, e: usize) -> f64 {
        let [a, b] = self.edges[e].vertices;
        let (va, vb) = (&self.vertices[a], &self.vertices[b]);
        ((va.x - vb.x).powi(2) + (va.y - vb.y).powi(2)).sqrt()
    }

    pub fn edge_midpoint(&self, e: usize) -> (f64, f64) {
        let [a, b] = self.edges[e].vertices;
        let (va, vb) = (&self.vertices[a], &self.vertices[b]);
        (0.5 * (va.x + vb.x), 0.5 * (va.y + vb.y))
    }

    pub fn area(&self, k: usize) -> f64 {
        let [a, b, c] = self.tri_coords(k);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|k| self.area(k)).sum()
    }

    /// Longest side of triangle `k`.
    pub fn diameter(&self, k: usize) -> f64 {
        self.tri_edges[k]
            .iter()
            .map(|&e| self.edge_length(e))
            .fold(0.0, f64::max)
    }

    /// Smallest interior angle over all triangles, in radians.
    pub fn min_angle(&self) -> f64 {
        let mut min = f64::INFINITY;
        for k in 0..self.triangles.len() {
            let c = self.tri_coords(k);
            for i in 0..3 {
                let p = c[i];
                let u = (c[(i + 1) % 3].0 - p.0, c[(i + 1) % 3].1 - p.1);
                let v = (c[(i + 2) % 3].0 - p.0, c[(i + 2) % 3].1 - p.1);
                let dot = u.0 * v.0 + u.1 * v.1;
                let cross = u.0 * v.1 - u.1 * v.0;
                min = min.min(cross.atan2(dot).abs());
            }
        }
        min
    }

    /// Euler characteristic `V - E + T`; equals `1 - holes` for a connected
    /// planar mesh with boundary.
    pub fn euler_characteristic(&self) -> isize {
        self.vertices.len() as isize - self.edges.len() as isize + self.triangles.len() as isize
    }

    pub fn holes(&self) -> usize {
        (1 - self.euler_characteristic()).max(0) as usize
    }

    // ----- refinement ------------------------------------------------------

    /// Newest-vertex bisection of the `marked` triangles, plus the completion
    /// needed to stay conforming.
    ///
    /// Splitting an edge forces every triangle touching it to split its own
    /// refinement edge first; the forced set is closed under that rule before
    /// any triangle is cut. Each triangle is then bisected zero, one, or two
    /// times. The child convention is fixed: with peak `p` (the vertex
    /// opposite the refinement edge), refinement edge `a–b` and midpoint `m`,
    /// the children are `(p, a, m)` with refinement edge 2 and `(p, m, b)`
    /// with refinement edge 1 — both counterclockwise, and both pointing
    /// their next refinement at the halves of the former flanks.
    ///
    /// An empty `marked` slice returns the mesh unchanged.
    pub fn refine(&self, marked: &[usize]) -> TriMesh {
        for &k in marked {
            assert!(k < self.triangles.len(), "marked triangle {k} out of range");
        }
        if marked.is_empty() {
            let mut copy = self.clone();
            copy.parent = (0..self.triangles.len()).collect();
            return copy;
        }

        // Closure: propagate forced refinement-edge splits until conforming.
        let mut split = vec![false; self.edges.len()];
        let mut stack: Vec<usize> = Vec::new();
        let mark_edge = |e: usize, split: &mut Vec<bool>, stack: &mut Vec<usize>| {
            if !split[e] {
                split[e] = true;
                stack.push(e);
            }
        };
        for &k in marked {
            let re = self.tri_edges[k][self.triangles[k].refinement_edge as usize];
            mark_edge(re, &mut split, &mut stack);
        }
        while let Some(e) = stack.pop() {
            let (t0, t1) = self.edges[e].triangles;
            for k in std::iter::once(t0).chain(t1) {
                let re = self.tri_edges[k][self.triangles[k].refinement_edge as usize];
                mark_edge(re, &mut split, &mut stack);
            }
        }

        // Midpoint vertices for split edges, in ascending edge-id order.
        let mut coords: Vec<(f64, f64)> = self.vertices.iter().map(|v| (v.x, v.y)).collect();
        let mut midpoint = vec![usize::MAX; self.edges.len()];
        for e in 0..self.edges.len() {
            if split[e] {
                midpoint[e] = coords.len();
                coords.push(self.edge_midpoint(e));
            }
        }

        let mut children: Vec<Triangle> = Vec::new();
        let mut parent: Vec<usize> = Vec::new();
        for (k, t) in self.triangles.iter().enumerate() {
            let r = t.refinement_edge as usize;
            let re = self.tri_edges[k][r];
            if !split[re] {
                debug_assert!(
                    self.tri_edges[k].iter().all(|&e| !split[e]),
                    "closure left a hanging node on triangle {k}"
                );
                children.push(*t);
                parent.push(k);
                continue;
            }
            let p = t.vertices[r];
            let a = t.vertices[(r + 1) % 3];
            let b = t.vertices[(r + 2) % 3];
            let m = midpoint[re];
            // First child (p, a, m): its refinement edge is the old flank
            // p–a, already a full edge of this mesh; split it now if forced.
            let flank_pa = self.tri_edges[k][(r + 2) % 3];
            if split[flank_pa] {
                let m2 = midpoint[flank_pa];
                children.push(Triangle {
                    vertices: [m, p, m2],
                    refinement_edge: 2,
                    generation: t.generation + 2,
                });
                children.push(Triangle {
                    vertices: [m, m2, a],
                    refinement_edge: 1,
                    generation: t.generation + 2,
                });
                parent.push(k);
                parent.push(k);
            } else {
                children.push(Triangle {
                    vertices: [p, a, m],
                    refinement_edge: 2,
                    generation: t.generation + 1,
                });
                parent.push(k);
            }
            // Second child (p, m, b): refinement edge is the old flank b–p.
            let flank_bp = self.tri_edges[k][(r + 1) % 3];
            if split[flank_bp] {
                let m3 = midpoint[flank_bp];
                children.push(Triangle {
                    vertices: [m, b, m3],
                    refinement_edge: 2,
                    generation: t.generation + 2,
                });
                children.push(Triangle {
                    vertices: [m, m3, p],
                    refinement_edge: 1,
                    generation: t.generation + 2,
                });
                parent.push(k);
                parent.push(k);
            } else {
                children.push(Triangle {
                    vertices: [p, m, b],
                    refinement_edge: 1,
                    generation: t.generation + 1,
                });
                parent.push(k);
            }
        }

        Self::assemble(&coords, children, parent, &self.domain_tag)
            .expect("bisection preserved conformity")
    }

    /// One uniform sweep: every triangle is bisected once (triangle count
    /// doubles).
    pub fn refine_all(&self) -> TriMesh {
        let all: Vec<usize> = (0..self.triangles.len()).collect();
        self.refine(&all)
    }

    // ----- plain text format ----------------------------------------------

    /// Parses the plain mesh format: `#` starts a comment, `v <x> <y>`
    /// declares a vertex, `t <i> <j> <k>` a counterclockwise triangle with
    /// 0-based vertex ids.
    pub fn parse(text: &str, domain_tag: &str) -> Result<TriMesh, MeshError> {
        let mut coords: Vec<(f64, f64)> = Vec::new();
        let mut cells: Vec<[usize; 3]> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut tok = body.split_whitespace();
            let kind = tok.next().unwrap();
            let rest: Vec<&str> = tok.collect();
            match kind {
                "v" => {
                    if rest.len() != 2 {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("expected `v <x> <y>`, got {} coordinates", rest.len()),
                        });
                    }
                    let x = parse_f64(rest[0], line)?;
                    let y = parse_f64(rest[1], line)?;
                    coords.push((x, y));
                }
                "t" => {
                    if rest.len() != 3 {
                        return Err(MeshError::Parse {
                            line,
                            msg: format!("expected `t <i> <j> <k>`, got {} indices", rest.len()),
                        });
                    }
                    let mut ids = [0usize; 3];
                    for (slot, s) in ids.iter_mut().zip(&rest) {
                        *slot = s.parse().map_err(|_| MeshError::Parse {
                            line,
                            msg: format!("invalid vertex id `{s}`"),
                        })?;
                    }
                    cells.push(ids);
                }
                other => {
                    return Err(MeshError::Parse {
                        line,
                        msg: format!("unknown record `{other}`"),
                    });
                }
            }
        }
        Self::from_cells(&coords, &cells, domain_tag)
    }

    pub fn from_file(path: &Path) -> Result<TriMesh, MeshError> {
        let text = std::fs::read_to_string(path)?;
        let tag = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "mesh".to_string());
        Self::parse(&text, &tag)
    }

    /// Serializes the mesh in the same plain format `parse` reads. Vertex
    /// coordinates use Rust's shortest round-trip float representation, so
    /// write → parse reproduces them exactly.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "# mesh `{}`: {} vertices, {} triangles\n",
            self.domain_tag,
            self.vertices.len(),
            self.triangles.len()
        ));
        for v in &self.vertices {
            out.push_str(&format!("v {} {}\n", v.x, v.y));
        }
        for t in &self.triangles {
            out.push_str(&format!(
                "t {} {} {}\n",
                t.vertices[0], t.vertices[1], t.vertices[2]
            ));
        }
        out
    }

    pub fn write_file(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

fn parse_f64(s: &str, line: usize) -> Result<f64, MeshError> {
    s.parse().map_err(|_| MeshError::Parse {
        line,
        msg: format!("invalid coordinate `{s}`"),
    })
}

fn signed_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * ((b.0 - a.0) * (c.1 - a.1) - (c.0 - a.0) * (b.1 - a.1))
}

/// Structured mesh of the unit square `(0,1)²`: an `n × n` grid of squares,
/// each cut along its bottom-left → top-right diagonal. `2n²` triangles.
pub fn make_unit_square(n: usize) -> TriMesh {
    assert!(n >= 1, "subdivision count must be at least 1");
    let id = |ix: usize, iy: usize| iy * (n + 1) + ix;
    let mut coords = Vec::with_capacity((n + 1) * (n + 1));
    for iy in 0..=n {
        for ix in 0..=n {
            coords.push((ix as f64 / n as f64, iy as f64 / n as f64));
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for iy in 0..n {
        for ix in 0..n {
            let (v00, v10) = (id(ix, iy), id(ix + 1, iy));
            let (v01, v11) = (id(ix, iy + 1), id(ix + 1, iy + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    TriMesh::from_cells(&coords, &cells, "unit_square").expect("structured square mesh is valid")
}

/// Structured mesh of the square ring `(0,1)² \ [1/3,2/3]²`: the unit-square
/// grid with the center ninth removed. Symmetric under `(x,y) ↦ (y,x)`, with
/// all diagonals parallel, so the two eigenvalues approximating the first
/// double eigenvalue start out numerically identical.
pub fn make_square_ring() -> TriMesh {
    let n = 6; // two grid cells per third of the side
    let hole = n / 3..2 * n / 3;
    let id = |ix: usize, iy: usize| iy * (n + 1) + ix;
    let mut coords = Vec::with_capacity((n + 1) * (n + 1));
    for iy in 0..=n {
        for ix in 0..=n {
            coords.push((ix as f64 / n as f64, iy as f64 / n as f64));
        }
    }
    let mut cells = Vec::new();
    for iy in 0..n {
        for ix in 0..n {
            if hole.contains(&ix) && hole.contains(&iy) {
                continue;
            }
            let (v00, v10) = (id(ix, iy), id(ix + 1, iy));
            let (v01, v11) = (id(ix, iy + 1), id(ix + 1, iy + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    let (coords, cells) = compact_vertices(&coords, &cells);
    TriMesh::from_cells(&coords, &cells, "square_ring").expect("structured ring mesh is valid")
}

/// Drops vertices referenced by no cell, remapping ids (ascending order).
fn compact_vertices(
    coords: &[(f64, f64)],
    cells: &[[usize; 3]],
) -> (Vec<(f64, f64)>, Vec<[usize; 3]>) {
    let mut used = vec![false; coords.len()];
    for c in cells {
        for &v in c {
            used[v] = true;
        }
    }
    let mut remap = vec![usize::MAX; coords.len()];
    let mut kept = Vec::new();
    for (i, &u) in used.iter().enumerate() {
        if u {
            remap[i] = kept.len();
            kept.push(coords[i]);
        }
    }
    let cells = cells
        .iter()
        .map(|c| [remap[c[0]], remap[c[1]], remap[c[2]]])
        .collect();
    (kept, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    const DEG45: f64 = std::f64::consts::FRAC_PI_4;

    #[test]
    fn unit_square_counts() {
        for (n, nt, nv, ne) in [(1, 2, 4, 5), (2, 8, 9, 16), (4, 32, 25, 56)] {
            let m = make_unit_square(n);
            assert_eq!(m.triangles().len(), nt, "n={n}");
            assert_eq!(m.vertices().len(), nv, "n={n}");
            assert_eq!(m.edges().len(), ne, "n={n}");
            assert!((m.total_area() - 1.0).abs() < 1e-14);
            assert_eq!(m.euler_characteristic(), 1);
            assert_eq!(m.holes(), 0);
        }
    }

    #[test]
    fn unit_square_refinement_edges_sit_on_diagonals() {
        let m = make_unit_square(2);
        for k in 0..m.triangles().len() {
            let t = &m.triangles()[k];
            let e = m.triangle_edges(k)[t.refinement_edge as usize];
            let len = m.edge_length(e);
            assert!((len - 0.5 * 2f64.sqrt()).abs() < 1e-14, "triangle {k}");
        }
    }

    #[test]
    fn square_ring_counts_and_topology() {
        let m = make_square_ring();
        assert_eq!(m.triangles().len(), 64);
        assert_eq!(m.vertices().len(), 48);
        assert_eq!(m.edges().len(), 112);
        assert!((m.total_area() - 8.0 / 9.0).abs() < 1e-14);
        assert_eq!(m.euler_characteristic(), 0);
        assert_eq!(m.holes(), 1);
        assert!((m.min_angle() - DEG45).abs() < 1e-12);
    }

    #[test]
    fn square_ring_is_symmetric_under_coordinate_swap() {
        let m = make_square_ring();
        // Collect each triangle's vertex coordinates as a sorted set and
        // check the swapped set is again a triangle of the mesh.
        let keyed = |pts: [(f64, f64); 3]| {
            let mut k: Vec<(i64, i64)> = pts
                .iter()
                .map(|&(x, y)| ((x * 1e9).round() as i64, (y * 1e9).round() as i64))
                .collect();
            k.sort();
            k
        };
        let all: std::collections::HashSet<_> = (0..m.triangles().len())
            .map(|k| keyed(m.tri_coords(k)))
            .collect();
        for k in 0..m.triangles().len() {
            let sw = m.tri_coords(k).map(|(x, y)| (y, x));
            assert!(all.contains(&keyed(sw)), "mirror of triangle {k} missing");
        }
    }

    #[test]
    fn single_mark_on_two_triangle_square() {
        let m = make_unit_square(1);
        let r = m.refine(&[0]);
        // The shared diagonal splits; both triangles bisect once.
        assert_eq!(r.triangles().len(), 4);
        assert_eq!(r.vertices().len(), 5);
        assert_eq!(r.edges().len(), 8);
        assert!((r.total_area() - 1.0).abs() < 1e-14);
        assert!(r.triangles().iter().all(|t| t.generation == 1));
        assert_eq!(r.parents(), &[0, 0, 1, 1]);
    }

    #[test]
    fn empty_marking_returns_mesh_unchanged() {
        let m = make_square_ring();
        let r = m.refine(&[]);
        assert_eq!(r.triangles(), m.triangles());
        assert_eq!(r.vertices(), m.vertices());
        assert_eq!(r.parents().len(), m.triangles().len());
    }

    #[test]
    fn marked_triangles_are_bisected() {
        let m = make_unit_square(4);
        let marked = [3, 17, 30];
        let r = m.refine(&marked);
        for &k in &marked {
            let kids: Vec<usize> = (0..r.triangles().len())
                .filter(|&c| r.parents()[c] == k)
                .collect();
            assert!(kids.len() >= 2, "triangle {k} not bisected");
        }
    }

    #[test]
    fn generations_climb_at_most_two_per_sweep() {
        let mut mesh = make_square_ring();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..6 {
            let nt = mesh.triangles().len();
            let marked: Vec<usize> = (0..nt).filter(|_| rng.gen_bool(0.3)).collect();
            let fine = mesh.refine(&marked);
            for (c, &p) in fine.parents().iter().enumerate() {
                let dg = fine.triangles()[c].generation - mesh.triangles()[p].generation;
                assert!(dg <= 2, "triangle {c} jumped {dg} generations");
            }
            mesh = fine;
        }
    }

    #[test]
    fn random_bisection_preserves_area_and_angles() {
        // Structured meshes are right-isosceles; newest-vertex bisection
        // keeps every descendant right-isosceles, so the minimum angle
        // stays 45° no matter what is marked. Conformity is re-checked by
        // construction on every refine.
        for (name, mesh0) in [
            ("square", make_unit_square(2)),
            ("ring", make_square_ring()),
        ] {
            let area0 = mesh0.total_area();
            let mut mesh = mesh0;
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            for round in 0..8 {
                let nt = mesh.triangles().len();
                let count = 1 + rng.gen_range(0..nt.max(2) / 2);
                let marked: Vec<usize> = (0..count).map(|_| rng.gen_range(0..nt)).collect();
                mesh = mesh.refine(&marked);
                assert!(
                    (mesh.total_area() - area0).abs() < 1e-12,
                    "{name} round {round}: area drift"
                );
                assert!(
                    mesh.min_angle() > DEG45 - 1e-9,
                    "{name} round {round}: angle degraded"
                );
            }
        }
    }

    #[test]
    fn uniform_sweep_doubles_triangles() {
        let m = make_unit_square(2);
        let r = m.refine_all();
        assert_eq!(r.triangles().len(), 16);
        let rr = r.refine_all();
        assert_eq!(rr.triangles().len(), 32);
    }

    #[test]
    fn text_roundtrip_is_exact() {
        let m = make_square_ring().refine(&[0, 5, 9]);
        let text = m.to_text();
        let p = TriMesh::parse(&text, "square_ring").unwrap();
        assert_eq!(p.vertices().len(), m.vertices().len());
        for (a, b) in p.vertices().iter().zip(m.vertices()) {
            assert_eq!(a.x.to_bits(), b.x.to_bits());
            assert_eq!(a.y.to_bits(), b.y.to_bits());
        }
        for (a, b) in p.triangles().iter().zip(m.triangles()) {
            assert_eq!(a.vertices, b.vertices);
        }
    }

    #[test]
    fn parse_reports_line_numbers() {
        let bad = "v 0 0\nv 1 0\nv 0 1\nt 0 1\n";
        match TriMesh::parse(bad, "x") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
        let bad = "v 0 0\nv 1 zero\n";
        match TriMesh::parse(bad, "x") {
            Err(MeshError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn invalid_meshes_are_rejected() {
        // Clockwise triangle.
        let cw = TriMesh::from_cells(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], &[[0, 2, 1]], "x");
        assert!(matches!(cw, Err(MeshError::BadOrientation { tri: 0, .. })));
        // Collinear (degenerate) triangle.
        let col = TriMesh::from_cells(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)], &[[0, 1, 2]], "x");
        assert!(matches!(col, Err(MeshError::BadOrientation { .. })));
        // Vertex id out of range.
        let oob = TriMesh::from_cells(&[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)], &[[0, 1, 7]], "x");
        assert!(matches!(
            oob,
            Err(MeshError::IndexOutOfRange { vertex: 7, .. })
        ));
        // Unused vertex.
        let unused = TriMesh::from_cells(
            &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (5.0, 5.0)],
            &[[0, 1, 2]],
            "x",
        );
        assert!(matches!(unused, Err(MeshError::UnusedVertex { vertex: 3 })));
        // Three counterclockwise triangles sharing the edge 1–2.
        let fan = TriMesh::from_cells(
            &[(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (2.0, 2.0)],
            &[[0, 1, 2], [1, 3, 2], [2, 1, 4]],
            "x",
        );
        assert!(matches!(fan, Err(MeshError::NonManifoldEdge { .. })));
    }

    #[test]
    fn vertex_patch_and_boundary_flags() {
        let m = make_unit_square(2);
        // Center vertex (0.5, 0.5) has id 4 and six incident triangles.
        let center = m
            .vertices()
            .iter()
            .position(|v| (v.x - 0.5).abs() < 1e-15 && (v.y - 0.5).abs() < 1e-15)
            .unwrap();
        assert_eq!(m.vertex_patch(center).len(), 6);
        assert!(!m.vertices()[center].on_boundary);
        let boundary_count = m.vertices().iter().filter(|v| v.on_boundary).count();
        assert_eq!(boundary_count, 8);
        let boundary_edges = m.edges().iter().filter(|e| e.on_boundary).count();
        assert_eq!(boundary_edges, 8);
    }

    #[test]
    fn diameters_on_structured_mesh() {
        let m = make_unit_square(2);
        for k in 0..m.triangles().len() {
            assert!((m.diameter(k) - 0.5 * 2f64.sqrt()).abs() < 1e-14);
        }
    }
}
