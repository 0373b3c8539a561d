//! A posteriori error indicators for CR eigenpairs.
//!
//! Two per-element quantities drive adaptivity for an eigenpair `(λ, u)`:
//!
//! * `μ²_K = ‖∇ũ − ∇_h u‖²_{L²(K)}` — the distance between the broken
//!   gradient and the gradient of the vertex-averaged conforming companion
//!   `ũ`. Both gradients are constant per triangle, so the integral is just
//!   `|K| · |∇ũ|_K − ∇_h u|_K|²`, exactly.
//! * `η²_K = h_K² λ² ∫_K u²` — a volume term weighted by the local mesh
//!   size; the CR element mass matrix is diagonal, so `∫_K u²` is an exact
//!   coefficient sum, `(|K|/3) Σ_l c_l²`.
//!
//! `μ` does double duty: summed over the mesh it also bounds the energy-norm
//! distance from the eigenfunction's span to the conforming subspace, which
//! is what turns indicator sums into eigenvalue error bounds. Efficiency
//! (indicators don't wildly overestimate) is checked against a surrogate
//! solution on a uniformly refined conforming discretization.

use crate::eigensolve::{smallest_eigenpairs, EigError, EigOptions, EigenPair, SpectralSet};
use crate::mesh::TriMesh;
use crate::spaces::{
    assemble_mass, assemble_stiffness, energy_inner, postprocess_average, AveragingRule, CrSpace,
    FEFunction, FeSpace, P1Space, SpaceError, SpaceKind,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Eigen(#[from] EigError),
    #[error("fine reference carries no eigenvalue near {value}")]
    NoSurrogate { value: f64 },
}

/// Per-element indicator values for one eigenpair; `eigen_index` is the
/// 1-based position of the pair in the ascending spectrum.
#[derive(Debug, Clone)]
pub struct IndicatorField {
    pub eigen_index: usize,
    pub mu2: Vec<f64>,
    pub eta2: Vec<f64>,
}

impl IndicatorField {
    pub fn mu2_total(&self) -> f64 {
        self.mu2.iter().sum()
    }

    pub fn eta2_total(&self) -> f64 {
        self.eta2.iter().sum()
    }

    /// `μ²_K + η²_K`, the combined marking quantity.
    pub fn combined(&self, k: usize) -> f64 {
        self.mu2[k] + self.eta2[k]
    }
}

/// Gradient-averaging indicator `μ` of one eigenpair, elementwise.
pub fn compute_mu(
    cr: &CrSpace,
    p1: &P1Space,
    pair: &EigenPair,
    eigen_index: usize,
    rule: AveragingRule,
) -> Result<IndicatorField, EstimatorError> {
    let mesh = cr.mesh();
    let smoothed = postprocess_average(cr, p1, &pair.vector, rule)?;
    let mut mu2 = vec![0.0; mesh.triangles().len()];
    for (k, slot) in mu2.iter_mut().enumerate() {
        let g_tilde = p1.element_gradient(&smoothed, k);
        let g = cr.element_gradient(&pair.vector, k);
        let dx = g_tilde[0] - g[0];
        let dy = g_tilde[1] - g[1];
        *slot = mesh.area(k) * (dx * dx + dy * dy);
    }
    Ok(IndicatorField {
        eigen_index,
        mu2,
        eta2: vec![0.0; mesh.triangles().len()],
    })
}

/// Volume indicator `η` of one eigenpair, elementwise.
pub fn compute_eta(
    cr: &CrSpace,
    pair: &EigenPair,
    eigen_index: usize,
) -> Result<IndicatorField, EstimatorError> {
    cr.check_len(&pair.vector)?;
    let mesh = cr.mesh();
    let dofs_of = |k: usize| cr.element_dofs(k);
    let mut eta2 = vec![0.0; mesh.triangles().len()];
    for (k, slot) in eta2.iter_mut().enumerate() {
        let mut l2 = 0.0;
        for d in dofs_of(k).into_iter().flatten() {
            l2 += pair.vector.coeffs[d] * pair.vector.coeffs[d];
        }
        l2 *= mesh.area(k) / 3.0;
        let h = mesh.diameter(k);
        *slot = h * h * pair.value * pair.value * l2;
    }
    Ok(IndicatorField {
        eigen_index,
        mu2: vec![0.0; mesh.triangles().len()],
        eta2,
    })
}

/// Both indicators of one eigenpair in a single field.
pub fn compute_indicators(
    cr: &CrSpace,
    p1: &P1Space,
    pair: &EigenPair,
    eigen_index: usize,
    rule: AveragingRule,
) -> Result<IndicatorField, EstimatorError> {
    let mu = compute_mu(cr, p1, pair, eigen_index, rule)?;
    let eta = compute_eta(cr, pair, eigen_index)?;
    Ok(IndicatorField {
        eigen_index,
        mu2: mu.mu2,
        eta2: eta.eta2,
    })
}

/// Computable bounds on the energy-gap between one eigenfunction's span and
/// the conforming subspace, in two scalings.
///
/// The averaged companion `ũ` is itself conforming, so the A-normalized
/// distance from `span{u}` to the conforming space is at most
/// `‖∇ũ − ∇_h u‖ / ‖u‖_a = μ / √λ`; that scaling is certified by
/// construction. The cruder `μ / λ` is reported alongside for comparison —
/// it is the weaker of the two whenever `λ ≥ 1`.
#[derive(Debug, Clone, Copy)]
pub struct GapBound {
    pub mu_over_lambda: f64,
    pub mu_over_sqrt_lambda: f64,
}

pub fn gap_bound(
    cr: &CrSpace,
    p1: &P1Space,
    pair: &EigenPair,
    rule: AveragingRule,
) -> Result<GapBound, EstimatorError> {
    let field = compute_mu(cr, p1, pair, 0, rule)?;
    let mu = field.mu2_total().max(0.0).sqrt();
    Ok(GapBound {
        mu_over_lambda: mu / pair.value,
        mu_over_sqrt_lambda: mu / pair.value.sqrt(),
    })
}

/// One cluster's effectivity index against a trusted reference value: the
/// summed eigenvalue error divided by the summed μ² indicator. Boundedness
/// of this ratio above and below across a refinement history is the
/// empirical evidence of reliability plus efficiency.
#[derive(Debug, Clone)]
pub struct EffectivityRecord {
    /// 0-based member range in the ascending spectrum.
    pub cluster: std::ops::Range<usize>,
    /// `Σ_k |reference − λ_k|` over the cluster.
    pub error: f64,
    /// `Σ_k μ²_k` over the cluster.
    pub indicator_total: f64,
    /// `error / indicator_total` (infinite when the indicator vanishes
    /// while error persists).
    pub effectivity: f64,
}

/// Builds the effectivity record from the cluster members' eigenvalues and
/// μ² totals; `values` and `mu2_totals` run over the members in order.
pub fn effectivity_record(
    cluster: std::ops::Range<usize>,
    values: &[f64],
    mu2_totals: &[f64],
    reference: f64,
) -> EffectivityRecord {
    debug_assert_eq!(values.len(), cluster.len());
    debug_assert_eq!(mu2_totals.len(), cluster.len());
    let error: f64 = values.iter().map(|&l| (reference - l).abs()).sum();
    let indicator_total: f64 = mu2_totals.iter().sum();
    let effectivity = if indicator_total > 0.0 {
        error / indicator_total
    } else if error == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    EffectivityRecord {
        cluster,
        error,
        indicator_total,
        effectivity,
    }
}

// ----- efficiency against a refined conforming reference -------------------

/// A conforming discretization on a uniform refinement of a working mesh,
/// with the ancestor map back to the working mesh's triangles.
pub struct FineReference {
    pub mesh: TriMesh,
    /// Fine triangle → triangle of the working mesh it descends from.
    pub ancestors: Vec<usize>,
    pub spectra: SpectralSet,
}

/// Bisects every triangle of `coarse` twice (quartering the count the other
/// way around: 4× triangles, halved mesh size) and solves the conforming
/// eigenproblem there.
pub fn build_fine_reference(
    coarse: &TriMesh,
    nev: usize,
    seed: u64,
) -> Result<FineReference, EstimatorError> {
    let mid = coarse.refine_all();
    let fine = mid.refine_all();
    let ancestors: Vec<usize> = fine.parents().iter().map(|&p| mid.parents()[p]).collect();
    let p1 = P1Space::new(&fine);
    let a = assemble_stiffness(&p1)?;
    let m = assemble_mass(&p1)?;
    let spectra = smallest_eigenpairs(
        &a,
        &m,
        SpaceKind::ConformingP1,
        &EigOptions {
            nev,
            seed,
            ..Default::default()
        },
    )?;
    Ok(FineReference {
        mesh: fine,
        ancestors,
        spectra,
    })
}

/// Per-element efficiency entry: the ratio `μ_K / ‖∇(v* − u)‖_{K*}` over
/// the edge-neighbour patch `K*`, or the sentinel when both numerator and
/// denominator vanish (coarse and reference functions identical near `K`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ElementEfficiency {
    Ratio(f64),
    ExactMatch,
}

#[derive(Debug, Clone)]
pub struct EfficiencyReport {
    pub per_element: Vec<ElementEfficiency>,
    /// Largest finite ratio, if any element produced one.
    pub max_ratio: Option<f64>,
    /// 0-based range of fine eigenpairs spanning the surrogate.
    pub surrogate_members: std::ops::Range<usize>,
}

/// Checks that `μ` does not overestimate: each `μ_K` is compared against
/// the energy distance, on the patch `K*` of `K` and its edge neighbours,
/// between `u` and a surrogate `v*` for the exact eigenfunction.
///
/// The surrogate is the energy-inner-product projection of `u` onto the
/// span of the fine conforming eigenvectors whose values form a cluster
/// (relative width `cluster_rtol`) around `pair.value`. Because the fine
/// mesh is a refinement, the comparison integrates exactly: both gradients
/// are constant on every fine triangle.
pub fn efficiency_check(
    cr: &CrSpace,
    pair: &EigenPair,
    fine: &FineReference,
    cluster_rtol: f64,
) -> Result<EfficiencyReport, EstimatorError> {
    let coarse_mesh = cr.mesh();
    let fine_p1 = P1Space::new(&fine.mesh);

    // Locate the fine cluster around the pair's value.
    let values = fine.spectra.values();
    if values.is_empty() {
        return Err(EstimatorError::NoSurrogate { value: pair.value });
    }
    let nearest = (0..values.len())
        .min_by(|&i, &j| {
            (values[i] - pair.value)
                .abs()
                .total_cmp(&(values[j] - pair.value).abs())
        })
        .unwrap();
    let mut lo = nearest;
    while lo > 0 && (values[lo] - values[lo - 1]) / values[lo - 1] <= cluster_rtol {
        lo -= 1;
    }
    let mut hi = nearest;
    while hi + 1 < values.len() && (values[hi + 1] - values[hi]) / values[hi] <= cluster_rtol {
        hi += 1;
    }
    let members = lo..hi + 1;

    // Energy projection of u onto the span of the cluster members. The
    // cross products integrate the (coarse-constant) broken gradient of u
    // against fine gradients via the ancestor map.
    let grads_u: Vec<[f64; 2]> = (0..coarse_mesh.triangles().len())
        .map(|k| cr.element_gradient(&pair.vector, k))
        .collect();
    let cross = |w: &FEFunction| -> f64 {
        let mut acc = 0.0;
        for t in 0..fine.mesh.triangles().len() {
            let gw = fine_p1.element_gradient(w, t);
            let gu = grads_u[fine.ancestors[t]];
            acc += fine.mesh.area(t) * (gw[0] * gu[0] + gw[1] * gu[1]);
        }
        acc
    };
    let dim = members.len();
    let mut gram = nalgebra::DMatrix::zeros(dim, dim);
    let mut rhs = nalgebra::DVector::zeros(dim);
    for (s, ms) in members.clone().enumerate() {
        let ws = &fine.spectra.pairs[ms].vector;
        rhs[s] = cross(ws);
        for (t, mt) in members.clone().enumerate() {
            gram[(s, t)] = energy_inner(&fine_p1, ws, &fine.spectra.pairs[mt].vector);
        }
    }
    let coeffs = gram
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(EstimatorError::NoSurrogate { value: pair.value })?;
    let mut surrogate = fine_p1.zero_function();
    for (s, ms) in members.clone().enumerate() {
        for (out, &w) in surrogate
            .coeffs
            .iter_mut()
            .zip(&fine.spectra.pairs[ms].vector.coeffs)
        {
            *out += coeffs[s] * w;
        }
    }

    // Exact squared energy error per coarse triangle.
    let mut err2 = vec![0.0; coarse_mesh.triangles().len()];
    for t in 0..fine.mesh.triangles().len() {
        let gv = fine_p1.element_gradient(&surrogate, t);
        let gu = grads_u[fine.ancestors[t]];
        let dx = gv[0] - gu[0];
        let dy = gv[1] - gu[1];
        err2[fine.ancestors[t]] += fine.mesh.area(t) * (dx * dx + dy * dy);
    }

    // Patch K* = K plus edge neighbours.
    let field = {
        // μ needs the coarse conforming space for postprocessing.
        let p1_coarse = P1Space::new(coarse_mesh);
        compute_mu(cr, &p1_coarse, pair, 0, AveragingRule::Uniform)?
    };
    let mut per_element = Vec::with_capacity(coarse_mesh.triangles().len());
    let mut max_ratio: Option<f64> = None;
    for k in 0..coarse_mesh.triangles().len() {
        let mut patch_err2 = err2[k];
        for e in coarse_mesh.triangle_edges(k) {
            let (t0, t1) = coarse_mesh.edges()[e].triangles;
            for n in std::iter::once(t0).chain(t1) {
                if n != k {
                    patch_err2 += err2[n];
                }
            }
        }
        // Squared energies of normalized functions sit many orders above
        // this threshold whenever anything differs at all; at or below it,
        // the ratio is 0/0 noise and gets the sentinel instead.
        let tiny = 1e-24;
        let mu_k = field.mu2[k].max(0.0).sqrt();
        let entry = if field.mu2[k] <= tiny && patch_err2 <= tiny {
            ElementEfficiency::ExactMatch
        } else {
            let r = mu_k / patch_err2.max(0.0).sqrt();
            max_ratio = Some(max_ratio.map_or(r, |m: f64| m.max(r)));
            ElementEfficiency::Ratio(r)
        };
        per_element.push(entry);
    }

    Ok(EfficiencyReport {
        per_element,
        max_ratio,
        surrogate_members: members,
    })
}
