//! Cluster-aware adaptive refinement driven by the error indicators.
//!
//! The loop is the classic solve → estimate → mark → refine cycle with two
//! twists that matter for multiple and clustered eigenvalues:
//!
//! * the target eigenvalue is never treated alone — the indicators of every
//!   member of its cluster are summed elementwise before marking, so the
//!   mesh cannot chase one member of a numerically split pair while the
//!   discrete eigenvectors rotate freely inside the cluster;
//! * per-iteration diagnostics track the energy-norm gap from the cluster
//!   eigenspace to the conforming subspace and a swap indicator comparing
//!   each eigenvector with its transferred predecessor.
//!
//! Marking is Dörfler (bulk) marking: the smallest set of elements whose
//! indicator mass reaches the fraction `theta` of the total. Sorting
//! descending and cutting greedily gives that minimal cardinality exactly.

use crate::eigensolve::{fix_signs, smallest_eigenpairs, EigError, EigOptions, SpectralSet};
use crate::estimators::{compute_indicators, EstimatorError, IndicatorField};
use crate::mesh::TriMesh;
use crate::spaces::{
    assemble_mass, assemble_stiffness, transfer_to_refined, AveragingRule, CrSpace, FeSpace,
    P1Space, SpaceError, SpaceKind,
};
use crate::sparse::SparseError;
use crate::subspace::{gap_with_inner, SubspaceContext, SubspaceError};
use std::ops::Range;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Eigen(#[from] EigError),
    #[error(transparent)]
    Subspace(#[from] SubspaceError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// A maximal run of consecutive eigenvalues whose relative gaps all stay
/// within `rtol`.
#[derive(Debug, Clone)]
pub struct Cluster {
    /// 0-based index range into the computed spectrum.
    pub members: Range<usize>,
    /// The eigenvalues of the members, in ascending order.
    pub values: Vec<f64>,
    /// The relative-gap tolerance the cluster was detected with.
    pub rtol: f64,
}

impl Cluster {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, idx: usize) -> bool {
        self.members.contains(&idx)
    }
}

/// Partition an ascending list of eigenvalues into clusters: a new cluster
/// starts whenever the relative gap `(λ_{k+1} − λ_k)/λ_{k+1}` exceeds
/// `rtol`.
pub fn detect_clusters(values: &[f64], rtol: f64) -> Vec<Cluster> {
    let mut out = Vec::new();
    let mut start = 0;
    for k in 1..=values.len() {
        let split = k == values.len() || {
            let gap = (values[k] - values[k - 1]) / values[k].abs().max(f64::MIN_POSITIVE);
            gap > rtol
        };
        if split {
            out.push(Cluster {
                members: start..k,
                values: values[start..k].to_vec(),
                rtol,
            });
            start = k;
        }
    }
    out
}

/// The cluster containing the 0-based index `target`.
pub fn cluster_containing(values: &[f64], target: usize, rtol: f64) -> Cluster {
    detect_clusters(values, rtol)
        .into_iter()
        .find(|c| c.contains(target))
        .expect("target index inside the value range")
}

/// Dörfler marking: the minimal-cardinality element set whose indicator sum
/// reaches `theta` times the total. Ties are broken toward lower element
/// ids, and a zero total marks nothing.
///
/// Panics if `theta` is outside `(0, 1)`; callers validate user input
/// before reaching this point.
pub fn dorfler_mark(indicators: &[f64], theta: f64) -> Vec<usize> {
    assert!(
        theta > 0.0 && theta < 1.0,
        "theta must lie in (0, 1), got {theta}"
    );
    let total: f64 = indicators.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..indicators.len()).collect();
    order.sort_by(|&a, &b| {
        indicators[b]
            .partial_cmp(&indicators[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut marked = Vec::new();
    let mut acc = 0.0;
    for id in order {
        marked.push(id);
        acc += indicators[id];
        if acc >= theta * total {
            break;
        }
    }
    marked.sort_unstable();
    marked
}

/// Elementwise sum of the cluster members' indicators; this is the quantity
/// Dörfler marking consumes in cluster mode.
pub fn cluster_indicator(fields: &[IndicatorField], use_eta: bool) -> Vec<f64> {
    if fields.is_empty() {
        return Vec::new();
    }
    let n = fields[0].mu2.len();
    let mut out = vec![0.0; n];
    for f in fields {
        for k in 0..n {
            out[k] += f.mu2[k];
            if use_eta {
                out[k] += f.eta2[k];
            }
        }
    }
    out
}

/// How the per-element marking quantity is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarkingMode {
    /// Mark by the indicator of one eigenvector (1-based index), ignoring
    /// the rest of its cluster. Deliberately available to demonstrate what
    /// goes wrong for multiple eigenvalues.
    Single(usize),
    /// Mark by the elementwise sum over the target's cluster.
    ClusterSum,
}

#[derive(Debug, Clone)]
pub struct AdaptConfig {
    /// Dörfler bulk fraction in (0, 1).
    pub theta: f64,
    /// 1-based index of the eigenvalue being tracked.
    pub target: usize,
    pub marking: MarkingMode,
    /// Stop once the CR space dimension reaches this.
    pub max_dof: usize,
    /// Number of eigenpairs computed each iteration.
    pub nev: usize,
    /// Relative-gap tolerance for cluster detection.
    pub cluster_rtol: f64,
    /// Seed for the eigensolver start block.
    pub seed: u64,
    /// Whether η² participates in the marking quantity.
    pub use_eta: bool,
    pub rule: AveragingRule,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            theta: 0.5,
            target: 1,
            marking: MarkingMode::ClusterSum,
            max_dof: 10_000,
            nev: 1,
            cluster_rtol: 0.02,
            seed: 0,
            use_eta: true,
            rule: AveragingRule::Uniform,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<(), AdaptError> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(AdaptError::BadConfig(format!(
                "theta must lie strictly between 0 and 1, got {}",
                self.theta
            )));
        }
        if self.nev == 0 {
            return Err(AdaptError::BadConfig("nev must be at least 1".into()));
        }
        if self.target == 0 || self.target > self.nev {
            return Err(AdaptError::BadConfig(format!(
                "target must lie in 1..=nev (= {}), got {}",
                self.nev, self.target
            )));
        }
        if let MarkingMode::Single(k) = self.marking {
            if k == 0 || k > self.nev {
                return Err(AdaptError::BadConfig(format!(
                    "single-mode marking index must lie in 1..=nev (= {}), got {k}",
                    self.nev
                )));
            }
        }
        if self.max_dof == 0 {
            return Err(AdaptError::BadConfig("max_dof must be positive".into()));
        }
        if !(self.cluster_rtol >= 0.0) {
            return Err(AdaptError::BadConfig(format!(
                "cluster_rtol must be nonnegative, got {}",
                self.cluster_rtol
            )));
        }
        Ok(())
    }
}

/// One row of the adaptive history.
#[derive(Debug, Clone)]
pub struct AdaptRecord {
    pub iter: usize,
    /// CR space dimension at this iteration.
    pub ndof: usize,
    /// The first `nev` CR eigenvalues.
    pub lambdas: Vec<f64>,
    /// The first `nev` conforming eigenvalues on the same mesh.
    pub conforming: Vec<f64>,
    /// Cluster of the target eigenvalue (0-based member range).
    pub cluster: Range<usize>,
    /// Total μ² over the cluster members.
    pub mu2_cluster: f64,
    /// Total η² over the cluster members.
    pub eta2_cluster: f64,
    /// Per-member μ² totals, in member order.
    pub mu2_members: Vec<f64>,
    /// Per-member η² totals, in member order.
    pub eta2_members: Vec<f64>,
    /// Number of elements marked for refinement.
    pub marked: usize,
    /// Energy gap from the cluster eigenspace to the conforming space.
    pub gap_vc: f64,
    /// The same gap for each member's individual span.
    pub gap_members: Vec<f64>,
    /// Largest 1-D energy gap between an eigenvector and its transferred
    /// predecessor; NaN on the first iteration.
    pub swap_max: f64,
    /// Wall-clock seconds spent on this iteration.
    pub seconds: f64,
}

/// Everything the loop knows at the end of one iteration, lent to the
/// observer before the mesh is refined.
pub struct IterationView<'v> {
    pub record: &'v AdaptRecord,
    pub mesh: &'v TriMesh,
    pub cr: &'v CrSpace<'v>,
    pub p1: &'v P1Space<'v>,
    /// Assembled matrices and factorizations of this iteration, ready for
    /// further per-iteration analysis (e.g. bound audits).
    pub ctx: &'v SubspaceContext<'v>,
    pub cr_set: &'v SpectralSet,
    pub conf_set: &'v SpectralSet,
    pub cluster: &'v Cluster,
    /// Indicator fields of the cluster members, in member order.
    pub fields: &'v [IndicatorField],
    pub marked: &'v [usize],
}

pub struct AdaptOutcome {
    pub records: Vec<AdaptRecord>,
    pub final_mesh: TriMesh,
    pub final_values: Vec<f64>,
    pub final_conforming: Vec<f64>,
}

/// Run the adaptive loop from `mesh0` until the CR dimension reaches
/// `cfg.max_dof`. The observer is called once per iteration after
/// everything for that iteration is computed (including the marked set)
/// and before the refinement happens.
pub fn adaptive_loop<F>(
    mesh0: &TriMesh,
    cfg: &AdaptConfig,
    mut observer: F,
) -> Result<AdaptOutcome, AdaptError>
where
    F: FnMut(&IterationView),
{
    cfg.validate()?;
    let mut mesh = mesh0.clone();
    let mut prev: Option<(TriMesh, Vec<crate::spaces::FEFunction>)> = None;
    let mut records: Vec<AdaptRecord> = Vec::new();
    let mut final_values = Vec::new();
    let mut final_conforming = Vec::new();

    for iter in 0.. {
        if iter > 200 {
            return Err(AdaptError::BadConfig(
                "adaptive loop exceeded 200 iterations without reaching max_dof".into(),
            ));
        }
        let clock = Instant::now();
        let (next_mesh, vectors, stop) = {
            let cr = CrSpace::new(&mesh);
            let p1 = P1Space::new(&mesh);
            if cr.ndof() < cfg.nev {
                return Err(AdaptError::BadConfig(format!(
                    "initial mesh supports only {} degrees of freedom but nev = {}",
                    cr.ndof(),
                    cfg.nev
                )));
            }
            let a_cr = assemble_stiffness(&cr)?;
            let m_cr = assemble_mass(&cr)?;
            let a_p1 = assemble_stiffness(&p1)?;
            let m_p1 = assemble_mass(&p1)?;
            let opts = EigOptions {
                nev: cfg.nev,
                seed: cfg.seed,
                ..Default::default()
            };
            let cr_set = fix_signs(smallest_eigenpairs(
                &a_cr,
                &m_cr,
                SpaceKind::CrouzeixRaviart,
                &opts,
            )?);
            let conf_set = if p1.ndof() >= cfg.nev {
                fix_signs(smallest_eigenpairs(
                    &a_p1,
                    &m_p1,
                    SpaceKind::ConformingP1,
                    &opts,
                )?)
            } else {
                return Err(AdaptError::BadConfig(format!(
                    "conforming space has only {} degrees of freedom but nev = {}; \
                     start from a finer mesh",
                    p1.ndof(),
                    cfg.nev
                )));
            };

            let values: Vec<f64> = cr_set.pairs.iter().map(|p| p.value).collect();
            let cluster = cluster_containing(&values, cfg.target - 1, cfg.cluster_rtol);

            let fields: Vec<IndicatorField> = cluster
                .members
                .clone()
                .map(|k| compute_indicators(&cr, &p1, &cr_set.pairs[k], k + 1, cfg.rule))
                .collect::<Result<_, _>>()?;

            // Gap diagnostics against the conforming space.
            let ctx = SubspaceContext::from_parts(&cr, &p1, a_cr, m_cr, a_p1, m_p1);
            let basis: Vec<&crate::spaces::FEFunction> = cluster
                .members
                .clone()
                .map(|k| &cr_set.pairs[k].vector)
                .collect();
            let gap_vc = ctx.gap_to_conforming(&basis)?;
            let gap_members: Vec<f64> = cluster
                .members
                .clone()
                .map(|k| ctx.gap_to_conforming(&[&cr_set.pairs[k].vector]))
                .collect::<Result<_, _>>()?;

            // Swap diagnostic: 1-D gaps between each eigenvector and its
            // transferred predecessor.
            let swap_max = match &prev {
                None => f64::NAN,
                Some((prev_mesh, prev_vecs)) => {
                    let prev_cr = CrSpace::new(prev_mesh);
                    let mut worst: f64 = 0.0;
                    for (k, pv) in prev_vecs.iter().enumerate() {
                        let moved = transfer_to_refined(&prev_cr, pv, &cr)?;
                        let g = gap_with_inner(
                            &[moved.coeffs],
                            &[cr_set.pairs[k].vector.coeffs.clone()],
                            |u, v| ctx.a_cr.bilinear(u, v),
                        )?;
                        worst = worst.max(g);
                    }
                    worst
                }
            };

            // Marking.
            let per_element = match cfg.marking {
                MarkingMode::ClusterSum => cluster_indicator(&fields, cfg.use_eta),
                MarkingMode::Single(k1) => {
                    let k = k1 - 1;
                    let field = if cluster.contains(k) {
                        fields[k - cluster.members.start].clone()
                    } else {
                        compute_indicators(&cr, &p1, &cr_set.pairs[k], k1, cfg.rule)?
                    };
                    (0..field.mu2.len())
                        .map(|e| field.mu2[e] + if cfg.use_eta { field.eta2[e] } else { 0.0 })
                        .collect()
                }
            };
            let marked = dorfler_mark(&per_element, cfg.theta);

            let record = AdaptRecord {
                iter,
                ndof: cr.ndof(),
                lambdas: values.clone(),
                conforming: conf_set.pairs.iter().map(|p| p.value).collect(),
                cluster: cluster.members.clone(),
                mu2_cluster: fields.iter().map(IndicatorField::mu2_total).sum(),
                eta2_cluster: fields.iter().map(IndicatorField::eta2_total).sum(),
                mu2_members: fields.iter().map(IndicatorField::mu2_total).collect(),
                eta2_members: fields.iter().map(IndicatorField::eta2_total).collect(),
                marked: marked.len(),
                gap_vc,
                gap_members,
                swap_max,
                seconds: clock.elapsed().as_secs_f64(),
            };
            observer(&IterationView {
                record: &record,
                mesh: &mesh,
                cr: &cr,
                p1: &p1,
                ctx: &ctx,
                cr_set: &cr_set,
                conf_set: &conf_set,
                cluster: &cluster,
                fields: &fields,
                marked: &marked,
            });

            let stop = cr.ndof() >= cfg.max_dof || marked.is_empty();
            let next_mesh = if stop {
                None
            } else {
                Some(mesh.refine(&marked))
            };
            let vectors: Vec<crate::spaces::FEFunction> =
                cr_set.pairs.iter().map(|p| p.vector.clone()).collect();
            final_values = record.lambdas.clone();
            final_conforming = record.conforming.clone();
            records.push(record);
            (next_mesh, vectors, stop)
        };
        if stop {
            break;
        }
        let next = next_mesh.expect("refined mesh exists when not stopping");
        debug_assert!(
            CrSpace::new(&next).ndof() > records.last().unwrap().ndof,
            "refinement must increase the dimension"
        );
        prev = Some((mesh, vectors));
        mesh = next;
    }

    Ok(AdaptOutcome {
        records,
        final_mesh: mesh,
        final_values,
        final_conforming,
    })
}
