//! Energy-norm geometry between discrete invariant subspaces, and the
//! auditable eigenvalue bounds built on it.
//!
//! The central quantity is the (one-sided) subspace gap
//! `δ(E, F) = sup_{e∈E, ‖e‖=1} inf_{f∈F} ‖e − f‖` in the broken energy
//! norm. With A-orthonormal bases it reduces to singular values of the
//! cross-Gram matrix, and the distance from a cluster's eigenspace to the
//! conforming subspace is what controls how far below the exact values the
//! nonconforming eigenvalues can sit.
//!
//! [`SubspaceContext`] packages the assembled matrices of the CR/conforming
//! pair on one mesh and exposes:
//!
//! * elliptic (energy) projection onto the conforming space and onto
//!   explicit spans;
//! * gaps between spans and to the conforming space;
//! * Rayleigh quotients;
//! * [`SubspaceContext::audit_bounds`] — given a trusted reference value
//!   for a cluster, evaluates both sides of every applicable bound and
//!   reports them as rows, classifying the cluster as entirely below the
//!   reference, entirely above, or straddling it (no one-sided theory
//!   applies to the straddling case, and the report says so instead of
//!   manufacturing numbers).

use crate::eigensolve::SpectralSet;
use crate::estimators::{compute_indicators, EstimatorError};
use crate::spaces::{
    assemble_mass, assemble_stiffness, embed_p1, AveragingRule, CrSpace, FEFunction, FeSpace,
    P1Space, SpaceError, SpaceKind,
};
use crate::sparse::{SparseError, SparseSymMatrix, SpdFactor};
use std::cell::OnceCell;
use std::ops::Range;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SubspaceError {
    #[error("basis is empty")]
    EmptyBasis,
    #[error("coefficient vector length {got} does not match space dimension {expected}")]
    DimensionMismatch { got: usize, expected: usize },
    #[error("cannot take a Rayleigh quotient of the zero function")]
    ZeroVector,
    #[error("basis Gram matrix is numerically singular (condition {cond:e})")]
    IllConditioned { cond: f64 },
    #[error("orthogonalization broke down: basis is linearly dependent")]
    Breakdown,
    #[error("cluster range {lo}..{hi} does not fit the {len} computed pairs")]
    BadCluster { lo: usize, hi: usize, len: usize },
    #[error(transparent)]
    Space(#[from] SpaceError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
}

/// Assembled matrices of the CR / conforming pair on one mesh, with lazily
/// created factorizations shared by the projection and audit routines.
pub struct SubspaceContext<'a> {
    pub cr: &'a CrSpace<'a>,
    pub p1: &'a P1Space<'a>,
    pub a_cr: SparseSymMatrix,
    pub m_cr: SparseSymMatrix,
    pub a_p1: SparseSymMatrix,
    pub m_p1: SparseSymMatrix,
    cr_factor: OnceCell<SpdFactor>,
    p1_factor: OnceCell<SpdFactor>,
}

impl<'a> SubspaceContext<'a> {
    pub fn new(cr: &'a CrSpace<'a>, p1: &'a P1Space<'a>) -> Result<Self, SubspaceError> {
        Ok(Self::from_parts(
            cr,
            p1,
            assemble_stiffness(cr)?,
            assemble_mass(cr)?,
            assemble_stiffness(p1)?,
            assemble_mass(p1)?,
        ))
    }

    pub fn from_parts(
        cr: &'a CrSpace<'a>,
        p1: &'a P1Space<'a>,
        a_cr: SparseSymMatrix,
        m_cr: SparseSymMatrix,
        a_p1: SparseSymMatrix,
        m_p1: SparseSymMatrix,
    ) -> Self {
        SubspaceContext {
            cr,
            p1,
            a_cr,
            m_cr,
            a_p1,
            m_p1,
            cr_factor: OnceCell::new(),
            p1_factor: OnceCell::new(),
        }
    }

    fn p1_factor(&self) -> Result<&SpdFactor, SubspaceError> {
        if self.p1_factor.get().is_none() {
            let f = self.a_p1.factorize()?;
            let _ = self.p1_factor.set(f);
        }
        Ok(self.p1_factor.get().unwrap())
    }

    fn cr_factor(&self) -> Result<&SpdFactor, SubspaceError> {
        if self.cr_factor.get().is_none() {
            let f = self.a_cr.factorize()?;
            let _ = self.cr_factor.set(f);
        }
        Ok(self.cr_factor.get().unwrap())
    }

    fn check_cr(&self, v: &FEFunction) -> Result<(), SubspaceError> {
        if v.coeffs.len() != self.cr.ndof() {
            return Err(SubspaceError::DimensionMismatch {
                got: v.coeffs.len(),
                expected: self.cr.ndof(),
            });
        }
        Ok(())
    }

    /// Energy inner product in the ambient CR space.
    fn inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.a_cr.bilinear(u, v)
    }

    /// Reduces a basis to ambient CR coefficient vectors, embedding any
    /// conforming members.
    fn to_cr_coeffs(&self, basis: &[&FEFunction]) -> Result<Vec<Vec<f64>>, SubspaceError> {
        basis
            .iter()
            .map(|f| match f.kind {
                SpaceKind::CrouzeixRaviart => {
                    self.check_cr(f)?;
                    Ok(f.coeffs.clone())
                }
                SpaceKind::ConformingP1 => Ok(embed_p1(self.p1, self.cr, f)?.coeffs),
            })
            .collect()
    }

    /// Elliptic projection onto the conforming space: the unique conforming
    /// `p` with `a(p, w) = a_h(v, w)` for all conforming `w`. Acts as the
    /// identity on (embedded) conforming functions.
    pub fn project_to_conforming(&self, v: &FEFunction) -> Result<FEFunction, SubspaceError> {
        self.check_cr(v)?;
        let mesh = self.cr.mesh();
        let mut rhs = vec![0.0; self.p1.ndof()];
        for k in 0..mesh.triangles().len() {
            let g = self.cr.element_gradient(v, k);
            let gl = self.p1.basis_gradients(k);
            let dofs = self.p1.element_dofs(k);
            let area = mesh.area(k);
            for l in 0..3 {
                if let Some(d) = dofs[l] {
                    rhs[d] += area * (g[0] * gl[l][0] + g[1] * gl[l][1]);
                }
            }
        }
        let sol = self.p1_factor()?.solve(&rhs);
        Ok(FEFunction {
            kind: SpaceKind::ConformingP1,
            coeffs: sol,
        })
    }

    /// Coefficients of the energy projection of `v` onto `span(basis)`
    /// (all CR functions). Fails when the basis Gram matrix is numerically
    /// singular.
    pub fn project_to_span(
        &self,
        v: &FEFunction,
        basis: &[&FEFunction],
    ) -> Result<Vec<f64>, SubspaceError> {
        if basis.is_empty() {
            return Err(SubspaceError::EmptyBasis);
        }
        self.check_cr(v)?;
        let vecs = self.to_cr_coeffs(basis)?;
        let n = vecs.len();
        let mut gram = nalgebra::DMatrix::zeros(n, n);
        let mut rhs = nalgebra::DVector::zeros(n);
        for i in 0..n {
            rhs[i] = self.inner(&v.coeffs, &vecs[i]);
            for j in 0..n {
                gram[(i, j)] = self.inner(&vecs[i], &vecs[j]);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let cond = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(cond < 1e12) {
            return Err(SubspaceError::IllConditioned { cond });
        }
        let sol = gram
            .lu()
            .solve(&rhs)
            .ok_or(SubspaceError::IllConditioned { cond })?;
        Ok(sol.iter().cloned().collect())
    }

    /// Rayleigh quotient `a(v,v) / (v,v)` in the function's own space.
    pub fn rayleigh(&self, v: &FEFunction) -> Result<f64, SubspaceError> {
        let (a, m, dim) = match v.kind {
            SpaceKind::CrouzeixRaviart => (&self.a_cr, &self.m_cr, self.cr.ndof()),
            SpaceKind::ConformingP1 => (&self.a_p1, &self.m_p1, self.p1.ndof()),
        };
        if v.coeffs.len() != dim {
            return Err(SubspaceError::DimensionMismatch {
                got: v.coeffs.len(),
                expected: dim,
            });
        }
        let mm = m.bilinear(&v.coeffs, &v.coeffs);
        if mm <= 0.0 {
            return Err(SubspaceError::ZeroVector);
        }
        Ok(a.bilinear(&v.coeffs, &v.coeffs) / mm)
    }

    /// Gap `δ(span E, span F)` in the broken energy norm; conforming
    /// members are embedded first. Equals 1 when `dim E > dim F`, and for
    /// equal dimensions it is symmetric.
    pub fn subspace_gap(&self, e: &[&FEFunction], f: &[&FEFunction]) -> Result<f64, SubspaceError> {
        if e.is_empty() || f.is_empty() {
            return Err(SubspaceError::EmptyBasis);
        }
        let ev = self.to_cr_coeffs(e)?;
        let fv = self.to_cr_coeffs(f)?;
        gap_with_inner(&ev, &fv, |u, v| self.inner(u, v))
    }

    /// Gap from `span(basis)` to the whole conforming subspace, computed
    /// through the elliptic projection: for an A-orthonormal basis `e_k`
    /// the square of the gap is the largest eigenvalue of the Gram matrix
    /// of the projection residuals `e_k − Π e_k`.
    pub fn gap_to_conforming(&self, basis: &[&FEFunction]) -> Result<f64, SubspaceError> {
        let res = self.conforming_residuals(basis)?;
        let n = res.len();
        let mut gram = nalgebra::DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                gram[(i, j)] = self.inner(&res[i], &res[j]);
            }
        }
        let eig = nalgebra::SymmetricEigen::new(gram);
        let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
        Ok(max.max(0.0).sqrt().min(1.0))
    }

    /// A-orthonormalizes the basis, then returns the residuals
    /// `e_k − Π^c e_k` as ambient coefficient vectors.
    fn conforming_residuals(&self, basis: &[&FEFunction]) -> Result<Vec<Vec<f64>>, SubspaceError> {
        if basis.is_empty() {
            return Err(SubspaceError::EmptyBasis);
        }
        let mut vecs = self.to_cr_coeffs(basis)?;
        orthonormalize(&mut vecs, &|u, v| self.inner(u, v))?;
        let mut out = Vec::with_capacity(vecs.len());
        for v in &vecs {
            let f = FEFunction {
                kind: SpaceKind::CrouzeixRaviart,
                coeffs: v.clone(),
            };
            let proj = self.project_to_conforming(&f)?;
            let emb = embed_p1(self.p1, self.cr, &proj)?;
            out.push(
                v.iter()
                    .zip(&emb.coeffs)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            );
        }
        Ok(out)
    }

    /// Audits eigenvalue error bounds for one cluster of CR pairs against a
    /// trusted `reference` value for the exact (multiple) eigenvalue the
    /// cluster approximates. See [`AuditReport`].
    ///
    /// `cluster` is a 0-based index range into `cr_set.pairs`; the same
    /// indices must be meaningful for `conf_set` (both sets computed on
    /// this context's mesh). The conforming pairs below the cluster feed
    /// the low-mode correction and the spectral-separation diagnostic.
    pub fn audit_bounds(
        &self,
        cr_set: &SpectralSet,
        conf_set: &SpectralSet,
        cluster: Range<usize>,
        reference: f64,
        rule: AveragingRule,
    ) -> Result<AuditReport, SubspaceError> {
        if cluster.is_empty() || cluster.end > cr_set.pairs.len() {
            return Err(SubspaceError::BadCluster {
                lo: cluster.start,
                hi: cluster.end,
                len: cr_set.pairs.len(),
            });
        }
        let lo = cluster.start;
        let values: Vec<f64> = cluster.clone().map(|k| cr_set.pairs[k].value).collect();
        let vmin = values.iter().cloned().fold(f64::MAX, f64::min);
        let vmax = values.iter().cloned().fold(f64::MIN, f64::max);

        let case = if vmax <= reference {
            AuditCase::Below
        } else if vmin >= reference {
            AuditCase::Above
        } else {
            AuditCase::Mixed
        };

        let mut report = AuditReport {
            case,
            rows: Vec::new(),
            notes: Vec::new(),
            separation: None,
        };
        if case == AuditCase::Mixed {
            report.notes.push(format!(
                "cluster values [{vmin:.6}, {vmax:.6}] straddle the reference {reference:.6}; \
                 one-sided bounds do not apply and no rows were produced"
            ));
            return Ok(report);
        }

        // Indicators for every member.
        let fields: Vec<_> = cluster
            .clone()
            .map(|k| compute_indicators(self.cr, self.p1, &cr_set.pairs[k], k + 1, rule))
            .collect::<Result<_, _>>()?;

        match case {
            AuditCase::Below => {
                self.audit_below(
                    &mut report,
                    cr_set,
                    conf_set,
                    lo,
                    &values,
                    &fields,
                    reference,
                )?;
            }
            AuditCase::Above => {
                audit_above(&mut report, lo, &values, &fields, reference);
            }
            AuditCase::Mixed => unreachable!(),
        }
        Ok(report)
    }

    fn audit_below(
        &self,
        report: &mut AuditReport,
        cr_set: &SpectralSet,
        conf_set: &SpectralSet,
        lo: usize,
        values: &[f64],
        fields: &[crate::estimators::IndicatorField],
        reference: f64,
    ) -> Result<(), SubspaceError> {
        // A-normalized cluster eigenvectors: a_h(u, u) = λ for M-normalized
        // eigenvectors, so dividing by √λ A-normalizes them; the block is
        // A-orthogonal up to solver tolerance.
        let unit: Vec<Vec<f64>> = values
            .iter()
            .enumerate()
            .map(|(s, &lam)| {
                cr_set.pairs[lo + s]
                    .vector
                    .coeffs
                    .iter()
                    .map(|c| c / lam.sqrt())
                    .collect()
            })
            .collect();

        // Embedded low conforming modes, A-normalized likewise.
        let low: Vec<Vec<f64>> = (0..lo)
            .map(|s| -> Result<Vec<f64>, SubspaceError> {
                let emb = embed_p1(self.p1, self.cr, &conf_set.pairs[s].vector)?;
                let lam = conf_set.pairs[s].value;
                Ok(emb.coeffs.iter().map(|c| c / lam.sqrt()).collect())
            })
            .collect::<Result<_, _>>()?;
        let low_values: Vec<f64> = (0..lo).map(|s| conf_set.pairs[s].value).collect();

        for (j_off, &lam_j) in values.iter().enumerate() {
            let j1 = lo + j_off + 1; // 1-based index for reporting
            let lhs = (reference - lam_j) / reference;
            let span = &unit[..=j_off];

            // Residuals from the conforming space, shared by two rows.
            let mut residuals = Vec::with_capacity(span.len());
            let mut low_parts = Vec::with_capacity(span.len());
            for v in span {
                let f = FEFunction {
                    kind: SpaceKind::CrouzeixRaviart,
                    coeffs: v.clone(),
                };
                let proj = self.project_to_conforming(&f)?;
                let emb = embed_p1(self.p1, self.cr, &proj)?;
                residuals.push(
                    v.iter()
                        .zip(&emb.coeffs)
                        .map(|(a, b)| a - b)
                        .collect::<Vec<f64>>(),
                );
                // Low-mode component Σ_s a(v, e_s)/λ_s · e_s over the
                // conforming modes below the cluster (A-orthonormal after
                // the scaling, up to solver tolerance).
                let mut part = vec![0.0; v.len()];
                for e in &low {
                    let c = self.inner(v, e);
                    for (p, &ev) in part.iter_mut().zip(e) {
                        *p += c * ev;
                    }
                }
                low_parts.push(part);
            }

            let opnorm2 = |vecs: &[Vec<f64>]| -> f64 {
                let n = vecs.len();
                let mut g = nalgebra::DMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        g[(i, j)] = self.inner(&vecs[i], &vecs[j]);
                    }
                }
                nalgebra::SymmetricEigen::new(g)
                    .eigenvalues
                    .iter()
                    .cloned()
                    .fold(0.0, f64::max)
                    .max(0.0)
            };
            let gap_sq = opnorm2(&residuals);
            // Composite (I − Π^c + P_low): the two parts are A-orthogonal,
            // so the Grams add.
            let composite: Vec<Vec<f64>> = residuals
                .iter()
                .zip(&low_parts)
                .map(|(r, l)| r.iter().zip(l).map(|(a, b)| a + b).collect())
                .collect();
            let projected_gap_sq = opnorm2(&composite);
            let low_sq = opnorm2(&low_parts);

            // Indicator sums in both scalings of the single-span gap bound.
            let mu_certified: f64 = fields[..=j_off]
                .iter()
                .zip(values)
                .map(|(f, &lam)| f.mu2_total() / lam)
                .sum();
            let mu_stated: f64 = fields[..=j_off]
                .iter()
                .zip(values)
                .map(|(f, &lam)| f.mu2_total() / (lam * lam))
                .sum();

            report.rows.push(AuditRow::new(
                "below/projected_gap_sq",
                j1,
                lhs,
                projected_gap_sq,
            ));
            report
                .rows
                .push(AuditRow::new("below/gap_sq", j1, lhs, gap_sq));
            report
                .rows
                .push(AuditRow::new("below/low_mode_sq", j1, low_sq, gap_sq));
            report.rows.push(AuditRow::new(
                "below/mu_sum_sqrt_scaling",
                j1,
                lhs,
                mu_certified,
            ));
            report.rows.push(AuditRow::new(
                "below/mu_sum_linear_scaling",
                j1,
                lhs,
                mu_stated,
            ));
        }

        // Spectral-separation diagnostic for clusters that do not start at
        // the bottom of the spectrum: how well the low conforming modes are
        // separated from the cluster in the inverse-eigenvalue metric.
        if lo > 0 && conf_set.pairs.len() >= lo {
            report.separation =
                Some(self.separation_diagnostic(&unit, &low, &low_values, values)?);
        }
        Ok(())
    }

    /// Separation diagnostic: `d` is the distance from the cluster to the
    /// preceding conforming modes in the `1/λ` metric, `width` the cluster's
    /// own `1/λ` spread, and `beta = d − width` the margin that must stay
    /// positive for the low-mode correction to be controllable. When it is,
    /// the inequality `‖P_low P̃‖ ≤ (opnorm/beta) · ‖(I − Π^c) P̃‖` is
    /// evaluated and both sides are reported.
    fn separation_diagnostic(
        &self,
        cluster_unit: &[Vec<f64>],
        low: &[Vec<f64>],
        low_values: &[f64],
        cluster_values: &[f64],
    ) -> Result<SeparationDiagnostic, SubspaceError> {
        let nu_low: f64 = low_values.iter().map(|&l| 1.0 / l).fold(f64::MAX, f64::min);
        let nu_max = cluster_values
            .iter()
            .map(|&l| 1.0 / l)
            .fold(f64::MIN, f64::max);
        let nu_min = cluster_values
            .iter()
            .map(|&l| 1.0 / l)
            .fold(f64::MAX, f64::min);
        let d = nu_low - nu_max; // low modes have larger 1/λ
        let width = nu_max - nu_min;
        let beta = d - width;

        // ‖(I − Π^c) T_h P_low‖ over the low-mode range: apply the CR
        // solution operator to each embedded low mode, project out the
        // conforming part, and take the Gram operator norm.
        let mut tvecs = Vec::with_capacity(low.len());
        for e in low {
            let rhs = self.m_cr.matvec(e);
            let t = self.cr_factor()?.solve(&rhs);
            let f = FEFunction {
                kind: SpaceKind::CrouzeixRaviart,
                coeffs: t.clone(),
            };
            let proj = self.project_to_conforming(&f)?;
            let emb = embed_p1(self.p1, self.cr, &proj)?;
            tvecs.push(
                t.iter()
                    .zip(&emb.coeffs)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            );
        }
        let gram_norm = |vecs: &[Vec<f64>]| -> f64 {
            let n = vecs.len();
            let mut g = nalgebra::DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    g[(i, j)] = self.inner(&vecs[i], &vecs[j]);
                }
            }
            nalgebra::SymmetricEigen::new(g)
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .max(0.0)
                .sqrt()
        };
        let opnorm = gram_norm(&tvecs);

        // Two sides of the controllability inequality over the full cluster.
        let mut residuals = Vec::new();
        let mut low_parts = Vec::new();
        for v in cluster_unit {
            let f = FEFunction {
                kind: SpaceKind::CrouzeixRaviart,
                coeffs: v.clone(),
            };
            let proj = self.project_to_conforming(&f)?;
            let emb = embed_p1(self.p1, self.cr, &proj)?;
            residuals.push(
                v.iter()
                    .zip(&emb.coeffs)
                    .map(|(a, b)| a - b)
                    .collect::<Vec<f64>>(),
            );
            let mut part = vec![0.0; v.len()];
            for e in low {
                let c = self.inner(v, e);
                for (p, &ev) in part.iter_mut().zip(e) {
                    *p += c * ev;
                }
            }
            low_parts.push(part);
        }
        let lhs = gram_norm(&low_parts);
        let rhs = if beta > 0.0 {
            opnorm / beta * gram_norm(&residuals)
        } else {
            f64::NAN
        };
        Ok(SeparationDiagnostic {
            beta,
            opnorm,
            lhs,
            rhs,
        })
    }
}

/// Which side of the reference the audited cluster sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditCase {
    Below,
    Above,
    Mixed,
}

impl std::fmt::Display for AuditCase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            AuditCase::Below => "below",
            AuditCase::Above => "above",
            AuditCase::Mixed => "mixed",
        };
        f.write_str(s)
    }
}

/// One evaluated inequality: `lhs` should be controlled by `rhs` (up to the
/// constants the theory absorbs); `ratio` is `lhs / rhs` for trend reading.
#[derive(Debug, Clone)]
pub struct AuditRow {
    pub label: &'static str,
    /// 1-based eigenvalue index the row refers to.
    pub j: usize,
    pub lhs: f64,
    pub rhs: f64,
}

impl AuditRow {
    fn new(label: &'static str, j: usize, lhs: f64, rhs: f64) -> Self {
        AuditRow { label, j, lhs, rhs }
    }

    pub fn ratio(&self) -> f64 {
        if self.rhs != 0.0 {
            self.lhs / self.rhs
        } else if self.lhs == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// See [`SubspaceContext::separation_diagnostic`].
#[derive(Debug, Clone, Copy)]
pub struct SeparationDiagnostic {
    pub beta: f64,
    pub opnorm: f64,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Debug)]
pub struct AuditReport {
    pub case: AuditCase,
    pub rows: Vec<AuditRow>,
    pub notes: Vec<String>,
    pub separation: Option<SeparationDiagnostic>,
}

/// Upper bounds for a cluster sitting above the reference: the averaged
/// excess is compared against the indicator mean (constants set to one;
/// the genuinely higher-order remainder terms are omitted and noted).
fn audit_above(
    report: &mut AuditReport,
    lo: usize,
    values: &[f64],
    fields: &[crate::estimators::IndicatorField],
    reference: f64,
) {
    let j_count = values.len() as f64;
    let mean: f64 = values.iter().sum::<f64>() / j_count;
    let indicator_mean: f64 = fields
        .iter()
        .map(|f| 6.0 * f.mu2_total() + 4.0 * f.eta2_total())
        .sum::<f64>()
        / j_count;
    report.rows.push(AuditRow::new(
        "above/mean_excess",
        lo + values.len(), // the whole cluster; labelled by its last index
        mean - reference,
        indicator_mean,
    ));
    for (j_off, &lam_j) in values.iter().enumerate() {
        let j1 = lo + j_off + 1;
        let spread: f64 = values[..j_off].iter().map(|&lk| lam_j - lk).sum::<f64>() / j_count;
        report.rows.push(AuditRow::new(
            "above/excess_split",
            j1,
            (lam_j - reference) / reference,
            (indicator_mean + spread) / reference,
        ));
    }
    report.notes.push(
        "upper-bound rows use unit constants and omit higher-order remainder terms".to_string(),
    );
}

/// Gap `δ(span e, span f)` for explicit coefficient bases under a custom
/// inner product: orthonormalize both, then `δ² = 1 − σ_min²` of the
/// cross-Gram (or exactly 1 when `dim e > dim f`). This is the kernel the
/// energy-norm gap is built on; with the Euclidean dot product it matches
/// textbook principal angles.
pub fn gap_with_inner<F>(e: &[Vec<f64>], f: &[Vec<f64>], inner: F) -> Result<f64, SubspaceError>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    if e.is_empty() || f.is_empty() {
        return Err(SubspaceError::EmptyBasis);
    }
    if e.len() > f.len() {
        return Ok(1.0);
    }
    let mut ev = e.to_vec();
    let mut fv = f.to_vec();
    orthonormalize(&mut ev, &inner)?;
    orthonormalize(&mut fv, &inner)?;
    let mut c = nalgebra::DMatrix::zeros(ev.len(), fv.len());
    for (i, u) in ev.iter().enumerate() {
        for (j, v) in fv.iter().enumerate() {
            c[(i, j)] = inner(u, v);
        }
    }
    let svd = nalgebra::SVD::new(c, false, false);
    let sigma_min = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::MAX, f64::min)
        .clamp(0.0, 1.0);
    Ok((1.0 - sigma_min * sigma_min).max(0.0).sqrt())
}

/// In-place Gram–Schmidt under a custom inner product, two passes.
fn orthonormalize<F>(vecs: &mut [Vec<f64>], inner: &F) -> Result<(), SubspaceError>
where
    F: Fn(&[f64], &[f64]) -> f64,
{
    for j in 0..vecs.len() {
        for _pass in 0..2 {
            let (head, tail) = vecs.split_at_mut(j);
            let vj = &mut tail[0];
            for prev in head.iter() {
                let c = inner(prev, vj);
                for (t, &s) in vj.iter_mut().zip(prev) {
                    *t -= c * s;
                }
            }
        }
        let norm = inner(&vecs[j], &vecs[j]).max(0.0).sqrt();
        if norm < 1e-150 {
            return Err(SubspaceError::Breakdown);
        }
        for v in vecs[j].iter_mut() {
            *v /= norm;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigensolve::{smallest_eigenpairs, EigOptions};
    use crate::estimators::gap_bound;
    use crate::mesh::{make_square_ring, make_unit_square};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn euclidean_toy_gaps() {
        // 1D spans at 45° in the plane.
        let e = vec![vec![1.0, 0.0]];
        let f = vec![vec![2f64.sqrt() / 2.0, 2f64.sqrt() / 2.0]];
        let g = gap_with_inner(&e, &f, dot).unwrap();
        assert!((g - 2f64.sqrt() / 2.0).abs() < 1e-14);
        // Orthogonal spans: gap 1. Equal spans: gap 0.
        let h = vec![vec![0.0, 1.0]];
        assert!((gap_with_inner(&e, &h, dot).unwrap() - 1.0).abs() < 1e-14);
        assert!(gap_with_inner(&e, &e, dot).unwrap() < 1e-14);
        // Dimension excess: gap exactly 1.
        let two = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(gap_with_inner(&two, &e, dot).unwrap(), 1.0);
        // Subset: 1D inside 2D has gap 0.
        assert!(gap_with_inner(&e, &two, dot).unwrap() < 1e-14);
    }

    struct Fixture<'a> {
        ctx: SubspaceContext<'a>,
        cr_set: crate::eigensolve::SpectralSet,
        conf_set: crate::eigensolve::SpectralSet,
    }

    fn fixture<'a>(cr: &'a CrSpace<'a>, p1: &'a P1Space<'a>, nev: usize) -> Fixture<'a> {
        let ctx = SubspaceContext::new(cr, p1).unwrap();
        let opts = EigOptions {
            nev,
            seed: 42,
            ..Default::default()
        };
        let cr_set =
            smallest_eigenpairs(&ctx.a_cr, &ctx.m_cr, SpaceKind::CrouzeixRaviart, &opts).unwrap();
        let conf_set =
            smallest_eigenpairs(&ctx.a_p1, &ctx.m_p1, SpaceKind::ConformingP1, &opts).unwrap();
        Fixture {
            ctx,
            cr_set,
            conf_set,
        }
    }

    #[test]
    fn projection_is_identity_on_conforming_functions() {
        let mesh = make_unit_square(4);
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let ctx = SubspaceContext::new(&cr, &p1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = FEFunction {
            kind: SpaceKind::ConformingP1,
            coeffs: (0..p1.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let emb = embed_p1(&p1, &cr, &w).unwrap();
        let back = ctx.project_to_conforming(&emb).unwrap();
        for (a, b) in back.coeffs.iter().zip(&w.coeffs) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn projection_satisfies_galerkin_orthogonality() {
        let mesh = make_square_ring();
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let ctx = SubspaceContext::new(&cr, &p1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let v = FEFunction {
            kind: SpaceKind::CrouzeixRaviart,
            coeffs: (0..cr.ndof()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        };
        let proj = ctx.project_to_conforming(&v).unwrap();
        let emb = embed_p1(&p1, &cr, &proj).unwrap();
        let resid: Vec<f64> = v
            .coeffs
            .iter()
            .zip(&emb.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        // a_h(v − Πv, w) = 0 for every conforming basis function w: test
        // against all embedded unit vectors at once via the mixed products.
        for s in 0..p1.ndof() {
            let mut unit = p1.zero_function();
            unit.coeffs[s] = 1.0;
            let emb_u = embed_p1(&p1, &cr, &unit).unwrap();
            let ip = ctx.a_cr.bilinear(&resid, &emb_u.coeffs);
            assert!(ip.abs() < 1e-9, "dof {s}: {ip:e}");
        }
    }

    #[test]
    fn gap_axioms_on_eigenspaces() {
        let mesh = make_unit_square(4);
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 4);
        let e: Vec<&FEFunction> = fx.cr_set.pairs[..2].iter().map(|p| &p.vector).collect();
        let f: Vec<&FEFunction> = fx.cr_set.pairs[2..4].iter().map(|p| &p.vector).collect();

        // Self-gap vanishes.
        assert!(fx.ctx.subspace_gap(&e, &e).unwrap() < 1e-9);
        // Equal dimensions: symmetric.
        let g1 = fx.ctx.subspace_gap(&e, &f).unwrap();
        let g2 = fx.ctx.subspace_gap(&f, &e).unwrap();
        assert!((g1 - g2).abs() < 1e-9);
        // Basis invariance under a random recombination.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let (a, b, c, d) = (
            1.0 + rng.gen_range(0.1..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            1.0 + rng.gen_range(0.1..1.0),
        );
        let m1 = FEFunction {
            kind: SpaceKind::CrouzeixRaviart,
            coeffs: e[0]
                .coeffs
                .iter()
                .zip(&e[1].coeffs)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        };
        let m2 = FEFunction {
            kind: SpaceKind::CrouzeixRaviart,
            coeffs: e[0]
                .coeffs
                .iter()
                .zip(&e[1].coeffs)
                .map(|(x, y)| c * x + d * y)
                .collect(),
        };
        let recombined = fx.ctx.subspace_gap(&[&m1, &m2], &f).unwrap();
        assert!((recombined - g1).abs() < 1e-8, "{recombined} vs {g1}");
        // Eigenspaces of distinct eigenvalues are A-orthogonal: gap 1.
        assert!((g1 - 1.0).abs() < 1e-7, "cross-eigenspace gap {g1}");
    }

    #[test]
    fn gap_to_conforming_matches_single_vector_distance() {
        let mesh = make_square_ring();
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 1);
        let u = &fx.cr_set.pairs[0];
        let g = fx.ctx.gap_to_conforming(&[&u.vector]).unwrap();
        // Direct computation: ‖u/√λ − Π(u/√λ)‖_a.
        let unit = FEFunction {
            kind: SpaceKind::CrouzeixRaviart,
            coeffs: u.vector.coeffs.iter().map(|c| c / u.value.sqrt()).collect(),
        };
        let proj = fx.ctx.project_to_conforming(&unit).unwrap();
        let emb = embed_p1(&p1, &cr, &proj).unwrap();
        let resid: Vec<f64> = unit
            .coeffs
            .iter()
            .zip(&emb.coeffs)
            .map(|(a, b)| a - b)
            .collect();
        let direct = fx.ctx.a_cr.bilinear(&resid, &resid).sqrt();
        assert!((g - direct).abs() < 1e-9, "{g} vs {direct}");
        // The averaged companion certifies the bound δ ≤ μ/√λ.
        let bound = gap_bound(&cr, &p1, u, AveragingRule::Uniform).unwrap();
        assert!(
            g <= bound.mu_over_sqrt_lambda + 1e-12,
            "gap {g} above its certificate {}",
            bound.mu_over_sqrt_lambda
        );
    }

    #[test]
    fn rayleigh_recovers_eigenvalues_and_rejects_zero() {
        let mesh = make_unit_square(3);
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 3);
        for pair in &fx.cr_set.pairs {
            let r = fx.ctx.rayleigh(&pair.vector).unwrap();
            assert!((r - pair.value).abs() < 1e-8 * pair.value);
        }
        for pair in &fx.conf_set.pairs {
            let r = fx.ctx.rayleigh(&pair.vector).unwrap();
            assert!((r - pair.value).abs() < 1e-8 * pair.value);
        }
        let zero = cr.zero_function();
        assert!(matches!(
            fx.ctx.rayleigh(&zero),
            Err(SubspaceError::ZeroVector)
        ));
    }

    #[test]
    fn span_projection_reproduces_members_and_flags_singular_bases() {
        let mesh = make_unit_square(4);
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 3);
        let basis: Vec<&FEFunction> = fx.cr_set.pairs[..2].iter().map(|p| &p.vector).collect();
        // v = 2 u₁ − 3 u₂ projects onto exactly those coefficients.
        let v = FEFunction {
            kind: SpaceKind::CrouzeixRaviart,
            coeffs: basis[0]
                .coeffs
                .iter()
                .zip(&basis[1].coeffs)
                .map(|(a, b)| 2.0 * a - 3.0 * b)
                .collect(),
        };
        let c = fx.ctx.project_to_span(&v, &basis).unwrap();
        assert!(
            (c[0] - 2.0).abs() < 1e-8 && (c[1] + 3.0).abs() < 1e-8,
            "{c:?}"
        );
        // A duplicated basis vector is singular.
        let dup = [basis[0], basis[0]];
        assert!(matches!(
            fx.ctx.project_to_span(&v, &dup),
            Err(SubspaceError::IllConditioned { .. })
        ));
    }

    #[test]
    fn audit_classifies_and_orders_bounds() {
        let mesh = make_square_ring().refine_all();
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 3);
        let cluster = 1..3; // the near-double second/third pair

        // Reference above the cluster: conforming values dominate CR ones,
        // so their maximum is a legitimate below-case reference.
        let ref_above = fx.conf_set.pairs[2].value * 1.001;
        let report = fx
            .ctx
            .audit_bounds(
                &fx.cr_set,
                &fx.conf_set,
                cluster.clone(),
                ref_above,
                AveragingRule::Uniform,
            )
            .unwrap();
        assert_eq!(report.case, AuditCase::Below);
        assert!(!report.rows.is_empty());
        for row in &report.rows {
            assert!(row.lhs.is_finite() && row.rhs.is_finite(), "{row:?}");
        }
        // Chain consistency: δ² ≤ Σ μ²/λ (the certified scaling), and the
        // composite norm dominates the plain gap.
        for j1 in [2usize, 3] {
            let find = |label: &str| {
                report
                    .rows
                    .iter()
                    .find(|r| r.label == label && r.j == j1)
                    .unwrap_or_else(|| panic!("missing {label} row for j={j1}"))
            };
            let gap_sq = find("below/gap_sq");
            let mu_cert = find("below/mu_sum_sqrt_scaling");
            let proj = find("below/projected_gap_sq");
            assert!(gap_sq.rhs <= mu_cert.rhs + 1e-12, "certificate violated");
            assert!(proj.rhs >= gap_sq.rhs - 1e-12, "composite below plain gap");
        }
        // The separation diagnostic exists (cluster starts above mode 1).
        let sep = report.separation.expect("separation diagnostic");
        assert!(sep.beta.is_finite() && sep.opnorm >= 0.0);

        // Reference below the cluster → above case with rows.
        let ref_below = fx.cr_set.pairs[1].value * 0.999;
        let report = fx
            .ctx
            .audit_bounds(
                &fx.cr_set,
                &fx.conf_set,
                cluster.clone(),
                ref_below,
                AveragingRule::Uniform,
            )
            .unwrap();
        assert_eq!(report.case, AuditCase::Above);
        assert!(report.rows.iter().any(|r| r.label == "above/mean_excess"));

        // Reference inside the cluster → mixed, no rows, explicit note.
        let mid = 0.5 * (fx.cr_set.pairs[1].value + fx.cr_set.pairs[2].value);
        // Guard: the two values differ on this asymmetric refined mesh only
        // by a hair; widen artificially by using a value strictly between
        // min and max if they differ, else skip the mixed check.
        if fx.cr_set.pairs[1].value < mid && mid < fx.cr_set.pairs[2].value {
            let report = fx
                .ctx
                .audit_bounds(
                    &fx.cr_set,
                    &fx.conf_set,
                    cluster,
                    mid,
                    AveragingRule::Uniform,
                )
                .unwrap();
            assert_eq!(report.case, AuditCase::Mixed);
            assert!(report.rows.is_empty());
            assert!(!report.notes.is_empty());
        }
    }

    #[test]
    fn audit_rejects_bad_clusters() {
        let mesh = make_unit_square(3);
        let cr = CrSpace::new(&mesh);
        let p1 = P1Space::new(&mesh);
        let fx = fixture(&cr, &p1, 2);
        let err = fx.ctx.audit_bounds(
            &fx.cr_set,
            &fx.conf_set,
            1..5,
            100.0,
            AveragingRule::Uniform,
        );
        assert!(matches!(err, Err(SubspaceError::BadCluster { .. })));
    }
}
