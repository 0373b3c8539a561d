//! Smallest eigenpairs of the generalized symmetric problem `A x = λ M x`.
//!
//! The solver is a shift-inverted block subspace iteration: factor `A` once
//! (the shift is zero — both discretizations here have positive definite
//! stiffness), then repeatedly apply `A⁻¹M` to a block a few columns wider
//! than requested, M-orthonormalize, and extract Rayleigh–Ritz pairs from
//! the block. Convergence is declared when every requested pair has
//! `‖A x − λ M x‖₂ ≤ tol · λ`.
//!
//! Everything is deterministic for a fixed seed: the starting block comes
//! from a counter-based generator, no parallelism or hash-order iteration
//! is involved, and repeated runs reproduce results to the bit.

use crate::spaces::{FEFunction, SpaceKind};
use crate::sparse::{SparseError, SparseSymMatrix};
use nalgebra::DMatrix;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EigError {
    #[error("requested {nev} eigenpairs from a {dim}-dimensional problem")]
    InvalidRequest { nev: usize, dim: usize },
    #[error("no convergence after {iters} iterations; worst residual {worst:e}")]
    NotConverged { iters: usize, worst: f64 },
    #[error("orthogonalization broke down; starting block was rank deficient")]
    Breakdown,
    #[error(transparent)]
    Sparse(#[from] SparseError),
}

/// One converged eigenpair. `residual` is the final `‖A x − λ M x‖₂`
/// (the convergence test compares it against `tol · λ`); the vector is
/// M-normalized.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: FEFunction,
    pub residual: f64,
}

/// Ascending eigenpairs of one discretization, M-orthonormal as a block.
/// `ortho_defect` records the largest off-diagonal M-inner product among
/// the returned vectors, as a diagnostic of basis quality.
#[derive(Debug, Clone)]
pub struct SpectralSet {
    pub pairs: Vec<EigenPair>,
    pub ortho_defect: f64,
}

impl SpectralSet {
    pub fn values(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.value).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EigOptions {
    pub nev: usize,
    /// Relative residual tolerance.
    pub tol: f64,
    pub seed: u64,
    pub max_iter: usize,
    /// Extra block columns beyond `nev`; guards the iteration against slow
    /// convergence when the trailing requested values are clustered.
    pub extra: usize,
}

impl Default for EigOptions {
    fn default() -> Self {
        EigOptions {
            nev: 1,
            tol: 1e-9,
            seed: 0,
            max_iter: 500,
            extra: 5,
        }
    }
}

/// Computes the `nev` smallest eigenpairs of `A x = λ M x`; vectors are
/// tagged as members of a space of the given kind.
pub fn smallest_eigenpairs(
    a: &SparseSymMatrix,
    m: &SparseSymMatrix,
    kind: SpaceKind,
    opts: &EigOptions,
) -> Result<SpectralSet, EigError> {
    let dim = a.dim();
    if opts.nev == 0 || opts.nev > dim {
        return Err(EigError::InvalidRequest { nev: opts.nev, dim });
    }
    let block = (opts.nev + opts.extra).min(dim);
    let factor = a.factorize()?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<Vec<f64>> = (0..block)
        .map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    m_orthonormalize(&mut x, m)?;

    let mut worst = f64::INFINITY;
    for _iter in 0..opts.max_iter {
        // One inverse power step on the whole block.
        for col in x.iter_mut() {
            let rhs = m.matvec(col);
            *col = factor.solve(&rhs);
        }
        m_orthonormalize(&mut x, m)?;

        // Rayleigh–Ritz on the block.
        let ax: Vec<Vec<f64>> = x.iter().map(|c| a.matvec(c)).collect();
        let mut h = DMatrix::zeros(block, block);
        for i in 0..block {
            for j in 0..block {
                h[(i, j)] = dot(&x[i], &ax[j]);
            }
        }
        let h = (&h + h.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(h);
        let mut order: Vec<usize> = (0..block).collect();
        order.sort_by(|&p, &q| eig.eigenvalues[p].total_cmp(&eig.eigenvalues[q]));

        let rotated: Vec<Vec<f64>> = order
            .iter()
            .map(|&c| {
                let mut col = vec![0.0; dim];
                for r in 0..block {
                    let w = eig.eigenvectors[(r, c)];
                    for (out, &xi) in col.iter_mut().zip(&x[r]) {
                        *out += w * xi;
                    }
                }
                col
            })
            .collect();
        let theta: Vec<f64> = order.iter().map(|&c| eig.eigenvalues[c]).collect();
        x = rotated;

        // Convergence of the requested prefix.
        worst = 0.0;
        let mut done = true;
        for k in 0..opts.nev {
            let ax = a.matvec(&x[k]);
            let mx = m.matvec(&x[k]);
            let r: f64 = ax
                .iter()
                .zip(&mx)
                .map(|(p, q)| (p - theta[k] * q).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(r / theta[k].max(f64::MIN_POSITIVE));
            if r > opts.tol * theta[k] {
                done = false;
            }
        }
        if done {
            let pairs = (0..opts.nev)
                .map(|k| {
                    let ax = a.matvec(&x[k]);
                    let mx = m.matvec(&x[k]);
                    let r = ax
                        .iter()
                        .zip(&mx)
                        .map(|(p, q)| (p - theta[k] * q).powi(2))
                        .sum::<f64>()
                        .sqrt();
                    EigenPair {
                        value: theta[k],
                        vector: FEFunction {
                            kind,
                            coeffs: x[k].clone(),
                        },
                        residual: r,
                    }
                })
                .collect::<Vec<_>>();
            let mut defect = 0.0f64;
            for i in 0..opts.nev {
                let mxi = m.matvec(&pairs[i].vector.coeffs);
                for j in 0..i {
                    defect = defect.max(dot(&pairs[j].vector.coeffs, &mxi).abs());
                }
            }
            return Ok(SpectralSet {
                pairs,
                ortho_defect: defect,
            });
        }
    }
    Err(EigError::NotConverged {
        iters: opts.max_iter,
        worst,
    })
}

/// Normalizes eigenvector signs deterministically: the entry of largest
/// magnitude (lowest index on exact ties) is made positive. Idempotent, so
/// results are comparable across runs, seeds and mesh iterations.
pub fn fix_signs(mut set: SpectralSet) -> SpectralSet {
    for pair in &mut set.pairs {
        let c = &mut pair.vector.coeffs;
        let mut idx = 0;
        let mut best = 0.0;
        for (i, &v) in c.iter().enumerate() {
            if v.abs() > best {
                best = v.abs();
                idx = i;
            }
        }
        if best > 0.0 && c[idx] < 0.0 {
            for v in c.iter_mut() {
                *v = -*v;
            }
        }
    }
    set
}

/// Gram–Schmidt in the M-inner product, with one re-orthogonalization pass
/// per column ("twice is enough").
fn m_orthonormalize(x: &mut [Vec<f64>], m: &SparseSymMatrix) -> Result<(), EigError> {
    let n = x.len();
    for j in 0..n {
        for _pass in 0..2 {
            let mxj = m.matvec(&x[j]);
            let (head, tail) = x.split_at_mut(j);
            let xj = &mut tail[0];
            for prev in head.iter() {
                let c = dot(prev, &mxj);
                for (t, &s) in xj.iter_mut().zip(prev) {
                    *t -= c * s;
                }
            }
        }
        let norm = m.bilinear(&x[j], &x[j]).max(0.0).sqrt();
        if norm < 1e-300 {
            return Err(EigError::Breakdown);
        }
        for v in x[j].iter_mut() {
            *v /= norm;
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
