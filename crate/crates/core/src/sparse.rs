//! Sparse symmetric matrices and the direct solver backing the eigensolver.
//!
//! Assembly accumulates `(row, col, value)` triplets and then compresses
//! them with a fixed, stable ordering so that repeated runs sum floating
//! point contributions in exactly the same order: outputs are reproducible
//! to the bit, not just to rounding.

use sprs::{CsMat, FillInReduction, SymmetryCheck};
use sprs_ldl::{Ldl, LdlNumeric};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SparseError {
    #[error("matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {defect:e}")]
    NotSymmetric { i: usize, j: usize, defect: f64 },
    #[error("LDLT factorization failed; matrix is singular or not positive definite")]
    NotPositiveDefinite,
    #[error("triplet index ({i},{j}) out of bounds for dimension {dim}")]
    IndexOutOfBounds { i: usize, j: usize, dim: usize },
}

/// Square symmetric sparse matrix in CSR form.
///
/// Both triangles are stored explicitly; symmetry is a construction-time
/// invariant checked against a small absolute tolerance, and assembly
/// routines in this crate emit mirrored entries with identical values so
/// the defect is exactly zero in practice.
#[derive(Debug, Clone)]
pub struct SparseSymMatrix {
    mat: CsMat<f64>,
}

impl SparseSymMatrix {
    /// Builds an `n × n` matrix from possibly-duplicated triplets.
    ///
    /// Duplicates are summed. The triplets are stable-sorted by `(row, col)`
    /// before accumulation, so the summation order — and hence the rounded
    /// result — depends only on the order in which triplets were pushed,
    /// which assembly keeps fixed.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Result<Self, SparseError> {
        for &(i, j, _) in triplets {
            if i >= n || j >= n {
                return Err(SparseError::IndexOutOfBounds { i, j, dim: n });
            }
        }
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));

        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data: Vec<f64> = Vec::new();
        indptr.push(0);
        let mut row = 0usize;
        let mut last: Option<(usize, usize)> = None;
        for &t in &order {
            let (i, j, v) = triplets[t];
            while row < i {
                indptr.push(indices.len());
                row += 1;
            }
            if last == Some((i, j)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(j);
                data.push(v);
                last = Some((i, j));
            }
        }
        while row < n {
            indptr.push(indices.len());
            row += 1;
        }
        let mat = CsMat::new((n, n), indptr, indices, data);
        let out = SparseSymMatrix { mat };
        out.check_symmetry(1e-12)?;
        Ok(out)
    }

    fn check_symmetry(&self, tol: f64) -> Result<(), SparseError> {
        let t = self.mat.transpose_view().to_csr();
        // Same sparsity pattern and same values: compare row by row.
        for i in 0..self.dim() {
            let a = self.mat.outer_view(i).unwrap();
            let b = t.outer_view(i).unwrap();
            let ai: Vec<_> = a.iter().collect();
            let bi: Vec<_> = b.iter().collect();
            if ai.len() != bi.len() {
                return Err(SparseError::NotSymmetric {
                    i,
                    j: 0,
                    defect: f64::INFINITY,
                });
            }
            for (&(ja, va), &(jb, vb)) in ai.iter().zip(&bi) {
                if ja != jb {
                    return Err(SparseError::NotSymmetric {
                        i,
                        j: ja,
                        defect: f64::INFINITY,
                    });
                }
                let defect = (va - vb).abs();
                if defect > tol {
                    return Err(SparseError::NotSymmetric { i, j: ja, defect });
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    /// `y = A x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim());
        let mut y = vec![0.0; self.dim()];
        for (i, row) in self.mat.outer_iterator().enumerate() {
            let mut acc = 0.0;
            for (j, &v) in row.iter() {
                acc += v * x[j];
            }
            y[i] = acc;
        }
        y
    }

    /// `xᵀ A y`.
    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        let ay = self.matvec(y);
        x.iter().zip(&ay).map(|(a, b)| a * b).sum()
    }

    /// Iterates stored entries `(row, col, value)` in CSR order.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.mat
            .outer_iterator()
            .enumerate()
            .flat_map(|(i, row)| row.iter().map(move |(j, &v)| (i, j, v)).collect::<Vec<_>>())
    }

    /// Dense copy, for small-problem cross-checks.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let n = self.dim();
        let mut d = nalgebra::DMatrix::zeros(n, n);
        for (i, j, v) in self.entries() {
            d[(i, j)] = v;
        }
        d
    }

    /// Sparse LDLᵀ factorization with fill-reducing ordering.
    ///
    /// Fails when the matrix is singular or indefinite (zero or negative
    /// pivot); stiffness and mass matrices of the spaces in this crate are
    /// positive definite once boundary conditions are eliminated.
    pub fn factorize(&self) -> Result<SpdFactor, SparseError> {
        // The sparse backend cannot handle dimensions below 2; fall back to
        // a dense Cholesky there (degenerate but legitimate cases, e.g. a
        // conforming space with a single interior vertex).
        if self.dim() < 2 {
            let chol = self
                .to_dense()
                .cholesky()
                .ok_or(SparseError::NotPositiveDefinite)?;
            return Ok(SpdFactor {
                inner: FactorInner::Dense(chol),
            });
        }
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(self.mat.view())
            .map_err(|_| SparseError::NotPositiveDefinite)?;
        // LDLT succeeds on some indefinite matrices; positive definiteness
        // shows up as all-positive diagonal of D.
        if ldl.d().iter().any(|&d| d <= 0.0 || !d.is_finite()) {
            return Err(SparseError::NotPositiveDefinite);
        }
        Ok(SpdFactor {
            inner: FactorInner::Ldl(ldl),
        })
    }

    /// Writes the matrix in Matrix Market coordinate format (1-based).
    pub fn write_matrix_market<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate real general")?;
        writeln!(w, "{} {} {}", self.dim(), self.dim(), self.nnz())?;
        for (i, j, v) in self.entries() {
            writeln!(w, "{} {} {:.17e}", i + 1, j + 1, v)?;
        }
        Ok(())
    }
}

/// Factorized symmetric positive definite matrix; solves `A x = b`.
pub struct SpdFactor {
    inner: FactorInner,
}

enum FactorInner {
    Ldl(LdlNumeric<f64, usize>),
    Dense(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl SpdFactor {
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        match &self.inner {
            FactorInner::Ldl(ldl) => ldl.solve(b),
            FactorInner::Dense(chol) => {
                let x = chol.solve(&nalgebra::DVector::from_column_slice(b));
                x.iter().cloned().collect()
            }
        }
    }
}
