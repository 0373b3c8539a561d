//! Aitken Δ² extrapolation of eigenvalue sequences from successive uniform
//! refinements.
//!
//! For second-order convergent values the error decays geometrically with
//! ratio ¼ per level, and Aitken's formula `a_n − (Δa_n)² / Δ²a_n` removes
//! the leading geometric term exactly — three good levels give a reference
//! accurate far beyond the finest mesh in the sequence.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AitkenError {
    #[error("extrapolation needs at least 3 values, got {0}")]
    TooShort(usize),
    #[error("last three values are not strictly monotone: {0:?}")]
    NotMonotone([f64; 3]),
    #[error("extrapolated value is not finite")]
    NotFinite,
}

/// An extrapolated reference value together with the sequence it came from.
#[derive(Debug, Clone)]
pub struct ReferenceEstimate {
    pub value: f64,
    /// Change in the extrapolated value when the previous triple is used
    /// instead (or distance to the last input when only three values
    /// exist); a self-consistency diagnostic, not an error bound.
    pub residual: f64,
    pub sequence: Vec<f64>,
}

fn delta2(a0: f64, a1: f64, a2: f64) -> Result<f64, AitkenError> {
    let d1 = a1 - a0;
    let d2 = a2 - a1;
    let dd = d2 - d1;
    if dd == 0.0 {
        // Already converged (constant tail): the last value is the limit.
        return Ok(a2);
    }
    if !(d1 > 0.0 && d2 > 0.0) && !(d1 < 0.0 && d2 < 0.0) {
        return Err(AitkenError::NotMonotone([a0, a1, a2]));
    }
    let value = a2 - d2 * d2 / dd;
    if !value.is_finite() {
        return Err(AitkenError::NotFinite);
    }
    Ok(value)
}

/// Extrapolates the last three values of `seq`; with four or more values
/// the previous triple provides the residual diagnostic.
pub fn aitken_extrapolate(seq: &[f64]) -> Result<ReferenceEstimate, AitkenError> {
    let n = seq.len();
    if n < 3 {
        return Err(AitkenError::TooShort(n));
    }
    let value = delta2(seq[n - 3], seq[n - 2], seq[n - 1])?;
    let residual = if n >= 4 {
        let prev = delta2(seq[n - 4], seq[n - 3], seq[n - 2])?;
        (value - prev).abs()
    } else {
        (value - seq[n - 1]).abs()
    };
    Ok(ReferenceEstimate {
        value,
        residual,
        sequence: seq.to_vec(),
    })
}
