//! Matrix exponential by scaling and squaring with a truncated Taylor series.
//!
//! The argument is halved until its infinity norm is at most 1/2, the series
//! is summed until the next term is negligible relative to the partial sum
//! (well below the 1e-10 relative tolerance the acyclicity penalty needs),
//! and the result is squared back up.

use super::matrix::Matrix;
use crate::error::{Error, Result};

const MAX_TERMS: usize = 64;

pub fn expm(a: &Matrix) -> Result<Matrix> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            op: "expm",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let n = a.rows();
    let norm = a.norm_inf();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.scale(0.5f64.powi(squarings));

    let mut sum = Matrix::identity(n);
    let mut term = Matrix::identity(n);
    for k in 1..=MAX_TERMS {
        term = term.matmul(&scaled)?.scale(1.0 / k as f64);
        sum.add_assign(&term)?;
        if term.max_abs() <= f64::EPSILON * sum.max_abs() {
            break;
        }
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// `tr(exp(A ∘ A)) − n`, together with `exp(A ∘ A)` for the backward rule.
pub fn trace_expm_hadamard(a: &Matrix) -> Result<(f64, Matrix)> {
    if a.rows() != a.cols() {
        return Err(Error::Dimension {
            op: "trace_expm_hadamard",
            left: a.shape(),
            right: a.shape(),
        });
    }
    let squared = a.hadamard(a)?;
    let e = expm(&squared)?;
    Ok((e.trace() - a.rows() as f64, e))
}
