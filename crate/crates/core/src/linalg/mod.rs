//! Dense linear-algebra kernels: column-major matrices, Householder QR,
//! Jacobi and randomized SVD, LU solves, and banded LU for the full-order
//! Jacobians.

mod band;
mod dense;
mod lu;
mod qr;
mod svd;

pub use band::{BandLu, BandMatrix};
pub use dense::{axpy, dot, norm2, sub_vec, DenseMatrix};
pub use lu::{lu_solve, LuFactor};
pub use qr::thin_qr;
pub use svd::{randomized_svd, randomized_svd_with, svd, RandomizedOptions, SvdResult};

use rand::RngCore;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("non-finite entries in {0}")]
    NonFinite(&'static str),
    #[error("empty matrix")]
    Empty,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("target rank {k} outside 1..={max}")]
    RankOutOfRange { k: usize, max: usize },
    #[error("numerically singular matrix (pivot {pivot:e} at index {index})")]
    Singular { pivot: f64, index: usize },
    #[error("{0} did not converge")]
    NoConvergence(&'static str),
}

/// Fills `out` with standard normal draws using Box–Muller on the uniform
/// stream of `rng`.
pub fn gaussian_fill<R: RngCore>(rng: &mut R, out: &mut [f64]) {
    let mut i = 0;
    while i < out.len() {
        // 53-bit uniforms in (0, 1]
        let u1 = ((rng.next_u64() >> 11) as f64 + 1.0) / (1u64 << 53) as f64;
        let u2 = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let r = (-2.0 * u1.ln()).sqrt();
        let th = 2.0 * std::f64::consts::PI * u2;
        out[i] = r * th.cos();
        if i + 1 < out.len() {
            out[i + 1] = r * th.sin();
        }
        i += 2;
    }
}

/// 2-norm condition number from the singular values.
pub fn condition_number(a: &DenseMatrix) -> Result<f64, LinalgError> {
    let s = svd(a)?.singular_values;
    let smin = *s.last().unwrap();
    Ok(if smin == 0.0 { f64::INFINITY } else { s[0] / smin })
}

#[cfg(test)]
pub(crate) mod test_util {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub fn random_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = DenseMatrix::zeros(rows, cols);
        gaussian_fill(&mut rng, m.as_mut_slice());
        m
    }
}
