//! Singular value decompositions: one-sided Jacobi and the two-stage
//! randomized scheme (Gaussian sketch, range basis, small deterministic SVD).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dense::{axpy, dot, norm2, DenseMatrix};
use super::qr::thin_qr;
use super::{gaussian_fill, LinalgError};

/// Thin SVD `A = U diag(σ) Zᵀ` with `p = min(rows, cols)` (or the sketch
/// size for randomized results) retained triplets.
#[derive(Clone, Debug)]
pub struct SvdResult {
    pub left_vectors: DenseMatrix,
    pub singular_values: Vec<f64>,
    pub right_vectors_t: DenseMatrix,
}

impl SvdResult {
    /// Rebuilds `U diag(σ) Zᵀ`.
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.left_vectors.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.col_mut(j).iter_mut().for_each(|v| *v *= s);
        }
        us.matmul(&self.right_vectors_t)
    }

    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

const MAX_SWEEPS: usize = 80;

/// Deterministic thin SVD by one-sided (Hestenes) Jacobi rotations.
///
/// Tall inputs are first reduced by a Householder QR so the rotations act on
/// a small square factor; wide inputs are handled through the transpose.
pub fn svd(a: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    check_input(a)?;
    if a.rows() >= a.cols() {
        svd_tall(a)
    } else {
        let t = svd_tall(&a.transpose())?;
        Ok(SvdResult {
            left_vectors: t.right_vectors_t.transpose(),
            singular_values: t.singular_values,
            right_vectors_t: t.left_vectors.transpose(),
        })
    }
}

fn check_input(a: &DenseMatrix) -> Result<(), LinalgError> {
    if a.rows() == 0 || a.cols() == 0 {
        return Err(LinalgError::Empty);
    }
    if !a.is_finite() {
        return Err(LinalgError::NonFinite("svd input"));
    }
    Ok(())
}

fn svd_tall(a: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = a.shape();
    if m > n + n / 2 {
        let (q, r) = thin_qr(a);
        let inner = jacobi(&r)?;
        return Ok(SvdResult {
            left_vectors: q.matmul(&inner.left_vectors),
            singular_values: inner.singular_values,
            right_vectors_t: inner.right_vectors_t,
        });
    }
    jacobi(a)
}

fn jacobi(a: &DenseMatrix) -> Result<SvdResult, LinalgError> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n);
    let tol = f64::EPSILON * (m as f64).sqrt().max(1.0);

    let mut norms: Vec<f64> = (0..n).map(|j| dot(w.col(j), w.col(j))).collect();
    // columns below roundoff of the whole matrix are numerically zero
    let floor = (f64::EPSILON * norms.iter().sum::<f64>().sqrt()).powi(2);
    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = norms[p];
                let beta = norms[q];
                if alpha <= floor || beta <= floor {
                    continue;
                }
                let gamma = dot(w.col(p), w.col(q));
                if gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
                norms[p] = alpha - t * gamma;
                norms[q] = beta + t * gamma;
            }
        }
        // refresh the running norms to stop drift from the incremental updates
        for (j, nj) in norms.iter_mut().enumerate() {
            *nj = dot(w.col(j), w.col(j));
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NoConvergence("one-sided Jacobi SVD"));
    }

    let sigma: Vec<f64> = (0..n).map(|j| norm2(w.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].partial_cmp(&sigma[i]).unwrap().then(i.cmp(&j)));

    let smax = sigma[order[0]];
    let cutoff = smax * 1e-13 * (m.max(n) as f64);
    let mut u = DenseMatrix::zeros(m, n);
    let mut zt = DenseMatrix::zeros(n, n);
    let mut singular_values = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = sigma[src];
        singular_values.push(s);
        if s > cutoff && s > 0.0 {
            let col = u.col_mut(dst);
            for (ui, wi) in col.iter_mut().zip(w.col(src)) {
                *ui = wi / s;
            }
        } else {
            deficient.push(dst);
        }
        for k in 0..n {
            zt[(dst, k)] = v[(k, src)];
        }
    }
    complete_orthonormal(&mut u, &deficient);
    Ok(SvdResult {
        left_vectors: u,
        singular_values,
        right_vectors_t: zt,
    })
}

#[inline]
fn rotate_cols(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.rows();
    let data = m.as_mut_slice();
    let (lo, hi) = data.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let a = *x;
        let b = *y;
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

/// Fills the listed columns with unit vectors orthogonal to every other
/// column (the null-space part of `U` for rank-deficient inputs).
fn complete_orthonormal(u: &mut DenseMatrix, slots: &[usize]) {
    if slots.is_empty() {
        return;
    }
    let (m, n) = u.shape();
    let mut filled: Vec<usize> = (0..n).filter(|j| !slots.contains(j)).collect();
    for &slot in slots {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for e in 0..m {
            let mut cand = vec![0.0; m];
            cand[e] = 1.0;
            for _ in 0..2 {
                for &j in &filled {
                    let proj = dot(u.col(j), &cand);
                    axpy(-proj, u.col(j), &mut cand);
                }
            }
            let nrm = norm2(&cand);
            if best.as_ref().map_or(true, |(b, _)| nrm > *b) {
                best = Some((nrm, cand));
            }
            if nrm > 0.7 {
                break;
            }
        }
        let (nrm, cand) = best.expect("at least one row");
        let col = u.col_mut(slot);
        for (c, x) in col.iter_mut().zip(&cand) {
            *c = x / nrm;
        }
        filled.push(slot);
    }
}

/// Extra knobs of the randomized scheme. Both default to zero.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomizedOptions {
    pub oversampling: usize,
    pub power_iterations: usize,
}

/// Randomized SVD of target rank `k`, deterministic for a fixed `seed`.
pub fn randomized_svd(a: &DenseMatrix, k: usize, seed: u64) -> Result<SvdResult, LinalgError> {
    randomized_svd_with(a, k, seed, RandomizedOptions::default())
}

pub fn randomized_svd_with(
    a: &DenseMatrix,
    k: usize,
    seed: u64,
    opts: RandomizedOptions,
) -> Result<SvdResult, LinalgError> {
    check_input(a)?;
    let (m, n) = a.shape();
    let p = m.min(n);
    if k == 0 || k > p {
        return Err(LinalgError::RankOutOfRange { k, max: p });
    }
    let l = (k + opts.oversampling).min(p);

    // stage 1: Gaussian sketch and orthonormal range basis
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut theta = DenseMatrix::zeros(n, l);
    gaussian_fill(&mut rng, theta.as_mut_slice());
    let mut q = thin_qr(&a.matmul(&theta)).0;
    for _ in 0..opts.power_iterations {
        let z = thin_qr(&a.tr_matmul(&q)).0;
        q = thin_qr(&a.matmul(&z)).0;
    }

    // stage 2: SVD of the small projected matrix
    let small = q.tr_matmul(a);
    let inner = svd(&small)?;
    let mut u = q.matmul(&inner.left_vectors);
    let mut sigma = inner.singular_values;
    let mut zt = inner.right_vectors_t;
    u.truncate_cols(k);
    sigma.truncate(k);
    zt = zt.select_rows(&(0..k).collect::<Vec<_>>());
    Ok(SvdResult {
        left_vectors: u,
        singular_values: sigma,
        right_vectors_t: zt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::random_matrix;

    #[test]
    fn identity_has_unit_singular_values() {
        let r = svd(&DenseMatrix::identity(3)).unwrap();
        for s in &r.singular_values {
            assert!((s - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rank_one_analytic() {
        let u = [0.6, 0.0, 0.8];
        let v = [1.0 / 3f64.sqrt(); 3];
        let a = DenseMatrix::from_fn(3, 3, |i, j| 5.0 * u[i] * v[j]);
        let r = svd(&a).unwrap();
        assert!((r.singular_values[0] - 5.0).abs() < 1e-12);
        assert!(r.singular_values[1].abs() < 1e-12);
        assert!(r.singular_values[2].abs() < 1e-12);
        assert!(r.left_vectors.orthonormality_defect() < 1e-10);
        assert!(r.right_vectors_t.transpose().orthonormality_defect() < 1e-10);
    }

    #[test]
    fn reconstructs_random_matrix() {
        let a = random_matrix(10, 6, 3);
        let r = svd(&a).unwrap();
        let rel = a.sub(&r.reconstruct()).frobenius_norm() / a.frobenius_norm();
        assert!(rel < 1e-12, "rel = {rel}");
        assert!(r.singular_values.windows(2).all(|w| w[0] >= w[1]));
        // wide input goes through the transpose
        let at = a.transpose();
        let rt = svd(&at).unwrap();
        let rel = at.sub(&rt.reconstruct()).frobenius_norm() / at.frobenius_norm();
        assert!(rel < 1e-12);
    }

    #[test]
    fn tall_path_uses_qr_and_stays_orthonormal() {
        let a = random_matrix(60, 7, 11);
        let r = svd(&a).unwrap();
        assert!(r.left_vectors.orthonormality_defect() < 1e-10);
        assert!(r.right_vectors_t.transpose().orthonormality_defect() < 1e-10);
        let rel = a.sub(&r.reconstruct()).frobenius_norm() / a.frobenius_norm();
        assert!(rel < 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let mut a = DenseMatrix::identity(2);
        a[(0, 1)] = f64::NAN;
        assert!(matches!(svd(&a), Err(LinalgError::NonFinite(_))));
    }

    #[test]
    fn randomized_exact_rank() {
        let left = random_matrix(8, 3, 1);
        let right = random_matrix(3, 5, 2);
        let a = left.matmul(&right);
        let exact = svd(&a).unwrap();
        let approx = randomized_svd(&a, 3, 42).unwrap();
        for i in 0..3 {
            let rel = (approx.singular_values[i] - exact.singular_values[i]).abs()
                / exact.singular_values[i];
            assert!(rel < 1e-9, "σ{i}: rel {rel}");
        }
    }

    #[test]
    fn randomized_identity_and_determinism() {
        let r = randomized_svd(&DenseMatrix::identity(4), 4, 7).unwrap();
        for s in &r.singular_values {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let a = random_matrix(9, 6, 5);
        let r1 = randomized_svd(&a, 4, 99).unwrap();
        let r2 = randomized_svd(&a, 4, 99).unwrap();
        assert_eq!(r1.singular_values, r2.singular_values);
        assert_eq!(r1.left_vectors, r2.left_vectors);
    }

    #[test]
    fn randomized_rejects_bad_rank() {
        let a = random_matrix(4, 3, 5);
        assert!(randomized_svd(&a, 0, 1).is_err());
        assert!(randomized_svd(&a, 4, 1).is_err());
    }
}
