use super::dense::{dot, DenseMatrix};

/// Householder thin QR of an `m x n` matrix with `m >= n`.
///
/// Returns `Q` (`m x n`, orthonormal columns) and upper-triangular `R`
/// (`n x n`). Rank-deficient inputs still yield an orthonormal `Q`.
pub fn thin_qr(a: &DenseMatrix) -> (DenseMatrix, DenseMatrix) {
    let (m, n) = a.shape();
    assert!(m >= n, "thin_qr expects a tall matrix, got {m}x{n}");
    let mut work = a.clone();
    let mut reflectors: Vec<Vec<f64>> = Vec::with_capacity(n);

    for k in 0..n {
        let x = &work.col(k)[k..];
        let alpha = {
            let nx = dot(x, x).sqrt();
            if x[0] >= 0.0 {
                -nx
            } else {
                nx
            }
        };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vnorm2 = dot(&v, &v);
        if vnorm2 > 0.0 {
            let scale = (2.0 / vnorm2).sqrt();
            v.iter_mut().for_each(|e| *e *= scale);
            for j in k..n {
                let col = &mut work.col_mut(j)[k..];
                let proj = dot(&v, col);
                for (c, vi) in col.iter_mut().zip(&v) {
                    *c -= proj * vi;
                }
            }
        } else {
            v.iter_mut().for_each(|e| *e = 0.0);
        }
        reflectors.push(v);
    }

    let r = DenseMatrix::from_fn(n, n, |i, j| if i <= j { work[(i, j)] } else { 0.0 });

    // accumulate Q = H_0 H_1 ... H_{n-1} applied to the first n unit vectors
    let mut q = DenseMatrix::zeros(m, n);
    for j in 0..n {
        q[(j, j)] = 1.0;
    }
    for k in (0..n).rev() {
        let v = &reflectors[k];
        for j in 0..n {
            let col = &mut q.col_mut(j)[k..];
            let proj = dot(v, col);
            if proj != 0.0 {
                for (c, vi) in col.iter_mut().zip(v) {
                    *c -= proj * vi;
                }
            }
        }
    }
    (q, r)
}
