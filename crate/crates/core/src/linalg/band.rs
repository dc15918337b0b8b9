//! Banded storage and banded LU with partial pivoting.
//!
//! Entry `(i, j)` with `-kl <= j - i <= ku` lives at row `kl + ku + i - j`
//! of column `j` in a `(2 kl + ku + 1) x n` column-major array. The extra
//! `kl` rows hold the fill produced by row interchanges.

use super::dense::DenseMatrix;
use super::LinalgError;

#[derive(Clone, Debug)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    ld: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        Self {
            n,
            kl,
            ku,
            ld,
            data: vec![0.0; ld * n],
        }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    #[inline]
    fn in_band(&self, i: usize, j: usize) -> bool {
        j <= i + self.ku && i <= j + self.kl
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        j * self.ld + self.kl + self.ku + i - j
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n || !self.in_band(i, j) {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)`. Panics outside the declared band.
    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            self.in_band(i, j),
            "entry ({i}, {j}) outside band kl={} ku={}",
            self.kl,
            self.ku
        );
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j));
        let s = self.slot(i, j);
        self.data[s] = v;
    }

    /// Zeroes row and column `d` and puts `1` on the diagonal.
    pub fn constrain(&mut self, d: usize) {
        let lo = d.saturating_sub(self.kl.max(self.ku));
        let hi = (d + self.kl.max(self.ku) + 1).min(self.n);
        for k in lo..hi {
            if self.in_band(d, k) {
                let s = self.slot(d, k);
                self.data[s] = 0.0;
            }
            if self.in_band(k, d) {
                let s = self.slot(k, d);
                self.data[s] = 0.0;
            }
        }
        let s = self.slot(d, d);
        self.data[s] = 1.0;
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += s * other` for matrices with identical band layout.
    pub fn add_scaled(&mut self, s: f64, other: &BandMatrix) {
        assert_eq!((self.n, self.kl, self.ku), (other.n, other.kl, other.ku));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let lo = j.saturating_sub(self.ku);
            let hi = (j + self.kl + 1).min(self.n);
            let base = j * self.ld + self.kl + self.ku;
            for i in lo..hi {
                y[i] += self.data[base + i - j] * xj;
            }
        }
        y
    }

    /// `self * b` for a dense `n x k` block.
    pub fn mul_dense(&self, b: &DenseMatrix) -> DenseMatrix {
        assert_eq!(b.rows(), self.n);
        let mut out = DenseMatrix::zeros(self.n, b.cols());
        for c in 0..b.cols() {
            let y = self.mul_vec(b.col(c));
            out.col_mut(c).copy_from_slice(&y);
        }
        out
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Row sums over the stored band.
    pub fn row_sums(&self) -> Vec<f64> {
        let ones = vec![1.0; self.n];
        self.mul_vec(&ones)
    }

    pub fn factor(self) -> Result<BandLu, LinalgError> {
        BandLu::new(self)
    }
}

/// LU factors of a band matrix (`L` unit lower with `kl` subdiagonals,
/// `U` with `kl + ku` superdiagonals after pivoting).
#[derive(Clone, Debug)]
pub struct BandLu {
    m: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    pub fn new(mut m: BandMatrix) -> Result<Self, LinalgError> {
        let n = m.n;
        let kl = m.kl;
        let kv = m.kl + m.ku;
        let ld = m.ld;
        let norm = m.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let tiny = 1e-14 * norm;
        let mut piv = vec![0usize; n];
        let mut ju = 0usize;
        let d = &mut m.data;
        for j in 0..n {
            let km = kl.min(n - 1 - j);
            let col = j * ld + kv;
            let mut jp = 0;
            let mut best = d[col].abs();
            for i in 1..=km {
                let v = d[col + i].abs();
                if v > best {
                    best = v;
                    jp = i;
                }
            }
            piv[j] = j + jp;
            if best <= tiny || best == 0.0 {
                return Err(LinalgError::Singular { pivot: best, index: j });
            }
            ju = ju.max((j + m.ku + jp).min(n - 1));
            if jp != 0 {
                for c in j..=ju {
                    let base = c * ld + kv;
                    d.swap(base + j + jp - c, base + j - c);
                }
            }
            let inv = 1.0 / d[col];
            for i in 1..=km {
                d[col + i] *= inv;
            }
            for c in (j + 1)..=ju {
                let base = c * ld + kv;
                let ajc = d[base + j - c];
                if ajc != 0.0 {
                    for i in 1..=km {
                        let l = d[col + i];
                        d[base + j + i - c] -= l * ajc;
                    }
                }
            }
        }
        Ok(Self { m, piv })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.m.n;
        let kl = self.m.kl;
        let kv = self.m.kl + self.m.ku;
        let ld = self.m.ld;
        let d = &self.m.data;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for j in 0..n {
            let p = self.piv[j];
            if p != j {
                x.swap(p, j);
            }
            let xj = x[j];
            if xj != 0.0 {
                let km = kl.min(n - 1 - j);
                let col = j * ld + kv;
                for i in 1..=km {
                    x[j + i] -= d[col + i] * xj;
                }
            }
        }
        for j in (0..n).rev() {
            let col = j * ld + kv;
            x[j] /= d[col];
            let xj = x[j];
            if xj != 0.0 {
                for i in 1..=kv.min(j) {
                    x[j - i] -= d[col - i] * xj;
                }
            }
        }
        x
    }
}
