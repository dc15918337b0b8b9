//! Parameter sampling, snapshot storage and POD bases.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::linalg::{randomized_svd, svd, DenseMatrix, LinalgError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PodError {
    #[error("snapshot matrix is empty")]
    Empty,
    #[error("snapshot matrix is identically zero")]
    AllZero,
    #[error("tolerance must lie in (0, 1), got {0}")]
    BadTolerance(f64),
    #[error("requested {want} modes but only {have} are available")]
    TooManyModes { want: usize, have: usize },
    #[error("snapshot of length {got} pushed into a matrix with {want} rows")]
    RowMismatch { got: usize, want: usize },
    #[error("parameter of length {got}, expected {want}")]
    ParamMismatch { got: usize, want: usize },
    #[error("bad parameter bounds: {0}")]
    BadBounds(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterSpace {
    pub bounds: Vec<[f64; 2]>,
}

impl ParameterSpace {
    pub fn new(bounds: Vec<[f64; 2]>) -> Result<Self, PodError> {
        if bounds.is_empty() {
            return Err(PodError::BadBounds("no coordinates".into()));
        }
        for (i, b) in bounds.iter().enumerate() {
            if !(b[0] < b[1]) || !b[0].is_finite() || !b[1].is_finite() {
                return Err(PodError::BadBounds(format!("coordinate {i}: {b:?}")));
            }
        }
        Ok(Self { bounds })
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn contains(&self, mu: &[f64]) -> bool {
        mu.len() == self.dim() && mu.iter().zip(&self.bounds).all(|(v, b)| *v >= b[0] && *v <= b[1])
    }

    /// Centre of the box.
    pub fn midpoint(&self) -> Vec<f64> {
        self.bounds.iter().map(|b| 0.5 * (b[0] + b[1])).collect()
    }
}

/// Latin hypercube design: each coordinate's `n` equal strata hold exactly
/// one point.
pub fn lhs_sample(space: &ParameterSpace, n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = space.dim();
    let mut pts = vec![vec![0.0; p]; n];
    for (c, b) in space.bounds.iter().enumerate() {
        let mut strata: Vec<usize> = (0..n).collect();
        strata.shuffle(&mut rng);
        for (i, s) in strata.into_iter().enumerate() {
            let u: f64 = rng.gen();
            let x = (s as f64 + u) / n as f64;
            pts[i][c] = b[0] + x * (b[1] - b[0]);
        }
    }
    pts
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMeta {
    pub mu: Vec<f64>,
    pub n: u32,
    pub k: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotMatrix {
    pub data: DenseMatrix,
    pub meta: Vec<SnapshotMeta>,
    pub param_dim: usize,
}

impl SnapshotMatrix {
    pub fn new(rows: usize, param_dim: usize) -> Self {
        Self {
            data: DenseMatrix::zeros(rows, 0),
            meta: Vec::new(),
            param_dim,
        }
    }

    pub fn rows(&self) -> usize {
        self.data.rows()
    }

    pub fn cols(&self) -> usize {
        self.data.cols()
    }

    pub fn push(&mut self, col: &[f64], meta: SnapshotMeta) -> Result<(), PodError> {
        if col.len() != self.rows() {
            return Err(PodError::RowMismatch {
                got: col.len(),
                want: self.rows(),
            });
        }
        if meta.mu.len() != self.param_dim {
            return Err(PodError::ParamMismatch {
                got: meta.mu.len(),
                want: self.param_dim,
            });
        }
        self.data
            .push_column(col)
            .map_err(|_| PodError::RowMismatch { got: col.len(), want: self.rows() })?;
        self.meta.push(meta);
        Ok(())
    }

    pub fn extend(&mut self, other: &SnapshotMatrix) -> Result<(), PodError> {
        for (j, m) in other.meta.iter().enumerate() {
            self.push(other.data.col(j), m.clone())?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PodMethod {
    Deterministic,
    Randomized { seed: u64 },
}

#[derive(Clone, Debug)]
pub struct ReducedBasis {
    pub v: DenseMatrix,
    /// Singular values computed while building the basis (all of them in
    /// deterministic mode, the sketch size in randomized mode).
    pub singular_values: Vec<f64>,
    pub ric_tolerance: f64,
    /// `‖S‖_F²`, the denominator of the information content.
    pub total_energy: f64,
}

impl ReducedBasis {
    pub fn dim(&self) -> usize {
        self.v.cols()
    }

    pub fn full_dim(&self) -> usize {
        self.v.rows()
    }

    /// Relative information content of the leading `n` modes.
    pub fn ric(&self, n: usize) -> f64 {
        ric(&self.singular_values, self.total_energy, n)
    }

    pub fn lift(&self, un: &[f64]) -> Vec<f64> {
        self.v.mul_vec(un)
    }

    pub fn project(&self, u: &[f64]) -> Vec<f64> {
        self.v.tr_mul_vec(u)
    }
}

pub fn ric(sigma: &[f64], total_energy: f64, n: usize) -> f64 {
    sigma[..n.min(sigma.len())].iter().map(|s| s * s).sum::<f64>() / total_energy
}

/// Smallest `N` whose retained energy reaches `1 − ε²`, evaluated through
/// the discarded tail to avoid cancellation.
pub fn select_dimension(sigma: &[f64], total_energy: f64, eps: f64) -> usize {
    let allowed = eps * eps * total_energy;
    let mut kept = 0.0;
    for (i, s) in sigma.iter().enumerate() {
        kept += s * s;
        if total_energy - kept <= allowed {
            return i + 1;
        }
    }
    sigma.len()
}

/// As [`select_dimension`] for a complete spectrum, with the tail summed
/// directly from the trailing singular values.
pub fn select_dimension_full(sigma: &[f64], eps: f64) -> usize {
    let mut tails = vec![0.0; sigma.len() + 1];
    for i in (0..sigma.len()).rev() {
        tails[i] = tails[i + 1] + sigma[i] * sigma[i];
    }
    let allowed = eps * eps * tails[0];
    (1..=sigma.len()).find(|&n| tails[n] <= allowed).unwrap_or(sigma.len())
}

fn check_snapshots(s: &DenseMatrix) -> Result<f64, PodError> {
    if s.rows() == 0 || s.cols() == 0 {
        return Err(PodError::Empty);
    }
    if !s.is_finite() {
        return Err(LinalgError::NonFinite("snapshot matrix").into());
    }
    let total = s.frobenius_norm().powi(2);
    if total == 0.0 {
        return Err(PodError::AllZero);
    }
    Ok(total)
}

/// POD basis of the columns of `s` at tolerance `eps`.
pub fn pod(s: &DenseMatrix, eps: f64, method: PodMethod) -> Result<ReducedBasis, PodError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(PodError::BadTolerance(eps));
    }
    let total = check_snapshots(s)?;
    let pmax = s.rows().min(s.cols());
    let (u, sigma) = match method {
        PodMethod::Deterministic => {
            let r = svd(s)?;
            (r.left_vectors, r.singular_values)
        }
        PodMethod::Randomized { seed } => {
            let mut k = pmax.min(4);
            loop {
                let r = randomized_svd(s, k, seed)?;
                let captured = r.singular_values.iter().map(|v| v * v).sum::<f64>();
                if total - captured <= eps * eps * total || k == pmax {
                    break (r.left_vectors, r.singular_values);
                }
                k = (2 * k).min(pmax);
            }
        }
    };
    let (n, total) = match method {
        // full spectrum: its energy is the exact denominator
        PodMethod::Deterministic => (select_dimension_full(&sigma, eps), sigma.iter().map(|s| s * s).sum()),
        PodMethod::Randomized { .. } => (select_dimension(&sigma, total, eps), total),
    };
    Ok(ReducedBasis {
        v: u.leading_cols(n),
        singular_values: sigma,
        ric_tolerance: eps,
        total_energy: total,
    })
}

/// POD basis with a prescribed number of modes.
pub fn pod_fixed(s: &DenseMatrix, n: usize, method: PodMethod) -> Result<ReducedBasis, PodError> {
    let total = check_snapshots(s)?;
    let pmax = s.rows().min(s.cols());
    if n == 0 || n > pmax {
        return Err(PodError::TooManyModes { want: n, have: pmax });
    }
    let (u, sigma) = match method {
        PodMethod::Deterministic => {
            let r = svd(s)?;
            (r.left_vectors, r.singular_values)
        }
        PodMethod::Randomized { seed } => {
            let r = randomized_svd(s, (2 * n).min(pmax), seed)?;
            (r.left_vectors, r.singular_values)
        }
    };
    let eps = (1.0 - ric(&sigma, total, n)).max(0.0).sqrt();
    Ok(ReducedBasis {
        v: u.leading_cols(n),
        singular_values: sigma,
        ric_tolerance: eps,
        total_energy: total,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::test_util::random_matrix;
    use proptest::prelude::*;

    #[test]
    fn lhs_one_dimensional_strata() {
        let space = ParameterSpace::new(vec![[0.0, 1.0]]).unwrap();
        let pts = lhs_sample(&space, 4, 3);
        let mut strata: Vec<usize> = pts.iter().map(|p| (p[0] * 4.0).floor() as usize).collect();
        strata.sort();
        assert_eq!(strata, vec![0, 1, 2, 3]);
        assert_eq!(pts, lhs_sample(&space, 4, 3));
    }

    #[test]
    fn lhs_test_case_box() {
        let space = ParameterSpace::new(vec![[0.5e4, 1.5e4], [2.5e4, 7.5e4], [2.0, 6.0]]).unwrap();
        let n = 50;
        let pts = lhs_sample(&space, n, 42);
        assert!(pts.iter().all(|p| space.contains(p)));
        for (c, b) in space.bounds.iter().enumerate() {
            let mut hit = vec![0; n];
            for p in &pts {
                let s = ((p[c] - b[0]) / (b[1] - b[0]) * n as f64).floor() as usize;
                hit[s.min(n - 1)] += 1;
            }
            assert!(hit.iter().all(|&h| h == 1));
        }
    }

    #[test]
    fn single_column_basis() {
        let s = DenseMatrix::from_columns(3, &[vec![3.0, 0.0, 4.0]]).unwrap();
        for method in [PodMethod::Deterministic, PodMethod::Randomized { seed: 1 }] {
            let b = pod(&s, 0.5, method).unwrap();
            assert_eq!(b.dim(), 1);
            let v = b.v.col(0);
            let sign = v[0].signum();
            assert!((sign * v[0] - 0.6).abs() < 1e-14 && (sign * v[2] - 0.8).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_from_singular_values() {
        let sigma = [10.0, 1.0, 0.01];
        let total: f64 = sigma.iter().map(|s| s * s).sum();
        assert_eq!(select_dimension(&sigma, total, 0.1), 1);
        assert_eq!(select_dimension(&sigma, total, 0.05), 2);
        assert_eq!(select_dimension_full(&sigma, 0.1), 1);
        assert_eq!(select_dimension_full(&sigma, 0.05), 2);
        assert_eq!(select_dimension_full(&[1.0, 1e-12], 1e-8), 1);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(matches!(pod(&DenseMatrix::zeros(3, 2), 0.1, PodMethod::Deterministic), Err(PodError::AllZero)));
        assert!(matches!(pod(&DenseMatrix::zeros(3, 0), 0.1, PodMethod::Deterministic), Err(PodError::Empty)));
        assert!(pod(&DenseMatrix::identity(2), 0.0, PodMethod::Deterministic).is_err());
    }

    #[test]
    fn snapshot_push_checks_shape() {
        let mut s = SnapshotMatrix::new(3, 2);
        let meta = SnapshotMeta { mu: vec![1.0, 2.0], n: 1, k: 0 };
        s.push(&[1.0, 2.0, 3.0], meta.clone()).unwrap();
        assert!(s.push(&[1.0], meta).is_err());
        assert!(s.push(&[1.0, 2.0, 3.0], SnapshotMeta { mu: vec![1.0], n: 1, k: 0 }).is_err());
        assert_eq!(s.cols(), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn pod_invariants(rows in 4usize..20, cols in 2usize..12, seed in 0u64..1000, e in 1usize..4) {
            let eps = 10f64.powi(-(e as i32));
            // graded columns give a decaying spectrum
            let mut s = random_matrix(rows, cols, seed);
            for j in 0..cols {
                let f = 0.3f64.powi(j as i32);
                s.col_mut(j).iter_mut().for_each(|v| *v *= f);
            }
            let b = pod(&s, eps, PodMethod::Deterministic).unwrap();
            let n = b.dim();
            prop_assert!(b.v.orthonormality_defect() < 1e-10);
            let target = 1.0 - eps * eps;
            prop_assert!(b.ric(n) >= target - 1e-12);
            if n > 1 {
                prop_assert!(b.ric(n - 1) < target);
            }
            let proj = b.v.matmul(&b.v.tr_matmul(&s));
            let err2 = s.sub(&proj).frobenius_norm().powi(2);
            let tail: f64 = b.singular_values[n..].iter().map(|x| x * x).sum();
            prop_assert!((err2 - tail).abs() <= 1e-8 * b.total_energy);
        }

        #[test]
        fn dimension_monotone_in_tolerance(seed in 0u64..500) {
            let mut s = random_matrix(15, 10, seed);
            for j in 0..10 {
                let f = 0.2f64.powi(j as i32);
                s.col_mut(j).iter_mut().for_each(|v| *v *= f);
            }
            let dims: Vec<usize> = [1e-1, 1e-2, 1e-3, 1e-4]
                .iter()
                .map(|&e| pod(&s, e, PodMethod::Randomized { seed }).unwrap().dim())
                .collect();
            prop_assert!(dims.windows(2).all(|w| w[0] <= w[1]));
        }
    }
}
