//! POD-Galerkin reduced model and collection of reduced-operator snapshots.

use std::time::Instant;

use crate::fom::{FomProblem, StepCoefficients};
use crate::linalg::{DenseMatrix, LuFactor};
use crate::newton::{newton_solve, NewtonSettings, NonlinearSystem, SolveError};
use crate::pod::{PodError, ReducedBasis, SnapshotMatrix, SnapshotMeta};

/// Online wall time split as construction of the reduced system, its
/// solution, and everything else.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Timing {
    pub construction: f64,
    pub solution: f64,
    pub total: f64,
}

impl Timing {
    pub fn other(&self) -> f64 {
        (self.total - self.construction - self.solution).max(0.0)
    }

    pub fn accumulate(&mut self, o: &Timing) {
        self.construction += o.construction;
        self.solution += o.solution;
        self.total += o.total;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RomState {
    pub un_now: Vec<f64>,
    pub un_prev: Vec<f64>,
    pub un_prev2: Vec<f64>,
    pub time_index: usize,
}

impl RomState {
    pub fn zero(n: usize) -> Self {
        Self {
            un_now: vec![0.0; n],
            un_prev: vec![0.0; n],
            un_prev2: vec![0.0; n],
            time_index: 0,
        }
    }

    pub fn advance(&mut self) {
        std::mem::swap(&mut self.un_prev2, &mut self.un_prev);
        self.un_prev.copy_from_slice(&self.un_now);
        self.time_index += 1;
    }
}

/// A reduced trajectory `u_N^n`, `n = 1..=Nt`.
#[derive(Clone, Debug)]
pub struct ReducedTrajectory {
    pub mu: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub timing: Timing,
}

impl ReducedTrajectory {
    pub fn lift(&self, v: &DenseMatrix) -> Vec<Vec<f64>> {
        self.states.iter().map(|s| v.mul_vec(s)).collect()
    }

    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

/// Reduced residual `Vᵀ R(V u_N)` at the lifted state, together with the
/// full-order residual it was projected from.
pub fn reduced_residual_full(
    problem: &FomProblem,
    v: &DenseMatrix,
    coeff: &StepCoefficients,
    un: &[f64],
    un1: &[f64],
    un2: &[f64],
) -> Result<(Vec<f64>, Vec<f64>), SolveError> {
    let r = problem.residual(coeff, &v.mul_vec(un), &v.mul_vec(un1), &v.mul_vec(un2))?;
    Ok((v.tr_mul_vec(&r), r))
}

pub fn reduced_residual(
    problem: &FomProblem,
    v: &DenseMatrix,
    coeff: &StepCoefficients,
    un: &[f64],
    un1: &[f64],
    un2: &[f64],
) -> Result<Vec<f64>, SolveError> {
    Ok(reduced_residual_full(problem, v, coeff, un, un1, un2)?.0)
}

/// `(Vᵀ R, Vᵀ J V, R)` at the lifted state.
pub fn reduced_residual_jacobian(
    problem: &FomProblem,
    v: &DenseMatrix,
    coeff: &StepCoefficients,
    un: &[f64],
    un1: &[f64],
    un2: &[f64],
) -> Result<(Vec<f64>, DenseMatrix, Vec<f64>), SolveError> {
    let (r, j) = problem.residual_jacobian(coeff, &v.mul_vec(un), &v.mul_vec(un1), &v.mul_vec(un2))?;
    let jv = j.mul_dense(v);
    Ok((v.tr_mul_vec(&r), v.tr_matmul(&jv), r))
}

/// Column-major stacking of a matrix.
pub fn vec_matrix(m: &DenseMatrix) -> Vec<f64> {
    m.as_slice().to_vec()
}

pub fn unvec_matrix(v: &[f64]) -> Option<DenseMatrix> {
    let n = (v.len() as f64).sqrt().round() as usize;
    if n * n != v.len() {
        return None;
    }
    DenseMatrix::from_col_major(n, n, v.to_vec()).ok()
}

/// Reduced residual/Jacobian snapshots with their `(μ, tⁿ, k)` inputs.
#[derive(Clone, Debug)]
pub struct OperatorSnapshotSet {
    pub residuals: SnapshotMatrix,
    pub jacobians: SnapshotMatrix,
    /// Rows `μ₁..μ_P, t, k`.
    pub inputs: DenseMatrix,
}

impl OperatorSnapshotSet {
    pub fn new(n: usize, param_dim: usize) -> Self {
        Self {
            residuals: SnapshotMatrix::new(n, param_dim),
            jacobians: SnapshotMatrix::new(n * n, param_dim),
            inputs: DenseMatrix::zeros(param_dim + 2, 0),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn reduced_dim(&self) -> usize {
        self.residuals.rows()
    }

    pub fn param_dim(&self) -> usize {
        self.residuals.param_dim
    }

    pub fn push(&mut self, mu: &[f64], n: usize, t: f64, k: usize, rn: &[f64], jn: &DenseMatrix) -> Result<(), PodError> {
        let meta = SnapshotMeta {
            mu: mu.to_vec(),
            n: n as u32,
            k: k as u32,
        };
        self.residuals.push(rn, meta.clone())?;
        self.jacobians.push(&vec_matrix(jn), meta)?;
        let mut input = mu.to_vec();
        input.push(t);
        input.push(k as f64);
        self.inputs
            .push_column(&input)
            .map_err(|_| PodError::ParamMismatch { got: mu.len(), want: self.param_dim() })
    }

    pub fn extend(&mut self, other: &OperatorSnapshotSet) -> Result<(), PodError> {
        self.residuals.extend(&other.residuals)?;
        self.jacobians.extend(&other.jacobians)?;
        for j in 0..other.len() {
            self.inputs
                .push_column(other.inputs.col(j))
                .map_err(|_| PodError::ParamMismatch { got: other.param_dim(), want: self.param_dim() })?;
        }
        Ok(())
    }

    pub fn max_k(&self) -> usize {
        let p = self.param_dim();
        (0..self.len()).map(|j| self.inputs.col(j)[p + 1] as usize).max().unwrap_or(0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CollectOptions {
    pub operators: bool,
    /// Full-order residuals at every iterate, for the DEIM basis.
    pub full_residuals: bool,
}

#[derive(Clone, Debug)]
pub struct RomCollection {
    pub operators: OperatorSnapshotSet,
    pub full_residuals: SnapshotMatrix,
}

struct RomStepSystem<'a> {
    problem: &'a FomProblem,
    v: &'a DenseMatrix,
    coeff: StepCoefficients,
    mu: &'a [f64],
    n: usize,
    u1: Vec<f64>,
    u2: Vec<f64>,
    timing: &'a mut Timing,
    collect: CollectOptions,
    out: Option<&'a mut RomCollection>,
    pending: Vec<(Vec<f64>, Vec<f64>)>,
}

impl NonlinearSystem for RomStepSystem<'_> {
    type Jacobian = DenseMatrix;

    fn evaluate(&mut self, un: &[f64], with_jacobian: bool) -> Result<(Vec<f64>, Option<DenseMatrix>), SolveError> {
        let start = Instant::now();
        let u = self.v.mul_vec(un);
        let res = if with_jacobian {
            let (r, j) = self.problem.residual_jacobian(&self.coeff, &u, &self.u1, &self.u2)?;
            let jv = j.mul_dense(self.v);
            (self.v.tr_mul_vec(&r), Some(self.v.tr_matmul(&jv)), r)
        } else {
            let r = self.problem.residual(&self.coeff, &u, &self.u1, &self.u2)?;
            (self.v.tr_mul_vec(&r), None, r)
        };
        self.timing.construction += start.elapsed().as_secs_f64();
        if self.collect.full_residuals {
            self.pending.push((un.to_vec(), res.2));
        }
        Ok((res.0, res.1))
    }

    fn solve(&mut self, jac: DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        let start = Instant::now();
        let x = LuFactor::new(&jac)?.solve(rhs);
        self.timing.solution += start.elapsed().as_secs_f64();
        Ok(x)
    }

    fn observe(&mut self, k: usize, un: &[f64], r: &[f64], jac: &DenseMatrix) {
        let Some(out) = self.out.as_mut() else { return };
        let t = self.problem.time.time(self.n);
        if self.collect.operators {
            out.operators
                .push(self.mu, self.n, t, k, r, jac)
                .expect("snapshot dimensions fixed at construction");
        }
        if self.collect.full_residuals {
            let full = self
                .pending
                .iter()
                .rev()
                .find(|(u, _)| u.as_slice() == un)
                .map(|(_, r)| r.clone())
                .expect("observed iterate was evaluated");
            let meta = SnapshotMeta {
                mu: self.mu.to_vec(),
                n: self.n as u32,
                k: k as u32,
            };
            out.full_residuals.push(&full, meta).expect("snapshot dimensions fixed at construction");
            self.pending.clear();
        }
    }
}

/// Advances the reduced state by one step.
#[allow(clippy::too_many_arguments)]
pub fn rom_step(
    problem: &FomProblem,
    basis: &ReducedBasis,
    mu: &[f64],
    settings: &NewtonSettings,
    state: &mut RomState,
    timing: &mut Timing,
    collect: CollectOptions,
    out: Option<&mut RomCollection>,
) -> Result<usize, SolveError> {
    let n = state.time_index + 1;
    let v = &basis.v;
    let mut sys = RomStepSystem {
        problem,
        v,
        coeff: problem.coefficients(mu, n),
        mu,
        n,
        u1: v.mul_vec(&state.un_prev),
        u2: v.mul_vec(&state.un_prev2),
        timing,
        collect,
        out,
        pending: Vec::new(),
    };
    let guess = state.un_prev.clone();
    let outcome = newton_solve(settings, &mut sys, &guess).map_err(|e| e.at_step(n))?;
    state.un_now = outcome.solution;
    state.advance();
    Ok(outcome.iterations)
}

/// Reduced trajectory from zero initial data, optionally collecting
/// operator snapshots at every Newton iterate.
pub fn run_rom(
    problem: &FomProblem,
    basis: &ReducedBasis,
    mu: &[f64],
    settings: &NewtonSettings,
    collect: CollectOptions,
) -> Result<(ReducedTrajectory, Option<RomCollection>), SolveError> {
    problem
        .check_param(mu)
        .map_err(|e| SolveError::BadSettings(e.to_string()))?;
    if basis.full_dim() != problem.dof_count() {
        return Err(SolveError::BadSettings(format!(
            "basis has {} rows, problem has {} dofs",
            basis.full_dim(),
            problem.dof_count()
        )));
    }
    let start = Instant::now();
    let nb = basis.dim();
    let p = problem.model.param_dim();
    let mut coll = (collect.operators || collect.full_residuals).then(|| RomCollection {
        operators: OperatorSnapshotSet::new(nb, p),
        full_residuals: SnapshotMatrix::new(problem.dof_count(), p),
    });
    let mut state = RomState::zero(nb);
    let mut timing = Timing::default();
    let mut states = Vec::with_capacity(problem.time.nt);
    let mut iterations = Vec::with_capacity(problem.time.nt);
    for _ in 0..problem.time.nt {
        let it = rom_step(problem, basis, mu, settings, &mut state, &mut timing, collect, coll.as_mut())?;
        iterations.push(it);
        states.push(state.un_prev.clone());
    }
    timing.total = start.elapsed().as_secs_f64();
    Ok((
        ReducedTrajectory {
            mu: mu.to_vec(),
            states,
            iterations,
            timing,
        },
        coll,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vec_is_column_stacking() {
        let m = DenseMatrix::from_rows(&[&[1.0, 3.0], &[2.0, 4.0]]);
        assert_eq!(vec_matrix(&m), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(vec_matrix(&DenseMatrix::identity(3)), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(unvec_matrix(&[1.0, 2.0, 3.0, 4.0]).unwrap(), m);
        assert!(unvec_matrix(&[1.0, 2.0, 3.0]).is_none());
    }

    #[test]
    fn operator_set_bookkeeping() {
        let mut s = OperatorSnapshotSet::new(2, 3);
        let j = DenseMatrix::identity(2);
        s.push(&[1.0, 2.0, 3.0], 4, 0.02, 1, &[0.5, 0.5], &j).unwrap();
        s.push(&[1.0, 2.0, 3.0], 4, 0.02, 3, &[0.1, 0.5], &j).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.inputs.col(0), &[1.0, 2.0, 3.0, 0.02, 1.0]);
        assert_eq!(s.max_k(), 3);
        assert_eq!(s.jacobians.rows(), 4);
    }

    #[test]
    fn timing_other_part() {
        let t = Timing {
            construction: 1.0,
            solution: 0.5,
            total: 2.0,
        };
        assert_eq!(t.other(), 0.5);
    }
}
