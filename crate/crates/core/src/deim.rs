//! DEIM hyper-reduction of the reduced residual and Jacobian.

use std::time::Instant;

use log::debug;
use thiserror::Error;

use crate::fom::assembly::{element_loop, NE};
use crate::fom::{FomProblem, StepCoefficients};
use crate::linalg::{condition_number, DenseMatrix, LinalgError, LuFactor};
use crate::mesh::{extract_reduced_mesh, Mesh, MeshError, ReducedMesh};
use crate::newton::{newton_solve, NewtonSettings, NonlinearSystem, SolveError};
use crate::pod::{pod, PodError, PodMethod, ReducedBasis};
use crate::rom::{ReducedTrajectory, RomState, Timing};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeimError {
    #[error("interpolation block singular at column {0}")]
    Singular(usize),
    #[error("empty collateral basis")]
    Empty,
    #[error("residual basis has {got} rows, reduced basis {want}")]
    Dimension { got: usize, want: usize },
    #[error(transparent)]
    Pod(#[from] PodError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

fn argmax_abs(v: &[f64]) -> (usize, f64) {
    // strict comparison keeps the lowest index on ties
    let mut best = (0, -1.0);
    for (i, x) in v.iter().enumerate() {
        if x.abs() > best.1 {
            best = (i, x.abs());
        }
    }
    best
}

/// Greedy DEIM interpolation indices of the columns of `phi`.
pub fn deim_points(phi: &DenseMatrix) -> Result<Vec<usize>, DeimError> {
    let m = phi.cols();
    if m == 0 || phi.rows() == 0 {
        return Err(DeimError::Empty);
    }
    let scale = phi.max_abs();
    let (first, top) = argmax_abs(phi.col(0));
    if top <= f64::EPSILON * scale {
        return Err(DeimError::Singular(0));
    }
    let mut idx = vec![first];
    for j in 1..m {
        let block = DenseMatrix::from_fn(j, j, |a, b| phi.col(b)[idx[a]]);
        let rhs: Vec<f64> = idx.iter().map(|&i| phi.col(j)[i]).collect();
        let c = LuFactor::new(&block).map_err(|_| DeimError::Singular(j))?.solve(&rhs);
        let mut r = phi.col(j).to_vec();
        for (b, cb) in c.iter().enumerate() {
            for (ri, p) in r.iter_mut().zip(phi.col(b)) {
                *ri -= cb * p;
            }
        }
        let (i, v) = argmax_abs(&r);
        if v <= 1e3 * f64::EPSILON * scale || idx.contains(&i) {
            return Err(DeimError::Singular(j));
        }
        idx.push(i);
    }
    Ok(idx)
}

#[derive(Clone)]
pub struct DeimOperator {
    pub phi: DenseMatrix,
    pub magic_rows: Vec<usize>,
    /// `Vᵀ Φ (Pᵀ Φ)⁻¹`, `N × m`.
    pub left_factor: DenseMatrix,
    pub reduced_mesh: ReducedMesh,
    pub interpolation: LuFactor,
    pub condition: f64,
    /// Rows of `V` for the active dofs, row-major `active × N`.
    v_rows: Vec<f64>,
    /// Global dof to position in `active_dofs`, or `usize::MAX`.
    active_slot: Vec<usize>,
    /// Global dof to magic-row position, or `usize::MAX`.
    magic_slot: Vec<usize>,
    dirichlet_mask: Vec<bool>,
    n: usize,
}

impl std::fmt::Debug for DeimOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DeimOperator")
            .field("m", &self.magic_rows.len())
            .field("n", &self.n)
            .field("elements", &self.reduced_mesh.element_subset.len())
            .field("condition", &self.condition)
            .finish()
    }
}

impl DeimOperator {
    /// Operator from a given collateral basis `phi` (columns orthonormal or
    /// at least independent).
    pub fn from_basis(phi: DenseMatrix, basis: &ReducedBasis, mesh: &Mesh) -> Result<Self, DeimError> {
        if phi.rows() != basis.full_dim() {
            return Err(DeimError::Dimension {
                got: phi.rows(),
                want: basis.full_dim(),
            });
        }
        let magic_rows = deim_points(&phi)?;
        let m = magic_rows.len();
        let pt_phi = phi.select_rows(&magic_rows);
        let interpolation = LuFactor::new(&pt_phi)?;
        let condition = condition_number(&pt_phi)?;
        debug!("DEIM m = {m}, cond(PᵀΦ) = {condition:.3e}");
        // left_factorᵀ = (PᵀΦ)⁻ᵀ (VᵀΦ)ᵀ
        let vt_phi = basis.v.tr_matmul(&phi);
        let lu_t = LuFactor::new(&pt_phi.transpose())?;
        let nb = basis.dim();
        let mut left_t = DenseMatrix::zeros(m, nb);
        for i in 0..nb {
            let x = lu_t.solve(&vt_phi.row(i));
            left_t.col_mut(i).copy_from_slice(&x);
        }
        let reduced_mesh = extract_reduced_mesh(mesh, &magic_rows)?;
        let ndof = basis.full_dim();
        let mut active_slot = vec![usize::MAX; ndof];
        let mut v_rows = Vec::with_capacity(reduced_mesh.active_dofs.len() * nb);
        for (s, &d) in reduced_mesh.active_dofs.iter().enumerate() {
            active_slot[d] = s;
            v_rows.extend((0..nb).map(|j| basis.v.col(j)[d]));
        }
        let mut magic_slot = vec![usize::MAX; ndof];
        for (i, &d) in magic_rows.iter().enumerate() {
            magic_slot[d] = i;
        }
        let mut dirichlet_mask = vec![false; ndof];
        for d in mesh.dirichlet_dofs() {
            dirichlet_mask[d] = true;
        }
        Ok(Self {
            phi,
            magic_rows,
            left_factor: left_t.transpose(),
            reduced_mesh,
            interpolation,
            condition,
            v_rows,
            active_slot,
            magic_slot,
            dirichlet_mask,
            n: nb,
        })
    }

    pub fn m(&self) -> usize {
        self.magic_rows.len()
    }

    pub fn reduced_dim(&self) -> usize {
        self.n
    }

    /// DEIM approximation `Φ (PᵀΦ)⁻¹ Pᵀ r` of a full-order vector.
    pub fn approximate(&self, r: &[f64]) -> Vec<f64> {
        let pr: Vec<f64> = self.magic_rows.iter().map(|&i| r[i]).collect();
        self.phi.mul_vec(&self.interpolation.solve(&pr))
    }

    /// Lifts `V u_N` onto the active dofs of `out` (other entries untouched).
    fn lift_active(&self, un: &[f64], out: &mut [f64]) {
        for (s, &d) in self.reduced_mesh.active_dofs.iter().enumerate() {
            let row = &self.v_rows[s * self.n..(s + 1) * self.n];
            out[d] = row.iter().zip(un).map(|(a, b)| a * b).sum();
        }
    }

    /// Magic rows of the residual (and of `J V`) assembled on the reduced
    /// mesh only. `u`, `u1`, `u2` need valid entries on the active dofs.
    pub fn sampled_rows(
        &self,
        problem: &FomProblem,
        coeff: &StepCoefficients,
        u: &[f64],
        u1: &[f64],
        u2: &[f64],
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<DenseMatrix>), SolveError> {
        let m = self.m();
        let nb = self.n;
        let mut pr = vec![0.0; m];
        // row-major m x N
        let mut pjv = with_jacobian.then(|| vec![0.0; m * nb]);
        element_loop(
            &problem.mesh,
            &problem.geometry,
            &self.reduced_mesh.element_subset,
            coeff,
            u,
            u1,
            u2,
            with_jacobian,
            |_, dofs, out| {
                for p in 0..NE {
                    let i = self.magic_slot[dofs[p]];
                    if i == usize::MAX || self.dirichlet_mask[dofs[p]] {
                        continue;
                    }
                    pr[i] += out.r[p];
                    if let (Some(acc), Some(k)) = (pjv.as_mut(), out.k.as_deref()) {
                        let row = &mut acc[i * nb..(i + 1) * nb];
                        for q in 0..NE {
                            let kv = k[p * NE + q];
                            if kv == 0.0 || self.dirichlet_mask[dofs[q]] {
                                continue;
                            }
                            let s = self.active_slot[dofs[q]];
                            let vrow = &self.v_rows[s * nb..(s + 1) * nb];
                            for (a, v) in row.iter_mut().zip(vrow) {
                                *a += kv * v;
                            }
                        }
                    }
                }
            },
        )?;
        let pjv = pjv.map(|acc| DenseMatrix::from_fn(m, nb, |i, j| acc[i * nb + j]));
        Ok((pr, pjv))
    }

    /// `(R_{N,m}, J_{N,m})` from the sampled rows.
    pub fn project(&self, pr: &[f64], pjv: Option<&DenseMatrix>) -> (Vec<f64>, Option<DenseMatrix>) {
        (self.left_factor.mul_vec(pr), pjv.map(|j| self.left_factor.matmul(j)))
    }

    /// Hyper-reduced residual and (optionally) Jacobian at reduced state.
    pub fn hyper_evaluate(
        &self,
        problem: &FomProblem,
        coeff: &StepCoefficients,
        state: &RomState,
        with_jacobian: bool,
    ) -> Result<(Vec<f64>, Option<DenseMatrix>), SolveError> {
        let ndof = problem.dof_count();
        let mut u = vec![0.0; ndof];
        let mut u1 = vec![0.0; ndof];
        let mut u2 = vec![0.0; ndof];
        self.lift_active(&state.un_now, &mut u);
        self.lift_active(&state.un_prev, &mut u1);
        self.lift_active(&state.un_prev2, &mut u2);
        let (pr, pjv) = self.sampled_rows(problem, coeff, &u, &u1, &u2, with_jacobian)?;
        Ok(self.project(&pr, pjv.as_ref()))
    }
}

/// POD of residual snapshots at `eps_deim`, magic points and reduced mesh.
pub fn build_deim_operator(
    residual_snapshots: &DenseMatrix,
    eps_deim: f64,
    basis: &ReducedBasis,
    mesh: &Mesh,
    method: PodMethod,
) -> Result<DeimOperator, DeimError> {
    let phi = pod(residual_snapshots, eps_deim, method)?.v;
    DeimOperator::from_basis(phi, basis, mesh)
}

struct DeimStepSystem<'a> {
    problem: &'a FomProblem,
    op: &'a DeimOperator,
    coeff: StepCoefficients,
    u: Vec<f64>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    timing: &'a mut Timing,
}

impl NonlinearSystem for DeimStepSystem<'_> {
    type Jacobian = DenseMatrix;

    fn evaluate(&mut self, un: &[f64], with_jacobian: bool) -> Result<(Vec<f64>, Option<DenseMatrix>), SolveError> {
        let start = Instant::now();
        self.op.lift_active(un, &mut self.u);
        let (pr, pjv) = self
            .op
            .sampled_rows(self.problem, &self.coeff, &self.u, &self.u1, &self.u2, with_jacobian)?;
        let out = self.op.project(&pr, pjv.as_ref());
        self.timing.construction += start.elapsed().as_secs_f64();
        Ok(out)
    }

    fn solve(&mut self, jac: DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        let start = Instant::now();
        let x = LuFactor::new(&jac)?.solve(rhs);
        self.timing.solution += start.elapsed().as_secs_f64();
        Ok(x)
    }
}

/// Hyper-reduced trajectory from zero initial data.
pub fn run_deim_rom(
    problem: &FomProblem,
    op: &DeimOperator,
    mu: &[f64],
    settings: &NewtonSettings,
) -> Result<ReducedTrajectory, SolveError> {
    problem
        .check_param(mu)
        .map_err(|e| SolveError::BadSettings(e.to_string()))?;
    let start = Instant::now();
    let ndof = problem.dof_count();
    let nb = op.reduced_dim();
    let mut timing = Timing::default();
    let mut state = RomState::zero(nb);
    let mut states = Vec::with_capacity(problem.time.nt);
    let mut iterations = Vec::with_capacity(problem.time.nt);
    // scratch buffers: only active entries are ever written or read
    let mut u = vec![0.0; ndof];
    let mut u1 = vec![0.0; ndof];
    let mut u2 = vec![0.0; ndof];
    for _ in 0..problem.time.nt {
        let n = state.time_index + 1;
        op.lift_active(&state.un_prev, &mut u1);
        op.lift_active(&state.un_prev2, &mut u2);
        let mut sys = DeimStepSystem {
            problem,
            op,
            coeff: problem.coefficients(mu, n),
            u: std::mem::take(&mut u),
            u1: std::mem::take(&mut u1),
            u2: std::mem::take(&mut u2),
            timing: &mut timing,
        };
        let guess = state.un_prev.clone();
        let result = newton_solve(settings, &mut sys, &guess);
        u = std::mem::take(&mut sys.u);
        u1 = std::mem::take(&mut sys.u1);
        u2 = std::mem::take(&mut sys.u2);
        let outcome = result.map_err(|e| e.at_step(n))?;
        state.un_now = outcome.solution;
        state.advance();
        iterations.push(outcome.iterations);
        states.push(state.un_prev.clone());
    }
    timing.total = start.elapsed().as_secs_f64();
    Ok(ReducedTrajectory {
        mu: mu.to_vec(),
        states,
        iterations,
        timing,
    })
}
