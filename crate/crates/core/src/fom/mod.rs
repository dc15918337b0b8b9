//! Full-order model: implicit time stepping of the assembled nonlinear
//! elastodynamics residual with Newton's method.

pub mod assembly;

use std::time::Instant;

use thiserror::Error;

use crate::linalg::{BandLu, BandMatrix};
use crate::materials::{GuccioneParams, Material, NeoHookeanParams};
use crate::mesh::Mesh;
use crate::newton::{newton_solve, NewtonSettings, NonlinearSystem, SolveError};

pub use assembly::{assembly_calls, Geometry, StepCoefficients};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SetupError {
    #[error("invalid time grid: T = {t_final}, dt = {dt}")]
    TimeGrid { t_final: f64, dt: f64 },
    #[error("parameter vector has length {got}, model expects {want}")]
    ParamLength { got: usize, want: usize },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub dt: f64,
    pub nt: usize,
}

impl TimeGrid {
    /// Requires `T / dt` to be an integer up to rounding.
    pub fn new(t_final: f64, dt: f64) -> Result<Self, SetupError> {
        let err = SetupError::TimeGrid { t_final, dt };
        if !(dt > 0.0) || !(t_final > 0.0) {
            return Err(err);
        }
        let ratio = t_final / dt;
        let nt = ratio.round();
        if nt < 1.0 || (ratio - nt).abs() > 1e-9 * ratio {
            return Err(err);
        }
        Ok(Self { t_final, dt, nt: nt as usize })
    }

    #[inline]
    pub fn time(&self, n: usize) -> f64 {
        n as f64 * self.dt
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LoadKind {
    Linear,
    Hat,
    Step,
}

impl LoadKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "linear" | "ramp" => Some(Self::Linear),
            "hat" | "triangle" | "triangular" => Some(Self::Hat),
            "step" => Some(Self::Step),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Linear => "linear",
            Self::Hat => "hat",
            Self::Step => "step",
        }
    }

    /// Load shape in `[0, 1]` at time `t` of `[0, T]`.
    pub fn shape(&self, t: f64, t_final: f64) -> f64 {
        match self {
            Self::Linear => t / t_final,
            Self::Hat => {
                if t <= 0.0 {
                    0.0
                } else if t <= 0.5 * t_final + 1e-12 * t_final {
                    2.0 * t / t_final
                } else {
                    2.0 * (t_final - t) / t_final
                }
            }
            Self::Step => {
                if t > 0.0 && t <= t_final / 3.0 + 1e-12 * t_final {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LoadProgram {
    pub kind: LoadKind,
    pub amplitude: f64,
}

impl LoadProgram {
    pub fn value(&self, t: f64, t_final: f64) -> f64 {
        self.amplitude * self.kind.shape(t, t_final)
    }
}

/// How a parameter vector `μ` maps onto material and load.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelSpec {
    /// `μ = (G, K, p̃)`.
    NeoHookean,
    /// `μ = (T̃a, p̃)` with `Ta(t) = T̃a t / T`.
    Guccione(GuccioneParams),
}

impl ModelSpec {
    pub fn param_dim(&self) -> usize {
        match self {
            Self::NeoHookean => 3,
            Self::Guccione(_) => 2,
        }
    }

    pub fn param_names(&self) -> &'static [&'static str] {
        match self {
            Self::NeoHookean => &["G", "K", "p"],
            Self::Guccione(_) => &["Ta", "p"],
        }
    }

    pub fn material(&self, mu: &[f64], t: f64, t_final: f64) -> Material {
        match self {
            Self::NeoHookean => Material::NeoHookean(NeoHookeanParams { g: mu[0], k: mu[1] }),
            Self::Guccione(p) => Material::Guccione {
                params: *p,
                ta: mu[0] * t / t_final,
            },
        }
    }

    pub fn amplitude(&self, mu: &[f64]) -> f64 {
        *mu.last().expect("non-empty parameter")
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dynamics {
    pub rho0: f64,
    pub alpha: f64,
    pub beta: f64,
    pub quasi_static: bool,
}

impl Default for Dynamics {
    fn default() -> Self {
        Self {
            rho0: 1e3,
            alpha: 0.0,
            beta: 0.0,
            quasi_static: false,
        }
    }
}

impl Dynamics {
    pub fn effective_rho(&self) -> f64 {
        if self.quasi_static {
            0.0
        } else {
            self.rho0
        }
    }
}

/// Mesh, model and discretization: everything but the parameter value.
#[derive(Clone, Debug)]
pub struct FomProblem {
    pub mesh: Mesh,
    pub geometry: Geometry,
    pub model: ModelSpec,
    pub load: LoadKind,
    pub time: TimeGrid,
    pub dynamics: Dynamics,
    pub dirichlet: Vec<usize>,
    pub bandwidth: usize,
}

impl FomProblem {
    pub fn new(mesh: Mesh, model: ModelSpec, load: LoadKind, time: TimeGrid, dynamics: Dynamics) -> Self {
        let geometry = Geometry::new(&mesh);
        let dirichlet = mesh.dirichlet_dofs();
        let bandwidth = mesh.dof_bandwidth();
        Self {
            mesh,
            geometry,
            model,
            load,
            time,
            dynamics,
            dirichlet,
            bandwidth,
        }
    }

    pub fn dof_count(&self) -> usize {
        self.mesh.dof_count()
    }

    pub fn check_param(&self, mu: &[f64]) -> Result<(), SetupError> {
        let want = self.model.param_dim();
        if mu.len() != want {
            return Err(SetupError::ParamLength { got: mu.len(), want });
        }
        if mu.iter().any(|v| !v.is_finite()) {
            return Err(SetupError::BadParameter(format!("{mu:?}")));
        }
        self.model
            .material(mu, 0.0, self.time.t_final)
            .validate()
            .map_err(|e| SetupError::BadParameter(e.to_string()))
    }

    /// Coefficients of the residual at step `n` (time `n Δt`).
    pub fn coefficients(&self, mu: &[f64], n: usize) -> StepCoefficients {
        let t = self.time.time(n);
        let dt = self.time.dt;
        let load = LoadProgram {
            kind: self.load,
            amplitude: self.model.amplitude(mu),
        };
        StepCoefficients {
            material: self.model.material(mu, t, self.time.t_final),
            pressure: load.value(t, self.time.t_final),
            mass_coeff: self.dynamics.effective_rho() / (dt * dt),
            alpha: self.dynamics.alpha,
            beta_dt: self.dynamics.beta / dt,
        }
    }

    pub fn residual(
        &self,
        coeff: &StepCoefficients,
        u: &[f64],
        u1: &[f64],
        u2: &[f64],
    ) -> Result<Vec<f64>, SolveError> {
        let (r, _) = assembly::assemble(
            &self.mesh,
            &self.geometry,
            &self.dirichlet,
            self.bandwidth,
            coeff,
            u,
            u1,
            u2,
            false,
        )?;
        Ok(r)
    }

    pub fn residual_jacobian(
        &self,
        coeff: &StepCoefficients,
        u: &[f64],
        u1: &[f64],
        u2: &[f64],
    ) -> Result<(Vec<f64>, BandMatrix), SolveError> {
        let (r, j) = assembly::assemble(
            &self.mesh,
            &self.geometry,
            &self.dirichlet,
            self.bandwidth,
            coeff,
            u,
            u1,
            u2,
            true,
        )?;
        Ok((r, j.expect("jacobian requested")))
    }

    /// Consistent mass matrix with Dirichlet rows/columns untouched.
    pub fn mass_matrix(&self) -> BandMatrix {
        let n = self.dof_count();
        let mut m = BandMatrix::zeros(n, self.bandwidth, self.bandwidth);
        for e in 0..self.mesh.element_count() {
            let dofs = self.mesh.element_dofs(e);
            let me = self.geometry.element_mass(e);
            for a in 0..8 {
                for b in 0..8 {
                    for i in 0..3 {
                        m.add(dofs[3 * a + i], dofs[3 * b + i], me[a][b]);
                    }
                }
            }
        }
        m
    }
}

#[derive(Clone, Debug)]
pub struct FomState {
    pub u_now: Vec<f64>,
    pub u_prev: Vec<f64>,
    pub u_prev2: Vec<f64>,
    pub time_index: usize,
}

impl FomState {
    pub fn zero(n: usize) -> Self {
        Self {
            u_now: vec![0.0; n],
            u_prev: vec![0.0; n],
            u_prev2: vec![0.0; n],
            time_index: 0,
        }
    }

    /// Shift history after accepting `u_now` for the current step.
    pub fn advance(&mut self) {
        std::mem::swap(&mut self.u_prev2, &mut self.u_prev);
        self.u_prev.copy_from_slice(&self.u_now);
        self.time_index += 1;
    }
}

/// One Newton iterate tagged with its step `n` and iteration `k`.
#[derive(Clone, Debug)]
pub struct IterateRecord {
    pub n: usize,
    pub k: usize,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct FomTrajectory {
    pub mu: Vec<f64>,
    /// `u_h^n` for `n = 1..=Nt`.
    pub states: Vec<Vec<f64>>,
    pub iterations: Vec<usize>,
    pub iterates: Vec<IterateRecord>,
    pub wall_seconds: f64,
}

impl FomTrajectory {
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

struct FomStepSystem<'a> {
    problem: &'a FomProblem,
    coeff: StepCoefficients,
    u1: &'a [f64],
    u2: &'a [f64],
    record: Option<(usize, &'a mut Vec<IterateRecord>)>,
}

impl NonlinearSystem for FomStepSystem<'_> {
    type Jacobian = BandMatrix;

    fn evaluate(&mut self, u: &[f64], with_jacobian: bool) -> Result<(Vec<f64>, Option<BandMatrix>), SolveError> {
        if with_jacobian {
            let (r, j) = self.problem.residual_jacobian(&self.coeff, u, self.u1, self.u2)?;
            Ok((r, Some(j)))
        } else {
            Ok((self.problem.residual(&self.coeff, u, self.u1, self.u2)?, None))
        }
    }

    fn solve(&mut self, jac: BandMatrix, rhs: &[f64]) -> Result<Vec<f64>, SolveError> {
        Ok(BandLu::new(jac)?.solve(rhs))
    }

    fn observe(&mut self, k: usize, u: &[f64], _: &[f64], _: &BandMatrix) {
        if let Some((n, rec)) = self.record.as_mut() {
            rec.push(IterateRecord { n: *n, k, u: u.to_vec() });
        }
    }
}

/// Advances one step from `state`; on success `state.u_now` holds `u^n`
/// and the history is shifted.
pub fn fom_step(
    problem: &FomProblem,
    mu: &[f64],
    settings: &NewtonSettings,
    state: &mut FomState,
    record: Option<&mut Vec<IterateRecord>>,
) -> Result<usize, SolveError> {
    let n = state.time_index + 1;
    let mut sys = FomStepSystem {
        problem,
        coeff: problem.coefficients(mu, n),
        u1: &state.u_prev,
        u2: &state.u_prev2,
        record: record.map(|r| (n, r)),
    };
    // initial guess: previous converged state
    let guess = state.u_prev.clone();
    let out = newton_solve(settings, &mut sys, &guess).map_err(|e| e.at_step(n))?;
    state.u_now = out.solution;
    let iters = out.iterations;
    state.advance();
    Ok(iters)
}

/// Full trajectory from zero initial data.
pub fn run_fom(
    problem: &FomProblem,
    mu: &[f64],
    settings: &NewtonSettings,
    collect_iterates: bool,
) -> Result<FomTrajectory, SolveError> {
    problem
        .check_param(mu)
        .map_err(|e| SolveError::BadSettings(e.to_string()))?;
    let start = Instant::now();
    let mut state = FomState::zero(problem.dof_count());
    // u_now of the zero state acts as u^0; advance() moves it into u_prev
    state.time_index = 0;
    let mut states = Vec::with_capacity(problem.time.nt);
    let mut iterations = Vec::with_capacity(problem.time.nt);
    let mut iterates = Vec::new();
    for _ in 0..problem.time.nt {
        let it = fom_step(
            problem,
            mu,
            settings,
            &mut state,
            collect_iterates.then_some(&mut iterates),
        )?;
        iterations.push(it);
        states.push(state.u_prev.clone());
    }
    Ok(FomTrajectory {
        mu: mu.to_vec(),
        states,
        iterations,
        iterates,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Relative mismatch `‖(R(u+hv) − R(u−hv))/2h − J v‖ / ‖J v‖`.
#[allow(clippy::too_many_arguments)]
pub fn jacobian_fd_error(
    problem: &FomProblem,
    coeff: &StepCoefficients,
    u: &[f64],
    u1: &[f64],
    u2: &[f64],
    v: &[f64],
    h: f64,
) -> Result<f64, SolveError> {
    let (_, j) = problem.residual_jacobian(coeff, u, u1, u2)?;
    let jv = j.mul_vec(v);
    let up: Vec<f64> = u.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let um: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - h * b).collect();
    let rp = problem.residual(coeff, &up, u1, u2)?;
    let rm = problem.residual(coeff, &um, u1, u2)?;
    let diff: Vec<f64> = rp
        .iter()
        .zip(&rm)
        .zip(&jv)
        .map(|((p, m), l)| (p - m) / (2.0 * h) - l)
        .collect();
    Ok(crate::linalg::norm2(&diff) / crate::linalg::norm2(&jv))
}
