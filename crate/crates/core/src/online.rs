//! Online solver driven by the residual and Jacobian networks only.

use std::time::Instant;

use log::{debug, warn};

use crate::dnn::{DnnError, SurrogatePair};
use crate::fom::{assembly_calls, FomProblem, TimeGrid};
use crate::linalg::{norm2, DenseMatrix, LuFactor};
use crate::newton::SolveError;
use crate::pod::ReducedBasis;
use crate::rom::{reduced_residual, ReducedTrajectory, Timing};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OnlineSettings {
    /// Stop when `‖ρ(μ, tⁿ, k)‖ / ‖ρ(μ, tⁿ, 0)‖ < eps_stop`.
    pub eps_stop: f64,
    /// Newton updates per step; `None` means the largest training index + 2.
    pub max_iters: Option<usize>,
    /// Largest Newton index fed to the networks; `None` feeds `k` as is.
    pub k_cap: Option<usize>,
    /// Fail when the cap is reached instead of keeping the iterate with the
    /// smallest predicted residual.
    pub strict: bool,
}

impl Default for OnlineSettings {
    fn default() -> Self {
        Self {
            eps_stop: 1e-3,
            max_iters: None,
            k_cap: None,
            strict: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OnlineResult {
    pub trajectory: ReducedTrajectory,
    /// Full-order assembly loops run by the solver itself (audit excluded).
    pub assembly_calls: u64,
    /// `‖Vᵀ R(V u_N^n)‖` per step when auditing.
    pub audit_residuals: Vec<f64>,
    pub audit_calls: u64,
    /// Steps that fed the networks a Newton index beyond the training range.
    pub extrapolated_steps: usize,
    /// Steps where the predicted Jacobian had to be regularized.
    pub regularized_steps: usize,
    /// Steps that hit the iteration cap, with the predicted residual ratio
    /// of the accepted iterate.
    pub unconverged: Vec<(usize, f64)>,
}

fn predict(pair: &SurrogatePair, mu: &[f64], t: f64, k: usize, jacobian: bool) -> Result<(Vec<f64>, Option<DenseMatrix>), SolveError> {
    let mut input = mu.to_vec();
    input.push(t);
    input.push(k as f64);
    let net_err = |e: DnnError| SolveError::BadSettings(format!("network evaluation: {e}"));
    let rho = pair.residual.forward(&input).map_err(net_err)?;
    let iota = if jacobian {
        let v = pair.jacobian.forward(&input).map_err(net_err)?;
        Some(crate::rom::unvec_matrix(&v).expect("square jacobian output"))
    } else {
        None
    };
    Ok((rho, iota))
}

/// Solves `ι x = rhs`, adding `1e-8 trace(ι)/N` to the diagonal once if the
/// prediction is singular. Returns whether regularization was needed.
fn solve_predicted(iota: DenseMatrix, rhs: &[f64]) -> Result<(Vec<f64>, bool), SolveError> {
    match LuFactor::new(&iota) {
        Ok(lu) => Ok((lu.solve(rhs), false)),
        Err(first) => {
            let n = iota.rows();
            let shift = 1e-8 * (0..n).map(|i| iota[(i, i)]).sum::<f64>() / n as f64;
            let mut reg = iota;
            for i in 0..n {
                reg[(i, i)] += if shift != 0.0 { shift } else { 1e-8 };
            }
            let lu = LuFactor::new(&reg).map_err(|_| SolveError::Linalg(first))?;
            Ok((lu.solve(rhs), true))
        }
    }
}

/// Runs the network-driven Newton iteration over the time grid. With
/// `audit`, the true reduced residual of every accepted state is evaluated
/// for diagnostics and counted separately.
pub fn run_hyromnet(
    pair: &SurrogatePair,
    basis: &ReducedBasis,
    mu: &[f64],
    time: &TimeGrid,
    settings: &OnlineSettings,
    audit: Option<&FomProblem>,
) -> Result<OnlineResult, SolveError> {
    pair.check().map_err(|e| SolveError::BadSettings(e.to_string()))?;
    let n = pair.reduced_dim();
    if basis.dim() != n {
        return Err(SolveError::BadSettings(format!("basis has {} modes, networks {n}", basis.dim())));
    }
    if mu.len() + 2 != pair.residual.spec.input_dim {
        return Err(SolveError::BadSettings(format!("parameter of length {}", mu.len())));
    }
    if !(settings.eps_stop > 0.0) {
        return Err(SolveError::BadSettings("eps_stop must be positive".into()));
    }
    let max_iters = settings.max_iters.unwrap_or(pair.max_k + 2).max(1);
    let k_cap = settings.k_cap.unwrap_or(usize::MAX);

    let calls_before = assembly_calls();
    let start = Instant::now();
    let mut timing = Timing::default();
    let mut u_prev = vec![0.0; n];
    let mut u_prev2 = vec![0.0; n];
    let mut states = Vec::with_capacity(time.nt);
    let mut iterations = Vec::with_capacity(time.nt);
    let mut audit_residuals = Vec::new();
    let mut audit_calls = 0;
    let mut extrapolated_steps = 0;
    let mut regularized_steps = 0;
    let mut unconverged = Vec::new();

    for step in 1..=time.nt {
        let t = time.time(step);
        let mut u = u_prev.clone();
        let mut r0 = f64::NAN;
        let mut done = None;
        let mut best = (f64::INFINITY, 0, u.clone());
        let mut extrapolated = false;
        let mut regularized = false;
        for k in 0..=max_iters {
            let kin = k.min(k_cap);
            extrapolated |= kin > pair.max_k;
            let clock = Instant::now();
            let (rho, iota) = predict(pair, mu, t, kin, k < max_iters)?;
            timing.construction += clock.elapsed().as_secs_f64();
            let rn = norm2(&rho);
            if !rn.is_finite() {
                return Err(SolveError::NonFinite.at_step(step));
            }
            if k == 0 {
                r0 = rn;
                if rn == 0.0 {
                    done = Some(0);
                    break;
                }
            } else if rn / r0 < settings.eps_stop {
                done = Some(k);
                break;
            }
            if k > 0 && rn < best.0 {
                best = (rn, k, u.clone());
            }
            let Some(iota) = iota else { break };
            let clock = Instant::now();
            let rhs: Vec<f64> = rho.iter().map(|v| -v).collect();
            let (du, reg) = solve_predicted(iota, &rhs).map_err(|e| e.at_step(step))?;
            timing.solution += clock.elapsed().as_secs_f64();
            regularized |= reg;
            for (a, d) in u.iter_mut().zip(&du) {
                *a += d;
            }
        }
        let iters = match done {
            Some(k) => k,
            None if settings.strict => {
                return Err(SolveError::Diverged {
                    iterations: max_iters,
                    history: vec![r0, best.0],
                }
                .at_step(step))
            }
            None => {
                let (rn, k, ub) = best;
                u = ub;
                unconverged.push((step, rn / r0));
                k
            }
        };
        if extrapolated {
            extrapolated_steps += 1;
        }
        if regularized {
            regularized_steps += 1;
        }
        if let Some(p) = audit {
            let before = assembly_calls();
            let coeff = p.coefficients(mu, step);
            let r = reduced_residual(p, &basis.v, &coeff, &u, &u_prev, &u_prev2)?;
            audit_calls += assembly_calls() - before;
            audit_residuals.push(norm2(&r));
        }
        u_prev2 = std::mem::replace(&mut u_prev, u);
        states.push(u_prev.clone());
        iterations.push(iters);
    }
    timing.total = start.elapsed().as_secs_f64();
    let assembly = assembly_calls() - calls_before - audit_calls;
    if !unconverged.is_empty() {
        warn!(
            "{} of {} steps reached the iteration cap {max_iters}; kept the iterate with the smallest predicted residual",
            unconverged.len(),
            time.nt
        );
    }
    if extrapolated_steps > 0 {
        warn!("{extrapolated_steps} steps fed Newton indices beyond the training maximum {}", pair.max_k);
    }
    debug!("online run: {} iterations, {:.3e} s", iterations.iter().sum::<usize>(), timing.total);
    Ok(OnlineResult {
        trajectory: ReducedTrajectory {
            mu: mu.to_vec(),
            states,
            iterations,
            timing,
        },
        assembly_calls: assembly,
        audit_residuals,
        audit_calls,
        extrapolated_steps,
        regularized_steps,
        unconverged,
    })
}
