//! Damped Newton iteration shared by the full-order, reduced and
//! hyper-reduced solvers.

use thiserror::Error;

use crate::linalg::{norm2, LinalgError};
use crate::materials::MaterialError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_iters: usize,
    pub backtracking: bool,
}

impl Default for NewtonSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            abs_tol: 1e-10,
            max_iters: 25,
            backtracking: true,
        }
    }
}

impl NewtonSettings {
    pub fn validate(&self) -> Result<(), SolveError> {
        if !(self.rel_tol > 0.0) || !(self.abs_tol > 0.0) || self.max_iters == 0 {
            return Err(SolveError::BadSettings(format!("{self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolveError {
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("Newton did not converge in {iterations} iterations (residual history {history:?})")]
    Diverged { iterations: usize, history: Vec<f64> },
    #[error("no admissible step after backtracking (last error: {0})")]
    BacktrackFailed(String),
    #[error("non-finite residual")]
    NonFinite,
    #[error("invalid Newton settings: {0}")]
    BadSettings(String),
    #[error("step {step}: {source}")]
    AtStep {
        step: usize,
        #[source]
        source: Box<SolveError>,
    },
}

impl SolveError {
    pub fn at_step(self, step: usize) -> Self {
        SolveError::AtStep {
            step,
            source: Box::new(self),
        }
    }

    /// The error with any step context stripped.
    pub fn root(&self) -> &SolveError {
        match self {
            SolveError::AtStep { source, .. } => source.root(),
            e => e,
        }
    }
}

/// A square nonlinear system `R(u) = 0` with a Jacobian type of its choice.
pub trait NonlinearSystem {
    type Jacobian;

    /// Residual and, when `with_jacobian`, the Jacobian at `u`.
    fn evaluate(&mut self, u: &[f64], with_jacobian: bool)
        -> Result<(Vec<f64>, Option<Self::Jacobian>), SolveError>;

    /// Solves `J x = rhs`.
    fn solve(&mut self, jac: Self::Jacobian, rhs: &[f64]) -> Result<Vec<f64>, SolveError>;

    /// Called for every iterate `k = 0, 1, ..` including the accepted one.
    fn observe(&mut self, _k: usize, _u: &[f64], _r: &[f64], _jac: &Self::Jacobian) {}
}

#[derive(Clone, Debug)]
pub struct NewtonOutcome {
    pub solution: Vec<f64>,
    pub iterations: usize,
    pub history: Vec<f64>,
}

const MAX_HALVINGS: usize = 10;
/// A full step may raise the residual norm by this factor before it is
/// treated as an increase and halved; the first step of a dynamic solve
/// routinely overshoots a little.
const GROWTH_LIMIT: f64 = 10.0;

pub fn newton_solve<S: NonlinearSystem>(
    settings: &NewtonSettings,
    system: &mut S,
    initial: &[f64],
) -> Result<NewtonOutcome, SolveError> {
    settings.validate()?;
    let mut u = initial.to_vec();
    let (mut r, jac) = system.evaluate(&u, true)?;
    let mut jac = jac.expect("jacobian requested");
    let r0 = norm2(&r);
    if !r0.is_finite() {
        return Err(SolveError::NonFinite);
    }
    let target = (settings.rel_tol * r0).max(settings.abs_tol);
    let mut history = vec![r0];
    let mut rn = r0;
    system.observe(0, &u, &r, &jac);

    for k in 1..=settings.max_iters + 1 {
        if rn <= target {
            return Ok(NewtonOutcome {
                solution: u,
                iterations: k - 1,
                history,
            });
        }
        if k > settings.max_iters {
            break;
        }
        let rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        let du = system.solve(jac, &rhs)?;

        let mut step = 1.0;
        let mut first_ok: Option<(Vec<f64>, Vec<f64>, S::Jacobian, f64)> = None;
        let mut accepted = None;
        let mut last_err = None;
        for _ in 0..=MAX_HALVINGS {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, d)| a + step * d).collect();
            match system.evaluate(&trial, true) {
                Ok((rt, jt)) => {
                    let nt = norm2(&rt);
                    if !nt.is_finite() {
                        last_err = Some(SolveError::NonFinite.to_string());
                    } else if !settings.backtracking || nt < GROWTH_LIMIT * rn {
                        accepted = Some((trial, rt, jt.expect("jacobian requested"), nt));
                        break;
                    } else if first_ok.is_none() {
                        first_ok = Some((trial, rt, jt.expect("jacobian requested"), nt));
                    }
                }
                Err(e @ SolveError::Material(_)) => last_err = Some(e.to_string()),
                Err(e) => return Err(e),
            }
            if !settings.backtracking {
                break;
            }
            step *= 0.5;
        }
        // every halving stayed above the growth limit: keep the full admissible step
        let (nu, nr, nj, nn) = match accepted.or(first_ok) {
            Some(a) => a,
            None => return Err(SolveError::BacktrackFailed(last_err.unwrap_or_default())),
        };
        u = nu;
        r = nr;
        jac = nj;
        rn = nn;
        history.push(rn);
        system.observe(k, &u, &r, &jac);
    }
    Err(SolveError::Diverged {
        iterations: settings.max_iters,
        history,
    })
}
