//! Experiment configuration, offline/online orchestration, error metrics,
//! reports and the artifact manifest.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::deim::{build_deim_operator, run_deim_rom, DeimOperator};
use crate::dnn::{pair_specs, train_pair, ArchConfig, DecoderKind, SurrogatePair, TrainConfig, TrainHistory};
use crate::fom::{run_fom, Dynamics, FomProblem, FomTrajectory, LoadKind, ModelSpec, TimeGrid};
use crate::io;
use crate::linalg::{norm2, BandMatrix, DenseMatrix};
use crate::materials::GuccioneParams;
use crate::mesh::build_box_mesh;
use crate::newton::NewtonSettings;
use crate::online::{run_hyromnet, OnlineSettings};
use crate::pod::{lhs_sample, pod, ParameterSpace, PodMethod, ReducedBasis, SnapshotMatrix, SnapshotMeta};
use crate::rom::{run_rom, CollectOptions, OperatorSnapshotSet};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("duplicate key {0}")]
    Duplicate(String),
    #[error("unknown key {0}")]
    UnknownKey(String),
    #[error("{key} = {value}: {msg}")]
    BadValue { key: String, value: String, msg: String },
    #[error("inconsistent configuration: {0}")]
    Inconsistent(String),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Io(#[from] io::IoError),
    #[error("file system: {0}")]
    Fs(#[from] std::io::Error),
    #[error("{stage}: {msg}")]
    Stage { stage: &'static str, msg: String },
    #[error("trajectories differ in length ({reference} vs {approx})")]
    Length { reference: usize, approx: usize },
    #[error("manifest: {0}")]
    Manifest(String),
}

fn stage(stage: &'static str) -> impl Fn(String) -> BenchError {
    move |msg| BenchError::Stage { stage, msg }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are
/// ignored; keys may carry dotted section prefixes.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: "expected key = value".into(),
            });
        };
        let k = k.trim();
        if k.is_empty() || k.chars().any(char::is_whitespace) {
            return Err(ConfigError::Syntax {
                line: i + 1,
                msg: format!("bad key {k:?}"),
            });
        }
        if out.insert(k.to_string(), v.trim().to_string()).is_some() {
            return Err(ConfigError::Duplicate(k.into()));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ModelKind {
    NeoHookean,
    Guccione,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub extent: [f64; 3],
    pub divisions: [usize; 3],
    pub model: ModelKind,
    pub load: LoadKind,
    pub t_final: f64,
    pub dt: f64,
    pub dynamics: Dynamics,
    pub newton: NewtonSettings,
    pub bounds: Vec<[f64; 2]>,
    pub ns: usize,
    pub ns_prime: usize,
    pub n_test: usize,
    pub eps_pod: f64,
    pub pod_method: String,
    pub eps_deim: Vec<f64>,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub train_networks: bool,
    pub online: OnlineSettings,
    pub mass_weighted: bool,
    pub seed: u64,
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            extent: [1e-2, 1e-3, 1e-3],
            divisions: [10, 2, 2],
            model: ModelKind::NeoHookean,
            load: LoadKind::Linear,
            t_final: 0.25,
            dt: 5e-3,
            dynamics: Dynamics::default(),
            newton: NewtonSettings::default(),
            bounds: vec![[0.5e4, 1.5e4], [2.5e4, 7.5e4], [2.0, 6.0]],
            ns: 20,
            ns_prime: 100,
            n_test: 10,
            eps_pod: 1e-4,
            pod_method: "randomized".into(),
            eps_deim: vec![1e-5],
            arch: ArchConfig::default(),
            train: TrainConfig::default(),
            train_networks: true,
            online: OnlineSettings::default(),
            mass_weighted: false,
            seed: 0,
            out_dir: PathBuf::from("out"),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| ConfigError::BadValue {
        key: key.into(),
        value: v.into(),
        msg: e.to_string(),
    })
}

fn parse_bool(key: &str, v: &str) -> Result<bool, ConfigError> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "yes" | "1" | "on" => Ok(true),
        "false" | "no" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.into(),
            value: v.into(),
            msg: "expected a boolean".into(),
        }),
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, ConfigError> {
    v.split(',').map(|s| parse_num(key, s.trim())).collect()
}

fn parse_bounds(key: &str, v: &str) -> Result<Vec<[f64; 2]>, ConfigError> {
    v.split(',')
        .map(|item| {
            let (lo, hi) = item.split_once(':').ok_or_else(|| ConfigError::BadValue {
                key: key.into(),
                value: v.into(),
                msg: "expected lo:hi pairs".into(),
            })?;
            Ok([parse_num(key, lo.trim())?, parse_num(key, hi.trim())?])
        })
        .collect()
}

fn list_text(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:e}")).collect::<Vec<_>>().join(", ")
}

impl ExperimentConfig {
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let kv = parse_kv(text)?;
        let mut c = Self::default();
        for (k, v) in &kv {
            c.set(k, v)?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn from_file(path: &Path) -> Result<Self, BenchError> {
        Ok(Self::from_text(&fs::read_to_string(path)?)?)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, k: &str, v: &str) -> Result<(), ConfigError> {
        let axis = |s: &str| match s {
            "x" => Some(0),
            "y" => Some(1),
            "z" => Some(2),
            _ => None,
        };
        match k {
            "mesh.lx" | "mesh.ly" | "mesh.lz" => self.extent[axis(&k[6..]).unwrap()] = parse_num(k, v)?,
            "mesh.nx" | "mesh.ny" | "mesh.nz" => self.divisions[axis(&k[6..]).unwrap()] = parse_num(k, v)?,
            "model.kind" => {
                self.model = match v.to_ascii_lowercase().as_str() {
                    "neo-hookean" | "neohookean" => ModelKind::NeoHookean,
                    "guccione" => ModelKind::Guccione,
                    _ => {
                        return Err(ConfigError::BadValue {
                            key: k.into(),
                            value: v.into(),
                            msg: "expected neo-hookean or guccione".into(),
                        })
                    }
                }
            }
            "fom.load" => {
                self.load = LoadKind::parse(v).ok_or_else(|| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    msg: "expected linear, hat or step".into(),
                })?
            }
            "fom.t_final" => self.t_final = parse_num(k, v)?,
            "fom.dt" => self.dt = parse_num(k, v)?,
            "fom.rho0" => self.dynamics.rho0 = parse_num(k, v)?,
            "fom.alpha" => self.dynamics.alpha = parse_num(k, v)?,
            "fom.beta" => self.dynamics.beta = parse_num(k, v)?,
            "fom.quasi_static" => self.dynamics.quasi_static = parse_bool(k, v)?,
            "newton.rel_tol" => self.newton.rel_tol = parse_num(k, v)?,
            "newton.abs_tol" => self.newton.abs_tol = parse_num(k, v)?,
            "newton.max_iters" => self.newton.max_iters = parse_num(k, v)?,
            "newton.backtracking" => self.newton.backtracking = parse_bool(k, v)?,
            "param.bounds" => self.bounds = parse_bounds(k, v)?,
            "offline.ns" => self.ns = parse_num(k, v)?,
            "offline.ns_prime" => self.ns_prime = parse_num(k, v)?,
            "offline.n_test" => self.n_test = parse_num(k, v)?,
            "pod.eps" => self.eps_pod = parse_num(k, v)?,
            "pod.method" => self.pod_method = v.to_ascii_lowercase(),
            "deim.eps" => self.eps_deim = if v.is_empty() { Vec::new() } else { parse_list(k, v)? },
            "arch.dfnn_width" => self.arch.dfnn_width = parse_num(k, v)?,
            "arch.dfnn_depth" => self.arch.dfnn_depth = parse_num(k, v)?,
            "arch.latent" => self.arch.latent = parse_num(k, v)?,
            "arch.decoder" => {
                self.arch.decoder = DecoderKind::parse(v).ok_or_else(|| ConfigError::BadValue {
                    key: k.into(),
                    value: v.into(),
                    msg: "expected conv, dense or auto".into(),
                })?
            }
            "arch.channels" => self.arch.channels = parse_num(k, v)?,
            "arch.dense_width" => self.arch.dense_width = parse_num(k, v)?,
            "arch.dense_depth" => self.arch.dense_depth = parse_num(k, v)?,
            "train.enabled" => self.train_networks = parse_bool(k, v)?,
            "train.alpha" => self.train.alpha = parse_num(k, v)?,
            "train.eta" => self.train.eta = parse_num(k, v)?,
            "train.batch" => self.train.batch = parse_num(k, v)?,
            "train.epochs" => self.train.epochs = parse_num(k, v)?,
            "train.omega_h" => self.train.omega_h = parse_num(k, v)?,
            "train.patience" => self.train.patience = parse_num(k, v)?,
            "train.lr_patience" => self.train.lr_patience = parse_num(k, v)?,
            "train.lr_decay" => self.train.lr_decay = parse_num(k, v)?,
            "online.eps_stop" => self.online.eps_stop = parse_num(k, v)?,
            "online.max_iters" => self.online.max_iters = Some(parse_num(k, v)?),
            "online.k_cap" => self.online.k_cap = Some(parse_num(k, v)?),
            "online.strict" => self.online.strict = parse_bool(k, v)?,
            "report.mass_weighted" => self.mass_weighted = parse_bool(k, v)?,
            "run.seed" => self.seed = parse_num(k, v)?,
            "run.out_dir" => self.out_dir = PathBuf::from(v),
            _ => return Err(ConfigError::UnknownKey(k.into())),
        }
        Ok(())
    }

    /// Canonical text form; `from_text` of it gives back `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        for (i, a) in ["x", "y", "z"].iter().enumerate() {
            put(&format!("mesh.l{a}"), format!("{:e}", self.extent[i]));
            put(&format!("mesh.n{a}"), self.divisions[i].to_string());
        }
        put(
            "model.kind",
            match self.model {
                ModelKind::NeoHookean => "neo-hookean",
                ModelKind::Guccione => "guccione",
            }
            .into(),
        );
        put("fom.load", self.load.name().into());
        put("fom.t_final", format!("{:e}", self.t_final));
        put("fom.dt", format!("{:e}", self.dt));
        put("fom.rho0", format!("{:e}", self.dynamics.rho0));
        put("fom.alpha", format!("{:e}", self.dynamics.alpha));
        put("fom.beta", format!("{:e}", self.dynamics.beta));
        put("fom.quasi_static", self.dynamics.quasi_static.to_string());
        put("newton.rel_tol", format!("{:e}", self.newton.rel_tol));
        put("newton.abs_tol", format!("{:e}", self.newton.abs_tol));
        put("newton.max_iters", self.newton.max_iters.to_string());
        put("newton.backtracking", self.newton.backtracking.to_string());
        let b: Vec<String> = self.bounds.iter().map(|b| format!("{:e}:{:e}", b[0], b[1])).collect();
        put("param.bounds", b.join(", "));
        put("offline.ns", self.ns.to_string());
        put("offline.ns_prime", self.ns_prime.to_string());
        put("offline.n_test", self.n_test.to_string());
        put("pod.eps", format!("{:e}", self.eps_pod));
        put("pod.method", self.pod_method.clone());
        put("deim.eps", list_text(&self.eps_deim));
        let a = &self.arch;
        put("arch.dfnn_width", a.dfnn_width.to_string());
        put("arch.dfnn_depth", a.dfnn_depth.to_string());
        put("arch.latent", a.latent.to_string());
        put("arch.decoder", format!("{:?}", a.decoder).to_ascii_lowercase());
        put("arch.channels", a.channels.to_string());
        put("arch.dense_width", a.dense_width.to_string());
        put("arch.dense_depth", a.dense_depth.to_string());
        let t = &self.train;
        put("train.enabled", self.train_networks.to_string());
        put("train.alpha", format!("{:e}", t.alpha));
        put("train.eta", format!("{:e}", t.eta));
        put("train.batch", t.batch.to_string());
        put("train.epochs", t.epochs.to_string());
        put("train.omega_h", format!("{:e}", t.omega_h));
        put("train.patience", t.patience.to_string());
        put("train.lr_patience", t.lr_patience.to_string());
        put("train.lr_decay", format!("{:e}", t.lr_decay));
        put("online.eps_stop", format!("{:e}", self.online.eps_stop));
        if let Some(m) = self.online.max_iters {
            put("online.max_iters", m.to_string());
        }
        if let Some(m) = self.online.k_cap {
            put("online.k_cap", m.to_string());
        }
        put("online.strict", self.online.strict.to_string());
        put("report.mass_weighted", self.mass_weighted.to_string());
        put("run.seed", self.seed.to_string());
        put("run.out_dir", self.out_dir.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Inconsistent(m));
        let p = self.model_spec().param_dim();
        if self.bounds.len() != p {
            return bad(format!("model takes {p} parameters, {} bounds given", self.bounds.len()));
        }
        if let Err(e) = ParameterSpace::new(self.bounds.clone()) {
            return bad(e.to_string());
        }
        if self.ns == 0 || self.ns_prime == 0 {
            return bad("sample counts must be positive".into());
        }
        if !(self.eps_pod > 0.0 && self.eps_pod < 1.0) || self.eps_deim.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
            return bad("tolerances must lie in (0, 1)".into());
        }
        if self.pod_method() .is_none() {
            return bad(format!("unknown pod.method {}", self.pod_method));
        }
        if let Err(e) = self.train.validate() {
            return bad(e.to_string());
        }
        if !(self.online.eps_stop > 0.0) {
            return bad("online.eps_stop must be positive".into());
        }
        if let Err(e) = TimeGrid::new(self.t_final, self.dt) {
            return bad(e.to_string());
        }
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelKind::NeoHookean => ModelSpec::NeoHookean,
            ModelKind::Guccione => ModelSpec::Guccione(GuccioneParams::reference()),
        }
    }

    /// POD method for the solution basis; `salt` decorrelates the sketches
    /// of different stages.
    pub fn pod_method_salted(&self, salt: u64) -> PodMethod {
        match self.pod_method() {
            Some(PodMethod::Randomized { seed }) => PodMethod::Randomized {
                seed: seed.wrapping_add(salt),
            },
            other => other.unwrap_or(PodMethod::Deterministic),
        }
    }

    fn pod_method(&self) -> Option<PodMethod> {
        match self.pod_method.as_str() {
            "randomized" => Some(PodMethod::Randomized { seed: self.seed }),
            "deterministic" => Some(PodMethod::Deterministic),
            _ => None,
        }
    }

    pub fn problem(&self) -> Result<FomProblem, BenchError> {
        let mesh = build_box_mesh(self.extent, self.divisions).map_err(|e| stage("setup")(e.to_string()))?;
        let time = TimeGrid::new(self.t_final, self.dt).map_err(|e| stage("setup")(e.to_string()))?;
        Ok(FomProblem::new(mesh, self.model_spec(), self.load, time, self.dynamics))
    }

    pub fn space(&self) -> ParameterSpace {
        ParameterSpace::new(self.bounds.clone()).expect("validated bounds")
    }

    pub fn training_parameters(&self) -> Vec<Vec<f64>> {
        lhs_sample(&self.space(), self.ns, self.seed)
    }

    pub fn collection_parameters(&self) -> Vec<Vec<f64>> {
        lhs_sample(&self.space(), self.ns_prime, self.seed.wrapping_add(1))
    }

    pub fn test_parameters(&self) -> Vec<Vec<f64>> {
        lhs_sample(&self.space(), self.n_test, self.seed.wrapping_add(2))
    }
}

/// Time-averaged errors between a reference trajectory and an
/// approximation.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMetrics {
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub abs_series: Vec<f64>,
    /// `NaN` where the reference state has zero norm.
    pub rel_series: Vec<f64>,
    pub skipped: usize,
}

/// `ε_abs = mean ‖u_h − ũ‖₂`, `ε_rel = mean ‖u_h − ũ‖₂ / ‖u_h‖₂`. Steps with
/// `‖u_h‖ = 0` are left out of `ε_rel` with a warning.
pub fn error_metrics(reference: &[Vec<f64>], approx: &[Vec<f64>]) -> Result<ErrorMetrics, BenchError> {
    error_metrics_with(reference, approx, None)
}

/// As [`error_metrics`], in the norm `√(uᵀMu)` when `mass` is given.
pub fn error_metrics_with(
    reference: &[Vec<f64>],
    approx: &[Vec<f64>],
    mass: Option<&BandMatrix>,
) -> Result<ErrorMetrics, BenchError> {
    if reference.len() != approx.len() || reference.is_empty() {
        return Err(BenchError::Length {
            reference: reference.len(),
            approx: approx.len(),
        });
    }
    let norm = |v: &[f64]| match mass {
        None => norm2(v),
        Some(m) => m.mul_vec(v).iter().zip(v).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt(),
    };
    let mut abs_series = Vec::with_capacity(reference.len());
    let mut rel_series = Vec::with_capacity(reference.len());
    let mut skipped = 0;
    for (u, a) in reference.iter().zip(approx) {
        if u.len() != a.len() {
            return Err(BenchError::Length {
                reference: u.len(),
                approx: a.len(),
            });
        }
        let diff: Vec<f64> = u.iter().zip(a).map(|(x, y)| x - y).collect();
        let e = norm(&diff);
        let r = norm(u);
        abs_series.push(e);
        if r == 0.0 {
            skipped += 1;
            rel_series.push(f64::NAN);
        } else {
            rel_series.push(e / r);
        }
    }
    if skipped > 0 {
        warn!("{skipped} zero-norm reference states left out of the relative error");
    }
    let eps_abs = abs_series.iter().sum::<f64>() / abs_series.len() as f64;
    let kept: Vec<f64> = rel_series.iter().copied().filter(|x| !x.is_nan()).collect();
    let eps_rel = if kept.is_empty() { 0.0 } else { kept.iter().sum::<f64>() / kept.len() as f64 };
    Ok(ErrorMetrics {
        eps_abs,
        eps_rel,
        abs_series,
        rel_series,
        skipped,
    })
}

/// Wall-clock seconds per named phase.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TimingLog {
    pub entries: Vec<(String, f64)>,
}

impl TimingLog {
    pub fn record(&mut self, phase: impl Into<String>, seconds: f64) {
        self.entries.push((phase.into(), seconds));
    }

    pub fn get(&self, phase: &str) -> Option<f64> {
        self.entries.iter().find(|(p, _)| p == phase).map(|e| e.1)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("phase,elapsed_seconds\n");
        for (p, t) in &self.entries {
            let _ = writeln!(s, "{p},{t:e}");
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, BenchError> {
        let mut log = Self::default();
        for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
            let (p, t) = line.split_once(',').ok_or_else(|| BenchError::Manifest(format!("bad timing line {line:?}")))?;
            let t = t.trim().parse().map_err(|_| BenchError::Manifest(format!("bad timing line {line:?}")))?;
            log.record(p, t);
        }
        Ok(log)
    }

    pub fn timed<T>(&mut self, phase: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        info!("{phase}: {secs:.2} s");
        self.record(phase, secs);
        out
    }
}

/// FOM runs for every parameter, in parallel; results keep the input order.
pub fn fom_sweep(
    problem: &FomProblem,
    params: &[Vec<f64>],
    settings: &NewtonSettings,
    collect_iterates: bool,
) -> Result<Vec<FomTrajectory>, BenchError> {
    params
        .par_iter()
        .map(|mu| run_fom(problem, mu, settings, collect_iterates).map_err(|e| stage("fom")(format!("μ = {mu:?}: {e}"))))
        .collect()
}

/// Every Newton iterate of the trajectories as a snapshot column.
pub fn iterate_snapshots(problem: &FomProblem, trajectories: &[FomTrajectory]) -> SnapshotMatrix {
    let mut s = SnapshotMatrix::new(problem.dof_count(), problem.model.param_dim());
    for tr in trajectories {
        for it in &tr.iterates {
            s.push(
                &it.u,
                SnapshotMeta {
                    mu: tr.mu.clone(),
                    n: it.n as u32,
                    k: it.k as u32,
                },
            )
            .expect("consistent snapshot shape");
        }
    }
    s
}

/// Reduced runs collecting operator snapshots and full-order residuals.
pub fn collection_sweep(
    problem: &FomProblem,
    basis: &ReducedBasis,
    params: &[Vec<f64>],
    settings: &NewtonSettings,
) -> Result<(OperatorSnapshotSet, SnapshotMatrix), BenchError> {
    let opts = CollectOptions {
        operators: true,
        full_residuals: true,
    };
    let parts: Vec<_> = params
        .par_iter()
        .map(|mu| {
            run_rom(problem, basis, mu, settings, opts)
                .map(|(_, c)| c.expect("collection requested"))
                .map_err(|e| stage("rom-collect")(format!("μ = {mu:?}: {e}")))
        })
        .collect::<Result<_, _>>()?;
    let p = problem.model.param_dim();
    let mut ops = OperatorSnapshotSet::new(basis.dim(), p);
    let mut res = SnapshotMatrix::new(problem.dof_count(), p);
    for c in parts {
        ops.extend(&c.operators).map_err(|e| stage("rom-collect")(e.to_string()))?;
        res.extend(&c.full_residuals).map_err(|e| stage("rom-collect")(e.to_string()))?;
    }
    Ok((ops, res))
}

/// Rebuilds the network input matrix from stored operator snapshots.
pub fn operator_set_from_parts(
    residuals: SnapshotMatrix,
    jacobians: SnapshotMatrix,
    dt: f64,
) -> Result<OperatorSnapshotSet, BenchError> {
    let n = residuals.rows();
    if jacobians.rows() != n * n || jacobians.cols() != residuals.cols() || jacobians.meta != residuals.meta {
        return Err(BenchError::Manifest("residual and Jacobian snapshots do not match".into()));
    }
    let mut set = OperatorSnapshotSet::new(n, residuals.param_dim);
    for j in 0..residuals.cols() {
        let m = &residuals.meta[j];
        let jn = DenseMatrix::from_col_major(n, n, jacobians.data.col(j).to_vec()).expect("square block");
        set.push(&m.mu, m.n as usize, m.n as f64 * dt, m.k as usize, residuals.data.col(j), &jn)
            .map_err(|e| BenchError::Manifest(e.to_string()))?;
    }
    Ok(set)
}

#[derive(Clone, Debug)]
pub struct OfflineArtifacts {
    pub basis: ReducedBasis,
    pub snapshots: SnapshotMatrix,
    pub operators: OperatorSnapshotSet,
    pub residuals: SnapshotMatrix,
    pub deim: Vec<(f64, DeimOperator)>,
    pub pair: Option<SurrogatePair>,
    pub histories: Option<(TrainHistory, TrainHistory)>,
    pub timing: TimingLog,
}

/// POD of the iterate snapshots.
pub fn pod_stage(cfg: &ExperimentConfig, snapshots: &SnapshotMatrix) -> Result<ReducedBasis, BenchError> {
    let basis = pod(&snapshots.data, cfg.eps_pod, cfg.pod_method_salted(3)).map_err(|e| stage("pod")(e.to_string()))?;
    info!("POD: {} snapshots, N = {}", snapshots.cols(), basis.dim());
    Ok(basis)
}

/// One DEIM operator per tolerance in the configuration.
pub fn deim_stage(
    cfg: &ExperimentConfig,
    problem: &FomProblem,
    residuals: &SnapshotMatrix,
    basis: &ReducedBasis,
    timing: &mut TimingLog,
) -> Result<Vec<(f64, DeimOperator)>, BenchError> {
    let mut deim = Vec::new();
    for (i, &eps) in cfg.eps_deim.iter().enumerate() {
        let op = timing
            .timed(&format!("offline.deim.{i}"), || {
                build_deim_operator(&residuals.data, eps, basis, &problem.mesh, cfg.pod_method_salted(4))
            })
            .map_err(|e| stage("deim-build")(format!("ε = {eps:e}: {e}")))?;
        info!("DEIM ε = {eps:e}: m = {}, {} elements", op.m(), op.reduced_mesh.element_subset.len());
        deim.push((eps, op));
    }
    Ok(deim)
}

/// Trains the residual and Jacobian networks with the run seed.
pub fn train_stage(
    cfg: &ExperimentConfig,
    operators: &OperatorSnapshotSet,
) -> Result<(SurrogatePair, TrainHistory, TrainHistory), BenchError> {
    let specs = pair_specs(operators, &cfg.arch).map_err(|e| stage("train")(e.to_string()))?;
    let config = TrainConfig {
        seed: cfg.seed,
        ..cfg.train.clone()
    };
    train_pair(operators, &specs, &config).map_err(|e| stage("train")(e.to_string()))
}

/// FOM sweep, POD, ROM collection sweep, DEIM builds and network training.
pub fn run_offline(cfg: &ExperimentConfig, problem: &FomProblem) -> Result<OfflineArtifacts, BenchError> {
    cfg.validate()?;
    let mut timing = TimingLog::default();
    let train_mu = cfg.training_parameters();
    let trajectories = timing.timed("offline.fom", || fom_sweep(problem, &train_mu, &cfg.newton, true))?;
    let snapshots = iterate_snapshots(problem, &trajectories);
    drop(trajectories);
    let basis = timing.timed("offline.pod", || pod_stage(cfg, &snapshots))?;

    let collect_mu = cfg.collection_parameters();
    let (operators, residuals) =
        timing.timed("offline.rom_collect", || collection_sweep(problem, &basis, &collect_mu, &cfg.newton))?;
    info!("collected {} operator snapshots", operators.len());

    let deim = deim_stage(cfg, problem, &residuals, &basis, &mut timing)?;

    let (pair, histories) = if cfg.train_networks {
        let (pair, hr, hj) = timing.timed("offline.train", || train_stage(cfg, &operators))?;
        (Some(pair), Some((hr, hj)))
    } else {
        (None, None)
    };
    Ok(OfflineArtifacts {
        basis,
        snapshots,
        operators,
        residuals,
        deim,
        pair,
        histories,
        timing,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Content hashes of the deterministic artifacts in a directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub seed: u64,
    pub files: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Manifest {
    pub fn new(seed: u64) -> Self {
        Self {
            version: 1,
            seed,
            files: Vec::new(),
        }
    }

    /// Writes `bytes` to `dir/name` and records its hash.
    pub fn write(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<(), BenchError> {
        fs::write(dir.join(name), bytes)?;
        self.files.retain(|f| f.name != name);
        self.files.push(ManifestEntry {
            name: name.into(),
            bytes: bytes.len() as u64,
            sha256: sha256_hex(bytes),
        });
        Ok(())
    }

    /// The manifest in `dir`, or an empty one if there is none yet.
    pub fn open(dir: &Path, seed: u64) -> Result<Self, BenchError> {
        if dir.join("manifest.json").exists() {
            Self::load(dir)
        } else {
            fs::create_dir_all(dir)?;
            Ok(Self::new(seed))
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable manifest")
    }

    /// Hash of the manifest text itself.
    pub fn digest(&self) -> String {
        sha256_hex(self.to_json().as_bytes())
    }

    pub fn save(&self, dir: &Path) -> Result<(), BenchError> {
        Ok(fs::write(dir.join("manifest.json"), self.to_json())?)
    }

    pub fn load(dir: &Path) -> Result<Self, BenchError> {
        let text = fs::read_to_string(dir.join("manifest.json"))?;
        serde_json::from_str(&text).map_err(|e| BenchError::Manifest(e.to_string()))
    }

    /// Checks that every listed file exists with the recorded hash.
    pub fn verify(&self, dir: &Path) -> Result<(), BenchError> {
        for f in &self.files {
            let bytes = fs::read(dir.join(&f.name)).map_err(|e| BenchError::Manifest(format!("{}: {e}", f.name)))?;
            if sha256_hex(&bytes) != f.sha256 {
                return Err(BenchError::Manifest(format!("{} does not match its recorded hash", f.name)));
            }
        }
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.files.iter().any(|f| f.name == name)
    }
}

fn deim_file(i: usize) -> String {
    format!("deim_{i}.hyrb")
}

/// Writes all offline artifacts into `dir`. Timing goes to `timing.csv`,
/// which is not hashed.
pub fn save_offline(dir: &Path, cfg: &ExperimentConfig, art: &OfflineArtifacts) -> Result<Manifest, BenchError> {
    fs::create_dir_all(dir)?;
    let mut m = Manifest::new(cfg.seed);
    m.write(dir, "config.txt", cfg.to_text().as_bytes())?;
    m.write(dir, "snapshots.hyrs", &io::encode_snapshots(&art.snapshots))?;
    m.write(dir, "basis.hyrb", &io::encode_basis(&art.basis))?;
    m.write(dir, "residuals.hyrs", &io::encode_snapshots(&art.residuals))?;
    m.write(dir, "rn.hyrs", &io::encode_snapshots(&art.operators.residuals))?;
    m.write(dir, "jn.hyrs", &io::encode_snapshots(&art.operators.jacobians))?;
    for (i, (eps, op)) in art.deim.iter().enumerate() {
        m.write(dir, &deim_file(i), &io::encode_basis(&deim_basis(op, *eps)))?;
    }
    if let (Some(pair), Some((hr, hj))) = (&art.pair, &art.histories) {
        m.write(dir, "rho.hyrw", &io::encode_network(&pair.residual, pair.max_k))?;
        m.write(dir, "iota.hyrw", &io::encode_network(&pair.jacobian, pair.max_k))?;
        m.write(dir, "history_rho.csv", hr.to_csv().as_bytes())?;
        m.write(dir, "history_iota.csv", hj.to_csv().as_bytes())?;
    }
    m.save(dir)?;
    fs::write(dir.join("timing.csv"), art.timing.to_csv())?;
    Ok(m)
}

/// The DEIM basis stored in HYRB form.
pub fn deim_basis(op: &DeimOperator, eps: f64) -> ReducedBasis {
    ReducedBasis {
        v: op.phi.clone(),
        singular_values: Vec::new(),
        ric_tolerance: eps,
        total_energy: 0.0,
    }
}

/// What the online phase needs, as loaded from an artifact directory.
#[derive(Clone, Debug)]
pub struct OnlineArtifacts {
    pub basis: ReducedBasis,
    pub deim: Vec<(f64, DeimOperator)>,
    pub pair: Option<SurrogatePair>,
}

impl OfflineArtifacts {
    pub fn online(&self) -> OnlineArtifacts {
        OnlineArtifacts {
            basis: self.basis.clone(),
            deim: self.deim.clone(),
            pair: self.pair.clone(),
        }
    }
}

/// Loads basis, DEIM operators and networks after verifying the manifest.
pub fn load_online(dir: &Path, problem: &FomProblem) -> Result<OnlineArtifacts, BenchError> {
    let m = Manifest::load(dir)?;
    m.verify(dir)?;
    let basis = io::read_basis(&dir.join("basis.hyrb"))?;
    let mut deim = Vec::new();
    let mut i = 0;
    while m.contains(&deim_file(i)) {
        let b = io::read_basis(&dir.join(deim_file(i)))?;
        let op = DeimOperator::from_basis(b.v, &basis, &problem.mesh).map_err(|e| stage("deim-build")(e.to_string()))?;
        deim.push((b.ric_tolerance, op));
        i += 1;
    }
    let pair = if m.contains("rho.hyrw") {
        Some(io::read_pair(dir)?)
    } else {
        None
    };
    Ok(OnlineArtifacts { basis, deim, pair })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub method: String,
    pub param_id: usize,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub wall_seconds: f64,
    pub iterations: usize,
    /// Relative error per time step.
    pub series: Vec<f64>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub mean_eps_abs: f64,
    pub mean_eps_rel: f64,
    pub mean_seconds: f64,
    pub speedup: f64,
    pub failures: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ErrorReport {
    pub rows: Vec<ReportRow>,
    pub summary: Vec<MethodSummary>,
    pub test_parameters: Vec<Vec<f64>>,
    /// Full-order assembly loops run by the network-driven solver.
    pub hyromnet_assembly_calls: u64,
}

impl ErrorReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,param_id,eps_abs,eps_rel,wall_seconds\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{:e},{:e},{:e}", r.method, r.param_id, r.eps_abs, r.eps_rel, r.wall_seconds);
        }
        s
    }

    /// Mean online time per method, as `online.<method>` phases.
    pub fn timing(&self) -> TimingLog {
        let mut t = TimingLog::default();
        for m in &self.summary {
            t.record(format!("online.{}", m.method), m.mean_seconds);
        }
        t
    }

    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|m| m.method == name)
    }

    fn summarize(&mut self) {
        let mut methods: Vec<String> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method) {
                methods.push(r.method.clone());
            }
        }
        let mut out: Vec<MethodSummary> = methods
            .iter()
            .map(|m| {
                let ok: Vec<&ReportRow> = self.rows.iter().filter(|r| &r.method == m && r.failure.is_none()).collect();
                let failures = self.rows.iter().filter(|r| &r.method == m && r.failure.is_some()).count();
                let mean = |f: &dyn Fn(&ReportRow) -> f64| {
                    if ok.is_empty() {
                        f64::NAN
                    } else {
                        ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                    }
                };
                MethodSummary {
                    method: m.clone(),
                    mean_eps_abs: mean(&|r| r.eps_abs),
                    mean_eps_rel: mean(&|r| r.eps_rel),
                    mean_seconds: mean(&|r| r.wall_seconds),
                    speedup: f64::NAN,
                    failures,
                }
            })
            .collect();
        let fom = out.iter().find(|m| m.method == "FOM").map_or(f64::NAN, |m| m.mean_seconds);
        for m in &mut out {
            m.speedup = fom / m.mean_seconds;
        }
        self.summary = out;
    }

    /// Plain-text table: one line per method.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>12} {:>12} {:>12} {:>10} {:>8}",
            "method", "eps_abs", "eps_rel", "time [s]", "speed-up", "failed"
        );
        for m in &self.summary {
            let _ = writeln!(
                s,
                "{:<16} {:>12.3e} {:>12.3e} {:>12.3e} {:>10.1} {:>8}",
                m.method, m.mean_eps_abs, m.mean_eps_rel, m.mean_seconds, m.speedup, m.failures
            );
        }
        let _ = writeln!(s, "online full-order assembly calls (Deep-HyROMnet): {}", self.hyromnet_assembly_calls);
        s
    }
}

pub fn deim_method_name(eps: f64) -> String {
    format!("DEIM({eps:.0e})")
}

pub const HYROMNET: &str = "Deep-HyROMnet";

/// Runs the FOM reference, the ROM, every DEIM variant and the network
/// solver on each test parameter. A warm-up pass on the first parameter is
/// excluded from timing. Per-method failures are recorded, not raised.
pub fn run_online_benchmark(
    cfg: &ExperimentConfig,
    problem: &FomProblem,
    art: &OnlineArtifacts,
    tests: &[Vec<f64>],
) -> Result<ErrorReport, BenchError> {
    let mass = cfg.mass_weighted.then(|| problem.mass_matrix());
    let basis = &art.basis;
    let mut report = ErrorReport {
        test_parameters: tests.to_vec(),
        ..Default::default()
    };

    let assembly = std::cell::Cell::new(0u64);
    type Run<'a> = Box<dyn Fn(&[f64]) -> Result<(Vec<Vec<f64>>, f64, usize), String> + 'a>;
    let mut methods: Vec<(String, Run)> = Vec::new();
    methods.push((
        "ROM".into(),
        Box::new(|mu| {
            let (tr, _) = run_rom(problem, basis, mu, &cfg.newton, CollectOptions::default()).map_err(|e| e.to_string())?;
            Ok((tr.lift(&basis.v), tr.timing.total, tr.total_iterations()))
        }),
    ));
    for (eps, op) in &art.deim {
        methods.push((
            deim_method_name(*eps),
            Box::new(move |mu| {
                let tr = run_deim_rom(problem, op, mu, &cfg.newton).map_err(|e| e.to_string())?;
                Ok((tr.lift(&basis.v), tr.timing.total, tr.total_iterations()))
            }),
        ));
    }
    if let Some(pair) = &art.pair {
        let assembly = &assembly;
        methods.push((
            HYROMNET.into(),
            Box::new(move |mu| {
                let out = run_hyromnet(pair, basis, mu, &problem.time, &cfg.online, None).map_err(|e| e.to_string())?;
                assembly.set(assembly.get() + out.assembly_calls);
                Ok((out.trajectory.lift(&basis.v), out.trajectory.timing.total, out.trajectory.total_iterations()))
            }),
        ));
    }

    if let Some(mu) = tests.first() {
        let _ = run_fom(problem, mu, &cfg.newton, false);
        for (_, run) in &methods {
            let _ = run(mu);
        }
        assembly.set(0);
    }
    for (id, mu) in tests.iter().enumerate() {
        let fom = run_fom(problem, mu, &cfg.newton, false).map_err(|e| stage("bench")(format!("reference FOM failed for μ = {mu:?}: {e}")))?;
        report.rows.push(ReportRow {
            method: "FOM".into(),
            param_id: id,
            eps_abs: 0.0,
            eps_rel: 0.0,
            wall_seconds: fom.wall_seconds,
            iterations: fom.total_iterations(),
            series: vec![0.0; fom.states.len()],
            failure: None,
        });
        for (name, run) in &methods {
            let row = match run(mu) {
                Ok((states, secs, iterations)) => {
                    let e = error_metrics_with(&fom.states, &states, mass.as_ref())?;
                    ReportRow {
                        method: name.clone(),
                        param_id: id,
                        eps_abs: e.eps_abs,
                        eps_rel: e.eps_rel,
                        wall_seconds: secs,
                        iterations,
                        series: e.rel_series,
                        failure: None,
                    }
                }
                Err(msg) => {
                    warn!("{name} failed on parameter {id}: {msg}");
                    ReportRow {
                        method: name.clone(),
                        param_id: id,
                        eps_abs: f64::NAN,
                        eps_rel: f64::NAN,
                        wall_seconds: f64::NAN,
                        iterations: 0,
                        series: Vec::new(),
                        failure: Some(msg),
                    }
                }
            };
            report.rows.push(row);
        }
    }
    report.hyromnet_assembly_calls = assembly.get();
    report.summarize();
    Ok(report)
}

/// Writes `report.csv`, `summary.txt`, `online_timing.csv` and
/// `errors_<method>.csv` (relative error per step) into `dir`.
pub fn save_report(dir: &Path, report: &ErrorReport) -> Result<(), BenchError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("report.csv"), report.to_csv())?;
    fs::write(dir.join("summary.txt"), report.summary_table())?;
    fs::write(dir.join("online_timing.csv"), report.timing().to_csv())?;
    for m in &report.summary {
        let mut s = String::from("param_id,step,eps_rel\n");
        for r in report.rows.iter().filter(|r| r.method == m.method) {
            for (n, e) in r.series.iter().enumerate() {
                let _ = writeln!(s, "{},{},{e:e}", r.param_id, n + 1);
            }
        }
        let file: String = m.method.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect();
        fs::write(dir.join(format!("errors_{file}.csv")), s)?;
    }
    Ok(())
}

/// Reads a `report.csv` back into rows (series are not stored there).
pub fn read_report_csv(text: &str) -> Result<ErrorReport, BenchError> {
    let mut report = ErrorReport::default();
    for line in text.lines().skip(1).filter(|l| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || BenchError::Manifest(format!("bad report line {line:?}"));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        let eps_abs = num(f[2])?;
        report.rows.push(ReportRow {
            method: f[0].into(),
            param_id: f[1].trim().parse().map_err(|_| bad())?,
            eps_abs,
            eps_rel: num(f[3])?,
            wall_seconds: num(f[4])?,
            iterations: 0,
            series: Vec::new(),
            failure: eps_abs.is_nan().then(|| "failed".to_string()),
        });
    }
    report.summarize();
    Ok(report)
}
