//! Loss, gradients and the minibatch Adam training loop.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stack_backward, stack_forward, DnnError, Network, NetworkSpec, NetworkWeights, NormStats, SurrogatePair, Tape};
use crate::linalg::DenseMatrix;
use crate::rom::OperatorSnapshotSet;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Fraction of samples used for training; the rest validates.
    pub alpha: f64,
    pub eta: f64,
    pub batch: usize,
    pub epochs: usize,
    pub omega_h: f64,
    pub patience: usize,
    /// Epochs without validation improvement before `eta` is scaled by
    /// `lr_decay`; 0 keeps the rate constant.
    pub lr_patience: usize,
    pub lr_decay: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            eta: 1e-3,
            batch: 64,
            epochs: 500,
            omega_h: 0.5,
            patience: 200,
            lr_patience: 0,
            lr_decay: 0.5,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), DnnError> {
        let bad = |m: &str| Err(DnnError::BadConfig(m.into()));
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        if self.batch == 0 {
            return bad("batch size must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.omega_h) {
            return bad("omega_h must lie in [0, 1]");
        }
        if !(self.eta > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_indices: Vec<usize>,
    pub val_indices: Vec<usize>,
    pub seconds: f64,
}

impl TrainHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs.get(self.best_epoch).map_or(f64::NAN, |r| r.val_loss)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:e},{:e}\n", r.epoch, r.train_loss, r.val_loss));
        }
        s
    }
}

/// Loss of a batch of standardized samples and, when `grad` is given, its
/// gradient (accumulated, so the caller zeroes it).
///
/// Per sample: `ω/2 ‖y − ŷ‖² + (1 − ω)/2 ‖z − e‖²` with `z` the DFNN
/// output, `ŷ` the decoded (unpadded) output and `e` the encoding of the
/// padded target; averaged over the batch.
pub fn loss_grad(
    spec: &NetworkSpec,
    weights: &NetworkWeights,
    xs: &[f64],
    ys: &[f64],
    batch: usize,
    omega: f64,
    mut grad: Option<&mut [f64]>,
) -> f64 {
    let l = spec.output_dim;
    let q = spec.latent_dim;
    let grid = spec.padded_side * spec.padded_side;
    let inv = 1.0 / batch as f64;
    let dec0 = spec.dfnn.len();
    let enc0 = dec0 + spec.decoder.len();

    let mut t_dfnn = Tape::default();
    stack_forward(&spec.dfnn, weights, 0, xs, batch, &mut t_dfnn);
    let z = &t_dfnn.output;

    let mut loss = 0.0;
    let mut dz = vec![0.0; batch * q];
    if omega > 0.0 {
        let mut t_dec = Tape::default();
        stack_forward(&spec.decoder, weights, dec0, z, batch, &mut t_dec);
        let mut dyhat = vec![0.0; batch * grid];
        for b in 0..batch {
            let yh = &t_dec.output[b * grid..b * grid + l];
            let y = &ys[b * l..(b + 1) * l];
            for i in 0..l {
                let d = yh[i] - y[i];
                loss += 0.5 * omega * inv * d * d;
                dyhat[b * grid + i] = omega * inv * d;
            }
        }
        if let Some(g) = grad.as_deref_mut() {
            dz = stack_backward(&spec.decoder, weights, dec0, &t_dec, dyhat, batch, g, true).expect("input gradient");
        }
    }
    if omega < 1.0 {
        let mut padded = vec![0.0; batch * grid];
        for b in 0..batch {
            padded[b * grid..b * grid + l].copy_from_slice(&ys[b * l..(b + 1) * l]);
        }
        let mut t_enc = Tape::default();
        stack_forward(&spec.encoder, weights, enc0, &padded, batch, &mut t_enc);
        let mut de = vec![0.0; batch * q];
        for i in 0..batch * q {
            let d = z[i] - t_enc.output[i];
            loss += 0.5 * (1.0 - omega) * inv * d * d;
            dz[i] += (1.0 - omega) * inv * d;
            de[i] = -(1.0 - omega) * inv * d;
        }
        if let Some(g) = grad.as_deref_mut() {
            stack_backward(&spec.encoder, weights, enc0, &t_enc, de, batch, g, false);
        }
    }
    if let Some(g) = grad {
        stack_backward(&spec.dfnn, weights, 0, &t_dfnn, dz, batch, g, false);
    }
    loss
}

pub fn loss_eval(spec: &NetworkSpec, weights: &NetworkWeights, xs: &[f64], ys: &[f64], batch: usize, omega: f64) -> f64 {
    loss_grad(spec, weights, xs, ys, batch, omega, None)
}

fn gather(m: &DenseMatrix, idx: &[usize], out: &mut Vec<f64>) {
    out.clear();
    for &j in idx {
        out.extend_from_slice(m.col(j));
    }
}

/// Mean per-sample loss over `idx`, in chunks.
fn dataset_loss(spec: &NetworkSpec, w: &NetworkWeights, x: &DenseMatrix, y: &DenseMatrix, idx: &[usize], omega: f64) -> f64 {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut total = 0.0;
    for chunk in idx.chunks(256) {
        gather(x, chunk, &mut xs);
        gather(y, chunk, &mut ys);
        total += loss_eval(spec, w, &xs, &ys, chunk.len(), omega) * chunk.len() as f64;
    }
    total / idx.len().max(1) as f64
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, cfg: &TrainConfig, eta: f64, theta: &mut [f64], g: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for i in 0..theta.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            theta[i] -= eta * mh / (vh.sqrt() + cfg.adam_eps);
        }
    }
}

/// Trains a network mapping the columns of `inputs` to the columns of
/// `targets`. Weights with the best validation loss are returned.
pub fn train(
    inputs: &DenseMatrix,
    targets: &DenseMatrix,
    spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<(Network, TrainHistory), DnnError> {
    config.validate()?;
    spec.validate()?;
    let ns = inputs.cols();
    if ns == 0 {
        return Err(DnnError::Empty);
    }
    if targets.cols() != ns {
        return Err(DnnError::ColumnMismatch {
            inputs: ns,
            targets: targets.cols(),
        });
    }
    if inputs.rows() != spec.input_dim || targets.rows() != spec.output_dim {
        return Err(DnnError::BadSpec(format!(
            "data is {}→{}, spec {}→{}",
            inputs.rows(),
            targets.rows(),
            spec.input_dim,
            spec.output_dim
        )));
    }
    let start = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut perm: Vec<usize> = (0..ns).collect();
    perm.shuffle(&mut rng);
    let n_train = if ns == 1 {
        1
    } else {
        ((config.alpha * ns as f64).round() as usize).clamp(1, ns - 1)
    };
    let train_idx = perm[..n_train].to_vec();
    let val_idx = if ns == 1 { train_idx.clone() } else { perm[n_train..].to_vec() };

    let in_stats = NormStats::fit(inputs, &train_idx);
    let out_stats = NormStats::fit(targets, &train_idx);
    let x = in_stats.apply_matrix(inputs);
    let y = out_stats.apply_matrix(targets);

    let mut weights = NetworkWeights::init(spec, config.seed);
    let mut best = weights.clone();
    let mut adam = Adam::new(weights.data.len());
    let mut grad = vec![0.0; weights.data.len()];
    let mut history = TrainHistory {
        train_indices: train_idx.clone(),
        val_indices: val_idx.clone(),
        ..Default::default()
    };
    let mut best_val = f64::INFINITY;
    let mut eta = config.eta;
    let mut last_change = 0;
    let mut order = train_idx.clone();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    info!("training {} ({} train / {} val samples)", spec.summary(), train_idx.len(), val_idx.len());

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut acc = 0.0;
        for chunk in order.chunks(config.batch) {
            gather(&x, chunk, &mut xs);
            gather(&y, chunk, &mut ys);
            grad.fill(0.0);
            let l = loss_grad(spec, &weights, &xs, &ys, chunk.len(), config.omega_h, Some(&mut grad));
            acc += l * chunk.len() as f64;
            adam.step(config, eta, &mut weights.data, &grad);
        }
        let train_loss = acc / order.len() as f64;
        let val_loss = dataset_loss(spec, &weights, &x, &y, &val_idx, config.omega_h);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if !train_loss.is_finite() || !val_loss.is_finite() || weights.data.iter().any(|w| !w.is_finite()) {
            history.seconds = start.elapsed().as_secs_f64();
            return Err(DnnError::Divergent { epoch, history });
        }
        if val_loss < best_val {
            best_val = val_loss;
            best.data.copy_from_slice(&weights.data);
            history.best_epoch = epoch;
            last_change = epoch;
        } else if epoch - history.best_epoch >= config.patience {
            history.stopped_early = true;
            debug!("early stop at epoch {epoch}, best {}", history.best_epoch);
            break;
        } else if config.lr_patience > 0 && epoch - last_change >= config.lr_patience {
            eta *= config.lr_decay;
            last_change = epoch;
            debug!("epoch {epoch}: learning rate {eta:.3e}");
        }
        if epoch % 50 == 0 {
            debug!("epoch {epoch}: train {train_loss:.3e} val {val_loss:.3e}");
        }
    }
    history.seconds = start.elapsed().as_secs_f64();
    let net = Network::new(spec.clone(), best, in_stats, out_stats)?;
    Ok((net, history))
}

/// Trains the residual network on `R_N` and the Jacobian network on
/// `vec(J_N)`, both from the shared input matrix.
pub fn train_pair(
    set: &OperatorSnapshotSet,
    specs: &(NetworkSpec, NetworkSpec),
    config: &TrainConfig,
) -> Result<(SurrogatePair, TrainHistory, TrainHistory), DnnError> {
    if set.is_empty() {
        return Err(DnnError::Empty);
    }
    for c in [set.residuals.cols(), set.jacobians.cols()] {
        if c != set.len() {
            return Err(DnnError::ColumnMismatch {
                inputs: set.len(),
                targets: c,
            });
        }
    }
    let (rn, rh) = train(&set.inputs, &set.residuals.data, &specs.0, config)?;
    let jcfg = TrainConfig {
        seed: config.seed.wrapping_add(1),
        ..config.clone()
    };
    let (jn, jh) = train(&set.inputs, &set.jacobians.data, &specs.1, &jcfg)?;
    let pair = SurrogatePair {
        residual: rn,
        jacobian: jn,
        max_k: set.max_k(),
    };
    pair.check()?;
    Ok((pair, rh, jh))
}
