//! Neural surrogates of the reduced residual and Jacobian: a DFNN maps the
//! standardized `(μ, t, k)` input to a latent code that a decoder expands
//! into the (padded) output; an encoder of the outputs supplies the latent
//! targets during training only.

pub mod layers;
mod train;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layers::{Activation, LayerSpec};
pub use train::{loss_eval, loss_grad, train, train_pair, EpochRecord, TrainConfig, TrainHistory};

use crate::linalg::DenseMatrix;
use crate::rom::OperatorSnapshotSet;
use layers::{activate, linear_forward};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DnnError {
    #[error("invalid network spec: {0}")]
    BadSpec(String),
    #[error("weights of length {got} do not match the network spec ({want})")]
    WeightLength { got: usize, want: usize },
    #[error("input of length {got}, expected {want}")]
    InputLength { got: usize, want: usize },
    #[error("non-finite activation in {stage} layer {layer}")]
    NonFinite { stage: &'static str, layer: usize },
    #[error("padded side {side} too small for length {len}")]
    PadTooSmall { side: usize, len: usize },
    #[error("empty training set")]
    Empty,
    #[error("inputs have {inputs} columns, targets {targets}")]
    ColumnMismatch { inputs: usize, targets: usize },
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("training diverged at epoch {epoch}")]
    Divergent { epoch: usize, history: TrainHistory },
}

/// Per-feature mean and standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl NormStats {
    /// Statistics of the columns `cols` of `data` (features in rows). The
    /// sample deviation uses `n − 1`; zero deviations become 1.
    pub fn fit(data: &DenseMatrix, cols: &[usize]) -> Self {
        let f = data.rows();
        let n = cols.len().max(1) as f64;
        let mut mean = vec![0.0; f];
        for &j in cols {
            for (m, v) in mean.iter_mut().zip(data.col(j)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; f];
        for &j in cols {
            for ((s, v), m) in var.iter_mut().zip(data.col(j)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = if cols.len() > 1 { (s / (n - 1.0)).sqrt() } else { 0.0 };
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn identity(f: usize) -> Self {
        Self {
            mean: vec![0.0; f],
            sd: vec![1.0; f],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn invert(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.sd).map(|((v, m), s)| v * s + m).collect()
    }

    pub fn apply_matrix(&self, m: &DenseMatrix) -> DenseMatrix {
        let mut out = m.clone();
        for j in 0..m.cols() {
            let c = self.apply(m.col(j));
            out.col_mut(j).copy_from_slice(&c);
        }
        out
    }

    pub fn invert_matrix(&self, m: &DenseMatrix) -> DenseMatrix {
        let mut out = m.clone();
        for j in 0..m.cols() {
            let c = self.invert(m.col(j));
            out.col_mut(j).copy_from_slice(&c);
        }
        out
    }
}

/// Smallest `s` with `s² ≥ len`.
pub fn padded_side(len: usize) -> usize {
    let mut s = (len as f64).sqrt().floor() as usize;
    while s * s < len {
        s += 1;
    }
    s.max(1)
}

/// Row-major `s × s` grid of `x` followed by zeros (flattened).
pub fn reshape_pad(x: &[f64], side: usize) -> Result<Vec<f64>, DnnError> {
    if side * side < x.len() {
        return Err(DnnError::PadTooSmall { side, len: x.len() });
    }
    let mut g = x.to_vec();
    g.resize(side * side, 0.0);
    Ok(g)
}

/// First `len` entries of a flattened row-major grid.
pub fn unpad_flatten(grid: &[f64], len: usize) -> Vec<f64> {
    grid[..len].to_vec()
}

pub use crate::rom::{unvec_matrix as unvec, vec_matrix as vec};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecoderKind {
    /// Dense to an 8-channel feature map, then two stride-2 transposed
    /// convolutions.
    Conv,
    /// Three hidden dense layers of 100 units.
    Dense,
    /// `Conv` unless the padded side is at most 4.
    Auto,
}

impl DecoderKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conv" => Some(Self::Conv),
            "dense" => Some(Self::Dense),
            "auto" => Some(Self::Auto),
            _ => None,
        }
    }
}

/// Architecture hyperparameters from which a [`NetworkSpec`] is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub dfnn_width: usize,
    pub dfnn_depth: usize,
    /// Latent size; 0 means the input size.
    pub latent: usize,
    pub decoder: DecoderKind,
    pub channels: usize,
    pub dense_width: usize,
    pub dense_depth: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            dfnn_width: 50,
            dfnn_depth: 4,
            latent: 0,
            decoder: DecoderKind::Auto,
            channels: 8,
            dense_width: 100,
            dense_depth: 3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub latent_dim: usize,
    pub output_dim: usize,
    pub padded_side: usize,
    pub dfnn: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub encoder: Vec<LayerSpec>,
}

fn dense(inputs: usize, outputs: usize, act: Activation) -> LayerSpec {
    LayerSpec::Dense { inputs, outputs, act }
}

fn mlp(widths: &[usize]) -> Vec<LayerSpec> {
    let n = widths.len() - 1;
    (0..n)
        .map(|i| {
            let act = if i + 1 == n { Activation::Identity } else { Activation::Elu };
            dense(widths[i], widths[i + 1], act)
        })
        .collect()
}

impl NetworkSpec {
    pub fn build(input_dim: usize, output_dim: usize, arch: &ArchConfig) -> Result<Self, DnnError> {
        if input_dim == 0 || output_dim == 0 || arch.dfnn_width == 0 {
            return Err(DnnError::BadSpec("zero dimension".into()));
        }
        let q = if arch.latent == 0 { input_dim } else { arch.latent };
        let s = padded_side(output_dim);
        let mut widths = vec![input_dim];
        widths.extend(std::iter::repeat(arch.dfnn_width).take(arch.dfnn_depth));
        widths.push(q);
        let dfnn = mlp(&widths);

        let use_conv = match arch.decoder {
            DecoderKind::Conv => true,
            DecoderKind::Dense => false,
            DecoderKind::Auto => s > 4,
        };
        let (decoder, encoder) = if use_conv {
            let c = arch.channels.max(1);
            // stride-2 halvings of the grid, rounded up
            let s1 = s.div_ceil(2);
            let s2 = s1.div_ceil(2);
            let conv = |in_ch, out_ch, in_side, out_side, act| LayerSpec::Conv {
                in_ch,
                out_ch,
                in_side,
                out_side,
                kernel: 3,
                stride: 2,
                pad: 1,
                act,
            };
            let convt = |in_ch, out_ch, in_side, out_side, act| LayerSpec::ConvT {
                in_ch,
                out_ch,
                in_side,
                out_side,
                kernel: 3,
                stride: 2,
                pad: 1,
                act,
            };
            (
                vec![
                    dense(q, c * s2 * s2, Activation::Elu),
                    convt(c, c, s2, s1, Activation::Elu),
                    convt(c, 1, s1, s, Activation::Identity),
                ],
                vec![
                    conv(1, c, s, s1, Activation::Elu),
                    conv(c, c, s1, s2, Activation::Elu),
                    dense(c * s2 * s2, q, Activation::Identity),
                ],
            )
        } else {
            let mut dw = vec![q];
            dw.extend(std::iter::repeat(arch.dense_width).take(arch.dense_depth));
            dw.push(s * s);
            let mut ew = dw.clone();
            ew.reverse();
            (mlp(&dw), mlp(&ew))
        };
        let spec = Self {
            input_dim,
            latent_dim: q,
            output_dim,
            padded_side: s,
            dfnn,
            decoder,
            encoder,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), DnnError> {
        let bad = |m: String| Err(DnnError::BadSpec(m));
        if self.latent_dim == 0 {
            return bad("latent dimension 0".into());
        }
        if self.padded_side * self.padded_side < self.output_dim {
            return bad("padded side too small".into());
        }
        let chain = |layers: &[LayerSpec], from: usize, to: usize, name: &str| -> Result<(), DnnError> {
            if layers.is_empty() {
                return Err(DnnError::BadSpec(format!("{name} has no layers")));
            }
            let mut w = from;
            for l in layers {
                l.check().map_err(DnnError::BadSpec)?;
                if l.input_width() != w {
                    return Err(DnnError::BadSpec(format!("{name}: width {w} feeds {l:?}")));
                }
                w = l.output_width();
            }
            if w != to {
                return Err(DnnError::BadSpec(format!("{name} ends at width {w}, expected {to}")));
            }
            Ok(())
        };
        let grid = self.padded_side * self.padded_side;
        chain(&self.dfnn, self.input_dim, self.latent_dim, "dfnn")?;
        chain(&self.decoder, self.latent_dim, grid, "decoder")?;
        chain(&self.encoder, grid, self.latent_dim, "encoder")
    }

    pub fn layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.dfnn.iter().chain(&self.decoder).chain(&self.encoder)
    }

    pub fn param_count(&self) -> usize {
        self.layers().map(|l| l.param_count()).sum()
    }

    pub fn descriptor(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_descriptor(s: &str) -> Result<Self, DnnError> {
        let spec: Self = serde_json::from_str(s).map_err(|e| DnnError::BadSpec(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    /// One-line human summary for run headers.
    pub fn summary(&self) -> String {
        let kinds = |ls: &[LayerSpec]| ls.iter().map(|l| format!("{}:{}", l.kind(), l.output_width())).collect::<Vec<_>>().join(",");
        format!(
            "in={} q={} out={} side={} dfnn=[{}] dec=[{}] enc=[{}] params={}",
            self.input_dim,
            self.latent_dim,
            self.output_dim,
            self.padded_side,
            kinds(&self.dfnn),
            kinds(&self.decoder),
            kinds(&self.encoder),
            self.param_count()
        )
    }
}

/// Flat parameter vector; layers are stored in dfnn, decoder, encoder
/// order, each as weights then biases.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkWeights {
    pub data: Vec<f64>,
    pub offsets: Vec<usize>,
    pub seed: u64,
}

impl NetworkWeights {
    fn offsets(spec: &NetworkSpec) -> Vec<usize> {
        let mut off = vec![0];
        for l in spec.layers() {
            off.push(off.last().unwrap() + l.param_count());
        }
        off
    }

    /// Uniform He-style initialization `U(−√(6/fan_in), √(6/fan_in))` with
    /// zero biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let offsets = Self::offsets(spec);
        let mut data = vec![0.0; *offsets.last().unwrap()];
        for (i, l) in spec.layers().enumerate() {
            let bound = (6.0 / l.fan_in() as f64).sqrt();
            let nw = l.param_count() - l.output_width_channels();
            for v in &mut data[offsets[i]..offsets[i] + nw] {
                *v = rng.gen_range(-bound..bound);
            }
        }
        Self { data, offsets, seed }
    }

    pub fn from_data(spec: &NetworkSpec, data: Vec<f64>, seed: u64) -> Result<Self, DnnError> {
        let offsets = Self::offsets(spec);
        let want = *offsets.last().unwrap();
        if data.len() != want {
            return Err(DnnError::WeightLength { got: data.len(), want });
        }
        Ok(Self { data, offsets, seed })
    }

    pub fn layer(&self, i: usize) -> &[f64] {
        &self.data[self.offsets[i]..self.offsets[i + 1]]
    }
}

impl LayerSpec {
    /// Number of bias entries.
    pub fn output_width_channels(&self) -> usize {
        match *self {
            LayerSpec::Dense { outputs, .. } => outputs,
            LayerSpec::Conv { out_ch, .. } | LayerSpec::ConvT { out_ch, .. } => out_ch,
        }
    }
}

/// Intermediate values of a stack of layers for backpropagation.
#[derive(Default)]
pub(crate) struct Tape {
    pub inputs: Vec<Vec<f64>>,
    pub pres: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

pub(crate) fn stack_forward(
    layers: &[LayerSpec],
    weights: &NetworkWeights,
    first: usize,
    x: &[f64],
    batch: usize,
    tape: &mut Tape,
) {
    tape.inputs.resize_with(layers.len(), Vec::new);
    tape.pres.resize_with(layers.len(), Vec::new);
    let mut cur = x.to_vec();
    for (i, l) in layers.iter().enumerate() {
        let mut pre = std::mem::take(&mut tape.pres[i]);
        linear_forward(l, weights.layer(first + i), &cur, batch, &mut pre);
        let mut out = Vec::new();
        activate(l.activation(), &pre, &mut out);
        tape.inputs[i] = std::mem::replace(&mut cur, out);
        tape.pres[i] = pre;
    }
    tape.output = cur;
}

/// Backpropagates `dy` through the stack; returns the input gradient when
/// `want_dx`.
pub(crate) fn stack_backward(
    layers: &[LayerSpec],
    weights: &NetworkWeights,
    first: usize,
    tape: &Tape,
    mut dy: Vec<f64>,
    batch: usize,
    grad: &mut [f64],
    want_dx: bool,
) -> Option<Vec<f64>> {
    for i in (0..layers.len()).rev() {
        let (a, b) = (weights.offsets[first + i], weights.offsets[first + i + 1]);
        let need = want_dx || i > 0;
        let mut dx = Vec::new();
        layers::layer_backward(
            &layers[i],
            weights.layer(first + i),
            &tape.inputs[i],
            &tape.pres[i],
            &mut dy,
            batch,
            &mut grad[a..b],
            need.then_some(&mut dx),
        );
        if !need {
            return None;
        }
        dy = dx;
    }
    Some(dy)
}

/// A trained network with its normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetworkSpec,
    pub weights: NetworkWeights,
    pub input_stats: NormStats,
    pub output_stats: NormStats,
}

impl Network {
    pub fn new(spec: NetworkSpec, weights: NetworkWeights, input_stats: NormStats, output_stats: NormStats) -> Result<Self, DnnError> {
        spec.validate()?;
        let want = spec.param_count();
        if weights.data.len() != want {
            return Err(DnnError::WeightLength {
                got: weights.data.len(),
                want,
            });
        }
        if input_stats.dim() != spec.input_dim || output_stats.dim() != spec.output_dim {
            return Err(DnnError::BadSpec("statistics do not match the network spec".into()));
        }
        Ok(Self {
            spec,
            weights,
            input_stats,
            output_stats,
        })
    }

    /// Inference: standardize, DFNN, decoder, unpad, de-standardize. The
    /// encoder is not used.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, DnnError> {
        if input.len() != self.spec.input_dim {
            return Err(DnnError::InputLength {
                got: input.len(),
                want: self.spec.input_dim,
            });
        }
        let mut cur = self.input_stats.apply(input);
        let mut pre = Vec::new();
        let stages = [("dfnn", &self.spec.dfnn, 0), ("decoder", &self.spec.decoder, self.spec.dfnn.len())];
        for (stage, layers, first) in stages {
            for (i, l) in layers.iter().enumerate() {
                linear_forward(l, self.weights.layer(first + i), &cur, 1, &mut pre);
                activate(l.activation(), &pre, &mut cur);
                if cur.iter().any(|v| !v.is_finite()) {
                    return Err(DnnError::NonFinite { stage, layer: i });
                }
            }
        }
        Ok(self.output_stats.invert(&unpad_flatten(&cur, self.spec.output_dim)))
    }
}

/// Residual and Jacobian networks sharing the `(μ, t, k)` input.
#[derive(Clone, Debug, PartialEq)]
pub struct SurrogatePair {
    pub residual: Network,
    pub jacobian: Network,
    /// Largest Newton index seen in training.
    pub max_k: usize,
}

impl SurrogatePair {
    pub fn reduced_dim(&self) -> usize {
        self.residual.spec.output_dim
    }

    pub fn check(&self) -> Result<(), DnnError> {
        let n = self.reduced_dim();
        if self.jacobian.spec.output_dim != n * n || self.jacobian.spec.input_dim != self.residual.spec.input_dim {
            return Err(DnnError::BadSpec(format!(
                "residual net outputs {n}, jacobian net {}",
                self.jacobian.spec.output_dim
            )));
        }
        Ok(())
    }
}

/// Specs for a residual/Jacobian pair trained on `set`.
pub fn pair_specs(set: &OperatorSnapshotSet, arch: &ArchConfig) -> Result<(NetworkSpec, NetworkSpec), DnnError> {
    let input = set.inputs.rows();
    let n = set.reduced_dim();
    Ok((NetworkSpec::build(input, n, arch)?, NetworkSpec::build(input, n * n, arch)?))
}
