//! Batched layer kernels. Activations are stored sample-contiguous:
//! sample `b`, feature `f` lives at `b * width + f`; convolutional features
//! are channel-major with row-major spatial layout.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Identity,
    Elu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Self::Identity => x,
            Self::Elu => {
                if x > 0.0 {
                    x
                } else {
                    x.exp_m1()
                }
            }
        }
    }

    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    x.exp()
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        inputs: usize,
        outputs: usize,
        act: Activation,
    },
    /// Square convolution, weights `[out][in][kernel][kernel]`.
    Conv {
        in_ch: usize,
        out_ch: usize,
        in_side: usize,
        out_side: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
    /// Transposed convolution (adjoint of `Conv` with the same geometry),
    /// weights `[in][out][kernel][kernel]`; outputs past `out_side` are
    /// dropped.
    ConvT {
        in_ch: usize,
        out_ch: usize,
        in_side: usize,
        out_side: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        act: Activation,
    },
}

impl LayerSpec {
    pub fn input_width(&self) -> usize {
        match *self {
            Self::Dense { inputs, .. } => inputs,
            Self::Conv { in_ch, in_side, .. } | Self::ConvT { in_ch, in_side, .. } => in_ch * in_side * in_side,
        }
    }

    pub fn output_width(&self) -> usize {
        match *self {
            Self::Dense { outputs, .. } => outputs,
            Self::Conv { out_ch, out_side, .. } | Self::ConvT { out_ch, out_side, .. } => out_ch * out_side * out_side,
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            Self::Dense { inputs, outputs, .. } => inputs * outputs + outputs,
            Self::Conv { in_ch, out_ch, kernel, .. } | Self::ConvT { in_ch, out_ch, kernel, .. } => {
                in_ch * out_ch * kernel * kernel + out_ch
            }
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Self::Dense { inputs, .. } => inputs,
            Self::Conv { in_ch, kernel, .. } | Self::ConvT { in_ch, kernel, .. } => in_ch * kernel * kernel,
        }
    }

    pub fn activation(&self) -> Activation {
        match *self {
            Self::Dense { act, .. } | Self::Conv { act, .. } | Self::ConvT { act, .. } => act,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::Dense { .. } => "dense",
            Self::Conv { .. } => "conv",
            Self::ConvT { .. } => "conv_t",
        }
    }

    /// Geometry consistency.
    pub fn check(&self) -> Result<(), String> {
        match *self {
            Self::Dense { inputs, outputs, .. } => {
                if inputs == 0 || outputs == 0 {
                    return Err("dense layer with zero width".into());
                }
            }
            Self::Conv {
                in_ch,
                out_ch,
                in_side,
                out_side,
                kernel,
                stride,
                pad,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 || in_side + 2 * pad < kernel {
                    return Err(format!("bad conv layer {self:?}"));
                }
                if (in_side + 2 * pad - kernel) / stride + 1 != out_side {
                    return Err(format!("conv output side mismatch in {self:?}"));
                }
            }
            Self::ConvT {
                in_ch,
                out_ch,
                in_side,
                out_side,
                kernel,
                stride,
                pad,
                ..
            } => {
                if in_ch == 0 || out_ch == 0 || kernel == 0 || stride == 0 || in_side == 0 {
                    return Err(format!("bad transposed conv layer {self:?}"));
                }
                let full = ((in_side - 1) * stride + kernel).saturating_sub(pad);
                if out_side == 0 || out_side > full {
                    return Err(format!("transposed conv output side mismatch in {self:?}"));
                }
            }
        }
        Ok(())
    }
}

/// Pre-activations of `spec` applied to `x` (batch of `batch` samples).
/// Kernel taps linking a strided grid (`small`) to the grid it is sampled
/// from (`big`): position `(i, j)` of `small` reads `(s i + a − p, s j + c − p)`
/// of `big`. Entries are `[small index, big index, a k + c]`.
fn taps(small_side: usize, big_side: usize, kernel: usize, stride: usize, pad: usize) -> Vec<[u32; 3]> {
    let mut t = Vec::with_capacity(small_side * small_side * kernel * kernel);
    let inside = |v: usize| v >= pad && v - pad < big_side;
    for i in 0..small_side {
        for j in 0..small_side {
            for a in 0..kernel {
                for c in 0..kernel {
                    let (r, s) = (stride * i + a, stride * j + c);
                    if inside(r) && inside(s) {
                        let big = (r - pad) * big_side + (s - pad);
                        t.push([(i * small_side + j) as u32, big as u32, (a * kernel + c) as u32]);
                    }
                }
            }
        }
    }
    t
}

/// Dot product with four independent accumulators so the loop vectorizes.
#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0; 4];
    let split = n - n % 4;
    for (ca, cb) in a[..split].chunks_exact(4).zip(b[..split].chunks_exact(4)) {
        for l in 0..4 {
            acc[l] += ca[l] * cb[l];
        }
    }
    let mut tail = 0.0;
    for i in split..n {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub(crate) fn linear_forward(spec: &LayerSpec, w: &[f64], x: &[f64], batch: usize, out: &mut Vec<f64>) {
    let (win, wout) = (spec.input_width(), spec.output_width());
    out.clear();
    out.resize(batch * wout, 0.0);
    match *spec {
        LayerSpec::Dense { inputs, outputs, .. } => {
            let (wm, bias) = w.split_at(inputs * outputs);
            let mut b = 0;
            // four samples per pass share each weight row
            while b + 4 <= batch {
                let xs: [&[f64]; 4] = std::array::from_fn(|l| &x[(b + l) * win..(b + l + 1) * win]);
                for o in 0..outputs {
                    let row = &wm[o * inputs..(o + 1) * inputs];
                    let mut acc = [0.0; 4];
                    for (i, &wi) in row.iter().enumerate() {
                        for l in 0..4 {
                            acc[l] += wi * xs[l][i];
                        }
                    }
                    for l in 0..4 {
                        out[(b + l) * wout + o] = bias[o] + acc[l];
                    }
                }
                b += 4;
            }
            for b in b..batch {
                let xb = &x[b * win..(b + 1) * win];
                let yb = &mut out[b * wout..(b + 1) * wout];
                for o in 0..outputs {
                    let row = &wm[o * inputs..(o + 1) * inputs];
                    yb[o] = bias[o] + dot(row, xb);
                }
            }
        }
        LayerSpec::Conv {
            in_ch,
            out_ch,
            in_side,
            out_side,
            kernel,
            stride,
            pad,
            ..
        } => {
            let k2 = kernel * kernel;
            let bias = &w[in_ch * out_ch * k2..];
            let t = taps(out_side, in_side, kernel, stride, pad);
            let (so, si) = (out_side * out_side, in_side * in_side);
            for b in 0..batch {
                let xb = &x[b * win..(b + 1) * win];
                let yb = &mut out[b * wout..(b + 1) * wout];
                for co in 0..out_ch {
                    let yc = &mut yb[co * so..(co + 1) * so];
                    yc.fill(bias[co]);
                    for ci in 0..in_ch {
                        let wk = &w[(co * in_ch + ci) * k2..(co * in_ch + ci + 1) * k2];
                        let xc = &xb[ci * si..(ci + 1) * si];
                        for &[small, big, kk] in &t {
                            yc[small as usize] += wk[kk as usize] * xc[big as usize];
                        }
                    }
                }
            }
        }
        LayerSpec::ConvT {
            in_ch,
            out_ch,
            in_side,
            out_side,
            kernel,
            stride,
            pad,
            ..
        } => {
            let k2 = kernel * kernel;
            let bias = &w[in_ch * out_ch * k2..];
            let t = taps(in_side, out_side, kernel, stride, pad);
            let (so, si) = (out_side * out_side, in_side * in_side);
            for b in 0..batch {
                let xb = &x[b * win..(b + 1) * win];
                let yb = &mut out[b * wout..(b + 1) * wout];
                for co in 0..out_ch {
                    let yc = &mut yb[co * so..(co + 1) * so];
                    yc.fill(bias[co]);
                    for ci in 0..in_ch {
                        let wk = &w[(ci * out_ch + co) * k2..(ci * out_ch + co + 1) * k2];
                        let xc = &xb[ci * si..(ci + 1) * si];
                        for &[small, big, kk] in &t {
                            yc[big as usize] += wk[kk as usize] * xc[small as usize];
                        }
                    }
                }
            }
        }
    }
}

/// Applies the activation in place of a copy of the pre-activations.
pub(crate) fn activate(act: Activation, pre: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(pre.iter().map(|&v| act.apply(v)));
}

/// Backward pass of one layer. `dy` is the gradient with respect to the
/// activated output; it is overwritten with the pre-activation gradient.
/// Weight gradients are accumulated into `gw`; the input gradient is
/// written to `dx` when requested.
pub(crate) fn layer_backward(
    spec: &LayerSpec,
    w: &[f64],
    x: &[f64],
    pre: &[f64],
    dy: &mut [f64],
    batch: usize,
    gw: &mut [f64],
    dx: Option<&mut Vec<f64>>,
) {
    let act = spec.activation();
    if act != Activation::Identity {
        for (d, &p) in dy.iter_mut().zip(pre) {
            *d *= act.derivative(p);
        }
    }
    let (win, wout) = (spec.input_width(), spec.output_width());
    let mut dx = dx.map(|v| {
        v.clear();
        v.resize(batch * win, 0.0);
        v
    });
    match *spec {
        LayerSpec::Dense { inputs, outputs, .. } => {
            let (wm, _) = w.split_at(inputs * outputs);
            let (gm, gb) = gw.split_at_mut(inputs * outputs);
            for b in 0..batch {
                for (g, d) in gb.iter_mut().zip(&dy[b * wout..(b + 1) * wout]) {
                    *g += d;
                }
            }
            let mut b = 0;
            while b + 4 <= batch {
                let xs: [&[f64]; 4] = std::array::from_fn(|l| &x[(b + l) * win..(b + l + 1) * win]);
                for o in 0..outputs {
                    let g: [f64; 4] = std::array::from_fn(|l| dy[(b + l) * wout + o]);
                    let grow = &mut gm[o * inputs..(o + 1) * inputs];
                    for (i, gi) in grow.iter_mut().enumerate() {
                        *gi += g[0] * xs[0][i] + g[1] * xs[1][i] + g[2] * xs[2][i] + g[3] * xs[3][i];
                    }
                }
                b += 4;
            }
            for b in b..batch {
                let xb = &x[b * win..(b + 1) * win];
                for o in 0..outputs {
                    let g = dy[b * wout + o];
                    let grow = &mut gm[o * inputs..(o + 1) * inputs];
                    for (gi, xi) in grow.iter_mut().zip(xb) {
                        *gi += g * xi;
                    }
                }
            }
            if let Some(dx) = dx.as_mut() {
                for b in 0..batch {
                    let dxb = &mut dx[b * win..(b + 1) * win];
                    let db = &dy[b * wout..(b + 1) * wout];
                    let mut o = 0;
                    while o + 4 <= outputs {
                        let rows: [&[f64]; 4] = std::array::from_fn(|l| &wm[(o + l) * inputs..(o + l + 1) * inputs]);
                        let g = [db[o], db[o + 1], db[o + 2], db[o + 3]];
                        for (i, d) in dxb.iter_mut().enumerate() {
                            *d += g[0] * rows[0][i] + g[1] * rows[1][i] + g[2] * rows[2][i] + g[3] * rows[3][i];
                        }
                        o += 4;
                    }
                    for o in o..outputs {
                        let row = &wm[o * inputs..(o + 1) * inputs];
                        for (d, wi) in dxb.iter_mut().zip(row) {
                            *d += db[o] * wi;
                        }
                    }
                }
            }
        }
        LayerSpec::Conv {
            in_ch,
            out_ch,
            in_side,
            out_side,
            kernel,
            stride,
            pad,
            ..
        } => {
            let k2 = kernel * kernel;
            let nw = in_ch * out_ch * k2;
            let t = taps(out_side, in_side, kernel, stride, pad);
            let (so, si) = (out_side * out_side, in_side * in_side);
            let (gm, gb) = gw.split_at_mut(nw);
            for b in 0..batch {
                let xb = &x[b * win..(b + 1) * win];
                let db = &dy[b * wout..(b + 1) * wout];
                for co in 0..out_ch {
                    let dc = &db[co * so..(co + 1) * so];
                    gb[co] += dc.iter().sum::<f64>();
                    for ci in 0..in_ch {
                        let off = (co * in_ch + ci) * k2;
                        let gk = &mut gm[off..off + k2];
                        let xc = &xb[ci * si..(ci + 1) * si];
                        for &[small, big, kk] in &t {
                            gk[kk as usize] += dc[small as usize] * xc[big as usize];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wk = &w[off..off + k2];
                            let dxc = &mut dx[b * win + ci * si..b * win + (ci + 1) * si];
                            for &[small, big, kk] in &t {
                                dxc[big as usize] += dc[small as usize] * wk[kk as usize];
                            }
                        }
                    }
                }
            }
        }
        LayerSpec::ConvT {
            in_ch,
            out_ch,
            in_side,
            out_side,
            kernel,
            stride,
            pad,
            ..
        } => {
            let k2 = kernel * kernel;
            let nw = in_ch * out_ch * k2;
            let t = taps(in_side, out_side, kernel, stride, pad);
            let (so, si) = (out_side * out_side, in_side * in_side);
            let (gm, gb) = gw.split_at_mut(nw);
            for b in 0..batch {
                let xb = &x[b * win..(b + 1) * win];
                let db = &dy[b * wout..(b + 1) * wout];
                for co in 0..out_ch {
                    let dc = &db[co * so..(co + 1) * so];
                    gb[co] += dc.iter().sum::<f64>();
                    for ci in 0..in_ch {
                        let off = (ci * out_ch + co) * k2;
                        let gk = &mut gm[off..off + k2];
                        let xc = &xb[ci * si..(ci + 1) * si];
                        for &[small, big, kk] in &t {
                            gk[kk as usize] += dc[big as usize] * xc[small as usize];
                        }
                        if let Some(dx) = dx.as_mut() {
                            let wk = &w[off..off + k2];
                            let dxc = &mut dx[b * win + ci * si..b * win + (ci + 1) * si];
                            for &[small, big, kk] in &t {
                                dxc[small as usize] += dc[big as usize] * wk[kk as usize];
                            }
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        assert_eq!(Activation::Elu.apply(2.0), 2.0);
        assert!((Activation::Elu.apply(-1.0) - ((-1f64).exp() - 1.0)).abs() < 1e-16);
        assert_eq!(Activation::Elu.derivative(0.5), 1.0);
    }

    #[test]
    fn conv_geometry() {
        let c = LayerSpec::Conv {
            in_ch: 1,
            out_ch: 8,
            in_side: 5,
            out_side: 3,
            kernel: 3,
            stride: 2,
            pad: 1,
            act: Activation::Elu,
        };
        assert!(c.check().is_ok());
        assert_eq!(c.param_count(), 8 * 9 + 8);
        let t = LayerSpec::ConvT {
            in_ch: 8,
            out_ch: 1,
            in_side: 3,
            out_side: 5,
            kernel: 3,
            stride: 2,
            pad: 1,
            act: Activation::Identity,
        };
        assert!(t.check().is_ok());
        let bad = LayerSpec::ConvT {
            in_ch: 8,
            out_ch: 1,
            in_side: 3,
            out_side: 7,
            kernel: 3,
            stride: 2,
            pad: 1,
            act: Activation::Identity,
        };
        assert!(bad.check().is_err());
    }

    /// `<conv(x), y> = <x, conv_t(y)>` for bias-free layers sharing weights.
    #[test]
    fn transposed_conv_is_adjoint() {
        let (ci, co, si, so) = (2, 3, 5, 3);
        let conv = LayerSpec::Conv {
            in_ch: ci,
            out_ch: co,
            in_side: si,
            out_side: so,
            kernel: 3,
            stride: 2,
            pad: 1,
            act: Activation::Identity,
        };
        let convt = LayerSpec::ConvT {
            in_ch: co,
            out_ch: ci,
            in_side: so,
            out_side: si,
            kernel: 3,
            stride: 2,
            pad: 1,
            act: Activation::Identity,
        };
        // conv weights [co][ci][k][k] read as conv_t weights [in=co][out=ci][k][k]
        let mut w: Vec<f64> = (0..co * ci * 9).map(|i| ((i * 37 % 11) as f64 - 5.0) / 7.0).collect();
        let wt = {
            let mut v = w.clone();
            v.extend(std::iter::repeat(0.0).take(ci));
            v
        };
        w.extend(std::iter::repeat(0.0).take(co));
        let x: Vec<f64> = (0..ci * si * si).map(|i| ((i * 13 % 7) as f64) - 3.0).collect();
        let y: Vec<f64> = (0..co * so * so).map(|i| ((i * 5 % 9) as f64) - 4.0).collect();
        let mut cx = Vec::new();
        linear_forward(&conv, &w, &x, 1, &mut cx);
        let mut ty = Vec::new();
        linear_forward(&convt, &wt, &y, 1, &mut ty);
        let lhs: f64 = cx.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&ty).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12 * lhs.abs().max(1.0));
    }
}
