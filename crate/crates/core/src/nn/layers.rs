//! Layer descriptions and the per-layer forward/backward kernels.

use crate::error::{Error, Result};

/// Activation shape: channels-first volume or a flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Volume { channels: usize, dims: [usize; 3] },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Volume { channels, dims } => channels * dims.iter().product::<usize>(),
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSpec {
    /// Stride 1, "same" zero padding.
    Conv3d { in_channels: usize, out_channels: usize, kernel: [usize; 3] },
    Fc { in_width: usize, out_width: usize },
    Relu,
    Flatten,
    /// Appends the side input vector to a flat activation.
    ConcatAux { width: usize },
    /// Loss head; the network's logits are the input of this layer.
    SoftmaxCe,
}

impl LayerSpec {
    pub fn is_parameterized(&self) -> bool {
        matches!(self, LayerSpec::Conv3d { .. } | LayerSpec::Fc { .. })
    }

    /// `(weight count, bias count)`.
    pub fn param_sizes(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Conv3d { in_channels, out_channels, kernel } => {
                (out_channels * in_channels * kernel.iter().product::<usize>(), out_channels)
            }
            LayerSpec::Fc { in_width, out_width } => (in_width * out_width, out_width),
            _ => (0, 0),
        }
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            LayerSpec::Conv3d { in_channels, kernel, .. } => in_channels * kernel.iter().product::<usize>(),
            LayerSpec::Fc { in_width, .. } => in_width,
            _ => 0,
        }
    }

    pub fn output_shape(&self, input: Shape) -> Result<Shape> {
        let mismatch = |msg: String| Err(Error::ShapeMismatch(msg));
        match (*self, input) {
            (LayerSpec::Conv3d { in_channels, out_channels, kernel }, Shape::Volume { channels, dims }) => {
                if channels != in_channels {
                    return mismatch(format!("conv3d expects {in_channels} channels, got {channels}"));
                }
                if kernel.iter().any(|k| k % 2 == 0) {
                    return mismatch(format!("same padding needs odd kernels, got {kernel:?}"));
                }
                if out_channels == 0 {
                    return mismatch("conv3d needs at least one filter".into());
                }
                Ok(Shape::Volume { channels: out_channels, dims })
            }
            (LayerSpec::Conv3d { .. }, Shape::Flat(_)) => mismatch("conv3d on a flat input".into()),
            (LayerSpec::Fc { in_width, out_width }, Shape::Flat(n)) => {
                if n != in_width || out_width == 0 {
                    return mismatch(format!("fc {in_width}->{out_width} fed {n} values"));
                }
                Ok(Shape::Flat(out_width))
            }
            (LayerSpec::Fc { .. }, Shape::Volume { .. }) => mismatch("fc on a volume; flatten first".into()),
            (LayerSpec::Relu, s) => Ok(s),
            (LayerSpec::Flatten, s) => Ok(Shape::Flat(s.len())),
            (LayerSpec::ConcatAux { width }, Shape::Flat(n)) => Ok(Shape::Flat(n + width)),
            (LayerSpec::ConcatAux { .. }, _) => mismatch("aux concatenation needs a flat input".into()),
            (LayerSpec::SoftmaxCe, Shape::Flat(n)) => Ok(Shape::Flat(n)),
            (LayerSpec::SoftmaxCe, _) => mismatch("softmax needs flat logits".into()),
        }
    }

    /// Multiply-add counted as two operations; non-parameterized layers are free.
    pub fn flops(&self, input: Shape) -> u64 {
        match (*self, input) {
            (LayerSpec::Conv3d { in_channels, out_channels, kernel }, Shape::Volume { dims, .. }) => {
                let volume = dims.iter().product::<usize>() as u64;
                2 * volume * out_channels as u64 * in_channels as u64 * kernel.iter().product::<usize>() as u64
            }
            (LayerSpec::Fc { in_width, out_width }, _) => 2 * in_width as u64 * out_width as u64,
            _ => 0,
        }
    }
}

/// Valid output range along one axis for kernel tap `tap`.
#[inline]
fn tap_range(dim: usize, pad: usize, tap: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap);
    let hi = (dim + pad).saturating_sub(tap).min(dim);
    (lo, hi.max(lo))
}

pub(crate) fn conv3d_forward(
    input: &[f64],
    in_channels: usize,
    dims: [usize; 3],
    out_channels: usize,
    kernel: [usize; 3],
    weight: &[f64],
    bias: &[f64],
) -> Vec<f64> {
    let [d0, d1, d2] = dims;
    let vol = d0 * d1 * d2;
    let [k0, k1, k2] = kernel;
    let pad = [k0 / 2, k1 / 2, k2 / 2];
    let ksz = k0 * k1 * k2;
    let mut out = vec![0.0; out_channels * vol];
    for co in 0..out_channels {
        let out_c = &mut out[co * vol..(co + 1) * vol];
        out_c.fill(bias[co]);
        for ci in 0..in_channels {
            let in_c = &input[ci * vol..(ci + 1) * vol];
            let w_base = (co * in_channels + ci) * ksz;
            for i in 0..k0 {
                let (x_lo, x_hi) = tap_range(d0, pad[0], i);
                for j in 0..k1 {
                    let (y_lo, y_hi) = tap_range(d1, pad[1], j);
                    for l in 0..k2 {
                        let (z_lo, z_hi) = tap_range(d2, pad[2], l);
                        let w = weight[w_base + (i * k1 + j) * k2 + l];
                        if w == 0.0 {
                            continue;
                        }
                        for ox in x_lo..x_hi {
                            let ix = ox + i - pad[0];
                            for oy in y_lo..y_hi {
                                let iy = oy + j - pad[1];
                                let o = (ox * d1 + oy) * d2;
                                let s = (ix * d1 + iy) * d2 + z_lo + l - pad[2];
                                let dst = &mut out_c[o + z_lo..o + z_hi];
                                let src = &in_c[s..s + (z_hi - z_lo)];
                                for (d, v) in dst.iter_mut().zip(src) {
                                    *d += w * v;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients and returns the input gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv3d_backward(
    input: &[f64],
    in_channels: usize,
    dims: [usize; 3],
    out_channels: usize,
    kernel: [usize; 3],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let [d0, d1, d2] = dims;
    let vol = d0 * d1 * d2;
    let [k0, k1, k2] = kernel;
    let pad = [k0 / 2, k1 / 2, k2 / 2];
    let ksz = k0 * k1 * k2;
    let mut grad_in = vec![0.0; in_channels * vol];
    for co in 0..out_channels {
        let g_c = &grad_out[co * vol..(co + 1) * vol];
        grad_bias[co] += g_c.iter().sum::<f64>();
        for ci in 0..in_channels {
            let in_c = &input[ci * vol..(ci + 1) * vol];
            let gin_c = &mut grad_in[ci * vol..(ci + 1) * vol];
            let w_base = (co * in_channels + ci) * ksz;
            for i in 0..k0 {
                let (x_lo, x_hi) = tap_range(d0, pad[0], i);
                for j in 0..k1 {
                    let (y_lo, y_hi) = tap_range(d1, pad[1], j);
                    for l in 0..k2 {
                        let (z_lo, z_hi) = tap_range(d2, pad[2], l);
                        let widx = w_base + (i * k1 + j) * k2 + l;
                        let w = weight[widx];
                        let mut gw = 0.0;
                        for ox in x_lo..x_hi {
                            let ix = ox + i - pad[0];
                            for oy in y_lo..y_hi {
                                let iy = oy + j - pad[1];
                                let o = (ox * d1 + oy) * d2;
                                let s = (ix * d1 + iy) * d2 + z_lo + l - pad[2];
                                let n = z_hi - z_lo;
                                let g = &g_c[o + z_lo..o + z_hi];
                                let src = &in_c[s..s + n];
                                let gin = &mut gin_c[s..s + n];
                                for k in 0..n {
                                    gw += g[k] * src[k];
                                    gin[k] += w * g[k];
                                }
                            }
                        }
                        grad_weight[widx] += gw;
                    }
                }
            }
        }
    }
    grad_in
}

pub(crate) fn fc_forward(input: &[f64], out_width: usize, weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    (0..out_width)
        .map(|o| bias[o] + weight[o * n..(o + 1) * n].iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

pub(crate) fn fc_backward(
    input: &[f64],
    weight: &[f64],
    grad_out: &[f64],
    grad_weight: &mut [f64],
    grad_bias: &mut [f64],
) -> Vec<f64> {
    let n = input.len();
    let mut grad_in = vec![0.0; n];
    for (o, &g) in grad_out.iter().enumerate() {
        grad_bias[o] += g;
        if g == 0.0 {
            continue;
        }
        let row = &weight[o * n..(o + 1) * n];
        let grow = &mut grad_weight[o * n..(o + 1) * n];
        for k in 0..n {
            grow[k] += g * input[k];
            grad_in[k] += g * row[k];
        }
    }
    grad_in
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Cross-entropy loss of `label` and its gradient with respect to the logits.
pub fn softmax_ce(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<f64>().ln();
    let mut grad = softmax(logits);
    grad[label] -= 1.0;
    (lse - logits[label], grad)
}
