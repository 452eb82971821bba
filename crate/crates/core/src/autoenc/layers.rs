use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    ConvTranspose,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Linear,
}

/// A 1D (transposed) convolution over channel-major activations
/// (`channels * len`, row-major).
///
/// Weight layout is `[out][in][k]` for convolutions and `[in][out][k]` for
/// transposed convolutions. For a convolution, output sample `t` reads input
/// `t * stride + k - pad_left`; for a transposed convolution, input sample
/// `t` writes output `t * stride + k - pad_left`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub kind: LayerKind,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_left: usize,
    pub in_len: usize,
    pub out_len: usize,
    pub activation: Activation,
    /// Dropout rate applied after the activation while training; 0 disables.
    pub dropout: f64,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

/// `t` range with `0 <= t * stride + k - pad < target` and `t < count`.
#[inline]
fn tap_range(stride: usize, k: usize, pad: usize, count: usize, target: usize) -> (usize, usize) {
    let lo = if pad > k { (pad - k).div_ceil(stride) } else { 0 };
    let upper = target + pad;
    if upper <= k {
        return (0, 0);
    }
    let hi = ((upper - k - 1) / stride + 1).min(count);
    (lo, hi.max(lo))
}

impl Layer {
    /// Convolution with "same" padding: `out_len = ceil(in_len / stride)`.
    pub fn conv_same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
        activation: Activation,
        dropout: f64,
    ) -> Self {
        let out_len = in_len.div_ceil(stride);
        let total = ((out_len - 1) * stride + kernel).saturating_sub(in_len);
        Self {
            kind: LayerKind::Conv,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad_left: total / 2,
            in_len,
            out_len,
            activation,
            dropout,
            weight: vec![0.0; out_channels * in_channels * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    /// Transposed convolution with "same" padding: `out_len = in_len * stride`.
    pub fn conv_transpose_same(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        in_len: usize,
        activation: Activation,
        dropout: f64,
    ) -> Self {
        let out_len = in_len * stride;
        let total = ((in_len - 1) * stride + kernel).saturating_sub(out_len);
        Self {
            kind: LayerKind::ConvTranspose,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad_left: total / 2,
            in_len,
            out_len,
            activation,
            dropout,
            weight: vec![0.0; in_channels * out_channels * kernel],
            bias: vec![0.0; out_channels],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel
    }

    pub fn input_size(&self) -> usize {
        self.in_channels * self.in_len
    }

    pub fn output_size(&self) -> usize {
        self.out_channels * self.out_len
    }

    /// Shape consistency of the stored tensors.
    pub fn is_consistent(&self) -> bool {
        self.weight.len() == self.in_channels * self.out_channels * self.kernel
            && self.bias.len() == self.out_channels
            && self.stride >= 1
            && self.kernel >= 1
            && (0.0..1.0).contains(&self.dropout)
    }

    /// Pre-activation output.
    pub fn forward(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.input_size());
        debug_assert_eq!(y.len(), self.output_size());
        let (ic, oc, kn, s, p) = (
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.pad_left,
        );
        let (il, ol) = (self.in_len, self.out_len);
        for o in 0..oc {
            y[o * ol..(o + 1) * ol].fill(self.bias[o]);
        }
        match self.kind {
            LayerKind::Conv => {
                for o in 0..oc {
                    let yo = &mut y[o * ol..(o + 1) * ol];
                    for i in 0..ic {
                        let xi = &x[i * il..(i + 1) * il];
                        let wrow = &self.weight[(o * ic + i) * kn..(o * ic + i + 1) * kn];
                        for (k, &w) in wrow.iter().enumerate() {
                            let (lo, hi) = tap_range(s, k, p, ol, il);
                            if lo < hi {
                                let xs = xi[lo * s + k - p..].iter().step_by(s);
                                for (yv, &xv) in yo[lo..hi].iter_mut().zip(xs) {
                                    *yv += w * xv;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::ConvTranspose => {
                for i in 0..ic {
                    let xi = &x[i * il..(i + 1) * il];
                    for o in 0..oc {
                        let yo = &mut y[o * ol..(o + 1) * ol];
                        let wrow = &self.weight[(i * oc + o) * kn..(i * oc + o + 1) * kn];
                        for (k, &w) in wrow.iter().enumerate() {
                            let (lo, hi) = tap_range(s, k, p, il, ol);
                            if lo < hi {
                                let ys = yo[lo * s + k - p..].iter_mut().step_by(s);
                                for (yv, &xv) in ys.zip(&xi[lo..hi]) {
                                    *yv += w * xv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients for upstream gradient `gy` (w.r.t. the
    /// pre-activation output) and, when `gx` is given, writes the input
    /// gradient into it.
    pub fn backward(
        &self,
        x: &[f64],
        gy: &[f64],
        gw: &mut [f64],
        gb: &mut [f64],
        mut gx: Option<&mut [f64]>,
    ) {
        let (ic, oc, kn, s, p) = (
            self.in_channels,
            self.out_channels,
            self.kernel,
            self.stride,
            self.pad_left,
        );
        let (il, ol) = (self.in_len, self.out_len);
        if let Some(g) = gx.as_deref_mut() {
            g.fill(0.0);
        }
        for o in 0..oc {
            gb[o] += gy[o * ol..(o + 1) * ol].iter().sum::<f64>();
        }
        match self.kind {
            LayerKind::Conv => {
                for o in 0..oc {
                    let go = &gy[o * ol..(o + 1) * ol];
                    for i in 0..ic {
                        let xi = &x[i * il..(i + 1) * il];
                        let base = (o * ic + i) * kn;
                        for k in 0..kn {
                            let (lo, hi) = tap_range(s, k, p, ol, il);
                            if lo == hi {
                                continue;
                            }
                            let start = lo * s + k - p;
                            let mut acc = 0.0;
                            for (&gv, &xv) in go[lo..hi].iter().zip(xi[start..].iter().step_by(s)) {
                                acc += gv * xv;
                            }
                            gw[base + k] += acc;
                            if let Some(g) = gx.as_deref_mut() {
                                let w = self.weight[base + k];
                                let gi = g[i * il + start..(i + 1) * il].iter_mut().step_by(s);
                                for (gv, &gov) in gi.zip(&go[lo..hi]) {
                                    *gv += w * gov;
                                }
                            }
                        }
                    }
                }
            }
            LayerKind::ConvTranspose => {
                for i in 0..ic {
                    let xi = &x[i * il..(i + 1) * il];
                    for o in 0..oc {
                        let go = &gy[o * ol..(o + 1) * ol];
                        let base = (i * oc + o) * kn;
                        for k in 0..kn {
                            let (lo, hi) = tap_range(s, k, p, il, ol);
                            if lo == hi {
                                continue;
                            }
                            let gos = go[lo * s + k - p..].iter().step_by(s);
                            let mut acc = 0.0;
                            for (&gov, &xv) in gos.clone().zip(&xi[lo..hi]) {
                                acc += gov * xv;
                            }
                            gw[base + k] += acc;
                            if let Some(g) = gx.as_deref_mut() {
                                let w = self.weight[base + k];
                                for (gv, &gov) in g[i * il + lo..i * il + hi].iter_mut().zip(gos) {
                                    *gv += w * gov;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
