//! One-dimensional convolutional autoencoder over heading windows.
//!
//! Encoder: two stride-2 convolutions (kernel 3, ReLU) with dropout between
//! them. Decoder: two stride-2 transposed convolutions (kernel 3, ReLU) with
//! dropout between them, then a single-filter stride-1 transposed
//! convolution with linear output. The decoder over-produces and the output
//! is cropped from the start to the input length.
//!
//! Inputs are multiplied by `input_scale` (degrees to radians by default)
//! before entering the network; losses are reported in those scaled units.

mod io;
mod layers;
mod train;

pub use io::{load_model, model_from_json, model_to_json, save_model, MODEL_FORMAT, MODEL_VERSION};
pub use layers::{Activation, Layer, LayerKind};
pub use train::{train, TrainConfig, TrainReport};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_length: usize,
    pub filters: (usize, usize),
    pub kernel: usize,
    pub stride: usize,
    pub dropout: f64,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            input_length: 25,
            filters: (32, 16),
            kernel: 3,
            stride: 2,
            dropout: 0.2,
        }
    }
}

impl Architecture {
    pub fn build_layers(&self) -> Result<Vec<Layer>> {
        if self.input_length < 4 || self.kernel == 0 || self.stride == 0 {
            return Err(Error::invalid("input_length must be >= 4 with kernel, stride >= 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        let (f1, f2) = self.filters;
        let (k, s, p) = (self.kernel, self.stride, self.dropout);
        let enc1 = Layer::conv_same(1, f1, k, s, self.input_length, Activation::Relu, p);
        let enc2 = Layer::conv_same(f1, f2, k, s, enc1.out_len, Activation::Relu, 0.0);
        let dec1 = Layer::conv_transpose_same(f2, f2, k, s, enc2.out_len, Activation::Relu, p);
        let dec2 = Layer::conv_transpose_same(f2, f1, k, s, dec1.out_len, Activation::Relu, 0.0);
        let out = Layer::conv_transpose_same(f1, 1, k, 1, dec2.out_len, Activation::Linear, 0.0);
        if out.out_len < self.input_length {
            return Err(Error::invalid("decoder output shorter than the input"));
        }
        Ok(vec![enc1, enc2, dec1, dec2, out])
    }
}

/// Settings stored alongside the weights so a model file is self-describing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub input_length: usize,
    pub filters: (usize, usize),
    pub kernel: usize,
    pub dropout: f64,
    pub input_scale: f64,
    pub sample_rate: f64,
    pub window_length: f64,
    pub overlap: f64,
    pub threshold: Option<f64>,
    pub n_consecutive: usize,
    pub seed: u64,
    pub epochs: usize,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderModel {
    pub meta: ModelMeta,
    layers: Vec<Layer>,
}

/// Per-layer gradient tensors, same layout as the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(layers: &[Layer]) -> Self {
        Self {
            weight: layers.iter().map(|l| vec![0.0; l.weight.len()]).collect(),
            bias: layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    pub(crate) fn clear(&mut self) {
        self.weight.iter_mut().for_each(|g| g.fill(0.0));
        self.bias.iter_mut().for_each(|g| g.fill(0.0));
    }

    /// Tensor `i` in the order weight0, bias0, weight1, bias1, ...
    pub fn tensor(&self, i: usize) -> &[f64] {
        if i % 2 == 0 {
            &self.weight[i / 2]
        } else {
            &self.bias[i / 2]
        }
    }
}

/// Reusable activation buffers for one sample.
pub(crate) struct Workspace {
    /// `acts[l]` is the input to layer `l`; the last entry is the network output.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    masks: Vec<Vec<f64>>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(layers: &[Layer]) -> Self {
        let mut acts = vec![vec![0.0; layers[0].input_size()]];
        acts.extend(layers.iter().map(|l| vec![0.0; l.output_size()]));
        let widest = layers
            .iter()
            .map(|l| l.input_size().max(l.output_size()))
            .max()
            .unwrap_or(0);
        Self {
            acts,
            pre: layers.iter().map(|l| vec![0.0; l.output_size()]).collect(),
            masks: layers
                .iter()
                .map(|l| if l.dropout > 0.0 { vec![1.0; l.output_size()] } else { Vec::new() })
                .collect(),
            grad_a: vec![0.0; widest],
            grad_b: vec![0.0; widest],
        }
    }
}

pub fn mse_loss(original: &[f64], reconstruction: &[f64]) -> Result<f64> {
    if original.len() != reconstruction.len() {
        return Err(Error::LengthMismatch {
            expected: original.len(),
            got: reconstruction.len(),
        });
    }
    if original.is_empty() {
        return Err(Error::Empty("loss input"));
    }
    Ok(original
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / original.len() as f64)
}

impl AutoencoderModel {
    /// He-uniform initialized weights, zero biases.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        let mut layers = arch.build_layers()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for l in &mut layers {
            let limit = (6.0 / l.fan_in() as f64).sqrt();
            for w in &mut l.weight {
                *w = rng.gen_range(-limit..limit);
            }
        }
        Ok(Self {
            meta: ModelMeta {
                input_length: arch.input_length,
                filters: arch.filters,
                kernel: arch.kernel,
                dropout: arch.dropout,
                input_scale: std::f64::consts::PI / 180.0,
                sample_rate: 5.0,
                window_length: 5.0,
                overlap: 2.5,
                threshold: None,
                n_consecutive: 4,
                seed,
                epochs: 0,
                final_loss: None,
            },
            layers,
        })
    }

    pub(crate) fn from_parts(meta: ModelMeta, layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() || layers.iter().any(|l| !l.is_consistent()) {
            return Err(Error::Model("inconsistent layer tensors".into()));
        }
        if layers[0].in_channels != 1 || layers[0].in_len != meta.input_length {
            return Err(Error::Model("first layer does not match input_length".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_size() != w[1].input_size() {
                return Err(Error::Model("layer shapes do not chain".into()));
            }
        }
        let last = layers.last().unwrap();
        if last.out_channels != 1 || last.out_len < meta.input_length {
            return Err(Error::Model("output layer too short".into()));
        }
        Ok(Self { meta, layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_length(&self) -> usize {
        self.meta.input_length
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn tensor_count(&self) -> usize {
        2 * self.layers.len()
    }

    /// Tensor `i` in the order weight0, bias0, weight1, bias1, ...
    pub fn tensor(&self, i: usize) -> &[f64] {
        let l = &self.layers[i / 2];
        if i % 2 == 0 {
            &l.weight
        } else {
            &l.bias
        }
    }

    pub fn tensor_mut(&mut self, i: usize) -> &mut [f64] {
        let l = &mut self.layers[i / 2];
        if i % 2 == 0 {
            &mut l.weight
        } else {
            &mut l.bias
        }
    }

    fn check_len(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.meta.input_length {
            return Err(Error::LengthMismatch {
                expected: self.meta.input_length,
                got: values.len(),
            });
        }
        Ok(())
    }

    /// Runs the network on scaled input already placed in `ws.acts[0]`.
    /// Dropout masks are drawn from `rng` when given.
    fn run(&self, ws: &mut Workspace, mut rng: Option<&mut ChaCha8Rng>) {
        for (l, layer) in self.layers.iter().enumerate() {
            let (head, tail) = ws.acts.split_at_mut(l + 1);
            let input = &head[l];
            let pre = &mut ws.pre[l];
            layer.forward(input, pre);
            let out = &mut tail[0];
            match layer.activation {
                Activation::Relu => {
                    for (o, &z) in out.iter_mut().zip(pre.iter()) {
                        *o = z.max(0.0);
                    }
                }
                Activation::Linear => out.copy_from_slice(pre),
            }
            if layer.dropout > 0.0 {
                if let Some(rng) = rng.as_deref_mut() {
                    let keep = 1.0 - layer.dropout;
                    let mask = &mut ws.masks[l];
                    for (m, o) in mask.iter_mut().zip(out.iter_mut()) {
                        *m = if rng.gen::<f64>() < layer.dropout { 0.0 } else { 1.0 / keep };
                        *o *= *m;
                    }
                } else {
                    ws.masks[l].fill(1.0);
                }
            }
        }
    }

    fn output<'a>(&self, ws: &'a Workspace) -> &'a [f64] {
        &ws.acts[self.layers.len()][..self.meta.input_length]
    }

    /// Reconstruction in the original (unscaled) units. `Mode::Train`
    /// applies dropout with masks drawn from `rng`.
    pub fn forward(&self, values: &[f64], mode: Mode, rng: Option<&mut ChaCha8Rng>) -> Result<Vec<f64>> {
        self.check_len(values)?;
        let mut ws = Workspace::new(&self.layers);
        let scale = self.meta.input_scale;
        for (a, v) in ws.acts[0].iter_mut().zip(values) {
            *a = v * scale;
        }
        let rng = match mode {
            Mode::Train => rng,
            Mode::Infer => None,
        };
        self.run(&mut ws, rng);
        Ok(self.output(&ws).iter().map(|y| y / scale).collect())
    }

    /// Deterministic reconstruction.
    pub fn reconstruct(&self, values: &[f64]) -> Result<Vec<f64>> {
        self.forward(values, Mode::Infer, None)
    }

    /// Mean squared reconstruction error in scaled units.
    pub fn window_loss(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values)?;
        let mut ws = Workspace::new(&self.layers);
        self.sample_loss(values, &mut ws, None)
    }

    fn sample_loss(&self, values: &[f64], ws: &mut Workspace, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
        let scale = self.meta.input_scale;
        for (a, v) in ws.acts[0].iter_mut().zip(values) {
            *a = v * scale;
        }
        self.run(ws, rng);
        mse_loss(&ws.acts[0], self.output(ws))
    }

    /// Forward and backward pass for one sample; adds `weight * dL/dθ` into
    /// `grads` and returns the sample loss. Uses the masks drawn in `run`.
    pub(crate) fn accumulate_sample(
        &self,
        values: &[f64],
        ws: &mut Workspace,
        rng: Option<&mut ChaCha8Rng>,
        grads: &mut Gradients,
        weight: f64,
    ) -> Result<f64> {
        let loss = self.sample_loss(values, ws, rng)?;
        let n = self.layers.len();
        let w = self.meta.input_length;
        let last = &self.layers[n - 1];
        let out = &ws.acts[n];
        let target = &ws.acts[0];

        let g = &mut ws.grad_a[..last.output_size()];
        g.fill(0.0);
        for t in 0..w {
            g[t] = weight * 2.0 * (out[t] - target[t]) / w as f64;
        }
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let m = layer.output_size();
            {
                let g = &mut ws.grad_a[..m];
                if layer.dropout > 0.0 {
                    for (gv, mv) in g.iter_mut().zip(&ws.masks[l]) {
                        *gv *= mv;
                    }
                }
                if layer.activation == Activation::Relu {
                    for (gv, z) in g.iter_mut().zip(&ws.pre[l]) {
                        if *z <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
            }
            let gx = if l > 0 {
                Some(&mut ws.grad_b[..layer.input_size()])
            } else {
                None
            };
            layer.backward(
                &ws.acts[l],
                &ws.grad_a[..m],
                &mut grads.weight[l],
                &mut grads.bias[l],
                gx,
            );
            if l > 0 {
                std::mem::swap(&mut ws.grad_a, &mut ws.grad_b);
            }
        }
        Ok(loss)
    }

    /// Mean loss over `batch` and its exact gradient with dropout disabled.
    pub fn loss_and_gradients(&self, batch: &[&[f64]]) -> Result<(f64, Gradients)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut grads = Gradients::zeros_like(&self.layers);
        let mut ws = Workspace::new(&self.layers);
        let weight = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for v in batch {
            self.check_len(v)?;
            total += self.accumulate_sample(v, &mut ws, None, &mut grads, weight)?;
        }
        Ok((total * weight, grads))
    }

    /// Mean inference-mode loss over `batch`.
    pub fn mean_loss(&self, batch: &[&[f64]]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let mut ws = Workspace::new(&self.layers);
        let mut total = 0.0;
        for v in batch {
            self.check_len(v)?;
            total += self.sample_loss(v, &mut ws, None)?;
        }
        Ok(total / batch.len() as f64)
    }

    pub(crate) fn zero_gradients(&self) -> Gradients {
        Gradients::zeros_like(&self.layers)
    }
}
