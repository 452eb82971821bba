use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Architecture, AutoencoderModel, Gradients, Workspace};
use crate::error::{Error, Result};
use crate::preprocess::HeadingWindow;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without an improvement of at least `min_delta` before stopping.
    pub patience: usize,
    pub min_delta: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 128,
            max_epochs: 300,
            patience: 20,
            min_delta: 1e-5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        let positive = [self.learning_rate, self.epsilon]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        let betas = [self.beta1, self.beta2].iter().all(|b| (0.0..1.0).contains(b));
        if !positive || !betas || self.batch_size == 0 || self.max_epochs == 0 || self.min_delta < 0.0 {
            return Err(Error::invalid("invalid training configuration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_loss: f64,
    /// Mean training loss of every epoch, dropout active.
    pub loss_history: Vec<f64>,
    pub stopped_early: bool,
}

struct Adam {
    m: Gradients,
    v: Gradients,
    step: i32,
}

impl Adam {
    fn new(model: &AutoencoderModel) -> Self {
        Self {
            m: model.zero_gradients(),
            v: model.zero_gradients(),
            step: 0,
        }
    }

    fn update(&mut self, model: &mut AutoencoderModel, grads: &Gradients, cfg: &TrainConfig) {
        self.step += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.step);
        let c2 = 1.0 - cfg.beta2.powi(self.step);
        for i in 0..model.tensor_count() {
            let g = grads.tensor(i);
            let (m, v) = if i % 2 == 0 {
                (&mut self.m.weight[i / 2], &mut self.v.weight[i / 2])
            } else {
                (&mut self.m.bias[i / 2], &mut self.v.bias[i / 2])
            };
            let p = model.tensor_mut(i);
            for j in 0..p.len() {
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                p[j] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Trains a fresh model on the zero-centered values of nominal windows.
/// Bit-reproducible for a given seed and window order.
pub fn train(
    windows: &[HeadingWindow],
    arch: Architecture,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainReport)> {
    let samples: Vec<&[f64]> = windows.iter().map(|w| w.values.as_slice()).collect();
    train_samples(&samples, arch, config)
}

pub(crate) fn train_samples(
    samples: &[&[f64]],
    arch: Architecture,
    config: &TrainConfig,
) -> Result<(AutoencoderModel, TrainReport)> {
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    config.validate()?;
    let mut model = AutoencoderModel::new(arch, config.seed)?;
    for s in samples {
        model.check_len(s)?;
    }
    // separate stream from the one used for initialization
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_d4a7a);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut grads = model.zero_gradients();
    let mut ws = Workspace::new(model.layers());
    let mut adam = Adam::new(&model);

    let mut history = Vec::new();
    let mut best = f64::INFINITY;
    let mut wait = 0;
    let mut stopped_early = false;
    for _epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for batch in order.chunks(config.batch_size) {
            grads.clear();
            let weight = 1.0 / batch.len() as f64;
            for &i in batch {
                epoch_total +=
                    model.accumulate_sample(samples[i], &mut ws, Some(&mut rng), &mut grads, weight)?;
            }
            adam.update(&mut model, &grads, config);
        }
        let epoch_loss = epoch_total / samples.len() as f64;
        history.push(epoch_loss);
        if !epoch_loss.is_finite() {
            return Err(Error::invalid("training diverged"));
        }
        if epoch_loss < best - config.min_delta {
            best = epoch_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }
    let final_loss = *history.last().unwrap();
    model.meta.epochs = history.len();
    model.meta.final_loss = Some(final_loss);
    Ok((
        model,
        TrainReport {
            epochs: history.len(),
            final_loss,
            loss_history: history,
            stopped_early,
        },
    ))
}
