//! MSE loss, Adam, and the minibatch training loop.

use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datasets::Dataset;
use crate::dropout::MaskSource;
use crate::error::{Error, Result};
use crate::nn::{backward_batch, forward_batch, Gradient, NetworkDef, NetworkState};

/// Mean squared residual `(1/m) sum (pred_i - target_i)^2`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.is_empty() {
        return Err(Error::invalid("mse input", "at least one element is required"));
    }
    if pred.len() != target.len() {
        return Err(Error::invalid(
            "mse input",
            format!("prediction length {} != target length {}", pred.len(), target.len()),
        ));
    }
    let sum: f64 = pred.iter().zip(target).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(sum / pred.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0;
        if !ok {
            return Err(Error::invalid(
                "adam config",
                format!("{self:?} (need lr > 0, betas in (0,1), epsilon > 0)"),
            ));
        }
        Ok(())
    }
}

/// Adam with bias correction; moment accumulators shaped like the network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    first: Gradient,
    second: Gradient,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, state: &NetworkState) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            first: Gradient::zeros_like(state),
            second: Gradient::zeros_like(state),
            step: 0,
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update to `state` in place.
    pub fn step(&mut self, state: &mut NetworkState, grad: &Gradient) -> Result<()> {
        if !grad.congruent_with(state) || !self.first.congruent_with(state) {
            return Err(Error::invalid("gradient", "shape does not match the network state"));
        }
        if let Some(layer) = grad.first_non_finite() {
            return Err(Error::NumericOverflow {
                location: format!("gradient of {layer}"),
            });
        }
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (((p, g), m), v) in state
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(&mut self.first.layers)
            .zip(&mut self.second.layers)
        {
            let params = p.values_mut();
            let grads = g.values();
            let firsts = m.values_mut();
            let seconds = v.values_mut();
            for (((theta, &gi), mi), vi) in params.zip(grads).zip(firsts).zip(seconds) {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        if let Some(layer) = state.first_non_finite() {
            return Err(Error::NumericOverflow {
                location: format!("parameters of {layer} after update"),
            });
        }
        Ok(())
    }
}

/// Functional form of [`Adam::step`].
pub fn adam_step(state: &NetworkState, grad: &Gradient, adam: &mut Adam) -> Result<NetworkState> {
    let mut next = state.clone();
    adam.step(&mut next, grad)?;
    Ok(next)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default)]
    pub shuffle_seed: u64,
}

fn default_batch_size() -> usize {
    32
}

impl TrainConfig {
    pub fn new(epochs: usize, batch_size: usize, shuffle_seed: u64) -> Self {
        Self {
            epochs,
            batch_size,
            shuffle_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::invalid("train config", "epochs and batch_size must be positive"));
        }
        Ok(())
    }

    /// Update steps per epoch over `n` samples, counting the final partial batch.
    pub fn steps_per_epoch(&self, n: usize) -> usize {
        n.div_ceil(self.batch_size)
    }
}

/// Mean training loss of each epoch.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub epoch_losses: Vec<f64>,
}

impl LossTrace {
    pub fn last(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            writeln!(out, "{},{}", i + 1, l).expect("writing to a String");
        }
        out
    }
}

/// Input matrix a network sees for `dataset`: the `x` column for scalar-input
/// networks, or constant ones when the dataset has no inputs.
pub fn network_inputs(def: &NetworkDef, dataset: &Dataset) -> Result<Array2<f64>> {
    match &dataset.xs {
        None => Ok(Array2::ones((dataset.n(), def.input_dim))),
        Some(xs) if def.input_dim == 1 => {
            Ok(Array2::from_shape_vec((xs.len(), 1), xs.clone()).expect("column vector"))
        }
        Some(_) => Err(Error::invalid(
            "dataset",
            format!(
                "has scalar inputs but the network expects {} inputs",
                def.input_dim
            ),
        )),
    }
}

/// Minibatch Adam on MSE with dropout active. Every sample in every batch gets
/// fresh masks; batches are reshuffled each epoch.
pub fn train(
    def: &NetworkDef,
    state: &NetworkState,
    dataset: &Dataset,
    train_cfg: &TrainConfig,
    adam_cfg: &AdamConfig,
    masks: &mut MaskSource,
) -> Result<(NetworkState, LossTrace)> {
    def.validate()?;
    state.check_against(def)?;
    train_cfg.validate()?;
    if def.output_dim != 1 {
        return Err(Error::invalid("network", "training expects a scalar output"));
    }
    let n = dataset.n();
    if n == 0 {
        return Err(Error::invalid("dataset", "is empty"));
    }
    let inputs = network_inputs(def, dataset)?;
    let mut state = state.clone();
    let mut adam = Adam::new(*adam_cfg, &state)?;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.shuffle_seed);
    let mut order: Vec<usize> = (0..n).collect();
    let widths = def.dropout_widths();
    let mut trace = LossTrace::default();

    for epoch in 0..train_cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(train_cfg.batch_size) {
            let b = batch.len();
            let x = inputs.select(Axis(0), batch);
            let factors = widths
                .iter()
                .map(|(spec, w)| masks.draw_factors(spec, b, *w))
                .collect();
            let tape = match forward_batch(&state, def, x.view(), factors) {
                Ok(t) => t,
                Err(Error::NumericOverflow { .. }) => {
                    return Err(Error::TrainingDiverged {
                        epoch,
                        loss: f64::INFINITY,
                    })
                }
                Err(e) => return Err(e),
            };
            let pred = tape.output();
            let mut upstream = Array2::zeros((b, 1));
            let mut batch_loss = 0.0;
            for (r, &idx) in batch.iter().enumerate() {
                let resid = pred[[r, 0]] - dataset.ys[idx];
                batch_loss += resid * resid;
                upstream[[r, 0]] = 2.0 * resid / b as f64;
            }
            loss_sum += batch_loss;
            let grad = backward_batch(&state, def, &tape, upstream.view())?;
            adam.step(&mut state, &grad).map_err(|e| match e {
                Error::NumericOverflow { .. } => Error::TrainingDiverged {
                    epoch,
                    loss: f64::NAN,
                },
                other => other,
            })?;
        }
        let mean_loss = loss_sum / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                loss: mean_loss,
            });
        }
        trace.epoch_losses.push(mean_loss);
    }
    Ok((state, trace))
}
