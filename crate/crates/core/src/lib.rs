//! Monte-Carlo dropout laboratory.
//!
//! Trains small dropout networks, samples their predictive distributions, and
//! compares the results with the closed-form moments of the single-layer model.
//!
//! - [`nn`]: dense networks with exact reverse-mode gradients
//! - [`dropout`]: Bernoulli masks and the splittable mask source
//! - [`optim`]: MSE, Adam and the training loop
//! - [`theory`]: closed-form moments and the exhaustive-mask oracle
//! - [`datasets`]: seeded synthetic datasets
//! - [`mc`]: Monte-Carlo predictive moments and σ bands
//! - [`harness`]: experiment configs, runners and reports

pub mod datasets;
pub mod dropout;
pub mod error;
pub mod harness;
pub mod mc;
pub mod nn;
pub mod optim;
pub mod theory;

pub use datasets::{gen_function, gen_gaussian, Dataset, DatasetSpec, Shape};
pub use dropout::{apply_mask, draw_mask, DropoutSpec, MaskSource, Scaling};
pub use error::{Error, Result};
pub use mc::{mc_curve, mc_sample, Bands, McRecord, McResult};
pub use nn::{backward, forward, init_network, Gradient, LayerDef, MaskSet, NetworkDef, NetworkState};
pub use optim::{adam_step, mse_loss, train, Adam, AdamConfig, LossTrace, TrainConfig};
pub use theory::{
    enumerate_moments, expected_mse, mse_derivative, optimal_weight, predict_moments, SingleLayerSpec,
    TheoryPrediction,
};
