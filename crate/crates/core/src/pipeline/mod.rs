//! Whole-model assembly: configuration, parameters, forward passes and
//! training.

mod config;
mod model;
mod params;
mod toy;
mod train;

pub use config::{Config, ConfigError};
pub use model::{Model, ModelError, Sample};
pub use params::{config_digest, init_params, layout_digest, param_layout, store_digest, ParamSpec};
pub use toy::toy_dataset;
pub use train::{adam_step, batch_loss_and_grads, mean_loss, train_from, train_toy, AdamHyper, AdamState, TrainError, TrainOutcome};

use crate::linguistic::Mode;
use crate::tensor::{check_gradients, GradCheckOptions, GradCheckReport, Tape, TensorError};

/// Configuration of the overfit runs: widths 16, ConvLSTM cell 16, 8×8 maps.
pub fn overfit_config(mode: Mode, seed: u64) -> Config {
    Config {
        c_v: 16,
        c_l: 16,
        c_m: 16,
        c_n: Some(8),
        d: Some(16),
        d_a: Some(16),
        d_p: Some(16),
        c_h: 16,
        backbone: [16, 16, 16],
        seed,
        ..Config::toy(mode)
    }
}

/// `(steps, loss threshold)` at which an overfit run counts as converged.
pub fn overfit_target(mode: Mode) -> (usize, f64) {
    match mode {
        Mode::Image => (2000, 0.01),
        Mode::Video => (4000, 0.05),
    }
}

/// Toy overfit set: 4 samples of 8×8 maps.
pub fn overfit_dataset(cfg: &Config) -> Vec<Sample> {
    toy_dataset(cfg, 4, 8, 8, cfg.seed)
}

/// Central-difference check of the full BCE pipeline on a 4×4 toy sample
/// (clips of 3 frames) over every parameter.
pub fn check_pipeline_gradients(mode: Mode, seed: u64, opts: GradCheckOptions) -> Result<GradCheckReport, ModelError> {
    let cfg = Config {
        seed,
        ..Config::toy(mode)
    };
    let store = init_params(&cfg);
    let sample = toy_dataset(&cfg, 1, 4, 4, seed).remove(0);
    let model = Model::new(&cfg, &store)?;
    model.check_sample(&sample)?;
    let report = check_gradients(&store, None, opts, |tape: &mut Tape| {
        model.loss(tape, &sample).map_err(|e| match e {
            ModelError::Tensor(t) => t,
            other => TensorError::Invalid {
                op: "pipeline",
                msg: other.to_string(),
            },
        })
    })?;
    Ok(report)
}
