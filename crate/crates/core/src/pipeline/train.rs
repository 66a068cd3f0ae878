//! BCE objective, Adam and the toy training loop.

use indexmap::IndexMap;
use thiserror::Error;

use super::model::{Model, ModelError, Sample};
use super::{init_params, Config};
use crate::par;
use crate::tensor::{ParamStore, Tape, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss became non-finite ({loss}) at step {step}")]
    Diverged { step: usize, loss: f64 },
    #[error("training needs at least one sample")]
    NoSamples,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `θ ← θ − lr·wd·θ` before the update instead of adding `wd·θ` to the
    /// gradient.
    pub decoupled: bool,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self::from(&Config::default())
    }
}

impl From<&Config> for AdamHyper {
    fn from(cfg: &Config) -> Self {
        Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            weight_decay: cfg.weight_decay,
            decoupled: cfg.decoupled_weight_decay,
        }
    }
}

/// First and second moments per parameter plus the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub m: IndexMap<String, Vec<f64>>,
    pub v: IndexMap<String, Vec<f64>>,
    pub step: u64,
}

/// One bias-corrected Adam update of every parameter that has a gradient.
pub fn adam_step(
    params: &mut ParamStore,
    grads: &IndexMap<String, Tensor>,
    state: &mut AdamState,
    hyper: &AdamHyper,
) -> Result<(), TensorError> {
    for (name, g) in grads {
        let p = params.get(name)?;
        if p.shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                lhs: p.shape().to_vec(),
                rhs: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (bc1, bc2) = (1.0 - hyper.beta1.powi(t), 1.0 - hyper.beta2.powi(t));
    for (name, g) in grads {
        let p = params.get(name)?;
        let m = state.m.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let v = state.v.entry(name.clone()).or_insert_with(|| vec![0.0; g.len()]);
        let mut next = p.data().to_vec();
        for i in 0..next.len() {
            let mut gi = g.data()[i];
            if hyper.decoupled {
                next[i] -= hyper.lr * hyper.weight_decay * next[i];
            } else {
                gi += hyper.weight_decay * next[i];
            }
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * gi;
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * gi * gi;
            let (mh, vh) = (m[i] / bc1, v[i] / bc2);
            next[i] -= hyper.lr * mh / (vh.sqrt() + hyper.eps);
        }
        params.set(name, Tensor::new(p.shape().to_vec(), next)?)?;
    }
    Ok(())
}

/// Mean loss over `samples` and its gradient. Samples run in parallel; the
/// reduction is in sample order so the result does not depend on threads.
pub fn batch_loss_and_grads(
    cfg: &Config,
    params: &ParamStore,
    samples: &[Sample],
) -> Result<(f64, IndexMap<String, Tensor>), TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let model = Model::new(cfg, params)?;
    let per_sample = par::map_indexed(samples.len(), |i| -> Result<_, TrainError> {
        let mut tape = Tape::with_params(params);
        let loss = model.loss(&mut tape, &samples[i])?;
        let grads = tape.backward(loss)?;
        Ok((tape.value(loss).data()[0], grads.for_store(params)))
    });
    let scale = 1.0 / samples.len() as f64;
    let mut total = 0.0;
    let mut acc: IndexMap<String, Vec<f64>> = params.iter().map(|(n, t)| (n.to_string(), vec![0.0; t.len()])).collect();
    for r in per_sample {
        let (loss, grads) = r?;
        total += loss;
        for (name, g) in grads {
            let dst = acc.get_mut(&name).expect("grads follow the store");
            for (d, v) in dst.iter_mut().zip(g.data()) {
                *d += v;
            }
        }
    }
    let grads = acc
        .into_iter()
        .map(|(name, data)| {
            let shape = params.get(&name).expect("store entry").shape().to_vec();
            let data = data.into_iter().map(|v| v * scale).collect();
            (name, Tensor::new(shape, data).expect("shape from store"))
        })
        .collect();
    Ok((total * scale, grads))
}

pub fn mean_loss(cfg: &Config, params: &ParamStore, samples: &[Sample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::NoSamples);
    }
    let model = Model::new(cfg, params)?;
    let losses = par::map_indexed(samples.len(), |i| -> Result<f64, TrainError> {
        let mut tape = Tape::with_params(params);
        let loss = model.loss(&mut tape, &samples[i])?;
        Ok(tape.value(loss).data()[0])
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / samples.len() as f64)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// `trace[i]` is the mean loss after `i` updates; length `steps + 1`.
    pub trace: Vec<f64>,
    pub params: ParamStore,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Full-batch Adam from freshly initialised parameters.
pub fn train_toy(samples: &[Sample], cfg: &Config, steps: usize) -> Result<TrainOutcome, TrainError> {
    train_from(init_params(cfg), samples, cfg, steps)
}

pub fn train_from(mut params: ParamStore, samples: &[Sample], cfg: &Config, steps: usize) -> Result<TrainOutcome, TrainError> {
    let hyper = AdamHyper::from(cfg);
    let mut state = AdamState::default();
    let mut trace = Vec::with_capacity(steps + 1);
    for step in 0..steps {
        let (loss, grads) = batch_loss_and_grads(cfg, &params, samples)?;
        if !loss.is_finite() {
            return Err(TrainError::Diverged { step, loss });
        }
        trace.push(loss);
        adam_step(&mut params, &grads, &mut state, &hyper)?;
    }
    let last = mean_loss(cfg, &params, samples)?;
    if !last.is_finite() {
        return Err(TrainError::Diverged { step: steps, loss: last });
    }
    trace.push(last);
    Ok(TrainOutcome { trace, params })
}
