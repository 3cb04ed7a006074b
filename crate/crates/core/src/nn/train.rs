//! Deterministic mini-batch training.

use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{CkmError, Result};
use crate::rng::derived_rng;

use super::model::{apply_bn_updates, forward, init_params, predict, ModelSpec, Phase};
use super::ops;
use super::optim::{adam_update, AdamConfig, PlateauScheduler};
use super::params::ParamStore;
use super::real::Real;
use super::tape::Tape;
use super::tensor::Tensor;

/// One `(input stack, target)` pair, each `C × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub input: Tensor<T>,
    pub target: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec {
    pub batch_size: usize,
    pub lr_initial: f64,
    pub max_iterations: usize,
    pub plateau_epochs: usize,
    pub lr_decay: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Iterations per scheduler epoch; `None` means one pass over the data.
    pub epoch_iterations: Option<usize>,
    /// Return the parameters of the epoch with the lowest validation loss.
    pub keep_best: bool,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            batch_size: 32,
            lr_initial: 2e-4,
            max_iterations: 200_000,
            plateau_epochs: 5,
            lr_decay: 0.5,
            seed: 0,
            adam: AdamConfig::default(),
            epoch_iterations: None,
            keep_best: false,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CkmError::invalid("batch size must be at least 1"));
        }
        if !(self.lr_initial >= 0.0 && self.lr_initial.is_finite()) {
            return Err(CkmError::invalid(format!(
                "learning rate {} must be finite and ≥ 0",
                self.lr_initial
            )));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay < 1.0) {
            return Err(CkmError::invalid(format!(
                "lr decay {} must lie in (0, 1)",
                self.lr_decay
            )));
        }
        if self.epoch_iterations == Some(0) {
            return Err(CkmError::invalid("an epoch needs at least one iteration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub iteration: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Present on the last iteration of each scheduler epoch.
    pub val_loss: Option<f64>,
}

pub fn loss_curve_csv(curve: &[LossRecord]) -> String {
    let mut s = String::from("iteration,lr,train_loss,val_loss\n");
    for r in curve {
        let val = r.val_loss.map(|v| format!("{v:.17e}")).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{:e},{:.17e},{}",
            r.iteration, r.lr, r.train_loss, val
        );
    }
    s
}

/// Stacks samples into `N × C × H × W` input and target batches.
pub fn stack_batch<T: Real>(samples: &[&Sample<T>]) -> Result<(Tensor<T>, Tensor<T>)> {
    let first = samples
        .first()
        .ok_or_else(|| CkmError::invalid("cannot stack an empty batch"))?;
    let stack = |get: &dyn Fn(&Sample<T>) -> &Tensor<T>| -> Result<Tensor<T>> {
        let shape = get(first).shape().to_vec();
        let mut data = Vec::with_capacity(samples.len() * get(first).numel());
        for s in samples {
            if get(s).shape() != shape.as_slice() {
                return Err(CkmError::invalid("samples in a batch differ in shape"));
            }
            data.extend_from_slice(get(s).data());
        }
        let mut full = vec![samples.len()];
        full.extend(shape);
        Tensor::new(full, data)
    };
    Ok((stack(&|s| &s.input)?, stack(&|s| &s.target)?))
}

/// Eval-phase mean squared error over a sample set.
pub fn evaluate_mse<T: Real>(
    spec: &ModelSpec,
    store: &ParamStore<T>,
    samples: &[Sample<T>],
) -> Result<f64> {
    if samples.is_empty() {
        return Err(CkmError::invalid("no samples to evaluate"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for s in samples {
        let (x, y) = stack_batch(&[s])?;
        let p = predict(spec, store, &x)?;
        if p.shape() != y.shape() {
            return Err(CkmError::invalid(format!(
                "prediction shape {:?} differs from target {:?}",
                p.shape(),
                y.shape()
            )));
        }
        total += p
            .data()
            .iter()
            .zip(y.data())
            .map(|(a, b)| (a.as_f64() - b.as_f64()).powi(2))
            .sum::<f64>();
        count += p.numel();
    }
    Ok(total / count as f64)
}

pub struct TrainOutcome<T> {
    pub store: ParamStore<T>,
    pub curve: Vec<LossRecord>,
}

/// Called as `(iteration, store)` after every update.
pub type StepHook<'a, T> = dyn FnMut(usize, &ParamStore<T>) -> Result<()> + 'a;

/// Trains from a seed-derived initialisation.
pub fn train<T: Real>(
    model: &ModelSpec,
    data: &[Sample<T>],
    val: &[Sample<T>],
    spec: &TrainSpec,
    hook: Option<&mut StepHook<'_, T>>,
) -> Result<TrainOutcome<T>> {
    let store = init_params(model, spec.seed)?;
    train_from(model, store, data, val, spec, hook)
}

/// Continues training an existing store.
///
/// Batches walk a seed-derived permutation that is redrawn after each pass.
/// At the end of every scheduler epoch the validation loss (or, without a
/// validation set, the epoch's mean training loss) drives the plateau schedule.
/// With `keep_best` and a validation set, the returned store is the one that
/// scored lowest at an epoch end, or the final one if no epoch ended.
pub fn train_from<T: Real>(
    model: &ModelSpec,
    mut store: ParamStore<T>,
    data: &[Sample<T>],
    val: &[Sample<T>],
    spec: &TrainSpec,
    mut hook: Option<&mut StepHook<'_, T>>,
) -> Result<TrainOutcome<T>> {
    spec.validate()?;
    if data.is_empty() {
        return Err(CkmError::invalid("training set is empty"));
    }
    let epoch_len = spec
        .epoch_iterations
        .unwrap_or_else(|| data.len().div_ceil(spec.batch_size));
    let mut sched = PlateauScheduler::new(spec.lr_initial, spec.lr_decay, spec.plateau_epochs)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut pass = 0u64;
    order.shuffle(&mut derived_rng(spec.seed, pass));
    let mut cursor = 0;
    let mut curve = Vec::with_capacity(spec.max_iterations);
    let mut epoch_sum = 0.0;
    let mut best: Option<(f64, ParamStore<T>)> = None;
    for it in 0..spec.max_iterations {
        let mut batch = Vec::with_capacity(spec.batch_size);
        while batch.len() < spec.batch_size {
            if cursor == order.len() {
                pass += 1;
                order.shuffle(&mut derived_rng(spec.seed, pass));
                cursor = 0;
            }
            batch.push(&data[order[cursor]]);
            cursor += 1;
        }
        let (x, y) = stack_batch(&batch)?;
        let lr = sched.lr();
        let mut tape = Tape::new();
        let xv = tape.constant(x);
        let yv = tape.constant(y);
        let f = forward(model, &store, &mut tape, xv, Phase::Train)?;
        if tape.value(f.output).shape() != tape.value(yv).shape() {
            return Err(CkmError::invalid(format!(
                "model output {:?} does not match target {:?}",
                tape.value(f.output).shape(),
                tape.value(yv).shape()
            )));
        }
        let loss = ops::mse(&mut tape, f.output, yv)?;
        let loss_value = tape.value(loss).data()[0].as_f64();
        if !loss_value.is_finite() {
            return Err(CkmError::Numerical {
                name: "loss".into(),
                message: format!("non-finite training loss at iteration {it}"),
            });
        }
        let grads = tape.backward(loss);
        adam_update(&mut store, grads.param_grads(), lr, &spec.adam)?;
        drop(grads);
        drop(tape);
        apply_bn_updates(&mut store, &f.bn_updates)?;
        epoch_sum += loss_value;
        let mut record = LossRecord {
            iteration: it,
            lr,
            train_loss: loss_value,
            val_loss: None,
        };
        if (it + 1) % epoch_len == 0 {
            let v = if val.is_empty() {
                epoch_sum / epoch_len as f64
            } else {
                evaluate_mse(model, &store, val)?
            };
            sched.observe(v);
            if spec.keep_best && !val.is_empty() && best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, store.clone()));
            }
            record.val_loss = Some(v);
            epoch_sum = 0.0;
        }
        curve.push(record);
        if let Some(h) = hook.as_deref_mut() {
            h(it, &store)?;
        }
    }
    let store = best.map_or(store, |(_, s)| s);
    Ok(TrainOutcome { store, curve })
}
