//! Adam and the reduce-on-plateau learning-rate schedule.

use crate::error::{CkmError, Result};

use super::params::{Param, ParamStore};
use super::real::Real;
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of a single parameter.
pub fn adam_step<T: Real>(
    param: &mut Param<T>,
    grad: &[T],
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if grad.len() != param.value().numel() {
        return Err(CkmError::invalid(format!(
            "gradient for `{}` has {} values, parameter has {}",
            param.name(),
            grad.len(),
            param.value().numel()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(CkmError::Numerical {
            name: param.name().to_string(),
            message: format!("non-finite gradient at element {i}"),
        });
    }
    param.step += 1;
    let t = param.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (ob1, ob2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let step_size = T::of(lr / bc1);
    let inv_bc2_sqrt = T::of(1.0 / bc2.sqrt());
    let eps = T::of(cfg.eps);
    let mut m = std::mem::take(&mut param.m);
    let mut v = std::mem::take(&mut param.v);
    for (((w, &g), mi), vi) in param
        .data_mut()
        .iter_mut()
        .zip(grad)
        .zip(m.iter_mut())
        .zip(v.iter_mut())
    {
        *mi = b1 * *mi + ob1 * g;
        *vi = b2 * *vi + ob2 * g * g;
        *w -= step_size * *mi / ((*vi).sqrt() * inv_bc2_sqrt + eps);
    }
    param.m = m;
    param.v = v;
    Ok(())
}

/// Applies Adam to every parameter that received a gradient.
pub fn adam_update<'g, T: Real>(
    store: &mut ParamStore<T>,
    grads: impl IntoIterator<Item = (usize, &'g Tensor<T>)>,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    for (i, g) in grads {
        adam_step(&mut store.params_mut()[i], g.data(), lr, cfg)?;
    }
    Ok(())
}

/// Halves (by `decay`) the learning rate after `patience` consecutive epochs
/// without a strict improvement of the best validation loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    lr: f64,
    decay: f64,
    patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(lr: f64, decay: f64, patience: usize) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(CkmError::invalid(format!(
                "learning rate {lr} must be finite and ≥ 0"
            )));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(CkmError::invalid(format!(
                "decay {decay} must lie in (0, 1)"
            )));
        }
        if patience == 0 {
            return Err(CkmError::invalid("patience must be at least one epoch"));
        }
        Ok(Self {
            lr,
            decay,
            patience,
            best: f64::INFINITY,
            bad_epochs: 0,
        })
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Records one epoch's validation loss and returns the learning rate to use next.
    pub fn observe(&mut self, loss: f64) -> f64 {
        if loss < self.best {
            self.best = loss;
            self.bad_epochs = 0;
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                self.lr *= self.decay;
                self.bad_epochs = 0;
            }
        }
        self.lr
    }
}

/// Learning rate after replaying a whole loss history.
pub fn plateau_lr(history: &[f64], lr: f64, decay: f64, patience: usize) -> Result<f64> {
    let mut s = PlateauScheduler::new(lr, decay, patience)?;
    for &l in history {
        s.observe(l);
    }
    Ok(s.lr())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        // m̂ = v̂ = 1 after bias correction, so Δw = lr·1/(1 + eps).
        let mut p = Param::new("w", Tensor::<f64>::scalar(1.0));
        adam_step(&mut p, &[1.0], 1e-3, &AdamConfig::default()).unwrap();
        let want = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((p.value().data()[0] - want).abs() < 1e-15);
        assert!((p.value().data()[0] - 0.999).abs() < 1e-9);
        assert_eq!(p.step(), 1);
    }

    #[test]
    fn adam_matches_hand_recurrence() {
        let cfg = AdamConfig::default();
        let grads = [0.3, -1.2, 0.7, 0.0, 2.5];
        let mut p = Param::new("w", Tensor::<f64>::scalar(0.4));
        let (mut w, mut m, mut v) = (0.4f64, 0.0f64, 0.0f64);
        for (t, g) in grads.iter().enumerate() {
            adam_step(&mut p, &[*g], 0.01, &cfg).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            w -= 0.01 * mh / (vh.sqrt() + 1e-8);
            assert!((p.value().data()[0] - w).abs() < 1e-12, "step {t}");
        }
    }

    #[test]
    fn zero_gradient_and_zero_lr_are_no_ops() {
        let mut p = Param::new("w", Tensor::<f64>::from_f64(&[2], &[0.5, -0.5]).unwrap());
        adam_step(&mut p, &[0.0, 0.0], 1e-3, &AdamConfig::default()).unwrap();
        assert_eq!(p.value().data(), &[0.5, -0.5]);
        adam_step(&mut p, &[1.0, -3.0], 0.0, &AdamConfig::default()).unwrap();
        assert_eq!(p.value().data(), &[0.5, -0.5]);
    }

    #[test]
    fn identical_inputs_identical_updates() {
        let mut a = Param::new("a", Tensor::<f32>::scalar(0.2));
        let mut b = Param::new("b", Tensor::<f32>::scalar(0.2));
        for g in [0.1f32, -0.4, 0.9] {
            adam_step(&mut a, &[g], 1e-2, &AdamConfig::default()).unwrap();
            adam_step(&mut b, &[g], 1e-2, &AdamConfig::default()).unwrap();
        }
        assert_eq!(a.value(), b.value());
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = Param::new("blocks.3.conv1.weight", Tensor::<f64>::scalar(0.0));
        match adam_step(&mut p, &[f64::NAN], 1e-3, &AdamConfig::default()) {
            Err(CkmError::Numerical { name, .. }) => assert_eq!(name, "blocks.3.conv1.weight"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn plateau_schedule() {
        let falling: Vec<f64> = (0..20).map(|i| 1.0 / (i + 1) as f64).collect();
        assert_eq!(plateau_lr(&falling, 2e-4, 0.5, 5).unwrap(), 2e-4);
        let mut flat = vec![1.0];
        flat.extend([1.0; 4]);
        assert_eq!(plateau_lr(&flat, 2e-4, 0.5, 5).unwrap(), 2e-4);
        flat.push(1.0);
        assert_eq!(plateau_lr(&flat, 2e-4, 0.5, 5).unwrap(), 1e-4);
        flat.extend([1.0; 5]);
        assert_eq!(plateau_lr(&flat, 2e-4, 0.5, 5).unwrap(), 5e-5);
        // An improvement resets the patience counter.
        let mixed = [1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.5, 0.5, 0.5];
        assert_eq!(plateau_lr(&mixed, 1.0, 0.5, 5).unwrap(), 1.0);
        assert!(PlateauScheduler::new(1.0, 1.0, 5).is_err());
    }
}
