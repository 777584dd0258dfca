//! Optimizers and the learning-rate schedule.

use super::params::ParamSet;
use super::tensor::Tensor;
use super::NumericsError;

/// A gradient-descent update rule over a [`ParamSet`].
///
/// `step` consumes the accumulated gradients (applying the update and
/// zeroing them) for every trainable parameter.
pub trait Optimizer {
    fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), NumericsError>;
}

/// Adam with bias correction. beta1 = 0.9, beta2 = 0.999, eps = 1e-8.
pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: u64,
    moments: std::collections::HashMap<String, (Tensor, Tensor)>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam { beta1, beta2, eps, step: 0, moments: std::collections::HashMap::new() }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), NumericsError> {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (Tensor::zeros(p.value.shape().to_vec()), Tensor::zeros(p.value.shape().to_vec())));
            if m.shape() != p.value.shape() {
                return Err(NumericsError::ShapeMismatch {
                    op: "adam_step".into(),
                    detail: format!("moment shape {:?} vs param `{}` shape {:?}", m.shape(), p.name, p.value.shape()),
                });
            }
            let beta1 = self.beta1;
            let beta2 = self.beta2;
            let eps = self.eps;
            for i in 0..p.value.numel() {
                let g = p.grad.data()[i];
                let mi = beta1 * m.data()[i] + (1.0 - beta1) * g;
                let vi = beta2 * v.data()[i] + (1.0 - beta2) * g * g;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let m_hat = mi / bc1;
                let v_hat = vi / bc2;
                p.value.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            p.value.check_finite("adam_step")?;
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}

/// Plain SGD behind the same interface, for ablations.
#[derive(Default)]
pub struct Sgd;

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<(), NumericsError> {
        for p in params.iter_mut() {
            if !p.trainable {
                continue;
            }
            for i in 0..p.value.numel() {
                let g = p.grad.data()[i];
                p.value.data_mut()[i] -= lr * g;
            }
            p.value.check_finite("sgd_step")?;
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}

/// Cosine annealing: `0.5 * lr0 * (1 + cos(pi * step / total_steps))`.
pub fn cosine_lr(step: usize, total_steps: usize, lr0: f64) -> Result<f64, NumericsError> {
    if total_steps == 0 {
        return Err(NumericsError::InvalidSchedule { detail: "total_steps must be > 0".into() });
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    Ok((0.5 * lr0 * (1.0 + (std::f64::consts::PI * frac).cos())).max(0.0))
}
