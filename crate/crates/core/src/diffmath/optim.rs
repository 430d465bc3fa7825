use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub const LR_STEP_EPOCHS: usize = 3;
pub const LR_DECAY: f64 = 0.8;

/// Sum of squared errors over a batch.
pub fn mse_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Invalid("loss over an empty batch".into()));
    }
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "mse_loss",
            format!("{} predictions for {} targets", predictions.len(), targets.len()),
        ));
    }
    Ok(predictions.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum())
}

/// `λ · Σ‖θ‖²` over the regularized parameters.
pub fn l2_penalty(store: &ParamStore, lambda: f64) -> Result<f64> {
    if lambda < 0.0 {
        return Err(Error::Invalid(format!("negative L2 weight {lambda}")));
    }
    Ok(lambda * store.regularized_sq_norm())
}

/// Step decay: the rate shrinks by 0.8 every 3 epochs.
pub fn lr_schedule(initial_lr: f64, epoch: usize) -> f64 {
    initial_lr * LR_DECAY.powi((epoch / LR_STEP_EPOCHS) as i32)
}

/// Bias-corrected Adam moments, one pair per parameter in store order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            step: 0,
            m: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
            v: store.iter().map(|p| Tensor::zeros(p.value.shape())).collect(),
        }
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::shape("adam_step", format!("{} moments for {} parameters", self.m.len(), store.len())));
        }
        if let Some(p) = store.iter().find(|p| !p.grad.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
        self.step += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let grads = p.grad.data().to_vec();
            for (((theta, g), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(&grads)
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = ADAM_BETA1 * *mi + (1.0 - ADAM_BETA1) * g;
                *vi = ADAM_BETA2 * *vi + (1.0 - ADAM_BETA2) * g * g;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *theta -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
            }
        }
        store.zero_grad();
        Ok(())
    }
}
