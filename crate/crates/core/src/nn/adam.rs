use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam optimizer state: hyperparameters, step count and moment buffers.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step_count: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::InvalidArgument(format!("Adam betas must lie in [0, 1): {cfg:?}")));
        }
        if cfg.lr < 0.0 || cfg.eps <= 0.0 {
            return Err(Error::InvalidArgument(format!("Adam lr must be >= 0 and eps > 0: {cfg:?}")));
        }
        Ok(Self {
            lr: cfg.lr,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: cfg.eps,
            step_count: 0,
            first: Vec::new(),
            second: Vec::new(),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One Adam update of every parameter from its gradient slot.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) -> Result<()> {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        if self.first.len() != params.len() {
            return Err(Error::Dimension(format!(
                "optimizer tracks {} tensors, got {}",
                self.first.len(),
                params.len()
            )));
        }
        self.step_count += 1;
        for (i, p) in params.iter_mut().enumerate() {
            let (value, grad) = p.value_and_grad_mut();
            self.apply(i, value, grad)?;
        }
        Ok(())
    }

    /// Adam update for a single flat parameter given its gradient. The
    /// step counter is advanced by [`step`](Self::step) or by
    /// [`update`](Self::update), not here.
    fn apply(&mut self, index: usize, param: &mut [T], grad: &[T]) -> Result<()> {
        let (m, v) = (&mut self.first[index], &mut self.second[index]);
        if m.len() != param.len() || grad.len() != param.len() {
            return Err(Error::Dimension(format!(
                "tensor {index}: param {} / grad {} / state {}",
                param.len(),
                grad.len(),
                m.len()
            )));
        }
        let t = self.step_count as i32;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let bc1 = T::of(1.0 - self.beta1.powi(t));
        let bc2 = T::of(1.0 - self.beta2.powi(t));
        let lr = T::of(self.lr);
        let eps = T::of(self.eps);
        for (((p, &g), mi), vi) in param.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = b1 * *mi + c1 * g;
            *vi = b2 * *vi + c2 * g * g;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *p -= lr * mhat / (vhat.sqrt() + eps);
        }
        Ok(())
    }

    /// Standalone update over parallel `params` / `grads` slices.
    pub fn update(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Dimension("params and grads differ in count".into()));
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.second = self.first.clone();
        }
        self.step_count += 1;
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            self.apply(i, p, g)?;
        }
        Ok(())
    }
}
