use super::adam::Adam;
use super::layers::Mode;
use super::loss::Loss;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Forward, loss, reverse-mode gradients and a single Adam update.
///
/// Returns the batch loss. A non-finite loss aborts before any parameter
/// is touched and reports per-tensor parameter norms.
pub fn train_step<T: Scalar>(net: &mut Network<T>, input: &Tensor<T>, loss: &Loss<'_, T>, opt: &mut Adam<T>) -> Result<f64> {
    net.zero_grad();
    let out = net.forward(input, Mode::Train)?;
    let (value, grad) = loss.evaluate(&out)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { loss: value, epoch: None, batch: None, norms: net.param_norms() });
    }
    net.backward(&grad);
    opt.step(&mut net.params())?;
    Ok(value)
}

/// Forward and backward for one group of samples without updating
/// parameters. The loss gradient is multiplied by `scale` before
/// backpropagation, so several groups can share one optimizer step.
pub fn accumulate<T: Scalar>(net: &mut Network<T>, input: &Tensor<T>, loss: &Loss<'_, T>, scale: f64) -> Result<f64> {
    let out = net.forward(input, Mode::Train)?;
    let (value, mut grad) = loss.evaluate(&out)?;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { loss: value, epoch: None, batch: None, norms: net.param_norms() });
    }
    if scale != 1.0 {
        let s = T::of(scale);
        grad.data_mut().iter_mut().for_each(|g| *g *= s);
    }
    net.backward(&grad);
    Ok(value)
}

/// Attaches epoch/batch coordinates to a non-finite-loss error.
pub fn locate(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFiniteLoss { loss, norms, .. } => Error::NonFiniteLoss { loss, epoch: Some(epoch), batch: Some(batch), norms },
        other => other,
    }
}

/// Learning rate for `epoch` under per-epoch exponential decay `gamma`.
pub fn decayed_lr(base: f64, gamma: f64, epoch: usize) -> f64 {
    base * gamma.powi(epoch as i32)
}
