use super::layers::Mode;
use super::loss::Loss;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::Result;
use crate::scalar::Scalar;

/// Finite-difference step.
pub const GRADCHECK_STEP: f64 = 1e-4;

/// Compares backprop gradients against central finite differences for
/// every parameter and returns the worst relative error
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// Costs two forward passes per parameter, so keep networks small.
pub fn gradient_check<T: Scalar>(net: &mut Network<T>, input: &Tensor<T>, loss: &Loss<'_, T>) -> Result<f64> {
    net.zero_grad();
    let out = net.forward(input, Mode::Train)?;
    let (_, grad) = loss.evaluate(&out)?;
    net.backward(&grad);
    let analytic: Vec<Vec<f64>> = net
        .params()
        .iter()
        .map(|p| p.grad().map(|g| g.iter().map(|v| v.as_f64()).collect()).unwrap_or_else(|| vec![0.0; p.len()]))
        .collect();

    let h = T::of(GRADCHECK_STEP);
    let mut worst = 0.0f64;
    for (pi, grads) in analytic.iter().enumerate() {
        for (i, &a) in grads.iter().enumerate() {
            let orig = net.params()[pi].data()[i];
            net.params()[pi].data_mut()[i] = orig + h;
            let plus = loss.evaluate(&net.forward(input, Mode::Train)?)?.0;
            net.params()[pi].data_mut()[i] = orig - h;
            let minus = loss.evaluate(&net.forward(input, Mode::Train)?)?.0;
            net.params()[pi].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * GRADCHECK_STEP);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
