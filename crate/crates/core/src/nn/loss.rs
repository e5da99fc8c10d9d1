//! Loss functions returning `(mean loss, d loss / d output)`.

use super::layers::sigmoid;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probability clamp applied before taking logarithms in the BCE losses.
pub const BCE_CLAMP: f64 = 1e-7;

/// A loss together with its target.
#[derive(Clone, Copy, Debug)]
pub enum Loss<'a, T> {
    /// Mean squared error over all elements.
    Mse(&'a Tensor<T>),
    /// Softmax cross-entropy on `[batch, classes]` logits, averaged over the batch.
    CrossEntropy(&'a [usize]),
    /// Binary cross-entropy on probabilities, averaged over all elements.
    Bce(&'a Tensor<T>),
    /// Binary cross-entropy on `sigmoid(output)`.
    BceWithLogits(&'a Tensor<T>),
}

impl<T: Scalar> Loss<'_, T> {
    pub fn evaluate(&self, output: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
        match self {
            Loss::Mse(t) => mse(output, t),
            Loss::CrossEntropy(labels) => cross_entropy(output, labels),
            Loss::Bce(t) => binary_cross_entropy(output, t),
            Loss::BceWithLogits(t) => bce_with_logits(output, t),
        }
    }
}

fn same_shape<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::Dimension(format!("prediction {:?} vs target {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Numerically stable softmax (max subtracted before exponentiation).
pub fn softmax<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `-log softmax(logits)[label]` for a single logit vector.
pub fn cross_entropy_single<T: Scalar>(logits: &[T], label: usize) -> Result<f64> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument(format!("cross-entropy needs >= 2 classes, got {}", logits.len())));
    }
    if label >= logits.len() {
        return Err(Error::ClassIndex { index: label, len: logits.len() });
    }
    let max = logits.iter().map(|v| v.as_f64()).fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
    Ok(lse - logits[label].as_f64())
}

pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let b = logits.batch();
    if labels.len() != b || logits.dims().len() != 2 {
        return Err(Error::Dimension(format!("logits {:?} with {} labels", logits.dims(), labels.len())));
    }
    let inv_b = T::one() / T::of(b as f64);
    let mut grad = Vec::with_capacity(logits.len());
    let mut total = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = logits.sample(i);
        total += cross_entropy_single(row, label)?;
        for (c, p) in softmax(row).into_iter().enumerate() {
            let t = if c == label { T::one() } else { T::zero() };
            grad.push((p - t) * inv_b);
        }
    }
    Ok((total / b as f64, Tensor::new(logits.dims().to_vec(), grad)?))
}

pub fn mse<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(pred, target)?;
    let n = pred.len() as f64;
    let scale = T::of(2.0 / n);
    let mut total = 0.0;
    let grad: Vec<T> = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p - t;
            total += d.as_f64() * d.as_f64();
            d * scale
        })
        .collect();
    Ok((total / n, Tensor::new(pred.dims().to_vec(), grad)?))
}

fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::of(BCE_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

fn bce_term(p: f64, t: f64) -> f64 {
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Mean binary cross-entropy of probabilities `pred` against `target`,
/// with `pred` clamped to `[1e-7, 1 - 1e-7]`.
pub fn binary_cross_entropy<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(pred, target)?;
    let n = pred.len() as f64;
    let inv_n = T::one() / T::of(n);
    let mut total = 0.0;
    let grad = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let (pc, clamped) = clamp_prob(p);
            total += bce_term(pc.as_f64(), t.as_f64());
            if clamped {
                T::zero()
            } else {
                (pc - t) / (pc * (T::one() - pc)) * inv_n
            }
        })
        .collect();
    Ok((total / n, Tensor::new(pred.dims().to_vec(), grad)?))
}

pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, target: &Tensor<T>) -> Result<(f64, Tensor<T>)> {
    same_shape(logits, target)?;
    let n = logits.len() as f64;
    let inv_n = T::one() / T::of(n);
    let mut total = 0.0;
    let grad = logits
        .data()
        .iter()
        .zip(target.data())
        .map(|(&z, &t)| {
            let (p, clamped) = clamp_prob(sigmoid(z));
            total += bce_term(p.as_f64(), t.as_f64());
            if clamped {
                T::zero()
            } else {
                (p - t) * inv_n
            }
        })
        .collect();
    Ok((total / n, Tensor::new(logits.dims().to_vec(), grad)?))
}
