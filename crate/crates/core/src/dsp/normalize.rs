use sha2::{Digest, Sha256};

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const NORMALIZER_EPSILON: f64 = 1e-8;

/// Per-frequency-bin standardization statistics fitted on a training set.
#[derive(Clone, Debug, PartialEq)]
pub struct PerBinStats<T> {
    pub mean: Vec<T>,
    pub std: Vec<T>,
    pub epsilon: T,
}

impl<T: Scalar> PerBinStats<T> {
    /// Population mean and standard deviation of every bin over all frames
    /// of all spectrograms. Accumulation runs in `f64`.
    pub fn fit<'a, I>(spectrograms: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Spectrogram<T>>,
        I::IntoIter: Clone,
    {
        let iter = spectrograms.into_iter();
        let mut count = 0usize;
        let mut dims = None;
        let mut sum: Vec<f64> = Vec::new();
        for sp in iter.clone() {
            match dims {
                None => {
                    dims = Some(sp.dims());
                    sum = vec![0.0; sp.bins()];
                }
                Some(d) if d != sp.dims() => {
                    return Err(Error::Dimension(format!("spectrogram {:?} differs from {d:?}", sp.dims())));
                }
                _ => {}
            }
            for (b, s) in sum.iter_mut().enumerate() {
                *s += sp.row(b).iter().map(|v| v.as_f64()).sum::<f64>();
            }
            count += 1;
        }
        if count < 2 {
            return Err(Error::InvalidArgument(format!("normalizer needs >= 2 spectrograms, got {count}")));
        }
        let (bins, frames) = dims.expect("count >= 2");
        let n = (count * frames) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let mut sq = vec![0.0f64; bins];
        for sp in iter {
            for (b, q) in sq.iter_mut().enumerate() {
                let m = mean[b];
                *q += sp.row(b).iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
            }
        }
        let std: Vec<f64> = sq.iter().map(|q| (q / n).sqrt()).collect();
        let flat = std.iter().filter(|&&s| s == 0.0).count();
        if flat > 0 {
            log::warn!("{flat} of {bins} frequency bins have zero variance; their std is clamped by epsilon");
        }
        Ok(Self {
            mean: mean.into_iter().map(T::of).collect(),
            std: std.into_iter().map(T::of).collect(),
            epsilon: T::of(NORMALIZER_EPSILON),
        })
    }

    pub fn bins(&self) -> usize {
        self.mean.len()
    }

    pub fn zero_variance_bins(&self) -> usize {
        self.std.iter().filter(|s| **s == T::zero()).count()
    }

    fn check(&self, sp: &Spectrogram<T>) -> Result<()> {
        if sp.bins() != self.bins() {
            return Err(Error::Dimension(format!("stats cover {} bins, spectrogram has {}", self.bins(), sp.bins())));
        }
        Ok(())
    }

    /// `(x - mean) / (std + epsilon)` per bin.
    pub fn apply(&self, sp: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        self.check(sp)?;
        let mut v = sp.values().to_vec();
        let f = sp.frames();
        for (b, row) in v.chunks_mut(f).enumerate() {
            let (m, d) = (self.mean[b], self.std[b] + self.epsilon);
            row.iter_mut().for_each(|x| *x = (*x - m) / d);
        }
        Ok(sp.with_values(v).set_normalized(true))
    }

    /// Inverse of [`apply`](Self::apply), back to dB.
    pub fn invert(&self, sp: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        self.check(sp)?;
        let mut v = sp.values().to_vec();
        let f = sp.frames();
        for (b, row) in v.chunks_mut(f).enumerate() {
            let (m, d) = (self.mean[b], self.std[b] + self.epsilon);
            row.iter_mut().for_each(|x| *x = *x * d + m);
        }
        Ok(sp.with_values(v).set_normalized(false))
    }

    /// Little-endian f32 image: count, means, stds, epsilon.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.bins() + 4);
        out.extend_from_slice(&(self.bins() as u32).to_le_bytes());
        for v in self.mean.iter().chain(&self.std) {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
        out.extend_from_slice(&self.epsilon.as_f32().to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let truncated = || Error::Truncated("normalizer statistics".into());
        let n = u32::from_le_bytes(bytes.get(..4).ok_or_else(truncated)?.try_into().unwrap()) as usize;
        let need = 4 + 8 * n + 4;
        if bytes.len() < need {
            return Err(truncated());
        }
        if bytes.len() > need {
            return Err(Error::Checkpoint("trailing bytes after normalizer statistics".into()));
        }
        let f = |i: usize| T::of(f32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as f64);
        Ok(Self { mean: (0..n).map(f).collect(), std: (n..2 * n).map(f).collect(), epsilon: f(2 * n) })
    }

    /// SHA-256 of [`to_bytes`](Self::to_bytes), hex encoded.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(self.to_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
