use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use super::fft::RealFft;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One-sided bins of the full spectrogram (`fft_size / 2 + 1`).
pub const FULL_BINS: usize = 2049;
/// Frequency rows after linear compression.
pub const COMPRESSED_BINS: usize = 256;
/// Time frames per two-second segment.
pub const FRAMES: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WindowKind {
    /// Periodic Hann, `0.5 - 0.5 cos(2 pi n / N)`.
    Hann,
    Rectangular,
}

impl WindowKind {
    pub fn coefficients(self, n: usize) -> Vec<f64> {
        match self {
            WindowKind::Hann => (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect(),
            WindowKind::Rectangular => vec![1.0; n],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub fft_size: usize,
    pub hop: usize,
    pub window: WindowKind,
    /// Lower clamp of the dB scale.
    pub db_floor: f64,
    /// Added to `|X|^2` before the logarithm.
    pub power_epsilon: f64,
    /// Frames kept per segment.
    pub frames: usize,
}

impl Default for StftConfig {
    /// 4096-point Hann, hop 300: a 64,000-sample segment gives
    /// `(64000 - 4096) / 300 + 1 = 200` frames of 2049 bins.
    fn default() -> Self {
        Self { fft_size: 4096, hop: 300, window: WindowKind::Hann, db_floor: -120.0, power_epsilon: 1e-12, frames: FRAMES }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.fft_size.is_power_of_two() || self.fft_size < 2 {
            return Err(Error::InvalidArgument(format!("fft_size {} is not a power of two", self.fft_size)));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return Err(Error::InvalidArgument(format!("hop {} must lie in 1..={}", self.hop, self.fft_size)));
        }
        if !self.db_floor.is_finite() || !(self.power_epsilon > 0.0) || self.frames == 0 {
            return Err(Error::InvalidArgument(format!("invalid floor/epsilon/frames in {self:?}")));
        }
        Ok(())
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Frames a signal of `len` samples supports without padding.
    pub fn achievable_frames(&self, len: usize) -> usize {
        if len < self.fft_size {
            0
        } else {
            (len - self.fft_size) / self.hop + 1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpectrogramKind {
    Full,
    Compressed,
}

/// Time-frequency grid stored frequency-major: `values[bin * frames + frame]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrogram<T> {
    pub(crate) values: Vec<T>,
    bins: usize,
    frames: usize,
    bin_hz: f64,
    floor: f64,
    kind: SpectrogramKind,
    normalized: bool,
}

impl<T: Scalar> Spectrogram<T> {
    pub fn new(values: Vec<T>, bins: usize, frames: usize, bin_hz: f64, floor: f64, kind: SpectrogramKind) -> Result<Self> {
        if values.len() != bins * frames {
            return Err(Error::Dimension(format!("{} values for {bins}x{frames} grid", values.len())));
        }
        Ok(Self { values, bins, frames, bin_hz, floor, kind, normalized: false })
    }

    /// Constant grid, handy for tests and padding.
    pub fn constant(value: T, bins: usize, frames: usize, floor: f64, kind: SpectrogramKind) -> Self {
        Self { values: vec![value; bins * frames], bins, frames, bin_hz: 1.0, floor, kind, normalized: false }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.bins, self.frames)
    }

    pub fn bin_hz(&self) -> f64 {
        self.bin_hz
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn kind(&self) -> SpectrogramKind {
        self.kind
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn get(&self, bin: usize, frame: usize) -> T {
        self.values[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, v: T) {
        self.values[bin * self.frames + frame] = v;
    }

    pub fn row(&self, bin: usize) -> &[T] {
        &self.values[bin * self.frames..(bin + 1) * self.frames]
    }

    /// Same metadata, new values.
    pub fn with_values(&self, values: Vec<T>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            bins: self.bins,
            frames: self.frames,
            bin_hz: self.bin_hz,
            floor: self.floor,
            kind: self.kind,
            normalized: self.normalized,
        }
    }

    pub(crate) fn set_normalized(mut self, normalized: bool) -> Self {
        self.normalized = normalized;
        self
    }

    pub fn cast<U: Scalar>(&self) -> Spectrogram<U> {
        Spectrogram {
            values: self.values.iter().map(|v| U::of(v.as_f64())).collect(),
            bins: self.bins,
            frames: self.frames,
            bin_hz: self.bin_hz,
            floor: self.floor,
            kind: self.kind,
            normalized: self.normalized,
        }
    }

    pub fn max_value(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }
}

/// Reusable STFT plan (window + FFT tables) for one configuration.
#[derive(Clone, Debug)]
pub struct Stft<T> {
    cfg: StftConfig,
    window: Vec<T>,
    fft: RealFft<T>,
}

impl<T: Scalar> Stft<T> {
    pub fn new(cfg: StftConfig) -> Result<Self> {
        cfg.validate()?;
        let window = cfg.window.coefficients(cfg.fft_size).into_iter().map(T::of).collect();
        Ok(Self { cfg, window, fft: RealFft::new(cfg.fft_size) })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    pub fn window(&self) -> &[T] {
        &self.window
    }

    /// `|X_t[k]|^2` for frames `t < cfg.frames`, stored frame-major
    /// (`out[t * bins + k]`).
    pub fn frame_power(&self, samples: &[T]) -> Result<Vec<T>> {
        let cfg = &self.cfg;
        let achievable = cfg.achievable_frames(samples.len());
        if achievable < cfg.frames {
            return Err(Error::Dimension(format!(
                "{} samples with fft_size {} and hop {} yield {achievable} frames, {} required",
                samples.len(),
                cfg.fft_size,
                cfg.hop,
                cfg.frames
            )));
        }
        let bins = cfg.bins();
        let mut out = Vec::with_capacity(bins * cfg.frames);
        let mut frame = vec![T::zero(); cfg.fft_size];
        let mut re = vec![T::zero(); bins];
        let mut im = vec![T::zero(); bins];
        for t in 0..cfg.frames {
            let start = t * cfg.hop;
            for ((f, &s), &w) in frame.iter_mut().zip(&samples[start..start + cfg.fft_size]).zip(&self.window) {
                *f = s * w;
            }
            self.fft.process(&frame, &mut re, &mut im);
            out.extend(re.iter().zip(&im).map(|(&r, &i)| r * r + i * i));
        }
        Ok(out)
    }

    /// Full dB power spectrogram: `10 log10(|X|^2 + eps)` clamped at the floor.
    pub fn power_spectrogram_db(&self, samples: &[T], sample_rate: u32) -> Result<Spectrogram<T>> {
        let cfg = &self.cfg;
        let power = self.frame_power(samples)?;
        let bins = cfg.bins();
        let frames = cfg.frames;
        let eps = T::of(cfg.power_epsilon);
        let floor = T::of(cfg.db_floor);
        let ten = T::of(10.0);
        let mut values = vec![floor; bins * frames];
        for t in 0..frames {
            for k in 0..bins {
                let db = ten * (power[t * bins + k] + eps).log10();
                values[k * frames + t] = if db > floor { db } else { floor };
            }
        }
        Spectrogram::new(values, bins, frames, sample_rate as f64 / cfg.fft_size as f64, cfg.db_floor, SpectrogramKind::Full)
    }
}

/// Convenience wrapper building a one-off plan.
pub fn power_spectrogram_db<T: Scalar>(samples: &[T], sample_rate: u32, cfg: &StftConfig) -> Result<Spectrogram<T>> {
    Stft::new(*cfg)?.power_spectrogram_db(samples, sample_rate)
}
