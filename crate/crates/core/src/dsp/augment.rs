use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::stft::Spectrogram;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Closed interval sampled uniformly; `lo == hi` yields the constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub const fn fixed(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        self.lo <= v && v <= self.hi
    }

    fn check(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo <= self.hi) {
            return Err(Error::InvalidArgument(format!("{name} range [{}, {}] is not a finite interval", self.lo, self.hi)));
        }
        Ok(())
    }

    /// One uniform draw. Always consumes exactly one value from `rng` so
    /// draw sequences do not depend on which ranges are degenerate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        self.lo + (self.hi - self.lo) * u
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub pitch_shift_semitones: Range,
    pub time_stretch: Range,
    pub gain_db: Range,
    pub noise_sigma: Range,
    /// Widest frequency mask in bins.
    pub freq_mask_width: usize,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            pitch_shift_semitones: Range::new(-1.0, 1.0),
            time_stretch: Range::new(0.9, 1.1),
            gain_db: Range::new(-6.0, 6.0),
            noise_sigma: Range::new(0.0, 0.01),
            freq_mask_width: 16,
        }
    }
}

impl AugmentSpec {
    /// Every range collapsed to its neutral value.
    pub fn identity() -> Self {
        Self {
            pitch_shift_semitones: Range::fixed(0.0),
            time_stretch: Range::fixed(1.0),
            gain_db: Range::fixed(0.0),
            noise_sigma: Range::fixed(0.0),
            freq_mask_width: 0,
        }
    }

    pub fn validate(&self, freq_bins: usize) -> Result<()> {
        self.pitch_shift_semitones.check("pitch_shift_semitones")?;
        self.time_stretch.check("time_stretch")?;
        self.gain_db.check("gain_db")?;
        self.noise_sigma.check("noise_sigma")?;
        if self.time_stretch.lo < 0.9 || self.time_stretch.hi > 1.1 {
            return Err(Error::InvalidArgument("time_stretch must stay within [0.9, 1.1]".into()));
        }
        if self.pitch_shift_semitones.lo < -2.0 || self.pitch_shift_semitones.hi > 2.0 {
            return Err(Error::InvalidArgument("pitch shift must stay within +-2 semitones".into()));
        }
        if self.noise_sigma.lo < 0.0 {
            return Err(Error::InvalidArgument("noise_sigma must be non-negative".into()));
        }
        if self.freq_mask_width >= freq_bins {
            return Err(Error::InvalidArgument(format!(
                "freq_mask_width {} must be below {freq_bins} bins",
                self.freq_mask_width
            )));
        }
        Ok(())
    }
}

/// Random gain and additive Gaussian noise on raw samples, clamped to [-1, 1].
pub fn augment_waveform<T: Scalar, R: Rng + ?Sized>(samples: &[T], spec: &AugmentSpec, rng: &mut R) -> Vec<T> {
    let gain = 10f64.powf(spec.gain_db.sample(rng) / 20.0);
    let sigma = spec.noise_sigma.sample(rng);
    let one = T::one();
    let noise = (sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("sigma is finite and positive"));
    samples
        .iter()
        .map(|&s| {
            let mut v = s.as_f64() * gain;
            if let Some(n) = &noise {
                v += n.sample(rng);
            }
            T::of(v).max(-one).min(one)
        })
        .collect()
}

fn lerp<T: Scalar>(row: &[T], pos: f64) -> T {
    let last = row.len() - 1;
    if pos <= 0.0 {
        return row[0];
    }
    if pos >= last as f64 {
        return row[last];
    }
    let i = pos.floor() as usize;
    let frac = T::of(pos - i as f64);
    row[i] + (row[i + 1] - row[i]) * frac
}

/// Linear resampling of the frame axis: output frame `t` reads input
/// position `t / factor`; positions past the end repeat the edge frame.
pub fn stretch_time<T: Scalar>(sp: &Spectrogram<T>, factor: f64) -> Result<Spectrogram<T>> {
    if !(0.9..=1.1).contains(&factor) {
        return Err(Error::InvalidArgument(format!("time stretch factor {factor} outside [0.9, 1.1]")));
    }
    if factor == 1.0 {
        return Ok(sp.clone());
    }
    let (bins, frames) = sp.dims();
    let mut v = Vec::with_capacity(bins * frames);
    for b in 0..bins {
        let row = sp.row(b);
        v.extend((0..frames).map(|t| lerp(row, t as f64 / factor)));
    }
    Ok(sp.with_values(v))
}

/// Frequency axis scaled by `2^(semitones / 12)`; bins whose source lies
/// beyond the top of the input are set to the floor.
pub fn pitch_shift_bins<T: Scalar>(sp: &Spectrogram<T>, semitones: f64) -> Result<Spectrogram<T>> {
    if !(-12.0..=12.0).contains(&semitones) {
        return Err(Error::InvalidArgument(format!("pitch shift {semitones} semitones outside one octave")));
    }
    if semitones == 0.0 {
        return Ok(sp.clone());
    }
    let ratio = 2f64.powf(semitones / 12.0);
    let (bins, frames) = sp.dims();
    let floor = T::of(sp.floor());
    let mut v = vec![floor; bins * frames];
    for k in 0..bins {
        let src = k as f64 / ratio;
        if src > (bins - 1) as f64 {
            continue;
        }
        let i = src.floor() as usize;
        let frac = T::of(src - i as f64);
        let lo = sp.row(i);
        let out = &mut v[k * frames..(k + 1) * frames];
        if i + 1 < bins {
            let hi = sp.row(i + 1);
            for t in 0..frames {
                out[t] = lo[t] + (hi[t] - lo[t]) * frac;
            }
        } else {
            out.copy_from_slice(lo);
        }
    }
    Ok(sp.with_values(v))
}

/// Half-open band of masked rows.
pub type Band = std::ops::Range<usize>;

/// Sets one band of width `w ~ U{0..=max_width}` to the floor over all frames.
pub fn frequency_mask<T: Scalar, R: Rng + ?Sized>(
    sp: &Spectrogram<T>,
    rng: &mut R,
    max_width: usize,
) -> Result<(Spectrogram<T>, Band)> {
    let (bins, frames) = sp.dims();
    if max_width >= bins {
        return Err(Error::InvalidArgument(format!("mask width {max_width} must be below {bins} bins")));
    }
    let w = rng.random_range(0..=max_width);
    let f0 = rng.random_range(0..=bins - w);
    let mut out = sp.clone();
    let floor = T::of(sp.floor());
    out.values_mut()[f0 * frames..(f0 + w) * frames].fill(floor);
    Ok((out, f0..f0 + w))
}

/// Spectrogram-domain augmentation chain on a dB grid: time stretch,
/// pitch shift, gain offset (clamped at the floor), then a frequency mask.
pub fn augment_spectrogram<T: Scalar, R: Rng + ?Sized>(
    sp: &Spectrogram<T>,
    spec: &AugmentSpec,
    rng: &mut R,
) -> Result<Spectrogram<T>> {
    let stretch = spec.time_stretch.sample(rng);
    let semitones = spec.pitch_shift_semitones.sample(rng);
    let gain = spec.gain_db.sample(rng);
    let mut out = stretch_time(sp, stretch)?;
    out = pitch_shift_bins(&out, semitones)?;
    if gain != 0.0 {
        let (g, floor) = (T::of(gain), T::of(sp.floor()));
        out.values_mut().iter_mut().for_each(|v| *v = (*v + g).max(floor));
    }
    Ok(frequency_mask(&out, rng, spec.freq_mask_width)?.0)
}
