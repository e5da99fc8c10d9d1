//! Polyphase windowed-sinc resampling.

use std::f64::consts::PI;

use super::Waveform;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Filter taps per polyphase branch.
pub const TAPS: usize = 32;
/// Largest phase table; finer ratios snap to the nearest of these phases.
pub const MAX_PHASES: usize = 1024;
const KAISER_BETA: f64 = 8.0;
/// Cutoff as a fraction of the lower Nyquist frequency.
const ROLLOFF: f64 = 0.94;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let q = x * x / 4.0;
    for k in 1..64 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

/// Phase table: `phases` rows of `TAPS` coefficients, each row normalized
/// to unit DC gain. Row `p` interpolates at fractional offset `p / phases`.
fn design(phases: usize, cutoff: f64) -> Vec<f64> {
    let half = (TAPS / 2) as f64;
    let norm = bessel_i0(KAISER_BETA);
    let mut table = Vec::with_capacity(phases * TAPS);
    for p in 0..phases {
        let frac = p as f64 / phases as f64;
        let start = table.len();
        for k in 0..TAPS {
            // Tap k multiplies x[i + k - (TAPS/2 - 1)].
            let t = k as f64 - (half - 1.0) - frac;
            let r = t / half;
            let w = if r.abs() <= 1.0 { bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / norm } else { 0.0 };
            table.push(cutoff * sinc(cutoff * t) * w);
        }
        let sum: f64 = table[start..].iter().sum();
        table[start..].iter_mut().for_each(|c| *c /= sum);
    }
    table
}

/// Resamples to `target_rate`; output length is `round(len * target / source)`.
pub fn resample<T: Scalar>(w: &Waveform<T>, target_rate: u32) -> Result<Waveform<T>> {
    if target_rate == 0 {
        return Err(Error::InvalidArgument("target sample rate must be positive".into()));
    }
    if w.sample_rate == 0 {
        return Err(Error::InvalidArgument("source sample rate must be positive".into()));
    }
    if target_rate == w.sample_rate {
        return Ok(w.clone());
    }
    let (src, dst) = (w.sample_rate as u64, target_rate as u64);
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let phases = (up as usize).min(MAX_PHASES);
    let cutoff = ROLLOFF * (dst as f64 / src as f64).min(1.0);
    let table = design(phases, cutoff);

    let n_in = w.samples.len();
    let n_out = ((n_in as u64 * dst + src / 2) / src) as usize;
    let x = &w.samples;
    let lead = TAPS / 2 - 1;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        let num = n as u64 * down;
        let i = (num / up) as usize;
        let rem = num % up;
        let p = if phases as u64 == up {
            rem as usize
        } else {
            ((rem as f64 / up as f64) * phases as f64).round() as usize
        };
        // Rounding may land on the next sample's zero phase.
        let (i, p) = if p == phases { (i + 1, 0) } else { (i, p) };
        let row = &table[p * TAPS..(p + 1) * TAPS];
        let mut acc = 0.0f64;
        for (k, &c) in row.iter().enumerate() {
            let j = (i + k) as isize - lead as isize;
            if j >= 0 && (j as usize) < n_in {
                acc += c * x[j as usize].as_f64();
            }
        }
        out.push(T::of(acc));
    }
    Ok(Waveform { samples: out, sample_rate: target_rate, source_id: w.source_id.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, rate: u32, n: usize) -> Waveform<f64> {
        Waveform {
            samples: (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate as f64).sin() * 0.5).collect(),
            sample_rate: rate,
            source_id: "rec".into(),
        }
    }

    #[test]
    fn same_rate_is_identity() {
        let w = tone(100.0, 32_000, 1000);
        assert_eq!(resample(&w, 32_000).unwrap(), w);
    }

    #[test]
    fn halving_length() {
        let w = tone(100.0, 64_000, 64_000);
        let r = resample(&w, 32_000).unwrap();
        assert_eq!(r.samples.len(), 32_000);
        assert_eq!(r.sample_rate, 32_000);
        assert_eq!(r.source_id, "rec");
    }

    #[test]
    fn interior_tone_survives_rate_change() {
        let w = tone(440.0, 44_100, 44_100);
        let r = resample(&w, 32_000).unwrap();
        assert_eq!(r.samples.len(), 32_000);
        for n in (100..31_900).step_by(97) {
            let want = (2.0 * PI * 440.0 * n as f64 / 32_000.0).sin() * 0.5;
            assert!((r.samples[n] - want).abs() < 1e-3, "n={n}: {} vs {want}", r.samples[n]);
        }
    }

    #[test]
    fn phases_have_unit_dc_gain() {
        let t = design(7, 0.9);
        for row in t.chunks(TAPS) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fine_ratio_uses_capped_table() {
        let w = tone(1000.0, 44_100, 4410);
        let r = resample(&w, 44_099).unwrap();
        assert_eq!(r.samples.len(), 4410);
        for n in (100..4300).step_by(37) {
            let want = (2.0 * PI * 1000.0 * n as f64 / 44_099.0).sin() * 0.5;
            assert!((r.samples[n] - want).abs() < 5e-3);
        }
    }
}
