//! Synthetic labelled corpus: harmonic "vessel" signatures over broadband noise.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::audio::{encode_wav, DatasetManifest, ManifestEntry, SampleFormat, Waveform};
use crate::error::{Error, Result};
use crate::rng::item_stream;

/// Peak amplitude after normalization.
pub const PEAK: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassProfile {
    pub name: String,
    /// `None` for broadband-only sources.
    pub fundamental_hz: Option<f64>,
    pub harmonics: usize,
    /// Level drop per harmonic.
    pub rolloff_db: f64,
    /// Amplitude of the fundamental.
    pub tonal_level: f64,
    /// Standard deviation of the broadband Gaussian noise.
    pub noise_level: f64,
    /// Propeller-cadence amplitude modulation.
    pub am_rate_hz: f64,
    pub am_depth: f64,
}

impl ClassProfile {
    pub fn vessel(name: &str, fundamental_hz: f64) -> Self {
        Self {
            name: name.into(),
            fundamental_hz: Some(fundamental_hz),
            harmonics: 6,
            rolloff_db: 3.0,
            tonal_level: 1.0,
            noise_level: 0.5,
            am_rate_hz: 2.0,
            am_depth: 0.3,
        }
    }

    pub fn background() -> Self {
        Self {
            name: "background".into(),
            fundamental_hz: None,
            harmonics: 0,
            rolloff_db: 0.0,
            tonal_level: 0.0,
            noise_level: 1.0,
            am_rate_hz: 0.0,
            am_depth: 0.0,
        }
    }

    pub fn validate(&self, rate: u32) -> Result<()> {
        let finite = [self.rolloff_db, self.tonal_level, self.noise_level, self.am_rate_hz, self.am_depth].iter().all(|v| v.is_finite());
        if !finite || self.noise_level < 0.0 || self.tonal_level < 0.0 || !(0.0..=1.0).contains(&self.am_depth) {
            return Err(Error::InvalidArgument(format!("profile `{}` has invalid levels", self.name)));
        }
        if let Some(f0) = self.fundamental_hz {
            let nyquist = rate as f64 / 2.0;
            if !(f0 > 0.0) || f0 * self.harmonics.max(1) as f64 >= nyquist {
                return Err(Error::InvalidArgument(format!(
                    "profile `{}`: fundamental {f0} Hz x {} harmonics reaches Nyquist {nyquist} Hz",
                    self.name, self.harmonics
                )));
            }
        }
        Ok(())
    }
}

/// Background (broadband only) plus four vessel classes at 120, 300, 600 and 900 Hz.
pub fn default_profiles() -> Vec<ClassProfile> {
    vec![
        ClassProfile::background(),
        ClassProfile::vessel("cargo", 120.0),
        ClassProfile::vessel("passenger-ship", 300.0),
        ClassProfile::vessel("tanker", 600.0),
        ClassProfile::vessel("tug", 900.0),
    ]
}

/// Harmonic series with rolloff, amplitude-modulated, plus white Gaussian
/// noise, peak-normalized to [`PEAK`]. Harmonic and modulation phases are random.
pub fn generate_vessel_signal<R: Rng + ?Sized>(profile: &ClassProfile, duration_s: f64, rate: u32, rng: &mut R) -> Result<Waveform<f64>> {
    profile.validate(rate)?;
    let n = (duration_s * rate as f64).round() as usize;
    let dt = 1.0 / rate as f64;
    let partials: Vec<(f64, f64, f64)> = match profile.fundamental_hz {
        Some(f0) if profile.tonal_level > 0.0 => (1..=profile.harmonics)
            .map(|h| {
                let amp = profile.tonal_level * 10f64.powf(-profile.rolloff_db * (h - 1) as f64 / 20.0);
                (2.0 * PI * f0 * h as f64, amp, rng.random::<f64>() * 2.0 * PI)
            })
            .collect(),
        _ => Vec::new(),
    };
    let am_phase = rng.random::<f64>() * 2.0 * PI;
    let mut x = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * dt;
        let tonal: f64 = partials.iter().map(|&(w, a, p)| a * (w * t + p).sin()).sum();
        let am = 1.0 + profile.am_depth * (2.0 * PI * profile.am_rate_hz * t + am_phase).sin();
        let noise: f64 = if profile.noise_level > 0.0 { {
            let z: f64 = StandardNormal.sample(rng);
            profile.noise_level * z
        } } else { 0.0 };
        x.push(tonal * am + noise);
    }
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let g = PEAK / peak;
        x.iter_mut().for_each(|v| *v *= g);
    }
    Ok(Waveform { samples: x, sample_rate: rate, source_id: String::new() })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub profiles: Vec<ClassProfile>,
    pub recordings_per_class: usize,
    pub recording_s: f64,
    pub sample_rate: u32,
    /// Relative per-recording jitter of the fundamental.
    pub fundamental_jitter: f64,
    /// Per-recording noise level factor is drawn from `[1/j, j]`.
    pub noise_jitter: f64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            profiles: default_profiles(),
            recordings_per_class: 10,
            recording_s: 20.0,
            sample_rate: 32_000,
            fundamental_jitter: 0.02,
            noise_jitter: 1.25,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.profiles.len() < 2 {
            return Err(Error::InvalidArgument("a corpus needs at least two profiles".into()));
        }
        if !self.profiles.iter().any(|p| p.name == "background") {
            return Err(Error::InvalidArgument("one profile must be named `background`".into()));
        }
        let mut names = HashSet::new();
        for p in &self.profiles {
            if !names.insert(p.name.as_str()) {
                return Err(Error::PathCollision(format!("two profiles are named `{}`", p.name)));
            }
            p.validate(self.sample_rate)?;
        }
        if !(self.recording_s > 0.0) || self.recordings_per_class == 0 {
            return Err(Error::InvalidArgument("recording length and count must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.fundamental_jitter) || !(self.noise_jitter >= 1.0) {
            return Err(Error::InvalidArgument("jitter settings out of range".into()));
        }
        Ok(())
    }

    /// Source ids in manifest order.
    pub fn source_ids(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for p in &self.profiles {
            for i in 0..self.recordings_per_class {
                out.push((p.name.clone(), format!("{}-{i:03}", p.name)));
            }
        }
        out
    }
}

/// One recording with its per-recording jitter applied.
pub fn generate_recording(spec: &CorpusSpec, profile: &ClassProfile, index: usize, seed: u64) -> Result<Waveform<f64>> {
    let mut rng = item_stream(seed, &format!("synth/{}", profile.name), index as u64);
    let mut p = profile.clone();
    let j = spec.fundamental_jitter;
    if let Some(f0) = p.fundamental_hz {
        p.fundamental_hz = Some(f0 * (1.0 + rng.random_range(-j..=j)));
    }
    let lj = spec.noise_jitter.ln();
    p.noise_level *= rng.random_range(-lj..=lj).exp();
    p.am_rate_hz *= 1.0 + rng.random_range(-0.1..=0.1);
    Ok(generate_vessel_signal(&p, spec.recording_s, spec.sample_rate, &mut rng)?.with_source(format!("{}-{index:03}", profile.name)))
}

/// Writes `audio/<class>/<source_id>.wav` (PCM 16-bit) under `out_dir` and
/// returns the manifest with paths relative to `out_dir`.
pub fn generate_corpus(spec: &CorpusSpec, seed: u64, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    let mut entries = Vec::new();
    for p in &spec.profiles {
        let dir = out_dir.join("audio").join(&p.name);
        std::fs::create_dir_all(&dir)?;
        for i in 0..spec.recordings_per_class {
            let w = generate_recording(spec, p, i, seed)?;
            let rel = format!("audio/{}/{}.wav", p.name, w.source_id);
            std::fs::write(out_dir.join(&rel), encode_wav(&w, SampleFormat::Pcm16))?;
            entries.push(ManifestEntry {
                path: rel,
                source_id: w.source_id.clone(),
                label: p.name.clone(),
                duration_s: w.samples.len() as f64 / spec.sample_rate as f64,
            });
        }
    }
    DatasetManifest::new(entries)
}
