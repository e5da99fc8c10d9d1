//! Pipeline configuration: one TOML file with a section per stage. Every
//! field has a default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use tidewatch::audio::DatasetSpec;
use tidewatch::classifier::ClassifierConfig;
use tidewatch::denoiser::DenoiserConfig;
use tidewatch::detector::AutoEncoderConfig;
use tidewatch::dsp::StftConfig;
use tidewatch::synth::CorpusSpec;

use crate::StageError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    Raw,
    Denoised,
}

/// Pipeline-level switches that do not belong to a single model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageOptions {
    /// Train the denoiser on at most this many training spectrograms.
    pub denoiser_train_limit: Option<usize>,
    /// Real background spectrograms available to the denoiser's noise bank.
    pub noise_bank_size: usize,
    /// Noise intensity of the synthetic evaluation pairs.
    pub denoise_eval_intensity: f64,
    pub denoise_eval_limit: Option<usize>,
    pub classifier_input: InputKind,
    pub detector_input: InputKind,
    /// Before/after images written per report.
    pub images: usize,
}

impl Default for StageOptions {
    fn default() -> Self {
        Self {
            denoiser_train_limit: None,
            noise_bank_size: 64,
            denoise_eval_intensity: 1.0,
            denoise_eval_limit: Some(64),
            classifier_input: InputKind::Raw,
            detector_input: InputKind::Raw,
            images: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    pub out: PathBuf,
    /// Recording manifest; defaults to the corpus written by `synth`.
    pub manifest: Option<PathBuf>,
    /// Train share of audio duration per class.
    pub split_ratio: f64,
    pub sample_rate: u32,
    pub synth: CorpusSpec,
    pub stft: StftConfig,
    pub dataset: DatasetSpec,
    pub denoiser: DenoiserConfig,
    pub classifier: ClassifierConfig,
    pub detector: AutoEncoderConfig,
    pub stages: StageOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("tidewatch-out"),
            manifest: None,
            split_ratio: 0.9,
            sample_rate: tidewatch::audio::TARGET_RATE,
            synth: CorpusSpec::default(),
            stft: StftConfig::default(),
            dataset: DatasetSpec::default(),
            denoiser: DenoiserConfig::default(),
            classifier: ClassifierConfig::default(),
            detector: AutoEncoderConfig::default(),
            stages: StageOptions::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, StageError> {
        toml::from_str(text).map_err(|e| StageError::usage(format!("invalid configuration: {e}")))
    }

    /// Reads `path`; relative paths inside the file resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, StageError> {
        let text = std::fs::read_to_string(path).map_err(|e| StageError::usage(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.out.is_relative() {
            cfg.out = base.join(&cfg.out);
        }
        if let Some(m) = cfg.manifest.as_mut() {
            if m.is_relative() {
                *m = base.join(&*m);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), StageError> {
        let check = |r: tidewatch::Result<()>| r.map_err(|e| StageError::usage(format!("invalid configuration: {e}")));
        check(self.stft.validate())?;
        check(self.classifier.validate())?;
        let bins = tidewatch::dsp::COMPRESSED_BINS;
        check(self.denoiser.validate(bins))?;
        check(self.detector.validate(bins * self.stft.frames))?;
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(StageError::usage(format!("split_ratio {} outside (0, 1)", self.split_ratio)));
        }
        Ok(())
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.manifest.clone().unwrap_or_else(|| self.out.join("corpus").join("manifest.csv"))
    }

    /// SHA-256 of the resolved configuration with output and manifest
    /// locations blanked, so relocating a run keeps its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        c.manifest = None;
        let json = serde_json::to_string(&c).expect("configuration serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_default() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn partial_sections_and_unknown_keys() {
        let c = PipelineConfig::from_toml("seed = 3\n[classifier]\nepochs = 2\n[dataset]\nper_class = 10\n").unwrap();
        assert_eq!((c.seed, c.classifier.epochs, c.classifier.lr, c.dataset.per_class), (3, 2, 1e-3, 10));
        assert!(PipelineConfig::from_toml("[classifier]\nepoch = 2\n").is_err());
    }

    #[test]
    fn hash_ignores_locations_only() {
        let a = PipelineConfig::default();
        let mut b = a.clone();
        b.out = PathBuf::from("elsewhere");
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
        assert!(a.validate().is_ok());
    }
}
