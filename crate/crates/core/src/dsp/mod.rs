//! Spectrogram front end: STFT, frequency compression, per-bin
//! normalization, augmentation and export.

pub mod augment;
pub mod compress;
pub mod export;
pub mod fft;
pub mod normalize;
pub mod stft;

pub use augment::{augment_spectrogram, augment_waveform, frequency_mask, pitch_shift_bins, stretch_time, AugmentSpec, Band, Range};
pub use compress::compress_frequency;
pub use export::{to_csv_grid, to_pgm};
pub use normalize::{PerBinStats, NORMALIZER_EPSILON};
pub use stft::{power_spectrogram_db, Spectrogram, SpectrogramKind, Stft, StftConfig, WindowKind, COMPRESSED_BINS, FRAMES, FULL_BINS};

use crate::error::Result;
use crate::scalar::Scalar;

/// Segment samples to a compressed 256-row dB spectrogram.
pub fn compressed_spectrogram<T: Scalar>(plan: &Stft<T>, samples: &[T], sample_rate: u32) -> Result<Spectrogram<T>> {
    compress_frequency(&plan.power_spectrogram_db(samples, sample_rate)?)
}

use serde::{Deserialize, Serialize};

/// Identifies the preprocessing a model was trained on. Inference inputs
/// must be produced by a pipeline with an equal fingerprint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub stft: StftConfig,
    pub normalizer_sha256: String,
    pub denoised: bool,
}

impl Fingerprint {
    pub fn new<T: Scalar>(stft: StftConfig, stats: &PerBinStats<T>, denoised: bool) -> Self {
        Self { stft, normalizer_sha256: stats.fingerprint(), denoised }
    }

    pub fn describe(&self) -> String {
        format!(
            "stft(n_fft={}, hop={}, window={:?}) normalizer={} denoised={}",
            self.stft.fft_size, self.stft.hop, self.stft.window, self.normalizer_sha256, self.denoised
        )
    }

    pub fn check(&self, found: &Fingerprint) -> Result<()> {
        if self != found {
            return Err(crate::error::Error::FingerprintMismatch { expected: self.describe(), found: found.describe() });
        }
        Ok(())
    }
}
