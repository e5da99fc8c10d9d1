//! Audio ingestion: WAV files, resampling, segmentation, manifests and
//! recording-level dataset splits.

pub mod dataset;
pub mod manifest;
pub mod resample;
pub mod wav;

pub use dataset::{build_dataset, partition, ContaminationBase, CuratedManifest, CuratedRow, DatasetSpec, Split, SplitAssignment};
pub use manifest::{DatasetManifest, ManifestEntry, CLASS_NAMES};
pub use resample::resample;
pub use wav::{encode_wav, parse_wav, SampleFormat};

use std::path::Path;

use crate::error::Result;
use crate::scalar::Scalar;

/// Working sample rate of the pipeline.
pub const TARGET_RATE: u32 = 32_000;
/// Segment length in seconds.
pub const SEGMENT_SECONDS: f64 = 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl<T: Scalar> Waveform<T> {
    pub fn with_source(mut self, source_id: impl Into<String>) -> Self {
        self.source_id = source_id.into();
        self
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment<T> {
    pub samples: Vec<T>,
    pub sample_rate: u32,
    pub source_id: String,
    pub segment_index: usize,
    pub label: Option<String>,
}

/// Samples per segment of `duration_s` at `rate`.
pub fn segment_len(duration_s: f64, rate: u32) -> usize {
    (duration_s * rate as f64).round() as usize
}

/// Non-overlapping fixed-length segments; the trailing remainder is dropped.
pub fn segment<T: Scalar>(w: &Waveform<T>, duration_s: f64, label: Option<&str>) -> Vec<Segment<T>> {
    let n = segment_len(duration_s, w.sample_rate);
    if n == 0 {
        return Vec::new();
    }
    w.samples
        .chunks_exact(n)
        .enumerate()
        .map(|(i, chunk)| Segment {
            samples: chunk.to_vec(),
            sample_rate: w.sample_rate,
            source_id: w.source_id.clone(),
            segment_index: i,
            label: label.map(str::to_owned),
        })
        .collect()
}

/// Reads, resamples to `rate` and tags a WAV file.
pub fn load_wav<T: Scalar>(path: &Path, source_id: &str, rate: u32) -> Result<Waveform<T>> {
    let bytes = std::fs::read(path)?;
    resample(&parse_wav::<T>(&bytes)?.with_source(source_id), rate)
}
