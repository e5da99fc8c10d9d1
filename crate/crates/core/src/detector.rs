//! Novelty detection by autoencoder reconstruction error with a
//! percentile-calibrated threshold.

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::{Fingerprint, Spectrogram};
use crate::error::{Error, Result};
use crate::eval::{auroc, binary_metrics, Metrics};
use crate::nn::{decayed_lr, locate, train_step, Adam, AdamConfig, Checkpoint, LayerSpec, Loss, Mode, Network, Tag, Tensor, TrainingMeta, BCE_CLAMP};
use crate::rng::stream;
use crate::scalar::Scalar;

pub const THRESHOLD_TAG: Tag = *b"THRS";
pub const FINGERPRINT_TAG: Tag = *b"FPRT";

/// Symmetric dense autoencoder: ReLU hidden layers narrowing through
/// `widths` to a linear latent layer, mirrored decoder, sigmoid output.
pub fn autoencoder_specs(inputs: usize, widths: &[usize], latent: usize) -> Vec<LayerSpec> {
    let mut specs = Vec::new();
    let mut prev = inputs;
    for &w in widths {
        specs.push(LayerSpec::Dense { inputs: prev, units: w });
        specs.push(LayerSpec::Relu);
        prev = w;
    }
    specs.push(LayerSpec::Dense { inputs: prev, units: latent });
    prev = latent;
    for &w in widths.iter().rev() {
        specs.push(LayerSpec::Dense { inputs: prev, units: w });
        specs.push(LayerSpec::Relu);
        prev = w;
    }
    specs.push(LayerSpec::Dense { inputs: prev, units: inputs });
    specs.push(LayerSpec::Sigmoid);
    specs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutoEncoderConfig {
    pub widths: Vec<usize>,
    pub latent: usize,
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub percentile: f64,
}

impl Default for AutoEncoderConfig {
    fn default() -> Self {
        Self { widths: vec![512, 64], latent: 16, epochs: 50, lr: 1e-3, lr_decay: 1.0, batch_size: 32, percentile: 70.0 }
    }
}

impl AutoEncoderConfig {
    pub fn validate(&self, inputs: usize) -> Result<()> {
        let mut chain = vec![inputs];
        chain.extend(&self.widths);
        chain.push(self.latent);
        if self.latent == 0 || chain.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidArgument(format!("autoencoder widths must strictly decrease to the latent size: {chain:?}")));
        }
        if self.epochs == 0 || !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidArgument("autoencoder epochs, lr and batch size must be positive".into()));
        }
        check_percentile(self.percentile)
    }
}

fn check_percentile(p: f64) -> Result<()> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside (0, 100]")));
    }
    Ok(())
}

/// Affine map of `[lo, hi]` onto `[0, 1]`, clamped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub lo: f64,
    pub hi: f64,
}

impl Rescale {
    /// `lo` defaults to the smallest observed value; `hi` is the largest.
    pub fn fit<T: Scalar>(samples: &[Spectrogram<T>], lo: Option<f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in samples.iter().flat_map(|s| s.values()) {
            min = min.min(v.as_f64());
            max = max.max(v.as_f64());
        }
        let lo = lo.unwrap_or(min);
        if !(max > lo) {
            return Err(Error::InvalidArgument(format!("degenerate rescale range [{lo}, {max}]")));
        }
        Ok(Self { lo, hi: max })
    }

    pub fn apply<T: Scalar>(&self, values: &[T]) -> Vec<T> {
        let span = self.hi - self.lo;
        values.iter().map(|v| T::of(((v.as_f64() - self.lo) / span).clamp(0.0, 1.0))).collect()
    }
}

/// Mean binary cross-entropy of `recon` against `input`, probabilities
/// clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
pub fn bce_error<T: Scalar>(input: &[T], recon: &[T]) -> f64 {
    let s: f64 = input
        .iter()
        .zip(recon)
        .map(|(x, p)| {
            let (x, p) = (x.as_f64(), p.as_f64().clamp(BCE_CLAMP, 1.0 - BCE_CLAMP));
            -(x * p.ln() + (1.0 - x) * (1.0 - p).ln())
        })
        .sum();
    (s / input.len() as f64).max(0.0)
}

/// Value at 1-based rank `ceil(p/100 * N)` of the sorted errors.
pub fn calibrate_threshold(errors: &[f64], percentile: f64) -> Result<f64> {
    check_percentile(percentile)?;
    if errors.is_empty() {
        return Err(Error::Empty("calibration set".into()));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidArgument("non-finite calibration error".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let r = percentile * sorted.len() as f64 / 100.0;
    let rank = if (r - r.round()).abs() < 1e-9 { r.round() } else { r.ceil() } as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Known,
    Novel,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Known => "known",
            Verdict::Novel => "novel",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionVerdict {
    pub reconstruction_error: f64,
    pub threshold: f64,
    pub verdict: Verdict,
}

impl DetectionVerdict {
    /// Novel only when the error strictly exceeds the threshold.
    pub fn new(reconstruction_error: f64, threshold: f64) -> Self {
        let verdict = if reconstruction_error > threshold { Verdict::Novel } else { Verdict::Known };
        Self { reconstruction_error, threshold, verdict }
    }
}

#[derive(Clone, Debug)]
pub struct AutoEncoder<T> {
    pub network: Network<T>,
    pub rescale: Rescale,
}

fn stack<T: Scalar>(rescale: &Rescale, items: &[&Spectrogram<T>], width: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(items.len() * width);
    for s in items {
        if s.values().len() != width {
            return Err(Error::Dimension(format!("autoencoder expects {width} values, got {}", s.values().len())));
        }
        data.extend(rescale.apply(s.values()));
    }
    Tensor::new(vec![items.len(), width], data)
}

/// Trains on spectrograms rescaled by `rescale`; returns the per-epoch
/// mean BCE loss.
pub fn train_autoencoder<T: Scalar>(samples: &[Spectrogram<T>], rescale: Rescale, cfg: &AutoEncoderConfig, seed: u64) -> Result<(AutoEncoder<T>, Vec<f64>)> {
    let width = samples.first().ok_or_else(|| Error::Empty("autoencoder training set".into()))?.values().len();
    cfg.validate(width)?;
    let mut net = Network::<T>::new(vec![width], &autoencoder_specs(width, &cfg.widths, cfg.latent), seed)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() })?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = decayed_lr(cfg.lr, cfg.lr_decay, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(seed, &format!("detector/order/{epoch}")));
        let mut sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Spectrogram<T>> = batch.iter().map(|&i| &samples[i]).collect();
            let x = stack(&rescale, &items, width)?;
            let l = train_step(&mut net, &x, &Loss::Bce(&x), &mut opt).map_err(|e| locate(e, epoch, bi))?;
            sum += l * batch.len() as f64;
        }
        let mean = sum / samples.len() as f64;
        log::info!("detector epoch {}/{}: loss {mean:.5}", epoch + 1, cfg.epochs);
        curve.push(mean);
    }
    Ok((AutoEncoder { network: net, rescale }, curve))
}

impl<T: Scalar> AutoEncoder<T> {
    pub fn reconstruction_errors(&mut self, samples: &[&Spectrogram<T>]) -> Result<Vec<f64>> {
        let width = self.network.input_dims()[0];
        let mut out = Vec::with_capacity(samples.len());
        for chunk in samples.chunks(32) {
            let x = stack(&self.rescale, chunk, width)?;
            let y = self.network.forward(&x, Mode::Eval)?;
            out.extend((0..chunk.len()).map(|i| bce_error(x.sample(i), y.sample(i))));
        }
        Ok(out)
    }

    pub fn reconstruction_error(&mut self, sample: &Spectrogram<T>) -> Result<f64> {
        Ok(self.reconstruction_errors(&[sample])?[0])
    }
}

#[derive(Clone, Debug)]
pub struct DetectorModel<T> {
    pub autoencoder: AutoEncoder<T>,
    pub threshold: f64,
    pub percentile: f64,
    pub fingerprint: Fingerprint,
}

#[derive(Serialize, Deserialize)]
struct ThresholdSection {
    threshold: f64,
    percentile: f64,
    rescale: Rescale,
}

impl<T: Scalar> DetectorModel<T> {
    /// Thresholds the autoencoder at `percentile` of its errors on the
    /// background calibration samples.
    pub fn calibrate(mut autoencoder: AutoEncoder<T>, background: &[&Spectrogram<T>], percentile: f64, fingerprint: Fingerprint) -> Result<Self> {
        if background.len() < 10 {
            return Err(Error::InvalidArgument(format!("calibration needs at least 10 background samples, got {}", background.len())));
        }
        let errors = autoencoder.reconstruction_errors(background)?;
        let threshold = calibrate_threshold(&errors, percentile)?;
        Ok(Self { autoencoder, threshold, percentile, fingerprint })
    }

    pub fn detect_batch(&mut self, samples: &[&Spectrogram<T>], fingerprint: &Fingerprint) -> Result<Vec<DetectionVerdict>> {
        self.fingerprint.check(fingerprint)?;
        let t = self.threshold;
        Ok(self.autoencoder.reconstruction_errors(samples)?.into_iter().map(|e| DetectionVerdict::new(e, t)).collect())
    }

    pub fn detect(&mut self, sample: &Spectrogram<T>, fingerprint: &Fingerprint) -> Result<DetectionVerdict> {
        Ok(self.detect_batch(&[sample], fingerprint)?[0])
    }

    pub fn to_checkpoint(&mut self, mut meta: TrainingMeta) -> Result<Checkpoint> {
        meta.notes.insert("model".into(), "detector".into());
        let thr = ThresholdSection { threshold: self.threshold, percentile: self.percentile, rescale: self.autoencoder.rescale };
        Ok(Checkpoint::from_network(&mut self.autoencoder.network, self.fingerprint.stft, None, meta)
            .with_section(THRESHOLD_TAG, serde_json::to_vec(&thr)?)
            .with_section(FINGERPRINT_TAG, serde_json::to_vec(&self.fingerprint)?))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.notes.get("model").map(String::as_str) != Some("detector") {
            return Err(Error::Checkpoint("not a detector checkpoint".into()));
        }
        let section = |tag: Tag| ck.section(tag).ok_or_else(|| Error::Checkpoint(format!("missing {} section", String::from_utf8_lossy(&tag))));
        let thr: ThresholdSection = serde_json::from_slice(section(THRESHOLD_TAG)?)?;
        let fingerprint: Fingerprint = serde_json::from_slice(section(FINGERPRINT_TAG)?)?;
        if !(thr.threshold.is_finite() && thr.threshold >= 0.0) {
            return Err(Error::Checkpoint(format!("invalid threshold {}", thr.threshold)));
        }
        Ok(Self {
            autoencoder: AutoEncoder { network: ck.network()?, rescale: thr.rescale },
            threshold: thr.threshold,
            percentile: thr.percentile,
            fingerprint,
        })
    }
}

#[derive(Clone, Debug)]
pub struct DetectorReport {
    /// Binary metrics with novel as the positive class.
    pub metrics: Metrics,
    /// Fraction of all samples flagged novel.
    pub flag_rate: f64,
    pub verdicts: Vec<DetectionVerdict>,
}

/// `truth[i]` is true for samples that are genuinely novel. AUROC is left
/// empty when the set holds only one class.
pub fn evaluate_detector<T: Scalar>(model: &mut DetectorModel<T>, samples: &[&Spectrogram<T>], truth: &[bool], fingerprint: &Fingerprint) -> Result<DetectorReport> {
    if samples.is_empty() {
        return Err(Error::Empty("detector evaluation set".into()));
    }
    if samples.len() != truth.len() {
        return Err(Error::InvalidArgument(format!("{} samples, {} truths", samples.len(), truth.len())));
    }
    let verdicts = model.detect_batch(samples, fingerprint)?;
    let flagged: Vec<bool> = verdicts.iter().map(|v| v.verdict == Verdict::Novel).collect();
    let errors: Vec<f64> = verdicts.iter().map(|v| v.reconstruction_error).collect();
    let mut metrics = binary_metrics(&flagged, truth)?;
    metrics.auroc = match auroc(&errors, truth) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => {
            log::warn!("detector evaluation set holds a single class; AUROC is undefined");
            None
        }
        Err(e) => return Err(e),
    };
    let flag_rate = flagged.iter().filter(|&&f| f).count() as f64 / flagged.len() as f64;
    Ok(DetectorReport { metrics, flag_rate, verdicts })
}
