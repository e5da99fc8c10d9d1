//! Residual CNN vessel classifier over compressed, normalized spectrograms.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dsp::{Fingerprint, Spectrogram};
use crate::error::{Error, Result};
use crate::eval::{argmax, confusion_matrix, macro_metrics, ConfusionMatrix, Metrics};
use crate::nn::{decayed_lr, locate, softmax, train_step, Adam, AdamConfig, Checkpoint, LayerSpec, Loss, Mode, Network, Tag, Tensor, TrainingMeta};
use crate::rng::stream;
use crate::scalar::Scalar;

pub const CLASSES_TAG: Tag = *b"CLSS";
pub const FINGERPRINT_TAG: Tag = *b"FPRT";

/// Strided residual block followed by ReLU.
pub fn residual_block(cin: usize, cout: usize, stride: usize) -> Vec<LayerSpec> {
    vec![
        LayerSpec::ResidualBlock {
            main: vec![
                LayerSpec::conv_nobias(cin, cout, 3, stride),
                LayerSpec::BatchNorm { channels: cout },
                LayerSpec::Relu,
                LayerSpec::conv_nobias(cout, cout, 3, 1),
                LayerSpec::BatchNorm { channels: cout },
            ],
            shortcut: vec![LayerSpec::conv_nobias(cin, cout, 1, stride), LayerSpec::BatchNorm { channels: cout }],
        },
        LayerSpec::Relu,
    ]
}

/// Stem (3x3 stride-2 conv, batch norm, ReLU, 2x2 max-pool), one stride-2
/// residual block per entry of `channels`, global average pool, dense head.
pub fn resnet_specs(in_channels: usize, stem: usize, channels: &[usize], classes: usize) -> Vec<LayerSpec> {
    let mut specs = vec![
        LayerSpec::conv_nobias(in_channels, stem, 3, 2),
        LayerSpec::BatchNorm { channels: stem },
        LayerSpec::Relu,
        LayerSpec::MaxPool { size: 2 },
    ];
    let mut cin = stem;
    for &c in channels {
        specs.extend(residual_block(cin, c, 2));
        cin = c;
    }
    specs.push(LayerSpec::GlobalAvgPool);
    specs.push(LayerSpec::Dense { inputs: cin, units: classes });
    specs
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub lr_decay: f64,
    pub batch_size: usize,
    /// Feed the single spectrogram channel three times.
    pub replicate_channels: bool,
    pub stem_channels: usize,
    pub channels: Vec<usize>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self { epochs: 50, lr: 1e-3, lr_decay: 1.0, batch_size: 32, replicate_channels: false, stem_channels: 16, channels: vec![16, 32, 64, 128] }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || !(self.lr > 0.0) || self.batch_size == 0 || self.stem_channels == 0 || self.channels.is_empty() {
            return Err(Error::InvalidArgument("classifier epochs, lr, batch size and channels must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierModel<T> {
    pub network: Network<T>,
    pub classes: Vec<String>,
    pub fingerprint: Fingerprint,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub class: usize,
}

fn channels_in<T: Scalar>(net: &Network<T>) -> usize {
    net.input_dims()[0]
}

fn stack_inputs<T: Scalar>(items: &[&Spectrogram<T>], channels: usize) -> Result<Tensor<T>> {
    let (bins, frames) = items[0].dims();
    let mut data = Vec::with_capacity(items.len() * channels * bins * frames);
    for s in items {
        if s.dims() != (bins, frames) {
            return Err(Error::Dimension(format!("spectrogram {:?} vs {:?}", s.dims(), (bins, frames))));
        }
        for _ in 0..channels {
            data.extend_from_slice(s.values());
        }
    }
    Tensor::new(vec![items.len(), channels, bins, frames], data)
}

/// Trains on normalized spectrograms with string labels. The class list
/// is the sorted set of labels; `contamination` must not appear in it.
pub fn train_classifier<T: Scalar>(
    samples: &[Spectrogram<T>],
    labels: &[String],
    contamination: Option<&str>,
    fingerprint: Fingerprint,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(ClassifierModel<T>, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::Empty("classifier training set".into()));
    }
    if samples.len() != labels.len() {
        return Err(Error::InvalidArgument(format!("{} samples, {} labels", samples.len(), labels.len())));
    }
    if let Some(c) = contamination {
        if labels.iter().any(|l| l == c) {
            return Err(Error::ContaminationInTraining(c.to_string()));
        }
    }
    let classes: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let targets: Vec<usize> = labels.iter().map(|l| classes.binary_search(l).unwrap()).collect();
    let channels = if cfg.replicate_channels { 3 } else { 1 };
    let (bins, frames) = samples[0].dims();
    let specs = resnet_specs(channels, cfg.stem_channels, &cfg.channels, classes.len());
    let mut net = Network::<T>::new(vec![channels, bins, frames], &specs, seed)?;
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() })?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        opt.lr = decayed_lr(cfg.lr, cfg.lr_decay, epoch);
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut stream(seed, &format!("classifier/order/{epoch}")));
        let mut sum = 0.0;
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let items: Vec<&Spectrogram<T>> = batch.iter().map(|&i| &samples[i]).collect();
            let x = stack_inputs(&items, channels)?;
            let y: Vec<usize> = batch.iter().map(|&i| targets[i]).collect();
            let l = train_step(&mut net, &x, &Loss::CrossEntropy(&y), &mut opt).map_err(|e| locate(e, epoch, bi))?;
            sum += l * batch.len() as f64;
        }
        let mean = sum / samples.len() as f64;
        log::info!("classifier epoch {}/{}: loss {mean:.5}", epoch + 1, cfg.epochs);
        curve.push(mean);
    }
    Ok((ClassifierModel { network: net, classes, fingerprint }, curve))
}

impl<T: Scalar> ClassifierModel<T> {
    /// Softmax probabilities and argmax (lowest index on ties) per input.
    pub fn classify_batch(&mut self, inputs: &[&Spectrogram<T>], fingerprint: &Fingerprint) -> Result<Vec<Prediction>> {
        self.fingerprint.check(fingerprint)?;
        let channels = channels_in(&self.network);
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(32) {
            let x = stack_inputs(chunk, channels)?;
            let logits = self.network.forward(&x, Mode::Eval)?;
            for i in 0..chunk.len() {
                let probabilities: Vec<f64> = softmax(logits.sample(i)).iter().map(|p| p.as_f64()).collect();
                out.push(Prediction { class: argmax(&probabilities), probabilities });
            }
        }
        Ok(out)
    }

    pub fn classify(&mut self, sp: &Spectrogram<T>, fingerprint: &Fingerprint) -> Result<Prediction> {
        Ok(self.classify_batch(&[sp], fingerprint)?.remove(0))
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes.iter().position(|c| c == label).ok_or_else(|| Error::InvalidArgument(format!("label `{label}` not among classes {:?}", self.classes)))
    }

    pub fn to_checkpoint(&mut self, mut meta: TrainingMeta) -> Result<Checkpoint> {
        meta.notes.insert("model".into(), "classifier".into());
        let stft = self.fingerprint.stft;
        Ok(Checkpoint::from_network(&mut self.network, stft, None, meta)
            .with_section(CLASSES_TAG, serde_json::to_vec(&self.classes)?)
            .with_section(FINGERPRINT_TAG, serde_json::to_vec(&self.fingerprint)?))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.notes.get("model").map(String::as_str) != Some("classifier") {
            return Err(Error::Checkpoint("not a classifier checkpoint".into()));
        }
        let section = |tag: Tag| ck.section(tag).ok_or_else(|| Error::Checkpoint(format!("missing {} section", String::from_utf8_lossy(&tag))));
        let classes: Vec<String> = serde_json::from_slice(section(CLASSES_TAG)?)?;
        let fingerprint: Fingerprint = serde_json::from_slice(section(FINGERPRINT_TAG)?)?;
        let network = ck.network()?;
        if network.output_dims() != [classes.len()] {
            return Err(Error::Checkpoint(format!("head width {:?} vs {} classes", network.output_dims(), classes.len())));
        }
        Ok(Self { network, classes, fingerprint })
    }
}

#[derive(Clone, Debug)]
pub struct ClassifierReport {
    pub metrics: Metrics,
    pub confusion: ConfusionMatrix,
    pub predictions: Vec<usize>,
}

/// Accuracy, macro precision/recall/F1 and a confusion matrix (rows are
/// true classes). Every label must belong to the model's class list.
pub fn evaluate_classifier<T: Scalar>(
    model: &mut ClassifierModel<T>,
    samples: &[Spectrogram<T>],
    labels: &[String],
    fingerprint: &Fingerprint,
) -> Result<ClassifierReport> {
    if samples.is_empty() {
        return Err(Error::Empty("classifier test set".into()));
    }
    let truth = labels.iter().map(|l| model.class_index(l)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Spectrogram<T>> = samples.iter().collect();
    let predictions: Vec<usize> = model.classify_batch(&refs, fingerprint)?.into_iter().map(|p| p.class).collect();
    let confusion = confusion_matrix(&predictions, &truth, model.classes.len())?;
    Ok(ClassifierReport { metrics: macro_metrics(&confusion)?, confusion, predictions })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{PerBinStats, SpectrogramKind, StftConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn fp() -> Fingerprint {
        let stats = PerBinStats { mean: vec![0.0f64; 4], std: vec![1.0; 4], epsilon: 1e-8 };
        Fingerprint::new(StftConfig::default(), &stats, false)
    }

    fn small_cfg() -> ClassifierConfig {
        ClassifierConfig { epochs: 1, batch_size: 4, stem_channels: 4, channels: vec![4, 8], ..ClassifierConfig::default() }
    }

    fn noise(rng: &mut ChaCha8Rng) -> Spectrogram<f64> {
        let v = (0..32 * 32).map(|_| rng.random_range(-1.0..1.0)).collect();
        Spectrogram::new(v, 32, 32, 1.0, -120.0, SpectrogramKind::Compressed).unwrap()
    }

    #[test]
    fn default_shapes() {
        let net = Network::<f32>::new(vec![1, 256, 200], &resnet_specs(1, 16, &[16, 32, 64, 128], 4), 0).unwrap();
        assert_eq!(net.output_dims(), &[4]);
    }

    #[test]
    fn contamination_guard() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<_> = (0..4).map(|_| noise(&mut rng)).collect();
        let labels: Vec<String> = ["cargo", "tug", "cargo", "tanker"].iter().map(|s| s.to_string()).collect();
        let err = train_classifier(&xs, &labels, Some("tug"), fp(), &small_cfg(), 0).unwrap_err();
        assert!(matches!(err, Error::ContaminationInTraining(ref c) if c == "tug"));
    }

    #[test]
    fn zeroed_head_is_uniform_and_fingerprint_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs: Vec<_> = (0..8).map(|_| noise(&mut rng)).collect();
        let labels: Vec<String> = (0..8).map(|i| ["a", "b", "c", "d"][i % 4].to_string()).collect();
        let (mut model, curve) = train_classifier(&xs, &labels, None, fp(), &small_cfg(), 0).unwrap();
        assert_eq!(curve.len(), 1);
        let n = model.network.named_params().len();
        for (_, p) in model.network.named_params().into_iter().skip(n - 2) {
            p.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let p = model.classify(&xs[0], &fp()).unwrap();
        assert!(p.probabilities.iter().all(|&q| (q - 0.25).abs() < 1e-15));
        assert_eq!(p.class, 0);
        let mut other = fp();
        other.denoised = true;
        assert!(matches!(model.classify(&xs[0], &other), Err(Error::FingerprintMismatch { .. })));
    }

    #[test]
    fn checkpoint_round_trip_predicts_identically() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs: Vec<_> = (0..8).map(|_| noise(&mut rng)).collect();
        let labels: Vec<String> = (0..8).map(|i| ["x", "y"][i % 2].to_string()).collect();
        let (mut model, _) = train_classifier(&xs.iter().map(|s| s.cast::<f32>()).collect::<Vec<_>>(), &labels, None, fp(), &small_cfg(), 3).unwrap();
        let ck = Checkpoint::from_bytes(&model.to_checkpoint(TrainingMeta::default()).unwrap().to_bytes().unwrap()).unwrap();
        let mut back = ClassifierModel::<f32>::from_checkpoint(&ck).unwrap();
        assert_eq!(back.classes, model.classes);
        let x = xs[5].cast::<f32>();
        assert_eq!(back.classify(&x, &fp()).unwrap(), model.classify(&x, &fp()).unwrap());
    }
}
