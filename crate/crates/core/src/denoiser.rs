//! Spectrogram denoising without clean ground truth: additive noise
//! variants, machine-generated binary masks, dual-target training pairs
//! and a small U-Net trained on both pair types.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{augment_spectrogram, AugmentSpec, PerBinStats, Range, Spectrogram, StftConfig};
use crate::error::{Error, Result};
use crate::nn::{accumulate, decayed_lr, locate, Adam, AdamConfig, Checkpoint, LayerSpec, Loss, Mode, Network, Tensor, TrainingMeta};
use crate::rng::{item_stream, stream};
use crate::scalar::Scalar;

/// Two 3x3 convolutions with ReLU.
fn double_conv(cin: usize, c: usize) -> Vec<LayerSpec> {
    vec![LayerSpec::conv3x3(cin, c, 1), LayerSpec::Relu, LayerSpec::conv3x3(c, c, 1), LayerSpec::Relu]
}

fn unet_level(cin: usize, channels: &[usize]) -> Vec<LayerSpec> {
    let c = channels[0];
    let mut out = double_conv(cin, c);
    if let Some(&deeper) = channels.get(1) {
        let mut inner = vec![LayerSpec::MaxPool { size: 2 }];
        inner.extend(unet_level(c, &channels[1..]));
        inner.push(LayerSpec::Upsample { factor: 2 });
        out.push(LayerSpec::ConcatSkip { inner });
        out.extend(double_conv(c + deeper, c));
    }
    out
}

/// U-Net with one level per entry of `channels` (2x2 max-pool down,
/// nearest-neighbour up, skip concatenation) and a 1x1 output convolution.
pub fn unet_specs(in_channels: usize, channels: &[usize]) -> Vec<LayerSpec> {
    assert!(!channels.is_empty(), "U-Net needs at least one level");
    let mut specs = unet_level(in_channels, channels);
    specs.push(LayerSpec::Conv2d { in_channels: channels[0], out_channels: 1, kernel: 1, stride: 1, padding: 0, bias: true });
    specs
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    /// Independent Gaussian value per cell.
    Gaussian,
    /// A few adjacent frequency rows raised with slow temporal modulation.
    Hum,
    /// Convex mix with a real background spectrogram.
    Background,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBankConfig {
    /// Gaussian sigma and hum scale, in normalized units.
    pub intensity: Range,
    /// Weight of the background spectrogram in a mix.
    pub background_weight: Range,
    pub hum_level: f64,
    pub hum_max_rows: usize,
}

impl Default for NoiseBankConfig {
    fn default() -> Self {
        Self { intensity: Range::new(0.5, 1.5), background_weight: Range::new(0.2, 0.5), hum_level: 3.0, hum_max_rows: 4 }
    }
}

/// Noise sources for pair construction; `backgrounds` holds normalized
/// compressed spectrograms of real background recordings.
#[derive(Clone, Debug)]
pub struct NoiseBank<T> {
    pub cfg: NoiseBankConfig,
    pub backgrounds: Vec<Spectrogram<T>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseDraw {
    pub kind: NoiseKind,
    pub intensity: f64,
}

/// Adds one noise variant at the given intensity (the mix weight for
/// [`NoiseKind::Background`]). Intensity 0 returns the input unchanged.
pub fn apply_noise<T: Scalar, R: Rng + ?Sized>(
    sp: &Spectrogram<T>,
    kind: NoiseKind,
    intensity: f64,
    bank: &NoiseBank<T>,
    rng: &mut R,
) -> Result<(Spectrogram<T>, NoiseKind)> {
    if !(intensity >= 0.0 && intensity.is_finite()) {
        return Err(Error::InvalidArgument(format!("noise intensity {intensity}")));
    }
    let (bins, frames) = sp.dims();
    let mut kind = kind;
    if kind == NoiseKind::Background && bank.backgrounds.is_empty() {
        log::warn!("noise bank has no background spectrograms; using a Gaussian field instead");
        kind = NoiseKind::Gaussian;
    }
    if intensity == 0.0 {
        return Ok((sp.clone(), kind));
    }
    let mut v = sp.values().to_vec();
    match kind {
        NoiseKind::Gaussian => {
            for x in v.iter_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *x += T::of(intensity * z);
            }
        }
        NoiseKind::Hum => {
            let rows = rng.random_range(1..=bank.cfg.hum_max_rows.clamp(1, bins));
            let start = rng.random_range(0..=bins - rows);
            let period = rng.random_range(20.0..200.0);
            let phase = rng.random::<f64>() * std::f64::consts::TAU;
            let level = intensity * bank.cfg.hum_level;
            for b in start..start + rows {
                for t in 0..frames {
                    let m = 1.0 + 0.5 * (std::f64::consts::TAU * t as f64 / period + phase).sin();
                    v[b * frames + t] += T::of(level * m);
                }
            }
        }
        NoiseKind::Background => {
            let bg = &bank.backgrounds[rng.random_range(0..bank.backgrounds.len())];
            if bg.dims() != sp.dims() {
                return Err(Error::Dimension(format!("background {:?} vs spectrogram {:?}", bg.dims(), sp.dims())));
            }
            let w = T::of(intensity.min(1.0));
            let keep = T::one() - w;
            for (x, &b) in v.iter_mut().zip(bg.values()) {
                *x = keep * *x + w * b;
            }
        }
    }
    Ok((sp.with_values(v), kind))
}

/// Draws a variant uniformly and an intensity from the bank's ranges.
pub fn add_noise_variants<T: Scalar, R: Rng + ?Sized>(sp: &Spectrogram<T>, bank: &NoiseBank<T>, rng: &mut R) -> Result<(Spectrogram<T>, NoiseDraw)> {
    let kind = [NoiseKind::Gaussian, NoiseKind::Hum, NoiseKind::Background][rng.random_range(0..3)];
    let intensity = match kind {
        NoiseKind::Background => bank.cfg.background_weight.sample(rng),
        _ => bank.cfg.intensity.sample(rng),
    };
    let (out, kind) = apply_noise(sp, kind, intensity, bank, rng)?;
    Ok((out, NoiseDraw { kind, intensity }))
}

/// Threshold multiplier for mask generation.
pub const MASK_K: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub values: Vec<u8>,
    pub bins: usize,
    pub frames: usize,
}

impl BinaryMask {
    pub fn ones(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn get(&self, bin: usize, frame: usize) -> u8 {
        self.values[bin * self.frames + frame]
    }
}

/// Marks cells exceeding their row's mean plus `k` standard deviations
/// (one row is one frequency bin across time), then smooths with a 3x3
/// majority vote. Edge cells vote over the neighbours that exist and need a
/// strict majority.
pub fn generate_binary_mask<T: Scalar>(sp: &Spectrogram<T>, k: f64) -> BinaryMask {
    let (bins, frames) = sp.dims();
    let mut raw = vec![0u8; bins * frames];
    for b in 0..bins {
        let row = sp.row(b);
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / frames as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / frames as f64;
        let thr = mean + k * var.sqrt();
        for (t, v) in row.iter().enumerate() {
            raw[b * frames + t] = (v.as_f64() > thr) as u8;
        }
    }
    let mut values = vec![0u8; bins * frames];
    for b in 0..bins {
        let rows = b.saturating_sub(1)..(b + 2).min(bins);
        for t in 0..frames {
            let cols = t.saturating_sub(1)..(t + 2).min(frames);
            let cells = rows.len() * cols.len();
            let on: usize = rows.clone().map(|r| raw[r * frames + cols.start..r * frames + cols.end].iter().map(|&v| v as usize).sum::<usize>()).sum();
            values[b * frames + t] = (2 * on > cells) as u8;
        }
    }
    BinaryMask { values, bins, frames }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PairCase {
    /// Noisy input, original as target.
    A,
    /// Original input, binary mask as target.
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub enum PairTarget<T> {
    Clean(Spectrogram<T>),
    Mask(BinaryMask),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair<T> {
    pub input: Spectrogram<T>,
    pub target: PairTarget<T>,
    pub case: PairCase,
    pub noise: Option<NoiseDraw>,
}

/// Builds a pair of the given case.
pub fn make_pair_with_case<T: Scalar, R: Rng + ?Sized>(
    sp: &Spectrogram<T>,
    case: PairCase,
    bank: &NoiseBank<T>,
    mask_k: f64,
    rng: &mut R,
) -> Result<TrainingPair<T>> {
    match case {
        PairCase::A => {
            if !(bank.cfg.intensity.lo > 0.0 && bank.cfg.background_weight.lo > 0.0) {
                return Err(Error::InvalidArgument("case A needs strictly positive noise intensities".into()));
            }
            let (input, draw) = add_noise_variants(sp, bank, rng)?;
            Ok(TrainingPair { input, target: PairTarget::Clean(sp.clone()), case, noise: Some(draw) })
        }
        PairCase::B => Ok(TrainingPair { input: sp.clone(), target: PairTarget::Mask(generate_binary_mask(sp, mask_k)), case, noise: None }),
    }
}

/// Case A or B with equal probability.
pub fn make_training_pair<T: Scalar, R: Rng + ?Sized>(sp: &Spectrogram<T>, bank: &NoiseBank<T>, mask_k: f64, rng: &mut R) -> Result<TrainingPair<T>> {
    let case = if rng.random_bool(0.5) { PairCase::A } else { PairCase::B };
    make_pair_with_case(sp, case, bank, mask_k, rng)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Per-epoch exponential learning-rate decay; 1.0 keeps it fixed.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub channels: Vec<usize>,
    /// Training crop `[rows, frames]`; `None` trains on whole spectrograms.
    pub crop: Option<[usize; 2]>,
    pub mask_k: f64,
    pub augment: AugmentSpec,
    pub noise: NoiseBankConfig,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            lr: 1e-3,
            lr_decay: 1.0,
            batch_size: 8,
            channels: vec![16, 32, 64],
            crop: Some([64, 64]),
            mask_k: MASK_K,
            augment: AugmentSpec::default(),
            noise: NoiseBankConfig::default(),
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self, bins: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || !(self.lr > 0.0) || self.channels.is_empty() {
            return Err(Error::InvalidArgument("denoiser epochs, batch size, lr and channels must be positive".into()));
        }
        self.augment.validate(bins)
    }
}

/// U-Net plus the preprocessing it expects.
#[derive(Clone, Debug)]
pub struct DenoiserModel<T> {
    pub network: Network<T>,
    pub stft: StftConfig,
    pub stats: PerBinStats<T>,
}

fn crop<T: Scalar>(values: &[T], frames: usize, y0: usize, x0: usize, h: usize, w: usize, out: &mut Vec<T>) {
    for b in y0..y0 + h {
        out.extend_from_slice(&values[b * frames + x0..b * frames + x0 + w]);
    }
}

/// Trains the U-Net on dB spectrograms `train_db` (compressed, not yet
/// normalized). Each epoch every sample is augmented in the dB domain,
/// normalized with `stats`, turned into a case A or B pair and cropped.
/// Returns the model and the per-epoch mean loss.
pub fn train_denoiser<T: Scalar>(
    train_db: &[Spectrogram<T>],
    stats: &PerBinStats<T>,
    backgrounds: Vec<Spectrogram<T>>,
    stft: StftConfig,
    cfg: &DenoiserConfig,
    seed: u64,
) -> Result<(DenoiserModel<T>, Vec<f64>)> {
    let first = train_db.first().ok_or_else(|| Error::Empty("denoiser training set".into()))?;
    let (bins, frames) = first.dims();
    cfg.validate(bins)?;
    if train_db.iter().any(|s| s.dims() != (bins, frames)) {
        return Err(Error::Dimension("denoiser training spectrograms differ in shape".into()));
    }
    let [ch, cw] = cfg.crop.unwrap_or([bins, frames]);
    if ch > bins || cw > frames {
        return Err(Error::Dimension(format!("crop {ch}x{cw} exceeds spectrogram {bins}x{frames}")));
    }
    let specs = unet_specs(1, &cfg.channels);
    let mut net = Network::<T>::new(vec![1, bins, frames], &specs, seed)?;
    net.set_input_dims(vec![1, ch, cw])?;
    let bank = NoiseBank { cfg: cfg.noise.clone(), backgrounds };
    let mut opt = Adam::new(AdamConfig { lr: cfg.lr, ..AdamConfig::default() })?;
    let mut curve = Vec::with_capacity(cfg.epochs);
    let cell = ch * cw;

    for epoch in 0..cfg.epochs {
        opt.lr = decayed_lr(cfg.lr, cfg.lr_decay, epoch);
        let mut order: Vec<usize> = (0..train_db.len()).collect();
        order.shuffle(&mut stream(seed, &format!("denoiser/order/{epoch}")));
        let (mut sum, mut count) = (0.0, 0usize);
        for (bi, batch) in order.chunks(cfg.batch_size).enumerate() {
            let (mut xa, mut ya, mut xb, mut yb) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for &idx in batch {
                let mut rng = item_stream(seed, &format!("denoiser/sample/{epoch}"), idx as u64);
                let aug = augment_spectrogram(&train_db[idx], &cfg.augment, &mut rng)?;
                let pair = make_training_pair(&stats.apply(&aug)?, &bank, cfg.mask_k, &mut rng)?;
                let y0 = rng.random_range(0..=bins - ch);
                let x0 = rng.random_range(0..=frames - cw);
                match &pair.target {
                    PairTarget::Clean(t) => {
                        crop(pair.input.values(), frames, y0, x0, ch, cw, &mut xa);
                        crop(t.values(), frames, y0, x0, ch, cw, &mut ya);
                    }
                    PairTarget::Mask(m) => {
                        crop(pair.input.values(), frames, y0, x0, ch, cw, &mut xb);
                        let mv: Vec<T> = m.values.iter().map(|&v| T::of(v as f64)).collect();
                        crop(&mv, frames, y0, x0, ch, cw, &mut yb);
                    }
                }
            }
            let n = batch.len() as f64;
            net.zero_grad();
            let mut batch_loss = 0.0;
            for (x, y, mask) in [(xa, ya, false), (xb, yb, true)] {
                if x.is_empty() {
                    continue;
                }
                let k = x.len() / cell;
                let xt = Tensor::new(vec![k, 1, ch, cw], x)?;
                let yt = Tensor::new(vec![k, 1, ch, cw], y)?;
                let loss = if mask { Loss::BceWithLogits(&yt) } else { Loss::Mse(&yt) };
                let l = accumulate(&mut net, &xt, &loss, k as f64 / n).map_err(|e| locate(e, epoch, bi))?;
                batch_loss += l * k as f64;
            }
            opt.step(&mut net.params())?;
            sum += batch_loss;
            count += batch.len();
        }
        let mean = sum / count as f64;
        log::info!("denoiser epoch {}/{}: loss {mean:.5}", epoch + 1, cfg.epochs);
        curve.push(mean);
    }
    net.set_input_dims(vec![1, bins, frames])?;
    Ok((DenoiserModel { network: net, stft, stats: stats.clone() }, curve))
}

impl<T: Scalar> DenoiserModel<T> {
    /// Regression output for normalized compressed spectrograms.
    pub fn denoise_batch(&mut self, inputs: &[&Spectrogram<T>]) -> Result<Vec<Spectrogram<T>>> {
        let dims = self.network.input_dims().to_vec();
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(8) {
            for s in chunk {
                if [1, s.bins(), s.frames()] != dims[..] {
                    return Err(Error::Dimension(format!("denoiser expects {:?}, got {:?}", &dims[1..], s.dims())));
                }
            }
            let x = Tensor::stack(&dims, &chunk.iter().map(|s| s.values()).collect::<Vec<_>>())?;
            let y = self.network.forward(&x, Mode::Eval)?;
            for (i, s) in chunk.iter().enumerate() {
                out.push(s.with_values(y.sample(i).to_vec()));
            }
        }
        Ok(out)
    }

    pub fn denoise(&mut self, sp: &Spectrogram<T>) -> Result<Spectrogram<T>> {
        Ok(self.denoise_batch(&[sp])?.remove(0))
    }

    pub fn to_checkpoint(&mut self, mut meta: TrainingMeta) -> Checkpoint {
        meta.notes.insert("model".into(), "denoiser".into());
        Checkpoint::from_network(&mut self.network, self.stft, Some(&self.stats), meta)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.meta.notes.get("model").map(String::as_str) != Some("denoiser") {
            return Err(Error::Checkpoint("not a denoiser checkpoint".into()));
        }
        let stats = ck.normalizer().ok_or_else(|| Error::Checkpoint("denoiser checkpoint lacks normalizer".into()))?;
        Ok(Self { network: ck.network()?, stft: ck.stft, stats })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DenoiseReport {
    pub pairs: usize,
    pub mse_noisy: f64,
    pub mse_denoised: f64,
    /// Mean over pairs of `MSE(denoised, clean) / MSE(noisy, clean)`.
    pub mse_ratio: f64,
    /// `-10 log10(mse_ratio)`.
    pub snr_gain_db: f64,
}

fn mse<T: Scalar>(a: &Spectrogram<T>, b: &Spectrogram<T>) -> f64 {
    a.values().iter().zip(b.values()).map(|(x, y)| (x.as_f64() - y.as_f64()).powi(2)).sum::<f64>() / a.values().len() as f64
}

/// Scores any denoising function on `(clean, noisy)` pairs.
pub fn eval_pairs<T: Scalar, F>(pairs: &[(Spectrogram<T>, Spectrogram<T>)], mut denoise: F) -> Result<DenoiseReport>
where
    F: FnMut(&[&Spectrogram<T>]) -> Result<Vec<Spectrogram<T>>>,
{
    if pairs.is_empty() {
        return Err(Error::Empty("denoiser evaluation set".into()));
    }
    let noisy: Vec<&Spectrogram<T>> = pairs.iter().map(|(_, n)| n).collect();
    let denoised = denoise(&noisy)?;
    let (mut mn, mut md, mut ratio) = (0.0, 0.0, 0.0);
    for ((clean, noisy), out) in pairs.iter().zip(&denoised) {
        if out.dims() != clean.dims() {
            return Err(Error::Dimension("denoised output changed shape".into()));
        }
        let (a, b) = (mse(noisy, clean), mse(out, clean));
        if a == 0.0 {
            return Err(Error::InvalidArgument("evaluation pair without noise".into()));
        }
        mn += a;
        md += b;
        ratio += b / a;
    }
    let k = pairs.len() as f64;
    let mse_ratio = ratio / k;
    Ok(DenoiseReport { pairs: pairs.len(), mse_noisy: mn / k, mse_denoised: md / k, mse_ratio, snr_gain_db: -10.0 * mse_ratio.log10() })
}

pub fn eval_denoiser<T: Scalar>(model: &mut DenoiserModel<T>, pairs: &[(Spectrogram<T>, Spectrogram<T>)]) -> Result<DenoiseReport> {
    eval_pairs(pairs, |xs| model.denoise_batch(xs))
}

/// Evaluation pairs `(clean, clean + noise)` of one synthetic variant at a
/// fixed intensity, item-seeded so they are reproducible.
pub fn synthetic_pairs<T: Scalar>(
    clean: &[Spectrogram<T>],
    kind: NoiseKind,
    intensity: f64,
    bank: &NoiseBank<T>,
    seed: u64,
) -> Result<Vec<(Spectrogram<T>, Spectrogram<T>)>> {
    if kind == NoiseKind::Background {
        return Err(Error::InvalidArgument("evaluation pairs need a synthetic noise variant".into()));
    }
    clean
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let mut rng = item_stream(seed, "denoiser/eval-pairs", i as u64);
            Ok((c.clone(), apply_noise(c, kind, intensity, bank, &mut rng)?.0))
        })
        .collect()
}
