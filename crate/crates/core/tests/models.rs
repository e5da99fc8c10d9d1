//! Behaviour of the four models on small problems with known answers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tidewatch::classifier::{evaluate_classifier, train_classifier, ClassifierConfig};
use tidewatch::denoiser::{train_denoiser, DenoiserConfig, NoiseBankConfig};
use tidewatch::detector::{train_autoencoder, AutoEncoderConfig, DetectorModel, Rescale, Verdict};
use tidewatch::dsp::{AugmentSpec, Fingerprint, PerBinStats, Spectrogram, SpectrogramKind, Stft, StftConfig};
use tidewatch::synth::{default_profiles, generate_recording, CorpusSpec};
use tidewatch::Error;

fn fp() -> Fingerprint {
    let stats = PerBinStats { mean: vec![0.0f64; 2], std: vec![1.0; 2], epsilon: 1e-8 };
    Fingerprint::new(StftConfig::default(), &stats, false)
}

fn grid(bins: usize, frames: usize, f: impl FnMut(usize, usize) -> f64) -> Spectrogram<f64> {
    let mut f = f;
    let v = (0..bins * frames).map(|i| f(i / frames, i % frames)).collect();
    Spectrogram::new(v, bins, frames, 1.0, -120.0, SpectrogramKind::Compressed).unwrap()
}

/// Unit noise plus a bright row at `row`.
fn striped(row: usize, rng: &mut ChaCha8Rng) -> Spectrogram<f64> {
    grid(16, 16, |b, _| rng.random_range(-0.5..0.5) + if b == row { 3.0 } else { 0.0 })
}

#[test]
fn synthetic_recordings_are_seeded() {
    let spec = CorpusSpec { recording_s: 1.0, ..CorpusSpec::default() };
    let cargo = &default_profiles()[1];
    let a = generate_recording(&spec, cargo, 3, 7).unwrap();
    assert_eq!(a.samples, generate_recording(&spec, cargo, 3, 7).unwrap().samples);
    assert_ne!(a.samples, generate_recording(&spec, cargo, 4, 7).unwrap().samples);
    assert_ne!(a.samples, generate_recording(&spec, cargo, 3, 8).unwrap().samples);
    assert_eq!(a.source_id, "cargo-003");
}

#[test]
fn synthetic_spectra_peak_at_the_fundamental() {
    let spec = CorpusSpec { recording_s: 2.0, recordings_per_class: 6, ..CorpusSpec::default() };
    let plan = Stft::<f64>::new(StftConfig::default()).unwrap();
    let width = 32_000.0 / 4096.0;
    for p in default_profiles() {
        for i in 0..6 {
            let w = generate_recording(&spec, &p, i, 11).unwrap();
            let c = plan.power_spectrogram_db(&w.samples[..64_000], 32_000).unwrap();
            let mean: Vec<f64> = (0..c.bins()).map(|b| c.row(b).iter().sum::<f64>() / c.frames() as f64).collect();
            let peak = (0..mean.len()).max_by(|&a, &b| mean[a].total_cmp(&mean[b])).unwrap();
            let mut sorted = mean.clone();
            sorted.sort_by(f64::total_cmp);
            // Peak over median of the time-averaged dB spectrum. White noise
            // alone reaches about 3 dB here through the max over 2049 bins.
            let prominence = mean[peak] - sorted[sorted.len() / 2];
            match p.fundamental_hz {
                Some(f0) => {
                    // Each recording jitters its fundamental by up to this fraction.
                    let slack = f0 * spec.fundamental_jitter + width;
                    assert!((peak as f64 * width - f0).abs() <= slack, "{} #{i}: peak bin {peak}", p.name);
                    assert!(prominence > 20.0, "{} #{i}: {prominence:.1} dB", p.name);
                }
                None => assert!(prominence < 6.0, "background #{i}: {prominence:.1} dB"),
            }
        }
    }
}

#[test]
fn classifier_learns_row_position() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = [2, 7, 12];
    let mut xs = Vec::new();
    let mut labels = Vec::new();
    for i in 0..48 {
        xs.push(striped(rows[i % 3], &mut rng));
        labels.push(["low", "mid", "high"][i % 3].to_string());
    }
    let cfg = ClassifierConfig { epochs: 8, batch_size: 8, lr: 3e-3, stem_channels: 4, channels: vec![8, 8], ..ClassifierConfig::default() };
    let (mut model, curve) = train_classifier(&xs, &labels, Some("tug"), fp(), &cfg, 1).unwrap();
    assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
    let test: Vec<_> = (0..30).map(|i| striped(rows[i % 3], &mut rng)).collect();
    let test_labels: Vec<String> = (0..30).map(|i| ["low", "mid", "high"][i % 3].to_string()).collect();
    let report = evaluate_classifier(&mut model, &test, &test_labels, &fp()).unwrap();
    assert!(report.metrics.accuracy >= 0.9, "{:?}", report.confusion);
}

#[test]
fn classifier_training_is_reproducible() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let xs: Vec<_> = (0..12).map(|i| striped(if i % 2 == 0 { 3 } else { 9 }, &mut rng)).collect();
    let labels: Vec<String> = (0..12).map(|i| ["a", "b"][i % 2].to_string()).collect();
    let cfg = ClassifierConfig { epochs: 2, batch_size: 4, stem_channels: 4, channels: vec![4], ..ClassifierConfig::default() };
    let (mut a, ca) = train_classifier(&xs, &labels, None, fp(), &cfg, 9).unwrap();
    let (mut b, cb) = train_classifier(&xs, &labels, None, fp(), &cfg, 9).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.network.state_vector(), b.network.state_vector());
    assert_eq!(a.classify(&xs[0], &fp()).unwrap(), b.classify(&xs[0], &fp()).unwrap());
}

#[test]
fn classifier_refuses_mismatched_preprocessing() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let xs: Vec<_> = (0..4).map(|i| striped(i * 3, &mut rng)).collect();
    let labels: Vec<String> = (0..4).map(|i| ["a", "b"][i % 2].to_string()).collect();
    let cfg = ClassifierConfig { epochs: 1, batch_size: 4, stem_channels: 2, channels: vec![2], ..ClassifierConfig::default() };
    let (mut model, _) = train_classifier(&xs, &labels, None, fp(), &cfg, 0).unwrap();
    let other = Fingerprint { stft: StftConfig { hop: 256, ..StftConfig::default() }, ..fp() };
    assert!(matches!(model.classify(&xs[0], &other), Err(Error::FingerprintMismatch { .. })));
}

#[test]
fn detector_flags_an_unseen_pattern() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let background = |rng: &mut ChaCha8Rng| grid(8, 8, |b, _| -70.0 + 2.0 * b as f64 + rng.random_range(-2.0..2.0));
    let train: Vec<_> = (0..64).map(|_| background(&mut rng)).collect();
    let rescale = Rescale::fit(&train, Some(-120.0)).unwrap();
    let cfg = AutoEncoderConfig { widths: vec![16], latent: 4, epochs: 60, batch_size: 16, lr: 3e-3, ..AutoEncoderConfig::default() };
    let (ae, curve) = train_autoencoder(&train, rescale, &cfg, 2).unwrap();
    assert!(curve.last().unwrap() < &curve[0]);
    let refs: Vec<_> = train.iter().collect();
    let mut det = DetectorModel::calibrate(ae, &refs, 90.0, fp()).unwrap();
    let novel: Vec<_> = (0..20).map(|_| grid(8, 8, |b, t| if (b + t) % 3 == 0 { -10.0 } else { -100.0 } + rng.random_range(-2.0..2.0))).collect();
    let flagged = det.detect_batch(&novel.iter().collect::<Vec<_>>(), &fp()).unwrap().iter().filter(|v| v.verdict == Verdict::Novel).count();
    assert_eq!(flagged, 20);
    let fresh: Vec<_> = (0..40).map(|_| background(&mut rng)).collect();
    let false_alarms = det.detect_batch(&fresh.iter().collect::<Vec<_>>(), &fp()).unwrap().iter().filter(|v| v.verdict == Verdict::Novel).count();
    assert!(false_alarms <= 12, "{false_alarms} of 40 background samples flagged");
}

fn denoiser_inputs() -> (Vec<Spectrogram<f64>>, PerBinStats<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let db: Vec<_> = (0..8)
        .map(|i| {
            let row = 2 + i % 12;
            grid(16, 16, |b, _| if b == row { -20.0 } else { -80.0 } + rng.random_range(-3.0..3.0))
        })
        .collect();
    let stats = PerBinStats::fit(db.iter()).unwrap();
    (db, stats)
}

fn denoiser_cfg(epochs: usize) -> DenoiserConfig {
    DenoiserConfig {
        epochs,
        batch_size: 4,
        lr: 3e-3,
        channels: vec![4, 8],
        crop: None,
        augment: AugmentSpec::identity(),
        noise: NoiseBankConfig::default(),
        ..DenoiserConfig::default()
    }
}

#[test]
fn denoiser_loss_falls() {
    let (db, stats) = denoiser_inputs();
    let (model, curve) = train_denoiser(&db, &stats, Vec::new(), StftConfig::default(), &denoiser_cfg(25), 3).unwrap();
    let head = curve[..3].iter().sum::<f64>() / 3.0;
    let tail = curve[curve.len() - 3..].iter().sum::<f64>() / 3.0;
    assert!(tail < head, "{curve:?}");
    assert_eq!(model.network.input_dims(), &[1, 16, 16]);
}

#[test]
fn denoiser_training_is_reproducible() {
    let (db, stats) = denoiser_inputs();
    let (mut a, ca) = train_denoiser(&db, &stats, Vec::new(), StftConfig::default(), &denoiser_cfg(2), 3).unwrap();
    let (mut b, cb) = train_denoiser(&db, &stats, Vec::new(), StftConfig::default(), &denoiser_cfg(2), 3).unwrap();
    assert_eq!(ca, cb);
    assert_eq!(a.network.state_vector(), b.network.state_vector());
    let x = stats.apply(&db[0]).unwrap();
    assert_eq!(a.denoise(&x).unwrap().values(), b.denoise(&x).unwrap().values());
}
