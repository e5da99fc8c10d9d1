//! Pipeline stages. Each stage reads what earlier stages left in the
//! output directory and writes its own subdirectory. A stage directory
//! holds an `INCOMPLETE` marker from the moment the stage starts until it
//! finishes successfully; on failure the marker keeps the error message.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use tidewatch::audio::{build_dataset, load_wav, partition, segment, CuratedManifest, CuratedRow, DatasetManifest, Split};
use tidewatch::classifier::{evaluate_classifier, train_classifier as fit_classifier, ClassifierModel};
use tidewatch::denoiser::{eval_denoiser, synthetic_pairs, train_denoiser as fit_denoiser, DenoiseReport, DenoiserModel, NoiseBank, NoiseKind};
use tidewatch::detector::{evaluate_detector, train_autoencoder, DetectorModel, Rescale};
use tidewatch::dsp::{compressed_spectrogram, to_pgm, Fingerprint, PerBinStats, Spectrogram, Stft};
use tidewatch::eval::Metrics;
use tidewatch::nn::{Checkpoint, TrainingMeta};
use tidewatch::synth::generate_corpus;

use crate::config::{InputKind, PipelineConfig};
use crate::{store, StageContext, StageError};

pub const MARKER: &str = "INCOMPLETE";

/// File locations inside the output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &PipelineConfig) -> Self {
        Self { root: cfg.out.clone() }
    }
    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }
    pub fn preprocess(&self) -> PathBuf {
        self.root.join("preprocess")
    }
    pub fn denoiser(&self) -> PathBuf {
        self.root.join("denoiser")
    }
    pub fn classifier(&self) -> PathBuf {
        self.root.join("classifier")
    }
    pub fn detector(&self) -> PathBuf {
        self.root.join("detector")
    }
    pub fn evaluate(&self) -> PathBuf {
        self.root.join("evaluate")
    }
    pub fn detect(&self) -> PathBuf {
        self.root.join("detect")
    }
    pub fn denoiser_checkpoint(&self) -> PathBuf {
        self.denoiser().join("denoiser.ckpt")
    }
    pub fn classifier_checkpoint(&self) -> PathBuf {
        self.classifier().join("classifier.ckpt")
    }
    pub fn detector_checkpoint(&self) -> PathBuf {
        self.detector().join("detector.ckpt")
    }
}

fn run_stage<T>(dir: &Path, stage: &str, body: impl FnOnce() -> Result<T, StageError>) -> Result<T, StageError> {
    fs::create_dir_all(dir).stage(stage)?;
    let marker = dir.join(MARKER);
    fs::write(&marker, format!("stage `{stage}` started and has not finished\n")).stage(stage)?;
    log::info!("stage {stage}: writing to {}", dir.display());
    match body() {
        Ok(v) => {
            fs::remove_file(&marker).stage(stage)?;
            Ok(v)
        }
        Err(e) => {
            let _ = fs::write(&marker, format!("stage `{stage}` failed: {e}\n"));
            Err(e)
        }
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>, stage: &str) -> Result<(), StageError> {
    fs::write(path, contents).map_err(|e| StageError::stage(stage, format!("writing {}: {e}", path.display())))
}

fn meta(cfg: &PipelineConfig, epochs: usize, lr: f64, model: &str) -> TrainingMeta {
    let mut m = TrainingMeta { epochs, lr, seed: cfg.seed, ..TrainingMeta::default() };
    m.notes.insert("config_sha256".into(), cfg.hash());
    m.notes.insert("stage".into(), model.into());
    m
}

fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(s, "{},{l}", i + 1);
    }
    s
}

fn metrics_csv(hash: &str, rows: &[(&str, String)]) -> String {
    let mut s = format!("metric,value\nconfig_sha256,{hash}\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

fn save_checkpoint(ck: &Checkpoint, path: &Path, stage: &str) -> Result<(), StageError> {
    write(path, ck.to_bytes().stage(stage)?, stage)
}

fn load_checkpoint(path: &Path, stage: &str, producer: &str) -> Result<Checkpoint, StageError> {
    if !path.exists() {
        return Err(StageError::missing(stage, producer, path));
    }
    Checkpoint::from_bytes(&fs::read(path).stage(stage)?).stage(stage)
}

/// Indices of `n` items spread evenly over `0..len`.
fn spread(len: usize, n: Option<usize>) -> Vec<usize> {
    match n {
        Some(n) if n < len => (0..n).map(|i| i * len / n).collect(),
        _ => (0..len).collect(),
    }
}

pub fn synth(cfg: &PipelineConfig) -> Result<(), StageError> {
    let dir = Layout::new(cfg).corpus();
    run_stage(&dir, "synth", || {
        let manifest = generate_corpus(&cfg.synth, cfg.seed, &dir).stage("synth")?;
        let mut f = fs::File::create(dir.join("manifest.csv")).stage("synth")?;
        manifest.write_to(&mut f).stage("synth")?;
        log::info!("synth: {} recordings", manifest.entries.len());
        Ok(())
    })
}

#[derive(Serialize)]
struct PreprocessReport {
    config_sha256: String,
    recordings: usize,
    recordings_train: usize,
    recordings_test: usize,
    rows: usize,
    /// `split/label -> count` over visible labels.
    counts: BTreeMap<String, usize>,
    /// `split -> count` of rows whose hidden truth differs from the label.
    hidden_contaminants: BTreeMap<String, usize>,
    leakage_violations: usize,
    normalizer_sha256: String,
    zero_variance_bins: usize,
    warnings: Vec<String>,
}

/// Everything `preprocess` leaves behind, loaded back.
pub struct Prepared {
    pub rows: Vec<CuratedRow>,
    /// Compressed dB spectrograms, parallel to `rows`.
    pub spectra: Vec<Spectrogram<f32>>,
    pub stats: PerBinStats<f32>,
}

impl Prepared {
    pub fn load(cfg: &PipelineConfig, stage: &str) -> Result<Self, StageError> {
        let dir = Layout::new(cfg).preprocess();
        let need = |name: &str| -> Result<PathBuf, StageError> {
            let p = dir.join(name);
            if p.exists() && !dir.join(MARKER).exists() {
                Ok(p)
            } else {
                Err(StageError::missing(stage, "preprocess", &p))
            }
        };
        let rows = CuratedManifest::from_reader(fs::File::open(need("dataset.csv")?).stage(stage)?).stage(stage)?.rows;
        let spectra = store::read(&need("spectra.bin")?).stage(stage)?;
        let stats = PerBinStats::from_bytes(&fs::read(need("normalizer.bin")?).stage(stage)?).stage(stage)?;
        if spectra.len() != rows.len() {
            return Err(StageError::stage(stage, format!("{} spectrograms for {} dataset rows", spectra.len(), rows.len())));
        }
        Ok(Self { rows, spectra, stats })
    }

    pub fn indices(&self, pred: impl Fn(&CuratedRow) -> bool) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| pred(&self.rows[i])).collect()
    }

    pub fn normalized(&self, idx: &[usize], stage: &str) -> Result<Vec<Spectrogram<f32>>, StageError> {
        idx.iter().map(|&i| self.stats.apply(&self.spectra[i]).stage(stage)).collect()
    }

    pub fn fingerprint(&self, cfg: &PipelineConfig, kind: InputKind) -> Fingerprint {
        Fingerprint::new(cfg.stft, &self.stats, kind == InputKind::Denoised)
    }
}

pub fn preprocess(cfg: &PipelineConfig) -> Result<(), StageError> {
    const STAGE: &str = "preprocess";
    let dir = Layout::new(cfg).preprocess();
    run_stage(&dir, STAGE, || {
        let mpath = cfg.manifest_path();
        if !mpath.exists() {
            return Err(StageError::missing(STAGE, "synth", &mpath));
        }
        let base = mpath.parent().unwrap_or(Path::new(".")).to_path_buf();
        let manifest = DatasetManifest::read(&mpath).stage(STAGE)?;
        let split = partition(&manifest, cfg.split_ratio, cfg.seed).stage(STAGE)?;
        let dataset = build_dataset(&manifest, &split, &cfg.dataset, cfg.seed).stage(STAGE)?;
        let plan = Stft::<f32>::new(cfg.stft).stage(STAGE)?;

        let mut by_path: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in dataset.rows.iter().enumerate() {
            by_path.entry(r.path.as_str()).or_default().push(i);
        }
        let mut spectra: Vec<Option<Spectrogram<f32>>> = vec![None; dataset.rows.len()];
        for (path, idx) in by_path {
            let id = &dataset.rows[idx[0]].source_id;
            let w = load_wav::<f32>(&DatasetManifest::resolve(&base, path), id, cfg.sample_rate).stage(STAGE)?;
            let segs = segment(&w, cfg.dataset.segment_s, None);
            for i in idx {
                let k = dataset.rows[i].segment_index;
                let s = segs
                    .get(k)
                    .ok_or_else(|| StageError::stage(STAGE, format!("{path} has {} segments, row wants index {k}", segs.len())))?;
                spectra[i] = Some(compressed_spectrogram(&plan, &s.samples, w.sample_rate).stage(STAGE)?);
            }
        }
        let spectra: Vec<Spectrogram<f32>> = spectra.into_iter().map(|s| s.expect("every row computed")).collect();
        let train: Vec<&Spectrogram<f32>> = dataset.rows.iter().zip(&spectra).filter(|(r, _)| r.split == Split::Train).map(|(_, s)| s).collect();
        let stats = PerBinStats::fit(train.iter().copied()).stage(STAGE)?;

        write(&dir.join("splits.csv"), split.to_csv(), STAGE)?;
        dataset.write_to(fs::File::create(dir.join("dataset.csv")).stage(STAGE)?).stage(STAGE)?;
        store::write(&dir.join("spectra.bin"), &spectra).stage(STAGE)?;
        write(&dir.join("normalizer.bin"), stats.to_bytes(), STAGE)?;

        let images = dir.join("images");
        fs::create_dir_all(&images).stage(STAGE)?;
        for (i, (r, s)) in dataset.rows.iter().zip(&spectra).take(cfg.stages.images).enumerate() {
            write(&images.join(format!("{i:02}_{}.pgm", r.label)), to_pgm(s), STAGE)?;
        }

        let mut counts = BTreeMap::new();
        for ((s, l), n) in dataset.counts() {
            counts.insert(format!("{s}/{l}"), n);
        }
        let mut hidden = BTreeMap::new();
        for r in dataset.rows.iter().filter(|r| r.is_contaminant()) {
            *hidden.entry(r.split.to_string()).or_insert(0) += 1;
        }
        let report = PreprocessReport {
            config_sha256: cfg.hash(),
            recordings: manifest.entries.len(),
            recordings_train: split.train.len(),
            recordings_test: split.test.len(),
            rows: dataset.rows.len(),
            counts,
            hidden_contaminants: hidden,
            leakage_violations: split.leakage_violations() + dataset.leakage_violations(),
            normalizer_sha256: stats.fingerprint(),
            zero_variance_bins: stats.zero_variance_bins(),
            warnings: split.warnings.clone(),
        };
        write(&dir.join("report.json"), serde_json::to_string_pretty(&report).stage(STAGE)? + "\n", STAGE)?;
        log::info!("preprocess: {} rows, leakage violations {}", report.rows, report.leakage_violations);
        Ok(())
    })
}

fn load_denoiser(cfg: &PipelineConfig, prepared: &Prepared, stage: &str) -> Result<DenoiserModel<f32>, StageError> {
    let ck = load_checkpoint(&Layout::new(cfg).denoiser_checkpoint(), stage, "train-denoiser")?;
    let model = DenoiserModel::<f32>::from_checkpoint(&ck).stage(stage)?;
    if model.stats.fingerprint() != prepared.stats.fingerprint() {
        return Err(StageError::stage(stage, "denoiser was trained with a different normalizer; rerun train-denoiser"));
    }
    Ok(model)
}

/// Normalized, optionally denoised, spectrograms for the given rows.
fn model_inputs(cfg: &PipelineConfig, p: &Prepared, idx: &[usize], kind: InputKind, stage: &str) -> Result<Vec<Spectrogram<f32>>, StageError> {
    let norm = p.normalized(idx, stage)?;
    match kind {
        InputKind::Raw => Ok(norm),
        InputKind::Denoised => {
            let mut d = load_denoiser(cfg, p, stage)?;
            d.denoise_batch(&norm.iter().collect::<Vec<_>>()).stage(stage)
        }
    }
}

/// Detector inputs: dB spectrograms, or denoised ones when configured.
fn detector_inputs(cfg: &PipelineConfig, p: &Prepared, idx: &[usize], stage: &str) -> Result<Vec<Spectrogram<f32>>, StageError> {
    match cfg.stages.detector_input {
        InputKind::Raw => Ok(idx.iter().map(|&i| p.spectra[i].clone()).collect()),
        InputKind::Denoised => model_inputs(cfg, p, idx, InputKind::Denoised, stage),
    }
}

pub fn train_denoiser(cfg: &PipelineConfig) -> Result<(), StageError> {
    const STAGE: &str = "train-denoiser";
    let layout = Layout::new(cfg);
    run_stage(&layout.denoiser(), STAGE, || {
        let p = Prepared::load(cfg, STAGE)?;
        let train = p.indices(|r| r.split == Split::Train);
        let pick: Vec<usize> = spread(train.len(), cfg.stages.denoiser_train_limit).into_iter().map(|i| train[i]).collect();
        let db: Vec<Spectrogram<f32>> = pick.iter().map(|&i| p.spectra[i].clone()).collect();
        let bg = p.indices(|r| r.split == Split::Train && r.label == "background");
        let bg_pick: Vec<usize> = spread(bg.len(), Some(cfg.stages.noise_bank_size)).into_iter().map(|i| bg[i]).collect();
        let backgrounds = p.normalized(&bg_pick, STAGE)?;
        log::info!("train-denoiser: {} spectrograms, {} background noise references", db.len(), backgrounds.len());
        let (mut model, curve) = fit_denoiser(&db, &p.stats, backgrounds, cfg.stft, &cfg.denoiser, cfg.seed).stage(STAGE)?;
        let ck = model.to_checkpoint(meta(cfg, cfg.denoiser.epochs, cfg.denoiser.lr, "denoiser"));
        save_checkpoint(&ck, &layout.denoiser_checkpoint(), STAGE)?;
        write(&layout.denoiser().join("loss.csv"), loss_csv(&curve), STAGE)
    })
}

pub fn train_classifier(cfg: &PipelineConfig) -> Result<(), StageError> {
    const STAGE: &str = "train-classifier";
    let layout = Layout::new(cfg);
    run_stage(&layout.classifier(), STAGE, || {
        let p = Prepared::load(cfg, STAGE)?;
        let idx = p.indices(|r| r.split == Split::Train);
        let kind = cfg.stages.classifier_input;
        let inputs = model_inputs(cfg, &p, &idx, kind, STAGE)?;
        let labels: Vec<String> = idx.iter().map(|&i| p.rows[i].label.clone()).collect();
        log::info!("train-classifier: {} spectrograms ({kind:?} input)", inputs.len());
        let (mut model, curve) =
            fit_classifier(&inputs, &labels, cfg.dataset.contamination_class.as_deref(), p.fingerprint(cfg, kind), &cfg.classifier, cfg.seed).stage(STAGE)?;
        let ck = model.to_checkpoint(meta(cfg, cfg.classifier.epochs, cfg.classifier.lr, "classifier")).stage(STAGE)?;
        save_checkpoint(&ck, &layout.classifier_checkpoint(), STAGE)?;
        write(&layout.classifier().join("loss.csv"), loss_csv(&curve), STAGE)
    })
}

pub fn train_detector(cfg: &PipelineConfig) -> Result<(), StageError> {
    const STAGE: &str = "train-detector";
    let layout = Layout::new(cfg);
    run_stage(&layout.detector(), STAGE, || {
        let p = Prepared::load(cfg, STAGE)?;
        // The background pool as labelled, hidden contaminants included.
        let idx = p.indices(|r| r.split == Split::Train && r.label == "background");
        let inputs = detector_inputs(cfg, &p, &idx, STAGE)?;
        let lo = match cfg.stages.detector_input {
            InputKind::Raw => Some(cfg.stft.db_floor),
            InputKind::Denoised => None,
        };
        let rescale = Rescale::fit(&inputs, lo).stage(STAGE)?;
        log::info!("train-detector: {} background-pool spectrograms", inputs.len());
        let (ae, curve) = train_autoencoder(&inputs, rescale, &cfg.detector, cfg.seed).stage(STAGE)?;
        let refs: Vec<&Spectrogram<f32>> = inputs.iter().collect();
        let mut model = DetectorModel::calibrate(ae, &refs, cfg.detector.percentile, p.fingerprint(cfg, cfg.stages.detector_input)).stage(STAGE)?;
        let ck = model.to_checkpoint(meta(cfg, cfg.detector.epochs, cfg.detector.lr, "detector")).stage(STAGE)?;
        save_checkpoint(&ck, &layout.detector_checkpoint(), STAGE)?;
        write(&layout.detector().join("loss.csv"), loss_csv(&curve), STAGE)?;
        write(&layout.detector().join("threshold.csv"), format!("threshold,percentile\n{},{}\n", model.threshold, model.percentile), STAGE)
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auroc: Option<f64>,
}

impl From<&Metrics> for MetricSummary {
    fn from(m: &Metrics) -> Self {
        Self { accuracy: m.accuracy, precision: m.precision, recall: m.recall, f1: m.f1, auroc: m.auroc }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectorSummary {
    pub metrics: MetricSummary,
    pub flag_rate: f64,
    pub threshold: f64,
    pub percentile: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct Summary {
    pub config_sha256: String,
    pub classifier: Option<MetricSummary>,
    pub classifier_input: Option<InputKind>,
    pub detector: Option<DetectorSummary>,
    pub denoiser: Option<DenoiseReport>,
    pub caveats: Vec<String>,
    /// Published full-scale results, for side-by-side reading only.
    pub reference_rows: BTreeMap<String, String>,
}

fn sample_id(r: &CuratedRow) -> String {
    format!("{}:{}", r.source_id, r.segment_index)
}

pub fn evaluate(cfg: &PipelineConfig) -> Result<Summary, StageError> {
    const STAGE: &str = "evaluate";
    let layout = Layout::new(cfg);
    let dir = layout.evaluate();
    run_stage(&dir, STAGE, || {
        let p = Prepared::load(cfg, STAGE)?;
        let hash = cfg.hash();
        let mut summary = Summary { config_sha256: hash.clone(), ..Summary::default() };
        let present = [layout.denoiser_checkpoint(), layout.classifier_checkpoint(), layout.detector_checkpoint()].iter().filter(|p| p.exists()).count();
        if present == 0 {
            return Err(StageError::stage(STAGE, "no trained model found; run train-denoiser, train-classifier or train-detector first"));
        }

        if layout.classifier_checkpoint().exists() {
            let ck = load_checkpoint(&layout.classifier_checkpoint(), STAGE, "train-classifier")?;
            let mut model = ClassifierModel::<f32>::from_checkpoint(&ck).stage(STAGE)?;
            let kind = cfg.stages.classifier_input;
            let idx = p.indices(|r| r.split == Split::Test && r.hidden_truth == r.label && model.classes.contains(&r.label));
            let inputs = model_inputs(cfg, &p, &idx, kind, STAGE)?;
            let labels: Vec<String> = idx.iter().map(|&i| p.rows[i].label.clone()).collect();
            let rep = evaluate_classifier(&mut model, &inputs, &labels, &p.fingerprint(cfg, kind)).stage(STAGE)?;
            let m = &rep.metrics;
            let rows = [
                ("samples", inputs.len().to_string()),
                ("accuracy", m.accuracy.to_string()),
                ("precision_macro", m.precision.to_string()),
                ("recall_macro", m.recall.to_string()),
                ("f1_macro", m.f1.to_string()),
                ("input", format!("{kind:?}").to_lowercase()),
            ];
            write(&dir.join("classifier_metrics.csv"), metrics_csv(&hash, &rows), STAGE)?;
            let mut per = String::from("class,precision,recall,f1,support\n");
            for (c, s) in model.classes.iter().zip(&m.per_class) {
                let _ = writeln!(per, "{c},{},{},{},{}", s.precision, s.recall, s.f1, s.support);
            }
            write(&dir.join("classifier_per_class.csv"), per, STAGE)?;
            write(&dir.join("classifier_confusion.csv"), rep.confusion.to_csv(&model.classes), STAGE)?;
            let mut preds = String::from("sample_id,label,predicted\n");
            for (k, &i) in idx.iter().enumerate() {
                let _ = writeln!(preds, "{},{},{}", sample_id(&p.rows[i]), p.rows[i].label, model.classes[rep.predictions[k]]);
            }
            write(&dir.join("classifier_predictions.csv"), preds, STAGE)?;
            summary.classifier = Some(m.into());
            summary.classifier_input = Some(kind);
        }

        if layout.detector_checkpoint().exists() {
            let ck = load_checkpoint(&layout.detector_checkpoint(), STAGE, "train-detector")?;
            let mut model = DetectorModel::<f32>::from_checkpoint(&ck).stage(STAGE)?;
            let contam = cfg.dataset.contamination_class.clone();
            let idx = p.indices(|r| r.split == Split::Test && (r.label == "background" || Some(&r.label) == contam.as_ref()));
            let inputs = detector_inputs(cfg, &p, &idx, STAGE)?;
            let truth: Vec<bool> = idx.iter().map(|&i| p.rows[i].hidden_truth != "background").collect();
            let refs: Vec<&Spectrogram<f32>> = inputs.iter().collect();
            let rep = evaluate_detector(&mut model, &refs, &truth, &p.fingerprint(cfg, cfg.stages.detector_input)).stage(STAGE)?;
            let mut log_csv = String::from("sample_id,error,threshold,verdict,hidden_truth\n");
            for (k, &i) in idx.iter().enumerate() {
                let v = &rep.verdicts[k];
                let _ = writeln!(log_csv, "{},{},{},{},{}", sample_id(&p.rows[i]), v.reconstruction_error, v.threshold, v.verdict, p.rows[i].hidden_truth);
            }
            write(&dir.join("detector_verdicts.csv"), log_csv, STAGE)?;
            let m = &rep.metrics;
            let rows = [
                ("samples", idx.len().to_string()),
                ("novel_samples", truth.iter().filter(|&&t| t).count().to_string()),
                ("accuracy", m.accuracy.to_string()),
                ("precision", m.precision.to_string()),
                ("recall", m.recall.to_string()),
                ("f1", m.f1.to_string()),
                ("auroc", m.auroc.map(|a| a.to_string()).unwrap_or_default()),
                ("flag_rate", rep.flag_rate.to_string()),
                ("threshold", model.threshold.to_string()),
                ("percentile", model.percentile.to_string()),
            ];
            write(&dir.join("detector_metrics.csv"), metrics_csv(&hash, &rows), STAGE)?;
            summary.detector = Some(DetectorSummary { metrics: m.into(), flag_rate: rep.flag_rate, threshold: model.threshold, percentile: model.percentile, samples: idx.len() });
        }

        if layout.denoiser_checkpoint().exists() {
            let mut model = load_denoiser(cfg, &p, STAGE)?;
            let test = p.indices(|r| r.split == Split::Test);
            let pick: Vec<usize> = spread(test.len(), cfg.stages.denoise_eval_limit).into_iter().map(|i| test[i]).collect();
            let clean = p.normalized(&pick, STAGE)?;
            let bank = NoiseBank { cfg: cfg.denoiser.noise.clone(), backgrounds: Vec::new() };
            let intensity = cfg.stages.denoise_eval_intensity;
            let pairs = synthetic_pairs(&clean, NoiseKind::Gaussian, intensity, &bank, cfg.seed).stage(STAGE)?;
            let rep = eval_denoiser(&mut model, &pairs).stage(STAGE)?;
            // Hum touches a few rows only; its ratio is a diagnostic, not the headline.
            let hum = eval_denoiser(&mut model, &synthetic_pairs(&clean, NoiseKind::Hum, intensity, &bank, cfg.seed).stage(STAGE)?).stage(STAGE)?;
            let rows = [
                ("pairs", rep.pairs.to_string()),
                ("noise", "gaussian".to_string()),
                ("intensity", intensity.to_string()),
                ("mse_noisy", rep.mse_noisy.to_string()),
                ("mse_denoised", rep.mse_denoised.to_string()),
                ("mse_ratio", rep.mse_ratio.to_string()),
                ("snr_gain_db", rep.snr_gain_db.to_string()),
                ("hum_mse_ratio", hum.mse_ratio.to_string()),
                ("hum_snr_gain_db", hum.snr_gain_db.to_string()),
            ];
            write(&dir.join("denoiser_report.csv"), metrics_csv(&hash, &rows), STAGE)?;
            let images = dir.join("images");
            fs::create_dir_all(&images).stage(STAGE)?;
            for (i, (c, n)) in pairs.iter().take(cfg.stages.images).enumerate() {
                let d = model.denoise(n).stage(STAGE)?;
                write(&images.join(format!("denoise_{i:02}_clean.pgm")), to_pgm(c), STAGE)?;
                write(&images.join(format!("denoise_{i:02}_before.pgm")), to_pgm(n), STAGE)?;
                write(&images.join(format!("denoise_{i:02}_after.pgm")), to_pgm(&d), STAGE)?;
            }
            summary.denoiser = Some(rep);
        }

        let mut caveats = vec![
            "precision, recall and F1 are macro averages over classes".into(),
            "the classifier is a residual CNN trained from scratch, not an ImageNet-pretrained ResNet18".into(),
            "the detector threshold flags about 30% of the calibration background by construction; accuracy and flag rate are reported separately".into(),
        ];
        if summary.detector.as_ref().is_some_and(|d| d.metrics.auroc.is_none()) {
            caveats.push("the detector test rows hold a single class, so AUROC is undefined".into());
        }
        summary.caveats = caveats;
        summary.reference_rows = BTreeMap::from([
            ("classifier (Deepship, accuracy/precision/recall/F1 %)".to_string(), "71.3/71.9/72.5/71".to_string()),
            ("detector (Deepship + ONC, accuracy/precision/recall/F1 %)".to_string(), "91.5/87.8/81.3/84".to_string()),
        ]);
        write(&dir.join("summary.json"), serde_json::to_string_pretty(&summary).stage(STAGE)? + "\n", STAGE)?;
        Ok(summary)
    })
}

/// Classifies and screens every full segment of `input`. Returns CSV
/// lines (header first), also written to `detect/<file stem>.csv`.
pub fn detect(cfg: &PipelineConfig, input: &Path) -> Result<Vec<String>, StageError> {
    const STAGE: &str = "detect";
    let layout = Layout::new(cfg);
    let stem = input.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "input".into());
    run_stage(&layout.detect(), STAGE, || {
        let npath = layout.preprocess().join("normalizer.bin");
        if !npath.exists() {
            return Err(StageError::missing(STAGE, "preprocess", &npath));
        }
        let stats = PerBinStats::<f32>::from_bytes(&fs::read(&npath).stage(STAGE)?).stage(STAGE)?;
        let mut classifier = ClassifierModel::<f32>::from_checkpoint(&load_checkpoint(&layout.classifier_checkpoint(), STAGE, "train-classifier")?).stage(STAGE)?;
        let mut detector = DetectorModel::<f32>::from_checkpoint(&load_checkpoint(&layout.detector_checkpoint(), STAGE, "train-detector")?).stage(STAGE)?;

        let w = load_wav::<f32>(input, &stem, cfg.sample_rate).map_err(|e| StageError::stage(STAGE, format!("cannot read {}: {e}", input.display())))?;
        let segs = segment(&w, cfg.dataset.segment_s, None);
        if segs.is_empty() {
            return Err(StageError::stage(STAGE, format!("{} is shorter than one {} s segment", input.display(), cfg.dataset.segment_s)));
        }
        let plan = Stft::<f32>::new(cfg.stft).stage(STAGE)?;
        let db = segs.iter().map(|s| compressed_spectrogram(&plan, &s.samples, w.sample_rate)).collect::<tidewatch::Result<Vec<_>>>().stage(STAGE)?;
        let norm = db.iter().map(|s| stats.apply(s)).collect::<tidewatch::Result<Vec<_>>>().stage(STAGE)?;
        let needs_denoiser = cfg.stages.classifier_input == InputKind::Denoised || cfg.stages.detector_input == InputKind::Denoised;
        let denoised = if needs_denoiser {
            let ck = load_checkpoint(&layout.denoiser_checkpoint(), STAGE, "train-denoiser")?;
            let mut d = DenoiserModel::<f32>::from_checkpoint(&ck).stage(STAGE)?;
            Some(d.denoise_batch(&norm.iter().collect::<Vec<_>>()).stage(STAGE)?)
        } else {
            None
        };
        let pick = |kind: InputKind, raw: &[Spectrogram<f32>]| -> Vec<Spectrogram<f32>> {
            match kind {
                InputKind::Raw => raw.to_vec(),
                InputKind::Denoised => denoised.clone().expect("denoised inputs computed"),
            }
        };
        let fp = |kind: InputKind| Fingerprint::new(cfg.stft, &stats, kind == InputKind::Denoised);
        let cin = pick(cfg.stages.classifier_input, &norm);
        let din = pick(cfg.stages.detector_input, &db);
        let preds = classifier.classify_batch(&cin.iter().collect::<Vec<_>>(), &fp(cfg.stages.classifier_input)).stage(STAGE)?;
        let verdicts = detector.detect_batch(&din.iter().collect::<Vec<_>>(), &fp(cfg.stages.detector_input)).stage(STAGE)?;

        let mut lines = vec![format!(
            "segment,start_s,predicted,{},error,threshold,verdict",
            classifier.classes.iter().map(|c| format!("p_{c}")).collect::<Vec<_>>().join(",")
        )];
        for (k, (p, v)) in preds.iter().zip(&verdicts).enumerate() {
            let probs: Vec<String> = p.probabilities.iter().map(|x| format!("{x:.6}")).collect();
            lines.push(format!(
                "{k},{},{},{},{},{},{}",
                k as f64 * cfg.dataset.segment_s,
                classifier.classes[p.class],
                probs.join(","),
                v.reconstruction_error,
                v.threshold,
                v.verdict
            ));
        }
        write(&layout.detect().join(format!("{stem}.csv")), lines.join("\n") + "\n", STAGE)?;
        Ok(lines)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_is_even_and_bounded() {
        assert_eq!(spread(10, Some(5)), vec![0, 2, 4, 6, 8]);
        assert_eq!(spread(3, Some(5)), vec![0, 1, 2]);
        assert_eq!(spread(4, None), vec![0, 1, 2, 3]);
    }

    #[test]
    fn loss_csv_format() {
        assert_eq!(loss_csv(&[0.5, 0.25]), "epoch,loss\n1,0.5\n2,0.25\n");
    }
}
