//! Recording-level train/test partitioning and curated per-segment datasets.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetManifest, ManifestEntry, CLASS_NAMES};
use crate::error::{Error, Result, Shortfall};
use crate::rng::stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub test: BTreeSet<String>,
    pub ratio: f64,
    pub seed: u64,
    pub warnings: Vec<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, source_id: &str) -> Option<Split> {
        if self.train.contains(source_id) {
            Some(Split::Train)
        } else if self.test.contains(source_id) {
            Some(Split::Test)
        } else {
            None
        }
    }

    /// Source ids present in both splits (always zero for assignments built here).
    pub fn leakage_violations(&self) -> usize {
        self.train.intersection(&self.test).count()
    }

    /// `source_id,split` rows sorted by source id.
    pub fn to_csv(&self) -> String {
        let mut rows: Vec<(&str, Split)> = self.train.iter().map(|s| (s.as_str(), Split::Train)).collect();
        rows.extend(self.test.iter().map(|s| (s.as_str(), Split::Test)));
        rows.sort();
        let mut out = String::from("source_id,split\n");
        for (id, split) in rows {
            out.push_str(&format!("{id},{split}\n"));
        }
        out
    }
}

/// Assigns whole recordings to train or test so that, per class, the
/// train share of audio duration approaches `ratio`.
///
/// Classes are handled in sorted order; within a class the recordings are
/// shuffled and greedily added to train while that moves the train share
/// closer to the target. Every class with at least two recordings keeps at
/// least one recording on each side.
pub fn partition(manifest: &DatasetManifest, ratio: f64, seed: u64) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio {ratio} must lie strictly between 0 and 1")));
    }
    manifest.validate()?;
    let mut by_class: BTreeMap<&str, Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        by_class.entry(e.label.as_str()).or_default().push(e);
    }
    let mut rng = stream(seed, "partition");
    let mut out = SplitAssignment { train: BTreeSet::new(), test: BTreeSet::new(), ratio, seed, warnings: Vec::new() };
    for (class, mut recs) in by_class {
        recs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
        recs.shuffle(&mut rng);
        if recs.len() == 1 {
            let msg = format!("class `{class}` has a single recording; it is placed in train and cannot appear in test");
            log::warn!("{msg}");
            out.warnings.push(msg);
            out.train.insert(recs[0].source_id.clone());
            continue;
        }
        let total: f64 = recs.iter().map(|e| e.duration_s).sum();
        let target = ratio * total;
        let mut acc = 0.0;
        let mut train: Vec<&ManifestEntry> = Vec::new();
        let mut test: Vec<&ManifestEntry> = Vec::new();
        for e in recs {
            if (acc + e.duration_s - target).abs() < (acc - target).abs() {
                acc += e.duration_s;
                train.push(e);
            } else {
                test.push(e);
            }
        }
        if test.is_empty() {
            let i = argmin(&train);
            test.push(train.remove(i));
        }
        if train.is_empty() {
            let i = argmax(&test);
            train.push(test.remove(i));
        }
        out.train.extend(train.iter().map(|e| e.source_id.clone()));
        out.test.extend(test.iter().map(|e| e.source_id.clone()));
    }
    Ok(out)
}

fn argmin(v: &[&ManifestEntry]) -> usize {
    (0..v.len()).min_by(|&a, &b| v[a].duration_s.total_cmp(&v[b].duration_s)).unwrap()
}

fn argmax(v: &[&ManifestEntry]) -> usize {
    (0..v.len()).max_by(|&a, &b| v[a].duration_s.total_cmp(&v[b].duration_s).then(b.cmp(&a))).unwrap()
}

/// What the contamination rate is a fraction of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContaminationBase {
    /// The selected background segments (both splits).
    #[default]
    BackgroundPool,
    /// All selected test segments; contaminants go to test only.
    TestSet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    /// Segments selected per retained class.
    pub per_class: usize,
    pub segment_s: f64,
    /// Class withheld from supervised training and hidden in the background pool.
    pub contamination_class: Option<String>,
    pub contamination_rate: f64,
    #[serde(default)]
    pub contamination_base: ContaminationBase,
    /// Adds test rows of the contamination class, as many as there are
    /// genuine background test rows, for novelty evaluation.
    #[serde(default)]
    pub novelty_eval: bool,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            per_class: 5_000,
            segment_s: 2.0,
            contamination_class: Some("tug".into()),
            contamination_rate: 0.01,
            contamination_base: ContaminationBase::BackgroundPool,
            novelty_eval: true,
        }
    }
}

/// One selected segment. `label` is what training code may see;
/// `hidden_truth` is the true class and is reserved for evaluation.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CuratedRow {
    pub split: Split,
    pub label: String,
    pub source_id: String,
    pub segment_index: usize,
    pub path: String,
    pub duration_s: String,
    pub hidden_truth: String,
}

impl CuratedRow {
    pub fn is_contaminant(&self) -> bool {
        self.label != self.hidden_truth
    }
}

#[derive(Serialize, Deserialize)]
struct CsvRow {
    path: String,
    source_id: String,
    label: String,
    duration_s: String,
    split: Split,
    hidden_truth: String,
    segment_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct CuratedManifest {
    pub rows: Vec<CuratedRow>,
}

impl CuratedManifest {
    pub fn rows_in(&self, split: Split) -> impl Iterator<Item = &CuratedRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// `(split, label) -> count` over visible labels.
    pub fn counts(&self) -> BTreeMap<(Split, String), usize> {
        let mut m = BTreeMap::new();
        for r in &self.rows {
            *m.entry((r.split, r.label.clone())).or_insert(0) += 1;
        }
        m
    }

    /// Source ids that occur in both splits.
    pub fn leakage_violations(&self) -> usize {
        let train: HashSet<&str> = self.rows_in(Split::Train).map(|r| r.source_id.as_str()).collect();
        let test: HashSet<&str> = self.rows_in(Split::Test).map(|r| r.source_id.as_str()).collect();
        train.intersection(&test).count()
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for r in &self.rows {
            wtr.serialize(CsvRow {
                path: r.path.clone(),
                source_id: r.source_id.clone(),
                label: r.label.clone(),
                duration_s: r.duration_s.clone(),
                split: r.split,
                hidden_truth: r.hidden_truth.clone(),
                segment_index: r.segment_index,
            })?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let c = rec?;
            rows.push(CuratedRow {
                split: c.split,
                label: c.label,
                source_id: c.source_id,
                segment_index: c.segment_index,
                path: c.path,
                duration_s: c.duration_s,
                hidden_truth: c.hidden_truth,
            });
        }
        Ok(Self { rows })
    }
}

type SegRef<'a> = (&'a ManifestEntry, usize);

/// Round-robin over shuffled recordings, each contributing its shuffled
/// segments in turn, until `quota` segments are taken.
fn stratified<'a, R: Rng>(recs: &[&'a ManifestEntry], segment_s: f64, quota: usize, used: &HashSet<(String, usize)>, rng: &mut R) -> Vec<SegRef<'a>> {
    let mut recs = recs.to_vec();
    recs.sort_by(|a, b| a.source_id.cmp(&b.source_id));
    recs.shuffle(rng);
    let mut queues: Vec<Vec<SegRef<'a>>> = recs
        .iter()
        .map(|e| {
            let mut idx: Vec<usize> = (0..e.segments(segment_s)).filter(|&i| !used.contains(&(e.source_id.clone(), i))).collect();
            idx.shuffle(rng);
            idx.reverse();
            idx.into_iter().map(|i| (*e, i)).collect()
        })
        .collect();
    let mut out = Vec::with_capacity(quota);
    while out.len() < quota {
        let before = out.len();
        for q in queues.iter_mut() {
            if out.len() == quota {
                break;
            }
            if let Some(s) = q.pop() {
                out.push(s);
            }
        }
        if out.len() == before {
            break;
        }
    }
    out
}

fn available(recs: &[&ManifestEntry], segment_s: f64, used: &HashSet<(String, usize)>) -> usize {
    recs.iter()
        .map(|e| (0..e.segments(segment_s)).filter(|&i| !used.contains(&(e.source_id.clone(), i))).count())
        .sum()
}

/// Selects `per_class` segments for every retained class (keeping the
/// recording-level split), then hides contamination-class segments in the
/// background pool under the `background` label.
pub fn build_dataset(manifest: &DatasetManifest, split: &SplitAssignment, spec: &DatasetSpec, seed: u64) -> Result<CuratedManifest> {
    manifest.validate()?;
    if !(spec.segment_s > 0.0) {
        return Err(Error::InvalidArgument("segment duration must be positive".into()));
    }
    if !(0.0..=1.0).contains(&spec.contamination_rate) {
        return Err(Error::InvalidArgument(format!("contamination rate {} outside [0, 1]", spec.contamination_rate)));
    }
    let contam = spec.contamination_class.as_deref();
    if let Some(c) = contam {
        if c == "background" || !CLASS_NAMES.contains(&c) {
            return Err(Error::InvalidArgument(format!("`{c}` cannot be the contamination class")));
        }
    }
    let mut groups: BTreeMap<(&str, Split), Vec<&ManifestEntry>> = BTreeMap::new();
    for e in &manifest.entries {
        let s = split
            .split_of(&e.source_id)
            .ok_or_else(|| Error::Manifest(format!("recording `{}` has no split assignment", e.source_id)))?;
        groups.entry((e.label.as_str(), s)).or_default().push(e);
    }
    let recs = |label: &str, s: Split| groups.get(&(label, s)).cloned().unwrap_or_default();
    let retained: Vec<&str> = manifest.labels().into_iter().filter(|l| Some(*l) != contam).collect();
    let seg = spec.segment_s;
    let none = HashSet::new();

    let mut shortfalls = Vec::new();
    for &class in &retained {
        let avail = available(&recs(class, Split::Train), seg, &none) + available(&recs(class, Split::Test), seg, &none);
        if avail < spec.per_class {
            shortfalls.push(Shortfall { class: class.into(), available: avail, requested: spec.per_class });
        }
    }
    if !shortfalls.is_empty() {
        return Err(Error::Shortfall(shortfalls));
    }

    let mut rng = stream(seed, "build-dataset");
    let mut rows: Vec<CuratedRow> = Vec::new();
    let row = |e: &ManifestEntry, i: usize, s: Split, label: &str, truth: &str| CuratedRow {
        split: s,
        label: label.into(),
        source_id: e.source_id.clone(),
        segment_index: i,
        path: e.path.clone(),
        duration_s: format!("{seg}"),
        hidden_truth: truth.into(),
    };
    for &class in &retained {
        let (tr, te) = (recs(class, Split::Train), recs(class, Split::Test));
        let (at, ae) = (available(&tr, seg, &none), available(&te, seg, &none));
        let mut q_train = ((spec.per_class as f64 * at as f64 / (at + ae) as f64).round() as usize).min(at);
        let mut q_test = spec.per_class - q_train;
        if q_test > ae {
            q_train += q_test - ae;
            q_test = ae;
        }
        for (s, list, q) in [(Split::Train, &tr, q_train), (Split::Test, &te, q_test)] {
            for (e, i) in stratified(list, seg, q, &none, &mut rng) {
                rows.push(row(e, i, s, class, class));
            }
        }
    }

    let mut used: HashSet<(String, usize)> = HashSet::new();
    if let Some(c) = contam.filter(|_| spec.contamination_rate > 0.0) {
        let bg = |rows: &[CuratedRow], s: Split| rows.iter().filter(|r| r.split == s && r.label == "background").count();
        let (bg_train, bg_test) = (bg(&rows, Split::Train), bg(&rows, Split::Test));
        let quotas = match spec.contamination_base {
            ContaminationBase::BackgroundPool => {
                let total = ((bg_train + bg_test) as f64 * spec.contamination_rate).round() as usize;
                let t = if bg_train + bg_test == 0 {
                    0
                } else {
                    (total as f64 * bg_train as f64 / (bg_train + bg_test) as f64).round() as usize
                };
                [(Split::Train, t), (Split::Test, total - t)]
            }
            ContaminationBase::TestSet => {
                let n_test = rows.iter().filter(|r| r.split == Split::Test).count();
                [(Split::Train, 0), (Split::Test, (n_test as f64 * spec.contamination_rate).round() as usize)]
            }
        };
        for (s, q) in quotas {
            if q == 0 {
                continue;
            }
            let pool = recs(c, s);
            let picks = stratified(&pool, seg, q, &used, &mut rng);
            if picks.len() < q {
                return Err(Error::Shortfall(vec![Shortfall { class: format!("{c} ({s} contamination)"), available: picks.len(), requested: q }]));
            }
            // Contaminants replace randomly chosen background segments so the pool size is unchanged.
            let mut bg_idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].split == s && rows[i].label == "background" && !rows[i].is_contaminant()).collect();
            if bg_idx.len() < q {
                return Err(Error::Shortfall(vec![Shortfall { class: format!("background ({s})"), available: bg_idx.len(), requested: q }]));
            }
            bg_idx.shuffle(&mut rng);
            for (&slot, (e, i)) in bg_idx.iter().zip(picks) {
                used.insert((e.source_id.clone(), i));
                rows[slot] = row(e, i, s, "background", c);
            }
        }
    }

    if let Some(c) = contam.filter(|_| spec.novelty_eval) {
        let want = rows.iter().filter(|r| r.split == Split::Test && r.hidden_truth == "background").count();
        let pool = recs(c, Split::Test);
        let picks = stratified(&pool, seg, want, &used, &mut rng);
        if picks.len() < want {
            return Err(Error::Shortfall(vec![Shortfall { class: format!("{c} (novelty evaluation)"), available: picks.len(), requested: want }]));
        }
        for (e, i) in picks {
            rows.push(row(e, i, Split::Test, c, c));
        }
    }

    rows.sort();
    Ok(CuratedManifest { rows })
}
