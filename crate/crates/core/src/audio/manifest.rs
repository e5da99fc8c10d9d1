use std::collections::{BTreeSet, HashSet};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The declared class set.
pub const CLASS_NAMES: [&str; 5] = ["background", "cargo", "passenger-ship", "tanker", "tug"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub source_id: String,
    pub label: String,
    pub duration_s: f64,
}

impl ManifestEntry {
    /// Whole segments of `segment_s` seconds the recording holds.
    pub fn segments(&self, segment_s: f64) -> usize {
        (self.duration_s / segment_s + 1e-9).floor() as usize
    }
}

/// Recording-level metadata: one row per audio file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (i, e) in self.entries.iter().enumerate() {
            let row = i + 2;
            if e.source_id.is_empty() {
                return Err(Error::Manifest(format!("row {row}: empty source_id")));
            }
            if !seen.insert(e.source_id.as_str()) {
                return Err(Error::Manifest(format!("row {row}: duplicate source_id `{}`", e.source_id)));
            }
            if !CLASS_NAMES.contains(&e.label.as_str()) {
                return Err(Error::Manifest(format!(
                    "row {row}: label `{}` is not one of {}",
                    e.label,
                    CLASS_NAMES.join(", ")
                )));
            }
            if !(e.duration_s.is_finite() && e.duration_s >= 0.0) {
                return Err(Error::Manifest(format!("row {row}: invalid duration {}", e.duration_s)));
            }
        }
        Ok(())
    }

    pub fn from_reader<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let want = ["path", "source_id", "label", "duration_s"];
        let headers = rdr.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != want {
            return Err(Error::Manifest(format!("header must be `{}`, found `{}`", want.join(","), headers.iter().collect::<Vec<_>>().join(","))));
        }
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<ManifestEntry>, _>>()?;
        Self::new(entries)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        if self.entries.is_empty() {
            wtr.write_record(["path", "source_id", "label", "duration_s"])?;
        }
        for e in &self.entries {
            wtr.serialize(e)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv writer emits utf-8"))
    }

    /// Labels present, sorted.
    pub fn labels(&self) -> BTreeSet<&str> {
        self.entries.iter().map(|e| e.label.as_str()).collect()
    }

    pub fn entry(&self, source_id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.source_id == source_id)
    }

    /// Entry path resolved against the manifest's directory when relative.
    pub fn resolve(base_dir: &Path, entry_path: &str) -> PathBuf {
        let p = Path::new(entry_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    }
}
