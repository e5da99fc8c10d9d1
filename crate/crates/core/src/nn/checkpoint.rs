//! Binary checkpoint container.
//!
//! Layout (little-endian): magic `AQSG`, `u16` version, `u16` section
//! count, then per section a 4-byte tag, a `u64` payload length and the
//! payload. Parameters are stored as `f32`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::layers::LayerSpec;
use super::network::Network;
use crate::dsp::normalize::PerBinStats;
use crate::dsp::stft::StftConfig;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAGIC: [u8; 4] = *b"AQSG";
pub const CHECKPOINT_VERSION: u16 = 1;

pub type Tag = [u8; 4];
const STFT: Tag = *b"STFT";
const NORM: Tag = *b"NORM";
const ARCH: Tag = *b"ARCH";
const PARM: Tag = *b"PARM";
const META: Tag = *b"META";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    /// Free-form provenance (model kind, fingerprints, config hash).
    #[serde(default)]
    pub notes: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Architecture {
    input_dims: Vec<usize>,
    layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stft: StftConfig,
    pub normalizer: Option<PerBinStats<f32>>,
    pub input_dims: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    /// Parameters then batch-norm running statistics, in network order.
    pub state: Vec<f32>,
    pub meta: TrainingMeta,
    /// Additional model-specific sections, kept in insertion order.
    pub extra: Vec<(Tag, Vec<u8>)>,
}

impl Checkpoint {
    pub fn from_network<T: Scalar>(
        net: &mut Network<T>,
        stft: StftConfig,
        normalizer: Option<&PerBinStats<T>>,
        meta: TrainingMeta,
    ) -> Self {
        Self {
            stft,
            normalizer: normalizer.map(|n| PerBinStats {
                mean: n.mean.iter().map(|v| v.as_f32()).collect(),
                std: n.std.iter().map(|v| v.as_f32()).collect(),
                epsilon: n.epsilon.as_f32(),
            }),
            input_dims: net.input_dims().to_vec(),
            layers: net.specs(),
            state: net.state_vector().iter().map(|v| v.as_f32()).collect(),
            meta,
            extra: Vec::new(),
        }
    }

    /// Rebuilds the network with the stored state.
    pub fn network<T: Scalar>(&self) -> Result<Network<T>> {
        let mut net = Network::new(self.input_dims.clone(), &self.layers, 0)?;
        let state: Vec<T> = self.state.iter().map(|&v| T::of(v as f64)).collect();
        net.load_state_vector(&state)?;
        Ok(net)
    }

    pub fn normalizer<T: Scalar>(&self) -> Option<PerBinStats<T>> {
        self.normalizer.as_ref().map(|n| PerBinStats {
            mean: n.mean.iter().map(|&v| T::of(v as f64)).collect(),
            std: n.std.iter().map(|&v| T::of(v as f64)).collect(),
            epsilon: T::of(n.epsilon as f64),
        })
    }

    pub fn with_section(mut self, tag: Tag, payload: Vec<u8>) -> Self {
        self.extra.push((tag, payload));
        self
    }

    pub fn section(&self, tag: Tag) -> Option<&[u8]> {
        self.extra.iter().find(|(t, _)| *t == tag).map(|(_, p)| p.as_slice())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut sections: Vec<(Tag, Vec<u8>)> = vec![(STFT, serde_json::to_vec(&self.stft)?)];
        if let Some(n) = &self.normalizer {
            sections.push((NORM, n.to_bytes()));
        }
        let arch = Architecture { input_dims: self.input_dims.clone(), layers: self.layers.clone() };
        sections.push((ARCH, serde_json::to_vec(&arch)?));
        let mut parm = Vec::with_capacity(8 + 4 * self.state.len());
        parm.extend_from_slice(&(self.state.len() as u64).to_le_bytes());
        for v in &self.state {
            parm.extend_from_slice(&v.to_le_bytes());
        }
        sections.push((PARM, parm));
        sections.push((META, serde_json::to_vec(&self.meta)?));
        sections.extend(self.extra.iter().cloned());
        if sections.len() > u16::MAX as usize {
            return Err(Error::Checkpoint("too many sections".into()));
        }

        let mut out = Vec::new();
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(sections.len() as u16).to_le_bytes());
        for (tag, payload) in sections {
            out.extend_from_slice(&tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(&payload);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a checkpoint file".into()));
        }
        let version = u16::from_le_bytes(r.take(2, "version")?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let count = u16::from_le_bytes(r.take(2, "section count")?.try_into().unwrap());
        let (mut stft, mut normalizer, mut arch, mut state, mut meta) = (None, None, None, None, None);
        let mut extra = Vec::new();
        for i in 0..count {
            let tag: Tag = r.take(4, "section tag")?.try_into().unwrap();
            let name = String::from_utf8_lossy(&tag).into_owned();
            let len = u64::from_le_bytes(r.take(8, &format!("length of section {name}"))?.try_into().unwrap());
            let len = usize::try_from(len).map_err(|_| Error::Truncated(format!("section {name}")))?;
            let payload = r.take(len, &format!("section {name} (#{i})"))?;
            match tag {
                STFT => stft = Some(serde_json::from_slice::<StftConfig>(payload)?),
                NORM => normalizer = Some(PerBinStats::<f32>::from_bytes(payload)?),
                ARCH => arch = Some(serde_json::from_slice::<Architecture>(payload)?),
                PARM => state = Some(read_params(payload)?),
                META => meta = Some(serde_json::from_slice::<TrainingMeta>(payload)?),
                _ => extra.push((tag, payload.to_vec())),
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let missing = |s: &str| Error::Checkpoint(format!("missing {s} section"));
        let arch = arch.ok_or_else(|| missing("ARCH"))?;
        let ck = Self {
            stft: stft.ok_or_else(|| missing("STFT"))?,
            normalizer,
            input_dims: arch.input_dims,
            layers: arch.layers,
            state: state.ok_or_else(|| missing("PARM"))?,
            meta: meta.ok_or_else(|| missing("META"))?,
            extra,
        };
        // Reject blobs that do not fit the architecture before anyone uses them.
        ck.network::<f32>()?;
        Ok(ck)
    }
}

fn read_params(p: &[u8]) -> Result<Vec<f32>> {
    let mut r = Reader { bytes: p, pos: 0 };
    let n = u64::from_le_bytes(r.take(8, "parameter count")?.try_into().unwrap()) as usize;
    let body = r.take(n.checked_mul(4).ok_or_else(|| Error::Truncated("parameters".into()))?, "parameters")?;
    if r.pos != p.len() {
        return Err(Error::Checkpoint("parameter section longer than its count".into()));
    }
    Ok(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Truncated(what.into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
}
