//! Binary checkpoint format.
//!
//! Layout: the magic bytes `FFHR`, a little-endian `u32` format version, a
//! little-endian `u64` byte length followed by that many bytes of UTF-8 JSON
//! metadata, then every parameter array as little-endian `f64` in the order
//! the metadata lists them.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::TripleStore;
use crate::error::{Error, Result};
use crate::model::{ModelConfig, ModelParams};

pub const MAGIC: &[u8; 4] = b"FFHR";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayInfo {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub dim: usize,
    pub num_entities: usize,
    pub num_relations: usize,
    pub config: ModelConfig,
    pub vocab_hash: String,
    pub curvature: f64,
    pub arrays: Vec<ArrayInfo>,
    /// Free-form settings of the run that produced the checkpoint.
    #[serde(default)]
    pub run: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: Metadata,
    pub params: ModelParams,
}

impl Checkpoint {
    /// Errors unless the checkpoint was trained on `store`'s vocabularies.
    pub fn check_vocab(&self, store: &TripleStore) -> Result<()> {
        let actual = store.vocab_hash();
        if actual != self.meta.vocab_hash {
            return Err(Error::VocabMismatch {
                expected: self.meta.vocab_hash.clone(),
                actual,
            });
        }
        Ok(())
    }
}

pub fn to_bytes(params: &ModelParams, vocab_hash: &str, run: serde_json::Value) -> Result<Vec<u8>> {
    let meta = Metadata {
        dim: params.config().dim,
        num_entities: params.num_entities(),
        num_relations: params.num_relations(),
        config: params.config().clone(),
        vocab_hash: vocab_hash.to_string(),
        curvature: params.curvature().get(),
        arrays: params
            .names()
            .iter()
            .zip(params.arrays())
            .map(|(n, a)| ArrayInfo {
                name: n.clone(),
                shape: [a.nrows(), a.ncols()],
            })
            .collect(),
        run,
    };
    let json = serde_json::to_vec(&meta)?;
    let mut out = Vec::with_capacity(16 + json.len() + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for a in params.arrays() {
        for v in a.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

fn take<'a>(bytes: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if bytes.len() < n {
        return Err(Error::Checkpoint(format!(
            "truncated while reading {what}: need {n} bytes, {} left",
            bytes.len()
        )));
    }
    let (head, rest) = bytes.split_at(n);
    *bytes = rest;
    Ok(head)
}

pub fn from_bytes(mut bytes: &[u8]) -> Result<Checkpoint> {
    let b = &mut bytes;
    if take(b, 4, "magic")? != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes, not a checkpoint".into()));
    }
    let version = u32::from_le_bytes(take(b, 4, "version")?.try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let len = u64::from_le_bytes(take(b, 8, "metadata length")?.try_into().expect("8 bytes"));
    let len = usize::try_from(len).map_err(|_| Error::Checkpoint("metadata length overflow".into()))?;
    let meta: Metadata = serde_json::from_slice(take(b, len, "metadata")?)?;
    let mut arrays = Vec::with_capacity(meta.arrays.len());
    for info in &meta.arrays {
        let count = info.shape[0]
            .checked_mul(info.shape[1])
            .ok_or_else(|| Error::Checkpoint("array shape overflow".into()))?;
        let raw = take(b, count.saturating_mul(8), &info.name)?;
        let values: Vec<f64> = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let a = Array2::from_shape_vec((info.shape[0], info.shape[1]), values)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        arrays.push((info.name.clone(), a));
    }
    if !b.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", b.len())));
    }
    let params = ModelParams::from_arrays(meta.config.clone(), meta.num_entities, meta.num_relations, arrays)
        .map_err(|e| Error::Checkpoint(e.to_string()))?;
    Ok(Checkpoint { meta, params })
}

/// Writes atomically through a temporary file next to `path`.
pub fn save(path: &Path, params: &ModelParams, vocab_hash: &str, run: serde_json::Value) -> Result<()> {
    let bytes = to_bytes(params, vocab_hash, run)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}
