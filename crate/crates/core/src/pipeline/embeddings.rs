//! Line-oriented embeddings interchange format.
//!
//! One JSON object per line:
//!
//! ```text
//! {"id":"d1","dense":[0.1,0.2],"sparse":{"17":0.4},"colbert":[[0.1,0.2],[0.3,0.4]]}
//! ```
//!
//! `dense`, `sparse` and `colbert` are each optional but at least one must be
//! present. A sidecar `<file>.manifest.json` records `dim`, `count` and the
//! SHA-256 of the embeddings file; when present it is validated on read.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io_util::atomic_write;
use crate::toy_encoder::EncodedText;
use crate::types::{normalize, DenseEmbedding, MultiVectorEmbedding, TermWeightVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dense: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<BTreeMap<u32, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub colbert: Option<Vec<Vec<f64>>>,
}

impl EmbeddingRecord {
    pub fn from_encoded(id: impl Into<String>, enc: &EncodedText) -> Self {
        Self {
            id: id.into(),
            dense: Some(enc.cls.as_slice().to_vec()),
            sparse: Some(enc.term_weights.iter().collect()),
            colbert: Some(enc.multivec.to_rows()),
        }
    }

    pub fn has_any(&self) -> bool {
        self.dense.is_some() || self.sparse.is_some() || self.colbert.is_some()
    }

    /// Dimension implied by the dense vector or the first multi-vector row.
    pub fn dim(&self) -> Option<usize> {
        self.dense
            .as_ref()
            .map(Vec::len)
            .or_else(|| self.colbert.as_ref().and_then(|m| m.first()).map(Vec::len))
    }

    pub fn dense_embedding(&self) -> Result<Option<DenseEmbedding>> {
        self.dense.as_deref().map(normalize).transpose()
    }

    pub fn term_weights(&self) -> Result<Option<TermWeightVector>> {
        self.sparse
            .as_ref()
            .map(|m| TermWeightVector::from_pairs(m.iter().map(|(&t, &w)| (t, w))))
            .transpose()
    }

    pub fn multivec(&self) -> Result<Option<MultiVectorEmbedding>> {
        self.colbert.as_deref().map(MultiVectorEmbedding::from_rows).transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub dim: Option<usize>,
    pub count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Serializes records to the line format (no trailing manifest).
pub fn encode_records(records: &[EmbeddingRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        if !r.has_any() {
            return Err(Error::InvalidArgument(format!("record `{}` has no representation", r.id)));
        }
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::Io(e.to_string()))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_embeddings(records: &[EmbeddingRecord], path: &Path) -> Result<()> {
    let body = encode_records(records)?;
    let manifest = Manifest {
        dim: records.iter().find_map(EmbeddingRecord::dim),
        count: records.len(),
        checksum: Some(sha256_hex(body.as_bytes())),
    };
    atomic_write(path, body.as_bytes())?;
    let m = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Io(e.to_string()))?;
    atomic_write(&manifest_path(path), m.as_bytes())
}

/// Parses the line format. `dim`, when given, is enforced on every dense
/// vector and multi-vector row.
pub fn parse_records(text: &str, dim: Option<usize>) -> Result<Vec<EmbeddingRecord>> {
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: EmbeddingRecord =
            serde_json::from_str(line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        if !rec.has_any() {
            return Err(Error::parse(
                line_no,
                format!("record `{}` has no representation", rec.id),
            ));
        }
        if let Some(d) = dim {
            if let Some(v) = &rec.dense {
                if v.len() != d {
                    return Err(Error::parse(
                        line_no,
                        format!("dense length {} differs from manifest dim {d}", v.len()),
                    ));
                }
            }
            if let Some(m) = &rec.colbert {
                if let Some(bad) = m.iter().find(|r| r.len() != d) {
                    return Err(Error::parse(
                        line_no,
                        format!("colbert row length {} differs from manifest dim {d}", bad.len()),
                    ));
                }
            }
        }
        if rec.colbert.as_ref().is_some_and(|m| m.is_empty()) {
            return Err(Error::parse(line_no, "colbert matrix has no rows"));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn read_embeddings(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let text = fs::read_to_string(path)?;
    let mpath = manifest_path(path);
    let manifest: Option<Manifest> = if mpath.exists() {
        let m = fs::read_to_string(&mpath)?;
        Some(serde_json::from_str(&m).map_err(|e| Error::parse(0, format!("manifest: {e}")))?)
    } else {
        None
    };
    if let Some(sum) = manifest.as_ref().and_then(|m| m.checksum.as_ref()) {
        if *sum != sha256_hex(text.as_bytes()) {
            return Err(Error::parse(0, "checksum does not match manifest"));
        }
    }
    let records = parse_records(&text, manifest.as_ref().and_then(|m| m.dim))?;
    if let Some(m) = &manifest {
        if m.count != records.len() {
            return Err(Error::parse(
                0,
                format!("manifest count {} but file has {} records", m.count, records.len()),
            ));
        }
    }
    Ok(records)
}
