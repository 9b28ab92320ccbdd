//! On-disk formats.
//!
//! Dataset: one JSON header line, then `N_s·N` bytes, one byte per outcome
//! symbol, rows concatenated. The header carries the SHA-256 of the body.
//!
//! Checkpoint (little-endian):
//!
//! ```text
//! magic     8 bytes   "POVMCKPT"
//! version   u32       1
//! meta_len  u32       length of the JSON metadata
//! meta      meta_len  JSON: kind, shape, povm, config_hash, epoch, val_nll
//! count     u64       number of parameters
//! params    count×f64
//! ```
//!
//! GRU parameters are stored layer by layer as `W_x` (`d×3H`, row-major),
//! `W_h` (`H×3H`), `b` (`3H`), gate blocks ordered update, reset, candidate;
//! then the output map `U` (`H×m`) and its bias (`m`). RBM parameters are
//! `W[(i·n_H + j)·m + k]`, then `b[i·m + k]`, then `c[j]`.
//!
//! Reconstruction blob: `2^N × 2^N` complex entries, row-major, each as two
//! little-endian f64 (real, imaginary), with a JSON sidecar.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::StateSpec;
use crate::error::{Error, Result};
use crate::models::{GruShape, RbmShape};
use crate::povm::PovmId;

pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"POVMCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub n_sites: usize,
    pub m: usize,
    pub povm: PovmId,
    pub state: StateSpec,
    pub seed: u64,
    pub n_samples: usize,
    pub generator: String,
    /// Ground-state energy for Hamiltonian states.
    pub energy: Option<f64>,
    pub config_hash: String,
    pub body_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    /// Row-major symbols, `n_samples × n_sites`.
    pub body: Vec<u8>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Dataset {
    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.body.chunks(self.header.n_sites)
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.header;
        if h.format_version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {}", h.format_version)));
        }
        if h.n_sites == 0 || self.body.len() != h.n_samples * h.n_sites {
            return Err(Error::Format(format!(
                "body of {} bytes for {} rows of {} symbols",
                self.body.len(),
                h.n_samples,
                h.n_sites
            )));
        }
        if let Some(&x) = self.body.iter().find(|&&x| x as usize >= h.m) {
            return Err(Error::Format(format!("symbol {x} out of range for m={}", h.m)));
        }
        if sha256_hex(&self.body) != h.body_sha256 {
            return Err(Error::Format("dataset body hash mismatch".into()));
        }
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(&mut f, &self.header)?;
        f.write_all(b"\n")?;
        f.write_all(&self.body)?;
        f.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(std::fs::File::open(path)?);
        let mut line = String::new();
        r.read_line(&mut line)?;
        let header: DatasetHeader = serde_json::from_str(line.trim_end_matches('\n'))?;
        let mut body = Vec::new();
        r.read_to_end(&mut body)?;
        let d = Self { header, body };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelShape {
    Gru(GruShape),
    Rbm(RbmShape),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelShape,
    pub povm: PovmId,
    pub config_hash: String,
    pub epoch: f64,
    /// Absent for models trained without a validation split.
    pub val_nll: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointFile {
    pub meta: CheckpointMeta,
    pub params: Vec<f64>,
}

impl CheckpointFile {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::with_capacity(24 + meta.len() + 8 * self.params.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&p.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::Format(format!("checkpoint: {what}"));
        let take = |at: usize, len: usize| bytes.get(at..at + len).ok_or_else(|| bad("truncated"));
        if take(0, 8)? != CHECKPOINT_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u32::from_le_bytes(take(8, 4)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let meta_len = u32::from_le_bytes(take(12, 4)?.try_into().unwrap()) as usize;
        let meta: CheckpointMeta = serde_json::from_slice(take(16, meta_len)?)?;
        let at = 16 + meta_len;
        let count = u64::from_le_bytes(take(at, 8)?.try_into().unwrap()) as usize;
        let body = take(at + 8, count.checked_mul(8).ok_or_else(|| bad("size overflow"))?)?;
        if bytes.len() != at + 8 + 8 * count {
            return Err(bad("trailing bytes"));
        }
        let params = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        Ok(Self { meta, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub n_samples: usize,
    pub config_hash: String,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Format(e.to_string()))?;
    r.deserialize().map(|row| row.map_err(|e| Error::Format(e.to_string()))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlobSidecar {
    pub n_qubits: usize,
    pub dim: usize,
    pub povm: PovmId,
    pub config_hash: String,
    pub encoding: String,
}

pub fn write_matrix_blob(path: &Path, m: &nalgebra::DMatrix<num_complex::Complex64>) -> Result<()> {
    let mut out = Vec::with_capacity(16 * m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.extend_from_slice(&m[(i, j)].re.to_le_bytes());
            out.extend_from_slice(&m[(i, j)].im.to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_matrix_blob(path: &Path, dim: usize) -> Result<nalgebra::DMatrix<num_complex::Complex64>> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != 16 * dim * dim {
        return Err(Error::Format(format!("blob of {} bytes for a {dim}×{dim} matrix", bytes.len())));
    }
    let vals: Vec<num_complex::Complex64> = bytes
        .chunks_exact(16)
        .map(|c| {
            num_complex::Complex64::new(
                f64::from_le_bytes(c[..8].try_into().unwrap()),
                f64::from_le_bytes(c[8..].try_into().unwrap()),
            )
        })
        .collect();
    Ok(nalgebra::DMatrix::from_row_slice(dim, dim, &vals))
}
