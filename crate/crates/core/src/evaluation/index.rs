//! Exhaustive-scan embedding database and its binary file format.
//!
//! ```text
//! magic      8 bytes  "XVINDEX\0"
//! version    u32      = 1
//! n          u64      rows
//! d          u32      descriptor length
//! ids        n x (len u32, utf-8 bytes)
//! matrix     n*d f32, row-major
//! has_pos    u8       0 | 1
//! [pos]      n x (lat f64, lon f64)
//! ```
//! All values little-endian.

use std::collections::HashSet;
use std::path::Path;

use crate::autonn::checkpoint::Reader;
use crate::{Error, Result};

pub const INDEX_MAGIC: &[u8; 8] = b"XVINDEX\0";
pub const INDEX_VERSION: u32 = 1;
/// Allowed deviation of a stored row's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    ids: Vec<String>,
    dim: usize,
    matrix: Vec<f32>,
    positions: Option<Vec<(f64, f64)>>,
}

fn check_norms(matrix: &[f32], dim: usize, ids: &[String]) -> Result<()> {
    if dim == 0 {
        return Ok(());
    }
    for (row, id) in matrix.chunks_exact(dim).zip(ids) {
        let n = row.iter().map(|&v| v as f64 * v as f64).sum::<f64>().sqrt();
        if (n - 1.0).abs() > NORM_TOLERANCE {
            return Err(Error::validation(format!(
                "row `{id}` has norm {n}, expected 1"
            )));
        }
    }
    Ok(())
}

impl EmbeddingIndex {
    /// Builds an index from unit-norm rows. Values are stored as `f32`.
    pub fn build(
        ids: Vec<String>,
        embeddings: &[Vec<f64>],
        positions: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if ids.len() != embeddings.len() {
            return Err(Error::validation(format!(
                "{} ids for {} embeddings",
                ids.len(),
                embeddings.len()
            )));
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        if embeddings.iter().any(|e| e.len() != dim) {
            return Err(Error::validation("embeddings have differing lengths"));
        }
        let matrix: Vec<f32> = embeddings.iter().flatten().map(|&v| v as f32).collect();
        Self::from_parts(ids, dim, matrix, positions)
    }

    pub fn from_parts(
        ids: Vec<String>,
        dim: usize,
        matrix: Vec<f32>,
        positions: Option<Vec<(f64, f64)>>,
    ) -> Result<Self> {
        if matrix.len() != ids.len() * dim {
            return Err(Error::validation("matrix size does not match ids x dim"));
        }
        let mut seen = HashSet::with_capacity(ids.len());
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::validation(format!("duplicate id `{dup}`")));
        }
        if let Some(p) = &positions {
            if p.len() != ids.len() {
                return Err(Error::validation("one position per row required"));
            }
        }
        check_norms(&matrix, dim, &ids)?;
        Ok(EmbeddingIndex {
            ids,
            dim,
            matrix,
            positions,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    pub fn matrix(&self) -> &[f32] {
        &self.matrix
    }

    pub fn positions(&self) -> Option<&[(f64, f64)]> {
        self.positions.as_deref()
    }

    pub fn position_of(&self, i: usize) -> Option<(f64, f64)> {
        self.positions.as_ref().map(|p| p[i])
    }

    pub fn find(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.matrix.len() * 4);
        out.extend_from_slice(INDEX_MAGIC);
        out.extend_from_slice(&INDEX_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.ids.len() as u64).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for id in &self.ids {
            out.extend_from_slice(&(id.len() as u32).to_le_bytes());
            out.extend_from_slice(id.as_bytes());
        }
        for v in &self.matrix {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.positions {
            None => out.push(0),
            Some(p) => {
                out.push(1);
                for (lat, lon) in p {
                    out.extend_from_slice(&lat.to_le_bytes());
                    out.extend_from_slice(&lon.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(8)? != INDEX_MAGIC {
            return Err(Error::format("not an index file (bad magic)"));
        }
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::format(format!("unsupported index version {version}")));
        }
        let n = usize::try_from(r.u64()?).map_err(|_| Error::format("row count overflow"))?;
        let dim = r.u32()? as usize;
        // every id costs at least four bytes
        if n > bytes.len() / 4 {
            return Err(Error::format("row count exceeds file size"));
        }
        let mut ids = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.u32()? as usize;
            ids.push(
                String::from_utf8(r.take(len)?.to_vec())
                    .map_err(|_| Error::format("id is not utf-8"))?,
            );
        }
        let numel = n
            .checked_mul(dim)
            .ok_or_else(|| Error::format("matrix size overflow"))?;
        let matrix = r.f32s(numel)?;
        let positions = match r.u8()? {
            0 => None,
            1 => {
                let mut p = Vec::with_capacity(n);
                for _ in 0..n {
                    p.push((r.f64()?, r.f64()?));
                }
                Some(p)
            }
            other => return Err(Error::format(format!("bad position flag {other}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::format("trailing bytes after index"));
        }
        Self::from_parts(ids, dim, matrix, positions)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
