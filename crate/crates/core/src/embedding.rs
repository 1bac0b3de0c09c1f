//! Item lookups: a frozen pretrained store concatenated with the trainable id
//! table, plus the padded/masked batch layout and the `QINEMB1` file format.
//!
//! `QINEMB1` layout: the 7 magic bytes `QINEMB1`, `count: u32 LE`,
//! `dim: u32 LE`, then `count × dim` little-endian `f32` values, row-major.
//! Values are widened to `f64` on load.

use std::fs;
use std::path::Path;

use crate::error::{QinError, Result};
use crate::linalg::Matrix;

pub const EMBEDDING_MAGIC: &[u8; 7] = b"QINEMB1";

/// Frozen item-embedding matrix; never receives gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    data: Matrix,
}

impl EmbeddingStore {
    pub fn new(data: Matrix) -> Result<Self> {
        if !data.is_finite() {
            return Err(QinError::Config("embedding store contains non-finite values".into()));
        }
        Ok(EmbeddingStore { data })
    }

    pub fn count(&self) -> usize {
        self.data.rows()
    }

    pub fn dim(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.data
    }

    pub fn row(&self, id: usize) -> Result<&[f64]> {
        if id >= self.count() {
            return Err(QinError::IdOutOfRange {
                id,
                count: self.count(),
                line: None,
            });
        }
        Ok(self.data.row(id))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(15 + 4 * self.data.data().len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim() as u32).to_le_bytes());
        for &v in self.data.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 7 || &bytes[..7] != EMBEDDING_MAGIC {
            return Err(QinError::BadMagic {
                expected: "QINEMB1",
                found: bytes[..bytes.len().min(7)].to_vec(),
            });
        }
        if bytes.len() < 15 {
            return Err(QinError::Truncated("embedding header".into()));
        }
        let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let dim = u32::from_le_bytes(bytes[11..15].try_into().unwrap()) as usize;
        let body = &bytes[15..];
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| QinError::Truncated("embedding size overflows".into()))?;
        if body.len() != expected {
            return Err(QinError::Truncated(format!(
                "embedding body has {} bytes, header implies {expected}",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        EmbeddingStore::new(Matrix::from_vec(count, dim, data)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        EmbeddingStore::from_bytes(&fs::read(path)?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub target_id: usize,
    /// Real (non-pad) behavior ids, oldest first.
    pub seq_ids: Vec<usize>,
    pub label: u8,
}

impl Sample {
    pub fn seq_len(&self) -> usize {
        self.seq_ids.len()
    }
}

/// Left-aligned padded id matrix with its mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub samples: Vec<Sample>,
    pub max_len: usize,
    /// `N × S`, padded with id 0.
    pub ids: Vec<usize>,
    /// `N × S`, 1 for real positions.
    pub mask: Vec<u8>,
}

impl Batch {
    pub fn new(samples: Vec<Sample>, max_len: usize) -> Result<Self> {
        let n = samples.len();
        let mut ids = vec![0; n * max_len];
        let mut mask = vec![0; n * max_len];
        for (i, s) in samples.iter().enumerate() {
            if s.seq_len() > max_len {
                return Err(QinError::Config(format!(
                    "sequence of length {} exceeds max_len {max_len}",
                    s.seq_len()
                )));
            }
            for (j, &id) in s.seq_ids.iter().enumerate() {
                ids[i * max_len + j] = id;
                mask[i * max_len + j] = 1;
            }
        }
        Ok(Batch {
            samples,
            max_len,
            ids,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn mask_row(&self, i: usize) -> &[u8] {
        &self.mask[i * self.max_len..(i + 1) * self.max_len]
    }
}

/// Frozen store + trainable id table, as seen by the forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ItemEmbeddings<'a> {
    pub store: &'a EmbeddingStore,
    pub id_table: &'a Matrix,
}

impl<'a> ItemEmbeddings<'a> {
    pub fn new(store: &'a EmbeddingStore, id_table: &'a Matrix) -> Result<Self> {
        if store.count() != id_table.rows() {
            return Err(QinError::Config(format!(
                "embedding store has {} items but id table has {} rows",
                store.count(),
                id_table.rows()
            )));
        }
        Ok(ItemEmbeddings { store, id_table })
    }

    pub fn dim(&self) -> usize {
        self.store.dim() + self.id_table.cols()
    }

    /// `concat(frozen_row, trainable_row)` written into `out`.
    pub fn write_row(&self, id: usize, out: &mut [f64]) -> Result<()> {
        let frozen = self.store.row(id)?;
        let f = frozen.len();
        out[..f].copy_from_slice(frozen);
        out[f..].copy_from_slice(self.id_table.row(id));
        Ok(())
    }
}

/// `x_t` for one sample; fails if the tables do not add up to `d_t`.
pub fn lookup_target(items: &ItemEmbeddings<'_>, target_id: usize, d_t: usize) -> Result<Vec<f64>> {
    if items.dim() != d_t {
        return Err(QinError::Config(format!(
            "d_t = {d_t} but store ({}) + id table ({}) give {}",
            items.store.dim(),
            items.id_table.cols(),
            items.dim()
        )));
    }
    let mut out = vec![0.0; d_t];
    items.write_row(target_id, &mut out)?;
    Ok(out)
}

/// `x_b` for one sample as an `S × d_b` matrix; padded rows stay zero.
pub fn lookup_sample_sequence(items: &ItemEmbeddings<'_>, seq_ids: &[usize], max_len: usize) -> Result<Matrix> {
    if seq_ids.len() > max_len {
        return Err(QinError::dims("lookup_sequence", &[max_len], &[seq_ids.len()]));
    }
    let mut x_b = Matrix::zeros(max_len, items.dim());
    for (s, &id) in seq_ids.iter().enumerate() {
        items.write_row(id, x_b.row_mut(s))?;
    }
    Ok(x_b)
}

/// `x_b` for a whole batch: `N × S × d_b` flattened, plus the mask.
pub fn lookup_sequence(items: &ItemEmbeddings<'_>, batch: &Batch) -> Result<(Vec<f64>, Vec<u8>)> {
    let d = items.dim();
    let s_max = batch.max_len;
    let mut out = vec![0.0; batch.len() * s_max * d];
    for (i, sample) in batch.samples.iter().enumerate() {
        let x_b = lookup_sample_sequence(items, &sample.seq_ids, s_max)?;
        out[i * s_max * d..(i + 1) * s_max * d].copy_from_slice(x_b.data());
    }
    Ok((out, batch.mask.clone()))
}

/// Scatter-adds the trainable part of one upstream row into `id_grad`.
/// The frozen prefix of `upstream` is dropped.
pub fn accumulate_id_grad(id_grad: &mut Matrix, frozen_dim: usize, id: usize, upstream: &[f64]) {
    let row = id_grad.row_mut(id);
    for (g, u) in row.iter_mut().zip(&upstream[frozen_dim..]) {
        *g += u;
    }
}

/// Backward of [`lookup_sequence`] and [`lookup_target`] for a batch.
///
/// `upstream_seq` is `N × S × d_b`, `upstream_target` is `N × d_t`. Masked
/// positions are skipped.
pub fn embedding_grad_accumulate(
    id_grad: &mut Matrix,
    frozen_dim: usize,
    batch: &Batch,
    upstream_seq: &[f64],
    upstream_target: &[f64],
) -> Result<()> {
    let d = frozen_dim + id_grad.cols();
    let n = batch.len();
    let s_max = batch.max_len;
    if upstream_seq.len() != n * s_max * d {
        return Err(QinError::dims("embedding_grad_accumulate", &[n, s_max, d], &[upstream_seq.len()]));
    }
    if upstream_target.len() != n * d {
        return Err(QinError::dims("embedding_grad_accumulate", &[n, d], &[upstream_target.len()]));
    }
    for (i, sample) in batch.samples.iter().enumerate() {
        accumulate_id_grad(id_grad, frozen_dim, sample.target_id, &upstream_target[i * d..(i + 1) * d]);
        for (s, &id) in sample.seq_ids.iter().enumerate() {
            let off = (i * s_max + s) * d;
            accumulate_id_grad(id_grad, frozen_dim, id, &upstream_seq[off..off + d]);
        }
    }
    Ok(())
}
