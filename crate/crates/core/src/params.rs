//! Learnable parameters, their gradient mirror, initialization and the
//! `QINCKPT1` checkpoint format.
//!
//! Checkpoint layout (all integers little-endian):
//!
//! ```text
//! b"QINCKPT1"
//! u32                       tensor count
//! per tensor:  u16 name length, UTF-8 name, u8 rank, rank × u64 dims
//! per tensor, in table order: product(dims) × f64
//! ```
//!
//! Scalars are rank-0 tensors holding one value.

use std::fs;
use std::io::Write;
use std::ops::{Deref, DerefMut};
use std::path::Path;

use crate::config::{HyperParams, Interaction};
use crate::error::{QinError, Result};
use crate::linalg::{Matrix, SeededRng, Tensor3};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"QINCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QnnLayerParams {
    /// `M × D × D` weight slices.
    pub w: Tensor3,
    /// Channel-shared PReLU negative slope.
    pub slope: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub w: Matrix,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w: Vec<f64>,
    pub b: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Trainable id embedding, `n_items × id_dim`.
    pub id_embedding: Matrix,
    pub attention: AttentionParams,
    pub qnn: Vec<QnnLayerParams>,
    pub mlp: Vec<DenseLayer>,
    pub head: HeadParams,
}

/// What a tensor is, for optimizer scoping and gradient-check reporting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamClass {
    Embedding,
    Query,
    Key,
    Value,
    QnnWeight(usize),
    PreluSlope(usize),
    MlpWeight(usize),
    MlpBias(usize),
    HeadWeight,
    HeadBias,
}

impl ParamClass {
    /// Reporting group; PReLU slopes are pooled and head weight/bias merged.
    pub fn group(self) -> String {
        match self {
            ParamClass::Embedding => "embedding".into(),
            ParamClass::Query => "attention.w_q".into(),
            ParamClass::Key => "attention.w_k".into(),
            ParamClass::Value => "attention.w_v".into(),
            ParamClass::QnnWeight(l) => format!("qnn.{l}.w"),
            ParamClass::PreluSlope(_) => "qnn.prelu_slopes".into(),
            ParamClass::MlpWeight(l) | ParamClass::MlpBias(l) => format!("mlp.{l}"),
            ParamClass::HeadWeight | ParamClass::HeadBias => "head".into(),
        }
    }
}

pub struct Slot<'a> {
    pub name: String,
    pub class: ParamClass,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct SlotMut<'a> {
    pub name: String,
    pub class: ParamClass,
    pub shape: Vec<usize>,
    pub data: &'a mut [f64],
}

impl ModelParams {
    /// All tensors in canonical order (checkpoint order, init order, flat order).
    pub fn slots(&self) -> Vec<Slot<'_>> {
        let mut out = Vec::new();
        let mut push = |name: String, class, shape: Vec<usize>, data| {
            out.push(Slot { name, class, shape, data })
        };
        push("id_embedding".into(), ParamClass::Embedding, self.id_embedding.shape().to_vec(), self.id_embedding.data());
        let a = &self.attention;
        push("attention.w_q".into(), ParamClass::Query, a.w_q.shape().to_vec(), a.w_q.data());
        push("attention.w_k".into(), ParamClass::Key, a.w_k.shape().to_vec(), a.w_k.data());
        push("attention.w_v".into(), ParamClass::Value, a.w_v.shape().to_vec(), a.w_v.data());
        for (l, layer) in self.qnn.iter().enumerate() {
            push(format!("qnn.{l}.w"), ParamClass::QnnWeight(l), layer.w.shape().to_vec(), layer.w.data());
            push(format!("qnn.{l}.slope"), ParamClass::PreluSlope(l), vec![], std::slice::from_ref(&layer.slope));
        }
        for (l, layer) in self.mlp.iter().enumerate() {
            push(format!("mlp.{l}.w"), ParamClass::MlpWeight(l), layer.w.shape().to_vec(), layer.w.data());
            push(format!("mlp.{l}.b"), ParamClass::MlpBias(l), vec![layer.b.len()], &layer.b);
        }
        push("head.w".into(), ParamClass::HeadWeight, vec![self.head.w.len()], &self.head.w);
        push("head.b".into(), ParamClass::HeadBias, vec![], std::slice::from_ref(&self.head.b));
        out
    }

    /// Mutable view; same order and names as [`ModelParams::slots`].
    pub fn slots_mut(&mut self) -> Vec<SlotMut<'_>> {
        let mut out = Vec::new();
        let mut push = |name: String, class, shape: Vec<usize>, data| {
            out.push(SlotMut { name, class, shape, data })
        };
        let shape = self.id_embedding.shape().to_vec();
        push("id_embedding".into(), ParamClass::Embedding, shape, self.id_embedding.data_mut());
        let a = &mut self.attention;
        let shape = a.w_q.shape().to_vec();
        push("attention.w_q".into(), ParamClass::Query, shape, a.w_q.data_mut());
        let shape = a.w_k.shape().to_vec();
        push("attention.w_k".into(), ParamClass::Key, shape, a.w_k.data_mut());
        let shape = a.w_v.shape().to_vec();
        push("attention.w_v".into(), ParamClass::Value, shape, a.w_v.data_mut());
        for (l, layer) in self.qnn.iter_mut().enumerate() {
            let shape = layer.w.shape().to_vec();
            push(format!("qnn.{l}.w"), ParamClass::QnnWeight(l), shape, layer.w.data_mut());
            push(format!("qnn.{l}.slope"), ParamClass::PreluSlope(l), vec![], std::slice::from_mut(&mut layer.slope));
        }
        for (l, layer) in self.mlp.iter_mut().enumerate() {
            let shape = layer.w.shape().to_vec();
            push(format!("mlp.{l}.w"), ParamClass::MlpWeight(l), shape, layer.w.data_mut());
            let shape = vec![layer.b.len()];
            push(format!("mlp.{l}.b"), ParamClass::MlpBias(l), shape, &mut layer.b);
        }
        let shape = vec![self.head.w.len()];
        push("head.w".into(), ParamClass::HeadWeight, shape, &mut self.head.w);
        push("head.b".into(), ParamClass::HeadBias, vec![], std::slice::from_mut(&mut self.head.b));
        out
    }

    /// Zero-valued parameters shaped for `hp`.
    pub fn zeros(hp: &HyperParams) -> Self {
        let d_t = hp.d_t();
        let d_b = hp.d_b();
        let d = hp.d();
        let qnn = match hp.interaction {
            Interaction::Qnn => (0..hp.layers)
                .map(|_| QnnLayerParams {
                    w: Tensor3::zeros(hp.capacity, d, d),
                    slope: 0.0,
                })
                .collect(),
            Interaction::Mlp => Vec::new(),
        };
        let mlp = match hp.interaction {
            Interaction::Qnn => Vec::new(),
            Interaction::Mlp => {
                let mut fan_in = d;
                hp.mlp_dims
                    .iter()
                    .map(|&w| {
                        let layer = DenseLayer {
                            w: Matrix::zeros(w, fan_in),
                            b: vec![0.0; w],
                        };
                        fan_in = w;
                        layer
                    })
                    .collect()
            }
        };
        ModelParams {
            id_embedding: Matrix::zeros(hp.n_items, hp.id_dim),
            attention: AttentionParams {
                w_q: Matrix::zeros(hp.d_a, d_t),
                w_k: Matrix::zeros(hp.d_a, d_b),
                w_v: Matrix::zeros(hp.d_a, d_b),
            },
            qnn,
            mlp,
            head: HeadParams {
                w: vec![0.0; hp.head_dim()],
                b: 0.0,
            },
        }
    }

    pub fn num_values(&self) -> usize {
        self.slots().iter().map(|s| s.data.len()).sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_values());
        for s in self.slots() {
            out.extend_from_slice(s.data);
        }
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        let n = self.num_values();
        if flat.len() != n {
            return Err(QinError::dims("load_flat", &[n], &[flat.len()]));
        }
        let mut offset = 0;
        for s in self.slots_mut() {
            let len = s.data.len();
            s.data.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }

    /// Class of every flat coordinate, aligned with `to_flat`.
    pub fn flat_classes(&self) -> Vec<ParamClass> {
        self.slots()
            .iter()
            .flat_map(|s| std::iter::repeat(s.class).take(s.data.len()))
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.slots().iter().all(|s| s.data.iter().all(|v| v.is_finite()))
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0` and comparing NaN payloads.
    pub fn bit_eq(&self, other: &ModelParams) -> bool {
        let (a, b) = (self.slots(), other.slots());
        a.len() == b.len()
            && a.iter().zip(&b).all(|(x, y)| {
                x.name == y.name
                    && x.shape == y.shape
                    && x.data.iter().zip(y.data).all(|(u, v)| u.to_bits() == v.to_bits())
            })
    }
}

/// Gradient accumulator with exactly the structure of [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(ModelParams);

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let mut g = params.clone();
        g.slots_mut().into_iter().for_each(|s| s.data.fill(0.0));
        Gradients(g)
    }

    pub fn zero(&mut self) {
        self.0.slots_mut().into_iter().for_each(|s| s.data.fill(0.0));
    }

    pub fn into_inner(self) -> ModelParams {
        self.0
    }
}

impl Deref for Gradients {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for Gradients {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

/// Draws every tensor in slot order from `rng`.
///
/// Projections, quadratic slices, MLP and head weights: `Normal(0, 1/fan_in)`
/// (std `fan_in^-1/2`). A quadratic layer sums `M` slices over `D` inputs, so
/// its fan-in is `M·D`. Embeddings: `Normal(0, 0.01²)`. PReLU slopes 0.25;
/// biases 0.
pub fn init_params(hp: &HyperParams, rng: &mut SeededRng) -> Result<ModelParams> {
    hp.validate()?;
    let mut params = ModelParams::zeros(hp);
    let d = hp.d();
    let mlp_fan_in: Vec<usize> = std::iter::once(d).chain(hp.mlp_dims.iter().copied()).collect();
    for s in params.slots_mut() {
        let std = match s.class {
            ParamClass::Embedding => Some(0.01),
            ParamClass::Query | ParamClass::Key | ParamClass::Value => Some(fan_in_std(s.shape[1])),
            ParamClass::QnnWeight(_) => Some(fan_in_std(hp.capacity * d)),
            ParamClass::MlpWeight(l) => Some(fan_in_std(mlp_fan_in[l])),
            ParamClass::HeadWeight => Some(fan_in_std(hp.head_dim())),
            ParamClass::PreluSlope(_) => {
                s.data[0] = 0.25;
                None
            }
            ParamClass::MlpBias(_) | ParamClass::HeadBias => None,
        };
        if let Some(std) = std {
            for v in s.data.iter_mut() {
                *v = rng.normal(0.0, std);
            }
        }
    }
    Ok(params)
}

fn fan_in_std(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let slots = params.slots();
    let mut out = Vec::with_capacity(16 + 8 * params.num_values());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(slots.len() as u32).to_le_bytes());
    for s in &slots {
        out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
        out.extend_from_slice(s.name.as_bytes());
        out.push(s.shape.len() as u8);
        for &d in &s.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
    }
    for s in &slots {
        for v in s.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&checkpoint_bytes(params))?;
    f.sync_all()?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(QinError::Truncated(format!(
                "checkpoint ends at byte {} while reading {what}",
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parses a checkpoint and checks its shape table against `hp`.
pub fn read_checkpoint(bytes: &[u8], hp: &HyperParams) -> Result<ModelParams> {
    if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(QinError::BadMagic {
            expected: "QINCKPT1",
            found: bytes[..bytes.len().min(8)].to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: 8 };
    let count = r.u32("tensor count")? as usize;
    let mut table = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let len = r.u16("tensor name length")? as usize;
        let name = String::from_utf8_lossy(r.take(len, "tensor name")?).into_owned();
        let rank = r.u8("tensor rank")? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(r.u64("tensor dim")? as usize);
        }
        table.push((name, dims));
    }

    let mut params = ModelParams::zeros(hp);
    {
        let expected = params.slots();
        if expected.len() != table.len() {
            let (name, found) = table
                .iter()
                .zip(&expected)
                .find(|((n, _), e)| *n != e.name)
                .map(|((n, d), _)| (n.clone(), d.clone()))
                .unwrap_or_else(|| ("<tensor count>".into(), vec![table.len()]));
            let want = expected
                .iter()
                .find(|e| e.name == name)
                .map(|e| e.shape.clone())
                .unwrap_or_else(|| vec![expected.len()]);
            return Err(QinError::ShapeMismatch {
                name,
                found,
                expected: want,
            });
        }
        for ((name, dims), e) in table.iter().zip(&expected) {
            if *name != e.name || *dims != e.shape {
                return Err(QinError::ShapeMismatch {
                    name: name.clone(),
                    found: dims.clone(),
                    expected: e.shape.clone(),
                });
            }
        }
    }
    for s in params.slots_mut() {
        for v in s.data.iter_mut() {
            *v = f64::from_le_bytes(r.take(8, &s.name)?.try_into().unwrap());
        }
    }
    if r.pos != bytes.len() {
        return Err(QinError::Truncated(format!(
            "{} trailing bytes after tensor data",
            bytes.len() - r.pos
        )));
    }
    Ok(params)
}

pub fn load_checkpoint(path: impl AsRef<Path>, hp: &HyperParams) -> Result<ModelParams> {
    read_checkpoint(&fs::read(path)?, hp)
}
