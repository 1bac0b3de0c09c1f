//! Synthetic CTR data with a known quadratic click model, the line-delimited
//! dataset format, and the mini-batch loader.
//!
//! Click model per sample, with `u` the mean frozen embedding of the behavior
//! sequence and `e_t` the target's frozen embedding:
//!
//! ```text
//! s     = u·e_t
//! z     = (s − mean(s)) / std(s)        over all generated samples
//! logit = bias + α₁·z + α₂·z² + N(0, noise_std²)
//! label ~ Bernoulli(sigmoid(logit))
//! ```
//!
//! The truth files hold `sigmoid(logit)` per sample.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::embedding::{Batch, EmbeddingStore, Sample};
use crate::error::{QinError, Result};
use crate::linalg::{dot, sigmoid, Matrix, SeededRng};
use crate::metrics::auc;

pub const EMBEDDING_FILE: &str = "items.emb";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const VALID_FILE: &str = "valid.jsonl";
pub const TRAIN_TRUTH_FILE: &str = "train.truth";
pub const VALID_TRUTH_FILE: &str = "valid.truth";

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub n_items: usize,
    pub n_users: usize,
    pub n_samples: usize,
    pub emb_dim: usize,
    pub max_seq_len: usize,
    /// Sequence lengths are uniform in `min_seq_len..=max_seq_len`.
    pub min_seq_len: usize,
    /// α₂, weight of the squared standardized score.
    pub quad_strength: f64,
    /// α₁, weight of the standardized score.
    pub linear_strength: f64,
    /// Intercept of the click logit; sets the base click rate.
    pub bias: f64,
    pub noise_std: f64,
    /// Softmax temperature for sampling a user's behavior items.
    pub temperature: f64,
    pub seed: u64,
    pub train_fraction: f64,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_items: 500,
            n_users: 200,
            n_samples: 50_000,
            emb_dim: 8,
            max_seq_len: 32,
            min_seq_len: 24,
            quad_strength: 4.0,
            linear_strength: 0.0,
            bias: -5.0,
            noise_std: 0.1,
            temperature: 0.1,
            seed: 7,
            train_fraction: 0.8,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(QinError::Config(m));
        for (name, v) in [("n_items", self.n_items), ("n_users", self.n_users), ("emb_dim", self.emb_dim), ("max_seq_len", self.max_seq_len)] {
            if v == 0 {
                return fail(format!("{name} must be ≥ 1"));
            }
        }
        if self.n_items < self.max_seq_len {
            return fail(format!("n_items ({}) must be ≥ max_seq_len ({})", self.n_items, self.max_seq_len));
        }
        if self.min_seq_len == 0 || self.min_seq_len > self.max_seq_len {
            return fail(format!("min_seq_len must be in 1..={}, got {}", self.max_seq_len, self.min_seq_len));
        }
        for (name, v) in [("quad_strength", self.quad_strength), ("linear_strength", self.linear_strength), ("bias", self.bias)] {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std must be finite and ≥ 0, got {}", self.noise_std));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail(format!("temperature must be > 0, got {}", self.temperature));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return fail(format!("train_fraction must be in (0, 1), got {}", self.train_fraction));
        }
        Ok(())
    }

    pub fn n_train(&self) -> usize {
        (self.n_samples as f64 * self.train_fraction).floor() as usize
    }
}

/// Header line of a dataset file, written as `# n_samples=<k> positives=<k> seed=<k>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Manifest {
    pub n_samples: usize,
    pub positives: usize,
    pub seed: u64,
}

impl Manifest {
    pub fn of(samples: &[Sample], seed: u64) -> Self {
        Manifest {
            n_samples: samples.len(),
            positives: samples.iter().filter(|s| s.label != 0).count(),
            seed,
        }
    }
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n_samples={} positives={} seed={}", self.n_samples, self.positives, self.seed)
    }
}

impl FromStr for Manifest {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (mut n, mut p, mut seed) = (None, None, None);
        for field in s.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(|| format!("bad manifest field {field:?}"))?;
            let bad = |_| format!("bad manifest value {field:?}");
            match k {
                "n_samples" => n = Some(v.parse().map_err(bad)?),
                "positives" => p = Some(v.parse().map_err(bad)?),
                "seed" => seed = Some(v.parse().map_err(bad)?),
                _ => return Err(format!("unknown manifest key {k:?}")),
            }
        }
        match (n, p, seed) {
            (Some(n_samples), Some(positives), Some(seed)) => Ok(Manifest { n_samples, positives, seed }),
            _ => Err("manifest needs n_samples, positives and seed".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Generated {
    pub store: EmbeddingStore,
    pub train: Vec<Sample>,
    pub valid: Vec<Sample>,
    pub train_truth: Vec<f64>,
    pub valid_truth: Vec<f64>,
}

/// Draws an index from the categorical distribution with cumulative weights `cdf`.
fn sample_categorical(cdf: &[f64], rng: &mut SeededRng) -> usize {
    let total = cdf[cdf.len() - 1];
    let u = rng.uniform() * total;
    cdf.partition_point(|&c| c <= u).min(cdf.len() - 1)
}

/// `u·e_t` with `u` the mean frozen embedding of the sequence; 0 for an empty sequence.
pub fn interest_score(store: &EmbeddingStore, sample: &Sample) -> Result<f64> {
    if sample.seq_ids.is_empty() {
        return Ok(0.0);
    }
    let mut u = vec![0.0; store.dim()];
    for &id in &sample.seq_ids {
        u.iter_mut().zip(store.row(id)?).for_each(|(a, b)| *a += b);
    }
    let n = sample.seq_ids.len() as f64;
    u.iter_mut().for_each(|a| *a /= n);
    Ok(dot(&u, store.row(sample.target_id)?))
}

pub fn generate(cfg: &GenConfig) -> Result<Generated> {
    cfg.validate()?;
    let mut rng = SeededRng::new(cfg.seed);
    let k = cfg.emb_dim;
    let scale = 1.0 / (k as f64).sqrt();

    // Stored as f32 on disk; round now so every score below matches the file.
    let items: Vec<f64> = (0..cfg.n_items * k).map(|_| rng.normal(0.0, scale) as f32 as f64).collect();
    let store = EmbeddingStore::new(Matrix::from_vec(cfg.n_items, k, items)?)?;
    let users: Vec<Vec<f64>> = (0..cfg.n_users)
        .map(|_| (0..k).map(|_| rng.normal(0.0, scale)).collect())
        .collect();

    let cdfs: Vec<Vec<f64>> = users
        .iter()
        .map(|z| {
            let logits: Vec<f64> = (0..cfg.n_items)
                .map(|i| dot(z, store.matrix().row(i)) / cfg.temperature)
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut acc = 0.0;
            logits
                .iter()
                .map(|l| {
                    acc += (l - max).exp();
                    acc
                })
                .collect()
        })
        .collect();

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut noise = Vec::with_capacity(cfg.n_samples);
    let len_span = cfg.max_seq_len - cfg.min_seq_len + 1;
    for _ in 0..cfg.n_samples {
        let user = rng.below(cfg.n_users);
        let len = cfg.min_seq_len + rng.below(len_span);
        let seq_ids = (0..len).map(|_| sample_categorical(&cdfs[user], &mut rng)).collect();
        let target_id = rng.below(cfg.n_items);
        noise.push(rng.normal(0.0, cfg.noise_std));
        samples.push(Sample { target_id, seq_ids, label: 0 });
    }

    let scores = samples.iter().map(|s| interest_score(&store, s)).collect::<Result<Vec<_>>>()?;
    let n = scores.len().max(1) as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = if var > 0.0 { var.sqrt() } else { 1.0 };

    let mut truth = Vec::with_capacity(samples.len());
    for ((sample, s), eps) in samples.iter_mut().zip(&scores).zip(&noise) {
        let z = (s - mean) / std;
        let p = sigmoid(cfg.bias + cfg.linear_strength * z + cfg.quad_strength * z * z + eps);
        sample.label = rng.bernoulli(p) as u8;
        truth.push(p);
    }

    let n_train = cfg.n_train();
    let valid = samples.split_off(n_train);
    let valid_truth = truth.split_off(n_train);
    Ok(Generated { store, train: samples, valid, train_truth: truth, valid_truth })
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    target: usize,
    seq: Vec<usize>,
    label: u8,
}

pub fn write_dataset(path: impl AsRef<Path>, samples: &[Sample], seed: u64) -> Result<Manifest> {
    let manifest = Manifest::of(samples, seed);
    let mut w = BufWriter::new(fs::File::create(path)?);
    writeln!(w, "# {manifest}")?;
    for s in samples {
        let rec = Record { target: s.target_id, seq: s.seq_ids.clone(), label: s.label };
        serde_json::to_writer(&mut w, &rec).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(manifest)
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub manifest: Option<Manifest>,
}

impl Dataset {
    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }
}

/// Parses a dataset file and bounds-checks every id against `store`.
///
/// `#` lines are comments; the first one may carry the manifest. Blank lines are skipped.
pub fn load_dataset(path: impl AsRef<Path>, store: &EmbeddingStore, max_seq_len: usize) -> Result<Dataset> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut samples = Vec::new();
    let mut manifest = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            if manifest.is_none() && samples.is_empty() {
                manifest = Some(comment.parse().map_err(|msg| QinError::Malformed { line: line_no, msg })?);
            }
            continue;
        }
        let rec: Record = serde_json::from_str(trimmed).map_err(|e| QinError::Malformed { line: line_no, msg: e.to_string() })?;
        if rec.label > 1 {
            return Err(QinError::Malformed { line: line_no, msg: format!("label must be 0 or 1, got {}", rec.label) });
        }
        if rec.seq.len() > max_seq_len {
            return Err(QinError::Malformed {
                line: line_no,
                msg: format!("sequence length {} exceeds {max_seq_len}", rec.seq.len()),
            });
        }
        for &id in std::iter::once(&rec.target).chain(&rec.seq) {
            if id >= store.count() {
                return Err(QinError::IdOutOfRange { id, count: store.count(), line: Some(line_no) });
            }
        }
        samples.push(Sample { target_id: rec.target, seq_ids: rec.seq, label: rec.label });
    }
    Ok(Dataset { samples, manifest })
}

/// One probability per line, printed with shortest round-trip formatting.
pub fn write_truth(path: impl AsRef<Path>, probs: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for p in probs {
        writeln!(w, "{p}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse::<f64>()
                .map_err(|e| QinError::Malformed { line: i + 1, msg: e.to_string() })
        })
        .collect()
}

/// Writes the five files of a generated dataset into `dir` and returns the
/// train and valid manifests.
pub fn write_generated(dir: impl AsRef<Path>, data: &Generated, seed: u64) -> Result<(Manifest, Manifest)> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    data.store.save(dir.join(EMBEDDING_FILE))?;
    let train = write_dataset(dir.join(TRAIN_FILE), &data.train, seed)?;
    let valid = write_dataset(dir.join(VALID_FILE), &data.valid, seed)?;
    write_truth(dir.join(TRAIN_TRUTH_FILE), &data.train_truth)?;
    write_truth(dir.join(VALID_TRUTH_FILE), &data.valid_truth)?;
    Ok((train, valid))
}

/// Store plus both splits, read back from a directory written by [`write_generated`].
#[derive(Debug, Clone)]
pub struct DataDir {
    pub store: EmbeddingStore,
    pub train: Dataset,
    pub valid: Dataset,
}

pub fn load_data_dir(dir: impl AsRef<Path>, max_seq_len: usize) -> Result<DataDir> {
    let dir = dir.as_ref();
    let store = EmbeddingStore::load(dir.join(EMBEDDING_FILE))?;
    let train = load_dataset(dir.join(TRAIN_FILE), &store, max_seq_len)?;
    let valid = load_dataset(dir.join(VALID_FILE), &store, max_seq_len)?;
    Ok(DataDir { store, train, valid })
}

/// Shuffles a copy of `samples` with `rng` and cuts it into batches; the last
/// batch may be short.
pub fn make_batches(samples: &[Sample], batch_size: usize, max_len: usize, rng: &mut SeededRng) -> Result<Vec<Batch>> {
    if batch_size == 0 {
        return Err(QinError::Config("batch_size must be ≥ 1".into()));
    }
    let mut order: Vec<usize> = (0..samples.len()).collect();
    rng.shuffle(&mut order);
    order
        .chunks(batch_size)
        .map(|chunk| Batch::new(chunk.iter().map(|&i| samples[i].clone()).collect(), max_len))
        .collect()
}

/// One-feature logistic regression `sigmoid(w·x + b)` fitted by Newton's method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogisticFit {
    pub w: f64,
    pub b: f64,
}

impl LogisticFit {
    pub fn fit(x: &[f64], y: &[u8]) -> Self {
        let (mut w, mut b) = (0.0, 0.0);
        for _ in 0..50 {
            let (mut gw, mut gb, mut hww, mut hwb, mut hbb) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (&xi, &yi) in x.iter().zip(y) {
                let p = sigmoid(w * xi + b);
                let r = p - yi as f64;
                let s = (p * (1.0 - p)).max(1e-12);
                gw += r * xi;
                gb += r;
                hww += s * xi * xi;
                hwb += s * xi;
                hbb += s;
            }
            let det = hww * hbb - hwb * hwb;
            if det.abs() < 1e-300 {
                break;
            }
            let dw = (hbb * gw - hwb * gb) / det;
            let db = (hww * gb - hwb * gw) / det;
            w -= dw;
            b -= db;
            if dw.abs() < 1e-12 && db.abs() < 1e-12 {
                break;
            }
        }
        LogisticFit { w, b }
    }

    pub fn predict(&self, x: f64) -> f64 {
        sigmoid(self.w * x + self.b)
    }
}

/// Valid AUC of the best linear scorer on `u·e_t`, fitted on the train split.
pub fn linear_baseline_auc(store: &EmbeddingStore, train: &[Sample], valid: &[Sample]) -> Result<f64> {
    let feature = |set: &[Sample]| set.iter().map(|s| interest_score(store, s)).collect::<Result<Vec<f64>>>();
    let x_train = feature(train)?;
    let y_train: Vec<u8> = train.iter().map(|s| s.label).collect();
    let fit = LogisticFit::fit(&x_train, &y_train);
    let probs: Vec<f64> = feature(valid)?.into_iter().map(|x| fit.predict(x)).collect();
    let labels: Vec<u8> = valid.iter().map(|s| s.label).collect();
    auc(&probs, &labels)
}

/// AUC obtained by scoring with the ground-truth probabilities.
pub fn bayes_auc(truth: &[f64], samples: &[Sample]) -> Result<f64> {
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    auc(truth, &labels)
}
