//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed. Tolerances are pinned as constants below.

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use qin_cli::config::RunConfig;
use qin_core::ablation::{median, run_variant, Variant};
use qin_core::asta::{asta_forward, AttentionConfig};
use qin_core::datagen::{load_data_dir, load_dataset, read_truth, EMBEDDING_FILE, TRAIN_FILE, VALID_FILE, VALID_TRUTH_FILE};
use qin_core::gradcheck::ModelCheck;
use qin_core::linalg::{rng_normal, sigmoid};
use qin_core::metrics::{auc, auc_bruteforce};
use qin_core::params::{checkpoint_bytes, init_params, load_checkpoint, read_checkpoint, save_checkpoint, ParamClass};
use qin_core::qnn::{brute_force_expansion, qnn_layer_forward, QnnSettings};
use qin_core::{AttnKind, EmbeddingStore, HyperParams, Matrix, QinError, SeededRng, Tensor3};
use qin_core::params::{AttentionParams, QnnLayerParams};

const GRAD_TOL: f64 = 1e-4;
const GRAD_SEEDS: u64 = 5;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_TOL: f64 = 1e-12;
const ORACLE_INSTANCES: usize = 100;
const SOFTMAX_SUM_TOL: f64 = 1e-9;
const SPARSITY_BAND: (f64, f64) = (0.2, 0.8);
const SPARSITY_TRIALS: usize = 1000;
const AUC_INSTANCES: usize = 100;
const AUC_MAX_N: usize = 1000;
const E2E_MIN_AUC: f64 = 0.90;
const E2E_MAX_EPOCHS: usize = 10;
const E2E_BUDGET: Duration = Duration::from_secs(300);
const LINEAR_GAP: f64 = 0.05;
const BAYES_SLACK: f64 = 0.01;
const ABLATION_SEEDS: [u64; 3] = [7, 8, 9];

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn qin(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qin")).args(args).output().expect("spawn qin")
}

fn run_ok(args: &[&str]) -> Result<String, String> {
    let o = qin(args);
    if o.status.code() != Some(0) {
        return Err(format!("`qin {}` exited {:?}: {}", args.join(" "), o.status.code(), String::from_utf8_lossy(&o.stderr)));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn field(text: &str, key: &str) -> Result<f64, String> {
    text.split_whitespace()
        .find_map(|kv| kv.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
        .ok_or_else(|| format!("no `{key}` in {text:?}"))?
        .parse()
        .map_err(|e| format!("`{key}`: {e}"))
}

fn gradient_certification() -> Verdict {
    let hp = ModelCheck::desk().hp;
    ensure(
        (hp.d_t(), hp.seq_len, hp.layers, hp.capacity) == (16, 8, 2, 2),
        format!("gradcheck instance is not desk-sized: {hp:?}"),
    )?;
    let start = Instant::now();
    let seeds = GRAD_SEEDS.to_string();
    let out = qin(&["gradcheck", "--seeds", &seeds]);
    let elapsed = start.elapsed();
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let groups: Vec<&str> = text.lines().filter(|l| l.starts_with("group=")).collect();
    let mut worst = 0.0f64;
    for g in &groups {
        let err = field(g, "max_rel_err")?;
        ensure(err < GRAD_TOL && g.contains("status=ok"), format!("{g}"))?;
        worst = worst.max(err);
    }
    for want in ["attention.w_q", "attention.w_k", "attention.w_v", "embedding", "qnn.0.w", "qnn.1.w", "qnn.prelu_slopes", "head"] {
        ensure(groups.iter().any(|g| g.starts_with(&format!("group={want} "))), format!("group {want} not reported"))?;
    }
    ensure(out.status.code() == Some(0), format!("exit {:?}", out.status.code()))?;
    ensure(elapsed < GRAD_BUDGET, format!("took {elapsed:?}"))?;
    Ok(format!("{} groups, worst rel err {worst:.2e} < {GRAD_TOL:e} over {GRAD_SEEDS} seeds in {:.1}s", groups.len(), elapsed.as_secs_f64()))
}

/// Integer expansion of one bare layer: `H[i] = Σ_{j,k} c_ijk x_j x_k`.
fn integer_layer(w: &[i64], m: usize, d: usize, x: &[i64]) -> Vec<i64> {
    (0..d)
        .map(|i| {
            let mut h = 0;
            for j in 0..d {
                for k in 0..d {
                    if j == i {
                        h += (0..m).map(|s| w[(s * d + i) * d + k]).sum::<i64>() * x[j] * x[k];
                    }
                }
            }
            h
        })
        .collect()
}

fn qnn_oracle() -> Verdict {
    let mut rng = SeededRng::new(2024);
    let mut worst = 0.0f64;
    let prelu = QnnSettings { dropout_p: 0.0, ..QnnSettings::from_hp(&HyperParams::desk(1, 1)) };
    for i in 0..ORACLE_INSTANCES {
        let (m, d) = (1 + rng.below(3), 1 + rng.below(5));
        let layer = QnnLayerParams { w: Tensor3::from_vec(m, d, d, rng_normal(&mut rng, m * d * d, 0.0, 1.0)).unwrap(), slope: rng.uniform() };
        let x = rng_normal(&mut rng, d, 0.0, 1.0);
        let settings = QnnSettings { residual: i % 2 == 0, ..prelu };
        let (y, _) = qnn_layer_forward(&layer, &settings, &x, None).map_err(|e| e.to_string())?;
        let oracle = brute_force_expansion(&layer, &settings, &x).map_err(|e| e.to_string())?;
        for (a, b) in y.iter().zip(&oracle) {
            worst = worst.max((a - b).abs());
        }
    }
    ensure(worst < ORACLE_TOL, format!("max |layer - expansion| = {worst:e}"))?;

    let mut points = 0;
    for (m, d) in [(1, 2), (2, 3), (3, 4)] {
        let w: Vec<i64> = (0..m * d * d).map(|_| rng.below(7) as i64 - 3).collect();
        let layer = QnnLayerParams { w: Tensor3::from_vec(m, d, d, w.iter().map(|&v| v as f64).collect()).unwrap(), slope: 0.25 };
        for code in 0..5usize.pow(d as u32) {
            let x: Vec<i64> = (0..d).map(|p| (code / 5usize.pow(p as u32) % 5) as i64 - 2).collect();
            let xf: Vec<f64> = x.iter().map(|&v| v as f64).collect();
            let (y, _) = qnn_layer_forward(&layer, &QnnSettings::bare(), &xf, None).map_err(|e| e.to_string())?;
            let want: Vec<f64> = integer_layer(&w, m, d, &x).into_iter().map(|v| v as f64).collect();
            ensure(y == want, format!("integer input {x:?}: {y:?} vs {want:?}"))?;
            points += 1;
        }
    }
    Ok(format!("{ORACLE_INSTANCES} random layers within {worst:.1e} < {ORACLE_TOL:e}; {points} integer inputs exact"))
}

fn attention_contracts() -> Verdict {
    let mut rng = SeededRng::new(99);
    let mat = |rng: &mut SeededRng, r: usize, c: usize| Matrix::from_vec(r, c, rng_normal(rng, r * c, 0.0, 1.0)).unwrap();

    // Softmax normalization and masked-position invariance on random instances.
    let mut worst_sum = 0.0f64;
    for trial in 0..200 {
        let (d, s) = (1 + rng.below(6), 1 + rng.below(12));
        let len = rng.below(s + 1);
        let mask: Vec<u8> = (0..s).map(|i| (i < len) as u8).collect();
        let p = AttentionParams { w_q: mat(&mut rng, d, d), w_k: mat(&mut rng, d, d), w_v: mat(&mut rng, d, d) };
        let x_t = rng_normal(&mut rng, d, 0.0, 1.0);
        let x_b = mat(&mut rng, s, d);
        let kind = AttnKind::ALL[trial % AttnKind::ALL.len()];
        let cfg = AttentionConfig::new(kind, d, d, d, s);
        let (o, t) = asta_forward(&p, &cfg, &x_t, &x_b, &mask, None).map_err(|e| e.to_string())?;
        if kind == AttnKind::Softmax && len > 0 {
            worst_sum = worst_sum.max((t.weights.iter().sum::<f64>() - 1.0).abs());
        }
        ensure(t.weights[len..].iter().all(|&w| w == 0.0), "masked weight non-zero")?;
        let mut noisy = x_b.clone();
        for r in len..s {
            noisy.row_mut(r).iter_mut().for_each(|v| *v = rng.normal(0.0, 1e3));
        }
        let (o2, _) = asta_forward(&p, &cfg, &x_t, &noisy, &mask, None).map_err(|e| e.to_string())?;
        ensure(o.iter().zip(&o2).all(|(a, b)| a.to_bits() == b.to_bits()), format!("{kind}: masked content changed o"))?;
    }
    ensure(worst_sum <= SOFTMAX_SUM_TOL, format!("softmax sum off by {worst_sum:e}"))?;

    // Sparsity of relu weights with standard-normal queries and keys.
    let (d, s) = (16, 64);
    let eye = AttentionParams { w_q: Matrix::identity(d), w_k: Matrix::identity(d), w_v: Matrix::identity(d) };
    let cfg = AttentionConfig::new(AttnKind::Relu, d, d, d, s);
    let (mut zeros, mut negative) = (0usize, 0usize);
    for _ in 0..SPARSITY_TRIALS {
        let x_t = rng_normal(&mut rng, d, 0.0, 1.0);
        let x_b = mat(&mut rng, s, d);
        let (_, t) = asta_forward(&eye, &cfg, &x_t, &x_b, &[1; 64], None).map_err(|e| e.to_string())?;
        zeros += t.weights.iter().filter(|&&w| w == 0.0).count();
        negative += t.weights.iter().filter(|&&w| w < 0.0).count();
    }
    let frac = zeros as f64 / (SPARSITY_TRIALS * s) as f64;
    ensure(negative == 0, "negative relu weight")?;
    ensure((SPARSITY_BAND.0..=SPARSITY_BAND.1).contains(&frac), format!("zero fraction {frac}"))?;

    // All scores negative: exactly the residual.
    let one = |v: f64| Matrix::from_vec(1, 1, vec![v]).unwrap();
    let p = AttentionParams { w_q: one(1.0), w_k: one(1.0), w_v: one(1.0) };
    let x_t = [0.75];
    let x_b = Matrix::from_vec(3, 1, vec![-1.0, -2.5, -0.1]).unwrap();
    let (o, _) = asta_forward(&p, &AttentionConfig::new(AttnKind::Relu, 1, 1, 1, 3), &x_t, &x_b, &[1, 1, 1], None).map_err(|e| e.to_string())?;
    ensure(o[0].to_bits() == x_t[0].to_bits(), format!("all-negative case gave {o:?}"))?;

    Ok(format!("softmax sum err {worst_sum:.1e} <= {SOFTMAX_SUM_TOL:e}; relu zero fraction {frac:.3} in {SPARSITY_BAND:?}; masking exact; residual exact"))
}

fn pairwise_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0u64, 0u64);
    for (i, &p) in scores.iter().enumerate() {
        for (j, &q) in scores.iter().enumerate() {
            if labels[i] == 1 && labels[j] == 0 {
                pairs += 2;
                wins += if p > q { 2 } else if p == q { 1 } else { 0 };
            }
        }
    }
    wins as f64 / pairs as f64
}

fn auc_oracle() -> Verdict {
    let mut rng = SeededRng::new(5);
    for i in 0..AUC_INSTANCES {
        let n = 2 + rng.below(AUC_MAX_N - 1);
        // A coarse grid guarantees ties.
        let levels = 1 + rng.below(40);
        let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / 8.0 - 2.0).collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.bernoulli(0.4) as u8).collect();
        labels[0] = 1;
        labels[1] = 0;
        let fast = auc(&scores, &labels).map_err(|e| e.to_string())?;
        let brute = auc_bruteforce(&scores, &labels).map_err(|e| e.to_string())?;
        let ours = pairwise_auc(&scores, &labels);
        ensure(fast.to_bits() == brute.to_bits() && fast.to_bits() == ours.to_bits(), format!("instance {i}: {fast} {brute} {ours}"))?;
        for (name, map) in [("2x+1", (|x: f64| 2.0 * x + 1.0) as fn(f64) -> f64), ("sigmoid", sigmoid)] {
            let mapped: Vec<f64> = scores.iter().map(|&s| map(s)).collect();
            let a = auc(&mapped, &labels).map_err(|e| e.to_string())?;
            ensure(a.to_bits() == fast.to_bits(), format!("instance {i}: {name} changed AUC"))?;
        }
    }
    Ok(format!("{AUC_INSTANCES} tied instances (N <= {AUC_MAX_N}) bit-equal to two pairwise oracles; monotone maps bit-exact"))
}

/// Generates the default dataset once; shared by the learning criteria.
fn default_data(dir: &Path) -> Result<(f64, f64), String> {
    let out = run_ok(&["gen-data", "--seed", "7", "--out", dir.to_str().unwrap()])?;
    let line = out.lines().find(|l| l.starts_with("bayes_auc=")).ok_or("no baseline line")?;
    Ok((field(line, "bayes_auc")?, field(line, "linear_auc")?))
}

fn end_to_end(dir: &Path, bayes: f64, linear: f64) -> Verdict {
    let data = dir.join("data");
    let run = dir.join("run");
    let (d, r) = (data.to_str().unwrap(), run.to_str().unwrap());
    let start = Instant::now();
    let summary = run_ok(&["train", "--data", d, "--out", r, "--preset", "desk", "--epochs", &E2E_MAX_EPOCHS.to_string()])?;
    let elapsed = start.elapsed();
    let ckpt = run.join("best.ckpt");
    let eval = run_ok(&["eval", "--data", d, "--checkpoint", ckpt.to_str().unwrap()])?;
    let auc = field(&eval, "auc")?;
    let epochs = fs::read_to_string(run.join("history.log")).map_err(|e| e.to_string())?.lines().count();

    // Recompute Bayes from the truth file rather than trusting the generator's echo.
    let store = EmbeddingStore::load(data.join(EMBEDDING_FILE)).map_err(|e| e.to_string())?;
    let valid = load_dataset(data.join(VALID_FILE), &store, 32).map_err(|e| e.to_string())?;
    let truth = read_truth(data.join(VALID_TRUTH_FILE)).map_err(|e| e.to_string())?;
    let bayes_file = qin_core::metrics::auc(&truth, &valid.labels()).map_err(|e| e.to_string())?;
    ensure(bayes_file == bayes, format!("bayes echo {bayes} vs file {bayes_file}"))?;

    ensure(epochs <= E2E_MAX_EPOCHS, format!("{epochs} epochs"))?;
    ensure(elapsed < E2E_BUDGET, format!("training took {elapsed:?}"))?;
    ensure(linear <= bayes - LINEAR_GAP, format!("linear {linear:.4} vs bayes {bayes:.4}"))?;
    ensure(auc <= bayes + BAYES_SLACK, format!("model {auc:.4} exceeds bayes {bayes:.4}"))?;
    ensure(auc >= E2E_MIN_AUC, format!("valid auc {auc:.4} < {E2E_MIN_AUC} ({})", summary.trim()))?;
    Ok(format!(
        "valid auc {auc:.4} >= {E2E_MIN_AUC} in {epochs} epochs, {:.0}s; bayes {bayes:.4}, linear {linear:.4}",
        elapsed.as_secs_f64()
    ))
}

fn ablation_trend(dir: &Path) -> Verdict {
    let data = load_data_dir(dir.join("data"), 32).map_err(|e| e.to_string())?;
    let cfg = RunConfig::default();
    let base = cfg.hyper_params(data.store.count(), data.store.dim()).map_err(|e| e.to_string())?;
    let mut medians = Vec::new();
    let mut detail = Vec::new();
    for v in [Variant::Full, Variant::WithoutQnn] {
        let aucs = ABLATION_SEEDS
            .iter()
            .map(|&s| run_variant(v, &base, &cfg.train, s, &data.store, &data.train.samples, &data.valid.samples))
            .collect::<qin_core::Result<Vec<f64>>>()
            .map_err(|e| e.to_string())?;
        detail.push(format!("{} {:.4?}", v.label(), aucs));
        medians.push(median(&aucs));
    }
    ensure(medians[0] > medians[1], format!("median full {:.4} <= mlp {:.4}; {}", medians[0], medians[1], detail.join("; ")))?;
    Ok(format!("median full {:.4} > mlp {:.4} over seeds {ABLATION_SEEDS:?}; {}", medians[0], medians[1], detail.join("; ")))
}

fn determinism(dir: &Path) -> Verdict {
    let small = ["--n_items", "100", "--n_users", "20", "--n_samples", "2000", "--max_seq_len", "8", "--min_seq_len", "4"];
    let mut dirs = Vec::new();
    for tag in ["a", "b"] {
        let data = dir.join(format!("det-data-{tag}"));
        let run = dir.join(format!("det-run-{tag}"));
        let mut args = vec!["gen-data", "--seed", "11", "--out", data.to_str().unwrap()];
        args.extend_from_slice(&small);
        run_ok(&args)?;
        run_ok(&["train", "--data", data.to_str().unwrap(), "--out", run.to_str().unwrap(), "--seed", "11", "--seq_len", "8", "--epochs", "3", "--batch_size", "64"])?;
        dirs.push((data, run));
    }
    let same = |a: &Path, b: &Path| fs::read(a).ok().is_some() && fs::read(a).ok() == fs::read(b).ok();
    for f in [EMBEDDING_FILE, TRAIN_FILE, VALID_FILE, VALID_TRUTH_FILE] {
        ensure(same(&dirs[0].0.join(f), &dirs[1].0.join(f)), format!("dataset file {f} differs"))?;
    }
    for f in ["history.log", "best.ckpt"] {
        ensure(same(&dirs[0].1.join(f), &dirs[1].1.join(f)), format!("run file {f} differs"))?;
    }
    let default_gen = dir.join("data");
    let again = dir.join("data-again");
    run_ok(&["gen-data", "--seed", "7", "--out", again.to_str().unwrap()])?;
    for f in [EMBEDDING_FILE, TRAIN_FILE, VALID_FILE] {
        ensure(same(&default_gen.join(f), &again.join(f)), format!("default dataset file {f} differs"))?;
    }
    let hp = HyperParams::desk(500, 8);
    let a = init_params(&hp, &mut SeededRng::new(7)).map_err(|e| e.to_string())?;
    let b = init_params(&hp, &mut SeededRng::new(7)).map_err(|e| e.to_string())?;
    ensure(a.bit_eq(&b), "initial parameters differ")?;
    Ok("datasets, initial parameters, history and checkpoints bit-identical across runs".into())
}

fn format_fidelity(dir: &Path) -> Verdict {
    let mut rng = SeededRng::new(3);
    let hp = HyperParams { seq_len: 8, ..HyperParams::desk(40, 8) };
    let path = dir.join("rt.ckpt");
    for _ in 0..10 {
        let mut p = init_params(&hp, &mut rng).map_err(|e| e.to_string())?;
        for slot in p.slots_mut() {
            if matches!(slot.class, ParamClass::Embedding | ParamClass::HeadBias) {
                slot.data.iter_mut().for_each(|v| *v = rng.normal(0.0, 3.0));
            }
        }
        save_checkpoint(&p, &path).map_err(|e| e.to_string())?;
        let back = load_checkpoint(&path, &hp).map_err(|e| e.to_string())?;
        ensure(back.bit_eq(&p), "checkpoint round trip not bit-exact")?;
    }
    let bytes = checkpoint_bytes(&init_params(&hp, &mut rng).unwrap());
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    ensure(matches!(read_checkpoint(&bad, &hp), Err(QinError::BadMagic { .. })), "bad magic not typed")?;
    ensure(matches!(read_checkpoint(&bytes[..bytes.len() - 3], &hp), Err(QinError::Truncated(_))), "truncation not typed")?;
    let deeper = HyperParams { layers: 3, ..hp.clone() };
    ensure(matches!(read_checkpoint(&bytes, &deeper), Err(QinError::ShapeMismatch { .. })), "shape mismatch not typed")?;

    let values: Vec<f64> = (0..7 * 5).map(|_| rng.normal(0.0, 1.0) as f32 as f64).collect();
    let store = EmbeddingStore::new(Matrix::from_vec(7, 5, values).unwrap()).unwrap();
    let emb = dir.join("rt.emb");
    store.save(&emb).map_err(|e| e.to_string())?;
    let back = EmbeddingStore::load(&emb).map_err(|e| e.to_string())?;
    ensure(back.matrix().data().iter().zip(store.matrix().data()).all(|(a, b)| a.to_bits() == b.to_bits()), "embedding values changed")?;
    ensure(fs::read(&emb).map_err(|e| e.to_string())? == back.to_bytes(), "embedding bytes changed")?;
    let mut bad_emb = back.to_bytes();
    bad_emb[0] = b'X';
    ensure(matches!(EmbeddingStore::from_bytes(&bad_emb), Err(QinError::BadMagic { .. })), "embedding magic not typed")?;

    // Exit codes through the binary.
    let data = dir.join("fmt-data");
    fs::create_dir_all(&data).map_err(|e| e.to_string())?;
    store.save(data.join(EMBEDDING_FILE)).map_err(|e| e.to_string())?;
    let d = data.to_str().unwrap();
    let code = |args: &[&str]| qin(args).status.code();
    let valid = data.join(VALID_FILE);
    let cases: [(&str, &[&str], i32); 5] = [
        ("{\"target\": 1, \"seq\": [], \"label\": 1}\n{\"target\": 7, \"seq\": [], \"label\": 0}\n", &[], 3),
        ("{\"target\": 1, \"seq\": [2], \"label\": 1}\n{broken\n", &[], 3),
        ("{\"target\": 1, \"seq\": [2], \"label\": 1}\n{\"target\": 2, \"seq\": [], \"label\": 1}\n", &[], 4),
        ("{\"target\": 1, \"seq\": [2], \"label\": 1}\n{\"target\": 2, \"seq\": [], \"label\": 0}\n", &["--lr", "fast"], 2),
        ("{\"target\": 1, \"seq\": [2], \"label\": 1}\n{\"target\": 2, \"seq\": [], \"label\": 0}\n", &[], 0),
    ];
    for (text, extra, want) in cases {
        fs::write(&valid, text).map_err(|e| e.to_string())?;
        let mut args = vec!["eval", "--data", d, "--dim", "8", "--seq_len", "4"];
        args.extend_from_slice(extra);
        ensure(code(&args) == Some(want), format!("eval on {text:?} {extra:?} did not exit {want}"))?;
    }
    fs::write(dir.join("bad.ckpt"), &bad).map_err(|e| e.to_string())?;
    let bad_ckpt = dir.join("bad.ckpt");
    ensure(code(&["eval", "--data", d, "--dim", "8", "--seq_len", "4", "--checkpoint", bad_ckpt.to_str().unwrap()]) == Some(3), "bad checkpoint did not exit 3")?;
    Ok("checkpoint x10 and embedding round trips bit-exact; typed errors and exit codes 0/2/3/4 as specified".into())
}

fn main() {
    let tmp = tempfile::tempdir().expect("tempdir");
    let dir = tmp.path();
    let data = default_data(&dir.join("data"));

    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict + '_>)> = vec![
        ("1 gradient certification", Box::new(gradient_certification)),
        ("2 QNN oracle equivalence", Box::new(qnn_oracle)),
        ("3 attention contracts", Box::new(attention_contracts)),
        ("4 AUC oracle", Box::new(auc_oracle)),
        ("5 end-to-end learning", Box::new(|| {
            let (bayes, linear) = data.clone()?;
            end_to_end(dir, bayes, linear)
        })),
        ("6 ablation trend", Box::new(|| {
            data.clone()?;
            ablation_trend(dir)
        })),
        ("7 determinism", Box::new(|| {
            data.clone()?;
            determinism(dir)
        })),
        ("8 format fidelity", Box::new(|| format_fidelity(dir))),
    ];

    let mut failed = 0;
    for (name, check) in &criteria {
        let start = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let secs = start.elapsed().as_secs_f64();
        match verdict {
            Ok(msg) => println!("PASS  criterion {name}: {msg} [{secs:.1}s]"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  criterion {name}: {msg} [{secs:.1}s]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
