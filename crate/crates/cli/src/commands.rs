use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use qin_core::ablation::{render_table, run_ablation, Variant};
use qin_core::datagen::{
    bayes_auc, generate, linear_baseline_auc, load_data_dir, load_dataset, write_generated, EMBEDDING_FILE, TRAIN_FILE,
    VALID_FILE,
};
use qin_core::gradcheck::{check_model_seeds, ModelCheck, MAX_SKIPPED_FRACTION};
use qin_core::metrics::metrics_from_probs;
use qin_core::params::{init_params, load_checkpoint, save_checkpoint};
use qin_core::train::{predict_probs, train_observed};
use qin_core::{EmbeddingStore, Qin, QinError, Result, SeededRng};

use crate::config::RunConfig;
use crate::{EXIT_FAILED, EXIT_OK};

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.log";
pub const RUN_CONF: &str = "run.conf";

pub fn gen_data(cfg: &RunConfig, out: &Path) -> Result<i32> {
    let data = generate(&cfg.gen)?;
    let (train, valid) = write_generated(out, &data, cfg.gen.seed)?;
    println!("split=train {train}");
    println!("split=valid {valid}");
    let bayes = bayes_auc(&data.valid_truth, &data.valid)?;
    let linear = linear_baseline_auc(&data.store, &data.train, &data.valid)?;
    println!("bayes_auc={bayes} linear_auc={linear}");
    Ok(EXIT_OK)
}

pub fn train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<i32> {
    let d = load_data_dir(data, cfg.model.seq_len)?;
    let hp = cfg.hyper_params(d.store.count(), d.store.dim())?;
    let qin = Qin::new(hp)?;
    let init = init_params(&qin.hp, &mut SeededRng::new(cfg.train.seed))?;

    fs::create_dir_all(out)?;
    fs::write(out.join(RUN_CONF), cfg.to_conf())?;
    let mut history = BufWriter::new(fs::File::create(out.join(HISTORY_FILE))?);
    let mut write_err = None;
    let outcome = train_observed(&qin, init, &d.store, &d.train.samples, &d.valid.samples, &cfg.train, |rec| {
        eprintln!("{rec}");
        if write_err.is_none() {
            write_err = writeln!(history, "{rec}").and_then(|_| history.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    save_checkpoint(&outcome.best, out.join(CHECKPOINT_FILE))?;
    match outcome.best_record() {
        Some(r) => println!("best_epoch={} val_auc={} val_logloss={}", r.epoch, r.val_auc, r.val_logloss),
        None => println!("best_epoch=0"),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub checkpoint: Option<PathBuf>,
    pub split: String,
    pub zero_head: bool,
    pub dump: Option<PathBuf>,
}

pub fn eval(cfg: &RunConfig, data: &Path, opts: &EvalOptions) -> Result<i32> {
    let store = EmbeddingStore::load(data.join(EMBEDDING_FILE))?;
    let file = if opts.split == "train" { TRAIN_FILE } else { VALID_FILE };
    let set = load_dataset(data.join(file), &store, cfg.model.seq_len)?;
    let qin = Qin::new(cfg.hyper_params(store.count(), store.dim())?)?;
    let mut params = match &opts.checkpoint {
        Some(p) => load_checkpoint(p, &qin.hp)?,
        None => init_params(&qin.hp, &mut SeededRng::new(cfg.train.seed))?,
    };
    if opts.zero_head {
        params.head.w.fill(0.0);
        params.head.b = 0.0;
    }
    let probs = predict_probs(&qin, &params, &store, &set.samples)?;
    let labels = set.labels();
    if let Some(path) = &opts.dump {
        let mut w = BufWriter::new(fs::File::create(path)?);
        for (p, y) in probs.iter().zip(&labels) {
            writeln!(w, "{p}\t{y}")?;
        }
        w.flush()?;
    }
    let m = metrics_from_probs(&probs, &labels)?;
    println!("auc={} logloss={}", m.auc, m.logloss);
    Ok(EXIT_OK)
}

pub fn gradcheck(seeds: u64, base: u64, sabotage: Option<String>) -> Result<i32> {
    let opts = ModelCheck { sabotage, ..ModelCheck::desk() };
    let reports = check_model_seeds(&opts, base..base + seeds)?;
    if let Some(group) = &opts.sabotage {
        if !reports.contains_key(group) {
            let known: Vec<&str> = reports.keys().map(String::as_str).collect();
            return Err(QinError::Config(format!("unknown group `{group}` (groups: {})", known.join(", "))));
        }
    }
    let mut all_ok = true;
    for (group, r) in &reports {
        let ok = r.passed() && r.skipped_fraction() < MAX_SKIPPED_FRACTION;
        all_ok &= ok;
        let argmax = r.argmax.map_or("none".to_string(), |i| i.to_string());
        println!(
            "group={group} max_rel_err={:.3e} argmax={argmax} seed={} checked={} skipped={} status={}",
            r.max_rel_error,
            r.seed,
            r.checked,
            r.skipped,
            if ok { "ok" } else { "FAIL" }
        );
    }
    println!("result={} seeds={seeds} step={:e}", if all_ok { "pass" } else { "fail" }, opts.step);
    Ok(if all_ok { EXIT_OK } else { EXIT_FAILED })
}

pub fn ablate(cfg: &RunConfig, data: &Path, n_seeds: u64) -> Result<i32> {
    let d = load_data_dir(data, cfg.model.seq_len)?;
    let base = cfg.hyper_params(d.store.count(), d.store.dim())?;
    let seeds: Vec<u64> = (0..n_seeds).map(|i| cfg.train.seed + i).collect();
    let mut rows = Vec::new();
    for v in Variant::ALL {
        eprintln!("training {} ...", v.label());
        let row = run_ablation(&[v], &base, &cfg.train, &seeds, &d.store, &d.train.samples, &d.valid.samples)?;
        eprintln!("  {:?}", row[0].aucs);
        rows.extend(row);
    }
    print!("{}", render_table(&rows, &seeds));
    Ok(EXIT_OK)
}
