//! Variant grid: each row swaps one architectural choice and trains with the
//! same data, seeds and budget.

use std::fmt::Write as _;

use crate::config::{AttnKind, HyperParams, Interaction, Pooling, QnnActivation, TrainConfig};
use crate::embedding::{EmbeddingStore, Sample};
use crate::error::Result;
use crate::model::Qin;
use crate::train::init_and_train;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    WithoutQnn,
    WithoutAsta,
    AstaSoftmax,
    QnnWithoutPrelu,
    AstaDropout,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Full,
        Variant::WithoutQnn,
        Variant::WithoutAsta,
        Variant::AstaSoftmax,
        Variant::QnnWithoutPrelu,
        Variant::AstaDropout,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Variant::Full => "QIN (full)",
            Variant::WithoutQnn => "w/o QNN (MLP)",
            Variant::WithoutAsta => "w/o ASTA (mean pool)",
            Variant::AstaSoftmax => "ASTA w/ softmax",
            Variant::QnnWithoutPrelu => "QNN w/o PReLU (ReLU)",
            Variant::AstaDropout => "ASTA w/ dropout",
        }
    }

    /// `base` with this variant's single change applied.
    pub fn apply(self, base: &HyperParams) -> HyperParams {
        let mut hp = base.clone();
        match self {
            Variant::Full => {}
            Variant::WithoutQnn => hp.interaction = Interaction::Mlp,
            Variant::WithoutAsta => hp.pooling = Pooling::Mean,
            Variant::AstaSoftmax => hp.attn_kind = AttnKind::Softmax,
            Variant::QnnWithoutPrelu => hp.qnn_activation = QnnActivation::Relu,
            Variant::AstaDropout => hp.attn_dropout = true,
        }
        hp
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Best validation AUC per seed, in seed order.
    pub aucs: Vec<f64>,
}

impl AblationRow {
    pub fn median(&self) -> f64 {
        median(&self.aucs)
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => (v[n / 2 - 1] + v[n / 2]) / 2.0,
    }
}

/// Best validation AUC of one variant trained with `cfg.seed = seed`.
pub fn run_variant(
    variant: Variant,
    base: &HyperParams,
    cfg: &TrainConfig,
    seed: u64,
    store: &EmbeddingStore,
    train: &[Sample],
    valid: &[Sample],
) -> Result<f64> {
    let qin = Qin::new(variant.apply(base))?;
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let out = init_and_train(&qin, store, train, valid, &cfg)?;
    Ok(out.best_record().map_or(f64::NAN, |r| r.val_auc))
}

pub fn run_ablation(
    variants: &[Variant],
    base: &HyperParams,
    cfg: &TrainConfig,
    seeds: &[u64],
    store: &EmbeddingStore,
    train: &[Sample],
    valid: &[Sample],
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let aucs = seeds
                .iter()
                .map(|&s| run_variant(variant, base, cfg, s, store, train, valid))
                .collect::<Result<Vec<_>>>()?;
            Ok(AblationRow { variant, aucs })
        })
        .collect()
}

pub fn render_table(rows: &[AblationRow], seeds: &[u64]) -> String {
    let mut out = String::from("| variant |");
    for s in seeds {
        let _ = write!(out, " seed {s} |");
    }
    out.push_str(" median |\n|---|");
    out.push_str(&"---:|".repeat(seeds.len() + 1));
    out.push('\n');
    for row in rows {
        let _ = write!(out, "| {} |", row.variant.label());
        for a in &row.aucs {
            let _ = write!(out, " {a:.4} |");
        }
        let _ = writeln!(out, " {:.4} |", row.median());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn each_variant_changes_one_flag() {
        let base = HyperParams::desk(10, 4);
        for v in Variant::ALL {
            let hp = v.apply(&base);
            let diffs = [
                hp.interaction != base.interaction,
                hp.pooling != base.pooling,
                hp.attn_kind != base.attn_kind,
                hp.qnn_activation != base.qnn_activation,
                hp.attn_dropout != base.attn_dropout,
            ];
            let n = diffs.iter().filter(|&&d| d).count();
            assert_eq!(n, (v != Variant::Full) as usize, "{v:?}");
        }
        assert_eq!(Variant::AstaDropout.apply(&base).attn_dropout_p, 0.1);
    }

    #[test]
    fn median_definition() {
        assert_eq!(median(&[0.3, 0.1, 0.2]), 0.2);
        assert_eq!(median(&[0.4, 0.1, 0.2, 0.3]), 0.25);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn table_layout() {
        let rows = vec![
            AblationRow { variant: Variant::Full, aucs: vec![0.9, 0.8, 0.85] },
            AblationRow { variant: Variant::WithoutQnn, aucs: vec![0.7, 0.75, 0.72] },
        ];
        let t = render_table(&rows, &[7, 8, 9]);
        let lines: Vec<&str> = t.lines().collect();
        assert_eq!(lines[0], "| variant | seed 7 | seed 8 | seed 9 | median |");
        assert_eq!(lines[1], "|---|---:|---:|---:|---:|");
        assert_eq!(lines[2], "| QIN (full) | 0.9000 | 0.8000 | 0.8500 | 0.8500 |");
        assert_eq!(lines.len(), 4);
    }
}
