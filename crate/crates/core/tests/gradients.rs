use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use qin_core::asta::{asta_backward, asta_forward, AttentionConfig};
use qin_core::config::{AttnKind, HyperParams, Interaction, Placement, Pooling, QnnActivation};
use qin_core::gradcheck::{check, check_model_redrawing, check_model_seeds, GradReport, ModelCheck, Probe, DEFAULT_STEP, MAX_SKIPPED_FRACTION, PASS_THRESHOLD};
use qin_core::linalg::{dot, rng_normal, Matrix, SeededRng};
use qin_core::params::{AttentionParams, QnnLayerParams};
use qin_core::qnn::{qnn_layer_backward, qnn_layer_forward, QnnSettings};
use qin_core::Tensor3;

fn hash_bools(bits: impl Iterator<Item = bool>) -> u64 {
    let mut h = DefaultHasher::new();
    bits.for_each(|b| b.hash(&mut h));
    h.finish()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

/// Flattened `[W_q, W_k, W_v, x_t, x_b]` for a `d × d` attention over `s` positions.
struct AttnPoint {
    d: usize,
    s: usize,
}

impl AttnPoint {
    fn split(&self, x: &[f64]) -> (AttentionParams, Vec<f64>, Matrix) {
        let dd = self.d * self.d;
        let m = |r: std::ops::Range<usize>| Matrix::from_vec(self.d, self.d, x[r].to_vec()).unwrap();
        let p = AttentionParams { w_q: m(0..dd), w_k: m(dd..2 * dd), w_v: m(2 * dd..3 * dd) };
        let x_t = x[3 * dd..3 * dd + self.d].to_vec();
        let x_b = Matrix::from_vec(self.s, self.d, x[3 * dd + self.d..].to_vec()).unwrap();
        (p, x_t, x_b)
    }

    fn len(&self) -> usize {
        3 * self.d * self.d + self.d + self.s * self.d
    }
}

fn attention_report(kind: AttnKind, seed: u64) -> GradReport {
    let geom = AttnPoint { d: 2, s: 3 };
    let cfg = AttentionConfig::new(kind, 2, 2, 2, 3);
    let mask = [1, 1, 0];
    let mut rng = SeededRng::new(seed);
    // Unit-scale draws saturate the softmax at d = 2 and push true gradients
    // down to the relative-error floor.
    let point = rng_normal(&mut rng, geom.len(), 0.0, 0.5);
    let c = rng_normal(&mut rng, 2, 0.0, 1.0);

    let (p, x_t, x_b) = geom.split(&point);
    let (_, trace) = asta_forward(&p, &cfg, &x_t, &x_b, &mask, None).unwrap();
    let mut g = AttentionParams { w_q: Matrix::zeros(2, 2), w_k: Matrix::zeros(2, 2), w_v: Matrix::zeros(2, 2) };
    let inputs = asta_backward(&p, &cfg, &trace, &c, &mut g).unwrap();
    let mut analytic = Vec::new();
    for m in [&g.w_q, &g.w_k, &g.w_v] {
        analytic.extend_from_slice(m.data());
    }
    analytic.extend_from_slice(&inputs.x_t);
    analytic.extend_from_slice(inputs.x_b.data());

    let f = |x: &[f64]| {
        let (p, x_t, x_b) = geom.split(x);
        let (o, t) = asta_forward(&p, &cfg, &x_t, &x_b, &mask, None)?;
        Ok(Probe { value: dot(&o, &c), kink_margin: t.kink_margin(), pattern: hash_bools(t.pattern()) })
    };
    check(f, &analytic, &point, &all(geom.len()), DEFAULT_STEP, seed).unwrap()
}

#[test]
fn attention_backward_matches_finite_differences_on_small_instance() {
    for &kind in AttnKind::ALL {
        // The default kind is held to the tighter bound; squared and smooth
        // kinds produce near-zero weights whose gradients sit near the floor.
        let tol = if kind == AttnKind::Relu { 1e-5 } else { PASS_THRESHOLD };
        for seed in 0..5 {
            let r = attention_report(kind, seed);
            assert!(r.max_rel_error < tol, "{kind} seed {seed}: {r:?}");
            assert!(r.checked > 0);
        }
    }
}

#[test]
fn qnn_layer_backward_matches_finite_differences() {
    let (m, d) = (2, 4);
    for (activation, placement) in [
        (QnnActivation::Prelu, Placement::Post),
        (QnnActivation::Relu, Placement::Post),
        (QnnActivation::Identity, Placement::Post),
        (QnnActivation::Prelu, Placement::Mid),
    ] {
        let settings = QnnSettings { activation, placement, residual: true, dropout_p: 0.0 };
        for seed in 0..5 {
            let mut rng = SeededRng::new(seed);
            // [W (m·d·d), slope, x (d)]
            let n = m * d * d + 1 + d;
            let point = rng_normal(&mut rng, n, 0.0, 0.7);
            let c = rng_normal(&mut rng, d, 0.0, 1.0);
            let split = |x: &[f64]| {
                let layer = QnnLayerParams { w: Tensor3::from_vec(m, d, d, x[..m * d * d].to_vec()).unwrap(), slope: x[m * d * d] };
                (layer, x[m * d * d + 1..].to_vec())
            };
            let (layer, x) = split(&point);
            let (_, trace) = qnn_layer_forward(&layer, &settings, &x, None).unwrap();
            let mut g = QnnLayerParams { w: Tensor3::zeros(m, d, d), slope: 0.0 };
            let dx = qnn_layer_backward(&layer, &settings, &trace, &c, &mut g).unwrap();
            let mut analytic = g.w.data().to_vec();
            analytic.push(g.slope);
            analytic.extend(dx);

            let f = |p: &[f64]| {
                let (layer, x) = split(p);
                let (out, t) = qnn_layer_forward(&layer, &settings, &x, None)?;
                let margin = match activation {
                    QnnActivation::Identity => f64::INFINITY,
                    _ if placement == Placement::Mid => f64::INFINITY,
                    _ => t.h.iter().fold(f64::INFINITY, |a, v| a.min(v.abs())),
                };
                Ok(Probe { value: dot(&out, &c), kink_margin: margin, pattern: hash_bools(t.h.iter().map(|v| *v > 0.0)) })
            };
            let r = check(f, &analytic, &point, &all(n), DEFAULT_STEP, seed).unwrap();
            assert!(r.max_rel_error < 1e-5, "{activation}/{placement}: {r:?}");
        }
    }
}

fn assert_model_passes(opts: &ModelCheck, seeds: std::ops::Range<u64>, label: &str) {
    for seed in seeds {
        for (group, r) in check_model_redrawing(opts, seed).unwrap() {
            assert!(r.passed(), "{label}: {group} {r:?}");
            assert!(r.skipped_fraction() < MAX_SKIPPED_FRACTION, "{label}: {group} skipped {r:?}");
        }
    }
}

#[test]
fn every_variant_backward_is_certified() {
    let base = ModelCheck::desk();
    let variants: Vec<(&str, HyperParams)> = vec![
        ("mlp", HyperParams { interaction: Interaction::Mlp, ..base.hp.clone() }),
        ("mean", HyperParams { pooling: Pooling::Mean, ..base.hp.clone() }),
        ("softmax", HyperParams { attn_kind: AttnKind::Softmax, ..base.hp.clone() }),
        ("relu2", HyperParams { attn_kind: AttnKind::Relu2, ..base.hp.clone() }),
        ("silu", HyperParams { attn_kind: AttnKind::Silu, ..base.hp.clone() }),
        ("qnn-relu", HyperParams { qnn_activation: QnnActivation::Relu, ..base.hp.clone() }),
        ("mid", HyperParams { placement: Placement::Mid, ..base.hp.clone() }),
        ("attn-dropout", HyperParams { attn_dropout: true, ..base.hp.clone() }),
    ];
    for (label, hp) in variants {
        let opts = ModelCheck { hp, ..base.clone() };
        assert_model_passes(&opts, 0..2, label);
    }
}

#[test]
fn sabotaged_group_is_caught() {
    let opts = ModelCheck { sabotage: Some("attention.w_v".into()), ..ModelCheck::desk() };
    let reports = check_model_seeds(&opts, [0]).unwrap();
    for (group, r) in &reports {
        assert_eq!(r.passed(), group != "attention.w_v", "{group}: {r:?}");
    }
}
