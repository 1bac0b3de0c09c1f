//! Run configuration: every tunable in one flat `key = value` namespace.
//!
//! Resolution order, later wins: built-in defaults, preset, config file, flags.
//! The preset is chosen by `--preset` if given, else by a `preset` line in the
//! file, else `desk`.

use std::str::FromStr;

use qin_core::{GenConfig, HyperParams, Preset, QinError, Result, TrainConfig};

/// Every accepted key, in the order `run.conf` is written.
pub const KEYS: &[&str] = &[
    "preset",
    // model
    "dim",
    "seq_len",
    "layers",
    "capacity",
    "dropout",
    "attn_kind",
    "attn_dropout",
    "attn_dropout_p",
    "pooling",
    "interaction",
    "mlp_dims",
    "qnn_activation",
    "placement",
    "residual",
    // training
    "lr",
    "emb_weight_decay",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    // data generation
    "n_items",
    "n_users",
    "n_samples",
    "emb_dim",
    "max_seq_len",
    "min_seq_len",
    "quad_strength",
    "linear_strength",
    "bias",
    "noise_std",
    "temperature",
    "train_fraction",
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub preset: Preset,
    /// Item embedding width `d_t` (frozen plus trainable); also the attention width.
    pub dim: usize,
    /// Architecture template; item count and embedding split are filled in
    /// from the embedding store by [`RunConfig::hyper_params`].
    pub model: HyperParams,
    pub train: TrainConfig,
    /// Generator settings. Its seed always mirrors `train.seed`.
    pub gen: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig::for_preset(Preset::Desk)
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| QinError::Config(format!("invalid value `{value}` for `{key}`")))
}

fn keyword<T: FromStr<Err = QinError>>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|e: QinError| QinError::Config(format!("`{key}`: {e}")))
}

fn unknown(key: &str) -> QinError {
    QinError::Config(format!("unknown key `{key}`"))
}

impl RunConfig {
    pub fn for_preset(preset: Preset) -> Self {
        let gen = GenConfig::default();
        let (model, train) = match preset {
            Preset::Desk => (HyperParams::desk(0, gen.emb_dim), TrainConfig::desk()),
            Preset::Paper => (HyperParams::paper(0, gen.emb_dim), TrainConfig::paper()),
        };
        let gen = GenConfig { seed: train.seed, ..gen };
        RunConfig { preset, dim: model.d_a, model, train, gen }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let m = &mut self.model;
        let t = &mut self.train;
        let g = &mut self.gen;
        match key {
            "preset" => self.preset = keyword(key, v)?,
            "dim" => self.dim = parse(key, v)?,
            "seq_len" => m.seq_len = parse(key, v)?,
            "layers" => m.layers = parse(key, v)?,
            "capacity" => m.capacity = parse(key, v)?,
            "dropout" => m.dropout = parse(key, v)?,
            "attn_kind" => m.attn_kind = keyword(key, v)?,
            "attn_dropout" => m.attn_dropout = parse(key, v)?,
            "attn_dropout_p" => m.attn_dropout_p = parse(key, v)?,
            "pooling" => m.pooling = keyword(key, v)?,
            "interaction" => m.interaction = keyword(key, v)?,
            "mlp_dims" => {
                m.mlp_dims = v
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse(key, s))
                    .collect::<Result<_>>()?
            }
            "qnn_activation" => m.qnn_activation = keyword(key, v)?,
            "placement" => m.placement = keyword(key, v)?,
            "residual" => m.residual = parse(key, v)?,
            "lr" => t.lr = parse(key, v)?,
            "emb_weight_decay" => t.emb_weight_decay = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "patience" => t.patience = parse(key, v)?,
            "seed" => {
                t.seed = parse(key, v)?;
                g.seed = t.seed;
            }
            "adam_beta1" => t.adam_beta1 = parse(key, v)?,
            "adam_beta2" => t.adam_beta2 = parse(key, v)?,
            "adam_eps" => t.adam_eps = parse(key, v)?,
            "n_items" => g.n_items = parse(key, v)?,
            "n_users" => g.n_users = parse(key, v)?,
            "n_samples" => g.n_samples = parse(key, v)?,
            "emb_dim" => g.emb_dim = parse(key, v)?,
            "max_seq_len" => g.max_seq_len = parse(key, v)?,
            "min_seq_len" => g.min_seq_len = parse(key, v)?,
            "quad_strength" => g.quad_strength = parse(key, v)?,
            "linear_strength" => g.linear_strength = parse(key, v)?,
            "bias" => g.bias = parse(key, v)?,
            "noise_std" => g.noise_std = parse(key, v)?,
            "temperature" => g.temperature = parse(key, v)?,
            "train_fraction" => g.train_fraction = parse(key, v)?,
            _ => return Err(unknown(key)),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Result<String> {
        let m = &self.model;
        let t = &self.train;
        let g = &self.gen;
        Ok(match key {
            "preset" => self.preset.to_string(),
            "dim" => self.dim.to_string(),
            "seq_len" => m.seq_len.to_string(),
            "layers" => m.layers.to_string(),
            "capacity" => m.capacity.to_string(),
            "dropout" => m.dropout.to_string(),
            "attn_kind" => m.attn_kind.to_string(),
            "attn_dropout" => m.attn_dropout.to_string(),
            "attn_dropout_p" => m.attn_dropout_p.to_string(),
            "pooling" => m.pooling.to_string(),
            "interaction" => m.interaction.to_string(),
            "mlp_dims" => m.mlp_dims.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
            "qnn_activation" => m.qnn_activation.to_string(),
            "placement" => m.placement.to_string(),
            "residual" => m.residual.to_string(),
            "lr" => t.lr.to_string(),
            "emb_weight_decay" => t.emb_weight_decay.to_string(),
            "batch_size" => t.batch_size.to_string(),
            "epochs" => t.epochs.to_string(),
            "patience" => t.patience.to_string(),
            "seed" => t.seed.to_string(),
            "adam_beta1" => t.adam_beta1.to_string(),
            "adam_beta2" => t.adam_beta2.to_string(),
            "adam_eps" => t.adam_eps.to_string(),
            "n_items" => g.n_items.to_string(),
            "n_users" => g.n_users.to_string(),
            "n_samples" => g.n_samples.to_string(),
            "emb_dim" => g.emb_dim.to_string(),
            "max_seq_len" => g.max_seq_len.to_string(),
            "min_seq_len" => g.min_seq_len.to_string(),
            "quad_strength" => g.quad_strength.to_string(),
            "linear_strength" => g.linear_strength.to_string(),
            "bias" => g.bias.to_string(),
            "noise_std" => g.noise_std.to_string(),
            "temperature" => g.temperature.to_string(),
            "train_fraction" => g.train_fraction.to_string(),
            _ => return Err(unknown(key)),
        })
    }

    /// The full configuration in config-file syntax; parses back to `self`.
    pub fn to_conf(&self) -> String {
        KEYS.iter()
            .map(|k| format!("{k} = {}\n", self.get(k).expect("KEYS lists only known keys")))
            .collect()
    }

    /// Layers defaults, preset, `file` and `flags` in that order.
    pub fn resolve(file: Option<&str>, flags: &[(String, String)]) -> Result<Self> {
        let file_entries = match file {
            Some(text) => parse_conf(text)?,
            None => Vec::new(),
        };
        let preset_value = flags
            .iter()
            .chain(&file_entries)
            .find(|(k, _)| k == "preset")
            .map(|(_, v)| v.as_str());
        let preset = match preset_value {
            Some(v) => keyword("preset", v.trim())?,
            None => Preset::Desk,
        };
        let mut cfg = RunConfig::for_preset(preset);
        for (k, v) in file_entries.iter().chain(flags) {
            if k != "preset" {
                cfg.set(k, v)?;
            }
        }
        Ok(cfg)
    }

    /// Concrete hyperparameters for an embedding store of `n_items × frozen_dim`.
    pub fn hyper_params(&self, n_items: usize, frozen_dim: usize) -> Result<HyperParams> {
        if self.dim <= frozen_dim {
            return Err(QinError::Config(format!(
                "dim ({}) must exceed the frozen embedding width ({frozen_dim}) to leave room for trainable ids",
                self.dim
            )));
        }
        let hp = HyperParams { n_items, frozen_dim, id_dim: self.dim - frozen_dim, d_a: self.dim, ..self.model.clone() };
        hp.validate()?;
        Ok(hp)
    }
}

/// Parses `key = value` lines; `#` starts a comment line. Keys are checked
/// against [`KEYS`] so typos fail with the line number.
pub fn parse_conf(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| QinError::Config(format!("config line {}: expected `key = value`", i + 1)))?;
        let k = k.trim();
        if !KEYS.contains(&k) {
            return Err(QinError::Config(format!("config line {}: unknown key `{k}`", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}
