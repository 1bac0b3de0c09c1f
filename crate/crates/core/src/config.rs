//! Model and training hyperparameters, with the two named presets.
//!
//! `desk` is sized so the full test suite trains on one CPU core in minutes.
//! `paper` records the settings used for the challenge submission; it is kept
//! for reference runs and is far too large for the test suites.

use std::fmt;
use std::str::FromStr;

use crate::error::{QinError, Result};

macro_rules! keyword_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $text),+ }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = QinError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(QinError::Config(format!(
                        concat!("unknown ", stringify!($name), " `{}` (expected one of: {})"),
                        other,
                        [$($text),+].join(", ")
                    ))),
                }
            }
        }
    };
}

keyword_enum!(
    /// Score transform applied to scaled query-key products.
    AttnKind { Relu => "relu", Softmax => "softmax", Relu2 => "relu2", Silu => "silu" }
);

keyword_enum!(
    /// How the behavior sequence is summarized into the interest vector.
    Pooling { Asta => "asta", Mean => "mean" }
);

keyword_enum!(
    /// Feature-interaction stack between pooling and the prediction head.
    Interaction { Qnn => "qnn", Mlp => "mlp" }
);

keyword_enum!(
    /// Activation used inside quadratic layers.
    QnnActivation { Prelu => "prelu", Relu => "relu", Identity => "identity" }
);

keyword_enum!(
    /// `Post` applies the activation to the quadratic product; `Mid` applies it
    /// to the linear transform before the product.
    Placement { Post => "post", Mid => "mid" }
);

keyword_enum!(
    Preset { Desk => "desk", Paper => "paper" }
);

#[derive(Debug, Clone, PartialEq)]
pub struct HyperParams {
    /// Vocabulary size of the item-id table (taken from the embedding store).
    pub n_items: usize,
    /// Width of the frozen pretrained item embedding.
    pub frozen_dim: usize,
    /// Width of the trainable id embedding.
    pub id_dim: usize,
    /// Attention width; must equal the item embedding width `d_t`.
    pub d_a: usize,
    /// Maximum behavior sequence length `S`.
    pub seq_len: usize,
    /// Number of quadratic layers `L`.
    pub layers: usize,
    /// Weight slices per quadratic layer `M`.
    pub capacity: usize,
    /// Dropout on quadratic (or MLP) branches.
    pub dropout: f64,
    pub attn_kind: AttnKind,
    pub attn_dropout: bool,
    pub attn_dropout_p: f64,
    pub pooling: Pooling,
    pub interaction: Interaction,
    pub mlp_dims: Vec<usize>,
    pub qnn_activation: QnnActivation,
    pub placement: Placement,
    pub residual: bool,
}

impl HyperParams {
    pub fn desk(n_items: usize, frozen_dim: usize) -> Self {
        HyperParams {
            n_items,
            frozen_dim,
            id_dim: 8,
            d_a: frozen_dim + 8,
            seq_len: 32,
            layers: 2,
            capacity: 2,
            dropout: 0.1,
            attn_kind: AttnKind::Relu,
            attn_dropout: false,
            attn_dropout_p: 0.1,
            pooling: Pooling::Asta,
            interaction: Interaction::Qnn,
            mlp_dims: vec![64, 32],
            qnn_activation: QnnActivation::Prelu,
            placement: Placement::Post,
            residual: true,
        }
    }

    pub fn paper(n_items: usize, frozen_dim: usize) -> Self {
        HyperParams {
            id_dim: 128 - frozen_dim.min(127),
            d_a: 128,
            layers: 4,
            capacity: 4,
            mlp_dims: vec![1024, 512, 256],
            ..HyperParams::desk(n_items, frozen_dim)
        }
    }

    /// Target embedding width: frozen row followed by trainable row.
    pub fn d_t(&self) -> usize {
        self.frozen_dim + self.id_dim
    }

    /// Behavior embedding width. Behaviors and targets share the item tables.
    pub fn d_b(&self) -> usize {
        self.d_t()
    }

    /// Width of the concatenated interaction input `[x_t, o]`.
    pub fn d(&self) -> usize {
        self.d_t() + self.d_a
    }

    /// Width of the vector fed to the prediction head.
    pub fn head_dim(&self) -> usize {
        match self.interaction {
            Interaction::Qnn => self.d(),
            Interaction::Mlp => self.mlp_dims.last().copied().unwrap_or(self.d()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(QinError::Config(m));
        if self.n_items == 0 {
            return err("n_items must be >= 1".into());
        }
        if self.d_t() == 0 || self.d_a == 0 || self.seq_len == 0 {
            return err("embedding, attention and sequence dims must be >= 1".into());
        }
        if self.d_a != self.d_t() {
            return err(format!(
                "d_a ({}) must equal d_t = frozen_dim + id_dim ({}) for the target residual",
                self.d_a,
                self.d_t()
            ));
        }
        if self.interaction == Interaction::Qnn && self.capacity == 0 {
            return err("capacity must be >= 1".into());
        }
        if self.mlp_dims.iter().any(|&w| w == 0) {
            return err("mlp_dims entries must be >= 1".into());
        }
        for (name, p) in [("dropout", self.dropout), ("attn_dropout_p", self.attn_dropout_p)] {
            if !(0.0..1.0).contains(&p) {
                return err(format!("{name} must lie in [0, 1), got {p}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub emb_weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            lr: 2e-3,
            emb_weight_decay: 2e-4,
            batch_size: 256,
            epochs: 10,
            patience: 3,
            seed: 7,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
        }
    }

    pub fn paper() -> Self {
        TrainConfig {
            lr: 2e-3,
            emb_weight_decay: 2e-4,
            batch_size: 8192,
            ..TrainConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(QinError::Config(format!("lr must be > 0, got {}", self.lr)));
        }
        if !(self.emb_weight_decay >= 0.0) {
            return Err(QinError::Config("emb_weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(QinError::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(QinError::Config("adam betas must lie in [0, 1)".into()));
        }
        if !(self.adam_eps > 0.0) {
            return Err(QinError::Config("adam_eps must be > 0".into()));
        }
        Ok(())
    }
}
