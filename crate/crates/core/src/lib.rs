//! CTR prediction with sparse target attention (ASTA) over a behavior
//! sequence and a stack of quadratic interaction layers (QNN), trained with
//! hand-written reverse-mode gradients in 64-bit floats.
//!
//! Dataflow for one sample:
//!
//! ```text
//! ids ─► embedding (frozen ‖ trainable) ─► x_t, x_b
//!     ─► asta:  o = relu(Q·Kᵀ/√d_a)·V + x_t
//!     ─► qnn:   X₁ = [x_t, o];  X_{l+1} = X_l + PReLU(X_l ⊙ Σ_m W_m X_l)
//!     ─► head:  sigmoid(w·X_L + b)
//! ```

pub mod ablation;
pub mod asta;
pub mod config;
pub mod datagen;
pub mod embedding;
pub mod error;
pub mod gradcheck;
pub mod linalg;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod qnn;
pub mod train;

pub use config::{AttnKind, HyperParams, Interaction, Placement, Pooling, Preset, QnnActivation, TrainConfig};
pub use datagen::{GenConfig, Manifest};
pub use embedding::{Batch, EmbeddingStore, Sample};
pub use error::{QinError, Result};
pub use linalg::{Matrix, SeededRng, Tensor3};
pub use metrics::Metrics;
pub use model::Qin;
pub use params::{Gradients, ModelParams};
pub use train::{EpochRecord, TrainOutcome};
