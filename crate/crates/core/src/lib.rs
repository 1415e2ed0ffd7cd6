//! Numerical laboratory for the margin-softmax loss family.
//!
//! The crate covers the full hierarchy from plain cross-entropy over cosine
//! logits through the static SphereFace/ArcFace/CosFace margins to the
//! adaptive AdaFace and FunFace losses, with analytic gradients throughout.
//! Around the losses sit the pieces needed to study them end to end at desk
//! scale: EMA-normalized feature-norm and certainty-ratio tracking, a
//! synthetic identity-cluster generator with quality tiers and vector-space
//! augmentations, a deterministic SGD training loop with bit-exact
//! checkpointing, biometric evaluation (verification, identification,
//! error-versus-discard), and gradient-scale difference maps between the
//! adaptive variants.
//!
//! The default `parallel` feature fans data-parallel loops out through
//! rayon; disabling it yields a sequential build with bit-identical results.

pub mod atlas;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod io;
pub mod margin;
pub mod matrix;
pub mod parallel;
pub mod rng;
pub mod stats;
pub mod synth;
pub mod timing;
pub mod trainer;

pub use error::{Error, Result};
pub use margin::{
    cosine_logits, generalized_pct, margin_loss, margin_loss_backward, margin_loss_forward,
    ClassPrototypes, EmbeddingBatch, LossOutput, MarginConfig, MarginVariant,
    PerSampleDiagnostics,
};
pub use matrix::Matrix;
pub use stats::{certainty_ratio, certainty_ratio_legacy, mix_kappa, normalize_clip, NormalizerState};
