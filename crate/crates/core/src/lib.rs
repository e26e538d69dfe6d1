//! Hidden-space data augmentation for imbalanced classification.
//!
//! Labeled embedding vectors are summarized per class by a mean and a leading
//! principal subspace ([`geometry`]). The [`reprint`] augmenter synthesizes
//! examples for a target class by keeping the off-subspace residual of a
//! source example and replacing its in-subspace part with the projection of a
//! random target example, optionally with a mixed soft label. [`baselines`]
//! provides the comparison augmenters, [`classifier`] the evaluation MLP and
//! [`harness`] the imbalance benchmark.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod classifier;
pub mod embedding;
pub mod error;
pub mod geometry;
pub mod harness;
pub mod reprint;
pub mod rng;

pub use baselines::{run_baseline, Augmentation, BaselineConfig, BaselineMethod};
pub use classifier::{evaluate, train, MlpConfig, Optimizer, TrainedModel};
pub use embedding::{
    read_embeddings, read_soft, write_embeddings, write_soft, ClassVocabulary, Format,
    LabeledEmbeddingSet, SoftLabeledSet,
};
pub use error::{Error, Result};
pub use geometry::{fit_class_geometry, ClassGeometry, ClassPca, RankPolicy};
pub use reprint::{augment_dataset, AugmentedExample, LabelStrategy, ReprintConfig};
