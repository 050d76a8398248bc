//! Convolutional multi-instance learning for the Pos@Top ranking measure.
//!
//! A bag of instance vectors is encoded by a single convolutional layer with
//! max pooling, `g(X) = max(φ(WᵀX))`, and scored by a linear classifier
//! `f(X) = uᵀg(X)`. Training alternates between a dual quadratic program over
//! the margin multipliers (with the filters fixed) and gradient descent on each
//! filter (with the multipliers and witness instances fixed).
//!
//! The crate is `no_std` with `alloc`. The `std` feature is only needed for the
//! `parallel` feature, which routes batch encoding and filter updates through
//! rayon. Results are bit-identical with and without it.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod data;
pub mod dual;
pub mod error;
pub mod filter;
pub mod matrix;
pub mod metrics;
pub mod representation;
pub mod synth;
pub mod trainer;

pub use data::{split_folds, stratified_folds, Bag, ClassBag, Dataset, FoldSplit, Label, MulticlassDataset};
pub use dual::{
    build_gram, kkt_residual, recover_theta, recover_u, solve_dual, DualProblem, DualSolution, KktReport,
};
pub use error::{Error, Result};
pub use filter::{
    filter_gradient, filter_objective, update_filter, update_filterbank, FilterBankUpdate, FilterSubproblem,
    FilterUpdate, OptimizerConfig, PsiRefresh, StepRecord,
};
pub use matrix::Matrix;
pub use metrics::{mean_fold_metric, ova_pos_at_top, pos_at_top, FoldSummary, OvaReport, ScoredSet};
pub use representation::{
    encode_dataset, forward_bag, mean_pool, mean_pool_dataset, score, Activation, BagEncoding, DatasetEncoding,
    FilterBank,
};
pub use synth::{synth_dataset, synth_multiclass, MulticlassSynthConfig, SynthConfig, SynthSignal};
pub use trainer::{
    hinge_loss, predict, primal_objective, train, Diagnostics, IterationRecord, Model, Prediction,
    RepresentationMode, TrainConfig,
};
