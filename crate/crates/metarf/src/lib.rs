//! Few-shot reaction-yield regression.
//!
//! The model is a random forest whose per-tree predictions are concatenated
//! into a tree-output vector and fed to a small MLP head. The head is
//! meta-trained (MAML-style) over tasks drawn from training reagent groups so
//! that a single gradient step on a handful of samples from an unseen group
//! adapts it to that group. Fine-tune samples are chosen by Kennard-Stone
//! max-min selection on a 2-D t-SNE embedding of the reaction descriptors,
//! which covers the reaction space more evenly than random picks.
//!
//! Modules follow the pipeline stages:
//!
//! * [`data`] — descriptor tables, reaction encoding, group splits, task
//!   sampling
//! * [`forest`] — CART regression trees, bagging, tree-output vectors
//! * [`head`] — the MLP head, backpropagation, Adam
//! * [`meta`] — meta-training, fine-tuning, and the transfer-learning mode
//! * [`tsne`] — exact t-SNE with perplexity calibration
//! * [`sampling`] — Kennard-Stone selection and the embed-then-select
//!   composite
//! * [`eval`] — metrics, top-k yield reports, ablation/sweep grids,
//!   permutation feature importance
//! * [`pipeline`] — end-to-end orchestration used by the CLI
//! * [`synth`] — the synthetic grouped-regression generator used for
//!   desk-scale evaluation
//!
//! Everything is seeded: a run is reproduced bit-for-bit from its config.
//! With the default `parallel` feature the hot loops (tree fitting, t-SNE
//! row computations, batch prediction) run on rayon; disabling it yields a
//! sequential build with identical results.

pub mod data;
pub mod error;
pub mod eval;
pub mod forest;
pub mod head;
pub mod meta;
pub mod pipeline;
pub mod rng;
pub mod sampling;
pub mod synth;
pub mod tsne;

mod par;

pub use error::{Error, Result};
