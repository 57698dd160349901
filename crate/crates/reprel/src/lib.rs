//! Reliability scoring for ensembles of pre-trained representations.
//!
//! Given M embedding functions evaluated on a shared reference set and a
//! shared test set, this crate computes:
//!
//! - neighborhood-consistency scores (k-NN and ε-ball variants) that compare
//!   a test point's neighbor sets across ensemble members,
//! - baseline scores: mean k-NN distance, representation norm, mixture-model
//!   log-likelihood (Gaussian and von Mises–Fisher), and feature variance,
//! - ground-truth reliability from downstream one-vs-one linear heads
//!   (negative variance / Brier / entropy of the ensemble predictions),
//! - Kendall tau-b rank correlation between scores and ground truth, and
//!   model rankings across ensembles,
//! - synthetic generators and certification harnesses for the two structural
//!   results the scores rest on: representation variance can be arbitrarily
//!   large while downstream predictions agree exactly, and a consistent
//!   neighbor bounds downstream prediction variance.
//!
//! The `reprel` binary exposes the pipeline as subcommands; see the README.

pub mod baselines;
pub mod consistency;
pub mod downstream;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod io;
pub mod knn;
pub mod mixture;
pub mod synth;

pub use baselines::{
    dist_k_score, dist_k_scores, ensemble_average, feature_variance, feature_variance_batch,
    norm_score, norm_scores, Polarity, ScoreVector,
};
pub use consistency::{
    nc_eps, nc_eps_batch, nc_eps_batch_scaled, nc_k, nc_k_batch, nc_k_batch_scaled, set_similarity,
    NcScale, SetSimilarity,
};
pub use downstream::{
    bound_check, compute_reliability, lipschitz_constant, multiclass_task, ovo_tasks,
    predict_proba, reli_aggregate, reli_brier, reli_entropy, reli_variance, train_linear_head,
    BoundCheckReport, HeadConfig, LabeledDataset, LinearHead, ReliabilityMetric,
    ReliabilityVector, Task, TaskSet,
};
pub use embedding::{
    distance, l2_norm, l2_normalize, DistanceMetric, EmbeddingMatrix, EnsembleEmbeddings,
    MemberPair, EPS_ZERO,
};
pub use error::{Error, Result};
pub use eval::{correlate, kendall_tau_b, rank_models, CorrelationReport, ModelRanking};
pub use knn::{eps_neighbors, knn_indices, NeighborIndexSet, QueryParam};
pub use mixture::{
    fit_gmm, fit_vmf_mixture, gmm_log_density, ll_score, ll_scores, vmf_log_density, EmConfig,
    EmTrace, GaussianMixture, MixtureModel, VmfMixture,
};
pub use synth::{
    gen_clustered_ensemble, gen_counterexample, random_orthogonal, theorem2_harness,
    Counterexample, CounterexampleSpec, HarnessConfig, SynthConfig, SynthData,
};
