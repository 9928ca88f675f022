//! Bayesian model averaging over sequential Monte Carlo parameter estimators.
//!
//! The [`smc`] module keeps a weighted particle cloud per candidate model and
//! accumulates the marginal likelihood of the data as a side effect of the
//! weight updates. The [`selection`] module turns those marginal likelihoods
//! into posterior model probabilities, Bayes factors and a model-average
//! estimate, and also provides maximum-likelihood refinement with AIC/BIC
//! scoring. Two simulation studies are built on top of the engine: rank
//! selection for quantum state tomography ([`tomography`]) and zeroth- versus
//! first-order model selection for randomized benchmarking ([`rb`]). The
//! [`harness`] module wires both studies into reproducible, seedable
//! experiments with JSON-lines records and CSV summaries, driven by the `qma`
//! binary.

pub mod coin;
pub mod harness;
pub mod rb;
pub mod rng;
pub mod selection;
pub mod smc;
pub mod stats;
pub mod tomography;

pub use selection::{ModelEnsemble, ResamplePolicy, SelectionError};
pub use smc::{Estimate, Model, ParticleCloud, SmcError};
