//! Complementary-signal engine.
//!
//! Given a corpus of `(text, recommendation, state)` records, this crate
//! estimates which discrete signals occur in the text, fits a posterior over
//! the state conditioned on those signals and the upstream recommendation,
//! and uses best-attainable decision payoff to value signals that add
//! information beyond the recommendation. The same machinery produces
//! supervised labels, group-relative rewards for policy fine-tuning, and an
//! evaluation suite for signal extractors.
//!
//! Modules:
//!
//! - [`decision`] - decision problems, posteriors, best responses, complementary value
//! - [`data`] - signal space, signal vectors, instances and line-delimited datasets
//! - [`tabular`] - exact empirical conditionals over small discrete joints
//! - [`posterior`] - regularized regression with greedy main-effect and interaction selection
//! - [`dgp`] - two-round signal discovery and occurrence annotation through a chat client
//! - [`labeler`] - per-instance complementary labels and the supervised dataset
//! - [`reward`] - reward, normalizer, group advantages and the line-protocol service
//! - [`eval`] - similarity, complementary value with bootstrap intervals, breadth
//! - [`synth`] - synthetic datasets with complementarity by construction

pub mod data;
pub mod decision;
pub mod dgp;
pub mod error;
pub mod eval;
pub mod labeler;
pub mod pool;
pub mod posterior;
pub mod reward;
pub mod synth;
pub mod tabular;

pub use data::{Dataset, Instance, SignalDef, SignalSpace, SignalVector, StateLabel};
pub use decision::{
    best_response, complementary_value, expected_best_payoff, realized_best_payoff, DecisionProblem,
    PayoffMode, Posterior, PosteriorEstimator,
};
pub use error::{Error, Result};
pub use posterior::{FitConfig, PosteriorModel};
