//! Fast element-wise ALS (eALS) for implicit-feedback matrix factorization.
//!
//! The crate covers the full pipeline: loading and k-core filtering raw
//! interaction logs ([`ingest`]), popularity-aware confidence weighting of
//! missing data ([`weighting`]), the factor model with its Gram-style caches
//! ([`model`]), the fast element-wise ALS trainer together with its slow
//! reference oracles ([`eals`]), incremental online updates ([`online`]),
//! vector-wise ALS and BPR baselines ([`baselines`]), and HR/NDCG evaluation
//! under the offline leave-one-out and online streaming protocols ([`eval`]).
//!
//! With the default `parallel` feature, the user and item phases of a sweep
//! are partitioned across rayon workers by row; results are bit-identical to
//! the sequential fallback.

pub mod baselines;
pub mod eals;
pub mod error;
pub mod eval;
pub mod ingest;
pub mod model;
pub mod online;
pub mod synthetic;
pub mod weighting;

mod linalg;
mod parallel;

pub use error::{Error, Result};
