//! Allocation engine: semantic profiling, heterogeneous graph attention
//! embeddings, adversarial debiasing, multi-objective NSGA-II allocation,
//! Shapley explanations and hybrid recommendation.
//!
//! Modules are layered bottom-up: [`model`] holds the domain types shared by
//! everything else, [`embed`] and [`hetgraph`] produce representations,
//! [`objectives`] and [`optimizer`] turn scores into allocation plans, and
//! [`explain`] decomposes the resulting decisions.

pub mod datagen;
pub mod debias;
pub mod embed;
pub mod error;
pub mod explain;
pub mod hetgraph;
pub mod model;
pub mod nn;
pub mod objectives;
pub mod optimizer;
pub mod pipeline;
pub mod recsys;
pub mod scoring;

pub use error::{GesaError, Result};
