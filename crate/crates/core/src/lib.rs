//! Differentiable reasoning over weighted chain rules, with entropic
//! semi-supervised constraints and Bayesian tuning of their weights.
//!
//! The pipeline is: build a [`kb::KnowledgeBase`], parse rules with
//! [`rules::parse_program`], validate them, compile a query predicate into a
//! [`plan::Plan`], and train the trainable relations with [`train`].

pub mod data;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod kb;
pub mod plan;
pub mod proofs;
pub mod rules;
pub mod sparse;
pub mod templates;
pub mod train;
pub mod tune;
pub mod verify;

pub use error::{Error, Result};
