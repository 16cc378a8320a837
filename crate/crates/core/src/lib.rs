//! Route choice modelling with interpretable, sequentially constrained
//! neural utilities.
//!
//! The pipeline: synthesise a transit network and journeys ([`datagen`]),
//! transform route attributes ([`features`]), estimate logit models and train
//! neural utility models ([`models`], built on [`engine`]), then evaluate them
//! with cross-validation and point elasticities ([`eval`]). The [`cli`]
//! module wires the stages together behind the `routechoice` binary.

pub mod cli;
pub mod datagen;
pub mod engine;
pub mod error;
pub mod eval;
pub mod features;
pub mod models;
pub mod types;

pub use error::{Error, Result};
