//! Sequential recommendation with multi-relational self-attention.
//!
//! Item-item relations (for example "also bought") enter the model twice:
//! as an additive bilinear term in every attention block, and as auxiliary
//! relation-prediction losses on item pairs inside and across sequences.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod diffkernel;
pub mod error;
pub mod evaluator;
pub mod losses;
pub mod model;
pub mod relstore;
pub mod trainer;

pub use error::{Error, Result};
