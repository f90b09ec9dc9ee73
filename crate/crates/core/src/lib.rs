//! Automatic post-editing and word-level quality estimation with small
//! factored encoder–decoder models.

pub mod cli;
pub mod corpus;
pub mod ensemble;
pub mod input;
pub mod mert;
pub mod metrics;
pub mod nmt;
pub mod qe;
pub mod subword;
