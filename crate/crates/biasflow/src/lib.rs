//! Explainable demographic-bias auditing for vision-language models.
//!
//! The toolkit answers three questions about a model: where it looks when it
//! answers a neutral question about a person (gradient-weighted token
//! attribution), how much those key tokens encode sensitive attributes (a
//! pruned multi-round dialogue with counterfactual prompts, scored per
//! sample), and how biased its text embeddings are on their own (textual
//! sensitivity bias). Group-level accuracy disparities and fairness-score
//! differences tie the three together in audit reports.
//!
//! Model access goes through the [`gateway`] contract; a fully scripted mock
//! adapter keeps every pipeline stage testable at desk scale. See the
//! `examples/` directory for one runnable walkthrough per capability.

pub mod attribution;
pub mod audit;
pub mod corpus;
pub mod dialogue;
pub mod error;
pub mod gateway;
pub mod metrics;
pub mod prompts;
pub mod synth;
pub mod tsb;

mod seeding;
mod textutil;

pub use error::{Error, Result};
