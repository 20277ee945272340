//! Temporal-hierarchical causal graph model for next-admission ICD-9 code
//! prediction, with split-conformal prediction sets.
//!
//! The pipeline runs in four stages:
//!
//! 1. [`ingestion`]: segment notes, score and keep the top sections, extract
//!    propositions and normalize ICD-9 codes.
//! 2. [`encoding`]: embed propositions and code descriptions and project
//!    them into a shared node-feature space.
//! 3. [`graph`]: sample intra- and inter-admission adjacencies with
//!    Gumbel-Softmax under an acyclicity penalty, run message passing and
//!    pool each admission to an embedding.
//! 4. [`training`] and [`conformal`]: a sigmoid head trained with focal loss,
//!    then split-conformal calibration of the predicted label sets.
//!
//! [`evaluation`] provides ranking metrics and [`synthetic`] generates
//! cohorts with planted causal structure.

pub mod conformal;
pub mod encoding;
pub mod error;
pub mod evaluation;
pub mod graph;
pub mod ingestion;
pub mod synthetic;
pub mod tensor;
pub mod training;

pub use error::{Error, ErrorKind, Result};
