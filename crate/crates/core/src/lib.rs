//! Few-shot claim verification from the training dynamics of a small
//! encoder-decoder model.
//!
//! The pipeline has three stages:
//!
//! 1. [`evolve`]: fine-tune the seq2seq model claim→evidence and
//!    evidence→claim over the unlabeled pool, recording a generated
//!    *mutation* for every instance at every checkpoint epoch.
//! 2. [`features`]: score each (claim, evidence, mutation) triple with a pair
//!    metric (sentence-embedding cosine by default, see [`metrics`]) and
//!    concatenate the scores into one feature row per instance.
//! 3. [`verify`]: fit a logistic classifier on an n-shot labeled sample.
//!
//! [`harness`] runs the repeated-seed experiment matrix and the SEED
//! baseline comparison; [`corpus`] handles datasets and splits.

pub mod corpus;
pub mod error;
pub mod evolve;
pub mod features;
pub mod harness;
pub mod hub;
pub mod metrics;
pub mod verify;

pub use error::{Error, ErrorKind, Result};
