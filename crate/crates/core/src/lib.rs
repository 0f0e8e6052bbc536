//! Offline contextual-bandit experimentation on an exactly enumerable
//! synthetic environment.
//!
//! The crate provides:
//! - a seeded environment over 128 contexts and 32 actions whose true
//!   reward table is known, so policies are scored exactly ([`env`]);
//! - logging policies and the datasets they produce ([`policy`],
//!   [`pipeline`]);
//! - reward-model and counterfactual-sample-identification learners plus a
//!   smoothed importance-sampling policy-search baseline ([`glm`],
//!   [`learners`]);
//! - a benchmark harness comparing the learners across seeds and sample
//!   sizes, exposed as a library API and the `bench` binary ([`bench`]).

pub mod bench;
pub mod env;
pub mod error;
pub mod glm;
pub mod learners;
mod numeric;
pub mod pipeline;
pub mod policy;

pub use error::{Error, Result};
