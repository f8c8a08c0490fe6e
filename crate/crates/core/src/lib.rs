//! Training core for structured hateful-meme classification with private
//! reasoning traces.
//!
//! Everything in this crate is pure computation over in-memory data and builds
//! without `std` (an allocator is required). File formats, model-service
//! clients and the command line live in the `thinkguard` crate.
//!
//! The pipeline is two-stage: supervised warm-up on structured targets
//! ([`trainer::sft`]) followed by group relative policy optimization
//! ([`trainer::grpo`]) against the composite reward in [`rewards`]. The policy
//! ([`policy::ToyPolicy`]) is a feature-based softmax model small enough that
//! every gradient can be checked against finite differences.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod corpus;
pub mod metrics;
pub mod policy;
pub mod rewards;
pub mod rng;
pub mod structured;
pub mod trainer;

pub use corpus::{Label, MemeRecord, Split};
pub use structured::{FormatReport, StructuredOutput};
