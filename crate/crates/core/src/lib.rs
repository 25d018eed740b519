//! Collaborative multi-user reinforcement learning with low-rank rewards.
//!
//! Users share one episodic MDP and differ only in their rewards, which form
//! low-rank matrices across users. The crate synthesizes such instances, runs the
//! tabular and linear collaborative pipelines, and checks their outputs against
//! exact dynamic-programming oracles.

pub mod bench;
pub mod completion;
pub mod error;
pub mod instances;
pub mod linalg;
pub mod linear;
pub mod lowdisc;
pub mod mdp;
pub mod report;
pub mod reward_free;
pub mod rng;
pub mod rowwise;
pub mod tabular;

pub use error::{Error, Result};
