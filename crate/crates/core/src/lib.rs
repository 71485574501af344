//! Satisficing ensemble Q-learning.
//!
//! Phase 1 trains a handful of small Q-networks whose bootstrapped targets
//! are clipped at a dynamic aspiration level. Phase 2 distills their average
//! into a larger student network and fine-tunes it with Double DQN.

pub mod baseline;
pub mod ensemble;
pub mod harness;
pub mod envs;
pub mod error;
pub mod numerics;
pub mod pipeline;
pub mod replay;
pub mod satcore;
pub mod theory;

pub use error::{Error, Result};
