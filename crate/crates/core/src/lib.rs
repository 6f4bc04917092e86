//! State representation learning with reward-shaped priors.
//!
//! The crate bundles a small feed-forward network substrate ([`nn`]), a
//! deterministic 2D navigation world with raycast LiDAR and a color-strip
//! camera ([`sim`]), replay storage and prior-pair sampling
//! ([`experience`]), the two-branch encoder and its prior losses ([`srl`]),
//! Double DQN with the staggered encoder/policy schedule ([`rl`]),
//! representation diagnostics ([`analysis`]) and experiment orchestration
//! ([`experiment`]).

pub mod error;
pub mod nn;
pub mod rng;

pub use error::{Error, Result};
pub mod sim;
pub mod experience;
pub mod srl;
pub mod rl;
pub mod analysis;
pub mod experiment;
