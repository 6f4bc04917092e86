//! Learned state encoder and the reward-shaped prior losses that train it.

mod priors;
mod statenet;
mod train;

pub use priors::{
    loss_causality, loss_proportionality, loss_repeatability, loss_temporal, StateGrad, TransitionStates, NORM_EPS,
};
pub use statenet::{EncodeCache, StateNet, StateNetGrads, StateNetOptimizer, StateNetShape};
pub use train::{total_loss, train_statenet, weighted_priors, LossBreakdown, PriorWeights, SrlConfig, TrainingReport};
