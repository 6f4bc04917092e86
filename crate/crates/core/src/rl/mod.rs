//! Double DQN over a pluggable state source, with the staggered encoder
//! update schedule.

mod log;
mod qnet;
mod train;

pub use log::{EpisodeRecord, TrainingLog};
pub use qnet::{ddqn_update, greedy, select_action, sync_target, td_loss, td_targets, QNet, TdBatch};
pub use train::{
    discounted_return, evaluate, new_statenet, run_training, AgentConfig, CheckpointHook, EpsilonSchedule,
    EvalSummary, StateSource, TrainingOutcome,
};
