//! Deterministic 2D navigation world: raycast LiDAR, raycast color-strip
//! camera, five built-in rooms and both shaped reward functions.

mod env;
pub mod geometry;
mod layout;

use std::io::Write;

pub use env::{
    camera_angle, camera_render, lidar_angle, lidar_scan, ray_cast, reward_distance,
    reward_orientation, Action, Env, EnvConfig, Observation, Pose, RayHit, RewardKind,
    StepResult, Terminal, Truth,
};
pub use geometry::{normalize_angle, Rgb, Segment, Vec2};
pub use layout::{Bounds, LayoutId, SpawnRegion, WorldMap};

use crate::error::Result;

/// One row of a trajectory dump.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub pose: Pose,
    pub action: Option<Action>,
    pub reward: f64,
    pub terminal: Terminal,
}

/// Writes `step,x,y,theta,action,reward,terminal` rows. Row 0 is the reset
/// pose with an empty action.
pub fn write_trajectory_csv<W: Write>(w: W, rows: &[TrajectoryRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["step", "x", "y", "theta", "action", "reward", "terminal"])?;
    for r in rows {
        out.write_record([
            r.step.to_string(),
            r.pose.x.to_string(),
            r.pose.y.to_string(),
            r.pose.theta.to_string(),
            r.action.map_or("", Action::name).to_string(),
            r.reward.to_string(),
            r.terminal.name().to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Rolls out `actions` from a fresh reset, stopping at the first terminal.
pub fn rollout(env: &mut Env, actions: &[Action]) -> Result<Vec<TrajectoryRow>> {
    env.reset();
    let mut rows = vec![TrajectoryRow {
        step: 0,
        pose: env.pose(),
        action: None,
        reward: 0.0,
        terminal: Terminal::None,
    }];
    for (k, &a) in actions.iter().enumerate() {
        let r = env.step(a)?;
        rows.push(TrajectoryRow {
            step: k + 1,
            pose: r.truth.pose,
            action: Some(a),
            reward: r.reward,
            terminal: r.terminal,
        });
        if r.terminal.is_end() {
            break;
        }
    }
    Ok(rows)
}
