use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::geometry::{normalize_angle, ray_segment, swept_circle_hits, Rgb, Vec2};
use super::layout::{LayoutId, WorldMap};
use crate::error::{Error, Result};
use crate::rng::{self, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    /// Heading in `(-π, π]`.
    pub theta: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: normalize_angle(theta),
        }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
}

impl Action {
    pub const ALL: [Action; 3] = [Action::Forward, Action::TurnLeft, Action::TurnRight];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        match self {
            Action::Forward => 0,
            Action::TurnLeft => 1,
            Action::TurnRight => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Action::Forward => "forward",
            Action::TurnLeft => "left",
            Action::TurnRight => "right",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Terminal {
    None,
    Reached,
    Crashed,
    Timeout,
}

impl Terminal {
    pub fn is_end(self) -> bool {
        self != Terminal::None
    }

    /// Whether the episode ended in an absorbing state. Timeouts are
    /// truncations, so value bootstrapping continues through them.
    pub fn is_absorbing(self) -> bool {
        matches!(self, Terminal::Reached | Terminal::Crashed)
    }

    pub fn name(self) -> &'static str {
        match self {
            Terminal::None => "none",
            Terminal::Reached => "reached",
            Terminal::Crashed => "crashed",
            Terminal::Timeout => "timeout",
        }
    }
}

/// Sensor reading. `camera` stores `n_px` RGB triples flattened left to
/// right.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub lidar: Vec<f64>,
    pub camera: Vec<f64>,
    pub target: Option<[f64; 2]>,
}

impl Observation {
    pub fn pixel(&self, j: usize) -> [f64; 3] {
        [self.camera[3 * j], self.camera[3 * j + 1], self.camera[3 * j + 2]]
    }

    /// Concatenated raw sensor vector (lidar, camera, then target if any).
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.lidar.len() + self.camera.len() + 2);
        v.extend_from_slice(&self.lidar);
        v.extend_from_slice(&self.camera);
        if let Some(t) = self.target {
            v.extend_from_slice(&t);
        }
        v
    }
}

/// Simulator ground truth. Only analysis and the ground-truth baseline read
/// this; learned encoders never see it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub pose: Pose,
    pub distance: f64,
    /// `|angle from heading to target|` in `[0, π]`.
    pub orientation_error: f64,
    pub target_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminal: Terminal,
    pub truth: Truth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Distance,
    Orientation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub layout: LayoutId,
    /// Optional layout file overriding `layout`.
    pub layout_file: Option<PathBuf>,
    pub reward: RewardKind,
    pub eta1: f64,
    pub eta2: f64,
    pub d_min: f64,
    pub r_reached: f64,
    pub r_crashed: f64,
    pub max_range: f64,
    pub n_beams: usize,
    pub n_px: usize,
    /// Camera field of view in degrees.
    pub fov_deg: f64,
    pub step_length: f64,
    /// Turn increment in degrees.
    pub turn_deg: f64,
    pub robot_radius: f64,
    pub max_steps: usize,
    pub multi_target: bool,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            layout: LayoutId::Env1,
            layout_file: None,
            reward: RewardKind::Distance,
            eta1: 0.5,
            eta2: 0.5,
            d_min: 0.25,
            r_reached: 100.0,
            r_crashed: -100.0,
            max_range: 5.0,
            n_beams: 36,
            n_px: 32,
            fov_deg: 60.0,
            step_length: 0.15,
            turn_deg: 15.0,
            robot_radius: 0.15,
            max_steps: 500,
            multi_target: false,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.eta1", self.eta1),
            ("env.eta2", self.eta2),
            ("env.d_min", self.d_min),
            ("env.max_range", self.max_range),
            ("env.step_length", self.step_length),
            ("env.turn_deg", self.turn_deg),
            ("env.fov_deg", self.fov_deg),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.robot_radius.is_finite() && self.robot_radius >= 0.0) {
            return Err(Error::Config("env.robot_radius must be non-negative".into()));
        }
        if self.max_steps == 0 || self.n_beams == 0 || self.n_px < 2 {
            return Err(Error::Config(
                "env.max_steps and env.n_beams must be > 0, env.n_px >= 2".into(),
            ));
        }
        if !self.r_reached.is_finite() || !self.r_crashed.is_finite() {
            return Err(Error::Config("terminal rewards must be finite".into()));
        }
        Ok(())
    }

    pub fn load_map(&self) -> Result<WorldMap> {
        let map = match &self.layout_file {
            Some(p) => WorldMap::load(p)?,
            None => WorldMap::builtin(self.layout),
        };
        map.validate(self.robot_radius)?;
        Ok(map)
    }

    /// Length of the raw observation vector.
    pub fn observation_len(&self) -> usize {
        self.n_beams + 3 * self.n_px + if self.multi_target { 2 } else { 0 }
    }
}

/// Distance-shaped reward: terminal bonuses, otherwise `1 − e^{η₁·d}`.
pub fn reward_distance(d: f64, terminal: Terminal, cfg: &EnvConfig) -> f64 {
    if d <= cfg.d_min {
        cfg.r_reached
    } else if terminal == Terminal::Crashed {
        cfg.r_crashed
    } else {
        1.0 - (cfg.eta1 * d).exp()
    }
}

/// Orientation-shaped reward: terminal bonuses, otherwise `1 − e^{η₂·θ}`
/// with `θ` the absolute heading error towards the target.
pub fn reward_orientation(theta_err: f64, d: f64, terminal: Terminal, cfg: &EnvConfig) -> f64 {
    if d <= cfg.d_min {
        cfg.r_reached
    } else if terminal == Terminal::Crashed {
        cfg.r_crashed
    } else {
        1.0 - (cfg.eta2 * theta_err).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    pub range: f64,
    pub color: Option<Rgb>,
    pub segment: Option<usize>,
}

/// Nearest wall hit along `direction` from `origin`, clamped to `max_range`.
pub fn ray_cast(map: &WorldMap, origin: Vec2, direction: f64, max_range: f64) -> RayHit {
    let dir = Vec2::from_angle(direction);
    let mut best: Option<(f64, usize)> = None;
    for (k, w) in map.walls.iter().enumerate() {
        if let Some(t) = ray_segment(origin, dir, w) {
            if best.is_none_or(|(bt, _)| t < bt) {
                best = Some((t, k));
            }
        }
    }
    match best {
        Some((t, k)) if t <= max_range => RayHit {
            range: t,
            color: Some(map.walls[k].color),
            segment: Some(k),
        },
        _ => RayHit {
            range: max_range,
            color: None,
            segment: None,
        },
    }
}

/// Beam `k` points at `theta + 2πk/n_beams`.
pub fn lidar_scan(map: &WorldMap, pose: &Pose, n_beams: usize, max_range: f64) -> Vec<f64> {
    (0..n_beams)
        .map(|k| lidar_angle(pose.theta, k, n_beams))
        .map(|a| ray_cast(map, pose.position(), a, max_range).range)
        .collect()
}

pub fn lidar_angle(theta: f64, k: usize, n_beams: usize) -> f64 {
    theta + 2.0 * PI * k as f64 / n_beams as f64
}

/// Pixel `j` (0 = leftmost) looks along `theta + fov/2 − j·fov/(n_px − 1)`.
pub fn camera_angle(theta: f64, j: usize, n_px: usize, fov: f64) -> f64 {
    theta + fov / 2.0 - j as f64 * fov / (n_px - 1) as f64
}

/// Color strip across the field of view; misses render black.
pub fn camera_render(map: &WorldMap, pose: &Pose, fov: f64, n_px: usize, max_range: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 * n_px);
    for j in 0..n_px {
        let hit = ray_cast(map, pose.position(), camera_angle(pose.theta, j, n_px, fov), max_range);
        out.extend_from_slice(&hit.color.unwrap_or(Rgb::BLACK).0);
    }
    out
}

/// Differential-drive robot in a [`WorldMap`] with an owned, seeded RNG.
#[derive(Debug, Clone)]
pub struct Env {
    cfg: EnvConfig,
    map: WorldMap,
    rng: Rng,
    pose: Pose,
    target: usize,
    steps: usize,
    finished: bool,
}

impl Env {
    pub fn new(cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        let map = cfg.load_map()?;
        Self::with_map(cfg, map)
    }

    pub fn with_map(cfg: EnvConfig, map: WorldMap) -> Result<Self> {
        cfg.validate()?;
        if map.targets.is_empty() {
            return Err(Error::Config("layout has no targets".into()));
        }
        let rng = rng::stream(cfg.seed, Stream::Env);
        let spawn = (map.spawn.min + map.spawn.max) * 0.5;
        Ok(Self {
            pose: Pose::new(spawn.x, spawn.y, 0.0),
            cfg,
            map,
            rng,
            target: 0,
            steps: 0,
            finished: true,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn map(&self) -> &WorldMap {
        &self.map
    }

    pub fn pose(&self) -> Pose {
        self.pose
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    pub fn target(&self) -> Vec2 {
        self.map.targets[self.target]
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Places the robot in the spawn region and, in multi-target mode, draws
    /// the active target uniformly.
    pub fn reset(&mut self) -> Observation {
        let s = self.map.spawn;
        let x = self.rng.gen_range(s.min.x..=s.max.x);
        let y = self.rng.gen_range(s.min.y..=s.max.y);
        let theta = self.rng.gen_range(s.theta[0]..=s.theta[1]);
        self.pose = Pose::new(x, y, theta);
        self.target = if self.cfg.multi_target {
            self.rng.gen_range(0..self.map.targets.len())
        } else {
            0
        };
        self.steps = 0;
        self.finished = false;
        self.observe()
    }

    /// Test and analysis hook: puts the robot at an explicit pose.
    pub fn place(&mut self, pose: Pose, target: usize) -> Result<Observation> {
        if target >= self.map.targets.len() {
            return Err(Error::Contract(format!("target index {target} out of range")));
        }
        self.pose = pose;
        self.target = target;
        self.steps = 0;
        self.finished = false;
        Ok(self.observe())
    }

    pub fn observe(&self) -> Observation {
        let fov = self.cfg.fov_deg.to_radians();
        Observation {
            lidar: lidar_scan(&self.map, &self.pose, self.cfg.n_beams, self.cfg.max_range),
            camera: camera_render(&self.map, &self.pose, fov, self.cfg.n_px, self.cfg.max_range),
            target: self.cfg.multi_target.then(|| {
                let t = self.target();
                [t.x, t.y]
            }),
        }
    }

    pub fn truth(&self) -> Truth {
        let t = self.target();
        let p = self.pose.position();
        let bearing = (t.y - p.y).atan2(t.x - p.x);
        Truth {
            pose: self.pose,
            distance: p.distance(t),
            orientation_error: normalize_angle(bearing - self.pose.theta).abs(),
            target_index: self.target,
        }
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult> {
        if self.finished {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        self.steps += 1;
        let turn = self.cfg.turn_deg.to_radians();
        let mut crashed = false;
        match action {
            Action::Forward => {
                let from = self.pose.position();
                let to = from + Vec2::from_angle(self.pose.theta) * self.cfg.step_length;
                crashed = !self.map.bounds.contains(to)
                    || self
                        .map
                        .walls
                        .iter()
                        .any(|w| swept_circle_hits(from, to, self.cfg.robot_radius, w));
                if !crashed {
                    self.pose.x = to.x;
                    self.pose.y = to.y;
                }
            }
            Action::TurnLeft => self.pose.theta = normalize_angle(self.pose.theta + turn),
            Action::TurnRight => self.pose.theta = normalize_angle(self.pose.theta - turn),
        }
        let truth = self.truth();
        let terminal = if crashed {
            Terminal::Crashed
        } else if truth.distance <= self.cfg.d_min {
            Terminal::Reached
        } else if self.steps >= self.cfg.max_steps {
            Terminal::Timeout
        } else {
            Terminal::None
        };
        let reward = match self.cfg.reward {
            RewardKind::Distance => reward_distance(truth.distance, terminal, &self.cfg),
            RewardKind::Orientation => {
                reward_orientation(truth.orientation_error, truth.distance, terminal, &self.cfg)
            }
        };
        self.finished = terminal.is_end();
        Ok(StepResult {
            observation: self.observe(),
            reward,
            terminal,
            truth,
        })
    }
}
