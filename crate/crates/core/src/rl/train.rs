use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{ReplayBuffer, Transition};
use crate::nn::{Adam, AdamConfig, Matrix};
use crate::rng::{self, Stream};
use crate::sim::{Env, Observation, Terminal, Truth};
use crate::srl::{train_statenet, SrlConfig, StateNet, StateNetOptimizer, StateNetShape, TrainingReport};

use super::log::TrainingLog;
use super::qnet::{ddqn_update, greedy, select_action, sync_target, QNet, TdBatch};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Multiplicative decay applied after every episode outside a hold.
    pub eps_decay: f64,
    /// Episodes during which ε stays fixed after a State-Net update.
    pub eps_hold: usize,
    pub sync_period: usize,
    pub batch_size: usize,
    pub warmup: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    pub replay_capacity: usize,
    /// Episode indices (0-based, counted before the episode starts) at which
    /// the State-Net is retrained.
    pub statenet_updates: Vec<usize>,
    /// Window for the rolling crash ratio in the log.
    pub log_window: usize,
    /// Save checkpoints every this many episodes; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            episodes: 1200,
            gamma: 0.99,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay: 0.995,
            eps_hold: 20,
            sync_period: 500,
            batch_size: 64,
            warmup: 1000,
            lr: 1e-3,
            hidden: vec![64, 64],
            replay_capacity: 50_000,
            statenet_updates: vec![200, 400],
            log_window: 100,
            checkpoint_every: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.into()));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("rl.gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eps_start) || !(0.0..=1.0).contains(&self.eps_end) || self.eps_end > self.eps_start {
            return bad("rl.eps_start and rl.eps_end must satisfy 0 <= eps_end <= eps_start <= 1");
        }
        if !(self.eps_decay > 0.0 && self.eps_decay <= 1.0) {
            return bad("rl.eps_decay must lie in (0, 1]");
        }
        if self.sync_period == 0 || self.batch_size == 0 || self.replay_capacity == 0 || self.log_window == 0 {
            return bad("rl.sync_period, rl.batch_size, rl.replay_capacity and rl.log_window must be positive");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("rl.lr must be positive");
        }
        if self.hidden.contains(&0) {
            return bad("rl.hidden widths must be positive");
        }
        Ok(())
    }
}

/// ε-greedy exploration rate with hold windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonSchedule {
    value: f64,
    end: f64,
    decay: f64,
    hold_left: usize,
}

impl EpsilonSchedule {
    pub fn new(cfg: &AgentConfig) -> Self {
        Self {
            value: cfg.eps_start,
            end: cfg.eps_end,
            decay: cfg.eps_decay,
            hold_left: 0,
        }
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn is_holding(&self) -> bool {
        self.hold_left > 0
    }

    /// Freezes ε for the next `episodes` episode ends.
    pub fn hold(&mut self, episodes: usize) {
        self.hold_left = episodes;
    }

    pub fn end_episode(&mut self) {
        if self.hold_left > 0 {
            self.hold_left -= 1;
        } else {
            self.value = (self.value * self.decay).max(self.end);
        }
    }
}

/// What the Q-Net sees as the state.
#[derive(Debug, Clone, PartialEq)]
pub enum StateSource {
    /// Simulator pose and target distance `(x, y, θ, d)`, plus the target
    /// coordinates in multi-target mode.
    GroundTruth,
    /// Concatenated raw lidar and camera readings.
    Observation,
    Learned(StateNet),
}

impl StateSource {
    pub fn name(&self) -> &'static str {
        match self {
            StateSource::GroundTruth => "ground_truth",
            StateSource::Observation => "observation",
            StateSource::Learned(_) => "srl",
        }
    }

    pub fn dim(&self, env: &Env) -> usize {
        let cfg = env.config();
        match self {
            StateSource::GroundTruth => 4 + if cfg.multi_target { 2 } else { 0 },
            StateSource::Observation => cfg.observation_len(),
            StateSource::Learned(net) => net.state_dim(),
        }
    }

    pub fn state(&self, obs: &Observation, truth: &Truth) -> Result<Vec<f64>> {
        match self {
            StateSource::GroundTruth => {
                let p = truth.pose;
                let mut v = vec![p.x, p.y, p.theta, truth.distance];
                if let Some(t) = obs.target {
                    v.extend_from_slice(&t);
                }
                Ok(v)
            }
            StateSource::Observation => Ok(obs.flatten()),
            StateSource::Learned(net) => net.encode(obs),
        }
    }

    pub fn statenet(&self) -> Option<&StateNet> {
        match self {
            StateSource::Learned(n) => Some(n),
            _ => None,
        }
    }
}

/// Fresh encoder sized for `env`.
pub fn new_statenet(env: &Env, srl: &SrlConfig, seed: u64) -> Result<StateNet> {
    let cfg = env.config();
    StateNet::new(
        StateNetShape {
            n_beams: cfg.n_beams,
            n_px: cfg.n_px,
            hidden: srl.hidden,
            state_dim: srl.state_dim,
            multi_target: cfg.multi_target,
        },
        &mut rng::stream(seed, Stream::Init),
    )
}

/// Encoded `(s_t, s_{t+1})` per physical buffer slot. Rebuilt in full
/// whenever the encoder changes.
#[derive(Debug, Clone)]
struct StateCache {
    dim: usize,
    current: Vec<f64>,
    next: Vec<f64>,
}

impl StateCache {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            current: Vec::new(),
            next: Vec::new(),
        }
    }

    fn put(&mut self, slot: usize, s: &[f64], s_next: &[f64]) {
        let at = slot * self.dim;
        if at == self.current.len() {
            self.current.extend_from_slice(s);
            self.next.extend_from_slice(s_next);
        } else {
            self.current[at..at + self.dim].copy_from_slice(s);
            self.next[at..at + self.dim].copy_from_slice(s_next);
        }
    }

    fn row(v: &[f64], slot: usize, dim: usize) -> &[f64] {
        &v[slot * dim..(slot + 1) * dim]
    }

    fn reencode(&mut self, net: &StateNet, buffer: &ReplayBuffer) -> Result<()> {
        for i in 0..buffer.len() {
            let slot = buffer.slot(i);
            let t = buffer.at_slot(slot);
            let s = net.encode(&t.obs)?;
            let s_next = net.encode(&t.next_obs)?;
            self.put(slot, &s, &s_next);
        }
        Ok(())
    }

    fn batch(&self, buffer: &ReplayBuffer, idx: &[usize]) -> Result<TdBatch> {
        let d = self.dim;
        let mut states = Matrix::zeros(idx.len(), d);
        let mut next_states = Matrix::zeros(idx.len(), d);
        let mut actions = Vec::with_capacity(idx.len());
        let mut rewards = Vec::with_capacity(idx.len());
        let mut done = Vec::with_capacity(idx.len());
        for (b, &i) in idx.iter().enumerate() {
            let slot = buffer.slot(i);
            let t = buffer.at_slot(slot);
            states.row_mut(b).copy_from_slice(Self::row(&self.current, slot, d));
            next_states.row_mut(b).copy_from_slice(Self::row(&self.next, slot, d));
            actions.push(t.action.index());
            rewards.push(t.reward);
            done.push(t.terminal.is_absorbing());
        }
        Ok(TdBatch {
            states,
            actions,
            rewards,
            next_states,
            done,
        })
    }
}

/// Periodic snapshot callback: `(episodes completed, online Q-Net, encoder)`.
pub type CheckpointHook<'a> = dyn FnMut(usize, &QNet, Option<&StateNet>) -> Result<()> + 'a;

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub qnet: QNet,
    pub source: StateSource,
    pub log: TrainingLog,
    /// `(episode index, report)` per State-Net update.
    pub srl_reports: Vec<(usize, TrainingReport)>,
    pub total_steps: u64,
}

/// Staggered SRL + RL training. The environment supplies its own stream;
/// `seed` feeds exploration, replay sampling and initialization.
pub fn run_training(
    env: &mut Env,
    source: StateSource,
    cfg: &AgentConfig,
    srl: &SrlConfig,
    seed: u64,
    mut checkpoint: Option<&mut CheckpointHook<'_>>,
) -> Result<TrainingOutcome> {
    cfg.validate()?;
    if matches!(source, StateSource::Learned(_)) {
        srl.validate()?;
    }
    let mut explore = rng::stream(seed, Stream::Exploration);
    let mut sampling = rng::stream(seed, Stream::Sampling);
    let mut init = rng::stream(seed, Stream::Init);
    // keep Q-Net initialization independent of whether an encoder was drawn
    init.set_word_pos(1 << 40);

    let mut source = source;
    let dim = source.dim(env);
    let mut qnet = QNet::new(dim, &cfg.hidden, &mut init)?;
    let mut target = qnet.clone();
    let mut opt = Adam::new(&qnet.net, AdamConfig::with_lr(cfg.lr));
    let mut srl_opt = source
        .statenet()
        .map(|n| StateNetOptimizer::new(n, AdamConfig::with_lr(srl.lr)));
    let mut buffer = ReplayBuffer::new(cfg.replay_capacity);
    let mut cache = StateCache::new(dim);
    let mut eps = EpsilonSchedule::new(cfg);
    let mut log = TrainingLog::new(cfg.log_window);
    let mut srl_reports = Vec::new();
    let mut total_steps = 0u64;

    for episode in 0..cfg.episodes {
        if cfg.statenet_updates.contains(&episode) {
            if let (StateSource::Learned(net), Some(opt)) = (&mut source, srl_opt.as_mut()) {
                if !buffer.is_empty() {
                    let report = train_statenet(net, opt, &buffer, srl, &mut sampling)?;
                    srl_reports.push((episode, report));
                    cache.reencode(net, &buffer)?;
                    eps.hold(cfg.eps_hold);
                }
            }
        }

        let mut obs = env.reset();
        let mut s = source.state(&obs, &env.truth())?;
        let mut ret = 0.0;
        let mut discount = 1.0;
        let mut steps = 0u32;
        let terminal = loop {
            let action = select_action(&qnet, &s, eps.value(), &mut explore)?;
            let res = env.step(action)?;
            let s_next = source.state(&res.observation, &res.truth)?;
            let slot = buffer.push(Transition {
                obs,
                action,
                reward: res.reward,
                next_obs: res.observation.clone(),
                terminal: res.terminal,
                truth: res.truth,
                episode: episode as u64,
                step: steps,
            });
            cache.put(slot, &s, &s_next);
            ret += discount * res.reward;
            discount *= cfg.gamma;
            steps += 1;
            total_steps += 1;

            if buffer.len() >= cfg.warmup.max(1) {
                let idx = buffer.sample_indices(cfg.batch_size, &mut sampling)?;
                let batch = cache.batch(&buffer, &idx)?;
                ddqn_update(&mut qnet, &target, &batch, cfg.gamma, &mut opt)?;
            }
            if total_steps.is_multiple_of(cfg.sync_period as u64) {
                sync_target(&qnet, &mut target)?;
            }
            if res.terminal.is_end() {
                break res.terminal;
            }
            obs = res.observation;
            s = s_next;
        };
        log.push(ret, steps, terminal, eps.value());
        eps.end_episode();

        if cfg.checkpoint_every > 0 && (episode + 1) % cfg.checkpoint_every == 0 {
            if let Some(hook) = checkpoint.as_mut() {
                hook(episode + 1, &qnet, source.statenet())?;
            }
        }
    }

    Ok(TrainingOutcome {
        qnet,
        source,
        log,
        srl_reports,
        total_steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EvalSummary {
    pub episodes: usize,
    pub success_rate: f64,
    pub crash_ratio: f64,
    pub mean_return: f64,
}

/// Greedy rollouts.
pub fn evaluate(env: &mut Env, source: &StateSource, qnet: &QNet, episodes: usize, gamma: f64) -> Result<EvalSummary> {
    let (mut reached, mut crashed, mut total) = (0usize, 0usize, 0.0);
    for _ in 0..episodes {
        let obs = env.reset();
        let mut s = source.state(&obs, &env.truth())?;
        let mut ret = 0.0;
        let mut discount = 1.0;
        loop {
            let a = crate::sim::Action::from_index(greedy(&qnet.q_values(&s)?)).unwrap();
            let res = env.step(a)?;
            ret += discount * res.reward;
            discount *= gamma;
            match res.terminal {
                Terminal::None => s = source.state(&res.observation, &res.truth)?,
                Terminal::Reached => {
                    reached += 1;
                    break;
                }
                Terminal::Crashed => {
                    crashed += 1;
                    break;
                }
                Terminal::Timeout => break,
            }
        }
        total += ret;
    }
    let n = episodes.max(1) as f64;
    Ok(EvalSummary {
        episodes,
        success_rate: reached as f64 / n,
        crash_ratio: crashed as f64 / n,
        mean_return: total / n,
    })
}

/// `Σ γᵗ r_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::EnvConfig;
    use proptest::prelude::*;

    #[test]
    fn discounted_return_examples() {
        assert!((discounted_return(&[0.0, 0.0, 100.0], 0.99) - 98.01).abs() < 1e-9);
        assert_eq!(discounted_return(&[7.0, 3.0, 1.0], 0.0), 7.0);
    }

    #[test]
    fn schedule_decays_to_floor_and_holds() {
        let cfg = AgentConfig::default();
        let mut e = EpsilonSchedule::new(&cfg);
        e.end_episode();
        assert_eq!(e.value(), 0.995);
        e.hold(3);
        for _ in 0..3 {
            e.end_episode();
            assert_eq!(e.value(), 0.995);
        }
        e.end_episode();
        assert!(e.value() < 0.995);
        for _ in 0..2000 {
            e.end_episode();
        }
        assert_eq!(e.value(), 0.05);
    }

    proptest! {
        #[test]
        fn epsilon_never_increases(holds in prop::collection::vec((0usize..300, 0usize..40), 0..5)) {
            let cfg = AgentConfig::default();
            let mut e = EpsilonSchedule::new(&cfg);
            let mut prev = e.value();
            for ep in 0..600 {
                if let Some(&(_, len)) = holds.iter().find(|(at, _)| *at == ep) {
                    e.hold(len);
                }
                let holding = e.is_holding();
                e.end_episode();
                prop_assert!(e.value() <= prev);
                prop_assert!((0.0..=1.0).contains(&e.value()));
                if holding {
                    prop_assert_eq!(e.value().to_bits(), prev.to_bits());
                }
                prev = e.value();
            }
        }
    }

    fn small_env(seed: u64) -> Env {
        Env::new(EnvConfig {
            seed,
            max_steps: 60,
            n_beams: 8,
            n_px: 4,
            ..EnvConfig::default()
        })
        .unwrap()
    }

    fn small_agent(updates: Vec<usize>) -> AgentConfig {
        AgentConfig {
            episodes: 12,
            warmup: 50,
            batch_size: 8,
            sync_period: 20,
            hidden: vec![8],
            statenet_updates: updates,
            eps_hold: 3,
            ..AgentConfig::default()
        }
    }

    fn small_srl() -> SrlConfig {
        SrlConfig {
            state_dim: 3,
            hidden: 6,
            epochs: 2,
            k_base: 16,
            k_pairs: 16,
            max_steps_per_epoch: Some(2),
            ..SrlConfig::default()
        }
    }

    fn learned(env: &Env) -> StateSource {
        StateSource::Learned(new_statenet(env, &small_srl(), 1).unwrap())
    }

    #[test]
    fn statenet_trains_exactly_at_listed_episodes() {
        let mut env = small_env(0);
        let src = learned(&env);
        let out = run_training(&mut env, src, &small_agent(vec![4, 8]), &small_srl(), 1, None).unwrap();
        let at: Vec<usize> = out.srl_reports.iter().map(|(e, _)| *e).collect();
        assert_eq!(at, vec![4, 8]);
        // ε is frozen for the hold after each update
        let eps: Vec<f64> = out.log.episodes.iter().map(|e| e.epsilon).collect();
        assert_eq!(eps[4], eps[5]);
        assert_eq!(eps[5], eps[7]);
        assert!(eps[8] < eps[7]);
    }

    #[test]
    fn empty_update_list_leaves_encoder_untouched() {
        let mut env = small_env(0);
        let src = learned(&env);
        let before = src.clone();
        let out = run_training(&mut env, src, &small_agent(vec![]), &small_srl(), 1, None).unwrap();
        assert!(out.srl_reports.is_empty());
        assert_eq!(out.source, before);
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut env = small_env(3);
            let src = learned(&env);
            run_training(&mut env, src, &small_agent(vec![5]), &small_srl(), 9, None).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.log, b.log);
        assert_eq!(a.qnet, b.qnet);
    }

    #[test]
    fn checkpoint_hook_fires_on_schedule() {
        let mut env = small_env(0);
        let mut seen = Vec::new();
        let mut hook = |e: usize, _: &QNet, s: Option<&StateNet>| {
            assert!(s.is_none());
            seen.push(e);
            Ok(())
        };
        let cfg = AgentConfig {
            checkpoint_every: 5,
            ..small_agent(vec![])
        };
        run_training(&mut env, StateSource::GroundTruth, &cfg, &small_srl(), 0, Some(&mut hook)).unwrap();
        assert_eq!(seen, vec![5, 10]);
    }

    #[test]
    fn evaluation_counts_outcomes() {
        // a Q-Net that always drives forward ends every episode in a wall
        // or at the target
        let mut env = small_env(2);
        let mut q = QNet::new(4, &[4], &mut rng::stream(0, Stream::Init)).unwrap();
        for l in q.net.layers_mut() {
            l.weights.data_mut().fill(0.0);
            l.biases.fill(0.0);
        }
        q.net.layers_mut()[1].biases[0] = 1.0;
        let s = evaluate(&mut env, &StateSource::GroundTruth, &q, 20, 0.99).unwrap();
        assert!((s.success_rate + s.crash_ratio - 1.0).abs() < 1e-12);
        assert!(s.crash_ratio > 0.0);
    }

    #[test]
    fn ground_truth_state_layout() {
        let mut env = small_env(0);
        let obs = env.reset();
        let t = env.truth();
        let s = StateSource::GroundTruth.state(&obs, &t).unwrap();
        assert_eq!(s, vec![t.pose.x, t.pose.y, t.pose.theta, t.distance]);
        assert_eq!(StateSource::Observation.state(&obs, &t).unwrap().len(), 8 + 12);
    }
}
