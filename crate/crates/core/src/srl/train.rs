use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experience::{build_prior_batch, shaping_scale, PairCriteria, PriorBatch, ReplayBuffer};
use crate::nn::Matrix;

use super::priors::{
    loss_causality, loss_proportionality, loss_repeatability, loss_temporal, StateGrad, TransitionStates,
};
use super::statenet::{StateNet, StateNetGrads, StateNetOptimizer};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorWeights {
    pub temporal: f64,
    pub proportionality: f64,
    pub causality: f64,
    pub repeatability: f64,
    pub regularization: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        Self {
            temporal: 3.0,
            proportionality: 15.0,
            causality: 15.0,
            repeatability: 15.0,
            regularization: 3.0,
        }
    }
}

impl PriorWeights {
    pub const ZERO: PriorWeights = PriorWeights {
        temporal: 0.0,
        proportionality: 0.0,
        causality: 0.0,
        repeatability: 0.0,
        regularization: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.temporal,
            self.proportionality,
            self.causality,
            self.repeatability,
            self.regularization,
        ];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!("prior weights must be finite and non-negative: {all:?}")));
        }
        Ok(())
    }
}

/// Per-component loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub temporal: f64,
    pub proportionality: f64,
    pub causality: f64,
    pub repeatability: f64,
    pub regularization: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn add_scaled(&mut self, o: &LossBreakdown, s: f64) {
        self.temporal += s * o.temporal;
        self.proportionality += s * o.proportionality;
        self.causality += s * o.causality;
        self.repeatability += s * o.repeatability;
        self.regularization += s * o.regularization;
        self.total += s * o.total;
    }
}

/// Encodes every transition referenced by `batch` (both `s_t` and `s_{t+1}`),
/// evaluates the weighted prior sum and backpropagates it into the encoder.
pub fn total_loss(
    net: &StateNet,
    buffer: &ReplayBuffer,
    batch: &PriorBatch,
    weights: &PriorWeights,
) -> Result<(LossBreakdown, StateNetGrads)> {
    weights.validate()?;
    let refs = batch.referenced();
    let mut transitions = Vec::with_capacity(refs.len());
    for &i in &refs {
        transitions.push(
            buffer
                .get(i)
                .ok_or_else(|| Error::Contract(format!("batch references index {i} beyond buffer length {}", buffer.len())))?,
        );
    }
    let row = |i: usize| refs.binary_search(&i).unwrap();
    let base: Vec<usize> = batch.base.iter().map(|&i| row(i)).collect();
    let prop: Vec<(usize, usize)> = batch.prop_pairs.iter().map(|&(a, b)| (row(a), row(b))).collect();
    let caus: Vec<(usize, usize)> = batch.caus_pairs.iter().map(|&(a, b)| (row(a), row(b))).collect();

    let (current, cache_t) = net.encode_batch(transitions.iter().map(|t| &t.obs))?;
    let (next, cache_t1) = net.encode_batch(transitions.iter().map(|t| &t.next_obs))?;
    let states = TransitionStates::new(current, next)?;
    let (loss, state_grad) = weighted_priors(&states, &base, &prop, &caus, weights)?;

    let mut grads = net.backward(&cache_t, &state_grad.current)?;
    grads.add_scaled(&net.backward(&cache_t1, &state_grad.next)?, 1.0)?;
    let (reg, reg_grads) = net.l2_penalty();
    grads.add_scaled(&reg_grads, weights.regularization)?;
    let loss = LossBreakdown {
        regularization: reg,
        total: loss.total + weights.regularization * reg,
        ..loss
    };
    Ok((loss, grads))
}

/// The four weighted prior terms on an already encoded table. The returned
/// breakdown has no regularization part.
pub fn weighted_priors(
    states: &TransitionStates,
    base: &[usize],
    prop: &[(usize, usize)],
    caus: &[(usize, usize)],
    w: &PriorWeights,
) -> Result<(LossBreakdown, StateGrad)> {
    let (l1, g1) = loss_temporal(states, base)?;
    let (l2, g2) = loss_proportionality(states, prop)?;
    let (l3, g3) = loss_causality(states, caus)?;
    let (l4, g4) = loss_repeatability(states, prop)?;
    let mut g = StateGrad {
        current: Matrix::zeros(states.len(), states.dim()),
        next: Matrix::zeros(states.len(), states.dim()),
    };
    for (gk, wk) in [(&g1, w.temporal), (&g2, w.proportionality), (&g3, w.causality), (&g4, w.repeatability)] {
        if wk != 0.0 {
            g.add_scaled(gk, wk)?;
        }
    }
    let total = w.temporal * l1 + w.proportionality * l2 + w.causality * l3 + w.repeatability * l4;
    Ok((
        LossBreakdown {
            temporal: l1,
            proportionality: l2,
            causality: l3,
            repeatability: l4,
            regularization: 0.0,
            total,
        },
        g,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SrlConfig {
    pub state_dim: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub k_base: usize,
    pub k_pairs: usize,
    /// An epoch is `⌈len / k_base⌉` steps, optionally capped.
    pub max_steps_per_epoch: Option<usize>,
    pub weights: PriorWeights,
    pub delta_diff: f64,
    /// Fixed `δ_sim`; when absent it is `delta_sim_fraction` times the
    /// buffer's mean |reward| over non-terminal transitions.
    pub delta_sim: Option<f64>,
    pub delta_sim_fraction: f64,
    pub lr: f64,
}

impl Default for SrlConfig {
    fn default() -> Self {
        Self {
            state_dim: 10,
            hidden: 64,
            epochs: 10,
            k_base: 256,
            k_pairs: 256,
            max_steps_per_epoch: None,
            weights: PriorWeights::default(),
            delta_diff: 0.01,
            delta_sim: None,
            delta_sim_fraction: 0.05,
            lr: 1e-3,
        }
    }
}

impl SrlConfig {
    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        if self.state_dim == 0 || self.hidden == 0 || self.k_base == 0 || self.max_steps_per_epoch == Some(0) {
            return Err(Error::Config(
                "srl.state_dim, srl.hidden, srl.k_base and srl.max_steps_per_epoch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("srl.lr must be positive, got {}", self.lr)));
        }
        if !(self.delta_diff >= 0.0) || !(self.delta_sim_fraction >= 0.0) || self.delta_sim.is_some_and(|d| !(d >= 0.0)) {
            return Err(Error::Config("srl thresholds must be non-negative".into()));
        }
        Ok(())
    }

    pub fn criteria(&self, buffer: &ReplayBuffer) -> PairCriteria {
        PairCriteria {
            delta_sim: self
                .delta_sim
                .unwrap_or_else(|| self.delta_sim_fraction * shaping_scale(buffer)),
            delta_diff: self.delta_diff,
        }
    }

    pub fn steps_per_epoch(&self, buffer_len: usize) -> usize {
        buffer_len
            .div_ceil(self.k_base)
            .clamp(1, self.max_steps_per_epoch.unwrap_or(usize::MAX))
    }
}

/// Mean component losses per epoch (values before each step's update).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingReport {
    pub epochs: Vec<LossBreakdown>,
}

impl TrainingReport {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["epoch", "L1", "L2", "L3", "L4", "L_reg", "total"])?;
        for (e, l) in self.epochs.iter().enumerate() {
            out.write_record(
                std::iter::once(e.to_string()).chain(
                    [l.temporal, l.proportionality, l.causality, l.repeatability, l.regularization, l.total]
                        .iter()
                        .map(|v| v.to_string()),
                ),
            )?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn train_statenet<R: Rng + ?Sized>(
    net: &mut StateNet,
    opt: &mut StateNetOptimizer,
    buffer: &ReplayBuffer,
    cfg: &SrlConfig,
    rng: &mut R,
) -> Result<TrainingReport> {
    cfg.validate()?;
    if buffer.is_empty() {
        return Err(Error::Insufficient("state net training needs a non-empty buffer".into()));
    }
    let criteria = cfg.criteria(buffer);
    let steps = cfg.steps_per_epoch(buffer.len());
    let mut report = TrainingReport::default();
    for _ in 0..cfg.epochs {
        let mut mean = LossBreakdown::default();
        for _ in 0..steps {
            let batch = build_prior_batch(buffer, cfg.k_base, cfg.k_pairs, criteria, rng)?;
            let (loss, grads) = total_loss(net, buffer, &batch, &cfg.weights)?;
            opt.step(net, &grads)?;
            mean.add_scaled(&loss, 1.0 / steps as f64);
        }
        report.epochs.push(mean);
    }
    Ok(report)
}
