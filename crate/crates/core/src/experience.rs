//! Replay storage and prior-pair construction.
//!
//! A transition carries both its observation and the successor observation,
//! so the state change `Δs_t` never spans an episode boundary. The reward
//! change `Δr_t = r_{t+1} − r_t` needs the *next* transition of the same
//! episode; transitions without one (episode ends, or the successor was
//! evicted) are not eligible for the reward-change pairs.

use std::io::{Read, Write};

use rand::Rng;

use crate::error::{Error, Result};
use crate::sim::{Action, Observation, Pose, Terminal, Truth};

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: Action,
    pub reward: f64,
    pub next_obs: Observation,
    pub terminal: Terminal,
    /// Ground truth after the step; analysis only.
    pub truth: Truth,
    pub episode: u64,
    pub step: u32,
}

/// Fixed-capacity FIFO ring.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    /// Physical slot of the oldest item once the ring is full.
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Appends a transition, evicting the oldest when full. Returns the
    /// physical slot written.
    pub fn push(&mut self, t: Transition) -> usize {
        if self.items.len() < self.capacity {
            self.items.push(t);
            self.items.len() - 1
        } else {
            let slot = self.head;
            self.items[slot] = t;
            self.head = (self.head + 1) % self.capacity;
            slot
        }
    }

    /// Physical slot of logical index `i` (0 = oldest).
    pub fn slot(&self, i: usize) -> usize {
        debug_assert!(i < self.items.len());
        if self.items.len() < self.capacity {
            i
        } else {
            (self.head + i) % self.capacity
        }
    }

    /// Logical access, 0 = oldest.
    pub fn get(&self, i: usize) -> Option<&Transition> {
        (i < self.items.len()).then(|| &self.items[self.slot(i)])
    }

    pub fn at_slot(&self, slot: usize) -> &Transition {
        &self.items[slot]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        (0..self.items.len()).map(move |i| &self.items[self.slot(i)])
    }

    /// Logical index of the follow-up transition in the same episode.
    pub fn successor(&self, i: usize) -> Option<usize> {
        let t = self.get(i)?;
        if t.terminal.is_end() {
            return None;
        }
        let n = self.get(i + 1)?;
        (n.episode == t.episode && n.step == t.step + 1).then_some(i + 1)
    }

    /// `Δr_i = r_{i+1} − r_i`, when the successor is present.
    pub fn reward_change(&self, i: usize) -> Option<f64> {
        let j = self.successor(i)?;
        Some(self.get(j)?.reward - self.get(i)?.reward)
    }

    /// Logical indices drawn uniformly with replacement. Only an empty
    /// buffer is rejected; `k` may exceed the buffer size.
    pub fn sample_indices<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<usize>> {
        if self.items.is_empty() {
            return Err(Error::Insufficient(format!("cannot sample {k} from an empty buffer")));
        }
        Ok((0..k).map(|_| rng.gen_range(0..self.items.len())).collect())
    }

    pub fn sample_uniform<R: Rng + ?Sized>(&self, k: usize, rng: &mut R) -> Result<Vec<&Transition>> {
        Ok(self
            .sample_indices(k, rng)?
            .into_iter()
            .map(|i| self.get(i).unwrap())
            .collect())
    }
}

/// Index sets for one prior-loss evaluation (logical buffer indices).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PriorBatch {
    /// Transitions for the temporal-coherence term.
    pub base: Vec<usize>,
    /// Pairs with similar reward-change magnitude.
    pub prop_pairs: Vec<(usize, usize)>,
    /// Pairs with different rewards.
    pub caus_pairs: Vec<(usize, usize)>,
}

impl PriorBatch {
    /// Every distinct transition index referenced by the batch, sorted.
    pub fn referenced(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self
            .base
            .iter()
            .copied()
            .chain(self.prop_pairs.iter().flat_map(|&(a, b)| [a, b]))
            .chain(self.caus_pairs.iter().flat_map(|&(a, b)| [a, b]))
            .collect();
        v.sort_unstable();
        v.dedup();
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairCriteria {
    /// Maximum `| |Δr₂| − |Δr₁| |` for a proportionality pair.
    pub delta_sim: f64,
    /// Minimum `|r₂ − r₁|` (exclusive) for a causality pair.
    pub delta_diff: f64,
}

impl PairCriteria {
    pub fn similar(&self, dr1: f64, dr2: f64) -> bool {
        (dr2.abs() - dr1.abs()).abs() <= self.delta_sim
    }

    pub fn different(&self, r1: f64, r2: f64) -> bool {
        (r2 - r1).abs() > self.delta_diff
    }
}

/// Attempts allowed per requested pair before giving up.
pub const PAIR_ATTEMPTS_PER_PAIR: usize = 50;

/// Mean `|r|` over non-terminal transitions; sets the scale of `δ_sim`.
pub fn shaping_scale(buffer: &ReplayBuffer) -> f64 {
    let (sum, n) = buffer
        .iter()
        .filter(|t| !t.terminal.is_absorbing())
        .fold((0.0, 0usize), |(s, n), t| (s + t.reward.abs(), n + 1));
    if n == 0 {
        1.0
    } else {
        sum / n as f64
    }
}

/// Draws a [`PriorBatch`] by rejection sampling with a budget of
/// `PAIR_ATTEMPTS_PER_PAIR · k_pairs` attempts per pair kind.
pub fn build_prior_batch<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    k_base: usize,
    k_pairs: usize,
    criteria: PairCriteria,
    rng: &mut R,
) -> Result<PriorBatch> {
    let eligible: Vec<usize> = (0..buffer.len()).filter(|&i| buffer.successor(i).is_some()).collect();
    if eligible.is_empty() {
        return Err(Error::Insufficient(
            "no transition in the buffer has an in-episode successor".into(),
        ));
    }
    let base = (0..k_base)
        .map(|_| eligible[rng.gen_range(0..eligible.len())])
        .collect();

    let budget = PAIR_ATTEMPTS_PER_PAIR * k_pairs;
    let mut prop_pairs = Vec::with_capacity(k_pairs);
    if eligible.len() >= 2 {
        let dr: Vec<f64> = eligible.iter().map(|&i| buffer.reward_change(i).unwrap()).collect();
        for _ in 0..budget {
            if prop_pairs.len() == k_pairs {
                break;
            }
            let a = rng.gen_range(0..eligible.len());
            let b = rng.gen_range(0..eligible.len());
            if a != b && criteria.similar(dr[a], dr[b]) {
                prop_pairs.push((eligible[a], eligible[b]));
            }
        }
    }

    let n = buffer.len();
    let mut caus_pairs = Vec::with_capacity(k_pairs);
    if n >= 2 {
        for _ in 0..budget {
            if caus_pairs.len() == k_pairs {
                break;
            }
            let a = rng.gen_range(0..n);
            let b = rng.gen_range(0..n);
            if a != b && criteria.different(buffer.get(a).unwrap().reward, buffer.get(b).unwrap().reward) {
                caus_pairs.push((a, b));
            }
        }
    }
    Ok(PriorBatch {
        base,
        prop_pairs,
        caus_pairs,
    })
}

// ---------------------------------------------------------------------------
// CSV snapshots

fn obs_columns(prefix: &str, n_beams: usize, n_px: usize, with_target: bool) -> Vec<String> {
    let mut cols: Vec<String> = (0..n_beams).map(|k| format!("{prefix}lidar_{k}")).collect();
    for j in 0..n_px {
        for ch in ["r", "g", "b"] {
            cols.push(format!("{prefix}cam_{j}_{ch}"));
        }
    }
    if with_target {
        cols.push(format!("{prefix}target_x"));
        cols.push(format!("{prefix}target_y"));
    }
    cols
}

const FIXED_COLUMNS: [&str; 11] = [
    "episode",
    "step",
    "action",
    "reward",
    "terminal",
    "x",
    "y",
    "theta",
    "distance",
    "orientation_error",
    "target_index",
];

/// Writes the whole buffer (oldest first) as one CSV row per transition.
pub fn write_buffer_csv<W: Write>(w: W, buffer: &ReplayBuffer) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = buffer.get(0) else {
        out.write_record(FIXED_COLUMNS)?;
        out.flush()?;
        return Ok(());
    };
    let n_beams = first.obs.lidar.len();
    let n_px = first.obs.camera.len() / 3;
    let with_target = first.obs.target.is_some();
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(obs_columns("o_", n_beams, n_px, with_target));
    header.extend(obs_columns("n_", n_beams, n_px, with_target));
    out.write_record(&header)?;
    for t in buffer.iter() {
        let mut row = vec![
            t.episode.to_string(),
            t.step.to_string(),
            t.action.index().to_string(),
            t.reward.to_string(),
            t.terminal.name().to_string(),
            t.truth.pose.x.to_string(),
            t.truth.pose.y.to_string(),
            t.truth.pose.theta.to_string(),
            t.truth.distance.to_string(),
            t.truth.orientation_error.to_string(),
            t.truth.target_index.to_string(),
        ];
        for o in [&t.obs, &t.next_obs] {
            if o.lidar.len() != n_beams || o.camera.len() != 3 * n_px || o.target.is_some() != with_target {
                return Err(Error::Contract("buffer mixes observation shapes".into()));
            }
            row.extend(o.flatten().iter().map(f64::to_string));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

fn parse_terminal(s: &str) -> Result<Terminal> {
    Ok(match s {
        "none" => Terminal::None,
        "reached" => Terminal::Reached,
        "crashed" => Terminal::Crashed,
        "timeout" => Terminal::Timeout,
        other => {
            return Err(Error::Format {
                what: "buffer csv",
                detail: format!("unknown terminal `{other}`"),
            })
        }
    })
}

/// Reads a snapshot written by [`write_buffer_csv`] into a buffer of the
/// given capacity.
pub fn read_buffer_csv<R: Read>(r: R, capacity: usize) -> Result<ReplayBuffer> {
    let bad = |d: String| Error::Format {
        what: "buffer csv",
        detail: d,
    };
    let mut rd = csv::Reader::from_reader(r);
    let header = rd.headers()?.clone();
    if header.len() < FIXED_COLUMNS.len() || header.iter().zip(FIXED_COLUMNS).any(|(a, b)| a != b) {
        return Err(bad("unexpected header".into()));
    }
    let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
    let n_beams = count("o_lidar_");
    let n_px = count("o_cam_") / 3;
    let with_target = header.iter().any(|h| h == "o_target_x");
    let obs_len = n_beams + 3 * n_px + if with_target { 2 } else { 0 };
    if header.len() != FIXED_COLUMNS.len() + 2 * obs_len {
        return Err(bad("observation columns do not line up".into()));
    }
    let mut buffer = ReplayBuffer::new(capacity);
    for rec in rd.records() {
        let rec = rec?;
        let num = |k: usize| -> Result<f64> {
            rec[k].parse::<f64>().map_err(|e| bad(format!("column {k}: {e}")))
        };
        let int = |k: usize| -> Result<u64> { rec[k].parse::<u64>().map_err(|e| bad(format!("column {k}: {e}"))) };
        let obs_at = |start: usize| -> Result<Observation> {
            let v = (start..start + obs_len).map(num).collect::<Result<Vec<f64>>>()?;
            Ok(Observation {
                lidar: v[..n_beams].to_vec(),
                camera: v[n_beams..n_beams + 3 * n_px].to_vec(),
                target: with_target.then(|| [v[obs_len - 2], v[obs_len - 1]]),
            })
        };
        let base = FIXED_COLUMNS.len();
        let action = Action::from_index(int(2)? as usize).ok_or_else(|| bad("bad action".into()))?;
        buffer.push(Transition {
            episode: int(0)?,
            step: int(1)? as u32,
            action,
            reward: num(3)?,
            terminal: parse_terminal(&rec[4])?,
            truth: Truth {
                pose: Pose {
                    x: num(5)?,
                    y: num(6)?,
                    theta: num(7)?,
                },
                distance: num(8)?,
                orientation_error: num(9)?,
                target_index: int(10)? as usize,
            },
            obs: obs_at(base)?,
            next_obs: obs_at(base + obs_len)?,
        });
    }
    Ok(buffer)
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn obs(v: f64) -> Observation {
        Observation {
            lidar: vec![v, v + 1.0],
            camera: vec![0.1, 0.2, v.fract().abs()],
            target: None,
        }
    }

    pub fn transition(episode: u64, step: u32, reward: f64, terminal: Terminal) -> Transition {
        Transition {
            obs: obs(step as f64),
            action: Action::Forward,
            reward,
            next_obs: obs(step as f64 + 1.0),
            terminal,
            truth: Truth {
                pose: Pose::new(1.0, 2.0, 0.5),
                distance: 1.5,
                orientation_error: 0.25,
                target_index: 0,
            },
            episode,
            step,
        }
    }

    /// One episode of the given rewards; the last step is terminal.
    pub fn episode(buffer: &mut ReplayBuffer, id: u64, rewards: &[f64]) {
        for (k, &r) in rewards.iter().enumerate() {
            let term = if k + 1 == rewards.len() { Terminal::Crashed } else { Terminal::None };
            buffer.push(transition(id, k as u32, r, term));
        }
    }
}
