//! Diagnostics for learned representations: principal components, their
//! correlation with the simulator's ground truth, and clustering statistics.

mod pca;

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Matrix;
use crate::rl::{select_action, QNet, StateSource};
use crate::sim::{Action, Env, Truth};

pub use pca::{count_components, pca, symmetric_eigen, PcaResult};

/// One encoded state with the simulator truth at that moment.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample {
    pub state: Vec<f64>,
    pub truth: Truth,
    /// Reward received on the step that produced this state.
    pub reward: f64,
}

/// Rolls out ε-greedy episodes under `qnet` (uniform random actions when
/// absent) and records one sample per step.
pub fn collect_states<R: Rng + ?Sized>(
    env: &mut Env,
    source: &StateSource,
    qnet: Option<&QNet>,
    n_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Vec<StateSample>> {
    Ok(collect(env, source, qnet, n_samples, epsilon, rng, false)?.0)
}

/// Like [`collect_states`], also returning the same steps with the raw
/// concatenated observation as the state.
pub fn collect_states_with_raw<R: Rng + ?Sized>(
    env: &mut Env,
    source: &StateSource,
    qnet: Option<&QNet>,
    n_samples: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<(Vec<StateSample>, Vec<StateSample>)> {
    collect(env, source, qnet, n_samples, epsilon, rng, true)
}

fn collect<R: Rng + ?Sized>(
    env: &mut Env,
    source: &StateSource,
    qnet: Option<&QNet>,
    n_samples: usize,
    epsilon: f64,
    rng: &mut R,
    keep_raw: bool,
) -> Result<(Vec<StateSample>, Vec<StateSample>)> {
    let mut out = Vec::with_capacity(n_samples);
    let mut raw = Vec::with_capacity(if keep_raw { n_samples } else { 0 });
    while out.len() < n_samples {
        let obs = env.reset();
        let mut s = source.state(&obs, &env.truth())?;
        loop {
            let action = match qnet {
                Some(q) => select_action(q, &s, epsilon, rng)?,
                None => Action::ALL[rng.gen_range(0..Action::COUNT)],
            };
            let res = env.step(action)?;
            s = source.state(&res.observation, &res.truth)?;
            if keep_raw {
                raw.push(StateSample {
                    state: res.observation.flatten(),
                    truth: res.truth,
                    reward: res.reward,
                });
            }
            out.push(StateSample {
                state: s.clone(),
                truth: res.truth,
                reward: res.reward,
            });
            if out.len() == n_samples || res.terminal.is_end() {
                break;
            }
        }
    }
    Ok((out, raw))
}

pub fn state_matrix(samples: &[StateSample]) -> Result<Matrix> {
    if samples.is_empty() {
        return Err(Error::Insufficient("no samples".into()));
    }
    Matrix::from_rows(&samples.iter().map(|s| s.state.as_slice()).collect::<Vec<_>>())
}

pub fn write_samples_csv<W: Write>(w: W, samples: &[StateSample]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let dim = samples.first().map_or(0, |s| s.state.len());
    let mut header: Vec<String> = (0..dim).map(|k| format!("s_{k}")).collect();
    header.extend(
        ["x", "y", "theta", "distance", "orientation_error", "target_index", "reward"]
            .iter()
            .map(|s| s.to_string()),
    );
    out.write_record(&header)?;
    for s in samples {
        let t = &s.truth;
        let mut row: Vec<String> = s.state.iter().map(|v| v.to_string()).collect();
        row.extend([
            t.pose.x.to_string(),
            t.pose.y.to_string(),
            t.pose.theta.to_string(),
            t.distance.to_string(),
            t.orientation_error.to_string(),
            t.target_index.to_string(),
            s.reward.to_string(),
        ]);
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Ground-truth channels correlated against component scores.
pub const TRUTH_CHANNELS: [&str; 4] = ["x", "y", "theta", "distance"];

fn channel(t: &Truth, c: usize) -> f64 {
    match c {
        0 => t.pose.x,
        1 => t.pose.y,
        2 => t.pose.theta,
        _ => t.distance,
    }
}

/// Pearson coefficient, or `None` when either side has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationTable {
    /// `components × 4`, channels in [`TRUTH_CHANNELS`] order.
    pub r: Matrix,
    /// Entries reported as 0 because one side had zero variance.
    pub degenerate: Vec<bool>,
}

impl CorrelationTable {
    pub fn get(&self, component: usize, channel: usize) -> f64 {
        self.r.get(component, channel)
    }

    /// Largest `|r|` of any component against `channel`.
    pub fn max_abs(&self, channel: usize) -> f64 {
        (0..self.r.rows()).map(|k| self.r.get(k, channel).abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["component".to_string()];
        header.extend(TRUTH_CHANNELS.iter().map(|c| format!("r_{c}")));
        header.push("degenerate".into());
        out.write_record(&header)?;
        let c = TRUTH_CHANNELS.len();
        for k in 0..self.r.rows() {
            let mut row = vec![k.to_string()];
            row.extend(self.r.row(k).iter().map(|v| v.to_string()));
            row.push(self.degenerate[k * c..(k + 1) * c].iter().any(|&d| d).to_string());
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pearson `r` between every component's scores and each truth channel.
pub fn correlation_table(p: &PcaResult, samples: &[StateSample]) -> Result<CorrelationTable> {
    if samples.len() < 3 {
        return Err(Error::Insufficient(format!("correlation needs at least 3 samples, got {}", samples.len())));
    }
    if p.scores.rows() != samples.len() {
        return Err(Error::Shape {
            context: "correlation_table samples",
            expected: p.scores.rows(),
            got: samples.len(),
        });
    }
    let comps = p.dim();
    let c = TRUTH_CHANNELS.len();
    let mut r = Matrix::zeros(comps, c);
    let mut degenerate = vec![false; comps * c];
    let truth: Vec<Vec<f64>> = (0..c)
        .map(|ch| samples.iter().map(|s| channel(&s.truth, ch)).collect())
        .collect();
    for k in 0..comps {
        let scores: Vec<f64> = (0..samples.len()).map(|b| p.scores.get(b, k)).collect();
        for (ch, t) in truth.iter().enumerate() {
            match pearson(&scores, t) {
                Some(v) => r.set(k, ch, v),
                None => degenerate[k * c + ch] = true,
            }
        }
    }
    Ok(CorrelationTable { r, degenerate })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterKey {
    Distance,
    Orientation,
}

impl ClusterKey {
    pub fn name(self) -> &'static str {
        match self {
            ClusterKey::Distance => "distance",
            ClusterKey::Orientation => "orientation",
        }
    }

    pub fn value(self, t: &Truth) -> f64 {
        match self {
            ClusterKey::Distance => t.distance,
            ClusterKey::Orientation => t.orientation_error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Clustering {
    /// Mean state distance over pairs in the same bin.
    pub intra: f64,
    /// Mean state distance over pairs in different bins.
    pub inter: f64,
    pub ratio: f64,
    pub occupied_bins: usize,
    /// Some equal-width bins were empty and absorbed by a neighbor.
    pub merged: bool,
}

/// Bins samples by `key` into `n_bins` equal-width bins over the observed
/// range and compares within-bin to between-bin state distances.
pub fn reward_bin_clustering(samples: &[StateSample], n_bins: usize, key: ClusterKey) -> Result<Clustering> {
    if n_bins < 2 {
        return Err(Error::Contract("clustering needs at least 2 bins".into()));
    }
    let keys: Vec<f64> = samples.iter().map(|s| key.value(&s.truth)).collect();
    let lo = keys.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = keys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if samples.len() < 2 || !(hi > lo) {
        return Err(Error::Insufficient(format!(
            "{} key spans a single bin; between-bin distance is undefined",
            key.name()
        )));
    }
    let bins: Vec<usize> = keys
        .iter()
        .map(|k| (((k - lo) / (hi - lo)) * n_bins as f64).floor().min((n_bins - 1) as f64) as usize)
        .collect();
    let mut counts = vec![0usize; n_bins];
    for &b in &bins {
        counts[b] += 1;
    }
    let occupied = counts.iter().filter(|&&c| c > 0).count();
    let (mut intra, mut n_intra, mut inter, mut n_inter) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..samples.len() {
        let si = &samples[i].state;
        for j in i + 1..samples.len() {
            let d = si
                .iter()
                .zip(&samples[j].state)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if bins[i] == bins[j] {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    if n_intra == 0 {
        return Err(Error::Insufficient("no bin holds two samples".into()));
    }
    let (intra, inter) = (intra / n_intra as f64, inter / n_inter as f64);
    Ok(Clustering {
        intra,
        inter,
        ratio: if inter > 0.0 { intra / inter } else { f64::INFINITY },
        occupied_bins: occupied,
        merged: occupied < n_bins,
    })
}

/// Mean between-target centroid distance over mean within-target spread,
/// grouping by `labels`.
pub fn separation_by(states: &[&[f64]], labels: &[usize]) -> Result<f64> {
    let groups = labels.iter().copied().max().map_or(0, |m| m + 1);
    let dim = states.first().map_or(0, |s| s.len());
    let mut sums = vec![vec![0.0; dim]; groups];
    let mut counts = vec![0usize; groups];
    for (s, &l) in states.iter().zip(labels) {
        counts[l] += 1;
        for (a, b) in sums[l].iter_mut().zip(s.iter()) {
            *a += b;
        }
    }
    let present: Vec<usize> = (0..groups).filter(|&g| counts[g] > 0).collect();
    if present.len() < 2 {
        return Err(Error::Insufficient("separation needs at least 2 targets represented".into()));
    }
    if let Some(&g) = present.iter().find(|&&g| counts[g] < 2) {
        return Err(Error::Insufficient(format!("target {g} has fewer than 2 samples")));
    }
    let centroids: Vec<Vec<f64>> = (0..groups)
        .map(|g| sums[g].iter().map(|v| v / counts[g].max(1) as f64).collect())
        .collect();
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let mut spread = vec![0.0; groups];
    for (s, &l) in states.iter().zip(labels) {
        spread[l] += dist(s, &centroids[l]);
    }
    let within = present.iter().map(|&g| spread[g] / counts[g] as f64).sum::<f64>() / present.len() as f64;
    let (mut between, mut pairs) = (0.0, 0usize);
    for (i, &a) in present.iter().enumerate() {
        for &b in &present[i + 1..] {
            between += dist(&centroids[a], &centroids[b]);
            pairs += 1;
        }
    }
    let between = between / pairs as f64;
    Ok(if between == 0.0 {
        0.0
    } else if within == 0.0 {
        f64::INFINITY
    } else {
        between / within
    })
}

/// Separation of the state clouds of different active targets.
pub fn target_separation(samples: &[StateSample]) -> Result<f64> {
    let states: Vec<&[f64]> = samples.iter().map(|s| s.state.as_slice()).collect();
    let labels: Vec<usize> = samples.iter().map(|s| s.truth.target_index).collect();
    separation_by(&states, &labels)
}

/// Mean separation over `permutations` random relabelings.
pub fn separation_baseline<R: Rng + ?Sized>(samples: &[StateSample], permutations: usize, rng: &mut R) -> Result<f64> {
    let states: Vec<&[f64]> = samples.iter().map(|s| s.state.as_slice()).collect();
    let mut labels: Vec<usize> = samples.iter().map(|s| s.truth.target_index).collect();
    let mut total = 0.0;
    for _ in 0..permutations.max(1) {
        labels.shuffle(rng);
        total += separation_by(&states, &labels)?;
    }
    Ok(total / permutations.max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{EnvConfig, Pose};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample(state: Vec<f64>, x: f64, d: f64, target: usize) -> StateSample {
        StateSample {
            state,
            truth: Truth {
                pose: Pose::new(x, 0.0, 0.0),
                distance: d,
                orientation_error: 0.0,
                target_index: target,
            },
            reward: 0.0,
        }
    }

    #[test]
    fn collect_zero_and_determinism() {
        let cfg = EnvConfig {
            n_beams: 8,
            n_px: 4,
            ..EnvConfig::default()
        };
        let mut env = Env::new(cfg.clone()).unwrap();
        let none = collect_states(&mut env, &StateSource::GroundTruth, None, 0, 0.2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(none.is_empty());
        let run = || {
            let mut env = Env::new(cfg.clone()).unwrap();
            collect_states(&mut env, &StateSource::GroundTruth, None, 300, 0.2, &mut ChaCha8Rng::seed_from_u64(1)).unwrap()
        };
        let a = run();
        assert_eq!(a, run());
        assert_eq!(a.len(), 300);
        let b = env.map().bounds;
        assert!(a.iter().all(|s| b.contains(s.truth.pose.position())));
    }

    #[test]
    fn correlation_signs() {
        let xs: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        assert!((pearson(&xs, &xs).unwrap() - 1.0).abs() < 1e-12);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(pearson(&xs, &vec![2.0; 50]), None);
    }

    #[test]
    fn independent_channels_are_uncorrelated() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        let b: Vec<f64> = (0..10_000).map(|_| rng.gen()).collect();
        assert!(pearson(&a, &b).unwrap().abs() < 0.05);
    }

    #[test]
    fn table_reports_x_channel_and_flags_constants() {
        // state = (x, 0): first component tracks x, theta is constant
        let samples: Vec<StateSample> = (0..30).map(|i| sample(vec![i as f64, 0.0], i as f64, 1.0 + (i % 3) as f64, 0)).collect();
        let p = pca(&state_matrix(&samples).unwrap()).unwrap();
        let t = correlation_table(&p, &samples).unwrap();
        assert!((t.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert_eq!(t.get(0, 2), 0.0);
        assert!(t.degenerate[2]);
        assert!(t.r.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn identical_within_bins_gives_zero_ratio() {
        let samples: Vec<StateSample> = (0..40)
            .map(|i| {
                let d = (i % 4) as f64;
                sample(vec![10.0 * d, 0.0], 0.0, d, 0)
            })
            .collect();
        let c = reward_bin_clustering(&samples, 4, ClusterKey::Distance).unwrap();
        assert_eq!(c.intra, 0.0);
        assert_eq!(c.ratio, 0.0);
        assert!(!c.merged);
    }

    #[test]
    fn random_states_give_unit_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let samples: Vec<StateSample> = (0..2000)
            .map(|_| sample(vec![rng.gen(), rng.gen(), rng.gen()], 0.0, rng.gen_range(0.0..5.0), 0))
            .collect();
        let c = reward_bin_clustering(&samples, 10, ClusterKey::Distance).unwrap();
        assert!((c.ratio - 1.0).abs() < 0.1, "{}", c.ratio);
    }

    #[test]
    fn single_bin_is_an_error_and_gaps_are_flagged() {
        let flat: Vec<StateSample> = (0..5).map(|i| sample(vec![i as f64], 0.0, 2.0, 0)).collect();
        assert!(reward_bin_clustering(&flat, 10, ClusterKey::Distance).is_err());
        let gap: Vec<StateSample> = (0..10)
            .map(|i| sample(vec![i as f64], 0.0, if i < 5 { 0.0 } else { 9.0 }, 0))
            .collect();
        let c = reward_bin_clustering(&gap, 10, ClusterKey::Distance).unwrap();
        assert!(c.merged);
        assert_eq!(c.occupied_bins, 2);
    }

    #[test]
    fn separation_limits() {
        let same: Vec<StateSample> = (0..20).map(|i| sample(vec![(i % 10) as f64], 0.0, 1.0, i / 10)).collect();
        assert_eq!(target_separation(&same).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let far: Vec<StateSample> = (0..20)
            .map(|i| sample(vec![100.0 * (i / 10) as f64 + rng.gen::<f64>()], 0.0, 1.0, i / 10))
            .collect();
        assert!(target_separation(&far).unwrap() > 10.0);
        let lonely = vec![sample(vec![0.0], 0.0, 1.0, 0), sample(vec![1.0], 0.0, 1.0, 0), sample(vec![5.0], 0.0, 1.0, 1)];
        assert!(target_separation(&lonely).is_err());
        assert!(target_separation(&same[..10]).is_err());
    }

    #[test]
    fn shuffled_labels_match_a_single_cloud() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // one cloud with arbitrary labels: real and shuffled scores agree
        let cloud: Vec<StateSample> = (0..400).map(|i| sample(vec![rng.gen(), rng.gen()], 0.0, 1.0, i % 2)).collect();
        let real = target_separation(&cloud).unwrap();
        let base = separation_baseline(&cloud, 20, &mut rng).unwrap();
        assert!(real < 0.3 && base < 0.3);
        // two separated clouds beat their shuffled baseline by far
        let split: Vec<StateSample> = (0..400)
            .map(|i| sample(vec![rng.gen::<f64>() + 3.0 * (i % 2) as f64, rng.gen()], 0.0, 1.0, i % 2))
            .collect();
        let real = target_separation(&split).unwrap();
        let base = separation_baseline(&split, 20, &mut rng).unwrap();
        assert!(real > 10.0 * base);
    }
}
