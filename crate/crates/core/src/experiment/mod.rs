//! Experiment orchestration: seeded runs of each training condition, state
//! dimension sweeps, representation analysis and their on-disk outputs.

mod config;

use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    collect_states_with_raw, correlation_table, count_components, pca, reward_bin_clustering, separation_baseline,
    state_matrix, target_separation, write_samples_csv, ClusterKey, Clustering, CorrelationTable, PcaResult,
    StateSample,
};
use crate::error::{Error, Result};
use crate::nn::{read_network, write_network};
use crate::rl::{evaluate, new_statenet, run_training, EvalSummary, QNet, StateSource, TrainingOutcome};
use crate::rng::{self, Stream};
use crate::sim::Env;
use crate::srl::StateNet;

pub use config::{AnalysisConfig, ExperimentConfig, SummaryConfig};

pub const VERSION: &str = concat!("rprior ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    GroundTruth,
    Srl,
    Observation,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::GroundTruth, Condition::Srl, Condition::Observation];

    pub fn name(self) -> &'static str {
        match self {
            Condition::GroundTruth => "ground_truth",
            Condition::Srl => "srl",
            Condition::Observation => "observation",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Condition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Condition::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown condition `{s}` (ground_truth, srl, observation)")))
    }
}

/// Provenance written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub version: String,
    pub duration_secs: f64,
    pub files: Vec<String>,
}

/// Output directory that records what was written. The directory is
/// created on the first write, so a run that fails early leaves nothing.
#[derive(Debug)]
pub struct Outputs {
    root: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            files: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_with<F>(&mut self, rel: &str, f: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<()>,
    {
        let path = self.root.join(rel);
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut w = BufWriter::new(File::create(&path)?);
        f(&mut w)?;
        w.flush()?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        self.write_with(rel, |w| Ok(w.write_all(bytes)?))
    }

    /// Writes the resolved config and the manifest.
    pub fn finish(mut self, cfg: &ExperimentConfig, command: &str, started: Instant) -> Result<RunManifest> {
        let text = cfg.to_toml()?;
        self.write_bytes("config.toml", text.as_bytes())?;
        let manifest = RunManifest {
            command: command.to_string(),
            config_hash: cfg.hash()?,
            seeds: cfg.seeds.clone(),
            version: VERSION.to_string(),
            duration_secs: started.elapsed().as_secs_f64(),
            files: self.files.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        self.write_bytes("manifest.toml", text.as_bytes())?;
        Ok(manifest)
    }
}

/// Maps `f` over `items` on a pool of `threads` workers, keeping order.
pub fn par_map<T, R, F>(items: &[T], threads: usize, f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    if threads <= 1 {
        return items.iter().map(f).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

/// One end-of-training row.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub condition: String,
    pub state_dim: usize,
    pub seed: u64,
    pub episodes: usize,
    pub final_mean_return: f64,
    pub final_crash_ratio: f64,
    pub final_success_rate: f64,
    pub episodes_to_50: Option<usize>,
    pub episodes_to_90: Option<usize>,
    pub total_steps: u64,
}

pub fn summarize(cfg: &ExperimentConfig, condition: Condition, seed: u64, out: &TrainingOutcome) -> RunSummary {
    let log = &out.log;
    let s = &cfg.summary;
    RunSummary {
        condition: condition.name().to_string(),
        state_dim: out.qnet.state_dim(),
        seed,
        episodes: log.len(),
        final_mean_return: log.mean_return(log.tail(s.return_tail)),
        final_crash_ratio: log.crash_ratio(log.tail(s.crash_tail)),
        final_success_rate: log.success_rate(log.tail(s.crash_tail)),
        episodes_to_50: log.episodes_to_success(0.5, s.success_window),
        episodes_to_90: log.episodes_to_success(0.9, s.success_window),
        total_steps: out.total_steps,
    }
}

fn write_summaries(out: &mut Outputs, rel: &str, rows: &[RunSummary]) -> Result<()> {
    out.write_with(rel, |w| {
        let mut c = csv::Writer::from_writer(w);
        for r in rows {
            c.serialize(r)?;
        }
        c.flush()?;
        Ok(())
    })
}

/// Trains one condition under one seed. The encoder for [`Condition::Srl`]
/// is drawn from the seed's init stream.
pub fn train_condition(
    cfg: &ExperimentConfig,
    condition: Condition,
    seed: u64,
    checkpoint: Option<&mut crate::rl::CheckpointHook<'_>>,
) -> Result<TrainingOutcome> {
    let mut env = Env::new(cfg.env_for(seed))?;
    let source = match condition {
        Condition::GroundTruth => StateSource::GroundTruth,
        Condition::Observation => StateSource::Observation,
        Condition::Srl => StateSource::Learned(new_statenet(&env, &cfg.srl, seed)?),
    };
    run_training(&mut env, source, &cfg.rl, &cfg.srl, seed, checkpoint)
}

fn qnet_bytes(q: &QNet) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    write_network(&mut b, &q.net)?;
    Ok(b)
}

fn statenet_bytes(n: &StateNet) -> Result<Vec<u8>> {
    let mut b = Vec::new();
    n.write(&mut b)?;
    Ok(b)
}

type Snapshots = Vec<(String, Vec<u8>)>;

fn train_with_snapshots(cfg: &ExperimentConfig, condition: Condition, seed: u64) -> Result<(TrainingOutcome, Snapshots)> {
    let mut snaps: Snapshots = Vec::new();
    let mut hook = |episodes: usize, q: &QNet, n: Option<&StateNet>| -> Result<()> {
        snaps.push((format!("checkpoints/ep{episodes:05}_qnet.bin"), qnet_bytes(q)?));
        if let Some(n) = n {
            snaps.push((format!("checkpoints/ep{episodes:05}_statenet.bin"), statenet_bytes(n)?));
        }
        Ok(())
    };
    let o = train_condition(cfg, condition, seed, Some(&mut hook))?;
    Ok((o, snaps))
}

fn write_run(out: &mut Outputs, dir: &str, o: &TrainingOutcome, snaps: &Snapshots) -> Result<()> {
    out.write_with(&format!("{dir}/log.csv"), |w| o.log.write_csv(w))?;
    for (ep, rep) in &o.srl_reports {
        out.write_with(&format!("{dir}/srl_update_{ep:05}.csv"), |w| rep.write_csv(w))?;
    }
    out.write_bytes(&format!("{dir}/qnet.bin"), &qnet_bytes(&o.qnet)?)?;
    if let Some(n) = o.source.statenet() {
        out.write_bytes(&format!("{dir}/statenet.bin"), &statenet_bytes(n)?)?;
    }
    for (rel, bytes) in snaps {
        out.write_bytes(&format!("{dir}/{rel}"), bytes)?;
    }
    Ok(())
}

/// Trains `condition` for every seed: per-seed logs, State-Net reports and
/// checkpoints, plus `summary.csv`.
pub fn train(cfg: &ExperimentConfig, condition: Condition, threads: usize, out: &mut Outputs) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let runs = par_map(&cfg.seeds, threads, |&seed| train_with_snapshots(cfg, condition, seed))?;
    let mut rows = Vec::new();
    for (&seed, (o, snaps)) in cfg.seeds.iter().zip(&runs) {
        write_run(out, &format!("seed_{seed}"), o, snaps)?;
        rows.push(summarize(cfg, condition, seed, o));
    }
    write_summaries(out, "summary.csv", &rows)?;
    Ok(rows)
}

/// The three conditions on shared seeds: `returns.csv` holds every
/// episode of every run and `summary.csv` one row per run.
pub fn compare(cfg: &ExperimentConfig, threads: usize, out: &mut Outputs) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let jobs: Vec<(u64, Condition)> = cfg
        .seeds
        .iter()
        .flat_map(|&s| Condition::ALL.into_iter().map(move |c| (s, c)))
        .collect();
    let runs = par_map(&jobs, threads, |&(seed, c)| train_condition(cfg, c, seed, None))?;
    out.write_with("returns.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["seed", "condition", "episode", "return", "steps", "terminal"])?;
        for (&(seed, cond), o) in jobs.iter().zip(&runs) {
            for e in &o.log.episodes {
                c.write_record([
                    seed.to_string(),
                    cond.name().to_string(),
                    e.episode.to_string(),
                    e.ret.to_string(),
                    e.steps.to_string(),
                    e.terminal.name().to_string(),
                ])?;
            }
        }
        c.flush()?;
        Ok(())
    })?;
    let rows: Vec<RunSummary> = jobs
        .iter()
        .zip(&runs)
        .map(|(&(seed, c), o)| summarize(cfg, c, seed, o))
        .collect();
    write_summaries(out, "summary.csv", &rows)?;
    Ok(rows)
}

/// SRL+RL for each state dimension and seed; `summary.csv` has
/// `|dims| × |seeds|` rows.
pub fn sweep_statedim(cfg: &ExperimentConfig, dims: &[usize], threads: usize, out: &mut Outputs) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    if dims.is_empty() || dims.contains(&0) {
        return Err(Error::Config("state dimensions must be a non-empty list of positive sizes".into()));
    }
    let jobs: Vec<(usize, u64)> = dims.iter().flat_map(|&d| cfg.seeds.iter().map(move |&s| (d, s))).collect();
    let runs = par_map(&jobs, threads, |&(dim, seed)| {
        let mut c = cfg.clone();
        c.srl.state_dim = dim;
        train_condition(&c, Condition::Srl, seed, None)
    })?;
    let mut rows = Vec::new();
    for (&(dim, seed), o) in jobs.iter().zip(&runs) {
        write_run(out, &format!("dim_{dim}/seed_{seed}"), o, &Vec::new())?;
        rows.push(summarize(cfg, Condition::Srl, seed, o));
    }
    write_summaries(out, "summary.csv", &rows)?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClusterRow {
    /// `learned` or `raw`.
    pub representation: &'static str,
    pub key: ClusterKey,
    pub result: Clustering,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Separation {
    pub score: f64,
    pub baseline: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisReport {
    pub samples: Vec<StateSample>,
    pub pca: PcaResult,
    /// `(threshold, count)`; the configured threshold comes first.
    pub counts: Vec<(f64, usize)>,
    pub correlation: CorrelationTable,
    pub clustering: Vec<ClusterRow>,
    /// Multi-target environments only.
    pub separation: Option<Separation>,
}

impl AnalysisReport {
    pub fn components(&self) -> usize {
        self.counts[0].1
    }

    pub fn cluster_ratio(&self, representation: &str, key: ClusterKey) -> Option<f64> {
        self.clustering
            .iter()
            .find(|c| c.representation == representation && c.key == key)
            .map(|c| c.result.ratio)
    }

    pub fn write(&self, out: &mut Outputs) -> Result<()> {
        out.write_with("components.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["threshold", "count"])?;
            for (t, n) in &self.counts {
                c.write_record([t.to_string(), n.to_string()])?;
            }
            c.flush()?;
            Ok(())
        })?;
        out.write_with("spectrum.csv", |w| self.pca.write_spectrum_csv(w))?;
        out.write_with("correlation.csv", |w| self.correlation.write_csv(w))?;
        out.write_with("clustering.csv", |w| {
            let mut c = csv::Writer::from_writer(w);
            c.write_record(["representation", "key", "intra", "inter", "ratio", "occupied_bins", "merged"])?;
            for r in &self.clustering {
                let m = &r.result;
                c.write_record([
                    r.representation.to_string(),
                    r.key.name().to_string(),
                    m.intra.to_string(),
                    m.inter.to_string(),
                    m.ratio.to_string(),
                    m.occupied_bins.to_string(),
                    m.merged.to_string(),
                ])?;
            }
            c.flush()?;
            Ok(())
        })?;
        if let Some(s) = &self.separation {
            out.write_with("separation.csv", |w| {
                let mut c = csv::Writer::from_writer(w);
                c.serialize(s)?;
                c.flush()?;
                Ok(())
            })?;
        }
        out.write_with("samples.csv", |w| write_samples_csv(w, &self.samples))
    }
}

/// Collects states under `qnet` (random actions when absent) and runs every
/// diagnostic. Raw observations of the same steps are clustered too.
pub fn analyze_representation(
    cfg: &ExperimentConfig,
    source: &StateSource,
    qnet: Option<&QNet>,
    seed: u64,
) -> Result<AnalysisReport> {
    let a = &cfg.analysis;
    let mut env = Env::new(cfg.env_for(seed))?;
    let mut rng = rng::stream(seed, Stream::Analysis);
    let (samples, raw) = collect_states_with_raw(&mut env, source, qnet, a.samples, a.epsilon, &mut rng)?;
    let p = pca(&state_matrix(&samples)?)?;
    let mut counts = vec![(a.threshold, count_components(&p, a.threshold))];
    counts.extend(a.sensitivity.iter().map(|&t| (t, count_components(&p, t))));
    let correlation = correlation_table(&p, &samples)?;
    let mut clustering = Vec::new();
    for (name, set) in [("learned", &samples), ("raw", &raw)] {
        for key in [ClusterKey::Distance, ClusterKey::Orientation] {
            clustering.push(ClusterRow {
                representation: name,
                key,
                result: reward_bin_clustering(set, a.bins, key)?,
            });
        }
    }
    let separation = if cfg.env.multi_target {
        Some(Separation {
            score: target_separation(&samples)?,
            baseline: separation_baseline(&samples, a.permutations, &mut rng)?,
        })
    } else {
        None
    };
    Ok(AnalysisReport {
        samples,
        pca: p,
        counts,
        correlation,
        clustering,
        separation,
    })
}

pub fn load_statenet(path: &Path) -> Result<StateNet> {
    StateNet::read(&mut BufReader::new(File::open(path)?))
}

pub fn load_qnet(path: &Path) -> Result<QNet> {
    QNet::from_network(read_network(&mut BufReader::new(File::open(path)?))?)
}

/// Checks that checkpoints fit the configured environment and picks the
/// state source: the encoder when given, otherwise whichever of ground
/// truth or raw observation matches the Q-Net input.
pub fn resolve_source(cfg: &ExperimentConfig, statenet: Option<StateNet>, qnet: Option<&QNet>) -> Result<StateSource> {
    let env = &cfg.env;
    let source = match statenet {
        Some(n) => {
            let s = n.shape();
            if s.n_beams != env.n_beams || s.n_px != env.n_px || s.multi_target != env.multi_target {
                return Err(Error::Config(format!(
                    "State-Net expects {} beams, {} pixels, multi_target={}; config has {}, {}, {}",
                    s.n_beams, s.n_px, s.multi_target, env.n_beams, env.n_px, env.multi_target
                )));
            }
            StateSource::Learned(n)
        }
        None => {
            let dim = qnet.map(|q| q.state_dim()).ok_or_else(|| {
                Error::Config("need a State-Net or a Q-Net checkpoint to pick the state source".into())
            })?;
            let truth = 4 + if env.multi_target { 2 } else { 0 };
            if dim == truth {
                StateSource::GroundTruth
            } else if dim == env.observation_len() {
                StateSource::Observation
            } else {
                return Err(Error::Config(format!(
                    "Q-Net input {dim} matches neither ground truth ({truth}) nor observations ({})",
                    env.observation_len()
                )));
            }
        }
    };
    if let Some(q) = qnet {
        let want = match &source {
            StateSource::Learned(n) => n.state_dim(),
            StateSource::GroundTruth => 4 + if env.multi_target { 2 } else { 0 },
            StateSource::Observation => env.observation_len(),
        };
        if q.state_dim() != want {
            return Err(Error::Config(format!(
                "Q-Net input {} does not match state dimension {want}",
                q.state_dim()
            )));
        }
    }
    Ok(source)
}

/// Greedy evaluation of a checkpoint for every configured seed.
pub fn eval(cfg: &ExperimentConfig, source: &StateSource, qnet: &QNet, episodes: usize, out: &mut Outputs) -> Result<Vec<EvalSummary>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &seed in &cfg.seeds {
        let mut env = Env::new(cfg.env_for(seed))?;
        rows.push(evaluate(&mut env, source, qnet, episodes, cfg.rl.gamma)?);
    }
    out.write_with("eval.csv", |w| {
        let mut c = csv::Writer::from_writer(w);
        c.write_record(["seed", "episodes", "success_rate", "crash_ratio", "mean_return"])?;
        for (seed, r) in cfg.seeds.iter().zip(&rows) {
            c.write_record([
                seed.to_string(),
                r.episodes.to_string(),
                r.success_rate.to_string(),
                r.crash_ratio.to_string(),
                r.mean_return.to_string(),
            ])?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok(rows)
}
