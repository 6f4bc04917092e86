mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rprior_core::analysis::TRUTH_CHANNELS;
use rprior_core::experiment::{
    self, analyze_representation, load_qnet, load_statenet, resolve_source, AnalysisReport, Condition,
    ExperimentConfig, Outputs, RunSummary,
};
use rprior_core::Error;

#[derive(Parser)]
#[command(name = "rprior", version, about = "Reward-shaped state representation learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent runs.
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Train one condition for every seed.
    Train {
        #[command(flatten)]
        common: Common,
        /// ground_truth, srl or observation.
        #[arg(long, default_value = "srl")]
        condition: String,
    },
    /// Component counts, correlations and clustering for a trained encoder.
    Analyze {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        statenet: PathBuf,
        /// Q-Net driving the collection policy; random actions when absent.
        #[arg(long)]
        qnet: Option<PathBuf>,
    },
    /// SRL+RL for several state dimensions.
    SweepStatedim {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
    },
    /// Ground-truth, SRL and observation conditions on shared seeds.
    Compare {
        #[command(flatten)]
        common: Common,
    },
    /// Greedy evaluation of a Q-Net checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        qnet: PathBuf,
        #[arg(long)]
        statenet: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
    },
}

/// Failure with its exit code: 2 for configuration problems, 3 at runtime.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn load_config(common: &Common) -> Result<(ExperimentConfig, PathBuf), Failure> {
    let mut cfg = ExperimentConfig::load(&common.config).map_err(|e| Failure {
        code: 2,
        message: match e {
            Error::Io(io) => format!("cannot read {}: {io}", common.config.display()),
            other => other.to_string(),
        },
    })?;
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(o) = &common.out {
        cfg.output_dir = o.clone();
    }
    if common.threads == 0 {
        return Err(Failure {
            code: 2,
            message: "--threads must be at least 1".into(),
        });
    }
    let out = cfg.output_dir.clone();
    Ok((cfg, out))
}

fn print_summaries(rows: &[RunSummary]) {
    println!("condition      dim  seed  final_return  crash_ratio  to_50  to_90");
    let opt = |v: Option<usize>| v.map_or("-".to_string(), |v| v.to_string());
    for r in rows {
        println!(
            "{:<13} {:>4} {:>5} {:>13.2} {:>12.3} {:>6} {:>6}",
            r.condition,
            r.state_dim,
            r.seed,
            r.final_mean_return,
            r.final_crash_ratio,
            opt(r.episodes_to_50),
            opt(r.episodes_to_90)
        );
    }
}

fn write_analysis_svgs(report: &AnalysisReport, out: &mut Outputs) -> rprior_core::Result<()> {
    let spectrum = svg::bars("Explained variance", "component", "ratio", &report.pca.ratios);
    out.write_bytes("spectrum.svg", spectrum.as_bytes())?;
    let channel = |s: &rprior_core::analysis::StateSample, c: usize| match c {
        0 => s.truth.pose.x,
        1 => s.truth.pose.y,
        2 => s.truth.pose.theta,
        _ => s.truth.distance,
    };
    for k in 0..report.pca.dim().min(2) {
        for (c, name) in TRUTH_CHANNELS.iter().enumerate() {
            let pts: Vec<(f64, f64)> = report
                .samples
                .iter()
                .enumerate()
                .map(|(i, s)| (channel(s, c), report.pca.scores.get(i, k)))
                .collect();
            let title = format!("PC{k} vs {name} (r = {:.2})", report.correlation.get(k, c));
            let doc = svg::scatter(&title, name, &format!("PC{k} score"), &pts);
            out.write_bytes(&format!("pc{k}_{name}.svg"), doc.as_bytes())?;
        }
    }
    Ok(())
}

fn learning_curves(path: &Path, out: &mut Outputs) -> rprior_core::Result<()> {
    // rolling mean of returns per condition, averaged over seeds
    let mut rdr = csv::Reader::from_path(path)?;
    let mut series: Vec<(String, Vec<f64>, Vec<usize>)> = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let (cond, ep, ret) = (&rec[1], rec[2].parse::<usize>().unwrap_or(0), rec[3].parse::<f64>().unwrap_or(f64::NAN));
        let idx = match series.iter().position(|s| s.0 == cond) {
            Some(i) => i,
            None => {
                series.push((cond.to_string(), Vec::new(), Vec::new()));
                series.len() - 1
            }
        };
        let s = &mut series[idx];
        if s.1.len() <= ep {
            s.1.resize(ep + 1, 0.0);
            s.2.resize(ep + 1, 0);
        }
        s.1[ep] += ret;
        s.2[ep] += 1;
    }
    let window = 50usize;
    let smoothed: Vec<(String, Vec<f64>)> = series
        .into_iter()
        .map(|(name, sum, n)| {
            let mean: Vec<f64> = sum.iter().zip(&n).map(|(s, &c)| s / c.max(1) as f64).collect();
            let roll = (0..mean.len())
                .map(|i| {
                    let lo = (i + 1).saturating_sub(window);
                    mean[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
                })
                .collect();
            (name, roll)
        })
        .collect();
    let doc = svg::lines("Return (rolling mean over 50 episodes)", "episode", "return", &smoothed);
    out.write_bytes("returns.svg", doc.as_bytes())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let started = Instant::now();
    match cli.command {
        Command::Train { common, condition } => {
            let condition: Condition = condition.parse()?;
            let (cfg, dir) = load_config(&common)?;
            let mut out = Outputs::new(dir);
            let rows = experiment::train(&cfg, condition, common.threads, &mut out)?;
            print_summaries(&rows);
            out.finish(&cfg, "train", started)?;
        }
        Command::Compare { common } => {
            let (cfg, dir) = load_config(&common)?;
            let mut out = Outputs::new(dir);
            let rows = experiment::compare(&cfg, common.threads, &mut out)?;
            let returns = out.root().join("returns.csv");
            learning_curves(&returns, &mut out)?;
            print_summaries(&rows);
            out.finish(&cfg, "compare", started)?;
        }
        Command::SweepStatedim { common, dims } => {
            let (cfg, dir) = load_config(&common)?;
            let mut out = Outputs::new(dir);
            let rows = experiment::sweep_statedim(&cfg, &dims, common.threads, &mut out)?;
            print_summaries(&rows);
            out.finish(&cfg, "sweep-statedim", started)?;
        }
        Command::Analyze { common, statenet, qnet } => {
            let (cfg, dir) = load_config(&common)?;
            let net = load_statenet(&statenet)?;
            let q = qnet.as_deref().map(load_qnet).transpose()?;
            let source = resolve_source(&cfg, Some(net), q.as_ref())?;
            let seed = cfg.seeds[0];
            let report = analyze_representation(&cfg, &source, q.as_ref(), seed)?;
            let mut out = Outputs::new(dir);
            report.write(&mut out)?;
            write_analysis_svgs(&report, &mut out)?;
            println!(
                "components (ratio >= {}): {}",
                cfg.analysis.threshold,
                report.components()
            );
            for (t, n) in &report.counts[1..] {
                println!("  at {t}: {n}");
            }
            for (c, name) in TRUTH_CHANNELS.iter().enumerate() {
                println!("max |r| with {name}: {:.3}", report.correlation.max_abs(c));
            }
            for row in &report.clustering {
                println!("clustering {} key={}: ratio {:.3}", row.representation, row.key.name(), row.result.ratio);
            }
            if let Some(s) = &report.separation {
                println!("target separation {:.3} (shuffled {:.3})", s.score, s.baseline);
            }
            out.finish(&cfg, "analyze", started)?;
        }
        Command::Eval {
            common,
            qnet,
            statenet,
            episodes,
        } => {
            let (cfg, dir) = load_config(&common)?;
            let q = load_qnet(&qnet)?;
            let net = statenet.as_deref().map(load_statenet).transpose()?;
            let source = resolve_source(&cfg, net, Some(&q))?;
            let mut out = Outputs::new(dir);
            let rows = experiment::eval(&cfg, &source, &q, episodes, &mut out)?;
            for (seed, r) in cfg.seeds.iter().zip(&rows) {
                println!(
                    "seed {seed}: success {:.3} crash {:.3} return {:.2}",
                    r.success_rate, r.crash_ratio, r.mean_return
                );
            }
            out.finish(&cfg, "eval", started)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
