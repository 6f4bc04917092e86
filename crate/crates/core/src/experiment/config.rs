use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rl::AgentConfig;
use crate::sim::EnvConfig;
use crate::srl::SrlConfig;

/// Settings for representation diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisConfig {
    pub samples: usize,
    /// Exploration rate of the collection policy.
    pub epsilon: f64,
    pub bins: usize,
    /// Explained-variance ratio at which a component counts.
    pub threshold: f64,
    /// Extra thresholds reported next to the main count.
    pub sensitivity: Vec<f64>,
    /// Relabelings for the target-separation baseline.
    pub permutations: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            samples: 3000,
            epsilon: 0.2,
            bins: 10,
            threshold: 0.05,
            sensitivity: vec![0.02, 0.10],
            permutations: 20,
        }
    }
}

/// Windows used when summarizing a training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SummaryConfig {
    /// Rolling window for episodes-to-success.
    pub success_window: usize,
    /// Final episodes averaged for the return summary.
    pub return_tail: usize,
    /// Final episodes used for the crash ratio.
    pub crash_tail: usize,
}

impl Default for SummaryConfig {
    fn default() -> Self {
        Self {
            success_window: 50,
            return_tail: 300,
            crash_tail: 200,
        }
    }
}

/// Everything one experiment needs. `seeds` is required; all tables fall
/// back to their defaults. `env.seed` is replaced by each run's seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub env: EnvConfig,
    #[serde(default)]
    pub rl: AgentConfig,
    #[serde(default)]
    pub srl: SrlConfig,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub summary: SummaryConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn with_seeds(seeds: Vec<u64>) -> Self {
        Self {
            seeds,
            output_dir: default_output_dir(),
            env: EnvConfig::default(),
            rl: AgentConfig::default(),
            srl: SrlConfig::default(),
            analysis: AnalysisConfig::default(),
            summary: SummaryConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`; a relative `env.layout_file` is resolved against the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })?;
        if let (Some(lf), Some(dir)) = (&cfg.env.layout_file, path.parent()) {
            if lf.is_relative() {
                cfg.env.layout_file = Some(dir.join(lf));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seeds must list at least one seed".into()));
        }
        self.env.validate()?;
        self.rl.validate()?;
        self.srl.validate()?;
        let a = &self.analysis;
        if a.bins < 2 || !(0.0..=1.0).contains(&a.epsilon) || !(0.0..=1.0).contains(&a.threshold) {
            return Err(Error::Config(
                "analysis.bins must be >= 2, analysis.epsilon and analysis.threshold in [0, 1]".into(),
            ));
        }
        let s = &self.summary;
        if s.success_window == 0 || s.return_tail == 0 || s.crash_tail == 0 {
            return Err(Error::Config("summary windows must be positive".into()));
        }
        Ok(())
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the resolved configuration, ignoring `output_dir`. Key
    /// order in the source file does not matter since the struct fixes it.
    pub fn hash(&self) -> Result<String> {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        Ok(hex::encode(Sha256::digest(c.to_toml()?.as_bytes())))
    }

    /// Environment settings for one run.
    pub fn env_for(&self, seed: u64) -> EnvConfig {
        EnvConfig {
            seed,
            ..self.env.clone()
        }
    }
}
