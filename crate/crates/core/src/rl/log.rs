use std::io::Write;
use std::ops::Range;

use crate::error::Result;
use crate::sim::Terminal;

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    /// Discounted return `Σ γᵗ r_t`.
    pub ret: f64,
    pub steps: u32,
    pub terminal: Terminal,
    pub epsilon: f64,
    /// Fraction of crashes over the last `window` episodes (fewer at the
    /// start).
    pub crash_ratio_window: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingLog {
    pub window: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainingLog {
    pub fn new(window: usize) -> Self {
        assert!(window > 0, "log window must be positive");
        Self {
            window,
            episodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn push(&mut self, ret: f64, steps: u32, terminal: Terminal, epsilon: f64) {
        let episode = self.episodes.len();
        let from = (episode + 1).saturating_sub(self.window);
        let crashes = self.episodes[from..]
            .iter()
            .filter(|r| r.terminal == Terminal::Crashed)
            .count()
            + (terminal == Terminal::Crashed) as usize;
        self.episodes.push(EpisodeRecord {
            episode,
            ret,
            steps,
            terminal,
            epsilon,
            crash_ratio_window: crashes as f64 / (episode + 1 - from) as f64,
        });
    }

    fn clamp(&self, r: Range<usize>) -> Range<usize> {
        r.start.min(self.len())..r.end.min(self.len())
    }

    fn fraction(&self, r: Range<usize>, kind: Terminal) -> f64 {
        let r = self.clamp(r);
        if r.is_empty() {
            return 0.0;
        }
        let n = self.episodes[r.clone()].iter().filter(|e| e.terminal == kind).count();
        n as f64 / r.len() as f64
    }

    pub fn crash_ratio(&self, r: Range<usize>) -> f64 {
        self.fraction(r, Terminal::Crashed)
    }

    pub fn success_rate(&self, r: Range<usize>) -> f64 {
        self.fraction(r, Terminal::Reached)
    }

    pub fn mean_return(&self, r: Range<usize>) -> f64 {
        let r = self.clamp(r);
        if r.is_empty() {
            return 0.0;
        }
        self.episodes[r.clone()].iter().map(|e| e.ret).sum::<f64>() / r.len() as f64
    }

    /// The last `n` episodes.
    pub fn tail(&self, n: usize) -> Range<usize> {
        self.len().saturating_sub(n)..self.len()
    }

    /// Number of episodes after which the success rate over the preceding
    /// `window` episodes first reaches `threshold`.
    pub fn episodes_to_success(&self, threshold: f64, window: usize) -> Option<usize> {
        let mut hits = 0usize;
        for (i, e) in self.episodes.iter().enumerate() {
            hits += (e.terminal == Terminal::Reached) as usize;
            if i >= window {
                hits -= (self.episodes[i - window].terminal == Terminal::Reached) as usize;
            }
            if i + 1 >= window && hits as f64 >= threshold * window as f64 {
                return Some(i + 1);
            }
        }
        None
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["episode", "return", "steps", "terminal", "epsilon", "crash_ratio_window"])?;
        for e in &self.episodes {
            out.write_record([
                e.episode.to_string(),
                e.ret.to_string(),
                e.steps.to_string(),
                e.terminal.name().to_string(),
                e.epsilon.to_string(),
                e.crash_ratio_window.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
