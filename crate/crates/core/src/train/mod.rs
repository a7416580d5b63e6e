//! Training: supervised warm start, the editor stage and the
//! intervention-driven self-supervised stage.

pub mod config;
pub mod losses;
pub mod nulling;
pub mod ops;
pub mod optim;
pub mod stage1;
pub mod stage2;
pub mod stage3;

use std::io::{BufRead, Write};

use crate::clip::VideoClip;
use crate::signal::Waveform;
use crate::synth::RegionLayout;
use crate::{Error, Result};

pub use config::{AmplitudeTarget, TrainConfig};
pub use losses::{loss_nul, sample_interventions, Interventions, LossBreakdown};
pub use nulling::{nulling_search, NullingResult, Probe};

/// A clip with its region layout and ground-truth pulse.
#[derive(Debug, Clone)]
pub struct LabeledClip {
    pub clip: VideoClip,
    pub layout: RegionLayout,
    pub s_gt: Waveform,
}

/// A clip with its region layout only. The self-supervised stage accepts
/// nothing else, so it cannot read labels.
#[derive(Debug, Clone)]
pub struct UnlabeledClip {
    pub clip: VideoClip,
    pub layout: RegionLayout,
}

impl From<&LabeledClip> for UnlabeledClip {
    fn from(c: &LabeledClip) -> Self {
        UnlabeledClip { clip: c.clip.clone(), layout: c.layout.clone() }
    }
}

/// Result of an extractor training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub extractor: crate::extractor::Extractor,
    pub log: MetricsLog,
    /// Set when training stopped on a non-finite value; `extractor` then
    /// holds the last finite parameters.
    pub diverged: Option<String>,
}

/// One row of a training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub values: Vec<f64>,
}

/// Per-epoch training log with named value columns.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub columns: Vec<String>,
    pub rows: Vec<EpochMetrics>,
}

impl MetricsLog {
    pub fn new(columns: &[&str]) -> Self {
        MetricsLog { columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Values of one named column.
    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r.values[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch,lr,{}", self.columns.join(","))?;
        for r in &self.rows {
            let vals: Vec<String> = r.values.iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{},{:e},{}", r.epoch, r.lr, vals.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty metrics file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.len() < 2 || cols[0] != "epoch" || cols[1] != "lr" {
            return Err(Error::Parse(format!("unexpected metrics header `{header}`")));
        }
        let mut log = MetricsLog::new(&cols[2..]);
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Parse(format!("metrics row {} has {} fields", n + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| Error::Parse(format!("bad number `{s}`")));
            log.rows.push(EpochMetrics {
                epoch: f[0].parse().map_err(|_| Error::Parse(format!("bad epoch `{}`", f[0])))?,
                lr: num(f[1])?,
                values: f[2..].iter().map(|s| num(s)).collect::<Result<_>>()?,
            });
        }
        Ok(log)
    }
}

/// Fraction of consecutive non-overlapping `window`-epoch blocks whose mean
/// is below the previous block's mean.
pub fn decreasing_window_fraction(values: &[f64], window: usize) -> f64 {
    let means: Vec<f64> = values.chunks_exact(window).map(|c| c.iter().sum::<f64>() / window as f64).collect();
    if means.len() < 2 {
        return 1.0;
    }
    let down = means.windows(2).filter(|w| w[1] < w[0]).count();
    down as f64 / (means.len() - 1) as f64
}
