//! Loss bookkeeping and intervention sampling.

use rand::Rng;

use crate::signal::{bandpass, TransformSpec, Waveform};
use crate::Result;

use super::config::TrainConfig;

/// Per-term values of the training objective. Terms are stored already
/// weighted, so `total` is their plain sum.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub l_nul: f64,
    pub l_equ_amp: f64,
    pub l_equ_phase: f64,
    pub l_equ_freq: f64,
    pub l_forward: f64,
    pub l_multiregion: f64,
    pub l_background: f64,
    pub l_wave: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub const FIELDS: [&'static str; 9] = [
        "l_nul",
        "l_equ_amp",
        "l_equ_phase",
        "l_equ_freq",
        "l_forward",
        "l_multiregion",
        "l_background",
        "l_wave",
        "total",
    ];

    fn terms(&self) -> [f64; 8] {
        [
            self.l_nul,
            self.l_equ_amp,
            self.l_equ_phase,
            self.l_equ_freq,
            self.l_forward,
            self.l_multiregion,
            self.l_background,
            self.l_wave,
        ]
    }

    /// Recomputes `total` from the terms.
    pub fn with_total(mut self) -> Self {
        let t = self.terms();
        self.total = t[0] + (t[1] + t[2] + t[3]) + (t[4] + t[5] + t[6] + t[7]);
        self
    }

    pub fn values(&self) -> [f64; 9] {
        let t = self.terms();
        [t[0], t[1], t[2], t[3], t[4], t[5], t[6], t[7], self.total]
    }

    /// Term-wise mean, total recomputed.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        if items.is_empty() {
            return LossBreakdown::default();
        }
        let n = items.len() as f64;
        let avg = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        LossBreakdown {
            l_nul: avg(|l| l.l_nul),
            l_equ_amp: avg(|l| l.l_equ_amp),
            l_equ_phase: avg(|l| l.l_equ_phase),
            l_equ_freq: avg(|l| l.l_equ_freq),
            l_forward: avg(|l| l.l_forward),
            l_multiregion: avg(|l| l.l_multiregion),
            l_background: avg(|l| l.l_background),
            l_wave: avg(|l| l.l_wave),
            total: 0.0,
        }
        .with_total()
    }

    pub fn is_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }
}

/// In-band energy of a hypothesis: mean of the squared band-passed signal.
pub fn loss_nul(s: &Waveform) -> Result<f64> {
    let b = bandpass(s)?;
    Ok(b.samples.iter().map(|v| v * v).sum::<f64>() / b.len() as f64)
}

/// One draw of the three intervention parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interventions {
    pub alpha: f64,
    pub tau: i64,
    pub rho: f64,
}

impl Interventions {
    pub fn specs(&self) -> [TransformSpec; 3] {
        [
            TransformSpec::Amplitude { alpha: self.alpha },
            TransformSpec::Phase { tau: self.tau },
            TransformSpec::Frequency { rho: self.rho },
        ]
    }
}

pub fn sample_interventions<R: Rng>(cfg: &TrainConfig, rng: &mut R) -> Interventions {
    Interventions {
        alpha: rng.random_range(cfg.alpha_range.0..=cfg.alpha_range.1),
        tau: rng.random_range(cfg.tau_range.0..=cfg.tau_range.1),
        rho: rng.random_range(cfg.rho_range.0..=cfg.rho_range.1),
    }
}
