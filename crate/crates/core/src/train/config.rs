//! Training configuration and its `key = value` file format.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

/// How the amplitude-equivariance target reads the control `alpha` when
/// `alpha * s0` is injected into the original clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AmplitudeTarget {
    /// The clip now carries `(1 + alpha) * s0`.
    TotalScale,
    /// Target is `alpha * s0`.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub warmup_epochs: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub alpha_range: (f64, f64),
    pub tau_range: (i64, i64),
    pub rho_range: (f64, f64),
    pub nulling_range: (f64, f64),
    pub top_k_cells: usize,
    pub seed: u64,
    pub amplitude_target: AmplitudeTarget,
    pub w_nul: f64,
    pub w_equ: f64,
    pub w_forward: f64,
    pub w_multiregion: f64,
    pub w_background: f64,
    pub w_wave: f64,
    /// Analytic editor strength per unit of standardized signal.
    pub editor_strength: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            warmup_epochs: 5,
            epochs: 100,
            batch_size: 4,
            learning_rate: 1e-4,
            weight_decay: 1e-4,
            alpha_range: (0.0, 2.0),
            tau_range: (-12, 12),
            rho_range: (0.8, 2.0),
            nulling_range: (-2.0, 0.0),
            top_k_cells: 8,
            seed: 0,
            amplitude_target: AmplitudeTarget::TotalScale,
            w_nul: 1.0,
            w_equ: 1.0,
            w_forward: 1.0,
            w_multiregion: 1.0,
            w_background: 1.0,
            w_wave: 1.0,
            editor_strength: 0.004,
        }
    }
}

impl TrainConfig {
    /// Defaults for the editor stage.
    pub fn stage2() -> Self {
        TrainConfig { epochs: 60, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if self.warmup_epochs >= self.epochs {
            return bad(format!("warmup_epochs {} must be below epochs {}", self.warmup_epochs, self.epochs));
        }
        if !(self.learning_rate > 0.0) || self.weight_decay < 0.0 {
            return bad("learning_rate must be positive and weight_decay nonnegative".into());
        }
        for (name, (a, b)) in [
            ("alpha_range", self.alpha_range),
            ("rho_range", self.rho_range),
            ("nulling_range", self.nulling_range),
            ("tau_range", (self.tau_range.0 as f64, self.tau_range.1 as f64)),
        ] {
            if !(a < b) || !a.is_finite() || !b.is_finite() {
                return bad(format!("{name} [{a}, {b}] is degenerate"));
            }
        }
        if self.rho_range.0 <= 0.0 {
            return bad("rho_range must be positive".into());
        }
        if self.top_k_cells == 0 {
            return bad("top_k_cells must be positive".into());
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::parse_over(TrainConfig::default(), text)
    }

    /// Applies the `key = value` lines in `text` on top of `base`.
    pub fn parse_over(base: TrainConfig, text: &str) -> Result<Self> {
        let mut c = base;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let err = |what: &str| Error::Config(format!("line {}: {key}: {what} `{value}`", n + 1));
            let f = |v: &str| v.trim().parse::<f64>().map_err(|_| err("not a number"));
            let u = |v: &str| v.trim().parse::<usize>().map_err(|_| err("not a count"));
            let pair = |v: &str| -> Result<(f64, f64)> {
                let (a, b) = v.split_once(',').ok_or_else(|| err("expected `low, high`"))?;
                Ok((f(a)?, f(b)?))
            };
            match key {
                "warmup_epochs" => c.warmup_epochs = u(value)?,
                "epochs" => c.epochs = u(value)?,
                "batch_size" => c.batch_size = u(value)?,
                "learning_rate" => c.learning_rate = f(value)?,
                "weight_decay" => c.weight_decay = f(value)?,
                "alpha_range" => c.alpha_range = pair(value)?,
                "tau_range" => {
                    let (a, b) = value.split_once(',').ok_or_else(|| err("expected `low, high`"))?;
                    let i = |v: &str| v.trim().parse::<i64>().map_err(|_| err("not an integer"));
                    c.tau_range = (i(a)?, i(b)?);
                }
                "rho_range" => c.rho_range = pair(value)?,
                "nulling_range" => c.nulling_range = pair(value)?,
                "top_k_cells" => c.top_k_cells = u(value)?,
                "seed" => c.seed = value.parse().map_err(|_| err("not a seed"))?,
                "amplitude_target" => {
                    c.amplitude_target = match value {
                        "total_scale" => AmplitudeTarget::TotalScale,
                        "literal" => AmplitudeTarget::Literal,
                        _ => return Err(err("expected total_scale or literal")),
                    }
                }
                "w_nul" => c.w_nul = f(value)?,
                "w_equ" => c.w_equ = f(value)?,
                "w_forward" => c.w_forward = f(value)?,
                "w_multiregion" => c.w_multiregion = f(value)?,
                "w_background" => c.w_background = f(value)?,
                "w_wave" => c.w_wave = f(value)?,
                "editor_strength" => c.editor_strength = f(value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key `{key}`", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let amp = match self.amplitude_target {
            AmplitudeTarget::TotalScale => "total_scale",
            AmplitudeTarget::Literal => "literal",
        };
        let _ = writeln!(s, "warmup_epochs = {}", self.warmup_epochs);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "weight_decay = {}", self.weight_decay);
        let _ = writeln!(s, "alpha_range = {}, {}", self.alpha_range.0, self.alpha_range.1);
        let _ = writeln!(s, "tau_range = {}, {}", self.tau_range.0, self.tau_range.1);
        let _ = writeln!(s, "rho_range = {}, {}", self.rho_range.0, self.rho_range.1);
        let _ = writeln!(s, "nulling_range = {}, {}", self.nulling_range.0, self.nulling_range.1);
        let _ = writeln!(s, "top_k_cells = {}", self.top_k_cells);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "amplitude_target = {amp}");
        let _ = writeln!(s, "w_nul = {}", self.w_nul);
        let _ = writeln!(s, "w_equ = {}", self.w_equ);
        let _ = writeln!(s, "w_forward = {}", self.w_forward);
        let _ = writeln!(s, "w_multiregion = {}", self.w_multiregion);
        let _ = writeln!(s, "w_background = {}", self.w_background);
        let _ = writeln!(s, "w_wave = {}", self.w_wave);
        let _ = writeln!(s, "editor_strength = {}", self.editor_strength);
        s
    }
}
