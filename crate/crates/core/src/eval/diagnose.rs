//! Flicker-lock diagnostic: pulse and flicker at known, distinct rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signal::estimate_hr;
use crate::synth::{add_nuisance, synth_clip, NuisanceSpec, RegionLayout, SynthConfig};
use crate::train::LabeledClip;
use crate::Result;

use super::benchmark::Method;
use super::dataset::DatasetConfig;
use super::table::{num, Table};

/// `n` clips at a fixed pulse rate, geometry taken from `cfg`.
pub fn fixed_rate_clips(cfg: &DatasetConfig, n: usize, hr_bpm: f64, seed: u64) -> Result<Vec<LabeledClip>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let sc = SynthConfig {
                seed: rng.random(),
                base_texture_seed: rng.random(),
                hr_bpm,
                fps: cfg.fps,
                pulse_amplitude: cfg.pulse_amplitude,
                sensor_noise_sigma: cfg.sensor_noise_sigma,
                ..SynthConfig::sized(cfg.t, cfg.h, cfg.w)
            };
            let (clip, s_gt) = synth_clip(&sc)?;
            Ok(LabeledClip { clip, layout: RegionLayout::for_frame(cfg.h, cfg.w), s_gt })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlickerRow {
    pub method: String,
    pub clip: usize,
    pub hr_est: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlickerSummary {
    pub method: String,
    /// Share of clips estimated nearer the pulse than the flicker.
    pub nearer_pulse: f64,
    /// Share of clips within `tolerance` of the flicker rate.
    pub locked: f64,
}

/// Estimates on every clip after adding `flicker`. Failed estimates are NaN
/// and count as neither nearer the pulse nor locked.
pub fn flicker_lock(clips: &[LabeledClip], methods: &[Method<'_>], flicker: &NuisanceSpec) -> Result<Vec<FlickerRow>> {
    let mut out = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let f = add_nuisance(&c.clip, flicker);
        for m in methods {
            let hr_est = estimate_hr(&m.extract(c, &f)?).unwrap_or(f64::NAN);
            out.push(FlickerRow { method: m.name(), clip: i, hr_est });
        }
    }
    Ok(out)
}

pub fn summarize(rows: &[FlickerRow], pulse_bpm: f64, flicker_bpm: f64, tolerance: f64) -> Vec<FlickerSummary> {
    let mut names: Vec<&str> = Vec::new();
    for r in rows {
        if !names.contains(&r.method.as_str()) {
            names.push(&r.method);
        }
    }
    names
        .into_iter()
        .map(|name| {
            let sel: Vec<f64> = rows.iter().filter(|r| r.method == name).map(|r| r.hr_est).collect();
            let n = sel.len() as f64;
            let nearer = sel.iter().filter(|h| (*h - pulse_bpm).abs() < (*h - flicker_bpm).abs()).count() as f64;
            let locked = sel.iter().filter(|h| (*h - flicker_bpm).abs() <= tolerance).count() as f64;
            FlickerSummary { method: name.to_string(), nearer_pulse: nearer / n, locked: locked / n }
        })
        .collect()
}

pub fn flicker_table(rows: &[FlickerRow]) -> Table {
    let mut t = Table::new(&["method", "clip", "hr_est"]);
    for r in rows {
        t.push(vec![r.method.clone(), r.clip.to_string(), num(r.hr_est)]);
    }
    t
}

pub fn summary_table(rows: &[FlickerSummary]) -> Table {
    let mut t = Table::new(&["method", "nearer_pulse", "locked_to_flicker"]);
    for r in rows {
        t.push(vec![r.method.clone(), num(r.nearer_pulse), num(r.locked)]);
    }
    t
}
