//! Heart-rate benchmark over clean and nuisance-injected clips.

use std::fmt;
use std::str::FromStr;

use crate::extractor::{classical_extract, ClassicalMethod, Extractor};
use crate::signal::{estimate_hr, pearson, Waveform, HR_HIGH_HZ, HR_LOW_HZ};
use crate::synth::{add_nuisance, NuisanceSpec};
use crate::train::LabeledClip;
use crate::{Error, Result};

use super::table::{num, Table};

pub enum Method<'a> {
    Classical(ClassicalMethod),
    Network { name: String, extractor: &'a Extractor },
}

impl Method<'_> {
    pub fn name(&self) -> String {
        match self {
            Method::Classical(ClassicalMethod::Green) => "green".into(),
            Method::Classical(ClassicalMethod::Chrom) => "chrom".into(),
            Method::Classical(ClassicalMethod::Pos) => "pos".into(),
            Method::Network { name, .. } => name.clone(),
        }
    }

    pub fn extract(&self, c: &LabeledClip, clip: &crate::clip::VideoClip) -> Result<Waveform> {
        match self {
            Method::Classical(m) => {
                let skin = c.clip.mask.clone().unwrap_or_else(|| c.layout.skin_mask(clip.h, clip.w));
                classical_extract(clip, &skin, *m)
            }
            Method::Network { extractor, .. } => extractor.extract(clip),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Clean,
    Illum,
    Motion,
}

impl Scenario {
    pub const ALL: [Scenario; 3] = [Scenario::Clean, Scenario::Illum, Scenario::Motion];
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Clean => "clean",
            Scenario::Illum => "+illum",
            Scenario::Motion => "+motion",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Scenario::Clean),
            "+illum" => Ok(Scenario::Illum),
            "+motion" => Ok(Scenario::Motion),
            _ => Err(Error::Parse(format!("unknown scenario `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Nuisances {
    pub flicker: NuisanceSpec,
    pub motion: NuisanceSpec,
}

impl Default for Nuisances {
    fn default() -> Self {
        Nuisances { flicker: NuisanceSpec::flicker(100.0, 0.02), motion: NuisanceSpec::motion(100.0, 1.5) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipResult {
    pub method: String,
    pub scenario: Scenario,
    pub clip: usize,
    pub hr_gt: f64,
    pub hr_est: f64,
    /// No spectral peak was found; `hr_est` is then the band edge farthest
    /// from the ground truth.
    pub failed: bool,
}

impl ClipResult {
    pub fn abs_error(&self) -> f64 {
        (self.hr_est - self.hr_gt).abs()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub method: String,
    pub scenario: Scenario,
    pub mae: f64,
    pub rmse: f64,
    pub r: f64,
    pub n_clips: usize,
    /// MAE increase over the same method's clean row.
    pub delta_mae: Option<f64>,
}

pub fn aggregate(method: &str, scenario: Scenario, results: &[&ClipResult]) -> MetricsRow {
    let n = results.len();
    let errs: Vec<f64> = results.iter().map(|r| r.abs_error()).collect();
    let mae = errs.iter().sum::<f64>() / n as f64;
    let rmse = (errs.iter().map(|e| e * e).sum::<f64>() / n as f64).sqrt();
    let est: Vec<f64> = results.iter().map(|r| r.hr_est).collect();
    let gt: Vec<f64> = results.iter().map(|r| r.hr_gt).collect();
    // Constant estimates carry no linear association.
    let r = pearson(&est, &gt).unwrap_or(0.0);
    MetricsRow { method: method.into(), scenario, mae, rmse, r, n_clips: n, delta_mae: None }
}

fn hr_or_worst(w: &Waveform, gt: f64) -> (f64, bool) {
    match estimate_hr(w) {
        Ok(hr) => (hr, false),
        Err(_) => {
            let (lo, hi) = (HR_LOW_HZ * 60.0, HR_HIGH_HZ * 60.0);
            (if gt - lo > hi - gt { lo } else { hi }, true)
        }
    }
}

/// Runs every method on every clip in every scenario. Rows come out in
/// method order, then scenario order.
pub fn benchmark(clips: &[LabeledClip], methods: &[Method<'_>], nuisances: &Nuisances) -> Result<(Vec<MetricsRow>, Vec<ClipResult>)> {
    if clips.is_empty() {
        return Err(Error::Config("benchmark needs at least one clip".into()));
    }
    let mut detail = Vec::new();
    for (i, c) in clips.iter().enumerate() {
        let gt = estimate_hr(&c.s_gt)?;
        for sc in Scenario::ALL {
            let clip = match sc {
                Scenario::Clean => c.clip.clone(),
                Scenario::Illum => add_nuisance(&c.clip, &nuisances.flicker),
                Scenario::Motion => add_nuisance(&c.clip, &nuisances.motion),
            };
            for m in methods {
                let (hr_est, failed) = hr_or_worst(&m.extract(c, &clip)?, gt);
                detail.push(ClipResult { method: m.name(), scenario: sc, clip: i, hr_gt: gt, hr_est, failed });
            }
        }
    }
    let mut rows = Vec::new();
    for m in methods {
        let name = m.name();
        let mut clean = 0.0;
        for sc in Scenario::ALL {
            let sel: Vec<&ClipResult> = detail.iter().filter(|r| r.method == name && r.scenario == sc).collect();
            let mut row = aggregate(&name, sc, &sel);
            if sc == Scenario::Clean {
                clean = row.mae;
            } else {
                row.delta_mae = Some(row.mae - clean);
            }
            rows.push(row);
        }
    }
    detail.sort_by(|a, b| a.method.cmp(&b.method).then((a.scenario as u8).cmp(&(b.scenario as u8))).then(a.clip.cmp(&b.clip)));
    Ok((rows, detail))
}

/// Mean ΔMAE over the nuisance scenarios of one method.
pub fn avg_delta_mae(rows: &[MetricsRow], method: &str) -> Option<f64> {
    let d: Vec<f64> = rows.iter().filter(|r| r.method == method).filter_map(|r| r.delta_mae).collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

pub const METRICS_HEADER: [&str; 7] = ["method", "scenario", "mae", "rmse", "r", "n_clips", "delta_mae"];
pub const DETAIL_HEADER: [&str; 7] = ["method", "scenario", "clip", "hr_gt", "hr_est", "abs_error", "failed"];

pub fn metrics_table(rows: &[MetricsRow]) -> Table {
    let mut t = Table::new(&METRICS_HEADER);
    for r in rows {
        t.push(vec![
            r.method.clone(),
            r.scenario.to_string(),
            num(r.mae),
            num(r.rmse),
            num(r.r),
            r.n_clips.to_string(),
            r.delta_mae.map(num).unwrap_or_default(),
        ]);
    }
    t
}

pub fn metrics_from_table(t: &Table) -> Result<Vec<MetricsRow>> {
    if t.header != METRICS_HEADER {
        return Err(Error::Parse(format!("unexpected metrics header {:?}", t.header)));
    }
    let f = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("`{v}` is not a number")));
    t.rows
        .iter()
        .map(|r| {
            Ok(MetricsRow {
                method: r[0].clone(),
                scenario: r[1].parse()?,
                mae: f(&r[2])?,
                rmse: f(&r[3])?,
                r: f(&r[4])?,
                n_clips: r[5].parse().map_err(|_| Error::Parse(format!("`{}` is not a count", r[5])))?,
                delta_mae: if r[6].is_empty() { None } else { Some(f(&r[6])?) },
            })
        })
        .collect()
}

pub fn detail_table(detail: &[ClipResult]) -> Table {
    let mut t = Table::new(&DETAIL_HEADER);
    for d in detail {
        t.push(vec![
            d.method.clone(),
            d.scenario.to_string(),
            d.clip.to_string(),
            num(d.hr_gt),
            num(d.hr_est),
            num(d.abs_error()),
            (d.failed as u8).to_string(),
        ]);
    }
    t
}

pub fn detail_from_table(t: &Table) -> Result<Vec<ClipResult>> {
    if t.header != DETAIL_HEADER {
        return Err(Error::Parse(format!("unexpected detail header {:?}", t.header)));
    }
    let f = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("`{v}` is not a number")));
    t.rows
        .iter()
        .map(|r| {
            Ok(ClipResult {
                method: r[0].clone(),
                scenario: r[1].parse()?,
                clip: r[2].parse().map_err(|_| Error::Parse(format!("`{}` is not an index", r[2])))?,
                hr_gt: f(&r[3])?,
                hr_est: f(&r[4])?,
                failed: r[6] == "1",
            })
        })
        .collect()
}
