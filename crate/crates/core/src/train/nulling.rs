//! Coarse-to-fine search for the injection scale that cancels a hypothesis.

use crate::clip::VideoClip;
use crate::editor::{ClipEditor, PerturbationSupportMap};
use crate::extractor::{classical_extract, ClassicalMethod, Extractor};
use crate::signal::{band_energy, bandpass, Waveform};
use crate::Result;

/// Extractor used to score candidate edits.
#[derive(Clone, Copy)]
pub enum Probe<'a> {
    Classical(ClassicalMethod, &'a [f32]),
    Network(&'a Extractor),
}

impl Probe<'_> {
    pub fn signal(&self, clip: &VideoClip) -> Result<Waveform> {
        match self {
            Probe::Classical(m, mask) => classical_extract(clip, mask, *m),
            Probe::Network(e) => Waveform::new(e.raw(clip, None)?, clip.fps),
        }
    }

    pub fn energy(&self, clip: &VideoClip) -> Result<f64> {
        band_energy(&self.signal(clip)?)
    }
}

#[derive(Debug, Clone)]
pub struct NullingResult {
    pub alpha: f64,
    pub clip: VideoClip,
    /// Probe band energy of the nulled clip.
    pub residual_energy: f64,
    /// Probe band energy of the unedited clip.
    pub pre_energy: f64,
    /// Set when the hypothesis has no in-band content; `alpha` is then 0.
    pub degenerate: bool,
    /// Every `(alpha, energy)` pair evaluated, coarse grid first.
    pub trace: Vec<(f64, f64)>,
}

impl NullingResult {
    pub fn residual_fraction(&self) -> f64 {
        if self.pre_energy > 0.0 {
            self.residual_energy / self.pre_energy
        } else {
            1.0
        }
    }
}

/// Band-passed hypothesis scaled to unit RMS, the signal the editor injects.
/// `None` when the hypothesis carries no in-band content.
pub fn unit_hypothesis(s0: &Waveform) -> Result<Option<Waveform>> {
    let b = bandpass(s0)?;
    if b.rms() <= 1e-12 * s0.rms().max(1e-300) {
        return Ok(None);
    }
    Ok(b.standardized())
}

/// Scores five evenly spaced scales over `range`, then refines three times
/// around the best, halving the bracket each time.
pub fn nulling_search(
    clip: &VideoClip,
    s0: &Waveform,
    editor: &dyn ClipEditor,
    psm: &PerturbationSupportMap,
    range: (f64, f64),
    probe: Probe<'_>,
) -> Result<NullingResult> {
    let pre_energy = probe.energy(clip)?;
    let Some(unit) = unit_hypothesis(s0)? else {
        return Ok(NullingResult {
            alpha: 0.0,
            clip: clip.clone(),
            residual_energy: pre_energy,
            pre_energy,
            degenerate: true,
            trace: Vec::new(),
        });
    };
    let mut trace = Vec::new();
    let mut eval = |a: f64| -> Result<(f64, VideoClip)> {
        let edited = editor.edit(clip, psm, &unit.scaled(a))?;
        let e = probe.energy(&edited)?;
        trace.push((a, e));
        Ok((e, edited))
    };
    let (lo, hi) = range;
    let step = (hi - lo) / 4.0;
    let mut best: Option<(f64, f64, VideoClip)> = None;
    for i in 0..5 {
        let a = lo + step * i as f64;
        let (e, c) = eval(a)?;
        if best.as_ref().is_none_or(|b| e < b.1) {
            best = Some((a, e, c));
        }
    }
    let (mut a_best, mut e_best, mut c_best) = best.expect("five candidates");
    let mut half = step / 2.0;
    for _ in 0..3 {
        for a in [a_best - half, a_best + half] {
            if a < lo || a > hi {
                continue;
            }
            let (e, c) = eval(a)?;
            if e < e_best {
                (a_best, e_best, c_best) = (a, e, c);
            }
        }
        half /= 2.0;
    }
    Ok(NullingResult {
        alpha: a_best,
        clip: c_best,
        residual_energy: e_best,
        pre_energy,
        degenerate: false,
        trace,
    })
}
