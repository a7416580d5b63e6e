//! The four intervention modes applied to a clip through a frozen editor.

use std::fmt;
use std::str::FromStr;

use crate::clip::VideoClip;
use crate::editor::{compute_psm, ClipEditor, Pyramid};
use crate::extractor::ClassicalMethod;
use crate::signal::{bandpass, transform_signal, TransformSpec, Waveform};
use crate::synth::RegionLayout;
use crate::train::nulling::{nulling_search, unit_hypothesis, Probe};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditMode {
    Null,
    Amplitude,
    Phase,
    Frequency,
}

impl EditMode {
    pub const ALL: [EditMode; 4] = [EditMode::Null, EditMode::Amplitude, EditMode::Phase, EditMode::Frequency];
}

impl fmt::Display for EditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditMode::Null => "null",
            EditMode::Amplitude => "amplitude",
            EditMode::Phase => "phase",
            EditMode::Frequency => "frequency",
        })
    }
}

impl FromStr for EditMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "null" => Ok(EditMode::Null),
            "amplitude" => Ok(EditMode::Amplitude),
            "phase" => Ok(EditMode::Phase),
            "frequency" => Ok(EditMode::Frequency),
            _ => Err(Error::Config(format!("unknown edit mode `{s}`"))),
        }
    }
}

/// How a mode is realized on the clip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditStyle {
    /// One editor call with the mode's transformed unit hypothesis as target.
    Single,
    /// Training-time interventions: nulling search, then injection at the
    /// cancelling scale, remove-then-add for phase and frequency.
    Intervention,
}

impl fmt::Display for EditStyle {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditStyle::Single => "single",
            EditStyle::Intervention => "intervention",
        })
    }
}

impl FromStr for EditStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(EditStyle::Single),
            "intervention" => Ok(EditStyle::Intervention),
            _ => Err(Error::Config(format!("unknown edit style `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EditParams {
    /// Extra scale added on top of the clip's own pulse.
    pub alpha: f64,
    pub tau: i64,
    pub rho: f64,
    pub nulling_range: (f64, f64),
}

impl Default for EditParams {
    fn default() -> Self {
        EditParams { alpha: 1.0, tau: 6, rho: 1.5, nulling_range: (-2.0, 0.0) }
    }
}

#[derive(Debug, Clone)]
pub struct EditOutcome {
    pub clip: VideoClip,
    pub alpha_star: f64,
    /// Residual band energy of the nulled clip over the original's.
    pub residual_fraction: f64,
    pub degenerate: bool,
}

/// Edits `clip` according to hypothesis `s0`. Nulling searches the scale
/// that cancels `s0` under a POS probe on the skin region; the other modes
/// inject at that natural scale, with phase and frequency applied to the
/// nulled clip (remove, then add the transformed hypothesis).
pub fn pcp_edit(
    clip: &VideoClip,
    layout: &RegionLayout,
    s0: &Waveform,
    mode: EditMode,
    params: &EditParams,
    editor: &dyn ClipEditor,
    pyr: &Pyramid,
) -> Result<EditOutcome> {
    let psm = compute_psm(clip, layout, s0, pyr)?;
    let skin = layout.skin_mask(clip.h, clip.w);
    let probe = Probe::Classical(ClassicalMethod::Pos, &skin);
    let nul = nulling_search(clip, s0, editor, &psm, params.nulling_range, probe)?;
    let residual_fraction = nul.residual_fraction();
    let unit = match unit_hypothesis(s0)? {
        Some(u) if !nul.degenerate => u,
        _ => {
            return Ok(EditOutcome { clip: clip.clone(), alpha_star: 0.0, residual_fraction, degenerate: true });
        }
    };
    let kappa = -nul.alpha;
    let edited = match mode {
        EditMode::Null => nul.clip,
        EditMode::Amplitude => editor.edit(clip, &psm, &unit.scaled(params.alpha * kappa))?,
        EditMode::Phase => {
            let moved = transform_signal(&unit, TransformSpec::Phase { tau: params.tau })?;
            editor.edit(&nul.clip, &psm, &moved.scaled(kappa))?
        }
        EditMode::Frequency => {
            let moved = transform_signal(&unit, TransformSpec::Frequency { rho: params.rho })?;
            editor.edit(&nul.clip, &psm, &moved.scaled(kappa))?
        }
    };
    Ok(EditOutcome { clip: edited, alpha_star: nul.alpha, residual_fraction, degenerate: false })
}

/// One editor call: `-u`, `alpha * u`, `tau(u)` or `rho(u)` for the unit
/// band-passed hypothesis `u`.
pub fn single_edit(
    clip: &VideoClip,
    layout: &RegionLayout,
    s0: &Waveform,
    mode: EditMode,
    params: &EditParams,
    editor: &dyn ClipEditor,
    pyr: &Pyramid,
) -> Result<VideoClip> {
    let psm = compute_psm(clip, layout, s0, pyr)?;
    let Some(unit) = unit_hypothesis(s0)? else {
        return Ok(clip.clone());
    };
    let target = match mode {
        EditMode::Null => unit.scaled(-1.0),
        EditMode::Amplitude => unit.scaled(params.alpha),
        EditMode::Phase => transform_signal(&unit, TransformSpec::Phase { tau: params.tau })?,
        EditMode::Frequency => transform_signal(&unit, TransformSpec::Frequency { rho: params.rho })?,
    };
    editor.edit(clip, &psm, &target)
}

pub fn styled_edit(
    clip: &VideoClip,
    layout: &RegionLayout,
    s0: &Waveform,
    mode: EditMode,
    style: EditStyle,
    params: &EditParams,
    editor: &dyn ClipEditor,
    pyr: &Pyramid,
) -> Result<VideoClip> {
    match style {
        EditStyle::Single => single_edit(clip, layout, s0, mode, params, editor, pyr),
        EditStyle::Intervention => Ok(pcp_edit(clip, layout, s0, mode, params, editor, pyr)?.clip),
    }
}

/// Rescales the clip's pulse to `alpha` times its natural amplitude for each
/// `alpha` (so `-1` inverts it and `0` nulls it) and returns the band-passed
/// POS signal of every edited clip.
pub fn amplitude_sweep(
    clip: &VideoClip,
    layout: &RegionLayout,
    s0: &Waveform,
    alphas: &[f64],
    editor: &dyn ClipEditor,
    pyr: &Pyramid,
) -> Result<Vec<(f64, Waveform)>> {
    let psm = compute_psm(clip, layout, s0, pyr)?;
    let skin = layout.skin_mask(clip.h, clip.w);
    let probe = Probe::Classical(ClassicalMethod::Pos, &skin);
    let nul = nulling_search(clip, s0, editor, &psm, EditParams::default().nulling_range, probe)?;
    let unit = unit_hypothesis(s0)?.ok_or(Error::ZeroVariance)?;
    let kappa = -nul.alpha;
    alphas
        .iter()
        .map(|&a| {
            let edited = editor.edit(clip, &psm, &unit.scaled((a - 1.0) * kappa))?;
            Ok((a, bandpass(&probe.signal(&edited)?)?))
        })
        .collect()
}
