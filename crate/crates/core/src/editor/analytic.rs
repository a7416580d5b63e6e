//! Deterministic reference editor: the chrominance pathway without learning.

use crate::clip::VideoClip;
use crate::color::pulse_direction;
use crate::signal::Waveform;
use crate::{Error, Result};

use super::psm::PerturbationSupportMap;
use super::pyramid::{Image, PyramidDecomposition, Pyramid};

/// Something that injects a waveform into a clip's chrominance carrier.
pub trait ClipEditor {
    fn edit(&self, clip: &VideoClip, psm: &PerturbationSupportMap, s: &Waveform) -> Result<VideoClip>;
}

/// `dC_t = strength * s[t] * (-d) * psm` on the low base.
#[derive(Debug, Clone)]
pub struct AnalyticEditor {
    pub pyramid: Pyramid,
    pub strength: f64,
}

impl AnalyticEditor {
    pub fn new(pyramid: Pyramid, strength: f64) -> Self {
        AnalyticEditor { pyramid, strength }
    }

    /// Low-base perturbation for a unit sample.
    pub fn unit_delta(&self, psm: &PerturbationSupportMap) -> Image {
        let d = pulse_direction();
        let mut out = Image::zeros(psm.h, psm.w);
        for y in 0..psm.h {
            for x in 0..psm.w {
                let g = -self.strength * psm.psm[y * psm.w + x];
                out.set_pixel(y, x, d.map(|v| g * v));
            }
        }
        out
    }

    /// Full-resolution interleaved pattern added per unit sample. Because
    /// reconstruction is linear, `X + s[t] * pattern` equals reconstructing
    /// the pyramid with `l + s[t] * unit_delta`.
    pub fn pattern(&self, psm: &PerturbationSupportMap) -> Vec<f64> {
        self.pyramid.expand_low(&self.unit_delta(psm)).to_interleaved()
    }

    /// Edits one decomposition in place of the low base only.
    pub fn edit_decomposition(&self, pd: &PyramidDecomposition, psm: &PerturbationSupportMap, value: f64) -> PyramidDecomposition {
        let delta = self.unit_delta(psm);
        let mut out = pd.clone();
        for (l, d) in out.low.data.iter_mut().zip(&delta.data) {
            *l += value * d;
        }
        out
    }

    fn check(&self, clip: &VideoClip, psm: &PerturbationSupportMap, s: &Waveform) -> Result<()> {
        if s.len() != clip.t {
            return Err(Error::LengthMismatch(s.len(), clip.t));
        }
        if clip.h != self.pyramid.h || clip.w != self.pyramid.w || (psm.h, psm.w) != self.pyramid.low_dims() {
            return Err(Error::Config("clip, support map and pyramid geometry disagree".into()));
        }
        Ok(())
    }

    /// Reference path: decompose, add to the low base, reconstruct, clamp.
    pub fn edit_via_pyramid(&self, clip: &VideoClip, psm: &PerturbationSupportMap, s: &Waveform) -> Result<VideoClip> {
        self.check(clip, psm, s)?;
        let mut frames = Vec::with_capacity(clip.frames.len());
        for t in 0..clip.t {
            let pd = self.pyramid.decompose(&Image::from_interleaved(clip.frame(t), clip.h, clip.w))?;
            let edited = self.pyramid.reconstruct(&self.edit_decomposition(&pd, psm, s.samples[t]));
            frames.extend(edited.to_interleaved().iter().map(|v| v.clamp(0.0, 1.0) as f32));
        }
        Ok(clip.with_frames(frames))
    }
}

impl ClipEditor for AnalyticEditor {
    fn edit(&self, clip: &VideoClip, psm: &PerturbationSupportMap, s: &Waveform) -> Result<VideoClip> {
        self.check(clip, psm, s)?;
        let pattern = self.pattern(psm);
        let mut out = clip.clone();
        for t in 0..clip.t {
            let st = s.samples[t];
            if st == 0.0 {
                continue;
            }
            for (v, p) in out.frame_mut(t).iter_mut().zip(&pattern) {
                *v = (*v as f64 + st * p).clamp(0.0, 1.0) as f32;
            }
        }
        Ok(out)
    }
}

/// One-shot analytic edit with an explicit strength.
pub fn analytic_edit(
    clip: &VideoClip,
    psm: &PerturbationSupportMap,
    s_target: &Waveform,
    strength: f64,
    pyramid: &Pyramid,
) -> Result<VideoClip> {
    AnalyticEditor::new(pyramid.clone(), strength).edit(clip, psm, s_target)
}
