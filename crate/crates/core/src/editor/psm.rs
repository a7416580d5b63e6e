//! Perturbation support map: anatomical prior times static consensus.

use crate::clip::VideoClip;
use crate::signal::{bandpass, pearson, Waveform};
use crate::synth::RegionLayout;
use crate::{Error, Result};

use crate::color::suppress_luma;

use super::pyramid::Pyramid;

/// Side of the consensus grid.
pub const GRID: usize = 8;

/// Per-cell spatial means of the luminance-suppressed green channel, one
/// series per cell of the `GRID x GRID` partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSeries {
    pub series: Vec<Waveform>,
    /// Mean anatomical prior per cell.
    pub prior: Vec<f64>,
}

impl CellSeries {
    pub fn compute(clip: &VideoClip, layout: &RegionLayout, pyr: &Pyramid) -> Result<Self> {
        check_geometry(clip, pyr)?;
        let (ch, cw) = (clip.h / GRID, clip.w / GRID);
        let area = (ch * cw) as f64;
        let mut series: Vec<Vec<f64>> = (0..GRID * GRID).map(|_| Vec::with_capacity(clip.t)).collect();
        for t in 0..clip.t {
            let f = clip.frame(t);
            for (k, out) in series.iter_mut().enumerate() {
                let (i, j) = (k / GRID, k % GRID);
                let mut rgb = [0.0; 3];
                for y in i * ch..(i + 1) * ch {
                    for x in j * cw..(j + 1) * cw {
                        let p = (y * clip.w + x) * 3;
                        for c in 0..3 {
                            rgb[c] += f[p + c] as f64;
                        }
                    }
                }
                // Luminance suppression is linear, so it commutes with the cell mean.
                out.push(suppress_luma(rgb.map(|v| v / area))[1]);
            }
        }
        let prior_full = layout.prior(clip.h, clip.w);
        let prior = (0..GRID * GRID)
            .map(|k| {
                let (i, j) = (k / GRID, k % GRID);
                let mut s = 0.0;
                for y in i * ch..(i + 1) * ch {
                    for x in j * cw..(j + 1) * cw {
                        s += prior_full[y * clip.w + x];
                    }
                }
                s / (ch * cw) as f64
            })
            .collect();
        let series = series.into_iter().map(|s| Waveform::new(s, clip.fps)).collect::<Result<_>>()?;
        Ok(CellSeries { series, prior })
    }

    /// `|pearson(BP(cell), BP(s0))|` per cell, 0 for degenerate cells.
    pub fn consensus(&self, s0: &Waveform) -> Result<Vec<f64>> {
        if let Some(first) = self.series.first() {
            if first.len() != s0.len() {
                return Err(Error::LengthMismatch(s0.len(), first.len()));
            }
        }
        let target = bandpass(s0)?;
        self.series
            .iter()
            .map(|s| {
                if is_flat(&s.samples) {
                    return Ok(0.0);
                }
                let bp = bandpass(s)?;
                Ok(match pearson(&bp.samples, &target.samples) {
                    Ok(r) => r.abs().clamp(0.0, 1.0),
                    Err(Error::ZeroVariance) => 0.0,
                    Err(e) => return Err(e),
                })
            })
            .collect()
    }
}

fn is_flat(x: &[f64]) -> bool {
    let (lo, hi) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    hi - lo <= 1e-12 * hi.abs().max(lo.abs()).max(1e-12)
}

fn check_geometry(clip: &VideoClip, pyr: &Pyramid) -> Result<()> {
    if clip.h != pyr.h || clip.w != pyr.w {
        return Err(Error::Config(format!(
            "clip {}x{} does not match pyramid {}x{}",
            clip.h, clip.w, pyr.h, pyr.w
        )));
    }
    if !clip.h.is_multiple_of(GRID) || !clip.w.is_multiple_of(GRID) {
        return Err(Error::Config(format!("{}x{} frame is not divisible into an {GRID}x{GRID} grid", clip.h, clip.w)));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSupportMap {
    /// Anatomical prior at low-base resolution.
    pub a: Vec<f64>,
    /// Consensus grid, row-major `GRID x GRID`.
    pub w_static: Vec<f64>,
    /// `a` times the consensus grid upsampled to low-base resolution.
    pub psm: Vec<f64>,
    pub h: usize,
    pub w: usize,
}

impl PerturbationSupportMap {
    pub fn from_parts(layout: &RegionLayout, pyr: &Pyramid, w_static: Vec<f64>) -> Self {
        let (lh, lw) = pyr.low_dims();
        let f = pyr.h / lh;
        let prior = layout.prior(pyr.h, pyr.w);
        let a: Vec<f64> = (0..lh * lw)
            .map(|k| {
                let (y0, x0) = ((k / lw) * f, (k % lw) * f);
                let mut s = 0.0;
                for y in y0..y0 + f {
                    for x in x0..x0 + f {
                        s += prior[y * pyr.w + x];
                    }
                }
                s / (f * f) as f64
            })
            .collect();
        let psm = (0..lh * lw)
            .map(|k| {
                let (i, j) = ((k / lw) * GRID / lh, (k % lw) * GRID / lw);
                a[k] * w_static[i * GRID + j]
            })
            .collect();
        PerturbationSupportMap { a, w_static, psm, h: lh, w: lw }
    }

    /// Uniform consensus: the map reduces to the anatomical prior.
    pub fn prior_only(layout: &RegionLayout, pyr: &Pyramid) -> Self {
        Self::from_parts(layout, pyr, vec![1.0; GRID * GRID])
    }
}

pub fn compute_psm(clip: &VideoClip, layout: &RegionLayout, s0: &Waveform, pyr: &Pyramid) -> Result<PerturbationSupportMap> {
    if s0.len() != clip.t {
        return Err(Error::LengthMismatch(s0.len(), clip.t));
    }
    let cells = CellSeries::compute(clip, layout, pyr)?;
    Ok(PerturbationSupportMap::from_parts(layout, pyr, cells.consensus(s0)?))
}

/// Indices of the `k` most consistent cells with nonzero prior, best first.
pub fn top_cells(w_static: &[f64], prior: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..w_static.len()).filter(|&i| prior[i] > 0.0).collect();
    idx.sort_by(|&a, &b| w_static[b].total_cmp(&w_static[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Full-resolution mask covering a cell and its 3x3 cell neighbourhood.
pub fn cell_region_mask(cell: usize, h: usize, w: usize) -> Vec<f32> {
    let (i, j) = ((cell / GRID) as isize, (cell % GRID) as isize);
    let (ch, cw) = (h / GRID, w / GRID);
    let mut m = vec![0.0; h * w];
    for di in -1..=1 {
        for dj in -1..=1 {
            let (a, b) = (i + di, j + dj);
            if a < 0 || b < 0 || a >= GRID as isize || b >= GRID as isize {
                continue;
            }
            for y in a as usize * ch..(a as usize + 1) * ch {
                for x in b as usize * cw..(b as usize + 1) * cw {
                    m[y * w + x] = 1.0;
                }
            }
        }
    }
    m
}
