//! Edit fidelity per intervention mode.

use crate::editor::{psnr, ssim, ClipEditor, Pyramid};
use crate::train::LabeledClip;
use crate::{Error, Result};

use super::edits::{styled_edit, EditMode, EditParams, EditStyle};
use super::table::{num, Table};

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityRow {
    pub mode: EditMode,
    pub psnr: f64,
    pub ssim: f64,
    pub n_frames: usize,
}

/// PSNR and SSIM of each mode's edits against the originals, averaged over
/// clips. Hypotheses are the clips' ground-truth pulses.
pub fn fidelity(
    clips: &[LabeledClip],
    modes: &[EditMode],
    style: EditStyle,
    params: &EditParams,
    editor: &dyn ClipEditor,
    pyr: &Pyramid,
) -> Result<Vec<FidelityRow>> {
    if clips.is_empty() {
        return Err(Error::Config("fidelity needs at least one clip".into()));
    }
    modes
        .iter()
        .map(|&mode| {
            let (mut p, mut s, mut frames) = (0.0, 0.0, 0);
            for c in clips {
                let out = styled_edit(&c.clip, &c.layout, &c.s_gt, mode, style, params, editor, pyr)?;
                p += psnr(&c.clip, &out)?;
                s += ssim(&c.clip, &out)?;
                frames += c.clip.t;
            }
            let n = clips.len() as f64;
            Ok(FidelityRow { mode, psnr: p / n, ssim: s / n, n_frames: frames })
        })
        .collect()
}

/// Mean PSNR and SSIM over rows.
pub fn mode_average(rows: &[FidelityRow]) -> (f64, f64) {
    let n = rows.len() as f64;
    (rows.iter().map(|r| r.psnr).sum::<f64>() / n, rows.iter().map(|r| r.ssim).sum::<f64>() / n)
}

pub const HEADER: [&str; 4] = ["mode", "psnr_db", "ssim", "n_frames"];

pub fn fidelity_table(rows: &[FidelityRow]) -> Table {
    let mut t = Table::new(&HEADER);
    for r in rows {
        t.push(vec![r.mode.to_string(), num(r.psnr), num(r.ssim), r.n_frames.to_string()]);
    }
    t
}

pub fn fidelity_from_table(t: &Table) -> Result<Vec<FidelityRow>> {
    if t.header != HEADER {
        return Err(Error::Parse(format!("unexpected fidelity header {:?}", t.header)));
    }
    let f = |v: &str| v.parse::<f64>().map_err(|_| Error::Parse(format!("`{v}` is not a number")));
    t.rows
        .iter()
        .map(|r| {
            Ok(FidelityRow {
                mode: r[0].parse()?,
                psnr: f(&r[1])?,
                ssim: f(&r[2])?,
                n_frames: r[3].parse().map_err(|_| Error::Parse(format!("`{}` is not a count", r[3])))?,
            })
        })
        .collect()
}
