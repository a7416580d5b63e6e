//! PSNR and SSIM between clips.

use crate::clip::VideoClip;
use crate::{Error, Result};

/// Reported in place of +inf for identical clips.
pub const PSNR_SENTINEL: f64 = 100.0;

fn same_shape(a: &VideoClip, b: &VideoClip) -> Result<()> {
    if (a.t, a.h, a.w) != (b.t, b.h, b.w) {
        return Err(Error::Config(format!(
            "clip shapes differ: {}x{}x{} vs {}x{}x{}",
            a.t, a.h, a.w, b.t, b.h, b.w
        )));
    }
    Ok(())
}

/// Peak 1.0, MSE over every sample of every frame.
pub fn psnr(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    same_shape(a, b)?;
    let mse = a
        .frames
        .iter()
        .zip(&b.frames)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum::<f64>()
        / a.frames.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_SENTINEL);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(PSNR_SENTINEL))
}

const WIN: usize = 11;
const SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

fn gaussian() -> [f64; WIN] {
    let mut g = [0.0; WIN];
    let c = (WIN / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        *v = (-(i as f64 - c).powi(2) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable Gaussian filter over valid positions only.
fn filter_valid(x: &[f64], h: usize, w: usize, g: &[f64; WIN]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - WIN, w + 1 - WIN);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            tmp[y * ow + xo] = (0..WIN).map(|k| g[k] * x[y * w + xo + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..WIN).map(|k| g[k] * tmp[(yo + k) * ow + xo]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, g: &[f64; WIN]) -> f64 {
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let ma = filter_valid(a, h, w, g);
    let mb = filter_valid(b, h, w, g);
    let saa = filter_valid(&prod(a, a), h, w, g);
    let sbb = filter_valid(&prod(b, b), h, w, g);
    let sab = filter_valid(&prod(a, b), h, w, g);
    let n = ma.len();
    (0..n)
        .map(|i| {
            let (mu_a, mu_b) = (ma[i], mb[i]);
            let va = saa[i] - mu_a * mu_a;
            let vb = sbb[i] - mu_b * mu_b;
            let cov = sab[i] - mu_a * mu_b;
            ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (va + vb + C2))
        })
        .sum::<f64>()
        / n as f64
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03, L = 1)
/// over frames and channels.
pub fn ssim(a: &VideoClip, b: &VideoClip) -> Result<f64> {
    same_shape(a, b)?;
    if a.h < WIN || a.w < WIN {
        return Err(Error::Config(format!("SSIM needs frames of at least {WIN}x{WIN}")));
    }
    let g = gaussian();
    let n = a.h * a.w;
    let mut total = 0.0;
    for t in 0..a.t {
        let (fa, fb) = (a.frame(t), b.frame(t));
        for c in 0..3 {
            let pa: Vec<f64> = (0..n).map(|p| fa[p * 3 + c] as f64).collect();
            let pb: Vec<f64> = (0..n).map(|p| fb[p * 3 + c] as f64).collect();
            total += ssim_plane(&pa, &pb, a.h, a.w, &g);
        }
    }
    Ok((total / (3 * a.t) as f64).clamp(-1.0, 1.0))
}
