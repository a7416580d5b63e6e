//! GREEN, CHROM and POS baselines.
//!
//! All three are oriented so that systolic blood volume (the renderer's `+s`)
//! comes out positive: GREEN and POS are negated relative to their usual
//! formulations, which track reflectance.

use crate::clip::VideoClip;
use crate::signal::{bandpass, rms, Waveform};
use crate::{Error, Result};

/// POS overlap-add window in seconds.
pub const POS_WINDOW_SECONDS: f64 = 1.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalMethod {
    Green,
    Chrom,
    Pos,
}

impl std::str::FromStr for ClassicalMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "green" => Ok(ClassicalMethod::Green),
            "chrom" => Ok(ClassicalMethod::Chrom),
            "pos" => Ok(ClassicalMethod::Pos),
            other => Err(Error::Config(format!("unknown classical method `{other}`"))),
        }
    }
}

pub fn classical_extract(clip: &VideoClip, mask: &[f32], method: ClassicalMethod) -> Result<Waveform> {
    let rgb = clip.region_means(mask)?;
    let raw = match method {
        ClassicalMethod::Green => green(&rgb),
        ClassicalMethod::Chrom => chrom(&rgb, clip.fps)?,
        ClassicalMethod::Pos => pos(&rgb, clip.fps),
    };
    bandpass(&Waveform::new(raw, clip.fps)?)
}

/// Channel means over the whole trace, guarded against black regions.
fn channel_means(rgb: &[[f64; 3]]) -> [f64; 3] {
    let n = rgb.len() as f64;
    let mut m = [0.0; 3];
    for p in rgb {
        for c in 0..3 {
            m[c] += p[c] / n;
        }
    }
    m.map(|v| v.max(1e-9))
}

fn green(rgb: &[[f64; 3]]) -> Vec<f64> {
    let m = channel_means(rgb);
    rgb.iter().map(|p| 1.0 - p[1] / m[1]).collect()
}

fn chrom(rgb: &[[f64; 3]], fps: f64) -> Result<Vec<f64>> {
    let m = channel_means(rgb);
    let (mut xs, mut ys) = (Vec::with_capacity(rgb.len()), Vec::with_capacity(rgb.len()));
    for p in rgb {
        let (r, g, b) = (p[0] / m[0], p[1] / m[1], p[2] / m[2]);
        xs.push(3.0 * r - 2.0 * g);
        ys.push(1.5 * r + g - 1.5 * b);
    }
    let xf = bandpass(&Waveform::new(xs, fps)?)?.samples;
    let yf = bandpass(&Waveform::new(ys, fps)?)?.samples;
    let (sx, sy) = (std_dev(&xf), std_dev(&yf));
    let alpha = if sy > 1e-12 { sx / sy } else { 0.0 };
    Ok(xf.iter().zip(&yf).map(|(x, y)| x - alpha * y).collect())
}

fn pos(rgb: &[[f64; 3]], fps: f64) -> Vec<f64> {
    let n = rgb.len();
    let l = ((POS_WINDOW_SECONDS * fps).round() as usize).clamp(2, n);
    let mut out = vec![0.0; n];
    for start in 0..=n - l {
        let win = &rgb[start..start + l];
        let m = channel_means(win);
        let mut s1 = Vec::with_capacity(l);
        let mut s2 = Vec::with_capacity(l);
        for p in win {
            let (r, g, b) = (p[0] / m[0], p[1] / m[1], p[2] / m[2]);
            s1.push(g - b);
            s2.push(-2.0 * r + g + b);
        }
        let (d1, d2) = (std_dev(&s1), std_dev(&s2));
        let alpha = if d2 > 1e-12 { d1 / d2 } else { 0.0 };
        let h: Vec<f64> = s1.iter().zip(&s2).map(|(a, b)| a + alpha * b).collect();
        let mh = h.iter().sum::<f64>() / l as f64;
        for (k, v) in h.iter().enumerate() {
            out[start + k] -= v - mh;
        }
    }
    out
}

fn std_dev(x: &[f64]) -> f64 {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    rms(&x.iter().map(|v| v - m).collect::<Vec<_>>())
}
