//! Signal operations expressed on the differentiation graph, mirroring the
//! plain versions in [`crate::signal`].

use std::f64::consts::PI;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::signal::{band_bins, fir_kernel, HR_HIGH_HZ, HR_LOW_HZ, SPECTRAL_EPS};
use crate::Result;

/// Guards the correlation denominator against flat inputs.
pub const PEARSON_EPS: f64 = 1e-24;

/// Mean removal followed by the heart-rate band FIR, as in
/// [`crate::signal::bandpass`].
pub fn bandpass(g: &mut Graph, x: Var, sample_rate: f64) -> Result<Var> {
    let m = g.mean(x)?;
    let c = g.sub(x, m)?;
    Ok(g.conv1d_fixed(c, fir_kernel(sample_rate))?)
}

fn center(g: &mut Graph, x: Var) -> Result<Var> {
    let m = g.mean(x)?;
    Ok(g.sub(x, m)?)
}

/// Correlation coefficient of two equal-length vectors.
pub fn pearson(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let (ac, bc) = (center(g, a)?, center(g, b)?);
    let ab = g.mul(ac, bc)?;
    let cov = g.sum(ab)?;
    let aa = g.square(ac)?;
    let va = g.sum(aa)?;
    let bb = g.square(bc)?;
    let vb = g.sum(bb)?;
    let prod = g.mul(va, vb)?;
    let prod = g.add_scalar(prod, PEARSON_EPS)?;
    let den = g.sqrt(prod)?;
    Ok(g.div(cov, den)?)
}

pub fn mean_abs_diff(g: &mut Graph, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d)?;
    Ok(g.mean(d)?)
}

pub fn mean_square(g: &mut Graph, a: Var) -> Result<Var> {
    let s = g.square(a)?;
    Ok(g.mean(s)?)
}

/// Normalized Hann periodogram over the heart-rate band on the native grid.
pub fn band_psd(g: &mut Graph, x: Var, sample_rate: f64) -> Result<Var> {
    let n = g.shape(x)[0];
    let freqs = band_bins(n, sample_rate, (HR_LOW_HZ, HR_HIGH_HZ));
    let nb = freqs.len();
    let mut cos = vec![0.0; n * nb];
    let mut sin = vec![0.0; n * nb];
    for i in 0..n {
        let hw = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        for (k, f) in freqs.iter().enumerate() {
            let a = 2.0 * PI * f / sample_rate * i as f64;
            cos[i * nb + k] = hw * a.cos();
            sin[i * nb + k] = hw * a.sin();
        }
    }
    let c = center(g, x)?;
    let row = g.reshape(c, &[1, n])?;
    let cm = g.constant(Tensor::new(vec![n, nb], cos)?)?;
    let sm = g.constant(Tensor::new(vec![n, nb], sin)?)?;
    let re = g.matmul(row, cm)?;
    let im = g.matmul(row, sm)?;
    let re2 = g.square(re)?;
    let im2 = g.square(im)?;
    let p = g.add(re2, im2)?;
    let p = g.reshape(p, &[nb])?;
    let total = g.sum(p)?;
    let total = g.add_scalar(total, 1e-300)?;
    Ok(g.div(p, total)?)
}

/// `-sum p ln(p + eps)` of a distribution.
pub fn entropy(g: &mut Graph, p: Var) -> Result<Var> {
    let l = g.add_scalar(p, SPECTRAL_EPS)?;
    let l = g.ln(l)?;
    let pl = g.mul(p, l)?;
    let s = g.sum(pl)?;
    Ok(g.neg(s)?)
}

/// Jensen-Shannon divergence of two distributions on the same bins.
pub fn js_divergence(g: &mut Graph, p: Var, q: Var) -> Result<Var> {
    let pq = g.add(p, q)?;
    let m = g.scale(pq, 0.5)?;
    let me = g.add_scalar(m, SPECTRAL_EPS)?;
    let lm = g.ln(me)?;
    let mut terms = Vec::new();
    for d in [p, q] {
        let de = g.add_scalar(d, SPECTRAL_EPS)?;
        let ld = g.ln(de)?;
        let r = g.sub(ld, lm)?;
        let t = g.mul(d, r)?;
        terms.push(g.sum(t)?);
    }
    let s = g.add(terms[0], terms[1])?;
    Ok(g.scale(s, 0.5)?)
}

/// Spectral entropy of the whole signal divided by `ln(bins)`, plus the JS
/// divergence between the spectra of its two halves.
pub fn waveform_prior(g: &mut Graph, x: Var, sample_rate: f64) -> Result<Var> {
    let n = g.shape(x)[0];
    let p = band_psd(g, x, sample_rate)?;
    let bins = g.shape(p)[0].max(2);
    let h = entropy(g, p)?;
    let h = g.scale(h, 1.0 / (bins as f64).ln())?;
    let half = n / 2;
    let a = g.slice(x, 0, 0, half)?;
    let b = g.slice(x, 0, n - half, half)?;
    let pa = band_psd(g, a, sample_rate)?;
    let pb = band_psd(g, b, sample_rate)?;
    let js = js_divergence(g, pa, pb)?;
    Ok(g.add(h, js)?)
}
