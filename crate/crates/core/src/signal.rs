//! Band-limited waveform analysis and the signal-domain transforms that
//! mirror each video intervention.

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use crate::{Error, Result};

/// Lower edge of the heart-rate band in Hz (40 bpm).
pub const HR_LOW_HZ: f64 = 0.67;
/// Upper edge of the heart-rate band in Hz (240 bpm).
pub const HR_HIGH_HZ: f64 = 4.0;
/// Number of taps of the band-pass FIR.
pub const FIR_TAPS: usize = 127;
/// Additive guard inside every logarithm of a spectral distribution.
pub const SPECTRAL_EPS: f64 = 1e-8;
/// Shortest waveform accepted by [`psd`].
pub const MIN_PSD_LEN: usize = 64;

/// Uniformly sampled real signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::OutOfRange(format!("sample rate {sample_rate}")));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::OutOfRange("non-finite sample".into()));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Self {
        Waveform {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    pub fn rms(&self) -> f64 {
        rms(&self.samples)
    }

    /// Mean of squared samples.
    pub fn energy(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64
    }

    pub fn scaled(&self, s: f64) -> Waveform {
        self.with_samples(self.samples.iter().map(|v| v * s).collect())
    }

    /// Zero mean, unit RMS; `None` when the signal is numerically flat.
    pub fn standardized(&self) -> Option<Waveform> {
        let m = self.mean();
        let c: Vec<f64> = self.samples.iter().map(|v| v - m).collect();
        let r = rms(&c);
        (r > 1e-12).then(|| self.with_samples(c.iter().map(|v| v / r).collect()))
    }

    /// Two-column CSV (`t_seconds,value`).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t_seconds,value")?;
        for (i, v) in self.samples.iter().enumerate() {
            writeln!(w, "{},{}", i as f64 / self.sample_rate, v)?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Waveform> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty waveform file".into()))??;
        if header.trim() != "t_seconds,value" {
            return Err(Error::Parse(format!("unexpected header `{header}`")));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for (n, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (t, v) = line
                .split_once(',')
                .ok_or_else(|| Error::Parse(format!("line {}: expected two columns", n + 2)))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Parse(format!("line {}: {e}", n + 2)))
            };
            times.push(parse(t)?);
            values.push(parse(v)?);
        }
        if times.len() < 2 {
            return Err(Error::TooShort {
                need: 2,
                got: times.len(),
            });
        }
        let dt = (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64;
        Waveform::new(values, 1.0 / dt)
    }
}

pub(crate) fn mean(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        x.iter().sum::<f64>() / x.len() as f64
    }
}

pub(crate) fn rms(x: &[f64]) -> f64 {
    if x.is_empty() {
        0.0
    } else {
        (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
    }
}

/// Hamming-windowed sinc band-pass for `[HR_LOW_HZ, HR_HIGH_HZ]` at the given
/// sample rate, normalized to unit gain at the band's geometric center.
pub fn fir_kernel(sample_rate: f64) -> Arc<[f64]> {
    let n = FIR_TAPS;
    let mid = (n - 1) as f64 / 2.0;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let lowpass = |fc: f64, k: f64| 2.0 * fc / sample_rate * sinc(2.0 * fc / sample_rate * k);
    let mut taps: Vec<f64> = (0..n)
        .map(|i| {
            let k = i as f64 - mid;
            let window = 0.54 - 0.46 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
            (lowpass(HR_HIGH_HZ.min(sample_rate / 2.0), k) - lowpass(HR_LOW_HZ, k)) * window
        })
        .collect();
    let gain = fir_response(&taps, (HR_LOW_HZ * HR_HIGH_HZ).sqrt(), sample_rate);
    for t in &mut taps {
        *t /= gain;
    }
    taps.into()
}

/// Magnitude response of a FIR at `freq` Hz.
pub fn fir_response(taps: &[f64], freq: f64, sample_rate: f64) -> f64 {
    let w = 2.0 * PI * freq / sample_rate;
    let (mut re, mut im) = (0.0, 0.0);
    for (i, t) in taps.iter().enumerate() {
        re += t * (w * i as f64).cos();
        im -= t * (w * i as f64).sin();
    }
    (re * re + im * im).sqrt()
}

/// Zero-padded "same" convolution with the centered kernel.
pub(crate) fn convolve_same(x: &[f64], k: &[f64]) -> Vec<f64> {
    let n = x.len() as isize;
    let h = (k.len() / 2) as isize;
    (0..x.len())
        .map(|t| {
            k.iter()
                .enumerate()
                .filter_map(|(j, kv)| {
                    let s = t as isize - j as isize + h;
                    (s >= 0 && s < n).then(|| kv * x[s as usize])
                })
                .sum()
        })
        .collect()
}

/// Linear-phase band-pass over the heart-rate band; output length equals
/// input length. The sample mean is removed before the zero-padded
/// convolution so a DC offset cannot ring at the clip edges.
pub fn bandpass(w: &Waveform) -> Result<Waveform> {
    if w.sample_rate < 10.0 {
        return Err(Error::OutOfRange(format!(
            "band-pass needs a sample rate of at least 10 Hz, got {}",
            w.sample_rate
        )));
    }
    if w.len() < FIR_TAPS {
        return Err(Error::TooShort {
            need: FIR_TAPS,
            got: w.len(),
        });
    }
    let k = fir_kernel(w.sample_rate);
    let m = w.mean();
    let centered: Vec<f64> = w.samples.iter().map(|v| v - m).collect();
    Ok(w.with_samples(convolve_same(&centered, &k)))
}

/// Power distribution over a frequency band.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub freqs: Vec<f64>,
    pub power: Vec<f64>,
    pub band: (f64, f64),
}

impl Spectrum {
    pub fn argmax_freq(&self) -> f64 {
        let (i, _) = self
            .power
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc });
        self.freqs[i]
    }

    pub fn bin_width(&self) -> f64 {
        if self.freqs.len() > 1 {
            self.freqs[1] - self.freqs[0]
        } else {
            0.0
        }
    }
}

pub(crate) fn hann(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

/// Native-resolution bins (`k * fs / N`) that fall inside the band.
pub fn band_bins(len: usize, sample_rate: f64, band: (f64, f64)) -> Vec<f64> {
    let df = sample_rate / len as f64;
    (0..=len / 2)
        .map(|k| k as f64 * df)
        .filter(|f| *f >= band.0 && *f <= band.1)
        .collect()
}

/// Unnormalized periodogram of the mean-removed, Hann-windowed signal at
/// arbitrary frequencies.
pub fn periodogram_at(samples: &[f64], sample_rate: f64, freqs: &[f64]) -> Vec<f64> {
    let m = mean(samples);
    let win = hann(samples.len());
    let x: Vec<f64> = samples.iter().zip(&win).map(|(v, w)| (v - m) * w).collect();
    freqs
        .iter()
        .map(|f| {
            let w = 2.0 * PI * f / sample_rate;
            let (mut re, mut im) = (0.0, 0.0);
            for (i, v) in x.iter().enumerate() {
                let a = w * i as f64;
                re += v * a.cos();
                im -= v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

fn normalized(p: Vec<f64>) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    if s > 0.0 {
        p.into_iter().map(|v| v / s).collect()
    } else {
        let n = p.len() as f64;
        vec![1.0 / n; p.len()]
    }
}

/// Periodogram restricted to `band` on the native frequency grid, normalized
/// to sum 1.
pub fn psd(w: &Waveform, band: (f64, f64)) -> Result<Spectrum> {
    if w.len() < MIN_PSD_LEN {
        return Err(Error::TooShort {
            need: MIN_PSD_LEN,
            got: w.len(),
        });
    }
    let freqs = band_bins(w.len(), w.sample_rate, band);
    if freqs.is_empty() {
        return Err(Error::EmptyBand(band.0, band.1));
    }
    let power = normalized(periodogram_at(&w.samples, w.sample_rate, &freqs));
    Ok(Spectrum { freqs, power, band })
}

/// Grid refinement factor used when locating the heart-rate peak.
const HR_GRID_REFINE: usize = 16;

/// Heart rate in bpm: 60 times the frequency of the largest periodogram peak
/// in the heart-rate band, located on a 16x zero-padded grid.
pub fn estimate_hr(w: &Waveform) -> Result<f64> {
    if w.len() < MIN_PSD_LEN {
        return Err(Error::TooShort {
            need: MIN_PSD_LEN,
            got: w.len(),
        });
    }
    let df = w.sample_rate / (w.len() * HR_GRID_REFINE) as f64;
    let k0 = (HR_LOW_HZ / df).ceil() as usize;
    let k1 = (HR_HIGH_HZ / df).floor() as usize;
    let freqs: Vec<f64> = (k0..=k1).map(|k| k as f64 * df).collect();
    let p = periodogram_at(&w.samples, w.sample_rate, &freqs);
    let scale = w.samples.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
    let (i, best) = p
        .iter()
        .enumerate()
        .fold((0, 0.0f64), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if best <= 1e-20 * scale * w.len() as f64 || best <= 1e-300 {
        return Err(Error::NoPeak);
    }
    Ok(60.0 * freqs[i])
}

/// Pearson correlation coefficient.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    let scale_a = a.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let scale_b = b.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let n = a.len() as f64;
    if saa <= n * (1e-14 * scale_a).powi(2) || sbb <= n * (1e-14 * scale_b).powi(2) {
        return Err(Error::ZeroVariance);
    }
    Ok((sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0))
}

/// Signal-domain counterpart of a video intervention.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TransformSpec {
    /// Multiply by `alpha`.
    Amplitude { alpha: f64 },
    /// Circular delay by `tau` samples.
    Phase { tau: i64 },
    /// Compress the time axis by `rho` (multiplies every frequency by `rho`),
    /// then crop or tile back to the original length.
    Frequency { rho: f64 },
}

pub const RHO_MIN: f64 = 0.5;
pub const RHO_MAX: f64 = 3.0;

pub fn transform_signal(s: &Waveform, spec: TransformSpec) -> Result<Waveform> {
    let n = s.len();
    match spec {
        TransformSpec::Amplitude { alpha } => {
            if !alpha.is_finite() {
                return Err(Error::OutOfRange(format!("alpha {alpha}")));
            }
            Ok(s.scaled(alpha))
        }
        TransformSpec::Phase { tau } => {
            if tau.unsigned_abs() as usize >= n {
                return Err(Error::OutOfRange(format!("|tau| = {} >= length {n}", tau.abs())));
            }
            let shift = tau.rem_euclid(n as i64) as usize;
            let mut out = vec![0.0; n];
            for (i, v) in s.samples.iter().enumerate() {
                out[(i + shift) % n] = *v;
            }
            Ok(s.with_samples(out))
        }
        TransformSpec::Frequency { rho } => {
            if !(RHO_MIN..=RHO_MAX).contains(&rho) {
                return Err(Error::OutOfRange(format!("rho {rho} outside [{RHO_MIN}, {RHO_MAX}]")));
            }
            if n < 2 {
                return Err(Error::TooShort { need: 2, got: n });
            }
            let last = (n - 1) as f64;
            let compressed_len = (last / rho).floor() as usize + 1;
            let compressed: Vec<f64> = (0..compressed_len)
                .map(|j| {
                    let pos = (rho * j as f64).min(last);
                    let i0 = pos.floor() as usize;
                    let i1 = (i0 + 1).min(n - 1);
                    let frac = pos - i0 as f64;
                    s.samples[i0] * (1.0 - frac) + s.samples[i1] * frac
                })
                .collect();
            let period = if compressed_len >= n {
                n
            } else {
                loop_length(&compressed, s.sample_rate)
            };
            Ok(s.with_samples((0..n).map(|i| compressed[i % period]).collect()))
        }
    }
}

/// Tile length for a compressed segment: the prefix length in
/// `[len / 2, len - K]` whose continuation best matches the first `K`
/// samples (`K` = one second), so the tiled signal wraps without a phase jump.
fn loop_length(c: &[f64], sample_rate: f64) -> usize {
    let m = c.len();
    let k = (sample_rate.round() as usize).min(m / 4);
    if k < 2 {
        return m;
    }
    let head = &c[..k];
    let lo = m.div_ceil(2);
    let mut best = (m, f64::NEG_INFINITY);
    for cand in lo..=m - k {
        let score = match pearson(head, &c[cand..cand + k]) {
            Ok(r) => r,
            Err(_) => continue,
        };
        if score >= best.1 {
            best = (cand, score);
        }
    }
    best.0
}

/// `-sum p ln(p + eps)`.
pub fn spectral_entropy(sp: &Spectrum) -> f64 {
    sp.power.iter().map(|p| -p * (p + SPECTRAL_EPS).ln()).sum::<f64>().max(0.0)
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &Spectrum, q: &Spectrum) -> Result<f64> {
    let same = p.freqs.len() == q.freqs.len()
        && p.freqs.iter().zip(&q.freqs).all(|(a, b)| (a - b).abs() <= 1e-9 * a.abs().max(1.0));
    if !same {
        return Err(Error::MismatchedBins);
    }
    let mut js = 0.0;
    for (a, b) in p.power.iter().zip(&q.power) {
        let m = 0.5 * (a + b);
        js += 0.5 * a * ((a + SPECTRAL_EPS) / (m + SPECTRAL_EPS)).ln();
        js += 0.5 * b * ((b + SPECTRAL_EPS) / (m + SPECTRAL_EPS)).ln();
    }
    Ok(js.clamp(0.0, std::f64::consts::LN_2))
}

/// In-band energy: mean square of the band-passed signal.
pub fn band_energy(w: &Waveform) -> Result<f64> {
    Ok(bandpass(w)?.energy())
}
