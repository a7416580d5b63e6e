use std::f64::consts::PI;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rppg_core::signal::*;
use rppg_core::Error;

const BAND: (f64, f64) = (HR_LOW_HZ, HR_HIGH_HZ);

fn tone(freq: f64, fs: f64, n: usize) -> Waveform {
    Waveform::new((0..n).map(|i| (2.0 * PI * freq * i as f64 / fs).sin()).collect(), fs).unwrap()
}

fn noise(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

// Magnitude response evaluated directly from the taps as a complex sum.
fn response_oracle(taps: &[f64], f: f64, fs: f64) -> f64 {
    let mut acc = (0.0, 0.0);
    for (n, h) in taps.iter().enumerate() {
        let ang = -2.0 * PI * f / fs * n as f64;
        acc.0 += h * ang.cos();
        acc.1 += h * ang.sin();
    }
    acc.0.hypot(acc.1)
}

#[test]
fn bandpass_passes_two_hertz() {
    let x = tone(2.0, 30.0, 512);
    let y = bandpass(&x).unwrap();
    let gain = response_oracle(&fir_kernel(30.0), 2.0, 30.0);
    assert!(gain >= 0.9, "designed gain {gain}");
    // Away from the zero-padded edges the output is the steady-state response.
    let mid = 64..448;
    let ratio = rms(&y.samples[mid.clone()]) / rms(&x.samples[mid]);
    assert!((ratio - gain).abs() < 0.01, "ratio {ratio} vs gain {gain}");
    assert!(rms(&y.samples) >= 0.9 * rms(&x.samples));
}

#[test]
fn bandpass_rejects_slow_drift() {
    let x = tone(0.2, 30.0, 512);
    let y = bandpass(&x).unwrap();
    let gain = response_oracle(&fir_kernel(30.0), 0.2, 30.0);
    assert!(gain <= 0.1, "designed gain {gain}");
    assert!(rms(&y.samples) <= 0.1 * rms(&x.samples));
}

#[test]
fn bandpass_keeps_length_and_zero() {
    let y = bandpass(&Waveform::zeros(300, 30.0)).unwrap();
    assert_eq!(y.len(), 300);
    assert!(y.samples.iter().all(|v| *v == 0.0));
}

#[test]
fn fir_has_deep_stopband() {
    let taps = fir_kernel(30.0);
    assert_eq!(taps.len(), FIR_TAPS);
    for i in 0..taps.len() / 2 {
        assert!((taps[i] - taps[taps.len() - 1 - i]).abs() < 1e-15);
    }
    let center = response_oracle(&taps, (HR_LOW_HZ * HR_HIGH_HZ).sqrt(), 30.0);
    assert!((center - 1.0).abs() < 1e-12);
    for f in [0.0, 0.05, 0.1, 6.0, 8.0, 12.0, 15.0] {
        let g = response_oracle(&taps, f, 30.0);
        assert!(20.0 * g.log10() < -40.0, "{f} Hz: {g}");
    }
}

#[test]
fn psd_peak_of_single_tone() {
    let sp = psd(&tone(1.5, 30.0, 512), BAND).unwrap();
    let s: f64 = sp.power.iter().sum();
    assert!((s - 1.0).abs() < 1e-12);
    assert!((sp.argmax_freq() - 1.5).abs() <= sp.bin_width());
    assert!(sp.freqs.windows(2).all(|w| w[0] < w[1]));
    assert!(sp.freqs[0] >= HR_LOW_HZ && *sp.freqs.last().unwrap() <= HR_HIGH_HZ);
}

#[test]
fn psd_of_white_noise_is_flat() {
    for seed in 0..10 {
        let w = Waveform::new(noise(seed, 512), 30.0).unwrap();
        let sp = psd(&w, BAND).unwrap();
        let flat = 1.0 / sp.power.len() as f64;
        let max = sp.power.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 0.2, "seed {seed}: {max}");
        assert!(max > flat);
    }
}

#[test]
fn psd_two_tones_share_power() {
    let fs = 30.0;
    let w = Waveform::new(
        (0..512)
            .map(|i| {
                let t = i as f64 / fs;
                (2.0 * PI * t).sin() + (4.0 * PI * t).sin()
            })
            .collect(),
        fs,
    )
    .unwrap();
    let sp = psd(&w, BAND).unwrap();
    let near = |f: f64| {
        let (i, _) = sp
            .freqs
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - f).abs().total_cmp(&(b.1 - f).abs()))
            .unwrap();
        sp.power[i]
    };
    let (p1, p2) = (near(1.0), near(2.0));
    let ratio = p1 / p2;
    assert!((0.8..=1.25).contains(&ratio), "ratio {ratio}");
    let mut sorted = sp.power.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    assert!(p1 >= sorted[1] && p2 >= sorted[1]);
}

#[test]
fn psd_requires_64_samples() {
    assert!(matches!(psd(&tone(1.0, 30.0, 63), BAND), Err(Error::TooShort { need: 64, got: 63 })));
}

#[test]
fn hr_of_tone() {
    let w = tone(1.2, 30.0, 300);
    let hr = estimate_hr(&w).unwrap();
    let bin_bpm = 60.0 * 30.0 / 300.0;
    assert!((hr - 72.0).abs() <= bin_bpm, "{hr}");
    assert!((hr - 72.0).abs() <= 0.5, "{hr}");
}

#[test]
fn hr_of_zero_is_error() {
    assert!(estimate_hr(&Waveform::zeros(300, 30.0)).is_err());
}

#[test]
fn pearson_examples() {
    let a: Vec<f64> = (0..100).map(|i| ((i * 7) % 13) as f64).collect();
    let neg: Vec<f64> = a.iter().map(|v| -v).collect();
    assert!((pearson(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    assert!((pearson(&a, &neg).unwrap() + 1.0).abs() < 1e-12);
    let n = 300;
    let s: Vec<f64> = (0..n).map(|i| (2.0 * PI * 3.0 * i as f64 / n as f64).sin()).collect();
    let c: Vec<f64> = (0..n).map(|i| (2.0 * PI * 3.0 * i as f64 / n as f64).cos()).collect();
    // Quadrature tones over whole periods: the inner product vanishes analytically.
    let oracle: f64 = s.iter().zip(&c).map(|(x, y)| x * y).sum();
    assert!(oracle.abs() < 1e-9);
    assert!(pearson(&s, &c).unwrap().abs() < 0.05);
}

#[test]
fn transform_examples() {
    let w = tone(1.0, 30.0, 300);
    let z = transform_signal(&w, TransformSpec::Amplitude { alpha: 0.0 }).unwrap();
    assert!(z.samples.iter().all(|v| *v == 0.0));
    assert_eq!(transform_signal(&w, TransformSpec::Phase { tau: 0 }).unwrap(), w);
    let hr = estimate_hr(&w).unwrap();
    let doubled = estimate_hr(&transform_signal(&w, TransformSpec::Frequency { rho: 2.0 }).unwrap()).unwrap();
    assert!((hr - 60.0).abs() < 0.5);
    assert!((doubled - 120.0).abs() <= 6.0, "{doubled}");
}

#[test]
fn entropy_and_js_examples() {
    let n = 32;
    let freqs: Vec<f64> = (0..n).map(|i| 1.0 + i as f64 * 0.05).collect();
    let band = (1.0, 2.55);
    let mut onehot = vec![0.0; n];
    onehot[5] = 1.0;
    let delta = Spectrum { freqs: freqs.clone(), power: onehot, band };
    let uniform = Spectrum { freqs: freqs.clone(), power: vec![1.0 / n as f64; n], band };
    assert!(spectral_entropy(&delta) < 1e-7);
    assert!((spectral_entropy(&uniform) - (n as f64).ln()).abs() < 1e-5);
    assert!(js_divergence(&uniform, &uniform).unwrap().abs() < 1e-15);
    let js = js_divergence(&delta, &uniform).unwrap();
    assert!(js > 0.0 && js <= std::f64::consts::LN_2);
    // Disjoint supports reach the ln 2 ceiling.
    let mut other = vec![0.0; n];
    other[9] = 1.0;
    let js = js_divergence(&delta, &Spectrum { freqs, power: other, band }).unwrap();
    assert!((js - std::f64::consts::LN_2).abs() < 1e-6);
}

#[test]
fn pure_tone_entropy_is_small() {
    let sp = psd(&tone(1.5, 30.0, 512), BAND).unwrap();
    let h = spectral_entropy(&sp);
    assert!(h < 0.25 * (sp.power.len() as f64).ln(), "{h}");
}

#[test]
fn csv_round_trip() {
    let w = Waveform::new(noise(3, 50), 30.0).unwrap();
    let mut buf = Vec::new();
    w.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("t_seconds,value\n"));
    assert!(!text.contains('\r'));
    let back = Waveform::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.samples, w.samples);
    assert!((back.sample_rate - 30.0).abs() < 1e-9);
    assert!(Waveform::read_csv("a,b\n1,2\n".as_bytes()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn bandpass_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let x = noise(seed, 200);
        let y = noise(seed + 7919, 200);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let lhs = bandpass(&Waveform::new(mix, 30.0).unwrap()).unwrap();
        let bx = bandpass(&Waveform::new(x, 30.0).unwrap()).unwrap();
        let by = bandpass(&Waveform::new(y, 30.0).unwrap()).unwrap();
        for i in 0..200 {
            prop_assert!((lhs.samples[i] - (a * bx.samples[i] + b * by.samples[i])).abs() < 1e-10);
        }
    }

    #[test]
    fn phase_shifts_compose(seed in 0u64..1000, t1 in -49i64..50, t2 in -49i64..50) {
        let w = Waveform::new(noise(seed, 50), 30.0).unwrap();
        let once = transform_signal(&w, TransformSpec::Phase { tau: t1 }).unwrap();
        let twice = transform_signal(&once, TransformSpec::Phase { tau: t2 }).unwrap();
        let total = (t1 + t2).rem_euclid(50);
        let direct = transform_signal(&w, TransformSpec::Phase { tau: total }).unwrap();
        prop_assert_eq!(twice.samples, direct.samples);
    }

    #[test]
    fn pearson_affine_invariant(seed in 0u64..1000, c in 0.01f64..100.0, d in -50.0f64..50.0) {
        let a = noise(seed, 64);
        let b = noise(seed + 1, 64);
        let mapped: Vec<f64> = b.iter().map(|v| c * v + d).collect();
        let r0 = pearson(&a, &b).unwrap();
        let r1 = pearson(&a, &mapped).unwrap();
        prop_assert!((r0 - r1).abs() < 1e-10);
    }

    #[test]
    fn frequency_scaling_scales_hr(f in 0.8f64..1.6, rho in 0.8f64..2.0) {
        prop_assume!(f * rho <= 3.6);
        let w = tone(f, 30.0, 512);
        let hr = estimate_hr(&w).unwrap();
        let scaled = estimate_hr(&transform_signal(&w, TransformSpec::Frequency { rho }).unwrap()).unwrap();
        let bin = 60.0 * 30.0 / 512.0;
        prop_assert!((scaled - rho * hr).abs() <= bin, "f={} rho={} hr={} scaled={}", f, rho, hr, scaled);
    }
}
