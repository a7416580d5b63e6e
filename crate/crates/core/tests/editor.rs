use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_core::clip::VideoClip;
use rppg_core::color::{dot, luma_axis, pulse_direction};
use rppg_core::editor::*;
use rppg_core::extractor::{classical_extract, ClassicalMethod};
use rppg_core::signal::*;
use rppg_core::synth::*;

fn random_image(h: usize, w: usize, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Image { h, w, data: (0..3 * h * w).map(|_| rng.random::<f64>()).collect() }
}

fn clip_with(seed: u64, hr: f64) -> (SynthConfig, VideoClip, Waveform) {
    let cfg = SynthConfig { seed, base_texture_seed: seed + 50, hr_bpm: hr, ..Default::default() };
    let (clip, gt) = synth_clip(&cfg).unwrap();
    (cfg, clip, gt)
}

fn pulse_energy(clip: &VideoClip, mask: &[f32]) -> f64 {
    let d = pulse_direction();
    let m = clip.region_means(mask).unwrap();
    band_energy(&Waveform::new(m.iter().map(|p| dot(*p, d)).collect(), clip.fps).unwrap()).unwrap()
}

// Upsample by zero insertion, then blur with 2 * [1 4 6 4 1] / 16 under
// mirrored borders, written out directly.
fn expand_oracle(x: &[f64], h: usize, w: usize) -> Vec<f64> {
    let k = [1.0, 4.0, 6.0, 4.0, 1.0].map(|v| v / 8.0);
    let (oh, ow) = (2 * h, 2 * w);
    let mut z = vec![0.0; oh * ow];
    for y in 0..h {
        for xx in 0..w {
            z[(2 * y) * ow + 2 * xx] = x[y * w + xx];
        }
    }
    let refl = |i: isize, n: usize| -> usize {
        if i < 0 {
            (-i) as usize
        } else if i as usize >= n {
            2 * (n - 1) - i as usize
        } else {
            i as usize
        }
    };
    let mut tmp = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            tmp[y * ow + xx] = (0..5).map(|j| k[j] * z[y * ow + refl(xx as isize + j as isize - 2, ow)]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for xx in 0..ow {
            out[y * ow + xx] = (0..5).map(|j| k[j] * tmp[refl(y as isize + j as isize - 2, oh) * ow + xx]).sum();
        }
    }
    out
}

#[test]
fn constant_image_has_no_detail() {
    let img = Image { h: 64, w: 64, data: vec![0.37; 3 * 64 * 64] };
    let pd = laplacian_decompose(&img, 4).unwrap();
    assert_eq!(pd.high.len(), 3);
    for layer in &pd.high {
        assert!(layer.data.iter().all(|v| v.abs() < 1e-15));
    }
    assert_eq!((pd.low.h, pd.low.w), (8, 8));
    assert!(pd.low.data.iter().all(|v| (v - 0.37).abs() < 1e-15));
}

#[test]
fn pyramid_round_trip() {
    for seed in 0..5 {
        let img = random_image(64, 64, seed);
        let pd = laplacian_decompose(&img, 4).unwrap();
        let back = laplacian_reconstruct(&pd).unwrap();
        let err = img.data.iter().zip(&back.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        assert!(err < 1e-13);
    }
    let odd = random_image(48, 40, 9);
    let back = laplacian_reconstruct(&laplacian_decompose(&odd, 4).unwrap()).unwrap();
    assert!(odd.data.iter().zip(&back.data).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn pyramid_rejects_indivisible_frames() {
    assert!(laplacian_decompose(&random_image(60, 64, 0), 4).is_err());
    assert!(laplacian_decompose(&random_image(64, 64, 0), 4).is_ok());
}

#[test]
fn low_base_perturbation_expands() {
    let img = random_image(32, 32, 3);
    let pyr = Pyramid::new(32, 32, 3).unwrap();
    let pd = pyr.decompose(&img).unwrap();
    let delta = random_image(8, 8, 4);
    let mut edited = pd.clone();
    for (l, d) in edited.low.data.iter_mut().zip(&delta.data) {
        *l += d * 0.01;
    }
    let out = pyr.reconstruct(&edited);
    for c in 0..3 {
        let once = expand_oracle(delta.plane(c), 8, 8);
        let twice = expand_oracle(&once, 16, 16);
        for p in 0..32 * 32 {
            let shift = out.plane(c)[p] - img.plane(c)[p];
            assert!((shift - 0.01 * twice[p]).abs() < 1e-12);
        }
    }
}

#[test]
fn luminance_suppression() {
    let mut img = Image::zeros(2, 2);
    img.set_pixel(0, 0, [0.4, 0.4, 0.4]);
    img.set_pixel(0, 1, pulse_direction());
    img.set_pixel(1, 0, [0.9, 0.1, 0.3]);
    let c = luminance_suppress(&img);
    let w = luma_axis();
    assert!((dot(w, w) - 1.0).abs() < 1e-15);
    for y in 0..2 {
        for x in 0..2 {
            assert!(dot(c.c.pixel(y, x), w).abs() < 1e-10);
        }
    }
    // Gray only survives through the unequal weights; the residual is exactly
    // v * (1 - sum(w) * w) with w normalized.
    let gray = c.c.pixel(0, 0);
    let s: f64 = w.iter().sum();
    for ch in 0..3 {
        assert!((gray[ch] - 0.4 * (1.0 - s * w[ch])).abs() < 1e-12);
    }
    // The pulse direction is orthogonal to w, so all of its energy survives.
    let raw = [-0.3, 1.0, -0.2];
    let rn = dot(raw, raw).sqrt();
    let along = dot(raw, w) / rn;
    assert!(1.0 - along * along < 0.9, "the raw vector alone would lose energy");
    let kept = c.c.pixel(0, 1);
    assert!(dot(kept, kept) >= 0.9);
    let again = luminance_suppress(&c.c);
    assert!(again.c.data.iter().zip(&c.c.data).all(|(a, b)| (a - b).abs() < 1e-10));
}

#[test]
fn consensus_prefers_skin() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    for seed in 0..3 {
        let (cfg, clip, gt) = clip_with(seed, 70.0 + 9.0 * seed as f64);
        let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
        let cells = CellSeries::compute(&clip, &cfg.layout, &pyr).unwrap();
        let (mut skin, mut bg) = (Vec::new(), Vec::new());
        for k in 0..GRID * GRID {
            if cells.prior[k] > 0.0 {
                skin.push(psm.w_static[k]);
            } else {
                bg.push(psm.w_static[k]);
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&skin) > 3.0 * mean(&bg), "{} vs {}", mean(&skin), mean(&bg));
        assert!(psm.psm.iter().all(|v| (0.0..=1.0).contains(v)));
        for (p, a) in psm.psm.iter().zip(&psm.a) {
            if *a == 0.0 {
                assert_eq!(*p, 0.0);
            }
        }
    }
}

#[test]
fn consensus_ignores_noise() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, _) = clip_with(11, 75.0);
    let cells = CellSeries::compute(&clip, &cfg.layout, &pyr).unwrap();
    let mut total = vec![0.0; GRID * GRID];
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Waveform::new((0..300).map(|_| rng.random::<f64>() - 0.5).collect(), 30.0).unwrap();
        for (t, w) in total.iter_mut().zip(cells.consensus(&noise).unwrap()) {
            *t += w / 10.0;
        }
    }
    assert!(total.iter().all(|w| *w < 0.3), "{total:?}");
}

#[test]
fn constant_cells_get_zero_weight() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let cfg = SynthConfig { pulse_amplitude: 0.0, sensor_noise_sigma: 0.0, ..Default::default() };
    let (clip, gt) = synth_clip(&cfg).unwrap();
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    assert!(psm.w_static.iter().all(|w| *w == 0.0));
}

#[test]
fn zero_strength_is_identity() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, gt) = clip_with(1, 66.0);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let out = analytic_edit(&clip, &psm, &gt, 0.0, &pyr).unwrap();
    assert_eq!(out, clip);
    assert_eq!(psnr(&clip, &out).unwrap(), PSNR_SENTINEL);
}

#[test]
fn fast_path_matches_pyramid_path() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, gt) = clip_with(2, 80.0);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let ed = AnalyticEditor::new(pyr, 0.004);
    let fast = ed.edit(&clip, &psm, &gt.scaled(-1.3)).unwrap();
    let slow = ed.edit_via_pyramid(&clip, &psm, &gt.scaled(-1.3)).unwrap();
    let err = fast.frames.iter().zip(&slow.frames).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn edits_touch_only_the_chrominance_low_base() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, gt) = clip_with(3, 90.0);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let ed = AnalyticEditor::new(pyr.clone(), 0.004);
    let w = luma_axis();
    for t in [0, 17, 299] {
        let pd = pyr.decompose(&Image::from_interleaved(clip.frame(t), 64, 64)).unwrap();
        let edited = ed.edit_decomposition(&pd, &psm, 2.5 * gt.samples[t]);
        for (a, b) in edited.high.iter().zip(&pd.high) {
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        for y in 0..8 {
            for x in 0..8 {
                let (e, o) = (edited.low.pixel(y, x), pd.low.pixel(y, x));
                let diff = [e[0] - o[0], e[1] - o[1], e[2] - o[2]];
                assert!(dot(diff, w).abs() <= 1e-6);
                if psm.psm[y * 8 + x] == 0.0 {
                    assert_eq!(e, o);
                }
            }
        }
    }
}

#[test]
fn injected_tone_is_recovered() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let cfg = SynthConfig { pulse_amplitude: 0.0, ..Default::default() };
    let (clip, _) = synth_clip(&cfg).unwrap();
    let psm = PerturbationSupportMap::prior_only(&cfg.layout, &pyr);
    let tone = Waveform::new((0..300).map(|i| (2.0 * std::f64::consts::PI * 2.0 * i as f64 / 30.0).sin()).collect(), 30.0)
        .unwrap()
        .standardized()
        .unwrap();
    let out = analytic_edit(&clip, &psm, &tone, 0.004, &pyr).unwrap();
    let hr = estimate_hr(&classical_extract(&out, clip.mask.as_ref().unwrap(), ClassicalMethod::Pos).unwrap()).unwrap();
    assert!((hr - 120.0).abs() <= 2.0, "{hr}");
}

#[test]
fn nulling_with_the_true_pulse() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, gt) = clip_with(4, 72.0);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let mask = clip.mask.clone().unwrap();
    let before = pulse_energy(&clip, &mask);
    // The optimal scale cancels the regional mean exactly: it is the ratio of
    // the rendered pulse weight to the injected pattern, both along d.
    let ed = AnalyticEditor::new(pyr.clone(), 0.004);
    let pattern = ed.pattern(&psm);
    let weight = pulse_weight(&cfg.layout, 64, 64);
    let d = pulse_direction();
    let total: f64 = mask.iter().map(|m| *m as f64).sum();
    let injected: f64 = (0..64 * 64)
        .map(|p| mask[p] as f64 * (0..3).map(|c| pattern[p * 3 + c] * d[c]).sum::<f64>())
        .sum::<f64>()
        / total;
    let rendered: f64 = (0..64 * 64).map(|p| -(mask[p] as f64) * weight[p] * 0.004).sum::<f64>() / total;
    let scale = -rendered / injected;
    let out = ed.edit(&clip, &psm, &gt.scaled(scale)).unwrap();
    let after = pulse_energy(&out, &mask);
    assert!(after <= 0.2 * before, "{after} vs {before}");
}

#[test]
fn metric_examples() {
    let (_, clip, _) = clip_with(5, 70.0);
    assert_eq!(psnr(&clip, &clip).unwrap(), PSNR_SENTINEL);
    assert!((ssim(&clip, &clip).unwrap() - 1.0).abs() < 1e-12);
    let mid = clip.with_frames(vec![0.5; clip.frames.len()]);
    let shifted = clip.with_frames(vec![0.51; clip.frames.len()]);
    let p = psnr(&mid, &shifted).unwrap();
    // 0.51 - 0.5 is not exact in f32; the oracle uses the stored difference.
    let d = 0.51f32 as f64 - 0.5;
    assert!((p - 20.0 * (1.0 / d).log10()).abs() < 1e-9);
    assert!((p - 40.0).abs() < 1e-4);
    let small = VideoClip::new(1, 8, 8, 30.0, vec![0.0; 192], None).unwrap();
    assert!(psnr(&small, &clip).is_err());
}

#[test]
fn default_edit_fidelity_matches_expected_mse() {
    let pyr = Pyramid::new(64, 64, 4).unwrap();
    let (cfg, clip, gt) = clip_with(6, 84.0);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let ed = AnalyticEditor::new(pyr, 0.004);
    let out = ed.edit(&clip, &psm, &gt).unwrap();
    let pattern = ed.pattern(&psm);
    let energy: f64 = pattern.iter().map(|v| v * v).sum();
    let mse = gt.samples.iter().map(|s| s * s).sum::<f64>() * energy / clip.frames.len() as f64;
    let expected = 10.0 * (1.0 / mse).log10();
    let got = psnr(&clip, &out).unwrap();
    assert!((got - expected).abs() < 0.1, "{got} vs {expected}");
    assert!(got >= 60.0);
    assert!(ssim(&clip, &out).unwrap() >= 0.99);
}
