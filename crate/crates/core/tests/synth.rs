use rppg_core::clip::VideoClip;
use rppg_core::color::{dot, luma_axis, pulse_direction};
use rppg_core::extractor::{classical_extract, ClassicalMethod};
use rppg_core::signal::*;
use rppg_core::synth::*;
use rppg_core::Error;

fn cfg(seed: u64, hr: f64) -> SynthConfig {
    SynthConfig {
        seed,
        base_texture_seed: seed + 1000,
        hr_bpm: hr,
        ..Default::default()
    }
}

fn channel(clip: &VideoClip, mask: &[f32], axis: [f64; 3]) -> Waveform {
    let means = clip.region_means(mask).unwrap();
    Waveform::new(means.iter().map(|p| dot(*p, axis)).collect(), clip.fps).unwrap()
}

#[test]
fn pulse_at_60_bpm() {
    let p = synth_pulse(&cfg(4, 60.0)).unwrap();
    assert_eq!(p.len(), 300);
    assert!((p.rms() - 1.0).abs() < 1e-12);
    assert!(p.mean().abs() < 1e-12);
    let hr = estimate_hr(&p).unwrap();
    assert!((hr - 60.0).abs() <= 2.0, "{hr}");
}

#[test]
fn clean_tone_has_low_entropy() {
    let c = SynthConfig { harmonic: 0.0, jitter: 0.0, t: 512, ..cfg(1, 90.0) };
    let p = synth_pulse(&c).unwrap();
    let sp = psd(&p, (HR_LOW_HZ, HR_HIGH_HZ)).unwrap();
    assert!(spectral_entropy(&sp) < 0.25 * (sp.power.len() as f64).ln());
    assert!((estimate_hr(&p).unwrap() - 90.0).abs() < 0.5);
}

#[test]
fn pulse_train_at_90_bpm() {
    for seed in 0..5 {
        let hr = estimate_hr(&synth_pulse(&cfg(seed, 90.0)).unwrap()).unwrap();
        assert!((hr - 90.0).abs() <= 2.0, "seed {seed}: {hr}");
    }
}

#[test]
fn generation_is_deterministic() {
    let c = cfg(9, 75.0);
    assert_eq!(synth_pulse(&c).unwrap(), synth_pulse(&c).unwrap());
    let (a, _) = synth_clip(&c).unwrap();
    let (b, _) = synth_clip(&c).unwrap();
    assert_eq!(a, b);
    let (other, _) = synth_clip(&cfg(10, 75.0)).unwrap();
    assert_ne!(a.frames, other.frames);
}

#[test]
fn out_of_range_hr_is_rejected() {
    assert!(synth_pulse(&cfg(0, 30.0)).is_err());
    assert!(synth_pulse(&cfg(0, 250.0)).is_err());
}

#[test]
fn zero_amplitude_is_static() {
    let c = SynthConfig { pulse_amplitude: 0.0, sensor_noise_sigma: 0.0, ..cfg(2, 70.0) };
    let (clip, _) = synth_clip(&c).unwrap();
    for t in 1..clip.t {
        assert_eq!(clip.frame(t), clip.frame(0));
    }
}

#[test]
fn pulse_length_must_match() {
    let c = cfg(0, 70.0);
    let p = Waveform::zeros(299, 30.0);
    assert!(matches!(render_clip(&p, &c), Err(Error::LengthMismatch(299, 300))));
}

#[test]
fn pos_recovers_configured_rate() {
    for (seed, hr) in [(0, 55.0), (1, 72.0), (2, 95.0)] {
        let (clip, _) = synth_clip(&cfg(seed, hr)).unwrap();
        let s = classical_extract(&clip, clip.mask.as_ref().unwrap(), ClassicalMethod::Pos).unwrap();
        let est = estimate_hr(&s).unwrap();
        assert!((est - hr).abs() <= 1.0, "{hr} -> {est}");
    }
}

#[test]
fn background_carries_no_pulse() {
    let c = cfg(3, 80.0);
    let (clip, _) = synth_clip(&c).unwrap();
    let bg = c.layout.background.mask(c.h, c.w);
    let skin = clip.mask.clone().unwrap();
    let d = pulse_direction();
    let eb = band_energy(&channel(&clip, &bg, d)).unwrap();
    let es = band_energy(&channel(&clip, &skin, d)).unwrap();
    assert!(eb <= 0.05 * es, "{eb} vs {es}");
}

#[test]
fn pulse_lives_in_chrominance() {
    for seed in 0..3 {
        let (clip, _) = synth_clip(&cfg(seed, 65.0 + 10.0 * seed as f64)).unwrap();
        let skin = clip.mask.clone().unwrap();
        let el = band_energy(&channel(&clip, &skin, luma_axis())).unwrap();
        let ed = band_energy(&channel(&clip, &skin, pulse_direction())).unwrap();
        assert!(el <= 0.1 * ed, "seed {seed}: {el} vs {ed}");
    }
}

#[test]
fn regions_respect_mask() {
    for (h, w) in [(64, 64), (32, 48), (128, 96)] {
        let c = SynthConfig::sized(64, h, w);
        c.validate().unwrap();
        let (clip, _) = synth_clip(&c).unwrap();
        let mask = clip.mask.as_ref().unwrap();
        for r in c.layout.pulse_regions() {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    assert_eq!(mask[y * w + x], 1.0);
                }
            }
        }
        let b = c.layout.background;
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                assert_eq!(mask[y * w + x], 0.0);
            }
        }
    }
}

#[test]
fn overlapping_regions_are_rejected() {
    let mut c = SynthConfig::default();
    c.layout.cheek_left = c.layout.forehead;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
}

#[test]
fn zero_flicker_is_identity() {
    let (clip, _) = synth_clip(&cfg(5, 70.0)).unwrap();
    assert_eq!(add_nuisance(&clip, &NuisanceSpec::flicker(100.0, 0.0)), clip);
    assert_eq!(add_nuisance(&clip, &NuisanceSpec::motion(80.0, 0.0)), clip);
}

#[test]
fn flicker_captures_green() {
    for seed in 0..3 {
        let (clip, _) = synth_clip(&cfg(seed, 60.0)).unwrap();
        let fl = add_nuisance(&clip, &NuisanceSpec::flicker(100.0, 0.02));
        let mask = clip.mask.clone().unwrap();
        let hr = estimate_hr(&classical_extract(&fl, &mask, ClassicalMethod::Green).unwrap()).unwrap();
        assert!((hr - 100.0).abs() <= 3.0, "{hr}");
    }
}

#[test]
fn motion_shows_up_in_green_mean() {
    let c = SynthConfig { pulse_amplitude: 0.0, texture_contrast: 0.3, ..cfg(6, 60.0) };
    let (clip, _) = synth_clip(&c).unwrap();
    let moved = add_nuisance(&clip, &NuisanceSpec::motion(80.0, 1.5));
    let g = channel(&moved, clip.mask.as_ref().unwrap(), [0.0, 1.0, 0.0]);
    let sp = psd(&g, (HR_LOW_HZ, HR_HIGH_HZ)).unwrap();
    let i = sp
        .freqs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1 - 80.0 / 60.0).abs().total_cmp(&(b.1 - 80.0 / 60.0).abs()))
        .unwrap()
        .0;
    let mut sorted = sp.power.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    assert!(sp.power[i] >= sp.power[i - 1] && sp.power[i] >= sp.power[i + 1]);
    assert!(sp.power[i] > 20.0 * median, "{} vs median {median}", sp.power[i]);
}

#[test]
fn motion_translation_is_exact_for_integer_shift() {
    let c = SynthConfig { sensor_noise_sigma: 0.0, ..SynthConfig::sized(64, 16, 16) };
    let (clip, _) = synth_clip(&c).unwrap();
    // A quarter period at 7.5 Hz and 30 fps hits sin = 1 at t = 1.
    let spec = NuisanceSpec { phase: 0.0, ..NuisanceSpec::motion(450.0, 2.0) };
    let moved = add_nuisance(&clip, &spec);
    for y in 0..16 {
        for x in 2..16 {
            for ch in 0..3 {
                assert_eq!(moved.at(1, y, x, ch), clip.at(1, y, x - 2, ch));
            }
        }
        assert_eq!(moved.at(1, y, 0, 0), clip.at(1, y, 0, 0));
    }
}
