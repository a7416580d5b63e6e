use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_core::autodiff::{Graph, Tensor};
use rppg_core::clip::VideoClip;
use rppg_core::editor::*;
use rppg_core::extractor::{classical_extract, ClassicalMethod, Extractor, ExtractorConfig};
use rppg_core::signal::*;
use rppg_core::synth::*;
use rppg_core::train::nulling::unit_hypothesis;
use rppg_core::train::optim::{cosine_lr, AdamW};
use rppg_core::train::stage1::train_stage1;
use rppg_core::train::stage3::{observed_consensus, train_stage3};
use rppg_core::train::*;
use rppg_core::weights::Weights;

fn tone(hz: f64, n: usize) -> Waveform {
    Waveform::new((0..n).map(|i| (2.0 * std::f64::consts::PI * hz * i as f64 / 30.0).sin()).collect(), 30.0).unwrap()
}

fn small(seed: u64, hr: f64) -> (VideoClip, Waveform, RegionLayout) {
    let cfg = SynthConfig { seed, base_texture_seed: seed + 3, hr_bpm: hr, ..SynthConfig::sized(128, 32, 32) };
    let (clip, gt) = synth_clip(&cfg).unwrap();
    (clip, gt, cfg.layout)
}

fn tiny() -> ExtractorConfig {
    ExtractorConfig { token_dim: 8, num_gtss_blocks: 1, ssm_state_dim: 4, ..Default::default() }
}

#[test]
fn config_text_round_trip() {
    let c = TrainConfig { epochs: 7, warmup_epochs: 2, tau_range: (-3, 4), amplitude_target: AmplitudeTarget::Literal, seed: 11, ..Default::default() };
    assert_eq!(TrainConfig::parse(&c.to_text()).unwrap(), c);
    let d = TrainConfig::parse("# defaults\n\nepochs = 100\n").unwrap();
    assert_eq!(d, TrainConfig::default());
    assert_eq!(TrainConfig::stage2().epochs, 60);
}

#[test]
fn config_rejects_bad_input() {
    assert!(TrainConfig::parse("epochs = 5\nwarmup_epochs = 5").is_err());
    assert!(TrainConfig::parse("alpha_range = 1, 1").is_err());
    assert!(TrainConfig::parse("speed = 3").is_err());
    assert!(TrainConfig::parse("epochs 3").is_err());
    assert!(TrainConfig::parse("rho_range = 2").is_err());
}

#[test]
fn interventions_stay_in_range() {
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Interventions> = (0..10_000).map(|_| sample_interventions(&cfg, &mut rng)).collect();
    for d in &draws {
        assert!((0.0..=2.0).contains(&d.alpha));
        assert!((-12..=12).contains(&d.tau));
        assert!((0.8..=2.0).contains(&d.rho));
    }
    let n = draws.len() as f64;
    // Uniform moments: mean (a+b)/2, standard error (b-a)/sqrt(12 n).
    let check = |vals: Vec<f64>, lo: f64, hi: f64, discrete: bool| {
        let m = vals.iter().sum::<f64>() / n;
        let var = if discrete { ((hi - lo + 1.0).powi(2) - 1.0) / 12.0 } else { (hi - lo).powi(2) / 12.0 };
        assert!((m - (lo + hi) / 2.0).abs() <= 3.0 * (var / n).sqrt(), "{m}");
    };
    check(draws.iter().map(|d| d.alpha).collect(), 0.0, 2.0, false);
    check(draws.iter().map(|d| d.tau as f64).collect(), -12.0, 12.0, true);
    check(draws.iter().map(|d| d.rho).collect(), 0.8, 2.0, false);

    let mut a = ChaCha8Rng::seed_from_u64(5);
    let mut b = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        assert_eq!(sample_interventions(&cfg, &mut a), sample_interventions(&cfg, &mut b));
    }
}

#[test]
fn nulling_loss_examples() {
    assert_eq!(loss_nul(&Waveform::zeros(300, 30.0)).unwrap(), 0.0);
    let taps = fir_kernel(30.0);
    let gain = fir_response(&taps, 1.5, 30.0);
    let inband = loss_nul(&tone(1.5, 600)).unwrap();
    // Filter edge effects shorten the steady-state part; allow a few percent.
    assert!((inband - 0.5 * gain * gain).abs() < 0.05 * 0.5 * gain * gain, "{inband} {gain}");
    let slow = loss_nul(&tone(0.1, 600)).unwrap();
    assert!(slow <= 0.01 * inband, "{slow}");
}

#[test]
fn breakdown_is_additive() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let items: Vec<LossBreakdown> = (0..5)
        .map(|_| {
            LossBreakdown {
                l_nul: rng.random(),
                l_equ_amp: rng.random(),
                l_equ_phase: rng.random(),
                l_equ_freq: rng.random(),
                l_forward: rng.random(),
                l_multiregion: rng.random(),
                l_background: rng.random(),
                l_wave: rng.random(),
                total: 0.0,
            }
            .with_total()
        })
        .collect();
    for l in items.iter().chain([&LossBreakdown::mean(&items)]) {
        let v = l.values();
        assert_eq!(v[8], v[0] + (v[1] + v[2] + v[3]) + (v[4] + v[5] + v[6] + v[7]));
    }
}

fn full(seed: u64, hr: f64) -> (SynthConfig, VideoClip, Waveform) {
    let cfg = SynthConfig { seed, base_texture_seed: seed + 40, hr_bpm: hr, ..Default::default() };
    let (clip, gt) = synth_clip(&cfg).unwrap();
    (cfg, clip, gt)
}

#[test]
fn nulling_search_separates_pulse_from_motion() {
    let pyr = Pyramid::new(64, 64, DEFAULT_LEVELS).unwrap();
    let ed = AnalyticEditor::new(pyr.clone(), 0.004);
    let (cfg, clip, gt) = full(1, 70.0);
    let skin = cfg.layout.skin_mask(64, 64);
    let probe = Probe::Classical(ClassicalMethod::Pos, &skin);
    let psm = compute_psm(&clip, &cfg.layout, &gt, &pyr).unwrap();
    let r = nulling_search(&clip, &gt, &ed, &psm, (-2.0, 0.0), probe).unwrap();
    assert!(r.residual_fraction() <= 0.2, "{}", r.residual_fraction());
    assert!(!r.degenerate);
    // Refinement never loses to the best coarse candidate.
    let coarse = r.trace[..5].iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    assert!(r.residual_energy <= coarse);
    assert!(r.trace.len() <= 11);

    // The artifact hypothesis comes from a pulse-free twin with rhythmic
    // motion; both hypotheses are then tested on the pulsing, moving clip.
    let (quiet, _) = synth_clip(&SynthConfig { pulse_amplitude: 0.0, ..cfg.clone() }).unwrap();
    let motion = NuisanceSpec::motion(90.0, 1.5);
    let artifact = classical_extract(&add_nuisance(&quiet, &motion), &skin, ClassicalMethod::Pos).unwrap();
    let moving = add_nuisance(&clip, &motion);
    let psm = compute_psm(&moving, &cfg.layout, &gt, &pyr).unwrap();
    let r = nulling_search(&moving, &gt, &ed, &psm, (-2.0, 0.0), probe).unwrap();
    assert!(r.residual_fraction() <= 0.2, "{}", r.residual_fraction());
    let psm = compute_psm(&moving, &cfg.layout, &artifact, &pyr).unwrap();
    let r = nulling_search(&moving, &artifact, &ed, &psm, (-2.0, 0.0), probe).unwrap();
    assert!(r.residual_fraction() >= 0.5, "{}", r.residual_fraction());
}

#[test]
fn zero_hypothesis_is_degenerate() {
    let pyr = Pyramid::new(64, 64, DEFAULT_LEVELS).unwrap();
    let ed = AnalyticEditor::new(pyr.clone(), 0.004);
    let (cfg, clip, _) = full(2, 80.0);
    let skin = cfg.layout.skin_mask(64, 64);
    let psm = PerturbationSupportMap::prior_only(&cfg.layout, &pyr);
    let r = nulling_search(&clip, &Waveform::zeros(300, 30.0), &ed, &psm, (-2.0, 0.0), Probe::Classical(ClassicalMethod::Pos, &skin)).unwrap();
    assert!(r.degenerate);
    assert_eq!(r.alpha, 0.0);
    assert_eq!(r.clip.frames, clip.frames);
    assert!(unit_hypothesis(&Waveform::zeros(300, 30.0)).unwrap().is_none());
}

#[test]
fn graph_ops_match_plain_signal_functions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..256).map(|i| (i as f64 * 0.3).sin() + 0.3 * rng.random::<f64>()).collect();
    let y: Vec<f64> = (0..256).map(|_| rng.random::<f64>()).collect();
    let w = Waveform::new(x.clone(), 30.0).unwrap();
    let mut g = Graph::new();
    let xv = g.constant(Tensor::vector(x.clone())).unwrap();
    let yv = g.constant(Tensor::vector(y.clone())).unwrap();
    let bp = ops::bandpass(&mut g, xv, 30.0).unwrap();
    for (a, b) in g.value(bp).data().iter().zip(&bandpass(&w).unwrap().samples) {
        assert!((a - b).abs() < 1e-12);
    }
    let r = ops::pearson(&mut g, xv, yv).unwrap();
    assert!((g.value(r).item() - pearson(&x, &y).unwrap()).abs() < 1e-12);
    let mad = ops::mean_abs_diff(&mut g, xv, yv).unwrap();
    let want = x.iter().zip(&y).map(|(a, b)| (a - b).abs()).sum::<f64>() / 256.0;
    assert!((g.value(mad).item() - want).abs() < 1e-12);
}

#[test]
fn waveform_prior_examples() {
    let mut g = Graph::new();
    let pure = g.constant(Tensor::vector(tone(1.25, 300).samples)).unwrap();
    let p = ops::waveform_prior(&mut g, pure, 30.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let noise = g.constant(Tensor::vector((0..300).map(|_| rng.random::<f64>() - 0.5).collect())).unwrap();
    let q = ops::waveform_prior(&mut g, noise, 30.0).unwrap();
    assert!(g.value(p).item() < 0.3, "{}", g.value(p).item());
    assert!(g.value(q).item() > 2.0 * g.value(p).item());
}

#[test]
fn forward_consistency_examples() {
    let pyr = Pyramid::new(64, 64, DEFAULT_LEVELS).unwrap();
    let (cfg, clip, gt) = full(5, 66.0);
    let cells = CellSeries::compute(&clip, &cfg.layout, &pyr).unwrap();
    let w = cells.consensus(&gt).unwrap();
    let top = top_cells(&w, &cells.prior, 8);
    let c_obs = observed_consensus(&cells, &top).unwrap();
    let term = |s: &[f64]| 1.0 - pearson(&bandpass(&Waveform::new(s.to_vec(), 30.0).unwrap()).unwrap().samples, &c_obs.samples).unwrap().abs();
    assert!(1.0 - pearson(&c_obs.samples, &c_obs.samples).unwrap().abs() < 1e-12);
    // Band-passing an already band-limited signal again barely moves it.
    assert!(term(&c_obs.samples) < 1e-2, "{}", term(&c_obs.samples));
    assert!(term(&gt.samples) < 0.2);
    let mut total = 0.0;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..300).map(|_| rng.random::<f64>() - 0.5).collect();
        total += term(&noise);
    }
    assert!(total / 10.0 > 0.8, "{}", total / 10.0);
}

#[test]
fn optimizer_and_schedule() {
    assert_eq!(cosine_lr(1.0, 0, 10), 1.0);
    assert!(cosine_lr(1.0, 10, 10).abs() < 1e-15);
    assert!((cosine_lr(1.0, 5, 10) - 0.5).abs() < 1e-12);
    let mut w = Weights::new();
    w.insert("x", Tensor::vector(vec![3.0, -2.0]));
    let mut opt = AdamW::new(&w, 0.1, 0.0);
    for _ in 0..200 {
        let g: Vec<f64> = w.get("x").unwrap().data().iter().map(|v| 2.0 * v).collect();
        opt.step(&mut w, &[g], 0.1).unwrap();
    }
    assert!(w.get("x").unwrap().data().iter().all(|v| v.abs() < 0.1));
    assert!(opt.step(&mut w, &[vec![f64::NAN, 0.0]], 0.1).is_err());
}

#[test]
fn metrics_log_round_trip_and_windows() {
    let mut log = MetricsLog::new(&["a", "total"]);
    log.rows.push(EpochMetrics { epoch: 0, lr: 1e-4, values: vec![0.5, 1.25] });
    log.rows.push(EpochMetrics { epoch: 1, lr: 5e-5, values: vec![0.25, 1.0 / 3.0] });
    let mut buf = Vec::new();
    log.write_csv(&mut buf).unwrap();
    let back = MetricsLog::read_csv(buf.as_slice()).unwrap();
    assert_eq!(back.columns, log.columns);
    assert_eq!(back.rows, log.rows);
    assert_eq!(decreasing_window_fraction(&[5.0, 4.0, 3.0, 2.0, 1.0, 0.5], 2), 1.0);
    assert_eq!(decreasing_window_fraction(&[1.0, 1.0, 2.0, 2.0, 0.0, 0.0], 2), 0.5);
}

#[test]
fn stage1_checkpoint_round_trip() {
    let data: Vec<LabeledClip> = [(1, 65.0), (2, 90.0)]
        .iter()
        .map(|&(s, hr)| {
            let (clip, s_gt, layout) = small(s, hr);
            LabeledClip { clip, layout, s_gt }
        })
        .collect();
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 0, batch_size: 2, learning_rate: 1e-3, ..Default::default() };
    let out = train_stage1(&data, &tiny(), &cfg, |_| {}).unwrap();
    assert!(out.diverged.is_none());
    assert_eq!(out.log.rows.len(), 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.rpwt");
    out.extractor.save(&path).unwrap();
    let back = Extractor::load(&path).unwrap();
    assert_eq!(back, out.extractor);
    assert_eq!(back.raw(&data[0].clip, None).unwrap(), out.extractor.raw(&data[0].clip, None).unwrap());
}

#[test]
fn stage3_is_deterministic_and_leaves_the_editor_alone() {
    let data: Vec<UnlabeledClip> = [(7, 60.0), (8, 100.0)]
        .iter()
        .map(|&(s, hr)| {
            let (clip, _, layout) = small(s, hr);
            UnlabeledClip { clip, layout }
        })
        .collect();
    let mut gen = EditorGenerator::new(3, 0.004);
    gen.mark_trained();
    let editor = LearnedEditor { generator: gen.clone(), pyramid: Pyramid::new(32, 32, DEFAULT_LEVELS).unwrap(), alpha: 1.0 };
    let cfg = TrainConfig { epochs: 2, warmup_epochs: 1, batch_size: 2, top_k_cells: 4, ..Default::default() };
    let run = || train_stage3(&data, &editor, &tiny(), &cfg, |_| {}).unwrap();
    let (a, b) = (run(), run());
    assert!(a.diverged.is_none(), "{:?}", a.diverged);
    assert_eq!(a.log.rows, b.log.rows);
    assert_eq!(a.extractor, b.extractor);
    for ((_, x), (_, y)) in editor.generator.params.iter().zip(gen.params.iter()) {
        assert_eq!(x.data(), y.data());
    }
    let total = a.log.column("total").unwrap();
    let terms: Vec<Vec<f64>> = LossBreakdown::FIELDS[..8].iter().map(|f| a.log.column(f).unwrap()).collect();
    for (e, t) in total.iter().enumerate() {
        let s = terms[0][e] + (terms[1][e] + terms[2][e] + terms[3][e]) + (terms[4][e] + terms[5][e] + terms[6][e] + terms[7][e]);
        assert!((s - t).abs() <= 1e-12 * t.abs().max(1.0));
    }
}
