//! Self-supervised extractor training by hypothesis, intervention and
//! verification.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::clip::VideoClip;
use crate::editor::{cell_region_mask, top_cells, CellSeries, ClipEditor, PerturbationSupportMap, Pyramid};
use crate::extractor::network::{forward_stem, Bound, NormalizedClip};
use crate::extractor::{classical_extract, ClassicalMethod, Extractor, ExtractorConfig};
use crate::signal::{bandpass, transform_signal, TransformSpec, Waveform};
use crate::{Error, Result};

use super::nulling::{nulling_search, unit_hypothesis, Probe};
use super::optim::{cosine_lr, AdamW};
use super::{ops, sample_interventions, AmplitudeTarget, EpochMetrics, LossBreakdown, MetricsLog, TrainConfig, TrainOutcome, UnlabeledClip};

/// Columns written per epoch besides the loss terms.
pub const EXTRA_COLUMNS: [&str; 3] = ["nulling_residual", "alpha_star", "degenerate"];

/// Per-clip quantities that do not change during training.
struct Prepared {
    cells: CellSeries,
    skin: Vec<f32>,
    background: Vec<f32>,
}

/// Diagnostics from one clip's step.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepStats {
    pub residual_fraction: f64,
    pub alpha_star: f64,
    /// Terms replaced by their worst-case constant.
    pub degenerate: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn is_flat(x: &[f64]) -> bool {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64;
    let scale = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
    var.sqrt() <= 1e-12 * scale.max(1e-300)
}

/// Point-wise median of the selected cell series, band-passed.
pub fn observed_consensus(cells: &CellSeries, top: &[usize]) -> Result<Waveform> {
    let first = &cells.series[top[0]];
    let samples = (0..first.len())
        .map(|t| {
            let mut v: Vec<f64> = top.iter().map(|&k| cells.series[k].samples[t]).collect();
            median(&mut v)
        })
        .collect();
    bandpass(&Waveform::new(samples, first.sample_rate)?)
}

struct Ctx<'a> {
    cfg: &'a TrainConfig,
    ecfg: &'a ExtractorConfig,
    editor: &'a dyn ClipEditor,
    pyr: &'a Pyramid,
}

/// `1 - |r|`, or the constant 1 when the partner is flat.
fn consistency(g: &mut Graph, a: Var, b: Var, stats: &mut StepStats) -> Result<Var> {
    if is_flat(g.value(a).data()) || is_flat(g.value(b).data()) {
        stats.degenerate += 1;
        return Ok(g.constant(Tensor::scalar(1.0))?);
    }
    let r = ops::pearson(g, a, b)?;
    let r = g.abs(r)?;
    let r = g.neg(r)?;
    Ok(g.add_scalar(r, 1.0)?)
}

fn forward(g: &mut Graph, p: &Bound, ctx: &Ctx, stem: Tensor, rng: &mut ChaCha8Rng) -> Result<Var> {
    let x = g.constant(stem)?;
    forward_stem(g, p, ctx.ecfg, x, Some(rng))
}

fn edited_stem(ctx: &Ctx, clip: &VideoClip) -> Result<Tensor> {
    NormalizedClip::new(clip)?.stem(ctx.ecfg.stem_grid, None)
}

/// Builds the full objective for one clip, back-propagates it into `p` and
/// returns the weighted terms.
#[allow(clippy::too_many_arguments)]
fn clip_step(
    ctx: &Ctx,
    ex: &Extractor,
    item: &UnlabeledClip,
    prep: &Prepared,
    warm: bool,
    rng: &mut ChaCha8Rng,
    g: &mut Graph,
    p: &Bound,
) -> Result<(LossBreakdown, StepStats)> {
    let (cfg, clip) = (ctx.cfg, &item.clip);
    let fs = clip.fps;
    let mut stats = StepStats::default();
    let norm = NormalizedClip::new(clip)?;

    // Hypothesis: the classical proxy during warm-up, the network afterwards.
    let s0_var = if warm {
        None
    } else {
        Some(forward(g, p, ctx, norm.stem(ctx.ecfg.stem_grid, None)?, rng)?)
    };
    let hyp = match s0_var {
        Some(v) => Waveform::new(g.value(v).data().to_vec(), fs)?,
        None => classical_extract(clip, &prep.skin, ClassicalMethod::Pos)?,
    };
    let unit = unit_hypothesis(&hyp)?;
    let w_static = match &unit {
        Some(u) => prep.cells.consensus(u)?,
        None => vec![0.0; prep.cells.series.len()],
    };
    let psm = PerturbationSupportMap::from_parts(&item.layout, ctx.pyr, w_static.clone());

    let mut out = LossBreakdown::default();

    // Interventions. Targets live in the units of the hypothesis: the
    // standardized proxy during warm-up, the network's own band-passed output
    // afterwards.
    if let Some(unit) = &unit {
        let probe = if warm { Probe::Classical(ClassicalMethod::Pos, &prep.skin) } else { Probe::Network(ex) };
        let nul = nulling_search(clip, &hyp, ctx.editor, &psm, cfg.nulling_range, probe)?;
        stats.residual_fraction = nul.residual_fraction();
        stats.alpha_star = nul.alpha;
        let kappa = -nul.alpha;
        let base = if warm { unit.clone() } else { bandpass(&hyp)? };
        let scale = base.rms().max(1e-300);

        let s_nul = forward(g, p, ctx, edited_stem(ctx, &nul.clip)?, rng)?;
        let s_nul = ops::bandpass(g, s_nul, fs)?;
        let e = ops::mean_square(g, s_nul)?;
        let l_nul = g.scale(e, cfg.w_nul / (scale * scale))?;
        out.l_nul = g.value(l_nul).item();
        let mut total = l_nul;

        let iv = sample_interventions(cfg, rng);
        let amp_target = match cfg.amplitude_target {
            AmplitudeTarget::TotalScale => 1.0 + iv.alpha,
            AmplitudeTarget::Literal => iv.alpha,
        };
        let branches: [(VideoClip, Waveform); 3] = [
            (ctx.editor.edit(clip, &psm, &unit.scaled(iv.alpha * kappa))?, base.scaled(amp_target)),
            (
                ctx.editor.edit(&nul.clip, &psm, &transform_signal(unit, TransformSpec::Phase { tau: iv.tau })?.scaled(kappa))?,
                bandpass(&transform_signal(&base, TransformSpec::Phase { tau: iv.tau })?)?,
            ),
            (
                ctx.editor.edit(&nul.clip, &psm, &transform_signal(unit, TransformSpec::Frequency { rho: iv.rho })?.scaled(kappa))?,
                bandpass(&transform_signal(&base, TransformSpec::Frequency { rho: iv.rho })?)?,
            ),
        ];
        let mut equ = [0.0; 3];
        for (k, (edited, target)) in branches.into_iter().enumerate() {
            let y = forward(g, p, ctx, edited_stem(ctx, &edited)?, rng)?;
            let y = ops::bandpass(g, y, fs)?;
            let t = g.constant(Tensor::vector(target.samples))?;
            let d = ops::mean_abs_diff(g, y, t)?;
            let d = g.scale(d, cfg.w_equ / scale)?;
            equ[k] = g.value(d).item();
            total = g.add(total, d)?;
        }
        (out.l_equ_amp, out.l_equ_phase, out.l_equ_freq) = (equ[0], equ[1], equ[2]);
        g.backward(total)?;
    } else {
        stats.degenerate += 1;
    }

    // Spatio-temporal consistency against the hypothesis.
    let s0 = match s0_var {
        Some(v) => v,
        None => g.constant(Tensor::vector(hyp.samples.clone()))?,
    };
    let s0_bp = ops::bandpass(g, s0, fs)?;
    let s0_energy = g.value(s0_bp).data().iter().map(|v| v * v).sum::<f64>() / clip.t as f64;
    let top = top_cells(&w_static, &prep.cells.prior, cfg.top_k_cells);
    if top.is_empty() {
        return Err(Error::EmptyMask("consensus cells"));
    }
    let c_obs = observed_consensus(&prep.cells, &top)?;
    let c_obs = g.constant(Tensor::vector(c_obs.samples))?;
    let l_forward = consistency(g, s0_bp, c_obs, &mut stats)?;
    let l_forward = g.scale(l_forward, cfg.w_forward)?;

    let mut multi = Vec::with_capacity(top.len());
    for &cell in &top {
        let mask = cell_region_mask(cell, clip.h, clip.w);
        let c = forward(g, p, ctx, norm.stem(ctx.ecfg.stem_grid, Some(&mask))?, rng)?;
        let c = ops::bandpass(g, c, fs)?;
        multi.push(consistency(g, s0_bp, c, &mut stats)?);
    }
    let cat = g.concat(&multi, 0)?;
    let l_multi = g.mean(cat)?;
    let l_multi = g.scale(l_multi, cfg.w_multiregion)?;

    let c_bg = forward(g, p, ctx, norm.stem(ctx.ecfg.stem_grid, Some(&prep.background))?, rng)?;
    let c_bg = ops::bandpass(g, c_bg, fs)?;
    let corr_bg = if is_flat(g.value(c_bg).data()) || is_flat(g.value(s0_bp).data()) {
        stats.degenerate += 1;
        g.constant(Tensor::scalar(0.0))?
    } else {
        let r = ops::pearson(g, s0_bp, c_bg)?;
        g.abs(r)?
    };
    let e_bg = ops::mean_square(g, c_bg)?;
    let e_bg = g.scale(e_bg, 1.0 / s0_energy.max(1e-300))?;
    let l_bg = g.add(corr_bg, e_bg)?;
    let l_bg = g.scale(l_bg, cfg.w_background)?;

    let l_wave = ops::waveform_prior(g, s0, fs)?;
    let l_wave = g.scale(l_wave, cfg.w_wave)?;

    out.l_forward = g.value(l_forward).item();
    out.l_multiregion = g.value(l_multi).item();
    out.l_background = g.value(l_bg).item();
    out.l_wave = g.value(l_wave).item();
    let a = g.add(l_forward, l_multi)?;
    let b = g.add(l_bg, l_wave)?;
    let st = g.add(a, b)?;
    g.backward(st)?;
    Ok((out.with_total(), stats))
}

/// Trains a freshly initialized extractor on unlabeled clips with a frozen
/// editor. `on_epoch` sees each log row as it is produced.
pub fn train_stage3(
    data: &[UnlabeledClip],
    editor: &dyn ClipEditor,
    ecfg: &ExtractorConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = data.first().ok_or_else(|| Error::Config("stage 3 needs at least one clip".into()))?;
    let pyr = Pyramid::new(first.clip.h, first.clip.w, crate::editor::DEFAULT_LEVELS)?;
    let prepared = data
        .iter()
        .map(|c| {
            if c.clip.h != pyr.h || c.clip.w != pyr.w {
                return Err(Error::Config("stage 3 clips must share one frame size".into()));
            }
            Ok(Prepared {
                cells: CellSeries::compute(&c.clip, &c.layout, &pyr)?,
                skin: c.layout.skin_mask(c.clip.h, c.clip.w),
                background: c.layout.background.mask(c.clip.h, c.clip.w),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ctx = Ctx { cfg, ecfg, editor, pyr: &pyr };
    let mut ex = Extractor::new(ecfg.clone(), cfg.seed)?;
    let mut opt = AdamW::new(&ex.params, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0003);
    let total_steps = (data.len().div_ceil(cfg.batch_size) * cfg.epochs) as u64;
    let mut columns: Vec<&str> = LossBreakdown::FIELDS.to_vec();
    columns.extend(EXTRA_COLUMNS);
    let mut log = MetricsLog::new(&columns);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        let warm = epoch < cfg.warmup_epochs;
        order.shuffle(&mut rng);
        let lr = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
        let mut losses = Vec::with_capacity(data.len());
        let (mut resid, mut alpha, mut degenerate) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = ex.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for &i in batch {
                let mut g = Graph::new();
                let p = Bound::new(&mut g, &ex.params, true)?;
                let (l, st) = clip_step(&ctx, &ex, &data[i], &prepared[i], warm, &mut rng, &mut g, &p)?;
                if !l.is_finite() {
                    return Ok(TrainOutcome { extractor: ex, log, diverged: Some(format!("non-finite loss at epoch {epoch}: {l:?}")) });
                }
                losses.push(l);
                resid += st.residual_fraction;
                alpha += st.alpha_star;
                degenerate += st.degenerate;
                for (a, gr) in acc.iter_mut().zip(p.grads(&g, &ex.params)?) {
                    for (x, y) in a.iter_mut().zip(gr) {
                        *x += y / batch.len() as f64;
                    }
                }
            }
            let lr_step = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
            let before = ex.params.clone();
            let stepped = opt.step(&mut ex.params, &acc, lr_step);
            if stepped.is_err() || !ex.params.is_finite() {
                let detail = stepped.err().map_or_else(|| format!("non-finite parameters at epoch {epoch}"), |e| e.to_string());
                return Ok(TrainOutcome { extractor: Extractor { params: before, ..ex }, log, diverged: Some(detail) });
            }
        }
        let n = data.len() as f64;
        let mean = LossBreakdown::mean(&losses);
        let mut values = mean.values().to_vec();
        values.extend([resid / n, alpha / n, degenerate as f64]);
        let row = EpochMetrics { epoch, lr, values };
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok(TrainOutcome { extractor: ex, log, diverged: None })
}
