//! Editor training against a frozen reference extractor.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::editor::generator::{carrier_tensor, generator_forward};
use crate::editor::{compute_psm, EditorGenerator, PerturbationSupportMap, Pyramid, DEFAULT_LEVELS};
use crate::extractor::network::{clip_tensor_planar, forward_planar};
use crate::extractor::Extractor;
use crate::signal::{bandpass, transform_signal, TransformSpec, Waveform};
use crate::weights::Bound;
use crate::{Error, Result};

use super::optim::{cosine_lr, AdamW};
use super::{ops, sample_interventions, AmplitudeTarget, EpochMetrics, LabeledClip, MetricsLog, TrainConfig};

pub const COLUMNS: [&str; 6] = ["recon", "nul", "amp", "phase", "freq", "total"];

#[derive(Debug, Clone)]
pub struct EditorOutcome {
    pub generator: EditorGenerator,
    pub log: MetricsLog,
    pub diverged: Option<String>,
}

struct Prepared {
    pixels: Tensor,
    carrier: Tensor,
    psm: PerturbationSupportMap,
    s_gt: Waveform,
    target: Waveform,
    /// Least-squares gain mapping the reference output onto the band-passed
    /// ground truth.
    gain: f64,
}

fn expand(g: &mut Graph, d: Var, eh: &Arc<Tensor>, ew: &Arc<Tensor>) -> Result<Var> {
    let x = g.axis_map(d, 2, eh.clone())?;
    Ok(g.axis_map(x, 3, ew.clone())?)
}

/// Calibrated, band-passed reference output on edited pixels.
fn reference(g: &mut Graph, e: &Bound, ex: &Extractor, pixels: Var, gain: f64, fs: f64) -> Result<Var> {
    let y = forward_planar(g, e, &ex.config, pixels, None)?;
    let y = ops::bandpass(g, y, fs)?;
    Ok(g.scale(y, gain)?)
}

pub fn train_editor(
    data: &[LabeledClip],
    reference_extractor: &Extractor,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<EditorOutcome> {
    cfg.validate()?;
    let first = data.first().ok_or_else(|| Error::Config("editor training needs at least one clip".into()))?;
    let pyr = Pyramid::new(first.clip.h, first.clip.w, DEFAULT_LEVELS)?;
    let (eh, ew) = pyr.full_expand_dense();
    let prepared = data
        .iter()
        .map(|c| {
            let target = bandpass(&c.s_gt)?;
            let raw = Waveform::new(reference_extractor.raw(&c.clip, None)?, c.clip.fps)?;
            let bp = bandpass(&raw)?;
            let num: f64 = bp.samples.iter().zip(&target.samples).map(|(a, b)| a * b).sum();
            let den: f64 = bp.samples.iter().map(|a| a * a).sum();
            if den <= 0.0 {
                return Err(Error::ZeroVariance);
            }
            Ok(Prepared {
                pixels: clip_tensor_planar(&c.clip),
                carrier: carrier_tensor(&c.clip, &pyr)?,
                psm: compute_psm(&c.clip, &c.layout, &c.s_gt, &pyr)?,
                s_gt: c.s_gt.clone(),
                target,
                gain: num / den,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut gen = EditorGenerator::new(cfg.seed, cfg.editor_strength);
    let mut opt = AdamW::new(&gen.params, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let total_steps = (data.len().div_ceil(cfg.batch_size) * cfg.epochs) as u64;
    let mut log = MetricsLog::new(&COLUMNS);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let lr = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
        let mut sums = [0.0; 6];
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = gen.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for &i in batch {
                let pr = &prepared[i];
                let fs = pr.s_gt.sample_rate;
                let scale = pr.target.rms().max(1e-300);
                let mut g = Graph::new();
                let p = Bound::new(&mut g, &gen.params, true)?;
                let e = Bound::new(&mut g, &reference_extractor.params, false)?;
                let x = g.constant(pr.pixels.clone())?;
                let c = g.constant(pr.carrier.clone())?;
                let s = &pr.s_gt.samples;
                let strength = gen.strength;

                // Zero control must leave the clip alone.
                let d0 = generator_forward(&mut g, &p, strength, c, s, 0.0, &pr.psm)?;
                let up0 = expand(&mut g, d0, &eh, &ew)?;
                let recon = ops::mean_square(&mut g, up0)?;
                let recon = g.scale(recon, 1.0 / (strength * strength))?;

                let neg: Vec<f64> = s.iter().map(|v| -v).collect();
                let dn = generator_forward(&mut g, &p, strength, c, &neg, 1.0, &pr.psm)?;
                let upn = expand(&mut g, dn, &eh, &ew)?;
                let x_nul = g.add(x, upn)?;
                let y_nul = reference(&mut g, &e, reference_extractor, x_nul, pr.gain, fs)?;
                let nul = ops::mean_square(&mut g, y_nul)?;
                let nul = g.scale(nul, 1.0 / (scale * scale))?;

                let iv = sample_interventions(cfg, &mut rng);
                let amp_gain = match cfg.amplitude_target {
                    AmplitudeTarget::TotalScale => 1.0 + iv.alpha,
                    AmplitudeTarget::Literal => iv.alpha,
                };
                let da = generator_forward(&mut g, &p, strength, c, s, iv.alpha, &pr.psm)?;
                let upa = expand(&mut g, da, &eh, &ew)?;
                let x_a = g.add(x, upa)?;
                let y_a = reference(&mut g, &e, reference_extractor, x_a, pr.gain, fs)?;
                let t_a = g.constant(Tensor::vector(pr.target.scaled(amp_gain).samples))?;
                let amp = ops::mean_abs_diff(&mut g, y_a, t_a)?;
                let amp = g.scale(amp, 1.0 / scale)?;

                // Remove-then-add: the second edit sees the nulled carrier.
                let mut c_nul = pr.carrier.clone();
                for (a, b) in c_nul.data_mut().iter_mut().zip(g.value(dn).data()) {
                    *a += b;
                }
                let c_nul = g.constant(c_nul)?;
                let branch = |spec: TransformSpec, g: &mut Graph| -> Result<Var> {
                    let moved = transform_signal(&pr.s_gt, spec)?;
                    let d = generator_forward(g, &p, strength, c_nul, &moved.samples, 1.0, &pr.psm)?;
                    let up = expand(g, d, &eh, &ew)?;
                    let xe = g.add(x_nul, up)?;
                    let y = reference(g, &e, reference_extractor, xe, pr.gain, fs)?;
                    let target = bandpass(&transform_signal(&pr.target, spec)?)?;
                    let t = g.constant(Tensor::vector(target.samples))?;
                    let l = ops::mean_abs_diff(g, y, t)?;
                    Ok(g.scale(l, 1.0 / scale)?)
                };
                let phase = branch(TransformSpec::Phase { tau: iv.tau }, &mut g)?;
                let freq = branch(TransformSpec::Frequency { rho: iv.rho }, &mut g)?;

                let terms = [recon, nul, amp, phase, freq];
                let mut total = terms[0];
                for t in &terms[1..] {
                    total = g.add(total, *t)?;
                }
                let vals: Vec<f64> = terms.iter().chain([&total]).map(|v| g.value(*v).item()).collect();
                if vals.iter().any(|v| !v.is_finite()) {
                    return Ok(EditorOutcome { generator: gen, log, diverged: Some(format!("non-finite loss at epoch {epoch}")) });
                }
                for (s, v) in sums.iter_mut().zip(&vals) {
                    *s += v;
                }
                g.backward(total)?;
                for (a, gr) in acc.iter_mut().zip(p.grads(&g, &gen.params)?) {
                    for (x, y) in a.iter_mut().zip(gr) {
                        *x += y / batch.len() as f64;
                    }
                }
            }
            let lr_step = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
            let before = gen.params.clone();
            let stepped = opt.step(&mut gen.params, &acc, lr_step);
            if stepped.is_err() || !gen.params.is_finite() {
                gen.params = before;
                let detail = stepped.err().map_or_else(|| format!("non-finite parameters at epoch {epoch}"), |e| e.to_string());
                return Ok(EditorOutcome { generator: gen, log, diverged: Some(detail) });
            }
        }
        let n = data.len() as f64;
        let row = EpochMetrics { epoch, lr, values: sums.iter().map(|s| s / n).collect() };
        on_epoch(&row);
        log.rows.push(row);
    }
    gen.mark_trained();
    Ok(EditorOutcome { generator: gen, log, diverged: None })
}
