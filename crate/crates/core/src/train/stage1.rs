//! Supervised extractor training against ground-truth pulses.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::extractor::network::{forward_stem, Bound, NormalizedClip};
use crate::extractor::{Extractor, ExtractorConfig};
use crate::signal::bandpass;
use crate::{Error, Result};

use super::optim::{cosine_lr, AdamW};
use super::{ops, EpochMetrics, LabeledClip, MetricsLog, TrainConfig, TrainOutcome};

/// Weight of the out-of-band energy ratio in the supervised loss.
pub const OOB_WEIGHT: f64 = 0.1;

/// Builds `(1 - r) + 0.1 * oob` for one prediction, returning the total node
/// and the two term nodes.
pub fn supervised_loss(g: &mut Graph, pred: Var, s_gt_bp: &[f64], fs: f64) -> Result<(Var, Var, Var)> {
    let bp = ops::bandpass(g, pred, fs)?;
    let target = g.constant(Tensor::vector(s_gt_bp.to_vec()))?;
    let r = ops::pearson(g, bp, target)?;
    let one_minus = g.neg(r)?;
    let corr = g.add_scalar(one_minus, 1.0)?;
    let m = g.mean(pred)?;
    let centered = g.sub(pred, m)?;
    let all = ops::mean_square(g, centered)?;
    let out = g.sub(centered, bp)?;
    let out = ops::mean_square(g, out)?;
    let all = g.add_scalar(all, 1e-30)?;
    let oob = g.div(out, all)?;
    let oob_w = g.scale(oob, OOB_WEIGHT)?;
    let total = g.add(corr, oob_w)?;
    Ok((total, corr, oob))
}

pub fn train_stage1(
    data: &[LabeledClip],
    ecfg: &ExtractorConfig,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("stage 1 needs at least one labeled clip".into()));
    }
    let mut ex = Extractor::new(ecfg.clone(), cfg.seed)?;
    let mut opt = AdamW::new(&ex.params, cfg.learning_rate, cfg.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let prepared = data
        .iter()
        .map(|c| {
            let stem = NormalizedClip::new(&c.clip)?.stem(ecfg.stem_grid, None)?;
            let target = bandpass(&c.s_gt)?.samples;
            Ok((stem, target, c.clip.fps))
        })
        .collect::<Result<Vec<_>>>()?;
    let steps_per_epoch = data.len().div_ceil(cfg.batch_size) as u64;
    let total_steps = steps_per_epoch * cfg.epochs as u64;
    let mut log = MetricsLog::new(&["corr", "oob", "total"]);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0; 3];
        let lr = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Vec<Vec<f64>> = ex.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            for &i in batch {
                let (stem, target, fs) = &prepared[i];
                let mut g = Graph::new();
                let p = Bound::new(&mut g, &ex.params, true)?;
                let x = g.constant(stem.clone())?;
                let pred = forward_stem(&mut g, &p, ecfg, x, Some(&mut rng))?;
                let (total, corr, oob) = supervised_loss(&mut g, pred, target, *fs)?;
                let vals = [g.value(corr).item(), g.value(oob).item(), g.value(total).item()];
                if vals.iter().any(|v| !v.is_finite()) {
                    return Ok(TrainOutcome {
                        extractor: ex,
                        log,
                        diverged: Some(format!("non-finite loss at epoch {epoch}")),
                    });
                }
                for (s, v) in sums.iter_mut().zip(vals) {
                    *s += v;
                }
                g.backward(total)?;
                for (a, gr) in acc.iter_mut().zip(p.grads(&g, &ex.params)?) {
                    for (x, y) in a.iter_mut().zip(gr) {
                        *x += y / batch.len() as f64;
                    }
                }
            }
            let lr_step = cosine_lr(cfg.learning_rate, opt.steps(), total_steps);
            let before = ex.params.clone();
            if let Err(e) = opt.step(&mut ex.params, &acc, lr_step) {
                return Ok(TrainOutcome { extractor: Extractor { params: before, ..ex }, log, diverged: Some(e.to_string()) });
            }
            if !ex.params.is_finite() {
                return Ok(TrainOutcome { extractor: Extractor { params: before, ..ex }, log, diverged: Some(format!("non-finite parameters at epoch {epoch}")) });
            }
        }
        let n = data.len() as f64;
        let row = EpochMetrics { epoch, lr, values: sums.iter().map(|s| s / n).collect() };
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok(TrainOutcome { extractor: ex, log, diverged: None })
}
