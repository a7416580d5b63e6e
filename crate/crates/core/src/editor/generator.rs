//! Learned residual generator: a small encoder-decoder over the chrominance
//! carrier and the broadcast target signal, modulated by the control scalar.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::clip::VideoClip;
use crate::color::luma_axis;
use crate::signal::Waveform;
use crate::weights::{Bound, Weights};
use crate::{Error, Result};

use super::analytic::ClipEditor;
use super::chroma::luminance_suppress;
use super::psm::PerturbationSupportMap;
use super::pyramid::{Image, Pyramid};

const C1: usize = 16;
const C2: usize = 32;
const FILM_HIDDEN: usize = 16;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("non-empty shape")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditorGenerator {
    pub params: Weights,
    /// Pixel gain applied to the decoder output.
    pub strength: f64,
    trained: bool,
}

impl EditorGenerator {
    pub fn new(seed: u64, strength: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan = |f: usize| 1.0 / (f as f64).sqrt();
        let mut w = Weights::new();
        w.insert("enc1.w", uniform(&mut rng, &[C1, 4, 3, 3], fan(4 * 9)));
        w.insert("enc1.b", Tensor::zeros(&[1, C1, 1, 1]));
        w.insert("enc2.w", uniform(&mut rng, &[C2, C1, 3, 3], fan(C1 * 9)));
        w.insert("enc2.b", Tensor::zeros(&[1, C2, 1, 1]));
        w.insert("dec1.w", uniform(&mut rng, &[C1, C1 + C2, 3, 3], fan((C1 + C2) * 9)));
        w.insert("dec1.b", Tensor::zeros(&[1, C1, 1, 1]));
        w.insert("dec2.w", uniform(&mut rng, &[3, C1, 3, 3], fan(C1 * 9)));
        w.insert("dec2.b", Tensor::zeros(&[1, 3, 1, 1]));
        w.insert("film1.w", uniform(&mut rng, &[1, FILM_HIDDEN], 1.0));
        w.insert("film1.b", Tensor::zeros(&[1, FILM_HIDDEN]));
        w.insert("film2.w", uniform(&mut rng, &[FILM_HIDDEN, 2 * (C1 + 3)], 0.1 * fan(FILM_HIDDEN)));
        w.insert("film2.b", Tensor::zeros(&[1, 2 * (C1 + 3)]));
        EditorGenerator { params: w, strength, trained: false }
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = self.params.clone();
        w.insert("meta.strength", Tensor::scalar(self.strength));
        w.insert("meta.trained", Tensor::scalar(if self.trained { 1.0 } else { 0.0 }));
        w.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let all = Weights::load(path)?;
        let strength = all.get("meta.strength")?.item();
        let trained = all.get("meta.trained")?.item() == 1.0;
        let mut params = Weights::new();
        for (n, t) in all.iter().filter(|(n, _)| !n.starts_with("meta.")) {
            params.insert(n, t.clone());
        }
        let fresh = EditorGenerator::new(0, strength);
        for (n, t) in fresh.params.iter() {
            if params.get(n)?.shape() != t.shape() {
                return Err(Error::Config(format!("generator parameter `{n}` has the wrong shape")));
            }
        }
        Ok(EditorGenerator { params, strength, trained })
    }
}

fn pool2(n: usize) -> Arc<Tensor> {
    let mut m = vec![0.0; (n / 2) * n];
    for o in 0..n / 2 {
        m[o * n + 2 * o] = 0.5;
        m[o * n + 2 * o + 1] = 0.5;
    }
    Arc::new(Tensor::new(vec![n / 2, n], m).expect("non-empty pool"))
}

fn upsample2(n: usize) -> Arc<Tensor> {
    let mut m = vec![0.0; 2 * n * n];
    for i in 0..2 * n {
        m[i * n + i / 2] = 1.0;
    }
    Arc::new(Tensor::new(vec![2 * n, n], m).expect("non-empty upsample"))
}

/// `I - w w^T` for the unit luminance axis.
fn luma_projector() -> Arc<Tensor> {
    let w = luma_axis();
    let mut m = vec![0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            m[i * 3 + j] = if i == j { 1.0 } else { 0.0 } - w[i] * w[j];
        }
    }
    Arc::new(Tensor::new(vec![3, 3], m).expect("3x3"))
}

/// Per-frame chrominance carriers `[T, 3, h, w]` of a clip's low bases.
pub fn carrier_tensor(clip: &VideoClip, pyr: &Pyramid) -> Result<Tensor> {
    let (lh, lw) = pyr.low_dims();
    let mut out = Vec::with_capacity(clip.t * 3 * lh * lw);
    for t in 0..clip.t {
        let low = pyr.reduce_full(&Image::from_interleaved(clip.frame(t), clip.h, clip.w));
        out.extend(luminance_suppress(&low).c.data);
    }
    Ok(Tensor::new(vec![clip.t, 3, lh, lw], out)?)
}

fn conv(g: &mut Graph, p: &Bound, x: Var, name: &str) -> Result<Var> {
    let y = g.conv2d(x, p.get(&format!("{name}.w"))?)?;
    Ok(g.add(y, p.get(&format!("{name}.b"))?)?)
}

fn film(g: &mut Graph, x: Var, params: Var, offset: usize, ch: usize) -> Result<Var> {
    let gamma = g.slice(params, 1, offset, ch)?;
    let gamma = g.reshape(gamma, &[1, ch, 1, 1])?;
    let gamma = g.add_scalar(gamma, 1.0)?;
    let beta = g.slice(params, 1, offset + ch, ch)?;
    let beta = g.reshape(beta, &[1, ch, 1, 1])?;
    let y = g.mul(x, gamma)?;
    Ok(g.add(y, beta)?)
}

/// Gated low-base residual `[T, 3, h, w]` for one target signal. `carrier`
/// is a `[T, 3, h, w]` node; the result is luminance-free and zero wherever
/// the support map is zero.
pub fn generator_forward(
    g: &mut Graph,
    p: &Bound,
    strength: f64,
    carrier: Var,
    s_target: &[f64],
    alpha: f64,
    psm: &PerturbationSupportMap,
) -> Result<Var> {
    let shape = g.shape(carrier).to_vec();
    let (t, lh, lw) = (shape[0], shape[2], shape[3]);
    if s_target.len() != t {
        return Err(Error::LengthMismatch(s_target.len(), t));
    }
    if (psm.h, psm.w) != (lh, lw) || lh % 2 != 0 || lw % 2 != 0 {
        return Err(Error::Config(format!("carrier {lh}x{lw} does not match support map {}x{}", psm.h, psm.w)));
    }
    let s_plane: Vec<f64> = s_target.iter().flat_map(|v| std::iter::repeat_n(*v, lh * lw)).collect();
    let s = g.constant(Tensor::new(vec![t, 1, lh, lw], s_plane)?)?;
    let x = g.concat(&[carrier, s], 1)?;

    let a = g.constant(Tensor::new(vec![1, 1], vec![alpha])?)?;
    let h = g.matmul(a, p.get("film1.w")?)?;
    let h = g.add(h, p.get("film1.b")?)?;
    let h = g.silu(h)?;
    let fp = g.matmul(h, p.get("film2.w")?)?;
    let fp = g.add(fp, p.get("film2.b")?)?;

    let e1 = conv(g, p, x, "enc1")?;
    let e1 = g.silu(e1)?;
    let d = g.axis_map(e1, 2, pool2(lh))?;
    let d = g.axis_map(d, 3, pool2(lw))?;
    let e2 = conv(g, p, d, "enc2")?;
    let e2 = g.silu(e2)?;
    let u = g.axis_map(e2, 2, upsample2(lh / 2))?;
    let u = g.axis_map(u, 3, upsample2(lw / 2))?;
    let cat = g.concat(&[e1, u], 1)?;
    let d1 = conv(g, p, cat, "dec1")?;
    let d1 = film(g, d1, fp, 0, C1)?;
    let d1 = g.silu(d1)?;
    let out = conv(g, p, d1, "dec2")?;
    let out = film(g, out, fp, 2 * C1, 3)?;
    let out = g.axis_map(out, 1, luma_projector())?;
    let gate = g.constant(Tensor::new(vec![1, 1, lh, lw], psm.psm.clone())?)?;
    let out = g.mul(out, gate)?;
    Ok(g.scale(out, strength)?)
}

/// Adds a per-frame low-base residual `[T, 3, h, w]` to a clip at full
/// resolution, then clamps.
pub fn apply_low_residual(clip: &VideoClip, pyr: &Pyramid, delta: &Tensor) -> Result<VideoClip> {
    let (lh, lw) = pyr.low_dims();
    if delta.shape() != [clip.t, 3, lh, lw] {
        return Err(Error::Config(format!("residual shape {:?} does not fit the clip", delta.shape())));
    }
    let mut out = clip.clone();
    let n = 3 * lh * lw;
    for t in 0..clip.t {
        let low = Image { h: lh, w: lw, data: delta.data()[t * n..(t + 1) * n].to_vec() };
        let up = pyr.expand_low(&low).to_interleaved();
        for (v, d) in out.frame_mut(t).iter_mut().zip(&up) {
            *v = (*v as f64 + d).clamp(0.0, 1.0) as f32;
        }
    }
    Ok(out)
}

/// Generator residual for a clip, evaluated without recording gradients.
pub fn generator_delta(
    gen: &EditorGenerator,
    clip: &VideoClip,
    pyr: &Pyramid,
    psm: &PerturbationSupportMap,
    s_target: &Waveform,
    alpha: f64,
) -> Result<Tensor> {
    let mut g = Graph::new();
    let p = Bound::new(&mut g, &gen.params, false)?;
    let c = g.constant(carrier_tensor(clip, pyr)?)?;
    let d = generator_forward(&mut g, &p, gen.strength, c, &s_target.samples, alpha, psm)?;
    Ok(g.value(d).clone())
}

/// Learned edit: generator residual on the low base, reconstructed and
/// clamped. Refuses to run an untrained generator.
pub fn learned_edit(
    clip: &VideoClip,
    s_target: &Waveform,
    alpha: f64,
    gen: &EditorGenerator,
    pyr: &Pyramid,
    psm: &PerturbationSupportMap,
) -> Result<VideoClip> {
    if !gen.is_trained() {
        return Err(Error::UntrainedGenerator);
    }
    if s_target.len() != clip.t {
        return Err(Error::LengthMismatch(s_target.len(), clip.t));
    }
    if clip.h != pyr.h || clip.w != pyr.w {
        return Err(Error::Config("clip and pyramid geometry disagree".into()));
    }
    let delta = generator_delta(gen, clip, pyr, psm, s_target, alpha)?;
    apply_low_residual(clip, pyr, &delta)
}

/// A trained generator used as a frozen editor at unit control.
#[derive(Debug, Clone)]
pub struct LearnedEditor {
    pub generator: EditorGenerator,
    pub pyramid: Pyramid,
    pub alpha: f64,
}

impl ClipEditor for LearnedEditor {
    fn edit(&self, clip: &VideoClip, psm: &PerturbationSupportMap, s: &Waveform) -> Result<VideoClip> {
        learned_edit(clip, s, self.alpha, &self.generator, &self.pyramid, psm)
    }
}
