//! Compact trainable extractor: temporal normalization, a small
//! spatio-temporal convolution stem, a temporal-difference prior, gated
//! selective state-space blocks, one global attention layer and a linear
//! per-frame head.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rppg_autodiff::{Graph, Tensor, Var};

use crate::clip::VideoClip;
use crate::signal::{bandpass, Waveform};
pub use crate::weights::Bound;
use crate::weights::Weights;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    pub token_dim: usize,
    pub num_gtss_blocks: usize,
    pub ssm_state_dim: usize,
    pub conv_kernel: usize,
    pub attention_heads: usize,
    pub dropout_rate: f64,
    /// Side of the pooled grid fed to the convolution stem.
    pub stem_grid: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            token_dim: 32,
            num_gtss_blocks: 4,
            ssm_state_dim: 8,
            conv_kernel: 5,
            attention_heads: 2,
            dropout_rate: 0.1,
            stem_grid: 8,
        }
    }
}

impl ExtractorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.token_dim == 0 || self.ssm_state_dim == 0 || self.attention_heads == 0 {
            return Err(Error::Config("extractor widths must be positive".into()));
        }
        if self.conv_kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("conv_kernel {} must be odd", self.conv_kernel)));
        }
        if !self.token_dim.is_multiple_of(self.attention_heads) {
            return Err(Error::Config("token_dim must be divisible by attention_heads".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout_rate)));
        }
        if self.stem_grid < 2 || !self.stem_grid.is_multiple_of(2) {
            return Err(Error::Config("stem_grid must be even and at least 2".into()));
        }
        Ok(())
    }
}

const STEM1: usize = 8;
const STEM2: usize = 16;

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-bound..bound)).collect()).expect("non-empty shape")
}

/// Freshly initialized extractor parameters.
pub fn init_params(cfg: &ExtractorConfig, seed: u64) -> Result<Weights> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, n, k) = (cfg.token_dim, cfg.ssm_state_dim, cfg.conv_kernel);
    let mut w = Weights::new();
    let fan = |f: usize| 1.0 / (f as f64).sqrt();
    w.insert("stem1.w", uniform(&mut rng, &[STEM1, 3, 3, 3, 3], fan(3 * 27)));
    w.insert("stem1.b", Tensor::zeros(&[STEM1, 1, 1, 1]));
    w.insert("stem2.w", uniform(&mut rng, &[STEM2, STEM1, 3, 3, 3], fan(STEM1 * 27)));
    w.insert("stem2.b", Tensor::zeros(&[STEM2, 1, 1, 1]));
    let flat = STEM2 * (cfg.stem_grid / 2) * (cfg.stem_grid / 2);
    w.insert("proj.w", uniform(&mut rng, &[flat, d], fan(flat)));
    w.insert("proj.b", Tensor::zeros(&[1, d]));
    let dt_bias = (0.5f64.exp() - 1.0).ln();
    for b in 0..cfg.num_gtss_blocks {
        let p = |s: &str| format!("gtss{b}.{s}");
        w.insert(p("in.w"), uniform(&mut rng, &[d, 2 * d], fan(d)));
        w.insert(p("in.b"), Tensor::zeros(&[1, 2 * d]));
        w.insert(p("conv.w"), uniform(&mut rng, &[d, k], fan(k)));
        w.insert(p("conv.b"), Tensor::zeros(&[1, d]));
        w.insert(p("dt.w"), uniform(&mut rng, &[d, d], 0.1 * fan(d)));
        w.insert(p("dt.b"), Tensor::filled(&[1, d], dt_bias));
        w.insert(p("B.w"), uniform(&mut rng, &[d, n], fan(d)));
        w.insert(p("C.w"), uniform(&mut rng, &[d, n], fan(d)));
        let a_log: Vec<f64> = (0..d).flat_map(|_| (1..=n).map(|i| (i as f64).ln())).collect();
        w.insert(p("A_log"), Tensor::new(vec![1, d, n], a_log)?);
        w.insert(p("D"), Tensor::filled(&[1, d], 1.0));
        w.insert(p("out.w"), uniform(&mut rng, &[d, d], fan(d)));
        w.insert(p("out.b"), Tensor::zeros(&[1, d]));
    }
    for s in ["q", "k", "v", "o"] {
        w.insert(format!("attn.{s}.w"), uniform(&mut rng, &[d, d], fan(d)));
    }
    w.insert("attn.o.b", Tensor::zeros(&[1, d]));
    // Near-zero head: the initial hypothesis is small noise.
    w.insert("head.w", uniform(&mut rng, &[d, 1], 1e-3));
    w.insert("head.b", Tensor::zeros(&[1, 1]));
    Ok(w)
}

/// Box-average matrix `[out, n]` pooling contiguous groups.
fn pool_matrix(n: usize, out: usize) -> Arc<Tensor> {
    let f = n / out;
    let mut m = vec![0.0; out * n];
    for o in 0..out {
        for i in o * f..(o + 1) * f {
            m[o * n + i] = 1.0 / f as f64;
        }
    }
    Arc::new(Tensor::new(vec![out, n], m).expect("non-empty pool"))
}

/// Clip frames as a `[T, H * W * 3]` tensor.
pub fn clip_tensor(clip: &VideoClip) -> Tensor {
    Tensor::new(vec![clip.t, clip.frame_len()], clip.frames.iter().map(|v| *v as f64).collect()).expect("non-empty clip")
}

/// Per-pixel, per-channel detrending and variance normalization over time.
pub fn temporal_normalize(g: &mut Graph, x: Var) -> Result<Var> {
    Ok(g.temporal_normalize(x)?)
}

/// Normalized pixels `[T, H*W*3]`, optionally masked, pooled to the stem grid
/// and laid out time-last as `[3, P, P, T]`. Masking after normalization
/// equals masking the clip first for binary masks, since a zeroed pixel
/// normalizes to zero.
pub fn stem_input(g: &mut Graph, normalized: Var, h: usize, w: usize, grid: usize, mask: Option<&[f32]>) -> Result<Var> {
    let t = g.shape(normalized)[0];
    if !h.is_multiple_of(grid) || !w.is_multiple_of(grid) {
        return Err(Error::Config(format!("{h}x{w} frame is not divisible by stem grid {grid}")));
    }
    let mut x = normalized;
    if let Some(m) = mask {
        if m.len() != h * w {
            return Err(Error::LengthMismatch(m.len(), h * w));
        }
        if !m.iter().any(|v| *v > 0.0) {
            return Err(Error::EmptyMask("region"));
        }
        let expanded: Vec<f64> = m.iter().flat_map(|v| [*v as f64; 3]).collect();
        let mv = g.constant(Tensor::new(vec![1, h * w * 3], expanded)?)?;
        x = g.mul(x, mv)?;
    }
    let x = g.reshape(x, &[t, h, w, 3])?;
    let x = g.axis_map(x, 1, pool_matrix(h, grid))?;
    let x = g.axis_map(x, 2, pool_matrix(w, grid))?;
    let x = g.reshape(x, &[t, grid * grid * 3])?;
    let x = g.transpose(x)?;
    let x = g.reshape(x, &[grid * grid, 3, t])?;
    let mut planes = Vec::with_capacity(3);
    for c in 0..3 {
        let p = g.slice(x, 1, c, 1)?;
        planes.push(g.reshape(p, &[1, grid, grid, t])?);
    }
    Ok(g.concat(&planes, 0)?)
}

/// Stem input from channel-planar normalized pixels `[T, 3, H, W]`.
pub fn stem_input_planar(g: &mut Graph, normalized: Var, grid: usize) -> Result<Var> {
    let shape = g.shape(normalized).to_vec();
    let (t, h, w) = (shape[0], shape[2], shape[3]);
    if shape.len() != 4 || shape[1] != 3 || h % grid != 0 || w % grid != 0 {
        return Err(Error::Config(format!("planar pixels {shape:?} do not fit stem grid {grid}")));
    }
    let x = g.axis_map(normalized, 2, pool_matrix(h, grid))?;
    let x = g.axis_map(x, 3, pool_matrix(w, grid))?;
    let x = g.reshape(x, &[t, 3 * grid * grid])?;
    let x = g.transpose(x)?;
    Ok(g.reshape(x, &[3, grid, grid, t])?)
}

/// Differentiable pass from channel-planar pixels `[T, 3, H, W]`.
pub fn forward_planar(g: &mut Graph, p: &Bound, cfg: &ExtractorConfig, pixels: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let n = g.temporal_normalize(pixels)?;
    let stem = stem_input_planar(g, n, cfg.stem_grid)?;
    forward_stem(g, p, cfg, stem, rng)
}

/// Clip frames as a channel-planar `[T, 3, H, W]` tensor.
pub fn clip_tensor_planar(clip: &VideoClip) -> Tensor {
    let n = clip.h * clip.w;
    let mut out = vec![0.0; clip.t * 3 * n];
    for t in 0..clip.t {
        let f = clip.frame(t);
        for p in 0..n {
            for c in 0..3 {
                out[(t * 3 + c) * n + p] = f[p * 3 + c] as f64;
            }
        }
    }
    Tensor::new(vec![clip.t, 3, clip.h, clip.w], out).expect("non-empty clip")
}

fn dropout(g: &mut Graph, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let shape = g.shape(x).to_vec();
            let n: usize = shape.iter().product();
            let keep = 1.0 / (1.0 - rate);
            let mask: Vec<f64> = (0..n).map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep }).collect();
            let m = g.constant(Tensor::new(shape, mask)?)?;
            Ok(g.mul(x, m)?)
        }
        _ => Ok(x),
    }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
    let y = g.matmul(x, w)?;
    Ok(match b {
        Some(b) => g.add(y, b)?,
        None => y,
    })
}

/// Convolution stem, flatten per frame and project to `[T, d]` tokens.
pub fn tokenize(g: &mut Graph, p: &Bound, cfg: &ExtractorConfig, stem: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    let t = *g.shape(stem).last().expect("4-d stem input");
    let grid = cfg.stem_grid;
    let x = g.spatiotemporal_conv(stem, p.get("stem1.w")?)?;
    let x = g.add(x, p.get("stem1.b")?)?;
    let x = g.silu(x)?;
    let pool = pool_matrix(grid, grid / 2);
    let x = g.axis_map(x, 1, pool.clone())?;
    let x = g.axis_map(x, 2, pool)?;
    let x = g.spatiotemporal_conv(x, p.get("stem2.w")?)?;
    let x = g.add(x, p.get("stem2.b")?)?;
    let x = g.silu(x)?;
    let flat = STEM2 * (grid / 2) * (grid / 2);
    let x = g.reshape(x, &[flat, t])?;
    let x = g.transpose(x)?;
    let z = linear(g, x, p.get("proj.w")?, Some(p.get("proj.b")?))?;
    dropout(g, z, cfg.dropout_rate, rng)
}

/// `Z'_t = 2 Z_t - Z_{t-1}` for `t >= 1`, `Z'_0 = Z_0`.
pub fn temporal_difference(g: &mut Graph, z: Var) -> Result<Var> {
    let shape = g.shape(z).to_vec();
    let t = shape[0];
    if t < 2 {
        return Err(Error::TooShort { need: 2, got: t });
    }
    let first = g.slice(z, 0, 0, 1)?;
    let head = g.slice(z, 0, 0, t - 1)?;
    let tail = g.slice(z, 0, 1, t - 1)?;
    let doubled = g.scale(tail, 2.0)?;
    let rest = g.sub(doubled, head)?;
    Ok(g.concat(&[first, rest], 0)?)
}

/// One gated selective state-space block with a residual connection.
pub fn gtss_forward(g: &mut Graph, p: &Bound, prefix: &str, z: Var) -> Result<Var> {
    let key = |s: &str| format!("{prefix}.{s}");
    let shape = g.shape(z).to_vec();
    let (t, d) = (shape[0], shape[1]);
    let n = g.shape(p.get(&key("A_log"))?)[2];
    let proj = linear(g, z, p.get(&key("in.w"))?, Some(p.get(&key("in.b"))?))?;
    let core = g.slice(proj, 1, 0, d)?;
    let gate = g.slice(proj, 1, d, d)?;
    let xc = g.depthwise_temporal_conv(core, p.get(&key("conv.w"))?)?;
    let xc = g.add(xc, p.get(&key("conv.b"))?)?;
    let xc = g.silu(xc)?;
    let dt = linear(g, xc, p.get(&key("dt.w"))?, Some(p.get(&key("dt.b"))?))?;
    let dt = g.softplus(dt)?;
    let b = g.matmul(xc, p.get(&key("B.w"))?)?;
    let c = g.matmul(xc, p.get(&key("C.w"))?)?;
    let a = g.exp(p.get(&key("A_log"))?)?;
    let a = g.neg(a)?;
    let dt3 = g.reshape(dt, &[t, d, 1])?;
    let da = g.mul(dt3, a)?;
    let decay = g.exp(da)?;
    #[cfg(debug_assertions)]
    debug_assert!(g.value(decay).data().iter().all(|v| *v > 0.0 && *v < 1.0));
    let x3 = g.reshape(xc, &[t, d, 1])?;
    let b3 = g.reshape(b, &[t, 1, n])?;
    let dx = g.mul(dt3, x3)?;
    let drive = g.mul(dx, b3)?;
    let h = g.scan(decay, drive)?;
    let c3 = g.reshape(c, &[t, 1, n])?;
    let ch = g.mul(h, c3)?;
    let y = g.sum_axis(ch, 2)?;
    let skip = g.mul(xc, p.get(&key("D"))?)?;
    let y = g.add(y, skip)?;
    let gate = g.silu(gate)?;
    let y = g.mul(y, gate)?;
    let y = linear(g, y, p.get(&key("out.w"))?, Some(p.get(&key("out.b"))?))?;
    Ok(g.add(z, y)?)
}

/// Multi-head scaled dot-product self-attention over time, residual added.
/// Returns the output and the per-head attention weights.
pub fn global_attention(g: &mut Graph, p: &Bound, heads: usize, z: Var) -> Result<(Var, Vec<Var>)> {
    let d = g.shape(z)[1];
    let hd = d / heads;
    let q = g.matmul(z, p.get("attn.q.w")?)?;
    let k = g.matmul(z, p.get("attn.k.w")?)?;
    let v = g.matmul(z, p.get("attn.v.w")?)?;
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let qh = g.slice(q, 1, h * hd, hd)?;
        let kh = g.slice(k, 1, h * hd, hd)?;
        let vh = g.slice(v, 1, h * hd, hd)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, 1.0 / (hd as f64).sqrt())?;
        let att = g.softmax(scores)?;
        weights.push(att);
        outs.push(g.matmul(att, vh)?);
    }
    let cat = g.concat(&outs, 1)?;
    let o = linear(g, cat, p.get("attn.o.w")?, Some(p.get("attn.o.b")?))?;
    Ok((g.add(z, o)?, weights))
}

/// Everything after the stem input: tokens, blocks, attention and head.
/// Returns the raw per-frame output `[T]` before band-passing.
pub fn forward_stem(
    g: &mut Graph,
    p: &Bound,
    cfg: &ExtractorConfig,
    stem: Var,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let z = tokenize(g, p, cfg, stem, rng)?;
    let mut z = temporal_difference(g, z)?;
    for b in 0..cfg.num_gtss_blocks {
        z = gtss_forward(g, p, &format!("gtss{b}"), z)?;
    }
    let (z, _) = global_attention(g, p, cfg.attention_heads, z)?;
    let y = linear(g, z, p.get("head.w")?, Some(p.get("head.b")?))?;
    let t = g.shape(y)[0];
    Ok(g.reshape(y, &[t])?)
}

/// Full differentiable pass from a `[T, H*W*3]` pixel tensor.
pub fn forward_pixels(
    g: &mut Graph,
    p: &Bound,
    cfg: &ExtractorConfig,
    pixels: Var,
    h: usize,
    w: usize,
    mask: Option<&[f32]>,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let n = temporal_normalize(g, pixels)?;
    let stem = stem_input(g, n, h, w, cfg.stem_grid, mask)?;
    forward_stem(g, p, cfg, stem, rng)
}

/// Temporally normalized pixels of one clip, kept for repeated masked pooling.
#[derive(Debug, Clone)]
pub struct NormalizedClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    data: Vec<f64>,
}

impl NormalizedClip {
    pub fn new(clip: &VideoClip) -> Result<Self> {
        let mut g = Graph::new();
        let x = g.constant(clip_tensor(clip))?;
        let n = g.temporal_normalize(x)?;
        Ok(NormalizedClip { t: clip.t, h: clip.h, w: clip.w, data: g.value(n).data().to_vec() })
    }

    /// Constant stem input `[3, P, P, T]`, equal to [`stem_input`] on the
    /// same normalized pixels.
    pub fn stem(&self, grid: usize, mask: Option<&[f32]>) -> Result<Tensor> {
        let (t, h, w) = (self.t, self.h, self.w);
        if h % grid != 0 || w % grid != 0 {
            return Err(Error::Config(format!("{h}x{w} frame is not divisible by stem grid {grid}")));
        }
        if let Some(m) = mask {
            if m.len() != h * w {
                return Err(Error::LengthMismatch(m.len(), h * w));
            }
            if !m.iter().any(|v| *v > 0.0) {
                return Err(Error::EmptyMask("region"));
            }
        }
        let (fy, fx) = (h / grid, w / grid);
        let scale = 1.0 / (fy * fx) as f64;
        let cells = grid * grid;
        let mut out = vec![0.0; 3 * cells * t];
        let mut acc = vec![0.0; 3 * cells];
        for ti in 0..t {
            acc.fill(0.0);
            let row = &self.data[ti * h * w * 3..(ti + 1) * h * w * 3];
            for y in 0..h {
                for x in 0..w {
                    let p = y * w + x;
                    let m = mask.map_or(1.0, |m| m[p] as f64);
                    if m == 0.0 {
                        continue;
                    }
                    let cell = (y / fy) * grid + x / fx;
                    for c in 0..3 {
                        acc[c * cells + cell] += m * row[p * 3 + c];
                    }
                }
            }
            for (i, a) in acc.iter().enumerate() {
                out[i * t + ti] = a * scale;
            }
        }
        Ok(Tensor::new(vec![3, grid, grid, t], out)?)
    }
}

/// Trained extractor bundled with its configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Extractor {
    pub config: ExtractorConfig,
    pub params: Weights,
}

impl Extractor {
    pub fn new(config: ExtractorConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Extractor { config, params })
    }

    /// Raw per-frame output in inference mode (no dropout, no band-pass).
    pub fn raw(&self, clip: &VideoClip, mask: Option<&[f32]>) -> Result<Vec<f64>> {
        let stem = NormalizedClip::new(clip)?.stem(self.config.stem_grid, mask)?;
        self.raw_from_stem(stem)
    }

    /// Raw output for a precomputed stem input.
    pub fn raw_from_stem(&self, stem: Tensor) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let p = Bound::new(&mut g, &self.params, false)?;
        let x = g.constant(stem)?;
        let y = forward_stem(&mut g, &p, &self.config, x, None)?;
        Ok(g.value(y).data().to_vec())
    }

    /// Checkpoint with the architecture stored next to the parameters.
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let c = &self.config;
        let mut w = self.params.clone();
        for (k, v) in [
            ("meta.token_dim", c.token_dim as f64),
            ("meta.num_gtss_blocks", c.num_gtss_blocks as f64),
            ("meta.ssm_state_dim", c.ssm_state_dim as f64),
            ("meta.conv_kernel", c.conv_kernel as f64),
            ("meta.attention_heads", c.attention_heads as f64),
            ("meta.dropout_rate", c.dropout_rate),
            ("meta.stem_grid", c.stem_grid as f64),
        ] {
            w.insert(k, Tensor::scalar(v));
        }
        w.save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let all = Weights::load(path)?;
        let n = |k: &str| -> Result<usize> { Ok(all.get(k)?.item() as usize) };
        let config = ExtractorConfig {
            token_dim: n("meta.token_dim")?,
            num_gtss_blocks: n("meta.num_gtss_blocks")?,
            ssm_state_dim: n("meta.ssm_state_dim")?,
            conv_kernel: n("meta.conv_kernel")?,
            attention_heads: n("meta.attention_heads")?,
            dropout_rate: all.get("meta.dropout_rate")?.item(),
            stem_grid: n("meta.stem_grid")?,
        };
        let fresh = init_params(&config, 0)?;
        let mut params = Weights::new();
        for (name, t) in fresh.iter() {
            let got = all.get(name)?;
            if got.shape() != t.shape() {
                return Err(Error::Config(format!("extractor parameter `{name}` has the wrong shape")));
            }
            params.insert(name, got.clone());
        }
        Ok(Extractor { config, params })
    }

    /// Inference waveform: raw output band-passed over the heart-rate band.
    pub fn extract(&self, clip: &VideoClip) -> Result<Waveform> {
        bandpass(&Waveform::new(self.raw(clip, None)?, clip.fps)?)
    }

    /// Extraction with pixels outside `mask` zeroed.
    pub fn masked_extract(&self, clip: &VideoClip, mask: &[f32]) -> Result<Waveform> {
        bandpass(&Waveform::new(self.raw(clip, Some(mask))?, clip.fps)?)
    }
}
