//! Synthetic skin-patch clips with a known embedded pulse.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::clip::VideoClip;
use crate::color::pulse_direction;
use crate::signal::Waveform;
use crate::{Error, Result};

/// Axis-aligned pixel rectangle, half-open.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.y && y < self.y + self.h && x >= self.x && x < self.x + self.w
    }

    pub fn intersects(&self, o: &Rect) -> bool {
        self.y < o.y + o.h && o.y < self.y + self.h && self.x < o.x + o.w && o.x < self.x + self.w
    }

    pub fn area(&self) -> usize {
        self.h * self.w
    }

    pub fn mask(&self, h: usize, w: usize) -> Vec<f32> {
        let mut m = vec![0.0; h * w];
        for y in self.y..(self.y + self.h).min(h) {
            for x in self.x..(self.x + self.w).min(w) {
                m[y * w + x] = 1.0;
            }
        }
        m
    }
}

/// Named sub-regions standing in for facial landmarks.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionLayout {
    pub forehead: Rect,
    pub cheek_left: Rect,
    pub cheek_right: Rect,
    pub background: Rect,
    /// Eye and mouth analogs: skin without pulse, excluded from edits.
    pub occluders: Vec<Rect>,
    /// Face ellipse `(cy, cx, ry, rx)` in pixels.
    pub face: (f64, f64, f64, f64),
}

impl RegionLayout {
    /// Proportional layout for an `h x w` frame.
    pub fn for_frame(h: usize, w: usize) -> Self {
        let (hf, wf) = (h as f64, w as f64);
        let r = |y0: f64, y1: f64, x0: f64, x1: f64| {
            let (ya, yb) = ((y0 * hf).round() as usize, (y1 * hf).round() as usize);
            let (xa, xb) = ((x0 * wf).round() as usize, (x1 * wf).round() as usize);
            Rect {
                y: ya,
                x: xa,
                h: (yb - ya).max(1),
                w: (xb - xa).max(1),
            }
        };
        RegionLayout {
            forehead: r(0.14, 0.28, 0.34, 0.66),
            cheek_left: r(0.47, 0.66, 0.22, 0.38),
            cheek_right: r(0.47, 0.66, 0.62, 0.78),
            background: r(0.0, 1.0, 0.0, 0.125),
            occluders: vec![r(0.31, 0.42, 0.25, 0.75), r(0.70, 0.80, 0.38, 0.62)],
            face: (hf / 2.0, wf / 2.0, 0.44 * hf, 0.34 * wf),
        }
    }

    pub fn in_face(&self, y: usize, x: usize) -> bool {
        let (cy, cx, ry, rx) = self.face;
        let dy = (y as f64 + 0.5 - cy) / ry;
        let dx = (x as f64 + 0.5 - cx) / rx;
        dy * dy + dx * dx <= 1.0
    }

    pub fn skin_mask(&self, h: usize, w: usize) -> Vec<f32> {
        (0..h * w)
            .map(|p| if self.in_face(p / w, p % w) { 1.0 } else { 0.0 })
            .collect()
    }

    pub fn pulse_regions(&self) -> [Rect; 3] {
        [self.forehead, self.cheek_left, self.cheek_right]
    }

    /// Forehead plus both cheeks.
    pub fn pulse_region_mask(&self, h: usize, w: usize) -> Vec<f32> {
        let mut m = vec![0.0; h * w];
        for r in self.pulse_regions() {
            for (a, b) in m.iter_mut().zip(r.mask(h, w)) {
                *a = f32::max(*a, b);
            }
        }
        m
    }

    /// Anatomical prior: 1 on forehead and cheeks, 0 on occluders and off
    /// skin, 0.5 on remaining skin.
    pub fn prior(&self, h: usize, w: usize) -> Vec<f64> {
        (0..h * w)
            .map(|p| {
                let (y, x) = (p / w, p % w);
                if !self.in_face(y, x) || self.occluders.iter().any(|r| r.contains(y, x)) {
                    0.0
                } else if self.pulse_regions().iter().any(|r| r.contains(y, x)) {
                    1.0
                } else {
                    0.5
                }
            })
            .collect()
    }

    pub fn validate(&self, h: usize, w: usize) -> Result<()> {
        let named = [self.forehead, self.cheek_left, self.cheek_right, self.background];
        for (i, a) in named.iter().enumerate() {
            if a.y + a.h > h || a.x + a.w > w || a.area() == 0 {
                return Err(Error::Config(format!("region {a:?} outside {h}x{w} frame")));
            }
            for b in &named[i + 1..] {
                if a.intersects(b) {
                    return Err(Error::Config(format!("regions {a:?} and {b:?} overlap")));
                }
            }
        }
        for r in self.pulse_regions() {
            for y in r.y..r.y + r.h {
                for x in r.x..r.x + r.w {
                    if !self.in_face(y, x) {
                        return Err(Error::Config(format!("region {r:?} leaves the skin mask")));
                    }
                }
            }
        }
        let b = self.background;
        for y in b.y..b.y + b.h {
            for x in b.x..b.x + b.w {
                if self.in_face(y, x) {
                    return Err(Error::Config("background region overlaps skin".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub hr_bpm: f64,
    /// Peak chrominance modulation as a fraction of the dynamic range.
    pub pulse_amplitude: f64,
    pub base_texture_seed: u64,
    /// Seeds cycle jitter, pulse phase and sensor noise.
    pub seed: u64,
    pub sensor_noise_sigma: f64,
    pub texture_contrast: f64,
    /// Relative amplitude of the second harmonic.
    pub harmonic: f64,
    /// Maximum relative cycle-length jitter.
    pub jitter: f64,
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f64,
    pub layout: RegionLayout,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            hr_bpm: 72.0,
            pulse_amplitude: 0.004,
            base_texture_seed: 0,
            seed: 0,
            sensor_noise_sigma: 0.005,
            texture_contrast: 0.15,
            harmonic: 0.3,
            jitter: 0.02,
            t: 300,
            h: 64,
            w: 64,
            fps: 30.0,
            layout: RegionLayout::for_frame(64, 64),
        }
    }
}

impl SynthConfig {
    /// Default configuration resized to `h x w` with a matching layout.
    pub fn sized(t: usize, h: usize, w: usize) -> Self {
        SynthConfig {
            t,
            h,
            w,
            layout: RegionLayout::for_frame(h, w),
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(40.0..=240.0).contains(&self.hr_bpm) {
            return Err(Error::Config(format!("hr_bpm {} outside [40, 240]", self.hr_bpm)));
        }
        if self.t < 64 {
            return Err(Error::Config(format!("T = {} is below 64 frames", self.t)));
        }
        if !self.h.is_multiple_of(8) || !self.w.is_multiple_of(8) {
            return Err(Error::Config(format!("frame {}x{} is not a multiple of 8", self.h, self.w)));
        }
        if !(self.fps > 0.0) || self.sensor_noise_sigma < 0.0 || !(0.0..0.5).contains(&self.jitter) {
            return Err(Error::Config("fps, noise sigma or jitter out of range".into()));
        }
        self.layout.validate(self.h, self.w)
    }
}

/// Ground-truth pulse: fundamental plus second harmonic with per-cycle
/// length jitter, zero mean and unit RMS.
pub fn synth_pulse(cfg: &SynthConfig) -> Result<Waveform> {
    if !(40.0..=240.0).contains(&cfg.hr_bpm) {
        return Err(Error::Config(format!("hr_bpm {} outside [40, 240]", cfg.hr_bpm)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0001);
    let f0 = cfg.hr_bpm / 60.0;
    let mut phase = rng.random_range(0.0..2.0 * PI);
    let draw = |rng: &mut ChaCha8Rng| {
        if cfg.jitter > 0.0 {
            rng.random_range(-cfg.jitter..=cfg.jitter)
        } else {
            0.0
        }
    };
    let mut stretch = draw(&mut rng);
    let mut cycle = (phase / (2.0 * PI)).floor();
    let raw: Vec<f64> = (0..cfg.t)
        .map(|_| {
            let v = phase.sin() + cfg.harmonic * (2.0 * phase + 0.3).sin();
            phase += 2.0 * PI * f0 / cfg.fps / (1.0 + stretch);
            let c = (phase / (2.0 * PI)).floor();
            if c != cycle {
                cycle = c;
                stretch = draw(&mut rng);
            }
            v
        })
        .collect();
    let w = Waveform::new(raw, cfg.fps)?;
    w.standardized().ok_or(Error::ZeroVariance)
}

/// Value noise in roughly `[-0.75, 0.75]`: two smoothly interpolated lattice
/// octaves.
fn value_noise(h: usize, w: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; h * w];
    for (cell, weight) in [(8usize, 1.0), (4usize, 0.5)] {
        let (gh, gw) = (h / cell + 2, w / cell + 2);
        let lattice: Vec<f64> = (0..gh * gw).map(|_| rng.random_range(-0.5..0.5)).collect();
        let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
        for y in 0..h {
            let fy = y as f64 / cell as f64;
            let (iy, ty) = (fy.floor() as usize, smooth(fy.fract()));
            for x in 0..w {
                let fx = x as f64 / cell as f64;
                let (ix, tx) = (fx.floor() as usize, smooth(fx.fract()));
                let l = |a: usize, b: usize| lattice[a * gw + b];
                let top = l(iy, ix) * (1.0 - tx) + l(iy, ix + 1) * tx;
                let bot = l(iy + 1, ix) * (1.0 - tx) + l(iy + 1, ix + 1) * tx;
                out[y * w + x] += weight * (top * (1.0 - ty) + bot * ty);
            }
        }
    }
    out
}

const SKIN: [f64; 3] = [0.78, 0.56, 0.46];
const BACKGROUND: [f64; 3] = [0.30, 0.34, 0.40];
const OCCLUDER: [f64; 3] = [0.36, 0.26, 0.25];

/// Static textured base image `H x W x 3`.
pub fn base_image(cfg: &SynthConfig) -> Vec<f64> {
    let (h, w) = (cfg.h, cfg.w);
    let tex = value_noise(h, w, cfg.base_texture_seed);
    let mut img = vec![0.0; h * w * 3];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let color = if !cfg.layout.in_face(y, x) {
                BACKGROUND
            } else if cfg.layout.occluders.iter().any(|r| r.contains(y, x)) {
                OCCLUDER
            } else {
                SKIN
            };
            // Lateral shading gives motion a first-order intensity artifact.
            let shade = 0.8 + 0.4 * x as f64 / (w - 1).max(1) as f64;
            for c in 0..3 {
                img[p * 3 + c] = (color[c] * shade + cfg.texture_contrast * tex[p]).clamp(0.0, 1.0);
            }
        }
    }
    img
}

/// Spatial pulse weight: 1 on forehead and cheeks, 0.5 on other visible
/// skin, 0 on occluders and background.
pub fn pulse_weight(layout: &RegionLayout, h: usize, w: usize) -> Vec<f64> {
    layout.prior(h, w)
}

pub fn render_clip(pulse: &Waveform, cfg: &SynthConfig) -> Result<VideoClip> {
    cfg.validate()?;
    if pulse.len() != cfg.t {
        return Err(Error::LengthMismatch(pulse.len(), cfg.t));
    }
    let (h, w) = (cfg.h, cfg.w);
    let base = base_image(cfg);
    let weight = pulse_weight(&cfg.layout, h, w);
    let d = pulse_direction();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0002);
    let noise = Normal::new(0.0, cfg.sensor_noise_sigma.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let mut frames = Vec::with_capacity(cfg.t * h * w * 3);
    for t in 0..cfg.t {
        let s = pulse.samples[t] * cfg.pulse_amplitude;
        for p in 0..h * w {
            for c in 0..3 {
                let mut v = base[p * 3 + c] - s * weight[p] * d[c];
                if cfg.sensor_noise_sigma > 0.0 {
                    v += noise.sample(&mut rng);
                }
                frames.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    VideoClip::new(cfg.t, h, w, cfg.fps, frames, Some(cfg.layout.skin_mask(h, w)))
}

/// Pulse plus rendered clip for one configuration.
pub fn synth_clip(cfg: &SynthConfig) -> Result<(VideoClip, Waveform)> {
    let pulse = synth_pulse(cfg)?;
    Ok((render_clip(&pulse, cfg)?, pulse))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NuisanceKind {
    IlluminationFlicker,
    RhythmicMotion,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NuisanceSpec {
    pub kind: NuisanceKind,
    pub freq_bpm: f64,
    /// Relative intensity for flicker, pixels for motion.
    pub amplitude: f64,
    pub phase: f64,
}

impl NuisanceSpec {
    pub fn flicker(freq_bpm: f64, amplitude: f64) -> Self {
        NuisanceSpec {
            kind: NuisanceKind::IlluminationFlicker,
            freq_bpm,
            amplitude,
            phase: 0.0,
        }
    }

    pub fn motion(freq_bpm: f64, amplitude: f64) -> Self {
        NuisanceSpec {
            kind: NuisanceKind::RhythmicMotion,
            freq_bpm,
            amplitude,
            phase: 0.0,
        }
    }
}

pub fn add_nuisance(clip: &VideoClip, spec: &NuisanceSpec) -> VideoClip {
    let mut out = clip.clone();
    let omega = 2.0 * PI * spec.freq_bpm / 60.0;
    for t in 0..clip.t {
        let wave = (omega * t as f64 / clip.fps + spec.phase).sin();
        match spec.kind {
            NuisanceKind::IlluminationFlicker => {
                let gain = 1.0 + spec.amplitude * wave;
                for v in out.frame_mut(t) {
                    *v = ((*v as f64) * gain).clamp(0.0, 1.0) as f32;
                }
            }
            NuisanceKind::RhythmicMotion => {
                let shift = spec.amplitude * wave;
                let src = clip.frame(t);
                let dst = out.frame_mut(t);
                translate_row_major(src, dst, clip.h, clip.w, shift);
            }
        }
    }
    out
}

/// Horizontal translation by `shift` pixels with linear interpolation and
/// edge clamping: `dst(x) = src(x - shift)`.
fn translate_row_major(src: &[f32], dst: &mut [f32], h: usize, w: usize, shift: f64) {
    let last = (w - 1) as f64;
    for x in 0..w {
        let pos = (x as f64 - shift).clamp(0.0, last);
        let x0 = pos.floor() as usize;
        let x1 = (x0 + 1).min(w - 1);
        let frac = pos - x0 as f64;
        for y in 0..h {
            for c in 0..3 {
                let a = src[(y * w + x0) * 3 + c] as f64;
                let b = src[(y * w + x1) * 3 + c] as f64;
                dst[(y * w + x) * 3 + c] = (a * (1.0 - frac) + b * frac).clamp(0.0, 1.0) as f32;
            }
        }
    }
}
