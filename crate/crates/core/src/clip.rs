//! Video clips and the `RPCL` binary container.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"RPCL";
const VERSION: u32 = 1;

/// `T x H x W x 3` frames in `[0, 1]`, row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub fps: f64,
    pub frames: Vec<f32>,
    pub mask: Option<Vec<f32>>,
}

impl VideoClip {
    pub fn new(t: usize, h: usize, w: usize, fps: f64, frames: Vec<f32>, mask: Option<Vec<f32>>) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::OutOfRange(format!("clip dimensions {t}x{h}x{w}")));
        }
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::OutOfRange(format!("fps {fps}")));
        }
        if frames.len() != t * h * w * 3 {
            return Err(Error::LengthMismatch(frames.len(), t * h * w * 3));
        }
        if let Some(m) = &mask {
            if m.len() != h * w {
                return Err(Error::LengthMismatch(m.len(), h * w));
            }
        }
        Ok(VideoClip { t, h, w, fps, frames, mask })
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w * 3
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.frame_len();
        &self.frames[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.frames[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn at(&self, t: usize, y: usize, x: usize, c: usize) -> f32 {
        self.frames[((t * self.h + y) * self.w + x) * 3 + c]
    }

    /// The skin mask, or an all-ones mask when none is attached.
    pub fn mask_or_full(&self) -> Vec<f32> {
        self.mask.clone().unwrap_or_else(|| vec![1.0; self.h * self.w])
    }

    /// Same geometry and mask, new pixel data.
    pub fn with_frames(&self, frames: Vec<f32>) -> VideoClip {
        debug_assert_eq!(frames.len(), self.frames.len());
        VideoClip {
            frames,
            mask: self.mask.clone(),
            ..*self
        }
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.frames {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Per-frame mask-weighted mean colour.
    pub fn region_means(&self, mask: &[f32]) -> Result<Vec<[f64; 3]>> {
        if mask.len() != self.h * self.w {
            return Err(Error::LengthMismatch(mask.len(), self.h * self.w));
        }
        let total: f64 = mask.iter().map(|&m| m as f64).sum();
        if total <= 0.0 {
            return Err(Error::EmptyMask("region"));
        }
        Ok((0..self.t)
            .map(|t| {
                let f = self.frame(t);
                let mut acc = [0.0; 3];
                for (p, &m) in mask.iter().enumerate() {
                    if m != 0.0 {
                        for c in 0..3 {
                            acc[c] += m as f64 * f[p * 3 + c] as f64;
                        }
                    }
                }
                acc.map(|v| v / total)
            })
            .collect())
    }

    /// Pixels outside the mask are set to zero.
    pub fn masked(&self, mask: &[f32]) -> Result<VideoClip> {
        if mask.len() != self.h * self.w {
            return Err(Error::LengthMismatch(mask.len(), self.h * self.w));
        }
        if !mask.iter().any(|&m| m > 0.0) {
            return Err(Error::EmptyMask("region"));
        }
        let mut out = self.clone();
        for t in 0..self.t {
            let f = out.frame_mut(t);
            for (p, &m) in mask.iter().enumerate() {
                for c in 0..3 {
                    f[p * 3 + c] *= m;
                }
            }
        }
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        for v in [VERSION, self.t as u32, self.h as u32, self.w as u32] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&(self.fps as f32).to_le_bytes())?;
        w.write_all(&[self.mask.is_some() as u8])?;
        for v in &self.frames {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(m) = &self.mask {
            for v in m {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<VideoClip> {
        let mut magic = [0u8; 4];
        read_exact_or(&mut r, &mut magic, Error::NotAClip)?;
        if &magic != MAGIC {
            return Err(Error::NotAClip);
        }
        let mut header = [0u8; 21];
        read_exact_or(&mut r, &mut header, Error::MalformedHeader("header shorter than 25 bytes".into()))?;
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let version = u32_at(0);
        if version != VERSION {
            return Err(Error::MalformedHeader(format!("unsupported version {version}")));
        }
        let (t, h, w) = (u32_at(4) as usize, u32_at(8) as usize, u32_at(12) as usize);
        let fps = f32::from_le_bytes(header[16..20].try_into().unwrap());
        let has_mask = match header[20] {
            0 => false,
            1 => true,
            b => return Err(Error::MalformedHeader(format!("mask flag {b}"))),
        };
        if t == 0 || h == 0 || w == 0 || !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::MalformedHeader(format!("dimensions {t}x{h}x{w} at {fps} fps")));
        }
        let count = t
            .checked_mul(h)
            .and_then(|v| v.checked_mul(w))
            .and_then(|v| v.checked_mul(3))
            .filter(|v| *v <= 1 << 32)
            .ok_or_else(|| Error::MalformedHeader(format!("implausible size {t}x{h}x{w}")))?;
        let frames = read_f32s(&mut r, count)?;
        let mask = if has_mask { Some(read_f32s(&mut r, h * w)?) } else { None };
        VideoClip::new(t, h, w, fps as f64, frames, mask)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<VideoClip> {
        VideoClip::read_from(BufReader::new(File::open(path)?))
    }
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], short: Error) -> Result<()> {
    match r.read_exact(buf) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(short),
        Err(e) => Err(e.into()),
    }
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact_or(r, &mut bytes, Error::TruncatedPayload)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}
