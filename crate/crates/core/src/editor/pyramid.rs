//! Laplacian pyramid built from a 5-tap binomial kernel with mirrored edges.
//!
//! Reduce and expand are separable linear maps, stored per axis as sparse
//! row lists so the same operators can be handed to the differentiation
//! graph as dense matrices.

use std::sync::Arc;

use rppg_autodiff::Tensor;

use crate::{Error, Result};

const BINOMIAL: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Pyramid depth used for 64x64 frames.
pub const DEFAULT_LEVELS: usize = 4;

fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

/// Sparse 1-D linear map from `in_len` to `rows.len()` samples.
#[derive(Debug, Clone)]
pub struct Op1d {
    rows: Vec<Vec<(usize, f64)>>,
    in_len: usize,
}

impl Op1d {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>, in_len: usize) -> Self {
        let rows = rows
            .into_iter()
            .map(|r| {
                let mut merged: Vec<(usize, f64)> = Vec::new();
                let mut r = r;
                r.sort_by_key(|e| e.0);
                for (i, v) in r {
                    match merged.last_mut() {
                        Some(last) if last.0 == i => last.1 += v,
                        _ => merged.push((i, v)),
                    }
                }
                merged
            })
            .collect();
        Op1d { rows, in_len }
    }

    /// Blur then keep even samples: `n -> n / 2`.
    pub fn reduce(n: usize) -> Self {
        let rows = (0..n / 2)
            .map(|i| {
                (0..5)
                    .map(|k| (mirror(2 * i as isize + k as isize - 2, n), BINOMIAL[k]))
                    .collect()
            })
            .collect();
        Op1d::from_rows(rows, n)
    }

    /// Zero-insert upsample then blur with twice the kernel: `m -> 2m`.
    pub fn expand(m: usize) -> Self {
        let n = 2 * m;
        let rows = (0..n)
            .map(|j| {
                (0..5)
                    .filter_map(|k| {
                        let src = mirror(j as isize + k as isize - 2, n);
                        src.is_multiple_of(2).then(|| (src / 2, 2.0 * BINOMIAL[k]))
                    })
                    .collect()
            })
            .collect();
        Op1d::from_rows(rows, m)
    }

    pub fn out_len(&self) -> usize {
        self.rows.len()
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    /// `self` after `first`.
    pub fn compose(&self, first: &Op1d) -> Op1d {
        assert_eq!(self.in_len, first.out_len());
        let rows = self
            .rows
            .iter()
            .map(|r| {
                r.iter()
                    .flat_map(|&(mid, a)| first.rows[mid].iter().map(move |&(i, b)| (i, a * b)))
                    .collect()
            })
            .collect();
        Op1d::from_rows(rows, first.in_len)
    }

    pub fn identity(n: usize) -> Op1d {
        Op1d::from_rows((0..n).map(|i| vec![(i, 1.0)]).collect(), n)
    }

    pub fn to_dense(&self) -> Tensor {
        let mut d = vec![0.0; self.out_len() * self.in_len];
        for (o, r) in self.rows.iter().enumerate() {
            for &(i, v) in r {
                d[o * self.in_len + i] = v;
            }
        }
        Tensor::new(vec![self.out_len(), self.in_len], d).expect("non-empty operator")
    }

    /// Applies along both axes of a single `h x w` plane.
    fn apply2(&self, along_w: &Op1d, src: &[f64], h: usize, w: usize, dst: &mut [f64]) {
        debug_assert_eq!(self.in_len, h);
        debug_assert_eq!(along_w.in_len, w);
        let ow = along_w.out_len();
        let mut tmp = vec![0.0; h * ow];
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for (x, r) in along_w.rows.iter().enumerate() {
                tmp[y * ow + x] = r.iter().map(|&(i, v)| v * row[i]).sum();
            }
        }
        for (y, r) in self.rows.iter().enumerate() {
            let out = &mut dst[y * ow..(y + 1) * ow];
            out.fill(0.0);
            for &(i, v) in r {
                for (o, t) in out.iter_mut().zip(&tmp[i * ow..(i + 1) * ow]) {
                    *o += v * t;
                }
            }
        }
    }
}

/// Planar three-channel image, `data[c][y][x]` flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn zeros(h: usize, w: usize) -> Self {
        Image { h, w, data: vec![0.0; 3 * h * w] }
    }

    /// From an interleaved `H x W x 3` frame.
    pub fn from_interleaved(frame: &[f32], h: usize, w: usize) -> Self {
        let mut data = vec![0.0; 3 * h * w];
        for p in 0..h * w {
            for c in 0..3 {
                data[c * h * w + p] = frame[p * 3 + c] as f64;
            }
        }
        Image { h, w, data }
    }

    pub fn to_interleaved(&self) -> Vec<f64> {
        let n = self.h * self.w;
        let mut out = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                out[p * 3 + c] = self.data[c * n + p];
            }
        }
        out
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.h * self.w;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f64; 3] {
        let n = self.h * self.w;
        let p = y * self.w + x;
        [self.data[p], self.data[n + p], self.data[2 * n + p]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, v: [f64; 3]) {
        let n = self.h * self.w;
        let p = y * self.w + x;
        self.data[p] = v[0];
        self.data[n + p] = v[1];
        self.data[2 * n + p] = v[2];
    }

    fn map_planes(&self, along_h: &Op1d, along_w: &Op1d) -> Image {
        let (oh, ow) = (along_h.out_len(), along_w.out_len());
        let mut out = Image::zeros(oh, ow);
        let n = self.h * self.w;
        for c in 0..3 {
            along_h.apply2(
                along_w,
                &self.data[c * n..(c + 1) * n],
                self.h,
                self.w,
                &mut out.data[c * oh * ow..(c + 1) * oh * ow],
            );
        }
        out
    }
}

/// Detail layers from fine to coarse plus the coarsest Gaussian level.
#[derive(Debug, Clone, PartialEq)]
pub struct PyramidDecomposition {
    pub high: Vec<Image>,
    pub low: Image,
}

/// Precomputed reduce/expand operators for one frame geometry.
#[derive(Debug, Clone)]
pub struct Pyramid {
    pub h: usize,
    pub w: usize,
    pub levels: usize,
    reduce: Vec<(Op1d, Op1d)>,
    expand: Vec<(Op1d, Op1d)>,
}

impl Pyramid {
    pub fn new(h: usize, w: usize, levels: usize) -> Result<Self> {
        if levels < 1 {
            return Err(Error::Config("pyramid needs at least one level".into()));
        }
        let f = 1usize << (levels - 1);
        if !h.is_multiple_of(f) || !w.is_multiple_of(f) {
            return Err(Error::Config(format!(
                "{h}x{w} frame is not divisible by {f} for a {levels}-level pyramid"
            )));
        }
        let (mut reduce, mut expand) = (Vec::new(), Vec::new());
        let (mut ch, mut cw) = (h, w);
        for _ in 1..levels {
            reduce.push((Op1d::reduce(ch), Op1d::reduce(cw)));
            expand.push((Op1d::expand(ch / 2), Op1d::expand(cw / 2)));
            ch /= 2;
            cw /= 2;
        }
        Ok(Pyramid { h, w, levels, reduce, expand })
    }

    pub fn low_dims(&self) -> (usize, usize) {
        let f = 1usize << (self.levels - 1);
        (self.h / f, self.w / f)
    }

    pub fn decompose(&self, frame: &Image) -> Result<PyramidDecomposition> {
        if frame.h != self.h || frame.w != self.w {
            return Err(Error::Config(format!(
                "frame {}x{} does not match pyramid {}x{}",
                frame.h, frame.w, self.h, self.w
            )));
        }
        let mut high = Vec::with_capacity(self.levels - 1);
        let mut g = frame.clone();
        for ((rh, rw), (eh, ew)) in self.reduce.iter().zip(&self.expand) {
            let next = g.map_planes(rh, rw);
            let up = next.map_planes(eh, ew);
            for (a, b) in g.data.iter_mut().zip(&up.data) {
                *a -= b;
            }
            high.push(g);
            g = next;
        }
        Ok(PyramidDecomposition { high, low: g })
    }

    pub fn reconstruct(&self, pd: &PyramidDecomposition) -> Image {
        let mut g = pd.low.clone();
        for (h, (eh, ew)) in pd.high.iter().zip(&self.expand).rev() {
            let mut up = g.map_planes(eh, ew);
            for (a, b) in up.data.iter_mut().zip(&h.data) {
                *a += b;
            }
            g = up;
        }
        g
    }

    /// Composite expand from low-base resolution to full resolution, per axis.
    pub fn full_expand(&self) -> (Op1d, Op1d) {
        let (lh, lw) = self.low_dims();
        let (mut oh, mut ow) = (Op1d::identity(lh), Op1d::identity(lw));
        for (eh, ew) in self.expand.iter().rev() {
            oh = eh.compose(&oh);
            ow = ew.compose(&ow);
        }
        (oh, ow)
    }

    /// Dense `[H, h_low]` and `[W, w_low]` forms of [`Pyramid::full_expand`].
    pub fn full_expand_dense(&self) -> (Arc<Tensor>, Arc<Tensor>) {
        let (oh, ow) = self.full_expand();
        (Arc::new(oh.to_dense()), Arc::new(ow.to_dense()))
    }

    /// Low-base image expanded to full resolution.
    pub fn expand_low(&self, low: &Image) -> Image {
        let (oh, ow) = self.full_expand();
        low.map_planes(&oh, &ow)
    }

    /// Composite reduce from full resolution to the low base.
    pub fn reduce_full(&self, frame: &Image) -> Image {
        let mut g = frame.clone();
        for (rh, rw) in &self.reduce {
            g = g.map_planes(rh, rw);
        }
        g
    }
}

pub fn laplacian_decompose(frame: &Image, levels: usize) -> Result<PyramidDecomposition> {
    Pyramid::new(frame.h, frame.w, levels)?.decompose(frame)
}

pub fn laplacian_reconstruct(pd: &PyramidDecomposition) -> Result<Image> {
    let levels = pd.high.len() + 1;
    let (h, w) = pd.high.first().map_or((pd.low.h, pd.low.w), |f| (f.h, f.w));
    Ok(Pyramid::new(h, w, levels)?.reconstruct(pd))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduce_and_expand_preserve_constants() {
        for n in [8, 16, 64] {
            let r = Op1d::reduce(n).to_dense();
            let e = Op1d::expand(n / 2).to_dense();
            for row in r.data().chunks(n) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
            for row in e.data().chunks(n / 2) {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn mirror_reflects_without_repeating_edge() {
        assert_eq!(mirror(-1, 8), 1);
        assert_eq!(mirror(-2, 8), 2);
        assert_eq!(mirror(8, 8), 6);
        assert_eq!(mirror(9, 8), 5);
    }
}
