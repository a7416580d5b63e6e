//! Raw loops behind the graph operations. All buffers are row-major.

use crate::graph::NORMALIZE_EPS;
use crate::Tensor;

pub(crate) fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `ga += g * b^T`
pub(crate) fn matmul_grad_a(g: &[f64], b: &[f64], ga: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let br = &b[p * n..(p + 1) * n];
            ga[i * k + p] += gr.iter().zip(br).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `gb += a^T * g`
pub(crate) fn matmul_grad_b(a: &[f64], g: &[f64], gb: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let gr = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(gr) {
                *o += av * gv;
            }
        }
    }
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// `dst[t] = sum_j k[j] * src[t - j + K/2]`, zero outside `src`.
pub(crate) fn conv_same(src: &[f64], k: &[f64], dst: &mut [f64]) {
    let n = src.len() as isize;
    let h = (k.len() / 2) as isize;
    for (t, d) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &kv) in k.iter().enumerate() {
            let s = t as isize - j as isize + h;
            if s >= 0 && s < n {
                acc += kv * src[s as usize];
            }
        }
        *d = acc;
    }
}

/// Adjoint of [`conv_same`]: `dst[s] += sum_j k[j] * g[s + j - K/2]`.
pub(crate) fn conv_same_adjoint(g: &[f64], k: &[f64], dst: &mut [f64]) {
    let n = g.len() as isize;
    let h = (k.len() / 2) as isize;
    for (s, d) in dst.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &kv) in k.iter().enumerate() {
            let t = s as isize + j as isize - h;
            if t >= 0 && t < n {
                acc += kv * g[t as usize];
            }
        }
        *d += acc;
    }
}

pub(crate) fn axis_map(x: &[f64], shape: &[usize], axis: usize, m: &Tensor) -> (Vec<f64>, Vec<usize>) {
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let (n_out, n_in) = (m.shape()[0], m.shape()[1]);
    let md = m.data();
    let mut out = vec![0.0; outer * n_out * inner];
    for o in 0..outer {
        for i in 0..n_out {
            let dst = &mut out[(o * n_out + i) * inner..(o * n_out + i + 1) * inner];
            for j in 0..n_in {
                let w = md[i * n_in + j];
                if w == 0.0 {
                    continue;
                }
                let src = &x[(o * n_in + j) * inner..(o * n_in + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
    let mut out_shape = shape.to_vec();
    out_shape[axis] = n_out;
    (out, out_shape)
}

pub(crate) fn axis_map_adjoint(g: &[f64], in_shape: &[usize], axis: usize, m: &Tensor, gx: &mut [f64]) {
    let outer: usize = in_shape[..axis].iter().product();
    let inner: usize = in_shape[axis + 1..].iter().product();
    let (n_out, n_in) = (m.shape()[0], m.shape()[1]);
    let md = m.data();
    for o in 0..outer {
        for i in 0..n_out {
            let src = &g[(o * n_out + i) * inner..(o * n_out + i + 1) * inner];
            for j in 0..n_in {
                let w = md[i * n_in + j];
                if w == 0.0 {
                    continue;
                }
                let dst = &mut gx[(o * n_in + j) * inner..(o * n_in + j + 1) * inner];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}

pub(crate) fn depthwise_forward(x: &[f64], k: &[f64], t: usize, c: usize, kl: usize) -> Vec<f64> {
    let h = (kl / 2) as isize;
    let mut out = vec![0.0; t * c];
    for ti in 0..t {
        for j in 0..kl {
            let s = ti as isize + j as isize - h;
            if s < 0 || s >= t as isize {
                continue;
            }
            let s = s as usize;
            for ch in 0..c {
                out[ti * c + ch] += k[ch * kl + j] * x[s * c + ch];
            }
        }
    }
    out
}

pub(crate) fn depthwise_grad_x(g: &[f64], k: &[f64], gx: &mut [f64], t: usize, c: usize, kl: usize) {
    let h = (kl / 2) as isize;
    for ti in 0..t {
        for j in 0..kl {
            let s = ti as isize + j as isize - h;
            if s < 0 || s >= t as isize {
                continue;
            }
            let s = s as usize;
            for ch in 0..c {
                gx[s * c + ch] += k[ch * kl + j] * g[ti * c + ch];
            }
        }
    }
}

pub(crate) fn depthwise_grad_k(g: &[f64], x: &[f64], gk: &mut [f64], t: usize, c: usize, kl: usize) {
    let h = (kl / 2) as isize;
    for ti in 0..t {
        for j in 0..kl {
            let s = ti as isize + j as isize - h;
            if s < 0 || s >= t as isize {
                continue;
            }
            let s = s as usize;
            for ch in 0..c {
                gk[ch * kl + j] += g[ti * c + ch] * x[s * c + ch];
            }
        }
    }
}

/// Extents of a time-last spatio-temporal convolution.
pub(crate) struct StGeometry {
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    t: usize,
    kh: usize,
    kw: usize,
    kt: usize,
}

impl StGeometry {
    pub(crate) fn new(sx: &[usize], sk: &[usize]) -> Self {
        StGeometry {
            ci: sx[0],
            h: sx[1],
            w: sx[2],
            t: sx[3],
            co: sk[0],
            kh: sk[2],
            kw: sk[3],
            kt: sk[4],
        }
    }

    fn kidx(&self, o: usize, i: usize, a: usize, b: usize, c: usize) -> usize {
        (((o * self.ci + i) * self.kh + a) * self.kw + b) * self.kt + c
    }

    fn row(&self, ch: usize, y: usize, x: usize) -> usize {
        ((ch * self.h + y) * self.w + x) * self.t
    }

    /// Calls `f(out_row, in_row, kernel_index, time_shift)` for every valid
    /// pairing of an output row with a shifted input row.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, isize)) {
        let (ph, pw, pt) = (self.kh / 2, self.kw / 2, self.kt / 2);
        for o in 0..self.co {
            for i in 0..self.ci {
                for a in 0..self.kh {
                    for b in 0..self.kw {
                        for y in 0..self.h {
                            let sy = y as isize + a as isize - ph as isize;
                            if sy < 0 || sy >= self.h as isize {
                                continue;
                            }
                            for x in 0..self.w {
                                let sx = x as isize + b as isize - pw as isize;
                                if sx < 0 || sx >= self.w as isize {
                                    continue;
                                }
                                let out_row = self.row(o, y, x);
                                let in_row = self.row(i, sy as usize, sx as usize);
                                for c in 0..self.kt {
                                    f(out_row, in_row, self.kidx(o, i, a, b, c), c as isize - pt as isize);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    fn span(&self, shift: isize) -> (usize, usize) {
        let lo = (-shift).max(0) as usize;
        let hi = (self.t as isize - shift.max(0)) as usize;
        (lo, hi)
    }
}

pub(crate) fn st_conv_forward(x: &[f64], k: &[f64], geo: &StGeometry) -> Vec<f64> {
    let mut out = vec![0.0; geo.co * geo.h * geo.w * geo.t];
    geo.for_each_tap(|orow, irow, ki, s| {
        let wgt = k[ki];
        let (lo, hi) = geo.span(s);
        let dst = &mut out[orow + lo..orow + hi];
        let src = &x[(irow as isize + lo as isize + s) as usize..(irow as isize + hi as isize + s) as usize];
        for (d, v) in dst.iter_mut().zip(src) {
            *d += wgt * v;
        }
    });
    out
}

pub(crate) fn st_conv_grad_x(g: &[f64], k: &[f64], gx: &mut [f64], geo: &StGeometry) {
    geo.for_each_tap(|orow, irow, ki, s| {
        let wgt = k[ki];
        let (lo, hi) = geo.span(s);
        let src = &g[orow + lo..orow + hi];
        let dst = &mut gx[(irow as isize + lo as isize + s) as usize..(irow as isize + hi as isize + s) as usize];
        for (d, v) in dst.iter_mut().zip(src) {
            *d += wgt * v;
        }
    });
}

pub(crate) fn st_conv_grad_k(g: &[f64], x: &[f64], gk: &mut [f64], geo: &StGeometry) {
    geo.for_each_tap(|orow, irow, ki, s| {
        let (lo, hi) = geo.span(s);
        let a = &g[orow + lo..orow + hi];
        let b = &x[(irow as isize + lo as isize + s) as usize..(irow as isize + hi as isize + s) as usize];
        gk[ki] += a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    });
}

struct C2 {
    n: usize,
    ci: usize,
    co: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
}

impl C2 {
    fn new(sx: &[usize], sk: &[usize]) -> Self {
        C2 {
            n: sx[0],
            ci: sx[1],
            h: sx[2],
            w: sx[3],
            co: sk[0],
            kh: sk[2],
            kw: sk[3],
        }
    }

    /// Calls `f(out_base, in_base, kernel_index, x_lo, x_hi, dx)` per valid row pairing.
    fn for_each_row(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, isize)) {
        let (ph, pw) = (self.kh / 2, self.kw / 2);
        let plane = self.h * self.w;
        for b in 0..self.n {
            for o in 0..self.co {
                for i in 0..self.ci {
                    for a in 0..self.kh {
                        for c in 0..self.kw {
                            let ki = ((o * self.ci + i) * self.kh + a) * self.kw + c;
                            let dx = c as isize - pw as isize;
                            let lo = (-dx).max(0) as usize;
                            let hi = (self.w as isize - dx.max(0)) as usize;
                            for y in 0..self.h {
                                let sy = y as isize + a as isize - ph as isize;
                                if sy < 0 || sy >= self.h as isize {
                                    continue;
                                }
                                let ob = (b * self.co + o) * plane + y * self.w;
                                let ib = (b * self.ci + i) * plane + sy as usize * self.w;
                                f(ob, ib, ki, lo, hi, dx);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward(x: &[f64], k: &[f64], sx: &[usize], sk: &[usize]) -> Vec<f64> {
    let geo = C2::new(sx, sk);
    let mut out = vec![0.0; geo.n * geo.co * geo.h * geo.w];
    geo.for_each_row(|ob, ib, ki, lo, hi, dx| {
        let wgt = k[ki];
        for xi in lo..hi {
            out[ob + xi] += wgt * x[(ib as isize + xi as isize + dx) as usize];
        }
    });
    out
}

pub(crate) fn conv2d_grad_x(g: &[f64], k: &[f64], gx: &mut [f64], sx: &[usize], sk: &[usize]) {
    let geo = C2::new(sx, sk);
    geo.for_each_row(|ob, ib, ki, lo, hi, dx| {
        let wgt = k[ki];
        for xi in lo..hi {
            gx[(ib as isize + xi as isize + dx) as usize] += wgt * g[ob + xi];
        }
    });
}

pub(crate) fn conv2d_grad_k(g: &[f64], x: &[f64], gk: &mut [f64], sx: &[usize], sk: &[usize]) {
    let geo = C2::new(sx, sk);
    geo.for_each_row(|ob, ib, ki, lo, hi, dx| {
        let mut acc = 0.0;
        for xi in lo..hi {
            acc += g[ob + xi] * x[(ib as isize + xi as isize + dx) as usize];
        }
        gk[ki] += acc;
    });
}

pub(crate) fn scan_forward(a: &[f64], b: &[f64], steps: usize, width: usize) -> Vec<f64> {
    let mut out = vec![0.0; steps * width];
    out[..width].copy_from_slice(&b[..width]);
    for t in 1..steps {
        for c in 0..width {
            let i = t * width + c;
            out[i] = a[i] * out[i - width] + b[i];
        }
    }
    out
}

/// Total derivative of the loss with respect to every scan output, i.e.
/// the gradient with respect to the drive term.
pub(crate) fn scan_adjoint(a: &[f64], g: &[f64], steps: usize, width: usize) -> Vec<f64> {
    let mut total = g.to_vec();
    for t in (0..steps - 1).rev() {
        for c in 0..width {
            let i = t * width + c;
            total[i] += a[i + width] * total[i + width];
        }
    }
    total
}

fn centered_times(steps: usize) -> (Vec<f64>, f64) {
    let mid = (steps as f64 - 1.0) / 2.0;
    let tc: Vec<f64> = (0..steps).map(|t| t as f64 - mid).collect();
    let stt = tc.iter().map(|v| v * v).sum();
    (tc, stt)
}

/// Returns the normalized array and the per-column residual standard deviation.
pub(crate) fn temporal_normalize(x: &[f64], steps: usize, width: usize) -> (Vec<f64>, Vec<f64>) {
    let (tc, stt) = centered_times(steps);
    let mut mean = vec![0.0; width];
    let mut slope = vec![0.0; width];
    for t in 0..steps {
        let row = &x[t * width..(t + 1) * width];
        for c in 0..width {
            mean[c] += row[c];
            slope[c] += tc[t] * row[c];
        }
    }
    for c in 0..width {
        mean[c] /= steps as f64;
        slope[c] /= stt;
    }
    let mut out = vec![0.0; steps * width];
    let mut var = vec![0.0; width];
    for t in 0..steps {
        for c in 0..width {
            let r = x[t * width + c] - mean[c] - slope[c] * tc[t];
            out[t * width + c] = r;
            var[c] += r * r;
        }
    }
    let sigma: Vec<f64> = var.iter().map(|v| (v / steps as f64).sqrt()).collect();
    for t in 0..steps {
        for c in 0..width {
            out[t * width + c] /= sigma[c] + NORMALIZE_EPS;
        }
    }
    (out, sigma)
}

pub(crate) fn temporal_normalize_adjoint(
    g: &[f64],
    y: &[f64],
    sigma: &[f64],
    steps: usize,
    width: usize,
    gx: &mut [f64],
) {
    let (tc, stt) = centered_times(steps);
    let n = steps as f64;
    let mut gy_dot = vec![0.0; width];
    for t in 0..steps {
        for c in 0..width {
            gy_dot[c] += g[t * width + c] * y[t * width + c];
        }
    }
    let mut gr = vec![0.0; steps * width];
    let mut gr_mean = vec![0.0; width];
    let mut gr_slope = vec![0.0; width];
    for t in 0..steps {
        for c in 0..width {
            let i = t * width + c;
            let mut v = g[i] / (sigma[c] + NORMALIZE_EPS);
            if sigma[c] > 0.0 {
                v -= y[i] * gy_dot[c] / (n * sigma[c]);
            }
            gr[i] = v;
            gr_mean[c] += v;
            gr_slope[c] += tc[t] * v;
        }
    }
    for t in 0..steps {
        for c in 0..width {
            let i = t * width + c;
            gx[i] += gr[i] - gr_mean[c] / n - tc[t] * gr_slope[c] / stt;
        }
    }
}
