//! Fixed colour axes shared by the renderer, the editor and the extractors.

/// Unit-length luminance axis built from the Rec. 601 weights.
pub fn luma_axis() -> [f64; 3] {
    normalize([0.299, 0.587, 0.114])
}

/// Unit pulse chrominance direction: the luminance-free part of
/// `(-0.3, 1.0, -0.2)`. Blood volume at systole moves skin colour along `-d`.
pub fn pulse_direction() -> [f64; 3] {
    let raw = [-0.3, 1.0, -0.2];
    normalize(suppress_luma(raw))
}

pub fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = dot(v, v).sqrt();
    v.map(|x| x / n)
}

/// Removes the projection of `v` onto the luminance axis.
pub fn suppress_luma(v: [f64; 3]) -> [f64; 3] {
    let w = luma_axis();
    let p = dot(v, w);
    [v[0] - p * w[0], v[1] - p * w[1], v[2] - p * w[2]]
}
