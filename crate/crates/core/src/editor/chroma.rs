//! Luminance-suppressed chrominance carrier.

use crate::color::{luma_axis, suppress_luma};

use super::pyramid::Image;

/// Low base with its per-pixel projection onto the unit luminance axis
/// removed.
#[derive(Debug, Clone, PartialEq)]
pub struct ChromCarrier {
    pub c: Image,
    pub w: [f64; 3],
}

pub fn luminance_suppress(low: &Image) -> ChromCarrier {
    let mut c = low.clone();
    for y in 0..low.h {
        for x in 0..low.w {
            c.set_pixel(y, x, suppress_luma(low.pixel(y, x)));
        }
    }
    ChromCarrier { c, w: luma_axis() }
}
