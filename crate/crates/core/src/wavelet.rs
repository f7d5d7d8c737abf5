//! One-level orthonormal 2-D Haar transform.
//!
//! Each input channel `c` expands to four output channels `4c..4c+4` holding
//! the LL, HL, LH and HH bands. For a 2×2 tile `[[a, b], [c, d]]`:
//!
//! ```text
//! LL = ( a + b + c + d) / 2
//! HL = (-a + b - c + d) / 2
//! LH = (-a - b + c + d) / 2
//! HH = ( a - b - c + d) / 2
//! ```
//!
//! The analysis matrix is symmetric and orthonormal, so the inverse applies
//! the same formulas in reverse and each transform is the other's adjoint.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BANDS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Band {
    LL = 0,
    HL = 1,
    LH = 2,
    HH = 3,
}

#[inline]
fn analyze(a: f32, b: f32, c: f32, d: f32) -> [f32; 4] {
    [
        0.5 * ((a + b) + (c + d)),
        0.5 * ((b - a) + (d - c)),
        0.5 * ((c + d) - (a + b)),
        0.5 * ((a - b) + (d - c)),
    ]
}

#[inline]
fn synthesize(ll: f32, hl: f32, lh: f32, hh: f32) -> [f32; 4] {
    [
        0.5 * ((ll - hl) - (lh - hh)),
        0.5 * ((ll + hl) - (lh + hh)),
        0.5 * ((ll - hl) + (lh - hh)),
        0.5 * ((ll + hl) + (lh + hh)),
    ]
}

/// Forward transform: `(n, c, h, w)` → `(n, 4c, h/2, w/2)`.
pub fn dwt2(t: &Tensor) -> Result<Tensor> {
    let s = t.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(
            "dwt2",
            format!("spatial dims {}x{} must both be even", s.h, s.w),
        ));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros([s.n, s.c * BANDS, oh, ow]);
    let plane = oh * ow;
    let src = t.data();
    let dst = out.data_mut();
    for nc in 0..s.n * s.c {
        let base_in = nc * s.h * s.w;
        let base_out = nc * BANDS * plane;
        for y in 0..oh {
            let r0 = base_in + 2 * y * s.w;
            let r1 = r0 + s.w;
            for x in 0..ow {
                let bands = analyze(
                    src[r0 + 2 * x],
                    src[r0 + 2 * x + 1],
                    src[r1 + 2 * x],
                    src[r1 + 2 * x + 1],
                );
                let o = base_out + y * ow + x;
                for (b, v) in bands.into_iter().enumerate() {
                    dst[o + b * plane] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Inverse transform: `(n, 4c, h, w)` → `(n, c, 2h, 2w)`.
pub fn idwt2(s_in: &Tensor) -> Result<Tensor> {
    let s = s_in.shape();
    if !s.c.is_multiple_of(BANDS) {
        return Err(Error::shape(
            "idwt2",
            format!("channel count {} is not a multiple of 4", s.c),
        ));
    }
    let c_out = s.c / BANDS;
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = Tensor::zeros([s.n, c_out, oh, ow]);
    let plane = s.h * s.w;
    let src = s_in.data();
    let dst = out.data_mut();
    for nc in 0..s.n * c_out {
        let base_in = nc * BANDS * plane;
        let base_out = nc * oh * ow;
        for y in 0..s.h {
            let r0 = base_out + 2 * y * ow;
            let r1 = r0 + ow;
            for x in 0..s.w {
                let i = base_in + y * s.w + x;
                let [a, b, c, d] = synthesize(src[i], src[i + plane], src[i + 2 * plane], src[i + 3 * plane]);
                dst[r0 + 2 * x] = a;
                dst[r0 + 2 * x + 1] = b;
                dst[r1 + 2 * x] = c;
                dst[r1 + 2 * x + 1] = d;
            }
        }
    }
    Ok(out)
}

pub fn dwt2_backward(grad_out: &Tensor) -> Result<Tensor> {
    idwt2(grad_out)
}

pub fn idwt2_backward(grad_out: &Tensor) -> Result<Tensor> {
    dwt2(grad_out)
}
