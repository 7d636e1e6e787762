use crate::error::Result;
use crate::matrix::{BinMask, Mat};

use super::Warp;

/// A resampled frame. Invalid pixels hold 0.
#[derive(Clone, Debug, PartialEq)]
pub struct WarpedFrame {
    pub pixels: Mat,
    pub validity: BinMask,
}

/// Bilinear value and its exact partial derivatives at `(x, y)`.
///
/// Within a cell the interpolant is bilinear, so the derivatives are the
/// differences of the neighboring samples. Callers keep `(x, y)` in bounds.
#[inline]
pub fn sample_bilinear(image: &Mat, x: f64, y: f64) -> (f64, f64, f64) {
    let (h, w) = image.shape();
    let (x0, fx) = cell(x, w);
    let (y0, fy) = cell(y, h);
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let i00 = image.get(y0, x0);
    let i10 = image.get(y0, x1);
    let i01 = image.get(y1, x0);
    let i11 = image.get(y1, x1);
    let top = i00 + fx * (i10 - i00);
    let bottom = i01 + fx * (i11 - i01);
    let value = top + fy * (bottom - top);
    let gx = (1.0 - fy) * (i10 - i00) + fy * (i11 - i01);
    let gy = bottom - top;
    (value, gx, gy)
}

#[inline]
fn cell(t: f64, size: usize) -> (usize, f64) {
    if size < 2 {
        return (0, 0.0);
    }
    let i = (t.floor().max(0.0) as usize).min(size - 2);
    (i, t - i as f64)
}

#[inline]
fn inside(x: f64, y: f64, w: usize, h: usize) -> bool {
    x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64
}

/// Samples `image` at the warped location of every output pixel.
pub fn warp_frame(image: &Mat, warp: &Warp) -> Result<WarpedFrame> {
    Ok(warp_impl(image, warp, false)?.0)
}

/// Per-pixel derivative of the warped intensity with respect to each warp parameter.
pub fn warp_jacobian(image: &Mat, warp: &Warp) -> Result<Mat> {
    Ok(warp_impl(image, warp, true)?.1)
}

pub fn warp_with_jacobian(image: &Mat, warp: &Warp) -> Result<(WarpedFrame, Mat)> {
    warp_impl(image, warp, true)
}

fn warp_impl(image: &Mat, warp: &Warp, with_jacobian: bool) -> Result<(WarpedFrame, Mat)> {
    let warp = Warp::new(warp.model(), warp.params().to_vec())?;
    let (h, w) = image.shape();
    let p = warp.model().param_count();
    let mut pixels = Mat::zeros(h, w);
    let mut validity = BinMask::zeros(h, w);
    let mut jac = Mat::zeros(if with_jacobian { h * w } else { 0 }, p);
    for y in 0..h {
        for x in 0..w {
            let Some((u, v)) = warp.map(x as f64, y as f64) else { continue };
            if !inside(u, v, w, h) {
                continue;
            }
            let (value, gx, gy) = sample_bilinear(image, u, v);
            pixels.set(y, x, value);
            validity.set(y, x, true);
            if with_jacobian {
                let (du, dv) = warp.coordinate_derivatives(x as f64, y as f64);
                let row = y * w + x;
                for k in 0..p {
                    jac.set(row, k, gx * du[k] + gy * dv[k]);
                }
            }
        }
    }
    Ok((WarpedFrame { pixels, validity }, jac))
}
