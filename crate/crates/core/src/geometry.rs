//! Execution of the combined geometric transform.
//!
//! A non-blit transform runs the anti-aliased chain: reflect-pad, 2x wavelet
//! upsample, one bilinear warp, 2x wavelet downsample, crop. Transforms that
//! only permute pixels (flips, quarter turns, integer shifts) are executed as
//! an index gather instead, which is exact.
//!
//! Coordinates follow `[x, y] = [column, row]`; `G` maps input positions to
//! output positions with the origin at the image center.

use std::ops::Range;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{AdaError, Result};
use crate::image::{reflect_index, ImageBatch};
use crate::params::{GeomParams, Homogeneous2D};
use crate::wavelet::{
    downsample_image, downsample_image_adjoint, upsample_image, upsample_image_adjoint, Resampler,
    WaveletFilter,
};

/// Bilinear weights below this are dropped when the neighbor lies outside
/// the image; it absorbs rounding in the inverse-mapped coordinates.
const NEGLIGIBLE_WEIGHT: f64 = 1e-9;
const SNAP: f64 = 1e-9;

/// Reflect-padding margins in pixels, as `(x, y)` pairs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Margins {
    pub lo: (usize, usize),
    pub hi: (usize, usize),
}

/// How lookups outside the source extent are treated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Boundary {
    /// Out-of-range lookups are an internal error.
    Strict,
    /// Out-of-range lookups read zero.
    Zero,
}

fn snap_floor(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r as i64
    } else {
        v.floor() as i64
    }
}

fn snap_ceil(v: f64) -> i64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r as i64
    } else {
        v.ceil() as i64
    }
}

fn center(n: usize) -> f64 {
    (n as f64 - 1.0) / 2.0
}

/// Unclamped margins `[lo_x, lo_y, hi_x, hi_y]`.
fn required_margins(g: &Homogeneous2D, width: usize, height: usize, r: &Resampler) -> Result<[i64; 4]> {
    let inv = g.inverse()?;
    let taps = r.len() as i64;
    let phase = r.phase();
    let mu = r.centroid();
    let offset = r.grid_offset();
    let (cx, cy) = (center(width), center(height));

    // Source-unit reach of the downsampling filter around each output pixel.
    let lo_ext = mu / 2.0;
    let hi_ext = (taps as f64 - 1.0 - mu) / 2.0;
    let xs = [-cx - lo_ext, cx + hi_ext];
    let ys = [-cy - lo_ext, cy + hi_ext];
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &x in &xs {
        for &y in &ys {
            let (sx, sy) = inv.apply(x, y);
            x0 = x0.min(sx);
            x1 = x1.max(sx);
            y0 = y0.min(sy);
            y1 = y1.max(sy);
        }
    }

    let axis = |b0: f64, b1: f64, c: f64, n: usize| -> (i64, i64) {
        // Bilinear footprint on the upsampled grid.
        let jmin = snap_floor(2.0 * (b0 + c) + offset);
        let jmax = snap_ceil(2.0 * (b1 + c) + offset);
        // Source pixels reached by the upsampling filter.
        let nmin = (jmin + phase - taps + 1).div_euclid(2) + i64::from((jmin + phase - taps + 1).rem_euclid(2) != 0);
        let nmax = (jmax + phase).div_euclid(2);
        // The downsampling window of the edge outputs must stay inside the
        // upsampled domain as well.
        let lo_min = (phase + 1) / 2;
        let hi_min = (taps - phase - 1) / 2;
        let lo = (-nmin).max(lo_min).max(0);
        let hi = (nmax - (n as i64 - 1)).max(hi_min).max(0);
        (lo, hi)
    };
    let (lo_x, hi_x) = axis(x0, x1, cx, width);
    let (lo_y, hi_y) = axis(y0, y1, cy, height);
    Ok([lo_x, lo_y, hi_x, hi_y])
}

/// Smallest reflect-padding margins that keep every output pixel's footprint
/// inside the padded image.
pub fn calculate_padding(
    g: &Homogeneous2D,
    width: usize,
    height: usize,
    filter: &WaveletFilter,
) -> Result<Margins> {
    padding_for(g, width, height, &filter.resampler())
}

pub(crate) fn padding_for(g: &Homogeneous2D, width: usize, height: usize, r: &Resampler) -> Result<Margins> {
    let [lo_x, lo_y, hi_x, hi_y] = required_margins(g, width, height, r)?;
    let limit_x = width as i64 - 1;
    let limit_y = height as i64 - 1;
    for (axis, needed, limit) in [('x', lo_x, limit_x), ('x', hi_x, limit_x), ('y', lo_y, limit_y), ('y', hi_y, limit_y)] {
        if needed > limit {
            return Err(AdaError::Padding { axis, needed, limit });
        }
    }
    Ok(Margins { lo: (lo_x as usize, lo_y as usize), hi: (hi_x as usize, hi_y as usize) })
}

fn clamped_padding(g: &Homogeneous2D, width: usize, height: usize, r: &Resampler) -> Result<Margins> {
    let [lo_x, lo_y, hi_x, hi_y] = required_margins(g, width, height, r)?;
    let cx = |v: i64| v.min(width as i64 - 1).max(0) as usize;
    let cy = |v: i64| v.min(height as i64 - 1).max(0) as usize;
    Ok(Margins { lo: (cx(lo_x), cy(lo_y)), hi: (cx(hi_x), cy(hi_y)) })
}

/// Up to four `(row, col, weight)` bilinear taps.
struct Taps {
    items: [(usize, usize, f64); 4],
    len: usize,
}

fn axis_taps(v: f64, n: usize, boundary: Boundary) -> Result<([(usize, f64); 2], usize)> {
    let v0 = v.floor();
    let frac = v - v0;
    let i0 = v0 as i64;
    let mut cand = [(i0, 1.0 - frac), (i0 + 1, frac)];
    let mut count = if frac == 0.0 { 1 } else { 2 };
    if count == 2 {
        let in_range = |i: i64| i >= 0 && i < n as i64;
        if !in_range(cand[1].0) && cand[1].1 < NEGLIGIBLE_WEIGHT {
            cand[0].1 = 1.0;
            count = 1;
        } else if !in_range(cand[0].0) && cand[0].1 < NEGLIGIBLE_WEIGHT {
            cand[0] = (cand[1].0, 1.0);
            count = 1;
        }
    }
    let mut out = [(0usize, 0.0); 2];
    let mut len = 0;
    for &(i, w) in &cand[..count] {
        if i >= 0 && i < n as i64 {
            out[len] = (i as usize, w);
            len += 1;
        } else if boundary == Boundary::Strict {
            return Err(AdaError::Internal(format!(
                "bilinear lookup at {v} outside padded extent 0..{n}"
            )));
        }
    }
    Ok((out, len))
}

fn bilinear_taps(x: f64, y: f64, width: usize, height: usize, boundary: Boundary) -> Result<Taps> {
    let (xs, nx) = axis_taps(x, width, boundary)?;
    let (ys, ny) = axis_taps(y, height, boundary)?;
    let mut taps = Taps { items: [(0, 0, 0.0); 4], len: 0 };
    for &(row, wy) in &ys[..ny] {
        for &(col, wx) in &xs[..nx] {
            taps.items[taps.len] = (row, col, wy * wx);
            taps.len += 1;
        }
    }
    Ok(taps)
}

/// Output pixels `(rows, cols)` that are evaluated; the rest stay zero.
type Window = (Range<usize>, Range<usize>);

fn full(h: usize, w: usize) -> Window {
    (0..h, 0..w)
}

/// Gathers `out[y, x] = bilinear(src, inv(x, y))` over `window`.
fn warp_image(src: ArrayView3<f64>, inv: &Homogeneous2D, boundary: Boundary, window: &Window) -> Result<Array3<f64>> {
    let (ch, h, w) = src.dim();
    let mut out = Array3::zeros((ch, h, w));
    for y in window.0.clone() {
        for x in window.1.clone() {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let taps = bilinear_taps(sx, sy, w, h, boundary)?;
            let taps = &taps.items[..taps.len];
            if let [(row, col, _)] = taps {
                for c in 0..ch {
                    out[[c, y, x]] = src[[c, *row, *col]];
                }
            } else {
                for c in 0..ch {
                    out[[c, y, x]] = taps.iter().map(|&(r, q, wt)| wt * src[[c, r, q]]).sum();
                }
            }
        }
    }
    Ok(out)
}

fn warp_image_adjoint(grad: ArrayView3<f64>, inv: &Homogeneous2D, boundary: Boundary, window: &Window) -> Result<Array3<f64>> {
    let (ch, h, w) = grad.dim();
    let mut out = Array3::zeros((ch, h, w));
    for y in window.0.clone() {
        for x in window.1.clone() {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let taps = bilinear_taps(sx, sy, w, h, boundary)?;
            for &(r, q, wt) in &taps.items[..taps.len] {
                for c in 0..ch {
                    out[[c, r, q]] += wt * grad[[c, y, x]];
                }
            }
        }
    }
    Ok(out)
}

/// Bilinear warp of each image by `g` about the image center.
pub fn warp_affine(batch: &ImageBatch, g: &Homogeneous2D, boundary: Boundary) -> Result<ImageBatch> {
    let t = Homogeneous2D::translate(center(batch.width()), center(batch.height()));
    let inv = t.mul(g).mul(&t.inverse()?).inverse()?;
    let images = batch
        .images()
        .map(|img| warp_image(img, &inv, boundary, &full(img.dim().1, img.dim().2)))
        .collect::<Result<Vec<_>>>()?;
    ImageBatch::from_images(images)
}

fn reflect_pad(img: ArrayView3<f64>, m: &Margins) -> Array3<f64> {
    let (ch, h, w) = img.dim();
    let (ph, pw) = (h + m.lo.1 + m.hi.1, w + m.lo.0 + m.hi.0);
    Array3::from_shape_fn((ch, ph, pw), |(c, y, x)| {
        let sy = reflect_index(y as i64 - m.lo.1 as i64, h);
        let sx = reflect_index(x as i64 - m.lo.0 as i64, w);
        img[[c, sy, sx]]
    })
}

fn reflect_pad_adjoint(grad: ArrayView3<f64>, m: &Margins, h: usize, w: usize) -> Array3<f64> {
    let (ch, ph, pw) = grad.dim();
    let mut out = Array3::zeros((ch, h, w));
    for c in 0..ch {
        for y in 0..ph {
            let sy = reflect_index(y as i64 - m.lo.1 as i64, h);
            for x in 0..pw {
                let sx = reflect_index(x as i64 - m.lo.0 as i64, w);
                out[[c, sy, sx]] += grad[[c, y, x]];
            }
        }
    }
    out
}

/// Precomputed execution of one geometric transform on one image size.
#[derive(Clone, Debug)]
pub enum GeometryPlan {
    Identity,
    /// Output pixel `i` (row-major) reads source pixel `source[i]`.
    Blit { source: Vec<usize> },
    Resample {
        margins: Margins,
        /// Maps upsampled output indices to upsampled source indices.
        inverse: Homogeneous2D,
        boundary: Boundary,
        resampler: Resampler,
    },
}

impl GeometryPlan {
    pub fn new(g: &Homogeneous2D, width: usize, height: usize, filter: &WaveletFilter) -> Result<Self> {
        Self::build(g, width, height, &filter.resampler(), false)
    }

    /// Like [`GeometryPlan::new`] but with margins clamped to the reflectable
    /// extent; lookups beyond the padded image read zero.
    pub fn clamped(g: &Homogeneous2D, width: usize, height: usize, filter: &WaveletFilter) -> Result<Self> {
        Self::build(g, width, height, &filter.resampler(), true)
    }

    /// The plan with explicit margins (must cover the footprint).
    pub(crate) fn with_margins(g: &Homogeneous2D, width: usize, height: usize, r: &Resampler, margins: Margins) -> Result<Self> {
        let t = Homogeneous2D::translate(
            center(width) + margins.lo.0 as f64,
            center(height) + margins.lo.1 as f64,
        );
        let a_src = t.mul(g).mul(&t.inverse()?);
        let d = r.grid_offset();
        let m = Homogeneous2D::translate(d, d).mul(&Homogeneous2D::scale(2.0, 2.0));
        let a_up = m.mul(&a_src).mul(&m.inverse()?);
        Ok(GeometryPlan::Resample {
            margins,
            inverse: a_up.inverse()?,
            boundary: Boundary::Strict,
            resampler: r.clone(),
        })
    }

    pub(crate) fn build(g: &Homogeneous2D, width: usize, height: usize, r: &Resampler, clamp: bool) -> Result<Self> {
        if g.is_identity() {
            return Ok(GeometryPlan::Identity);
        }
        if let Some(source) = blit_map(g, width, height)? {
            return Ok(GeometryPlan::Blit { source });
        }
        if clamp {
            let margins = clamped_padding(g, width, height, r)?;
            let mut plan = Self::with_margins(g, width, height, r, margins)?;
            if let GeometryPlan::Resample { boundary, .. } = &mut plan {
                *boundary = Boundary::Zero;
            }
            Ok(plan)
        } else {
            let margins = padding_for(g, width, height, r)?;
            Self::with_margins(g, width, height, r, margins)
        }
    }

    pub fn is_blit(&self) -> bool {
        matches!(self, GeometryPlan::Identity | GeometryPlan::Blit { .. })
    }

    pub fn forward(&self, img: ArrayView3<f64>) -> Result<Array3<f64>> {
        match self {
            GeometryPlan::Identity => Ok(img.to_owned()),
            GeometryPlan::Blit { source } => {
                let (ch, h, w) = img.dim();
                let mut out = Array3::zeros((ch, h, w));
                for c in 0..ch {
                    for (i, &s) in source.iter().enumerate() {
                        out[[c, i / w, i % w]] = img[[c, s / w, s % w]];
                    }
                }
                Ok(out)
            }
            GeometryPlan::Resample { margins, inverse, boundary, resampler } => {
                let (_, h, w) = img.dim();
                let padded = reflect_pad(img, margins);
                let up = upsample_image(padded.view(), resampler);
                let window = read_window(margins, h, w, resampler);
                let warped = warp_image(up.view(), inverse, *boundary, &window)?;
                let down = downsample_image(warped.view(), resampler);
                let crop = down.slice(ndarray::s![
                    ..,
                    margins.lo.1..margins.lo.1 + h,
                    margins.lo.0..margins.lo.0 + w
                ]);
                Ok(crop.to_owned())
            }
        }
    }

    /// Transpose of [`GeometryPlan::forward`] applied to an output gradient.
    pub fn adjoint(&self, grad: ArrayView3<f64>) -> Result<Array3<f64>> {
        match self {
            GeometryPlan::Identity => Ok(grad.to_owned()),
            GeometryPlan::Blit { source } => {
                let (ch, h, w) = grad.dim();
                let mut out = Array3::zeros((ch, h, w));
                for c in 0..ch {
                    for (i, &s) in source.iter().enumerate() {
                        out[[c, s / w, s % w]] += grad[[c, i / w, i % w]];
                    }
                }
                Ok(out)
            }
            GeometryPlan::Resample { margins, inverse, boundary, resampler } => {
                let (ch, h, w) = grad.dim();
                let (ph, pw) = (h + margins.lo.1 + margins.hi.1, w + margins.lo.0 + margins.hi.0);
                let mut down = Array3::zeros((ch, ph, pw));
                down.slice_mut(ndarray::s![
                    ..,
                    margins.lo.1..margins.lo.1 + h,
                    margins.lo.0..margins.lo.0 + w
                ])
                .assign(&grad);
                let warped = downsample_image_adjoint(down.view(), resampler);
                let window = read_window(margins, h, w, resampler);
                let up = warp_image_adjoint(warped.view(), inverse, *boundary, &window)?;
                let padded = upsample_image_adjoint(up.view(), resampler);
                Ok(reflect_pad_adjoint(padded.view(), margins, h, w))
            }
        }
    }
}

/// Upsampled pixels read by the downsampler for the cropped output.
fn read_window(m: &Margins, h: usize, w: usize, r: &Resampler) -> Window {
    let span = |lo: usize, n: usize| {
        let start = 2 * lo as i64 - r.phase();
        let end = 2 * (lo + n - 1) as i64 - r.phase() + r.len() as i64;
        start.max(0) as usize..end as usize
    };
    (span(m.lo.1, h), span(m.lo.0, w))
}

/// Source index per output pixel when `g` only permutes pixels.
fn blit_map(g: &Homogeneous2D, width: usize, height: usize) -> Result<Option<Vec<usize>>> {
    let t = Homogeneous2D::translate(center(width), center(height));
    let inv = t.mul(g).mul(&t.inverse()?).inverse()?;
    let m = &inv.0;
    let unit = |v: f64| v == 0.0 || v == 1.0 || v == -1.0;
    let linear = [m[0][0], m[0][1], m[1][0], m[1][1]];
    if !linear.iter().all(|&v| unit(v)) {
        return Ok(None);
    }
    let signed_perm = (m[0][0] != 0.0) != (m[0][1] != 0.0)
        && (m[1][0] != 0.0) != (m[1][1] != 0.0)
        && (m[0][0] != 0.0) == (m[1][1] != 0.0);
    if !signed_perm || m[0][2].fract() != 0.0 || m[1][2].fract() != 0.0 {
        return Ok(None);
    }
    let mut source = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let (sx, sy) = inv.apply(x as f64, y as f64);
            let sx = reflect_index(sx as i64, width);
            let sy = reflect_index(sy as i64, height);
            source.push(sy * width + sx);
        }
    }
    Ok(Some(source))
}

/// Applies the sampled geometric transform to every image in the batch.
pub fn execute_geometry(batch: &ImageBatch, params: &GeomParams, filter: &WaveletFilter) -> Result<ImageBatch> {
    let plan = GeometryPlan::new(&params.matrix, batch.width(), batch.height(), filter)?;
    let images = batch.images().map(|img| plan.forward(img)).collect::<Result<Vec<_>>>()?;
    ImageBatch::from_images(images)
}
