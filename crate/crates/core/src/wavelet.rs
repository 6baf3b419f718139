//! Orthogonal wavelet scaling filters and the 2x resampling built on them.
//!
//! Upsampling is synthesis with the scaling filter, downsampling is analysis
//! with the same filter, so `down(up(y)) == y` for any signal. Both operate
//! with periodic extension, which keeps that identity exact at the borders;
//! callers that need reflective borders pad before resampling.

use std::f64::consts::SQRT_2;

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{AdaError, Result};
use crate::image::ImageBatch;

const SYM6: [f64; 12] = [
    0.015404109327027373,
    0.0034907120842174702,
    -0.11799011114819057,
    -0.048311742585633,
    0.4910559419267466,
    0.787641141030194,
    0.3379294217276218,
    -0.07263752278646252,
    -0.021060292512300564,
    0.04472490177066578,
    0.0017677118642428036,
    -0.007800708325034148,
];

const SYM2: [f64; 4] = [
    -0.12940952255092145,
    0.22414386804185735,
    0.836516303737469,
    0.48296291314469025,
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WaveletName {
    Sym6,
    Sym2,
}

/// Scaling filter `H(z) = sum_k taps[k] z^-k` of an orthogonal wavelet.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletFilter {
    name: WaveletName,
    taps: Vec<f64>,
}

impl WaveletFilter {
    pub fn sym6() -> Self {
        WaveletFilter { name: WaveletName::Sym6, taps: SYM6.to_vec() }
    }

    pub fn sym2() -> Self {
        WaveletFilter { name: WaveletName::Sym2, taps: SYM2.to_vec() }
    }

    pub fn named(name: WaveletName) -> Self {
        match name {
            WaveletName::Sym6 => Self::sym6(),
            WaveletName::Sym2 => Self::sym2(),
        }
    }

    pub fn name(&self) -> WaveletName {
        self.name
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn resampler(&self) -> Resampler {
        Resampler::new(self.taps.clone())
    }
}

/// 2x polyphase resampler around a scaling filter.
///
/// Upsampled sample `m` represents source coordinate `(m + phase - centroid) / 2`,
/// where `centroid` is the filter's first moment. The geometry code uses this
/// to map between source and upsampled pixel grids.
#[derive(Clone, Debug, PartialEq)]
pub struct Resampler {
    taps: Vec<f64>,
    phase: i64,
    centroid: f64,
}

impl Resampler {
    pub fn new(taps: Vec<f64>) -> Self {
        let sum: f64 = taps.iter().sum();
        let centroid = taps.iter().enumerate().map(|(k, h)| k as f64 * h).sum::<f64>() / sum;
        let phase = taps.len() as i64 / 2 - 1;
        Resampler { taps, phase, centroid }
    }

    /// Same index layout with different taps; used to trace footprints with
    /// non-negative weights.
    pub fn with_taps(&self, taps: Vec<f64>) -> Self {
        assert_eq!(taps.len(), self.taps.len());
        Resampler { taps, ..*self }
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    pub fn phase(&self) -> i64 {
        self.phase
    }

    pub fn centroid(&self) -> f64 {
        self.centroid
    }

    /// Offset `d` such that upsampled index `m = 2x + d` for source coordinate `x`.
    pub fn grid_offset(&self) -> f64 {
        self.centroid - self.phase as f64
    }

    /// `u[m] = sqrt2 * sum_n y[n] h[m - 2n + phase]`, periodic.
    pub fn up1(&self, y: &[f64], out: &mut [f64]) {
        let n = y.len() as i64;
        debug_assert_eq!(out.len(), 2 * y.len());
        for (m, o) in out.iter_mut().enumerate() {
            let base = m as i64 + self.phase;
            let mut acc = 0.0;
            // taps with j = base - 2n, i.e. j of the same parity as base
            let mut j = base.rem_euclid(2);
            while (j as usize) < self.taps.len() {
                let src = (base - j).div_euclid(2).rem_euclid(n);
                acc += self.taps[j as usize] * y[src as usize];
                j += 2;
            }
            *o = SQRT_2 * acc;
        }
    }

    /// `d[k] = sum_m h[m - 2k + phase] u[m] / sqrt2`, periodic.
    pub fn down1(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len() as i64;
        debug_assert_eq!(2 * out.len(), u.len());
        for (k, o) in out.iter_mut().enumerate() {
            let base = 2 * k as i64 - self.phase;
            let acc: f64 = self
                .taps
                .iter()
                .enumerate()
                .map(|(j, h)| h * u[(base + j as i64).rem_euclid(n) as usize])
                .sum();
            *o = acc / SQRT_2;
        }
    }

    pub fn upsample_plane(&self, plane: ArrayView2<f64>) -> Array2<f64> {
        let (h, w) = plane.dim();
        let mut rows = Array2::zeros((h, 2 * w));
        for (src, mut dst) in plane.outer_iter().zip(rows.outer_iter_mut()) {
            let src = src.to_vec();
            self.up1(&src, dst.as_slice_mut().expect("contiguous row"));
        }
        let mut out = Array2::zeros((2 * h, 2 * w));
        let mut col_out = vec![0.0; 2 * h];
        for x in 0..2 * w {
            let col = rows.column(x).to_vec();
            self.up1(&col, &mut col_out);
            out.column_mut(x).assign(&ndarray::ArrayView1::from(&col_out));
        }
        out
    }

    pub fn downsample_plane(&self, plane: ArrayView2<f64>) -> Array2<f64> {
        let (h, w) = plane.dim();
        let mut rows = Array2::zeros((h, w / 2));
        for (src, mut dst) in plane.outer_iter().zip(rows.outer_iter_mut()) {
            let src = src.to_vec();
            self.down1(&src, dst.as_slice_mut().expect("contiguous row"));
        }
        let mut out = Array2::zeros((h / 2, w / 2));
        let mut col_out = vec![0.0; h / 2];
        for x in 0..w / 2 {
            let col = rows.column(x).to_vec();
            self.down1(&col, &mut col_out);
            out.column_mut(x).assign(&ndarray::ArrayView1::from(&col_out));
        }
        out
    }

    /// Transpose of [`Resampler::upsample_plane`].
    pub fn upsample_plane_adjoint(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        // up1^T = 2 * down1 along each axis
        self.downsample_plane(grad) * 4.0
    }

    /// Transpose of [`Resampler::downsample_plane`].
    pub fn downsample_plane_adjoint(&self, grad: ArrayView2<f64>) -> Array2<f64> {
        self.upsample_plane(grad) * 0.25
    }
}

fn map_planes(img: ArrayView3<f64>, f: impl Fn(ArrayView2<f64>) -> Array2<f64>) -> Array3<f64> {
    let planes: Vec<Array2<f64>> = img.outer_iter().map(f).collect();
    let views: Vec<_> = planes.iter().map(|p| p.view()).collect();
    ndarray::stack(Axis(0), &views).expect("planes share a shape")
}

pub(crate) fn upsample_image(img: ArrayView3<f64>, r: &Resampler) -> Array3<f64> {
    map_planes(img, |p| r.upsample_plane(p))
}

pub(crate) fn downsample_image(img: ArrayView3<f64>, r: &Resampler) -> Array3<f64> {
    map_planes(img, |p| r.downsample_plane(p))
}

pub(crate) fn upsample_image_adjoint(img: ArrayView3<f64>, r: &Resampler) -> Array3<f64> {
    map_planes(img, |p| r.upsample_plane_adjoint(p))
}

pub(crate) fn downsample_image_adjoint(img: ArrayView3<f64>, r: &Resampler) -> Array3<f64> {
    map_planes(img, |p| r.downsample_plane_adjoint(p))
}

/// Doubles both spatial dimensions. Constant images stay constant.
pub fn upsample2x2(batch: &ImageBatch, filter: &WaveletFilter) -> Result<ImageBatch> {
    let r = filter.resampler();
    let images = batch.images().map(|img| upsample_image(img, &r)).collect();
    ImageBatch::from_images(images)
}

/// Halves both spatial dimensions; they must be even.
pub fn downsample2x2(batch: &ImageBatch, filter: &WaveletFilter) -> Result<ImageBatch> {
    if batch.height() % 2 != 0 || batch.width() % 2 != 0 {
        return Err(AdaError::Shape(format!(
            "downsampling needs even dimensions, got {}x{}",
            batch.height(),
            batch.width()
        )));
    }
    let r = filter.resampler();
    let images = batch.images().map(|img| downsample_image(img, &r)).collect();
    ImageBatch::from_images(images)
}
