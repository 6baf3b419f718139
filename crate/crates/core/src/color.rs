//! Color matrices, frequency-band amplification, additive noise and cutout.

use ndarray::{Array3, ArrayView3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{AdaError, Result};
use crate::image::{reflect_index, ImageBatch};
use crate::params::{ColorMatrix, CorruptionParams, FilterGain};
use crate::wavelet::{WaveletFilter, WaveletName};

/// Maps each pixel `[r, g, b]` to the first three rows of `C [r, g, b, 1]`.
pub fn apply_color(img: &ImageBatch, c: &ColorMatrix) -> Result<ImageBatch> {
    img.require_rgb()?;
    let images = img.images().map(|x| color_image(x, c)).collect::<Vec<_>>();
    ImageBatch::from_images(images)
}

pub(crate) fn color_image(img: ArrayView3<f64>, c: &ColorMatrix) -> Array3<f64> {
    if c.is_identity() {
        return img.to_owned();
    }
    let m = &c.0;
    let (_, h, w) = img.dim();
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let px = [img[[0, y, x]], img[[1, y, x]], img[[2, y, x]]];
            for (r, row) in m.iter().take(3).enumerate() {
                out[[r, y, x]] = row[0] * px[0] + row[1] * px[1] + row[2] * px[2] + row[3];
            }
        }
    }
    out
}

/// Transpose of the linear part of [`color_image`].
pub(crate) fn color_image_adjoint(grad: ArrayView3<f64>, c: &ColorMatrix) -> Array3<f64> {
    if c.is_identity() {
        return grad.to_owned();
    }
    let m = &c.0;
    let (_, h, w) = grad.dim();
    let mut out = Array3::zeros((3, h, w));
    for y in 0..h {
        for x in 0..w {
            let g = [grad[[0, y, x]], grad[[1, y, x]], grad[[2, y, x]]];
            for col in 0..3 {
                out[[col, y, x]] = m[0][col] * g[0] + m[1][col] * g[1] + m[2][col] * g[2];
            }
        }
    }
    out
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Inserts `factor - 1` zeros between taps, i.e. `H(z) -> H(z^factor)`.
fn dilate(taps: &[f64], factor: usize) -> Vec<f64> {
    let mut out = vec![0.0; (taps.len() - 1) * factor + 1];
    for (i, t) in taps.iter().enumerate() {
        out[i * factor] = *t;
    }
    out
}

/// Zero-pads a centered odd-length filter to `len` taps.
fn center_pad(taps: &[f64], len: usize) -> Vec<f64> {
    let pad = (len - taps.len()) / 2;
    let mut out = vec![0.0; len];
    out[pad..pad + taps.len()].copy_from_slice(taps);
    out
}

/// The four zero-phase bandpass filters (low to high) derived from a
/// two-channel orthogonal wavelet, as centered taps of equal odd length.
pub fn bandpass_filters(bank: &WaveletFilter) -> [Vec<f64>; 4] {
    let h = bank.taps();
    let reversed: Vec<f64> = h.iter().rev().copied().collect();
    // H(z)H(z^-1)/2 and its mirror H(-z)H(-z^-1)/2.
    let lo: Vec<f64> = convolve(h, &reversed).iter().map(|v| v / 2.0).collect();
    let hi: Vec<f64> = lo
        .iter()
        .enumerate()
        .map(|(k, v)| if (k + h.len() - 1) % 2 == 0 { *v } else { -v })
        .collect();
    let lo_lo = convolve(&lo, &dilate(&lo, 2));
    let b1 = convolve(&lo_lo, &dilate(&lo, 4));
    let b2 = convolve(&lo_lo, &dilate(&hi, 4));
    let b3 = convolve(&lo, &dilate(&hi, 2));
    let len = b1.len();
    [b1, b2, center_pad(&b3, len), center_pad(&hi, len)]
}

/// Combined 1-D amplification filter `sum_i g_i * band_i`.
pub fn build_amplification_filter(g: &FilterGain, bank: &WaveletFilter) -> Result<Vec<f64>> {
    if bank.name() != WaveletName::Sym2 {
        return Err(AdaError::Config(format!(
            "amplification filters are built from sym2, got {:?}",
            bank.name()
        )));
    }
    let bands = bandpass_filters(bank);
    let mut taps = vec![0.0; bands[0].len()];
    for (band, gain) in bands.iter().zip(g.gains) {
        for (t, b) in taps.iter_mut().zip(band) {
            *t += gain * b;
        }
    }
    Ok(taps)
}

fn check_taps(taps: &[f64]) -> Result<()> {
    if taps.len() % 2 == 0 {
        return Err(AdaError::Contract(format!("filter length {} is even", taps.len())));
    }
    let n = taps.len();
    let scale = taps.iter().fold(0.0f64, |m, t| m.max(t.abs())).max(1.0);
    if (0..n / 2).any(|i| (taps[i] - taps[n - 1 - i]).abs() > 1e-12 * scale) {
        return Err(AdaError::Contract("filter taps are not symmetric".into()));
    }
    Ok(())
}

/// Separable row and column convolution with reflect padding.
pub fn apply_filter(img: &ImageBatch, taps: &[f64]) -> Result<ImageBatch> {
    check_taps(taps)?;
    let images = img.images().map(|x| filter_image(x, taps)).collect::<Vec<_>>();
    ImageBatch::from_images(images)
}

fn is_delta(taps: &[f64]) -> bool {
    let mid = taps.len() / 2;
    taps.iter().enumerate().all(|(i, &t)| t == if i == mid { 1.0 } else { 0.0 })
}

/// 1-D convolution of every lane along `axis`; `transpose` scatters instead
/// of gathering so that reflected samples fold back onto their source.
fn filter_axis(img: ArrayView3<f64>, taps: &[f64], axis: usize, transpose: bool) -> Array3<f64> {
    let r = (taps.len() / 2) as i64;
    let mut out = Array3::zeros(img.raw_dim());
    let n = img.len_of(Axis(axis));
    for (src, mut dst) in img.lanes(Axis(axis)).into_iter().zip(out.lanes_mut(Axis(axis))) {
        for i in 0..n {
            for (k, &t) in taps.iter().enumerate() {
                let j = reflect_index(i as i64 + k as i64 - r, n);
                if transpose {
                    dst[j] += t * src[i];
                } else {
                    dst[i] += t * src[j];
                }
            }
        }
    }
    out
}

pub(crate) fn filter_image(img: ArrayView3<f64>, taps: &[f64]) -> Array3<f64> {
    if is_delta(taps) {
        return img.to_owned();
    }
    let rows = filter_axis(img, taps, 2, false);
    filter_axis(rows.view(), taps, 1, false)
}

pub(crate) fn filter_image_adjoint(grad: ArrayView3<f64>, taps: &[f64]) -> Array3<f64> {
    if is_delta(taps) {
        return grad.to_owned();
    }
    let cols = filter_axis(grad, taps, 1, true);
    filter_axis(cols.view(), taps, 2, true)
}

/// Half-open cutout rectangle `(rows, cols)` for a center in unit coordinates.
pub fn cutout_rect(center: (f64, f64), height: usize, width: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let span = |c: f64, n: usize| {
        let lo = ((c - 0.25) * n as f64).round().max(0.0) as usize;
        let hi = ((c + 0.25) * n as f64).round().clamp(0.0, n as f64) as usize;
        lo.min(hi)..hi
    };
    (span(center.1, height), span(center.0, width))
}

/// Adds `N(0, sigma^2)` noise drawn from `rng` in channel, row, column order,
/// then zeroes the cutout rectangle.
pub(crate) fn corrupt_image(img: ArrayView3<f64>, params: &CorruptionParams, rng: &mut impl Rng) -> Array3<f64> {
    let mut out = img.to_owned();
    if params.noise_sigma > 0.0 {
        for v in out.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += params.noise_sigma * z;
        }
    }
    if let Some(center) = params.cutout_center {
        let (rows, cols) = cutout_rect(center, img.dim().1, img.dim().2);
        out.slice_mut(ndarray::s![.., rows, cols]).fill(0.0);
    }
    out
}

pub(crate) fn corrupt_image_adjoint(grad: ArrayView3<f64>, params: &CorruptionParams) -> Array3<f64> {
    let mut out = grad.to_owned();
    if let Some(center) = params.cutout_center {
        let (rows, cols) = cutout_rect(center, grad.dim().1, grad.dim().2);
        out.slice_mut(ndarray::s![.., rows, cols]).fill(0.0);
    }
    out
}

/// Applies the same corruption parameters to every image, drawing noise
/// sequentially from `rng`.
pub fn apply_corruption(img: &ImageBatch, params: &CorruptionParams, rng: &mut impl Rng) -> Result<ImageBatch> {
    let images = img.images().map(|x| corrupt_image(x, params, rng)).collect::<Vec<_>>();
    ImageBatch::from_images(images)
}
