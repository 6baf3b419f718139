use ndarray::{Array3, Array4, ArrayView3, Axis};

use crate::error::{AdaError, Result};

/// Batch of float images laid out as `(batch, channel, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageBatch {
    data: Array4<f64>,
}

impl ImageBatch {
    pub fn new(data: Array4<f64>) -> Result<Self> {
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(AdaError::Domain(format!("non-finite value at flat index {bad}")));
        }
        Ok(ImageBatch { data })
    }

    pub fn zeros(batch: usize, channels: usize, height: usize, width: usize) -> Self {
        ImageBatch { data: Array4::zeros((batch, channels, height, width)) }
    }

    pub fn from_images(images: Vec<Array3<f64>>) -> Result<Self> {
        let views: Vec<_> = images.iter().map(|i| i.view()).collect();
        let data = ndarray::stack(Axis(0), &views)
            .map_err(|e| AdaError::Shape(format!("images differ in shape: {e}")))?;
        ImageBatch::new(data)
    }

    pub fn data(&self) -> &Array4<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array4<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }

    pub fn image(&self, index: usize) -> ArrayView3<'_, f64> {
        self.data.index_axis(Axis(0), index)
    }

    pub fn images(&self) -> impl Iterator<Item = ArrayView3<'_, f64>> {
        self.data.outer_iter()
    }

    /// Images `range` as a new batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> ImageBatch {
        ImageBatch { data: self.data.slice(ndarray::s![range, .., .., ..]).to_owned() }
    }

    pub fn concat(parts: &[ImageBatch]) -> Result<ImageBatch> {
        let views: Vec<_> = parts.iter().map(|b| b.data.view()).collect();
        let data = ndarray::concatenate(Axis(0), &views)
            .map_err(|e| AdaError::Shape(format!("cannot concatenate batches: {e}")))?;
        Ok(ImageBatch { data })
    }

    pub fn require_rgb(&self) -> Result<()> {
        if self.channels() != 3 {
            return Err(AdaError::Shape(format!(
                "expected 3 channels (RGB), got {}",
                self.channels()
            )));
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &ImageBatch) -> f64 {
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

/// Mirror index into `0..n` without repeating the edge sample
/// (`-1 -> 1`, `n -> n - 2`), folding repeatedly for large offsets.
pub fn reflect_index(i: i64, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let n = n as i64;
    let period = 2 * (n - 1);
    let r = i.rem_euclid(period);
    (if r < n { r } else { period - r }) as usize
}
