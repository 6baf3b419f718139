//! The full augmentation call: blit and geometric transforms, color, filter,
//! noise and cutout applied in that order with per-image parameters.

use ndarray::Array3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{
    color_image, color_image_adjoint, corrupt_image, corrupt_image_adjoint, filter_image,
    filter_image_adjoint, build_amplification_filter,
};
use crate::error::{AdaError, Result};
use crate::geometry::GeometryPlan;
use crate::image::ImageBatch;
use crate::params::{
    sample_color, sample_corruption, sample_filter, sample_geom_groups, AugmentStrength,
    ColorParams, CorruptionParams, FilterGain, GeomGroups, GeomParams,
};
use crate::rng::{noise_field_rng, CounterRng};
use crate::wavelet::WaveletFilter;

/// Which augmentation categories are enabled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Categories {
    pub blit: bool,
    pub geom: bool,
    pub color: bool,
    pub filter: bool,
    pub noise: bool,
    pub cutout: bool,
}

impl Categories {
    pub const ALL: Categories =
        Categories { blit: true, geom: true, color: true, filter: true, noise: true, cutout: true };
    pub const NONE: Categories =
        Categories { blit: false, geom: false, color: false, filter: false, noise: false, cutout: false };

    /// Parses a comma-separated list such as `blit,geom,color`.
    pub fn parse_list(list: &str) -> Result<Categories> {
        let mut c = Categories::NONE;
        for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match name {
                "all" => c = Categories::ALL,
                "blit" => c.blit = true,
                "geom" => c.geom = true,
                "color" => c.color = true,
                "filter" => c.filter = true,
                "noise" => c.noise = true,
                "cutout" => c.cutout = true,
                other => return Err(AdaError::Config(format!("unknown category '{other}'"))),
            }
        }
        Ok(c)
    }

    /// Number of probability gates that can fire per image.
    pub fn gate_count(&self) -> usize {
        let mut k = 0;
        if self.blit {
            k += 3;
        }
        if self.geom {
            // The two rotations share one gate budget.
            k += 4;
        }
        if self.color {
            k += 5;
        }
        if self.filter {
            k += 4;
        }
        k + usize::from(self.noise) + usize::from(self.cutout)
    }
}

impl Default for Categories {
    fn default() -> Self {
        Categories { blit: true, geom: true, color: true, ..Categories::NONE }
    }
}

/// Wavelets used for anti-aliased resampling and for the band filters.
#[derive(Clone, Debug, PartialEq)]
pub struct WaveletPair {
    pub resample: WaveletFilter,
    pub bands: WaveletFilter,
}

impl Default for WaveletPair {
    fn default() -> Self {
        WaveletPair { resample: WaveletFilter::sym6(), bands: WaveletFilter::sym2() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub p: AugmentStrength,
    #[serde(default)]
    pub categories: Categories,
    #[serde(default)]
    pub seed: u64,
    #[serde(skip)]
    pub wavelets: WaveletPair,
}

impl PipelineConfig {
    pub fn new(p: f64, categories: Categories, seed: u64) -> Result<Self> {
        Ok(PipelineConfig { p: AugmentStrength::new(p)?, categories, seed, wavelets: WaveletPair::default() })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AdaError::Config(format!("invalid pipeline config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}

/// Everything needed to replay the augmentation of one image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRecord {
    pub image_index: u64,
    /// Geometry draws are repeated once with a fresh stream when the first
    /// transform cannot be padded by reflection.
    pub geometry_attempt: u64,
    pub geom: GeomParams,
    pub color: ColorParams,
    pub filter: FilterGain,
    pub corruption: CorruptionParams,
}

impl AugmentRecord {
    pub fn identity(image_index: u64) -> Self {
        AugmentRecord {
            image_index,
            geometry_attempt: 0,
            geom: GeomParams::identity(),
            color: ColorParams::identity(),
            filter: FilterGain::UNITY,
            corruption: CorruptionParams::NONE,
        }
    }

    /// True when no probability gate fired for this image.
    pub fn is_clean(&self) -> bool {
        self.geom.fired.is_empty()
            && self.color.fired.is_empty()
            && self.filter.fired.iter().all(|f| !f)
            && self.corruption.noise_sigma == 0.0
            && self.corruption.cutout_center.is_none()
    }
}

fn check_input(batch: &ImageBatch) -> Result<()> {
    batch.require_rgb()?;
    if batch.height() == 0 || batch.width() == 0 {
        return Err(AdaError::Shape(format!("empty image {}x{}", batch.width(), batch.height())));
    }
    Ok(())
}

fn geometry_plan(record: &AugmentRecord, width: usize, height: usize, cfg: &PipelineConfig) -> Result<GeometryPlan> {
    let filter = &cfg.wavelets.resample;
    match GeometryPlan::new(&record.geom.matrix, width, height, filter) {
        Err(AdaError::Padding { .. }) => GeometryPlan::clamped(&record.geom.matrix, width, height, filter),
        other => other,
    }
}

/// Draws the parameters for image `image_index`.
pub fn sample_record(cfg: &PipelineConfig, image_index: u64, width: usize, height: usize) -> Result<AugmentRecord> {
    let c = cfg.categories;
    let p = cfg.p;
    let groups = GeomGroups { blit: c.blit, general: c.geom };
    let mut rng = CounterRng::new(cfg.seed, image_index);

    let mut geometry_attempt = 0;
    let mut geom = sample_geom_groups(p, width, height, groups, &mut rng)?;
    let r = cfg.wavelets.resample.resampler();
    if matches!(GeometryPlan::build(&geom.matrix, width, height, &r, false), Err(AdaError::Padding { .. })) {
        geometry_attempt = 1;
        let mut retry = CounterRng::with_attempt(cfg.seed, image_index, 1);
        geom = sample_geom_groups(p, width, height, groups, &mut retry)?;
    }

    let color = if c.color { sample_color(p, &mut rng)? } else { ColorParams::identity() };
    let filter = if c.filter { sample_filter(p, &mut rng)? } else { FilterGain::UNITY };
    let mut corruption = sample_corruption(p, &mut rng)?;
    if !c.noise {
        corruption.noise_sigma = 0.0;
    }
    if !c.cutout {
        corruption.cutout_center = None;
    }
    Ok(AugmentRecord { image_index, geometry_attempt, geom, color, filter, corruption })
}

fn forward_image(img: ndarray::ArrayView3<f64>, record: &AugmentRecord, cfg: &PipelineConfig) -> Result<Array3<f64>> {
    let (_, h, w) = img.dim();
    let plan = geometry_plan(record, w, h, cfg)?;
    let mut x = plan.forward(img)?;
    x = color_image(x.view(), &record.color.matrix);
    if !record.filter.is_unity() {
        let taps = build_amplification_filter(&record.filter, &cfg.wavelets.bands)?;
        x = filter_image(x.view(), &taps);
    }
    if record.corruption != CorruptionParams::NONE {
        let mut noise = noise_field_rng(cfg.seed, record.image_index);
        x = corrupt_image(x.view(), &record.corruption, &mut noise);
    }
    Ok(x)
}

fn adjoint_image(grad: ndarray::ArrayView3<f64>, record: &AugmentRecord, cfg: &PipelineConfig) -> Result<Array3<f64>> {
    let (_, h, w) = grad.dim();
    let mut g = corrupt_image_adjoint(grad, &record.corruption);
    if !record.filter.is_unity() {
        let taps = build_amplification_filter(&record.filter, &cfg.wavelets.bands)?;
        g = filter_image_adjoint(g.view(), &taps);
    }
    g = color_image_adjoint(g.view(), &record.color.matrix);
    geometry_plan(record, w, h, cfg)?.adjoint(g.view())
}

fn check_records(batch: &ImageBatch, records: &[AugmentRecord], cfg: &PipelineConfig) -> Result<()> {
    if records.len() != batch.len() {
        return Err(AdaError::Contract(format!(
            "{} records for a batch of {} images",
            records.len(),
            batch.len()
        )));
    }
    let c = cfg.categories;
    for r in records {
        let blit_fired = r.geom.fired.iter().any(|s| s.is_blit());
        let general_fired = r.geom.fired.iter().any(|s| !s.is_blit());
        let mismatch = (blit_fired && !c.blit)
            || (general_fired && !c.geom)
            || (!r.color.fired.is_empty() && !c.color)
            || (r.filter.fired.iter().any(|&f| f) && !c.filter)
            || (r.corruption.noise_sigma != 0.0 && !c.noise)
            || (r.corruption.cutout_center.is_some() && !c.cutout);
        if mismatch {
            return Err(AdaError::Contract(format!(
                "record for image {} uses a category disabled in the config",
                r.image_index
            )));
        }
    }
    Ok(())
}

/// Augments every image with its own parameters drawn for index
/// `image_index_base + i`.
pub fn augment(batch: &ImageBatch, cfg: &PipelineConfig, image_index_base: u64) -> Result<(ImageBatch, Vec<AugmentRecord>)> {
    check_input(batch)?;
    let (h, w) = (batch.height(), batch.width());
    let records = (0..batch.len() as u64)
        .into_par_iter()
        .map(|i| sample_record(cfg, image_index_base + i, w, h))
        .collect::<Result<Vec<_>>>()?;
    let out = augment_replay(batch, &records, cfg)?;
    Ok((out, records))
}

/// Applies recorded parameters to `batch`.
pub fn augment_replay(batch: &ImageBatch, records: &[AugmentRecord], cfg: &PipelineConfig) -> Result<ImageBatch> {
    check_input(batch)?;
    check_records(batch, records, cfg)?;
    let images = (0..batch.len())
        .into_par_iter()
        .map(|i| forward_image(batch.image(i), &records[i], cfg))
        .collect::<Result<Vec<_>>>()?;
    if images.is_empty() {
        return Ok(batch.clone());
    }
    ImageBatch::from_images(images)
}

/// Vector-Jacobian product of the recorded augmentation with respect to the
/// input images.
pub fn augment_vjp(
    batch: &ImageBatch,
    records: &[AugmentRecord],
    cfg: &PipelineConfig,
    upstream_grad: &ImageBatch,
) -> Result<ImageBatch> {
    check_input(batch)?;
    check_records(batch, records, cfg)?;
    if upstream_grad.data().shape() != batch.data().shape() {
        return Err(AdaError::Contract(format!(
            "gradient shape {:?} does not match batch shape {:?}",
            upstream_grad.data().shape(),
            batch.data().shape()
        )));
    }
    let grads = (0..batch.len())
        .into_par_iter()
        .map(|i| adjoint_image(upstream_grad.image(i), &records[i], cfg))
        .collect::<Result<Vec<_>>>()?;
    if grads.is_empty() {
        return Ok(upstream_grad.clone());
    }
    ImageBatch::from_images(grads)
}
