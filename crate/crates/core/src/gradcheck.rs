//! Finite-difference check of the augmentation vector-Jacobian product.

use ndarray::Array4;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::error::{AdaError, Result};
use crate::image::ImageBatch;
use crate::pipeline::{augment, augment_replay, augment_vjp, Categories, PipelineConfig};

pub const DEFAULT_STEP: f64 = 1e-3;
pub const PASS_THRESHOLD: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOptions {
    pub p: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub batch: usize,
    pub samples: usize,
    pub categories: Categories,
    pub step: f64,
    /// Pixels this close to the border are not sampled.
    pub border: usize,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        GradcheckOptions {
            p: 0.8,
            seed: 0,
            height: 32,
            width: 32,
            batch: 2,
            samples: 100,
            categories: Categories::ALL,
            step: DEFAULT_STEP,
            border: 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckResult {
    pub max_rel_error: f64,
    pub samples: usize,
    /// `(image, channel, row, col)` of the worst sample.
    pub worst: (usize, usize, usize, usize),
}

impl GradcheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= PASS_THRESHOLD
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Random image made of a few low-frequency sinusoids per channel.
pub fn smooth_batch(batch: usize, height: usize, width: usize, rng: &mut impl Rng) -> ImageBatch {
    let mut data = Array4::zeros((batch, 3, height, width));
    for b in 0..batch {
        for c in 0..3 {
            let waves: Vec<[f64; 4]> = (0..4)
                .map(|_| {
                    [
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..3.0),
                        rng.random_range(0.0..2.0 * PI),
                        rng.random_range(0.1..0.25),
                    ]
                })
                .collect();
            for y in 0..height {
                for x in 0..width {
                    let (u, v) = (x as f64 / width as f64, y as f64 / height as f64);
                    data[[b, c, y, x]] = waves
                        .iter()
                        .map(|[fx, fy, ph, amp]| amp * (2.0 * PI * (fx * u + fy * v) + ph).sin())
                        .sum();
                }
            }
        }
    }
    ImageBatch::new(data).expect("finite")
}

/// Compares `augment_vjp` against central differences of
/// `<augment_replay(x), v>` at randomly chosen input pixels.
pub fn gradcheck(opts: &GradcheckOptions) -> Result<GradcheckResult> {
    if opts.height <= 2 * opts.border || opts.width <= 2 * opts.border || opts.batch == 0 {
        return Err(AdaError::Config(format!(
            "image {}x{} too small for a {}-pixel border",
            opts.height, opts.width, opts.border
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x6772_6164);
    let cfg = PipelineConfig::new(opts.p, opts.categories, opts.seed)?;
    let x = smooth_batch(opts.batch, opts.height, opts.width, &mut rng);
    let (_, records) = augment(&x, &cfg, 0)?;
    let v = ImageBatch::new(Array4::from_shape_fn(x.data().raw_dim(), |_| rng.random_range(-1.0..1.0)))?;
    let grad = augment_vjp(&x, &records, &cfg, &v)?;

    let mut worst = (0.0, (0, 0, 0, 0));
    for _ in 0..opts.samples {
        let b = rng.random_range(0..opts.batch);
        let c = rng.random_range(0..3);
        let y = rng.random_range(opts.border..opts.height - opts.border);
        let xx = rng.random_range(opts.border..opts.width - opts.border);

        let image = x.slice(b..b + 1);
        let record = &records[b..b + 1];
        let shifted = |delta: f64| -> Result<ImageBatch> {
            let mut d = image.data().clone();
            d[[0, c, y, xx]] += delta;
            augment_replay(&ImageBatch::new(d)?, record, &cfg)
        };
        let plus = shifted(opts.step)?;
        let minus = shifted(-opts.step)?;
        let vb = v.image(b);
        let fd: f64 = plus
            .image(0)
            .iter()
            .zip(minus.image(0).iter())
            .zip(vb.iter())
            .map(|((p, m), w)| (p - m) * w)
            .sum::<f64>()
            / (2.0 * opts.step);
        let err = relative_error(fd, grad.data()[[b, c, y, xx]]);
        if err > worst.0 || opts.samples == 1 {
            worst = (err, (b, c, y, xx));
        }
    }
    Ok(GradcheckResult { max_rel_error: worst.0, samples: opts.samples, worst: worst.1 })
}
