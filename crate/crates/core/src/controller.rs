//! Adaptive augmentation strength: overfitting heuristics and the update
//! rule that steers `p` toward a target heuristic value.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AdaError, Result};
use crate::params::AugmentStrength;

pub const DEFAULT_TARGET: f64 = 0.6;
pub const DEFAULT_WINDOW: usize = 4;
pub const DEFAULT_RAMP_IMAGES: f64 = 500_000.0;
const DEGENERATE_DENOMINATOR: f64 = 1e-9;

/// Discriminator outputs collected for one minibatch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverfitStats {
    pub d_train: Vec<f64>,
    #[serde(rename = "d_gen")]
    pub d_generated: Vec<f64>,
    #[serde(rename = "d_val", default, skip_serializing_if = "Option::is_none")]
    pub d_validation: Option<Vec<f64>>,
}

impl OverfitStats {
    pub fn train_only(d_train: Vec<f64>) -> Self {
        OverfitStats { d_train, ..Default::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Heuristic {
    Rt,
    Rv,
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn mean(values: &[f64], what: &str) -> Result<f64> {
    if values.is_empty() {
        return Err(AdaError::Domain(format!("{what} is empty")));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

fn require_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(AdaError::Domain(format!("{what} contains a non-finite value")));
    }
    Ok(())
}

/// Mean sign of the discriminator outputs on training reals.
pub fn heuristic_rt(stats: &OverfitStats) -> Result<f64> {
    require_finite(&stats.d_train, "d_train")?;
    let signs: Vec<f64> = stats.d_train.iter().map(|&d| sign(d)).collect();
    mean(&signs, "d_train")
}

fn rv_from_means(train: f64, val: f64, gen: f64) -> Result<f64> {
    let denom = train - gen;
    if denom.abs() <= DEGENERATE_DENOMINATOR {
        return Err(AdaError::Degenerate(format!(
            "E[D_train] - E[D_generated] = {denom:e} is too close to zero"
        )));
    }
    Ok((train - val) / denom)
}

/// Position of validation outputs between training and generated outputs.
pub fn heuristic_rv(stats: &OverfitStats) -> Result<f64> {
    let val = stats
        .d_validation
        .as_deref()
        .ok_or_else(|| AdaError::Config("the rv heuristic needs validation outputs".into()))?;
    require_finite(&stats.d_train, "d_train")?;
    require_finite(&stats.d_generated, "d_gen")?;
    require_finite(val, "d_val")?;
    rv_from_means(
        mean(&stats.d_train, "d_train")?,
        mean(val, "d_val")?,
        mean(&stats.d_generated, "d_gen")?,
    )
}

/// Running sums over the current window.
#[derive(Clone, Debug, Default, PartialEq)]
struct Accumulator {
    minibatches: usize,
    images: u64,
    sign_sum: f64,
    train_sum: f64,
    train_count: usize,
    val_sum: f64,
    val_count: usize,
    gen_sum: f64,
    gen_count: usize,
}

/// Lock-free read handle for the current `p`.
#[derive(Clone, Debug)]
pub struct PublishedStrength(Arc<AtomicU64>);

impl PublishedStrength {
    fn new(p: f64) -> Self {
        PublishedStrength(Arc::new(AtomicU64::new(p.to_bits())))
    }

    fn store(&self, p: f64) {
        self.0.store(p.to_bits(), Ordering::Release);
    }

    pub fn get(&self) -> f64 {
        f64::from_bits(self.0.load(Ordering::Acquire))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ControllerSnapshot {
    p: f64,
    images_seen: u64,
    heuristic: Heuristic,
    target: f64,
    window: usize,
    step_per_image: f64,
}

/// What a call to [`ControllerState::update`] did.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    /// Stats added to the window; no adjustment yet.
    Accumulated,
    /// The window closed and `p` moved by `delta` (after clamping).
    Adjusted { heuristic: f64, delta: f64 },
    /// The window closed but the heuristic was degenerate.
    Skipped { reason: String },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "ControllerSnapshot", into = "ControllerSnapshot")]
pub struct ControllerState {
    p: AugmentStrength,
    images_seen: u64,
    heuristic: Heuristic,
    target: f64,
    window: usize,
    step_per_image: f64,
    acc: Accumulator,
    published: PublishedStrength,
}

impl Clone for ControllerState {
    /// The clone gets its own published value.
    fn clone(&self) -> Self {
        ControllerState {
            acc: self.acc.clone(),
            published: PublishedStrength::new(self.p.get()),
            ..*self
        }
    }
}

impl PartialEq for ControllerState {
    fn eq(&self, other: &Self) -> bool {
        ControllerSnapshot::from(self.clone()) == ControllerSnapshot::from(other.clone())
            && self.acc == other.acc
    }
}

impl TryFrom<ControllerSnapshot> for ControllerState {
    type Error = AdaError;

    fn try_from(s: ControllerSnapshot) -> Result<Self> {
        let mut state = ControllerState::new(s.heuristic, s.target, s.window, s.step_per_image)?;
        state.set_p(s.p)?;
        state.images_seen = s.images_seen;
        Ok(state)
    }
}

impl From<ControllerState> for ControllerSnapshot {
    fn from(s: ControllerState) -> Self {
        ControllerSnapshot {
            p: s.p.get(),
            images_seen: s.images_seen,
            heuristic: s.heuristic,
            target: s.target,
            window: s.window,
            step_per_image: s.step_per_image,
        }
    }
}

impl Default for ControllerState {
    fn default() -> Self {
        ControllerState::new(Heuristic::Rt, DEFAULT_TARGET, DEFAULT_WINDOW, 1.0 / DEFAULT_RAMP_IMAGES)
            .expect("defaults are valid")
    }
}

impl ControllerState {
    /// Controller starting at `p = 0`.
    pub fn new(heuristic: Heuristic, target: f64, window: usize, step_per_image: f64) -> Result<Self> {
        if !(target > 0.0 && target < 1.0) {
            return Err(AdaError::Config(format!("target {target} must lie in (0, 1)")));
        }
        if window == 0 {
            return Err(AdaError::Config("window must be at least one minibatch".into()));
        }
        if !(step_per_image.is_finite() && step_per_image > 0.0) {
            return Err(AdaError::Config(format!("step per image {step_per_image} must be positive")));
        }
        Ok(ControllerState {
            p: AugmentStrength::ZERO,
            images_seen: 0,
            heuristic,
            target,
            window,
            step_per_image,
            acc: Accumulator::default(),
            published: PublishedStrength::new(0.0),
        })
    }

    /// Controller whose `p` can sweep the full range in `ramp_images` images.
    pub fn with_ramp(heuristic: Heuristic, target: f64, window: usize, ramp_images: f64) -> Result<Self> {
        ControllerState::new(heuristic, target, window, 1.0 / ramp_images)
    }

    pub fn p(&self) -> AugmentStrength {
        self.p
    }

    pub fn set_p(&mut self, p: f64) -> Result<()> {
        self.p = AugmentStrength::new(p)?;
        self.published.store(p);
        Ok(())
    }

    pub fn images_seen(&self) -> u64 {
        self.images_seen
    }

    pub fn heuristic(&self) -> Heuristic {
        self.heuristic
    }

    pub fn target(&self) -> f64 {
        self.target
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn step_per_image(&self) -> f64 {
        self.step_per_image
    }

    /// Handle for concurrent readers; it follows every later update.
    pub fn publisher(&self) -> PublishedStrength {
        self.published.clone()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("controller state serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| AdaError::Config(format!("invalid controller state: {e}")))
    }

    fn validate(&self, stats: &OverfitStats) -> Result<()> {
        match self.heuristic {
            Heuristic::Rt => {
                require_finite(&stats.d_train, "d_train")?;
                mean(&stats.d_train, "d_train").map(|_| ())
            }
            Heuristic::Rv => {
                let val = stats
                    .d_validation
                    .as_deref()
                    .ok_or_else(|| AdaError::Config("the rv heuristic needs validation outputs".into()))?;
                for (v, what) in [(&stats.d_train[..], "d_train"), (&stats.d_generated[..], "d_gen"), (val, "d_val")] {
                    require_finite(v, what)?;
                    mean(v, what)?;
                }
                Ok(())
            }
        }
    }

    fn window_heuristic(&self) -> Result<f64> {
        let a = &self.acc;
        match self.heuristic {
            Heuristic::Rt => Ok(a.sign_sum / a.train_count as f64),
            Heuristic::Rv => rv_from_means(
                a.train_sum / a.train_count as f64,
                a.val_sum / a.val_count as f64,
                a.gen_sum / a.gen_count as f64,
            ),
        }
    }

    /// Adds one minibatch of statistics; every `window` minibatches `p`
    /// moves by `step_per_image` per image seen in the window, up when the
    /// heuristic exceeds the target and down otherwise.
    pub fn update(&mut self, stats: &OverfitStats, minibatch_size: usize) -> Result<UpdateOutcome> {
        if minibatch_size == 0 {
            return Err(AdaError::Domain("minibatch size must be at least 1".into()));
        }
        self.validate(stats)?;

        let a = &mut self.acc;
        a.minibatches += 1;
        a.images += minibatch_size as u64;
        a.sign_sum += stats.d_train.iter().map(|&d| sign(d)).sum::<f64>();
        a.train_sum += stats.d_train.iter().sum::<f64>();
        a.train_count += stats.d_train.len();
        a.gen_sum += stats.d_generated.iter().sum::<f64>();
        a.gen_count += stats.d_generated.len();
        if let Some(val) = &stats.d_validation {
            a.val_sum += val.iter().sum::<f64>();
            a.val_count += val.len();
        }
        self.images_seen += minibatch_size as u64;

        if a.minibatches < self.window {
            return Ok(UpdateOutcome::Accumulated);
        }
        let images = a.images;
        let outcome = match self.window_heuristic() {
            Ok(h) => {
                let step = self.step_per_image * images as f64;
                let old = self.p.get();
                let new = if h > self.target { old + step } else { old - step }.clamp(0.0, 1.0);
                self.set_p(new)?;
                UpdateOutcome::Adjusted { heuristic: h, delta: new - old }
            }
            Err(AdaError::Degenerate(reason)) => UpdateOutcome::Skipped { reason },
            Err(e) => return Err(e),
        };
        self.acc = Accumulator::default();
        Ok(outcome)
    }
}

/// Synthetic discriminator used to exercise the closed loop.
pub trait DiscriminatorModel {
    fn sample(&self, p: f64, batch: usize, rng: &mut ChaCha8Rng) -> OverfitStats;
}

/// Training outputs are positive with probability `(1 + r_t(p)) / 2`, where
/// `r_t(p) = intercept - slope * p` clipped to `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearRtModel {
    pub intercept: f64,
    pub slope: f64,
}

impl LinearRtModel {
    /// A model whose heuristic does not depend on `p`.
    pub fn constant(r: f64) -> Self {
        LinearRtModel { intercept: r, slope: 0.0 }
    }

    pub fn expected_rt(&self, p: f64) -> f64 {
        (self.intercept - self.slope * p).clamp(-1.0, 1.0)
    }

    /// The `p` at which the expected heuristic equals `target`.
    pub fn fixed_point(&self, target: f64) -> Option<f64> {
        if self.slope == 0.0 {
            return None;
        }
        let p = (self.intercept - target) / self.slope;
        (0.0..=1.0).contains(&p).then_some(p)
    }
}

impl DiscriminatorModel for LinearRtModel {
    fn sample(&self, p: f64, batch: usize, rng: &mut ChaCha8Rng) -> OverfitStats {
        let positive = (1.0 + self.expected_rt(p)) / 2.0;
        let d_train = (0..batch)
            .map(|_| {
                let magnitude = rng.random_range(0.1..2.0);
                if rng.random::<f64>() < positive { magnitude } else { -magnitude }
            })
            .collect();
        let d_generated = (0..batch).map(|_| -rng.random_range(0.1..2.0)).collect();
        OverfitStats { d_train, d_generated, d_validation: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub minibatch_index: usize,
    pub images_seen: u64,
    /// Set on minibatches that closed a window.
    pub heuristic: Option<f64>,
    pub p: f64,
}

/// Runs the controller against `model` for `steps` minibatches.
pub fn simulate(
    controller: &ControllerState,
    model: &impl DiscriminatorModel,
    steps: usize,
    minibatch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<TrajectoryPoint>> {
    let mut state = controller.clone();
    let mut out = Vec::with_capacity(steps);
    for i in 0..steps {
        let stats = model.sample(state.p().get(), minibatch_size, rng);
        let heuristic = match state.update(&stats, minibatch_size)? {
            UpdateOutcome::Adjusted { heuristic, .. } => Some(heuristic),
            _ => None,
        };
        out.push(TrajectoryPoint { minibatch_index: i, images_seen: state.images_seen(), heuristic, p: state.p().get() });
    }
    Ok(out)
}
