//! Stochastic parameter selection for the 18 augmentations.
//!
//! Each sampler draws gates and values from a [`ParamRng`] and accumulates the
//! fired steps into a closed-form descriptor: a 3x3 homogeneous matrix for
//! geometry, a 4x4 homogeneous matrix for color, per-band gains for filtering
//! and the corruption parameters. Matrices are left-multiplied as each step
//! fires, so the last step in the sequence is the outermost factor.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{AdaError, Result};
use crate::rng::{ParamRng, Stage};

/// Log-normal spread of the two geometric scalings, in octaves.
pub const SCALE_STD: f64 = 0.2;
/// Std-dev of the fractional translation, relative to image size.
pub const FRAC_TRANSLATE_STD: f64 = 0.125;
/// Half-width of the integer translation range, relative to image size.
pub const INT_TRANSLATE_MAX: f64 = 0.125;
pub const BRIGHTNESS_STD: f64 = 0.2;
pub const CONTRAST_STD: f64 = 0.5;
pub const SATURATION_STD: f64 = 1.0;
pub const BAND_GAIN_STD: f64 = 1.0;
pub const NOISE_STD: f64 = 0.1;
/// Expected power per band under a 1/f spectrum.
pub const BAND_POWER: [f64; 4] = [10.0 / 13.0, 1.0 / 13.0, 1.0 / 13.0, 1.0 / 13.0];

/// Augmentation probability shared by every transformation.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct AugmentStrength(f64);

impl AugmentStrength {
    pub const ZERO: AugmentStrength = AugmentStrength(0.0);

    pub fn new(p: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&p) {
            Ok(AugmentStrength(p))
        } else {
            Err(AdaError::Domain(format!("augmentation probability {p} outside [0, 1]")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// Per-rotation probability such that at least one of the two rotations
    /// fires with probability `p`.
    pub fn rotation_probability(self) -> f64 {
        1.0 - (1.0 - self.0).sqrt()
    }
}

impl TryFrom<f64> for AugmentStrength {
    type Error = AdaError;

    fn try_from(p: f64) -> Result<Self> {
        AugmentStrength::new(p)
    }
}

impl From<AugmentStrength> for f64 {
    fn from(p: AugmentStrength) -> f64 {
        p.0
    }
}

/// Homogeneous 2D transform acting on column vectors `[x, y, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Homogeneous2D(pub [[f64; 3]; 3]);

impl Homogeneous2D {
    pub const IDENTITY: Homogeneous2D =
        Homogeneous2D([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn scale(sx: f64, sy: f64) -> Self {
        Homogeneous2D([[sx, 0.0, 0.0], [0.0, sy, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn rotate(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        Homogeneous2D([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    /// Rotation by `k * 90` degrees with exact integer entries.
    pub fn rotate_quarter(k: i64) -> Self {
        let (c, s) = match k.rem_euclid(4) {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        Homogeneous2D([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    }

    pub fn translate(tx: f64, ty: f64) -> Self {
        Homogeneous2D([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])
    }

    pub fn then(&self, outer: &Homogeneous2D) -> Homogeneous2D {
        outer.mul(self)
    }

    pub fn mul(&self, rhs: &Homogeneous2D) -> Homogeneous2D {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Homogeneous2D(out)
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Inverse of an affine matrix (bottom row `[0, 0, 1]`).
    pub fn inverse(&self) -> Result<Homogeneous2D> {
        let m = &self.0;
        let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if det.abs() <= 1e-12 || !det.is_finite() {
            return Err(AdaError::Domain(format!("singular geometric transform (det {det})")));
        }
        let (a, b, c, d) = (m[1][1] / det, -m[0][1] / det, -m[1][0] / det, m[0][0] / det);
        let (tx, ty) = (m[0][2], m[1][2]);
        Ok(Homogeneous2D([
            [a, b, -(a * tx + b * ty)],
            [c, d, -(c * tx + d * ty)],
            [0.0, 0.0, 1.0],
        ]))
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.0;
        (m[0][0] * x + m[0][1] * y + m[0][2], m[1][0] * x + m[1][1] * y + m[1][2])
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// Homogeneous color transform acting on `[r, g, b, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorMatrix(pub [[f64; 4]; 4]);

impl ColorMatrix {
    pub const IDENTITY: ColorMatrix = ColorMatrix([
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
    ]);

    pub fn translate(tr: f64, tg: f64, tb: f64) -> Self {
        let mut m = Self::IDENTITY;
        m.0[0][3] = tr;
        m.0[1][3] = tg;
        m.0[2][3] = tb;
        m
    }

    pub fn scale(sr: f64, sg: f64, sb: f64) -> Self {
        let mut m = Self::IDENTITY;
        m.0[0][0] = sr;
        m.0[1][1] = sg;
        m.0[2][2] = sb;
        m
    }

    /// `I - 2 v v^T` with `v` the unit luma axis.
    pub fn luma_flip() -> Self {
        let mut m = Self::IDENTITY;
        for row in m.0.iter_mut().take(3) {
            for v in row.iter_mut().take(3) {
                *v -= 2.0 / 3.0;
            }
        }
        m
    }

    /// Rotation by `theta` about the luma axis (Rodrigues form).
    pub fn hue_rotation(theta: f64) -> Self {
        let (s, c) = theta.sin_cos();
        let k = 1.0 / 3.0_f64.sqrt();
        let axis = [k, k, k];
        // Cross-product matrix of the axis.
        let cross = [[0.0, -k, k], [k, 0.0, -k], [-k, k, 0.0]];
        let mut m = Self::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                let delta = if i == j { 1.0 } else { 0.0 };
                m.0[i][j] = c * delta + s * cross[i][j] + (1.0 - c) * axis[i] * axis[j];
            }
        }
        m
    }

    /// Keeps the luma component and scales chroma by `s`.
    ///
    /// Only the RGB block carries the scaling; the homogeneous coordinate
    /// stays 1.
    pub fn saturation(s: f64) -> Self {
        let mut m = Self::IDENTITY;
        for i in 0..3 {
            for j in 0..3 {
                let proj = 1.0 / 3.0;
                let delta = if i == j { 1.0 } else { 0.0 };
                m.0[i][j] = proj + (delta - proj) * s;
            }
        }
        m
    }

    pub fn mul(&self, rhs: &ColorMatrix) -> ColorMatrix {
        let (a, b) = (&self.0, &rhs.0);
        let mut out = [[0.0; 4]; 4];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (0..4).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        ColorMatrix(out)
    }

    pub fn apply(&self, rgb: [f64; 3]) -> [f64; 3] {
        let m = &self.0;
        let mut out = [0.0; 3];
        for (i, o) in out.iter_mut().enumerate() {
            *o = m[i][0] * rgb[0] + m[i][1] * rgb[1] + m[i][2] * rgb[2] + m[i][3];
        }
        out
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }
}

/// One fired geometric sub-transform with its sampled values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum GeomStep {
    XFlip { i: u8 },
    Rotate90 { i: u8 },
    IntTranslate { tx: f64, ty: f64 },
    IsoScale { s: f64 },
    PreRotate { theta: f64 },
    AnisoScale { s: f64 },
    PostRotate { theta: f64 },
    FracTranslate { tx: f64, ty: f64 },
}

impl GeomStep {
    pub fn matrix(&self, width: usize, height: usize) -> Homogeneous2D {
        let (w, h) = (width as f64, height as f64);
        match *self {
            GeomStep::XFlip { i } => Homogeneous2D::scale(1.0 - 2.0 * f64::from(i), 1.0),
            GeomStep::Rotate90 { i } => Homogeneous2D::rotate_quarter(-i64::from(i)),
            GeomStep::IntTranslate { tx, ty } => {
                Homogeneous2D::translate((tx * w).round(), (ty * h).round())
            }
            GeomStep::IsoScale { s } => Homogeneous2D::scale(s, s),
            GeomStep::PreRotate { theta } | GeomStep::PostRotate { theta } => {
                Homogeneous2D::rotate(-theta)
            }
            GeomStep::AnisoScale { s } => Homogeneous2D::scale(s, 1.0 / s),
            GeomStep::FracTranslate { tx, ty } => Homogeneous2D::translate(tx * w, ty * h),
        }
    }

    pub fn is_blit(&self) -> bool {
        matches!(
            self,
            GeomStep::XFlip { .. } | GeomStep::Rotate90 { .. } | GeomStep::IntTranslate { .. }
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeomParams {
    pub matrix: Homogeneous2D,
    pub fired: Vec<GeomStep>,
}

impl GeomParams {
    pub fn identity() -> Self {
        GeomParams { matrix: Homogeneous2D::IDENTITY, fired: Vec::new() }
    }

    /// Rebuilds the accumulated matrix from a list of steps.
    pub fn from_steps(steps: Vec<GeomStep>, width: usize, height: usize) -> Self {
        let matrix = steps
            .iter()
            .fold(Homogeneous2D::IDENTITY, |g, step| step.matrix(width, height).mul(&g));
        GeomParams { matrix, fired: steps }
    }
}

/// Which geometric groups to sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GeomGroups {
    pub blit: bool,
    pub general: bool,
}

impl GeomGroups {
    pub const ALL: GeomGroups = GeomGroups { blit: true, general: true };
}

fn lognormal(rng: &mut impl ParamRng, stage: Stage, std_octaves: f64) -> f64 {
    (std_octaves * rng.normal(stage)).exp2()
}

fn uniform_int(rng: &mut impl ParamRng, stage: Stage, count: u8) -> u8 {
    let u = rng.uniform(stage);
    ((u * f64::from(count)) as u8).min(count - 1)
}

fn uniform_range(rng: &mut impl ParamRng, stage: Stage, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * rng.uniform(stage)
}

pub fn sample_geom(
    p: AugmentStrength,
    width: usize,
    height: usize,
    rng: &mut impl ParamRng,
) -> Result<GeomParams> {
    sample_geom_groups(p, width, height, GeomGroups::ALL, rng)
}

/// Samples pixel blitting and/or general geometric steps.
pub fn sample_geom_groups(
    p: AugmentStrength,
    width: usize,
    height: usize,
    groups: GeomGroups,
    rng: &mut impl ParamRng,
) -> Result<GeomParams> {
    if width == 0 || height == 0 {
        return Err(AdaError::Shape(format!("empty image {width}x{height}")));
    }
    let p = p.get();
    let mut steps = Vec::new();

    if groups.blit {
        if rng.gate(Stage::XFlip, p) {
            steps.push(GeomStep::XFlip { i: uniform_int(rng, Stage::XFlip, 2) });
        }
        if rng.gate(Stage::Rotate90, p) {
            steps.push(GeomStep::Rotate90 { i: uniform_int(rng, Stage::Rotate90, 4) });
        }
        if rng.gate(Stage::IntTranslate, p) {
            let m = INT_TRANSLATE_MAX;
            let tx = uniform_range(rng, Stage::IntTranslate, -m, m);
            let ty = uniform_range(rng, Stage::IntTranslate, -m, m);
            steps.push(GeomStep::IntTranslate { tx, ty });
        }
    }

    if groups.general {
        if rng.gate(Stage::IsoScale, p) {
            steps.push(GeomStep::IsoScale { s: lognormal(rng, Stage::IsoScale, SCALE_STD) });
        }
        let p_rot = AugmentStrength(p).rotation_probability();
        if rng.gate(Stage::PreRotate, p_rot) {
            let theta = uniform_range(rng, Stage::PreRotate, -PI, PI);
            steps.push(GeomStep::PreRotate { theta });
        }
        if rng.gate(Stage::AnisoScale, p) {
            steps.push(GeomStep::AnisoScale { s: lognormal(rng, Stage::AnisoScale, SCALE_STD) });
        }
        if rng.gate(Stage::PostRotate, p_rot) {
            let theta = uniform_range(rng, Stage::PostRotate, -PI, PI);
            steps.push(GeomStep::PostRotate { theta });
        }
        if rng.gate(Stage::FracTranslate, p) {
            let tx = FRAC_TRANSLATE_STD * rng.normal(Stage::FracTranslate);
            let ty = FRAC_TRANSLATE_STD * rng.normal(Stage::FracTranslate);
            steps.push(GeomStep::FracTranslate { tx, ty });
        }
    }

    Ok(GeomParams::from_steps(steps, width, height))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ColorStep {
    Brightness { b: f64 },
    Contrast { c: f64 },
    LumaFlip { i: u8 },
    Hue { theta: f64 },
    Saturation { s: f64 },
}

impl ColorStep {
    pub fn matrix(&self) -> ColorMatrix {
        match *self {
            ColorStep::Brightness { b } => ColorMatrix::translate(b, b, b),
            ColorStep::Contrast { c } => ColorMatrix::scale(c, c, c),
            ColorStep::LumaFlip { i } => {
                if i == 0 {
                    ColorMatrix::IDENTITY
                } else {
                    ColorMatrix::luma_flip()
                }
            }
            ColorStep::Hue { theta } => ColorMatrix::hue_rotation(theta),
            ColorStep::Saturation { s } => ColorMatrix::saturation(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorParams {
    pub matrix: ColorMatrix,
    pub fired: Vec<ColorStep>,
}

impl ColorParams {
    pub fn identity() -> Self {
        ColorParams { matrix: ColorMatrix::IDENTITY, fired: Vec::new() }
    }

    pub fn from_steps(steps: Vec<ColorStep>) -> Self {
        let matrix = steps.iter().fold(ColorMatrix::IDENTITY, |c, step| step.matrix().mul(&c));
        ColorParams { matrix, fired: steps }
    }
}

pub fn sample_color(p: AugmentStrength, rng: &mut impl ParamRng) -> Result<ColorParams> {
    let p = p.get();
    let mut steps = Vec::new();
    if rng.gate(Stage::Brightness, p) {
        steps.push(ColorStep::Brightness { b: BRIGHTNESS_STD * rng.normal(Stage::Brightness) });
    }
    if rng.gate(Stage::Contrast, p) {
        steps.push(ColorStep::Contrast { c: lognormal(rng, Stage::Contrast, CONTRAST_STD) });
    }
    if rng.gate(Stage::LumaFlip, p) {
        steps.push(ColorStep::LumaFlip { i: uniform_int(rng, Stage::LumaFlip, 2) });
    }
    if rng.gate(Stage::Hue, p) {
        steps.push(ColorStep::Hue { theta: uniform_range(rng, Stage::Hue, -PI, PI) });
    }
    if rng.gate(Stage::Saturation, p) {
        steps.push(ColorStep::Saturation { s: lognormal(rng, Stage::Saturation, SATURATION_STD) });
    }
    Ok(ColorParams::from_steps(steps))
}

/// Accumulated per-band gains for the four frequency bands.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterGain {
    pub gains: [f64; 4],
    pub fired: [bool; 4],
}

impl FilterGain {
    pub const UNITY: FilterGain = FilterGain { gains: [1.0; 4], fired: [false; 4] };

    /// Multiplies in one amplification of band `band` by the raw factor
    /// `raw`, normalized so the expected power is unchanged.
    pub fn amplify(&mut self, band: usize, raw: f64) {
        let t = normalized_band_gain(band, raw);
        for (g, t) in self.gains.iter_mut().zip(t) {
            *g *= t;
        }
        self.fired[band] = true;
    }

    pub fn is_unity(&self) -> bool {
        self.gains == [1.0; 4]
    }
}

/// The temporary gain vector: ones except `raw` at `band`, scaled to unit
/// expected power.
pub fn normalized_band_gain(band: usize, raw: f64) -> [f64; 4] {
    let mut t = [1.0; 4];
    t[band] = raw;
    let power: f64 = BAND_POWER.iter().zip(&t).map(|(l, t)| l * t * t).sum();
    let norm = power.sqrt();
    t.map(|v| v / norm)
}

pub fn sample_filter(p: AugmentStrength, rng: &mut impl ParamRng) -> Result<FilterGain> {
    let mut gain = FilterGain::UNITY;
    for (band, stage) in Stage::BANDS.into_iter().enumerate() {
        if rng.gate(stage, p.get()) {
            let raw = lognormal(rng, stage, BAND_GAIN_STD);
            gain.amplify(band, raw);
        }
    }
    Ok(gain)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionParams {
    pub noise_sigma: f64,
    pub cutout_center: Option<(f64, f64)>,
}

impl CorruptionParams {
    pub const NONE: CorruptionParams = CorruptionParams { noise_sigma: 0.0, cutout_center: None };
}

/// Mean of the half-normal noise std-dev when the noise gate fires.
pub const MEAN_NOISE_SIGMA: f64 = NOISE_STD * FRAC_1_SQRT_2 * std::f64::consts::FRAC_2_SQRT_PI;

pub fn sample_corruption(p: AugmentStrength, rng: &mut impl ParamRng) -> Result<CorruptionParams> {
    let p = p.get();
    let noise_sigma = if rng.gate(Stage::Noise, p) {
        (NOISE_STD * rng.normal(Stage::Noise)).abs()
    } else {
        0.0
    };
    let cutout_center = if rng.gate(Stage::Cutout, p) {
        Some((rng.uniform(Stage::Cutout), rng.uniform(Stage::Cutout)))
    } else {
        None
    };
    Ok(CorruptionParams { noise_sigma, cutout_center })
}
