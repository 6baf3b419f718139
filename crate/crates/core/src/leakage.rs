//! Invertibility checks for augmentation operators on small state spaces.
//!
//! An augmentation leaks when its transition operator has a null space:
//! two different distributions then look the same after augmentation. Group
//! mixtures are tested in the Fourier domain, general operators by SVD.

use nalgebra::DMatrix;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{AdaError, Result};

pub const DEFAULT_TOL: f64 = 1e-9;
/// Frequencies at which the spectrum of a shift distribution on the integer
/// line is sampled.
pub const LINE_FREQUENCIES: usize = 4096;
const PROB_SUM_TOL: f64 = 1e-12;
const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Group {
    /// Cyclic group of the given order; `probs[i]` weights element `i`.
    Cyclic { order: usize },
    /// Integer translations; `probs[i]` weights a shift by `i`.
    IntegerLine,
}

/// A probability distribution over group elements (index 0 is the identity).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    pub group: Group,
    pub probs: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(group: Group, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(AdaError::Domain("probability vector is empty".into()));
        }
        if let Some(bad) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(AdaError::Domain(format!("invalid probability {bad}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOL {
            return Err(AdaError::Domain(format!("probabilities sum to {sum}, not 1")));
        }
        match group {
            Group::Cyclic { order } if order != probs.len() => Err(AdaError::Domain(format!(
                "Z{order} needs {order} probabilities, got {}",
                probs.len()
            ))),
            Group::IntegerLine if probs.len() > LINE_FREQUENCIES => Err(AdaError::Domain(format!(
                "at most {LINE_FREQUENCIES} shifts are supported, got {}",
                probs.len()
            ))),
            _ => Ok(MixtureSpec { group, probs }),
        }
    }

    pub fn cyclic(probs: Vec<f64>) -> Result<Self> {
        MixtureSpec::new(Group::Cyclic { order: probs.len() }, probs)
    }
}

/// Outcome of an invertibility check.
#[derive(Clone, Debug, PartialEq)]
pub struct LeakVerdict {
    pub invertible: bool,
    /// Smallest spectral magnitude or singular value.
    pub min_measure: f64,
    /// Largest over smallest; infinite when the operator is not invertible.
    pub condition: f64,
    /// A direction the operator maps to (numerically) zero.
    pub witness: Option<Vec<f64>>,
    /// Frequencies whose magnitude is at or below the tolerance.
    pub zero_frequencies: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LeakReport {
    pub spec: MixtureSpec,
    pub invertible: bool,
    pub min_measure: f64,
    /// `None` (JSON null) when infinite.
    pub condition: Option<f64>,
    pub witness: Option<Vec<f64>>,
    pub zero_frequencies: Vec<usize>,
}

impl LeakVerdict {
    pub fn report(&self, spec: &MixtureSpec) -> LeakReport {
        LeakReport {
            spec: spec.clone(),
            invertible: self.invertible,
            min_measure: self.min_measure,
            condition: self.condition.is_finite().then_some(self.condition),
            witness: self.witness.clone(),
            zero_frequencies: self.zero_frequencies.clone(),
        }
    }
}

fn condition(max: f64, min: f64, tol: f64) -> f64 {
    if min > tol {
        max / min
    } else {
        f64::INFINITY
    }
}

/// Magnitudes of the DFT of `values` zero-padded to `len`.
pub fn dft_magnitudes(values: &[f64], len: usize) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = values.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(len, Complex::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    buf.iter().map(|c| c.norm()).collect()
}

/// Checks the spectrum of the mixture for zeros.
pub fn dft_zero_check(spec: &MixtureSpec, tol: f64) -> Result<LeakVerdict> {
    let spec = MixtureSpec::new(spec.group, spec.probs.clone())?;
    let len = match spec.group {
        Group::Cyclic { order } => order,
        Group::IntegerLine => LINE_FREQUENCIES,
    };
    let mags = dft_magnitudes(&spec.probs, len);
    let min = mags.iter().copied().fold(f64::INFINITY, f64::min);
    let max = mags.iter().copied().fold(0.0, f64::max);
    let zero_frequencies = mags.iter().enumerate().filter(|(_, m)| **m <= tol).map(|(k, _)| k).collect();
    Ok(LeakVerdict {
        invertible: min > tol,
        min_measure: min,
        condition: condition(max, min, tol),
        witness: None,
        zero_frequencies,
    })
}

/// Uniform choice among the `order` group elements, applied with
/// probability `p` and skipped otherwise.
pub fn gated_uniform_mixture(order: usize, p: f64) -> Result<MixtureSpec> {
    if order == 0 {
        return Err(AdaError::Domain("group order must be positive".into()));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(AdaError::Domain(format!("probability {p} outside [0, 1]")));
    }
    let share = p / order as f64;
    let mut probs = vec![share; order];
    probs[0] = 1.0 - p + share;
    MixtureSpec::cyclic(probs)
}

/// Column-stochastic transition matrix over a finite state space.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovOperator {
    matrix: DMatrix<f64>,
}

impl MarkovOperator {
    /// Checks that entries are non-negative and columns sum to one.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(AdaError::Shape(format!("operator is {}x{}", matrix.nrows(), matrix.ncols())));
        }
        if matrix.iter().any(|v| !v.is_finite() || *v < -STOCHASTIC_TOL) {
            return Err(AdaError::Domain("operator has a negative or non-finite entry".into()));
        }
        for (j, col) in matrix.column_iter().enumerate() {
            let s: f64 = col.sum();
            if (s - 1.0).abs() > STOCHASTIC_TOL {
                return Err(AdaError::Domain(format!("column {j} sums to {s}")));
            }
        }
        Ok(MarkovOperator { matrix })
    }

    /// Any square linear operator, without the stochastic checks.
    pub fn linear(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(AdaError::Shape(format!("operator is {}x{}", matrix.nrows(), matrix.ncols())));
        }
        Ok(MarkovOperator { matrix })
    }

    pub fn identity(states: usize) -> Self {
        MarkovOperator { matrix: DMatrix::identity(states, states) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn states(&self) -> usize {
        self.matrix.nrows()
    }

    /// Applies `self` after `first`.
    pub fn compose(&self, first: &MarkovOperator) -> MarkovOperator {
        MarkovOperator { matrix: &self.matrix * &first.matrix }
    }

    /// Singular values in decreasing order.
    pub fn singular_values(&self) -> Vec<f64> {
        let mut s: Vec<f64> = self.matrix.singular_values().iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }
}

/// Permutation `s -> (s + i) mod n` for each element `i` of Z_n.
pub fn cyclic_shift_action(order: usize) -> Vec<Vec<usize>> {
    (0..order).map(|i| (0..order).map(|s| (s + i) % order).collect()).collect()
}

fn permutation_matrix(perm: &[usize]) -> DMatrix<f64> {
    let k = perm.len();
    let mut m = DMatrix::zeros(k, k);
    for (s, &t) in perm.iter().enumerate() {
        m[(t, s)] = 1.0;
    }
    m
}

/// `sum_i probs[i] P_i`, where `action[i][s]` is the state that element `i`
/// sends `s` to.
pub fn build_group_operator(spec: &MixtureSpec, states: usize, action: &[Vec<usize>]) -> Result<MarkovOperator> {
    let Group::Cyclic { order } = spec.group else {
        return Err(AdaError::Specification("group operators need a cyclic group".into()));
    };
    if action.len() != order {
        return Err(AdaError::Specification(format!(
            "action has {} elements for Z{order}",
            action.len()
        )));
    }
    for (i, perm) in action.iter().enumerate() {
        let mut seen = vec![false; states];
        if perm.len() != states || !perm.iter().all(|&t| t < states && !std::mem::replace(&mut seen[t], true)) {
            return Err(AdaError::Specification(format!("element {i} is not a permutation of {states} states")));
        }
    }
    for i in 0..order {
        for j in 0..order {
            let composed: Vec<usize> = (0..states).map(|s| action[i][action[j][s]]).collect();
            if composed != action[(i + j) % order] {
                return Err(AdaError::Specification(format!(
                    "action violates the group law: g{i} * g{j} != g{}",
                    (i + j) % order
                )));
            }
        }
    }
    let mut m = DMatrix::zeros(states, states);
    for (p, perm) in spec.probs.iter().zip(action) {
        m += permutation_matrix(perm) * *p;
    }
    MarkovOperator::new(m)
}

/// Shift mixture on `states` points of the integer line; mass pushed past the
/// last state stays there.
pub fn build_line_operator(spec: &MixtureSpec, states: usize) -> Result<MarkovOperator> {
    if spec.group != Group::IntegerLine {
        return Err(AdaError::Specification("line operators need the integer line group".into()));
    }
    if states == 0 {
        return Err(AdaError::Domain("state space is empty".into()));
    }
    let mut m = DMatrix::zeros(states, states);
    for s in 0..states {
        for (shift, p) in spec.probs.iter().enumerate() {
            m[((s + shift).min(states - 1), s)] += p;
        }
    }
    MarkovOperator::new(m)
}

/// SVD-based invertibility check with a null-space witness when singular.
pub fn null_space_witness(op: &MarkovOperator, tol: f64) -> Result<LeakVerdict> {
    let svd = op.matrix.clone().svd(false, true);
    let s = &svd.singular_values;
    let (imin, &min) = s
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .ok_or_else(|| AdaError::Domain("operator is empty".into()))?;
    let max = s.iter().copied().fold(0.0, f64::max);
    let invertible = min > tol;
    let witness = if invertible {
        None
    } else {
        let v_t = svd.v_t.as_ref().ok_or_else(|| AdaError::Internal("SVD without V".into()))?;
        let w: Vec<f64> = v_t.row(imin).iter().copied().collect();
        let residual = (&op.matrix * DMatrix::from_column_slice(w.len(), 1, &w)).norm();
        if residual > 10.0 * tol.max(f64::EPSILON) {
            return Err(AdaError::Internal(format!("null-space witness residual {residual:e}")));
        }
        Some(w)
    };
    Ok(LeakVerdict { invertible, min_measure: min, condition: condition(max, min, tol), witness, zero_frequencies: Vec::new() })
}

fn is_projection(p: &DMatrix<f64>) -> bool {
    p.iter().all(|&v| v == 0.0 || v == 1.0) && (p * p - p).amax() == 0.0
}

/// `p0 I + sum_j weights[j] P_j` for idempotent 0/1 matrices `P_j`.
pub fn build_projection_mixture(
    p0: f64,
    projections: &[DMatrix<f64>],
    weights: &[f64],
    tol: f64,
) -> Result<(MarkovOperator, LeakVerdict)> {
    let states = projections.first().map_or(0, |p| p.nrows());
    if projections.len() != weights.len() {
        return Err(AdaError::Specification(format!(
            "{} projections but {} weights",
            projections.len(),
            weights.len()
        )));
    }
    if projections.is_empty() {
        return Err(AdaError::Specification("no projections given".into()));
    }
    if !(p0.is_finite() && p0 >= 0.0) || weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(AdaError::Domain("mixture weights must be non-negative".into()));
    }
    let total = p0 + weights.iter().sum::<f64>();
    if (total - 1.0).abs() > PROB_SUM_TOL {
        return Err(AdaError::Domain(format!("mixture weights sum to {total}, not 1")));
    }
    let mut m = DMatrix::identity(states, states) * p0;
    for (j, (p, w)) in projections.iter().zip(weights).enumerate() {
        if p.nrows() != states || p.ncols() != states {
            return Err(AdaError::Specification(format!("projection {j} is not {states}x{states}")));
        }
        if !is_projection(p) {
            return Err(AdaError::Specification(format!("matrix {j} is not an idempotent 0/1 matrix")));
        }
        m += p * *w;
    }
    let op = MarkovOperator::linear(m)?;
    let verdict = null_space_witness(&op, tol)?;
    // For orthogonal projections <x, T x> >= p0 |x|^2, which bounds the
    // smallest singular value from below.
    if projections.iter().all(|p| *p == p.transpose()) && verdict.min_measure < p0 - 1e-9 {
        return Err(AdaError::Internal(format!(
            "smallest singular value {} below the identity weight {p0}",
            verdict.min_measure
        )));
    }
    Ok((op, verdict))
}

/// Projection onto the coordinates outside `zeroed` (a diagonal 0/1 matrix).
pub fn coordinate_projection(states: usize, zeroed: impl IntoIterator<Item = usize>) -> DMatrix<f64> {
    let mut p = DMatrix::identity(states, states);
    for i in zeroed {
        p[(i, i)] = 0.0;
    }
    p
}

/// Characteristic function of multiplicative noise applied with probability
/// `1 - skip_prob`.
pub fn product_noise_cf(omega: &[f64], skip_prob: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&skip_prob) {
        return Err(AdaError::Domain(format!("skip probability {skip_prob} outside [0, 1)")));
    }
    let norm2: f64 = omega.iter().map(|w| w * w).sum();
    let q = 1.0 - skip_prob;
    let value = skip_prob + q / (norm2 + 1.0).sqrt();
    if !(value > 0.0) {
        return Err(AdaError::Internal(format!("characteristic function {value} is not positive")));
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn z(probs: &[f64]) -> MixtureSpec {
        MixtureSpec::cyclic(probs.to_vec()).unwrap()
    }

    #[test]
    fn uniform_z4_is_singular() {
        let v = dft_zero_check(&z(&[0.25; 4]), DEFAULT_TOL).unwrap();
        assert!(!v.invertible);
        assert_eq!(v.zero_frequencies, vec![1, 2, 3]);
        assert_eq!(v.condition, f64::INFINITY);
        assert_abs_diff_eq!(dft_magnitudes(&[0.25; 4], 4)[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn half_half_has_single_zero() {
        let v = dft_zero_check(&z(&[0.5, 0.5, 0.0, 0.0]), DEFAULT_TOL).unwrap();
        assert!(!v.invertible);
        assert_eq!(v.zero_frequencies, vec![2]);
    }

    #[test]
    fn identity_mixture_is_perfectly_conditioned() {
        let v = dft_zero_check(&z(&[1.0, 0.0, 0.0, 0.0]), DEFAULT_TOL).unwrap();
        assert!(v.invertible);
        assert_eq!(v.condition, 1.0);
    }

    #[test]
    fn invalid_probabilities_rejected() {
        assert!(matches!(MixtureSpec::cyclic(vec![0.5, 0.6]), Err(AdaError::Domain(_))));
        assert!(matches!(MixtureSpec::cyclic(vec![1.5, -0.5]), Err(AdaError::Domain(_))));
        assert!(matches!(MixtureSpec::new(Group::Cyclic { order: 3 }, vec![1.0]), Err(AdaError::Domain(_))));
    }

    #[test]
    fn gated_mixture_condition() {
        let spec = gated_uniform_mixture(4, 0.5).unwrap();
        assert_eq!(spec.probs, vec![0.625, 0.125, 0.125, 0.125]);
        assert_abs_diff_eq!(dft_zero_check(&spec, DEFAULT_TOL).unwrap().condition, 2.0, epsilon = 1e-12);
        for (p, want) in [(0.0, 1.0), (0.9, 10.0), (0.999, 1000.0)] {
            let c = dft_zero_check(&gated_uniform_mixture(4, p).unwrap(), DEFAULT_TOL).unwrap().condition;
            assert_abs_diff_eq!(c, want, epsilon = 1e-9 * want);
        }
    }

    #[test]
    fn group_operator_examples() {
        let action = cyclic_shift_action(4);
        let id = build_group_operator(&z(&[1.0, 0.0, 0.0, 0.0]), 4, &action).unwrap();
        assert_eq!(id.matrix(), &DMatrix::identity(4, 4));
        let uni = build_group_operator(&z(&[0.25; 4]), 4, &action).unwrap();
        assert!(uni.matrix().iter().all(|&v| (v - 0.25).abs() < 1e-15));
        let flip = build_group_operator(&z(&[0.5, 0.5]), 2, &cyclic_shift_action(2)).unwrap();
        assert_eq!(flip.matrix(), &DMatrix::from_element(2, 2, 0.5));
        let v = null_space_witness(&flip, DEFAULT_TOL).unwrap();
        assert!(!v.invertible);
        assert!(v.min_measure < 1e-15);
    }

    #[test]
    fn group_law_violation_rejected() {
        let mut action = cyclic_shift_action(4);
        action.swap(1, 3);
        action[1] = vec![1, 0, 2, 3];
        assert!(matches!(
            build_group_operator(&z(&[0.25; 4]), 4, &action),
            Err(AdaError::Specification(_))
        ));
    }

    #[test]
    fn witness_of_uniform_operator() {
        let uni = build_group_operator(&z(&[0.25; 4]), 4, &cyclic_shift_action(4)).unwrap();
        let v = null_space_witness(&uni, DEFAULT_TOL).unwrap();
        let w = v.witness.unwrap();
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(w.iter().map(|x| x * x).sum::<f64>(), 1.0, epsilon = 1e-12);
        assert!(null_space_witness(&MarkovOperator::identity(4), DEFAULT_TOL).unwrap().witness.is_none());
    }

    #[test]
    fn gated_operator_min_singular_value() {
        let spec = gated_uniform_mixture(4, 0.5).unwrap();
        let op = build_group_operator(&spec, 4, &cyclic_shift_action(4)).unwrap();
        let v = null_space_witness(&op, DEFAULT_TOL).unwrap();
        assert!(v.invertible);
        assert_abs_diff_eq!(v.min_measure, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn projection_mixtures() {
        let half = coordinate_projection(8, 0..4);
        let (_, v) = build_projection_mixture(0.5, &[half.clone()], &[0.5], DEFAULT_TOL).unwrap();
        assert!(v.invertible);
        assert!(v.min_measure >= 0.5 - 1e-9);
        let (_, v) = build_projection_mixture(0.0, &[half], &[1.0], DEFAULT_TOL).unwrap();
        assert!(!v.invertible);
        let bad = DMatrix::from_element(2, 2, 1.0);
        assert!(matches!(
            build_projection_mixture(0.5, &[bad], &[0.5], DEFAULT_TOL),
            Err(AdaError::Specification(_))
        ));
    }

    #[test]
    fn line_operator_absorbs_at_edge() {
        let spec = MixtureSpec::new(Group::IntegerLine, vec![0.5, 0.5]).unwrap();
        let op = build_line_operator(&spec, 3).unwrap();
        assert_eq!(op.matrix()[(2, 2)], 1.0);
        assert_eq!(op.matrix()[(1, 0)], 0.5);
        // 0.5 + 0.5 e^{-iw} vanishes at w = pi.
        let v = dft_zero_check(&spec, DEFAULT_TOL).unwrap();
        assert!(!v.invertible);
        assert_eq!(v.zero_frequencies, vec![LINE_FREQUENCIES / 2]);
    }

    #[test]
    fn product_noise_values() {
        assert_eq!(product_noise_cf(&[0.0, 0.0], 0.3).unwrap(), 1.0);
        assert_abs_diff_eq!(product_noise_cf(&[1.0], 0.0).unwrap(), std::f64::consts::FRAC_1_SQRT_2, epsilon = 1e-15);
        let far = product_noise_cf(&[1e12], 0.5).unwrap();
        assert!(far > 0.5 && far < 0.5 + 1e-9);
        assert!(product_noise_cf(&[1.0], 1.0).is_err());
    }

    #[test]
    fn report_serializes_infinite_condition_as_null() {
        let spec = z(&[0.25; 4]);
        let r = dft_zero_check(&spec, DEFAULT_TOL).unwrap().report(&spec);
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["condition"].is_null());
        assert_eq!(json["invertible"], false);
    }
}
