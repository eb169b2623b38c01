//! Softmax policies that are linear in state features, their score
//! function, and the feedback-scaled policy-gradient update.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::TabularPolicy;
use crate::scalar::{axpy, dot, Scalar};

/// Smallest probability passed to `ln`.
pub const PROB_FLOOR: f64 = 1e-300;

/// Maps states to fixed-length feature vectors.
pub trait FeatureMap<T: Scalar> {
    type State: ?Sized;

    fn dim(&self) -> usize;

    fn features(&self, s: &Self::State) -> Vec<T>;
}

/// Indicator features over `n` discrete states.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OneHot {
    pub n: usize,
}

impl<T: Scalar> FeatureMap<T> for OneHot {
    type State = usize;

    fn dim(&self) -> usize {
        self.n
    }

    fn features(&self, s: &usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.n];
        x[*s] = T::one();
        x
    }
}

/// Row and column indicators for a `width x height` grid (state = `y * width + x`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridFeatures {
    pub width: usize,
    pub height: usize,
}

impl<T: Scalar> FeatureMap<T> for GridFeatures {
    type State = usize;

    fn dim(&self) -> usize {
        self.width + self.height
    }

    fn features(&self, s: &usize) -> Vec<T> {
        let mut x = vec![T::zero(); self.width + self.height];
        x[s % self.width] = T::one();
        x[self.width + s / self.width] = T::one();
        x
    }
}

/// How the per-action bias enters the preferences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BiasMode {
    /// No bias parameters.
    #[default]
    Off,
    /// Preferences get `tanh(theta_a)`; gradients carry the `1 - tanh^2` factor.
    Chain,
    /// Preferences get `tanh(theta_a)`; updates move `theta_a` as if it were
    /// the bias value itself.
    Direct,
}

/// Direction used when feedback moves the parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Plain likelihood-ratio direction `grad pi / pi`.
    #[default]
    LikelihoodRatio,
    /// Pushes the taken action's preference up by the full step and every
    /// other action's down in proportion to its probability.
    PreferenceDirect,
}

/// Softmax over `h(s, a) = w_a . x(s) [+ tanh(theta_a)]`.
///
/// Parameters are laid out as `[w_0 | w_1 | ... | w_{A-1} | theta_0 .. theta_{A-1}]`,
/// the bias block present only when `bias_mode != Off`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPolicy<T> {
    dim: usize,
    n_actions: usize,
    bias_mode: BiasMode,
    update_mode: UpdateMode,
    params: Vec<T>,
}

impl<T: Scalar> ParamPolicy<T> {
    /// All-zero parameters, i.e. the uniform policy.
    pub fn new(dim: usize, n_actions: usize, bias_mode: BiasMode, update_mode: UpdateMode) -> Self {
        let len = n_actions * dim + if bias_mode == BiasMode::Off { 0 } else { n_actions };
        Self { dim, n_actions, bias_mode, update_mode, params: vec![T::zero(); len] }
    }

    pub fn with_params(mut self, params: Vec<T>) -> Result<Self> {
        if params.len() != self.params.len() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.params.len(), params.len())));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy parameters"));
        }
        self.params = params;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn bias_mode(&self) -> BiasMode {
        self.bias_mode
    }

    pub fn update_mode(&self) -> UpdateMode {
        self.update_mode
    }

    pub fn set_update_mode(&mut self, mode: UpdateMode) {
        self.update_mode = mode;
    }

    pub fn param_dim(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn weights(&self, a: usize) -> &[T] {
        &self.params[a * self.dim..(a + 1) * self.dim]
    }

    fn bias(&self, a: usize) -> Option<T> {
        match self.bias_mode {
            BiasMode::Off => None,
            _ => Some(self.params[self.n_actions * self.dim + a]),
        }
    }

    fn check_features(&self, x: &[T]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Shape(format!("feature vector has {} entries, policy expects {}", x.len(), self.dim)));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("state features"));
        }
        Ok(())
    }

    /// Action preferences `h(s, .)`.
    pub fn preferences(&self, x: &[T]) -> Result<Vec<T>> {
        self.check_features(x)?;
        Ok((0..self.n_actions)
            .map(|a| dot(self.weights(a), x) + self.bias(a).map_or(T::zero(), T::tanh))
            .collect())
    }

    /// `pi(s, .)`, computed with max-subtraction.
    pub fn action_distribution(&self, x: &[T]) -> Result<Vec<T>> {
        Ok(softmax(&self.preferences(x)?))
    }

    pub fn log_prob(&self, x: &[T], a: usize) -> Result<T> {
        let p = self.action_distribution(x)?[a];
        Ok(p.max(T::of(PROB_FLOOR)).ln())
    }

    /// `grad log pi(s, a)` in parameter space.
    pub fn score(&self, x: &[T], a: usize) -> Result<Vec<T>> {
        let pi = self.action_distribution(x)?;
        let coeffs: Vec<T> = (0..self.n_actions)
            .map(|b| if b == a { T::one() - pi[b] } else { -pi[b] })
            .collect();
        Ok(self.expand(x, &coeffs))
    }

    /// Parameter-space direction scaled by feedback in an update, per
    /// [`UpdateMode`].
    pub fn update_direction(&self, x: &[T], a: usize) -> Result<Vec<T>> {
        self.check_action(a)?;
        match self.update_mode {
            UpdateMode::LikelihoodRatio => self.score(x, a),
            UpdateMode::PreferenceDirect => {
                let pi = self.action_distribution(x)?;
                let coeffs: Vec<T> = (0..self.n_actions).map(|b| if b == a { T::one() } else { -pi[b] }).collect();
                Ok(self.expand(x, &coeffs))
            }
        }
    }

    /// `params += alpha * f * update_direction(x, a)`.
    pub fn apply_feedback_update(&mut self, x: &[T], a: usize, f: T, alpha: T) -> Result<()> {
        if !f.is_finite() {
            return Err(Error::NonFinite("feedback"));
        }
        if !(alpha > T::zero()) {
            return Err(Error::arg("alpha must be positive"));
        }
        let dir = self.update_direction(x, a)?;
        self.step_along(alpha * f, &dir)
    }

    /// `params += scale * dir`. A zero scale leaves the parameters untouched.
    pub fn step_along(&mut self, scale: T, dir: &[T]) -> Result<()> {
        if dir.len() != self.params.len() {
            return Err(Error::Shape("direction length".into()));
        }
        if scale == T::zero() {
            return Ok(());
        }
        axpy(&mut self.params, scale, dir);
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("policy parameters after update"));
        }
        Ok(())
    }

    /// Tabulates `pi` over states `0..n_states` of a discrete feature map.
    pub fn tabulate<F>(&self, features: &F, n_states: usize) -> Result<TabularPolicy<T>>
    where
        F: FeatureMap<T, State = usize>,
    {
        let rows = (0..n_states)
            .map(|s| self.action_distribution(&features.features(&s)))
            .collect::<Result<Vec<_>>>()?;
        TabularPolicy::from_rows(rows)
    }

    /// Highest-preference action, ties to the lowest index.
    pub fn greedy_action(&self, x: &[T]) -> Result<usize> {
        Ok(crate::scalar::argmax(&self.preferences(x)?))
    }

    /// Per-action coefficient `c_b` spread over the weight blocks (`c_b * x`)
    /// and bias entries.
    fn expand(&self, x: &[T], coeffs: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.params.len());
        for &c in coeffs {
            out.extend(x.iter().map(|&xi| c * xi));
        }
        match self.bias_mode {
            BiasMode::Off => {}
            BiasMode::Direct => out.extend_from_slice(coeffs),
            BiasMode::Chain => {
                for (b, &c) in coeffs.iter().enumerate() {
                    let t = self.params[self.n_actions * self.dim + b].tanh();
                    out.push(c * (T::one() - t * t));
                }
            }
        }
        out
    }

    fn check_action(&self, a: usize) -> Result<()> {
        if a >= self.n_actions {
            return Err(Error::arg(format!("action {a} out of range")));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> PolicyCheckpoint {
        PolicyCheckpoint {
            feature_dim: self.dim,
            n_actions: self.n_actions,
            bias_mode: self.bias_mode,
            update_mode: self.update_mode,
            params: self.params.iter().map(|p| p.as_f64()).collect(),
        }
    }

    pub fn from_checkpoint(ck: &PolicyCheckpoint) -> Result<Self> {
        Self::new(ck.feature_dim, ck.n_actions, ck.bias_mode, ck.update_mode)
            .with_params(ck.params.iter().map(|&p| T::of(p)).collect())
    }
}

/// Flat parameter dump with the header needed to rebuild the policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyCheckpoint {
    pub feature_dim: usize,
    pub n_actions: usize,
    pub bias_mode: BiasMode,
    #[serde(default)]
    pub update_mode: UpdateMode,
    pub params: Vec<f64>,
}

/// Numerically stable softmax.
pub fn softmax<T: Scalar>(h: &[T]) -> Vec<T> {
    let m = h.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = h.iter().map(|&v| (v - m).exp()).collect();
    let z: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tabular2() -> (ParamPolicy<f64>, Vec<f64>) {
        (ParamPolicy::new(1, 2, BiasMode::Off, UpdateMode::LikelihoodRatio), vec![1.0])
    }

    #[test]
    fn zero_parameters_are_uniform() {
        let p: ParamPolicy<f64> = ParamPolicy::new(3, 4, BiasMode::Chain, UpdateMode::PreferenceDirect);
        let pi = p.action_distribution(&[0.3, -1.0, 2.0]).unwrap();
        for v in pi {
            assert_abs_diff_eq!(v, 0.25, epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_of_preference_gap() {
        let pi = softmax(&[1.0f64, 0.0]);
        assert_abs_diff_eq!(pi[0], 0.7311, epsilon = 1e-4);
        assert_abs_diff_eq!(pi[1], 0.2689, epsilon = 1e-4);
        let shifted = softmax(&[1001.0f64, 1000.0]);
        assert_abs_diff_eq!(shifted[0], pi[0], epsilon = 1e-15);
    }

    #[test]
    fn non_finite_features_are_rejected() {
        let (p, _) = tabular2();
        assert!(matches!(p.action_distribution(&[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn uniform_score_blocks() {
        let (p, x) = tabular2();
        assert_eq!(p.score(&x, 0).unwrap(), vec![0.5, -0.5]);
    }

    #[test]
    fn score_vanishes_for_near_deterministic_action() {
        let p = ParamPolicy::new(1, 2, BiasMode::Off, UpdateMode::LikelihoodRatio).with_params(vec![40.0, 0.0]).unwrap();
        let g = p.score(&[1.0], 0).unwrap();
        assert!(g.iter().all(|v: &f64| v.abs() < 1e-15));
    }

    #[test]
    fn feedback_update_examples() {
        let (mut p, x) = tabular2();
        p.apply_feedback_update(&x, 0, 0.0, 1.0).unwrap();
        assert_eq!(p.params(), &[0.0, 0.0]);

        p.apply_feedback_update(&x, 0, 1.0, 1.0).unwrap();
        assert_eq!(p.preferences(&x).unwrap(), vec![0.5, -0.5]);
        assert_abs_diff_eq!(p.action_distribution(&x).unwrap()[0], 0.7311, epsilon = 1e-4);

        assert!(p.apply_feedback_update(&x, 0, f64::INFINITY, 1.0).is_err());
        assert!(p.apply_feedback_update(&x, 0, 1.0, 0.0).is_err());
    }

    #[test]
    fn preference_direct_moves_taken_action_by_full_step() {
        let mut p: ParamPolicy<f64> = ParamPolicy::new(1, 3, BiasMode::Off, UpdateMode::PreferenceDirect);
        p.apply_feedback_update(&[1.0], 1, 2.0, 0.5).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(p.params(), &[-third, 1.0, -third]);
    }

    #[test]
    fn negative_feedback_lowers_probability() {
        let (mut p, x) = tabular2();
        let before = p.action_distribution(&x).unwrap()[1];
        p.apply_feedback_update(&x, 1, -1.0, 0.05).unwrap();
        assert!(p.action_distribution(&x).unwrap()[1] < before);
    }

    #[test]
    fn checkpoint_round_trip() {
        let p = ParamPolicy::new(2, 2, BiasMode::Direct, UpdateMode::PreferenceDirect)
            .with_params(vec![0.1, -0.2, 0.3, 0.4, 1.5, -2.0])
            .unwrap();
        let json = serde_json::to_string(&p.to_checkpoint()).unwrap();
        let back: ParamPolicy<f64> = ParamPolicy::from_checkpoint(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back, p);
    }

    #[test]
    fn grid_features_mark_row_and_column() {
        let f = GridFeatures { width: 5, height: 5 };
        let x: Vec<f64> = f.features(&13);
        assert_eq!(x.iter().filter(|&&v| v == 1.0).count(), 2);
        assert_eq!(x[3], 1.0);
        assert_eq!(x[5 + 2], 1.0);
    }
}
