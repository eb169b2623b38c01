//! Reward-exemplar baseline: feedback is treated as a sample of a reward
//! function, credited uniformly over a reaction-time window and fitted with
//! the delta rule. Actions are chosen myopically and greedily.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{argmax, dot, Scalar};

/// Reaction-time window used to credit feedback to earlier steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CreditWindow {
    pub min_age: f64,
    pub max_age: f64,
    pub step_period: f64,
}

impl Default for CreditWindow {
    fn default() -> Self {
        Self { min_age: 0.2, max_age: 0.8, step_period: 0.033 }
    }
}

impl CreditWindow {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_age >= 0.0 && self.min_age < self.max_age) {
            return Err(Error::Config(format!(
                "credit window [{}, {}] is empty or negative",
                self.min_age, self.max_age
            )));
        }
        if !(self.step_period > 0.0) {
            return Err(Error::Config("step period must be positive".into()));
        }
        Ok(())
    }
}

// absorbs representation error in timestamps such as 0.033 * k
const AGE_SLACK: f64 = 1e-9;

/// Uniform credit over the steps whose age at `feedback_time` lies in the
/// window. Returns `(index into step_times, weight)`; empty if nothing is
/// eligible.
pub fn credit_weights<T: Scalar>(window: &CreditWindow, feedback_time: f64, step_times: &[f64]) -> Vec<(usize, T)> {
    let eligible: Vec<usize> = step_times
        .iter()
        .enumerate()
        .filter(|&(_, &t)| {
            let age = feedback_time - t;
            age >= window.min_age - AGE_SLACK && age <= window.max_age + AGE_SLACK
        })
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Vec::new();
    }
    let w = T::one() / T::of(eligible.len() as f64);
    eligible.into_iter().map(|i| (i, w)).collect()
}

/// Linear per-action estimate `H(s, a) = w_a . x(s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardModel<T> {
    dim: usize,
    n_actions: usize,
    weights: Vec<T>,
    pub alpha: T,
}

/// One credited `(features, action, weight)` triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Credited<T> {
    pub x: Vec<T>,
    pub action: usize,
    pub weight: T,
}

impl<T: Scalar> RewardModel<T> {
    pub fn new(dim: usize, n_actions: usize, alpha: T) -> Self {
        Self { dim, n_actions, weights: vec![T::zero(); dim * n_actions], alpha }
    }

    /// Every weight set so that a one-hot feature predicts `value`.
    pub fn with_initial_estimate(mut self, value: T) -> Self {
        self.weights.iter_mut().for_each(|w| *w = value);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn weights(&self, a: usize) -> &[T] {
        &self.weights[a * self.dim..(a + 1) * self.dim]
    }

    pub fn estimate(&self, x: &[T], a: usize) -> T {
        dot(self.weights(a), x)
    }

    pub fn estimates(&self, x: &[T]) -> Vec<T> {
        (0..self.n_actions).map(|a| self.estimate(x, a)).collect()
    }

    /// Delta rule: `w_a += alpha * weight * (f - H(s,a)) * x(s)` for each
    /// credited pair. Errors are taken against the model as it was before
    /// this call.
    pub fn update(&mut self, credited: &[Credited<T>], f: T) -> Result<()> {
        if !f.is_finite() {
            return Err(Error::NonFinite("feedback"));
        }
        for c in credited {
            if c.x.len() != self.dim || c.action >= self.n_actions {
                return Err(Error::Shape("credited pair does not match the reward model".into()));
            }
        }
        let errors: Vec<T> = credited.iter().map(|c| f - self.estimate(&c.x, c.action)).collect();
        for (c, err) in credited.iter().zip(errors) {
            let scale = self.alpha * c.weight * err;
            let block = &mut self.weights[c.action * self.dim..(c.action + 1) * self.dim];
            for (w, &xi) in block.iter_mut().zip(&c.x) {
                *w += scale * xi;
            }
        }
        Ok(())
    }

    /// Myopic greedy action; ties to the lowest index, no exploration.
    pub fn act(&self, x: &[T]) -> usize {
        argmax(&self.estimates(x))
    }
}

#[derive(Debug, Clone)]
struct Step<T> {
    time: f64,
    x: Vec<T>,
    action: usize,
}

/// Reward model plus the timestamped step history needed for credit.
#[derive(Debug, Clone)]
pub struct TamerLearner<T> {
    model: RewardModel<T>,
    window: CreditWindow,
    history: VecDeque<Step<T>>,
}

impl<T: Scalar> TamerLearner<T> {
    pub fn new(model: RewardModel<T>, window: CreditWindow) -> Result<Self> {
        window.validate()?;
        Ok(Self { model, window, history: VecDeque::new() })
    }

    pub fn model(&self) -> &RewardModel<T> {
        &self.model
    }

    pub fn window(&self) -> &CreditWindow {
        &self.window
    }

    /// Chooses greedily at `x` and records the step at `time`.
    pub fn act(&mut self, x: Vec<T>, time: f64) -> usize {
        let action = self.model.act(&x);
        self.record(x, action, time);
        action
    }

    pub fn record(&mut self, x: Vec<T>, action: usize, time: f64) {
        self.history.push_back(Step { time, x, action });
    }

    /// Credits `f` received at `time` and applies the delta rule. Returns
    /// the number of credited steps (0 means the feedback was discarded).
    pub fn feedback(&mut self, f: T, time: f64) -> Result<usize> {
        if !f.is_finite() {
            return Err(Error::NonFinite("feedback"));
        }
        let times: Vec<f64> = self.history.iter().map(|s| s.time).collect();
        let weights = credit_weights::<T>(&self.window, time, &times);
        let credited: Vec<Credited<T>> = weights
            .iter()
            .map(|&(i, weight)| Credited { x: self.history[i].x.clone(), action: self.history[i].action, weight })
            .collect();
        self.model.update(&credited, f)?;
        self.prune(time);
        Ok(credited.len())
    }

    /// Drops steps too old to receive credit from feedback at or after `now`.
    pub fn prune(&mut self, now: f64) {
        while self.history.front().is_some_and(|s| now - s.time > self.window.max_age + AGE_SLACK) {
            self.history.pop_front();
        }
    }

    pub fn clear_history(&mut self) {
        self.history.clear();
    }
}
