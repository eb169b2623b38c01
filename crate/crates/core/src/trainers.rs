//! Synthetic trainers that read ground truth from the MDP.
//!
//! The advantage and Q-value trainers look at the learner's current (or a
//! slightly stale) policy, so their feedback is policy-dependent. The
//! reward-exemplar trainer answers with fixed optimal action values and
//! ignores the learner entirely.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coach::FeedbackEvent;
use crate::error::{Error, Result};
use crate::mdp::{
    action_values_at, evaluate_policy_from, mixed_value, value_iteration, Mdp, Outcome, TabularPolicy, ValueTable,
    DEFAULT_MAX_ITERS,
};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    /// `A^pi(s, a)` of the learner's policy.
    Advantage,
    /// `Q^pi(s, a)` of the learner's policy.
    Qvalue,
    /// `Q*(s, a)`, the same regardless of what the learner does.
    RewardExemplar,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Quantize {
    #[default]
    None,
    /// Onto the `{-1, +1, +4}` button set; see [`human_scale_quantize`].
    HumanScale { eps: f64, big: f64 },
    /// `sign(f)`; zero gives no feedback.
    Sign,
}

impl Quantize {
    pub fn human_scale() -> Self {
        Quantize::HumanScale { eps: 0.01, big: 1.0 }
    }

    pub fn apply(self, f: f64) -> Option<f64> {
        match self {
            Quantize::None => Some(f),
            Quantize::HumanScale { eps, big } => human_scale_quantize_with(f, eps, big),
            Quantize::Sign if f > 0.0 => Some(1.0),
            Quantize::Sign if f < 0.0 => Some(-1.0),
            Quantize::Sign => None,
        }
    }
}

/// Maps an oracle magnitude onto the button values with the default
/// thresholds (`eps = 0.01`, `big = 1.0`).
pub fn human_scale_quantize(f: f64) -> Option<f64> {
    human_scale_quantize_with(f, 0.01, 1.0)
}

/// `|f| <= eps` gives nothing, `f < -eps` gives -1, `f > big` gives +4,
/// everything else +1.
pub fn human_scale_quantize_with(f: f64, eps: f64, big: f64) -> Option<f64> {
    if f.abs() <= eps {
        None
    } else if f < 0.0 {
        Some(-1.0)
    } else if f > big {
        Some(4.0)
    } else {
        Some(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub kind: TrainerKind,
    /// Probability that a step receives feedback at all.
    pub sparsity: f64,
    pub quantize: Quantize,
    /// Multiplies the raw oracle value before quantization.
    pub scale: f64,
    /// Steps between the judged step and the event's release.
    pub delay_steps: usize,
    /// Judge against the learner's policy from this many steps ago.
    pub staleness: usize,
    pub eval_tol: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            kind: TrainerKind::Advantage,
            sparsity: 1.0,
            quantize: Quantize::None,
            scale: 1.0,
            delay_steps: 0,
            staleness: 0,
            eval_tol: 1e-10,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.sparsity) {
            return Err(Error::Config(format!("trainer sparsity {} outside [0, 1]", self.sparsity)));
        }
        if !(self.eval_tol > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config("trainer eval_tol must be positive and scale finite".into()));
        }
        Ok(())
    }
}

/// Exact oracle values for one `(s, a)` under `pi`, given `v = V^pi`.
pub fn oracle_value<T: Scalar>(
    kind: TrainerKind,
    mdp: &Mdp<T>,
    pi: &TabularPolicy<T>,
    v: &ValueTable<T>,
    q_star: &[Vec<T>],
    s: usize,
    a: usize,
) -> T {
    match kind {
        TrainerKind::RewardExemplar => q_star[s][a],
        TrainerKind::Qvalue => action_values_at(mdp, v, s)[a],
        TrainerKind::Advantage => {
            let q = action_values_at(mdp, v, s);
            q[a] - mixed_value(&q, pi.row(s))
        }
    }
}

/// Oracle trainer with the sparsity, quantization and delay wrappers.
#[derive(Debug, Clone)]
pub struct OracleTrainer<T> {
    config: TrainerConfig,
    mdp: Mdp<T>,
    rng: ChaCha8Rng,
    q_star: Vec<Vec<T>>,
    values: ValueTable<T>,
    snapshots: VecDeque<TabularPolicy<T>>,
    pending: VecDeque<(u64, FeedbackEvent)>,
}

/// What the trainer thought of a step before the wrappers ran.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Judgement {
    pub raw: f64,
    pub emitted: Option<f64>,
}

impl<T: Scalar> OracleTrainer<T> {
    pub fn new(config: TrainerConfig, mdp: Mdp<T>, seed: u64) -> Result<Self> {
        config.validate()?;
        let tol = T::of(config.eval_tol);
        let (v_star, _) = value_iteration(&mdp, tol)?;
        let q_star = (0..mdp.n_states()).map(|s| action_values_at(&mdp, &v_star, s)).collect();
        Ok(Self {
            values: ValueTable::zeros(mdp.n_states()),
            config,
            mdp,
            rng: ChaCha8Rng::seed_from_u64(seed),
            q_star,
            snapshots: VecDeque::new(),
            pending: VecDeque::new(),
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn optimal_q(&self) -> &[Vec<T>] {
        &self.q_star
    }

    /// Exact, unwrapped oracle value for `(s, a)` under `pi`. Refreshes the
    /// cached evaluation, warm-started from the previous one.
    pub fn evaluate(&mut self, pi: &TabularPolicy<T>, s: usize, a: usize) -> Result<T> {
        if self.config.kind != TrainerKind::RewardExemplar {
            let init = std::mem::replace(&mut self.values, ValueTable::zeros(0));
            self.values = evaluate_policy_from(&self.mdp, pi, T::of(self.config.eval_tol), DEFAULT_MAX_ITERS, init)?;
        }
        Ok(oracle_value(self.config.kind, &self.mdp, pi, &self.values, &self.q_star, s, a))
    }

    /// Judges step `step` (`(s, a)` taken under `snapshot`) and returns the
    /// event released at this step, if any. Wrappers run in the order
    /// sparsity, quantize, delay.
    pub fn give_feedback(
        &mut self,
        snapshot: &TabularPolicy<T>,
        s: usize,
        a: usize,
        step: u64,
        now: f64,
    ) -> Result<(Judgement, Option<FeedbackEvent>)> {
        self.snapshots.push_back(snapshot.clone());
        while self.snapshots.len() > self.config.staleness + 1 {
            self.snapshots.pop_front();
        }
        let judged = self.snapshots.front().expect("just pushed").clone();
        let raw = self.evaluate(&judged, s, a)?.as_f64() * self.config.scale;

        // drawn every step so the random stream does not depend on the values
        let u: f64 = self.rng.gen();
        let emitted = if u < self.config.sparsity { self.config.quantize.apply(raw) } else { None };
        if let Some(value) = emitted {
            let event = FeedbackEvent::new(value, now).from_oracle();
            self.pending.push_back((step + self.config.delay_steps as u64, event));
        }
        let released = match self.pending.front() {
            Some(&(due, _)) if due <= step => self.pending.pop_front().map(|(_, mut e)| {
                e.arrival = now;
                e
            }),
            _ => None,
        };
        Ok((Judgement { raw, emitted }, released))
    }

    /// Clears delayed events and policy snapshots (e.g. at an episode reset).
    pub fn reset_pending(&mut self) {
        self.pending.clear();
        self.snapshots.clear();
    }
}

/// One decision state, three actions into a terminal, rewards `rewards`;
/// `Q*(a) = rewards[a]`.
pub fn build_policy_shaping_scenario<T: Scalar>(rewards: [f64; 3]) -> Result<Mdp<T>> {
    let mut outcomes: Vec<Vec<Outcome<T>>> =
        rewards.iter().map(|&r| vec![Outcome::new(1, T::one(), T::of(r))]).collect();
    outcomes.extend((0..3).map(|_| vec![Outcome::new(1, T::one(), T::zero())]));
    Mdp::new(2, 3, outcomes, T::of(0.9), vec![false, true])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_dog_grid, GridConfig};

    #[test]
    fn quantizer_thresholds() {
        assert_eq!(human_scale_quantize(0.5), Some(1.0));
        assert_eq!(human_scale_quantize(-0.3), Some(-1.0));
        assert_eq!(human_scale_quantize(2.0), Some(4.0));
        assert_eq!(human_scale_quantize(0.005), None);
        assert_eq!(Quantize::Sign.apply(-3.0), Some(-1.0));
        assert_eq!(Quantize::Sign.apply(0.0), None);
    }

    #[test]
    fn advantage_of_chosen_deterministic_action_is_zero() {
        let (mdp, _) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
        let det = TabularPolicy::deterministic(4, &vec![2; 25]).unwrap();
        let mut t = OracleTrainer::new(TrainerConfig::default(), mdp, 1).unwrap();
        let (j, e) = t.give_feedback(&det, 3, 2, 0, 0.0).unwrap();
        assert!(j.raw.abs() < 1e-9);
        assert_eq!(e.unwrap().value, j.raw);
    }

    #[test]
    fn zero_sparsity_never_emits() {
        let mdp = build_policy_shaping_scenario::<f64>([1.0, 2.0, 3.0]).unwrap();
        let cfg = TrainerConfig { sparsity: 0.0, ..TrainerConfig::default() };
        let mut t = OracleTrainer::new(cfg, mdp, 7).unwrap();
        let pi = TabularPolicy::uniform(2, 3);
        for step in 0..500 {
            assert!(t.give_feedback(&pi, 0, step as usize % 3, step, 0.0).unwrap().1.is_none());
        }
    }

    #[test]
    fn delay_wrapper_releases_late() {
        let mdp = build_policy_shaping_scenario::<f64>([1.0, 2.0, 3.0]).unwrap();
        let cfg = TrainerConfig { delay_steps: 2, ..TrainerConfig::default() };
        let mut t = OracleTrainer::new(cfg, mdp, 7).unwrap();
        let pi = TabularPolicy::uniform(2, 3);
        let r: Vec<Option<f64>> =
            (0..4).map(|k| t.give_feedback(&pi, 0, k as usize % 3, k, k as f64).unwrap().1.map(|e| e.value)).collect();
        assert_eq!(r, vec![None, None, Some(-1.0), Some(0.0)]);
    }

    #[test]
    fn scenario_ordering() {
        let mdp = build_policy_shaping_scenario::<f64>([1.0, 2.0, 3.0]).unwrap();
        let (v, pi) = value_iteration(&mdp, 1e-12).unwrap();
        assert_eq!(pi.greedy_actions()[0], 2);
        let q = action_values_at(&mdp, &v, 0);
        assert!(q[2] > q[1] && q[1] > q[0]);
    }
}
