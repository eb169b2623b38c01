//! Finite MDPs and exact dynamic-programming oracles: policy evaluation,
//! action values, advantages, TD errors and value iteration.
//!
//! Everything here is a pure function of its inputs. The iterative solvers
//! work in place (Gauss-Seidel) and stop once the max-norm Bellman residual
//! drops below the requested tolerance.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{argmax, Scalar};

/// Default tolerance for policy evaluation.
pub const DEFAULT_EVAL_TOL: f64 = 1e-10;
/// Sweep cap shared by the iterative solvers.
pub const DEFAULT_MAX_ITERS: usize = 1_000_000;

/// One branch of a transition distribution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome<T> {
    pub next: usize,
    pub prob: T,
    pub reward: T,
}

impl<T: Scalar> Outcome<T> {
    pub fn new(next: usize, prob: T, reward: T) -> Self {
        Self { next, prob, reward }
    }
}

/// A finite MDP with sparse transition lists.
///
/// Terminal states must be absorbing: a single self-loop with probability 1
/// and reward 0.
#[derive(Debug, Clone, PartialEq)]
pub struct Mdp<T> {
    n_states: usize,
    n_actions: usize,
    outcomes: Vec<Vec<Outcome<T>>>,
    gamma: T,
    terminal: Vec<bool>,
}

impl<T: Scalar> Mdp<T> {
    /// `outcomes[s * n_actions + a]` lists the successors of `(s, a)`.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        outcomes: Vec<Vec<Outcome<T>>>,
        gamma: T,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("empty state or action set".into()));
        }
        if outcomes.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "expected {} transition lists, got {}",
                n_states * n_actions,
                outcomes.len()
            )));
        }
        if terminal.len() != n_states {
            return Err(Error::InvalidMdp("terminal mask length mismatch".into()));
        }
        if !(gamma >= T::zero() && gamma <= T::one()) {
            return Err(Error::InvalidMdp(format!("gamma {gamma} outside [0, 1]")));
        }
        let tol = T::simplex_tol(n_states);
        for s in 0..n_states {
            for a in 0..n_actions {
                let list = &outcomes[s * n_actions + a];
                if list.is_empty() {
                    return Err(Error::InvalidMdp(format!("({s}, {a}) has no successors")));
                }
                let mut sum = T::zero();
                for o in list {
                    if o.next >= n_states {
                        return Err(Error::InvalidMdp(format!("({s}, {a}) -> {} out of range", o.next)));
                    }
                    if !(o.prob >= T::zero()) || !o.reward.is_finite() {
                        return Err(Error::InvalidMdp(format!("({s}, {a}) has a bad branch")));
                    }
                    sum += o.prob;
                }
                if (sum - T::one()).abs() > tol {
                    return Err(Error::InvalidMdp(format!(
                        "T(.|{s}, {a}) sums to {sum}"
                    )));
                }
                if terminal[s] && list.iter().any(|o| o.prob > T::zero() && (o.next != s || o.reward != T::zero())) {
                    return Err(Error::InvalidMdp(format!(
                        "terminal state {s} is not an absorbing zero-reward self-loop"
                    )));
                }
            }
        }
        Ok(Self { n_states, n_actions, outcomes, gamma, terminal })
    }

    /// Random dense MDP: each `(s, a)` reaches every state with Dirichlet-ish
    /// weights and rewards uniform in `[-1, 1]`. No terminal states.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: T, rng: &mut R) -> Result<Self> {
        let mut outcomes = Vec::with_capacity(n_states * n_actions);
        for _ in 0..n_states * n_actions {
            let weights: Vec<f64> = (0..n_states).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let total: f64 = weights.iter().sum();
            let list = weights
                .iter()
                .enumerate()
                .map(|(next, w)| Outcome::new(next, T::of(w / total), T::of(rng.gen_range(-1.0..1.0))))
                .collect();
            outcomes.push(list);
        }
        Self::new(n_states, n_actions, outcomes, gamma, vec![false; n_states])
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> T {
        self.gamma
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn outcomes(&self, s: usize, a: usize) -> &[Outcome<T>] {
        &self.outcomes[s * self.n_actions + a]
    }

    /// Expected immediate reward of `(s, a)`.
    pub fn expected_reward(&self, s: usize, a: usize) -> T {
        self.outcomes(s, a).iter().map(|o| o.prob * o.reward).sum()
    }

    /// Samples a successor using a uniform draw `u` in `[0, 1)`.
    pub fn sample(&self, s: usize, a: usize, u: f64) -> Outcome<T> {
        let list = self.outcomes(s, a);
        let mut acc = 0.0;
        for o in list {
            acc += o.prob.as_f64();
            if u < acc {
                return *o;
            }
        }
        *list.last().expect("non-empty outcome list")
    }

    fn backup(&self, s: usize, a: usize, v: &[T]) -> T {
        let mut q = T::zero();
        for o in self.outcomes(s, a) {
            q += o.prob * (o.reward + self.gamma * v[o.next]);
        }
        q
    }
}

/// Per-state action distribution over a finite MDP.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy<T> {
    n_states: usize,
    n_actions: usize,
    probs: Vec<T>,
}

impl<T: Scalar> TabularPolicy<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidPolicy("empty policy".into()));
        }
        let tol = T::simplex_tol(n_actions);
        let mut probs = Vec::with_capacity(n_states * n_actions);
        for (s, row) in rows.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(Error::InvalidPolicy(format!("row {s} has {} entries", row.len())));
            }
            if row.iter().any(|p| !(*p >= T::zero())) {
                return Err(Error::InvalidPolicy(format!("row {s} has a negative or NaN entry")));
            }
            let sum: T = row.iter().copied().sum();
            if (sum - T::one()).abs() > tol {
                return Err(Error::InvalidPolicy(format!("row {s} sums to {sum}")));
            }
            probs.extend(row);
        }
        Ok(Self { n_states, n_actions, probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = T::one() / T::of(n_actions as f64);
        Self { n_states, n_actions, probs: vec![p; n_states * n_actions] }
    }

    /// Puts all mass on `actions[s]` in every state.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = vec![T::zero(); actions.len() * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidPolicy(format!("action {a} out of range in state {s}")));
            }
            probs[s * n_actions + a] = T::one();
        }
        Ok(Self { n_states: actions.len(), n_actions, probs })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> T {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    /// Most probable action per state, ties to the lowest index.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states).map(|s| argmax(self.row(s))).collect()
    }

    fn check_against(&self, mdp: &Mdp<T>) -> Result<()> {
        if self.n_states != mdp.n_states || self.n_actions != mdp.n_actions {
            return Err(Error::Shape(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states, self.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// `V(s)` for every state.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable<T>(pub Vec<T>);

impl<T: Scalar> ValueTable<T> {
    pub fn zeros(n_states: usize) -> Self {
        Self(vec![T::zero(); n_states])
    }

    pub fn get(&self, s: usize) -> T {
        self.0[s]
    }
}

/// A dense `(s, a)` table; used for both action values and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct StateActionTable<T> {
    n_actions: usize,
    data: Vec<T>,
}

pub type QTable<T> = StateActionTable<T>;
pub type ATable<T> = StateActionTable<T>;

impl<T: Scalar> StateActionTable<T> {
    pub fn from_rows(rows: Vec<Vec<T>>) -> Result<Self> {
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(Error::Shape("ragged state-action table".into()));
        }
        Ok(Self { n_actions, data: rows.into_iter().flatten().collect() })
    }

    pub fn n_states(&self) -> usize {
        if self.n_actions == 0 {
            0
        } else {
            self.data.len() / self.n_actions
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn get(&self, s: usize, a: usize) -> T {
        self.data[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[T] {
        &self.data[s * self.n_actions..(s + 1) * self.n_actions]
    }
}

/// Evaluates `pi` from a zero start with the default sweep cap.
pub fn evaluate_policy<T: Scalar>(mdp: &Mdp<T>, pi: &TabularPolicy<T>, tol: T) -> Result<ValueTable<T>> {
    evaluate_policy_from(mdp, pi, tol, DEFAULT_MAX_ITERS, ValueTable::zeros(mdp.n_states()))
}

/// Evaluates `pi` by in-place Bellman backups, warm-started from `init`.
///
/// Returns once the max-norm Bellman residual is at most `tol`. Terminal
/// states are pinned to 0.
pub fn evaluate_policy_from<T: Scalar>(
    mdp: &Mdp<T>,
    pi: &TabularPolicy<T>,
    tol: T,
    max_iters: usize,
    init: ValueTable<T>,
) -> Result<ValueTable<T>> {
    if !(tol > T::zero()) {
        return Err(Error::arg("tolerance must be positive"));
    }
    pi.check_against(mdp)?;
    if init.0.len() != mdp.n_states() {
        return Err(Error::Shape("initial value table length".into()));
    }
    let mut v = init.0;
    for (s, vs) in v.iter_mut().enumerate() {
        if mdp.is_terminal(s) {
            *vs = T::zero();
        }
    }
    let mut delta = T::infinity();
    for _ in 0..max_iters {
        delta = T::zero();
        for s in 0..mdp.n_states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let mut new = T::zero();
            for (a, &p) in pi.row(s).iter().enumerate() {
                if p > T::zero() {
                    new += p * mdp.backup(s, a, &v);
                }
            }
            delta = delta.max((new - v[s]).abs());
            v[s] = new;
        }
        if !delta.is_finite() {
            return Err(Error::NonFinite("policy evaluation"));
        }
        if delta <= tol && policy_residual(mdp, pi, &v) <= tol {
            return Ok(ValueTable(v));
        }
    }
    Err(Error::NotConverged { what: "policy evaluation", iterations: max_iters, residual: delta.as_f64() })
}

/// Max-norm residual of one synchronous Bellman backup under `pi`.
pub fn policy_residual<T: Scalar>(mdp: &Mdp<T>, pi: &TabularPolicy<T>, v: &[T]) -> T {
    let mut worst = T::zero();
    for s in 0..mdp.n_states() {
        if mdp.is_terminal(s) {
            continue;
        }
        let backed: T = pi.row(s).iter().enumerate().map(|(a, &p)| p * mdp.backup(s, a, v)).sum();
        worst = worst.max((backed - v[s]).abs());
    }
    worst
}

/// `Q(s,a) = sum_s' T(s'|s,a) [R(s,a,s') + gamma V(s')]`.
pub fn action_values<T: Scalar>(mdp: &Mdp<T>, pi: &TabularPolicy<T>, v: &ValueTable<T>) -> Result<QTable<T>> {
    pi.check_against(mdp)?;
    if v.0.len() != mdp.n_states() {
        return Err(Error::Shape("value table length".into()));
    }
    let mut data = Vec::with_capacity(mdp.n_states() * mdp.n_actions());
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            data.push(mdp.backup(s, a, &v.0));
        }
    }
    Ok(StateActionTable { n_actions: mdp.n_actions(), data })
}

/// Single row of [`action_values`], for callers that only need one state.
pub fn action_values_at<T: Scalar>(mdp: &Mdp<T>, v: &ValueTable<T>, s: usize) -> Vec<T> {
    (0..mdp.n_actions()).map(|a| mdp.backup(s, a, &v.0)).collect()
}

/// `A(s,a) = Q(s,a) - sum_a' pi(s,a') Q(s,a')`.
pub fn advantage<T: Scalar>(q: &QTable<T>, pi: &TabularPolicy<T>) -> Result<ATable<T>> {
    if q.n_states() != pi.n_states() || q.n_actions() != pi.n_actions() {
        return Err(Error::Shape("Q table and policy disagree on shape".into()));
    }
    let mut data = Vec::with_capacity(q.data.len());
    for s in 0..q.n_states() {
        let baseline = mixed_value(q.row(s), pi.row(s));
        data.extend(q.row(s).iter().map(|&x| x - baseline));
    }
    Ok(StateActionTable { n_actions: q.n_actions, data })
}

/// `sum_a p(a) q(a)`.
pub fn mixed_value<T: Scalar>(q: &[T], p: &[T]) -> T {
    q.iter().zip(p).map(|(&q, &p)| p * q).sum()
}

/// `r + gamma V(s_next) - V(s_prev)`.
pub fn td_error<T: Scalar>(v: &ValueTable<T>, r: T, s_prev: usize, s_next: usize, gamma: T) -> T {
    r + gamma * v.get(s_next) - v.get(s_prev)
}

/// Optimal values and the greedy policy they induce.
///
/// Greedy ties (within `tol`) go to the lowest action index.
pub fn value_iteration<T: Scalar>(mdp: &Mdp<T>, tol: T) -> Result<(ValueTable<T>, TabularPolicy<T>)> {
    value_iteration_capped(mdp, tol, DEFAULT_MAX_ITERS)
}

pub fn value_iteration_capped<T: Scalar>(
    mdp: &Mdp<T>,
    tol: T,
    max_iters: usize,
) -> Result<(ValueTable<T>, TabularPolicy<T>)> {
    if !(tol > T::zero()) {
        return Err(Error::arg("tolerance must be positive"));
    }
    let n = mdp.n_states();
    let mut v = vec![T::zero(); n];
    let mut next = vec![T::zero(); n];
    for _ in 0..max_iters {
        let mut delta = T::zero();
        for s in 0..n {
            next[s] = if mdp.is_terminal(s) {
                T::zero()
            } else {
                (0..mdp.n_actions()).map(|a| mdp.backup(s, a, &v)).fold(T::neg_infinity(), T::max)
            };
            delta = delta.max((next[s] - v[s]).abs());
        }
        std::mem::swap(&mut v, &mut next);
        if !delta.is_finite() {
            return Err(Error::NonFinite("value iteration"));
        }
        if delta <= tol {
            let v = ValueTable(v);
            let actions: Vec<usize> = (0..n).map(|s| optimal_actions(mdp, &v, s, tol)[0]).collect();
            return Ok((v, TabularPolicy::deterministic(mdp.n_actions(), &actions)?));
        }
    }
    Err(Error::NotConverged { what: "value iteration", iterations: max_iters, residual: f64::NAN })
}

/// Actions whose one-step backup under `v` is within `tol` (scaled) of the
/// best, in ascending index order.
pub fn optimal_actions<T: Scalar>(mdp: &Mdp<T>, v: &ValueTable<T>, s: usize, tol: T) -> Vec<usize> {
    let q = action_values_at(mdp, v, s);
    let best = q.iter().copied().fold(T::neg_infinity(), T::max);
    let slack = tie_slack(tol, best);
    (0..q.len()).filter(|&a| q[a] >= best - slack).collect()
}

fn tie_slack<T: Scalar>(tol: T, scale: T) -> T {
    // a converged value table is only accurate to ~tol / (1 - gamma)
    (tol * T::of(1e3)).max(T::epsilon().sqrt() * scale.abs().max(T::one()))
}
