//! Real-time COACH: delayed credit, several eligibility traces with their own
//! decay rates, and feedback aggregation.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{BiasMode, ParamPolicy, UpdateMode};
use crate::scalar::{norm, Scalar};

/// Name of an eligibility trace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TraceId(pub String);

impl TraceId {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for TraceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TraceId {
    fn from(s: &str) -> Self {
        Self(s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FeedbackSource {
    #[default]
    Human,
    Oracle,
}

/// One feedback signal as received by the learner.
///
/// `trace` is optional on the wire; unresolved events are mapped through
/// [`CoachConfig::trace_for_value`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub value: f64,
    pub trace: Option<TraceId>,
    /// Monotonic arrival time in seconds.
    pub arrival: f64,
    pub source: FeedbackSource,
}

impl FeedbackEvent {
    pub fn new(value: f64, arrival: f64) -> Self {
        Self { value, trace: None, arrival, source: FeedbackSource::Human }
    }

    pub fn on_trace(mut self, trace: impl Into<TraceId>) -> Self {
        self.trace = Some(trace.into());
        self
    }

    pub fn from_oracle(mut self) -> Self {
        self.source = FeedbackSource::Oracle;
        self
    }
}

/// Learner settings. Defaults follow the robot configuration: traces
/// `short` (0.95) and `long` (0.9999), `+1`/`-1` on `short`, `+4` on `long`,
/// delay of 6 steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoachConfig {
    pub alpha: f64,
    pub delay_steps: usize,
    pub traces: BTreeMap<TraceId, f64>,
    /// Feedback value (as written, e.g. `"4"` or `"-1"`) to trace.
    pub feedback_map: BTreeMap<String, TraceId>,
    pub default_trace: TraceId,
    pub reset_traces_on_episode: bool,
    pub update_mode: UpdateMode,
    pub bias_mode: BiasMode,
}

impl Default for CoachConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            delay_steps: 6,
            traces: [(TraceId::from("short"), 0.95), (TraceId::from("long"), 0.9999)].into_iter().collect(),
            feedback_map: [("1", "short"), ("-1", "short"), ("4", "long")]
                .into_iter()
                .map(|(v, t)| (v.to_string(), TraceId::from(t)))
                .collect(),
            default_trace: TraceId::from("short"),
            reset_traces_on_episode: true,
            update_mode: UpdateMode::PreferenceDirect,
            bias_mode: BiasMode::Off,
        }
    }
}

impl CoachConfig {
    /// One trace with the given decay, no delay, likelihood-ratio updates.
    pub fn single_trace(alpha: f64, lambda: f64) -> Self {
        Self {
            alpha,
            delay_steps: 0,
            traces: [(TraceId::from("short"), lambda)].into_iter().collect(),
            feedback_map: BTreeMap::new(),
            default_trace: TraceId::from("short"),
            reset_traces_on_episode: true,
            update_mode: UpdateMode::LikelihoodRatio,
            bias_mode: BiasMode::Off,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.traces.is_empty() {
            return Err(Error::Config("at least one trace is required".into()));
        }
        for (id, &lambda) in &self.traces {
            if !(0.0..1.0).contains(&lambda) {
                return Err(Error::Config(format!("trace `{id}` lambda {lambda} outside [0, 1)")));
            }
        }
        for (v, id) in &self.feedback_map {
            if v.parse::<f64>().is_err() {
                return Err(Error::Config(format!("feedback_map key `{v}` is not a number")));
            }
            if !self.traces.contains_key(id) {
                return Err(Error::Config(format!("feedback_map sends `{v}` to unknown trace `{id}`")));
            }
        }
        if !self.traces.contains_key(&self.default_trace) {
            return Err(Error::Config(format!("default trace `{}` is not configured", self.default_trace)));
        }
        Ok(())
    }

    /// Trace implied by a feedback value, falling back to the default trace.
    pub fn trace_for_value(&self, value: f64) -> TraceId {
        self.feedback_map
            .iter()
            .find(|(k, _)| k.parse::<f64>().ok() == Some(value))
            .map_or_else(|| self.default_trace.clone(), |(_, t)| t.clone())
    }

    fn resolve(&self, e: &FeedbackEvent) -> TraceId {
        e.trace.clone().unwrap_or_else(|| self.trace_for_value(e.value))
    }
}

/// Result of summing one cycle's feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub value: f64,
    pub trace: TraceId,
    /// Events in the window named more than one trace; the last one won.
    pub mixed_traces: bool,
    pub count: usize,
}

/// Sums the feedback of one cycle; the trace is the last event's.
pub fn aggregate_feedback(events: &[FeedbackEvent], config: &CoachConfig) -> Aggregate {
    let mut value = 0.0;
    let mut trace = config.default_trace.clone();
    let mut first: Option<TraceId> = None;
    let mut mixed = false;
    for e in events {
        value += e.value;
        trace = config.resolve(e);
        match &first {
            None => first = Some(trace.clone()),
            Some(t) if *t != trace => mixed = true,
            _ => {}
        }
    }
    Aggregate { value, trace, mixed_traces: mixed, count: events.len() }
}

/// A single eligibility trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace<T> {
    pub id: TraceId,
    pub lambda: T,
    pub e: Vec<T>,
}

/// Named traces sharing the policy's parameter dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet<T> {
    traces: Vec<Trace<T>>,
}

impl<T: Scalar> TraceSet<T> {
    pub fn new(spec: &BTreeMap<TraceId, f64>, dim: usize) -> Self {
        Self {
            traces: spec
                .iter()
                .map(|(id, &l)| Trace { id: id.clone(), lambda: T::of(l), e: vec![T::zero(); dim] })
                .collect(),
        }
    }

    pub fn get(&self, id: &TraceId) -> Option<&Trace<T>> {
        self.traces.iter().find(|t| &t.id == id)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Trace<T>> {
        self.traces.iter()
    }

    /// `e <- lambda e (+ g)` for every trace.
    pub fn decay_and_accumulate(&mut self, g: Option<&[T]>) {
        for t in &mut self.traces {
            match g {
                Some(g) => {
                    for (e, &gi) in t.e.iter_mut().zip(g) {
                        *e = t.lambda * *e + gi;
                    }
                }
                None => {
                    for e in &mut t.e {
                        *e = t.lambda * *e;
                    }
                }
            }
        }
    }

    pub fn reset(&mut self) {
        for t in &mut self.traces {
            t.e.iter_mut().for_each(|e| *e = T::zero());
        }
    }

    pub fn norm(&self, id: &TraceId) -> Option<T> {
        self.get(id).map(|t| norm(&t.e))
    }
}

/// A policy plus the state Real-time COACH carries between steps.
#[derive(Debug, Clone)]
pub struct CoachLearner<T> {
    policy: ParamPolicy<T>,
    traces: TraceSet<T>,
    history: VecDeque<(Vec<T>, usize)>,
    config: CoachConfig,
    alpha: T,
    steps: u64,
}

impl<T: Scalar> CoachLearner<T> {
    pub fn new(mut policy: ParamPolicy<T>, config: CoachConfig) -> Result<Self> {
        config.validate()?;
        policy.set_update_mode(config.update_mode);
        let traces = TraceSet::new(&config.traces, policy.param_dim());
        Ok(Self {
            alpha: T::of(config.alpha),
            history: VecDeque::with_capacity(config.delay_steps + 1),
            policy,
            traces,
            config,
            steps: 0,
        })
    }

    pub fn policy(&self) -> &ParamPolicy<T> {
        &self.policy
    }

    pub fn traces(&self) -> &TraceSet<T> {
        &self.traces
    }

    pub fn config(&self) -> &CoachConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Samples `a ~ pi(s, .)` from a uniform draw.
    pub fn sample_action<R: Rng + ?Sized>(&self, x: &[T], rng: &mut R) -> Result<usize> {
        let pi = self.policy.action_distribution(x)?;
        Ok(sample_index(&pi, rng.gen::<f64>()))
    }

    /// Appends the pair just executed; the buffer keeps the last `d + 1`.
    pub fn record(&mut self, x: Vec<T>, a: usize) -> Result<()> {
        if x.len() != self.policy.dim() || a >= self.policy.n_actions() {
            return Err(Error::Shape("recorded pair does not match the policy".into()));
        }
        if self.history.len() == self.config.delay_steps + 1 {
            self.history.pop_front();
        }
        self.history.push_back((x, a));
        Ok(())
    }

    /// One pass of the COACH inner loop after the latest [`record`](Self::record):
    /// decay every trace, add the update direction of the pair `d` steps back
    /// (if it exists yet), then move the parameters by `alpha * f * e_trace`.
    pub fn coach_step(&mut self, f: T, trace: &TraceId) -> Result<()> {
        if !f.is_finite() {
            return Err(Error::NonFinite("feedback"));
        }
        if self.traces.get(trace).is_none() {
            return Err(Error::UnknownTrace(trace.to_string()));
        }
        let g = if self.history.len() == self.config.delay_steps + 1 {
            let (x, a) = &self.history[0];
            Some(self.policy.update_direction(x, *a)?)
        } else {
            None
        };
        self.traces.decay_and_accumulate(g.as_deref());
        self.steps += 1;
        if f != T::zero() {
            let e = &self.traces.get(trace).expect("checked above").e;
            self.policy.step_along(self.alpha * f, e)?;
        }
        Ok(())
    }

    /// Aggregates the events of one cycle and runs [`coach_step`](Self::coach_step).
    pub fn step_with_events(&mut self, events: &[FeedbackEvent]) -> Result<Aggregate> {
        let agg = aggregate_feedback(events, &self.config);
        self.coach_step(T::of(agg.value), &agg.trace)?;
        Ok(agg)
    }

    pub fn end_episode(&mut self) {
        if self.config.reset_traces_on_episode {
            self.traces.reset();
            self.history.clear();
        }
    }
}

/// Index drawn from a categorical distribution given `u` in `[0, 1)`.
pub fn sample_index<T: Scalar>(p: &[T], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        acc += pi.as_f64();
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(v: f64) -> FeedbackEvent {
        FeedbackEvent::new(v, 0.0)
    }

    #[test]
    fn aggregation_sums_and_takes_last_trace() {
        let cfg = CoachConfig::default();
        let a = aggregate_feedback(&[ev(1.0), ev(1.0)], &cfg);
        assert_eq!((a.value, a.trace.as_str(), a.mixed_traces), (2.0, "short", false));

        let a = aggregate_feedback(&[], &cfg);
        assert_eq!((a.value, a.trace.as_str()), (0.0, "short"));

        let a = aggregate_feedback(&[ev(1.0), ev(4.0)], &cfg);
        assert_eq!((a.value, a.trace.as_str(), a.mixed_traces), (5.0, "long", true));
    }

    #[test]
    fn config_validation() {
        let mut cfg = CoachConfig::default();
        cfg.traces.insert(TraceId::from("bad"), 1.0);
        assert!(cfg.validate().is_err());
        let mut cfg = CoachConfig::default();
        cfg.feedback_map.insert("2".into(), TraceId::from("missing"));
        assert!(cfg.validate().is_err());
        assert!(CoachConfig { alpha: 0.0, ..CoachConfig::default() }.validate().is_err());
    }

    #[test]
    fn unknown_trace_and_non_finite_feedback_are_rejected() {
        let p = ParamPolicy::<f64>::new(2, 2, BiasMode::Off, UpdateMode::LikelihoodRatio);
        let mut l = CoachLearner::new(p, CoachConfig::single_trace(0.1, 0.5)).unwrap();
        l.record(vec![1.0, 0.0], 0).unwrap();
        assert!(matches!(l.coach_step(1.0, &TraceId::from("nope")), Err(Error::UnknownTrace(_))));
        assert!(matches!(l.coach_step(f64::NAN, &TraceId::from("short")), Err(Error::NonFinite(_))));
        assert_eq!(l.steps(), 0);
    }

    #[test]
    fn zero_feedback_leaves_parameters_but_fills_traces() {
        let p = ParamPolicy::<f64>::new(2, 3, BiasMode::Chain, UpdateMode::PreferenceDirect);
        let mut l = CoachLearner::new(p.clone(), CoachConfig { delay_steps: 2, ..CoachConfig::default() }).unwrap();
        let short = TraceId::from("short");
        for t in 0..100 {
            l.record(vec![(t % 3) as f64, 1.0], t % 3).unwrap();
            l.coach_step(0.0, &short).unwrap();
        }
        assert_eq!(l.policy().params(), p.params());
        assert!(l.traces().norm(&short).unwrap() > 0.0);
    }

    #[test]
    fn warm_up_steps_only_decay() {
        let p = ParamPolicy::<f64>::new(1, 2, BiasMode::Off, UpdateMode::LikelihoodRatio);
        let mut cfg = CoachConfig::single_trace(1.0, 0.5);
        cfg.delay_steps = 2;
        let mut l = CoachLearner::new(p, cfg).unwrap();
        let short = TraceId::from("short");
        l.record(vec![1.0], 0).unwrap();
        l.coach_step(1.0, &short).unwrap();
        l.record(vec![1.0], 0).unwrap();
        l.coach_step(1.0, &short).unwrap();
        assert_eq!(l.policy().params(), &[0.0, 0.0]);
        l.record(vec![1.0], 1).unwrap();
        l.coach_step(1.0, &short).unwrap();
        // the credited pair is the first one (action 0)
        assert_eq!(l.policy().params(), &[0.5, -0.5]);
    }

    #[test]
    fn sample_index_covers_the_simplex() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(sample_index(&p, 0.0), 0);
        assert_eq!(sample_index(&p, 0.25), 1);
        assert_eq!(sample_index(&p, 0.99), 2);
        assert_eq!(sample_index(&p, 1.0), 2);
    }
}
