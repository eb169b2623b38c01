//! Seeded batch sessions: a learner, the dog grid and a synthetic trainer.
//!
//! Everything random flows from the session seed through ChaCha8 streams,
//! so `(config, seed)` fully determines the log.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::coach::{CoachConfig, CoachLearner, FeedbackEvent};
use crate::config::{FeatureKind, HarnessConfig, LearnerKind};
use crate::error::Result;
use crate::grid::{build_dog_grid, GridConfig, GridWorld};
use crate::log::{hash_probs, LogHeader, SessionLog, StepRecord, CODE_VERSION};
use crate::mdp::{evaluate_policy, Mdp, TabularPolicy};
use crate::policy::{FeatureMap, GridFeatures, OneHot, ParamPolicy};
use crate::scalar::Scalar;
use crate::tamer::{RewardModel, TamerLearner};
use crate::trainers::OracleTrainer;

/// Salt separating the trainer's random stream from the agent's.
pub const TRAINER_STREAM: u64 = 0x7472_6169_6e65_7221;

/// The dog grid as seen by a learner.
#[derive(Debug, Clone)]
pub struct GridEnv<T> {
    pub mdp: Mdp<T>,
    pub world: GridWorld,
    pub features: FeatureKind,
}

impl<T: Scalar> GridEnv<T> {
    pub fn new(config: &GridConfig, features: FeatureKind) -> Result<Self> {
        let (mdp, world) = build_dog_grid(config)?;
        Ok(Self { mdp, world, features })
    }

    pub fn feature_dim(&self) -> usize {
        match self.features {
            FeatureKind::Tabular => FeatureMap::<T>::dim(&self.one_hot()),
            FeatureKind::Grid => FeatureMap::<T>::dim(&self.grid_features()),
        }
    }

    pub fn features(&self, s: usize) -> Vec<T> {
        match self.features {
            FeatureKind::Tabular => self.one_hot().features(&s),
            FeatureKind::Grid => self.grid_features().features(&s),
        }
    }

    fn one_hot(&self) -> OneHot {
        OneHot { n: self.mdp.n_states() }
    }

    fn grid_features(&self) -> GridFeatures {
        GridFeatures { width: self.world.width(), height: self.world.height() }
    }

    /// Tabulated `pi` of a parametric policy over every grid state.
    pub fn tabulate(&self, policy: &ParamPolicy<T>) -> Result<TabularPolicy<T>> {
        let rows = (0..self.mdp.n_states())
            .map(|s| policy.action_distribution(&self.features(s)))
            .collect::<Result<Vec<_>>>()?;
        TabularPolicy::from_rows(rows)
    }

    /// Exact discounted return of a deterministic policy from the start.
    pub fn greedy_return(&self, actions: &[usize]) -> Result<f64> {
        let pi = TabularPolicy::deterministic(self.mdp.n_actions(), actions)?;
        let v = evaluate_policy(&self.mdp, &pi, T::of(1e-10))?;
        Ok(v.get(self.world.start_state()).as_f64())
    }
}

/// Loop settings shared by both learners.
#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub steps: u64,
    pub eval_every: u64,
    pub max_episode_steps: u64,
    pub config_digest: String,
}

impl SessionOptions {
    pub fn new(steps: u64) -> Self {
        Self { steps, eval_every: 50, max_episode_steps: 500, config_digest: String::new() }
    }
}

/// A finished (or aborted) session.
#[derive(Debug, Clone)]
pub struct SessionOutput<T> {
    pub log: SessionLog,
    /// Greedy action per state at the end of the session.
    pub greedy: Vec<usize>,
    /// Present for COACH sessions.
    pub policy: Option<ParamPolicy<T>>,
    /// Present for TAMER sessions.
    pub reward_model: Option<RewardModel<T>>,
}

fn header(opts: &SessionOptions, seed: u64, learner: &str) -> LogHeader {
    LogHeader {
        config_digest: opts.config_digest.clone(),
        seed,
        code_version: CODE_VERSION.to_string(),
        learner: learner.to_string(),
    }
}

fn probs_hash<T: Scalar>(p: &[T]) -> String {
    hash_probs(&p.iter().map(|v| v.as_f64()).collect::<Vec<_>>())
}

/// Runs Real-time COACH on the grid against an oracle trainer.
///
/// Each step: sample `a ~ pi(s)`, record it, let the trainer judge `(s, a)`
/// against the pre-update policy, apply whatever feedback was released this
/// step, then move the environment.
pub fn run_coach_session<T: Scalar>(
    env: &GridEnv<T>,
    trainer: OracleTrainer<T>,
    config: &CoachConfig,
    opts: &SessionOptions,
    seed: u64,
) -> Result<SessionOutput<T>> {
    run_coach_session_observed(env, trainer, config, opts, seed, |_, _| {})
}

/// [`run_coach_session`] that also hands the policy to `observe` after
/// every step's update.
pub fn run_coach_session_observed<T: Scalar>(
    env: &GridEnv<T>,
    mut trainer: OracleTrainer<T>,
    config: &CoachConfig,
    opts: &SessionOptions,
    seed: u64,
    mut observe: impl FnMut(u64, &ParamPolicy<T>),
) -> Result<SessionOutput<T>> {
    let policy = ParamPolicy::new(env.feature_dim(), env.mdp.n_actions(), config.bias_mode, config.update_mode);
    let mut learner = CoachLearner::new(policy, config.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = SessionLog::new(header(opts, seed, "coach"));

    let mut s = env.world.start_state();
    let mut episode = 0u64;
    let mut episode_steps = 0u64;
    let mut run = |t: u64, log: &mut SessionLog| -> Result<()> {
        let x = env.features(s);
        let a = learner.sample_action(&x, &mut rng)?;
        learner.record(x.clone(), a)?;
        let snapshot = env.tabulate(learner.policy())?;
        let (_, released) = trainer.give_feedback(&snapshot, s, a, t, t as f64)?;
        let events: Vec<FeedbackEvent> = released.into_iter().collect();
        let agg = learner.step_with_events(&events)?;
        observe(t, learner.policy());

        let eval_return = if (t + 1) % opts.eval_every == 0 {
            Some(env.greedy_return(&greedy_coach(env, learner.policy())?)?)
        } else {
            None
        };
        log.push(StepRecord {
            t,
            episode,
            state: s,
            action: a,
            feedback: (agg.count > 0).then_some(agg.value),
            trace: (agg.count > 0).then(|| agg.trace.to_string()),
            policy_hash: probs_hash(&learner.policy().action_distribution(&x)?),
            eval_return,
        });

        let next = env.mdp.sample(s, a, rng.gen()).next;
        episode_steps += 1;
        if env.mdp.is_terminal(next) || episode_steps >= opts.max_episode_steps {
            learner.end_episode();
            trainer.reset_pending();
            s = env.world.start_state();
            episode += 1;
            episode_steps = 0;
        } else {
            s = next;
        }
        Ok(())
    };
    for t in 0..opts.steps {
        if let Err(e) = run(t, &mut log) {
            log.fault = Some(format!("step {t}: {e}"));
            break;
        }
    }
    Ok(SessionOutput {
        greedy: greedy_coach(env, learner.policy())?,
        policy: Some(learner.policy().clone()),
        reward_model: None,
        log,
    })
}

fn greedy_coach<T: Scalar>(env: &GridEnv<T>, policy: &ParamPolicy<T>) -> Result<Vec<usize>> {
    (0..env.mdp.n_states()).map(|s| policy.greedy_action(&env.features(s))).collect()
}

fn greedy_tamer<T: Scalar>(env: &GridEnv<T>, model: &RewardModel<T>) -> Vec<usize> {
    (0..env.mdp.n_states()).map(|s| model.act(&env.features(s))).collect()
}

/// Runs the reward-exemplar learner on the grid.
///
/// Step `t` happens at `t * step_period`; the trainer's verdict on it
/// arrives `reaction_time` later and is credited through the window at the
/// first step boundary at or after its arrival.
pub fn run_tamer_session<T: Scalar>(
    env: &GridEnv<T>,
    mut trainer: OracleTrainer<T>,
    mut learner: TamerLearner<T>,
    reaction_time: f64,
    opts: &SessionOptions,
    seed: u64,
) -> Result<SessionOutput<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut log = SessionLog::new(header(opts, seed, "tamer"));
    let period = learner.window().step_period;
    let mut in_flight: Vec<FeedbackEvent> = Vec::new();

    let mut s = env.world.start_state();
    let mut episode = 0u64;
    let mut episode_steps = 0u64;
    let mut run = |t: u64, log: &mut SessionLog| -> Result<()> {
        let now = t as f64 * period;
        let (arrived, later): (Vec<_>, Vec<_>) = in_flight.drain(..).partition(|e| e.arrival <= now);
        in_flight = later;
        let feedback = if arrived.is_empty() {
            None
        } else {
            let f: f64 = arrived.iter().map(|e| e.value).sum();
            let at = arrived.last().expect("non-empty").arrival;
            learner.feedback(T::of(f), at)?;
            Some(f)
        };

        let x = env.features(s);
        let a = learner.act(x.clone(), now);
        let greedy_row: Vec<T> = (0..env.mdp.n_actions()).map(|b| if b == a { T::one() } else { T::zero() }).collect();
        let snapshot = TabularPolicy::deterministic(env.mdp.n_actions(), &greedy_tamer(env, learner.model()))?;
        let (_, released) = trainer.give_feedback(&snapshot, s, a, t, now + reaction_time)?;
        in_flight.extend(released);

        let eval_return = if (t + 1) % opts.eval_every == 0 {
            Some(env.greedy_return(&greedy_tamer(env, learner.model()))?)
        } else {
            None
        };
        log.push(StepRecord {
            t,
            episode,
            state: s,
            action: a,
            feedback,
            trace: None,
            policy_hash: probs_hash(&greedy_row),
            eval_return,
        });

        let next = env.mdp.sample(s, a, rng.gen()).next;
        episode_steps += 1;
        if env.mdp.is_terminal(next) || episode_steps >= opts.max_episode_steps {
            s = env.world.start_state();
            episode += 1;
            episode_steps = 0;
        } else {
            s = next;
        }
        Ok(())
    };
    for t in 0..opts.steps {
        if let Err(e) = run(t, &mut log) {
            log.fault = Some(format!("step {t}: {e}"));
            break;
        }
    }
    Ok(SessionOutput { greedy: greedy_tamer(env, learner.model()), policy: None, reward_model: Some(learner.model().clone()), log })
}

/// Builds everything from a harness config and runs it.
pub fn run_session_detailed(config: &HarnessConfig, seed: u64) -> Result<SessionOutput<f64>> {
    config.validate()?;
    let env = GridEnv::<f64>::new(&config.grid.to_grid_config()?, config.features)?;
    let trainer = OracleTrainer::new(config.trainer.to_trainer_config()?, env.mdp.clone(), seed ^ TRAINER_STREAM)?;
    let opts = SessionOptions {
        steps: config.steps,
        eval_every: config.eval_every,
        max_episode_steps: config.max_episode_steps,
        config_digest: config.digest(),
    };
    match config.learner {
        LearnerKind::Coach => run_coach_session(&env, trainer, &config.coach.to_coach_config()?, &opts, seed),
        LearnerKind::Tamer => {
            let model = RewardModel::new(env.feature_dim(), env.mdp.n_actions(), config.tamer.alpha)
                .with_initial_estimate(config.tamer.initial_estimate);
            let learner = TamerLearner::new(model, config.tamer.window()?)?;
            run_tamer_session(&env, trainer, learner, config.trainer.reaction_time, &opts, seed)
        }
    }
}

/// Runs a session and returns its log. Only configuration problems are
/// errors; faults during the run end up in [`SessionLog::fault`].
pub fn run_session(config: &HarnessConfig, seed: u64) -> Result<SessionLog> {
    run_session_detailed(config, seed).map(|o| o.log)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_steps_gives_header_only() {
        let cfg = HarnessConfig { steps: 0, ..HarnessConfig::default() };
        let log = run_session(&cfg, 1).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(log.header.seed, 1);
        assert_eq!(log.header.config_digest, cfg.digest());
    }

    #[test]
    fn zero_feedback_keeps_initial_policy() {
        let mut cfg = HarnessConfig { steps: 300, ..HarnessConfig::default() };
        cfg.trainer.sparsity = 0.0;
        let out = run_session_detailed(&cfg, 9).unwrap();
        assert!(out.policy.unwrap().params().iter().all(|&p| p == 0.0));
        assert!(out.log.records.iter().all(|r| r.feedback.is_none()));
    }

    #[test]
    fn same_seed_same_log() {
        let cfg = HarnessConfig { steps: 400, ..HarnessConfig::default() };
        let a = run_session(&cfg, 5).unwrap();
        let b = run_session(&cfg, 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.digest(), b.digest());
        assert_ne!(a.digest(), run_session(&cfg, 6).unwrap().digest());
    }
}
