//! The desk-scale experiments: convergence on the dog grid, the policy
//! shaping sign flip and the ball/cylinder unlearning scenario.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::arena::RobotAction;
use crate::coach::{CoachConfig, CoachLearner, FeedbackEvent, TraceId};
use crate::config::HarnessConfig;
use crate::error::{Error, Result};
use crate::grid::Cell;
use crate::mdp::{
    action_values_at, evaluate_policy_from, mixed_value, optimal_actions, value_iteration, TabularPolicy, ValueTable,
    DEFAULT_MAX_ITERS,
};
use crate::policy::{BiasMode, ParamPolicy, UpdateMode};
use crate::session::{run_coach_session_observed, GridEnv, SessionOptions, TRAINER_STREAM};
use crate::tamer::{CreditWindow, RewardModel, TamerLearner};
use crate::trainers::{build_policy_shaping_scenario, OracleTrainer};

/// COACH with an exact advantage trainer on the canonical grid.
pub const CONVERGENCE_TOML: &str = r#"
learner = "coach"
steps = 5000
features = "tabular"

[coach]
alpha = 0.5
delay_steps = 0
traces.short.lambda = 0.0
feedback_map = {}
update_mode = "likelihood_ratio"

[trainer]
kind = "advantage"
"#;

pub fn convergence_config() -> HarnessConfig {
    HarnessConfig::from_toml(CONVERGENCE_TOML).expect("built-in config is valid")
}

/// Outcome of one seeded convergence run.
#[derive(Debug, Clone)]
pub struct ConvergenceRun {
    pub seed: u64,
    pub greedy_return: f64,
    pub optimal_return: f64,
    /// Cells the final greedy policy walks through from the start.
    pub path: Vec<Cell>,
    /// Every non-terminal cell on `path` has a greedy action in the optimal set.
    pub path_optimal: bool,
    /// Per window: mean over the path's states of `|A^pi(s, a*)|`,
    /// averaged over the window's steps. Empty unless requested.
    pub windows: Vec<f64>,
}

impl ConvergenceRun {
    pub fn within_one_percent(&self) -> bool {
        (self.greedy_return - self.optimal_return).abs() <= 0.01 * self.optimal_return.abs()
    }

    pub fn converged(&self) -> bool {
        self.path_optimal && self.within_one_percent()
    }
}

/// Runs COACH for `config.steps` and compares the greedy policy against
/// value iteration. With `window > 0` the exact feedback magnitude for the
/// adopted actions is also tracked per `window` steps.
pub fn convergence_run(config: &HarnessConfig, seed: u64, window: u64) -> Result<ConvergenceRun> {
    let env = GridEnv::<f64>::new(&config.grid.to_grid_config()?, config.features)?;
    let trainer_cfg = config.trainer.to_trainer_config()?;
    let trainer = OracleTrainer::new(trainer_cfg.clone(), env.mdp.clone(), seed ^ TRAINER_STREAM)?;
    let opts = SessionOptions {
        steps: config.steps,
        eval_every: config.eval_every,
        max_episode_steps: config.max_episode_steps,
        config_digest: config.digest(),
    };
    let mut snapshots: Vec<TabularPolicy<f64>> = Vec::new();
    let mut snapshot_err = None;
    let out = run_coach_session_observed(&env, trainer, &config.coach.to_coach_config()?, &opts, seed, |_, p| {
        if window > 0 && snapshot_err.is_none() {
            match env.tabulate(p) {
                Ok(pi) => snapshots.push(pi),
                Err(e) => snapshot_err = Some(e),
            }
        }
    })?;
    if let Some(e) = snapshot_err {
        return Err(e);
    }
    if let Some(fault) = &out.log.fault {
        return Err(Error::arg(format!("session fault: {fault}")));
    }

    let tol = trainer_cfg.eval_tol;
    let (v_star, _) = value_iteration(&env.mdp, tol)?;
    let greedy_pi = TabularPolicy::<f64>::deterministic(env.mdp.n_actions(), &out.greedy)?;
    let path = env.world.rollout(&greedy_pi, env.mdp.n_states() * 4);
    let path_states: Vec<usize> =
        path.iter().map(|&c| env.world.state(c)).filter(|&s| !env.mdp.is_terminal(s)).collect();
    let path_optimal = path.last().map(|&c| env.world.state(c)) == Some(env.world.goal_state())
        && path_states.iter().all(|&s| optimal_actions(&env.mdp, &v_star, s, tol).contains(&out.greedy[s]));

    let mut windows = Vec::new();
    if window > 0 && !path_states.is_empty() {
        let mut v = ValueTable::zeros(env.mdp.n_states());
        let mut acc = 0.0;
        for (t, pi) in snapshots.iter().enumerate() {
            v = evaluate_policy_from(&env.mdp, pi, tol, DEFAULT_MAX_ITERS, v)?;
            let mut m = 0.0;
            for &s in &path_states {
                let q = action_values_at(&env.mdp, &v, s);
                m += (q[out.greedy[s]] - mixed_value(&q, pi.row(s))).abs();
            }
            acc += m / path_states.len() as f64;
            if (t as u64 + 1) % window == 0 {
                windows.push(acc / window as f64);
                acc = 0.0;
            }
        }
    }

    Ok(ConvergenceRun {
        seed,
        greedy_return: env.greedy_return(&out.greedy)?,
        optimal_return: v_star.get(env.world.start_state()),
        path,
        path_optimal,
        windows,
    })
}

/// Non-increasing across windows and the last below `ratio` times the first.
pub fn diminishing(windows: &[f64], ratio: f64) -> bool {
    match (windows.first(), windows.last()) {
        (Some(&first), Some(&last)) => windows.windows(2).all(|w| w[1] <= w[0]) && last < ratio * first,
        _ => false,
    }
}

/// The advantage trainer's verdict on the middle action before and after
/// training on the three-action bandit.
#[derive(Debug, Clone)]
pub struct SignFlip {
    pub rewards: [f64; 3],
    pub pi_before: Vec<f64>,
    pub f_before: f64,
    pub pi_after: Vec<f64>,
    pub f_after: f64,
    pub steps: u64,
}

impl SignFlip {
    /// `A(a2) = R(a2) - sum_b pi(b) R(b)` under `pi`.
    pub fn closed_form(&self, pi: &[f64]) -> f64 {
        self.rewards[1] - pi.iter().zip(&self.rewards).map(|(p, r)| p * r).sum::<f64>()
    }
}

/// Starts COACH with `pi(a1) > 0.9` and trains with exact advantage
/// feedback until `pi(a3) > 0.9` (or `max_steps`).
pub fn sign_flip_experiment(rewards: [f64; 3], alpha: f64, seed: u64, max_steps: u64) -> Result<SignFlip> {
    let mdp = build_policy_shaping_scenario::<f64>(rewards)?;
    let mut trainer = OracleTrainer::new(Default::default(), mdp, seed ^ TRAINER_STREAM)?;
    // one feature for the decision state, one for the terminal
    let x = vec![1.0, 0.0];
    let policy = ParamPolicy::new(2, 3, BiasMode::Off, UpdateMode::LikelihoodRatio)
        .with_params(vec![3.0, 0.0, 0.0, 0.0, 0.0, 0.0])?;
    let mut learner = CoachLearner::new(policy, CoachConfig::single_trace(alpha, 0.0))?;
    let snapshot = |l: &CoachLearner<f64>| -> Result<TabularPolicy<f64>> {
        let row = l.policy().action_distribution(&x)?;
        TabularPolicy::from_rows(vec![row, vec![1.0 / 3.0; 3]])
    };
    let pi_before = learner.policy().action_distribution(&x)?;
    let f_before = trainer.evaluate(&snapshot(&learner)?, 0, 1)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = 0;
    while steps < max_steps && learner.policy().action_distribution(&x)?[2] <= 0.9 {
        let a = learner.sample_action(&x, &mut rng)?;
        learner.record(x.clone(), a)?;
        let (_, event) = trainer.give_feedback(&snapshot(&learner)?, 0, a, steps, steps as f64)?;
        learner.step_with_events(&event.into_iter().collect::<Vec<_>>())?;
        learner.end_episode();
        trainer.reset_pending();
        steps += 1;
    }
    let pi_after = learner.policy().action_distribution(&x)?;
    let f_after = trainer.evaluate(&snapshot(&learner)?, 0, 1)?;
    Ok(SignFlip { rewards, pi_before, f_before, pi_after, f_after, steps })
}

/// State of both learners in the ball/cylinder scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Unlearning {
    pub tamer_before: RobotAction,
    pub h_stay_before: f64,
    pub h_forward: f64,
    pub h_stay_after: f64,
    pub tamer_after: RobotAction,
    /// Feedback steps credited by the window for the final +1.
    pub credited: usize,
    pub coach_pi_stay_before: f64,
    pub coach_pi_stay_after: f64,
}

/// Indicator features `(ball visible, cylinder visible)`.
pub fn indicator(ball: bool, cylinder: bool) -> Vec<f64> {
    vec![f64::from(u8::from(ball)), f64::from(u8::from(cylinder))]
}

/// Phase 1 rewards staying at the ball (+10), phase 2 rewards driving at
/// the cylinder (+4); then both objects are shown and the robot is given
/// a single +1 for staying, with the reward model's rate lowered to 0.5.
/// Each step happens alone; its feedback arrives 0.5 s later.
pub fn unlearning_experiment() -> Result<Unlearning> {
    let stay = RobotAction::Stay.index();
    let forward = RobotAction::Forward.index();
    let n = RobotAction::ALL.len();
    let (ball, cyl, both) = (indicator(true, false), indicator(false, true), indicator(true, true));
    let lag = 0.5;

    let mut tamer = TamerLearner::new(RewardModel::new(2, n, 1.0), CreditWindow::default())?;
    tamer.record(ball.clone(), stay, 0.0);
    tamer.feedback(10.0, lag)?;
    tamer.record(cyl.clone(), forward, 10.0);
    tamer.feedback(4.0, 10.0 + lag)?;
    tamer.clear_history();
    let h_stay_before = tamer.model().estimate(&both, stay);
    let h_forward = tamer.model().estimate(&both, forward);
    let before = tamer.act(both.clone(), 20.0);
    let tamer_before = RobotAction::ALL[before];

    let mut model = tamer.model().clone();
    model.alpha = 0.5;
    let mut tamer = TamerLearner::new(model, CreditWindow::default())?;
    tamer.record(both.clone(), before, 20.0);
    let credited = tamer.feedback(1.0, 20.0 + lag)?;
    let h_stay_after = tamer.model().estimate(&both, stay);
    let tamer_after = RobotAction::ALL[tamer.model().act(&both)];

    let short = TraceId::from("short");
    let policy = ParamPolicy::new(2, n, BiasMode::Off, UpdateMode::LikelihoodRatio);
    let mut coach = CoachLearner::new(policy, CoachConfig::single_trace(1.0, 0.0))?;
    for (x, a, f) in [(&ball, stay, 10.0), (&cyl, forward, 4.0)] {
        coach.record(x.clone(), a)?;
        coach.step_with_events(&[FeedbackEvent::new(f, 0.0).on_trace(short.clone())])?;
        coach.end_episode();
    }
    let coach_pi_stay_before = coach.policy().action_distribution(&both)?[stay];
    coach.record(both.clone(), stay)?;
    coach.step_with_events(&[FeedbackEvent::new(1.0, 0.0).on_trace(short)])?;
    let coach_pi_stay_after = coach.policy().action_distribution(&both)?[stay];

    Ok(Unlearning {
        tamer_before,
        h_stay_before,
        h_forward,
        h_stay_after,
        tamer_after,
        credited,
        coach_pi_stay_before,
        coach_pi_stay_after,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diminishing_rule() {
        assert!(diminishing(&[1.0, 0.5, 0.5, 0.01], 0.05));
        assert!(!diminishing(&[1.0, 0.5, 0.6, 0.01], 0.05));
        assert!(!diminishing(&[1.0, 0.1], 0.05));
        assert!(!diminishing(&[], 0.05));
    }

    #[test]
    fn unlearning_flips_tamer_only() {
        let u = unlearning_experiment().unwrap();
        assert_eq!((u.h_stay_before, u.h_forward), (10.0, 4.0));
        assert_eq!(u.tamer_before, RobotAction::Stay);
        assert_eq!(u.credited, 1);
        assert_eq!(u.h_stay_after, 1.0);
        assert_eq!(u.tamer_after, RobotAction::Forward);
        assert!(u.coach_pi_stay_after > u.coach_pi_stay_before);
    }

    #[test]
    fn sign_flip_matches_closed_form() {
        let r = sign_flip_experiment([1.0, 2.0, 3.0], 0.1, 3, 100_000).unwrap();
        assert!(r.pi_before[0] > 0.9 && r.pi_after[2] > 0.9);
        assert!(r.f_before > 0.0 && r.f_after < 0.0);
        assert!((r.f_before - r.closed_form(&r.pi_before)).abs() < 1e-12);
        assert!((r.f_after - r.closed_form(&r.pi_after)).abs() < 1e-12);
    }
}
