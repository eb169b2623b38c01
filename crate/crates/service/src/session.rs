//! The synchronous heart of the service: one learner, one scenario and the
//! queue of feedback waiting for the next cycle boundary.
//!
//! Nothing here reads a clock. Callers pass receipt times and boundary times
//! in seconds, which is what lets tests place feedback exactly on either
//! side of a boundary.

use coach_core::arena::{Arena, RobotAction};
use coach_core::coach::{sample_index, CoachConfig, CoachLearner, FeedbackEvent, TraceId};
use coach_core::config::{HarnessConfig, LearnerKind, ScenarioKind};
use coach_core::features::{extract_features, FeatureConfig};
use coach_core::grid::{scripted_dog_policy, DogKind, Move};
use coach_core::mdp::TabularPolicy;
use coach_core::policy::ParamPolicy;
use coach_core::session::GridEnv;
use coach_core::tamer::{RewardModel, TamerLearner};
use coach_core::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::protocol::{ControlCmd, GridLayout, Mode, Point, ServerMsg};

/// What a session runs: scenario, learner and an optional scripted driver.
#[derive(Debug, Clone, PartialEq)]
pub struct Setup {
    pub scenario: ScenarioKind,
    pub learner: LearnerKind,
    /// Dog-grid only: play this behaviour instead of the learner's choice.
    pub script: Option<DogKind>,
}

impl Setup {
    pub fn from_config(config: &HarnessConfig) -> Self {
        Self { scenario: config.service.scenario, learner: config.learner, script: None }
    }

    /// Parses the fields of a `configure` message.
    pub fn parse(scenario: &str, learner: &str, script: Option<&str>) -> std::result::Result<Self, String> {
        let scenario = match scenario {
            "dog_grid" => ScenarioKind::DogGrid,
            "arena" => ScenarioKind::Arena,
            other => return Err(format!("unknown scenario `{other}`")),
        };
        let learner = match learner {
            "coach" => LearnerKind::Coach,
            "tamer" => LearnerKind::Tamer,
            other => return Err(format!("unknown learner `{other}`")),
        };
        let script = script.map(|s| s.parse::<DogKind>().map_err(|e| e.to_string())).transpose()?;
        if script.is_some() && scenario != ScenarioKind::DogGrid {
            return Err("scripted behaviours exist only for the dog grid".into());
        }
        Ok(Self { scenario, learner, script })
    }
}

/// Turns a raw client value (slider `-50..50` or a button) into a learner
/// signal.
///
/// An explicit trace wins. Values listed in the learner's feedback map keep
/// their value and mapped trace. Otherwise 0 means nothing, magnitudes from
/// the strong threshold up become `±4` on the strong trace and the rest
/// `±1` on the weak trace.
#[derive(Debug, Clone)]
pub struct FeedbackMapper {
    coach: CoachConfig,
    strong_threshold: f64,
    strong_trace: TraceId,
    weak_trace: TraceId,
}

impl FeedbackMapper {
    pub fn new(config: &HarnessConfig) -> Result<Self> {
        let coach = config.coach.to_coach_config()?;
        let pick = |name: &str| {
            let id = TraceId::new(name);
            if coach.traces.contains_key(&id) {
                id
            } else {
                coach.default_trace.clone()
            }
        };
        Ok(Self {
            strong_threshold: config.service.strong_threshold,
            strong_trace: pick(&config.service.strong_trace),
            weak_trace: pick(&config.service.weak_trace),
            coach,
        })
    }

    pub fn map(&self, value: f64, trace: Option<&str>) -> std::result::Result<Option<(f64, TraceId)>, String> {
        if !value.is_finite() {
            return Err("feedback value must be finite".into());
        }
        if let Some(name) = trace {
            let id = TraceId::new(name);
            if !self.coach.traces.contains_key(&id) {
                return Err(format!("unknown trace `{name}`"));
            }
            return Ok((value != 0.0).then_some((value, id)));
        }
        if value == 0.0 {
            return Ok(None);
        }
        if let Some((_, id)) = self.coach.feedback_map.iter().find(|(k, _)| k.parse::<f64>().ok() == Some(value)) {
            return Ok(Some((value, id.clone())));
        }
        Ok(Some(if value.abs() >= self.strong_threshold {
            (4.0 * value.signum(), self.strong_trace.clone())
        } else {
            (value.signum(), self.weak_trace.clone())
        }))
    }
}

#[derive(Debug, Clone)]
enum Learner {
    Coach(CoachLearner<f64>),
    Tamer(TamerLearner<f64>),
}

#[derive(Debug, Clone)]
enum World {
    Grid { env: GridEnv<f64>, s: usize, episode_steps: u64, done: bool, script: Option<TabularPolicy<f64>> },
    Arena { arena: Arena, features: FeatureConfig },
}

impl World {
    fn n_actions(&self) -> usize {
        match self {
            World::Grid { env, .. } => env.mdp.n_actions(),
            World::Arena { .. } => RobotAction::ALL.len(),
        }
    }

    fn dim(&self) -> usize {
        match self {
            World::Grid { env, .. } => env.feature_dim(),
            World::Arena { .. } => coach_core::features::FEATURE_LEN,
        }
    }

    fn features(&self) -> Result<Vec<f64>> {
        match self {
            World::Grid { env, s, .. } => Ok(env.features(*s)),
            World::Arena { arena, features } => extract_features(&arena.render()?, features),
        }
    }

    fn action_name(&self, a: usize) -> &'static str {
        match self {
            World::Grid { .. } => Move::from_index(a).map_or("?", Move::name),
            World::Arena { .. } => RobotAction::ALL[a].name(),
        }
    }
}

/// Result of one cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct Cycle {
    pub step: u64,
    /// Sum and count of the feedback applied at this boundary.
    pub feedback: Option<(f64, usize)>,
    /// Messages to broadcast, in order.
    pub messages: Vec<ServerMsg>,
}

/// One live training session.
#[derive(Debug, Clone)]
pub struct Session {
    config: HarnessConfig,
    setup: Setup,
    mapper: FeedbackMapper,
    learner: Learner,
    world: World,
    mode: Mode,
    /// Id of the next step; never decreases, not even on reset.
    t: u64,
    episode: u64,
    /// A pair was executed and still waits for its cycle's update.
    pending: bool,
    queue: Vec<FeedbackEvent>,
    rng: ChaCha8Rng,
}

impl Session {
    pub fn new(config: &HarnessConfig) -> Result<Self> {
        Self::with_setup(config, Setup::from_config(config))
    }

    pub fn with_setup(config: &HarnessConfig, setup: Setup) -> Result<Self> {
        config.validate()?;
        let (learner, world) = build(config, &setup)?;
        Ok(Self {
            mapper: FeedbackMapper::new(config)?,
            config: config.clone(),
            setup,
            learner,
            world,
            mode: Mode::Running,
            t: 0,
            episode: 0,
            pending: false,
            queue: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.service.seed),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn setup(&self) -> &Setup {
        &self.setup
    }

    pub fn mapper(&self) -> &FeedbackMapper {
        &self.mapper
    }

    /// Id the next cycle will carry.
    pub fn next_step(&self) -> u64 {
        self.t
    }

    /// The COACH policy, if that is the learner.
    pub fn policy(&self) -> Option<&ParamPolicy<f64>> {
        match &self.learner {
            Learner::Coach(c) => Some(c.policy()),
            Learner::Tamer(_) => None,
        }
    }

    pub fn reward_model(&self) -> Option<&RewardModel<f64>> {
        match &self.learner {
            Learner::Tamer(l) => Some(l.model()),
            Learner::Coach(_) => None,
        }
    }

    pub fn queued(&self) -> usize {
        self.queue.len()
    }

    /// Queues a mapped event received at `received`. Paused sessions drop
    /// it. Returns whether it was queued.
    pub fn enqueue(&mut self, value: f64, trace: TraceId, received: f64) -> bool {
        if self.mode == Mode::Paused {
            return false;
        }
        self.queue.push(FeedbackEvent::new(value, received).on_trace(trace));
        true
    }

    /// Maps and queues raw client feedback; `Ok(false)` for no-ops and
    /// feedback dropped during a pause.
    pub fn submit(&mut self, value: f64, trace: Option<&str>, received: f64) -> std::result::Result<bool, String> {
        match self.mapper.map(value, trace)? {
            Some((v, id)) => Ok(self.enqueue(v, id, received)),
            None => Ok(false),
        }
    }

    pub fn control(&mut self, cmd: ControlCmd) -> Result<()> {
        match cmd {
            ControlCmd::Pause => {
                self.mode = Mode::Paused;
                self.queue.clear();
            }
            ControlCmd::Resume => self.mode = Mode::Running,
            ControlCmd::Reset => self.rebuild(self.setup.clone())?,
        }
        Ok(())
    }

    /// Switches scenario or learner; the step counter carries on.
    pub fn configure(&mut self, setup: Setup) -> Result<()> {
        self.rebuild(setup)
    }

    fn rebuild(&mut self, setup: Setup) -> Result<()> {
        let (learner, world) = build(&self.config, &setup)?;
        self.learner = learner;
        self.world = world;
        self.setup = setup;
        self.pending = false;
        self.queue.clear();
        self.episode = 0;
        Ok(())
    }

    /// Runs the cycle at boundary time `now`: feedback received at or before
    /// `now` updates the learner, then the agent acts once.
    pub fn cycle(&mut self, now: f64) -> Result<Option<Cycle>> {
        if self.mode == Mode::Paused {
            self.queue.clear();
            return Ok(None);
        }
        let (ready, later): (Vec<_>, Vec<_>) = std::mem::take(&mut self.queue).into_iter().partition(|e| e.arrival <= now);
        self.queue = later;
        let feedback = self.apply(&ready)?;
        self.finish_episode_if_done();

        let step = self.t;
        let x = self.world.features()?;
        let a = self.choose(x, now)?;
        let mut messages = vec![ServerMsg::Action { t: step, action: self.world.action_name(a).to_string() }];
        self.advance(a);
        self.pending = true;
        self.t += 1;
        messages.push(self.state_message(step));
        if (step + 1) % self.config.eval_every == 0 {
            if let Some(value) = self.greedy_return()? {
                messages.push(ServerMsg::Metric { t: step, value });
            }
        }
        Ok(Some(Cycle { step, feedback, messages }))
    }

    fn apply(&mut self, events: &[FeedbackEvent]) -> Result<Option<(f64, usize)>> {
        match &mut self.learner {
            Learner::Coach(l) => {
                if !self.pending {
                    return Ok(None);
                }
                let agg = l.step_with_events(events)?;
                Ok((agg.count > 0).then_some((agg.value, agg.count)))
            }
            Learner::Tamer(l) => {
                let Some(last) = events.last() else { return Ok(None) };
                let f: f64 = events.iter().map(|e| e.value).sum();
                l.feedback(f, last.arrival)?;
                Ok(Some((f, events.len())))
            }
        }
    }

    fn choose(&mut self, x: Vec<f64>, now: f64) -> Result<usize> {
        let scripted = match &self.world {
            World::Grid { script: Some(pi), s, .. } => Some(sample_index(pi.row(*s), self.rng.gen())),
            _ => None,
        };
        match &mut self.learner {
            Learner::Coach(l) => {
                let a = match scripted {
                    Some(a) => a,
                    None => l.sample_action(&x, &mut self.rng)?,
                };
                l.record(x, a)?;
                Ok(a)
            }
            Learner::Tamer(l) => Ok(match scripted {
                Some(a) => {
                    l.record(x, a, now);
                    a
                }
                None => l.act(x, now),
            }),
        }
    }

    fn advance(&mut self, a: usize) {
        match &mut self.world {
            World::Grid { env, s, episode_steps, done, .. } => {
                let next = env.mdp.sample(*s, a, self.rng.gen()).next;
                *episode_steps += 1;
                *s = next;
                *done = env.mdp.is_terminal(next) || *episode_steps >= self.config.max_episode_steps;
            }
            World::Arena { arena, .. } => arena.step(RobotAction::ALL[a]),
        }
    }

    /// The goal stays on screen for one cycle; the reset happens after the
    /// feedback for the final move has been applied.
    fn finish_episode_if_done(&mut self) {
        if let World::Grid { env, s, episode_steps, done, .. } = &mut self.world {
            if *done {
                *s = env.world.start_state();
                *episode_steps = 0;
                *done = false;
                self.episode += 1;
                if let Learner::Coach(l) = &mut self.learner {
                    l.end_episode();
                    self.pending = false;
                }
            }
        }
    }

    fn greedy_return(&self) -> Result<Option<f64>> {
        let World::Grid { env, .. } = &self.world else { return Ok(None) };
        let greedy = (0..env.mdp.n_states())
            .map(|s| {
                let x = env.features(s);
                match &self.learner {
                    Learner::Coach(l) => l.policy().greedy_action(&x),
                    Learner::Tamer(l) => Ok(l.model().act(&x)),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        env.greedy_return(&greedy).map(Some)
    }

    fn state_message(&self, t: u64) -> ServerMsg {
        let (agent, heading, grid) = match &self.world {
            World::Grid { env, s, .. } => {
                let (x, y) = env.world.cell(*s);
                let w = &env.world;
                let layout = GridLayout {
                    width: w.width(),
                    height: w.height(),
                    start: w.cell(w.start_state()),
                    goal: w.cell(w.goal_state()),
                    penalty: (0..w.n_states()).map(|s| w.cell(s)).filter(|&c| w.is_penalty(c)).collect(),
                };
                (Point { x: x as f64, y: y as f64 }, None, Some(layout))
            }
            World::Arena { arena, .. } => (Point { x: arena.x, y: arena.y }, Some(arena.heading), None),
        };
        ServerMsg::State { t, episode: self.episode, agent, heading, grid, mode: self.mode }
    }

    /// Current state, as sent to clients that (re)connect or query.
    pub fn snapshot(&self) -> ServerMsg {
        self.state_message(self.t.saturating_sub(1))
    }
}

fn build(config: &HarnessConfig, setup: &Setup) -> Result<(Learner, World)> {
    let world = match setup.scenario {
        ScenarioKind::DogGrid => {
            let env = GridEnv::<f64>::new(&config.grid.to_grid_config()?, config.features)?;
            let script = setup.script.map(|k| scripted_dog_policy(&env.world, k)).transpose()?;
            World::Grid { s: env.world.start_state(), env, episode_steps: 0, done: false, script }
        }
        ScenarioKind::Arena => World::Arena { arena: Arena::default(), features: FeatureConfig::default() },
    };
    let learner = match setup.learner {
        LearnerKind::Coach => {
            let cfg = config.coach.to_coach_config()?;
            let policy = ParamPolicy::new(world.dim(), world.n_actions(), cfg.bias_mode, cfg.update_mode);
            Learner::Coach(CoachLearner::new(policy, cfg)?)
        }
        LearnerKind::Tamer => {
            let model = RewardModel::new(world.dim(), world.n_actions(), config.tamer.alpha)
                .with_initial_estimate(config.tamer.initial_estimate);
            Learner::Tamer(TamerLearner::new(model, config.tamer.window()?)?)
        }
    };
    Ok((learner, world))
}
