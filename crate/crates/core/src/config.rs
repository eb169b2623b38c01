//! Harness configuration file.
//!
//! A TOML document of plain key/value pairs, grouped into `[grid]`,
//! `[coach]`, `[tamer]` and `[trainer]` tables. Unknown keys are errors.
//!
//! ```toml
//! learner = "coach"
//! steps = 5000
//!
//! [coach]
//! alpha = 0.5
//! delay_steps = 0
//! traces.short.lambda = 0.0
//! feedback_map."4" = "short"
//!
//! [trainer]
//! kind = "advantage"
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::coach::{CoachConfig, TraceId};
use crate::error::{Error, Result};
use crate::grid::GridConfig;
use crate::policy::{BiasMode, UpdateMode};
use crate::tamer::CreditWindow;
use crate::trainers::{Quantize, TrainerConfig, TrainerKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Coach,
    Tamer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// One indicator per grid cell.
    Tabular,
    /// Row and column indicators.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnessConfig {
    pub learner: LearnerKind,
    pub steps: u64,
    /// Greedy-policy evaluation cadence, in steps.
    pub eval_every: u64,
    /// Episode cut-off; the agent is returned to the start afterwards.
    pub max_episode_steps: u64,
    pub features: FeatureKind,
    pub grid: GridSection,
    pub coach: CoachSection,
    pub tamer: TamerSection,
    pub trainer: TrainerSection,
    pub service: ServiceSection,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            learner: LearnerKind::Coach,
            steps: 5000,
            eval_every: 50,
            max_episode_steps: 500,
            features: FeatureKind::Tabular,
            grid: GridSection::default(),
            coach: CoachSection::default(),
            tamer: TamerSection::default(),
            trainer: TrainerSection::default(),
            service: ServiceSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Plain-text map (`S`, `G`, `X`, `.`; top row first). Empty means the
    /// canonical layout.
    pub map: String,
    pub step_reward: f64,
    pub penalty_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = GridConfig::default();
        Self {
            map: String::new(),
            step_reward: g.step_reward,
            penalty_reward: g.penalty_reward,
            goal_reward: g.goal_reward,
            gamma: g.gamma,
        }
    }
}

impl GridSection {
    pub fn to_grid_config(&self) -> Result<GridConfig> {
        let base = if self.map.trim().is_empty() { GridConfig::default() } else { GridConfig::from_map(&self.map)? };
        let cfg = GridConfig {
            step_reward: self.step_reward,
            penalty_reward: self.penalty_reward,
            goal_reward: self.goal_reward,
            gamma: self.gamma,
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceSection {
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoachSection {
    pub alpha: f64,
    pub delay_steps: usize,
    pub traces: BTreeMap<String, TraceSection>,
    pub feedback_map: BTreeMap<String, String>,
    pub default_trace: String,
    pub reset_traces_on_episode: bool,
    pub update_mode: UpdateMode,
    pub bias_mode: BiasMode,
}

impl Default for CoachSection {
    fn default() -> Self {
        let c = CoachConfig::default();
        Self {
            alpha: c.alpha,
            delay_steps: c.delay_steps,
            traces: c.traces.iter().map(|(k, &l)| (k.0.clone(), TraceSection { lambda: l })).collect(),
            feedback_map: c.feedback_map.iter().map(|(k, v)| (k.clone(), v.0.clone())).collect(),
            default_trace: c.default_trace.0,
            reset_traces_on_episode: c.reset_traces_on_episode,
            update_mode: c.update_mode,
            bias_mode: c.bias_mode,
        }
    }
}

impl CoachSection {
    pub fn to_coach_config(&self) -> Result<CoachConfig> {
        let cfg = CoachConfig {
            alpha: self.alpha,
            delay_steps: self.delay_steps,
            traces: self.traces.iter().map(|(k, t)| (TraceId::new(k.clone()), t.lambda)).collect(),
            feedback_map: self.feedback_map.iter().map(|(k, v)| (k.clone(), TraceId::new(v.clone()))).collect(),
            default_trace: TraceId::new(self.default_trace.clone()),
            reset_traces_on_episode: self.reset_traces_on_episode,
            update_mode: self.update_mode,
            bias_mode: self.bias_mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TamerSection {
    pub alpha: f64,
    pub window_min: f64,
    pub window_max: f64,
    /// Seconds between decisions in batch sessions.
    pub step_period: f64,
    /// Starting value of every reward-model weight.
    pub initial_estimate: f64,
}

impl Default for TamerSection {
    fn default() -> Self {
        let w = CreditWindow::default();
        Self { alpha: 1.0, window_min: w.min_age, window_max: w.max_age, step_period: w.step_period, initial_estimate: 0.0 }
    }
}

impl TamerSection {
    pub fn window(&self) -> Result<CreditWindow> {
        let w = CreditWindow { min_age: self.window_min, max_age: self.window_max, step_period: self.step_period };
        w.validate()?;
        if !(self.alpha > 0.0) {
            return Err(Error::Config("tamer.alpha must be positive".into()));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuantizeKind {
    None,
    Human,
    Sign,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSection {
    pub kind: TrainerKind,
    pub sparsity: f64,
    pub quantize: QuantizeKind,
    pub quantize_eps: f64,
    pub quantize_big: f64,
    pub scale: f64,
    pub delay_steps: usize,
    pub staleness: usize,
    pub eval_tol: f64,
    /// Seconds between a step and the trainer's feedback arriving (TAMER
    /// sessions only; COACH sessions use `delay_steps`).
    pub reaction_time: f64,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainerConfig::default();
        Self {
            kind: t.kind,
            sparsity: t.sparsity,
            quantize: QuantizeKind::None,
            quantize_eps: 0.01,
            quantize_big: 1.0,
            scale: t.scale,
            delay_steps: t.delay_steps,
            staleness: t.staleness,
            eval_tol: t.eval_tol,
            reaction_time: 0.5,
        }
    }
}

impl TrainerSection {
    pub fn to_trainer_config(&self) -> Result<TrainerConfig> {
        let cfg = TrainerConfig {
            kind: self.kind,
            sparsity: self.sparsity,
            quantize: match self.quantize {
                QuantizeKind::None => Quantize::None,
                QuantizeKind::Human => Quantize::HumanScale { eps: self.quantize_eps, big: self.quantize_big },
                QuantizeKind::Sign => Quantize::Sign,
            },
            scale: self.scale,
            delay_steps: self.delay_steps,
            staleness: self.staleness,
            eval_tol: self.eval_tol,
        };
        cfg.validate()?;
        if !(self.reaction_time >= 0.0) {
            return Err(Error::Config("trainer.reaction_time must be non-negative".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    DogGrid,
    /// The camera robot with the ball and cylinder.
    Arena,
}

/// Settings of the live training server.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceSection {
    pub period_ms: u64,
    pub scenario: ScenarioKind,
    pub seed: u64,
    /// Slider magnitude from which feedback counts as strong.
    pub strong_threshold: f64,
    pub strong_trace: String,
    pub weak_trace: String,
}

impl Default for ServiceSection {
    fn default() -> Self {
        Self {
            period_ms: 33,
            scenario: ScenarioKind::DogGrid,
            seed: 0,
            strong_threshold: 40.0,
            strong_trace: "long".into(),
            weak_trace: "short".into(),
        }
    }
}

impl ServiceSection {
    pub fn validate(&self) -> Result<()> {
        if self.period_ms == 0 {
            return Err(Error::Config("service.period_ms must be positive".into()));
        }
        if !(self.strong_threshold > 0.0) {
            return Err(Error::Config("service.strong_threshold must be positive".into()));
        }
        Ok(())
    }
}

impl HarnessConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<()> {
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        if self.max_episode_steps == 0 {
            return Err(Error::Config("max_episode_steps must be positive".into()));
        }
        self.grid.to_grid_config()?;
        self.coach.to_coach_config()?;
        self.tamer.window()?;
        self.trainer.to_trainer_config()?;
        self.service.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form; stable across runs and platforms.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_dotted_keys() {
        let cfg = HarnessConfig::from_toml(
            r#"
            learner = "coach"
            steps = 100
            [coach]
            alpha = 0.5
            delay_steps = 0
            traces.short.lambda = 0.0
            feedback_map = {}
            [trainer]
            kind = "advantage"
            quantize = "human"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.steps, 100);
        let coach = cfg.coach.to_coach_config().unwrap();
        assert_eq!(coach.traces.len(), 1);
        assert_eq!(cfg.trainer.to_trainer_config().unwrap().quantize, Quantize::HumanScale { eps: 0.01, big: 1.0 });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(HarnessConfig::from_toml("stpes = 10"), Err(Error::Config(_))));
        assert!(matches!(HarnessConfig::from_toml("[coach]\nalpah = 1.0"), Err(Error::Config(_))));
    }

    #[test]
    fn semantic_errors_are_config_errors() {
        assert!(HarnessConfig::from_toml("[coach]\ntraces.short.lambda = 1.5").is_err());
        assert!(HarnessConfig::from_toml("[trainer]\nsparsity = 2.0").is_err());
        assert!(HarnessConfig::from_toml("[grid]\nmap = \"S..\"").is_err());
    }

    #[test]
    fn digest_is_stable_and_sensitive() {
        let a = HarnessConfig::default();
        assert_eq!(a.digest(), HarnessConfig::default().digest());
        let b = HarnessConfig { steps: 1, ..HarnessConfig::default() };
        assert_ne!(a.digest(), b.digest());
        assert_eq!(HarnessConfig::from_toml(&a.to_toml()).unwrap(), a);
    }
}
