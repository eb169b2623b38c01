//! Learning behaviours from policy-dependent human feedback.
//!
//! The crate bundles the pieces needed to study feedback-driven policy
//! gradient learners at desk scale:
//!
//! * [`mdp`] – finite MDPs with exact evaluation, advantages and value iteration,
//! * [`grid`] – the dog-training gridworld and its scripted behaviours,
//! * [`policy`] – linear softmax policies and their score function,
//! * [`coach`] – Real-time COACH (delayed credit, multiple eligibility traces),
//! * [`tamer`] – the reward-exemplar baseline,
//! * [`trainers`] – oracle trainers built from MDP ground truth,
//! * [`features`] / [`arena`] – rendered scenes and the hand-built image features,
//! * [`config`], [`session`], [`log`] – the seeded experiment harness.
//!
//! Numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix it to `f64`, which is what the harness uses.

pub mod arena;
pub mod coach;
pub mod config;
pub mod error;
pub mod experiments;
pub mod features;
pub mod grid;
pub mod log;
pub mod mdp;
pub mod policy;
pub mod scalar;
pub mod session;
pub mod tamer;
pub mod trainers;

pub use coach::{aggregate_feedback, CoachConfig, CoachLearner, FeedbackEvent, TraceId, TraceSet};
pub use error::{Error, Result};
pub use mdp::{action_values, advantage, evaluate_policy, td_error, value_iteration};
pub use policy::{BiasMode, FeatureMap, UpdateMode};
pub use scalar::Scalar;
pub use session::{run_coach_session, run_session, run_tamer_session};

pub type Mdp = mdp::Mdp<f64>;
pub type TabularPolicy = mdp::TabularPolicy<f64>;
pub type ValueTable = mdp::ValueTable<f64>;
pub type QTable = mdp::QTable<f64>;
pub type ParamPolicy = policy::ParamPolicy<f64>;
pub type Coach = coach::CoachLearner<f64>;
pub type Tamer = tamer::TamerLearner<f64>;
pub type RewardModel = tamer::RewardModel<f64>;
pub type OracleTrainer = trainers::OracleTrainer<f64>;

pub type Mdp32 = mdp::Mdp<f32>;
pub type ParamPolicy32 = policy::ParamPolicy<f32>;
pub type Coach32 = coach::CoachLearner<f32>;
