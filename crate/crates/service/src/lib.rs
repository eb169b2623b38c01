//! Live training server.
//!
//! A [`Session`](session::Session) holds the learner and scenario and knows
//! nothing about time or sockets. [`realtime`] drives it from a dedicated
//! thread at a fixed cadence, and [`server`] exposes that loop over
//! WebSockets using the JSON messages in [`protocol`].

pub mod protocol;
pub mod realtime;
pub mod server;
pub mod session;

pub use protocol::{ClientMsg, ControlCmd, Mode, ServerMsg};
pub use realtime::{LoopClient, LoopHandle, LoopOptions, StatsSnapshot};
pub use session::{FeedbackMapper, Session, Setup};
