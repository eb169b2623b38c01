//! Wire protocol: one JSON object per WebSocket text frame.
//!
//! Every message has a `type` tag. Server messages always carry the schema
//! version `v`; clients may omit it, but a client that sends a different
//! version is refused.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

/// Error code for frames that do not parse against the schema.
pub const BAD_MESSAGE: &str = "bad_message";
/// Error code for well-formed requests the session cannot honour.
pub const REJECTED: &str = "rejected";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControlCmd {
    Pause,
    Resume,
    Reset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum ClientMsg {
    Feedback {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        trace: Option<String>,
    },
    Control {
        cmd: ControlCmd,
    },
    Configure {
        scenario: String,
        learner: String,
        /// Scripted dog behaviour to play instead of the learner's own
        /// actions (`bad`, `alright`, `good`).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        script: Option<String>,
    },
    Query,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    pub penalty: Vec<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Running,
    Paused,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMsg {
    State {
        t: u64,
        episode: u64,
        agent: Point,
        /// Robot heading in radians (arena only).
        #[serde(default, skip_serializing_if = "Option::is_none")]
        heading: Option<f64>,
        grid: Option<GridLayout>,
        mode: Mode,
    },
    Action {
        t: u64,
        action: String,
    },
    Metric {
        t: u64,
        #[serde(rename = "return")]
        value: f64,
    },
    Error {
        code: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        detail: Option<String>,
    },
    Ack {
        step: u64,
    },
}

impl ServerMsg {
    pub fn error(code: &str, detail: impl Into<String>) -> Self {
        ServerMsg::Error { code: code.to_string(), detail: Some(detail.into()) }
    }

    /// Step id carried by the message, if any.
    pub fn step(&self) -> Option<u64> {
        match self {
            ServerMsg::State { t, .. } | ServerMsg::Action { t, .. } | ServerMsg::Metric { t, .. } => Some(*t),
            ServerMsg::Ack { step } => Some(*step),
            ServerMsg::Error { .. } => None,
        }
    }
}

#[derive(Serialize)]
struct Versioned<'a, M> {
    v: u32,
    #[serde(flatten)]
    msg: &'a M,
}

#[derive(Deserialize)]
struct Incoming<M> {
    v: Option<u32>,
    #[serde(flatten)]
    msg: M,
}

pub fn encode(msg: &ServerMsg) -> String {
    serde_json::to_string(&Versioned { v: PROTOCOL_VERSION, msg }).expect("server messages serialise")
}

pub fn encode_client(msg: &ClientMsg) -> String {
    serde_json::to_string(&Versioned { v: PROTOCOL_VERSION, msg }).expect("client messages serialise")
}

/// Parses a client frame. The error string is meant for the `detail` of a
/// `bad_message` reply.
pub fn decode_client(text: &str) -> Result<ClientMsg, String> {
    // `flatten` and `deny_unknown_fields` do not mix, so strip `v` by hand
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(|e| e.to_string())?;
    let obj = value.as_object_mut().ok_or("expected a JSON object")?;
    match obj.remove("v") {
        None => {}
        Some(v) if v.as_u64() == Some(u64::from(PROTOCOL_VERSION)) => {}
        Some(v) => return Err(format!("unsupported protocol version {v}")),
    }
    let msg: ClientMsg = serde_json::from_value(value).map_err(|e| e.to_string())?;
    if let ClientMsg::Feedback { value, .. } = &msg {
        if !value.is_finite() {
            return Err("feedback value must be finite".into());
        }
    }
    Ok(msg)
}

pub fn decode_server(text: &str) -> Result<ServerMsg, String> {
    let m: Incoming<ServerMsg> = serde_json::from_str(text).map_err(|e| e.to_string())?;
    match m.v {
        Some(PROTOCOL_VERSION) => Ok(m.msg),
        other => Err(format!("unexpected protocol version {other:?}")),
    }
}
