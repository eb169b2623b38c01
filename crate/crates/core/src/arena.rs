//! A small camera-equipped robot in a flat arena with a ball and a
//! cylinder. It renders what the robot sees so the visual features have
//! something to look at.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{render_scene, Ball, Cylinder, Scene, SceneImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RobotAction {
    Forward,
    Backward,
    RotateCw,
    RotateCcw,
    Stay,
}

impl RobotAction {
    pub const ALL: [RobotAction; 5] =
        [RobotAction::Forward, RobotAction::Backward, RobotAction::RotateCw, RobotAction::RotateCcw, RobotAction::Stay];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            RobotAction::Forward => "forward",
            RobotAction::Backward => "backward",
            RobotAction::RotateCw => "rotate_cw",
            RobotAction::RotateCcw => "rotate_ccw",
            RobotAction::Stay => "stay",
        }
    }
}

impl FromStr for RobotAction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::UnknownName { kind: "robot action", name: s.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arena {
    pub x: f64,
    pub y: f64,
    /// Radians, 0 along +x.
    pub heading: f64,
    pub ball: Option<(f64, f64)>,
    pub cylinder: Option<(f64, f64)>,
    pub speed: f64,
    pub turn_rate: f64,
    pub half_size: f64,
}

const FOV: f64 = PI / 3.0;
const IMG: usize = 64;
const NEAR: f64 = 0.15;

impl Default for Arena {
    fn default() -> Self {
        Self {
            x: 0.0,
            y: 0.0,
            heading: PI / 2.0,
            ball: Some((0.0, 1.5)),
            cylinder: Some((0.8, 2.5)),
            speed: 0.02,
            turn_rate: 0.05,
            half_size: 4.0,
        }
    }
}

impl Arena {
    pub fn step(&mut self, a: RobotAction) {
        match a {
            RobotAction::Forward | RobotAction::Backward => {
                let dir = if a == RobotAction::Forward { 1.0 } else { -1.0 };
                self.x = (self.x + dir * self.speed * self.heading.cos()).clamp(-self.half_size, self.half_size);
                self.y = (self.y + dir * self.speed * self.heading.sin()).clamp(-self.half_size, self.half_size);
            }
            RobotAction::RotateCw => self.heading -= self.turn_rate,
            RobotAction::RotateCcw => self.heading += self.turn_rate,
            RobotAction::Stay => {}
        }
        self.heading = self.heading.rem_euclid(2.0 * PI);
    }

    /// Bearing (radians, left positive) and distance to a point.
    fn relative(&self, (px, py): (f64, f64)) -> (f64, f64) {
        let (dx, dy) = (px - self.x, py - self.y);
        let dist = (dx * dx + dy * dy).sqrt();
        let bearing = (dy.atan2(dx) - self.heading + PI).rem_euclid(2.0 * PI) - PI;
        (bearing, dist)
    }

    /// Pinhole-ish projection: objects shrink with distance and sit lower in
    /// the frame as they get closer.
    pub fn scene(&self) -> Scene {
        let project = |p| {
            let (bearing, dist) = self.relative(p);
            (bearing.abs() <= FOV / 2.0 + 0.2 && dist > NEAR).then(|| {
                let half = IMG as f64 / 2.0;
                let sx = half - bearing / (FOV / 2.0) * half;
                (sx, dist)
            })
        };
        let half = IMG as f64 / 2.0;
        Scene {
            width: IMG,
            height: IMG,
            ball: self.ball.and_then(project).map(|(cx, d)| Ball {
                cx,
                cy: (half + 12.0 / d).min(IMG as f64),
                radius: (6.0 / d).min(half),
            }),
            cylinder: self.cylinder.and_then(project).map(|(cx, d)| Cylinder {
                cx,
                base_y: (half + 12.0 / d).min(IMG as f64),
                width: (8.0 / d).min(IMG as f64),
                height: (40.0 / d).min(IMG as f64),
            }),
        }
    }

    pub fn render(&self) -> Result<SceneImage> {
        render_scene(&self.scene())
    }
}
