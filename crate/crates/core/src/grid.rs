//! The dog-training gridworld and its scripted reference behaviours.
//!
//! Cells are `(x, y)` with `y` growing upwards; state index is
//! `y * width + x`. Moves off the grid leave the agent in place.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Mdp, Outcome, TabularPolicy};
use crate::scalar::Scalar;

pub type Cell = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Move {
    Up,
    Down,
    Left,
    Right,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Move> {
        Self::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Move::Up => "up",
            Move::Down => "down",
            Move::Left => "left",
            Move::Right => "right",
        }
    }
}

impl FromStr for Move {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::UnknownName { kind: "move", name: s.to_string() })
    }
}

/// Layout and evaluation rewards for a dog grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub width: usize,
    pub height: usize,
    pub start: Cell,
    pub goal: Cell,
    pub penalty_cells: BTreeSet<Cell>,
    pub step_reward: f64,
    pub penalty_reward: f64,
    pub goal_reward: f64,
    pub gamma: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            width: 5,
            height: 5,
            start: (3, 0),
            goal: (3, 4),
            penalty_cells: [(3, 1), (3, 2), (3, 3)].into_iter().collect(),
            step_reward: -1.0,
            penalty_reward: -20.0,
            goal_reward: 10.0,
            gamma: 0.99,
        }
    }
}

impl GridConfig {
    /// Parses a plain-text map: one character per cell, `S` start, `G` goal,
    /// `X` penalty, `.` free; top row first. Rewards and discount keep their
    /// defaults.
    pub fn from_map(text: &str) -> Result<Self> {
        let rows: Vec<&str> = text.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let height = rows.len();
        if height == 0 {
            return Err(Error::InvalidGrid("empty map".into()));
        }
        let width = rows[0].chars().count();
        let mut start = None;
        let mut goal = None;
        let mut penalty_cells = BTreeSet::new();
        for (r, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(Error::InvalidGrid(format!("row {r} has a different width")));
            }
            let y = height - 1 - r;
            for (x, ch) in row.chars().enumerate() {
                match ch {
                    'S' if start.is_none() => start = Some((x, y)),
                    'G' if goal.is_none() => goal = Some((x, y)),
                    'S' | 'G' => return Err(Error::InvalidGrid(format!("duplicate `{ch}`"))),
                    'X' => {
                        penalty_cells.insert((x, y));
                    }
                    '.' => {}
                    other => return Err(Error::InvalidGrid(format!("unknown map character `{other}`"))),
                }
            }
        }
        let cfg = Self {
            width,
            height,
            start: start.ok_or_else(|| Error::InvalidGrid("map has no `S`".into()))?,
            goal: goal.ok_or_else(|| Error::InvalidGrid("map has no `G`".into()))?,
            penalty_cells,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_map(&self) -> String {
        let mut out = String::new();
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.push(if (x, y) == self.start {
                    'S'
                } else if (x, y) == self.goal {
                    'G'
                } else if self.penalty_cells.contains(&(x, y)) {
                    'X'
                } else {
                    '.'
                });
            }
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let inside = |(x, y): Cell| x < self.width && y < self.height;
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid("zero-sized grid".into()));
        }
        if !inside(self.start) || !inside(self.goal) {
            return Err(Error::InvalidGrid("start or goal outside the grid".into()));
        }
        if self.start == self.goal {
            return Err(Error::InvalidGrid("start equals goal".into()));
        }
        if self.penalty_cells.contains(&self.goal) {
            return Err(Error::InvalidGrid("goal is a penalty cell".into()));
        }
        if self.penalty_cells.iter().any(|&c| !inside(c)) {
            return Err(Error::InvalidGrid("penalty cell outside the grid".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidGrid(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        Ok(())
    }
}

/// Geometry of a built dog grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub config: GridConfig,
}

impl GridWorld {
    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn height(&self) -> usize {
        self.config.height
    }

    pub fn n_states(&self) -> usize {
        self.config.width * self.config.height
    }

    pub fn state(&self, (x, y): Cell) -> usize {
        y * self.config.width + x
    }

    pub fn cell(&self, s: usize) -> Cell {
        (s % self.config.width, s / self.config.width)
    }

    pub fn start_state(&self) -> usize {
        self.state(self.config.start)
    }

    pub fn goal_state(&self) -> usize {
        self.state(self.config.goal)
    }

    pub fn is_penalty(&self, c: Cell) -> bool {
        self.config.penalty_cells.contains(&c)
    }

    /// Deterministic move with wall clamping.
    pub fn apply(&self, (x, y): Cell, m: Move) -> Cell {
        match m {
            Move::Up if y + 1 < self.config.height => (x, y + 1),
            Move::Down if y > 0 => (x, y - 1),
            Move::Left if x > 0 => (x - 1, y),
            Move::Right if x + 1 < self.config.width => (x + 1, y),
            _ => (x, y),
        }
    }

    fn reward_for_entering(&self, c: Cell) -> f64 {
        if c == self.config.goal {
            self.config.goal_reward
        } else if self.is_penalty(c) {
            self.config.penalty_reward
        } else {
            self.config.step_reward
        }
    }

    /// Follows a deterministic tabular policy from the start until the goal
    /// or `max_steps`, returning the visited cells including the start.
    pub fn rollout<T: Scalar>(&self, pi: &TabularPolicy<T>, max_steps: usize) -> Vec<Cell> {
        let actions = pi.greedy_actions();
        let mut cell = self.config.start;
        let mut path = vec![cell];
        for _ in 0..max_steps {
            if cell == self.config.goal {
                break;
            }
            cell = self.apply(cell, Move::ALL[actions[self.state(cell)]]);
            path.push(cell);
        }
        path
    }

    /// Shortest penalty-free distances to the goal (`None` if unreachable).
    pub fn safe_distances(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.n_states()];
        let goal = self.config.goal;
        dist[self.state(goal)] = Some(0);
        let mut queue = VecDeque::from([goal]);
        while let Some(c) = queue.pop_front() {
            let d = dist[self.state(c)].expect("queued cells have a distance");
            for from in self.neighbours(c) {
                if self.is_penalty(from) || dist[self.state(from)].is_some() {
                    continue;
                }
                if self.apply(from, self.move_towards(from, c)) == c {
                    dist[self.state(from)] = Some(d + 1);
                    queue.push_back(from);
                }
            }
        }
        dist
    }

    fn neighbours(&self, c: Cell) -> Vec<Cell> {
        Move::ALL.iter().map(|&m| self.apply(c, m)).filter(|&n| n != c).collect()
    }

    fn move_towards(&self, from: Cell, to: Cell) -> Move {
        if to.1 > from.1 {
            Move::Up
        } else if to.1 < from.1 {
            Move::Down
        } else if to.0 < from.0 {
            Move::Left
        } else {
            Move::Right
        }
    }
}

/// Builds the dog-grid MDP. The goal is an absorbing terminal; entering it
/// pays `goal_reward`, entering a penalty cell pays `penalty_reward`, every
/// other move (including bumping a wall) pays `step_reward`.
pub fn build_dog_grid<T: Scalar>(config: &GridConfig) -> Result<(Mdp<T>, GridWorld)> {
    config.validate()?;
    let world = GridWorld { config: config.clone() };
    let n = world.n_states();
    let goal = world.goal_state();
    let mut outcomes = Vec::with_capacity(n * Move::ALL.len());
    for s in 0..n {
        for m in Move::ALL {
            if s == goal {
                outcomes.push(vec![Outcome::new(s, T::one(), T::zero())]);
            } else {
                let to = world.apply(world.cell(s), m);
                let r = world.reward_for_entering(to);
                outcomes.push(vec![Outcome::new(world.state(to), T::one(), T::of(r))]);
            }
        }
    }
    let terminal = (0..n).map(|s| s == goal).collect();
    let mdp = Mdp::new(n, Move::ALL.len(), outcomes, T::of(config.gamma), terminal)?;
    Ok((mdp, world))
}

/// The three pre-programmed dog behaviours shown to trainers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DogKind {
    /// Straight at the goal, through penalty cells.
    Bad,
    /// Detours two columns to the left, then up, then across.
    Alright,
    /// Shortest penalty-free route.
    Good,
}

impl fmt::Display for DogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DogKind::Bad => "bad",
            DogKind::Alright => "alright",
            DogKind::Good => "good",
        })
    }
}

impl FromStr for DogKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bad" => Ok(DogKind::Bad),
            "alright" => Ok(DogKind::Alright),
            "good" => Ok(DogKind::Good),
            other => Err(Error::UnknownName { kind: "dog behaviour", name: other.to_string() }),
        }
    }
}

/// Deterministic policy over every state of `world` for the given behaviour.
pub fn scripted_dog_policy<T: Scalar>(world: &GridWorld, kind: DogKind) -> Result<TabularPolicy<T>> {
    let goal = world.config.goal;
    let column_route = |col: usize, (x, y): Cell| -> Move {
        if y < goal.1 {
            if x == col {
                Move::Up
            } else if x > col {
                Move::Left
            } else {
                Move::Right
            }
        } else if y > goal.1 {
            Move::Down
        } else if x > goal.0 {
            Move::Left
        } else {
            Move::Right
        }
    };
    let actions: Vec<usize> = match kind {
        DogKind::Bad => (0..world.n_states()).map(|s| column_route(goal.0, world.cell(s)).index()).collect(),
        DogKind::Alright => {
            let col = goal.0.saturating_sub(2);
            (0..world.n_states()).map(|s| column_route(col, world.cell(s)).index()).collect()
        }
        DogKind::Good => {
            let dist = world.safe_distances();
            (0..world.n_states())
                .map(|s| {
                    let c = world.cell(s);
                    Move::ALL
                        .iter()
                        .filter_map(|&m| {
                            let to = world.apply(c, m);
                            (to != c && !world.is_penalty(to)).then(|| dist[world.state(to)].map(|d| (d, m)))?
                        })
                        .min_by_key(|&(d, m)| (d, m.index()))
                        .map_or(column_route(goal.0, c), |(_, m)| m)
                        .index()
                })
                .collect()
        }
    };
    TabularPolicy::deterministic(Move::ALL.len(), &actions)
}

#[cfg(test)]
mod tests {
    use super::*;

    const DEFAULT_MAP: &str = "\
        ...G.
        ...X.
        ...X.
        ...X.
        ...S.";

    #[test]
    fn default_grid_shape() {
        let (mdp, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
        assert_eq!(mdp.n_states(), 25);
        assert_eq!(mdp.n_actions(), 4);
        assert_eq!(world.config.penalty_cells.len(), 3);
        assert!(mdp.is_terminal(world.goal_state()));
    }

    #[test]
    fn moves_and_walls() {
        let (_, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
        assert_eq!(world.apply((3, 0), Move::Up), (3, 1));
        assert_eq!(world.apply((0, 0), Move::Left), (0, 0));
        assert_eq!(world.apply((4, 4), Move::Right), (4, 4));
    }

    #[test]
    fn map_round_trip_matches_default() {
        let cfg = GridConfig::from_map(DEFAULT_MAP).unwrap();
        assert_eq!(cfg, GridConfig::default());
        assert_eq!(GridConfig::from_map(&cfg.to_map()).unwrap(), cfg);
    }

    #[test]
    fn malformed_maps_are_rejected() {
        assert!(GridConfig::from_map("S..\n..").is_err());
        assert!(GridConfig::from_map("S.Q\n..G").is_err());
        assert!(GridConfig::from_map("S..\n...").is_err());
        let mut cfg = GridConfig::default();
        cfg.penalty_cells.insert(cfg.goal);
        assert!(build_dog_grid::<f64>(&cfg).is_err());
    }

    #[test]
    fn scripted_path_lengths() {
        let (_, world) = build_dog_grid::<f64>(&GridConfig::default()).unwrap();
        let path = |k| world.rollout(&scripted_dog_policy::<f64>(&world, k).unwrap(), 100);
        let bad = path(DogKind::Bad);
        assert_eq!(bad, vec![(3, 0), (3, 1), (3, 2), (3, 3), (3, 4)]);
        let good = path(DogKind::Good);
        assert_eq!(good, vec![(3, 0), (2, 0), (2, 1), (2, 2), (2, 3), (2, 4), (3, 4)]);
        let alright = path(DogKind::Alright);
        assert_eq!(alright.len() - 1, 8);
        assert_eq!(alright[1..5], [(2, 0), (1, 0), (1, 1), (1, 2)]);
        for p in [&good, &alright] {
            assert!(p.iter().all(|&c| !world.is_penalty(c)));
        }
        assert!("great".parse::<DogKind>().is_err());
    }
}
