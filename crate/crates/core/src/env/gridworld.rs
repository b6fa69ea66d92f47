//! Deterministic square grid: start in one corner, +1 and episode end on
//! reaching the opposite corner, zero reward otherwise.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub size: usize,
    pub pos: GridPos,
}

impl GridWorld {
    pub const ACTIONS: usize = 4;
    pub const OBS_DIM: usize = 2;
    pub const DEFAULT_TIMEOUT: usize = 200;

    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::config("env.size", "gridworld needs size >= 2"));
        }
        Ok(Self {
            size,
            pos: GridPos { row: 0, col: 0 },
        })
    }

    pub fn start(&self) -> GridPos {
        GridPos { row: 0, col: 0 }
    }

    pub fn goal(&self) -> GridPos {
        GridPos {
            row: self.size - 1,
            col: self.size - 1,
        }
    }

    pub fn reset(&mut self) -> Vec<f64> {
        self.pos = self.start();
        self.observe(self.pos)
    }

    pub fn observe(&self, pos: GridPos) -> Vec<f64> {
        let scale = (self.size - 1) as f64;
        vec![pos.row as f64 / scale, pos.col as f64 / scale]
    }

    /// Actions: 0 up, 1 down, 2 left, 3 right. Walls block movement. Acting
    /// from the goal itself also ends the episode with reward 1.
    pub fn gridworld_step(&self, pos: GridPos, action: usize) -> Result<(GridPos, f64, bool)> {
        if action >= Self::ACTIONS {
            return Err(Error::InvalidAction {
                action,
                action_count: Self::ACTIONS,
            });
        }
        if pos == self.goal() {
            return Ok((pos, 1.0, true));
        }
        let last = self.size - 1;
        let next = match action {
            0 => GridPos {
                row: pos.row.saturating_sub(1),
                ..pos
            },
            1 => GridPos {
                row: (pos.row + 1).min(last),
                ..pos
            },
            2 => GridPos {
                col: pos.col.saturating_sub(1),
                ..pos
            },
            _ => GridPos {
                col: (pos.col + 1).min(last),
                ..pos
            },
        };
        if next == self.goal() {
            Ok((next, 1.0, true))
        } else {
            Ok((next, 0.0, false))
        }
    }

    pub fn step(&mut self, action: usize) -> Result<(Vec<f64>, f64, bool)> {
        let (next, reward, terminal) = self.gridworld_step(self.pos, action)?;
        self.pos = next;
        Ok((self.observe(next), reward, terminal))
    }

    fn index(&self, pos: GridPos) -> usize {
        pos.row * self.size + pos.col
    }

    /// Optimal state values by value iteration, indexed `row * size + col`.
    /// The goal's own entry is the value of acting from it (1).
    pub fn optimal_values(&self, gamma: f64) -> Vec<f64> {
        let n = self.size * self.size;
        let mut v = vec![0.0; n];
        loop {
            let mut delta: f64 = 0.0;
            for row in 0..self.size {
                for col in 0..self.size {
                    let pos = GridPos { row, col };
                    let best = (0..Self::ACTIONS)
                        .map(|a| {
                            let (next, r, done) = self.gridworld_step(pos, a).expect("valid action");
                            if done {
                                r
                            } else {
                                r + gamma * v[self.index(next)]
                            }
                        })
                        .fold(f64::NEG_INFINITY, f64::max);
                    let i = self.index(pos);
                    delta = delta.max((best - v[i]).abs());
                    v[i] = best;
                }
            }
            if delta < 1e-13 {
                return v;
            }
        }
    }

    /// Optimal discounted return from the start state.
    pub fn optimal_start_value(&self, gamma: f64) -> f64 {
        self.optimal_values(gamma)[self.index(self.start())]
    }
}
