//! Continuous mountain-car dynamics: an underpowered car in a valley must
//! build momentum by swinging back and forth to reach the goal on the right.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of discrete actions: 0 = push left, 1 = coast, 2 = push right.
pub const ACTION_COUNT: usize = 3;

/// Physical constants and bounds of the environment.
///
/// Defaults follow the classic control task. Thrust is too weak to climb
/// the right hill directly, which is what makes the problem interesting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    /// Engine thrust per step.
    pub force: f64,
    /// Scale of the `cos(3x)` slope term.
    pub gravity: f64,
    pub position_min: f64,
    pub position_max: f64,
    pub velocity_min: f64,
    pub velocity_max: f64,
    /// Positions at or past this mark are terminal.
    pub goal_position: f64,
    /// Reward collected on every non-terminal step.
    pub step_reward: f64,
    /// Number of discrete actions; the dynamics define exactly three.
    pub action_count: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            force: 0.001,
            gravity: 0.0025,
            position_min: -1.2,
            position_max: 0.6,
            velocity_min: -0.07,
            velocity_max: 0.07,
            goal_position: 0.5,
            step_reward: -1.0,
            action_count: ACTION_COUNT,
        }
    }
}

impl EnvParams {
    /// Checks internal consistency, reporting the first violated constraint.
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("force", self.force),
            ("gravity", self.gravity),
            ("position_min", self.position_min),
            ("position_max", self.position_max),
            ("velocity_min", self.velocity_min),
            ("velocity_max", self.velocity_max),
            ("goal_position", self.goal_position),
            ("step_reward", self.step_reward),
        ];
        for (name, value) in fields {
            if !value.is_finite() {
                return Err(Error::Domain(format!("{name} must be finite, got {value}")));
            }
        }
        if self.force < 0.0 {
            return Err(Error::Domain(format!("force must be >= 0, got {}", self.force)));
        }
        if self.gravity < 0.0 {
            return Err(Error::Domain(format!("gravity must be >= 0, got {}", self.gravity)));
        }
        if self.position_min >= self.position_max {
            return Err(Error::Domain(format!(
                "position range is empty: [{}, {}]",
                self.position_min, self.position_max
            )));
        }
        if self.velocity_min >= self.velocity_max {
            return Err(Error::Domain(format!(
                "velocity range is empty: [{}, {}]",
                self.velocity_min, self.velocity_max
            )));
        }
        if (self.velocity_min + self.velocity_max).abs() > 1e-12 {
            return Err(Error::Domain(format!(
                "velocity range must be symmetric about 0: [{}, {}]",
                self.velocity_min, self.velocity_max
            )));
        }
        if !(self.goal_position > self.position_min && self.goal_position <= self.position_max) {
            return Err(Error::Domain(format!(
                "goal_position {} must lie in ({}, {}]",
                self.goal_position, self.position_min, self.position_max
            )));
        }
        if self.action_count != ACTION_COUNT {
            return Err(Error::Domain(format!(
                "action_count must be {ACTION_COUNT}, got {}",
                self.action_count
            )));
        }
        Ok(())
    }
}

/// Continuous (position, velocity) state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContState {
    pub position: f64,
    pub velocity: f64,
}

/// Result of one environment step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub state: ContState,
    pub reward: f64,
    pub terminal: bool,
}

/// Advances the car by one step under action `a`.
///
/// The velocity update trades engine thrust against the slope of the
/// valley; velocity and position are clamped to their ranges, and the
/// velocity is zeroed when the car ends up pressed against the left wall.
pub fn step(s: ContState, a: usize, params: &EnvParams) -> Result<StepOutcome> {
    if a >= params.action_count {
        return Err(Error::Domain(format!(
            "action {a} out of range 0..{}",
            params.action_count
        )));
    }
    let thrust = (a as f64 - 1.0) * params.force;
    let slope = params.gravity * (3.0 * s.position).cos();
    let mut velocity =
        (s.velocity + thrust - slope).clamp(params.velocity_min, params.velocity_max);
    let position = (s.position + velocity).clamp(params.position_min, params.position_max);
    if position <= params.position_min {
        velocity = 0.0;
    }
    let state = ContState { position, velocity };
    let terminal = goal_reached(state, params);
    let reward = if terminal { 0.0 } else { params.step_reward };
    Ok(StepOutcome { state, reward, terminal })
}

/// True once the car's position is at or past the goal (inclusive).
pub fn goal_reached(s: ContState, params: &EnvParams) -> bool {
    s.position >= params.goal_position
}
