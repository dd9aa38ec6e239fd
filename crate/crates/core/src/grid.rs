//! State-space discretization and the stochastic band transition model.
//!
//! Each grid state is represented by the continuous state at its cell
//! center. A step from a center generally lands between centers; the
//! landing point is split over the (up to) four surrounding centers with
//! bilinear weights, so the expected landing point is preserved and the
//! transition tensor stays banded in index space.

use serde::{Deserialize, Serialize};

use crate::env::{self, ContState, EnvParams};
use crate::error::{Error, Result};

/// Uniform rectangular discretization of the (position, velocity) plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n_pos: usize,
    pub n_vel: usize,
    pub position_min: f64,
    pub position_max: f64,
    pub velocity_min: f64,
    pub velocity_max: f64,
}

impl GridSpec {
    /// Builds a grid covering the bounds of `params`.
    pub fn new(n_pos: usize, n_vel: usize, params: &EnvParams) -> Result<Self> {
        params.validate()?;
        if n_pos < 2 || n_vel < 2 {
            return Err(Error::Domain(format!(
                "grid must be at least 2x2, got {n_pos}x{n_vel}"
            )));
        }
        Ok(Self {
            n_pos,
            n_vel,
            position_min: params.position_min,
            position_max: params.position_max,
            velocity_min: params.velocity_min,
            velocity_max: params.velocity_max,
        })
    }

    /// Total number of grid states.
    pub fn num_states(&self) -> usize {
        self.n_pos * self.n_vel
    }

    /// Cell width along the position axis.
    pub fn pos_step(&self) -> f64 {
        (self.position_max - self.position_min) / self.n_pos as f64
    }

    /// Cell width along the velocity axis.
    pub fn vel_step(&self) -> f64 {
        (self.velocity_max - self.velocity_min) / self.n_vel as f64
    }

    /// Flat index of the cell at (position index, velocity index).
    pub fn flat_index(&self, ip: usize, iv: usize) -> usize {
        debug_assert!(ip < self.n_pos && iv < self.n_vel);
        iv * self.n_pos + ip
    }

    /// Inverse of [`GridSpec::flat_index`].
    pub fn multi_index(&self, i: usize) -> (usize, usize) {
        debug_assert!(i < self.num_states());
        (i % self.n_pos, i / self.n_pos)
    }

    /// Continuous state at the center of cell `(ip, iv)`.
    pub fn center(&self, ip: usize, iv: usize) -> ContState {
        ContState {
            position: self.position_min + (ip as f64 + 0.5) * self.pos_step(),
            velocity: self.velocity_min + (iv as f64 + 0.5) * self.vel_step(),
        }
    }

    /// Indices of the cell containing `s` (nearest cell if out of bounds).
    pub fn cell_of(&self, s: ContState) -> (usize, usize) {
        let clamp_to = |value: f64, min: f64, step: f64, count: usize| -> usize {
            let raw = ((value - min) / step).floor();
            raw.clamp(0.0, (count - 1) as f64) as usize
        };
        (
            clamp_to(s.position, self.position_min, self.pos_step(), self.n_pos),
            clamp_to(s.velocity, self.velocity_min, self.vel_step(), self.n_vel),
        )
    }
}

/// One probabilistic transition branch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Branch {
    /// Destination flat state index.
    pub dest: usize,
    pub prob: f64,
    pub reward: f64,
}

/// Sparse per-(state, action) transition table over grid states.
///
/// Terminal states have no outgoing branches. The stored bandwidth is the
/// largest L-infinity distance in (position index, velocity index) space
/// between a source and any of its destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionModel {
    n_pos: usize,
    n_vel: usize,
    action_count: usize,
    /// Branch list per (state, action), indexed `state * action_count + action`.
    branches: Vec<Vec<Branch>>,
    terminal: Vec<bool>,
    bandwidth: usize,
    distinct_rewards: usize,
    clamp_events: u64,
}

impl TransitionModel {
    /// Assembles and validates a model from raw parts, measuring its
    /// bandwidth and distinct-reward count.
    pub fn from_parts(
        n_pos: usize,
        n_vel: usize,
        action_count: usize,
        branches: Vec<Vec<Branch>>,
        terminal: Vec<bool>,
        clamp_events: u64,
    ) -> Result<Self> {
        if n_pos == 0 || n_vel == 0 || action_count == 0 {
            return Err(Error::Domain(format!(
                "model shape must be positive, got {n_pos}x{n_vel} with {action_count} actions"
            )));
        }
        let mu = n_pos * n_vel;
        if terminal.len() != mu {
            return Err(Error::Domain(format!(
                "terminal mask has {} entries, expected {mu}",
                terminal.len()
            )));
        }
        if branches.len() != mu * action_count {
            return Err(Error::Domain(format!(
                "branch table has {} rows, expected {}",
                branches.len(),
                mu * action_count
            )));
        }
        for i in 0..mu {
            for a in 0..action_count {
                let row = &branches[i * action_count + a];
                if terminal[i] {
                    if !row.is_empty() {
                        return Err(Error::Domain(format!(
                            "terminal state {i} has outgoing branches"
                        )));
                    }
                    continue;
                }
                if row.is_empty() {
                    return Err(Error::Domain(format!(
                        "nonterminal state {i} has no branches for action {a}"
                    )));
                }
                let mut total = 0.0;
                for branch in row {
                    if branch.dest >= mu {
                        return Err(Error::Domain(format!(
                            "branch from state {i} points at {} outside 0..{mu}",
                            branch.dest
                        )));
                    }
                    if !(branch.prob > 0.0 && branch.prob <= 1.0 + 1e-12) {
                        return Err(Error::Domain(format!(
                            "branch probability {} out of (0, 1] at state {i}",
                            branch.prob
                        )));
                    }
                    if !branch.reward.is_finite() {
                        return Err(Error::Domain(format!(
                            "non-finite branch reward at state {i}"
                        )));
                    }
                    total += branch.prob;
                }
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::Domain(format!(
                        "probabilities for state {i} action {a} sum to {total}"
                    )));
                }
            }
        }

        let mut model = Self {
            n_pos,
            n_vel,
            action_count,
            branches,
            terminal,
            bandwidth: 0,
            distinct_rewards: 0,
            clamp_events,
        };
        model.bandwidth = model.scan_bandwidth();
        model.distinct_rewards = model.scan_distinct_rewards();
        Ok(model)
    }

    fn scan_bandwidth(&self) -> usize {
        let mut k = 0;
        for i in 0..self.num_states() {
            let (ip, iv) = self.multi_index(i);
            for a in 0..self.action_count {
                for branch in self.branches(i, a) {
                    let (jp, jv) = self.multi_index(branch.dest);
                    let dist = ip.abs_diff(jp).max(iv.abs_diff(jv));
                    k = k.max(dist);
                }
            }
        }
        k
    }

    fn scan_distinct_rewards(&self) -> usize {
        let mut rewards: Vec<u64> = self
            .branches
            .iter()
            .flatten()
            .map(|b| b.reward.to_bits())
            .collect();
        rewards.sort_unstable();
        rewards.dedup();
        rewards.len()
    }

    /// Total number of states.
    pub fn num_states(&self) -> usize {
        self.n_pos * self.n_vel
    }

    /// Grid shape as (n_pos, n_vel).
    pub fn shape(&self) -> (usize, usize) {
        (self.n_pos, self.n_vel)
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    /// Branches leaving `state` under `action`; empty for terminal states.
    pub fn branches(&self, state: usize, action: usize) -> &[Branch] {
        &self.branches[state * self.action_count + action]
    }

    pub fn is_terminal(&self, state: usize) -> bool {
        self.terminal[state]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Measured bandwidth of the stored transitions.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of distinct reward values across all branches.
    pub fn distinct_rewards(&self) -> usize {
        self.distinct_rewards
    }

    /// How many (state, action) pairs had their landing point clamped back
    /// onto the lattice of centers during construction.
    pub fn clamp_events(&self) -> u64 {
        self.clamp_events
    }

    /// Multi-index of a flat state index.
    pub fn multi_index(&self, i: usize) -> (usize, usize) {
        (i % self.n_pos, i / self.n_pos)
    }

    /// Total number of stored branches.
    pub fn branch_count(&self) -> usize {
        self.branches.iter().map(Vec::len).sum()
    }

    /// Serializes the model as line-oriented text; inverse of [`TransitionModel::load`].
    pub fn dump(&self) -> String {
        let mut out = String::new();
        out.push_str("transition-model v1\n");
        out.push_str(&format!("n_pos {}\n", self.n_pos));
        out.push_str(&format!("n_vel {}\n", self.n_vel));
        out.push_str(&format!("actions {}\n", self.action_count));
        out.push_str(&format!("states {}\n", self.num_states()));
        out.push_str(&format!("bandwidth {}\n", self.bandwidth));
        out.push_str(&format!("distinct_rewards {}\n", self.distinct_rewards));
        out.push_str(&format!("clamp_events {}\n", self.clamp_events));
        out.push_str(&format!("branches {}\n", self.branch_count()));
        for i in 0..self.num_states() {
            for a in 0..self.action_count {
                for branch in self.branches(i, a) {
                    out.push_str(&format!(
                        "{i} {a} {} {} {}\n",
                        branch.dest, branch.prob, branch.reward
                    ));
                }
            }
        }
        out.push_str("terminal\n");
        let mask: Vec<&str> = self.terminal.iter().map(|&t| if t { "1" } else { "0" }).collect();
        out.push_str(&mask.join(" "));
        out.push('\n');
        out
    }

    /// Parses the text produced by [`TransitionModel::dump`], re-validating
    /// everything and cross-checking the measured header fields.
    pub fn load(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut next = || lines.next().ok_or_else(|| Error::Parse("truncated model dump".into()));

        let magic = next()?;
        if magic != "transition-model v1" {
            return Err(Error::Parse(format!("unrecognized model header: {magic}")));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = next()?;
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| Error::Parse(format!("malformed header line: {line}")))?;
            if key != name {
                return Err(Error::Parse(format!("expected header field {name}, got {key}")));
            }
            Ok(value.to_string())
        };
        let parse_usize = |name: &str, value: &str| -> Result<usize> {
            value
                .parse()
                .map_err(|_| Error::Parse(format!("bad {name} value: {value}")))
        };

        let n_pos = parse_usize("n_pos", &field("n_pos")?)?;
        let n_vel = parse_usize("n_vel", &field("n_vel")?)?;
        let action_count = parse_usize("actions", &field("actions")?)?;
        let states = parse_usize("states", &field("states")?)?;
        let bandwidth = parse_usize("bandwidth", &field("bandwidth")?)?;
        let distinct_rewards = parse_usize("distinct_rewards", &field("distinct_rewards")?)?;
        let clamp_events: u64 = field("clamp_events")?
            .parse()
            .map_err(|_| Error::Parse("bad clamp_events value".into()))?;
        let branch_count = parse_usize("branches", &field("branches")?)?;

        if states != n_pos * n_vel {
            return Err(Error::Parse(format!(
                "states {states} does not match shape {n_pos}x{n_vel}"
            )));
        }

        let mut branches = vec![Vec::new(); states * action_count];
        for _ in 0..branch_count {
            let line = next()?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(Error::Parse(format!("malformed branch line: {line}")));
            }
            let i = parse_usize("state", parts[0])?;
            let a = parse_usize("action", parts[1])?;
            let dest = parse_usize("destination", parts[2])?;
            let prob: f64 = parts[3]
                .parse()
                .map_err(|_| Error::Parse(format!("bad probability: {}", parts[3])))?;
            let reward: f64 = parts[4]
                .parse()
                .map_err(|_| Error::Parse(format!("bad reward: {}", parts[4])))?;
            if i >= states || a >= action_count {
                return Err(Error::Parse(format!("branch indices out of range: {line}")));
            }
            branches[i * action_count + a].push(Branch { dest, prob, reward });
        }

        if next()? != "terminal" {
            return Err(Error::Parse("missing terminal section".into()));
        }
        let mask_line = next()?;
        let terminal: Vec<bool> = mask_line
            .split_whitespace()
            .map(|tok| match tok {
                "0" => Ok(false),
                "1" => Ok(true),
                _ => Err(Error::Parse(format!("bad terminal flag: {tok}"))),
            })
            .collect::<Result<_>>()?;

        let model = Self::from_parts(n_pos, n_vel, action_count, branches, terminal, clamp_events)?;
        if model.bandwidth != bandwidth {
            return Err(Error::Parse(format!(
                "header bandwidth {bandwidth} does not match measured {}",
                model.bandwidth
            )));
        }
        if model.distinct_rewards != distinct_rewards {
            return Err(Error::Parse(format!(
                "header distinct_rewards {distinct_rewards} does not match measured {}",
                model.distinct_rewards
            )));
        }
        Ok(model)
    }
}

/// Bilinear corner weights for a point `(x, y)` in the unit square:
/// `((1-x)(1-y), (1-x)y, x(1-y), xy)` over the corners
/// `(0,0), (0,1), (1,0), (1,1)`.
pub fn corner_probs(x: f64, y: f64) -> Result<[f64; 4]> {
    if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
        return Err(Error::Domain(format!(
            "corner coordinates must lie in [0,1], got ({x}, {y})"
        )));
    }
    Ok([
        (1.0 - x) * (1.0 - y),
        (1.0 - x) * y,
        x * (1.0 - y),
        x * y,
    ])
}

/// Position of `value` in a lattice of `count` evenly spaced cell centers:
/// the lower center index, the fractional offset into `[0,1]`, and whether
/// the value fell outside the lattice hull and was clamped.
fn locate(value: f64, min: f64, step: f64, count: usize) -> (usize, f64, bool) {
    let u = (value - min) / step - 0.5;
    let clamped = u < 0.0 || u > (count - 1) as f64;
    let cell = (u.floor() as isize).clamp(0, count as isize - 2) as usize;
    let frac = (u - cell as f64).clamp(0.0, 1.0);
    (cell, frac, clamped)
}

/// Builds the stochastic transition model of the environment on `grid`.
///
/// Terminal flags come from the goal test at cell centers; every
/// non-terminal (state, action) pair contributes at most four branches,
/// one per corner of the cell its landing point falls into. Branches into
/// terminal destinations carry reward 0.
pub fn build_transition_model(params: &EnvParams, grid: &GridSpec) -> Result<TransitionModel> {
    params.validate()?;
    if grid.position_min != params.position_min
        || grid.position_max != params.position_max
        || grid.velocity_min != params.velocity_min
        || grid.velocity_max != params.velocity_max
    {
        return Err(Error::Domain(
            "grid bounds do not match environment bounds".into(),
        ));
    }
    if grid.n_pos < 2 || grid.n_vel < 2 {
        return Err(Error::Domain(format!(
            "grid must be at least 2x2, got {}x{}",
            grid.n_pos, grid.n_vel
        )));
    }

    let mu = grid.num_states();
    let alpha = params.action_count;
    let mut terminal = vec![false; mu];
    for iv in 0..grid.n_vel {
        for ip in 0..grid.n_pos {
            terminal[grid.flat_index(ip, iv)] = env::goal_reached(grid.center(ip, iv), params);
        }
    }

    let mut branches = vec![Vec::new(); mu * alpha];
    let mut clamp_events = 0u64;
    for iv in 0..grid.n_vel {
        for ip in 0..grid.n_pos {
            let i = grid.flat_index(ip, iv);
            if terminal[i] {
                continue;
            }
            let from = grid.center(ip, iv);
            for a in 0..alpha {
                let out = env::step(from, a, params)?;
                let (cp, fx, clamped_p) =
                    locate(out.state.position, grid.position_min, grid.pos_step(), grid.n_pos);
                let (cv, fy, clamped_v) =
                    locate(out.state.velocity, grid.velocity_min, grid.vel_step(), grid.n_vel);
                if clamped_p || clamped_v {
                    clamp_events += 1;
                }
                let probs = corner_probs(fx, fy)?;
                let corners = [(0, 0), (0, 1), (1, 0), (1, 1)];
                let mut row = Vec::with_capacity(4);
                for (idx, (dx, dy)) in corners.iter().enumerate() {
                    let prob = probs[idx];
                    if prob == 0.0 {
                        continue;
                    }
                    let j = grid.flat_index(cp + dx, cv + dy);
                    let reward = if terminal[j] { 0.0 } else { out.reward };
                    row.push(Branch { dest: j, prob, reward });
                }
                branches[i * alpha + a] = row;
            }
        }
    }

    TransitionModel::from_parts(grid.n_pos, grid.n_vel, alpha, branches, terminal, clamp_events)
}

/// Measures the bandwidth of `model` by exhaustive scan of stored pairs:
/// the largest L-infinity distance between source and destination
/// multi-indices.
pub fn bandwidth_of(model: &TransitionModel) -> Result<usize> {
    let mut any = false;
    let mut k = 0;
    for i in 0..model.num_states() {
        let (ip, iv) = model.multi_index(i);
        for a in 0..model.action_count() {
            for branch in model.branches(i, a) {
                any = true;
                let (jp, jv) = model.multi_index(branch.dest);
                k = k.max(ip.abs_diff(jp).max(iv.abs_diff(jv)));
            }
        }
    }
    if !any {
        return Err(Error::Domain("model stores no transitions".into()));
    }
    Ok(k)
}
