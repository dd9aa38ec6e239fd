//! QUBO solvers: a seeded simulated-annealing emulator of the target
//! annealer, an exhaustive oracle for small problems, and a client for a
//! remote solver service, all behind one trait.
//!
//! Anneals run in parallel but every anneal owns a private RNG stream
//! keyed by `(seed, anneal index)`, so results are bit-identical no
//! matter how many workers execute them.

use std::time::{Duration, Instant};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qubo::{objective, QuboProblem};

/// Largest dimension [`brute_force`] will enumerate.
pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Inverse-temperature ramp over the sweeps of one anneal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BetaSchedule {
    /// Geometric ramp derived from the problem's own coefficient
    /// magnitudes: hot enough to accept the largest single-flip move
    /// half the time, cold enough to freeze the smallest diagonal.
    Auto,
    Linear { beta_start: f64, beta_end: f64 },
    Geometric { beta_start: f64, beta_end: f64 },
}

impl BetaSchedule {
    /// Linear ramp `0.1/|median| .. 10/|median|` over the nonzero
    /// coefficient magnitudes of `q`, counting off-diagonal entries
    /// twice like the full symmetric matrix does.
    pub fn median_scaled_linear(q: &QuboProblem) -> Self {
        let mut magnitudes: Vec<f64> =
            q.diag().iter().filter(|v| **v != 0.0).map(|v| v.abs()).collect();
        for &(_, _, v) in q.upper() {
            magnitudes.push(v.abs());
            magnitudes.push(v.abs());
        }
        let median = if magnitudes.is_empty() {
            1.0
        } else {
            magnitudes.sort_by(f64::total_cmp);
            magnitudes[magnitudes.len() / 2]
        };
        BetaSchedule::Linear { beta_start: 0.1 / median, beta_end: 10.0 / median }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            BetaSchedule::Auto => Ok(()),
            BetaSchedule::Linear { beta_start, beta_end }
            | BetaSchedule::Geometric { beta_start, beta_end } => {
                if !(beta_start.is_finite() && beta_end.is_finite() && beta_start < beta_end) {
                    return Err(Error::Domain(format!(
                        "schedule needs beta_start < beta_end, got {beta_start}..{beta_end}"
                    )));
                }
                if beta_start < 0.0 {
                    return Err(Error::Domain(format!("negative beta_start {beta_start}")));
                }
                if matches!(self, BetaSchedule::Geometric { .. }) && beta_start == 0.0 {
                    return Err(Error::Domain("geometric schedule needs beta_start > 0".into()));
                }
                Ok(())
            }
        }
    }

    /// Endpoint temperatures this schedule uses on `q`.
    pub fn resolve(&self, q: &QuboProblem) -> (f64, f64) {
        match *self {
            BetaSchedule::Linear { beta_start, beta_end }
            | BetaSchedule::Geometric { beta_start, beta_end } => (beta_start, beta_end),
            BetaSchedule::Auto => {
                let mut hot: Vec<f64> = q.diag().iter().map(|d| d.abs()).collect();
                for &(t, u, v) in q.upper() {
                    hot[t as usize] += 2.0 * v.abs();
                    hot[u as usize] += 2.0 * v.abs();
                }
                let delta_hot = hot.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
                let delta_cold = q
                    .diag()
                    .iter()
                    .filter(|d| **d != 0.0)
                    .map(|d| d.abs())
                    .chain(q.upper().iter().map(|&(_, _, v)| 2.0 * v.abs()))
                    .fold(f64::INFINITY, f64::min);
                let beta_start = std::f64::consts::LN_2 / delta_hot;
                let mut beta_end = if delta_cold.is_finite() { 15.0 / delta_cold } else { 1.0 };
                if beta_end <= beta_start {
                    beta_end = beta_start * 100.0;
                }
                (beta_start, beta_end)
            }
        }
    }

    fn ramp(&self, q: &QuboProblem, duration: usize) -> Vec<f64> {
        let (b0, b1) = self.resolve(q);
        let geometric = matches!(self, BetaSchedule::Geometric { .. } | BetaSchedule::Auto);
        let span = (duration - 1).max(1) as f64;
        (0..duration)
            .map(|s| {
                let f = s as f64 / span;
                if geometric {
                    b0 * (b1 / b0).powf(f)
                } else {
                    b0 + (b1 - b0) * f
                }
            })
            .collect()
    }
}

/// Settings for [`simulated_anneal`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnnealParams {
    /// Sweeps per anneal; one step proposes every bit once.
    pub duration_steps: usize,
    /// Independent restarts.
    pub num_anneals: usize,
    pub seed: u64,
    pub schedule: BetaSchedule,
}

impl AnnealParams {
    pub fn validate(&self) -> Result<()> {
        if self.duration_steps == 0 {
            return Err(Error::Domain("duration_steps must be at least 1".into()));
        }
        if self.num_anneals == 0 {
            return Err(Error::Domain("num_anneals must be at least 1".into()));
        }
        self.schedule.validate()
    }
}

impl Default for AnnealParams {
    fn default() -> Self {
        Self { duration_steps: 1280, num_anneals: 100, seed: 0, schedule: BetaSchedule::Auto }
    }
}

/// Best configuration found by a solver.
#[derive(Debug, Clone, Serialize)]
pub struct SolverResult {
    pub best_y: Vec<u8>,
    /// Exact objective of `best_y`, recomputed from the problem.
    pub best_objective: f64,
    /// Exact best objective of each anneal (or read, for the remote
    /// solver), in anneal order.
    pub anneal_objectives: Vec<f64>,
    /// Not serialized: run reports must not depend on timing.
    #[serde(skip)]
    pub wall_time: Duration,
}

/// Common interface over the local and remote QUBO solvers.
pub trait QuboSolver {
    fn solve(&self, q: &QuboProblem) -> Result<SolverResult>;
}

/// Symmetric off-diagonal adjacency with weights doubled, so the flip
/// delta of bit `t` is `±(diag[t] + sum_u w[t][u] y[u])`.
struct Adjacency {
    offsets: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn build(q: &QuboProblem) -> Self {
        let dim = q.dimension();
        let mut degree = vec![0usize; dim];
        for &(t, u, _) in q.upper() {
            degree[t as usize] += 1;
            degree[u as usize] += 1;
        }
        let mut offsets = Vec::with_capacity(dim + 1);
        let mut acc = 0;
        offsets.push(0);
        for d in &degree {
            acc += d;
            offsets.push(acc);
        }
        let mut cols = vec![0u32; acc];
        let mut weights = vec![0.0; acc];
        let mut cursor = offsets[..dim].to_vec();
        for &(t, u, v) in q.upper() {
            let w = 2.0 * v;
            cols[cursor[t as usize]] = u;
            weights[cursor[t as usize]] = w;
            cursor[t as usize] += 1;
            cols[cursor[u as usize]] = t;
            weights[cursor[u as usize]] = w;
            cursor[u as usize] += 1;
        }
        Self { offsets, cols, weights }
    }

    fn row(&self, t: usize) -> (&[u32], &[f64]) {
        let range = self.offsets[t]..self.offsets[t + 1];
        (&self.cols[range.clone()], &self.weights[range])
    }
}

#[cfg_attr(not(test), allow(dead_code))]
struct AnnealOutcome {
    best_y: Vec<u8>,
    best_maintained: f64,
    final_y: Vec<u8>,
    final_maintained: f64,
}

fn run_anneal(
    q: &QuboProblem,
    adj: &Adjacency,
    betas: &[f64],
    seed: u64,
    stream: u64,
) -> AnnealOutcome {
    let dim = q.dimension();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut y: Vec<u8> = (0..dim).map(|_| rng.random_range(0..=1u8)).collect();

    let mut field = q.diag().to_vec();
    for (s, &bit) in y.iter().enumerate() {
        if bit == 1 {
            let (cols, weights) = adj.row(s);
            for (&t, &w) in cols.iter().zip(weights) {
                field[t as usize] += w;
            }
        }
    }
    let mut current = 0.0;
    for (&bit, &d) in y.iter().zip(q.diag()) {
        if bit == 1 {
            current += d;
        }
    }
    for &(t, u, v) in q.upper() {
        if y[t as usize] & y[u as usize] == 1 {
            current += 2.0 * v;
        }
    }

    let mut best = current;
    let mut best_y = y.clone();
    for &beta in betas {
        for t in 0..dim {
            let delta = if y[t] == 0 { field[t] } else { -field[t] };
            let accept = delta <= 0.0 || rng.random::<f64>() < (-beta * delta).exp();
            if accept {
                let sign = if y[t] == 0 { 1.0 } else { -1.0 };
                y[t] ^= 1;
                current += delta;
                let (cols, weights) = adj.row(t);
                for (&u, &w) in cols.iter().zip(weights) {
                    field[u as usize] += sign * w;
                }
                if current < best {
                    best = current;
                    best_y.copy_from_slice(&y);
                }
            }
        }
    }
    AnnealOutcome { best_y, best_maintained: best, final_y: y, final_maintained: current }
}

/// Minimizes `q` with restarted single-flip Metropolis sweeps: every
/// sweep proposes each bit once in index order at the scheduled inverse
/// temperature, tracking the best configuration ever visited. The best
/// objective is recomputed exactly before returning.
pub fn simulated_anneal(q: &QuboProblem, params: &AnnealParams) -> Result<SolverResult> {
    params.validate()?;
    let start = Instant::now();
    let adj = Adjacency::build(q);
    let betas = params.schedule.ramp(q, params.duration_steps);
    let outcomes: Vec<(Vec<u8>, f64)> = (0..params.num_anneals)
        .into_par_iter()
        .map(|a| {
            let outcome = run_anneal(q, &adj, &betas, params.seed, a as u64);
            let exact = objective(q, &outcome.best_y).expect("anneal keeps bitstrings valid");
            (outcome.best_y, exact)
        })
        .collect();
    let mut best_index = 0;
    for (a, outcome) in outcomes.iter().enumerate().skip(1) {
        if outcome.1 < outcomes[best_index].1 {
            best_index = a;
        }
    }
    let anneal_objectives: Vec<f64> = outcomes.iter().map(|o| o.1).collect();
    let best_objective = anneal_objectives[best_index];
    Ok(SolverResult {
        best_y: outcomes[best_index].0.clone(),
        best_objective,
        anneal_objectives,
        wall_time: start.elapsed(),
    })
}

/// Exhaustive minimization by a Gray-code walk; ties resolve to the
/// lexicographically smallest bitstring.
pub fn brute_force(q: &QuboProblem) -> Result<SolverResult> {
    let dim = q.dimension();
    if dim > BRUTE_FORCE_LIMIT {
        return Err(Error::Capacity(format!(
            "{dim} binary variables exceed the exhaustive-search limit {BRUTE_FORCE_LIMIT}"
        )));
    }
    let start = Instant::now();
    let adj = Adjacency::build(q);
    let mut y = vec![0u8; dim];
    let mut field = q.diag().to_vec();
    let mut current = 0.0;
    let mut best = 0.0;
    let mut best_y = y.clone();
    for m in 1u64..(1 << dim) {
        let t = m.trailing_zeros() as usize;
        let delta = if y[t] == 0 { field[t] } else { -field[t] };
        let sign = if y[t] == 0 { 1.0 } else { -1.0 };
        y[t] ^= 1;
        current += delta;
        let (cols, weights) = adj.row(t);
        for (&u, &w) in cols.iter().zip(weights) {
            field[u as usize] += sign * w;
        }
        if current < best || (current == best && y < best_y) {
            best = current;
            best_y.copy_from_slice(&y);
        }
    }
    let best_objective = objective(q, &best_y)?;
    Ok(SolverResult {
        best_y,
        best_objective,
        anneal_objectives: vec![best_objective],
        wall_time: start.elapsed(),
    })
}

/// Seeded annealer behind the [`QuboSolver`] trait.
#[derive(Debug, Clone)]
pub struct SimulatedAnnealer {
    pub params: AnnealParams,
}

impl QuboSolver for SimulatedAnnealer {
    fn solve(&self, q: &QuboProblem) -> Result<SolverResult> {
        simulated_anneal(q, &self.params)
    }
}

/// Exhaustive oracle behind the [`QuboSolver`] trait.
#[derive(Debug, Clone, Default)]
pub struct BruteForce;

impl QuboSolver for BruteForce {
    fn solve(&self, q: &QuboProblem) -> Result<SolverResult> {
        brute_force(q)
    }
}

/// Endpoint settings for the remote solver service.
#[derive(Debug, Clone)]
pub struct RemoteConfig {
    pub url: String,
    pub num_reads: usize,
    pub duration_steps: usize,
    pub timeout: Duration,
    /// Additional attempts after a failed request.
    pub retries: usize,
}

impl RemoteConfig {
    pub fn new(url: impl Into<String>) -> Self {
        Self {
            url: url.into(),
            num_reads: 100,
            duration_steps: 1280,
            timeout: Duration::from_secs(30),
            retries: 2,
        }
    }
}

#[derive(Serialize)]
struct RemoteRequest<'a> {
    dimension: usize,
    triplets: &'a [(u32, u32, f64)],
    num_reads: usize,
    duration: usize,
}

#[derive(Deserialize)]
struct RemoteResponse {
    solutions: Vec<String>,
    energies: Vec<f64>,
}

/// Client that posts the problem to a solver service and re-scores the
/// returned solutions locally.
pub struct RemoteSolver {
    config: RemoteConfig,
    agent: ureq::Agent,
}

impl RemoteSolver {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        Self { config, agent }
    }

    fn request(&self, body: &RemoteRequest) -> Result<RemoteResponse> {
        let mut last_error = None;
        for _ in 0..=self.config.retries {
            match self.agent.post(&self.config.url).send_json(body) {
                Ok(mut response) => {
                    return response.body_mut().read_json::<RemoteResponse>().map_err(|e| {
                        Error::Remote(format!("malformed solver response: {e}"))
                    });
                }
                Err(e) => last_error = Some(e),
            }
        }
        Err(Error::Remote(format!(
            "request to {} failed after {} attempts: {}",
            self.config.url,
            self.config.retries + 1,
            last_error.expect("at least one attempt ran")
        )))
    }
}

impl QuboSolver for RemoteSolver {
    fn solve(&self, q: &QuboProblem) -> Result<SolverResult> {
        let start = Instant::now();
        let triplets = q.triplets();
        let body = RemoteRequest {
            dimension: q.dimension(),
            triplets: &triplets,
            num_reads: self.config.num_reads,
            duration: self.config.duration_steps,
        };
        let response = self.request(&body)?;
        if response.solutions.is_empty() {
            return Err(Error::Remote("solver returned no solutions".into()));
        }
        if response.solutions.len() != response.energies.len() {
            return Err(Error::Remote(format!(
                "{} solutions but {} energies in solver response",
                response.solutions.len(),
                response.energies.len()
            )));
        }
        let mut best: Option<(Vec<u8>, f64)> = None;
        let mut anneal_objectives = Vec::with_capacity(response.solutions.len());
        for text in &response.solutions {
            let y: Vec<u8> = text
                .chars()
                .map(|c| match c {
                    '0' => Ok(0u8),
                    '1' => Ok(1u8),
                    other => Err(Error::Remote(format!("bad bit {other:?} in solution"))),
                })
                .collect::<Result<_>>()?;
            if y.len() != q.dimension() {
                return Err(Error::Remote(format!(
                    "solution length {} does not match dimension {}",
                    y.len(),
                    q.dimension()
                )));
            }
            let value = objective(q, &y)?;
            anneal_objectives.push(value);
            if best.as_ref().is_none_or(|(_, current)| value < *current) {
                best = Some((y, value));
            }
        }
        let (best_y, best_objective) = best.expect("nonempty solutions");
        Ok(SolverResult { best_y, best_objective, anneal_objectives, wall_time: start.elapsed() })
    }
}
