//! Policy iteration where the evaluation step runs through the QUBO
//! pipeline: build the policy's linear system, encode it, hand it to a
//! solver, and decode the bitstring back into a value function.

use serde::{Serialize, Serializer};

use crate::annealer::{
    brute_force, simulated_anneal, AnnealParams, QuboSolver, RemoteConfig, RemoteSolver,
    SolverResult,
};
use crate::dp::{greedy_policy, value_iteration, Policy, ValueFunction, TIE_TOLERANCE};
use crate::grid::TransitionModel;
use crate::qubo::{build_qubo, decode, BinaryEncoding, QuboProblem};
use crate::sle::{build_sle, residual};
use crate::util::mix_seed;
use crate::{Error, Result};

/// Convergence tolerance and sweep budget for the value-iteration
/// reference inside [`accuracy_experiment`].
const REFERENCE_TOL: f64 = 1e-10;
const REFERENCE_SWEEPS: usize = 200_000;

/// Which backend solves the per-update QUBO.
#[derive(Debug, Clone)]
pub enum SolverChoice {
    Simulated,
    BruteForce,
    Remote(RemoteConfig),
}

impl Serialize for SolverChoice {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let name = match self {
            SolverChoice::Simulated => "simulated",
            SolverChoice::BruteForce => "brute-force",
            SolverChoice::Remote(_) => "remote",
        };
        serializer.serialize_str(name)
    }
}

/// Settings for one [`run_qepi`] run.
#[derive(Debug, Clone, Serialize)]
pub struct QepiConfig {
    pub gamma: f64,
    pub encoding: BinaryEncoding,
    pub anneal: AnnealParams,
    pub max_policy_updates: usize,
    pub solver: SolverChoice,
}

impl Default for QepiConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            encoding: BinaryEncoding::default(),
            anneal: AnnealParams::default(),
            max_policy_updates: 10,
            solver: SolverChoice::Simulated,
        }
    }
}

impl QepiConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && (0.0..1.0).contains(&self.gamma)) {
            return Err(Error::Domain(format!("gamma must lie in [0,1), got {}", self.gamma)));
        }
        if self.max_policy_updates == 0 {
            return Err(Error::Domain("max_policy_updates must be at least 1".into()));
        }
        self.anneal.validate()
    }
}

/// Record of a single policy update.
#[derive(Debug, Clone, Serialize)]
pub struct QepiUpdate {
    /// Policy after this update's greedy improvement.
    pub policy: Policy,
    /// Decoded value function the improvement acted on.
    pub values: ValueFunction,
    pub best_objective: f64,
    /// `‖A·values − b‖²` for this update's evaluation system.
    pub residual: f64,
    /// States whose action changed relative to the previous policy.
    pub policy_changes: usize,
    /// True when some state decoded to the most negative representable
    /// value, i.e. the encoding's `x_min` is likely too small.
    pub range_warning: bool,
}

/// One entry per executed policy update.
#[derive(Debug, Clone, Serialize)]
pub struct QepiHistory {
    pub updates: Vec<QepiUpdate>,
    /// Whether the loop stopped because the policy stopped changing
    /// (rather than hitting `max_policy_updates`).
    pub converged: bool,
}

impl QepiHistory {
    /// True when any update saturated the encoding range.
    pub fn range_warning(&self) -> bool {
        self.updates.iter().any(|u| u.range_warning)
    }
}

fn solve(q: &QuboProblem, params: &AnnealParams, solver: &SolverChoice) -> Result<SolverResult> {
    match solver {
        SolverChoice::Simulated => simulated_anneal(q, params),
        SolverChoice::BruteForce => brute_force(q),
        SolverChoice::Remote(cfg) => {
            let mut cfg = cfg.clone();
            cfg.num_reads = params.num_anneals;
            cfg.duration_steps = params.duration_steps;
            RemoteSolver::new(cfg).solve(q)
        }
    }
}

/// True when state `i`'s bits are all ones, i.e. the decode hit the
/// bottom of the representable range.
fn saturates(y: &[u8], mu: usize, n_b: usize, i: usize) -> bool {
    (0..n_b).all(|j| y[i + mu * j] == 1)
}

/// Greedy improvement against a value estimate quantized to steps of κ.
///
/// A κ/2 per-state quantization error moves any action-value comparison
/// by at most γ·κ, so differences inside that resolution are treated as
/// ties and resolved to the lowest action index.
fn improved_policy(
    model: &TransitionModel,
    values: &ValueFunction,
    gamma: f64,
    resolution: f64,
) -> Result<Policy> {
    let mut actions = Vec::with_capacity(model.num_states());
    let mut qs = vec![0.0; model.action_count()];
    for s in 0..model.num_states() {
        if model.is_terminal(s) {
            actions.push(0);
            continue;
        }
        for (a, q) in qs.iter_mut().enumerate() {
            *q = model
                .branches(s, a)
                .iter()
                .map(|b| {
                    let cont = if model.is_terminal(b.dest) { 0.0 } else { values[b.dest] };
                    b.prob * (b.reward + gamma * cont)
                })
                .sum();
        }
        let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let threshold = best - resolution.max(TIE_TOLERANCE * (1.0 + best.abs()));
        let pick = qs.iter().position(|&q| q >= threshold).expect("non-empty action set");
        actions.push(pick);
    }
    Policy::from_actions(actions, model.action_count())
}

/// Runs the full loop: evaluate the current policy through the QUBO
/// solver, decode, improve greedily, and stop once the policy is stable
/// or `max_policy_updates` is reached.
///
/// The initial policy and value function are all zeros. Each update
/// solves with a seed mixed from `(cfg.anneal.seed, update index)` so
/// updates draw independent randomness while whole runs stay
/// reproducible.
pub fn run_qepi(
    model: &TransitionModel,
    cfg: &QepiConfig,
) -> Result<(Policy, ValueFunction, QepiHistory)> {
    cfg.validate()?;
    let mu = model.num_states();
    let resolution = cfg.gamma * cfg.encoding.kappa();
    let mut policy = Policy::zeros(mu);
    let mut values = ValueFunction::zeros(mu);
    let mut updates = Vec::new();
    let mut converged = false;
    for update in 0..cfg.max_policy_updates {
        let sys = build_sle(model, &policy, cfg.gamma)?;
        let q = build_qubo(&sys, &cfg.encoding)?;
        let mut params = cfg.anneal;
        params.seed = mix_seed(cfg.anneal.seed, update as u64);
        let solved = solve(&q, &params, &cfg.solver)?;
        let x = decode(&solved.best_y, &cfg.encoding, mu)?;
        let range_warning = (0..mu).any(|i| saturates(&solved.best_y, mu, cfg.encoding.n_b(), i));
        let update_residual = residual(&sys, &x)?;
        values = ValueFunction::from_values(x)?;
        let next = improved_policy(model, &values, cfg.gamma, resolution)?;
        let policy_changes = next.differences(&policy);
        updates.push(QepiUpdate {
            policy: next.clone(),
            values: values.clone(),
            best_objective: solved.best_objective,
            residual: update_residual,
            policy_changes,
            range_warning,
        });
        policy = next;
        if policy_changes == 0 {
            converged = true;
            break;
        }
    }
    Ok((policy, values, QepiHistory { updates, converged }))
}

/// Accuracy of repeated runs over a (duration, anneal-count) grid.
///
/// `accuracy[d][a]` is the fraction of `runs` whose final policy equals
/// the value-iteration policy on every state.
#[derive(Debug, Clone, Serialize)]
pub struct AccuracyTable {
    pub durations: Vec<usize>,
    pub num_anneals: Vec<usize>,
    pub runs: usize,
    pub accuracy: Vec<Vec<f64>>,
}

impl AccuracyTable {
    /// One row per duration, one column per anneal count.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("duration");
        for a in &self.num_anneals {
            out.push_str(&format!(",{a}"));
        }
        out.push('\n');
        for (d, row) in self.durations.iter().zip(&self.accuracy) {
            out.push_str(&d.to_string());
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn cell(&self, duration: usize, anneals: usize) -> Option<f64> {
        let d = self.durations.iter().position(|&x| x == duration)?;
        let a = self.num_anneals.iter().position(|&x| x == anneals)?;
        Some(self.accuracy[d][a])
    }
}

/// Runs `run_qepi` `runs` times per (duration, anneal-count) cell and
/// scores each run against the value-iteration policy.
///
/// Run seeds mix `(master_seed, cell index, run index)` so every run is
/// independent and the whole table is reproducible; cells and runs may
/// execute concurrently without changing the result.
pub fn accuracy_experiment(
    model: &TransitionModel,
    cfg: &QepiConfig,
    durations: &[usize],
    num_anneals: &[usize],
    runs: usize,
    master_seed: u64,
) -> Result<AccuracyTable> {
    cfg.validate()?;
    if durations.is_empty() || num_anneals.is_empty() {
        return Err(Error::Domain("experiment grid must be non-empty".into()));
    }
    if runs == 0 {
        return Err(Error::Domain("runs must be at least 1".into()));
    }
    let reference = value_iteration(model, cfg.gamma, REFERENCE_SWEEPS, REFERENCE_TOL)?;
    let vi_policy = greedy_policy(model, &reference.values, cfg.gamma);

    let mut tasks = Vec::new();
    for (d_idx, &duration) in durations.iter().enumerate() {
        for (a_idx, &anneals) in num_anneals.iter().enumerate() {
            let cell = (d_idx * num_anneals.len() + a_idx) as u64;
            for run in 0..runs {
                tasks.push((d_idx, a_idx, duration, anneals, mix_seed(mix_seed(master_seed, cell), run as u64)));
            }
        }
    }

    use rayon::prelude::*;
    let outcomes: Result<Vec<(usize, usize, bool)>> = tasks
        .par_iter()
        .map(|&(d_idx, a_idx, duration, anneals, seed)| {
            let mut run_cfg = cfg.clone();
            run_cfg.anneal.duration_steps = duration;
            run_cfg.anneal.num_anneals = anneals;
            run_cfg.anneal.seed = seed;
            let (final_policy, _, _) = run_qepi(model, &run_cfg)?;
            Ok((d_idx, a_idx, final_policy == vi_policy))
        })
        .collect();

    let mut hits = vec![vec![0usize; num_anneals.len()]; durations.len()];
    for (d_idx, a_idx, matched) in outcomes? {
        if matched {
            hits[d_idx][a_idx] += 1;
        }
    }
    let accuracy = hits
        .into_iter()
        .map(|row| row.into_iter().map(|h| h as f64 / runs as f64).collect())
        .collect();
    Ok(AccuracyTable {
        durations: durations.to_vec(),
        num_anneals: num_anneals.to_vec(),
        runs,
        accuracy,
    })
}

/// Upper bound on the number of policy updates needed to reach an
/// ε-optimal policy when values are stored in `bits` binary digits:
/// `(bits + ln(1/ε) + ln(1/(1−γ) + 1)) / (1−γ)`.
pub fn pi_update_upper_bound(bits: u32, epsilon: f64, gamma: f64) -> Result<f64> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Domain(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
        return Err(Error::Domain(format!("gamma must lie in [0,1), got {gamma}")));
    }
    let b = f64::from(bits);
    Ok((b + (1.0 / epsilon).ln() + (1.0 / (1.0 - gamma) + 1.0).ln()) / (1.0 - gamma))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annealer::BetaSchedule;
    use crate::fixtures::{chain, mountain_car};
    use crate::grid::Branch;
    use crate::sle::classical_solve;

    fn chain_config(n_b: usize, x_min: f64) -> QepiConfig {
        QepiConfig {
            encoding: BinaryEncoding::new(n_b, x_min).unwrap(),
            solver: SolverChoice::BruteForce,
            ..QepiConfig::default()
        }
    }

    #[test]
    fn chain_run_recovers_classical_values_within_one_step() {
        let model = chain(3);
        let cfg = chain_config(6, -4.0);
        let (policy, values, history) = run_qepi(&model, &cfg).unwrap();

        let reference = value_iteration(&model, 0.99, 10_000, 1e-12).unwrap();
        let vi_policy = greedy_policy(&model, &reference.values, 0.99);
        assert_eq!(policy, vi_policy);
        assert!(history.converged);

        let kappa = cfg.encoding.kappa();
        for (got, want) in values.as_slice().iter().zip([-1.99, -1.0, 0.0]) {
            assert!((got - want).abs() <= kappa, "{got} vs {want}");
        }
    }

    #[test]
    fn chain_decode_matches_quantized_classical_solution() {
        let model = chain(3);
        let cfg = chain_config(6, -4.0);
        let sys = build_sle(&model, &Policy::zeros(3), cfg.gamma).unwrap();
        let exact = classical_solve(&sys).unwrap();
        let (_, values, _) = run_qepi(&model, &cfg).unwrap();
        for (got, want) in values.as_slice().iter().zip(exact) {
            assert!((got - want).abs() <= cfg.encoding.kappa());
        }
    }

    #[test]
    fn all_terminal_model_converges_in_one_update() {
        let branches = vec![Vec::new(); 4 * 3];
        let model =
            TransitionModel::from_parts(2, 2, 3, branches, vec![true; 4], 0).unwrap();
        let cfg = chain_config(4, -4.0);
        let (policy, values, history) = run_qepi(&model, &cfg).unwrap();
        assert_eq!(history.updates.len(), 1);
        assert!(history.converged);
        assert_eq!(history.updates[0].policy_changes, 0);
        assert_eq!(policy, Policy::zeros(4));
        assert!(values.as_slice().iter().all(|&v| v == 0.0));
    }

    /// Two states, two actions: staying loops at cost while leaving ends
    /// the episode, so the optimal action at state 0 is to leave.
    fn leave_or_stay() -> TransitionModel {
        let branches = vec![
            vec![Branch { dest: 0, prob: 1.0, reward: -1.0 }],
            vec![Branch { dest: 1, prob: 1.0, reward: -1.0 }],
            Vec::new(),
            Vec::new(),
        ];
        TransitionModel::from_parts(2, 1, 2, branches, vec![false, true], 0).unwrap()
    }

    #[test]
    fn brute_force_tracks_exact_policy_iteration_as_resolution_improves() {
        let model = leave_or_stay();
        let reference = value_iteration(&model, 0.99, 10_000, 1e-12).unwrap();
        let vi_policy = greedy_policy(&model, &reference.values, 0.99);
        assert_eq!(vi_policy.actions(), &[1, 0]);
        for n_b in [4, 8, 12] {
            let cfg = chain_config(n_b, -4.0);
            let (policy, _, history) = run_qepi(&model, &cfg).unwrap();
            assert_eq!(policy, vi_policy, "n_b={n_b}");
            assert!(history.converged);
        }
    }

    #[test]
    fn four_by_four_annealed_run_agrees_with_value_iteration() {
        let model = mountain_car(4, 4);
        let cfg = QepiConfig {
            anneal: AnnealParams { seed: 7, ..AnnealParams::default() },
            ..QepiConfig::default()
        };
        let (policy, values, history) = run_qepi(&model, &cfg).unwrap();

        let reference = value_iteration(&model, 0.99, 200_000, 1e-10).unwrap();
        let vi_policy = greedy_policy(&model, &reference.values, 0.99);
        assert_eq!(policy, vi_policy);
        assert!(history.converged);
        assert!(history.updates.len() <= 10);

        let bound = 3.0 * cfg.encoding.kappa();
        for (got, want) in values.as_slice().iter().zip(reference.values.as_slice()) {
            assert!((got - want).abs() <= bound, "{got} vs {want}");
        }
    }

    #[test]
    fn history_has_one_entry_per_update_and_marks_convergence() {
        let model = mountain_car(4, 4);
        let cfg = QepiConfig {
            anneal: AnnealParams {
                duration_steps: 2,
                num_anneals: 1,
                seed: 123,
                schedule: BetaSchedule::Auto,
            },
            max_policy_updates: 4,
            ..QepiConfig::default()
        };
        let (_, _, history) = run_qepi(&model, &cfg).unwrap();
        assert!(!history.updates.is_empty());
        if history.converged {
            assert_eq!(history.updates.last().unwrap().policy_changes, 0);
        } else {
            assert_eq!(history.updates.len(), 4);
        }
        for update in &history.updates {
            assert!(update.residual.is_finite());
            assert_eq!(update.policy.len(), 16);
            assert_eq!(update.values.len(), 16);
        }
    }

    #[test]
    fn undersized_range_sets_warning() {
        let model = chain(3);
        let cfg = chain_config(2, -0.1);
        let (_, _, history) = run_qepi(&model, &cfg).unwrap();
        assert!(history.range_warning());
    }

    #[test]
    fn ample_range_leaves_warning_clear() {
        let model = chain(3);
        let cfg = chain_config(6, -4.0);
        let (_, _, history) = run_qepi(&model, &cfg).unwrap();
        assert!(!history.range_warning());
    }

    #[test]
    fn rejects_invalid_config() {
        let model = chain(2);
        let bad_gamma = QepiConfig { gamma: 1.0, ..QepiConfig::default() };
        assert!(matches!(run_qepi(&model, &bad_gamma), Err(Error::Domain(_))));
        let no_updates = QepiConfig { max_policy_updates: 0, ..QepiConfig::default() };
        assert!(matches!(run_qepi(&model, &no_updates), Err(Error::Domain(_))));
    }

    #[test]
    fn repeated_runs_serialize_identically() {
        let model = mountain_car(4, 4);
        let cfg = QepiConfig {
            anneal: AnnealParams {
                duration_steps: 64,
                num_anneals: 8,
                seed: 99,
                schedule: BetaSchedule::Auto,
            },
            ..QepiConfig::default()
        };
        let (p1, v1, h1) = run_qepi(&model, &cfg).unwrap();
        let (p2, v2, h2) = run_qepi(&model, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(v1, v2);
        assert_eq!(
            serde_json::to_string(&h1).unwrap(),
            serde_json::to_string(&h2).unwrap()
        );
    }

    #[test]
    fn brute_force_accuracy_is_perfect_everywhere() {
        let model = chain(3);
        let cfg = chain_config(6, -4.0);
        let table =
            accuracy_experiment(&model, &cfg, &[1, 2], &[1, 2], 3, 41).unwrap();
        for row in &table.accuracy {
            for &cell in row {
                assert_eq!(cell, 1.0);
            }
        }
    }

    #[test]
    fn accuracy_grows_with_solver_budget() {
        let model = mountain_car(4, 4);
        let cfg = QepiConfig::default();
        let table =
            accuracy_experiment(&model, &cfg, &[1, 1280], &[1, 100], 10, 2024).unwrap();
        let starved = table.cell(1, 1).unwrap();
        let full = table.cell(1280, 100).unwrap();
        assert!(starved < full, "starved {starved} vs full {full}");
        assert!(full >= 0.9, "full-budget accuracy {full}");
    }

    #[test]
    fn accuracy_csv_layout_is_durations_by_anneals() {
        let table = AccuracyTable {
            durations: vec![16, 1280],
            num_anneals: vec![4, 100],
            runs: 2,
            accuracy: vec![vec![0.0, 0.5], vec![0.5, 1.0]],
        };
        assert_eq!(table.to_csv(), "duration,4,100\n16,0,0.5\n1280,0.5,1\n");
    }

    #[test]
    fn experiment_rejects_empty_grid_and_zero_runs() {
        let model = chain(2);
        let cfg = chain_config(4, -4.0);
        assert!(accuracy_experiment(&model, &cfg, &[], &[1], 1, 0).is_err());
        assert!(accuracy_experiment(&model, &cfg, &[1], &[1], 0, 0).is_err());
    }

    #[test]
    fn update_bound_matches_direct_evaluation() {
        let got = pi_update_upper_bound(16, 0.01, 0.9).unwrap();
        assert!((got - 230.03065458786472).abs() < 1e-9);
        let at_zero = pi_update_upper_bound(16, 0.01, 0.0).unwrap();
        assert!((at_zero - 21.298317366548037).abs() < 1e-12);
        let slack = pi_update_upper_bound(10, 0.5, 0.99).unwrap();
        assert!((slack - 1530.826769740119).abs() < 1e-9);
    }

    #[test]
    fn update_bound_grows_with_gamma() {
        let mut last = 0.0;
        for gamma in [0.0, 0.5, 0.9, 0.99] {
            let b = pi_update_upper_bound(16, 0.01, gamma).unwrap();
            assert!(b > last);
            last = b;
        }
    }

    #[test]
    fn update_bound_rejects_bad_domain() {
        assert!(pi_update_upper_bound(16, 0.01, 1.0).is_err());
        assert!(pi_update_upper_bound(16, 0.0, 0.5).is_err());
        assert!(pi_update_upper_bound(16, -1.0, 0.5).is_err());
    }
}
