//! Classical dynamic programming on the grid model: value iteration,
//! iterative policy evaluation, greedy policy extraction, and soft value
//! iteration where the action-value field is blurred with a Gaussian
//! kernel each sweep.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::TransitionModel;

/// Relative tolerance under which action values count as tied in greedy
/// argmax decisions; ties resolve to the lowest action index. Keeps
/// policies deterministic when a problem makes actions exactly equivalent
/// up to floating-point noise.
pub const TIE_TOLERANCE: f64 = 1e-9;

/// Sweep cap for [`policy_evaluation_iterative`], which takes no explicit cap.
const EVAL_SWEEP_CAP: usize = 200_000;

/// State values on the grid, one entry per flat state index.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(transparent)]
pub struct ValueFunction {
    values: Vec<f64>,
}

impl ValueFunction {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite value {bad} in value function")));
        }
        Ok(Self { values })
    }

    pub fn zeros(len: usize) -> Self {
        Self { values: vec![0.0; len] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Largest absolute componentwise difference to `other`.
    pub fn sup_distance(&self, other: &ValueFunction) -> f64 {
        assert_eq!(self.len(), other.len(), "value function lengths differ");
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<usize> for ValueFunction {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.values[i]
    }
}

/// One action index per grid state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Policy {
    actions: Vec<usize>,
}

impl Policy {
    pub fn from_actions(actions: Vec<usize>, action_count: usize) -> Result<Self> {
        if let Some(bad) = actions.iter().find(|&&a| a >= action_count) {
            return Err(Error::Domain(format!(
                "policy action {bad} out of range 0..{action_count}"
            )));
        }
        Ok(Self { actions })
    }

    pub fn zeros(len: usize) -> Self {
        Self { actions: vec![0; len] }
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Number of states on which the two policies disagree.
    pub fn differences(&self, other: &Policy) -> usize {
        assert_eq!(self.len(), other.len(), "policy lengths differ");
        self.actions.iter().zip(&other.actions).filter(|(a, b)| a != b).count()
    }
}

impl std::ops::Index<usize> for Policy {
    type Output = usize;

    fn index(&self, i: usize) -> &usize {
        &self.actions[i]
    }
}

/// Gaussian smoothing settings for soft value iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SoftParams {
    /// Blur standard deviation, in grid cells.
    pub sigma: f64,
    /// Kernel truncation radius, in standard deviations.
    pub truncation_radius: f64,
}

impl Default for SoftParams {
    fn default() -> Self {
        Self { sigma: 10.0, truncation_radius: 4.0 }
    }
}

impl SoftParams {
    fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::Domain(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(self.truncation_radius.is_finite() && self.truncation_radius > 0.0) {
            return Err(Error::Domain(format!(
                "truncation_radius must be > 0, got {}",
                self.truncation_radius
            )));
        }
        Ok(())
    }
}

/// Result of an iterative sweep procedure.
#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub values: ValueFunction,
    /// Sweeps actually executed.
    pub sweeps: usize,
    /// Whether the sup-norm change dropped below the tolerance.
    pub converged: bool,
    /// Sup-norm change after each sweep.
    pub deltas: Vec<f64>,
}

/// Result of soft value iteration: values plus the blurred-argmax policy.
#[derive(Debug, Clone)]
pub struct SoftSweepOutcome {
    pub values: ValueFunction,
    pub policy: Policy,
    pub sweeps: usize,
    pub converged: bool,
    pub deltas: Vec<f64>,
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
        return Err(Error::Domain(format!("gamma must lie in [0,1), got {gamma}")));
    }
    Ok(())
}

fn check_tol(tol: f64) -> Result<()> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::Domain(format!("tolerance must be positive, got {tol}")));
    }
    Ok(())
}

/// One-step look-ahead value of (state, action) under `values`.
fn action_value(
    model: &TransitionModel,
    values: &[f64],
    gamma: f64,
    state: usize,
    action: usize,
) -> f64 {
    let mut q = 0.0;
    for b in model.branches(state, action) {
        q += b.prob * (b.reward + gamma * values[b.dest]);
    }
    q
}

/// Index of the largest entry, treating values within [`TIE_TOLERANCE`]
/// (relative to the maximum's magnitude) as tied and preferring the
/// lowest index among ties.
fn argmax_with_ties(qs: &[f64]) -> usize {
    let best = qs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = best - TIE_TOLERANCE * (1.0 + best.abs());
    qs.iter().position(|&q| q >= threshold).expect("non-empty action set")
}

/// Synchronous value iteration with terminal states pinned at 0.
///
/// Runs until the sup-norm change drops below `tol` or `sweeps` sweeps
/// have executed; the outcome's `converged` flag records which happened.
pub fn value_iteration(
    model: &TransitionModel,
    gamma: f64,
    sweeps: usize,
    tol: f64,
) -> Result<SweepOutcome> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    let mu = model.num_states();
    let mut current = vec![0.0; mu];
    let mut next = vec![0.0; mu];
    let mut deltas = Vec::new();
    for sweep in 1..=sweeps {
        let mut delta: f64 = 0.0;
        for i in 0..mu {
            let value = if model.is_terminal(i) {
                0.0
            } else {
                let mut best = f64::NEG_INFINITY;
                for a in 0..model.action_count() {
                    best = best.max(action_value(model, &current, gamma, i, a));
                }
                best
            };
            delta = delta.max((value - current[i]).abs());
            next[i] = value;
        }
        std::mem::swap(&mut current, &mut next);
        deltas.push(delta);
        if delta < tol {
            return Ok(SweepOutcome {
                values: ValueFunction { values: current },
                sweeps: sweep,
                converged: true,
                deltas,
            });
        }
    }
    Ok(SweepOutcome {
        values: ValueFunction { values: current },
        sweeps,
        converged: false,
        deltas,
    })
}

/// One-step greedy policy with respect to `values`.
pub fn greedy_policy(model: &TransitionModel, values: &ValueFunction, gamma: f64) -> Policy {
    assert_eq!(values.len(), model.num_states(), "value function length mismatch");
    let mut actions = Vec::with_capacity(model.num_states());
    let mut qs = vec![0.0; model.action_count()];
    for i in 0..model.num_states() {
        if model.is_terminal(i) {
            actions.push(0);
            continue;
        }
        for (a, q) in qs.iter_mut().enumerate() {
            *q = action_value(model, values.as_slice(), gamma, i, a);
        }
        actions.push(argmax_with_ties(&qs));
    }
    Policy { actions }
}

/// Iterative (Jacobi) policy evaluation to a fixed point within `tol`.
pub fn policy_evaluation_iterative(
    model: &TransitionModel,
    pi: &Policy,
    gamma: f64,
    tol: f64,
) -> Result<SweepOutcome> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    if pi.len() != model.num_states() {
        return Err(Error::Domain(format!(
            "policy length {} does not match state count {}",
            pi.len(),
            model.num_states()
        )));
    }
    if let Some(bad) = pi.actions.iter().find(|&&a| a >= model.action_count()) {
        return Err(Error::Domain(format!("policy action {bad} out of range")));
    }
    let mu = model.num_states();
    let mut current = vec![0.0; mu];
    let mut next = vec![0.0; mu];
    let mut deltas = Vec::new();
    for sweep in 1..=EVAL_SWEEP_CAP {
        let mut delta: f64 = 0.0;
        for i in 0..mu {
            let value = if model.is_terminal(i) {
                0.0
            } else {
                action_value(model, &current, gamma, i, pi[i])
            };
            delta = delta.max((value - current[i]).abs());
            next[i] = value;
        }
        std::mem::swap(&mut current, &mut next);
        deltas.push(delta);
        if delta < tol {
            return Ok(SweepOutcome {
                values: ValueFunction { values: current },
                sweeps: sweep,
                converged: true,
                deltas,
            });
        }
    }
    Ok(SweepOutcome {
        values: ValueFunction { values: current },
        sweeps: EVAL_SWEEP_CAP,
        converged: false,
        deltas,
    })
}

/// Normalized Gaussian taps at integer offsets within the truncation radius.
fn gaussian_kernel(sigma: f64, truncation_radius: f64) -> Vec<f64> {
    let radius = (sigma * truncation_radius).ceil() as isize;
    let mut weights = Vec::with_capacity(2 * radius as usize + 1);
    for d in -radius..=radius {
        let t = d as f64 / sigma;
        weights.push((-0.5 * t * t).exp());
    }
    let total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= total;
    }
    weights
}

/// Separable Gaussian blur over the grid. Near the boundary, out-of-range
/// taps are dropped and the remaining weights rescaled, keeping every
/// output a convex combination of inputs.
fn blur_grid(field: &[f64], n_pos: usize, n_vel: usize, kernel: &[f64]) -> Vec<f64> {
    assert_eq!(field.len(), n_pos * n_vel);
    let radius = (kernel.len() / 2) as isize;
    let pass = |input: &[f64], output: &mut [f64], len: isize, stride: usize, lanes: usize,
                lane_stride: usize| {
        for lane in 0..lanes {
            let base = lane * lane_stride;
            for i in 0..len {
                let mut acc = 0.0;
                let mut weight = 0.0;
                for (t, &w) in kernel.iter().enumerate() {
                    let j = i + t as isize - radius;
                    if (0..len).contains(&j) {
                        acc += w * input[base + j as usize * stride];
                        weight += w;
                    }
                }
                output[base + i as usize * stride] = acc / weight;
            }
        }
    };
    let mut tmp = vec![0.0; field.len()];
    // Along position within each velocity row, then along velocity.
    pass(field, &mut tmp, n_pos as isize, 1, n_vel, n_pos);
    let mut out = vec![0.0; field.len()];
    pass(&tmp, &mut out, n_vel as isize, n_pos, n_pos, 1);
    out
}

/// Value iteration where each sweep blurs every action's value slice over
/// the grid before the max; the returned policy is the blurred argmax at
/// the final values. With `sigma = 0` this reduces exactly to
/// [`value_iteration`] plus [`greedy_policy`].
pub fn soft_value_iteration(
    model: &TransitionModel,
    gamma: f64,
    soft: &SoftParams,
    sweeps: usize,
    tol: f64,
) -> Result<SoftSweepOutcome> {
    check_gamma(gamma)?;
    check_tol(tol)?;
    soft.validate()?;
    let (n_pos, n_vel) = model.shape();
    let mu = model.num_states();
    let alpha = model.action_count();
    let kernel = if soft.sigma > 0.0 {
        Some(gaussian_kernel(soft.sigma, soft.truncation_radius))
    } else {
        None
    };

    let blurred_qs = |values: &[f64]| -> Vec<Vec<f64>> {
        (0..alpha)
            .map(|a| {
                let q: Vec<f64> =
                    (0..mu).map(|i| action_value(model, values, gamma, i, a)).collect();
                match &kernel {
                    Some(k) => blur_grid(&q, n_pos, n_vel, k),
                    None => q,
                }
            })
            .collect()
    };

    let mut current = vec![0.0; mu];
    let mut deltas = Vec::new();
    let mut executed = 0;
    let mut converged = false;
    for _ in 0..sweeps {
        executed += 1;
        let qs = blurred_qs(&current);
        let mut delta: f64 = 0.0;
        let mut next = vec![0.0; mu];
        for i in 0..mu {
            let value = if model.is_terminal(i) {
                0.0
            } else {
                let mut best = f64::NEG_INFINITY;
                for q in &qs {
                    best = best.max(q[i]);
                }
                best
            };
            delta = delta.max((value - current[i]).abs());
            next[i] = value;
        }
        current = next;
        deltas.push(delta);
        if delta < tol {
            converged = true;
            break;
        }
    }

    let qs = blurred_qs(&current);
    let mut actions = Vec::with_capacity(mu);
    let mut row = vec![0.0; alpha];
    for i in 0..mu {
        if model.is_terminal(i) {
            actions.push(0);
            continue;
        }
        for (a, slot) in row.iter_mut().enumerate() {
            *slot = qs[a][i];
        }
        actions.push(argmax_with_ties(&row));
    }

    Ok(SoftSweepOutcome {
        values: ValueFunction { values: current },
        policy: Policy { actions },
        sweeps: executed,
        converged,
        deltas,
    })
}

/// Number of 4-connected regions of equal action in a policy on the grid.
pub fn count_action_regions(policy: &Policy, n_pos: usize, n_vel: usize) -> usize {
    assert_eq!(policy.len(), n_pos * n_vel, "policy length mismatch");
    let mut visited = vec![false; policy.len()];
    let mut regions = 0;
    let mut stack = Vec::new();
    for start in 0..policy.len() {
        if visited[start] {
            continue;
        }
        regions += 1;
        visited[start] = true;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (ip, iv) = (i % n_pos, i / n_pos);
            let action = policy[i];
            let mut try_visit = |jp: usize, jv: usize, stack: &mut Vec<usize>| {
                let j = jv * n_pos + jp;
                if !visited[j] && policy[j] == action {
                    visited[j] = true;
                    stack.push(j);
                }
            };
            if ip > 0 {
                try_visit(ip - 1, iv, &mut stack);
            }
            if ip + 1 < n_pos {
                try_visit(ip + 1, iv, &mut stack);
            }
            if iv > 0 {
                try_visit(ip, iv - 1, &mut stack);
            }
            if iv + 1 < n_vel {
                try_visit(ip, iv + 1, &mut stack);
            }
        }
    }
    regions
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{chain, mountain_car};
    use crate::grid::Branch;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn two_state_chain_has_one_step_horizon() {
        let out = value_iteration(&chain(2), 0.99, 100, 1e-12).unwrap();
        assert!(out.converged);
        assert!((out.values[0] - -1.0).abs() < 1e-12);
        assert_eq!(out.values[1], 0.0);
    }

    #[test]
    fn three_state_chain_matches_backward_induction() {
        let out = value_iteration(&chain(3), 0.99, 100, 1e-12).unwrap();
        assert!(out.converged);
        assert!((out.values[0] - -1.99).abs() < 1e-12);
        assert!((out.values[1] - -1.0).abs() < 1e-12);
        assert_eq!(out.values[2], 0.0);
    }

    #[test]
    fn gamma_zero_maximizes_expected_immediate_reward() {
        let model = mountain_car(8, 8);
        let out = value_iteration(&model, 0.0, 10, 1e-12).unwrap();
        for i in 0..model.num_states() {
            let expected = if model.is_terminal(i) {
                0.0
            } else {
                (0..model.action_count())
                    .map(|a| {
                        model.branches(i, a).iter().map(|b| b.prob * b.reward).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            };
            assert!((out.values[i] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn sweep_cap_reports_unconverged() {
        let out = value_iteration(&mountain_car(8, 8), 0.99, 3, 1e-12).unwrap();
        assert!(!out.converged);
        assert_eq!(out.sweeps, 3);
        assert_eq!(out.deltas.len(), 3);
    }

    #[test]
    fn deltas_contract_after_burn_in() {
        let out = value_iteration(&mountain_car(8, 8), 0.9, 300, 1e-10).unwrap();
        assert!(out.converged);
        for pair in out.deltas.windows(2).skip(1) {
            assert!(pair[1] <= pair[0] + 1e-15, "deltas increased: {pair:?}");
        }
    }

    #[test]
    fn rejects_bad_gamma_and_tol() {
        let model = chain(2);
        assert!(value_iteration(&model, 1.0, 10, 1e-9).is_err());
        assert!(value_iteration(&model, -0.1, 10, 1e-9).is_err());
        assert!(value_iteration(&model, 0.9, 10, 0.0).is_err());
    }

    fn two_action_escape_model() -> TransitionModel {
        // Action 0 self-loops, action 1 coasts in place, action 2 reaches
        // the terminal state; all moves cost -1.
        let branches = vec![
            vec![Branch { dest: 0, prob: 1.0, reward: -1.0 }],
            vec![Branch { dest: 0, prob: 1.0, reward: -1.0 }],
            vec![Branch { dest: 1, prob: 1.0, reward: -1.0 }],
            Vec::new(),
            Vec::new(),
            Vec::new(),
        ];
        TransitionModel::from_parts(2, 1, 3, branches, vec![false, true], 0).unwrap()
    }

    #[test]
    fn greedy_prefers_terminal_escape() {
        let model = two_action_escape_model();
        let out = value_iteration(&model, 0.99, 1000, 1e-12).unwrap();
        let pi = greedy_policy(&model, &out.values, 0.99);
        assert_eq!(pi.actions(), &[2, 0]);
    }

    #[test]
    fn greedy_breaks_exact_ties_toward_action_zero() {
        // All three actions identical.
        let row = vec![Branch { dest: 1, prob: 1.0, reward: -1.0 }];
        let branches = vec![row.clone(), row.clone(), row, Vec::new(), Vec::new(), Vec::new()];
        let model =
            TransitionModel::from_parts(2, 1, 3, branches, vec![false, true], 0).unwrap();
        let values = ValueFunction::from_values(vec![-1.0, 0.0]).unwrap();
        let pi = greedy_policy(&model, &values, 0.99);
        assert_eq!(pi.actions(), &[0, 0]);
    }

    #[test]
    fn greedy_is_invariant_to_constant_shifts() {
        let model = mountain_car(8, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let base: Vec<f64> = (0..model.num_states()).map(|_| -rng.random::<f64>()).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + 5.0).collect();
        let pi_base =
            greedy_policy(&model, &ValueFunction::from_values(base).unwrap(), 0.99);
        let pi_shift =
            greedy_policy(&model, &ValueFunction::from_values(shifted).unwrap(), 0.99);
        assert_eq!(pi_base, pi_shift);
    }

    #[test]
    fn policy_evaluation_on_terminal_only_model_is_zero() {
        let model = TransitionModel::from_parts(
            2,
            1,
            1,
            vec![Vec::new(), Vec::new()],
            vec![true, true],
            0,
        )
        .unwrap();
        let out =
            policy_evaluation_iterative(&model, &Policy::zeros(2), 0.99, 1e-10).unwrap();
        assert_eq!(out.values.as_slice(), &[0.0, 0.0]);
        assert!(out.converged);
    }

    #[test]
    fn policy_evaluation_matches_chain_induction() {
        let model = chain(3);
        let out =
            policy_evaluation_iterative(&model, &Policy::zeros(3), 0.99, 1e-13).unwrap();
        assert!((out.values[0] - -1.99).abs() < 1e-10);
        assert!((out.values[1] - -1.0).abs() < 1e-10);
        assert_eq!(out.values[2], 0.0);
    }

    #[test]
    fn policy_evaluation_rejects_mismatched_policy() {
        let model = chain(3);
        assert!(policy_evaluation_iterative(&model, &Policy::zeros(2), 0.99, 1e-10).is_err());
        let bad = Policy::from_actions(vec![1, 1, 1], 2).unwrap();
        assert!(policy_evaluation_iterative(&model, &bad, 0.99, 1e-10).is_err());
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        let k = gaussian_kernel(2.0, 4.0);
        assert_eq!(k.len(), 17);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..k.len() / 2 {
            assert_eq!(k[i], k[k.len() - 1 - i]);
        }
    }

    #[test]
    fn blur_preserves_constant_fields() {
        let field = vec![3.25; 12 * 9];
        let kernel = gaussian_kernel(1.5, 4.0);
        let out = blur_grid(&field, 12, 9, &kernel);
        for v in out {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn blur_commutes_with_constant_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let field: Vec<f64> = (0..10 * 7).map(|_| rng.random::<f64>()).collect();
        let shifted: Vec<f64> = field.iter().map(|v| v + 2.5).collect();
        let kernel = gaussian_kernel(1.0, 4.0);
        let a = blur_grid(&field, 10, 7, &kernel);
        let b = blur_grid(&shifted, 10, 7, &kernel);
        for (x, y) in a.iter().zip(&b) {
            assert!((y - x - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn soft_with_zero_sigma_equals_plain_value_iteration() {
        let model = mountain_car(8, 8);
        let soft = SoftParams { sigma: 0.0, truncation_radius: 4.0 };
        let plain = value_iteration(&model, 0.9, 400, 1e-9).unwrap();
        let softened = soft_value_iteration(&model, 0.9, &soft, 400, 1e-9).unwrap();
        assert_eq!(plain.values, softened.values);
        assert_eq!(plain.sweeps, softened.sweeps);
        let pi = greedy_policy(&model, &plain.values, 0.9);
        assert_eq!(pi, softened.policy);
    }

    #[test]
    fn soft_rejects_negative_sigma() {
        let model = chain(3);
        let soft = SoftParams { sigma: -1.0, truncation_radius: 4.0 };
        assert!(soft_value_iteration(&model, 0.9, &soft, 10, 1e-9).is_err());
    }

    #[test]
    fn region_count_distinguishes_striped_and_uniform_policies() {
        let uniform = Policy::from_actions(vec![1; 9], 3).unwrap();
        assert_eq!(count_action_regions(&uniform, 3, 3), 1);
        // Vertical stripes 0|1|0.
        let stripes = Policy::from_actions(vec![0, 1, 0, 0, 1, 0, 0, 1, 0], 3).unwrap();
        assert_eq!(count_action_regions(&stripes, 3, 3), 3);
        // Checkerboard: every cell its own region.
        let checker = Policy::from_actions(vec![0, 1, 0, 1, 0, 1, 0, 1, 0], 3).unwrap();
        assert_eq!(count_action_regions(&checker, 3, 3), 9);
    }
}
