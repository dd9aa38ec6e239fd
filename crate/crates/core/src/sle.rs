//! The policy-evaluation linear system `A x = b` built from a transition
//! model and a fixed policy, stored sparsely per row, plus a classical
//! reference solver used to validate the QUBO chain.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::dp::Policy;
use crate::error::{Error, Result};
use crate::grid::TransitionModel;

/// Largest dimension solved by dense LU; larger systems fall back to
/// Gauss-Seidel iteration.
const DENSE_SOLVE_LIMIT: usize = 4096;

/// Sparse banded square system `A x = b` over grid states.
///
/// Rows store `(column, value)` entries sorted by column. The shape
/// carries the 2-D index layout so bandwidth is measured as an
/// L-infinity distance between multi-indices, matching the transition
/// model's convention; 1-D systems use shape `(dimension, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    n_pos: usize,
    n_vel: usize,
    bandwidth: usize,
}

impl LinearSystem {
    /// Validates raw parts and measures the stored bandwidth.
    pub fn new(rows: Vec<Vec<(usize, f64)>>, rhs: Vec<f64>, shape: (usize, usize)) -> Result<Self> {
        let (n_pos, n_vel) = shape;
        let dim = n_pos * n_vel;
        if dim == 0 {
            return Err(Error::Domain("system shape must be positive".into()));
        }
        if rows.len() != dim || rhs.len() != dim {
            return Err(Error::Domain(format!(
                "system with {} rows and {} rhs entries does not match dimension {dim}",
                rows.len(),
                rhs.len()
            )));
        }
        if let Some(bad) = rhs.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite rhs entry {bad}")));
        }
        for (i, row) in rows.iter().enumerate() {
            let mut last: Option<usize> = None;
            for &(col, value) in row {
                if col >= dim {
                    return Err(Error::Domain(format!(
                        "entry column {col} out of range in row {i}"
                    )));
                }
                if !value.is_finite() {
                    return Err(Error::Domain(format!("non-finite entry in row {i}")));
                }
                if value == 0.0 {
                    return Err(Error::Domain(format!(
                        "explicit zero entry stored in row {i}"
                    )));
                }
                if let Some(prev) = last {
                    if col <= prev {
                        return Err(Error::Domain(format!(
                            "row {i} entries are not sorted by column"
                        )));
                    }
                }
                last = Some(col);
            }
        }
        let mut system = Self { rows, rhs, n_pos, n_vel, bandwidth: 0 };
        system.bandwidth = system.scan_bandwidth();
        Ok(system)
    }

    fn scan_bandwidth(&self) -> usize {
        let mut k = 0;
        for (i, row) in self.rows.iter().enumerate() {
            let (ip, iv) = self.multi_index(i);
            for &(j, _) in row {
                let (jp, jv) = self.multi_index(j);
                k = k.max(ip.abs_diff(jp).max(iv.abs_diff(jv)));
            }
        }
        k
    }

    /// Number of unknowns.
    pub fn dimension(&self) -> usize {
        self.rhs.len()
    }

    /// Index layout as (n_pos, n_vel).
    pub fn shape(&self) -> (usize, usize) {
        (self.n_pos, self.n_vel)
    }

    pub fn multi_index(&self, i: usize) -> (usize, usize) {
        (i % self.n_pos, i / self.n_pos)
    }

    /// Sparse entries of row `i`, sorted by column.
    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn rhs(&self) -> &[f64] {
        &self.rhs
    }

    /// Largest L-infinity multi-index distance of any stored entry.
    pub fn bandwidth(&self) -> usize {
        self.bandwidth
    }

    /// Number of stored entries.
    pub fn entry_count(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    /// Smallest `|diagonal| - sum(|off-diagonal|)` over rows; positive
    /// means strict diagonal dominance.
    pub fn dominance_margin(&self) -> f64 {
        let mut margin = f64::INFINITY;
        for (i, row) in self.rows.iter().enumerate() {
            let mut diag = 0.0;
            let mut off = 0.0;
            for &(j, v) in row {
                if j == i {
                    diag = v.abs();
                } else {
                    off += v.abs();
                }
            }
            margin = margin.min(diag - off);
        }
        margin
    }

    /// Matrix triplet dump `i j value`, one entry per line, preceded by a
    /// `rows cols nnz` size line.
    pub fn dump_matrix(&self) -> String {
        let mut out = format!("{} {} {}\n", self.dimension(), self.dimension(), self.entry_count());
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                out.push_str(&format!("{i} {j} {v}\n"));
            }
        }
        out
    }

    /// Right-hand side dump, one value per line.
    pub fn dump_rhs(&self) -> String {
        let mut out = String::new();
        for v in &self.rhs {
            out.push_str(&format!("{v}\n"));
        }
        out
    }

    /// Deterministic random banded, strictly diagonally dominant system
    /// for tests and benchmarks, laid out 1-D with shape `(dim, 1)`.
    pub fn random_banded(dim: usize, bandwidth: usize, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Domain("dimension must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(dim);
        for i in 0..dim {
            let lo = i.saturating_sub(bandwidth);
            let hi = (i + bandwidth).min(dim - 1);
            let mut row = Vec::new();
            let mut off_total = 0.0;
            for j in lo..=hi {
                if j == i {
                    continue;
                }
                if rng.random::<f64>() < 0.7 {
                    let value = rng.random_range(-1.0..1.0);
                    if value != 0.0 {
                        row.push((j, value));
                        off_total += f64::abs(value);
                    }
                }
            }
            // Diagonal strictly dominates the off-diagonal mass.
            let diag = off_total + rng.random_range(0.5..1.5);
            row.push((i, diag));
            row.sort_by_key(|&(j, _)| j);
            rows.push(row);
        }
        let rhs = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        Self::new(rows, rhs, (dim, 1))
    }
}

/// Builds the policy-evaluation system for `pi`:
/// `A = I - gamma * P_pi` restricted to nonterminal destination columns,
/// `b = expected one-step reward`, with identity rows and zero rhs for
/// terminal states.
pub fn build_sle(model: &TransitionModel, pi: &Policy, gamma: f64) -> Result<LinearSystem> {
    if !(gamma.is_finite() && (0.0..1.0).contains(&gamma)) {
        return Err(Error::Domain(format!("gamma must lie in [0,1), got {gamma}")));
    }
    if pi.len() != model.num_states() {
        return Err(Error::Domain(format!(
            "policy length {} does not match state count {}",
            pi.len(),
            model.num_states()
        )));
    }
    if let Some(bad) = pi.actions().iter().find(|&&a| a >= model.action_count()) {
        return Err(Error::Domain(format!("policy action {bad} out of range")));
    }
    let mu = model.num_states();
    let mut rows = Vec::with_capacity(mu);
    let mut rhs = vec![0.0; mu];
    for i in 0..mu {
        let mut row = std::collections::BTreeMap::new();
        row.insert(i, 1.0);
        if !model.is_terminal(i) {
            for b in model.branches(i, pi[i]) {
                rhs[i] += b.prob * b.reward;
                let weight = gamma * b.prob;
                if weight != 0.0 && !model.is_terminal(b.dest) {
                    *row.entry(b.dest).or_insert(0.0) -= weight;
                }
            }
        }
        rows.push(row.into_iter().filter(|&(_, v)| v != 0.0).collect());
    }
    let (n_pos, n_vel) = model.shape();
    LinearSystem::new(rows, rhs, (n_pos, n_vel))
}

/// Squared residual norm `||A x - b||^2` using the sparse structure.
pub fn residual(sys: &LinearSystem, x: &[f64]) -> Result<f64> {
    if x.len() != sys.dimension() {
        return Err(Error::Domain(format!(
            "vector length {} does not match dimension {}",
            x.len(),
            sys.dimension()
        )));
    }
    let mut total = 0.0;
    for (i, row) in sys.rows.iter().enumerate() {
        let mut r = -sys.rhs[i];
        for &(j, v) in row {
            r += v * x[j];
        }
        total += r * r;
    }
    Ok(total)
}

/// Reference solver: dense LU up to [`DENSE_SOLVE_LIMIT`] unknowns,
/// Gauss-Seidel beyond. Verifies the residual of the returned solution
/// and fails rather than return an inaccurate vector.
pub fn classical_solve(sys: &LinearSystem) -> Result<Vec<f64>> {
    let dim = sys.dimension();
    let x = if dim <= DENSE_SOLVE_LIMIT {
        let mut dense = DMatrix::<f64>::zeros(dim, dim);
        for (i, row) in sys.rows.iter().enumerate() {
            for &(j, v) in row {
                dense[(i, j)] = v;
            }
        }
        let lu = dense.lu();
        let solution = lu.solve(&DVector::from_column_slice(&sys.rhs)).ok_or_else(|| {
            Error::Solver(format!(
                "matrix is singular (dimension {dim}, dominance margin {})",
                sys.dominance_margin()
            ))
        })?;
        solution.as_slice().to_vec()
    } else {
        gauss_seidel(sys)?
    };

    let b_norm2: f64 = sys.rhs.iter().map(|v| v * v).sum();
    let bound = 1e-16 * dim as f64 * b_norm2;
    let res = residual(sys, &x)?;
    if res > bound && res > 1e-24 {
        return Err(Error::Solver(format!(
            "solution residual {res} exceeds bound {bound} \
             (dimension {dim}, dominance margin {})",
            sys.dominance_margin()
        )));
    }
    Ok(x)
}

fn gauss_seidel(sys: &LinearSystem) -> Result<Vec<f64>> {
    let dim = sys.dimension();
    let mut diag = vec![0.0; dim];
    for (i, row) in sys.rows.iter().enumerate() {
        for &(j, v) in row {
            if j == i {
                diag[i] = v;
            }
        }
        if diag[i] == 0.0 {
            return Err(Error::Solver(format!(
                "zero diagonal at row {i}; Gauss-Seidel requires nonzero diagonals \
                 (dominance margin {})",
                sys.dominance_margin()
            )));
        }
    }
    let mut x = vec![0.0; dim];
    for _ in 0..100_000 {
        let mut change: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for (i, row) in sys.rows.iter().enumerate() {
            let mut acc = sys.rhs[i];
            for &(j, v) in row {
                if j != i {
                    acc -= v * x[j];
                }
            }
            let updated = acc / diag[i];
            change = change.max((updated - x[i]).abs());
            scale = scale.max(updated.abs());
            x[i] = updated;
        }
        if change <= 1e-13 * scale {
            break;
        }
    }
    Ok(x)
}
