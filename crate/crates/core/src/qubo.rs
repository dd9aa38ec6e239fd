//! Fixed-point binary encoding of the policy-evaluation system: the
//! squared residual `||A x - b||^2` over encodable vectors becomes a
//! quadratic form in binary variables, minimized by the annealing
//! solvers.
//!
//! Bit `j` of state `i` lives at flat index `i + mu * j`, so the
//! coefficient matrix decomposes into `n_b * n_b` blocks that are scaled
//! copies of `A^T A`, and linear terms fold into the diagonal because
//! `y^2 = y` for binary `y`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sle::LinearSystem;

/// Hard cap on the number of binary variables in one problem.
pub const MAX_QUBO_DIMENSION: usize = 1 << 22;

/// Fixed-point encoding: state value `x_i = -kappa * sum_j 2^j y_{i+mu*j}`
/// with scale `kappa = |x_min| / 2^(n_b-1)`, representing
/// `{-kappa * m : m in [0, 2^n_b - 1]}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinaryEncoding {
    n_b: usize,
    x_min: f64,
}

impl BinaryEncoding {
    pub fn new(n_b: usize, x_min: f64) -> Result<Self> {
        if !(1..=52).contains(&n_b) {
            return Err(Error::Domain(format!("bits per state must lie in 1..=52, got {n_b}")));
        }
        if !(x_min.is_finite() && x_min < 0.0) {
            return Err(Error::Domain(format!("x_min must be negative and finite, got {x_min}")));
        }
        Ok(Self { n_b, x_min })
    }

    /// Bits per state value.
    pub fn n_b(&self) -> usize {
        self.n_b
    }

    /// Most negative value representable with the leading bit alone.
    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    /// Resolution of the encoding; exact because the divisor is a power
    /// of two.
    pub fn kappa(&self) -> f64 {
        self.x_min.abs() / (1u64 << (self.n_b - 1)) as f64
    }
}

impl Default for BinaryEncoding {
    fn default() -> Self {
        Self { n_b: 10, x_min: -100.0 }
    }
}

/// Upper-triangle sparse QUBO `y* = argmin y^T Q y` with linear terms on
/// the diagonal. Adding `offset` (`||b||^2`) to the objective recovers
/// the squared residual of the decoded vector.
#[derive(Debug, Clone, PartialEq)]
pub struct QuboProblem {
    mu: usize,
    encoding: BinaryEncoding,
    diag: Vec<f64>,
    upper: Vec<(u32, u32, f64)>,
    offset: f64,
}

impl QuboProblem {
    pub(crate) fn from_parts(
        mu: usize,
        encoding: BinaryEncoding,
        diag: Vec<f64>,
        upper: Vec<(u32, u32, f64)>,
        offset: f64,
    ) -> Self {
        Self { mu, encoding, diag, upper, offset }
    }

    /// Number of binary variables, `mu * n_b`.
    pub fn dimension(&self) -> usize {
        self.diag.len()
    }

    /// Number of encoded state values.
    pub fn num_states(&self) -> usize {
        self.mu
    }

    pub fn encoding(&self) -> &BinaryEncoding {
        &self.encoding
    }

    /// Diagonal coefficients, one per variable.
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    /// Strictly-upper-triangle coefficients sorted by `(row, col)`; each
    /// counts twice in the objective.
    pub fn upper(&self) -> &[(u32, u32, f64)] {
        &self.upper
    }

    /// Constant `||b||^2` separating the objective from the residual.
    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// Nonzero entries of the full symmetric matrix.
    pub fn nonzero_count(&self) -> usize {
        self.diag.iter().filter(|v| **v != 0.0).count() + 2 * self.upper.len()
    }

    /// Nonzero upper-triangle triplets (diagonal included) in row-major
    /// order.
    pub fn triplets(&self) -> Vec<(u32, u32, f64)> {
        let mut out = Vec::with_capacity(self.upper.len() + self.mu);
        let mut rest = self.upper.iter().peekable();
        for (t, &d) in self.diag.iter().enumerate() {
            if d != 0.0 {
                out.push((t as u32, t as u32, d));
            }
            while let Some(&&(a, b, v)) = rest.peek() {
                if a as usize == t {
                    out.push((a, b, v));
                    rest.next();
                } else {
                    break;
                }
            }
        }
        out
    }

    /// One-line JSON header followed by `i j value` triplet lines.
    pub fn export(&self) -> String {
        #[derive(Serialize)]
        struct Header {
            dimension: usize,
            kappa: f64,
            n_b: usize,
            x_min: f64,
            offset: f64,
        }
        let header = Header {
            dimension: self.dimension(),
            kappa: self.encoding.kappa(),
            n_b: self.encoding.n_b(),
            x_min: self.encoding.x_min(),
            offset: self.offset,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for (i, j, v) in self.triplets() {
            out.push_str(&format!("{i} {j} {v}\n"));
        }
        out
    }
}

/// Upper-triangle entries of `A^T A` (state indices, zeros dropped) and
/// the dense vector `b^T A`.
pub(crate) fn normal_equations(sys: &LinearSystem) -> (Vec<(usize, usize, f64)>, Vec<f64>) {
    let mu = sys.dimension();
    let mut ata = std::collections::BTreeMap::new();
    let mut bta = vec![0.0; mu];
    for row in 0..mu {
        let entries = sys.row(row);
        let b_row = sys.rhs()[row];
        for &(j1, v1) in entries {
            bta[j1] += b_row * v1;
            for &(j2, v2) in entries {
                if j1 <= j2 {
                    *ata.entry((j1, j2)).or_insert(0.0) += v1 * v2;
                }
            }
        }
    }
    let ata = ata.into_iter().filter(|&(_, v)| v != 0.0).map(|((a, b), v)| (a, b, v)).collect();
    (ata, bta)
}

/// Encodes the squared-residual minimization of `sys` over the encodable
/// set as a QUBO. Block `(j1, j2)` of the quadratic part is
/// `2^(j1+j2) * kappa^2 * A^T A`; linear block `j` is
/// `2^(j+1) * kappa * b^T A`, folded into the diagonal.
pub fn build_qubo(sys: &LinearSystem, enc: &BinaryEncoding) -> Result<QuboProblem> {
    let mu = sys.dimension();
    let n_b = enc.n_b();
    let dim = mu * n_b;
    if dim > MAX_QUBO_DIMENSION {
        return Err(Error::Capacity(format!(
            "{mu} states at {n_b} bits need {dim} binary variables, above the \
             maximum {MAX_QUBO_DIMENSION}"
        )));
    }
    let (ata, bta) = normal_equations(sys);
    let kappa = enc.kappa();
    let pow: Vec<f64> = (0..n_b).map(|j| (1u64 << j) as f64).collect();
    let k2 = kappa * kappa;

    let mut diag = vec![0.0; dim];
    for (i, &lin) in bta.iter().enumerate() {
        for (j, &p) in pow.iter().enumerate() {
            diag[i + mu * j] += 2.0 * p * kappa * lin;
        }
    }
    let mut upper = Vec::new();
    for &(i1, i2, v) in &ata {
        if i1 == i2 {
            for j1 in 0..n_b {
                diag[i1 + mu * j1] += k2 * pow[j1] * pow[j1] * v;
                for j2 in j1 + 1..n_b {
                    let value = k2 * pow[j1] * pow[j2] * v;
                    if value != 0.0 {
                        upper.push(((i1 + mu * j1) as u32, (i1 + mu * j2) as u32, value));
                    }
                }
            }
        } else {
            for j1 in 0..n_b {
                for j2 in 0..n_b {
                    let value = k2 * pow[j1] * pow[j2] * v;
                    if value == 0.0 {
                        continue;
                    }
                    let t = i1 + mu * j1;
                    let u = i2 + mu * j2;
                    let entry = if t < u {
                        (t as u32, u as u32, value)
                    } else {
                        (u as u32, t as u32, value)
                    };
                    upper.push(entry);
                }
            }
        }
    }
    upper.sort_unstable_by_key(|&(t, u, _)| (t, u));
    debug_assert!(
        upper.windows(2).all(|w| (w[0].0, w[0].1) != (w[1].0, w[1].1)),
        "duplicate quadratic coefficient"
    );
    let offset = sys.rhs().iter().map(|v| v * v).sum();
    Ok(QuboProblem { mu, encoding: *enc, diag, upper, offset })
}

fn check_bits(y: &[u8], expected_len: usize) -> Result<()> {
    if y.len() != expected_len {
        return Err(Error::Domain(format!(
            "bitstring length {} does not match {expected_len}",
            y.len()
        )));
    }
    if y.iter().any(|&bit| bit > 1) {
        return Err(Error::Domain("bitstring entries must be 0 or 1".into()));
    }
    Ok(())
}

/// Evaluates the encoding sum exactly for each state.
pub fn decode(y: &[u8], enc: &BinaryEncoding, mu: usize) -> Result<Vec<f64>> {
    check_bits(y, mu * enc.n_b())?;
    let kappa = enc.kappa();
    let mut x = Vec::with_capacity(mu);
    for i in 0..mu {
        let mut m = 0u64;
        for j in 0..enc.n_b() {
            if y[i + mu * j] == 1 {
                m |= 1 << j;
            }
        }
        x.push(-kappa * m as f64);
    }
    Ok(x)
}

/// Nearest encodable bitstring to `x`, componentwise; out-of-range values
/// saturate.
pub fn quantize(x: &[f64], enc: &BinaryEncoding) -> Result<Vec<u8>> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("non-finite value {bad} cannot be quantized")));
    }
    let mu = x.len();
    let n_b = enc.n_b();
    let kappa = enc.kappa();
    let top = (1u64 << n_b) - 1;
    let mut y = vec![0u8; mu * n_b];
    for (i, &v) in x.iter().enumerate() {
        let m = ((-v / kappa).round().clamp(0.0, top as f64)) as u64;
        for j in 0..n_b {
            y[i + mu * j] = ((m >> j) & 1) as u8;
        }
    }
    Ok(y)
}

/// `y^T Q y` over the sparse upper triangle; add [`QuboProblem::offset`]
/// to obtain `||A·decode(y) - b||^2`.
pub fn objective(q: &QuboProblem, y: &[u8]) -> Result<f64> {
    check_bits(y, q.dimension())?;
    let mut total = 0.0;
    for (t, &d) in q.diag.iter().enumerate() {
        if y[t] == 1 {
            total += d;
        }
    }
    for &(t, u, v) in &q.upper {
        if y[t as usize] & y[u as usize] == 1 {
            total += 2.0 * v;
        }
    }
    Ok(total)
}

/// Size and sparsity figures for a QUBO built from a band system whose
/// transition model has bandwidth `k` over `state_dim` grid axes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResourceReport {
    /// Fraction of zero entries in the full symmetric matrix.
    pub sparsity: f64,
    /// `1 - c/mu`, present when `mu > c`.
    pub sparsity_bound: Option<f64>,
    /// Band closure size `c = (4k+1)^state_dim`.
    pub band_closure: usize,
    /// Ceil of `log2(n_b) + log2(mu)`.
    pub qubits_literal: usize,
    /// Binary problem dimension `mu * n_b`.
    pub qubits_bits: usize,
}

/// Measures Q's sparsity against the band bound and reports both qubit
/// figures. Panics if a band system produced a denser matrix than its
/// bandwidth allows.
pub fn sparsity_and_qubits(q: &QuboProblem, model_bandwidth: usize, state_dim: u32) -> ResourceReport {
    let mu = q.num_states();
    let dim = q.dimension() as f64;
    let c = (4 * model_bandwidth + 1).pow(state_dim);
    let sparsity = 1.0 - q.nonzero_count() as f64 / (dim * dim);
    let sparsity_bound = if mu > c {
        let bound = 1.0 - c as f64 / mu as f64;
        assert!(
            sparsity >= bound - 1e-12,
            "sparsity {sparsity} below band bound {bound} (bandwidth {model_bandwidth})"
        );
        Some(bound)
    } else {
        None
    };
    let qubits_literal = ((q.encoding.n_b() as f64).log2() + (mu as f64).log2()).ceil() as usize;
    ResourceReport {
        sparsity,
        sparsity_bound,
        band_closure: c,
        qubits_literal,
        qubits_bits: q.dimension(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dp::Policy;
    use crate::fixtures::mountain_car;
    use crate::sle::{build_sle, residual};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn random_bits(rng: &mut ChaCha8Rng, len: usize) -> Vec<u8> {
        (0..len).map(|_| rng.random_range(0..=1u8)).collect()
    }

    #[test]
    fn encoding_validation_and_kappa() {
        assert!(BinaryEncoding::new(0, -1.0).is_err());
        assert!(BinaryEncoding::new(53, -1.0).is_err());
        assert!(BinaryEncoding::new(4, 1.0).is_err());
        assert!(BinaryEncoding::new(4, 0.0).is_err());
        let enc = BinaryEncoding::default();
        assert_eq!(enc.n_b(), 10);
        assert_eq!(enc.x_min(), -100.0);
        assert_eq!(enc.kappa(), 0.1953125);
    }

    #[test]
    fn decode_evaluates_the_index_map() {
        let enc = BinaryEncoding::new(2, -2.0).unwrap();
        assert_eq!(enc.kappa(), 1.0);
        assert_eq!(decode(&[0, 0, 0, 0], &enc, 2).unwrap(), vec![0.0, 0.0]);
        assert_eq!(decode(&[1, 0, 0, 1], &enc, 2).unwrap(), vec![-1.0, -2.0]);
        let enc = BinaryEncoding::new(4, -8.0).unwrap();
        let all_one = vec![1u8; 3 * 4];
        let saturated = -enc.kappa() * 15.0;
        assert_eq!(decode(&all_one, &enc, 3).unwrap(), vec![saturated; 3]);
        assert!(decode(&[1, 0], &enc, 3).is_err());
        assert!(decode(&[2; 12], &enc, 3).is_err());
    }

    #[test]
    fn quantize_rounds_to_nearest_code() {
        let enc = BinaryEncoding::new(3, -4.0).unwrap();
        let x = [-0.4, -3.9, 0.3, -99.0];
        let y = quantize(&x, &enc).unwrap();
        let back = decode(&y, &enc, 4).unwrap();
        assert_eq!(back, vec![0.0, -4.0, 0.0, -7.0]);
        for (orig, quantized) in x.iter().zip(&back) {
            let clamped = orig.clamp(-7.0, 0.0);
            assert!((clamped - quantized).abs() <= enc.kappa() / 2.0 + 1e-12);
        }
    }

    #[test]
    fn quantize_then_decode_is_identity_on_codes() {
        let enc = BinaryEncoding::new(5, -16.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y = random_bits(&mut rng, 7 * 5);
        let x = decode(&y, &enc, 7).unwrap();
        assert_eq!(quantize(&x, &enc).unwrap(), y);
    }

    #[test]
    fn zero_bitstring_scores_zero() {
        let sys = LinearSystem::random_banded(6, 1, 11).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::new(3, -4.0).unwrap()).unwrap();
        assert_eq!(objective(&q, &vec![0; q.dimension()]).unwrap(), 0.0);
    }

    #[test]
    fn single_bit_reads_the_diagonal() {
        let sys = LinearSystem::random_banded(6, 1, 12).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::new(3, -4.0).unwrap()).unwrap();
        for t in 0..q.dimension() {
            let mut y = vec![0u8; q.dimension()];
            y[t] = 1;
            assert_eq!(objective(&q, &y).unwrap(), q.diag()[t]);
        }
    }

    #[test]
    fn objective_equals_residual_shift() {
        let enc = BinaryEncoding::new(3, -4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..20 {
            let sys = LinearSystem::random_banded(6, 1, 2000 + trial).unwrap();
            let q = build_qubo(&sys, &enc).unwrap();
            let b_norm2 = q.offset();
            for _ in 0..50 {
                let y = random_bits(&mut rng, q.dimension());
                let x = decode(&y, &enc, 6).unwrap();
                let expected = residual(&sys, &x).unwrap() - b_norm2;
                let got = objective(&q, &y).unwrap();
                assert!(
                    (got - expected).abs() <= 1e-9 * (1.0 + b_norm2),
                    "objective {got} vs residual shift {expected}"
                );
            }
        }
    }

    #[test]
    fn objective_matches_dense_recomputation() {
        let enc = BinaryEncoding::new(4, -8.0).unwrap();
        let sys = LinearSystem::random_banded(5, 2, 31).unwrap();
        let q = build_qubo(&sys, &enc).unwrap();
        let dim = q.dimension();
        let mut dense = vec![vec![0.0; dim]; dim];
        for (t, &d) in q.diag().iter().enumerate() {
            dense[t][t] = d;
        }
        for &(t, u, v) in q.upper() {
            dense[t as usize][u as usize] = v;
            dense[u as usize][t as usize] = v;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..50 {
            let y = random_bits(&mut rng, dim);
            let mut expected = 0.0;
            for t in 0..dim {
                for u in 0..dim {
                    expected += dense[t][u] * f64::from(y[t] * y[u]);
                }
            }
            let got = objective(&q, &y).unwrap();
            assert!((got - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn normal_equations_stay_within_twice_the_band() {
        let model = mountain_car(8, 8);
        let sys = build_sle(&model, &Policy::zeros(model.num_states()), 0.99).unwrap();
        let (ata, _) = normal_equations(&sys);
        let k = model.bandwidth();
        let mut worst = 0;
        for &(i1, i2, _) in &ata {
            let (p1, v1) = sys.multi_index(i1);
            let (p2, v2) = sys.multi_index(i2);
            worst = worst.max(p1.abs_diff(p2).max(v1.abs_diff(v2)));
        }
        assert!(worst <= 2 * k, "A^T A reaches distance {worst} with bandwidth {k}");
    }

    #[test]
    fn blocks_scale_by_powers_of_two() {
        let enc = BinaryEncoding::new(3, -4.0).unwrap();
        let sys = LinearSystem::random_banded(6, 1, 999).unwrap();
        let mu = sys.dimension();
        let q = build_qubo(&sys, &enc).unwrap();
        let (ata, bta) = normal_equations(&sys);
        let lookup: std::collections::HashMap<(u32, u32), f64> =
            q.upper().iter().map(|&(t, u, v)| ((t, u), v)).collect();
        let kappa = enc.kappa();
        for &(i1, i2, v) in ata.iter().filter(|&&(a, b, _)| a < b) {
            let base = kappa * kappa * v;
            for j1 in 0..enc.n_b() {
                for j2 in 0..enc.n_b() {
                    let t = (i1 + mu * j1) as u32;
                    let u = (i2 + mu * j2) as u32;
                    let key = if t < u { (t, u) } else { (u, t) };
                    let expected = base * (1u64 << (j1 + j2)) as f64;
                    assert_eq!(lookup.get(&key).copied().unwrap_or(0.0), expected);
                }
            }
        }
        // Linear block j is block 0 scaled by 2^j after removing the
        // quadratic diagonal contribution.
        let ata_diag: std::collections::HashMap<usize, f64> =
            ata.iter().filter(|&&(a, b, _)| a == b).map(|&(a, _, v)| (a, v)).collect();
        for i in 0..mu {
            for j in 0..enc.n_b() {
                let p = (1u64 << j) as f64;
                let quad = kappa * kappa * p * p * ata_diag.get(&i).copied().unwrap_or(0.0);
                let linear = q.diag()[i + mu * j] - quad;
                let expected = 2.0 * p * kappa * bta[i];
                assert!((linear - expected).abs() <= 1e-12 * (1.0 + expected.abs()));
            }
        }
    }

    #[test]
    fn identity_system_has_closed_form_coefficients() {
        let rows = vec![vec![(0, 1.0)], vec![(1, 1.0)]];
        let sys = LinearSystem::new(rows, vec![-1.0, 0.0], (2, 1)).unwrap();
        let enc = BinaryEncoding::new(1, -1.0).unwrap();
        let q = build_qubo(&sys, &enc).unwrap();
        assert_eq!(q.diag(), &[-1.0, 1.0]);
        assert!(q.upper().is_empty());
        assert_eq!(q.offset(), 1.0);
        assert_eq!(objective(&q, &[1, 0]).unwrap(), -1.0);
        assert_eq!(
            q.export(),
            "{\"dimension\":2,\"kappa\":1.0,\"n_b\":1,\"x_min\":-1.0,\"offset\":1.0}\n\
             0 0 -1\n1 1 1\n"
        );
    }

    #[test]
    fn capacity_cap_is_enforced() {
        let dim = MAX_QUBO_DIMENSION / 52 + 1;
        let rows = (0..dim).map(|i| vec![(i, 1.0)]).collect();
        let sys = LinearSystem::new(rows, vec![1.0; dim], (dim, 1)).unwrap();
        match build_qubo(&sys, &BinaryEncoding::new(52, -1.0).unwrap()) {
            Err(crate::Error::Capacity(_)) => {}
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn diagonal_system_gives_diagonal_qubo() {
        let mu = 8;
        let rows = (0..mu).map(|i| vec![(i, 1.5 + i as f64)]).collect();
        let sys = LinearSystem::new(rows, vec![-1.0; mu], (mu, 1)).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::new(1, -1.0).unwrap()).unwrap();
        assert!(q.upper().is_empty());
        let report = sparsity_and_qubits(&q, 0, 1);
        assert_eq!(report.band_closure, 1);
        assert_eq!(report.sparsity, 1.0 - 1.0 / mu as f64);
        assert_eq!(report.sparsity_bound, Some(1.0 - 1.0 / mu as f64));
    }

    #[test]
    fn qubit_figures_report_both_formulas() {
        let sys = LinearSystem::random_banded(16, 1, 4).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::default()).unwrap();
        let report = sparsity_and_qubits(&q, 1, 1);
        assert_eq!(report.qubits_literal, 8);
        assert_eq!(report.qubits_bits, 160);
        assert_eq!(report.band_closure, 5);
        assert!(report.sparsity >= report.sparsity_bound.unwrap());
    }

    #[test]
    fn grid_model_sparsity_beats_band_bound() {
        let model = mountain_car(8, 8);
        let sys = build_sle(&model, &Policy::zeros(model.num_states()), 0.99).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::new(4, -100.0).unwrap()).unwrap();
        let report = sparsity_and_qubits(&q, model.bandwidth(), 2);
        let bound = report.sparsity_bound.expect("64 states exceed the band closure");
        assert!(report.sparsity >= bound);
    }

    #[test]
    fn triplets_merge_diagonal_and_upper_in_order() {
        let sys = LinearSystem::random_banded(5, 1, 21).unwrap();
        let q = build_qubo(&sys, &BinaryEncoding::new(2, -2.0).unwrap()).unwrap();
        let triplets = q.triplets();
        for w in triplets.windows(2) {
            assert!((w[0].0, w[0].1) < (w[1].0, w[1].1), "triplets out of order");
        }
        let diag_nonzero = q.diag().iter().filter(|v| **v != 0.0).count();
        assert_eq!(triplets.len(), diag_nonzero + q.upper().len());
    }
}
