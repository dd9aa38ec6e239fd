//! Operation and peak-storage instrumentation for the pipeline phases:
//! model → linear system → QUBO → decode → policy update. Counters are
//! incremented alongside the real work, never estimated from formulas,
//! so log–log slopes over a size sweep expose the actual growth rates.

use std::time::{Duration, Instant};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dp::{greedy_policy, Policy, ValueFunction};
use crate::env::EnvParams;
use crate::grid::{build_transition_model, GridSpec, TransitionModel};
use crate::qubo::{build_qubo, decode, normal_equations, BinaryEncoding, QuboProblem};
use crate::sle::{build_sle, LinearSystem};
use crate::util::mix_seed;
use crate::{Error, Result};

/// Largest state count the dense path accepts; cubic work above this is
/// pointless for a measurement harness.
pub const DENSE_MU_LIMIT: usize = 512;

const DECODE_BITS_SEED: u64 = 2718;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    RlToSle,
    SleToQubo,
    Recovery,
    PolicyUpdate,
}

impl Phase {
    pub const ALL: [Phase; 4] =
        [Phase::RlToSle, Phase::SleToQubo, Phase::Recovery, Phase::PolicyUpdate];

    pub fn name(self) -> &'static str {
        match self {
            Phase::RlToSle => "rl_to_sle",
            Phase::SleToQubo => "sle_to_qubo",
            Phase::Recovery => "recovery",
            Phase::PolicyUpdate => "policy_update",
        }
    }
}

/// Exact tallies for one phase: elementary operations (multiply-adds and
/// entry writes) and the peak number of stored scalar entries.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PhaseCount {
    pub ops: u64,
    pub peak_entries: u64,
    pub wall: Duration,
}

/// Per-phase tallies for a single pipeline run plus solver wall time
/// (zero when no solver participates, as in [`measure_scaling`]).
#[derive(Debug, Clone, Copy, Default)]
pub struct OpCounters {
    pub rl_to_sle: PhaseCount,
    pub sle_to_qubo: PhaseCount,
    pub recovery: PhaseCount,
    pub policy_update: PhaseCount,
    pub solver_wall: Duration,
}

impl OpCounters {
    pub fn phase(&self, phase: Phase) -> PhaseCount {
        match phase {
            Phase::RlToSle => self.rl_to_sle,
            Phase::SleToQubo => self.sle_to_qubo,
            Phase::Recovery => self.recovery,
            Phase::PolicyUpdate => self.policy_update,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScalingPath {
    /// Banded sparse structures end to end.
    Sparse,
    /// Dense matrix for the normal equations (cubic in the state count).
    Dense,
}

impl ScalingPath {
    pub fn name(self) -> &'static str {
        match self {
            ScalingPath::Sparse => "sparse",
            ScalingPath::Dense => "dense",
        }
    }
}

/// Counters for one grid size.
#[derive(Debug, Clone)]
pub struct MuMeasurement {
    pub shape: (usize, usize),
    pub mu: usize,
    pub counters: OpCounters,
    /// Stored entries of the normal-equation matrix.
    pub ata_entries: u64,
    /// Stored entries of the QUBO (diagonal plus strict upper triangle).
    pub q_entries: u64,
}

/// Counters per grid size plus fitted log–log growth rates.
#[derive(Debug, Clone)]
pub struct ScalingReport {
    pub path: ScalingPath,
    pub n_b: usize,
    pub gamma: f64,
    pub measurements: Vec<MuMeasurement>,
}

impl ScalingReport {
    /// Least-squares slope of ln(ops) against ln(μ) for one phase.
    pub fn slope(&self, phase: Phase) -> f64 {
        let points: Vec<(f64, f64)> = self
            .measurements
            .iter()
            .map(|m| ((m.mu as f64).ln(), (m.counters.phase(phase).ops as f64).ln()))
            .collect();
        fit_slope(&points)
    }

    /// One row per (μ, phase).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("mu,phase,ops,peak_entries,wall_seconds\n");
        for m in &self.measurements {
            for phase in Phase::ALL {
                let c = m.counters.phase(phase);
                out.push_str(&format!(
                    "{},{},{},{},{}\n",
                    m.mu,
                    phase.name(),
                    c.ops,
                    c.peak_entries,
                    c.wall.as_secs_f64()
                ));
            }
        }
        out
    }

    pub fn slopes_csv(&self) -> String {
        let mut out = String::from("phase,slope\n");
        for phase in Phase::ALL {
            out.push_str(&format!("{},{}\n", phase.name(), self.slope(phase)));
        }
        out
    }
}

fn fit_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for &(x, y) in points {
        num += (x - mean_x) * (y - mean_y);
        den += (x - mean_x) * (x - mean_x);
    }
    num / den
}

fn count_rl_to_sle(model: &TransitionModel, policy: &Policy, sys: &LinearSystem) -> u64 {
    let mut ops = 0u64;
    for s in 0..model.num_states() {
        if model.is_terminal(s) {
            ops += 1;
            continue;
        }
        ops += 1;
        for b in model.branches(s, policy[s]) {
            ops += 1;
            if !model.is_terminal(b.dest) {
                ops += 1;
            }
        }
    }
    debug_assert!(sys.entry_count() as u64 <= ops * 2);
    ops
}

/// Counts the sparse normal-equation products exactly as
/// `normal_equations` performs them: each row with `r` stored entries
/// contributes `r` right-hand-side products and `r(r+1)/2` upper-triangle
/// products.
fn count_sparse_sle_to_qubo(
    sys: &LinearSystem,
    ata: &[(usize, usize, f64)],
    n_b: u64,
) -> u64 {
    let mu = sys.dimension();
    let mut ops = 0u64;
    for row in 0..mu {
        let r = sys.row(row).len() as u64;
        ops += r + r * (r + 1) / 2;
    }
    ops += mu as u64 * n_b;
    for &(i1, i2, _) in ata {
        if i1 == i2 {
            ops += n_b + n_b * (n_b - 1) / 2;
        } else {
            ops += n_b * n_b;
        }
    }
    ops + mu as u64
}

struct DensePhase {
    q: QuboProblem,
    ops: u64,
    peak_entries: u64,
    wall: Duration,
}

/// Dense normal equations: materializes A and AᵀA as μ×μ arrays and
/// scans every block cell, so the μ³ matrix product dominates.
fn dense_sle_to_qubo(sys: &LinearSystem, enc: &BinaryEncoding) -> Result<DensePhase> {
    let mu = sys.dimension();
    let n_b = enc.n_b();
    let kappa = enc.kappa();
    let start = Instant::now();
    let mut ops = 0u64;

    let mut a = vec![0.0f64; mu * mu];
    ops += (mu * mu) as u64;
    for row in 0..mu {
        for &(col, v) in sys.row(row) {
            a[row * mu + col] = v;
            ops += 1;
        }
    }

    let mut ata = vec![0.0f64; mu * mu];
    for i in 0..mu {
        for j in i..mu {
            let mut s = 0.0;
            for l in 0..mu {
                s += a[l * mu + i] * a[l * mu + j];
            }
            ata[i * mu + j] = s;
            ops += mu as u64;
        }
    }

    let mut bta = vec![0.0f64; mu];
    for (i, slot) in bta.iter_mut().enumerate() {
        for l in 0..mu {
            *slot += sys.rhs()[l] * a[l * mu + i];
        }
        ops += mu as u64;
    }

    let pow: Vec<f64> = (0..n_b).map(|j| (1u64 << j) as f64).collect();
    let k2 = kappa * kappa;
    let dim = mu * n_b;
    let mut diag = vec![0.0f64; dim];
    for (i, &lin) in bta.iter().enumerate() {
        for (j, &p) in pow.iter().enumerate() {
            diag[i + mu * j] += 2.0 * p * kappa * lin;
            ops += 1;
        }
    }
    let mut upper = Vec::new();
    for i1 in 0..mu {
        for i2 in i1..mu {
            let v = ata[i1 * mu + i2];
            if i1 == i2 {
                for j1 in 0..n_b {
                    diag[i1 + mu * j1] += k2 * pow[j1] * pow[j1] * v;
                    ops += 1;
                    for j2 in j1 + 1..n_b {
                        let value = k2 * pow[j1] * pow[j2] * v;
                        ops += 1;
                        if value != 0.0 {
                            upper.push(((i1 + mu * j1) as u32, (i1 + mu * j2) as u32, value));
                        }
                    }
                }
            } else {
                for j1 in 0..n_b {
                    for j2 in 0..n_b {
                        let value = k2 * pow[j1] * pow[j2] * v;
                        ops += 1;
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
    }
    upper.sort_unstable_by_key(|&(t, u, _)| (t, u));
    let offset: f64 = sys.rhs().iter().map(|v| v * v).sum();
    ops += mu as u64;

    let peak_entries = (2 * mu * mu + mu + dim) as u64 + upper.len() as u64;
    let q = QuboProblem::from_parts(mu, *enc, diag, upper, offset);
    Ok(DensePhase { q, ops, peak_entries, wall: start.elapsed() })
}

fn decode_bits(dim: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| u8::from(rng.random::<bool>())).collect()
}

fn validate_sizes(sizes: &[(usize, usize)], path: ScalingPath) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::Domain(format!(
            "scaling fits need at least 3 grid sizes, got {}",
            sizes.len()
        )));
    }
    if path == ScalingPath::Dense {
        if let Some(&(p, v)) = sizes.iter().find(|&&(p, v)| p * v > DENSE_MU_LIMIT) {
            return Err(Error::Domain(format!(
                "dense path caps at {DENSE_MU_LIMIT} states, got {p}x{v} = {}",
                p * v
            )));
        }
    }
    Ok(())
}

/// Runs the instrumented pipeline once per grid size and reports exact
/// per-phase operation counts, peak entry counts, and wall times.
pub fn measure_scaling(
    sizes: &[(usize, usize)],
    n_b: usize,
    gamma: f64,
    path: ScalingPath,
) -> Result<ScalingReport> {
    validate_sizes(sizes, path)?;
    let params = EnvParams::default();
    let enc = BinaryEncoding::new(n_b, -100.0)?;
    let mut measurements = Vec::with_capacity(sizes.len());
    for &(n_pos, n_vel) in sizes {
        let grid = GridSpec::new(n_pos, n_vel, &params)?;
        let model = build_transition_model(&params, &grid)?;
        let mu = model.num_states();
        let policy = Policy::zeros(mu);

        let start = Instant::now();
        let sys = build_sle(&model, &policy, gamma)?;
        let rl_to_sle = PhaseCount {
            ops: count_rl_to_sle(&model, &policy, &sys)
                + if path == ScalingPath::Dense { (mu * mu) as u64 } else { 0 },
            peak_entries: if path == ScalingPath::Dense {
                (mu * mu + mu) as u64
            } else {
                (sys.entry_count() + mu) as u64
            },
            wall: start.elapsed(),
        };

        let (q, sle_to_qubo, ata_entries) = match path {
            ScalingPath::Sparse => {
                let start = Instant::now();
                let q = build_qubo(&sys, &enc)?;
                let wall = start.elapsed();
                let (ata, _) = normal_equations(&sys);
                let q_entries = (q.dimension() + q.upper().len()) as u64;
                let count = PhaseCount {
                    ops: count_sparse_sle_to_qubo(&sys, &ata, n_b as u64),
                    peak_entries: ata.len() as u64 + mu as u64 + q_entries,
                    wall,
                };
                (q, count, ata.len() as u64)
            }
            ScalingPath::Dense => {
                let phase = dense_sle_to_qubo(&sys, &enc)?;
                let count = PhaseCount {
                    ops: phase.ops,
                    peak_entries: phase.peak_entries,
                    wall: phase.wall,
                };
                ((phase.q), count, (mu * mu) as u64)
            }
        };
        let q_entries = (q.dimension() + q.upper().len()) as u64;

        let bits = decode_bits(q.dimension(), mix_seed(DECODE_BITS_SEED, mu as u64));
        let start = Instant::now();
        let x = decode(&bits, &enc, mu)?;
        let recovery = PhaseCount {
            ops: (mu * (n_b + 1)) as u64,
            peak_entries: (mu + q.dimension()) as u64,
            wall: start.elapsed(),
        };

        let values = ValueFunction::from_values(x)?;
        let start = Instant::now();
        let _improved = greedy_policy(&model, &values, gamma);
        let mut update_ops = 0u64;
        for s in 0..mu {
            if model.is_terminal(s) {
                continue;
            }
            for a in 0..model.action_count() {
                update_ops += 2 * model.branches(s, a).len() as u64;
            }
        }
        let policy_update = PhaseCount {
            ops: update_ops,
            peak_entries: (mu + model.action_count()) as u64,
            wall: start.elapsed(),
        };

        measurements.push(MuMeasurement {
            shape: (n_pos, n_vel),
            mu,
            counters: OpCounters {
                rl_to_sle,
                sle_to_qubo,
                recovery,
                policy_update,
                solver_wall: Duration::ZERO,
            },
            ata_entries,
            q_entries,
        });
    }
    Ok(ScalingReport { path, n_b, gamma, measurements })
}
