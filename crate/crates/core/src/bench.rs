//! Micro-benchmark harness for the attention variants: wall-clock scaling
//! measurements, analytic memory accounting, log-log slope fits, and
//! crossover detection.
//!
//! Timing methodology: deterministic inputs from the seed, 2 warm-up runs,
//! median over >= 5 repetitions on a monotonic clock. All kernels here are
//! strictly single-threaded by construction (ndarray's matrix multiply is
//! compiled without its threading feature), so there is nothing to pin.
//!
//! Memory is modeled, not measured: a deterministic closed-form buffer
//! inventory per mechanism. Softmax carries the L x L score matrix;
//! the linear-complexity variants carry only per-token features, bias and
//! denominator vectors, and the d x d_v summary.

use crate::attention::{
    dense_linear_reference, dense_psla_reference, linear_attention, psla_rank1,
    psla_symmetric_grid, softmax_attention, AttentionBatch, AttentionError, DenseMode, HeadConfig,
    DENSE_GUARD,
};
use crate::kernel::grid_centers;
use crate::linfit::linear_fit;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::hint::black_box;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BenchError {
    #[error("unknown mechanism '{0}'")]
    UnknownMechanism(String),
    #[error("need at least 5 repetitions, got {0}")]
    TooFewReps(usize),
    #[error("scaling fit needs >= 4 distinct lengths spanning >= 8x, got {0:?}")]
    InsufficientPoints(Vec<usize>),
    #[error("record sets cover different length grids")]
    MismatchedGrids,
    #[error("output cross-check failed for {mechanism} at L={l}: max err {err:.3e}")]
    OracleMismatch {
        mechanism: &'static str,
        l: usize,
        err: f64,
    },
    #[error(transparent)]
    Attention(#[from] AttentionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mechanism {
    Softmax,
    Linear,
    PslaRank1,
    PslaSymmetricGrid,
    DenseSymmetric,
}

impl Mechanism {
    pub const ALL: [Mechanism; 5] = [
        Mechanism::Softmax,
        Mechanism::Linear,
        Mechanism::PslaRank1,
        Mechanism::PslaSymmetricGrid,
        Mechanism::DenseSymmetric,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mechanism::Softmax => "softmax",
            Mechanism::Linear => "linear",
            Mechanism::PslaRank1 => "psla_rank1",
            Mechanism::PslaSymmetricGrid => "psla_symmetric_grid",
            Mechanism::DenseSymmetric => "dense_symmetric",
        }
    }

    pub fn parse(s: &str) -> Result<Self, BenchError> {
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| BenchError::UnknownMechanism(s.to_string()))
    }

    /// Dense mechanisms refuse lengths beyond the oracle guard.
    pub fn is_dense(&self) -> bool {
        matches!(self, Mechanism::DenseSymmetric)
    }
}

impl std::fmt::Display for Mechanism {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One timed configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchRecord {
    pub mechanism: Mechanism,
    pub l: usize,
    pub d: usize,
    pub reps: usize,
    pub median_s: f64,
    pub trimmed_mean_s: f64,
    pub modeled_bytes: u64,
}

/// Log-log OLS fit of time against sequence length.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// The most-square factor pair (w, h) with w >= h and w * h = l, so every
/// benchmark length maps onto an exact grid.
pub fn grid_for(l: usize) -> (usize, usize) {
    let mut h = (l as f64).sqrt() as usize;
    while h > 1 && !l.is_multiple_of(h) {
        h -= 1;
    }
    (l / h.max(1), h.max(1))
}

/// Deterministic benchmark inputs: Gaussian Q, K, V and the cell centers of
/// the grid factorization of L. Identical across mechanisms for the same
/// (l, d, seed).
pub fn gen_batch(l: usize, d: usize, seed: u64) -> (AttentionBatch, (usize, usize)) {
    let grid = grid_for(l);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize, c: usize| {
        Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
    };
    let q = mat(l, d);
    let k = mat(l, d);
    let v = mat(l, d);
    let batch = AttentionBatch::new(q, k, v, grid_centers(grid.0, grid.1))
        .expect("generated batch is consistent");
    (batch, grid)
}

/// Run one forward pass of a mechanism on a batch.
pub fn run_mechanism(
    mechanism: Mechanism,
    batch: &AttentionBatch,
    head: &HeadConfig,
    grid: (usize, usize),
) -> Result<Array2<f64>, BenchError> {
    Ok(match mechanism {
        Mechanism::Softmax => softmax_attention(batch),
        Mechanism::Linear => linear_attention(batch, &head.feature_map),
        Mechanism::PslaRank1 => psla_rank1(batch, head)?,
        Mechanism::PslaSymmetricGrid => psla_symmetric_grid(batch, head, grid)?,
        Mechanism::DenseSymmetric => dense_psla_reference(batch, head, DenseMode::Symmetric)?,
    })
}

/// Closed-form byte accounting per mechanism (8-byte values).
///
/// softmax / dense: the L x L score matrix plus Q, K (2Ld) and the output
/// (L d_v). linear / rank-1: the d x d_v summary, per-token features and
/// output (L(2d + d_v)), and the two length-L bias/denominator vectors.
/// The symmetric grid scan carries its per-cell accumulator field
/// (L d d_v + L d) on top of features and output.
pub fn memory_model(mechanism: Mechanism, l: usize, d: usize, d_v: usize) -> u64 {
    let (l, d, d_v) = (l as u64, d as u64, d_v as u64);
    let values = match mechanism {
        Mechanism::Softmax | Mechanism::DenseSymmetric => l * l + 2 * l * d + l * d_v,
        Mechanism::Linear | Mechanism::PslaRank1 => d * d_v + l * (2 * d + d_v) + 2 * l,
        Mechanism::PslaSymmetricGrid => l * d * d_v + l * d + l * (2 * d + d_v) + l,
    };
    8 * values
}

fn check_dense_guard(mechanism: Mechanism, l: usize) -> Result<(), BenchError> {
    if mechanism.is_dense() && l > DENSE_GUARD {
        return Err(BenchError::Attention(AttentionError::DenseGuard {
            l,
            guard: DENSE_GUARD,
        }));
    }
    Ok(())
}

/// Time one mechanism at one size: 2 warm-ups, then `reps` timed runs.
pub fn time_forward(
    mechanism: Mechanism,
    l: usize,
    d: usize,
    reps: usize,
    seed: u64,
) -> Result<BenchRecord, BenchError> {
    if reps < 5 {
        return Err(BenchError::TooFewReps(reps));
    }
    check_dense_guard(mechanism, l)?;
    let (batch, grid) = gen_batch(l, d, seed);
    let head = HeadConfig::default();
    for _ in 0..2 {
        black_box(run_mechanism(mechanism, &batch, &head, grid)?);
    }
    let mut times = Vec::with_capacity(reps);
    for _ in 0..reps {
        let t0 = Instant::now();
        black_box(run_mechanism(mechanism, &batch, &head, grid)?);
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    let median_s = if reps % 2 == 1 {
        times[reps / 2]
    } else {
        0.5 * (times[reps / 2 - 1] + times[reps / 2])
    };
    let trimmed: &[f64] = if reps >= 3 { &times[1..reps - 1] } else { &times };
    let trimmed_mean_s = trimmed.iter().sum::<f64>() / trimmed.len() as f64;
    Ok(BenchRecord {
        mechanism,
        l,
        d,
        reps,
        median_s,
        trimmed_mean_s,
        modeled_bytes: memory_model(mechanism, l, d, d),
    })
}

/// Cross-check a mechanism against its oracle on a small batch; catches
/// benchmarking a broken kernel.
pub fn verify_against_oracle(
    mechanism: Mechanism,
    l: usize,
    d: usize,
    seed: u64,
) -> Result<(), BenchError> {
    let l = l.min(DENSE_GUARD);
    let (batch, grid) = gen_batch(l, d, seed);
    let head = HeadConfig::default();
    let got = run_mechanism(mechanism, &batch, &head, grid)?;
    let want = match mechanism {
        Mechanism::Softmax => {
            // scalar-loop reference
            let scale = 1.0 / (d as f64).sqrt();
            let mut out = Array2::zeros((l, d));
            for i in 0..l {
                let mut weights = vec![0.0f64; l];
                let mut max = f64::NEG_INFINITY;
                for j in 0..l {
                    let mut dot = 0.0;
                    for c in 0..d {
                        dot += batch.q()[[i, c]] * batch.k()[[j, c]];
                    }
                    weights[j] = dot * scale;
                    max = max.max(weights[j]);
                }
                let mut total = 0.0;
                for w in weights.iter_mut() {
                    *w = (*w - max).exp();
                    total += *w;
                }
                for j in 0..l {
                    for c in 0..d {
                        out[[i, c]] += weights[j] / total * batch.v()[[j, c]];
                    }
                }
            }
            out
        }
        Mechanism::Linear => dense_linear_reference(&batch, &head.feature_map),
        Mechanism::PslaRank1 => dense_psla_reference(&batch, &head, DenseMode::Directional)?,
        // the two symmetric routes check each other
        Mechanism::PslaSymmetricGrid => dense_psla_reference(&batch, &head, DenseMode::Symmetric)?,
        Mechanism::DenseSymmetric => psla_symmetric_grid(&batch, &head, grid)?,
    };
    let err = got
        .iter()
        .zip(want.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if err > 1e-9 {
        return Err(BenchError::OracleMismatch {
            mechanism: mechanism.as_str(),
            l,
            err,
        });
    }
    Ok(())
}

/// Time a set of mechanisms over a length grid. Before timing, every
/// mechanism's output is verified against its oracle at the smallest
/// length.
pub fn run_grid(
    mechanisms: &[Mechanism],
    lengths: &[usize],
    d: usize,
    reps: usize,
    seed: u64,
) -> Result<Vec<BenchRecord>, BenchError> {
    let smallest = *lengths.iter().min().expect("non-empty length grid");
    for &m in mechanisms {
        verify_against_oracle(m, smallest, d, seed)?;
    }
    let mut records = Vec::new();
    for &m in mechanisms {
        for &l in lengths {
            records.push(time_forward(m, l, d, reps, seed)?);
        }
    }
    Ok(records)
}

/// OLS of log(median time) against log(L) over one mechanism's records.
pub fn fit_scaling(records: &[BenchRecord]) -> Result<ScalingFit, BenchError> {
    let mut lengths: Vec<usize> = records.iter().map(|r| r.l).collect();
    lengths.sort_unstable();
    lengths.dedup();
    let spread_ok = match (lengths.first(), lengths.last()) {
        (Some(&lo), Some(&hi)) => hi >= 8 * lo,
        _ => false,
    };
    if lengths.len() < 4 || !spread_ok {
        return Err(BenchError::InsufficientPoints(lengths));
    }
    let xs: Vec<f64> = records.iter().map(|r| (r.l as f64).ln()).collect();
    let ys: Vec<f64> = records.iter().map(|r| r.median_s.ln()).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(ScalingFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Smallest measured L at which `b` is strictly faster than `a`, or None.
/// Both record sets must cover the same length grid.
pub fn find_crossover(a: &[BenchRecord], b: &[BenchRecord]) -> Result<Option<usize>, BenchError> {
    let mut a_sorted: Vec<&BenchRecord> = a.iter().collect();
    let mut b_sorted: Vec<&BenchRecord> = b.iter().collect();
    a_sorted.sort_by_key(|r| r.l);
    b_sorted.sort_by_key(|r| r.l);
    if a_sorted.len() != b_sorted.len()
        || a_sorted
            .iter()
            .zip(&b_sorted)
            .any(|(x, y)| x.l != y.l)
    {
        return Err(BenchError::MismatchedGrids);
    }
    for (ra, rb) in a_sorted.iter().zip(&b_sorted) {
        if rb.median_s < ra.median_s {
            return Ok(Some(ra.l));
        }
    }
    Ok(None)
}
