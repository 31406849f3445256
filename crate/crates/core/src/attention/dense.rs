//! Dense O(L^2) reference implementations.
//!
//! These materialize the full pairwise weight matrix and are the oracles
//! every fast path is tested against. They are deliberately straightforward;
//! the guard on L protects against accidental huge allocations.

use super::{featurize, AttentionBatch, AttentionError, FeatureMapConfig, HeadConfig, Side};
use crate::kernel::{bias_factors, decay_weight, reparameterize};
use ndarray::Array2;

/// Which pairwise bias the dense reference applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseMode {
    /// Signed rank-1 product `exp(+alpha_x (x_j - x_i) + alpha_y (y_j - y_i))`.
    Directional,
    /// Symmetric decay `exp(-alpha_x |dx| - alpha_y |dy|)`.
    Symmetric,
}

fn guard(l: usize) -> Result<(), AttentionError> {
    if l > super::DENSE_GUARD {
        return Err(AttentionError::DenseGuard {
            l,
            guard: super::DENSE_GUARD,
        });
    }
    Ok(())
}

fn weighted_average(weights: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let mut w = weights.clone();
    for mut row in w.rows_mut() {
        let sum = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    w.dot(v)
}

/// Dense reference for the decay-biased variants.
///
/// Directional mode reproduces what `psla_rank1` computes; symmetric mode
/// is the target kernel of the bidirectional scans.
pub fn dense_psla_reference(
    b: &AttentionBatch,
    head: &HeadConfig,
    mode: DenseMode,
) -> Result<Array2<f64>, AttentionError> {
    let l = b.len();
    guard(l)?;
    head.check(b.dim())?;
    let rates = reparameterize(&head.decay);
    let f_q = featurize(b.q(), Side::Query, head)?;
    let f_k = featurize(b.k(), Side::Key, head)?;
    let mut weights = f_q.dot(&f_k.t());
    match mode {
        DenseMode::Directional => {
            let (d_q, d_k) = bias_factors(b.positions(), &rates);
            for i in 0..l {
                for j in 0..l {
                    weights[[i, j]] *= d_q[i] * d_k[j];
                }
            }
        }
        DenseMode::Symmetric => {
            let pos = b.positions();
            for i in 0..l {
                for j in 0..l {
                    weights[[i, j]] *= decay_weight(pos[i], pos[j], &rates);
                }
            }
        }
    }
    Ok(weighted_average(&weights, b.v()))
}

/// Dense reference for the causal rank-1 variant: directional weights with
/// keys j > i masked out.
pub fn dense_causal_reference(
    b: &AttentionBatch,
    head: &HeadConfig,
) -> Result<Array2<f64>, AttentionError> {
    let l = b.len();
    guard(l)?;
    head.check(b.dim())?;
    let rates = reparameterize(&head.decay);
    let (d_q, d_k) = bias_factors(b.positions(), &rates);
    let f_q = featurize(b.q(), Side::Query, head)?;
    let f_k = featurize(b.k(), Side::Key, head)?;
    let mut weights = f_q.dot(&f_k.t());
    for i in 0..l {
        for j in 0..l {
            weights[[i, j]] = if j <= i {
                weights[[i, j]] * d_q[i] * d_k[j]
            } else {
                0.0
            };
        }
    }
    Ok(weighted_average(&weights, b.v()))
}

/// Dense reference for plain (unbiased) linear attention.
pub fn dense_linear_reference(b: &AttentionBatch, cfg: &FeatureMapConfig) -> Array2<f64> {
    let phi_q = super::feature_map(b.q(), cfg);
    let phi_k = super::feature_map(b.k(), cfg);
    let weights = phi_q.dot(&phi_k.t());
    weighted_average(&weights, b.v())
}
