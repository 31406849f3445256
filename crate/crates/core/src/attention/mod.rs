//! Attention mechanisms over physically positioned tokens.
//!
//! Four families live here:
//!
//! * [`softmax_attention`]: the quadratic reference.
//! * [`linear_attention`]: kernelized attention `phi(Q)[phi(K)^T V]` with row
//!   normalization, computed through the d x d product so no L x L matrix is
//!   ever formed.
//! * [`psla_rank1`]: linear attention with the separable Manhattan decay
//!   folded in as per-token multiplicative factors `D_Q`, `D_K` (a signed,
//!   directional bias; still O(L d^2)).
//! * [`psla_symmetric_1d`] / [`psla_symmetric_grid`]: exact reconstructions
//!   of the symmetric decay `exp(-alpha |dx|)` via bidirectional prefix
//!   scans, still linear in L.
//!
//! Every fast path has a dense O(L^2) oracle ([`dense_psla_reference`] and
//! friends) that materializes the pairwise weights explicitly; the test
//! suites assert equivalence.

mod dense;
mod scan;
mod variants;

pub use dense::{dense_causal_reference, dense_linear_reference, dense_psla_reference, DenseMode};
pub use scan::{psla_symmetric_1d, psla_symmetric_grid};
pub use variants::{
    linear_attention, multihead_psla, psla_rank1, psla_rank1_causal, softmax_attention,
    HeadProjection, MultiHeadPsla,
};

use crate::kernel::{Coord2D, DecayParams};
use ndarray::{Array1, Array2, Axis};
use thiserror::Error;

/// Dense oracles refuse sequences longer than this.
pub const DENSE_GUARD: usize = 4096;

/// Epsilon inside the pre-feature-map row standardization.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttentionError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),
    #[error("sequence length {l} exceeds the dense-oracle guard {guard}")]
    DenseGuard { l: usize, guard: usize },
    #[error("positions must be sorted ascending by x for the 1d scan")]
    UnsortedPositions,
    #[error("all y coordinates must be equal for the 1d scan")]
    UnequalY,
    #[error("positions do not match the cell centers of a {w}x{h} grid")]
    GridMismatch { w: usize, h: usize },
    #[error("multi-head attention needs at least one head")]
    NoHeads,
    #[error("epsilon must be > 0, got {0}")]
    BadEpsilon(f64),
}

/// Query/key/value matrices plus per-token physical coordinates.
///
/// `q` and `k` are L x d, `v` is L x d_v, and `positions` has length L.
#[derive(Debug, Clone)]
pub struct AttentionBatch {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    positions: Vec<Coord2D>,
}

impl AttentionBatch {
    pub fn new(
        q: Array2<f64>,
        k: Array2<f64>,
        v: Array2<f64>,
        positions: Vec<Coord2D>,
    ) -> Result<Self, AttentionError> {
        let l = q.nrows();
        if l == 0 || q.ncols() == 0 {
            return Err(AttentionError::ShapeMismatch(
                "L and d must be at least 1".into(),
            ));
        }
        if k.dim() != q.dim() {
            return Err(AttentionError::ShapeMismatch(format!(
                "k is {:?}, expected {:?}",
                k.dim(),
                q.dim()
            )));
        }
        if v.nrows() != l || v.ncols() == 0 {
            return Err(AttentionError::ShapeMismatch(format!(
                "v is {:?}, expected ({l}, >=1)",
                v.dim()
            )));
        }
        if positions.len() != l {
            return Err(AttentionError::ShapeMismatch(format!(
                "{} positions for {l} tokens",
                positions.len()
            )));
        }
        for (name, m) in [("q", &q), ("k", &k), ("v", &v)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(AttentionError::NonFinite(match name {
                    "q" => "q",
                    "k" => "k",
                    _ => "v",
                }));
            }
        }
        Ok(Self { q, k, v, positions })
    }

    pub fn len(&self) -> usize {
        self.q.nrows()
    }

    pub fn is_empty(&self) -> bool {
        false // L >= 1 by construction
    }

    pub fn dim(&self) -> usize {
        self.q.ncols()
    }

    pub fn dim_v(&self) -> usize {
        self.v.ncols()
    }

    pub fn q(&self) -> &Array2<f64> {
        &self.q
    }

    pub fn k(&self) -> &Array2<f64> {
        &self.k
    }

    pub fn v(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn positions(&self) -> &[Coord2D] {
        &self.positions
    }
}

/// Configuration of the non-negative feature map `phi(x) = ELU(x) + 1 + eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureMapConfig {
    pub epsilon: f64,
}

impl FeatureMapConfig {
    pub fn new(epsilon: f64) -> Result<Self, AttentionError> {
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(AttentionError::BadEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }
}

impl Default for FeatureMapConfig {
    fn default() -> Self {
        Self { epsilon: 1e-6 }
    }
}

/// Two-layer perceptron (tanh hidden layer) whose sigmoid output gates the
/// feature rows token-wise. Initialized with `b2 = -2` the gate opens near
/// 0.12, letting the distance prior dominate early.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub w1: Array2<f64>, // d x d_h
    pub b1: Array1<f64>, // d_h
    pub w2: Array2<f64>, // d_h x d
    pub b2: Array1<f64>, // d
}

impl GateParams {
    /// Near-closed init: zero weights, `b2 = -2` so every gate starts at
    /// `sigmoid(-2) ~ 0.119`.
    pub fn near_closed(d: usize, d_hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((d, d_hidden)),
            b1: Array1::zeros(d_hidden),
            w2: Array2::zeros((d_hidden, d)),
            b2: Array1::from_elem(d, -2.0),
        }
    }

    fn check(&self, d: usize) -> Result<(), AttentionError> {
        let dh = self.w1.ncols();
        if self.w1.nrows() != d
            || self.b1.len() != dh
            || self.w2.dim() != (dh, d)
            || self.b2.len() != d
        {
            return Err(AttentionError::ShapeMismatch(format!(
                "gate params inconsistent with d={d}"
            )));
        }
        Ok(())
    }
}

/// Learned affine maps applied after per-token row standardization of Q and
/// K, before the feature map.
#[derive(Debug, Clone, PartialEq)]
pub struct PreMapNorm {
    pub gamma_q: Array1<f64>,
    pub beta_q: Array1<f64>,
    pub gamma_k: Array1<f64>,
    pub beta_k: Array1<f64>,
}

impl PreMapNorm {
    pub fn identity(d: usize) -> Self {
        Self {
            gamma_q: Array1::ones(d),
            beta_q: Array1::zeros(d),
            gamma_k: Array1::ones(d),
            beta_k: Array1::zeros(d),
        }
    }

    fn check(&self, d: usize) -> Result<(), AttentionError> {
        if [&self.gamma_q, &self.beta_q, &self.gamma_k, &self.beta_k]
            .iter()
            .any(|v| v.len() != d)
        {
            return Err(AttentionError::ShapeMismatch(format!(
                "pre-map affine params must have length d={d}"
            )));
        }
        Ok(())
    }
}

/// Everything one attention head owns: decay parameters, feature map,
/// optional gates, optional pre-feature-map normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub decay: DecayParams,
    pub feature_map: FeatureMapConfig,
    pub gate_q: Option<GateParams>,
    pub gate_k: Option<GateParams>,
    pub pre_norm: Option<PreMapNorm>,
}

impl HeadConfig {
    /// Decay-only head: default bounds, no gates, no normalization.
    pub fn plain(decay: DecayParams) -> Self {
        Self {
            decay,
            feature_map: FeatureMapConfig::default(),
            gate_q: None,
            gate_k: None,
            pre_norm: None,
        }
    }

    pub(crate) fn check(&self, d: usize) -> Result<(), AttentionError> {
        if let Some(g) = &self.gate_q {
            g.check(d)?;
        }
        if let Some(g) = &self.gate_k {
            g.check(d)?;
        }
        if let Some(n) = &self.pre_norm {
            n.check(d)?;
        }
        Ok(())
    }
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self::plain(DecayParams::centered_default())
    }
}

/// `ELU(x) + 1 + eps`, element-wise. Strictly positive, C1-smooth, strictly
/// increasing.
pub fn feature_map(x: &Array2<f64>, cfg: &FeatureMapConfig) -> Array2<f64> {
    x.mapv(|v| elu(v) + 1.0 + cfg.epsilon)
}

pub(crate) fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp() - 1.0
    }
}

/// Token-wise gate values `sigmoid(tanh(x W1 + b1) W2 + b2)`, in (0,1).
pub fn gate_values(raw: &Array2<f64>, g: &GateParams) -> Result<Array2<f64>, AttentionError> {
    g.check(raw.ncols())?;
    let mut h = raw.dot(&g.w1);
    h += &g.b1;
    h.mapv_inplace(f64::tanh);
    let mut o = h.dot(&g.w2);
    o += &g.b2;
    o.mapv_inplace(crate::kernel::sigmoid);
    Ok(o)
}

/// Gated features `G(raw) * phi`, element-wise. Output entries lie strictly
/// between 0 and the corresponding `phi` entry.
pub fn apply_gate(
    phi: &Array2<f64>,
    raw: &Array2<f64>,
    g: &GateParams,
) -> Result<Array2<f64>, AttentionError> {
    if phi.dim() != raw.dim() {
        return Err(AttentionError::ShapeMismatch(format!(
            "phi {:?} vs raw {:?}",
            phi.dim(),
            raw.dim()
        )));
    }
    Ok(gate_values(raw, g)? * phi)
}

/// Per-token standardization to zero mean / unit variance followed by a
/// learned affine map. Statistics are per row; population statistics are
/// never used.
pub fn premap_normalize(x: &Array2<f64>, gamma: &Array1<f64>, beta: &Array1<f64>) -> Array2<f64> {
    let d = x.ncols() as f64;
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv = 1.0 / (var + NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv);
    }
    out *= gamma;
    out + beta
}

/// Which side of the head a raw matrix feeds; selects gate and affine
/// parameters.
#[derive(Clone, Copy)]
pub(crate) enum Side {
    Query,
    Key,
}

/// The full feature pipeline for one side: optional row standardization +
/// affine, then the feature map, then the optional gate. The gate input is
/// the raw (un-normalized) matrix.
pub(crate) fn featurize(
    raw: &Array2<f64>,
    side: Side,
    head: &HeadConfig,
) -> Result<Array2<f64>, AttentionError> {
    let pre = match (&head.pre_norm, side) {
        (Some(n), Side::Query) => premap_normalize(raw, &n.gamma_q, &n.beta_q),
        (Some(n), Side::Key) => premap_normalize(raw, &n.gamma_k, &n.beta_k),
        (None, _) => raw.clone(),
    };
    let phi = feature_map(&pre, &head.feature_map);
    let gate = match side {
        Side::Query => &head.gate_q,
        Side::Key => &head.gate_k,
    };
    match gate {
        Some(g) => apply_gate(&phi, raw, g),
        None => Ok(phi),
    }
}

/// Row-normalize `num` by `den` (both per-token), producing the attention
/// output.
pub(crate) fn normalize_rows(mut num: Array2<f64>, den: &Array1<f64>) -> Array2<f64> {
    for (mut row, &d) in num.rows_mut().into_iter().zip(den.iter()) {
        row.mapv_inplace(|v| v / d);
    }
    num
}

/// Column sums of an L x d matrix as a d-vector.
pub(crate) fn column_sums(m: &Array2<f64>) -> Array1<f64> {
    m.sum_axis(Axis(0))
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::AttentionBatch;
    use crate::kernel::Coord2D;
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Random batch with uniform positions in the unit square.
    pub(crate) fn random_batch(l: usize, d: usize, d_v: usize, seed: u64) -> AttentionBatch {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
        };
        let q = mat(l, d);
        let k = mat(l, d);
        let v = mat(l, d_v);
        let mut rng2 = ChaCha8Rng::seed_from_u64(seed ^ 0xabcd);
        let positions = (0..l)
            .map(|_| Coord2D::new(rng2.random::<f64>(), rng2.random::<f64>()).unwrap())
            .collect();
        AttentionBatch::new(q, k, v, positions).unwrap()
    }

    pub(crate) fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }
}
