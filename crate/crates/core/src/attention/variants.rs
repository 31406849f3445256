//! Softmax baseline, plain linear attention, and the rank-1 decay-biased
//! variants (bidirectional scans live in `scan`).

use super::{
    column_sums, featurize, normalize_rows, AttentionBatch, AttentionError, FeatureMapConfig,
    HeadConfig, Side,
};
use crate::kernel::{bias_factors, reparameterize};
use ndarray::{s, Array1, Array2};

/// Row block size for the softmax score buffer; keeps memory at
/// O(block * L) instead of O(L^2).
const SOFTMAX_BLOCK: usize = 128;

/// Quadratic softmax attention: row i is `softmax_j(q_i . k_j / sqrt(d)) V`.
///
/// Computed in row blocks so the full L x L score matrix is never held at
/// once; each output row is a convex combination of V rows.
pub fn softmax_attention(b: &AttentionBatch) -> Array2<f64> {
    let l = b.len();
    let scale = 1.0 / (b.dim() as f64).sqrt();
    let mut out = Array2::zeros((l, b.dim_v()));
    let kt = b.k().t();
    let mut start = 0;
    while start < l {
        let stop = (start + SOFTMAX_BLOCK).min(l);
        let mut scores = b.q().slice(s![start..stop, ..]).dot(&kt);
        scores *= scale;
        for mut row in scores.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        out.slice_mut(s![start..stop, ..]).assign(&scores.dot(b.v()));
        start = stop;
    }
    out
}

/// Linear attention `phi(Q) [phi(K)^T V] / phi(Q) [phi(K)^T 1]`.
///
/// The d x d_v product is formed first, so cost is O(L d d_v) and the
/// epsilon floor of the feature map keeps every denominator strictly
/// positive (at least `L * d * eps^2`).
pub fn linear_attention(b: &AttentionBatch, cfg: &FeatureMapConfig) -> Array2<f64> {
    let phi_q = super::feature_map(b.q(), cfg);
    let phi_k = super::feature_map(b.k(), cfg);
    let summary = phi_k.t().dot(b.v());
    let z = column_sums(&phi_k);
    let num = phi_q.dot(&summary);
    let den = phi_q.dot(&z);
    normalize_rows(num, &den)
}

/// Scale row i of `m` by `s[i]`.
fn scale_rows(m: &Array2<f64>, s: &[f64]) -> Array2<f64> {
    let mut out = m.clone();
    for (mut row, &f) in out.rows_mut().into_iter().zip(s.iter()) {
        row.mapv_inplace(|v| v * f);
    }
    out
}

fn biased_features(
    b: &AttentionBatch,
    head: &HeadConfig,
) -> Result<(Array2<f64>, Array2<f64>), AttentionError> {
    head.check(b.dim())?;
    let rates = reparameterize(&head.decay);
    let (d_q, d_k) = bias_factors(b.positions(), &rates);
    let f_q = featurize(b.q(), Side::Query, head)?;
    let f_k = featurize(b.k(), Side::Key, head)?;
    Ok((scale_rows(&f_q, &d_q), scale_rows(&f_k, &d_k)))
}

/// Rank-1 decay-biased linear attention.
///
/// Effective pairwise weight is
/// `phi(q_i) . phi(k_j) * exp(alpha_x (x_j - x_i) + alpha_y (y_j - y_i))`,
/// row-normalized, realized by folding `D_Q`, `D_K` into the feature rows.
/// No L x L matrix is formed.
pub fn psla_rank1(b: &AttentionBatch, head: &HeadConfig) -> Result<Array2<f64>, AttentionError> {
    let (q_b, k_b) = biased_features(b, head)?;
    let summary = k_b.t().dot(b.v());
    let z = column_sums(&k_b);
    let num = q_b.dot(&summary);
    let den = q_b.dot(&z);
    Ok(normalize_rows(num, &den))
}

/// Causal rank-1 variant: the accumulation is restricted to keys j <= i via
/// a single forward scan over the biased features.
pub fn psla_rank1_causal(
    b: &AttentionBatch,
    head: &HeadConfig,
) -> Result<Array2<f64>, AttentionError> {
    let (q_b, k_b) = biased_features(b, head)?;
    let (l, d) = q_b.dim();
    let d_v = b.dim_v();
    let mut summary = Array2::<f64>::zeros((d, d_v));
    let mut z = Array1::<f64>::zeros(d);
    let mut out = Array2::zeros((l, d_v));
    for i in 0..l {
        let k_row = k_b.row(i);
        let v_row = b.v().row(i);
        for (a, &kf) in summary.rows_mut().into_iter().zip(k_row.iter()) {
            ndarray::Zip::from(a).and(&v_row).for_each(|s, &v| *s += kf * v);
        }
        z += &k_row;
        let q_row = q_b.row(i);
        let den = q_row.dot(&z);
        out.row_mut(i).assign(&(&q_row.dot(&summary) / den));
    }
    Ok(out)
}

/// Per-head input/output projections for multi-head attention.
#[derive(Debug, Clone)]
pub struct HeadProjection {
    pub w_q: Array2<f64>, // d_model x d_head
    pub w_k: Array2<f64>, // d_model x d_head
    pub w_v: Array2<f64>, // d_model x d_head_v
}

/// A stack of independent rank-1 heads, concatenated then projected.
#[derive(Debug, Clone)]
pub struct MultiHeadPsla {
    pub heads: Vec<(HeadConfig, HeadProjection)>,
    pub w_out: Array2<f64>, // sum(d_head_v) x d_model
}

/// Multi-head rank-1 attention. Each head owns independent decay
/// parameters; head outputs are concatenated in head-index order and mixed
/// by the output projection.
pub fn multihead_psla(mh: &MultiHeadPsla, b: &AttentionBatch) -> Result<Array2<f64>, AttentionError> {
    if mh.heads.is_empty() {
        return Err(AttentionError::NoHeads);
    }
    let d_model = b.dim();
    let total_v: usize = mh.heads.iter().map(|(_, p)| p.w_v.ncols()).sum();
    if mh.w_out.nrows() != total_v {
        return Err(AttentionError::ShapeMismatch(format!(
            "w_out has {} rows, expected {total_v}",
            mh.w_out.nrows()
        )));
    }
    let mut concat = Array2::zeros((b.len(), total_v));
    let mut offset = 0;
    for (cfg, proj) in &mh.heads {
        if proj.w_q.nrows() != d_model || proj.w_k.nrows() != d_model || proj.w_v.nrows() != d_model
        {
            return Err(AttentionError::ShapeMismatch(
                "head projection rows must equal d_model".into(),
            ));
        }
        if proj.w_q.ncols() != proj.w_k.ncols() {
            return Err(AttentionError::ShapeMismatch(
                "w_q and w_k must project to the same head dim".into(),
            ));
        }
        let sub = AttentionBatch::new(
            b.q().dot(&proj.w_q),
            b.k().dot(&proj.w_k),
            b.v().dot(&proj.w_v),
            b.positions().to_vec(),
        )?;
        let head_out = psla_rank1(&sub, cfg)?;
        let width = proj.w_v.ncols();
        concat
            .slice_mut(s![.., offset..offset + width])
            .assign(&head_out);
        offset += width;
    }
    Ok(concat.dot(&mh.w_out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense::{dense_linear_reference, dense_psla_reference, DenseMode};
    use crate::attention::testutil::{max_abs_diff, random_batch};
    use crate::attention::{GateParams, PreMapNorm};
    use crate::kernel::DecayParams;
    use ndarray::{s, Axis};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn softmax_single_token_returns_v() {
        let b = random_batch(1, 4, 3, 7);
        let out = softmax_attention(&b);
        assert!(max_abs_diff(&out, &b.v().clone()) < 1e-15);
    }

    #[test]
    fn softmax_uniform_when_keys_identical() {
        let l = 6;
        let q = Array2::ones((l, 3));
        let k = Array2::ones((l, 3));
        let b = random_batch(l, 3, 2, 9);
        let batch = AttentionBatch::new(q, k, b.v().clone(), b.positions().to_vec()).unwrap();
        let out = softmax_attention(&batch);
        let mean = batch.v().mean_axis(Axis(0)).unwrap();
        for row in out.rows() {
            for (a, m) in row.iter().zip(mean.iter()) {
                assert!((a - m).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn softmax_matches_scalar_loop_oracle() {
        // independent per-element evaluation, no matrix ops
        let b = random_batch(8, 4, 3, 21);
        let out = softmax_attention(&b);
        let scale = 1.0 / 2.0;
        for i in 0..8 {
            let mut weights = [0.0f64; 8];
            for j in 0..8 {
                let mut dot = 0.0;
                for c in 0..4 {
                    dot += b.q()[[i, c]] * b.k()[[j, c]];
                }
                weights[j] = (dot * scale).exp();
            }
            let total: f64 = weights.iter().sum();
            for c in 0..3 {
                let mut expect = 0.0;
                for j in 0..8 {
                    expect += weights[j] / total * b.v()[[j, c]];
                }
                assert!((out[[i, c]] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_attention_edge_cases() {
        let cfg = FeatureMapConfig::default();
        let b = random_batch(1, 5, 4, 3);
        let out = linear_attention(&b, &cfg);
        assert!(max_abs_diff(&out, &b.v().clone()) < 1e-12);

        // rank-1 keys: every output row is the same weighted mean of V
        let l = 5;
        let base = random_batch(l, 3, 2, 5);
        let k = Array2::from_shape_fn((l, 3), |(_, c)| [0.3, -0.7, 1.1][c]);
        let batch =
            AttentionBatch::new(base.q().clone(), k, base.v().clone(), base.positions().to_vec())
                .unwrap();
        let out = linear_attention(&batch, &cfg);
        for i in 1..l {
            for c in 0..2 {
                assert!((out[[i, c]] - out[[0, c]]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_attention_matches_dense_oracle() {
        let cfg = FeatureMapConfig::default();
        let b = random_batch(16, 8, 8, 11);
        let fast = linear_attention(&b, &cfg);
        let dense = dense_linear_reference(&b, &cfg);
        assert!(max_abs_diff(&fast, &dense) < 1e-10);
    }

    #[test]
    fn psla_collapses_to_linear_when_alpha_vanishes() {
        // raw -> -inf with lower bound 0 sends both rates to 0
        let decay = DecayParams::new(-40.0, -40.0, 0.0, 0.6).unwrap();
        let head = HeadConfig::plain(decay);
        let b = random_batch(12, 4, 4, 13);
        let a = psla_rank1(&b, &head).unwrap();
        let lin = linear_attention(&b, &head.feature_map);
        assert!(max_abs_diff(&a, &lin) < 1e-12);
    }

    #[test]
    fn psla_single_token_and_oracle() {
        let head = HeadConfig::default();
        let b1 = random_batch(1, 3, 2, 17);
        let out = psla_rank1(&b1, &head).unwrap();
        assert!(max_abs_diff(&out, &b1.v().clone()) < 1e-12);

        let b = random_batch(16, 8, 8, 19);
        let fast = psla_rank1(&b, &head).unwrap();
        let dense = dense_psla_reference(&b, &head, DenseMode::Directional).unwrap();
        assert!(max_abs_diff(&fast, &dense) < 1e-10);
    }

    #[test]
    fn psla_oracle_with_gates_and_norm() {
        let d = 6;
        let mut head = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut gate = GateParams::near_closed(d, 4);
        gate.w1.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 0.3);
        gate.w2.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal) * 0.3);
        head.gate_q = Some(gate.clone());
        head.gate_k = Some(gate);
        let mut norm = PreMapNorm::identity(d);
        norm.gamma_q.mapv_inplace(|_| 1.0 + 0.2 * rng.sample::<f64, _>(StandardNormal));
        norm.beta_k.mapv_inplace(|_| 0.1 * rng.sample::<f64, _>(StandardNormal));
        head.pre_norm = Some(norm);

        let b = random_batch(24, d, 5, 23);
        let fast = psla_rank1(&b, &head).unwrap();
        let dense = dense_psla_reference(&b, &head, DenseMode::Directional).unwrap();
        assert!(max_abs_diff(&fast, &dense) < 1e-10);
    }

    #[test]
    fn causal_matches_masked_dense_oracle() {
        let head = HeadConfig::default();
        let b = random_batch(20, 5, 4, 29);
        let fast = psla_rank1_causal(&b, &head).unwrap();
        let dense = crate::attention::dense_causal_reference(&b, &head).unwrap();
        assert!(max_abs_diff(&fast, &dense) < 1e-10);
        // first row attends only to itself
        assert!(max_abs_diff(
            &fast.slice(s![0..1, ..]).to_owned(),
            &b.v().slice(s![0..1, ..]).to_owned()
        ) < 1e-12);
    }

    #[test]
    fn convexity_and_positive_scale_invariance() {
        let head = HeadConfig::default();
        let b = random_batch(32, 4, 3, 31);

        // every normalized variant keeps each output column inside the
        // corresponding V column's range
        let line = {
            let mut xs: Vec<f64> = (0..32).map(|i| i as f64 / 32.0).collect();
            xs.push(0.99);
            xs.truncate(32);
            let pos = xs
                .into_iter()
                .map(|x| crate::kernel::Coord2D::new(x, 0.5).unwrap())
                .collect();
            AttentionBatch::new(b.q().clone(), b.k().clone(), b.v().clone(), pos).unwrap()
        };
        let grid = AttentionBatch::new(
            b.q().clone(),
            b.k().clone(),
            b.v().clone(),
            crate::kernel::grid_centers(8, 4),
        )
        .unwrap();
        let outputs = [
            softmax_attention(&b),
            linear_attention(&b, &head.feature_map),
            psla_rank1(&b, &head).unwrap(),
            crate::attention::psla_symmetric_1d(&line, &head).unwrap(),
            crate::attention::psla_symmetric_grid(&grid, &head, (8, 4)).unwrap(),
        ];
        for out in &outputs {
            for c in 0..3 {
                let col_min = b.v().column(c).iter().cloned().fold(f64::INFINITY, f64::min);
                let col_max =
                    b.v().column(c).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..32 {
                    assert!(out[[i, c]] >= col_min - 1e-12 && out[[i, c]] <= col_max + 1e-12);
                }
            }
        }
        let out = psla_rank1(&b, &head).unwrap();

        // scaling V by a power of two scales the output exactly
        let scaled = AttentionBatch::new(
            b.q().clone(),
            b.k().clone(),
            b.v() * 4.0,
            b.positions().to_vec(),
        )
        .unwrap();
        let out_scaled = psla_rank1(&scaled, &head).unwrap();
        for (a, b) in out_scaled.iter().zip(out.iter()) {
            assert_eq!(*a, b * 4.0);
        }
    }

    #[test]
    fn multihead_single_identity_head_equals_rank1() {
        let d = 4;
        let head = HeadConfig::default();
        let proj = HeadProjection {
            w_q: Array2::eye(d),
            w_k: Array2::eye(d),
            w_v: Array2::eye(d),
        };
        let mh = MultiHeadPsla {
            heads: vec![(head.clone(), proj)],
            w_out: Array2::eye(d),
        };
        let b = random_batch(10, d, d, 37);
        let got = multihead_psla(&mh, &b).unwrap();
        let want = psla_rank1(&b, &head).unwrap();
        assert!(max_abs_diff(&got, &want) < 1e-14);
    }

    #[test]
    fn multihead_two_identical_heads_halves_agree() {
        let d = 4;
        let head = HeadConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w: Array2<f64> =
            Array2::from_shape_fn((d, 3), |_| rng.sample::<f64, _>(StandardNormal));
        let wv: Array2<f64> =
            Array2::from_shape_fn((d, 2), |_| rng.sample::<f64, _>(StandardNormal));
        let proj = || HeadProjection {
            w_q: w.clone(),
            w_k: w.clone(),
            w_v: wv.clone(),
        };
        let mh = MultiHeadPsla {
            heads: vec![(head.clone(), proj()), (head.clone(), proj())],
            w_out: Array2::eye(4),
        };
        let b = random_batch(9, d, d, 41);
        let out = multihead_psla(&mh, &b).unwrap();
        for i in 0..9 {
            for c in 0..2 {
                assert!((out[[i, c]] - out[[i, c + 2]]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn multihead_matches_per_head_assembly() {
        let d_model = 6;
        let n_heads = 8;
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let mut mat = |r: usize, c: usize| {
            Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal) * 0.5)
        };
        let mut heads = Vec::new();
        for h in 0..n_heads {
            let decay = DecayParams::new(0.2 * h as f64 - 0.7, 0.1 * h as f64, 1.2, 1.8).unwrap();
            heads.push((
                HeadConfig::plain(decay),
                HeadProjection {
                    w_q: mat(d_model, 3),
                    w_k: mat(d_model, 3),
                    w_v: mat(d_model, 2),
                },
            ));
        }
        let w_out = mat(2 * n_heads, d_model);
        let mh = MultiHeadPsla { heads, w_out: w_out.clone() };
        let b = random_batch(14, d_model, d_model, 61);
        let got = multihead_psla(&mh, &b).unwrap();

        // hand-assembled concat-then-project oracle over a per-head loop
        let mut concat = Array2::zeros((14, 2 * n_heads));
        for (h, (cfg, proj)) in mh.heads.iter().enumerate() {
            let sub = AttentionBatch::new(
                b.q().dot(&proj.w_q),
                b.k().dot(&proj.w_k),
                b.v().dot(&proj.w_v),
                b.positions().to_vec(),
            )
            .unwrap();
            let head_out = dense_psla_reference(&sub, cfg, DenseMode::Directional).unwrap();
            concat.slice_mut(s![.., 2 * h..2 * h + 2]).assign(&head_out);
        }
        let want = concat.dot(&w_out);
        assert!(max_abs_diff(&got, &want) < 1e-10);
    }
}
