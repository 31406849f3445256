//! Exact symmetric-decay attention in O(L) via bidirectional prefix scans.
//!
//! `|x_i - x_j|` admits no rank-1 factorization, but the sum over keys
//! splits into two causal halves around each query:
//!
//! ```text
//! sum_j e^{-a|x_i-x_j|} u_j = sum_{j<=i} e^{-a(x_i-x_j)} u_j   (forward)
//!                           + sum_{j>i}  e^{-a(x_j-x_i)} u_j   (backward)
//! ```
//!
//! each of which is a one-directional decay recurrence with O(d d_v)
//! carried state. The grid variant composes the two axes per column then
//! per row, exploiting that the 2D kernel is the product of the 1D ones.

use super::{featurize, AttentionBatch, AttentionError, HeadConfig, Side};
use crate::kernel::reparameterize;
use ndarray::{Array1, Array2};

/// Symmetric-decay attention for tokens on a line.
///
/// Preconditions: positions sorted ascending by x, all y equal (so only the
/// x decay is active). Two passes of O(L d d_v) with O(d d_v) carried state.
pub fn psla_symmetric_1d(
    b: &AttentionBatch,
    head: &HeadConfig,
) -> Result<Array2<f64>, AttentionError> {
    let pos = b.positions();
    for w in pos.windows(2) {
        if w[1].x() < w[0].x() {
            return Err(AttentionError::UnsortedPositions);
        }
        if w[1].y() != w[0].y() {
            return Err(AttentionError::UnequalY);
        }
    }
    head.check(b.dim())?;
    let alpha = reparameterize(&head.decay).alpha_x;
    let f_q = featurize(b.q(), Side::Query, head)?;
    let f_k = featurize(b.k(), Side::Key, head)?;

    let l = b.len();
    let d = b.dim();
    let d_v = b.dim_v();
    let v = b.v();

    let mut num = Array2::<f64>::zeros((l, d_v));
    let mut den = Array1::<f64>::zeros(l);

    // forward half, self included
    let mut state = Array2::<f64>::zeros((d, d_v));
    let mut z = Array1::<f64>::zeros(d);
    for i in 0..l {
        if i > 0 {
            let decay = (-alpha * (pos[i].x() - pos[i - 1].x())).exp();
            state *= decay;
            z *= decay;
        }
        let k_row = f_k.row(i);
        let v_row = v.row(i);
        for (mut srow, &kf) in state.rows_mut().into_iter().zip(k_row.iter()) {
            srow.zip_mut_with(&v_row, |s, &vv| *s += kf * vv);
        }
        z += &k_row;
        let q_row = f_q.row(i);
        num.row_mut(i).assign(&q_row.dot(&state));
        den[i] = q_row.dot(&z);
    }

    // backward half, strictly greater keys
    state.fill(0.0);
    z.fill(0.0);
    for i in (0..l).rev() {
        let q_row = f_q.row(i);
        let back = q_row.dot(&state);
        num.row_mut(i).zip_mut_with(&back, |n, &x| *n += x);
        den[i] += q_row.dot(&z);
        if i > 0 {
            let k_row = f_k.row(i);
            let v_row = v.row(i);
            for (mut srow, &kf) in state.rows_mut().into_iter().zip(k_row.iter()) {
                srow.zip_mut_with(&v_row, |s, &vv| *s += kf * vv);
            }
            z += &k_row;
            let decay = (-alpha * (pos[i].x() - pos[i - 1].x())).exp();
            state *= decay;
            z *= decay;
        }
    }

    Ok(super::normalize_rows(num, &den))
}

/// In-place bidirectional decay scan down the rows of a whole field,
/// streaming row-major for cache locality.
///
/// `field` holds h rows of `w * m` values; `decays[r]` is the per-step
/// factor between rows r-1 and r. On return, row r holds
/// `sum_s decay(path r..s) * original[s]` per column lane.
///
/// Works in two sequential sweeps: a descending pass turns row r into
/// `T[r] = A[r] + d[r+1] T[r+1]` (the backward half including self), then
/// an ascending pass recovers `A[r] = T[r] - d[r+1] T[r+1]` from the intact
/// neighbor row, emits `B[r] = T[r] + d[r] fwd[r-1]`, and carries the
/// forward state in a one-row buffer. The recovery subtraction re-rounds
/// `A`, costing at most a few ulps of the row magnitude.
fn y_scan_streaming(field: &mut [f64], w: usize, h: usize, m: usize, decays: &[f64], carry: &mut [f64]) {
    debug_assert_eq!(decays.len(), h);
    let row = w * m;
    debug_assert!(carry.len() >= row);
    for r in (0..h.saturating_sub(1)).rev() {
        let dy = decays[r + 1];
        let (head, tail) = field.split_at_mut((r + 1) * row);
        let cur = &mut head[r * row..];
        let next = &tail[..row];
        for (c_val, n_val) in cur.iter_mut().zip(next.iter()) {
            *c_val += dy * n_val;
        }
    }
    let carry = &mut carry[..row];
    carry.fill(0.0);
    for r in 0..h {
        let dy_prev = decays[r];
        let base = r * row;
        for i in 0..row {
            let t_cur = field[base + i];
            let a = if r + 1 < h {
                t_cur - decays[r + 1] * field[base + row + i]
            } else {
                t_cur
            };
            let scaled_prev = if r > 0 { dy_prev * carry[i] } else { 0.0 };
            field[base + i] = t_cur + scaled_prev;
            carry[i] = a + scaled_prev;
        }
    }
}

/// In-place bidirectional decay scan along one lane of `field`.
///
/// `field` holds `n` blocks of length `m` at the given stride (in blocks);
/// `decays[t]` is the per-step factor between block t-1 and block t.
/// On return, block t holds `sum_s decay(path t..s) * original[s]`.
fn bidirectional_scan(
    field: &mut [f64],
    offset: usize,
    stride: usize,
    n: usize,
    m: usize,
    decays: &[f64],
    tmp: &mut [f64],
) {
    debug_assert_eq!(decays.len(), n);
    debug_assert!(tmp.len() >= n * m);
    // stash originals
    for t in 0..n {
        let src = (offset + t * stride) * m;
        tmp[t * m..(t + 1) * m].copy_from_slice(&field[src..src + m]);
    }
    // forward, self included
    let mut carry = vec![0.0; m];
    for t in 0..n {
        let decay = decays[t];
        let orig = &tmp[t * m..(t + 1) * m];
        for (c, &o) in carry.iter_mut().zip(orig) {
            *c = if t > 0 { *c * decay + o } else { o };
        }
        let dst = (offset + t * stride) * m;
        field[dst..dst + m].copy_from_slice(&carry);
    }
    // backward, strictly later blocks
    carry.fill(0.0);
    for t in (0..n).rev() {
        let dst = (offset + t * stride) * m;
        for (f, &c) in field[dst..dst + m].iter_mut().zip(carry.iter()) {
            *f += c;
        }
        if t > 0 {
            let decay = decays[t];
            let orig = &tmp[t * m..(t + 1) * m];
            for (c, &o) in carry.iter_mut().zip(orig) {
                *c = (*c + o) * decay;
            }
        }
    }
}

/// Symmetric-decay attention on an exact W x H grid of cell centers in
/// row-major order.
///
/// Realized as a bidirectional y-scan down each column of the key/value
/// accumulators followed by a bidirectional x-scan along each row, with the
/// same double scan on the key features alone for the denominator. Cost is
/// O(L d d_v); state is the per-cell accumulator field.
pub fn psla_symmetric_grid(
    b: &AttentionBatch,
    head: &HeadConfig,
    grid: (usize, usize),
) -> Result<Array2<f64>, AttentionError> {
    let (w, h) = grid;
    let l = b.len();
    if w * h != l {
        return Err(AttentionError::GridMismatch { w, h });
    }
    let pos = b.positions();
    for row in 0..h {
        for col in 0..w {
            let expect = crate::kernel::cell_center(col, row, w, h);
            if pos[row * w + col] != expect {
                return Err(AttentionError::GridMismatch { w, h });
            }
        }
    }
    head.check(b.dim())?;
    let rates = reparameterize(&head.decay);
    let f_q = featurize(b.q(), Side::Query, head)?;
    let f_k = featurize(b.k(), Side::Key, head)?;

    let d = b.dim();
    let d_v = b.dim_v();
    let v = b.v();
    let m = d * d_v;

    // accumulator fields: per cell, phi(k) (x) v and phi(k)
    let mut field = vec![0.0; l * m];
    let mut zfield = vec![0.0; l * d];
    for i in 0..l {
        let block = &mut field[i * m..(i + 1) * m];
        for (c, &kf) in f_k.row(i).iter().enumerate() {
            for (j, &vv) in v.row(i).iter().enumerate() {
                block[c * d_v + j] = kf * vv;
            }
        }
        zfield[i * d..(i + 1) * d].copy_from_slice(f_k.row(i).as_slice().unwrap());
    }

    // per-step decay factors from actual coordinates
    let y_decays: Vec<f64> = (0..h)
        .map(|r| {
            if r == 0 {
                1.0
            } else {
                (-rates.alpha_y * (pos[r * w].y() - pos[(r - 1) * w].y())).exp()
            }
        })
        .collect();
    let x_decays: Vec<f64> = (0..w)
        .map(|c| {
            if c == 0 {
                1.0
            } else {
                (-rates.alpha_x * (pos[c].x() - pos[c - 1].x())).exp()
            }
        })
        .collect();

    let mut tmp = vec![0.0; w * m];
    y_scan_streaming(&mut field, w, h, m, &y_decays, &mut tmp);
    y_scan_streaming(&mut zfield, w, h, d, &y_decays, &mut tmp);
    for row in 0..h {
        bidirectional_scan(&mut field, row * w, 1, w, m, &x_decays, &mut tmp);
        bidirectional_scan(&mut zfield, row * w, 1, w, d, &x_decays, &mut tmp);
    }

    let mut out = Array2::zeros((l, d_v));
    for i in 0..l {
        let q_row = f_q.row(i);
        let block = &field[i * m..(i + 1) * m];
        let zblock = &zfield[i * d..(i + 1) * d];
        let mut den = 0.0;
        for (c, &qf) in q_row.iter().enumerate() {
            den += qf * zblock[c];
        }
        let mut out_row = out.row_mut(i);
        for (c, &qf) in q_row.iter().enumerate() {
            let seg = &block[c * d_v..(c + 1) * d_v];
            for (o, &s) in out_row.iter_mut().zip(seg) {
                *o += qf * s;
            }
        }
        out_row.mapv_inplace(|x| x / den);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::dense::{dense_psla_reference, DenseMode};
    use crate::attention::testutil::random_batch;
    use crate::attention::FeatureMapConfig;
    use crate::kernel::{grid_centers, Coord2D, DecayParams};
    use ndarray::Array2;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn line_batch(l: usize, d: usize, d_v: usize, seed: u64) -> AttentionBatch {
        let base = random_batch(l, d, d_v, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x1d);
        let mut xs: Vec<f64> = (0..l).map(|_| rng.random::<f64>()).collect();
        xs.sort_by(f64::total_cmp);
        let pos = xs
            .into_iter()
            .map(|x| Coord2D::new(x, 0.5).unwrap())
            .collect();
        AttentionBatch::new(base.q().clone(), base.k().clone(), base.v().clone(), pos).unwrap()
    }

    fn grid_batch(w: usize, h: usize, d: usize, d_v: usize, seed: u64) -> AttentionBatch {
        let l = w * h;
        let base = random_batch(l, d, d_v, seed);
        AttentionBatch::new(
            base.q().clone(),
            base.k().clone(),
            base.v().clone(),
            grid_centers(w, h),
        )
        .unwrap()
    }

    fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn one_token_returns_v_row() {
        let b = line_batch(1, 3, 2, 1);
        let out = psla_symmetric_1d(&b, &HeadConfig::default()).unwrap();
        assert!(max_abs_diff(&out, &b.v().clone()) < 1e-12);
    }

    #[test]
    fn unsorted_or_mixed_y_rejected() {
        let base = random_batch(3, 2, 2, 2);
        let pos = vec![
            Coord2D::new(0.9, 0.5).unwrap(),
            Coord2D::new(0.1, 0.5).unwrap(),
            Coord2D::new(0.95, 0.5).unwrap(),
        ];
        let b =
            AttentionBatch::new(base.q().clone(), base.k().clone(), base.v().clone(), pos).unwrap();
        assert!(matches!(
            psla_symmetric_1d(&b, &HeadConfig::default()),
            Err(AttentionError::UnsortedPositions)
        ));

        let pos2 = vec![
            Coord2D::new(0.1, 0.2).unwrap(),
            Coord2D::new(0.5, 0.5).unwrap(),
            Coord2D::new(0.9, 0.5).unwrap(),
        ];
        let b2 =
            AttentionBatch::new(base.q().clone(), base.k().clone(), base.v().clone(), pos2)
                .unwrap();
        assert!(matches!(
            psla_symmetric_1d(&b2, &HeadConfig::default()),
            Err(AttentionError::UnequalY)
        ));
    }

    #[test]
    fn scan_1d_matches_dense_symmetric_oracle() {
        for (l, seed) in [(2usize, 4u64), (7, 5), (64, 6), (256, 7)] {
            let b = line_batch(l, 8, 8, seed);
            let fast = psla_symmetric_1d(&b, &HeadConfig::default()).unwrap();
            let dense =
                dense_psla_reference(&b, &HeadConfig::default(), DenseMode::Symmetric).unwrap();
            assert!(
                max_abs_diff(&fast, &dense) < 1e-9,
                "L={l}: {}",
                max_abs_diff(&fast, &dense)
            );
        }
    }

    #[test]
    fn scan_1d_alpha_zero_equals_linear() {
        let decay = DecayParams::new(-40.0, -40.0, 0.0, 0.6).unwrap();
        let head = HeadConfig::plain(decay);
        let b = line_batch(32, 4, 4, 8);
        let fast = psla_symmetric_1d(&b, &head).unwrap();
        let lin = crate::attention::linear_attention(&b, &FeatureMapConfig::default());
        assert!(max_abs_diff(&fast, &lin) < 1e-12);
    }

    #[test]
    fn grid_matches_dense_symmetric_oracle() {
        for (w, h, seed) in [(1usize, 1usize, 9u64), (2, 1, 10), (7, 1, 11), (8, 8, 12), (16, 16, 13)]
        {
            let b = grid_batch(w, h, 4, 3, seed);
            let fast = psla_symmetric_grid(&b, &HeadConfig::default(), (w, h)).unwrap();
            let dense =
                dense_psla_reference(&b, &HeadConfig::default(), DenseMode::Symmetric).unwrap();
            assert!(
                max_abs_diff(&fast, &dense) < 1e-9,
                "{w}x{h}: {}",
                max_abs_diff(&fast, &dense)
            );
        }
    }

    #[test]
    fn grid_with_gates_matches_oracle() {
        let d = 4;
        let mut head = HeadConfig {
            gate_q: Some(crate::attention::GateParams::near_closed(d, 3)),
            gate_k: Some(crate::attention::GateParams::near_closed(d, 3)),
            ..HeadConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        if let Some(g) = head.gate_q.as_mut() {
            g.w1.mapv_inplace(|_| 0.4 * rng.sample::<f64, _>(StandardNormal));
            g.w2.mapv_inplace(|_| 0.4 * rng.sample::<f64, _>(StandardNormal));
        }
        let b = grid_batch(6, 5, d, 4, 14);
        let fast = psla_symmetric_grid(&b, &head, (6, 5)).unwrap();
        let dense = dense_psla_reference(&b, &head, DenseMode::Symmetric).unwrap();
        assert!(max_abs_diff(&fast, &dense) < 1e-9);
    }

    #[test]
    fn row_grid_equals_1d_scan() {
        let l = 24;
        let b = grid_batch(l, 1, 3, 2, 15);
        let grid = psla_symmetric_grid(&b, &HeadConfig::default(), (l, 1)).unwrap();
        let line = psla_symmetric_1d(&b, &HeadConfig::default()).unwrap();
        assert!(max_abs_diff(&grid, &line) < 1e-12);
    }

    #[test]
    fn grid_alpha_zero_equals_linear() {
        let decay = DecayParams::new(-40.0, -40.0, 0.0, 0.6).unwrap();
        let head = HeadConfig::plain(decay);
        let b = grid_batch(5, 4, 3, 3, 16);
        let fast = psla_symmetric_grid(&b, &head, (5, 4)).unwrap();
        let lin = crate::attention::linear_attention(&b, &FeatureMapConfig::default());
        assert!(max_abs_diff(&fast, &lin) < 1e-12);
    }

    #[test]
    fn grid_position_mismatch_rejected() {
        let b = grid_batch(4, 4, 2, 2, 17);
        assert!(matches!(
            psla_symmetric_grid(&b, &HeadConfig::default(), (8, 2)),
            Err(AttentionError::GridMismatch { .. })
        ));
        // shuffled positions on the right grid shape
        let mut pos = grid_centers(4, 4);
        pos.swap(0, 5);
        let bad = AttentionBatch::new(b.q().clone(), b.k().clone(), b.v().clone(), pos).unwrap();
        assert!(psla_symmetric_grid(&bad, &HeadConfig::default(), (4, 4)).is_err());
    }
}
