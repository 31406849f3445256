//! Verification suites behind `verify {attn,grad,pdn,pbrs,all}` and the
//! acceptance tests: oracle-equivalence sweeps, gradient checks, Kron and
//! decay-law properties, and the shaping identities. Each check returns a
//! named pass/fail with a one-line detail.

use crate::attention::{
    dense_linear_reference, dense_psla_reference, linear_attention, psla_rank1,
    psla_symmetric_1d, psla_symmetric_grid, AttentionBatch, DenseMode, FeatureMapConfig,
    GateParams, HeadConfig, PreMapNorm,
};
use crate::autodiff::psla_grad_check;
use crate::dpp::{DppInstance, Grid, Trajectory};
use crate::kernel::{grid_centers, Coord2D, DecayParams};
use crate::pdn::{
    fit_decay, invert, kron_reduce, CapacitorModel, ComplexMatrix, FrequencyBand, MeshPdnSpec,
};
use crate::shaping::{
    beta_at, conn_hpwl_gap, shape_reward, shaped_q_check, telescoping_residual, BetaSchedule, Net,
    PotentialKind, PotentialSpec,
};
use ndarray::Array2;
use num_complex::Complex64;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// One named verification outcome.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn bound(name: &str, value: f64, limit: f64) -> Self {
        Check {
            name: name.to_string(),
            passed: value <= limit,
            detail: format!("max {value:.3e} (limit {limit:.1e})"),
        }
    }

    fn flag(name: &str, passed: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

pub fn format_table(checks: &[Check]) -> String {
    let mut out = String::new();
    let width = checks.iter().map(|c| c.name.len()).max().unwrap_or(10) + 2;
    for c in checks {
        out.push_str(&format!(
            "{:<width$} {}  {}\n",
            c.name,
            if c.passed { "pass" } else { "FAIL" },
            c.detail,
        ));
    }
    out
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.sample::<f64, _>(StandardNormal))
}

fn random_positions(rng: &mut ChaCha8Rng, l: usize) -> Vec<Coord2D> {
    (0..l)
        .map(|_| Coord2D::new(rng.random(), rng.random()).unwrap())
        .collect()
}

fn random_head(rng: &mut ChaCha8Rng) -> HeadConfig {
    let raw_x = 4.0 * rng.random::<f64>() - 2.0;
    let raw_y = 4.0 * rng.random::<f64>() - 2.0;
    HeadConfig::plain(DecayParams::new(raw_x, raw_y, 1.2, 1.8).unwrap())
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

const ORACLE_LENGTHS: [usize; 5] = [1, 2, 7, 64, 256];
const ORACLE_DIMS: [usize; 3] = [1, 4, 8];
const ORACLE_CASES: usize = 100;

fn grid_shape(l: usize) -> (usize, usize) {
    match l {
        64 => (8, 8),
        256 => (16, 16),
        other => (other, 1),
    }
}

/// Oracle equivalence for the four fast paths plus the alpha -> 0
/// reduction.
pub fn attn_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x05ee_da77);
    let mut worst = [0.0f64; 4]; // rank1, 1d, grid, linear

    for &l in &ORACLE_LENGTHS {
        for &d in &ORACLE_DIMS {
            for _ in 0..ORACLE_CASES {
                let head = random_head(&mut rng);
                let q = rand_mat(&mut rng, l, d);
                let k = rand_mat(&mut rng, l, d);
                let v = rand_mat(&mut rng, l, d);

                // rank-1 directional vs dense directional
                let batch =
                    AttentionBatch::new(q.clone(), k.clone(), v.clone(), random_positions(&mut rng, l))
                        .unwrap();
                let fast = psla_rank1(&batch, &head).unwrap();
                let oracle = dense_psla_reference(&batch, &head, DenseMode::Directional).unwrap();
                worst[0] = worst[0].max(max_abs_diff(&fast, &oracle));

                // 1d scan on sorted same-y positions vs dense symmetric
                let mut xs: Vec<f64> = (0..l).map(|_| rng.random()).collect();
                xs.sort_by(f64::total_cmp);
                let line: Vec<Coord2D> = xs
                    .into_iter()
                    .map(|x| Coord2D::new(x, 0.5).unwrap())
                    .collect();
                let line_batch =
                    AttentionBatch::new(q.clone(), k.clone(), v.clone(), line).unwrap();
                let fast = psla_symmetric_1d(&line_batch, &head).unwrap();
                let oracle =
                    dense_psla_reference(&line_batch, &head, DenseMode::Symmetric).unwrap();
                worst[1] = worst[1].max(max_abs_diff(&fast, &oracle));

                // grid scan vs dense symmetric
                let (w, h) = grid_shape(l);
                let grid_batch =
                    AttentionBatch::new(q.clone(), k.clone(), v.clone(), grid_centers(w, h))
                        .unwrap();
                let fast = psla_symmetric_grid(&grid_batch, &head, (w, h)).unwrap();
                let oracle =
                    dense_psla_reference(&grid_batch, &head, DenseMode::Symmetric).unwrap();
                worst[2] = worst[2].max(max_abs_diff(&fast, &oracle));

                // plain linear vs dense unbiased
                let fast = linear_attention(&batch, &head.feature_map);
                let oracle = dense_linear_reference(&batch, &head.feature_map);
                worst[3] = worst[3].max(max_abs_diff(&fast, &oracle));
            }
        }
    }

    let mut checks = vec![
        Check::bound("attn/psla_rank1_vs_dense_directional", worst[0], 1e-9),
        Check::bound("attn/symmetric_1d_vs_dense_symmetric", worst[1], 1e-9),
        Check::bound("attn/symmetric_grid_vs_dense_symmetric", worst[2], 1e-9),
        Check::bound("attn/linear_vs_dense_unbiased", worst[3], 1e-9),
    ];

    // alpha -> 0 collapse onto plain linear attention
    let mut worst_reduction = 0.0f64;
    let zero_decay = DecayParams::new(-40.0, -40.0, 0.0, 0.6).unwrap();
    let head = HeadConfig::plain(zero_decay);
    for _ in 0..50 {
        let l = 1 + rng.random_range(0..32);
        let d = 1 + rng.random_range(0..8);
        let batch = AttentionBatch::new(
            rand_mat(&mut rng, l, d),
            rand_mat(&mut rng, l, d),
            rand_mat(&mut rng, l, d),
            random_positions(&mut rng, l),
        )
        .unwrap();
        let a = psla_rank1(&batch, &head).unwrap();
        let b = linear_attention(&batch, &FeatureMapConfig::default());
        worst_reduction = worst_reduction.max(max_abs_diff(&a, &b));
    }
    checks.push(Check::bound(
        "attn/alpha_zero_reduces_to_linear",
        worst_reduction,
        1e-12,
    ));
    checks
}

fn full_head(rng: &mut ChaCha8Rng, d: usize) -> HeadConfig {
    let gate = |rng: &mut ChaCha8Rng| {
        let mut g = GateParams::near_closed(d, (d / 2).max(2));
        g.w1.mapv_inplace(|_| 0.4 * rng.sample::<f64, _>(StandardNormal));
        g.b1.mapv_inplace(|_| 0.2 * rng.sample::<f64, _>(StandardNormal));
        g.w2.mapv_inplace(|_| 0.4 * rng.sample::<f64, _>(StandardNormal));
        g
    };
    let gate_q = gate(rng);
    let gate_k = gate(rng);
    let mut norm = PreMapNorm::identity(d);
    norm.gamma_q
        .mapv_inplace(|_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
    norm.beta_q
        .mapv_inplace(|_| 0.2 * rng.sample::<f64, _>(StandardNormal));
    norm.gamma_k
        .mapv_inplace(|_| 1.0 + 0.3 * rng.sample::<f64, _>(StandardNormal));
    norm.beta_k
        .mapv_inplace(|_| 0.2 * rng.sample::<f64, _>(StandardNormal));
    HeadConfig {
        decay: DecayParams::new(0.4, -0.3, 1.2, 1.8).unwrap(),
        feature_map: FeatureMapConfig::default(),
        gate_q: Some(gate_q),
        gate_k: Some(gate_k),
        pre_norm: Some(norm),
    }
}

/// Full PSLA head gradients vs central finite differences
/// (h = 1e-5, tolerance 1e-4) across sizes and feature toggles.
pub fn grad_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9add);
    let mut checks = Vec::new();
    for &l in &[2usize, 5, 16] {
        for &d in &[2usize, 8] {
            let head = full_head(&mut rng, d);
            let batch = AttentionBatch::new(
                rand_mat(&mut rng, l, d),
                rand_mat(&mut rng, l, d),
                rand_mat(&mut rng, l, 3),
                random_positions(&mut rng, l),
            )
            .unwrap();
            let report = psla_grad_check(&batch, &head, 1e-5, 1e-4).unwrap();
            checks.push(grad_check_entry(&format!("grad/full_head_L{l}_d{d}"), &report));
        }
    }
    // feature toggles at one size
    let combos: [(&str, bool, bool); 3] = [
        ("plain", false, false),
        ("gate_only", true, false),
        ("norm_only", false, true),
    ];
    for (name, with_gate, with_norm) in combos {
        let d = 4;
        let mut head = full_head(&mut rng, d);
        if !with_gate {
            head.gate_q = None;
            head.gate_k = None;
        }
        if !with_norm {
            head.pre_norm = None;
        }
        let batch = AttentionBatch::new(
            rand_mat(&mut rng, 5, d),
            rand_mat(&mut rng, 5, d),
            rand_mat(&mut rng, 5, 2),
            random_positions(&mut rng, 5),
        )
        .unwrap();
        let report = psla_grad_check(&batch, &head, 1e-5, 1e-4).unwrap();
        checks.push(grad_check_entry(&format!("grad/{name}_L5_d4"), &report));
    }
    checks
}

/// One fully populated head's gradient report, for per-parameter display.
pub fn representative_grad_report() -> Result<crate::autodiff::GradReport, crate::autodiff::AutodiffError>
{
    let mut rng = ChaCha8Rng::seed_from_u64(0x6ead);
    let d = 6;
    let head = full_head(&mut rng, d);
    let batch = AttentionBatch::new(
        rand_mat(&mut rng, 8, d),
        rand_mat(&mut rng, 8, d),
        rand_mat(&mut rng, 8, 4),
        random_positions(&mut rng, 8),
    )
    .expect("consistent batch");
    psla_grad_check(&batch, &head, 1e-5, 1e-4)
}

fn grad_check_entry(name: &str, report: &crate::autodiff::GradReport) -> Check {
    let worst = report
        .rows
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err));
    Check {
        name: name.to_string(),
        passed: report.passed(),
        detail: match worst {
            Some(row) => format!(
                "worst param '{}' rel err {:.3e} (tol 1.0e-4), {} params",
                row.name,
                row.max_rel_err,
                report.rows.len()
            ),
            None => "empty report".into(),
        },
    }
}

fn random_symmetric_system(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    let mut y = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for i in 0..n {
        for j in (i + 1)..n {
            let off = Complex64::new(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
            y[[i, j]] = off;
            y[[j, i]] = off;
        }
    }
    for i in 0..n {
        let mass: f64 = (0..n).filter(|&j| j != i).map(|j| y[[i, j]].norm()).sum();
        y[[i, i]] = Complex64::new(mass + 1.0 + rng.random::<f64>(), rng.random::<f64>());
    }
    y
}

/// Kron reduction equivalences and the empirical decay law.
pub fn pdn_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd9);
    let mut checks = Vec::new();

    // Kron vs probe block of the full inverse, up to 100 nodes
    let mut worst = 0.0f64;
    for &n in &[4usize, 20, 50, 100] {
        let y = random_symmetric_system(&mut rng, n);
        let probes: Vec<usize> = vec![0, n / 2, n - 1];
        let z = kron_reduce(&y, &probes).unwrap();
        let full = invert(&y).unwrap();
        for (i, &p) in probes.iter().enumerate() {
            for (j, &q) in probes.iter().enumerate() {
                let rel = (z[[i, j]] - full[[p, q]]).norm() / full[[p, q]].norm().max(1e-30);
                worst = worst.max(rel);
            }
        }
    }
    checks.push(Check::bound("pdn/kron_vs_full_inverse", worst, 1e-10));

    // analytic 2-node closed form
    let g = Complex64::new(0.7, 0.4);
    let y0 = Complex64::new(1.1, 0.2);
    let y1 = Complex64::new(0.5, -0.3);
    let y = ndarray::array![[y0 + g, -g], [-g, y1 + g]];
    let z = kron_reduce(&y, &[0]).unwrap();
    let expect = 1.0 / (y0 + g - g * g / (y1 + g));
    checks.push(Check::bound(
        "pdn/two_node_closed_form",
        (z[[0, 0]] - expect).norm() / expect.norm(),
        1e-12,
    ));

    // decay law on the uniform 8x8 mesh at the band geometric mean
    let spec = MeshPdnSpec::uniform(8, 8);
    let f = FrequencyBand::default().geometric_mean();
    let fit = fit_decay(&spec, f, 27).unwrap();
    checks.push(Check::flag(
        "pdn/decay_law_8x8",
        fit.slope < 0.0 && fit.r_squared >= 0.9,
        format!("slope {:.4}, r2 {:.4}", fit.slope, fit.r_squared),
    ));
    checks
}

/// Telescoping, the Q-identity under terminal zeroing, the Taylor bound,
/// and the beta schedule.
pub fn pbrs_suite() -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xbede);
    let mut checks = Vec::new();

    // telescoping over 1000 random trajectories per gamma
    let mut worst_residual = 0.0f64;
    let mut worst_collapse = 0.0f64;
    for gamma in [0.9, 0.99, 1.0] {
        for _ in 0..1000 {
            let t_len = 1 + rng.random_range(0..30);
            let traj = Trajectory {
                states: (0..=t_len).map(|i| (0..i).collect()).collect(),
                actions: (0..t_len).collect(),
                rewards: vec![0.0; t_len],
                shaped: None,
                terminal_reward: 0.0,
            };
            let phis: Vec<f64> = (0..=t_len).map(|_| 4.0 * rng.random::<f64>() - 2.0).collect();
            let scale = phis.iter().map(|p| p.abs()).fold(1.0, f64::max);
            let r = telescoping_residual(&traj, &phis, gamma).unwrap();
            worst_residual = worst_residual.max(r.abs() / scale);
            if gamma == 1.0 {
                let beta = 0.7;
                let total: f64 = (0..t_len)
                    .map(|t| shape_reward(0.0, phis[t], phis[t + 1], 1.0, beta))
                    .sum();
                let endpoints = beta * (phis[t_len] - phis[0]);
                worst_collapse = worst_collapse.max((total - endpoints).abs() / scale);
            }
        }
    }
    checks.push(Check::bound("pbrs/telescoping_residual", worst_residual, 1e-12));
    checks.push(Check::bound("pbrs/gamma1_collapse", worst_collapse, 1e-12));

    // exact Q-identity with the terminal-zeroed potential
    let spec = PotentialSpec {
        terminal_zeroed: true,
        ..PotentialSpec::dpp_default()
    };
    for (w, h, probe) in [(3usize, 3usize, 4usize), (4, 4, 5)] {
        let inst = DppInstance {
            grid: Grid { width: w, height: h },
            probe,
            keep_out: vec![],
            k_caps: 2,
            mesh: MeshPdnSpec::uniform(w, h),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand::default(),
            seed: 0,
        };
        for gamma in [0.9, 1.0] {
            let report = shaped_q_check(&inst, &spec, gamma).unwrap();
            checks.push(Check::flag(
                &format!("pbrs/q_identity_{w}x{h}_gamma{gamma}"),
                report.max_deviation <= 1e-10 && report.greedy_match,
                format!(
                    "max dev {:.3e}, greedy match {}, {} states",
                    report.max_deviation, report.greedy_match, report.states_checked
                ),
            ));
        }
    }

    // Taylor bound on 100 random 2-pin nets with alpha * d <= 1
    let conn_spec = |alpha: f64| PotentialSpec {
        kind: PotentialKind::Connectivity,
        alpha,
        lambda: 0.0,
        nets: Vec::new(),
        terminal_zeroed: false,
    };
    let mut taylor_ok = true;
    let mut worst_margin = f64::NEG_INFINITY;
    for _ in 0..100 {
        let alpha = 0.2 + 1.3 * rng.random::<f64>();
        let d_total = rng.random::<f64>() * (1.0 / alpha).min(2.0);
        let dx = d_total * rng.random::<f64>();
        let dy = (d_total - dx).clamp(0.0, 1.0);
        let nets = vec![Net {
            weight: 0.1 + rng.random::<f64>(),
            members: vec![
                Coord2D::new(0.0, 0.0).unwrap(),
                Coord2D::new(dx.min(1.0), dy).unwrap(),
            ],
        }];
        let (gap, bound) = conn_hpwl_gap(&nets, &conn_spec(alpha)).unwrap();
        if gap > bound {
            taylor_ok = false;
        }
        worst_margin = worst_margin.max(gap - bound);
    }
    let zero_nets = vec![Net {
        weight: 1.0,
        members: vec![Coord2D::new(0.3, 0.3).unwrap(), Coord2D::new(0.3, 0.3).unwrap()],
    }];
    let (zgap, zbound) = conn_hpwl_gap(&zero_nets, &conn_spec(0.8)).unwrap();
    checks.push(Check::flag(
        "pbrs/taylor_gap_bound",
        taylor_ok && zgap == 0.0 && zbound == 0.0,
        format!("worst gap-bound margin {worst_margin:.3e}, zero-distance gap {zgap}"),
    ));

    // beta schedule: exact endpoints, mean midpoint, monotone
    let sched = BetaSchedule::new(1.0, 0.0, 200).unwrap();
    let endpoint_ok = beta_at(&sched, 0) == 1.0 && beta_at(&sched, 200) == 0.0;
    let midpoint_err = (beta_at(&sched, 100) - 0.5).abs();
    let mut monotone = true;
    let mut last = f64::INFINITY;
    for t in 0..=400 {
        let b = beta_at(&sched, t);
        if b > last + 1e-15 {
            monotone = false;
        }
        last = b;
    }
    checks.push(Check::flag(
        "pbrs/beta_schedule",
        endpoint_ok && midpoint_err <= 1e-12 && monotone,
        format!("endpoints exact {endpoint_ok}, midpoint err {midpoint_err:.3e}, monotone {monotone}"),
    ));
    checks
}

/// Everything except the wall-clock benchmark and RL-training criteria.
pub fn all_suites() -> Vec<Check> {
    let mut checks = attn_suite();
    checks.extend(grad_suite());
    checks.extend(pdn_suite());
    checks.extend(pbrs_suite());
    checks
}
