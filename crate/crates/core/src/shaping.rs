//! Potential-based reward shaping.
//!
//! The shaped reward is `r' = r + beta * (gamma * Phi(s') - Phi(s))`.
//! Summed over a trajectory the shaping telescopes to
//! `gamma^T Phi(s_T) - Phi(s_0)`, so with a terminal-zeroed potential and
//! constant beta the optimal policy is unchanged; [`shaped_q_check`] runs
//! that argument as exhaustive dynamic programming on small instances and
//! reports the worst deviation from the `Q' = Q - Phi(s)` identity.
//!
//! Potentials share the placement kernel `exp(-alpha * d_M)`:
//! [`phi_dpp`] scores probe proximity minus a clustering penalty,
//! [`phi_connectivity`] scores placed net pairs, and [`phi_hpwl`] is the
//! negative weighted half-perimeter wirelength it approximates to first
//! order ([`conn_hpwl_gap`] bounds the gap).

use crate::dpp::{DppError, DppInstance, PlacementState, Trajectory};
use crate::kernel::{manhattan_distance, Coord2D};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ShapingError {
    #[error("potential kind mismatch: expected {expected:?}, got {got:?}")]
    WrongKind {
        expected: PotentialKind,
        got: PotentialKind,
    },
    #[error("phi values ({phis}) must cover every state ({states})")]
    LengthMismatch { phis: usize, states: usize },
    #[error("net with {0} placed members; the gap bound applies to 2-pin nets only")]
    NonTwoPinNet(usize),
    #[error("state space too large: {states} states exceeds the {guard} guard")]
    StateGuard { states: u128, guard: u128 },
    #[error("invalid beta schedule: {0}")]
    InvalidSchedule(String),
    #[error(transparent)]
    Dpp(#[from] DppError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Dpp,
    Connectivity,
    Hpwl,
}

/// One net: a weight and the coordinates of its currently placed members.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Net {
    pub weight: f64,
    pub members: Vec<Coord2D>,
}

/// Shaping potential definition.
///
/// `lambda` weighs the dispersion penalty (dpp kind only); `nets` feed the
/// connectivity and hpwl kinds; `terminal_zeroed` forces `Phi = 0` at
/// terminal states, the convention under which the policy-invariance
/// identity is exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: PotentialKind,
    pub alpha: f64,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default)]
    pub nets: Vec<Net>,
    #[serde(default)]
    pub terminal_zeroed: bool,
}

impl PotentialSpec {
    /// The placement potential with its default parameters
    /// (alpha 1.5, lambda 0.5).
    pub fn dpp_default() -> Self {
        Self {
            kind: PotentialKind::Dpp,
            alpha: 1.5,
            lambda: 0.5,
            nets: Vec::new(),
            terminal_zeroed: false,
        }
    }

    fn expect_kind(&self, expected: PotentialKind) -> Result<(), ShapingError> {
        if self.kind != expected {
            return Err(ShapingError::WrongKind {
                expected,
                got: self.kind,
            });
        }
        Ok(())
    }
}

/// Cosine annealing weight for the shaping term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BetaSchedule {
    pub beta_init: f64,
    pub beta_min: f64,
    pub t_anneal: usize,
}

impl BetaSchedule {
    pub fn new(beta_init: f64, beta_min: f64, t_anneal: usize) -> Result<Self, ShapingError> {
        if !(beta_init.is_finite() && beta_min.is_finite() && beta_init >= beta_min && beta_min >= 0.0)
        {
            return Err(ShapingError::InvalidSchedule(format!(
                "need beta_init >= beta_min >= 0, got ({beta_init}, {beta_min})"
            )));
        }
        if t_anneal == 0 {
            return Err(ShapingError::InvalidSchedule("t_anneal must be >= 1".into()));
        }
        Ok(Self {
            beta_init,
            beta_min,
            t_anneal,
        })
    }
}

/// `beta(t) = beta_min + (beta_init - beta_min) (1 + cos(pi t / T)) / 2`,
/// clamped to `beta_min` past the annealing horizon. Monotone
/// non-increasing; endpoints exact.
pub fn beta_at(sched: &BetaSchedule, t: usize) -> f64 {
    if t >= sched.t_anneal {
        return sched.beta_min;
    }
    let phase = std::f64::consts::PI * t as f64 / sched.t_anneal as f64;
    sched.beta_min + (sched.beta_init - sched.beta_min) * (1.0 + phase.cos()) / 2.0
}

/// `r' = r + beta (gamma Phi(s') - Phi(s))`. Linear in beta; the identity
/// transform at beta = 0.
pub fn shape_reward(r: f64, phi_s: f64, phi_s_next: f64, gamma: f64, beta: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma <= 1.0);
    r + beta * (gamma * phi_s_next - phi_s)
}

/// Placement potential over explicit coordinates:
/// `sum_i exp(-alpha d(i, probe)) - lambda sum_{i<j} exp(-alpha d(i, j))`.
pub fn phi_dpp_coords(placed: &[Coord2D], probe: Coord2D, alpha: f64, lambda: f64) -> f64 {
    let mut attract = 0.0;
    for &p in placed {
        attract += (-alpha * manhattan_distance(p, probe)).exp();
    }
    let mut disperse = 0.0;
    for (i, &a) in placed.iter().enumerate() {
        for &b in placed.iter().skip(i + 1) {
            disperse += (-alpha * manhattan_distance(a, b)).exp();
        }
    }
    attract - lambda * disperse
}

/// Placement potential of a state, using the instance's normalized cell
/// centers. `Phi(empty) = 0`.
pub fn phi_dpp(state: &PlacementState<'_>, spec: &PotentialSpec) -> Result<f64, ShapingError> {
    spec.expect_kind(PotentialKind::Dpp)?;
    let inst = state.instance();
    let placed: Vec<Coord2D> = state.placed().iter().map(|&c| inst.cell_coord(c)).collect();
    Ok(phi_dpp_coords(&placed, inst.probe_coord(), spec.alpha, spec.lambda))
}

/// Incremental potential update: `Phi(s + {a}) - Phi(s)` in O(|placed|),
/// via the new cell's probe term minus lambda times its pairwise terms.
pub fn delta_phi(
    state: &PlacementState<'_>,
    action: usize,
    spec: &PotentialSpec,
) -> Result<f64, ShapingError> {
    spec.expect_kind(PotentialKind::Dpp)?;
    let legal = state.legal_actions()?;
    if !legal.contains(&action) {
        return Err(ShapingError::Dpp(DppError::IllegalAction(action)));
    }
    let inst = state.instance();
    let new = inst.cell_coord(action);
    let mut delta = (-spec.alpha * manhattan_distance(new, inst.probe_coord())).exp();
    for &c in state.placed() {
        delta -=
            spec.lambda * (-spec.alpha * manhattan_distance(new, inst.cell_coord(c))).exp();
    }
    Ok(delta)
}

/// Connectivity potential: `sum_e w_e sum_{i<j placed in e} exp(-alpha d_M)`.
/// Zero when no net has two placed members.
pub fn phi_connectivity(nets: &[Net], spec: &PotentialSpec) -> Result<f64, ShapingError> {
    spec.expect_kind(PotentialKind::Connectivity)?;
    let mut total = 0.0;
    for net in nets {
        let mut pairs = 0.0;
        for (i, &a) in net.members.iter().enumerate() {
            for &b in net.members.iter().skip(i + 1) {
                pairs += (-spec.alpha * manhattan_distance(a, b)).exp();
            }
        }
        total += net.weight * pairs;
    }
    Ok(total)
}

fn hpwl(members: &[Coord2D]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let mut min_x = f64::INFINITY;
    let mut max_x = f64::NEG_INFINITY;
    let mut min_y = f64::INFINITY;
    let mut max_y = f64::NEG_INFINITY;
    for m in members {
        min_x = min_x.min(m.x());
        max_x = max_x.max(m.x());
        min_y = min_y.min(m.y());
        max_y = max_y.max(m.y());
    }
    (max_x - min_x) + (max_y - min_y)
}

/// Negative weighted half-perimeter wirelength of each net's placed
/// bounding box. Always <= 0; a 2-pin net contributes exactly `-w * d_M`.
pub fn phi_hpwl(nets: &[Net], spec: &PotentialSpec) -> Result<f64, ShapingError> {
    spec.expect_kind(PotentialKind::Hpwl)?;
    Ok(-nets.iter().map(|n| n.weight * hpwl(&n.members)).sum::<f64>())
}

/// First-order agreement between the connectivity potential and negative
/// HPWL on 2-pin nets.
///
/// Returns `(gap, bound)` where
/// `gap = |Phi_conn - sum w_e + alpha sum w_e HPWL_e|` and
/// `bound = sum_e w_e alpha^2 d_e^2 / 2` (the Taylor remainder of
/// `exp(-alpha d)` truncated after the linear term). `gap <= bound` always.
pub fn conn_hpwl_gap(nets: &[Net], spec: &PotentialSpec) -> Result<(f64, f64), ShapingError> {
    for net in nets {
        if net.members.len() != 2 {
            return Err(ShapingError::NonTwoPinNet(net.members.len()));
        }
    }
    let mut conn = 0.0;
    let mut weight_sum = 0.0;
    let mut weighted_hpwl = 0.0;
    let mut bound = 0.0;
    for net in nets {
        let d = manhattan_distance(net.members[0], net.members[1]);
        conn += net.weight * (-spec.alpha * d).exp();
        weight_sum += net.weight;
        weighted_hpwl += net.weight * d;
        bound += net.weight * spec.alpha * spec.alpha * d * d / 2.0;
    }
    let gap = (conn - weight_sum + spec.alpha * weighted_hpwl).abs();
    Ok((gap, bound))
}

/// `sum_t gamma^t (gamma Phi(s_{t+1}) - Phi(s_t)) - (gamma^T Phi(s_T) - Phi(s_0))`.
/// Zero up to rounding for any potential values: the shaping sum telescopes
/// to its endpoints.
pub fn telescoping_residual(
    traj: &Trajectory,
    phis: &[f64],
    gamma: f64,
) -> Result<f64, ShapingError> {
    let states = traj.states.len();
    if phis.len() != states {
        return Err(ShapingError::LengthMismatch {
            phis: phis.len(),
            states,
        });
    }
    let t_final = states - 1;
    let mut sum = 0.0;
    let mut gamma_t = 1.0;
    for t in 0..t_final {
        sum += gamma_t * (gamma * phis[t + 1] - phis[t]);
        gamma_t *= gamma;
    }
    Ok(sum - (gamma_t * phis[t_final] - phis[0]))
}

/// Result of the exhaustive policy-invariance check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QCheckReport {
    pub max_deviation: f64,
    pub greedy_match: bool,
    pub states_checked: usize,
}

pub const STATE_GUARD: u128 = 100_000;

fn count_states(free: usize, k: usize) -> u128 {
    let mut total: u128 = 0;
    let mut level: u128 = 1;
    for i in 0..=k {
        total = total.saturating_add(level);
        level = level.saturating_mul((free - i) as u128) / (i + 1) as u128;
    }
    total
}

/// Exhaustive backward dynamic programming over the full placement DAG,
/// comparing Q under the original reward with Q' under the shaped reward
/// (constant beta = 1). With a terminal-zeroed potential the identity
/// `Q'(s, a) = Q(s, a) - Phi(s)` holds exactly and greedy argmax sets agree
/// at every state under the deterministic lowest-cell tie-break.
pub fn shaped_q_check(
    inst: &DppInstance,
    spec: &PotentialSpec,
    gamma: f64,
) -> Result<QCheckReport, ShapingError> {
    spec.expect_kind(PotentialKind::Dpp)?;
    let spec = spec.clone();
    let probe = inst.probe_coord();
    let phi = move |placed: &[usize], terminal: bool| -> f64 {
        if terminal && spec.terminal_zeroed {
            return 0.0;
        }
        let coords: Vec<Coord2D> = placed.iter().map(|&c| inst.cell_coord(c)).collect();
        phi_dpp_coords(&coords, probe, spec.alpha, spec.lambda)
    };
    shaped_q_check_with(inst, gamma, phi)
}

/// Same check with an arbitrary potential function (placed set, is_terminal).
pub fn shaped_q_check_with<F>(
    inst: &DppInstance,
    gamma: f64,
    phi: F,
) -> Result<QCheckReport, ShapingError>
where
    F: Fn(&[usize], bool) -> f64,
{
    inst.validate()?;
    let free = inst.free_cells();
    let k = inst.k_caps;
    let states = count_states(free.len(), k);
    if states > STATE_GUARD {
        return Err(ShapingError::StateGuard {
            states,
            guard: STATE_GUARD,
        });
    }

    struct Dp<'i, F> {
        inst: &'i DppInstance,
        free: Vec<usize>,
        phi: F,
        gamma: f64,
        memo: HashMap<Vec<usize>, (f64, f64)>,
        max_deviation: f64,
        greedy_match: bool,
        states_checked: usize,
    }

    impl<F: Fn(&[usize], bool) -> f64> Dp<'_, F> {
        /// Returns (V, V') of a sorted placed set.
        fn values(&mut self, placed: &[usize]) -> Result<(f64, f64), ShapingError> {
            if let Some(&v) = self.memo.get(placed) {
                return Ok(v);
            }
            self.states_checked += 1;
            let terminal = placed.len() == self.inst.k_caps;
            if terminal {
                self.memo.insert(placed.to_vec(), (0.0, 0.0));
                return Ok((0.0, 0.0));
            }
            let phi_s = (self.phi)(placed, false);
            let mut best_q = f64::NEG_INFINITY;
            let mut best_q_action = usize::MAX;
            let mut best_qp = f64::NEG_INFINITY;
            let mut best_qp_action = usize::MAX;
            let free = self.free.clone();
            for &a in &free {
                if placed.binary_search(&a).is_ok() {
                    continue;
                }
                let mut next: Vec<usize> = placed.to_vec();
                let pos = next.binary_search(&a).unwrap_err();
                next.insert(pos, a);
                let next_terminal = next.len() == self.inst.k_caps;
                let r = if next_terminal {
                    self.inst.reward_for(&next)?
                } else {
                    0.0
                };
                let (v_next, vp_next) = self.values(&next)?;
                let q = r + self.gamma * v_next;
                let phi_next = (self.phi)(&next, next_terminal);
                let qp = r + (self.gamma * phi_next - phi_s) + self.gamma * vp_next;
                let dev = (qp - (q - phi_s)).abs();
                self.max_deviation = self.max_deviation.max(dev);
                if q > best_q {
                    best_q = q;
                    best_q_action = a;
                }
                if qp > best_qp {
                    best_qp = qp;
                    best_qp_action = a;
                }
            }
            if best_q_action != best_qp_action {
                self.greedy_match = false;
            }
            self.memo.insert(placed.to_vec(), (best_q, best_qp));
            Ok((best_q, best_qp))
        }
    }

    let mut dp = Dp {
        inst,
        free,
        phi,
        gamma,
        memo: HashMap::new(),
        max_deviation: 0.0,
        greedy_match: true,
        states_checked: 0,
    };
    dp.values(&[])?;
    Ok(QCheckReport {
        max_deviation: dp.max_deviation,
        greedy_match: dp.greedy_match,
        states_checked: dp.states_checked,
    })
}
