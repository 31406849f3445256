//! REINFORCE on the placement MDP, with optional potential-based shaping.
//!
//! The policy is tabular: one logit per grid cell, renormalized over the
//! legal cells at every step. Gradients of the masked softmax
//! log-probability are analytic, so no tape is involved. Everything is
//! driven by explicit seeds; a full [`train`] run is reproducible
//! bit-for-bit (wall-clock column aside) because rollout RNG streams are
//! split deterministically from the master seed and updates are serialized.
//!
//! Learning curves always report the ORIGINAL (unshaped) return; shaped
//! returns are logged as a diagnostic only.

use crate::dpp::{DppError, DppInstance, PlacementState, Trajectory};
use crate::shaping::{beta_at, delta_phi, shape_reward, BetaSchedule, PotentialSpec, ShapingError};
use ndarray::Array1;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RlError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Dpp(#[from] DppError),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
}

/// Tabular policy: a logit per cell, masked by legality at sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub logits: Array1<f64>,
}

impl PolicyParams {
    pub fn uniform(cells: usize) -> Self {
        Self {
            logits: Array1::zeros(cells),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    None,
    RunningMean,
}

/// Shaping configuration for training: the potential plus its annealing
/// schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapingSetup {
    pub spec: PotentialSpec,
    pub schedule: BetaSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReinforceConfig {
    pub episodes: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub gamma: f64,
    pub baseline: BaselineKind,
    pub shaping: Option<ShapingSetup>,
    pub seed: u64,
    pub eval_interval: usize,
    pub eval_rollouts: usize,
}

impl ReinforceConfig {
    pub fn defaults_with_seed(seed: u64) -> Self {
        Self {
            episodes: 200,
            batch_size: 16,
            learning_rate: 0.3,
            gamma: 1.0,
            baseline: BaselineKind::RunningMean,
            shaping: None,
            seed,
            eval_interval: 10,
            eval_rollouts: 64,
        }
    }

    fn validate(&self) -> Result<(), RlError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(RlError::InvalidConfig("learning_rate must be > 0".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(RlError::InvalidConfig("gamma must lie in (0, 1]".into()));
        }
        if self.batch_size == 0 || self.eval_interval == 0 || self.eval_rollouts == 0 {
            return Err(RlError::InvalidConfig(
                "batch_size, eval_interval and eval_rollouts must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One evaluation checkpoint. `mean_return` is the unshaped objective;
/// `mean_shaped_return` is diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub episode: usize,
    pub mean_return: f64,
    pub mean_shaped_return: f64,
    pub beta: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn final_return(&self) -> f64 {
        self.rows.last().map(|r| r.mean_return).unwrap_or(0.0)
    }

    /// Trapezoidal area under the (episode, mean_return) curve.
    pub fn area_under_curve(&self) -> f64 {
        let mut auc = 0.0;
        for w in self.rows.windows(2) {
            let de = (w[1].episode - w[0].episode) as f64;
            auc += 0.5 * (w[0].mean_return + w[1].mean_return) * de;
        }
        auc
    }
}

/// Terminal rewards are pure functions of the placed set, so repeated
/// evaluations of the same set hit this cache.
#[derive(Default)]
pub struct RewardCache {
    map: HashMap<Vec<usize>, f64>,
}

impl RewardCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn reward(&mut self, inst: &DppInstance, placed: &[usize]) -> Result<f64, DppError> {
        let mut key = placed.to_vec();
        key.sort_unstable();
        if let Some(&r) = self.map.get(&key) {
            return Ok(r);
        }
        let r = inst.reward_for(placed)?;
        self.map.insert(key, r);
        Ok(r)
    }
}

/// Shaping context for one episode: the potential, the beta in effect, and
/// the discount.
pub struct ShapingCtx<'a> {
    pub spec: &'a PotentialSpec,
    pub beta: f64,
    pub gamma: f64,
}

/// Masked softmax over the legal cells.
pub fn masked_probabilities(policy: &PolicyParams, legal: &[usize]) -> Vec<f64> {
    let max = legal
        .iter()
        .map(|&c| policy.logits[c])
        .fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = legal.iter().map(|&c| (policy.logits[c] - max).exp()).collect();
    let total: f64 = weights.iter().sum();
    weights.into_iter().map(|w| w / total).collect()
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u = rng.random::<f64>();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Roll out one episode under the policy. With shaping on, per-step shaped
/// rewards are recorded next to the original ones; the potential is updated
/// incrementally in O(K) per step.
pub fn sample_trajectory(
    policy: &PolicyParams,
    inst: &DppInstance,
    rng: &mut ChaCha8Rng,
    shaping: Option<&ShapingCtx<'_>>,
    cache: &mut RewardCache,
) -> Result<Trajectory, RlError> {
    let mut state = PlacementState::new(inst);
    let mut states = vec![state.placed().to_vec()];
    let mut actions = Vec::with_capacity(inst.k_caps);
    let mut rewards = Vec::with_capacity(inst.k_caps);
    let mut shaped = shaping.map(|_| Vec::with_capacity(inst.k_caps));
    let mut phi = 0.0; // Phi(empty) = 0
    let mut terminal_reward = 0.0;

    while !state.is_terminal() {
        let legal = state.legal_actions()?;
        let probs = masked_probabilities(policy, &legal);
        let action = legal[sample_index(&probs, rng)];

        let phi_delta = match shaping {
            Some(ctx) => Some(delta_phi(&state, action, ctx.spec)?),
            None => None,
        };
        let next = state.advance(action)?;
        let terminal = next.is_terminal();
        let r = if terminal {
            let r = cache.reward(inst, next.placed())?;
            terminal_reward = r;
            r
        } else {
            0.0
        };
        rewards.push(r);
        if let (Some(ctx), Some(delta)) = (shaping, phi_delta) {
            let phi_next_raw = phi + delta;
            let phi_next = if terminal && ctx.spec.terminal_zeroed {
                0.0
            } else {
                phi_next_raw
            };
            shaped
                .as_mut()
                .unwrap()
                .push(shape_reward(r, phi, phi_next, ctx.gamma, ctx.beta));
            phi = phi_next_raw;
        }
        actions.push(action);
        states.push(next.placed().to_vec());
        state = next;
    }

    Ok(Trajectory {
        states,
        actions,
        rewards,
        shaped,
        terminal_reward,
    })
}

/// Discounted returns of one trajectory from its (shaped or original)
/// per-step rewards.
fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut g = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        g[t] = acc;
    }
    g
}

/// One batched likelihood-ratio update:
/// `logits += lr/B * sum_t (G_t - baseline) * grad log pi(a_t | s_t)`.
///
/// Uses shaped returns when the trajectories carry them. The running-mean
/// baseline is installed from the first batch and then decays at 0.99.
pub fn reinforce_update(
    policy: &mut PolicyParams,
    batch: &[Trajectory],
    inst: &DppInstance,
    cfg: &ReinforceConfig,
    baseline: &mut Option<f64>,
) {
    assert!(!batch.is_empty(), "reinforce_update needs a non-empty batch");
    let all_returns: Vec<Vec<f64>> = batch
        .iter()
        .map(|t| returns(t.shaped.as_deref().unwrap_or(&t.rewards), cfg.gamma))
        .collect();

    let baseline_value = match cfg.baseline {
        BaselineKind::None => 0.0,
        BaselineKind::RunningMean => {
            let flat: Vec<f64> = all_returns.iter().flatten().copied().collect();
            let batch_mean = flat.iter().sum::<f64>() / flat.len() as f64;
            let value = baseline.unwrap_or(batch_mean);
            *baseline = Some(match *baseline {
                None => batch_mean,
                Some(b) => 0.99 * b + 0.01 * batch_mean,
            });
            value
        }
    };

    let mut grad = Array1::<f64>::zeros(policy.logits.len());
    for (traj, g) in batch.iter().zip(&all_returns) {
        let mut state = PlacementState::new(inst);
        for (t, &action) in traj.actions.iter().enumerate() {
            let legal = state.legal_actions().expect("non-terminal replay");
            let probs = masked_probabilities(policy, &legal);
            let advantage = g[t] - baseline_value;
            for (&cell, &p) in legal.iter().zip(&probs) {
                let indicator = if cell == action { 1.0 } else { 0.0 };
                grad[cell] += advantage * (indicator - p);
            }
            state = state.advance(action).expect("replayed action is legal");
        }
    }
    let scale = cfg.learning_rate / batch.len() as f64;
    policy.logits.scaled_add(scale, &grad);
}

/// Mean ORIGINAL return of stochastic rollouts with shaping disabled.
pub fn evaluate(
    policy: &PolicyParams,
    inst: &DppInstance,
    n_rollouts: usize,
    rng: &mut ChaCha8Rng,
    cache: &mut RewardCache,
) -> Result<f64, RlError> {
    assert!(n_rollouts >= 1);
    let mut total = 0.0;
    for _ in 0..n_rollouts {
        let traj = sample_trajectory(policy, inst, rng, None, cache)?;
        total += traj.terminal_reward;
    }
    Ok(total / n_rollouts as f64)
}

fn rollout_stream(seed: u64, episode: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(episode * 1_000_000 + index);
    rng
}

fn eval_stream(seed: u64, checkpoint: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 48) + checkpoint);
    rng
}

/// Alternate rollout batches and updates, evaluating the unshaped return at
/// episode 0 and after every `eval_interval` episodes.
pub fn train(inst: &DppInstance, cfg: &ReinforceConfig) -> Result<TrainingLog, RlError> {
    cfg.validate()?;
    inst.validate()?;
    let start = Instant::now();
    let mut policy = PolicyParams::uniform(inst.grid.cells());
    let mut baseline = None;
    let mut cache = RewardCache::new();
    let mut log = TrainingLog::default();
    let mut checkpoint = 0u64;

    let beta_of = |episode: usize| -> f64 {
        cfg.shaping
            .as_ref()
            .map(|s| beta_at(&s.schedule, episode))
            .unwrap_or(0.0)
    };

    let eval_point = |episode: usize,
                          policy: &PolicyParams,
                          cache: &mut RewardCache,
                          checkpoint: &mut u64|
     -> Result<LogRow, RlError> {
        let beta = beta_of(episode);
        let mut rng = eval_stream(cfg.seed, *checkpoint);
        *checkpoint += 1;
        let mut total = 0.0;
        let mut total_shaped = 0.0;
        for _ in 0..cfg.eval_rollouts {
            let ctx = cfg.shaping.as_ref().map(|s| ShapingCtx {
                spec: &s.spec,
                beta,
                gamma: cfg.gamma,
            });
            let traj = sample_trajectory(policy, inst, &mut rng, ctx.as_ref(), cache)?;
            total += traj.terminal_reward;
            total_shaped += traj
                .shaped
                .as_ref()
                .map(|s| s.iter().sum::<f64>())
                .unwrap_or(traj.terminal_reward);
        }
        Ok(LogRow {
            episode,
            mean_return: total / cfg.eval_rollouts as f64,
            mean_shaped_return: total_shaped / cfg.eval_rollouts as f64,
            beta,
            seconds: start.elapsed().as_secs_f64(),
        })
    };

    let row = eval_point(0, &policy, &mut cache, &mut checkpoint)?;
    log.rows.push(row);

    for episode in 0..cfg.episodes {
        let beta = beta_of(episode);
        let mut batch = Vec::with_capacity(cfg.batch_size);
        for i in 0..cfg.batch_size {
            let mut rng = rollout_stream(cfg.seed, episode as u64, i as u64);
            let ctx = cfg.shaping.as_ref().map(|s| ShapingCtx {
                spec: &s.spec,
                beta,
                gamma: cfg.gamma,
            });
            batch.push(sample_trajectory(&policy, inst, &mut rng, ctx.as_ref(), &mut cache)?);
        }
        reinforce_update(&mut policy, &batch, inst, cfg, &mut baseline);

        if (episode + 1) % cfg.eval_interval == 0 {
            let row = eval_point(episode + 1, &policy, &mut cache, &mut checkpoint)?;
            log.rows.push(row);
        }
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dpp::{exhaustive_optimum, Grid};
    use crate::pdn::{CapacitorModel, FrequencyBand, MeshPdnSpec};

    fn tiny_instance(k: usize) -> DppInstance {
        DppInstance {
            grid: Grid { width: 3, height: 3 },
            probe: 4,
            keep_out: vec![],
            k_caps: k,
            mesh: MeshPdnSpec::uniform(3, 3),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand { n_points: 5, ..FrequencyBand::default() },
            seed: 0,
        }
    }

    #[test]
    fn trajectories_are_seed_deterministic_and_sparse() {
        let inst = tiny_instance(3);
        let policy = PolicyParams::uniform(9);
        let mut cache = RewardCache::new();
        let mut rng1 = rollout_stream(42, 0, 0);
        let mut rng2 = rollout_stream(42, 0, 0);
        let a = sample_trajectory(&policy, &inst, &mut rng1, None, &mut cache).unwrap();
        let b = sample_trajectory(&policy, &inst, &mut rng2, None, &mut cache).unwrap();
        assert_eq!(a, b);

        // sparsity: the sum of original rewards is exactly the terminal one
        assert_eq!(a.rewards.iter().sum::<f64>(), a.terminal_reward);
        assert_eq!(a.rewards[..a.len() - 1].iter().sum::<f64>(), 0.0);
        assert_eq!(a.len(), 3);
        assert_eq!(a.states.len(), 4);
    }

    #[test]
    fn uniform_policy_visits_legal_cells_uniformly() {
        let inst = tiny_instance(1);
        let policy = PolicyParams::uniform(9);
        let mut cache = RewardCache::new();
        let mut counts = [0usize; 9];
        let n = 10_000;
        for i in 0..n {
            let mut rng = rollout_stream(7, 0, i);
            let t = sample_trajectory(&policy, &inst, &mut rng, None, &mut cache).unwrap();
            counts[t.actions[0]] += 1;
        }
        assert_eq!(counts[4], 0); // probe is never legal
        let expected = n as f64 / 8.0;
        // ~4 sigma binomial band around 1/8
        let sigma = (n as f64 * (1.0 / 8.0) * (7.0 / 8.0)).sqrt();
        for (cell, &c) in counts.iter().enumerate() {
            if cell == 4 {
                continue;
            }
            assert!(
                (c as f64 - expected).abs() < 4.0 * sigma,
                "cell {cell}: {c} vs {expected}"
            );
        }
    }

    #[test]
    fn shaping_beta_zero_leaves_rewards_unchanged() {
        let inst = tiny_instance(2);
        let policy = PolicyParams::uniform(9);
        let mut cache = RewardCache::new();
        let spec = PotentialSpec::dpp_default();
        let ctx = ShapingCtx { spec: &spec, beta: 0.0, gamma: 1.0 };
        let mut rng = rollout_stream(1, 0, 0);
        let t = sample_trajectory(&policy, &inst, &mut rng, Some(&ctx), &mut cache).unwrap();
        assert_eq!(t.shaped.as_ref().unwrap(), &t.rewards);
    }

    #[test]
    fn equal_returns_with_running_mean_gives_zero_update() {
        let inst = tiny_instance(2);
        let mut policy = PolicyParams::uniform(9);
        let cfg = ReinforceConfig {
            baseline: BaselineKind::RunningMean,
            ..ReinforceConfig::defaults_with_seed(3)
        };
        let mut cache = RewardCache::new();
        // identical trajectories => identical returns
        let mut rng = rollout_stream(3, 0, 0);
        let t = sample_trajectory(&policy, &inst, &mut rng, None, &mut cache).unwrap();
        let batch = vec![t.clone(), t];
        let before = policy.logits.clone();
        let mut baseline = None;
        reinforce_update(&mut policy, &batch, &inst, &cfg, &mut baseline);
        assert_eq!(policy.logits, before);
        assert!(baseline.is_some());
    }

    #[test]
    fn positive_advantage_raises_taken_action_logits() {
        let inst = tiny_instance(1);
        let mut policy = PolicyParams::uniform(9);
        let cfg = ReinforceConfig {
            baseline: BaselineKind::None,
            ..ReinforceConfig::defaults_with_seed(4)
        };
        let mut cache = RewardCache::new();
        let mut rng = rollout_stream(4, 0, 0);
        let t = sample_trajectory(&policy, &inst, &mut rng, None, &mut cache).unwrap();
        assert!(t.terminal_reward > 0.0);
        let action = t.actions[0];
        let mut baseline = None;
        reinforce_update(&mut policy, &[t], &inst, &cfg, &mut baseline);
        assert!(policy.logits[action] > 0.0);
        for cell in 0..9 {
            if cell != action && cell != 4 {
                assert!(policy.logits[cell] < 0.0);
            }
        }
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        // frozen batch and advantages; J(logits) = sum_t A_t log pi(a_t|s_t)
        let inst = tiny_instance(2);
        let policy = PolicyParams::uniform(9);
        let mut cache = RewardCache::new();
        let batch: Vec<Trajectory> = (0..4)
            .map(|i| {
                let mut rng = rollout_stream(5, 0, i);
                sample_trajectory(&policy, &inst, &mut rng, None, &mut cache).unwrap()
            })
            .collect();
        let advantages: Vec<Vec<f64>> = batch
            .iter()
            .map(|t| returns(&t.rewards, 1.0).iter().map(|g| g - 0.5).collect())
            .collect();

        let surrogate = |logits: &Array1<f64>| -> f64 {
            let p = PolicyParams { logits: logits.clone() };
            let mut j = 0.0;
            for (traj, adv) in batch.iter().zip(&advantages) {
                let mut state = PlacementState::new(&inst);
                for (t, &a) in traj.actions.iter().enumerate() {
                    let legal = state.legal_actions().unwrap();
                    let probs = masked_probabilities(&p, &legal);
                    let idx = legal.iter().position(|&c| c == a).unwrap();
                    j += adv[t] * probs[idx].ln();
                    state = state.advance(a).unwrap();
                }
            }
            j
        };

        // analytic gradient of the same surrogate
        let mut grad = Array1::<f64>::zeros(9);
        for (traj, adv) in batch.iter().zip(&advantages) {
            let mut state = PlacementState::new(&inst);
            for (t, &a) in traj.actions.iter().enumerate() {
                let legal = state.legal_actions().unwrap();
                let probs = masked_probabilities(&policy, &legal);
                for (&cell, &p) in legal.iter().zip(&probs) {
                    let ind = if cell == a { 1.0 } else { 0.0 };
                    grad[cell] += adv[t] * (ind - p);
                }
                state = state.advance(a).unwrap();
            }
        }

        let h = 1e-6;
        for cell in 0..9 {
            let mut up = policy.logits.clone();
            up[cell] += h;
            let mut dn = policy.logits.clone();
            dn[cell] -= h;
            let fd = (surrogate(&up) - surrogate(&dn)) / (2.0 * h);
            let rel = (grad[cell] - fd).abs() / grad[cell].abs().max(fd.abs()).max(1e-12);
            assert!(rel <= 1e-5, "cell {cell}: analytic {} fd {fd}", grad[cell]);
        }
    }

    #[test]
    fn evaluation_respects_oracle_ceiling_and_converges() {
        let inst = tiny_instance(2);
        let (_, best) = exhaustive_optimum(&inst).unwrap();
        let policy = PolicyParams::uniform(9);
        let mut cache = RewardCache::new();

        let mut rng = eval_stream(11, 0);
        let mean = evaluate(&policy, &inst, 200, &mut rng, &mut cache).unwrap();
        assert!(mean <= best + 1e-9);

        // one-hot-ish deterministic policy has zero variance
        let mut det = PolicyParams::uniform(9);
        det.logits[1] = 60.0;
        det.logits[3] = 30.0;
        let mut r1 = eval_stream(12, 0);
        let mut r2 = eval_stream(13, 0);
        let e1 = evaluate(&det, &inst, 10, &mut r1, &mut cache).unwrap();
        let e2 = evaluate(&det, &inst, 10, &mut r2, &mut cache).unwrap();
        assert_eq!(e1, e2);

        // estimator spread shrinks with rollout count
        let mut spread = |n: usize, base: u64| {
            let vals: Vec<f64> = (0..5)
                .map(|i| {
                    let mut rng = eval_stream(base + i, 0);
                    evaluate(&policy, &inst, n, &mut rng, &mut cache).unwrap()
                })
                .collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            hi - lo
        };
        let s10 = spread(10, 100);
        let s1000 = spread(1000, 200);
        assert!(s1000 < s10, "spread {s1000} !< {s10}");
    }

    #[test]
    fn train_is_reproducible_and_logs_initial_eval() {
        let inst = tiny_instance(2);
        let cfg = ReinforceConfig {
            episodes: 0,
            ..ReinforceConfig::defaults_with_seed(21)
        };
        let log = train(&inst, &cfg).unwrap();
        assert_eq!(log.rows.len(), 1);
        assert_eq!(log.rows[0].episode, 0);

        let cfg2 = ReinforceConfig {
            episodes: 20,
            batch_size: 8,
            eval_interval: 5,
            ..ReinforceConfig::defaults_with_seed(21)
        };
        let a = train(&inst, &cfg2).unwrap();
        let b = train(&inst, &cfg2).unwrap();
        assert_eq!(a.rows.len(), 1 + 20 / 5);
        for (x, y) in a.rows.iter().zip(&b.rows) {
            // identical except the wall-clock column
            assert_eq!(x.episode, y.episode);
            assert_eq!(x.mean_return, y.mean_return);
            assert_eq!(x.mean_shaped_return, y.mean_shaped_return);
            assert_eq!(x.beta, y.beta);
        }
    }

    #[test]
    fn zero_beta_shaping_path_equals_unshaped_path() {
        let inst = tiny_instance(2);
        let base = ReinforceConfig {
            episodes: 12,
            batch_size: 6,
            eval_interval: 4,
            ..ReinforceConfig::defaults_with_seed(31)
        };
        let shaped_cfg = ReinforceConfig {
            shaping: Some(ShapingSetup {
                spec: PotentialSpec::dpp_default(),
                schedule: BetaSchedule::new(0.0, 0.0, 12).unwrap(),
            }),
            ..base.clone()
        };
        let plain = train(&inst, &base).unwrap();
        let shaped = train(&inst, &shaped_cfg).unwrap();
        for (x, y) in plain.rows.iter().zip(&shaped.rows) {
            assert_eq!(x.mean_return, y.mean_return);
            assert_eq!(x.mean_shaped_return, y.mean_shaped_return);
            assert_eq!(x.beta, y.beta);
        }
    }

    #[test]
    fn training_improves_over_the_uniform_start() {
        let inst = tiny_instance(2);
        let cfg = ReinforceConfig {
            episodes: 60,
            batch_size: 12,
            eval_interval: 20,
            ..ReinforceConfig::defaults_with_seed(5)
        };
        let log = train(&inst, &cfg).unwrap();
        let first = log.rows.first().unwrap().mean_return;
        let last = log.rows.last().unwrap().mean_return;
        assert!(last > first, "no improvement: {first} -> {last}");
        let (_, best) = exhaustive_optimum(&inst).unwrap();
        assert!(last <= best + 1e-9);
    }
}
