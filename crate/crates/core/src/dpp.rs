//! The decoupling-capacitor-placement MDP.
//!
//! An instance fixes a grid, a probe port, keep-out cells, a capacitor
//! count K, and the electrical model. An episode places K capacitors one
//! cell at a time without replacement; every intermediate reward is exactly
//! zero and the terminal reward is the simulator's frequency-weighted
//! impedance reduction at the probe. The reward depends on the placed set
//! only, never on the order.

use crate::kernel::{cell_center, Coord2D};
use crate::pdn::{dpp_reward, CapacitorModel, FrequencyBand, MeshPdnSpec, PdnError};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DppError {
    #[error("instance invalid: {0}")]
    InvalidInstance(String),
    #[error("configuration infeasible: {0}")]
    Infeasible(String),
    #[error("state is terminal; no legal actions")]
    TerminalState,
    #[error("illegal action {0}")]
    IllegalAction(usize),
    #[error("search space too large: {combinations} k-subsets exceeds the {guard} guard")]
    SearchGuard { combinations: u128, guard: u128 },
    #[error(transparent)]
    Simulation(#[from] PdnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.width * self.height
    }
}

/// One placement problem. Serialized as the instance file format of the
/// CLI's `dpp` subcommands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DppInstance {
    pub grid: Grid,
    pub probe: usize,
    pub keep_out: Vec<usize>,
    pub k_caps: usize,
    pub mesh: MeshPdnSpec,
    pub cap_model: CapacitorModel,
    pub band: FrequencyBand,
    pub seed: u64,
}

impl DppInstance {
    pub fn validate(&self) -> Result<(), DppError> {
        let cells = self.grid.cells();
        let bad = |msg: String| Err(DppError::InvalidInstance(msg));
        if (self.mesh.width, self.mesh.height) != (self.grid.width, self.grid.height) {
            return bad(format!(
                "grid {}x{} does not match mesh {}x{}",
                self.grid.width, self.grid.height, self.mesh.width, self.mesh.height
            ));
        }
        self.mesh.validate()?;
        self.band.validate()?;
        self.cap_model.validate()?;
        if self.probe >= cells {
            return bad(format!("probe {} out of range", self.probe));
        }
        if self.keep_out.windows(2).any(|w| w[0] >= w[1]) {
            return bad("keep_out must be sorted and duplicate-free".into());
        }
        if self.keep_out.iter().any(|&c| c >= cells) {
            return bad("keep_out cell out of range".into());
        }
        if self.keep_out.binary_search(&self.probe).is_ok() {
            return bad("probe may not lie in the keep-out set".into());
        }
        let free = cells - self.keep_out.len() - 1;
        if self.k_caps == 0 || self.k_caps > free {
            return bad(format!("k_caps {} not in 1..={free}", self.k_caps));
        }
        Ok(())
    }

    /// Placeable cells in ascending order: everything except keep-out and
    /// the probe.
    pub fn free_cells(&self) -> Vec<usize> {
        (0..self.grid.cells())
            .filter(|&c| c != self.probe && self.keep_out.binary_search(&c).is_err())
            .collect()
    }

    /// Normalized center coordinate of a cell.
    pub fn cell_coord(&self, cell: usize) -> Coord2D {
        cell_center(
            cell % self.grid.width,
            cell / self.grid.width,
            self.grid.width,
            self.grid.height,
        )
    }

    pub fn probe_coord(&self) -> Coord2D {
        self.cell_coord(self.probe)
    }

    pub fn reward_for(&self, placed: &[usize]) -> Result<f64, DppError> {
        Ok(dpp_reward(
            &self.mesh,
            placed,
            &self.cap_model,
            &self.band,
            self.probe,
        )?)
    }
}

/// A partial placement. The action order is retained for trajectory
/// bookkeeping; the reward and the shaping potential see only the set.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacementState<'a> {
    instance: &'a DppInstance,
    placed: Vec<usize>,
}

impl<'a> PlacementState<'a> {
    pub fn new(instance: &'a DppInstance) -> Self {
        Self {
            instance,
            placed: Vec::with_capacity(instance.k_caps),
        }
    }

    pub fn instance(&self) -> &'a DppInstance {
        self.instance
    }

    pub fn placed(&self) -> &[usize] {
        &self.placed
    }

    pub fn is_terminal(&self) -> bool {
        self.placed.len() == self.instance.k_caps
    }

    pub fn legal_actions(&self) -> Result<Vec<usize>, DppError> {
        if self.is_terminal() {
            return Err(DppError::TerminalState);
        }
        Ok(self
            .instance
            .free_cells()
            .into_iter()
            .filter(|c| !self.placed.contains(c))
            .collect())
    }

    /// The transition alone: validates legality and appends the cell, with
    /// no simulator call. Callers that cache terminal rewards use this.
    pub fn advance(&self, action: usize) -> Result<PlacementState<'a>, DppError> {
        let legal = self.legal_actions()?;
        if !legal.contains(&action) {
            return Err(DppError::IllegalAction(action));
        }
        let mut next = self.clone();
        next.placed.push(action);
        Ok(next)
    }

    /// Apply one placement. Terminal transitions pay the simulator reward;
    /// everything before that is exactly zero.
    pub fn step(&self, action: usize) -> Result<(PlacementState<'a>, f64, bool), DppError> {
        let next = self.advance(action)?;
        let terminal = next.is_terminal();
        let reward = if terminal {
            self.instance.reward_for(&next.placed)?
        } else {
            0.0
        };
        Ok((next, reward, terminal))
    }
}

/// One rollout: states s_0..s_T as placed-cell snapshots, the chosen
/// actions, the per-step original rewards (all zero except the last), the
/// shaped rewards when shaping was active, and the terminal reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<Vec<usize>>,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub shaped: Option<Vec<f64>>,
    pub terminal_reward: f64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Sampling ranges for random instance generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceGenConfig {
    pub grid: Grid,
    pub k_caps: usize,
    pub keep_out_frac: f64,
    pub r_seg: (f64, f64),
    pub l_seg: (f64, f64),
    pub c_node: (f64, f64),
    pub g_node: (f64, f64),
    pub cap_model: CapacitorModel,
    pub band: FrequencyBand,
}

impl Default for InstanceGenConfig {
    fn default() -> Self {
        Self {
            grid: Grid { width: 6, height: 6 },
            k_caps: 4,
            keep_out_frac: 0.1,
            r_seg: (2.0, 8.0),
            l_seg: (0.5e-10, 2e-10),
            c_node: (0.5e-12, 2e-12),
            g_node: (0.2, 1.0),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand::default(),
        }
    }
}

/// Draw an instance: uniform probe cell, uniform keep-out cells, uniform
/// electrical parameters within the configured ranges. Deterministic for a
/// given seed.
pub fn generate_instance(cfg: &InstanceGenConfig, seed: u64) -> Result<DppInstance, DppError> {
    let cells = cfg.grid.cells();
    if cells < 2 {
        return Err(DppError::Infeasible("grid too small".into()));
    }
    let n_keep = (cfg.keep_out_frac * cells as f64).floor() as usize;
    let free = cells.saturating_sub(n_keep).saturating_sub(1);
    if cfg.k_caps == 0 || cfg.k_caps > free {
        return Err(DppError::Infeasible(format!(
            "k_caps {} with only {free} free cells",
            cfg.k_caps
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = |rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)| lo + (hi - lo) * rng.random::<f64>();
    let mesh = MeshPdnSpec {
        width: cfg.grid.width,
        height: cfg.grid.height,
        r_seg: range(&mut rng, cfg.r_seg),
        l_seg: range(&mut rng, cfg.l_seg),
        c_node: range(&mut rng, cfg.c_node),
        g_node: range(&mut rng, cfg.g_node),
    };
    let probe = rng.random_range(0..cells);

    // partial Fisher-Yates over the non-probe cells
    let mut candidates: Vec<usize> = (0..cells).filter(|&c| c != probe).collect();
    for i in 0..n_keep {
        let j = rng.random_range(i..candidates.len());
        candidates.swap(i, j);
    }
    let mut keep_out: Vec<usize> = candidates[..n_keep].to_vec();
    keep_out.sort_unstable();

    let instance = DppInstance {
        grid: cfg.grid,
        probe,
        keep_out,
        k_caps: cfg.k_caps,
        mesh,
        cap_model: cfg.cap_model,
        band: cfg.band,
        seed,
    };
    instance.validate()?;
    Ok(instance)
}

fn combinations(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut c: u128 = 1;
    for i in 0..k {
        c = c.saturating_mul((n - i) as u128) / (i + 1) as u128;
    }
    c
}

pub const EXHAUSTIVE_GUARD: u128 = 1_000_000;

/// Enumerate every k-subset of the free cells and return the best placement
/// by terminal reward, ties broken lexicographically on the sorted cell
/// indices (the enumeration order), so reruns are identical.
pub fn exhaustive_optimum(inst: &DppInstance) -> Result<(Vec<usize>, f64), DppError> {
    inst.validate()?;
    let free = inst.free_cells();
    let k = inst.k_caps;
    let count = combinations(free.len(), k);
    if count > EXHAUSTIVE_GUARD {
        return Err(DppError::SearchGuard {
            combinations: count,
            guard: EXHAUSTIVE_GUARD,
        });
    }
    let mut idx: Vec<usize> = (0..k).collect();
    let mut best: Option<(Vec<usize>, f64)> = None;
    loop {
        let placement: Vec<usize> = idx.iter().map(|&i| free[i]).collect();
        let reward = inst.reward_for(&placement)?;
        match &best {
            Some((_, r)) if reward <= *r => {}
            _ => best = Some((placement, reward)),
        }
        // advance the combination
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(best.expect("at least one combination"));
            }
            i -= 1;
            if idx[i] != i + free.len() - k {
                idx[i] += 1;
                for j in i + 1..k {
                    idx[j] = idx[j - 1] + 1;
                }
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_instance(k: usize) -> DppInstance {
        DppInstance {
            grid: Grid { width: 3, height: 3 },
            probe: 4,
            keep_out: vec![],
            k_caps: k,
            mesh: MeshPdnSpec::uniform(3, 3),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand { n_points: 6, ..FrequencyBand::default() },
            seed: 0,
        }
    }

    #[test]
    fn generation_is_deterministic_and_valid() {
        let cfg = InstanceGenConfig::default();
        let a = generate_instance(&cfg, 7).unwrap();
        let b = generate_instance(&cfg, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_instance(&cfg, 8).unwrap();
        assert_ne!(a, c);

        let no_keep = InstanceGenConfig { keep_out_frac: 0.0, ..cfg };
        assert!(generate_instance(&no_keep, 1).unwrap().keep_out.is_empty());
    }

    #[test]
    fn generated_instances_satisfy_invariants_and_uniform_probe() {
        let cfg = InstanceGenConfig::default();
        let cells = cfg.grid.cells();
        let mut counts = vec![0usize; cells];
        let n = 1000;
        for seed in 0..n {
            let inst = generate_instance(&cfg, seed).unwrap();
            inst.validate().unwrap();
            counts[inst.probe] += 1;
        }
        // chi-squared sanity against the uniform distribution, df = 35;
        // 57.342 is the 0.99 quantile, so p > 0.01 means chi2 below it
        let expected = n as f64 / cells as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        assert!(chi2 < 57.342, "chi2 {chi2}");
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let cfg = InstanceGenConfig {
            k_caps: 40,
            ..InstanceGenConfig::default()
        };
        assert!(matches!(
            generate_instance(&cfg, 1),
            Err(DppError::Infeasible(_))
        ));
    }

    #[test]
    fn legal_actions_shrink_by_one() {
        let inst = small_instance(8);
        let mut state = PlacementState::new(&inst);
        assert_eq!(state.legal_actions().unwrap().len(), 8); // all but probe
        let mut expect = 8;
        while !state.is_terminal() {
            let actions = state.legal_actions().unwrap();
            assert_eq!(actions.len(), expect);
            let (next, _, _) = state.step(actions[0]).unwrap();
            state = next;
            expect -= 1;
        }
        assert!(matches!(state.legal_actions(), Err(DppError::TerminalState)));
    }

    #[test]
    fn step_rewards_are_terminal_only_and_set_valued() {
        let inst = small_instance(3);
        let s0 = PlacementState::new(&inst);
        let (s1, r1, t1) = s0.step(0).unwrap();
        assert_eq!((r1, t1), (0.0, false));
        let (s2, r2, _) = s1.step(8).unwrap();
        assert_eq!(r2, 0.0);
        let (s3, r3, t3) = s2.step(2).unwrap();
        assert!(t3);
        let direct = inst.reward_for(s3.placed()).unwrap();
        assert_eq!(r3, direct);

        // permuted orders of the same set give the same terminal reward
        use rand::prelude::*;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(41);
        for _ in 0..20 {
            let mut order = [0usize, 8, 2];
            for i in 0..order.len() {
                let j = rng.random_range(i..order.len());
                order.swap(i, j);
            }
            let mut state = PlacementState::new(&inst);
            let mut reward = 0.0;
            for &cell in &order {
                let (next, r, _) = state.step(cell).unwrap();
                state = next;
                reward = r;
            }
            assert_eq!(reward, r3);
        }

        assert!(matches!(s1.step(0), Err(DppError::IllegalAction(0))));
        assert!(matches!(s1.step(4), Err(DppError::IllegalAction(4))));
    }

    #[test]
    fn exhaustive_full_board_and_adjacency() {
        // k equals the free-cell count: single possible placement
        let inst = small_instance(8);
        let (best, reward) = exhaustive_optimum(&inst).unwrap();
        assert_eq!(best, inst.free_cells());
        assert!((reward - inst.reward_for(&best).unwrap()).abs() < 1e-15);

        // k = 1 on a uniform mesh: the optimum hugs the probe
        let inst1 = small_instance(1);
        let (best1, r1) = exhaustive_optimum(&inst1).unwrap();
        let neighbors = [1usize, 3, 5, 7];
        assert!(neighbors.contains(&best1[0]), "optimum at {}", best1[0]);
        assert!(r1 > 0.0);

        // deterministic on rerun
        assert_eq!(exhaustive_optimum(&inst1).unwrap(), (best1, r1));
    }

    #[test]
    fn exhaustive_optimum_dominates_random_placements() {
        use rand::prelude::*;
        use rand_chacha::ChaCha8Rng;
        let inst = DppInstance {
            grid: Grid { width: 4, height: 4 },
            probe: 6,
            keep_out: vec![0],
            k_caps: 2,
            mesh: MeshPdnSpec::uniform(4, 4),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand { n_points: 6, ..FrequencyBand::default() },
            seed: 0,
        };
        let (best_set, best) = exhaustive_optimum(&inst).unwrap();
        let free = inst.free_cells();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut beaten = 0;
        for _ in 0..100 {
            let mut pick: Vec<usize> = free.clone();
            for i in 0..2 {
                let j = rng.random_range(i..pick.len());
                pick.swap(i, j);
            }
            let mut placement = pick[..2].to_vec();
            placement.sort_unstable();
            let r = inst.reward_for(&placement).unwrap();
            assert!(r <= best, "random placement beat the oracle: {r} > {best}");
            if placement != best_set {
                assert!(r < best);
                beaten += 1;
            }
        }
        assert!(beaten > 90); // the optimum set itself is a rare draw
    }

    #[test]
    fn exhaustive_guard_trips() {
        let inst = DppInstance {
            grid: Grid { width: 10, height: 10 },
            probe: 0,
            keep_out: vec![],
            k_caps: 12,
            mesh: MeshPdnSpec::uniform(10, 10),
            cap_model: CapacitorModel::default(),
            band: FrequencyBand::default(),
            seed: 0,
        };
        assert!(matches!(
            exhaustive_optimum(&inst),
            Err(DppError::SearchGuard { .. })
        ));
    }

    #[test]
    fn combinations_counts() {
        assert_eq!(combinations(8, 2), 28);
        assert_eq!(combinations(31, 4), 31465);
        assert_eq!(combinations(3, 5), 0);
    }
}
