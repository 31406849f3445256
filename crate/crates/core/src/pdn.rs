//! Frequency-domain power-delivery-network simulation on a 2D
//! transmission-line mesh.
//!
//! The mesh is lumped: each segment between orthogonal neighbors is a
//! series `R + jwL`, each node carries a shunt `g + jwC` to ground, and a
//! placed decoupling capacitor adds a series-RLC branch
//! `1 / (esr + jw esl + 1/(jwC))` at its node. Nodal analysis gives
//!
//! ```text
//! Y[i][i] = sum of incident segment admittances + node shunt (+ cap branch)
//! Y[i][j] = -y_segment   for neighbors i, j
//! ```
//!
//! which is symmetric (reciprocal network). Kron reduction (the Schur
//! complement) eliminates internal nodes exactly:
//! `Z = (Y_pp - Y_pc Y_cc^-1 Y_cp)^-1`, equal to the probe block of the
//! full inverse.
//!
//! Solves are dense complex LU with partial pivoting; mesh sizes in scope
//! (<= 25x25 nodes) do not warrant sparsity machinery.

use crate::linfit::linear_fit;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ComplexMatrix = Array2<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PdnError {
    #[error("invalid mesh spec: {0}")]
    InvalidSpec(String),
    #[error("invalid frequency band: {0}")]
    InvalidBand(String),
    #[error("node index {node} out of range for {nodes} nodes")]
    NodeOutOfRange { node: usize, nodes: usize },
    #[error("duplicate placement at node {0}")]
    DuplicatePlacement(usize),
    #[error("matrix is numerically singular (pivot ratio {pivot_ratio:.3e})")]
    Singular { pivot_ratio: f64 },
    #[error("probe set must be non-empty and duplicate-free")]
    BadProbeSet,
    #[error("decay fit needs a mesh of at least 4x4, got {w}x{h}")]
    MeshTooSmall { w: usize, h: usize },
}

/// A W x H transmission-line mesh with uniform per-segment R, L and
/// per-node shunt C, G.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshPdnSpec {
    pub width: usize,
    pub height: usize,
    pub r_seg: f64,
    pub l_seg: f64,
    pub c_node: f64,
    pub g_node: f64,
}

impl MeshPdnSpec {
    /// Uniform mesh with the library's default electrical values. The
    /// defaults are damped enough that transfer impedance decays cleanly
    /// within a desk-scale grid.
    pub fn uniform(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            r_seg: 4.0,
            l_seg: 1e-10,
            c_node: 1e-12,
            g_node: 0.5,
        }
    }

    pub fn validate(&self) -> Result<(), PdnError> {
        if self.width < 2 || self.height < 2 {
            return Err(PdnError::InvalidSpec(format!(
                "mesh must be at least 2x2, got {}x{}",
                self.width, self.height
            )));
        }
        for (name, v) in [
            ("r_seg", self.r_seg),
            ("l_seg", self.l_seg),
            ("c_node", self.c_node),
            ("g_node", self.g_node),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(PdnError::InvalidSpec(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    /// Manhattan distance between two nodes in grid hops.
    pub fn hop_distance(&self, a: usize, b: usize) -> usize {
        let (ar, ac) = (a / self.width, a % self.width);
        let (br, bc) = (b / self.width, b % self.width);
        ar.abs_diff(br) + ac.abs_diff(bc)
    }
}

/// Log-spaced frequency grid over the operating band.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyBand {
    pub f_min: f64,
    pub f_max: f64,
    pub n_points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Log,
}

impl FrequencyBand {
    pub fn new(f_min: f64, f_max: f64, n_points: usize) -> Result<Self, PdnError> {
        let band = Self {
            f_min,
            f_max,
            n_points,
            spacing: Spacing::Log,
        };
        band.validate()?;
        Ok(band)
    }

    pub fn validate(&self) -> Result<(), PdnError> {
        if !(self.f_min.is_finite() && self.f_max.is_finite() && 0.0 < self.f_min) {
            return Err(PdnError::InvalidBand("need 0 < f_min".into()));
        }
        if self.f_min >= self.f_max {
            return Err(PdnError::InvalidBand("need f_min < f_max".into()));
        }
        if self.n_points < 2 {
            return Err(PdnError::InvalidBand("need at least 2 points".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> Vec<f64> {
        let n = self.n_points;
        let log_lo = self.f_min.ln();
        let log_hi = self.f_max.ln();
        (0..n)
            .map(|i| (log_lo + (log_hi - log_lo) * i as f64 / (n - 1) as f64).exp())
            .collect()
    }

    pub fn geometric_mean(&self) -> f64 {
        (self.f_min * self.f_max).sqrt()
    }
}

impl Default for FrequencyBand {
    /// 20 log-spaced points over the 100 MHz - 2 GHz decoupling band.
    fn default() -> Self {
        Self {
            f_min: 1e8,
            f_max: 2e9,
            n_points: 20,
            spacing: Spacing::Log,
        }
    }
}

/// Series-RLC decoupling capacitor branch to ground.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacitorModel {
    pub c_val: f64,
    pub esr: f64,
    pub esl: f64,
}

impl CapacitorModel {
    pub fn validate(&self) -> Result<(), PdnError> {
        if !(self.c_val.is_finite() && self.c_val > 0.0 && self.esr >= 0.0 && self.esl >= 0.0) {
            return Err(PdnError::InvalidSpec(format!("bad capacitor model {self:?}")));
        }
        Ok(())
    }
}

impl Default for CapacitorModel {
    fn default() -> Self {
        Self {
            c_val: 100e-9,
            esr: 0.01,
            esl: 1e-10,
        }
    }
}

fn jw(f: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * std::f64::consts::PI * f)
}

/// Branch admittance of a placed capacitor at frequency f.
pub fn capacitor_admittance(cap: &CapacitorModel, f: f64) -> Complex64 {
    let s = jw(f);
    let z = cap.esr + s * cap.esl + 1.0 / (s * cap.c_val);
    1.0 / z
}

/// Assemble the nodal admittance matrix at frequency f, with optional
/// capacitor branches at placed nodes.
///
/// A placed capacitor only touches its own diagonal entry.
pub fn build_admittance(
    spec: &MeshPdnSpec,
    f: f64,
    placements: &[usize],
    cap: &CapacitorModel,
) -> Result<ComplexMatrix, PdnError> {
    spec.validate()?;
    if !(f.is_finite() && f > 0.0) {
        return Err(PdnError::InvalidBand(format!("frequency must be > 0, got {f}")));
    }
    let n = spec.nodes();
    let y_seg = 1.0 / (spec.r_seg + jw(f) * spec.l_seg);
    let y_node = Complex64::new(spec.g_node, 0.0) + jw(f) * spec.c_node;

    let mut y = Array2::from_elem((n, n), Complex64::new(0.0, 0.0));
    for row in 0..spec.height {
        for col in 0..spec.width {
            let i = row * spec.width + col;
            y[[i, i]] += y_node;
            if col + 1 < spec.width {
                let j = i + 1;
                y[[i, i]] += y_seg;
                y[[j, j]] += y_seg;
                y[[i, j]] -= y_seg;
                y[[j, i]] -= y_seg;
            }
            if row + 1 < spec.height {
                let j = i + spec.width;
                y[[i, i]] += y_seg;
                y[[j, j]] += y_seg;
                y[[i, j]] -= y_seg;
                y[[j, i]] -= y_seg;
            }
        }
    }

    let mut seen = vec![false; n];
    let y_cap = capacitor_admittance(cap, f);
    for &node in placements {
        if node >= n {
            return Err(PdnError::NodeOutOfRange { node, nodes: n });
        }
        if seen[node] {
            return Err(PdnError::DuplicatePlacement(node));
        }
        seen[node] = true;
        y[[node, node]] += y_cap;
    }
    Ok(y)
}

// --------------------------------------------------------------------------
// Dense complex LU with partial pivoting.
// --------------------------------------------------------------------------

struct Lu {
    lu: Array2<Complex64>,
    piv: Vec<usize>,
}

fn lu_factor(a: &ComplexMatrix) -> Result<Lu, PdnError> {
    let n = a.nrows();
    let mut lu = a.clone();
    let mut piv = Vec::with_capacity(n);
    let scale = a.iter().map(|z| z.norm()).fold(0.0, f64::max).max(1e-300);
    for k in 0..n {
        let (mut best, mut best_mag) = (k, lu[[k, k]].norm());
        for r in k + 1..n {
            let mag = lu[[r, k]].norm();
            if mag > best_mag {
                best = r;
                best_mag = mag;
            }
        }
        if best_mag <= scale * 1e-14 {
            return Err(PdnError::Singular {
                pivot_ratio: best_mag / scale,
            });
        }
        if best != k {
            for c in 0..n {
                let tmp = lu[[k, c]];
                lu[[k, c]] = lu[[best, c]];
                lu[[best, c]] = tmp;
            }
        }
        piv.push(best);
        let pivot = lu[[k, k]];
        for r in k + 1..n {
            let factor = lu[[r, k]] / pivot;
            lu[[r, k]] = factor;
            if factor != Complex64::new(0.0, 0.0) {
                for c in k + 1..n {
                    let sub = factor * lu[[k, c]];
                    lu[[r, c]] -= sub;
                }
            }
        }
    }
    Ok(Lu { lu, piv })
}

impl Lu {
    fn solve_vec(&self, b: &Array1<Complex64>) -> Array1<Complex64> {
        let n = b.len();
        let mut x = b.clone();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != Complex64::new(0.0, 0.0) {
                for r in k + 1..n {
                    let sub = self.lu[[r, k]] * xk;
                    x[r] -= sub;
                }
            }
        }
        for k in (0..n).rev() {
            let mut sum = x[k];
            for c in k + 1..n {
                sum -= self.lu[[k, c]] * x[c];
            }
            x[k] = sum / self.lu[[k, k]];
        }
        x
    }
}

/// Solve `A X = B` column-wise.
pub fn solve_multi(a: &ComplexMatrix, b: &ComplexMatrix) -> Result<ComplexMatrix, PdnError> {
    let lu = lu_factor(a)?;
    let mut x = Array2::from_elem(b.dim(), Complex64::new(0.0, 0.0));
    for (j, col) in b.columns().into_iter().enumerate() {
        let sol = lu.solve_vec(&col.to_owned());
        x.column_mut(j).assign(&sol);
    }
    Ok(x)
}

/// Dense inverse via LU on the identity.
pub fn invert(a: &ComplexMatrix) -> Result<ComplexMatrix, PdnError> {
    let n = a.nrows();
    let eye = Array2::from_shape_fn((n, n), |(i, j)| {
        Complex64::new(if i == j { 1.0 } else { 0.0 }, 0.0)
    });
    solve_multi(a, &eye)
}

fn gather(y: &ComplexMatrix, rows: &[usize], cols: &[usize]) -> ComplexMatrix {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| y[[rows[i], cols[j]]])
}

/// Kron-reduce the network to a set of port nodes:
/// `Z = (Y_pp - Y_pc Y_cc^-1 Y_cp)^-1`, the exact impedance matrix seen at
/// the ports. Equals the port block of the full inverse of Y.
pub fn kron_reduce(y: &ComplexMatrix, probe_nodes: &[usize]) -> Result<ComplexMatrix, PdnError> {
    let n = y.nrows();
    if probe_nodes.is_empty() {
        return Err(PdnError::BadProbeSet);
    }
    let mut is_probe = vec![false; n];
    for &p in probe_nodes {
        if p >= n {
            return Err(PdnError::NodeOutOfRange { node: p, nodes: n });
        }
        if is_probe[p] {
            return Err(PdnError::BadProbeSet);
        }
        is_probe[p] = true;
    }
    let internal: Vec<usize> = (0..n).filter(|&i| !is_probe[i]).collect();
    let y_pp = gather(y, probe_nodes, probe_nodes);
    if internal.is_empty() {
        return invert(&y_pp);
    }
    let y_pc = gather(y, probe_nodes, &internal);
    let y_cp = gather(y, &internal, probe_nodes);
    let y_cc = gather(y, &internal, &internal);
    let x = solve_multi(&y_cc, &y_cp).map_err(|e| match e {
        PdnError::Singular { pivot_ratio } => PdnError::Singular { pivot_ratio },
        other => other,
    })?;
    let schur = &y_pp - &y_pc.dot(&x);
    invert(&schur)
}

/// Transfer impedance: entry (probe, source) of the full inverse, i.e. the
/// voltage at `probe` per unit current injected at `source`.
pub fn transfer_impedance(
    spec: &MeshPdnSpec,
    f: f64,
    source: usize,
    probe: usize,
) -> Result<Complex64, PdnError> {
    let col = transfer_column(spec, f, source)?;
    if probe >= col.len() {
        return Err(PdnError::NodeOutOfRange {
            node: probe,
            nodes: col.len(),
        });
    }
    Ok(col[probe])
}

/// All transfer impedances from `source` in one solve: `Y^-1 e_source`.
pub fn transfer_column(
    spec: &MeshPdnSpec,
    f: f64,
    source: usize,
) -> Result<Array1<Complex64>, PdnError> {
    let y = build_admittance(spec, f, &[], &CapacitorModel::default())?;
    let n = y.nrows();
    if source >= n {
        return Err(PdnError::NodeOutOfRange { node: source, nodes: n });
    }
    let mut e = Array1::from_elem(n, Complex64::new(0.0, 0.0));
    e[source] = Complex64::new(1.0, 0.0);
    let lu = lu_factor(&y)?;
    Ok(lu.solve_vec(&e))
}

/// Scalar port impedance at `probe` after Kron-reducing everything else.
pub fn port_impedance(
    spec: &MeshPdnSpec,
    f: f64,
    placements: &[usize],
    cap: &CapacitorModel,
    probe: usize,
) -> Result<Complex64, PdnError> {
    let y = build_admittance(spec, f, placements, cap)?;
    let z = kron_reduce(&y, &[probe])?;
    Ok(z[[0, 0]])
}

/// Terminal placement reward: frequency-weighted impedance reduction
/// `sum_f (|Z_init(f)| - |Z_final(f)|) / f * 1e9` over the band, with both
/// impedances Kron-reduced to the probe port.
///
/// Zero for the empty placement; invariant to placement order.
pub fn dpp_reward(
    spec: &MeshPdnSpec,
    placements: &[usize],
    cap: &CapacitorModel,
    band: &FrequencyBand,
    probe: usize,
) -> Result<f64, PdnError> {
    band.validate()?;
    cap.validate()?;
    let mut total = 0.0;
    for f in band.points() {
        let z_init = port_impedance(spec, f, &[], cap, probe)?;
        let z_final = port_impedance(spec, f, placements, cap, probe)?;
        total += (z_init.norm() - z_final.norm()) / f * 1e9;
    }
    Ok(total)
}

/// Least-squares fit of `ln |Z_tr(i, probe)|` against the hop Manhattan
/// distance over all nodes i != probe. The slope is the empirical decay
/// rate estimate at frequency f (negative when the mesh attenuates).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecayFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn fit_decay(spec: &MeshPdnSpec, f: f64, probe: usize) -> Result<DecayFit, PdnError> {
    if spec.width < 4 || spec.height < 4 {
        return Err(PdnError::MeshTooSmall {
            w: spec.width,
            h: spec.height,
        });
    }
    let col = transfer_column(spec, f, probe)?;
    let mut xs = Vec::with_capacity(col.len() - 1);
    let mut ys = Vec::with_capacity(col.len() - 1);
    for (i, z) in col.iter().enumerate() {
        if i == probe {
            continue;
        }
        xs.push(spec.hop_distance(i, probe) as f64);
        ys.push(z.norm().ln());
    }
    let (slope, intercept, r_squared) = linear_fit(&xs, &ys);
    Ok(DecayFit {
        slope,
        intercept,
        r_squared,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn two_node_assembly_by_inspection() {
        let spec = MeshPdnSpec {
            width: 2,
            height: 2,
            ..MeshPdnSpec::uniform(2, 2)
        };
        let f = 5e8;
        let y = build_admittance(&spec, f, &[], &CapacitorModel::default()).unwrap();
        let y_seg = 1.0 / (spec.r_seg + jw(f) * spec.l_seg);
        let y_node = c(spec.g_node, 0.0) + jw(f) * spec.c_node;
        // corner node 0 touches two segments
        let diag = y_node + y_seg + y_seg;
        assert!((y[[0, 0]] - diag).norm() < 1e-15 * diag.norm());
        assert!((y[[0, 1]] + y_seg).norm() < 1e-15 * y_seg.norm());
        // reciprocity holds exactly by construction
        for i in 0..4 {
            for j in 0..4 {
                assert_eq!(y[[i, j]], y[[j, i]]);
            }
        }
    }

    #[test]
    fn capacitor_touches_only_its_diagonal() {
        let spec = MeshPdnSpec::uniform(3, 3);
        let f = 3e8;
        let cap = CapacitorModel::default();
        let bare = build_admittance(&spec, f, &[], &cap).unwrap();
        let placed = build_admittance(&spec, f, &[4], &cap).unwrap();
        for i in 0..9 {
            for j in 0..9 {
                if (i, j) == (4, 4) {
                    assert!((placed[[i, j]] - bare[[i, j]]).norm() > 1e-6);
                } else {
                    assert_eq!(placed[[i, j]], bare[[i, j]]);
                }
            }
        }
        assert!(matches!(
            build_admittance(&spec, f, &[4, 4], &cap),
            Err(PdnError::DuplicatePlacement(4))
        ));
    }

    #[test]
    fn kron_two_node_closed_form() {
        let g = c(0.5, 0.3);
        let y0 = c(0.8, 0.1);
        let y1 = c(0.4, -0.2);
        let y = ndarray::array![[y0 + g, -g], [-g, y1 + g]];
        let z = kron_reduce(&y, &[0]).unwrap();
        let expect = 1.0 / (y0 + g - g * g / (y1 + g));
        assert!((z[[0, 0]] - expect).norm() < 1e-12 * expect.norm());
    }

    #[test]
    fn kron_empty_internal_is_plain_inverse() {
        let y = ndarray::array![[c(2.0, 1.0), c(-0.5, 0.0)], [c(-0.5, 0.0), c(3.0, -1.0)]];
        let z = kron_reduce(&y, &[0, 1]).unwrap();
        let inv = invert(&y).unwrap();
        for (a, b) in z.iter().zip(inv.iter()) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    fn random_symmetric_system(n: usize, seed: u64) -> ComplexMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Array2::from_elem((n, n), c(0.0, 0.0));
        for i in 0..n {
            for j in (i + 1)..n {
                let off = c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5);
                y[[i, j]] = off;
                y[[j, i]] = off;
            }
        }
        // diagonal dominance keeps the system and every principal block
        // nonsingular
        for i in 0..n {
            let row_mass: f64 = (0..n).filter(|&j| j != i).map(|j| y[[i, j]].norm()).sum();
            y[[i, i]] = c(row_mass + 1.0 + rng.random::<f64>(), rng.random::<f64>());
        }
        y
    }

    #[test]
    fn kron_matches_full_inverse_block() {
        for (n, seed) in [(8usize, 1u64), (20, 2), (50, 3)] {
            let y = random_symmetric_system(n, seed);
            let probes = [0usize, n / 3, n - 1];
            let z = kron_reduce(&y, &probes).unwrap();
            let full = invert(&y).unwrap();
            let mut max_rel = 0.0f64;
            for (i, &p) in probes.iter().enumerate() {
                for (j, &q) in probes.iter().enumerate() {
                    let rel = (z[[i, j]] - full[[p, q]]).norm() / full[[p, q]].norm().max(1e-30);
                    max_rel = max_rel.max(rel);
                }
            }
            assert!(max_rel < 1e-10, "n={n}: rel err {max_rel:.3e}");
        }
    }

    #[test]
    fn singular_internal_block_reports_condition() {
        let y = ndarray::array![
            [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            [c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)],
            [c(0.0, 0.0), c(0.0, 0.0), c(0.0, 0.0)]
        ];
        // internal block {1,2} is singular (zero row)
        assert!(matches!(
            kron_reduce(&y, &[0]),
            Err(PdnError::Singular { .. })
        ));
    }

    #[test]
    fn reciprocity_and_analytic_transfer() {
        let spec = MeshPdnSpec::uniform(4, 3);
        let f = 7e8;
        let z_ab = transfer_impedance(&spec, f, 2, 9).unwrap();
        let z_ba = transfer_impedance(&spec, f, 9, 2).unwrap();
        assert!((z_ab - z_ba).norm() < 1e-13 * z_ab.norm());

        // driving point beats the rest of its row at the low band edge
        let col = transfer_column(&spec, 1e8, 5).unwrap();
        let self_mag = col[5].norm();
        for (i, z) in col.iter().enumerate() {
            if i != 5 {
                assert!(z.norm() < self_mag);
            }
        }
    }

    #[test]
    fn reward_zero_for_empty_and_vanishing_cap() {
        let spec = MeshPdnSpec::uniform(4, 4);
        let band = FrequencyBand::default();
        let cap = CapacitorModel::default();
        let r = dpp_reward(&spec, &[], &cap, &band, 5).unwrap();
        assert_eq!(r, 0.0);

        let open = CapacitorModel {
            c_val: 1e-30,
            esr: 0.01,
            esl: 1e-10,
        };
        let r_open = dpp_reward(&spec, &[10], &open, &band, 5).unwrap();
        assert!(r_open.abs() < 1e-9, "open-circuit cap gave reward {r_open}");
    }

    #[test]
    fn reward_prefers_probe_adjacency_and_ignores_order() {
        let spec = MeshPdnSpec::uniform(4, 4);
        let band = FrequencyBand::default();
        let cap = CapacitorModel::default();
        let probe = 5;
        let near = dpp_reward(&spec, &[6], &cap, &band, probe).unwrap();
        let far = dpp_reward(&spec, &[15], &cap, &band, probe).unwrap();
        assert!(near > far, "near {near} vs far {far}");

        let a = dpp_reward(&spec, &[3, 10, 12], &cap, &band, probe).unwrap();
        let b = dpp_reward(&spec, &[12, 3, 10], &cap, &band, probe).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reward_monotone_along_row_from_probe() {
        let spec = MeshPdnSpec::uniform(6, 6);
        let band = FrequencyBand::default();
        let cap = CapacitorModel::default();
        let probe = 2 * 6 + 1;
        let mut last = f64::INFINITY;
        for col in 2..6 {
            let r = dpp_reward(&spec, &[2 * 6 + col], &cap, &band, probe).unwrap();
            assert!(r <= last + 1e-12, "reward rose with distance at col {col}");
            last = r;
        }
    }

    #[test]
    fn decay_fit_on_default_mesh() {
        let spec = MeshPdnSpec::uniform(8, 8);
        let f = FrequencyBand::default().geometric_mean();
        for probe in [27usize, 0] {
            let fit = fit_decay(&spec, f, probe).unwrap();
            assert!(fit.slope < 0.0, "slope {}", fit.slope);
            assert!(fit.r_squared >= 0.9, "r2 {}", fit.r_squared);
        }
        assert!(matches!(
            fit_decay(&MeshPdnSpec::uniform(3, 8), f, 0),
            Err(PdnError::MeshTooSmall { .. })
        ));
    }

    #[test]
    fn decay_rate_strengthens_with_frequency() {
        let spec = MeshPdnSpec::uniform(8, 8);
        let band = FrequencyBand::default();
        let mut last = 0.0f64;
        for f in band.points() {
            let fit = fit_decay(&spec, f, 27).unwrap();
            let mag = fit.slope.abs();
            assert!(
                mag >= last - 1e-9,
                "|slope| fell from {last} to {mag} at f={f}"
            );
            last = mag;
        }
    }
}
