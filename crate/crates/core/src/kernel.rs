//! Shared geometric primitives: normalized chip coordinates, Manhattan
//! distance, the separable exponential decay kernel, and the bounded
//! reparameterization of learnable decay rates.
//!
//! The kernel is `exp(-alpha_x |dx| - alpha_y |dy|)`. It factors per axis,
//! which is what lets both the attention bias and the shaping potential
//! avoid ever materializing a pairwise distance matrix.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("coordinate ({x}, {y}) lies outside the unit square")]
    CoordOutOfRange { x: f64, y: f64 },
    #[error("decay rate {0} must be finite and >= 0")]
    InvalidRate(f64),
    #[error("decay bounds [{min}, {max}] must be finite with min < max")]
    InvalidBounds { min: f64, max: f64 },
}

/// A token's physical position, normalized per axis to `[0, 1]`.
///
/// Construction rejects out-of-range coordinates instead of clamping, so a
/// bad grid-to-coordinate mapping fails at the boundary rather than
/// silently distorting distances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "(f64, f64)", into = "(f64, f64)")]
pub struct Coord2D {
    x: f64,
    y: f64,
}

impl Coord2D {
    pub fn new(x: f64, y: f64) -> Result<Self, KernelError> {
        if !(x.is_finite() && y.is_finite() && (0.0..=1.0).contains(&x) && (0.0..=1.0).contains(&y))
        {
            return Err(KernelError::CoordOutOfRange { x, y });
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }
}

impl TryFrom<(f64, f64)> for Coord2D {
    type Error = KernelError;

    fn try_from((x, y): (f64, f64)) -> Result<Self, Self::Error> {
        Coord2D::new(x, y)
    }
}

impl From<Coord2D> for (f64, f64) {
    fn from(c: Coord2D) -> (f64, f64) {
        (c.x, c.y)
    }
}

/// Concrete per-direction decay rates, as produced by [`reparameterize`].
///
/// A rate of exactly zero is allowed and disables decay along that axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRates {
    pub alpha_x: f64,
    pub alpha_y: f64,
}

impl DecayRates {
    pub fn new(alpha_x: f64, alpha_y: f64) -> Result<Self, KernelError> {
        for a in [alpha_x, alpha_y] {
            if !a.is_finite() || a < 0.0 {
                return Err(KernelError::InvalidRate(a));
            }
        }
        Ok(Self { alpha_x, alpha_y })
    }
}

/// Unbounded raw decay parameters plus the bounds of the sigmoid
/// reparameterization that maps them into `(alpha_min, alpha_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDecayParams")]
pub struct DecayParams {
    pub alpha_raw_x: f64,
    pub alpha_raw_y: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
}

#[derive(Deserialize)]
struct RawDecayParams {
    alpha_raw_x: f64,
    alpha_raw_y: f64,
    alpha_min: f64,
    alpha_max: f64,
}

impl TryFrom<RawDecayParams> for DecayParams {
    type Error = KernelError;

    fn try_from(r: RawDecayParams) -> Result<Self, Self::Error> {
        DecayParams::new(r.alpha_raw_x, r.alpha_raw_y, r.alpha_min, r.alpha_max)
    }
}

impl DecayParams {
    pub fn new(
        alpha_raw_x: f64,
        alpha_raw_y: f64,
        alpha_min: f64,
        alpha_max: f64,
    ) -> Result<Self, KernelError> {
        if !(alpha_min.is_finite() && alpha_max.is_finite() && alpha_min < alpha_max) {
            return Err(KernelError::InvalidBounds {
                min: alpha_min,
                max: alpha_max,
            });
        }
        if !(alpha_raw_x.is_finite() && alpha_raw_y.is_finite()) {
            return Err(KernelError::InvalidRate(f64::NAN));
        }
        Ok(Self {
            alpha_raw_x,
            alpha_raw_y,
            alpha_min,
            alpha_max,
        })
    }

    /// Raw values 0 with the measurement-motivated bounds `[1.2, 1.8]`,
    /// i.e. both rates start at 1.5.
    pub fn centered_default() -> Self {
        Self::new(0.0, 0.0, 1.2, 1.8).expect("static bounds are valid")
    }
}

impl Default for DecayParams {
    fn default() -> Self {
        Self::centered_default()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `|dx| + |dy|`: the path length under orthogonal routing.
pub fn manhattan_distance(a: Coord2D, b: Coord2D) -> f64 {
    (a.x - b.x).abs() + (a.y - b.y).abs()
}

/// The separable decay kernel `exp(-alpha_x |dx| - alpha_y |dy|)`.
///
/// Equals 1 iff `a == b`, is symmetric in its arguments, and factors as the
/// product of the two per-axis decays.
pub fn decay_weight(a: Coord2D, b: Coord2D, r: &DecayRates) -> f64 {
    (-r.alpha_x * (a.x - b.x).abs() - r.alpha_y * (a.y - b.y).abs()).exp()
}

/// Maps raw parameters through `alpha_min + (alpha_max - alpha_min) * sigmoid(raw)`.
///
/// The output lies strictly inside `(alpha_min, alpha_max)` and is
/// monotonically increasing in the raw value. At saturated raw values the
/// sum can round exactly onto a bound, so the result is nudged to the
/// nearest representable interior value.
pub fn reparameterize(p: &DecayParams) -> DecayRates {
    let span = p.alpha_max - p.alpha_min;
    let map = |raw: f64| {
        let a = p.alpha_min + span * sigmoid(raw);
        if a <= p.alpha_min {
            p.alpha_min.next_up()
        } else if a >= p.alpha_max {
            p.alpha_max.next_down()
        } else {
            a
        }
    };
    DecayRates {
        alpha_x: map(p.alpha_raw_x),
        alpha_y: map(p.alpha_raw_y),
    }
}

/// Per-token rank-1 bias factors.
///
/// `d_q[i] = exp(-alpha_x x_i - alpha_y y_i)` and
/// `d_k[j] = exp(+alpha_x x_j + alpha_y y_j)`, so the pairwise product is
/// the signed directional decay `exp(alpha_x (x_j - x_i) + alpha_y (y_j - y_i))`.
/// With normalized coordinates every entry lies in `[exp(-2 alpha), exp(+2 alpha)]`
/// per axis, so nothing here can overflow.
pub fn bias_factors(positions: &[Coord2D], r: &DecayRates) -> (Vec<f64>, Vec<f64>) {
    let d_q = positions
        .iter()
        .map(|p| (-r.alpha_x * p.x - r.alpha_y * p.y).exp())
        .collect();
    let d_k = positions
        .iter()
        .map(|p| (r.alpha_x * p.x + r.alpha_y * p.y).exp())
        .collect();
    (d_q, d_k)
}

/// Center of grid cell (col, row) on a W x H grid: `((col+0.5)/W, (row+0.5)/H)`.
///
/// Cell centers keep every token strictly inside the unit square and make
/// nearest-neighbor spacing uniform per axis.
pub fn cell_center(col: usize, row: usize, width: usize, height: usize) -> Coord2D {
    debug_assert!(width >= 1 && height >= 1 && col < width && row < height);
    Coord2D {
        x: (col as f64 + 0.5) / width as f64,
        y: (row as f64 + 0.5) / height as f64,
    }
}

/// Cell centers of a W x H grid in row-major order (row 0 first).
pub fn grid_centers(width: usize, height: usize) -> Vec<Coord2D> {
    let mut out = Vec::with_capacity(width * height);
    for row in 0..height {
        for col in 0..width {
            out.push(cell_center(col, row, width, height));
        }
    }
    out
}
