//! Minimal reverse-mode differentiation on a recording tape.
//!
//! Values are dense f64 matrices (scalars are 1x1). Forward values are
//! computed eagerly as the graph is built; [`Tape::backward`] replays the
//! recorded ops in reverse, accumulating adjoints. Only the primitives this
//! repository needs are taped; there are no general broadcasting rules.
//!
//! The independent oracle is [`finite_difference`] (central differences),
//! and [`check_gradients`] compares the two per parameter.

use crate::attention::{self, AttentionBatch, GateParams, HeadConfig, PreMapNorm};
use crate::kernel::Coord2D;
use ndarray::{Array1, Array2};
use std::collections::BTreeMap;
use std::fmt;
use thiserror::Error;

pub type ParamMap = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("backward requires a scalar (1x1) loss, got {0:?}")]
    NonScalarLoss((usize, usize)),
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("parameter {0} missing from the parameter map")]
    MissingParam(String),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    Exp(usize),
    Sqrt(usize),
    Tanh(usize),
    Sigmoid(usize),
    Elu(usize),
    Neg(usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    /// matrix scaled by a 1x1 variable
    ScaleByVar(usize, usize),
    /// (m x n) + (1 x n), broadcast over rows
    AddRow(usize, usize),
    /// (m x n) * (1 x n)
    MulRow(usize, usize),
    /// (m x n) - (m x 1), broadcast over columns
    SubCol(usize, usize),
    /// (m x n) * (m x 1)
    MulCol(usize, usize),
    /// (m x n) / (m x 1)
    DivCol(usize, usize),
    /// total sum -> 1x1
    Sum(usize),
    /// row sums -> m x 1
    RowSum(usize),
    /// row means -> m x 1
    RowMean(usize),
}

struct Node {
    op: Op,
    value: Array2<f64>,
    name: Option<String>,
}

/// A single-threaded recording tape. Distinct tapes are independent and may
/// live on distinct threads.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

macro_rules! same_shape {
    ($op:literal, $a:expr, $b:expr) => {
        if $a.dim() != $b.dim() {
            return Err(AutodiffError::Shape {
                op: $op,
                lhs: $a.dim(),
                rhs: $b.dim(),
            });
        }
    };
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>, name: Option<String>) -> Var {
        self.nodes.push(Node { op, value, name });
        Var(self.nodes.len() - 1)
    }

    /// A named differentiable input; its gradient appears in the backward map.
    pub fn input(&mut self, name: &str, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, Some(name.to_string()))
    }

    /// An unnamed constant; no gradient is reported for it.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value, None)
    }

    pub fn scalar_input(&mut self, name: &str, value: f64) -> Var {
        self.input(name, Array2::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape!("add", self.nodes[a.0].value, self.nodes[b.0].value);
        let v = &self.nodes[a.0].value + &self.nodes[b.0].value;
        Ok(self.push(Op::Add(a.0, b.0), v, None))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape!("sub", self.nodes[a.0].value, self.nodes[b.0].value);
        let v = &self.nodes[a.0].value - &self.nodes[b.0].value;
        Ok(self.push(Op::Sub(a.0, b.0), v, None))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape!("mul", self.nodes[a.0].value, self.nodes[b.0].value);
        let v = &self.nodes[a.0].value * &self.nodes[b.0].value;
        Ok(self.push(Op::Mul(a.0, b.0), v, None))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        same_shape!("div", self.nodes[a.0].value, self.nodes[b.0].value);
        let v = &self.nodes[a.0].value / &self.nodes[b.0].value;
        Ok(self.push(Op::Div(a.0, b.0), v, None))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (am, ak) = self.nodes[a.0].value.dim();
        let (bk, bn) = self.nodes[b.0].value.dim();
        if ak != bk {
            return Err(AutodiffError::Shape {
                op: "matmul",
                lhs: (am, ak),
                rhs: (bk, bn),
            });
        }
        let v = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        Ok(self.push(Op::MatMul(a.0, b.0), v, None))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.t().to_owned();
        self.push(Op::Transpose(a.0), v, None)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a.0), v, None)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::sqrt);
        self.push(Op::Sqrt(a.0), v, None)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(f64::tanh);
        self.push(Op::Tanh(a.0), v, None)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(crate::kernel::sigmoid);
        self.push(Op::Sigmoid(a.0), v, None)
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(attention::elu);
        self.push(Op::Elu(a.0), v, None)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| -x);
        self.push(Op::Neg(a.0), v, None)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(Op::AddScalar(a.0), v, None)
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(Op::MulScalar(a.0, c), v, None)
    }

    /// Scale every entry of `a` by the 1x1 variable `s`.
    pub fn scale_by_var(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        let sd = self.nodes[s.0].value.dim();
        if sd != (1, 1) {
            return Err(AutodiffError::Shape {
                op: "scale_by_var",
                lhs: self.nodes[a.0].value.dim(),
                rhs: sd,
            });
        }
        let sv = self.nodes[s.0].value[[0, 0]];
        let v = self.nodes[a.0].value.mapv(|x| x * sv);
        Ok(self.push(Op::ScaleByVar(a.0, s.0), v, None))
    }

    fn row_broadcast(&mut self, opname: &'static str, a: Var, r: Var) -> Result<(), AutodiffError> {
        let (_, n) = self.nodes[a.0].value.dim();
        if self.nodes[r.0].value.dim() != (1, n) {
            return Err(AutodiffError::Shape {
                op: opname,
                lhs: self.nodes[a.0].value.dim(),
                rhs: self.nodes[r.0].value.dim(),
            });
        }
        Ok(())
    }

    fn col_broadcast(&mut self, opname: &'static str, a: Var, c: Var) -> Result<(), AutodiffError> {
        let (m, _) = self.nodes[a.0].value.dim();
        if self.nodes[c.0].value.dim() != (m, 1) {
            return Err(AutodiffError::Shape {
                op: opname,
                lhs: self.nodes[a.0].value.dim(),
                rhs: self.nodes[c.0].value.dim(),
            });
        }
        Ok(())
    }

    pub fn add_row(&mut self, a: Var, r: Var) -> Result<Var, AutodiffError> {
        self.row_broadcast("add_row", a, r)?;
        let row = self.nodes[r.0].value.row(0).to_owned();
        let v = &self.nodes[a.0].value + &row;
        Ok(self.push(Op::AddRow(a.0, r.0), v, None))
    }

    pub fn mul_row(&mut self, a: Var, r: Var) -> Result<Var, AutodiffError> {
        self.row_broadcast("mul_row", a, r)?;
        let row = self.nodes[r.0].value.row(0).to_owned();
        let v = &self.nodes[a.0].value * &row;
        Ok(self.push(Op::MulRow(a.0, r.0), v, None))
    }

    pub fn sub_col(&mut self, a: Var, c: Var) -> Result<Var, AutodiffError> {
        self.col_broadcast("sub_col", a, c)?;
        let mut v = self.nodes[a.0].value.clone();
        for (mut row, s) in v.rows_mut().into_iter().zip(self.nodes[c.0].value.column(0)) {
            row.mapv_inplace(|x| x - s);
        }
        Ok(self.push(Op::SubCol(a.0, c.0), v, None))
    }

    pub fn mul_col(&mut self, a: Var, c: Var) -> Result<Var, AutodiffError> {
        self.col_broadcast("mul_col", a, c)?;
        let mut v = self.nodes[a.0].value.clone();
        for (mut row, s) in v.rows_mut().into_iter().zip(self.nodes[c.0].value.column(0)) {
            row.mapv_inplace(|x| x * s);
        }
        Ok(self.push(Op::MulCol(a.0, c.0), v, None))
    }

    pub fn div_col(&mut self, a: Var, c: Var) -> Result<Var, AutodiffError> {
        self.col_broadcast("div_col", a, c)?;
        let mut v = self.nodes[a.0].value.clone();
        for (mut row, s) in v.rows_mut().into_iter().zip(self.nodes[c.0].value.column(0)) {
            row.mapv_inplace(|x| x / s);
        }
        Ok(self.push(Op::DivCol(a.0, c.0), v, None))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes[a.0].value.sum());
        self.push(Op::Sum(a.0), v, None)
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.nodes[a.0].value.nrows();
        let mut v = Array2::zeros((m, 1));
        for (i, row) in self.nodes[a.0].value.rows().into_iter().enumerate() {
            v[[i, 0]] = row.sum();
        }
        self.push(Op::RowSum(a.0), v, None)
    }

    pub fn row_mean(&mut self, a: Var) -> Var {
        let (m, n) = self.nodes[a.0].value.dim();
        let mut v = Array2::zeros((m, 1));
        for (i, row) in self.nodes[a.0].value.rows().into_iter().enumerate() {
            v[[i, 0]] = row.sum() / n as f64;
        }
        self.push(Op::RowMean(a.0), v, None)
    }

    /// Reverse pass from a scalar loss. Adjoints are freshly zeroed, so
    /// repeated calls are deterministic and identical.
    pub fn backward(&self, loss: Var) -> Result<ParamMap, AutodiffError> {
        let dim = self.nodes[loss.0].value.dim();
        if dim != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(dim));
        }
        let mut adj: Vec<Array2<f64>> = self
            .nodes
            .iter()
            .map(|n| Array2::zeros(n.value.dim()))
            .collect();
        adj[loss.0][[0, 0]] = 1.0;

        for idx in (0..=loss.0).rev() {
            let g = adj[idx].clone();
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            match self.nodes[idx].op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    adj[a] += &g;
                    adj[b] += &g;
                }
                Op::Sub(a, b) => {
                    adj[a] += &g;
                    adj[b] -= &g;
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.nodes[b].value;
                    let gb = &g * &self.nodes[a].value;
                    adj[a] += &ga;
                    adj[b] += &gb;
                }
                Op::Div(a, b) => {
                    let ga = &g / &self.nodes[b].value;
                    let gb = -(&g * &self.nodes[idx].value) / &self.nodes[b].value;
                    adj[a] += &ga;
                    adj[b] += &gb;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[b].value.t());
                    let gb = self.nodes[a].value.t().dot(&g);
                    adj[a] += &ga;
                    adj[b] += &gb;
                }
                Op::Transpose(a) => {
                    let ga = g.t().to_owned();
                    adj[a] += &ga;
                }
                Op::Exp(a) => {
                    let ga = &g * &self.nodes[idx].value;
                    adj[a] += &ga;
                }
                Op::Sqrt(a) => {
                    let ga = &g * &self.nodes[idx].value.mapv(|o| 0.5 / o);
                    adj[a] += &ga;
                }
                Op::Tanh(a) => {
                    let ga = &g * &self.nodes[idx].value.mapv(|o| 1.0 - o * o);
                    adj[a] += &ga;
                }
                Op::Sigmoid(a) => {
                    let ga = &g * &self.nodes[idx].value.mapv(|o| o * (1.0 - o));
                    adj[a] += &ga;
                }
                Op::Elu(a) => {
                    let ga = &g
                        * &self.nodes[a]
                            .value
                            .mapv(|x| if x >= 0.0 { 1.0 } else { x.exp() });
                    adj[a] += &ga;
                }
                Op::Neg(a) => {
                    adj[a] -= &g;
                }
                Op::AddScalar(a) => {
                    adj[a] += &g;
                }
                Op::MulScalar(a, c) => {
                    let ga = g.mapv(|x| x * c);
                    adj[a] += &ga;
                }
                Op::ScaleByVar(a, s) => {
                    let sv = self.nodes[s].value[[0, 0]];
                    let ga = g.mapv(|x| x * sv);
                    let gs = (&g * &self.nodes[a].value).sum();
                    adj[a] += &ga;
                    adj[s][[0, 0]] += gs;
                }
                Op::AddRow(a, r) => {
                    adj[a] += &g;
                    let mut gr = adj[r].clone();
                    for (j, col) in g.columns().into_iter().enumerate() {
                        gr[[0, j]] += col.sum();
                    }
                    adj[r] = gr;
                }
                Op::MulRow(a, r) => {
                    let row = self.nodes[r].value.row(0).to_owned();
                    let ga = &g * &row;
                    let prod = &g * &self.nodes[a].value;
                    adj[a] += &ga;
                    let mut gr = adj[r].clone();
                    for (j, col) in prod.columns().into_iter().enumerate() {
                        gr[[0, j]] += col.sum();
                    }
                    adj[r] = gr;
                }
                Op::SubCol(a, c) => {
                    adj[a] += &g;
                    let mut gc = adj[c].clone();
                    for (i, row) in g.rows().into_iter().enumerate() {
                        gc[[i, 0]] -= row.sum();
                    }
                    adj[c] = gc;
                }
                Op::MulCol(a, c) => {
                    let mut ga = g.clone();
                    for (mut row, s) in ga.rows_mut().into_iter().zip(self.nodes[c].value.column(0))
                    {
                        row.mapv_inplace(|x| x * s);
                    }
                    adj[a] += &ga;
                    let prod = &g * &self.nodes[a].value;
                    let mut gc = adj[c].clone();
                    for (i, row) in prod.rows().into_iter().enumerate() {
                        gc[[i, 0]] += row.sum();
                    }
                    adj[c] = gc;
                }
                Op::DivCol(a, c) => {
                    let mut ga = g.clone();
                    for (mut row, s) in ga.rows_mut().into_iter().zip(self.nodes[c].value.column(0))
                    {
                        row.mapv_inplace(|x| x / s);
                    }
                    adj[a] += &ga;
                    let prod = &g * &self.nodes[idx].value;
                    let mut gc = adj[c].clone();
                    for ((i, row), s) in prod
                        .rows()
                        .into_iter()
                        .enumerate()
                        .zip(self.nodes[c].value.column(0))
                    {
                        gc[[i, 0]] -= row.sum() / s;
                    }
                    adj[c] = gc;
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(adj[a].dim(), g[[0, 0]]);
                    adj[a] += &ga;
                }
                Op::RowSum(a) => {
                    let mut ga = Array2::zeros(adj[a].dim());
                    for (mut row, s) in ga.rows_mut().into_iter().zip(g.column(0)) {
                        row.fill(*s);
                    }
                    adj[a] += &ga;
                }
                Op::RowMean(a) => {
                    let n = adj[a].ncols() as f64;
                    let mut ga = Array2::zeros(adj[a].dim());
                    for (mut row, s) in ga.rows_mut().into_iter().zip(g.column(0)) {
                        row.fill(*s / n);
                    }
                    adj[a] += &ga;
                }
            }
        }

        let mut grads = ParamMap::new();
        for (node, a) in self.nodes.iter().zip(adj) {
            if let Some(name) = &node.name {
                grads.insert(name.clone(), a);
            }
        }
        Ok(grads)
    }
}

/// Central finite differences `(f(x+h) - f(x-h)) / 2h` per coordinate.
pub fn finite_difference<F>(f: F, params: &ParamMap, h: f64) -> ParamMap
where
    F: Fn(&ParamMap) -> f64,
{
    let mut grads = ParamMap::new();
    for (name, value) in params {
        let mut g = Array2::zeros(value.dim());
        let mut work = params.clone();
        for idx in 0..value.len() {
            let (r, c) = (idx / value.ncols(), idx % value.ncols());
            let orig = value[[r, c]];
            work.get_mut(name).unwrap()[[r, c]] = orig + h;
            let fp = f(&work);
            work.get_mut(name).unwrap()[[r, c]] = orig - h;
            let fm = f(&work);
            work.get_mut(name).unwrap()[[r, c]] = orig;
            g[[r, c]] = (fp - fm) / (2.0 * h);
        }
        grads.insert(name.clone(), g);
    }
    grads
}

/// Per-parameter comparison of analytic and finite-difference gradients.
#[derive(Debug, Clone)]
pub struct GradRow {
    pub name: String,
    pub analytic: Array2<f64>,
    pub numeric: Array2<f64>,
    pub max_abs_err: f64,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
    pub tolerance: f64,
}

impl GradReport {
    pub fn worst_rel_err(&self) -> f64 {
        self.rows.iter().map(|r| r.max_rel_err).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.max_rel_err <= self.tolerance)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>12} {:>12} {:>6}",
            "parameter", "max_abs_err", "max_rel_err", "ok"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{:<16} {:>12.3e} {:>12.3e} {:>6}",
                r.name,
                r.max_abs_err,
                r.max_rel_err,
                if r.max_rel_err <= self.tolerance {
                    "pass"
                } else {
                    "FAIL"
                }
            )?;
        }
        write!(f, "worst rel err {:.3e} (tol {:.1e})", self.worst_rel_err(), self.tolerance)
    }
}

/// Relative error denominator: `max(|analytic|, |numeric|, 1e-12)`.
pub fn check_gradients<F>(
    f: F,
    analytic: &ParamMap,
    params: &ParamMap,
    h: f64,
    tolerance: f64,
) -> Result<GradReport, AutodiffError>
where
    F: Fn(&ParamMap) -> f64,
{
    let numeric = finite_difference(f, params, h);
    let mut rows = Vec::new();
    for (name, num) in &numeric {
        let ana = analytic
            .get(name)
            .ok_or_else(|| AutodiffError::MissingParam(name.clone()))?;
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        for (a, n) in ana.iter().zip(num.iter()) {
            let abs = (a - n).abs();
            let rel = abs / a.abs().max(n.abs()).max(1e-12);
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(rel);
        }
        rows.push(GradRow {
            name: name.clone(),
            analytic: ana.clone(),
            numeric: num.clone(),
            max_abs_err: max_abs,
            max_rel_err: max_rel,
        });
    }
    Ok(GradReport { rows, tolerance })
}

// ---------------------------------------------------------------------------
// PSLA head: parameter flattening, direct loss, and the taped graph.
// ---------------------------------------------------------------------------

/// Flatten a batch + head into named parameters (vectors become 1 x n rows).
pub fn head_params(batch: &AttentionBatch, head: &HeadConfig) -> ParamMap {
    let mut p = ParamMap::new();
    p.insert("q".into(), batch.q().clone());
    p.insert("k".into(), batch.k().clone());
    p.insert("v".into(), batch.v().clone());
    p.insert(
        "alpha_raw_x".into(),
        Array2::from_elem((1, 1), head.decay.alpha_raw_x),
    );
    p.insert(
        "alpha_raw_y".into(),
        Array2::from_elem((1, 1), head.decay.alpha_raw_y),
    );
    let row = |v: &Array1<f64>| v.clone().insert_axis(ndarray::Axis(0));
    for (prefix, gate) in [("gate_q", &head.gate_q), ("gate_k", &head.gate_k)] {
        if let Some(g) = gate {
            p.insert(format!("{prefix}.w1"), g.w1.clone());
            p.insert(format!("{prefix}.b1"), row(&g.b1));
            p.insert(format!("{prefix}.w2"), g.w2.clone());
            p.insert(format!("{prefix}.b2"), row(&g.b2));
        }
    }
    if let Some(n) = &head.pre_norm {
        p.insert("norm.gamma_q".into(), row(&n.gamma_q));
        p.insert("norm.beta_q".into(), row(&n.beta_q));
        p.insert("norm.gamma_k".into(), row(&n.gamma_k));
        p.insert("norm.beta_k".into(), row(&n.beta_k));
    }
    p
}

fn get<'a>(p: &'a ParamMap, name: &str) -> Result<&'a Array2<f64>, AutodiffError> {
    p.get(name)
        .ok_or_else(|| AutodiffError::MissingParam(name.to_string()))
}

fn col(p: &ParamMap, name: &str) -> Result<Array1<f64>, AutodiffError> {
    Ok(get(p, name)?.row(0).to_owned())
}

/// Rebuild batch + head from a parameter map (template supplies structure
/// and the non-learned constants) and evaluate `sum(psla_rank1(...))`
/// through the production forward path. This is the function the
/// finite-difference oracle perturbs.
pub fn psla_loss_direct(
    params: &ParamMap,
    positions: &[Coord2D],
    template: &HeadConfig,
) -> Result<f64, AutodiffError> {
    let q = get(params, "q")?.clone();
    let k = get(params, "k")?.clone();
    let v = get(params, "v")?.clone();
    let mut head = template.clone();
    head.decay.alpha_raw_x = get(params, "alpha_raw_x")?[[0, 0]];
    head.decay.alpha_raw_y = get(params, "alpha_raw_y")?[[0, 0]];
    for (prefix, slot) in [("gate_q", &mut head.gate_q), ("gate_k", &mut head.gate_k)] {
        if slot.is_some() {
            *slot = Some(GateParams {
                w1: get(params, &format!("{prefix}.w1"))?.clone(),
                b1: col(params, &format!("{prefix}.b1"))?,
                w2: get(params, &format!("{prefix}.w2"))?.clone(),
                b2: col(params, &format!("{prefix}.b2"))?,
            });
        }
    }
    if head.pre_norm.is_some() {
        head.pre_norm = Some(PreMapNorm {
            gamma_q: col(params, "norm.gamma_q")?,
            beta_q: col(params, "norm.beta_q")?,
            gamma_k: col(params, "norm.gamma_k")?,
            beta_k: col(params, "norm.beta_k")?,
        });
    }
    let batch = AttentionBatch::new(q, k, v, positions.to_vec())
        .expect("parameter map holds a consistent batch");
    let out = attention::psla_rank1(&batch, &head).expect("head template is valid");
    Ok(out.sum())
}

struct TapedSide {
    raw: Var,
    gate_prefix: &'static str,
    gamma: &'static str,
    beta: &'static str,
}

/// Build the taped PSLA head loss. Mirrors the production forward pass
/// primitive by primitive.
pub fn psla_loss_taped(
    tape: &mut Tape,
    params: &ParamMap,
    positions: &[Coord2D],
    template: &HeadConfig,
) -> Result<Var, AutodiffError> {
    let q = tape.input("q", get(params, "q")?.clone());
    let k = tape.input("k", get(params, "k")?.clone());
    let v = tape.input("v", get(params, "v")?.clone());
    let l = positions.len();
    let xs = tape.constant(Array2::from_shape_fn((l, 1), |(i, _)| positions[i].x()));
    let ys = tape.constant(Array2::from_shape_fn((l, 1), |(i, _)| positions[i].y()));

    // alpha = alpha_min + span * sigmoid(alpha_raw)
    let span = template.decay.alpha_max - template.decay.alpha_min;
    let alpha = |tape: &mut Tape, name: &str, value: f64| {
        let raw = tape.scalar_input(name, value);
        let s = tape.sigmoid(raw);
        let scaled = tape.mul_scalar(s, span);
        tape.add_scalar(scaled, template.decay.alpha_min)
    };
    let ax = alpha(tape, "alpha_raw_x", template.decay.alpha_raw_x);
    let ay = alpha(tape, "alpha_raw_y", template.decay.alpha_raw_y);

    // signed exponents: d_q = exp(-(ax x + ay y)), d_k = exp(+...)
    let mx = tape.scale_by_var(xs, ax)?;
    let my = tape.scale_by_var(ys, ay)?;
    let expo = tape.add(mx, my)?;
    let neg = tape.neg(expo);
    let d_q = tape.exp(neg);
    let d_k = tape.exp(expo);

    let eps_shift = 1.0 + template.feature_map.epsilon;
    let featurize = |tape: &mut Tape, side: TapedSide| -> Result<Var, AutodiffError> {
        let has_norm = template.pre_norm.is_some();
        let pre = if has_norm {
            let m = tape.row_mean(side.raw);
            let centered = tape.sub_col(side.raw, m)?;
            let sq = tape.mul(centered, centered)?;
            let var = tape.row_mean(sq);
            let shifted = tape.add_scalar(var, attention::NORM_EPS);
            let std = tape.sqrt(shifted);
            let normed = tape.div_col(centered, std)?;
            let gamma = tape.input(side.gamma, get(params, side.gamma)?.clone());
            let beta = tape.input(side.beta, get(params, side.beta)?.clone());
            let scaled = tape.mul_row(normed, gamma)?;
            tape.add_row(scaled, beta)?
        } else {
            side.raw
        };
        let e = tape.elu(pre);
        let mut phi = tape.add_scalar(e, eps_shift);
        let has_gate = match side.gate_prefix {
            "gate_q" => template.gate_q.is_some(),
            _ => template.gate_k.is_some(),
        };
        if has_gate {
            let pf = side.gate_prefix;
            let w1 = tape.input(&format!("{pf}.w1"), get(params, &format!("{pf}.w1"))?.clone());
            let b1 = tape.input(&format!("{pf}.b1"), get(params, &format!("{pf}.b1"))?.clone());
            let w2 = tape.input(&format!("{pf}.w2"), get(params, &format!("{pf}.w2"))?.clone());
            let b2 = tape.input(&format!("{pf}.b2"), get(params, &format!("{pf}.b2"))?.clone());
            let h1 = tape.matmul(side.raw, w1)?;
            let h1b = tape.add_row(h1, b1)?;
            let th = tape.tanh(h1b);
            let h2 = tape.matmul(th, w2)?;
            let h2b = tape.add_row(h2, b2)?;
            let gate = tape.sigmoid(h2b);
            phi = tape.mul(gate, phi)?;
        }
        Ok(phi)
    };

    let phi_q = featurize(
        tape,
        TapedSide { raw: q, gate_prefix: "gate_q", gamma: "norm.gamma_q", beta: "norm.beta_q" },
    )?;
    let phi_k = featurize(
        tape,
        TapedSide { raw: k, gate_prefix: "gate_k", gamma: "norm.gamma_k", beta: "norm.beta_k" },
    )?;

    let q_b = tape.mul_col(phi_q, d_q)?;
    let k_b = tape.mul_col(phi_k, d_k)?;
    let k_t = tape.transpose(k_b);
    let summary = tape.matmul(k_t, v)?;
    let num = tape.matmul(q_b, summary)?;
    let z = tape.row_sum(k_t);
    let den = tape.matmul(q_b, z)?;
    let out = tape.div_col(num, den)?;
    Ok(tape.sum(out))
}

/// End-to-end gradient check of one PSLA head: analytic tape gradients
/// against central differences of the production forward pass.
pub fn psla_grad_check(
    batch: &AttentionBatch,
    head: &HeadConfig,
    h: f64,
    tolerance: f64,
) -> Result<GradReport, AutodiffError> {
    let params = head_params(batch, head);
    let positions = batch.positions().to_vec();
    let mut tape = Tape::new();
    let loss = psla_loss_taped(&mut tape, &params, &positions, head)?;
    let analytic = tape.backward(loss)?;
    let template = head.clone();
    let pos = positions.clone();
    check_gradients(
        move |p| psla_loss_direct(p, &pos, &template).expect("loss evaluation"),
        &analytic,
        &params,
        h,
        tolerance,
    )
}
