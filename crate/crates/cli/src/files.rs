//! File formats owned by the CLI: the attention-run input JSON, placement
//! JSON, and the CSV shapes. All schemas are strict (unknown keys
//! rejected); floats are written in Rust's shortest round-trip form, so
//! every 64-bit value survives a write/read cycle exactly.

use anyhow::{bail, Context, Result};
use ndarray::{Array1, Array2};
use psla_core::attention::{
    AttentionBatch, FeatureMapConfig, GateParams, HeadConfig, PreMapNorm,
};
use psla_core::bench::{BenchRecord, Mechanism};
use psla_core::kernel::{Coord2D, DecayParams};
use psla_core::rl::TrainingLog;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

fn to_array2(name: &str, rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        bail!("{name} must be a non-empty matrix");
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        bail!("{name} has ragged rows");
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), cols), flat).expect("shape checked"))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttnRunFile {
    pub batch: BatchFile,
    pub head: HeadFile,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchFile {
    pub q: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub positions: Vec<Coord2D>,
}

impl BatchFile {
    pub fn to_batch(&self) -> Result<AttentionBatch> {
        AttentionBatch::new(
            to_array2("q", &self.q)?,
            to_array2("k", &self.k)?,
            to_array2("v", &self.v)?,
            self.positions.clone(),
        )
        .context("building attention batch")
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateFile {
    pub w1: Vec<Vec<f64>>,
    pub b1: Vec<f64>,
    pub w2: Vec<Vec<f64>>,
    pub b2: Vec<f64>,
}

impl GateFile {
    fn to_params(&self) -> Result<GateParams> {
        Ok(GateParams {
            w1: to_array2("gate.w1", &self.w1)?,
            b1: Array1::from(self.b1.clone()),
            w2: to_array2("gate.w2", &self.w2)?,
            b2: Array1::from(self.b2.clone()),
        })
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreNormFile {
    pub gamma_q: Vec<f64>,
    pub beta_q: Vec<f64>,
    pub gamma_k: Vec<f64>,
    pub beta_k: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadFile {
    pub decay: DecayParams,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub gate_q: Option<GateFile>,
    #[serde(default)]
    pub gate_k: Option<GateFile>,
    #[serde(default)]
    pub pre_norm: Option<PreNormFile>,
}

fn default_epsilon() -> f64 {
    1e-6
}

impl HeadFile {
    pub fn to_head(&self) -> Result<HeadConfig> {
        let gate = |g: &Option<GateFile>| -> Result<Option<GateParams>> {
            g.as_ref().map(|g| g.to_params()).transpose()
        };
        Ok(HeadConfig {
            decay: self.decay,
            feature_map: FeatureMapConfig::new(self.epsilon)
                .map_err(|e| anyhow::anyhow!("{e}"))?,
            gate_q: gate(&self.gate_q)?,
            gate_k: gate(&self.gate_k)?,
            pre_norm: self.pre_norm.as_ref().map(|n| PreMapNorm {
                gamma_q: Array1::from(n.gamma_q.clone()),
                beta_q: Array1::from(n.beta_q.clone()),
                gamma_k: Array1::from(n.gamma_k.clone()),
                beta_k: Array1::from(n.beta_k.clone()),
            }),
        })
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlacementFile {
    pub cells: Vec<usize>,
}

pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut out = String::new();
    for row in m.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub const BENCH_CSV_HEADER: &str = "mechanism,L,d,reps,median_s,trimmed_mean_s,modeled_bytes";

pub fn write_bench_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.mechanism, r.l, r.d, r.reps, r.median_s, r.trimmed_mean_s, r.modeled_bytes
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchRecord>> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == BENCH_CSV_HEADER => {}
        other => bail!("unexpected bench CSV header: {other:?}"),
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            bail!("line {}: expected 7 fields, got {}", i + 2, fields.len());
        }
        records.push(BenchRecord {
            mechanism: Mechanism::parse(fields[0]).map_err(|e| anyhow::anyhow!("{e}"))?,
            l: fields[1].parse().context("L")?,
            d: fields[2].parse().context("d")?,
            reps: fields[3].parse().context("reps")?,
            median_s: fields[4].parse().context("median_s")?,
            trimmed_mean_s: fields[5].parse().context("trimmed_mean_s")?,
            modeled_bytes: fields[6].parse().context("modeled_bytes")?,
        });
    }
    Ok(records)
}

pub fn write_training_csv(path: &Path, log: &TrainingLog) -> Result<()> {
    let mut out = String::from("episode,mean_return,mean_shaped_return,beta,seconds\n");
    for r in &log.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.episode, r.mean_return, r.mean_shaped_return, r.beta, r.seconds
        ));
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Streaming writer for the per-frequency impedance CSV.
pub struct PdnCsvWriter<W: Write> {
    out: W,
}

impl<W: Write> PdnCsvWriter<W> {
    pub fn new(mut out: W) -> Result<Self> {
        writeln!(out, "f_hz,node_index,d_manhattan,abs_z,re_z,im_z")?;
        Ok(Self { out })
    }

    pub fn row(&mut self, f_hz: f64, node: usize, d_manhattan: usize, z: ZParts) -> Result<()> {
        writeln!(
            self.out,
            "{},{},{},{},{},{}",
            f_hz, node, d_manhattan, z.abs, z.re, z.im
        )?;
        Ok(())
    }
}

/// Magnitude and rectangular parts of one impedance sample.
pub struct ZParts {
    pub abs: f64,
    pub re: f64,
    pub im: f64,
}
