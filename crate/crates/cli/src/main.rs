//! `psla`: one entry point for the verification suites, micro-benchmarks,
//! PDN impedance runs, placement-instance generation and evaluation, RL
//! training, and attention forward runs.
//!
//! Exit codes: 0 success, 1 verification failure, 2 usage or config error.
//! All randomness flows from explicit `--seed` flags; generation and
//! training subcommands refuse to run without one.

mod config;
mod files;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use config::ConfigFile;
use files::{PlacementFile, ZParts};
use psla_core::bench::{self, Mechanism};
use psla_core::dpp::{self, DppInstance, Grid};
use psla_core::pdn::{self, MeshPdnSpec};
use psla_core::rl::{self, BaselineKind, ReinforceConfig, ShapingSetup};
use psla_core::shaping::{BetaSchedule, PotentialSpec};
use psla_core::verify;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "psla", version, about = "Manhattan-decay attention and capacitor-placement toolkit")]
struct Cli {
    /// JSON config file supplying defaults (strict schema)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a verification suite and print its pass/fail table
    Verify {
        #[arg(value_enum)]
        suite: Suite,
    },
    /// Attention forward runs
    Attn {
        #[command(subcommand)]
        cmd: AttnCmd,
    },
    /// Frequency sweep of transfer impedance plus the decay-law fit
    Pdn(PdnArgs),
    /// Placement-instance generation, evaluation, and RL training
    Dpp {
        #[command(subcommand)]
        cmd: DppCmd,
    },
    /// Micro-benchmarks of the attention mechanisms
    Bench(BenchArgs),
}

#[derive(Copy, Clone, ValueEnum)]
enum Suite {
    Attn,
    Grad,
    Pbrs,
    Pdn,
    All,
}

#[derive(Subcommand)]
enum AttnCmd {
    /// Read a batch + head JSON file and write the output matrix as CSV
    Run {
        /// Input JSON holding {"batch": ..., "head": ...}
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// softmax | linear | psla_rank1 | psla_symmetric_grid
        #[arg(long, default_value = "psla_rank1")]
        mechanism: String,
        /// WxH, required by psla_symmetric_grid
        #[arg(long)]
        grid: Option<String>,
    },
}

#[derive(Args)]
struct PdnArgs {
    /// Mesh spec JSON; omit to use the config file's mesh section
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Probe node index
    #[arg(long)]
    probe: usize,
    /// Per-frequency impedance CSV destination
    #[arg(long)]
    out_csv: PathBuf,
    /// Decay-fit summary JSON destination
    #[arg(long)]
    out_fit: PathBuf,
}

#[derive(Subcommand)]
enum DppCmd {
    /// Generate a random instance file
    Gen {
        /// Grid as WxH, e.g. 6x6
        #[arg(long)]
        grid: Option<String>,
        /// Number of capacitors to place
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        keep_out_frac: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the terminal reward of a placement on an instance
    Eval {
        #[arg(long)]
        instance: PathBuf,
        /// JSON {"cells": [..]}
        #[arg(long)]
        placement: PathBuf,
    },
    /// REINFORCE training; writes the learning-curve CSV
    Train(TrainArgs),
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: u64,
    /// none | dpp
    #[arg(long, default_value = "none")]
    shaping: String,
    #[arg(long)]
    beta_init: Option<f64>,
    #[arg(long)]
    beta_min: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_rollouts: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(subcommand)]
    sub: Option<BenchSub>,
    /// Comma-separated mechanism list, e.g. softmax,psla_rank1
    #[arg(long)]
    mechanisms: Option<String>,
    /// Comma-separated lengths, e.g. 512,1024,2048
    #[arg(long)]
    lengths: Option<String>,
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum BenchSub {
    /// Fit log-log scaling slopes from a results CSV and print crossovers
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = ConfigFile::load(cli.config.as_deref())?;
    match cli.command {
        Command::Verify { suite } => cmd_verify(suite),
        Command::Attn { cmd } => {
            let AttnCmd::Run { input, out, mechanism, grid } = cmd;
            cmd_attn_run(&input, &out, &mechanism, grid.as_deref())?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Pdn(args) => {
            cmd_pdn(&cfg, args)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Dpp { cmd } => {
            match cmd {
                DppCmd::Gen { grid, k, seed, keep_out_frac, out } => {
                    cmd_dpp_gen(&cfg, grid.as_deref(), k, seed, keep_out_frac, &out)?
                }
                DppCmd::Eval { instance, placement } => cmd_dpp_eval(&instance, &placement)?,
                DppCmd::Train(args) => cmd_dpp_train(&cfg, args)?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench(args) => {
            cmd_bench(&cfg, args)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_verify(suite: Suite) -> Result<ExitCode> {
    if matches!(suite, Suite::Grad | Suite::All) {
        // full per-parameter report for one representative head
        println!("{}\n", verify::representative_grad_report()?);
    }
    let checks = match suite {
        Suite::Attn => verify::attn_suite(),
        Suite::Grad => verify::grad_suite(),
        Suite::Pbrs => verify::pbrs_suite(),
        Suite::Pdn => verify::pdn_suite(),
        Suite::All => verify::all_suites(),
    };
    print!("{}", verify::format_table(&checks));
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        eprintln!("{failed} check(s) failed");
        Ok(ExitCode::from(1))
    } else {
        println!("all {} checks passed", checks.len());
        Ok(ExitCode::SUCCESS)
    }
}

fn parse_grid(s: &str) -> Result<(usize, usize)> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid must look like 6x6, got '{s}'"))?;
    Ok((
        w.trim().parse().context("grid width")?,
        h.trim().parse().context("grid height")?,
    ))
}

fn cmd_attn_run(input: &Path, out: &Path, mechanism: &str, grid: Option<&str>) -> Result<()> {
    let text = std::fs::read_to_string(input)
        .with_context(|| format!("reading {}", input.display()))?;
    let parsed: files::AttnRunFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", input.display()))?;
    let batch = parsed.batch.to_batch()?;
    let head = parsed.head.to_head()?;
    let output = match mechanism {
        "softmax" => psla_core::attention::softmax_attention(&batch),
        "linear" => psla_core::attention::linear_attention(&batch, &head.feature_map),
        "psla_rank1" => psla_core::attention::psla_rank1(&batch, &head)?,
        "psla_symmetric_grid" => {
            let spec = grid.context("--grid WxH is required for psla_symmetric_grid")?;
            let (w, h) = parse_grid(spec)?;
            psla_core::attention::psla_symmetric_grid(&batch, &head, (w, h))?
        }
        other => bail!("unknown mechanism '{other}'"),
    };
    files::write_matrix_csv(out, &output)?;
    println!(
        "wrote {} ({} x {})",
        out.display(),
        output.nrows(),
        output.ncols()
    );
    Ok(())
}

fn cmd_pdn(cfg: &ConfigFile, args: PdnArgs) -> Result<()> {
    let mesh: MeshPdnSpec = match &args.mesh {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => cfg
            .mesh
            .context("no --mesh flag and no mesh section in the config")?,
    };
    mesh.validate()?;
    let band = cfg.band.unwrap_or_default();
    band.validate()?;
    if args.probe >= mesh.nodes() {
        bail!("probe {} out of range for {} nodes", args.probe, mesh.nodes());
    }

    let file = std::fs::File::create(&args.out_csv)
        .with_context(|| format!("creating {}", args.out_csv.display()))?;
    let mut csv = files::PdnCsvWriter::new(std::io::BufWriter::new(file))?;
    for f in band.points() {
        let col = pdn::transfer_column(&mesh, f, args.probe)?;
        for (node, z) in col.iter().enumerate() {
            csv.row(
                f,
                node,
                mesh.hop_distance(node, args.probe),
                ZParts { abs: z.norm(), re: z.re, im: z.im },
            )?;
        }
    }

    let per_frequency: Vec<serde_json::Value> = band
        .points()
        .iter()
        .map(|&f| -> Result<serde_json::Value> {
            let fit = pdn::fit_decay(&mesh, f, args.probe)?;
            Ok(serde_json::json!({ "f_hz": f, "fit": fit }))
        })
        .collect::<Result<_>>()?;
    let f_geo = band.geometric_mean();
    let summary = serde_json::json!({
        "probe": args.probe,
        "geometric_mean": { "f_hz": f_geo, "fit": pdn::fit_decay(&mesh, f_geo, args.probe)? },
        "per_frequency": per_frequency,
    });
    std::fs::write(&args.out_fit, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", args.out_fit.display()))?;
    println!("wrote {} and {}", args.out_csv.display(), args.out_fit.display());
    Ok(())
}

fn cmd_dpp_gen(
    cfg: &ConfigFile,
    grid: Option<&str>,
    k: Option<usize>,
    seed: u64,
    keep_out_frac: Option<f64>,
    out: &Path,
) -> Result<()> {
    let mut gen = cfg.instance_gen.clone().unwrap_or_default();
    if let Some(g) = grid {
        let (w, h) = parse_grid(g)?;
        gen.grid = Grid { width: w, height: h };
    }
    if let Some(k) = k {
        gen.k_caps = k;
    }
    if let Some(f) = keep_out_frac {
        gen.keep_out_frac = f;
    }
    if let Some(band) = cfg.band {
        gen.band = band;
    }
    let instance = dpp::generate_instance(&gen, seed)?;
    std::fs::write(out, serde_json::to_string_pretty(&instance)?)
        .with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn load_instance(path: &Path) -> Result<DppInstance> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let instance: DppInstance =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    instance.validate()?;
    Ok(instance)
}

fn cmd_dpp_eval(instance: &Path, placement: &Path) -> Result<()> {
    let inst = load_instance(instance)?;
    let text = std::fs::read_to_string(placement)
        .with_context(|| format!("reading {}", placement.display()))?;
    let p: PlacementFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", placement.display()))?;
    let reward = inst.reward_for(&p.cells)?;
    println!("{reward}");
    Ok(())
}

fn cmd_dpp_train(cfg: &ConfigFile, args: TrainArgs) -> Result<()> {
    let inst = load_instance(&args.instance)?;
    let rl_defaults = cfg.rl.clone().unwrap_or_default();
    let shaping_defaults = cfg.shaping.clone().unwrap_or_default();
    let episodes = args.episodes.unwrap_or(rl_defaults.episodes);

    let shaping = match args.shaping.as_str() {
        "none" => None,
        "dpp" => {
            let spec = PotentialSpec {
                alpha: args.alpha.unwrap_or(shaping_defaults.alpha),
                lambda: args.lambda.unwrap_or(shaping_defaults.lambda),
                ..PotentialSpec::dpp_default()
            };
            let schedule = BetaSchedule::new(
                args.beta_init.unwrap_or(shaping_defaults.beta_init),
                args.beta_min.unwrap_or(shaping_defaults.beta_min),
                episodes.max(1),
            )?;
            Some(ShapingSetup { spec, schedule })
        }
        other => bail!("unknown shaping '{other}' (expected none | dpp)"),
    };

    let config = ReinforceConfig {
        episodes,
        batch_size: args.batch_size.unwrap_or(rl_defaults.batch_size),
        learning_rate: args.learning_rate.unwrap_or(rl_defaults.learning_rate),
        gamma: args.gamma.unwrap_or(rl_defaults.gamma),
        baseline: BaselineKind::RunningMean,
        shaping,
        seed: args.seed,
        eval_interval: args.eval_interval.unwrap_or(rl_defaults.eval_interval),
        eval_rollouts: args.eval_rollouts.unwrap_or(rl_defaults.eval_rollouts),
    };
    let log = rl::train(&inst, &config)?;
    files::write_training_csv(&args.out, &log)?;
    println!(
        "wrote {} ({} checkpoints, final return {})",
        args.out.display(),
        log.rows.len(),
        log.final_return()
    );
    Ok(())
}

fn cmd_bench(cfg: &ConfigFile, args: BenchArgs) -> Result<()> {
    if let Some(BenchSub::Fit { input }) = args.sub {
        return cmd_bench_fit(&input);
    }
    let defaults = cfg.bench.clone().unwrap_or_default();
    let mechanisms: Vec<Mechanism> = args
        .mechanisms
        .context("--mechanisms is required")?
        .split(',')
        .map(|s| Mechanism::parse(s.trim()).map_err(|e| anyhow::anyhow!("{e}")))
        .collect::<Result<_>>()?;
    let lengths: Vec<usize> = args
        .lengths
        .context("--lengths is required")?
        .split(',')
        .map(|s| s.trim().parse::<usize>().context("length"))
        .collect::<Result<_>>()?;
    if lengths.is_empty() || mechanisms.is_empty() {
        bail!("need at least one mechanism and one length");
    }
    let seed = args.seed.context("--seed is required")?;
    let out = args.out.context("--out is required")?;
    let d = args.d.unwrap_or(defaults.d);
    let reps = args.reps.unwrap_or(defaults.reps);
    let records = bench::run_grid(&mechanisms, &lengths, d, reps, seed)?;
    files::write_bench_csv(&out, &records)?;
    println!("wrote {} ({} records)", out.display(), records.len());
    Ok(())
}

fn cmd_bench_fit(input: &Path) -> Result<()> {
    let records = files::read_bench_csv(input)?;
    let mut mechanisms: Vec<Mechanism> = records.iter().map(|r| r.mechanism).collect();
    mechanisms.dedup();
    mechanisms.sort_by_key(|m| m.as_str());
    mechanisms.dedup();

    let mut fits = serde_json::Map::new();
    for &m in &mechanisms {
        let subset: Vec<_> = records
            .iter()
            .filter(|r| r.mechanism == m)
            .cloned()
            .collect();
        let fit = bench::fit_scaling(&subset)?;
        fits.insert(m.as_str().to_string(), serde_json::to_value(fit)?);
    }

    let mut crossovers = Vec::new();
    for &a in &mechanisms {
        for &b in &mechanisms {
            if a == b {
                continue;
            }
            let ra: Vec<_> = records.iter().filter(|r| r.mechanism == a).cloned().collect();
            let rb: Vec<_> = records.iter().filter(|r| r.mechanism == b).cloned().collect();
            let l_star = bench::find_crossover(&ra, &rb)?;
            crossovers.push(serde_json::json!({
                "baseline": a.as_str(),
                "candidate": b.as_str(),
                "l_star": l_star,
            }));
        }
    }
    let doc = serde_json::json!({ "fits": fits, "crossovers": crossovers });
    println!("{}", serde_json::to_string_pretty(&doc)?);
    Ok(())
}
