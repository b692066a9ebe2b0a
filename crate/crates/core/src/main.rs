use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};

use robust_swipt::config::RunConfig;
use robust_swipt::eh::{phi, psi, theta};
use robust_swipt::experiments::{
    run_convergence_trace, run_csi_comparison, run_tradeoff_sweep, write_cells, write_convergence, write_manifest,
    write_paired, write_rows, ModelKind,
};
use robust_swipt::network::watt_to_dbm;
use robust_swipt::optimizer::{grid_search, SolveResult};
use robust_swipt::robust::validate_solution;
use robust_swipt::sdp::Status;
use robust_swipt::{Error, Result};

const EXIT_ERROR: u8 = 1;
const EXIT_INFEASIBLE: u8 = 2;
const EXIT_PARTIAL: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Caps the worker pool when --threads is not given.
const THREADS_ENV: &str = "ROBUST_SWIPT_THREADS";

#[derive(Parser)]
#[command(name = "robust-swipt", version, about = "Robust SWIPT beamforming for MISO cognitive radio")]
struct Cli {
    /// TOML config; built-in defaults when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (default: ROBUST_SWIPT_THREADS, else all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args, Clone)]
struct InstanceArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// SINR target in dB; `-inf` drops the SINR constraint.
    #[arg(long, allow_hyphen_values = true, value_parser = parse_db)]
    gamma_db: Option<f64>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Solve with the uncertainty radii set to zero.
    #[arg(long)]
    perfect_csi: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Model1,
    Model2,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    /// Weight/SINR tradeoff over the configured models and CSI modes.
    Tradeoff,
    /// Both models under both CSI modes on paired draws.
    Comparison,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance and print the result.
    Solve(InstanceArgs),
    /// Monte Carlo sweep written as CSV plus a manifest.
    Sweep {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "tradeoff")]
        kind: SweepKind,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        /// Fill wall_time_ms (rows are then no longer reproducible byte for byte).
        #[arg(long)]
        timing: bool,
    },
    /// Solve one instance and check it against the worst-case channels.
    Validate {
        #[command(flatten)]
        instance: InstanceArgs,
        /// Boundary samples per uncertainty ball; 0 keeps only the exact check.
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        /// Scale the solved covariance by this factor before validating.
        #[arg(long)]
        corrupt_scale: Option<f64>,
    },
    /// Objective traces of the selected grid point over many seeds.
    Convergence {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 50)]
        seeds: u64,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.1, 0.5, 0.9])]
        alphas: Vec<f64>,
    },
}

fn parse_db(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "-inf" | "-infinity" => Ok(f64::NEG_INFINITY),
        t => t.parse::<f64>().map_err(|e| e.to_string()).and_then(|x| {
            if x.is_finite() {
                Ok(x)
            } else {
                Err(format!("invalid dB value {s}"))
            }
        }),
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn apply(cfg: &mut RunConfig, a: &InstanceArgs) -> Result<()> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(x) = a.alpha {
        cfg.algorithm.alpha = x;
    }
    if let Some(g) = a.gamma_db {
        cfg.powers.gamma_db = g;
    }
    if let Some(m) = a.model {
        cfg.model = match m {
            ModelArg::Model1 => ModelKind::Model1,
            ModelArg::Model2 => ModelKind::Model2,
        };
    }
    if a.perfect_csi {
        cfg.radii = robust_swipt::network::UncertaintyRadii::zero();
    }
    cfg.validate()
}

fn solve_one(cfg: &RunConfig) -> Result<SolveResult> {
    let inst = cfg.instance()?;
    info!("instance digest {}", inst.channel_digest());
    grid_search(&inst, &cfg.algorithm, &cfg.eh_model())
}

fn dbm(w: f64) -> String {
    watt_to_dbm(w).map(|d| format!("{d:.3} dBm")).unwrap_or_else(|_| "-inf dBm".into())
}

fn print_result(cfg: &RunConfig, r: &SolveResult) {
    println!("status: {}", r.status.as_str());
    println!("objective: {:.9e} W", r.objective);
    println!("trace_w: {:.6} mW ({})", r.trace_w * 1e3, dbm(r.trace_w));
    let tau: Vec<String> = r.tau_star.iter().map(|t| format!("{:.4}", t * 1e3)).collect();
    println!("targets: [{}] mW", tau.join(", "));
    for (k, h) in r.harvested.iter().enumerate() {
        let p = h.received;
        let extra = match cfg.model {
            ModelKind::Model1 => format!("phi {:.6} mW", phi(p, &cfg.model1) * 1e3),
            ModelKind::Model2 => format!("theta {:.6} mW", theta(p, &cfg.model2) * 1e3),
        };
        println!(
            "ehr {k}: received {:.6} mW, harvested {:.6} mW (psi {:.6} mW, {extra}), worst-case harvested {:.6} mW",
            p * 1e3,
            h.harvested * 1e3,
            psi(p, &cfg.model1) * 1e3,
            r.harvested_worst[k].harvested * 1e3
        );
    }
    println!("harvested_total: {:.6} mW", r.harvested_total() * 1e3);
    println!("iterations: {}", r.iterations);
    println!("rank_ratio: {:.3e}", r.rank_ratio);
}

fn status_exit(s: Status) -> u8 {
    match s {
        Status::Optimal => 0,
        Status::Infeasible => EXIT_INFEASIBLE,
        _ => EXIT_ERROR,
    }
}

fn cmd_solve(mut cfg: RunConfig, a: &InstanceArgs) -> Result<u8> {
    apply(&mut cfg, a)?;
    let r = solve_one(&cfg)?;
    print_result(&cfg, &r);
    Ok(status_exit(r.status))
}

fn cmd_validate(mut cfg: RunConfig, a: &InstanceArgs, samples: usize, corrupt: Option<f64>) -> Result<u8> {
    apply(&mut cfg, a)?;
    let inst = cfg.instance()?;
    let r = grid_search(&inst, &cfg.algorithm, &cfg.eh_model())?;
    println!("status: {}", r.status.as_str());
    if !r.is_optimal() {
        return Ok(status_exit(r.status));
    }
    let w = match corrupt {
        Some(s) if !(s.is_finite() && s >= 0.0) => {
            return Err(Error::OutOfRange { what: "corrupt-scale", value: s });
        }
        Some(s) => {
            warn!("validating W scaled by {s}");
            r.w.scaled(s)
        }
        None => r.w.clone(),
    };
    let report = validate_solution(&w, r.slacks.as_ref(), &inst, &r.thresholds, samples, cfg.seed)?;
    print!("{}", report.to_text());
    Ok(if report.passed() { 0 } else { EXIT_VALIDATION })
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create output directory {}: {e}", dir.display())))
}

fn cmd_sweep(mut cfg: RunConfig, kind: SweepKind, out: &Path, n: Option<usize>, seed: Option<u64>, timing: bool) -> Result<u8> {
    if let Some(n) = n {
        cfg.sweep.realizations = n;
    }
    if let Some(s) = seed {
        cfg.sweep.base_seed = s;
    }
    cfg.sweep.timing |= timing;
    cfg.validate()?;
    ensure_dir(out)?;
    let sc = cfg.scenario();
    let mut files = Vec::new();
    let table = match kind {
        SweepKind::Tradeoff => run_tradeoff_sweep(&sc, &cfg.sweep)?,
        SweepKind::Comparison => {
            let c = run_csi_comparison(&sc, &cfg.sweep)?;
            let p = out.join("paired.csv");
            files.push((p.clone(), write_paired(&p, &c.paired)?));
            c.table
        }
    };
    let p = out.join("rows.csv");
    files.insert(0, (p.clone(), write_rows(&p, &table.rows)?));
    let p = out.join("cells.csv");
    files.insert(1, (p.clone(), write_cells(&p, &table.cells)?));
    write_manifest(&out.join("manifest.txt"), &cfg.to_toml()?, cfg.sweep.base_seed, &files)?;
    let flagged = table.flagged_cells().len();
    println!("rows: {}, cells: {}, cells without a feasible realization: {flagged}", table.rows.len(), table.cells.len());
    Ok(if flagged == 0 { 0 } else { EXIT_PARTIAL })
}

fn cmd_convergence(cfg: RunConfig, out: &Path, seeds: u64, alphas: &[f64]) -> Result<u8> {
    ensure_dir(out)?;
    let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
    let t = run_convergence_trace(&cfg.scenario(), &seed_list, alphas, cfg.powers.gamma_db, cfg.model)?;
    let p = out.join("convergence.csv");
    let n = write_convergence(&p, &t.rows)?;
    write_manifest(&out.join("manifest.txt"), &cfg.to_toml()?, cfg.seed, &[(p, n)])?;
    for (a, s, st) in &t.failed {
        warn!("alpha {a} seed {s}: {st}");
    }
    match t.median_iterations() {
        Some(m) => println!("runs: {}, median iterations: {m}, failed: {}", t.iterations.len(), t.failed.len()),
        None => {
            println!("no optimal run");
            return Ok(EXIT_INFEASIBLE);
        }
    }
    Ok(if t.failed.is_empty() { 0 } else { EXIT_PARTIAL })
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = thread_count(cli.threads)? {
        if n == 0 {
            return Err(Error::Config("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    let cfg = load_config(cli.config.as_deref())?;
    match &cli.cmd {
        Command::Solve(a) => cmd_solve(cfg, a),
        Command::Validate { instance, samples, corrupt_scale } => cmd_validate(cfg, instance, *samples, *corrupt_scale),
        Command::Sweep { out, kind, realizations, base_seed, timing } => {
            cmd_sweep(cfg, *kind, out, *realizations, *base_seed, *timing)
        }
        Command::Convergence { out, seeds, alphas } => cmd_convergence(cfg, out, *seeds, alphas),
    }
}

fn main() -> ExitCode {
    // clap's own usage exit code would collide with "infeasible"
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}
