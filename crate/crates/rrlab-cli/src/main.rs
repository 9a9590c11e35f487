//! `rrlab`: build rank-one systems, audit their tower estimates, and sweep
//! the Koopman-combination approximation of a joining's Markov operator.
//!
//! Exit codes: 0 all audits pass, 1 an exact-inequality audit failed
//! (a bug signal, the audited statements are theorems), 2 bad input.

use clap::{Args, Parser, Subcommand};
use rrlab_core::experiments::{
    self, descriptor_from_json, joining_from_json, ExperimentConfig, RunOutput,
};
use rrlab_core::joinings::Joining;
use rrlab_core::rational::parse_rat;
use rrlab_core::system::ConstructionDescriptor;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "rrlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rigidity-condition report per stage (conditions.csv).
    Verify(CommonArgs),
    /// Tower masses per stage (towers.csv).
    Towers(CommonArgs),
    /// Approximation sweep (sweep.csv, combination.json).
    Approx(CommonArgs),
    /// Batch inequality audits (audit.csv).
    Audit(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Builtin name (odometer | rigid-spacered | chacon) or a descriptor
    /// JSON path.
    #[arg(long, default_value = "odometer")]
    system: String,
    /// Builtin name (offdiag-1 | mix-0-3 | productmix-third | product |
    /// twoadic-neg-third) or a joining JSON path.
    #[arg(long)]
    joining: Option<String>,
    #[arg(long, default_value_t = 1)]
    k_min: u32,
    #[arg(long, default_value_t = 5)]
    k_max: u32,
    /// Comma-separated epsilon grid, e.g. "1/2,1/4,1/8".
    #[arg(long, default_value = "1/2,1/4,1/8,1/16,1/32,1/64,1/128,1/256")]
    eps: String,
    /// Witness grid density per level.
    #[arg(long, default_value_t = 8)]
    grid: usize,
    /// Test-family size parameter.
    #[arg(long, default_value_t = 4)]
    tests: usize,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Denominator cap in bits for the construction.
    #[arg(long, default_value_t = 4096)]
    den_cap: u64,
    /// Digit depth for two-adic set pullbacks.
    #[arg(long, default_value_t = 32)]
    digits: u32,
    /// Default max_stage when --system names a builtin.
    #[arg(long, default_value_t = 16)]
    max_stage: u32,
}

fn load_descriptor(spec: &str, max_stage: u32) -> Result<ConstructionDescriptor, String> {
    if let Some(d) = ConstructionDescriptor::builtin(spec, max_stage) {
        return Ok(d);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read descriptor {}: {e}", path.display()))?;
    descriptor_from_json(&text).map_err(|e| e.to_string())
}

fn load_joining(spec: &str) -> Result<Joining, String> {
    if let Some(j) = Joining::builtin(spec) {
        return Ok(j);
    }
    let path = Path::new(spec);
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read joining {}: {e}", path.display()))?;
    joining_from_json(&text).map_err(|e| e.to_string())
}

fn config_from(args: &CommonArgs) -> Result<ExperimentConfig, String> {
    let descriptor = load_descriptor(&args.system, args.max_stage)?;
    let mut cfg = ExperimentConfig::new(descriptor);
    cfg.k_min = args.k_min;
    cfg.k_max = args.k_max;
    cfg.grid = args.grid;
    cfg.tests = args.tests;
    cfg.den_cap_bits = args.den_cap;
    cfg.digits = args.digits;
    cfg.eps_grid = args
        .eps
        .split(',')
        .map(|s| parse_rat(s).map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(spec) = &args.joining {
        cfg.joining = Some(load_joining(spec)?);
    }
    Ok(cfg)
}

fn write_output(out_dir: &Path, output: &RunOutput) -> Result<(), String> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| format!("cannot create {}: {e}", out_dir.display()))?;
    for (name, content) in &output.files {
        let path = out_dir.join(name);
        std::fs::write(&path, content)
            .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
        eprintln!("wrote {}", path.display());
    }
    Ok(())
}

fn run(
    args: &CommonArgs,
    f: impl Fn(&ExperimentConfig) -> Result<RunOutput, experiments::InputError>,
) -> ExitCode {
    let cfg = match config_from(args) {
        Ok(cfg) => cfg,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    match f(&cfg) {
        Ok(output) => {
            if let Err(msg) = write_output(&args.out, &output) {
                eprintln!("error: {msg}");
                return ExitCode::from(2);
            }
            if output.ok {
                ExitCode::SUCCESS
            } else {
                eprintln!("audit failures recorded (see CSV output)");
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match &cli.command {
        Command::Verify(args) => run(args, experiments::run_verify),
        Command::Towers(args) => run(args, experiments::run_towers),
        Command::Approx(args) => run(args, experiments::run_approx),
        Command::Audit(args) => run(args, experiments::run_audit),
    }
}
