use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use dsq_cli::output::csv_bytes;
use dsq_cli::{cmd_estimate, cmd_report, cmd_sweep, cmd_train, LadderSpec, Method, RunConfig};

/// Output directory used when neither `--out` nor the config names one.
const OUT_ENV: &str = "DSQ_OUT_DIR";
const DEFAULT_OUT: &str = "runs";

#[derive(Debug, Parser)]
#[command(
    name = "dsq",
    version,
    about = "Quantized-training simulator and cost estimator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory [env: DSQ_OUT_DIR, default: runs].
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// floating-point, fixed, bfp, stashing-fixed, stashing-bfp, or dsq.
    #[arg(long, global = true, value_parser = parse_method)]
    method: Option<Method>,
    /// Static setup as q0,q1,q2,q3 widths.
    #[arg(long, global = true)]
    setup: Option<String>,
    /// Schedule ladder (TOML) for dsq.
    #[arg(long, global = true)]
    ladder: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the toy model and write metrics, summary, and cost row.
    Train,
    /// Print and write the normalized cost table.
    Estimate,
    /// Train and cost every setup of a grid.
    Sweep,
    /// Render roofline and loss-curve SVGs.
    Report,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: dsq_cli::CliError| e.to_string())
}

fn apply_flags(cli: &Cli, cfg: &mut RunConfig) -> anyhow::Result<()> {
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(m) = cli.method {
        cfg.method = Some(m);
        cfg.sweep.method = Some(m);
        cfg.setup = None;
        cfg.ladder = None;
    }
    if let Some(s) = &cli.setup {
        cfg.setup = Some(s.clone());
    }
    if let Some(p) = &cli.ladder {
        cfg.ladder = Some(LadderSpec::load(p)?);
    }
    Ok(())
}

fn out_dir(cli: &Cli, cfg: &RunConfig) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn print_csv(rows: &[dsq_cli::Row]) -> anyhow::Result<()> {
    std::io::stdout().write_all(&csv_bytes(rows)?)?;
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    apply_flags(cli, &mut cfg)?;
    let out = out_dir(cli, &cfg);
    let out: &Path = &out;
    match cli.command {
        Command::Train => {
            let o = cmd_train(&cfg, out)?;
            print_csv(&o.rows)?;
            eprintln!("wrote {}", out.display());
        }
        Command::Estimate => print_csv(&cmd_estimate(&cfg, Some(out))?)?,
        Command::Sweep => print_csv(&cmd_sweep(&cfg, Some(out))?)?,
        Command::Report => {
            let r = cmd_report(&cfg, out)?;
            for f in &r.files {
                eprintln!("wrote {}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
