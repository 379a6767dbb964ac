use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gpmpc_bench::pipeline;
use gpmpc_bench::{BenchError, RunConfig, Variant};

#[derive(Parser)]
#[command(name = "gpmpc-bench", version, about = "GP-augmented LPV-MPC quadrotor pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Fly the residual-free controller on a random spline and write the residual dataset.
    Collect(Common),
    /// Train the sparse residual GPs from the dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Inducing points per output (overrides the config).
        #[arg(long)]
        inducing: Option<usize>,
    },
    /// Run the lemniscate benchmark for the configured variants.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Variant tags to run (overrides the config); repeatable.
        #[arg(long = "variant")]
        variants: Vec<Variant>,
    },
    /// Train and benchmark over a list of inducing-point counts.
    SweepInducing(Common),
}

fn load(common: &Common) -> Result<RunConfig, BenchError> {
    let cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    std::fs::create_dir_all(&common.out)
        .map_err(|e| BenchError::Config(format!("cannot create {}: {e}", common.out.display())))?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), BenchError> {
    match cli.command {
        Command::Collect(c) => {
            let cfg = load(&c)?;
            let r = pipeline::collect(&cfg, c.seed, &c.out)?;
            println!("collected {} samples (tracking RMSE {:.1} mm) into {}", r.samples, r.tracking_rmse_mm, c.out.display());
        }
        Command::Train { common, inducing } => {
            let mut cfg = load(&common)?;
            if let Some(m) = inducing {
                cfg.train.inducing = m;
                cfg.validate()?;
            }
            let r = pipeline::train(&cfg, common.seed, &common.out)?;
            println!(
                "trained M={} on {} samples in {:.2} s; model hash {}",
                r.inducing,
                r.samples,
                r.train_time_s,
                r.provenance.model_hash.as_deref().unwrap_or("-")
            );
        }
        Command::Bench { common, variants } => {
            let mut cfg = load(&common)?;
            if !variants.is_empty() {
                cfg.bench.variants = variants;
            }
            let summary = pipeline::bench(&cfg, common.seed, &common.out)?;
            println!("{:<18} {:>10} {:>10} {:>10} {:>9} {:>7}", "variant", "rmse_mm", "xy_mm", "step_ms", "qp_ms", "iters");
            for r in &summary.reports {
                println!(
                    "{:<18} {:>10.2} {:>10.2} {:>10.2} {:>9.2} {:>7.2}",
                    r.variant.to_string(),
                    r.rmse_3d_mm,
                    r.rmse_xy_mm,
                    r.avg_step_time_ms,
                    r.avg_qp_time_ms,
                    r.avg_iterations
                );
            }
        }
        Command::SweepInducing(c) => {
            let cfg = load(&c)?;
            let r = pipeline::sweep_inducing(&cfg, c.seed, &c.out)?;
            println!("{:>3} {:>10} {:>10}", "M", "rmse_mm", "step_ms");
            for row in &r.rows {
                println!("{:>3} {:>10.2} {:>10.3}", row.inducing, row.rmse_3d_mm, row.avg_step_time_ms);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
