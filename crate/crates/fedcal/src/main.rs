//! Command-line front end: run experiments, sweeps, ablations, partition
//! inspection, and the oracle self-check suite.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedcal::error::Error;
use fedcal::harness::{
    ablate, final_rows, partition_stats, run_experiment, sweep, AblateMode, DatasetConfig,
    ExperimentConfig, Method,
};
use fedcal::verify::run_all;

#[derive(Parser)]
#[command(
    name = "fedcal",
    version,
    about = "Deterministic federated-learning calibration simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a single experiment and write metrics.csv / reliability.json /
    /// checkpoint.json / manifest.json
    Run(ConfigArgs),
    /// Print per-client shard statistics for the configured partition
    Partition(ConfigArgs),
    /// Run the (beta x seed) grid and write sweep_summary.csv
    Sweep(SweepArgs),
    /// Ablation studies: weight matching on/off, scaler width, lambda sweep
    Ablate(AblateArgs),
    /// Run the oracle self-check suites
    Verify(VerifyArgs),
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON experiment config; built-in defaults apply when omitted
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override
    #[arg(long)]
    seed: Option<u64>,
    /// Dirichlet concentration override
    #[arg(long)]
    beta: Option<f64>,
    /// Comma-separated methods (uncal,val_ts,ens,avgt,lrts,fedcal,fedcal_no_wm,fedcal_small)
    #[arg(long)]
    methods: Option<String>,
    /// Output directory override
    #[arg(long)]
    out: Option<PathBuf>,
    /// IDX image file (switches the dataset source; requires --idx-labels)
    #[arg(long)]
    idx_images: Option<PathBuf>,
    /// IDX label file
    #[arg(long)]
    idx_labels: Option<PathBuf>,
    /// ECE bin count override
    #[arg(long)]
    bins: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Comma-separated Dirichlet betas, e.g. 1,0.5,0.3,0.1
    #[arg(long)]
    betas: String,
    /// Comma-separated master seeds, e.g. 1,2,3
    #[arg(long)]
    seeds: String,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// wm | width | lambda
    #[arg(long)]
    mode: String,
    /// Comma-separated seeds
    #[arg(long, default_value = "1,2,3")]
    seeds: String,
    /// Widths for --mode width
    #[arg(long, default_value = "64,8")]
    widths: String,
    /// Grid size for --mode lambda
    #[arg(long, default_value_t = 11)]
    lambda_points: usize,
}

#[derive(Args)]
struct VerifyArgs {
    /// Run the full-scale checks instead of the quick suite
    #[arg(long)]
    full: bool,
}

fn resolve_config(args: &ConfigArgs) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(beta) = args.beta {
        cfg.partition.beta = beta;
    }
    if let Some(methods) = &args.methods {
        cfg.methods = methods
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| Method::parse(s.trim()))
            .collect::<Result<Vec<_>, _>>()?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    match (&args.idx_images, &args.idx_labels) {
        (Some(images), Some(labels)) => {
            cfg.dataset = DatasetConfig::Idx { images: images.clone(), labels: labels.clone() };
        }
        (None, None) => {}
        _ => {
            return Err(Error::Config(
                "--idx-images and --idx-labels must be given together".into(),
            ));
        }
    }
    if let Some(bins) = args.bins {
        cfg.bins = bins;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>, Error> {
    text.split(',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Config(format!("bad {what} entry '{s}'")))
        })
        .collect()
}

fn pct(fraction: f64) -> String {
    format!("{:.2}", fraction * 100.0)
}

fn execute(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Run(args) => {
            let cfg = resolve_config(&args)?;
            let out = run_experiment(&cfg)?;
            println!(
                "run complete: beta={} seed={} -> {}",
                cfg.partition.beta,
                cfg.seed,
                out.out_dir.display()
            );
            println!(
                "{:<14} {:>9} {:>12} {:>11} {:>8} {:>8}",
                "method", "ece %", "mean loc %", "max loc %", "top1 %", "top3 %"
            );
            for row in final_rows(&out.rows) {
                println!(
                    "{:<14} {:>9} {:>12} {:>11} {:>8} {:>8}",
                    row.method,
                    pct(row.global_ece),
                    pct(row.mean_local_ece),
                    pct(row.max_local_ece),
                    pct(row.top1),
                    pct(row.top3)
                );
            }
            for w in &out.manifest.warnings {
                eprintln!("warning: {w}");
            }
            Ok(())
        }
        Command::Partition(args) => {
            let cfg = resolve_config(&args)?;
            let stats = partition_stats(&cfg)?;
            println!(
                "clients={} beta={} seed={}",
                stats.len(),
                cfg.partition.beta,
                cfg.seed
            );
            println!("{:<8} {:>7} {:>5}  histogram", "client", "train", "val");
            for s in &stats {
                println!(
                    "{:<8} {:>7} {:>5}  {:?}",
                    s.client_id, s.train_samples, s.validation_samples, s.class_histogram
                );
            }
            Ok(())
        }
        Command::Sweep(args) => {
            let cfg = resolve_config(&args.config)?;
            let betas: Vec<f64> = parse_list(&args.betas, "beta")?;
            let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
            let summary = sweep(&cfg, &betas, &seeds)?;
            println!(
                "{:<7} {:<14} {:>12} {:>11} {:>8} {:>9}",
                "beta", "method", "mean ece %", "std ece %", "top1 %", "reduction"
            );
            for row in &summary {
                println!(
                    "{:<7} {:<14} {:>12} {:>11} {:>8} {:>9}",
                    row.beta,
                    row.method,
                    pct(row.mean_global_ece),
                    pct(row.std_global_ece),
                    pct(row.mean_top1),
                    row.rel_reduction_vs_best_baseline
                        .map(|r| format!("{:.1}%", r * 100.0))
                        .unwrap_or_default()
                );
            }
            println!(
                "summary written to {}",
                cfg.out_dir.join("sweep_summary.csv").display()
            );
            Ok(())
        }
        Command::Ablate(args) => {
            let cfg = resolve_config(&args.config)?;
            let seeds: Vec<u64> = parse_list(&args.seeds, "seed")?;
            let mode = match args.mode.as_str() {
                "wm" => AblateMode::WeightMatching,
                "width" => AblateMode::Width(parse_list(&args.widths, "width")?),
                "lambda" => AblateMode::Lambda { grid_points: args.lambda_points },
                other => return Err(Error::Config(format!("unknown ablation mode '{other}'"))),
            };
            let rows = ablate(&cfg, &mode, &seeds)?;
            println!(
                "{:<6} {:<12} {:>7} {:>9} {:>11}",
                "seed", "variant", "lambda", "ece %", "mean loc %"
            );
            for row in &rows {
                println!(
                    "{:<6} {:<12} {:>7} {:>9} {:>11}",
                    row.seed,
                    row.variant,
                    row.lambda.map(|l| format!("{l:.1}")).unwrap_or_default(),
                    pct(row.global_ece),
                    pct(row.mean_local_ece)
                );
            }
            Ok(())
        }
        Command::Verify(args) => {
            let results = run_all(!args.full)?;
            let mut failed = 0;
            for r in &results {
                let status = if r.passed { "PASS" } else { "FAIL" };
                println!("{status}  {:<32} {}", r.name, r.detail);
                if !r.passed {
                    failed += 1;
                }
            }
            if failed > 0 {
                return Err(Error::Usage(format!("{failed} checks failed")));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
