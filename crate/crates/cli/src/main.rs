use anyhow::{anyhow, Result};
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

use robvio::commands::{self, EvalArgs};
use robvio::{load, Overrides};
use robvio_core::ba::SolverMode;
use robvio_core::eval::AlignmentKind;
use robvio_core::sim::DynamicLevel;

#[derive(Parser)]
#[command(
    name = "robvio",
    version,
    about = "Robust visual-inertial odometry on synthetic dynamic scenes"
)]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Parameter profile: viode_like or handheld_like.
    #[arg(long)]
    profile: Option<String>,
    /// Scenario preset: static, dynamic, dynamic_follow, temporal_static, e_shape.
    #[arg(long)]
    preset: Option<String>,
    /// baseline_huber or robust_weights.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<SolverMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Dynamic level: none, low, mid, high.
    #[arg(long, value_parser = parse_level)]
    level: Option<DynamicLevel>,
    /// Skip the loop backend.
    #[arg(long)]
    no_loops: bool,
    /// Parallel sweep runs (0 = all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, env = robvio::OUT_ENV, default_value = "robvio_out")]
    out: PathBuf,
}

impl Common {
    fn overrides(&self) -> Overrides {
        Overrides {
            profile: self.profile.clone(),
            preset: self.preset.clone(),
            mode: self.mode,
            seed: self.seed,
            level: self.level,
            no_loops: self.no_loops,
            workers: self.workers,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run odometry and the loop backend on a dataset.
    Run {
        /// Dataset directory; generated from the configuration when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Compute metrics of an estimated trajectory.
    Eval {
        /// Dataset directory supplying ground truth and labels.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run directory supplying the trajectory and logs.
        #[arg(long)]
        run: Option<PathBuf>,
        #[arg(long)]
        gt: Option<PathBuf>,
        #[arg(long)]
        est: Option<PathBuf>,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        hypotheses: Option<PathBuf>,
        /// Trajectory on the dynamic-free level, for the degradation rate.
        #[arg(long)]
        reference: Option<PathBuf>,
        /// se3 or sim3.
        #[arg(long, default_value = "se3", value_parser = parse_alignment)]
        alignment: AlignmentKind,
        #[arg(long, env = robvio::OUT_ENV, default_value = "robvio_out")]
        out: PathBuf,
    },
    /// Run a grid of dynamic levels, modes and seeds.
    Sweep {
        /// Comma-separated levels.
        #[arg(long, value_delimiter = ',', value_parser = parse_level)]
        levels: Option<Vec<DynamicLevel>>,
        /// Comma-separated modes.
        #[arg(long, value_delimiter = ',', value_parser = parse_mode)]
        modes: Option<Vec<SolverMode>>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[command(flatten)]
        common: Common,
    },
}

fn parse_mode(s: &str) -> Result<SolverMode, String> {
    SolverMode::parse(s).ok_or_else(|| format!("unknown mode `{s}`"))
}

fn parse_level(s: &str) -> Result<DynamicLevel, String> {
    DynamicLevel::parse(s).ok_or_else(|| format!("unknown level `{s}`"))
}

fn parse_alignment(s: &str) -> Result<AlignmentKind, String> {
    AlignmentKind::parse(s).ok_or_else(|| format!("unknown alignment `{s}`"))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Generate { common } => {
            let cfg = load(common.config.as_deref(), &common.overrides())?;
            commands::generate(&cfg, &common.out)
        }
        Command::Run { dataset, common } => {
            let cfg = load(common.config.as_deref(), &common.overrides())?;
            commands::run(&cfg, dataset.as_deref(), &common.out)
        }
        Command::Eval {
            dataset,
            run,
            gt,
            est,
            weights,
            labels,
            hypotheses,
            reference,
            alignment,
            out,
        } => {
            let mut args = match (&dataset, &run) {
                (Some(d), Some(r)) => EvalArgs::from_dirs(d, r),
                (None, None) => EvalArgs::default(),
                _ => return Err(anyhow!("--dataset and --run must be given together")),
            };
            if let Some(p) = gt {
                args.ground_truth = p;
            }
            if let Some(p) = est {
                args.estimate = p;
            }
            if dataset.is_none() && (args.ground_truth.as_os_str().is_empty() || args.estimate.as_os_str().is_empty()) {
                return Err(anyhow!("give --gt and --est, or --dataset and --run"));
            }
            args.weights = weights.or(args.weights);
            args.labels = labels.or(args.labels);
            args.hypotheses = hypotheses.or(args.hypotheses);
            args.reference = reference;
            args.alignment = alignment;
            let m = commands::eval(&args, &out)?;
            println!("{}", serde_json::to_string_pretty(&m)?);
            Ok(())
        }
        Command::Sweep {
            levels,
            modes,
            seeds,
            common,
        } => {
            let mut cfg = load(common.config.as_deref(), &common.overrides())?;
            if let Some(l) = levels {
                cfg.sweep.levels = l;
            }
            if let Some(m) = modes {
                cfg.sweep.modes = m;
            }
            if let Some(s) = seeds {
                cfg.sweep.seeds = s;
            }
            cfg.validate()?;
            let result = commands::sweep(&cfg, &common.out)?;
            for s in &result.summary {
                let show = |v: Option<f64>| v.map(|x| format!("{x:.4}")).unwrap_or_else(|| "-".into());
                println!(
                    "{:<5} {:<15} runs {:>2} failed {:>2} median ATE {} median r_d {}",
                    s.level,
                    s.mode,
                    s.runs,
                    s.failures,
                    show(s.median_ate_m),
                    show(s.median_r_d)
                );
            }
            Ok(())
        }
    }
}
