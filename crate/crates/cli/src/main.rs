use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rlsgf::harness::{self, Algo, EnvKind, InitKind, RunConfig, TrainOptions, VerifyOptions};

#[derive(Parser)]
#[command(name = "rlsgf", version, about = "Anytime-safe policy optimization for constrained MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy and write metrics, checkpoints and the final parameters.
    Train {
        /// rl-sgf, primal-dual or cpo; overrides the config file.
        #[arg(long)]
        algo: Option<String>,
        /// single-integrator, diff-drive or tabular-test; overrides the config file.
        #[arg(long)]
        env: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Override K.
        #[arg(long)]
        iterations: Option<usize>,
        /// Override N.
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Abort when a step's certificate cannot be met.
        #[arg(long)]
        strict_safety: bool,
        /// Continue the run in --out from its last checkpoint.
        #[arg(long)]
        resume: bool,
    },
    /// Run the built-in correctness suites.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 10_000)]
        starts: usize,
        #[arg(long, default_value_t = 1.0)]
        tol_scale: f64,
        /// Deliberately break the objective sign to check the suites catch it.
        #[arg(long, hide = true)]
        mutate_v0_sign: bool,
    },
    /// Print mean return and percent-safe for one or more run directories.
    Summarize {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
    },
}

fn train(cli: Command) -> Result<()> {
    let Command::Train { algo, env, config, seed, iterations, episodes, out, strict_safety, resume } = cli else {
        unreachable!()
    };
    let workers = harness::workers_from_env()?;
    let opts = TrainOptions { out_dir: out.clone(), workers, stop_after: None };
    let summary = if resume {
        if algo.is_some() || env.is_some() || config.is_some() || seed.is_some() {
            bail!("--resume takes its settings from {}; drop the other options", out.display());
        }
        harness::resume(&opts)?
    } else {
        let mut cfg = match &config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(a) = algo {
            cfg.algo = Algo::parse(&a)?;
        }
        if let Some(e) = env {
            let kind = EnvKind::parse(&e)?;
            if kind == EnvKind::DiffDrive && cfg.env != EnvKind::DiffDrive && config.is_none() {
                cfg.policy.divisions = vec![20, 20, 10];
            }
            if kind == EnvKind::TabularTest && config.is_none() {
                cfg.policy.init = InitKind::Random;
            }
            cfg.env = kind;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(k) = iterations {
            cfg.iterations = k;
        }
        if let Some(n) = episodes {
            cfg.episodes = n;
        }
        cfg.strict_safety |= strict_safety;
        harness::train(&cfg, &opts).with_context(|| format!("run in {}", out.display()))?
    };
    println!(
        "{} iterations; mean return {:.2} over the last {}; {:.2}% of iterates safe",
        summary.iterations_completed, summary.stats.mean_return, summary.stats.window, summary.stats.percent_safe
    );
    println!("final parameters: {}", summary.final_theta_path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        c @ Command::Train { .. } => train(c).map(|_| true),
        Command::Verify { seed, instances, starts, tol_scale, mutate_v0_sign } => {
            let report = harness::run_all(&VerifyOptions { seed, instances, starts, tol_scale, mutate_v0_sign });
            print!("{report}");
            Ok(report.passed())
        }
        Command::Summarize { dirs } => {
            let runs = dirs.iter().map(|d| harness::load_run(d)).collect::<rlsgf::Result<Vec<_>>>()?;
            print!("{}", harness::summary_table(&runs));
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
