use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cmdp_hf::envgen::{generate_cmdp, EnvSpec};
use cmdp_hf::format;
use cmdp_hf::harness::{run_experiment, sweep, RunConfig};
use cmdp_hf::log::check_log_file;
use cmdp_hf::npgpd::SOLVE_TOL;
use cmdp_hf::oracles::constrained_optimum;
use cmdp_hf::Cmdp;

const SCHEMA: &str = include_str!("../../../configs/run_config.schema.json");

#[derive(Parser)]
#[command(
    name = "cmdp-hf",
    version,
    about = "Constrained-MDP primal-dual experiments with simulated evaluator feedback"
)]
struct Cli {
    /// Override the base seed (environment seed for gen-env, algorithm seed
    /// for run and sweep).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory of run and sweep; relative --out
    /// paths of gen-env and solve are resolved against it.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance from an environment spec.
    GenEnv {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve an instance exactly and write the solver report.
    Solve {
        #[arg(long)]
        env: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one algorithm for every seed of a config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Run a config once per panel size.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [16usize, 64, 256])]
        m: Vec<usize>,
    },
    /// Recompute and verify the derived columns of a log.
    CheckLog {
        #[arg(long)]
        csv: PathBuf,
    },
    /// Print the JSON schema of run configs.
    Schema,
}

struct Ctx {
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    quiet: bool,
}

impl Ctx {
    fn note(&self, msg: impl AsRef<str>) {
        if !self.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn output(&self, path: &Path) -> PathBuf {
        match &self.out_dir {
            Some(dir) if path.is_relative() => dir.join(path),
            _ => path.to_path_buf(),
        }
    }

    fn load_config(&self, path: &Path) -> Result<RunConfig> {
        let mut config = RunConfig::load(path)?;
        if let Some(seed) = self.seed {
            config.algo.set_seed(seed);
        }
        if let Some(dir) = &self.out_dir {
            config.out_dir = dir.clone();
        }
        Ok(config)
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    let ctx = Ctx {
        seed: cli.seed,
        out_dir: cli.out_dir,
        quiet: cli.quiet,
    };
    match cli.command {
        Command::GenEnv { spec, out } => {
            let mut spec: EnvSpec = format::read_json(&spec)?;
            if let Some(seed) = ctx.seed {
                spec.seed = seed;
            }
            let cmdp = generate_cmdp(&spec)?;
            let out = ctx.output(&out);
            ensure_parent(&out)?;
            cmdp.save(&out)?;
            ctx.note(format!("wrote {}", out.display()));
        }
        Command::Solve { env, out } => {
            let cmdp = Cmdp::load(&env)?;
            let report = constrained_optimum(&cmdp, SOLVE_TOL)?;
            let out = ctx.output(&out);
            ensure_parent(&out)?;
            format::write_json(&out, &report)?;
            ctx.note(format!(
                "v* constrained {:.6}, unconstrained {:.6}, lambda* {:.6}, slack {:.6}",
                report.v_star_constrained,
                report.v_star_unconstrained,
                report.lambda_star,
                report.slater_slack
            ));
        }
        Command::Run { config } => {
            let config = ctx.load_config(&config)?;
            for path in run_experiment(&config)? {
                ctx.note(format!("wrote {}", path.display()));
            }
        }
        Command::Sweep { config, m } => {
            if m.is_empty() {
                bail!("--m needs at least one panel size");
            }
            let config = ctx.load_config(&config)?;
            let summary = sweep(&config, &m)?;
            for g in &summary.groups {
                ctx.note(format!(
                    "M={:<4} mean final gap {:.6}  mean final violation {:.6}",
                    g.m, g.mean_final_gap_running_avg, g.mean_final_violation_running
                ));
            }
            ctx.note(format!(
                "wrote {}",
                config.out_dir.join("summary.json").display()
            ));
        }
        Command::CheckLog { csv } => {
            let report = check_log_file(&csv)?;
            print!("{}", format::to_json(&report)?);
        }
        Command::Schema => print!("{SCHEMA}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
