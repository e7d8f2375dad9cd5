use std::path::PathBuf;
use std::process::ExitCode;

use bimab_core::bandit::SchedulerKind;
use bimab_core::ppo::checkpoint;
use bimab_core::ActorCritic;
use bimab_harness::bandit_sim::bandit_sim;
use bimab_harness::config::RunConfig;
use bimab_harness::evaluate::{evaluate, PolicyRunner};
use bimab_harness::report::{report_dir, EVAL_FILE, MAX_CORRUPT_FRACTION, REPORT_FILE};
use bimab_harness::trace::FileSink;
use bimab_harness::train::{train, FINAL_CHECKPOINT};
use clap::{Args, Parser, Subcommand};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "bimab", about = "Bandit-scheduled curriculum training for intersection crossing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a policy; writes traces and checkpoints to the output directory.
    Train(Common),
    /// Evaluate a checkpoint over every (task, SV count) cell.
    Eval(Common),
    /// Run the scheduler against the synthetic learner.
    BanditSim(Common),
    /// Summarise the traces in the output directory.
    Report(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// bimab, fixed, random or manual.
    #[arg(long)]
    scheduler: Option<String>,
    /// Training episodes, or evaluation episodes per cell for `eval`.
    #[arg(long)]
    episodes: Option<u64>,
    /// Checkpoint to evaluate; defaults to the final checkpoint in the output directory.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn resolve(c: &Common, eval: bool) -> Result<RunConfig, Failure> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p).map_err(config_err)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out_dir = o.clone();
    }
    if let Some(s) = &c.scheduler {
        cfg.scheduler = s.parse::<SchedulerKind>().map_err(config_err)?;
    }
    if let Some(n) = c.episodes {
        if eval {
            cfg.eval_episodes = usize::try_from(n).map_err(config_err)?;
        } else {
            cfg.t_max = n;
        }
    }
    cfg.validate().map_err(config_err)?;
    Ok(cfg)
}

fn write_config(cfg: &RunConfig) -> Result<(), Failure> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(runtime_err)?;
    let text = cfg.to_toml().map_err(config_err)?;
    std::fs::write(cfg.out_dir.join("config.toml"), text).map_err(runtime_err)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let (common, eval) = match &cli.command {
        Command::Eval(c) => (c, true),
        Command::Train(c) | Command::BanditSim(c) | Command::Report(c) => (c, false),
    };
    let cfg = resolve(common, eval)?;
    if common.print_config {
        print!("{}", cfg.to_toml().map_err(config_err)?);
        return Ok(());
    }
    match cli.command {
        Command::Train(_) => {
            write_config(&cfg)?;
            let mut sink = FileSink::create(&cfg.out_dir).map_err(runtime_err)?;
            let s = train(&cfg, &mut sink, Some(&cfg.out_dir.join("checkpoints"))).map_err(runtime_err)?;
            println!(
                "trained {} episodes ({} successes, {} updates); final checkpoint {}",
                s.episodes,
                s.successes,
                s.updates,
                cfg.out_dir.join("checkpoints").join(FINAL_CHECKPOINT).display()
            );
        }
        Command::Eval(c) => {
            let path = c.checkpoint.clone().unwrap_or_else(|| cfg.out_dir.join("checkpoints").join(FINAL_CHECKPOINT));
            let policy: ActorCritic = checkpoint::load(&path).map_err(config_err)?;
            let runner = PolicyRunner::new(policy, cfg.env.clone(), cfg.mpc.clone()).map_err(config_err)?;
            let (matrix, episodes) =
                evaluate(&runner, cfg.env.n_sv_max, cfg.eval_episodes, cfg.seed).map_err(runtime_err)?;
            std::fs::create_dir_all(&cfg.out_dir).map_err(runtime_err)?;
            let json = serde_json::to_string_pretty(&matrix).map_err(runtime_err)?;
            std::fs::write(cfg.out_dir.join(EVAL_FILE), json).map_err(runtime_err)?;
            let mut lines = String::new();
            for e in &episodes {
                lines += &serde_json::to_string(e).map_err(runtime_err)?;
                lines.push('\n');
            }
            std::fs::write(cfg.out_dir.join("eval_episodes.jsonl"), lines).map_err(runtime_err)?;
            print!("{}", matrix.render());
        }
        Command::BanditSim(_) => {
            write_config(&cfg)?;
            let mut sink = FileSink::create(&cfg.out_dir).map_err(runtime_err)?;
            let s = bandit_sim(
                &cfg.synthetic,
                &cfg.bandit,
                &cfg.env.reward,
                cfg.scheduler,
                cfg.manual_stages.clone(),
                cfg.t_max,
                cfg.seed,
                &mut sink,
            )
            .map_err(runtime_err)?;
            println!("cluster totals {:?}", s.cluster_totals());
            println!("per arm {:?}", s.counts);
        }
        Command::Report(_) => {
            let report = report_dir(&cfg.out_dir).map_err(runtime_err)?;
            if report.corrupt_lines > 0 {
                eprintln!("warning: skipped {} corrupt trace lines of {}", report.corrupt_lines, report.lines);
            }
            let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
            std::fs::write(cfg.out_dir.join(REPORT_FILE), json).map_err(runtime_err)?;
            print!("{}", report.render());
            if report.corrupt_fraction() > MAX_CORRUPT_FRACTION {
                return Err(Failure::Runtime(format!(
                    "{:.1}% of trace lines are corrupt",
                    100.0 * report.corrupt_fraction()
                )));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_RUNTIME)
        }
    }
}
