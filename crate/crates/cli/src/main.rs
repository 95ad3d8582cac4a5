//! Command-line front end for the agent-training lab.
//!
//! One `--seed` determines every stream in a run; rerunning a command with
//! identical arguments reproduces its outputs byte for byte.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use eef_core::config::{ExperimentConfig, MethodChoice};
use eef_core::env::Split;
use eef_core::eval::{self, EvalMode};
use eef_core::persist;
use eef_core::pipeline::{self, EnvInstance};
use eef_core::rng::derive_seed;

#[derive(Parser)]
#[command(
    name = "eef",
    version,
    about = "Train and evaluate shopping/chain agents with expert-failure mining"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Eef,
    Rft,
    SftAll,
    SftPos,
    Nat,
}

impl From<MethodArg> for MethodChoice {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Eef => MethodChoice::Eef,
            MethodArg::Rft => MethodChoice::Rft,
            MethodArg::SftAll => MethodChoice::SftAll,
            MethodArg::SftPos => MethodChoice::SftPos,
            MethodArg::Nat => MethodChoice::Nat,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the environment and export its catalog and task split.
    GenEnv {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Calibrate the configured experts and export their demonstrations.
    GenExperts {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Run a training method over the configured number of seeds.
    Train {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        /// Simulations per expert trajectory per iteration.
        #[arg(long)]
        m: Option<usize>,
        /// Total iterations, counting the behavior-cloning fit.
        #[arg(long)]
        iters: Option<usize>,
        /// Initial-state rollouts per subtask per iteration.
        #[arg(long)]
        k_initial: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Evaluate a saved checkpoint on a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Navigation-skill statistics over a persisted trajectory file.
    NavStats {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// One-iteration win rates under varying simulation budgets.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        n_seeds: Option<usize>,
        #[arg(long)]
        output_dir: PathBuf,
    },
    /// Aggregate run manifests found under a directory.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output_dir: PathBuf,
    },
}

fn load_config(path: &Option<PathBuf>) -> std::result::Result<ExperimentConfig, ExitCode> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => match ExperimentConfig::load(p) {
            Ok(c) => Ok(c),
            Err(e) => {
                eprintln!("error: cannot load config {}: {e}", p.display());
                eprintln!("usage: pass --config <path> pointing to a key = value file");
                Err(ExitCode::from(2))
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = match &cli.command {
        Command::GenEnv { config, .. }
        | Command::GenExperts { config, .. }
        | Command::Train { config, .. }
        | Command::Eval { config, .. }
        | Command::Sweep { config, .. } => match load_config(config) {
            Ok(c) => Some(c),
            Err(code) => return code,
        },
        _ => None,
    };
    match run(cli.command, config) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command, config: Option<ExperimentConfig>) -> Result<()> {
    match command {
        Command::GenEnv {
            seed, output_dir, ..
        } => {
            let config = config.expect("config loaded");
            let (env, train, test) = pipeline::prepare_env(&config, seed)?;
            write_env_exports(&env, &output_dir)?;
            println!(
                "generated {} world: {} train / {} test tasks -> {}",
                env.kind(),
                train.len(),
                test.len(),
                output_dir.display()
            );
            Ok(())
        }
        Command::GenExperts {
            seed, output_dir, ..
        } => {
            let config = config.expect("config loaded");
            let world = pipeline::prepare_world(&config, seed)?;
            pipeline::write_world(&world, &output_dir)?;
            for expert in &world.experts {
                println!(
                    "expert {}: overlook {:.3}, measured win rate {:.3} ({} / {} positive)",
                    expert.profile.label,
                    expert.profile.p_overlook,
                    expert.dataset.positive_fraction(),
                    expert.dataset.stats.positive,
                    expert.dataset.stats.total,
                );
            }
            Ok(())
        }
        Command::Train {
            method,
            m,
            iters,
            k_initial,
            seed,
            n_seeds,
            output_dir,
            ..
        } => {
            let mut config = config.expect("config loaded");
            if let Some(method) = method {
                config.method = method.into();
            }
            if let Some(m) = m {
                config.eef.simulations_per_expert = m;
            }
            if let Some(iters) = iters {
                config.eef.iterations = iters;
            }
            if let Some(k) = k_initial {
                config.eef.k_initial = k;
            }
            if let Some(n) = n_seeds {
                config.n_seeds = n;
            }
            let (world, runs, report) = pipeline::run_experiment(&config, seed)?;
            pipeline::write_experiment(&world, &runs, &report, &output_dir)?;
            print!(
                "{}",
                std::fs::read_to_string(output_dir.join("report.txt"))
                    .context("reading the report back")?
            );
            Ok(())
        }
        Command::Eval {
            checkpoint,
            split,
            seed,
            output_dir,
            ..
        } => {
            let config = config.expect("config loaded");
            let (mut env, train, test) = pipeline::prepare_env(&config, seed)?;
            let params = persist::load_checkpoint(&checkpoint)?;
            let contexts = match split {
                SplitArg::Train => train,
                SplitArg::Test => test,
            };
            let (win_rate, trajectories) =
                eval::evaluate(&params, env.as_env(), &contexts, EvalMode::Greedy)?;
            let nav = eval::navigation_stats(&trajectories);
            let avg_reward = trajectories.iter().map(|t| t.terminal_reward).sum::<f64>()
                / contexts.len().max(1) as f64;
            #[derive(serde::Serialize)]
            struct EvalSummary {
                split: String,
                contexts: usize,
                win_rate: f64,
                avg_reward: f64,
                navigation: eef_core::eval::NavigationStats,
            }
            let summary = EvalSummary {
                split: match split {
                    SplitArg::Train => Split::Train.to_string(),
                    SplitArg::Test => Split::Test.to_string(),
                },
                contexts: contexts.len(),
                win_rate,
                avg_reward,
                navigation: nav,
            };
            persist::write_json(&summary, &output_dir.join("eval.json"))?;
            persist::persist_dataset(&trajectories, &output_dir.join("eval_trajectories.jsonl"))?;
            println!(
                "{} split: win rate {:.3} over {} contexts (avg reward {:.3})",
                summary.split, win_rate, summary.contexts, avg_reward
            );
            Ok(())
        }
        Command::NavStats { input, output_dir } => {
            let trajectories = persist::load_dataset(&input)?;
            let nav = eval::navigation_stats(&trajectories);
            let table = persist::render_table(
                &["metric", "percent"],
                &[
                    vec!["next_success".into(), format!("{:.1}", nav.next_success_pct)],
                    vec!["back_success".into(), format!("{:.1}", nav.back_success_pct)],
                    vec!["next_attempt".into(), format!("{:.1}", nav.next_attempt_pct)],
                    vec!["back_attempt".into(), format!("{:.1}", nav.back_attempt_pct)],
                ],
            );
            print!("{table}");
            if let Some(dir) = output_dir {
                persist::write_json(&nav, &dir.join("nav_stats.json"))?;
            }
            Ok(())
        }
        Command::Sweep {
            seed,
            n_seeds,
            output_dir,
            ..
        } => {
            let mut config = config.expect("config loaded");
            if let Some(n) = n_seeds {
                config.n_seeds = n;
            }
            let mut world = pipeline::prepare_world(&config, seed)?;
            let seeds: Vec<u64> = (0..config.n_seeds)
                .map(|i| derive_seed(seed, &format!("sweep{i}")))
                .collect();
            let entries = eval::default_sweep_entries();
            let init = eef_core::PolicyParams::zeros();
            let rows = eval::budget_sweep(
                world.env.as_env(),
                &world.train_contexts.clone(),
                &world.test_contexts.clone(),
                &world.dataset.clone(),
                &init,
                &config.eef,
                &config.train,
                &entries,
                &seeds,
            )?;
            let table = persist::render_table(
                &["method", "budget", "rollouts", "win_rate", "sd"],
                &rows
                    .iter()
                    .map(|r| {
                        vec![
                            r.method.clone(),
                            r.budget.to_string(),
                            r.rollouts.to_string(),
                            format!("{:.3}", r.win_rate_mean),
                            format!("{:.3}", r.win_rate_sd),
                        ]
                    })
                    .collect::<Vec<_>>(),
            );
            print!("{table}");
            std::fs::create_dir_all(&output_dir)?;
            std::fs::write(output_dir.join("sweep.txt"), &table)?;
            let mut jsonl = String::new();
            for row in &rows {
                jsonl.push_str(&serde_json::to_string(row)?);
                jsonl.push('\n');
            }
            std::fs::write(output_dir.join("sweep.jsonl"), jsonl)?;
            Ok(())
        }
        Command::Report { input, output_dir } => {
            let manifests = pipeline::collect_manifests(&input)?;
            if manifests.is_empty() {
                anyhow::bail!("no manifest.json files found under {}", input.display());
            }
            let mut by_method: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
            let mut rollouts: std::collections::BTreeMap<String, usize> = Default::default();
            for (_, m) in &manifests {
                by_method
                    .entry(m.method.clone())
                    .or_default()
                    .push(m.final_test_win_rate);
                *rollouts.entry(m.method.clone()).or_default() += m.total_rollouts;
            }
            let mut rows = Vec::new();
            let mut jsonl = String::new();
            for (method, wins) in &by_method {
                let n = wins.len() as f64;
                let mean = wins.iter().sum::<f64>() / n;
                let sd = if wins.len() < 2 {
                    0.0
                } else {
                    (wins.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                };
                rows.push(vec![
                    method.clone(),
                    wins.len().to_string(),
                    format!("{mean:.3}"),
                    format!("{sd:.3}"),
                    rollouts[method].to_string(),
                ]);
                jsonl.push_str(&serde_json::to_string(&serde_json::json!({
                    "method": method,
                    "runs": wins.len(),
                    "win_rate_mean": mean,
                    "win_rate_sd": sd,
                    "total_rollouts": rollouts[method],
                }))?);
                jsonl.push('\n');
            }
            let table =
                persist::render_table(&["method", "runs", "win_rate", "sd", "rollouts"], &rows);
            print!("{table}");
            std::fs::create_dir_all(&output_dir)?;
            std::fs::write(output_dir.join("report.txt"), &table)?;
            std::fs::write(output_dir.join("report.jsonl"), jsonl)?;
            Ok(())
        }
    }
}

fn write_env_exports(env: &EnvInstance, output_dir: &Path) -> Result<()> {
    match env {
        EnvInstance::Shop(shop) => {
            persist::export_catalog(shop, &output_dir.join("world/catalog.jsonl"))?;
            persist::export_shop_tasks(shop, &output_dir.join("world/tasks.jsonl"))?;
        }
        EnvInstance::Chain(chain) => {
            persist::export_chain_tasks(chain, &output_dir.join("world/tasks.jsonl"))?;
        }
    }
    Ok(())
}
