//! Experiment orchestration: world preparation, per-seed runs, manifests,
//! aggregation, and on-disk layout.
//!
//! One base seed determines everything. The world (environment and expert
//! datasets) is derived from the base seed alone and shared across the
//! configured seeds; per-seed streams drive exploration and training, so
//! seed-to-seed variation measures the method, not the benchmark.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{generate_chainworld, ChainWorldEnv};
use crate::config::{EnvChoice, ExperimentConfig, MethodChoice};
use crate::eef::{
    expected_rollouts, run_eef, run_rft, train_offline, EEFConfig, IterationRecord, RunOutcome,
};
use crate::env::{ContextId, EnvKind, Environment};
use crate::error::{Error, Result};
use crate::eval::{evaluate, navigation_stats, EvalMode, NavigationStats};
use crate::expert::{calibrate_profile, generate_expert_dataset, ExpertDataset, ExpertProfile};
use crate::persist;
use crate::policy::{PolicyParams, TrainConfig};
use crate::rng::derive_seed;
use crate::shop::{generate_minishop, MiniShopEnv};
use crate::trajectory::Trajectory;

pub const MANIFEST_SCHEMA: u32 = 1;
pub const REPORT_SCHEMA: u32 = 1;

/// A concrete environment instance of either kind.
#[derive(Debug, Clone)]
pub enum EnvInstance {
    Shop(MiniShopEnv),
    Chain(ChainWorldEnv),
}

impl EnvInstance {
    pub fn as_env(&mut self) -> &mut dyn Environment {
        match self {
            EnvInstance::Shop(e) => e,
            EnvInstance::Chain(e) => e,
        }
    }

    pub fn kind(&self) -> EnvKind {
        match self {
            EnvInstance::Shop(_) => EnvKind::MiniShop,
            EnvInstance::Chain(_) => EnvKind::ChainWorld,
        }
    }
}

/// A calibrated expert with its synthesized demonstrations.
#[derive(Debug, Clone)]
pub struct PreparedExpert {
    pub profile: ExpertProfile,
    pub dataset: ExpertDataset,
}

/// Environment, splits, and expert data, ready to train on.
#[derive(Debug, Clone)]
pub struct PreparedWorld {
    pub env: EnvInstance,
    pub train_contexts: Vec<ContextId>,
    pub test_contexts: Vec<ContextId>,
    pub experts: Vec<PreparedExpert>,
    /// Union of the expert datasets, ids reassigned.
    pub dataset: ExpertDataset,
}

/// Build just the environment and its splits from the base seed.
pub fn prepare_env(
    config: &ExperimentConfig,
    base_seed: u64,
) -> Result<(EnvInstance, Vec<ContextId>, Vec<ContextId>)> {
    let env_seed = derive_seed(base_seed, "env");
    Ok(match &config.env {
        EnvChoice::Shop(shop_cfg) => {
            let cfg = crate::shop::MiniShopConfig {
                seed: env_seed,
                ..shop_cfg.clone()
            };
            let (env, train, test) = generate_minishop(&cfg)?;
            (EnvInstance::Shop(env), train, test)
        }
        EnvChoice::Chain(chain_cfg) => {
            let cfg = crate::chain::ChainWorldConfig {
                seed: env_seed,
                ..chain_cfg.clone()
            };
            let (env, train, test) = generate_chainworld(&cfg)?;
            (EnvInstance::Chain(env), train, test)
        }
    })
}

/// Build the environment and expert datasets from the base seed.
pub fn prepare_world(config: &ExperimentConfig, base_seed: u64) -> Result<PreparedWorld> {
    let (mut env, train_contexts, test_contexts) = prepare_env(config, base_seed)?;

    let mut experts = Vec::with_capacity(config.experts.len());
    for spec in &config.experts {
        let expert_seed = derive_seed(base_seed, &format!("experts/{}", spec.base.label));
        let profile = match spec.target_winrate {
            Some(target) => calibrate_profile(
                env.as_env(),
                &train_contexts,
                &spec.base,
                target,
                spec.tolerance,
                expert_seed,
            )?,
            None => spec.base.clone(),
        };
        let dataset =
            generate_expert_dataset(env.as_env(), &train_contexts, &profile, expert_seed)?;
        experts.push(PreparedExpert { profile, dataset });
    }
    let dataset = experts
        .iter()
        .map(|e| e.dataset.clone())
        .reduce(|a, b| a.merge(b))
        .ok_or_else(|| Error::Config("at least one expert is required".into()))?;

    Ok(PreparedWorld {
        env,
        train_contexts,
        test_contexts,
        experts,
        dataset,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertSummary {
    pub label: String,
    pub p_overlook: f64,
    pub p_recover: f64,
    pub p_attempt_next: f64,
    pub search_quality: f64,
    pub measured_winrate: f64,
    pub total: usize,
    pub positive: usize,
    pub avg_len: f64,
}

impl From<&PreparedExpert> for ExpertSummary {
    fn from(e: &PreparedExpert) -> Self {
        ExpertSummary {
            label: e.profile.label.clone(),
            p_overlook: e.profile.p_overlook,
            p_recover: e.profile.p_recover,
            p_attempt_next: e.profile.p_attempt_next,
            search_quality: e.profile.search_quality,
            measured_winrate: e.dataset.positive_fraction(),
            total: e.dataset.stats.total,
            positive: e.dataset.stats.positive,
            avg_len: e.dataset.stats.avg_len,
        }
    }
}

/// One iteration's bookkeeping plus its evaluation and artifact paths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationManifest {
    #[serde(flatten)]
    pub record: IterationRecord,
    pub test_win_rate: f64,
    pub checkpoint: String,
    pub exploration_dataset: Option<String>,
    pub training_examples: Option<String>,
}

/// The per-seed run manifest: every dataset, selection, and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub method: String,
    pub base_seed: u64,
    pub run_index: usize,
    pub run_seed: u64,
    pub env_kind: String,
    pub n_train: usize,
    pub n_test: usize,
    pub experts: Vec<ExpertSummary>,
    pub iterations: Vec<IterationManifest>,
    pub selected_iteration: usize,
    pub validation_contexts: Vec<usize>,
    pub total_rollouts: usize,
    pub expected_rollouts: usize,
    pub final_test_win_rate: f64,
    pub avg_reward: f64,
    pub navigation: NavigationStats,
}

/// Everything produced by one seed of a method run.
#[derive(Debug, Clone)]
pub struct SeedRun {
    pub manifest: RunManifest,
    pub policies: Vec<PolicyParams>,
    pub explorations: Vec<Vec<Trajectory>>,
    pub training_sets: Vec<Vec<crate::trajectory::TrainingExample>>,
    pub final_eval: Vec<Trajectory>,
}

impl SeedRun {
    pub fn selected_policy(&self) -> &PolicyParams {
        &self.policies[self.manifest.selected_iteration]
    }
}

fn offline_outcome(
    world: &mut PreparedWorld,
    variant: crate::eef::OfflineVariant,
    init: &PolicyParams,
    train_cfg: &TrainConfig,
) -> Result<RunOutcome> {
    let examples = world.dataset.stats.total;
    let policy = train_offline(world.env.as_env(), &world.dataset, variant, init, train_cfg)?;
    let validation = crate::eef::validation_split(&world.train_contexts, train_cfg.seed);
    let (val_wr, _) =
        crate::runner::evaluate_policy(world.env.as_env(), &policy, &validation, 0)?;
    Ok(RunOutcome {
        policies: vec![policy],
        iterations: vec![IterationRecord {
            iteration: 0,
            phase: format!("offline-{variant:?}").to_ascii_lowercase(),
            rollouts: 0,
            initial_rollouts: 0,
            expert_sim_rollouts: 0,
            positives_added: 0,
            repository_size: 0,
            recovery_states: 0,
            examples,
            val_win_rate: val_wr,
        }],
        selected: 0,
        total_rollouts: 0,
        validation_contexts: validation,
        explorations: Vec::new(),
        training_sets: Vec::new(),
        recoveries: Vec::new(),
    })
}

/// Run one seed of the configured method and assemble its manifest.
pub fn run_seed(
    world: &mut PreparedWorld,
    config: &ExperimentConfig,
    base_seed: u64,
    run_index: usize,
) -> Result<SeedRun> {
    let run_seed = derive_seed(base_seed, &format!("run{run_index}"));
    let eef_cfg = EEFConfig {
        seed: run_seed,
        ..config.eef.clone()
    };
    let train_cfg = TrainConfig {
        seed: derive_seed(base_seed, &format!("train{run_index}")),
        ..config.train.clone()
    };
    let init = PolicyParams::zeros();

    let outcome = match config.method {
        MethodChoice::Eef => run_eef(
            world.env.as_env(),
            &world.train_contexts.clone(),
            &world.dataset.clone(),
            &init,
            &eef_cfg,
            &train_cfg,
        )?,
        MethodChoice::Rft => run_rft(
            world.env.as_env(),
            &world.train_contexts.clone(),
            &world.dataset.clone(),
            &init,
            config.rft_samples,
            &eef_cfg,
            &train_cfg,
        )?,
        offline => offline_outcome(
            world,
            offline.offline_variant().expect("offline method"),
            &init,
            &train_cfg,
        )?,
    };

    let expected = match config.method {
        MethodChoice::Eef => expected_rollouts(
            world.train_contexts.len(),
            eef_cfg.k_initial,
            Some(&world.dataset),
            eef_cfg.simulations_per_expert,
            eef_cfg.iterations,
        ),
        MethodChoice::Rft => expected_rollouts(
            world.train_contexts.len(),
            config.rft_samples,
            None,
            eef_cfg.simulations_per_expert,
            eef_cfg.iterations,
        ),
        _ => 0,
    };

    // Per-iteration test curve and the final evaluation.
    let test_contexts = world.test_contexts.clone();
    let mut iterations = Vec::with_capacity(outcome.iterations.len());
    let mut final_eval = Vec::new();
    let mut final_wr = 0.0;
    for (i, record) in outcome.iterations.iter().enumerate() {
        let (test_wr, trajs) = evaluate(
            &outcome.policies[i],
            world.env.as_env(),
            &test_contexts,
            EvalMode::Greedy,
        )?;
        if i == outcome.selected {
            final_eval = trajs;
            final_wr = test_wr;
        }
        iterations.push(IterationManifest {
            record: record.clone(),
            test_win_rate: test_wr,
            checkpoint: format!("checkpoints/iter{i}.txt"),
            exploration_dataset: (i > 0 && !outcome.explorations.is_empty())
                .then(|| format!("datasets/iter{i}_exploration.jsonl")),
            training_examples: (i > 0 && !outcome.training_sets.is_empty())
                .then(|| format!("datasets/iter{i}_examples.json")),
        });
    }
    let avg_reward = final_eval
        .iter()
        .map(|t| t.terminal_reward)
        .sum::<f64>()
        / test_contexts.len().max(1) as f64;
    let navigation = navigation_stats(&final_eval);

    let manifest = RunManifest {
        schema_version: MANIFEST_SCHEMA,
        method: config.method.as_str().to_string(),
        base_seed,
        run_index,
        run_seed,
        env_kind: world.env.kind().to_string(),
        n_train: world.train_contexts.len(),
        n_test: world.test_contexts.len(),
        experts: world.experts.iter().map(ExpertSummary::from).collect(),
        iterations,
        selected_iteration: outcome.selected,
        validation_contexts: outcome.validation_contexts.iter().map(|c| c.id).collect(),
        total_rollouts: outcome.total_rollouts,
        expected_rollouts: expected,
        final_test_win_rate: final_wr,
        avg_reward,
        navigation,
    };

    Ok(SeedRun {
        manifest,
        policies: outcome.policies,
        explorations: outcome.explorations,
        training_sets: outcome.training_sets,
        final_eval,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub run_index: usize,
    pub run_seed: u64,
    pub win_rate: f64,
    pub avg_reward: f64,
    pub total_rollouts: usize,
    pub selected_iteration: usize,
}

/// Aggregate over seeds: means with sample standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub method: String,
    pub base_seed: u64,
    pub n_seeds: usize,
    pub per_seed: Vec<SeedSummary>,
    pub win_rate_mean: f64,
    pub win_rate_sd: f64,
    pub avg_reward_mean: f64,
    pub navigation_mean: NavigationStats,
    pub test_curve_mean: Vec<f64>,
    pub total_rollouts: usize,
}

pub fn aggregate(method: &str, base_seed: u64, runs: &[SeedRun]) -> ExperimentReport {
    let n = runs.len().max(1) as f64;
    let per_seed: Vec<SeedSummary> = runs
        .iter()
        .map(|r| SeedSummary {
            run_index: r.manifest.run_index,
            run_seed: r.manifest.run_seed,
            win_rate: r.manifest.final_test_win_rate,
            avg_reward: r.manifest.avg_reward,
            total_rollouts: r.manifest.total_rollouts,
            selected_iteration: r.manifest.selected_iteration,
        })
        .collect();
    let win_rate_mean = per_seed.iter().map(|s| s.win_rate).sum::<f64>() / n;
    let win_rate_sd = if per_seed.len() < 2 {
        0.0
    } else {
        (per_seed
            .iter()
            .map(|s| (s.win_rate - win_rate_mean).powi(2))
            .sum::<f64>()
            / (per_seed.len() - 1) as f64)
            .sqrt()
    };
    let avg_reward_mean = per_seed.iter().map(|s| s.avg_reward).sum::<f64>() / n;
    let mut navigation_mean = NavigationStats::default();
    for r in runs {
        navigation_mean.next_success_pct += r.manifest.navigation.next_success_pct / n;
        navigation_mean.back_success_pct += r.manifest.navigation.back_success_pct / n;
        navigation_mean.next_attempt_pct += r.manifest.navigation.next_attempt_pct / n;
        navigation_mean.back_attempt_pct += r.manifest.navigation.back_attempt_pct / n;
    }
    let curve_len = runs
        .iter()
        .map(|r| r.manifest.iterations.len())
        .max()
        .unwrap_or(0);
    let mut test_curve_mean = vec![0.0; curve_len];
    for r in runs {
        for (i, it) in r.manifest.iterations.iter().enumerate() {
            test_curve_mean[i] += it.test_win_rate / n;
        }
    }
    ExperimentReport {
        schema_version: REPORT_SCHEMA,
        method: method.to_string(),
        base_seed,
        n_seeds: runs.len(),
        per_seed,
        win_rate_mean,
        win_rate_sd,
        avg_reward_mean,
        navigation_mean,
        test_curve_mean,
        total_rollouts: runs.iter().map(|r| r.manifest.total_rollouts).sum(),
    }
}

/// Run all configured seeds of an experiment (no file output).
pub fn run_experiment(
    config: &ExperimentConfig,
    base_seed: u64,
) -> Result<(PreparedWorld, Vec<SeedRun>, ExperimentReport)> {
    let mut world = prepare_world(config, base_seed)?;
    let mut runs = Vec::with_capacity(config.n_seeds);
    for run_index in 0..config.n_seeds {
        runs.push(run_seed(&mut world, config, base_seed, run_index)?);
    }
    let report = aggregate(config.method.as_str(), base_seed, &runs);
    Ok((world, runs, report))
}

/// Write the full artifact tree for an experiment under `output_dir`.
pub fn write_experiment(
    world: &PreparedWorld,
    runs: &[SeedRun],
    report: &ExperimentReport,
    output_dir: &Path,
) -> Result<()> {
    write_world(world, output_dir)?;
    for run in runs {
        let seed_dir = output_dir.join(format!("seed_{}", run.manifest.run_index));
        persist::write_json(&run.manifest, &seed_dir.join("manifest.json"))?;
        for (i, policy) in run.policies.iter().enumerate() {
            persist::save_checkpoint(
                policy,
                &seed_dir.join(format!("checkpoints/iter{i}.txt")),
            )?;
        }
        for (i, batch) in run.explorations.iter().enumerate() {
            persist::persist_dataset(
                batch,
                &seed_dir.join(format!("datasets/iter{}_exploration.jsonl", i + 1)),
            )?;
        }
        for (i, examples) in run.training_sets.iter().enumerate() {
            persist::write_json(
                examples,
                &seed_dir.join(format!("datasets/iter{}_examples.json", i + 1)),
            )?;
        }
        persist::persist_dataset(&run.final_eval, &seed_dir.join("eval_test.jsonl"))?;
    }
    write_report(report, output_dir)
}

/// Export the world and expert datasets.
pub fn write_world(world: &PreparedWorld, output_dir: &Path) -> Result<()> {
    match &world.env {
        EnvInstance::Shop(env) => {
            persist::export_catalog(env, &output_dir.join("world/catalog.jsonl"))?;
            persist::export_shop_tasks(env, &output_dir.join("world/tasks.jsonl"))?;
        }
        EnvInstance::Chain(env) => {
            persist::export_chain_tasks(env, &output_dir.join("world/tasks.jsonl"))?;
        }
    }
    let summaries: Vec<ExpertSummary> =
        world.experts.iter().map(ExpertSummary::from).collect();
    persist::write_json(&summaries, &output_dir.join("experts/summary.json"))?;
    for expert in &world.experts {
        persist::persist_dataset(
            &expert.dataset.trajectories,
            &output_dir.join(format!("experts/{}.jsonl", expert.profile.label)),
        )?;
    }
    Ok(())
}

/// Report files: an aligned text table plus line-delimited records.
pub fn write_report(report: &ExperimentReport, output_dir: &Path) -> Result<()> {
    let mut rows: Vec<Vec<String>> = report
        .per_seed
        .iter()
        .map(|s| {
            vec![
                report.method.clone(),
                format!("seed {}", s.run_index),
                format!("{:.3}", s.win_rate),
                format!("{:.3}", s.avg_reward),
                format!("{}", s.total_rollouts),
                format!("{}", s.selected_iteration),
            ]
        })
        .collect();
    rows.push(vec![
        report.method.clone(),
        "mean +/- sd".to_string(),
        format!("{:.3} +/- {:.3}", report.win_rate_mean, report.win_rate_sd),
        format!("{:.3}", report.avg_reward_mean),
        format!("{}", report.total_rollouts),
        String::new(),
    ]);
    let table = persist::render_table(
        &["method", "run", "win_rate", "avg_reward", "rollouts", "selected"],
        &rows,
    );
    let path = output_dir.join("report.txt");
    std::fs::create_dir_all(output_dir)
        .map_err(|e| Error::io(output_dir.display().to_string(), e))?;
    std::fs::write(&path, table).map_err(|e| Error::io(path.display().to_string(), e))?;

    let mut jsonl = String::new();
    for s in &report.per_seed {
        jsonl.push_str(&serde_json::to_string(s).expect("summary serializes"));
        jsonl.push('\n');
    }
    jsonl.push_str(&serde_json::to_string(report).expect("report serializes"));
    jsonl.push('\n');
    let path = output_dir.join("report.jsonl");
    std::fs::write(&path, jsonl).map_err(|e| Error::io(path.display().to_string(), e))?;
    persist::write_json(report, &output_dir.join("report.json"))
}

/// Recursively collect run manifests under a directory (for `report`).
pub fn collect_manifests(dir: &Path) -> Result<Vec<(PathBuf, RunManifest)>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(current) = stack.pop() {
        let entries = std::fs::read_dir(&current)
            .map_err(|e| Error::io(current.display().to_string(), e))?;
        let mut paths: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        paths.sort();
        for path in paths {
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().and_then(|n| n.to_str()) == Some("manifest.json") {
                let manifest: RunManifest = persist::read_json(&path)?;
                found.push((path, manifest));
            }
        }
    }
    found.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(found)
}
