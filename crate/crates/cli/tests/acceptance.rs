//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its measurements. Criteria 5-9 share the reference study: the
//! default MiniShop world (40 train / 20 test tasks), a strong expert
//! calibrated to a 0.356 win rate, five seeds.

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use eef_core::config::{ExperimentConfig, MethodChoice};
use eef_core::eef::{need_recover_state, select_expert_states};
use eef_core::env::{ActionToken, ContextId, Environment, Split};
use eef_core::eval::{budget_sweep, SweepEntry};
use eef_core::expert::{calibrate_profile, generate_expert_dataset, ExpertProfile};
use eef_core::pipeline::{self, EnvInstance, SeedRun};
use eef_core::policy::{grad_masked_sft, masked_sft_loss, PolicyParams};
use eef_core::rng::stream;
use eef_core::shop::DifficultyTag;
use eef_core::trajectory::{
    Origin, Provenance, Trajectory, TrajectoryRepository, TrajectoryStart, TrajectoryStep,
};
use eef_core::{generate_minishop, DifficultyTag as Tag, MiniShopConfig};

const BASE_SEED: u64 = 4;
const N_SEEDS: usize = 5;

// ---------------------------------------------------------------------------
// Shared reference study
// ---------------------------------------------------------------------------

struct Reference {
    eef: Vec<SeedRun>,
    rft6: Vec<SeedRun>,
    rft1: Vec<SeedRun>,
    sft_pos: Vec<SeedRun>,
    /// Tag of every test task, indexed by context id.
    test_tags: BTreeMap<usize, DifficultyTag>,
}

fn run_method(method: MethodChoice, experts: bool) -> (Vec<SeedRun>, BTreeMap<usize, DifficultyTag>) {
    let mut config = if experts {
        ExperimentConfig::reference_two_expert()
    } else {
        ExperimentConfig::default()
    };
    config.method = method;
    config.n_seeds = N_SEEDS;
    let (world, runs, _) = pipeline::run_experiment(&config, BASE_SEED).expect("reference run");
    let tags = match &world.env {
        EnvInstance::Shop(env) => env
            .tasks()
            .iter()
            .filter(|t| t.split == Split::Test)
            .map(|t| (t.task_id, t.primary_tag()))
            .collect(),
        _ => BTreeMap::new(),
    };
    (runs, tags)
}

fn reference() -> &'static Reference {
    static REF: OnceLock<Reference> = OnceLock::new();
    REF.get_or_init(|| {
        let (eef, test_tags) = run_method(MethodChoice::Eef, false);
        let (rft6, _) = run_method(MethodChoice::Rft, false);
        let (sft_pos, _) = run_method(MethodChoice::SftPos, false);
        let mut rft1_config = ExperimentConfig::default();
        rft1_config.method = MethodChoice::Rft;
        rft1_config.rft_samples = 1;
        rft1_config.n_seeds = N_SEEDS;
        let (_, rft1, _) =
            pipeline::run_experiment(&rft1_config, BASE_SEED).expect("rft run");
        Reference {
            eef,
            rft6,
            rft1,
            sft_pos,
            test_tags,
        }
    })
}

fn mean_win(runs: &[SeedRun]) -> f64 {
    runs.iter()
        .map(|r| r.manifest.final_test_win_rate)
        .sum::<f64>()
        / runs.len() as f64
}

fn mean_nav(runs: &[SeedRun]) -> (f64, f64) {
    let n = runs.len() as f64;
    (
        runs.iter()
            .map(|r| r.manifest.navigation.next_success_pct)
            .sum::<f64>()
            / n,
        runs.iter()
            .map(|r| r.manifest.navigation.back_success_pct)
            .sum::<f64>()
            / n,
    )
}

fn tag_solve_rate(runs: &[SeedRun], tags: &BTreeMap<usize, DifficultyTag>, tag: DifficultyTag) -> f64 {
    let mut solved = 0usize;
    let mut total = 0usize;
    for run in runs {
        for traj in &run.final_eval {
            if tags.get(&traj.start.context.id) == Some(&tag) {
                total += 1;
                if traj.is_positive() {
                    solved += 1;
                }
            }
        }
    }
    solved as f64 / total.max(1) as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: selection oracles vs brute force
// ---------------------------------------------------------------------------

fn stub_trajectory(id: u64, n_actions: usize, fp_base: u64, expert_prefix: usize) -> Trajectory {
    let steps = (0..n_actions)
        .map(|i| TrajectoryStep {
            fingerprint: fp_base + i as u64,
            snapshot: None,
            observation: format!("obs {i}"),
            candidates: vec![ActionToken::new("a"), ActionToken::new("b")],
            action: ActionToken::new(if i % 2 == 0 { "a" } else { "b" }),
            provenance: if i < expert_prefix {
                Provenance::Expert("strong".into())
            } else {
                Provenance::Policy(1)
            },
        })
        .collect();
    Trajectory {
        id,
        start: TrajectoryStart {
            context: ContextId {
                id: (id % 7) as usize,
                split: Split::Train,
            },
            origin: Origin::Initial,
        },
        steps,
        terminal_reward: 1.0,
        final_fingerprint: fp_base + 10_000,
    }
}

#[test]
fn criterion_1_selection_oracles() {
    let started = Instant::now();
    let mut rng = stream(101, "acceptance/selection");
    let mut checked = 0usize;

    // select_expert_states: exhaustive over the stated ranges.
    for n_actions in 0..60 {
        let traj = stub_trajectory(1, n_actions, 0, n_actions);
        let n_states = n_actions + 1;
        for m in 1..=10 {
            let got = select_expert_states(&traj, m);
            let spacing = n_states / (m + 1);
            let expected: Vec<usize> = if spacing >= 1 {
                (1..=m).map(|k| k * spacing).collect()
            } else {
                (1..n_states.min(m + 1)).collect()
            };
            assert_eq!(got, expected, "states {n_states} m {m}");
            assert!(got.windows(2).all(|w| w[0] < w[1]));
            assert!(got.iter().all(|&i| i < n_states));
            checked += 1;
        }
    }

    // need_recover_state: randomized outcomes vs an exhaustive pair scan.
    for _ in 0..1000 {
        let n_actions = rand::Rng::gen_range(&mut rng, 1..=59);
        let m = rand::Rng::gen_range(&mut rng, 1..=10);
        let traj = stub_trajectory(2, n_actions, 0, n_actions);
        let mut indices = vec![0usize];
        indices.extend(select_expert_states(&traj, m));
        let outcomes: BTreeMap<usize, bool> = indices
            .iter()
            .map(|&i| (i, rand::Rng::gen_bool(&mut rng, 0.5)))
            .collect();
        let got = need_recover_state(&traj, m, &outcomes).unwrap();
        let mut expected = None;
        for pair in indices.windows(2) {
            if outcomes[&pair[0]] && !outcomes[&pair[1]] {
                expected = Some(pair[1]);
                break;
            }
        }
        assert_eq!(got, expected);
        if let Some(idx) = got {
            // The returned index is minimal among qualifying ones.
            for pair in indices.windows(2) {
                if pair[1] < idx {
                    assert!(!(outcomes[&pair[0]] && !outcomes[&pair[1]]));
                }
            }
        }
        checked += 1;
    }

    // get_traj: random repositories of up to 50 trajectories vs a scan.
    for round in 0..20 {
        let mut repo = TrajectoryRepository::new();
        let n_trajs = rand::Rng::gen_range(&mut rng, 1..=50);
        let mut all_fps = Vec::new();
        for t in 0..n_trajs {
            let n_actions = rand::Rng::gen_range(&mut rng, 1..=12);
            let fp_base = rand::Rng::gen_range(&mut rng, 0..40u64); // dense: forces shared states
            let expert_prefix = rand::Rng::gen_range(&mut rng, 0..=n_actions);
            let traj =
                stub_trajectory(round * 100 + t, n_actions, fp_base, expert_prefix);
            all_fps.extend(traj.steps.iter().map(|s| s.fingerprint));
            repo.update(&[traj]);
        }
        all_fps.push(77777); // an absent fingerprint
        for fp in all_fps.iter().take(50) {
            let got = repo.get_traj(*fp);
            // Brute-force scan over every (entry, step) match.
            let expected = repo
                .entries()
                .iter()
                .flat_map(|t| {
                    t.steps.iter().enumerate().filter_map(move |(i, s)| {
                        (s.fingerprint == *fp).then(|| {
                            (t.expert_actions_from(i), t.steps.len() - i, t.id, i)
                        })
                    })
                })
                .min()
                .map(|(_, _, id, i)| (id, i));
            assert_eq!(got, expected, "fingerprint {fp}");
            checked += 1;
        }
    }

    let elapsed = started.elapsed();
    assert!(checked >= 1000 + 600, "only {checked} instances checked");
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}");
    println!(
        "[PASS] criterion 1: selection oracles match brute force on {checked} instances \
         in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: gradient vs central finite differences
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_gradient_correctness() {
    let started = Instant::now();
    let mut rng = stream(102, "acceptance/grad");
    let h = 1e-5;
    for instance in 0..100 {
        let (params, seq) = eef_core::policy::random_instance(&mut rng, 24, 6);
        let examples = vec![seq];
        let grad = grad_masked_sft(&params, &examples).unwrap();
        for j in 0..24 {
            let mut plus = params.clone();
            plus.weights[j] += h;
            let mut minus = params.clone();
            minus.weights[j] -= h;
            let fd = (masked_sft_loss(&plus, &examples).unwrap()
                - masked_sft_loss(&minus, &examples).unwrap())
                / (2.0 * h);
            let tol = 1e-5 * (1.0 + fd.abs());
            assert!(
                (grad[j] - fd).abs() <= tol,
                "instance {instance}, coordinate {j}: analytic {} vs fd {fd}",
                grad[j]
            );
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}");
    println!(
        "[PASS] criterion 2: analytic gradient matches central differences on 100 \
         instances in {elapsed:.2?}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: mask faithfulness
// ---------------------------------------------------------------------------

#[test]
fn criterion_3_mask_faithfulness() {
    let mut rng = stream(103, "acceptance/mask");
    let mut mutated = 0usize;
    for _ in 0..100 {
        let (params, mut seq) = eef_core::policy::random_instance(&mut rng, 24, 6);
        if seq.mask_start == 0 {
            seq.mask_start = 1.min(seq.steps.len());
        }
        if seq.mask_start == 0 {
            continue;
        }
        let loss_before = masked_sft_loss(&params, &[seq.clone()]).unwrap();
        let grad_before = grad_masked_sft(&params, &[seq.clone()]).unwrap();
        // Mutate every pre-mask step: different action, scrambled features.
        for t in 0..seq.mask_start {
            let step = &mut seq.steps[t];
            step.action_index = (step.action_index + 1) % step.features.len();
            for f in &mut step.features {
                for v in &mut f.values {
                    *v = -*v + 0.25;
                }
            }
            mutated += 1;
        }
        let loss_after = masked_sft_loss(&params, &[seq.clone()]).unwrap();
        let grad_after = grad_masked_sft(&params, &[seq]).unwrap();
        assert!(
            loss_before.to_bits() == loss_after.to_bits(),
            "loss changed: {loss_before} vs {loss_after}"
        );
        assert!(grad_before
            .iter()
            .zip(grad_after.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
    }
    assert!(mutated > 0);
    println!(
        "[PASS] criterion 3: loss and gradient bitwise unchanged under {mutated} pre-mask \
         mutations across 100 examples"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: replay determinism
// ---------------------------------------------------------------------------

fn record_episode<E: Environment + ?Sized>(
    env: &mut E,
    ctx: ContextId,
    seed: u64,
) -> (Vec<ActionToken>, Vec<String>, f64) {
    // A seeded random-walk agent covers diverse reachable states.
    let mut rng = stream(seed, &format!("replay/{}", ctx.id));
    let mut result = env.reset(ctx).unwrap();
    let mut actions = Vec::new();
    let mut observations = vec![result.observation.clone()];
    let horizon = env.kind().horizon();
    while !result.done && actions.len() < horizon {
        let pick = rand::Rng::gen_range(&mut rng, 0..result.candidates.len());
        let action = result.candidates[pick].clone();
        result = env.step(&action).unwrap();
        actions.push(action);
        observations.push(result.observation.clone());
    }
    (actions, observations, result.reward)
}

fn check_replay<E: Environment + ?Sized>(env: &mut E, contexts: &[ContextId], label: &str) -> usize {
    let mut episodes = 0usize;
    for (i, ctx) in contexts.iter().enumerate() {
        if episodes >= 50 {
            break;
        }
        // Record, keeping snapshots at every step.
        let mut result = env.reset(*ctx).unwrap();
        let mut snapshots = vec![result.snapshot.clone()];
        let (actions, observations, reward) = {
            let (actions, observations, reward) = record_episode(env, *ctx, 7000 + i as u64);
            // Re-walk to collect snapshots along the way.
            result = env.reset(*ctx).unwrap();
            for action in &actions {
                result = env.step(action).unwrap();
                snapshots.push(result.snapshot.clone());
            }
            assert_eq!(result.reward, reward);
            (actions, observations, reward)
        };
        // Restore at every step index and replay the recorded suffix.
        for (k, snapshot) in snapshots.iter().enumerate() {
            let mut replayed = env.restore(snapshot).unwrap();
            assert_eq!(
                replayed.observation, observations[k],
                "{label}: restored observation at step {k} differs"
            );
            for (j, action) in actions[k..].iter().enumerate() {
                assert!(
                    replayed.offers(action),
                    "{label}: candidate closure violated at step {}",
                    k + j
                );
                // Sparse reward along the way.
                if !replayed.done {
                    assert_eq!(replayed.reward, 0.0);
                }
                replayed = env.step(action).unwrap();
                assert_eq!(
                    replayed.observation,
                    observations[k + j + 1],
                    "{label}: replayed observation diverged"
                );
            }
            assert_eq!(replayed.reward, reward, "{label}: terminal reward diverged");
        }
        episodes += 1;
    }
    episodes
}

#[test]
fn criterion_4_replay_determinism() {
    let (mut shop, shop_train, shop_test) =
        generate_minishop(&MiniShopConfig::default()).unwrap();
    let all_shop: Vec<ContextId> = shop_train.into_iter().chain(shop_test).collect();
    let shop_episodes = check_replay(&mut shop, &all_shop, "minishop");

    let chain_cfg = eef_core::ChainWorldConfig {
        n_tasks_train: 40,
        n_tasks_test: 10,
        ..eef_core::ChainWorldConfig::default()
    };
    let (mut chain, chain_train, chain_test) =
        eef_core::generate_chainworld(&chain_cfg).unwrap();
    let all_chain: Vec<ContextId> = chain_train.into_iter().chain(chain_test).collect();
    let chain_episodes = check_replay(&mut chain, &all_chain, "chainworld");

    assert_eq!(shop_episodes, 50);
    assert_eq!(chain_episodes, 50);
    println!(
        "[PASS] criterion 4: restore-at-every-step replay reproduced {} + {} episodes exactly",
        shop_episodes, chain_episodes
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: directional main result
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_directional_main_result() {
    let r = reference();
    let eef = mean_win(&r.eef);
    let rft6 = mean_win(&r.rft6);
    let rft1 = mean_win(&r.rft1);
    let sft_pos = mean_win(&r.sft_pos);
    println!(
        "criterion 5 means over {N_SEEDS} seeds: eef {eef:.3}, rft-x6 {rft6:.3}, \
         rft {rft1:.3}, sft-pos {sft_pos:.3}"
    );
    assert!(
        eef >= rft6 + 0.05,
        "eef ({eef:.3}) must exceed rft-x6 ({rft6:.3}) by at least 0.05"
    );
    assert!(
        rft6 >= sft_pos,
        "rft-x6 ({rft6:.3}) must be at least sft-pos ({sft_pos:.3})"
    );
    println!(
        "[PASS] criterion 5: eef {eef:.3} >= rft-x6 {rft6:.3} + 0.05 and rft-x6 >= \
         sft-pos {sft_pos:.3}"
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: budget efficiency
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_budget_efficiency() {
    let config = ExperimentConfig::default();
    let mut world = pipeline::prepare_world(&config, BASE_SEED).expect("world");
    let seeds: Vec<u64> = (0..N_SEEDS as u64).map(|i| 400 + i).collect();
    let entries = [
        SweepEntry::Rft(2),
        SweepEntry::Eef(1),
        SweepEntry::Eef(2),
        SweepEntry::Eef(5),
    ];
    let rows = budget_sweep(
        world.env.as_env(),
        &world.train_contexts.clone(),
        &world.test_contexts.clone(),
        &world.dataset.clone(),
        &PolicyParams::zeros(),
        &config.eef,
        &config.train,
        &entries,
        &seeds,
    )
    .expect("sweep");
    for row in &rows {
        println!(
            "criterion 6 row: {} budget {} rollouts {} win {:.3} +/- {:.3}",
            row.method, row.budget, row.rollouts, row.win_rate_mean, row.win_rate_sd
        );
    }
    let rft2 = &rows[0];
    let eef1 = &rows[1];
    let eef2 = &rows[2];
    let eef5 = &rows[3];
    assert_eq!(
        rft2.rollouts, eef1.rollouts,
        "budget parity: rft N=2 and eef M=1 must use equal rollouts"
    );
    assert!(
        eef1.win_rate_mean >= rft2.win_rate_mean,
        "eef at M=1 ({:.3}) must reach rft at N=2 ({:.3}) on equal budget",
        eef1.win_rate_mean,
        rft2.win_rate_mean
    );
    assert!(
        eef2.win_rate_mean >= eef1.win_rate_mean - 0.03
            && eef5.win_rate_mean >= eef2.win_rate_mean - 0.03,
        "win rate must be non-decreasing in M up to 0.03 slack: {:.3}, {:.3}, {:.3}",
        eef1.win_rate_mean,
        eef2.win_rate_mean,
        eef5.win_rate_mean
    );
    println!(
        "[PASS] criterion 6: eef M=1 {:.3} >= rft N=2 {:.3} at {} rollouts each; \
         monotone in M ({:.3}, {:.3}, {:.3})",
        eef1.win_rate_mean,
        rft2.win_rate_mean,
        rft2.rollouts,
        eef1.win_rate_mean,
        eef2.win_rate_mean,
        eef5.win_rate_mean
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: navigation-skill acquisition
// ---------------------------------------------------------------------------

#[test]
fn criterion_7_navigation_skills() {
    let r = reference();
    let (eef_next, eef_back) = mean_nav(&r.eef);
    let (rft_next, rft_back) = mean_nav(&r.rft6);
    let eef_nn = tag_solve_rate(&r.eef, &r.test_tags, Tag::NeedsNext);
    let rft_nn = tag_solve_rate(&r.rft6, &r.test_tags, Tag::NeedsNext);
    println!(
        "criterion 7: next success eef {eef_next:.1}% vs rft {rft_next:.1}%; back success \
         eef {eef_back:.1}% vs rft {rft_back:.1}%; needs_next solve eef {eef_nn:.3} vs \
         rft {rft_nn:.3}"
    );
    assert!(eef_next > rft_next, "next-success must strictly exceed rft-x6");
    assert!(eef_back > rft_back, "back-success must strictly exceed rft-x6");
    assert!(
        eef_nn >= rft_nn + 0.05,
        "needs_next solve rate gap must be at least 0.05"
    );
    println!(
        "[PASS] criterion 7: eef navigation success exceeds rft-x6 (next {eef_next:.1}% > \
         {rft_next:.1}%, back {eef_back:.1}% > {rft_back:.1}%), needs_next gap {:.3}",
        eef_nn - rft_nn
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: expert calibration
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_expert_calibration() {
    let (mut env, train, _) = generate_minishop(&MiniShopConfig {
        seed: eef_core::rng::derive_seed(BASE_SEED, "env"),
        ..MiniShopConfig::default()
    })
    .unwrap();
    let mut measured = Vec::new();
    for (base, target, seed_tag) in [
        (ExpertProfile::strong(), 0.356, "experts/strong"),
        (ExpertProfile::weak(), 0.232, "experts/weak"),
    ] {
        let seed = eef_core::rng::derive_seed(BASE_SEED, seed_tag);
        let profile = calibrate_profile(&mut env, &train, &base, target, 0.04, seed)
            .unwrap_or_else(|e| panic!("calibration to {target} failed: {e}"));
        let dataset = generate_expert_dataset(&mut env, &train, &profile, seed).unwrap();
        let rate = dataset.positive_fraction();
        assert!(
            (rate - target).abs() <= 0.04,
            "calibrated {} win rate {rate:.3} misses target {target} by more than 0.04",
            base.label
        );
        measured.push((base.label.clone(), target, rate));
    }
    println!(
        "[PASS] criterion 8: calibration hit {} (target 0.356 -> {:.3}) and {} \
         (target 0.232 -> {:.3}) within 0.04",
        measured[0].0, measured[0].2, measured[1].0, measured[1].2
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: two-expert gain
// ---------------------------------------------------------------------------

#[test]
fn criterion_9_two_expert_gain() {
    let r = reference();
    let strong_only = mean_win(&r.eef);
    let (merged_runs, _) = run_method(MethodChoice::Eef, true);
    let merged = mean_win(&merged_runs);
    println!("criterion 9: eef strong-only {strong_only:.3}, strong+weak {merged:.3}");
    assert!(
        merged >= strong_only - 0.02,
        "two-expert mean ({merged:.3}) fell more than 0.02 below strong-only \
         ({strong_only:.3})"
    );
    println!(
        "[PASS] criterion 9: strong+weak {merged:.3} >= strong-only {strong_only:.3} - 0.02"
    );
}

// ---------------------------------------------------------------------------
// Criterion 10: full-run determinism at the CLI
// ---------------------------------------------------------------------------

#[test]
fn criterion_10_full_run_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let config_path = dir.path().join("ref.cfg");
    std::fs::write(
        &config_path,
        "env.n_products = 40\nenv.n_tasks_train = 12\nenv.n_tasks_test = 6\n\
         expert.strong.tolerance = 0.1\neef.iterations = 3\nn_seeds = 2\n",
    )
    .unwrap();
    let mut trees = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let status = std::process::Command::new(env!("CARGO_BIN_EXE_eef"))
            .args([
                "train",
                "--method",
                "eef",
                "--m",
                "3",
                "--iters",
                "3",
                "--seed",
                "5",
                "--config",
                config_path.to_str().unwrap(),
                "--output-dir",
                out.to_str().unwrap(),
            ])
            .status()
            .unwrap();
        assert!(status.success());
        let mut files = Vec::new();
        let mut stack = vec![out.clone()];
        while let Some(current) = stack.pop() {
            let mut entries: Vec<_> = std::fs::read_dir(&current)
                .unwrap()
                .map(|e| e.unwrap().path())
                .collect();
            entries.sort();
            for path in entries {
                if path.is_dir() {
                    stack.push(path);
                } else {
                    files.push((
                        path.strip_prefix(&out).unwrap().display().to_string(),
                        std::fs::read(&path).unwrap(),
                    ));
                }
            }
        }
        files.sort();
        trees.push(files);
    }
    assert_eq!(trees[0].len(), trees[1].len());
    let mut n_files = 0usize;
    for ((path_a, bytes_a), (path_b, bytes_b)) in trees[0].iter().zip(trees[1].iter()) {
        assert_eq!(path_a, path_b);
        assert_eq!(bytes_a, bytes_b, "file {path_a} differs between executions");
        n_files += 1;
    }
    println!(
        "[PASS] criterion 10: two executions produced byte-identical trees \
         ({n_files} files: manifests, datasets, checkpoints)"
    );
}
