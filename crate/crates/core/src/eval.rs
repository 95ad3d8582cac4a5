//! Evaluation, navigation-skill statistics, and budget sweeps.

use serde::{Deserialize, Serialize};

use crate::eef::{run_eef, run_rft, EEFConfig};
use crate::env::{ContextId, Environment};
use crate::error::Result;
use crate::expert::ExpertDataset;
use crate::policy::{PolicyParams, TrainConfig};
use crate::runner::{self, PolicyAgent, PolicyMode};
use crate::shop::{parse_shop_action, parse_shop_page, ShopAction, ShopPage};
use crate::trajectory::{Provenance, Trajectory};

/// How evaluation picks actions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EvalMode {
    Greedy,
    Sampled { temperature: f64 },
}

/// Fraction of contexts solved plus the evaluation trajectories.
pub fn evaluate<E: Environment + ?Sized>(
    policy: &PolicyParams,
    env: &mut E,
    contexts: &[ContextId],
    mode: EvalMode,
) -> Result<(f64, Vec<Trajectory>)> {
    match mode {
        EvalMode::Greedy => runner::evaluate_policy(env, policy, contexts, u32::MAX),
        EvalMode::Sampled { temperature } => {
            let max_steps = env.kind().horizon();
            let mut wins = 0usize;
            let mut trajectories = Vec::with_capacity(contexts.len());
            for (i, ctx) in contexts.iter().enumerate() {
                let mut agent = PolicyAgent {
                    params: policy,
                    mode: PolicyMode::Sampled {
                        temperature,
                        rng: crate::rng::stream(i as u64, &format!("eval/sampled/{}", ctx.id)),
                    },
                };
                let traj = runner::run_episode(
                    env,
                    *ctx,
                    &mut agent,
                    Provenance::Policy(u32::MAX),
                    max_steps,
                    i as u64,
                )?;
                if traj.is_positive() {
                    wins += 1;
                }
                trajectories.push(traj);
            }
            Ok((wins as f64 / contexts.len().max(1) as f64, trajectories))
        }
    }
}

/// Navigation-skill usage over one evaluation, in percent of contexts.
/// "Success" counts contexts solved using the skill; "attempt" counts any
/// use regardless of outcome. The back skill is counted when taken from a
/// product page (abandoning the product).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct NavigationStats {
    pub next_success_pct: f64,
    pub back_success_pct: f64,
    pub next_attempt_pct: f64,
    pub back_attempt_pct: f64,
}

pub fn navigation_stats(eval_trajectories: &[Trajectory]) -> NavigationStats {
    let total = eval_trajectories.len().max(1) as f64;
    let mut stats = NavigationStats::default();
    for traj in eval_trajectories {
        let used_next = traj.contains_action("click[Next]");
        let used_back = traj.steps.iter().any(|s| {
            matches!(parse_shop_action(s.action.as_str()), ShopAction::Back)
                && matches!(parse_shop_page(&s.observation), ShopPage::Product { .. })
        });
        if used_next {
            stats.next_attempt_pct += 1.0;
            if traj.is_positive() {
                stats.next_success_pct += 1.0;
            }
        }
        if used_back {
            stats.back_attempt_pct += 1.0;
            if traj.is_positive() {
                stats.back_success_pct += 1.0;
            }
        }
    }
    stats.next_success_pct *= 100.0 / total;
    stats.back_success_pct *= 100.0 / total;
    stats.next_attempt_pct *= 100.0 / total;
    stats.back_attempt_pct *= 100.0 / total;
    stats
}

/// One row of a budget sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: String,
    /// Simulations per subtask per iteration (expert-state sims count per
    /// expert trajectory, plus the initial rollout).
    pub budget: usize,
    pub rollouts: usize,
    pub win_rate_mean: f64,
    /// Sample standard deviation over seeds; 0 for a single seed.
    pub win_rate_sd: f64,
    pub per_seed: Vec<f64>,
}

/// A sweep entry: which method at which per-subtask simulation count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method", content = "budget")]
pub enum SweepEntry {
    /// Initial-state rejection sampling with N rollouts per subtask.
    Rft(usize),
    /// Expert-state mining with M simulations per expert trajectory (total
    /// per-subtask budget M + 1, counting the initial rollout).
    Eef(usize),
}

impl SweepEntry {
    pub fn label(&self) -> String {
        match self {
            SweepEntry::Rft(n) => format!("rft-x{n}"),
            SweepEntry::Eef(m) => format!("eef-m{m}"),
        }
    }

    pub fn per_subtask_budget(&self) -> usize {
        match self {
            SweepEntry::Rft(n) => *n,
            SweepEntry::Eef(m) => m + 1,
        }
    }
}

/// The default sweep grid.
pub fn default_sweep_entries() -> Vec<SweepEntry> {
    let mut entries: Vec<SweepEntry> = (1..=6).map(SweepEntry::Rft).collect();
    entries.extend([SweepEntry::Eef(1), SweepEntry::Eef(2), SweepEntry::Eef(5)]);
    entries
}

/// One fine-tuning iteration per entry from a shared behavior-cloned
/// checkpoint, evaluated greedily on the test split; rows aggregate over
/// `seeds`.
#[allow(clippy::too_many_arguments)]
pub fn budget_sweep<E: Environment + ?Sized>(
    env: &mut E,
    c_train: &[ContextId],
    c_test: &[ContextId],
    expert_data: &ExpertDataset,
    policy_init: &PolicyParams,
    base_eef: &EEFConfig,
    base_train: &TrainConfig,
    entries: &[SweepEntry],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(entries.len());
    for entry in entries {
        let mut per_seed = Vec::with_capacity(seeds.len());
        let mut rollouts = 0;
        for &seed in seeds {
            let eef_cfg = EEFConfig {
                iterations: 2,
                seed,
                ..base_eef.clone()
            };
            let train_cfg = TrainConfig {
                seed,
                ..base_train.clone()
            };
            let outcome = match entry {
                SweepEntry::Eef(m) => {
                    let cfg = EEFConfig {
                        simulations_per_expert: *m,
                        ..eef_cfg
                    };
                    run_eef(env, c_train, expert_data, policy_init, &cfg, &train_cfg)?
                }
                SweepEntry::Rft(n) => {
                    run_rft(env, c_train, expert_data, policy_init, *n, &eef_cfg, &train_cfg)?
                }
            };
            rollouts = outcome.total_rollouts;
            let (wr, _) = evaluate(&outcome.policies[1], env, c_test, EvalMode::Greedy)?;
            per_seed.push(wr);
        }
        let mean = per_seed.iter().sum::<f64>() / per_seed.len().max(1) as f64;
        let sd = if per_seed.len() < 2 {
            0.0
        } else {
            let var = per_seed.iter().map(|w| (w - mean).powi(2)).sum::<f64>()
                / (per_seed.len() - 1) as f64;
            var.sqrt()
        };
        rows.push(SweepRow {
            method: entry.label(),
            budget: entry.per_subtask_budget(),
            rollouts,
            win_rate_mean: mean,
            win_rate_sd: sd,
            per_seed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionToken, Split};
    use crate::trajectory::{Origin, TrajectoryStart, TrajectoryStep};

    fn nav_traj(ctx: usize, reward: f64, with_next: bool, with_back: bool) -> Trajectory {
        let mut steps = Vec::new();
        let obs_results = "Instruction: x\nResults for \"a b\" (page 1 of 2)\n[P001] T | color: navy | category: sofa | $10.00";
        let obs_product = "Instruction: x\nProduct [P001] T\ncolor: navy | category: sofa | price: $10.00\nsize options: [m]\nselected: none";
        if with_next {
            steps.push(TrajectoryStep {
                fingerprint: 1,
                snapshot: None,
                observation: obs_results.into(),
                candidates: vec![ActionToken::new("click[Next]")],
                action: ActionToken::new("click[Next]"),
                provenance: Provenance::Policy(0),
            });
        }
        if with_back {
            steps.push(TrajectoryStep {
                fingerprint: 2,
                snapshot: None,
                observation: obs_product.into(),
                candidates: vec![ActionToken::new("click[Back to Search]")],
                action: ActionToken::new("click[Back to Search]"),
                provenance: Provenance::Policy(0),
            });
        }
        Trajectory {
            id: ctx as u64,
            start: TrajectoryStart {
                context: ContextId {
                    id: ctx,
                    split: Split::Test,
                },
                origin: Origin::Initial,
            },
            steps,
            terminal_reward: reward,
            final_fingerprint: 3,
        }
    }

    #[test]
    fn navigation_fixture_counts_match() {
        // 10 contexts: 3 solved with Next, 2 more attempted Next and failed,
        // 1 solved with Back.
        let mut trajs = Vec::new();
        for i in 0..3 {
            trajs.push(nav_traj(i, 1.0, true, false));
        }
        for i in 3..5 {
            trajs.push(nav_traj(i, 0.0, true, false));
        }
        trajs.push(nav_traj(5, 1.0, false, true));
        for i in 6..10 {
            trajs.push(nav_traj(i, 0.0, false, false));
        }
        let stats = navigation_stats(&trajs);
        assert_eq!(stats.next_success_pct, 30.0);
        assert_eq!(stats.next_attempt_pct, 50.0);
        assert_eq!(stats.back_success_pct, 10.0);
        assert_eq!(stats.back_attempt_pct, 10.0);
        // Successes never exceed attempts.
        assert!(stats.next_success_pct <= stats.next_attempt_pct);
        assert!(stats.back_success_pct <= stats.back_attempt_pct);
    }

    #[test]
    fn navigation_without_nav_actions_is_all_zero() {
        let trajs = vec![nav_traj(0, 1.0, false, false)];
        let stats = navigation_stats(&trajs);
        assert_eq!(stats, NavigationStats::default());
    }

    #[test]
    fn back_on_results_page_does_not_count_as_the_skill() {
        let mut t = nav_traj(0, 1.0, true, false);
        // A Back taken from a results page, not a product page.
        t.steps[0].action = ActionToken::new("click[Back to Search]");
        let stats = navigation_stats(&[t]);
        assert_eq!(stats.back_attempt_pct, 0.0);
    }
}
