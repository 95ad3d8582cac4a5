//! The exploration and fine-tuning loops.
//!
//! `run_eef` mines failed expert trajectories: each round it rolls the
//! current policy out from every training subtask and from evenly spaced
//! intermediate states of every expert trajectory, keeps the successes in a
//! positive repository, finds the first expert state where the policy
//! flips from succeeding to failing, and retrains on one solution per
//! important state with loss masked to the actions from that state on.
//! `run_rft` is the same loop with expert-state exploration disabled, and
//! `train_offline` covers the no-exploration baselines.

use std::collections::BTreeMap;

use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ContextId, Environment, FingerprintId};
use crate::error::{Error, Result};
use crate::expert::ExpertDataset;
use crate::features::slot;
use crate::policy::{sft_update, PolicyParams, TrainConfig, TrainSequence, TrainStep};
use crate::rng::{derive_seed, stream};
use crate::runner::{continue_episode, evaluate_policy, run_episode, PolicyAgent, PolicyMode};
use crate::trajectory::{
    Origin, Provenance, TrainingExample, Trajectory, TrajectoryRepository, TrajId,
};

/// Sampling temperatures for multi-sample exploration: six evenly spaced
/// values spanning 0.2 to 0.95. Single-sample exploration uses the first.
pub const TEMPERATURE_LADDER: [f64; 6] = [0.2, 0.35, 0.5, 0.65, 0.8, 0.95];

/// Loop parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EEFConfig {
    /// Simulations per expert trajectory per iteration.
    pub simulations_per_expert: usize,
    /// Total iterations, counting the initial behavior-cloning fit.
    pub iterations: usize,
    /// Rollouts per subtask per iteration from initial states.
    pub k_initial: usize,
    pub temperatures: Vec<f64>,
    /// When true, each fine-tuning iteration continues from the previous
    /// parameters instead of restarting from the behavior-cloned ones.
    pub warm_start: bool,
    pub seed: u64,
}

impl Default for EEFConfig {
    fn default() -> Self {
        EEFConfig {
            simulations_per_expert: 5,
            iterations: 4,
            k_initial: 1,
            temperatures: TEMPERATURE_LADDER.to_vec(),
            warm_start: false,
            seed: 0,
        }
    }
}

impl EEFConfig {
    pub fn validate(&self) -> Result<()> {
        if self.simulations_per_expert < 1 {
            return Err(Error::Config("simulations_per_expert must be >= 1".into()));
        }
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.k_initial < 1 {
            return Err(Error::Config("k_initial must be >= 1".into()));
        }
        if self.k_initial > self.temperatures.len() {
            return Err(Error::Config(format!(
                "k_initial ({}) exceeds the temperature ladder length ({})",
                self.k_initial,
                self.temperatures.len()
            )));
        }
        if self.temperatures.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("temperatures must be positive".into()));
        }
        Ok(())
    }
}

/// Evenly spaced interior state indices of an expert trajectory.
///
/// With `n` states and spacing `l = n / (m + 1)` (integer division), the
/// selected indices are `l, 2l, ..., m*l`. Trajectories too short for a
/// positive spacing fall back to enumerating `1..=min(m, n - 1)` so up to
/// `m` distinct interior states are still simulated without duplicating the
/// initial state.
pub fn select_expert_states(expert_traj: &Trajectory, m: usize) -> Vec<usize> {
    let n_states = expert_traj.n_states();
    let spacing = n_states / (m + 1);
    if spacing >= 1 {
        (1..=m).map(|k| k * spacing).collect()
    } else {
        (1..n_states.min(m + 1)).collect()
    }
}

/// First simulated expert state where the policy fails right after
/// succeeding at the previous simulated state. `outcomes` maps each
/// simulated state index (including 0, from initial-state exploration) to
/// whether the rollout from it succeeded.
pub fn need_recover_state(
    expert_traj: &Trajectory,
    m: usize,
    outcomes: &BTreeMap<usize, bool>,
) -> Result<Option<usize>> {
    let mut indices = vec![0usize];
    indices.extend(select_expert_states(expert_traj, m));
    for &idx in &indices {
        if !outcomes.contains_key(&idx) {
            return Err(Error::MissingSimulation {
                traj_id: expert_traj.id,
                state_index: idx,
            });
        }
    }
    for pair in indices.windows(2) {
        if outcomes[&pair[0]] && !outcomes[&pair[1]] {
            return Ok(Some(pair[1]));
        }
    }
    Ok(None)
}

/// Where a rollout starts.
pub enum RolloutOrigin<'a> {
    Initial(ContextId),
    ExpertState {
        expert: &'a Trajectory,
        state_index: usize,
    },
}

/// Sample one trajectory from the policy. Expert-state origins restore the
/// recorded snapshot (or replay the expert prefix when the snapshot was not
/// kept) and prepend the expert prefix verbatim, so the result reads as a
/// full episode from the subtask's initial state.
pub fn rollout<E: Environment + ?Sized>(
    params: &PolicyParams,
    env: &mut E,
    origin: RolloutOrigin<'_>,
    temperature: f64,
    rng: ChaCha12Rng,
    max_steps: usize,
    iteration: u32,
    id: TrajId,
) -> Result<Trajectory> {
    let mut agent = PolicyAgent {
        params,
        mode: PolicyMode::Sampled { temperature, rng },
    };
    match origin {
        RolloutOrigin::Initial(context) => run_episode(
            env,
            context,
            &mut agent,
            Provenance::Policy(iteration),
            max_steps,
            id,
        ),
        RolloutOrigin::ExpertState {
            expert,
            state_index,
        } => {
            let context = expert.start.context;
            if state_index >= expert.steps.len() {
                // Simulating the terminal state: nothing to decide, the
                // outcome is the expert's.
                return Ok(Trajectory {
                    id,
                    start: crate::trajectory::TrajectoryStart {
                        context,
                        origin: Origin::ExpertState {
                            expert_traj_id: expert.id,
                            state_index,
                        },
                    },
                    steps: expert.steps.clone(),
                    terminal_reward: expert.terminal_reward,
                    final_fingerprint: expert.final_fingerprint,
                });
            }
            let step = &expert.steps[state_index];
            let current = match &step.snapshot {
                Some(snapshot) => env.restore(snapshot)?,
                None => {
                    let mut result = env.reset(context)?;
                    for prior in &expert.steps[..state_index] {
                        result = env.step(&prior.action)?;
                    }
                    result
                }
            };
            continue_episode(
                env,
                context,
                Origin::ExpertState {
                    expert_traj_id: expert.id,
                    state_index,
                },
                expert.steps[..state_index].to_vec(),
                current,
                &mut agent,
                Provenance::Policy(iteration),
                max_steps,
                id,
            )
        }
    }
}

/// One planned rollout of an exploration round.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSpec {
    pub origin: OriginKey,
    pub temperature: f64,
    pub stream_tag: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OriginKey {
    Initial { context: ContextId, sample: usize },
    ExpertState { expert_traj_id: TrajId, state_index: usize },
}

/// The deterministic rollout plan for one exploration round: `k_initial`
/// rollouts per training context down the temperature ladder, then (when an
/// expert dataset is given) one rollout per selected state of each expert
/// trajectory. Every spec names its own rng stream, so results are
/// independent of execution order.
pub fn exploration_plan(
    c_train: &[ContextId],
    expert_data: Option<&ExpertDataset>,
    config: &EEFConfig,
    iteration: u32,
) -> Vec<RolloutSpec> {
    let mut specs = Vec::new();
    for ctx in c_train {
        for sample in 0..config.k_initial {
            specs.push(RolloutSpec {
                origin: OriginKey::Initial {
                    context: *ctx,
                    sample,
                },
                temperature: config.temperatures[sample],
                stream_tag: format!("explore/i{iteration}/ctx{}/k{sample}", ctx.id),
            });
        }
    }
    // Expert-state simulations sample near the ladder's midpoint: warm
    // enough to complete from unfamiliar states, cool enough to stay close
    // to the learned behavior.
    let sim_temperature = config.temperatures[(config.temperatures.len() / 2).saturating_sub(1)];
    if let Some(data) = expert_data {
        for expert in &data.trajectories {
            for state_index in select_expert_states(expert, config.simulations_per_expert) {
                specs.push(RolloutSpec {
                    origin: OriginKey::ExpertState {
                        expert_traj_id: expert.id,
                        state_index,
                    },
                    temperature: sim_temperature,
                    stream_tag: format!(
                        "explore/i{iteration}/traj{}/state{state_index}",
                        expert.id
                    ),
                });
            }
        }
    }
    specs
}

/// Execute one exploration round and return its trajectories, ids assigned
/// from `id_base` in plan order.
pub fn explore_iteration<E: Environment + ?Sized>(
    params: &PolicyParams,
    env: &mut E,
    c_train: &[ContextId],
    expert_data: Option<&ExpertDataset>,
    config: &EEFConfig,
    iteration: u32,
    id_base: TrajId,
) -> Result<Vec<Trajectory>> {
    let by_id: BTreeMap<TrajId, &Trajectory> = expert_data
        .map(|d| d.trajectories.iter().map(|t| (t.id, t)).collect())
        .unwrap_or_default();
    let max_steps = env.kind().horizon();
    let plan = exploration_plan(c_train, expert_data, config, iteration);
    let mut out = Vec::with_capacity(plan.len());
    for (offset, spec) in plan.iter().enumerate() {
        let rng = stream(config.seed, &spec.stream_tag);
        let origin = match &spec.origin {
            OriginKey::Initial { context, .. } => RolloutOrigin::Initial(*context),
            OriginKey::ExpertState {
                expert_traj_id,
                state_index,
            } => RolloutOrigin::ExpertState {
                expert: by_id
                    .get(expert_traj_id)
                    .expect("planned expert trajectory exists"),
                state_index: *state_index,
            },
        };
        out.push(rollout(
            params,
            env,
            origin,
            spec.temperature,
            rng,
            max_steps,
            iteration,
            id_base + offset as TrajId,
        )?);
    }
    Ok(out)
}

/// Select training examples: one solution per training subtask that has one
/// in the repository (mask from step 0) and one per recovery state (mask
/// from the matching step). Exact duplicates are dropped.
pub fn build_training_set(
    c_train: &[ContextId],
    initial_fps: &BTreeMap<ContextId, FingerprintId>,
    recovery_states: &[(TrajId, usize, FingerprintId)],
    repository: &TrajectoryRepository,
) -> Vec<TrainingExample> {
    let mut out: Vec<TrainingExample> = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    let mut push = |example: TrainingExample| {
        if seen.insert(example) {
            out.push(example);
        }
    };
    for ctx in c_train {
        let fp = initial_fps
            .get(ctx)
            .expect("initial fingerprint recorded for every training context");
        if let Some((trajectory_id, mask_start)) = repository.get_traj(*fp) {
            push(TrainingExample {
                trajectory_id,
                mask_start,
            });
        }
    }
    for (_, _, fp) in recovery_states {
        if let Some((trajectory_id, mask_start)) = repository.get_traj(*fp) {
            push(TrainingExample {
                trajectory_id,
                mask_start,
            });
        }
    }
    out
}

/// Featurize one training example against its trajectory record. With
/// `exemplar_negative`, the negative-demonstration flag is set on every
/// feature vector (used by the negative-aware offline baseline).
pub fn resolve_example<E: Environment + ?Sized>(
    example: &TrainingExample,
    traj: &Trajectory,
    env: &E,
    exemplar_negative: bool,
) -> Result<TrainSequence> {
    if example.mask_start > traj.steps.len() {
        return Err(Error::CorruptExample(format!(
            "mask_start {} beyond trajectory {} length {}",
            example.mask_start,
            traj.id,
            traj.steps.len()
        )));
    }
    let constraints = env.constraints(traj.start.context)?;
    let mut steps = Vec::with_capacity(traj.steps.len());
    for step in &traj.steps {
        let mut features =
            crate::features::featurize_all(&step.observation, &step.candidates, &constraints);
        if exemplar_negative {
            for f in &mut features {
                f.values[slot::EXEMPLAR_NEGATIVE] = 1.0;
            }
        }
        let action_index = step
            .candidates
            .iter()
            .position(|c| *c == step.action)
            .ok_or_else(|| {
                Error::CorruptExample(format!(
                    "recorded action {:?} absent from its recorded candidate set \
                     (trajectory {})",
                    step.action.as_str(),
                    traj.id
                ))
            })?;
        steps.push(TrainStep {
            features,
            action_index,
        });
    }
    Ok(TrainSequence {
        steps,
        mask_start: example.mask_start,
    })
}

/// Per-iteration bookkeeping for the run manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: u32,
    pub phase: String,
    pub rollouts: usize,
    pub initial_rollouts: usize,
    pub expert_sim_rollouts: usize,
    pub positives_added: usize,
    pub repository_size: usize,
    pub recovery_states: usize,
    pub examples: usize,
    pub val_win_rate: f64,
}

/// Everything a training run produces, in memory. Persistence is the
/// harness's job.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    /// Parameters after each iteration; index 0 is the behavior-cloned fit.
    pub policies: Vec<PolicyParams>,
    pub iterations: Vec<IterationRecord>,
    /// Index into `policies` of the iteration with the best validation win
    /// rate (latest among ties).
    pub selected: usize,
    pub total_rollouts: usize,
    pub validation_contexts: Vec<ContextId>,
    /// Exploration trajectories per round, in iteration order.
    pub explorations: Vec<Vec<Trajectory>>,
    /// Selected training examples per round.
    pub training_sets: Vec<Vec<TrainingExample>>,
    /// Recovery states found per round, as (expert trajectory, state index).
    pub recoveries: Vec<Vec<(TrajId, usize)>>,
}

impl RunOutcome {
    pub fn selected_policy(&self) -> &PolicyParams {
        &self.policies[self.selected]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MiningMode {
    ExpertStates,
    InitialOnly,
}

/// Validation contexts carved from the training split (10%, at least one),
/// used only for model selection across iterations.
pub fn validation_split(c_train: &[ContextId], seed: u64) -> Vec<ContextId> {
    let n_val = ((c_train.len() as f64) * 0.1).round().max(1.0) as usize;
    let n_val = n_val.min(c_train.len());
    let mut order: Vec<ContextId> = c_train.to_vec();
    let mut rng = stream(seed, "validation-split");
    for i in (1..order.len()).rev() {
        let j = rand::Rng::gen_range(&mut rng, 0..=i);
        order.swap(i, j);
    }
    let mut val: Vec<ContextId> = order.into_iter().take(n_val).collect();
    val.sort();
    val
}

fn iter_train_cfg(train_cfg: &TrainConfig, iteration: u32) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(train_cfg.seed, &format!("iter{iteration}")),
        ..train_cfg.clone()
    }
}

fn run_loop<E: Environment + ?Sized>(
    env: &mut E,
    c_train: &[ContextId],
    expert_data: &ExpertDataset,
    policy_init: &PolicyParams,
    config: &EEFConfig,
    train_cfg: &TrainConfig,
    mode: MiningMode,
) -> Result<RunOutcome> {
    config.validate()?;
    train_cfg.validate()?;
    if expert_data.trajectories.is_empty() {
        return Err(Error::EmptyExpertDataset);
    }

    // Initial-state fingerprints for solution lookup.
    let mut initial_fps: BTreeMap<ContextId, FingerprintId> = BTreeMap::new();
    for ctx in c_train {
        let first = env.reset(*ctx)?;
        initial_fps.insert(*ctx, crate::env::state_fingerprint(&first.snapshot));
    }

    let mut repository = TrajectoryRepository::new();
    repository.update(&expert_data.trajectories);

    let mut next_id: TrajId = expert_data
        .trajectories
        .iter()
        .map(|t| t.id + 1)
        .max()
        .unwrap_or(0);

    let validation = validation_split(c_train, config.seed);

    // Behavior cloning on the positive repository (the deduplicated
    // positive expert trajectories).
    let bc_examples: Vec<TrainingExample> = repository
        .entries()
        .iter()
        .map(|t| TrainingExample {
            trajectory_id: t.id,
            mask_start: 0,
        })
        .collect();
    let bc_policy = if bc_examples.is_empty() {
        log::warn!(
            "expert dataset has no positive trajectories; skipping behavior cloning and \
             starting iterations from the initial policy"
        );
        policy_init.clone()
    } else {
        let mut seqs = Vec::with_capacity(bc_examples.len());
        for ex in &bc_examples {
            let traj = repository
                .get(ex.trajectory_id)
                .expect("positive expert trajectory in repository");
            seqs.push(resolve_example(ex, traj, env, false)?);
        }
        sft_update(policy_init, &seqs, &iter_train_cfg(train_cfg, 0))?
    };
    let (bc_val, _) = evaluate_policy(env, &bc_policy, &validation, 0)?;

    let mut policies = vec![bc_policy];
    let mut iterations = vec![IterationRecord {
        iteration: 0,
        phase: "behavior-cloning".into(),
        rollouts: 0,
        initial_rollouts: 0,
        expert_sim_rollouts: 0,
        positives_added: 0,
        repository_size: repository.len(),
        recovery_states: 0,
        examples: bc_examples.len(),
        val_win_rate: bc_val,
    }];
    let mut explorations = Vec::new();
    let mut training_sets = Vec::new();
    let mut recoveries_log = Vec::new();
    let mut total_rollouts = 0usize;

    for iteration in 1..config.iterations as u32 {
        let mining = if mode == MiningMode::ExpertStates {
            Some(expert_data)
        } else {
            None
        };
        let current = policies.last().expect("at least the BC policy");
        let batch = explore_iteration(
            current,
            env,
            c_train,
            mining,
            config,
            iteration,
            next_id,
        )?;
        next_id += batch.len() as TrajId;
        total_rollouts += batch.len();
        let initial_rollouts = batch
            .iter()
            .filter(|t| t.start.origin == Origin::Initial)
            .count();
        let positives_added = repository.update(&batch);

        // Recovery detection over the expert trajectories.
        let mut recovery: Vec<(TrajId, usize, FingerprintId)> = Vec::new();
        if mode == MiningMode::ExpertStates {
            let mut context_success: BTreeMap<ContextId, bool> = BTreeMap::new();
            let mut sim_success: BTreeMap<(TrajId, usize), bool> = BTreeMap::new();
            for traj in &batch {
                match traj.start.origin {
                    Origin::Initial => {
                        let entry =
                            context_success.entry(traj.start.context).or_insert(false);
                        *entry = *entry || traj.is_positive();
                    }
                    Origin::ExpertState {
                        expert_traj_id,
                        state_index,
                    } => {
                        sim_success
                            .insert((expert_traj_id, state_index), traj.is_positive());
                    }
                }
            }
            for expert in &expert_data.trajectories {
                let mut outcomes = BTreeMap::new();
                outcomes.insert(
                    0usize,
                    context_success
                        .get(&expert.start.context)
                        .copied()
                        .unwrap_or(false),
                );
                for idx in select_expert_states(expert, config.simulations_per_expert) {
                    if let Some(&won) = sim_success.get(&(expert.id, idx)) {
                        outcomes.insert(idx, won);
                    }
                }
                if let Some(idx) =
                    need_recover_state(expert, config.simulations_per_expert, &outcomes)?
                {
                    let fp = if idx < expert.steps.len() {
                        expert.steps[idx].fingerprint
                    } else {
                        expert.final_fingerprint
                    };
                    recovery.push((expert.id, idx, fp));
                }
            }
        }

        let examples = build_training_set(c_train, &initial_fps, &recovery, &repository);
        let base = if config.warm_start {
            policies.last().expect("policies non-empty").clone()
        } else {
            policies[0].clone()
        };
        let new_policy = if examples.is_empty() {
            base
        } else {
            let mut seqs = Vec::with_capacity(examples.len());
            for ex in &examples {
                let traj = repository
                    .get(ex.trajectory_id)
                    .expect("selected solution in repository");
                seqs.push(resolve_example(ex, traj, env, false)?);
            }
            sft_update(&base, &seqs, &iter_train_cfg(train_cfg, iteration))?
        };
        let (val_wr, _) = evaluate_policy(env, &new_policy, &validation, iteration)?;

        iterations.push(IterationRecord {
            iteration,
            phase: "explore-and-train".into(),
            rollouts: batch.len(),
            initial_rollouts,
            expert_sim_rollouts: batch.len() - initial_rollouts,
            positives_added,
            repository_size: repository.len(),
            recovery_states: recovery.len(),
            examples: examples.len(),
            val_win_rate: val_wr,
        });
        policies.push(new_policy);
        explorations.push(batch);
        training_sets.push(examples);
        recoveries_log.push(recovery.into_iter().map(|(id, idx, _)| (id, idx)).collect());
    }

    // Best validation win rate; latest iteration among ties.
    let mut selected = 0;
    for (i, rec) in iterations.iter().enumerate() {
        if rec.val_win_rate >= iterations[selected].val_win_rate {
            selected = i;
        }
    }

    Ok(RunOutcome {
        policies,
        iterations,
        selected,
        total_rollouts,
        validation_contexts: validation,
        explorations,
        training_sets,
        recoveries: recoveries_log,
    })
}

/// The full mining loop: behavior cloning, then exploration of initial and
/// expert states, recovery detection, solution selection, and masked
/// fine-tuning, for `config.iterations - 1` rounds.
pub fn run_eef<E: Environment + ?Sized>(
    env: &mut E,
    c_train: &[ContextId],
    expert_data: &ExpertDataset,
    policy_init: &PolicyParams,
    config: &EEFConfig,
    train_cfg: &TrainConfig,
) -> Result<RunOutcome> {
    run_loop(
        env,
        c_train,
        expert_data,
        policy_init,
        config,
        train_cfg,
        MiningMode::ExpertStates,
    )
}

/// Rejection-sampling fine-tuning: `samples_per_subtask` rollouts per
/// subtask per iteration down the temperature ladder, positives kept, no
/// expert-state exploration and no recovery states.
pub fn run_rft<E: Environment + ?Sized>(
    env: &mut E,
    c_train: &[ContextId],
    expert_data: &ExpertDataset,
    policy_init: &PolicyParams,
    samples_per_subtask: usize,
    config: &EEFConfig,
    train_cfg: &TrainConfig,
) -> Result<RunOutcome> {
    if samples_per_subtask == 0 {
        return Err(Error::Config(
            "samples_per_subtask must be at least 1".into(),
        ));
    }
    let config = EEFConfig {
        k_initial: samples_per_subtask,
        ..config.clone()
    };
    run_loop(
        env,
        c_train,
        expert_data,
        policy_init,
        &config,
        train_cfg,
        MiningMode::InitialOnly,
    )
}

/// No-exploration baselines over the expert dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OfflineVariant {
    /// Every demonstration, regardless of outcome.
    SftAll,
    /// Positive demonstrations only (behavior cloning).
    SftPos,
    /// Every demonstration, with the exemplar-negative feature flag set on
    /// failed ones.
    Nat,
}

/// Fit a policy on the expert dataset without exploration.
pub fn train_offline<E: Environment + ?Sized>(
    env: &E,
    expert_data: &ExpertDataset,
    variant: OfflineVariant,
    policy_init: &PolicyParams,
    train_cfg: &TrainConfig,
) -> Result<PolicyParams> {
    if expert_data.trajectories.is_empty() {
        return Err(Error::EmptyExpertDataset);
    }
    let mut seqs = Vec::new();
    for traj in &expert_data.trajectories {
        let include = match variant {
            OfflineVariant::SftAll | OfflineVariant::Nat => true,
            OfflineVariant::SftPos => traj.is_positive(),
        };
        if !include {
            continue;
        }
        let flag = variant == OfflineVariant::Nat && !traj.is_positive();
        let example = TrainingExample {
            trajectory_id: traj.id,
            mask_start: 0,
        };
        seqs.push(resolve_example(&example, traj, env, flag)?);
    }
    if seqs.is_empty() {
        return Err(Error::EmptyTrainingSet(format!(
            "offline variant {variant:?} selected no trajectories"
        )));
    }
    sft_update(policy_init, &seqs, train_cfg)
}

/// Exploration rollouts a full run will perform, for budget accounting.
pub fn expected_rollouts(
    c_train_len: usize,
    k_initial: usize,
    expert_data: Option<&ExpertDataset>,
    simulations_per_expert: usize,
    iterations: usize,
) -> usize {
    let per_iter = c_train_len * k_initial
        + expert_data
            .map(|d| {
                d.trajectories
                    .iter()
                    .map(|t| select_expert_states(t, simulations_per_expert).len())
                    .sum::<usize>()
            })
            .unwrap_or(0);
    per_iter * iterations.saturating_sub(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{ActionToken, Split};
    use crate::trajectory::TrajectoryStart;

    fn traj_with_len(id: TrajId, n_actions: usize, reward: f64) -> Trajectory {
        let steps = (0..n_actions)
            .map(|i| crate::trajectory::TrajectoryStep {
                fingerprint: 1000 * id + i as u64,
                snapshot: None,
                observation: format!("obs {i}"),
                candidates: vec![ActionToken::new("a"), ActionToken::new("b")],
                action: ActionToken::new("a"),
                provenance: Provenance::Expert("strong".into()),
            })
            .collect();
        Trajectory {
            id,
            start: TrajectoryStart {
                context: ContextId {
                    id: 0,
                    split: Split::Train,
                },
                origin: Origin::Initial,
            },
            steps,
            terminal_reward: reward,
            final_fingerprint: 1000 * id + 999,
        }
    }

    /// Brute-force re-derivation used by the oracle comparisons.
    fn select_oracle(n_states: usize, m: usize) -> Vec<usize> {
        let spacing = n_states / (m + 1);
        if spacing >= 1 {
            (1..=m).map(|k| k * spacing).collect()
        } else {
            let mut out = Vec::new();
            let mut idx = 1;
            while idx < n_states && out.len() < m {
                out.push(idx);
                idx += 1;
            }
            out
        }
    }

    #[test]
    fn select_examples_from_the_spacing_rule() {
        // 17 states: spacing 2, five states.
        let t = traj_with_len(1, 16, 0.0);
        assert_eq!(select_expert_states(&t, 5), vec![2, 4, 6, 8, 10]);
        // 12 states: same spacing.
        let t = traj_with_len(2, 11, 0.0);
        assert_eq!(select_expert_states(&t, 5), vec![2, 4, 6, 8, 10]);
        // 4 states: spacing 0, fall back to enumeration.
        let t = traj_with_len(3, 3, 0.0);
        assert_eq!(select_expert_states(&t, 5), vec![1, 2, 3]);
        // Single-state trajectory: nothing to simulate.
        let t = traj_with_len(4, 0, 0.0);
        assert!(select_expert_states(&t, 5).is_empty());
    }

    #[test]
    fn select_matches_brute_force_over_ranges() {
        for n_actions in 0..60 {
            let t = traj_with_len(7, n_actions, 0.0);
            for m in 1..=10 {
                let got = select_expert_states(&t, m);
                assert_eq!(got, select_oracle(n_actions + 1, m), "len {n_actions} m {m}");
                assert!(got.windows(2).all(|w| w[0] < w[1]));
                assert!(got.iter().all(|&i| i < n_actions + 1));
            }
        }
    }

    #[test]
    fn need_recover_finds_first_success_to_failure_flip() {
        let t = traj_with_len(1, 16, 0.0); // indices [2,4,6,8,10]
        let mut outcomes = BTreeMap::new();
        for (idx, won) in [(0, false), (2, true), (4, false), (6, true), (8, false), (10, false)] {
            outcomes.insert(idx, won);
        }
        assert_eq!(need_recover_state(&t, 5, &outcomes).unwrap(), Some(4));

        // All failures: none.
        let all_fail: BTreeMap<usize, bool> =
            [0, 2, 4, 6, 8, 10].into_iter().map(|i| (i, false)).collect();
        assert_eq!(need_recover_state(&t, 5, &all_fail).unwrap(), None);

        // Success at the initial state, failure at the first simulated one.
        let mut early = all_fail.clone();
        early.insert(0, true);
        assert_eq!(need_recover_state(&t, 5, &early).unwrap(), Some(2));
    }

    #[test]
    fn need_recover_requires_every_outcome() {
        let t = traj_with_len(1, 16, 0.0);
        let mut outcomes = BTreeMap::new();
        outcomes.insert(0, true);
        outcomes.insert(2, true);
        // Missing 4, 6, 8, 10.
        assert!(matches!(
            need_recover_state(&t, 5, &outcomes),
            Err(Error::MissingSimulation { state_index: 4, .. })
        ));
    }

    #[test]
    fn need_recover_matches_exhaustive_pair_scan() {
        let mut rng = crate::rng::stream(31, "need-recover/oracle");
        for _ in 0..200 {
            let n_actions = rand::Rng::gen_range(&mut rng, 1..40);
            let m = rand::Rng::gen_range(&mut rng, 1..=8);
            let t = traj_with_len(5, n_actions, 0.0);
            let mut indices = vec![0usize];
            indices.extend(select_expert_states(&t, m));
            let outcomes: BTreeMap<usize, bool> = indices
                .iter()
                .map(|&i| (i, rand::Rng::gen_bool(&mut rng, 0.5)))
                .collect();
            let got = need_recover_state(&t, m, &outcomes).unwrap();
            // Oracle: scan all consecutive pairs, take the smallest failing
            // index that follows a success.
            let mut expected = None;
            for w in indices.windows(2) {
                if outcomes[&w[0]] && !outcomes[&w[1]] {
                    expected = Some(w[1]);
                    break;
                }
            }
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn offline_variants_reject_empty_selections() {
        let data = ExpertDataset::from_trajectories(vec![traj_with_len(0, 3, 0.0)]);
        let (mut env, _, _) =
            crate::shop::generate_minishop(&crate::shop::MiniShopConfig::default()).unwrap();
        let init = PolicyParams::zeros();
        let err = train_offline(
            &mut env,
            &data,
            OfflineVariant::SftPos,
            &init,
            &TrainConfig::default(),
        );
        assert!(matches!(err, Err(Error::EmptyTrainingSet(_))));
    }

    #[test]
    fn rft_requires_positive_sample_count() {
        let (mut env, train, _) =
            crate::shop::generate_minishop(&crate::shop::MiniShopConfig::default()).unwrap();
        let data = ExpertDataset::from_trajectories(vec![traj_with_len(0, 2, 1.0)]);
        let err = run_rft(
            &mut env,
            &train,
            &data,
            &PolicyParams::zeros(),
            0,
            &EEFConfig::default(),
            &TrainConfig::default(),
        );
        assert!(err.is_err());
    }
}
