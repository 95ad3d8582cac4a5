//! Episode execution shared by expert generation, exploration, and
//! evaluation.
//!
//! The horizon is enforced here, not in the environments: an episode that
//! has not terminated after `max_steps` actions is recorded with terminal
//! reward 0.

use rand_chacha::ChaCha12Rng;

use crate::env::{
    state_fingerprint, ActionToken, ContextId, Environment, StepResult, TaskConstraints,
};
use crate::error::Result;
use crate::policy::{greedy_action, sample_action, PolicyParams};
use crate::trajectory::{Origin, Provenance, Trajectory, TrajectoryStart, TrajectoryStep, TrajId};

/// An action chooser driving one episode.
pub trait Agent {
    fn act(
        &mut self,
        observation: &str,
        candidates: &[ActionToken],
        constraints: &TaskConstraints,
    ) -> Result<ActionToken>;
}

/// Greedy or temperature-sampled policy execution.
pub enum PolicyMode {
    Greedy,
    Sampled { temperature: f64, rng: ChaCha12Rng },
}

pub struct PolicyAgent<'a> {
    pub params: &'a PolicyParams,
    pub mode: PolicyMode,
}

impl Agent for PolicyAgent<'_> {
    fn act(
        &mut self,
        observation: &str,
        candidates: &[ActionToken],
        constraints: &TaskConstraints,
    ) -> Result<ActionToken> {
        match &mut self.mode {
            PolicyMode::Greedy => greedy_action(self.params, observation, candidates, constraints),
            PolicyMode::Sampled { temperature, rng } => sample_action(
                self.params,
                observation,
                candidates,
                constraints,
                *temperature,
                rng,
            ),
        }
    }
}

/// Replays a fixed plan; used to sanity-check evaluation against the
/// exhaustive solver.
pub struct ReplayAgent {
    pub plan: Vec<ActionToken>,
    pub cursor: usize,
}

impl Agent for ReplayAgent {
    fn act(
        &mut self,
        _observation: &str,
        candidates: &[ActionToken],
        _constraints: &TaskConstraints,
    ) -> Result<ActionToken> {
        let action = self
            .plan
            .get(self.cursor)
            .cloned()
            .unwrap_or_else(|| candidates[0].clone());
        self.cursor += 1;
        Ok(action)
    }
}

/// Run one episode from the initial state of `context`.
pub fn run_episode<E: Environment + ?Sized>(
    env: &mut E,
    context: ContextId,
    agent: &mut dyn Agent,
    provenance: Provenance,
    max_steps: usize,
    id: TrajId,
) -> Result<Trajectory> {
    let first = env.reset(context)?;
    continue_episode(
        env,
        context,
        Origin::Initial,
        Vec::new(),
        first,
        agent,
        provenance,
        max_steps,
        id,
    )
}

/// Continue an episode from a mid-trajectory state: `prefix` holds the
/// steps already taken (kept verbatim, with their original provenance) and
/// `current` is the step result at the resume point.
#[allow(clippy::too_many_arguments)]
pub fn continue_episode<E: Environment + ?Sized>(
    env: &mut E,
    context: ContextId,
    origin: Origin,
    prefix: Vec<TrajectoryStep>,
    mut current: StepResult,
    agent: &mut dyn Agent,
    provenance: Provenance,
    max_steps: usize,
    id: TrajId,
) -> Result<Trajectory> {
    let constraints = env.constraints(context)?;
    let mut steps = prefix;
    loop {
        if current.done {
            return Ok(Trajectory {
                id,
                start: TrajectoryStart { context, origin },
                final_fingerprint: state_fingerprint(&current.snapshot),
                steps,
                terminal_reward: current.reward,
            });
        }
        if steps.len() >= max_steps {
            // Horizon reached: recorded as a failure.
            return Ok(Trajectory {
                id,
                start: TrajectoryStart { context, origin },
                final_fingerprint: state_fingerprint(&current.snapshot),
                steps,
                terminal_reward: 0.0,
            });
        }
        let action = agent.act(&current.observation, &current.candidates, &constraints)?;
        steps.push(TrajectoryStep {
            fingerprint: state_fingerprint(&current.snapshot),
            snapshot: Some(current.snapshot.clone()),
            observation: current.observation.clone(),
            candidates: current.candidates.clone(),
            action: action.clone(),
            provenance: provenance.clone(),
        });
        current = env.step(&action)?;
    }
}

/// Greedy win rate of a policy over a set of contexts, with the evaluation
/// trajectories.
pub fn evaluate_policy<E: Environment + ?Sized>(
    env: &mut E,
    params: &PolicyParams,
    contexts: &[ContextId],
    iteration: u32,
) -> Result<(f64, Vec<Trajectory>)> {
    let max_steps = env.kind().horizon();
    let mut wins = 0usize;
    let mut trajectories = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        let mut agent = PolicyAgent {
            params,
            mode: PolicyMode::Greedy,
        };
        let traj = run_episode(
            env,
            *ctx,
            &mut agent,
            Provenance::Policy(iteration),
            max_steps,
            i as TrajId,
        )?;
        if traj.is_positive() {
            wins += 1;
        }
        trajectories.push(traj);
    }
    Ok((wins as f64 / contexts.len().max(1) as f64, trajectories))
}
