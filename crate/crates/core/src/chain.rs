//! ChainWorld: a long-horizon staged environment.
//!
//! A task is a chain of stages. Each stage presents a menu of tools and a
//! hint naming the correct one; the correct tool advances the chain, a wrong
//! tool either ends the episode (dead end) or jams the stage. A jammed stage
//! only moves again after `use[reset stage]`, which is the recovery action.
//! Reward is 1 iff all stages are cleared within the horizon.

use std::collections::BTreeSet;
use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{
    ActionToken, ContextId, EnvKind, Environment, Split, StateSnapshot, StepResult,
    TaskConstraints,
};
use crate::error::{EnvError, Error, Result};
use crate::rng::{fnv1a64, stream};

const TOOL_HEADS: [&str; 8] = [
    "flux", "gear", "ion", "phase", "coil", "prism", "servo", "quartz",
];
const TOOL_TAILS: [&str; 8] = [
    "coupler", "press", "lattice", "spanner", "key", "driver", "valve", "probe",
];
const MISSIONS: [&str; 6] = [
    "service the relay chain",
    "align the signal array",
    "restore the pump line",
    "calibrate the lens stack",
    "rebuild the drive train",
    "balance the reactor loop",
];

pub const RESET_ACTION: &str = "use[reset stage]";

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainWorldConfig {
    pub n_stages: usize,
    pub menu_size: usize,
    /// Probability that a stage tolerates one wrong pick (fixed per stage at
    /// generation time).
    pub recoverable_fraction: f64,
    pub n_tasks_train: usize,
    pub n_tasks_test: usize,
    pub seed: u64,
}

impl Default for ChainWorldConfig {
    fn default() -> Self {
        ChainWorldConfig {
            n_stages: 20,
            menu_size: 4,
            recoverable_fraction: 0.6,
            n_tasks_train: 40,
            n_tasks_test: 20,
            seed: 7,
        }
    }
}

impl ChainWorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_stages < 1 {
            return Err(Error::Config("n_stages must be at least 1".into()));
        }
        if self.menu_size < 2 {
            return Err(Error::Config("menu_size must be at least 2".into()));
        }
        if self.menu_size > TOOL_HEADS.len() {
            return Err(Error::Config(format!(
                "menu_size must be at most {} (distinct hint words per menu)",
                TOOL_HEADS.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.recoverable_fraction) {
            return Err(Error::Config(
                "recoverable_fraction must be in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStage {
    pub tools: Vec<String>,
    /// Index into `tools`.
    pub correct: usize,
    pub recoverable: bool,
}

impl ChainStage {
    pub fn hint(&self) -> &str {
        self.tools[self.correct]
            .split_whitespace()
            .next()
            .unwrap_or("")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainTask {
    pub task_id: usize,
    pub split: Split,
    pub mission: String,
    pub stages: Vec<ChainStage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ChainState {
    pub(crate) task: usize,
    pub(crate) stage: usize,
    pub(crate) jammed: bool,
    /// Wrong tools already tried at the jammed stage.
    pub(crate) tried: BTreeSet<String>,
    pub(crate) done: bool,
    pub(crate) reward: f64,
}

#[derive(Serialize, Deserialize)]
struct ChainBlob {
    world: u64,
    state: ChainState,
}

#[derive(Debug, Clone)]
struct Episode {
    state: ChainState,
    history: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct ChainWorldEnv {
    tasks: Arc<Vec<ChainTask>>,
    world: u64,
    episode: Option<Episode>,
}

/// A parsed ChainWorld observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ChainPage {
    Menu {
        stage: usize,
        n_stages: usize,
        hint: String,
        tools: Vec<String>,
        jammed: bool,
    },
    Terminal,
    Unknown,
}

/// Parse a ChainWorld observation back into structured facts.
pub fn parse_chain_page(observation: &str) -> ChainPage {
    let lines: Vec<&str> = observation.lines().collect();
    if lines.is_empty() {
        return ChainPage::Unknown;
    }
    if lines.len() == 1 {
        return ChainPage::Terminal;
    }
    let mut stage = 0;
    let mut n_stages = 0;
    if let Some(idx) = lines[0].rfind("(stage ") {
        let mut nums = lines[0][idx..]
            .split(|c: char| !c.is_ascii_digit())
            .filter(|s| !s.is_empty());
        stage = nums
            .next()
            .and_then(|s| s.parse::<usize>().ok())
            .unwrap_or(1)
            .saturating_sub(1);
        n_stages = nums.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    }
    let jammed = lines.iter().any(|l| l.starts_with("The mechanism is jammed"));
    let hint = lines
        .iter()
        .find_map(|l| l.strip_prefix("Hint: "))
        .unwrap_or("")
        .to_string();
    let tools = lines
        .iter()
        .find_map(|l| l.strip_prefix("Tools: "))
        .map(|l| {
            let mut out = Vec::new();
            let mut rest = l;
            while let Some(open) = rest.find('[') {
                let Some(close) = rest[open..].find(']') else {
                    break;
                };
                out.push(rest[open + 1..open + close].to_string());
                rest = &rest[open + close + 1..];
            }
            out
        })
        .unwrap_or_default();
    ChainPage::Menu {
        stage,
        n_stages,
        hint,
        tools,
        jammed,
    }
}

/// `use[...]` argument of a chain action, if it follows the grammar.
pub fn parse_chain_action(text: &str) -> Option<&str> {
    text.strip_prefix("use[").and_then(|s| s.strip_suffix(']'))
}

impl ChainWorldEnv {
    fn new(tasks: Vec<ChainTask>) -> Self {
        let ident = serde_json::to_string(&tasks).expect("world serialization");
        ChainWorldEnv {
            tasks: Arc::new(tasks),
            world: fnv1a64(ident.as_bytes()),
            episode: None,
        }
    }

    pub fn tasks(&self) -> &[ChainTask] {
        &self.tasks
    }

    pub(crate) fn task_for(&self, context: ContextId) -> Result<&ChainTask> {
        match self.tasks.get(context.id) {
            Some(t) if t.split == context.split => Ok(t),
            _ => Err(EnvError::UnknownContext {
                id: context.id,
                split: context.split.to_string(),
            }
            .into()),
        }
    }

    fn render(&self, state: &ChainState) -> (String, Vec<ActionToken>) {
        let task = &self.tasks[state.task];
        if state.done {
            let line = if state.reward == 1.0 {
                "All stages cleared.".to_string()
            } else {
                "The mechanism shattered. Task failed.".to_string()
            };
            return (line, Vec::new());
        }
        let stage = &task.stages[state.stage];
        let mut lines = vec![format!(
            "Task {}: {} (stage {} of {})",
            task.task_id,
            task.mission,
            state.stage + 1,
            task.stages.len()
        )];
        let mut candidates = Vec::new();
        if state.jammed {
            lines.push("The mechanism is jammed by the wrong tool.".to_string());
            lines.push(format!("Hint: {}", stage.hint()));
            let mut tools = vec!["reset stage".to_string()];
            for (i, t) in stage.tools.iter().enumerate() {
                if i != stage.correct && !state.tried.contains(t) {
                    tools.push(t.clone());
                }
            }
            let rendered: Vec<String> = tools.iter().map(|t| format!("[{t}]")).collect();
            lines.push(format!("Tools: {}", rendered.join(" ")));
            for t in tools {
                candidates.push(ActionToken::new(format!("use[{t}]")));
            }
        } else {
            lines.push(format!("Hint: {}", stage.hint()));
            let rendered: Vec<String> = stage.tools.iter().map(|t| format!("[{t}]")).collect();
            lines.push(format!("Tools: {}", rendered.join(" ")));
            for t in &stage.tools {
                candidates.push(ActionToken::new(format!("use[{t}]")));
            }
        }
        (lines.join("\n"), candidates)
    }

    pub(crate) fn transition(&self, state: &ChainState, action: &ActionToken) -> ChainState {
        let task = &self.tasks[state.task];
        let stage = &task.stages[state.stage];
        let mut next = state.clone();
        let arg = parse_chain_action(action.as_str()).unwrap_or("");
        if state.jammed {
            if arg == "reset stage" {
                next.jammed = false;
                next.tried.clear();
            } else {
                // A second wrong pick while jammed is fatal.
                next.done = true;
                next.reward = 0.0;
            }
        } else if arg == stage.tools[stage.correct] {
            if state.stage + 1 == task.stages.len() {
                next.done = true;
                next.reward = 1.0;
            } else {
                next.stage += 1;
            }
        } else if stage.recoverable {
            next.jammed = true;
            next.tried.insert(arg.to_string());
        } else {
            next.done = true;
            next.reward = 0.0;
        }
        next
    }

    fn snapshot_of(&self, ep: &Episode) -> StateSnapshot {
        let blob = ChainBlob {
            world: self.world,
            state: ep.state.clone(),
        };
        StateSnapshot {
            env_kind: EnvKind::ChainWorld,
            internal_state: serde_json::to_string(&blob).expect("state serialization"),
            history: ep.history.clone(),
            step_index: ep.history.len(),
        }
    }

    fn result_of(&self, ep: &Episode) -> StepResult {
        let (observation, candidates) = self.render(&ep.state);
        StepResult {
            observation,
            candidates,
            reward: if ep.state.done { ep.state.reward } else { 0.0 },
            done: ep.state.done,
            snapshot: self.snapshot_of(ep),
        }
    }
}

impl Environment for ChainWorldEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::ChainWorld
    }

    fn contexts(&self, split: Split) -> Vec<ContextId> {
        self.tasks
            .iter()
            .filter(|t| t.split == split)
            .map(|t| ContextId {
                id: t.task_id,
                split,
            })
            .collect()
    }

    fn constraints(&self, context: ContextId) -> Result<TaskConstraints> {
        self.task_for(context)?;
        Ok(TaskConstraints::Chain)
    }

    fn reset(&mut self, context: ContextId) -> Result<StepResult> {
        let task = self.task_for(context)?;
        let ep = Episode {
            state: ChainState {
                task: task.task_id,
                stage: 0,
                jammed: false,
                tried: BTreeSet::new(),
                done: false,
                reward: 0.0,
            },
            history: Vec::new(),
        };
        let result = self.result_of(&ep);
        self.episode = Some(ep);
        Ok(result)
    }

    fn restore(&mut self, snapshot: &StateSnapshot) -> Result<StepResult> {
        if snapshot.env_kind != EnvKind::ChainWorld {
            return Err(EnvError::EnvKindMismatch {
                snapshot: snapshot.env_kind.to_string(),
                env: EnvKind::ChainWorld.to_string(),
            }
            .into());
        }
        let blob: ChainBlob = serde_json::from_str(&snapshot.internal_state)
            .map_err(|e| EnvError::MalformedSnapshot(e.to_string()))?;
        if blob.world != self.world {
            return Err(EnvError::ForeignSnapshot(format!(
                "world tag {:x} != {:x}",
                blob.world, self.world
            ))
            .into());
        }
        if blob.state.task >= self.tasks.len() {
            return Err(EnvError::MalformedSnapshot(format!(
                "task index {} out of range",
                blob.state.task
            ))
            .into());
        }
        let ep = Episode {
            state: blob.state,
            history: snapshot.history.clone(),
        };
        let result = self.result_of(&ep);
        self.episode = Some(ep);
        Ok(result)
    }

    fn step(&mut self, action: &ActionToken) -> Result<StepResult> {
        let ep = self.episode.as_ref().ok_or(EnvError::NoEpisode)?;
        if ep.state.done {
            return Err(EnvError::EpisodeFinished.into());
        }
        let current = self.result_of(ep);
        if !current.offers(action) {
            return Err(EnvError::InvalidAction {
                action: action.as_str().to_string(),
            }
            .into());
        }
        let next_state = self.transition(&ep.state, action);
        let mut history = ep.history.clone();
        history.push((current.observation, action.as_str().to_string()));
        let next = Episode {
            state: next_state,
            history,
        };
        let result = self.result_of(&next);
        self.episode = Some(next);
        Ok(result)
    }
}

/// Generate a ChainWorld world. Deterministic in the config seed; every
/// task is verified solvable within the horizon by exhaustive search.
pub fn generate_chainworld(
    config: &ChainWorldConfig,
) -> Result<(ChainWorldEnv, Vec<ContextId>, Vec<ContextId>)> {
    config.validate()?;
    let mut rng = stream(config.seed, "chainworld/tasks");
    let mut tasks = Vec::new();
    let mut task_id = 0;
    for (split, n) in [
        (Split::Train, config.n_tasks_train),
        (Split::Test, config.n_tasks_test),
    ] {
        for _ in 0..n {
            let mission = MISSIONS[rng.gen_range(0..MISSIONS.len())].to_string();
            let mut stages = Vec::with_capacity(config.n_stages);
            for _ in 0..config.n_stages {
                let mut heads: Vec<&str> = TOOL_HEADS.to_vec();
                heads.shuffle(&mut rng);
                let tools: Vec<String> = heads[..config.menu_size]
                    .iter()
                    .map(|h| {
                        let tail = TOOL_TAILS[rng.gen_range(0..TOOL_TAILS.len())];
                        format!("{h} {tail}")
                    })
                    .collect();
                let correct = rng.gen_range(0..tools.len());
                let recoverable = rng.gen_bool(config.recoverable_fraction);
                stages.push(ChainStage {
                    tools,
                    correct,
                    recoverable,
                });
            }
            tasks.push(ChainTask {
                task_id,
                split,
                mission,
                stages,
            });
            task_id += 1;
        }
    }
    let env = ChainWorldEnv::new(tasks);
    let train = env.contexts(Split::Train);
    let test = env.contexts(Split::Test);
    for ctx in train.iter().chain(test.iter()) {
        let mut probe = env.clone();
        if oracle_solve_chain(&mut probe, *ctx)?.is_none() {
            return Err(Error::Infeasible(format!(
                "generated chain task {} is not solvable within the horizon",
                ctx.id
            )));
        }
    }
    Ok((env, train, test))
}

/// Exhaustive breadth-first search for a winning plan from the initial
/// state of `context` within the horizon.
pub fn oracle_solve_chain(
    env: &mut ChainWorldEnv,
    context: ContextId,
) -> Result<Option<Vec<ActionToken>>> {
    let task = env.task_for(context)?;
    let start = ChainState {
        task: task.task_id,
        stage: 0,
        jammed: false,
        tried: BTreeSet::new(),
        done: false,
        reward: 0.0,
    };
    Ok(oracle_solve_chain_from(env, &start))
}

/// Exhaustive search continuing from an arbitrary recorded state. The
/// remaining budget is the horizon minus the steps already taken, which for
/// a fresh state is the full horizon.
pub(crate) fn oracle_solve_chain_from(
    env: &ChainWorldEnv,
    start: &ChainState,
) -> Option<Vec<ActionToken>> {
    if start.done {
        return None;
    }
    let horizon = EnvKind::ChainWorld.horizon();
    let key_of = |s: &ChainState| serde_json::to_string(s).expect("state key");
    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut parent: BTreeMap<String, (String, ActionToken)> = BTreeMap::new();
    let mut queue: VecDeque<(ChainState, usize)> = VecDeque::new();
    visited.insert(key_of(start));
    queue.push_back((start.clone(), 0));
    while let Some((state, depth)) = queue.pop_front() {
        if depth >= horizon {
            continue;
        }
        let (_, candidates) = env.render(&state);
        for action in candidates {
            let next = env.transition(&state, &action);
            let next_key = key_of(&next);
            if next.done {
                if next.reward == 1.0 {
                    let mut plan = vec![action];
                    let mut cursor = key_of(&state);
                    while let Some((prev, act)) = parent.get(&cursor) {
                        plan.push(act.clone());
                        cursor = prev.clone();
                    }
                    plan.reverse();
                    return Some(plan);
                }
                continue;
            }
            if visited.insert(next_key.clone()) {
                parent.insert(next_key, (key_of(&state), action));
                queue.push_back((next, depth + 1));
            }
        }
    }
    None
}

/// Restore-free probe used by tests: whether a win is still reachable from
/// the state captured in `snapshot`.
pub fn win_reachable_from(env: &ChainWorldEnv, snapshot: &StateSnapshot) -> Result<bool> {
    let blob: ChainBlob = serde_json::from_str(&snapshot.internal_state)
        .map_err(|e| EnvError::MalformedSnapshot(e.to_string()))?;
    Ok(oracle_solve_chain_from(env, &blob.state).is_some())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> ChainWorldConfig {
        ChainWorldConfig {
            n_stages: 5,
            menu_size: 3,
            recoverable_fraction: 0.5,
            n_tasks_train: 6,
            n_tasks_test: 3,
            seed: 11,
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, _, _) = generate_chainworld(&small_config()).unwrap();
        let (b, _, _) = generate_chainworld(&small_config()).unwrap();
        assert_eq!(
            serde_json::to_string(a.tasks()).unwrap(),
            serde_json::to_string(b.tasks()).unwrap()
        );
    }

    #[test]
    fn optimal_episode_length_equals_stage_count() {
        let config = ChainWorldConfig {
            n_stages: 20,
            menu_size: 4,
            n_tasks_train: 2,
            n_tasks_test: 1,
            ..small_config()
        };
        let (mut env, train, _) = generate_chainworld(&config).unwrap();
        let plan = oracle_solve_chain(&mut env, train[0]).unwrap().unwrap();
        assert_eq!(plan.len(), 20);
    }

    #[test]
    fn wrong_choice_without_recovery_is_fatal() {
        let config = ChainWorldConfig {
            recoverable_fraction: 0.0,
            ..small_config()
        };
        let (mut env, train, _) = generate_chainworld(&config).unwrap();
        let first = env.reset(train[0]).unwrap();
        let task = env.task_for(train[0]).unwrap().clone();
        let wrong = first
            .candidates
            .iter()
            .find(|c| parse_chain_action(c.as_str()) != Some(task.stages[0].tools[task.stages[0].correct].as_str()))
            .unwrap()
            .clone();
        let result = env.step(&wrong).unwrap();
        assert!(result.done);
        assert_eq!(result.reward, 0.0);
        assert!(result.candidates.is_empty());
        assert!(!win_reachable_from(&env, &result.snapshot).unwrap());
    }

    #[test]
    fn jam_then_reset_recovers() {
        let config = ChainWorldConfig {
            recoverable_fraction: 1.0,
            ..small_config()
        };
        let (mut env, train, _) = generate_chainworld(&config).unwrap();
        let first = env.reset(train[0]).unwrap();
        let task = env.task_for(train[0]).unwrap().clone();
        let correct = task.stages[0].tools[task.stages[0].correct].clone();
        let wrong = first
            .candidates
            .iter()
            .find(|c| parse_chain_action(c.as_str()) != Some(correct.as_str()))
            .unwrap()
            .clone();
        let jammed = env.step(&wrong).unwrap();
        assert!(!jammed.done);
        assert!(jammed.observation.contains("jammed"));
        assert!(jammed
            .candidates
            .iter()
            .any(|c| c.as_str() == RESET_ACTION));
        // The wrong tool just tried is no longer offered.
        assert!(!jammed.candidates.contains(&wrong));
        let menu = env.step(&ActionToken::new(RESET_ACTION)).unwrap();
        assert!(menu.candidates.iter().any(|c| parse_chain_action(c.as_str()) == Some(correct.as_str())));
        // Win is still reachable after recovery.
        assert!(win_reachable_from(&env, &menu.snapshot).unwrap());
    }

    #[test]
    fn single_stage_two_tools_has_exactly_one_winning_first_action() {
        let config = ChainWorldConfig {
            n_stages: 1,
            menu_size: 2,
            recoverable_fraction: 0.0,
            n_tasks_train: 4,
            n_tasks_test: 1,
            seed: 3,
        };
        let (env, train, _) = generate_chainworld(&config).unwrap();
        for ctx in &train {
            let mut wins = 0;
            let first = env.clone().reset(*ctx).unwrap();
            for action in &first.candidates {
                let mut probe = env.clone();
                probe.reset(*ctx).unwrap();
                let result = probe.step(action).unwrap();
                if result.done && result.reward == 1.0 {
                    wins += 1;
                }
            }
            assert_eq!(wins, 1);
            assert_eq!(first.candidates.len(), 2);
        }
    }

    #[test]
    fn parse_roundtrips_menu_facts() {
        let (mut env, train, _) = generate_chainworld(&small_config()).unwrap();
        let first = env.reset(train[0]).unwrap();
        let task = env.task_for(train[0]).unwrap();
        match parse_chain_page(&first.observation) {
            ChainPage::Menu {
                stage,
                n_stages,
                hint,
                tools,
                jammed,
            } => {
                assert_eq!(stage, 0);
                assert_eq!(n_stages, 5);
                assert_eq!(hint, task.stages[0].hint());
                assert_eq!(tools, task.stages[0].tools);
                assert!(!jammed);
            }
            other => panic!("unexpected page: {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let mut config = small_config();
        config.menu_size = 1;
        assert!(generate_chainworld(&config).is_err());
        let mut config = small_config();
        config.recoverable_fraction = 1.5;
        assert!(generate_chainworld(&config).is_err());
        let mut config = small_config();
        config.n_stages = 0;
        assert!(generate_chainworld(&config).is_err());
    }
}
