//! The contextual-MDP contract every environment implements.
//!
//! Environments expose `reset` (start a subtask), `step` (apply one action
//! from the offered candidate set), and `restore` (resume from an arbitrary
//! recorded snapshot). Snapshots are immutable values that fully determine
//! future dynamics; fingerprints over their canonical serialization give
//! stable state identity across runs and platforms.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{EnvError, Result};
use crate::rng::fnv1a64;

/// Which concrete environment a snapshot or instance belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    MiniShop,
    ChainWorld,
}

impl EnvKind {
    /// Maximum episode length enforced by the episode runner, not the env.
    /// Both bounds comfortably exceed the optimal path lengths of the
    /// respective environments.
    pub fn horizon(self) -> usize {
        match self {
            EnvKind::MiniShop => 15,
            EnvKind::ChainWorld => 40,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EnvKind::MiniShop => write!(f, "minishop"),
            EnvKind::ChainWorld => write!(f, "chainworld"),
        }
    }
}

/// Train/test membership of a subtask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// Index of a subtask (initial state) within an environment's task set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ContextId {
    pub id: usize,
    pub split: Split,
}

impl ContextId {
    pub fn train(id: usize) -> Self {
        ContextId {
            id,
            split: Split::Train,
        }
    }

    pub fn test(id: usize) -> Self {
        ContextId {
            id,
            split: Split::Test,
        }
    }
}

impl fmt::Display for ContextId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.split, self.id)
    }
}

/// One action drawn from the candidate set offered with an observation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionToken(pub String);

impl ActionToken {
    pub fn new(text: impl Into<String>) -> Self {
        ActionToken(text.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActionToken {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Complete restorable environment state plus interaction history.
///
/// `internal_state` is an opaque blob owned by the producing environment;
/// `history` holds the (observation, action) pairs taken so far, one pair per
/// step, so `history.len() == step_index`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSnapshot {
    pub env_kind: EnvKind,
    pub internal_state: String,
    pub history: Vec<(String, String)>,
    pub step_index: usize,
}

/// Stable 64-bit identity of a snapshot's canonical serialization.
pub type FingerprintId = u64;

const SNAPSHOT_SCHEMA: u32 = 1;

#[derive(Serialize)]
struct CanonicalSnapshot<'a> {
    schema: u32,
    env_kind: EnvKind,
    step_index: usize,
    internal_state: &'a str,
    history: &'a [(String, String)],
}

impl StateSnapshot {
    /// Canonical, versioned text encoding. Field order is fixed by the
    /// struct definition, so the output is byte-stable across runs and
    /// platforms and usable as a fingerprint preimage.
    pub fn canonical_encoding(&self) -> String {
        serde_json::to_string(&CanonicalSnapshot {
            schema: SNAPSHOT_SCHEMA,
            env_kind: self.env_kind,
            step_index: self.step_index,
            internal_state: &self.internal_state,
            history: &self.history,
        })
        .expect("snapshot serialization cannot fail")
    }

    pub fn decode_canonical(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Owned {
            schema: u32,
            env_kind: EnvKind,
            step_index: usize,
            internal_state: String,
            history: Vec<(String, String)>,
        }
        let owned: Owned = serde_json::from_str(text)
            .map_err(|e| EnvError::MalformedSnapshot(e.to_string()))?;
        if owned.schema != SNAPSHOT_SCHEMA {
            return Err(EnvError::MalformedSnapshot(format!(
                "unsupported snapshot schema {}",
                owned.schema
            ))
            .into());
        }
        Ok(StateSnapshot {
            env_kind: owned.env_kind,
            internal_state: owned.internal_state,
            history: owned.history,
            step_index: owned.step_index,
        })
    }
}

/// Equal snapshots yield equal fingerprints; stable across runs and platforms.
pub fn state_fingerprint(snapshot: &StateSnapshot) -> FingerprintId {
    fnv1a64(snapshot.canonical_encoding().as_bytes())
}

/// The result of `reset`, `restore`, or `step`: the observation the agent
/// acts on next, the offered candidates, the sparse reward, and a snapshot
/// of the state the observation was rendered from.
#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub observation: String,
    pub candidates: Vec<ActionToken>,
    pub reward: f64,
    pub done: bool,
    pub snapshot: StateSnapshot,
}

impl StepResult {
    pub fn offers(&self, action: &ActionToken) -> bool {
        self.candidates.iter().any(|c| c == action)
    }
}

/// What the purchase judge (and the featurizer) needs to know about the
/// current subtask. ChainWorld tasks carry their goal in the observation
/// itself, so they need no extra structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TaskConstraints {
    Shopping {
        category: String,
        color: String,
        max_price: f64,
        /// Option group name -> required value, e.g. "size" -> "m".
        required_options: BTreeMap<String, String>,
    },
    Chain,
}

impl TaskConstraints {
    pub fn shopping(&self) -> Option<(&str, &str, f64, &BTreeMap<String, String>)> {
        match self {
            TaskConstraints::Shopping {
                category,
                color,
                max_price,
                required_options,
            } => Some((category, color, *max_price, required_options)),
            TaskConstraints::Chain => None,
        }
    }
}

/// The contextual-MDP contract.
///
/// Transitions are deterministic given the environment seed; all
/// stochasticity lives in policies and experts. A single instance is
/// confined to one worker; snapshots are immutable values safe to share.
pub trait Environment {
    fn kind(&self) -> EnvKind;

    /// Subtask ids available for a split.
    fn contexts(&self, split: Split) -> Vec<ContextId>;

    /// Constraint structure of a subtask (used by the judge, featurizer,
    /// and scripted experts).
    fn constraints(&self, context: ContextId) -> Result<TaskConstraints>;

    /// Start an episode at the initial state of `context`.
    fn reset(&mut self, context: ContextId) -> Result<StepResult>;

    /// Resume exactly at a previously recorded snapshot.
    fn restore(&mut self, snapshot: &StateSnapshot) -> Result<StepResult>;

    /// Apply one action from the current candidate set.
    fn step(&mut self, action: &ActionToken) -> Result<StepResult>;
}
