//! Trajectories, the positive-solution repository, and training examples.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::env::{ActionToken, ContextId, FingerprintId, StateSnapshot};
use crate::rng::fnv1a64;

pub type TrajId = u64;

/// Who produced an action: a scripted expert (by label) or the policy at a
/// given fine-tuning iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Expert(String),
    Policy(u32),
}

impl Provenance {
    pub fn is_expert(&self) -> bool {
        matches!(self, Provenance::Expert(_))
    }
}

/// Where a trajectory began: a subtask's initial state, or an intermediate
/// state of an expert trajectory (restored for simulation).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Initial,
    ExpertState {
        expert_traj_id: TrajId,
        state_index: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrajectoryStart {
    pub context: ContextId,
    pub origin: Origin,
}

/// One decision point: the state (by fingerprint, optionally with its
/// snapshot), what was observed and offered, and the action taken.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub fingerprint: FingerprintId,
    /// Present for trajectories produced in-process; dropped on persistence
    /// (states are reproducible by replay).
    pub snapshot: Option<StateSnapshot>,
    pub observation: String,
    pub candidates: Vec<ActionToken>,
    pub action: ActionToken,
    pub provenance: Provenance,
}

/// A terminated episode with its binary outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: TrajId,
    pub start: TrajectoryStart,
    pub steps: Vec<TrajectoryStep>,
    pub terminal_reward: f64,
    /// Fingerprint of the state the episode ended in.
    pub final_fingerprint: FingerprintId,
}

impl Trajectory {
    /// Number of states, counting the terminal one.
    pub fn n_states(&self) -> usize {
        self.steps.len() + 1
    }

    pub fn is_positive(&self) -> bool {
        self.terminal_reward == 1.0
    }

    /// Expert-provenance actions at step indices >= `index`.
    pub fn expert_actions_from(&self, index: usize) -> usize {
        self.steps[index.min(self.steps.len())..]
            .iter()
            .filter(|s| s.provenance.is_expert())
            .count()
    }

    /// Dedup key: same start and same full action sequence.
    pub fn dedup_key(&self) -> u64 {
        let actions: Vec<&str> = self.steps.iter().map(|s| s.action.as_str()).collect();
        let key = serde_json::to_string(&(&self.start, actions)).expect("key serialization");
        fnv1a64(key.as_bytes())
    }

    pub fn contains_action(&self, text: &str) -> bool {
        self.steps.iter().any(|s| s.action.as_str() == text)
    }
}

/// A trajectory reference plus the step index from which training loss
/// applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct TrainingExample {
    pub trajectory_id: TrajId,
    pub mask_start: usize,
}

/// Append-only store of positive trajectories with a fingerprint index used
/// for solution lookup.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryRepository {
    entries: Vec<Trajectory>,
    by_id: BTreeMap<TrajId, usize>,
    index: BTreeMap<FingerprintId, Vec<(TrajId, usize)>>,
    dedup: BTreeSet<u64>,
}

impl TrajectoryRepository {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Trajectory] {
        &self.entries
    }

    pub fn get(&self, id: TrajId) -> Option<&Trajectory> {
        self.by_id.get(&id).map(|&i| &self.entries[i])
    }

    /// Add the positive trajectories of a batch, skipping duplicates
    /// (identical origin and action sequence). Returns how many entries were
    /// actually added.
    pub fn update(&mut self, batch: &[Trajectory]) -> usize {
        let mut added = 0;
        for traj in batch {
            if !traj.is_positive() {
                continue;
            }
            let key = traj.dedup_key();
            if self.dedup.contains(&key) {
                continue;
            }
            assert!(
                !self.by_id.contains_key(&traj.id),
                "duplicate trajectory id {}",
                traj.id
            );
            self.dedup.insert(key);
            let idx = self.entries.len();
            self.by_id.insert(traj.id, idx);
            for (step_idx, step) in traj.steps.iter().enumerate() {
                self.index
                    .entry(step.fingerprint)
                    .or_default()
                    .push((traj.id, step_idx));
            }
            self.entries.push(traj.clone());
            added += 1;
        }
        added
    }

    /// The solution lookup: among positive trajectories containing the
    /// state, pick the one with the fewest expert-provenance actions from
    /// the matching step on; ties break to the shorter remaining suffix and
    /// then the smaller trajectory id.
    pub fn get_traj(&self, state_fp: FingerprintId) -> Option<(TrajId, usize)> {
        let matches = self.index.get(&state_fp)?;
        matches
            .iter()
            .map(|&(id, step_idx)| {
                let traj = self.get(id).expect("indexed id exists");
                let expert = traj.expert_actions_from(step_idx);
                let remaining = traj.steps.len() - step_idx;
                (expert, remaining, id, step_idx)
            })
            .min()
            .map(|(_, _, id, step_idx)| (id, step_idx))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Split;

    pub(crate) fn stub_step(fp: FingerprintId, expert: bool) -> TrajectoryStep {
        TrajectoryStep {
            fingerprint: fp,
            snapshot: None,
            observation: format!("obs {fp}"),
            candidates: vec![ActionToken::new("a"), ActionToken::new("b")],
            action: ActionToken::new("a"),
            provenance: if expert {
                Provenance::Expert("strong".into())
            } else {
                Provenance::Policy(1)
            },
        }
    }

    fn stub_traj(id: TrajId, fps: &[(FingerprintId, bool)], reward: f64) -> Trajectory {
        Trajectory {
            id,
            start: TrajectoryStart {
                context: ContextId {
                    id: 0,
                    split: Split::Train,
                },
                origin: Origin::Initial,
            },
            steps: fps.iter().map(|&(fp, e)| stub_step(fp, e)).collect(),
            terminal_reward: reward,
            final_fingerprint: 999,
        }
    }

    #[test]
    fn repository_keeps_only_positives_and_dedups() {
        let mut repo = TrajectoryRepository::new();
        let win = stub_traj(1, &[(10, true), (11, false)], 1.0);
        let loss = stub_traj(2, &[(20, true)], 0.0);
        assert_eq!(repo.update(&[win.clone(), loss]), 1);
        assert_eq!(repo.len(), 1);
        // Identical origin and action sequence under a fresh id: skipped.
        let mut dup = win.clone();
        dup.id = 3;
        assert_eq!(repo.update(&[dup]), 0);
        assert_eq!(repo.len(), 1);
        assert!(repo.entries().iter().all(|t| t.terminal_reward == 1.0));
    }

    #[test]
    fn get_traj_prefers_fewer_expert_actions() {
        let mut repo = TrajectoryRepository::new();
        // Both contain fingerprint 10 at index 0; the second has fewer
        // expert actions from there.
        let heavy = stub_traj(1, &[(10, true), (11, true), (12, true)], 1.0);
        let mut light = stub_traj(2, &[(10, true), (13, false), (14, false)], 1.0);
        light.steps[1].action = ActionToken::new("b");
        repo.update(&[heavy, light]);
        assert_eq!(repo.get_traj(10), Some((2, 0)));
        assert_eq!(repo.get_traj(13), Some((2, 1)));
        assert_eq!(repo.get_traj(404), None);
    }

    #[test]
    fn get_traj_breaks_ties_by_remaining_length_then_id() {
        let mut repo = TrajectoryRepository::new();
        let mut long = stub_traj(5, &[(10, false), (11, false), (12, false)], 1.0);
        long.steps[0].action = ActionToken::new("b");
        let short = stub_traj(9, &[(10, false), (13, false)], 1.0);
        repo.update(&[long, short]);
        // Equal expert counts (zero); shorter remaining suffix wins.
        assert_eq!(repo.get_traj(10), Some((9, 0)));
    }
}
