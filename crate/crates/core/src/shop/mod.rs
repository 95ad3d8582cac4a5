//! MiniShop: a compact text-shopping environment.
//!
//! An episode starts from an instruction ("i need a crimson sofa, size: m,
//! price lower than 120.00 dollars"), and the agent searches, pages through
//! results with `click[Next]`, opens product pages, selects option values,
//! and finishes with `click[Buy Now]`. The judge pays 1 iff the purchased
//! product meets every constraint and every required option was clicked.
//!
//! Tasks carry difficulty tags realized through the result ranking:
//! `needs_next` tasks never show a satisfying product on page one, and
//! `needs_back` tasks hide every satisfying product from the initial query,
//! so the agent must abandon a dead product page (`click[Back to Search]`)
//! and re-search with a refined query that only becomes available after a
//! product page has been inspected.

mod gen;
mod rank;
mod solve;
mod text;

pub use gen::generate_minishop;
pub use rank::{rank_results, ranked_results_for_task};
pub use solve::{needed_clicks, oracle_solve, ActionFilter};
pub use text::{parse_shop_action, parse_shop_page, ListedProduct, ShopAction, ShopPage};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::env::{
    ActionToken, ContextId, EnvKind, Environment, Split, StateSnapshot, StepResult,
    TaskConstraints,
};
use crate::error::{EnvError, Error, Result};
use crate::rng::fnv1a64;

/// Maximum number of result pages the shop front-end will serve per query.
pub const MAX_RESULT_PAGES: usize = 4;

/// A catalog entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Product {
    pub pid: String,
    pub category: String,
    pub color: String,
    pub price: f64,
    /// Option group name -> offered values, e.g. "size" -> ["s", "m", "l"].
    pub option_groups: BTreeMap<String, Vec<String>>,
    pub title: String,
}

impl Product {
    pub fn has_option(&self, group: &str, value: &str) -> bool {
        self.option_groups
            .get(group)
            .map(|vs| vs.iter().any(|v| v == value))
            .unwrap_or(false)
    }
}

/// Difficulty tag of a task, realized by the ranking rig.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum DifficultyTag {
    Easy,
    NeedsNext,
    NeedsBack,
}

impl DifficultyTag {
    pub fn as_str(self) -> &'static str {
        match self {
            DifficultyTag::Easy => "easy",
            DifficultyTag::NeedsNext => "needs_next",
            DifficultyTag::NeedsBack => "needs_back",
        }
    }
}

/// One subtask: an instruction plus the constraint structure the judge
/// enforces, with a target product guaranteed to satisfy it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: usize,
    pub split: Split,
    pub instruction: String,
    pub category: String,
    pub color: String,
    pub max_price: f64,
    pub required_options: BTreeMap<String, String>,
    pub target_pid: String,
    pub tags: BTreeSet<DifficultyTag>,
    /// For needs_next tasks: result pages of non-satisfiers before the
    /// first satisfying product appears.
    pub next_depth: usize,
    /// Per-task ranking perturbation seed.
    pub rank_seed: u64,
    /// For needs_back tasks: the plausible product that lacks a required
    /// option and is ranked first for the initial query. For needs_next
    /// tasks: the first look-alike trap leading the satisfier page.
    pub decoy_pid: Option<String>,
    /// For needs_next tasks: the second look-alike trap, listed between the
    /// first trap and the target.
    pub decoy2_pid: Option<String>,
}

impl TaskSpec {
    pub fn constraints(&self) -> TaskConstraints {
        TaskConstraints::Shopping {
            category: self.category.clone(),
            color: self.color.clone(),
            max_price: self.max_price,
            required_options: self.required_options.clone(),
        }
    }

    pub fn primary_tag(&self) -> DifficultyTag {
        *self.tags.iter().next().expect("task has a tag")
    }
}

/// Generator configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiniShopConfig {
    pub n_products: usize,
    pub page_size: usize,
    pub n_tasks_train: usize,
    pub n_tasks_test: usize,
    /// Fractions over difficulty tags; must sum to 1.
    pub difficulty_mix: BTreeMap<DifficultyTag, f64>,
    pub seed: u64,
}

impl Default for MiniShopConfig {
    fn default() -> Self {
        let mut mix = BTreeMap::new();
        mix.insert(DifficultyTag::Easy, 0.4);
        mix.insert(DifficultyTag::NeedsNext, 0.3);
        mix.insert(DifficultyTag::NeedsBack, 0.3);
        MiniShopConfig {
            n_products: 60,
            page_size: 3,
            n_tasks_train: 40,
            n_tasks_test: 20,
            difficulty_mix: mix,
            seed: 7,
        }
    }
}

impl MiniShopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.page_size < 2 {
            return Err(Error::Config("page_size must be at least 2".into()));
        }
        if self.n_products == 0 {
            return Err(Error::Config("n_products must be positive".into()));
        }
        let mut total = 0.0;
        for (tag, f) in &self.difficulty_mix {
            if !(0.0..=1.0).contains(f) {
                return Err(Error::Config(format!(
                    "difficulty fraction for {} must be in [0, 1], got {f}",
                    tag.as_str()
                )));
            }
            total += f;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "difficulty_mix fractions must sum to 1, got {total}"
            )));
        }
        let needs_next = self
            .difficulty_mix
            .get(&DifficultyTag::NeedsNext)
            .copied()
            .unwrap_or(0.0);
        if needs_next > 0.0 && self.n_products < 2 * self.page_size {
            return Err(Error::Infeasible(format!(
                "needs_next tasks require n_products >= 2 * page_size \
                 (a full page of non-matching products plus off-page matches); \
                 got n_products = {}, page_size = {}",
                self.n_products, self.page_size
            )));
        }
        Ok(())
    }
}

/// The product catalog plus the page size the shop front-end serves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub products: Vec<Product>,
    pub page_size: usize,
}

impl Catalog {
    pub fn get(&self, pid: &str) -> Option<&Product> {
        self.products.iter().find(|p| p.pid == pid)
    }
}

/// Win/loss purchase judgement: 1 iff the category matches, the price is
/// within budget, the color constraint is met by the product attribute or a
/// clicked color option, and every required option value was clicked.
pub fn judge_purchase(
    product: &Product,
    chosen_options: &BTreeMap<String, BTreeSet<String>>,
    constraints: &TaskConstraints,
) -> f64 {
    let Some((category, color, max_price, required)) = constraints.shopping() else {
        return 0.0;
    };
    if product.category != category {
        return 0.0;
    }
    if product.price > max_price {
        return 0.0;
    }
    let color_ok = product.color == color
        || chosen_options
            .get("color")
            .map(|vs| vs.contains(color))
            .unwrap_or(false);
    if !color_ok {
        return 0.0;
    }
    for (group, value) in required {
        let clicked = chosen_options
            .get(group)
            .map(|vs| vs.contains(value))
            .unwrap_or(false);
        if !clicked {
            return 0.0;
        }
    }
    1.0
}

/// Whether a product could satisfy the constraints under the best possible
/// option clicks. This is the predicate the ranking rig demotes or filters.
pub fn satisfies_best_case(product: &Product, constraints: &TaskConstraints) -> bool {
    let Some((category, color, max_price, required)) = constraints.shopping() else {
        return false;
    };
    if product.category != category || product.price > max_price {
        return false;
    }
    let color_ok = product.color == color || product.has_option("color", color);
    if !color_ok {
        return false;
    }
    required.iter().all(|(g, v)| product.has_option(g, v))
}

// ---------------------------------------------------------------------------
// Environment implementation
// ---------------------------------------------------------------------------

/// Which of the task's two queries a results page came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub(crate) enum QueryKind {
    Canonical,
    Refined,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "phase")]
pub(crate) enum ShopPhase {
    Search,
    Results {
        query: QueryKind,
        page: usize,
    },
    Product {
        pid: String,
        selected: BTreeMap<String, BTreeSet<String>>,
    },
    Terminal {
        pid: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub(crate) struct ShopState {
    pub(crate) task: usize,
    pub(crate) phase: ShopPhase,
    /// Product pages opened this episode; listings mark them as viewed and
    /// any visit unlocks the refined query.
    pub(crate) visited: std::collections::BTreeSet<String>,
    pub(crate) done: bool,
    pub(crate) reward: f64,
}

#[derive(Serialize, Deserialize)]
struct ShopBlob {
    world: u64,
    state: ShopState,
}

#[derive(Debug, Clone)]
struct Episode {
    state: ShopState,
    history: Vec<(String, String)>,
}

/// The MiniShop environment instance: an immutable world (catalog + tasks)
/// plus at most one active episode.
#[derive(Debug, Clone)]
pub struct MiniShopEnv {
    catalog: Arc<Catalog>,
    tasks: Arc<Vec<TaskSpec>>,
    world: u64,
    episode: Option<Episode>,
}

impl MiniShopEnv {
    pub(crate) fn new(catalog: Catalog, tasks: Vec<TaskSpec>) -> Self {
        let ident = serde_json::to_string(&(&catalog, &tasks)).expect("world serialization");
        MiniShopEnv {
            catalog: Arc::new(catalog),
            tasks: Arc::new(tasks),
            world: fnv1a64(ident.as_bytes()),
            episode: None,
        }
    }

    pub fn catalog(&self) -> &Catalog {
        &self.catalog
    }

    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub(crate) fn task_for(&self, context: ContextId) -> Result<&TaskSpec> {
        match self.tasks.get(context.id) {
            Some(t) if t.split == context.split => Ok(t),
            _ => Err(EnvError::UnknownContext {
                id: context.id,
                split: context.split.to_string(),
            }
            .into()),
        }
    }

    fn snapshot_of(&self, ep: &Episode) -> StateSnapshot {
        let blob = ShopBlob {
            world: self.world,
            state: ep.state.clone(),
        };
        StateSnapshot {
            env_kind: EnvKind::MiniShop,
            internal_state: serde_json::to_string(&blob).expect("state serialization"),
            history: ep.history.clone(),
            step_index: ep.history.len(),
        }
    }

    fn result_of(&self, ep: &Episode) -> StepResult {
        let task = &self.tasks[ep.state.task];
        let (observation, candidates) = text::render(&self.catalog, task, &ep.state);
        StepResult {
            observation,
            candidates,
            reward: if ep.state.done { ep.state.reward } else { 0.0 },
            done: ep.state.done,
            snapshot: self.snapshot_of(ep),
        }
    }

    /// Apply `action` to `state`. Assumes the action was validated against
    /// the rendered candidate set.
    pub(crate) fn transition(&self, state: &ShopState, action: &ActionToken) -> ShopState {
        let task = &self.tasks[state.task];
        let mut next = state.clone();
        match parse_shop_action(action.as_str()) {
            ShopAction::Search(query_text) => {
                let kind = if query_text == text::refined_query(task).unwrap_or_default() {
                    QueryKind::Refined
                } else {
                    QueryKind::Canonical
                };
                next.phase = ShopPhase::Results {
                    query: kind,
                    page: 0,
                };
            }
            ShopAction::Next => {
                if let ShopPhase::Results { query, page } = &state.phase {
                    next.phase = ShopPhase::Results {
                        query: *query,
                        page: page + 1,
                    };
                }
            }
            ShopAction::Prev => {
                if let ShopPhase::Results { query, page } = &state.phase {
                    next.phase = ShopPhase::Results {
                        query: *query,
                        page: page.saturating_sub(1),
                    };
                }
            }
            ShopAction::Back => {
                next.phase = ShopPhase::Search;
            }
            ShopAction::Product(pid) => {
                next.visited.insert(pid.clone());
                next.phase = ShopPhase::Product {
                    pid,
                    selected: BTreeMap::new(),
                };
            }
            ShopAction::Option(value) => {
                if let ShopPhase::Product { pid, selected } = &state.phase {
                    let product = self.catalog.get(pid).expect("product exists");
                    let group = product
                        .option_groups
                        .iter()
                        .find(|(_, vs)| vs.iter().any(|v| *v == value))
                        .map(|(g, _)| g.clone())
                        .expect("option value belongs to a group");
                    let mut selected = selected.clone();
                    selected.entry(group).or_default().insert(value);
                    next.phase = ShopPhase::Product {
                        pid: pid.clone(),
                        selected,
                    };
                }
            }
            ShopAction::Buy => {
                if let ShopPhase::Product { pid, selected } = &state.phase {
                    let product = self.catalog.get(pid).expect("product exists");
                    next.reward = judge_purchase(product, selected, &task.constraints());
                    next.done = true;
                    next.phase = ShopPhase::Terminal { pid: pid.clone() };
                }
            }
        }
        next
    }
}

impl Environment for MiniShopEnv {
    fn kind(&self) -> EnvKind {
        EnvKind::MiniShop
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
        Ok(self.task_for(context)?.constraints())
    }

    fn reset(&mut self, context: ContextId) -> Result<StepResult> {
        let task = self.task_for(context)?;
        let ep = Episode {
            state: ShopState {
                task: task.task_id,
                phase: ShopPhase::Search,
                visited: Default::default(),
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
        if snapshot.env_kind != EnvKind::MiniShop {
            return Err(EnvError::EnvKindMismatch {
                snapshot: snapshot.env_kind.to_string(),
                env: EnvKind::MiniShop.to_string(),
            }
            .into());
        }
        let blob: ShopBlob = serde_json::from_str(&snapshot.internal_state)
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Environment;

    fn reference_env() -> (MiniShopEnv, Vec<ContextId>, Vec<ContextId>) {
        generate_minishop(&MiniShopConfig::default()).expect("reference world generates")
    }

    #[test]
    fn generation_is_deterministic() {
        let (a, train_a, test_a) = reference_env();
        let (b, train_b, test_b) = reference_env();
        assert_eq!(train_a, train_b);
        assert_eq!(test_a, test_b);
        assert_eq!(
            serde_json::to_string(a.catalog()).unwrap(),
            serde_json::to_string(b.catalog()).unwrap()
        );
        assert_eq!(
            serde_json::to_string(a.tasks()).unwrap(),
            serde_json::to_string(b.tasks()).unwrap()
        );
    }

    #[test]
    fn reference_world_has_expected_shape() {
        let (env, train, test) = reference_env();
        assert_eq!(train.len(), 40);
        assert_eq!(test.len(), 20);
        assert_eq!(env.catalog().products.len(), 60);
        for p in &env.catalog().products {
            assert!(p.option_groups.values().all(|vs| !vs.is_empty()));
            let title = p.title.to_ascii_lowercase();
            assert!(title.contains(&p.category));
        }
    }

    #[test]
    fn reset_twice_is_byte_identical() {
        let (mut env, train, _) = reference_env();
        let a = env.reset(train[0]).unwrap();
        let b = env.reset(train[0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.snapshot.canonical_encoding(), b.snapshot.canonical_encoding());
        assert!(!a.done);
        assert_eq!(a.reward, 0.0);
        assert_eq!(a.snapshot.step_index, 0);
        assert!(a.observation.contains("Instruction: "));
    }

    #[test]
    fn unknown_context_errors() {
        let (mut env, _, _) = reference_env();
        assert!(env.reset(ContextId::train(10_000)).is_err());
        // Right index, wrong split.
        assert!(env.reset(ContextId::test(0)).is_err());
    }

    #[test]
    fn restore_of_initial_snapshot_reproduces_reset() {
        let (mut env, train, _) = reference_env();
        let a = env.reset(train[3]).unwrap();
        let b = env.restore(&a.snapshot).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn restore_rejects_wrong_kind_and_garbage() {
        let (mut env, train, _) = reference_env();
        let mut snap = env.reset(train[0]).unwrap().snapshot;
        snap.env_kind = crate::env::EnvKind::ChainWorld;
        assert!(env.restore(&snap).is_err());
        let mut garbled = env.reset(train[0]).unwrap().snapshot;
        garbled.internal_state = "not json".into();
        assert!(env.restore(&garbled).is_err());
    }

    #[test]
    fn step_rejects_unoffered_actions_and_finished_episodes() {
        let (mut env, train, _) = reference_env();
        env.reset(train[0]).unwrap();
        let err = env.step(&ActionToken::new("click[Buy Now]"));
        assert!(err.is_err());
    }

    #[test]
    fn judge_handles_boundaries() {
        let mut groups = BTreeMap::new();
        groups.insert("size".to_string(), vec!["s".into(), "m".into()]);
        let product = Product {
            pid: "P000".into(),
            category: "sofa".into(),
            color: "navy".into(),
            price: 100.0,
            option_groups: groups,
            title: "Modern Navy Sofa".into(),
        };
        let mut required = BTreeMap::new();
        required.insert("size".to_string(), "m".to_string());
        let constraints = TaskConstraints::Shopping {
            category: "sofa".into(),
            color: "navy".into(),
            max_price: 100.0,
            required_options: required,
        };
        let mut chosen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        // Required size never clicked.
        assert_eq!(judge_purchase(&product, &chosen, &constraints), 0.0);
        chosen.entry("size".into()).or_default().insert("m".into());
        assert_eq!(judge_purchase(&product, &chosen, &constraints), 1.0);
        // Price boundary is inclusive; any positive excess fails.
        let mut pricier = product.clone();
        pricier.price = 100.01;
        assert_eq!(judge_purchase(&pricier, &chosen, &constraints), 0.0);
    }

    #[test]
    fn judge_option_subsets_match_enumeration_oracle() {
        // Enumerate all subsets of the target's clickable values and check
        // that exactly the supersets of the required set win.
        let (env, train, _) = reference_env();
        let task = env
            .tasks()
            .iter()
            .find(|t| !t.required_options.is_empty() && t.split == Split::Train)
            .expect("a task with required options exists");
        let _ = train;
        let target = env.catalog().get(&task.target_pid).unwrap();
        let constraints = task.constraints();
        let values: Vec<(String, String)> = target
            .option_groups
            .iter()
            .flat_map(|(g, vs)| vs.iter().map(move |v| (g.clone(), v.clone())))
            .collect();
        let mut wanted: BTreeSet<(String, String)> = task
            .required_options
            .iter()
            .map(|(g, v)| (g.clone(), v.clone()))
            .collect();
        if target.color != task.color {
            wanted.insert(("color".to_string(), task.color.clone()));
        }
        for mask in 0..(1u32 << values.len().min(12)) {
            let mut chosen: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
            for (i, (g, v)) in values.iter().enumerate().take(12) {
                if mask & (1 << i) != 0 {
                    chosen.entry(g.clone()).or_default().insert(v.clone());
                }
            }
            let clicked: BTreeSet<(String, String)> = chosen
                .iter()
                .flat_map(|(g, vs)| vs.iter().map(move |v| (g.clone(), v.clone())))
                .collect();
            let expect = wanted.is_subset(&clicked);
            let got = judge_purchase(target, &chosen, &constraints) == 1.0;
            assert_eq!(got, expect, "mask {mask:b}");
        }
    }

    #[test]
    fn infeasible_needs_next_mix_errors() {
        let mut config = MiniShopConfig::default();
        config.n_products = 5;
        config.page_size = 3;
        config.difficulty_mix.clear();
        config.difficulty_mix.insert(DifficultyTag::NeedsNext, 1.0);
        let err = generate_minishop(&config).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("needs_next"), "unexpected message: {msg}");
    }

    #[test]
    fn page_size_must_be_at_least_two() {
        let mut config = MiniShopConfig::default();
        config.page_size = 1;
        assert!(generate_minishop(&config).is_err());
    }

    #[test]
    fn rank_exact_title_query_wins() {
        let (env, _, _) = reference_env();
        let catalog = env.catalog();
        let p = &catalog.products[5];
        let ranked = rank_results(catalog, &p.title, 123);
        assert_eq!(ranked.first(), Some(&p.pid));
    }

    #[test]
    fn rank_empty_query_is_empty() {
        let (env, _, _) = reference_env();
        assert!(rank_results(env.catalog(), "", 1).is_empty());
        assert!(rank_results(env.catalog(), "   ", 1).is_empty());
    }

    #[test]
    fn needs_next_page_one_has_no_satisfying_product() {
        let (env, _, _) = reference_env();
        for task in env.tasks().iter().filter(|t| t.tags.contains(&DifficultyTag::NeedsNext)) {
            let q = text::canonical_query(task);
            let ranked = ranked_results_for_task(env.catalog(), task, &q);
            let constraints = task.constraints();
            for pid in ranked.iter().take(env.catalog().page_size) {
                let p = env.catalog().get(pid).unwrap();
                assert!(
                    !satisfies_best_case(p, &constraints),
                    "task {} leaked satisfier {} onto page 1",
                    task.task_id,
                    pid
                );
            }
            assert!(
                ranked.iter().any(|pid| {
                    satisfies_best_case(env.catalog().get(pid).unwrap(), &constraints)
                }),
                "task {} lost all satisfiers",
                task.task_id
            );
        }
    }

    #[test]
    fn oracle_plans_replay_to_reward_one() {
        let (env, train, _) = reference_env();
        for ctx in train.iter().take(6) {
            let mut probe = env.clone();
            let plan = oracle_solve(&mut probe, *ctx, ActionFilter::None)
                .unwrap()
                .expect("solvable");
            let mut runner = env.clone();
            let mut result = runner.reset(*ctx).unwrap();
            for action in &plan {
                assert!(result.offers(action), "plan action not offered");
                result = runner.step(action).unwrap();
            }
            assert!(result.done);
            assert_eq!(result.reward, 1.0);
        }
    }
}
