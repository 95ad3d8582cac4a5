//! Desk-scale laboratory for agent fine-tuning with expert-failure mining.
//!
//! The crate provides two deterministic snapshot/restore environments
//! (MiniShop and ChainWorld), scripted experts with tunable failure modes,
//! a featurized softmax policy trained with a masked cross-entropy loss,
//! the exploration/fine-tuning loops (EEF, RFT, and offline baselines), and
//! an experiment harness with evaluation, navigation statistics, budget
//! sweeps, and persistence.

pub mod chain;
pub mod config;
pub mod eef;
pub mod env;
pub mod error;
pub mod eval;
pub mod expert;
pub mod features;
pub mod persist;
pub mod pipeline;
pub mod policy;
pub mod rng;
pub mod runner;
pub mod shop;
pub mod trajectory;

pub use chain::{generate_chainworld, ChainWorldConfig, ChainWorldEnv};
pub use env::{
    state_fingerprint, ActionToken, ContextId, EnvKind, Environment, FingerprintId, Split,
    StateSnapshot, StepResult, TaskConstraints,
};
pub use error::{EnvError, Error, Result};
pub use config::{EnvChoice, ExperimentConfig, MethodChoice};
pub use eef::{
    build_training_set, explore_iteration, need_recover_state, run_eef, run_rft, rollout,
    select_expert_states, train_offline, EEFConfig, OfflineVariant, RunOutcome,
    TEMPERATURE_LADDER,
};
pub use eval::{budget_sweep, evaluate, navigation_stats, EvalMode, NavigationStats, SweepEntry};
pub use expert::{
    calibrate_profile, expert_act, generate_expert_dataset, ExpertDataset, ExpertProfile,
};
pub use features::{featurize, featurize_all, FeatureVector, FEATURE_DIM, FEATURE_SCHEMA_VERSION};
pub use policy::{
    action_distribution, grad_masked_sft, greedy_action, masked_sft_loss, sample_action,
    sft_update, PolicyParams, TrainConfig, TrainSequence, TrainStep,
};
pub use trajectory::{
    Origin, Provenance, TrainingExample, Trajectory, TrajectoryRepository, TrajectoryStart,
    TrajectoryStep, TrajId,
};
pub use shop::{
    generate_minishop, judge_purchase, rank_results, Catalog, DifficultyTag, MiniShopConfig,
    MiniShopEnv, Product, TaskSpec,
};
