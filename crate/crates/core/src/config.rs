//! Experiment configuration: a flat `key = value` text format.
//!
//! Unknown keys are rejected. Seeds never appear in config files; the CLI
//! seed (or the caller) determines every stream. See the README for the
//! documented key list.

use crate::chain::ChainWorldConfig;
use crate::eef::{EEFConfig, OfflineVariant};
use crate::error::{Error, Result};
use crate::expert::ExpertProfile;
use crate::policy::TrainConfig;
use crate::shop::{DifficultyTag, MiniShopConfig};

/// Which environment a config builds.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvChoice {
    Shop(MiniShopConfig),
    Chain(ChainWorldConfig),
}

/// Training method selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodChoice {
    Eef,
    Rft,
    SftAll,
    SftPos,
    Nat,
}

impl MethodChoice {
    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "eef" => Ok(MethodChoice::Eef),
            "rft" => Ok(MethodChoice::Rft),
            "sft-all" | "sft_all" => Ok(MethodChoice::SftAll),
            "sft-pos" | "sft_pos" => Ok(MethodChoice::SftPos),
            "nat" => Ok(MethodChoice::Nat),
            other => Err(Error::Config(format!(
                "unknown method {other:?}; expected eef, rft, sft-all, sft-pos, or nat"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MethodChoice::Eef => "eef",
            MethodChoice::Rft => "rft",
            MethodChoice::SftAll => "sft-all",
            MethodChoice::SftPos => "sft-pos",
            MethodChoice::Nat => "nat",
        }
    }

    pub fn offline_variant(self) -> Option<OfflineVariant> {
        match self {
            MethodChoice::SftAll => Some(OfflineVariant::SftAll),
            MethodChoice::SftPos => Some(OfflineVariant::SftPos),
            MethodChoice::Nat => Some(OfflineVariant::Nat),
            _ => None,
        }
    }
}

/// An expert to synthesize: a base profile plus an optional win-rate
/// calibration target (binary search on the overlook rate).
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSpec {
    pub base: ExpertProfile,
    pub target_winrate: Option<f64>,
    pub tolerance: f64,
}

/// Everything a training run needs, minus seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub env: EnvChoice,
    /// Experts used to build the demonstration dataset, merged in order.
    pub experts: Vec<ExpertSpec>,
    pub method: MethodChoice,
    pub eef: EEFConfig,
    /// Rollouts per subtask per iteration for the rejection-sampling
    /// baseline.
    pub rft_samples: usize,
    pub train: TrainConfig,
    pub n_seeds: usize,
}

impl Default for ExperimentConfig {
    /// The reference study configuration: the default MiniShop world, a
    /// strong expert calibrated to a 0.356 win rate, and a learning rate
    /// high enough for the linear policy to fit its data in six epochs.
    fn default() -> Self {
        ExperimentConfig {
            env: EnvChoice::Shop(MiniShopConfig::default()),
            experts: vec![ExpertSpec {
                base: ExpertProfile::strong(),
                target_winrate: Some(0.356),
                tolerance: 0.04,
            }],
            method: MethodChoice::Eef,
            eef: EEFConfig::default(),
            rft_samples: 6,
            train: TrainConfig {
                learning_rate: 0.5,
                ..TrainConfig::default()
            },
            n_seeds: 1,
        }
    }
}

impl ExperimentConfig {
    /// Reference config extended with the weaker second expert.
    pub fn reference_two_expert() -> Self {
        let mut config = ExperimentConfig::default();
        config.experts.push(ExpertSpec {
            base: ExpertProfile::weak(),
            target_winrate: Some(0.232),
            tolerance: 0.04,
        });
        config
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ExperimentConfig::default();
        let mut expert_order: Vec<String> = vec!["strong".into()];
        let mut chain = ChainWorldConfig::default();
        let mut shop = MiniShopConfig::default();
        let mut kind = "minishop".to_string();
        let mut strong_spec = ExpertSpec {
            base: ExpertProfile::strong(),
            target_winrate: Some(0.356),
            tolerance: 0.04,
        };
        let mut weak_spec = ExpertSpec {
            base: ExpertProfile::weak(),
            target_winrate: Some(0.232),
            tolerance: 0.04,
        };

        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::FileParse {
                line: lineno + 1,
                message: format!("expected `key = value`, got {raw:?}"),
            })?;
            let key = key.trim();
            let value = value.trim();
            let bad = |message: String| Error::FileParse {
                line: lineno + 1,
                message,
            };
            let parse_f64 = |v: &str| -> Result<f64> {
                v.parse()
                    .map_err(|_| bad(format!("expected a number for {key}, got {v:?}")))
            };
            let parse_usize = |v: &str| -> Result<usize> {
                v.parse()
                    .map_err(|_| bad(format!("expected an integer for {key}, got {v:?}")))
            };
            let parse_bool = |v: &str| -> Result<bool> {
                v.parse()
                    .map_err(|_| bad(format!("expected true/false for {key}, got {v:?}")))
            };
            match key {
                "env.kind" => kind = value.to_string(),
                "env.n_products" => shop.n_products = parse_usize(value)?,
                "env.page_size" => shop.page_size = parse_usize(value)?,
                "env.n_tasks_train" => shop.n_tasks_train = parse_usize(value)?,
                "env.n_tasks_test" => shop.n_tasks_test = parse_usize(value)?,
                "env.mix.easy" => {
                    shop.difficulty_mix
                        .insert(DifficultyTag::Easy, parse_f64(value)?);
                }
                "env.mix.needs_next" => {
                    shop.difficulty_mix
                        .insert(DifficultyTag::NeedsNext, parse_f64(value)?);
                }
                "env.mix.needs_back" => {
                    shop.difficulty_mix
                        .insert(DifficultyTag::NeedsBack, parse_f64(value)?);
                }
                "chain.n_stages" => chain.n_stages = parse_usize(value)?,
                "chain.menu_size" => chain.menu_size = parse_usize(value)?,
                "chain.recoverable_fraction" => {
                    chain.recoverable_fraction = parse_f64(value)?
                }
                "chain.n_tasks_train" => chain.n_tasks_train = parse_usize(value)?,
                "chain.n_tasks_test" => chain.n_tasks_test = parse_usize(value)?,
                "experts" => {
                    expert_order = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect();
                }
                "expert.strong.p_overlook" => strong_spec.base.p_overlook = parse_f64(value)?,
                "expert.strong.p_recover" => strong_spec.base.p_recover = parse_f64(value)?,
                "expert.strong.p_attempt_next" => {
                    strong_spec.base.p_attempt_next = parse_f64(value)?
                }
                "expert.strong.search_quality" => {
                    strong_spec.base.search_quality = parse_f64(value)?
                }
                "expert.strong.target_winrate" => {
                    strong_spec.target_winrate = Some(parse_f64(value)?)
                }
                "expert.strong.tolerance" => strong_spec.tolerance = parse_f64(value)?,
                "expert.weak.p_overlook" => weak_spec.base.p_overlook = parse_f64(value)?,
                "expert.weak.p_recover" => weak_spec.base.p_recover = parse_f64(value)?,
                "expert.weak.p_attempt_next" => {
                    weak_spec.base.p_attempt_next = parse_f64(value)?
                }
                "expert.weak.search_quality" => {
                    weak_spec.base.search_quality = parse_f64(value)?
                }
                "expert.weak.target_winrate" => {
                    weak_spec.target_winrate = Some(parse_f64(value)?)
                }
                "expert.weak.tolerance" => weak_spec.tolerance = parse_f64(value)?,
                "method" => config.method = MethodChoice::parse(value)?,
                "eef.simulations_per_expert" => {
                    config.eef.simulations_per_expert = parse_usize(value)?
                }
                "eef.iterations" => config.eef.iterations = parse_usize(value)?,
                "eef.k_initial" => config.eef.k_initial = parse_usize(value)?,
                "eef.warm_start" => config.eef.warm_start = parse_bool(value)?,
                "eef.temperatures" => {
                    let temps: std::result::Result<Vec<f64>, _> =
                        value.split(',').map(|t| t.trim().parse()).collect();
                    config.eef.temperatures =
                        temps.map_err(|_| bad(format!("bad temperature list {value:?}")))?;
                }
                "rft.samples_per_subtask" => config.rft_samples = parse_usize(value)?,
                "train.learning_rate" => config.train.learning_rate = parse_f64(value)?,
                "train.epochs" => config.train.epochs = parse_usize(value)?,
                "train.batch_size" => config.train.batch_size = parse_usize(value)?,
                "n_seeds" => config.n_seeds = parse_usize(value)?,
                other => {
                    return Err(bad(format!("unknown configuration key {other:?}")));
                }
            }
        }

        config.env = match kind.as_str() {
            "minishop" => EnvChoice::Shop(shop),
            "chainworld" => EnvChoice::Chain(chain),
            other => {
                return Err(Error::Config(format!(
                    "unknown env.kind {other:?}; expected minishop or chainworld"
                )))
            }
        };
        config.experts = expert_order
            .iter()
            .map(|label| match label.as_str() {
                "strong" => Ok(strong_spec.clone()),
                "weak" => Ok(weak_spec.clone()),
                other => Err(Error::Config(format!(
                    "unknown expert label {other:?}; expected strong or weak"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        if config.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be at least 1".into()));
        }
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text).map_err(|e| e.with_context(format!("in {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_the_reference_setup() {
        let config = ExperimentConfig::parse("").unwrap();
        assert_eq!(config, ExperimentConfig::default());
    }

    #[test]
    fn keys_override_defaults() {
        let text = "\
# a comment
method = rft
env.n_products = 30        # trailing comment
eef.iterations = 2
experts = strong, weak
train.learning_rate = 0.25
";
        let config = ExperimentConfig::parse(text).unwrap();
        assert_eq!(config.method, MethodChoice::Rft);
        assert_eq!(config.eef.iterations, 2);
        assert_eq!(config.experts.len(), 2);
        assert_eq!(config.train.learning_rate, 0.25);
        match &config.env {
            EnvChoice::Shop(s) => assert_eq!(s.n_products, 30),
            _ => panic!("expected minishop"),
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = ExperimentConfig::parse("foo = 1").unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn chainworld_selection() {
        let config = ExperimentConfig::parse("env.kind = chainworld\nchain.n_stages = 5").unwrap();
        match config.env {
            EnvChoice::Chain(c) => assert_eq!(c.n_stages, 5),
            _ => panic!("expected chainworld"),
        }
    }
}
