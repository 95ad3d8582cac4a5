//! Scripted expert agents with tunable failure modes.
//!
//! Experts read the same observation text as the policy. Their mistakes are
//! controlled by profile probabilities: overlooking a constraint when
//! picking a product, paging forward when a page is unsatisfying, and
//! backing out of a product that cannot win. Failures produced this way
//! carry useful prefixes (navigation, recoveries) for the mining loop.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::chain::{parse_chain_action, parse_chain_page, ChainPage, RESET_ACTION};
use crate::env::{ActionToken, ContextId, Environment, TaskConstraints};
use crate::error::{Error, Result};
use crate::rng::stream;
use crate::runner::{run_episode, Agent};
use crate::shop::{parse_shop_action, parse_shop_page, Product, ShopAction, ShopPage};
use crate::trajectory::{Provenance, Trajectory, TrajId};

/// Behavioral parameters of a scripted expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertProfile {
    /// Probability of ignoring a constraint when picking a product.
    pub p_overlook: f64,
    /// Probability of backing out of a product page that cannot win.
    pub p_recover: f64,
    /// Probability of paging forward when nothing on the page matches.
    pub p_attempt_next: f64,
    /// Probability of choosing the most constraint-covering query offered.
    pub search_quality: f64,
    pub label: String,
}

impl ExpertProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [
            ("p_overlook", self.p_overlook),
            ("p_recover", self.p_recover),
            ("p_attempt_next", self.p_attempt_next),
            ("search_quality", self.search_quality),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }

    /// Starting point for the stronger expert; the overlook rate is
    /// calibrated against a target win rate before use.
    pub fn strong() -> Self {
        ExpertProfile {
            p_overlook: 0.3,
            p_recover: 0.25,
            p_attempt_next: 0.7,
            search_quality: 0.95,
            label: "strong".into(),
        }
    }

    pub fn weak() -> Self {
        ExpertProfile {
            p_overlook: 0.45,
            p_recover: 0.12,
            p_attempt_next: 0.3,
            search_quality: 0.7,
            label: "weak".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ExpertStats {
    pub total: usize,
    pub positive: usize,
    pub avg_len: f64,
}

/// A set of expert demonstrations, one per context.
#[derive(Debug, Clone)]
pub struct ExpertDataset {
    pub trajectories: Vec<Trajectory>,
    pub stats: ExpertStats,
}

impl ExpertDataset {
    pub fn from_trajectories(trajectories: Vec<Trajectory>) -> Self {
        let total = trajectories.len();
        let positive = trajectories.iter().filter(|t| t.is_positive()).count();
        let avg_len = if total == 0 {
            0.0
        } else {
            trajectories.iter().map(|t| t.steps.len()).sum::<usize>() as f64 / total as f64
        };
        ExpertDataset {
            trajectories,
            stats: ExpertStats {
                total,
                positive,
                avg_len,
            },
        }
    }

    pub fn positive_fraction(&self) -> f64 {
        if self.stats.total == 0 {
            0.0
        } else {
            self.stats.positive as f64 / self.stats.total as f64
        }
    }

    /// Union of two datasets; trajectory ids are reassigned sequentially so
    /// the merge stays collision-free.
    pub fn merge(mut self, other: ExpertDataset) -> ExpertDataset {
        let mut trajectories = Vec::with_capacity(self.stats.total + other.stats.total);
        trajectories.append(&mut self.trajectories);
        trajectories.extend(other.trajectories);
        for (i, t) in trajectories.iter_mut().enumerate() {
            t.id = i as TrajId;
        }
        ExpertDataset::from_trajectories(trajectories)
    }
}

/// One expert decision. Deterministic in (profile, observation, candidates,
/// constraints, rng stream position).
pub fn expert_act(
    profile: &ExpertProfile,
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
    rng: &mut ChaCha12Rng,
) -> Result<ActionToken> {
    if candidates.is_empty() {
        return Err(Error::Config("expert asked to act on empty candidates".into()));
    }
    match constraints {
        TaskConstraints::Shopping { .. } => {
            Ok(shop_decision(profile, observation, candidates, constraints, rng))
        }
        TaskConstraints::Chain => Ok(chain_decision(profile, observation, candidates, rng)),
    }
}

fn draw(rng: &mut ChaCha12Rng, p: f64) -> bool {
    rng.gen::<f64>() < p
}

fn shop_decision(
    profile: &ExpertProfile,
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
    rng: &mut ChaCha12Rng,
) -> ActionToken {
    let page = parse_shop_page(observation);
    let find = |pred: &dyn Fn(&ShopAction) -> bool| {
        candidates
            .iter()
            .find(|c| pred(&parse_shop_action(c.as_str())))
            .cloned()
    };
    match &page {
        ShopPage::Search => {
            // Rank offered queries by constraint coverage.
            let mut queries: Vec<(f64, &ActionToken)> = candidates
                .iter()
                .filter_map(|c| match parse_shop_action(c.as_str()) {
                    ShopAction::Search(q) => Some((coverage(&q, constraints), c)),
                    _ => None,
                })
                .collect();
            if queries.is_empty() {
                return candidates[0].clone();
            }
            queries.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            if draw(rng, profile.search_quality) {
                queries.last().unwrap().1.clone()
            } else {
                queries[0].1.clone()
            }
        }
        ShopPage::Results { listings, .. } => {
            // Viewed products were already found wanting; skip them.
            let full: Vec<&str> = listings
                .iter()
                .filter(|l| !l.viewed && listing_full_match(l, constraints))
                .map(|l| l.pid.as_str())
                .collect();
            // Look-alikes for the overlooking mistake: unviewed category
            // matches preferred, any unviewed non-match otherwise.
            let mut look_alikes: Vec<&str> = listings
                .iter()
                .filter(|l| {
                    !l.viewed
                        && constraints
                            .shopping()
                            .map(|(cat, _, _, _)| l.category == cat)
                            .unwrap_or(false)
                        && !listing_full_match(l, constraints)
                })
                .map(|l| l.pid.as_str())
                .collect();
            if look_alikes.is_empty() {
                look_alikes = listings
                    .iter()
                    .filter(|l| !l.viewed && !listing_full_match(l, constraints))
                    .map(|l| l.pid.as_str())
                    .collect();
            }
            let click_pid = |pid: &str| ActionToken::new(format!("click[{pid}]"));
            if !full.is_empty() {
                if draw(rng, profile.p_overlook) && !look_alikes.is_empty() {
                    return click_pid(look_alikes[0]);
                }
                return click_pid(full[0]);
            }
            let next = find(&|a| matches!(a, ShopAction::Next));
            if let Some(next) = next {
                if draw(rng, profile.p_attempt_next) {
                    return next;
                }
            }
            if draw(rng, profile.p_overlook) && !look_alikes.is_empty() {
                return click_pid(look_alikes[0]);
            }
            let back = find(&|a| matches!(a, ShopAction::Back));
            if let Some(back) = back {
                if draw(rng, profile.p_recover) {
                    return back;
                }
            }
            candidates[0].clone()
        }
        ShopPage::Product { selected, .. } => {
            let product = page_product(&page).expect("product page");
            // The expert judges the product by what the instruction names:
            // listed attributes plus required option availability. It does
            // not rescue a wrong-colored product through its color options.
            let acceptable = constraints
                .shopping()
                .map(|(category, color, max_price, required)| {
                    product.category == category
                        && product.color == color
                        && product.price <= max_price
                        && required.iter().all(|(g, v)| product.has_option(g, v))
                })
                .unwrap_or(false);
            if !acceptable {
                let back = find(&|a| matches!(a, ShopAction::Back));
                if let Some(back) = back {
                    if draw(rng, profile.p_recover) {
                        return back;
                    }
                }
                return find(&|a| matches!(a, ShopAction::Buy))
                    .unwrap_or_else(|| candidates[0].clone());
            }
            let unclicked = constraints.shopping().and_then(|(_, _, _, required)| {
                required
                    .iter()
                    .find(|(g, v)| {
                        !selected.get(*g).map(|s| s.contains(*v)).unwrap_or(false)
                    })
                    .map(|(_, v)| v.clone())
            });
            match unclicked {
                Some(value) => candidates
                    .iter()
                    .find(|c| c.as_str() == format!("click[{value}]"))
                    .cloned()
                    .unwrap_or_else(|| candidates[0].clone()),
                None => find(&|a| matches!(a, ShopAction::Buy))
                    .unwrap_or_else(|| candidates[0].clone()),
            }
        }
        ShopPage::Terminal | ShopPage::Unknown => candidates[0].clone(),
    }
}

fn coverage(query: &str, constraints: &TaskConstraints) -> f64 {
    let Some((category, color, _, required)) = constraints.shopping() else {
        return 0.0;
    };
    let tokens: Vec<&str> = query.split_whitespace().collect();
    let mut terms: Vec<&str> = vec![color, category];
    terms.extend(required.values().map(|v| v.as_str()));
    terms.iter().filter(|t| tokens.contains(t)).count() as f64 / terms.len() as f64
}

fn listing_full_match(
    listing: &crate::shop::ListedProduct,
    constraints: &TaskConstraints,
) -> bool {
    constraints
        .shopping()
        .map(|(category, color, max_price, _)| {
            listing.category == category && listing.color == color && listing.price <= max_price
        })
        .unwrap_or(false)
}

fn page_product(page: &ShopPage) -> Option<Product> {
    if let ShopPage::Product {
        pid,
        title,
        color,
        category,
        price,
        option_groups,
        ..
    } = page
    {
        Some(Product {
            pid: pid.clone(),
            category: category.clone(),
            color: color.clone(),
            price: *price,
            option_groups: option_groups.clone(),
            title: title.clone(),
        })
    } else {
        None
    }
}

fn chain_decision(
    profile: &ExpertProfile,
    observation: &str,
    candidates: &[ActionToken],
    rng: &mut ChaCha12Rng,
) -> ActionToken {
    let page = parse_chain_page(observation);
    let ChainPage::Menu { hint, jammed, .. } = &page else {
        return candidates[0].clone();
    };
    if *jammed {
        let reset = candidates.iter().find(|c| c.as_str() == RESET_ACTION);
        if let Some(reset) = reset {
            if draw(rng, profile.p_recover) {
                return reset.clone();
            }
        }
        let others: Vec<&ActionToken> = candidates
            .iter()
            .filter(|c| c.as_str() != RESET_ACTION)
            .collect();
        if others.is_empty() {
            return candidates[0].clone();
        }
        return others[rng.gen_range(0..others.len())].clone();
    }
    let correct = candidates.iter().find(|c| {
        parse_chain_action(c.as_str())
            .and_then(|t| t.split_whitespace().next())
            == Some(hint.as_str())
    });
    let Some(correct) = correct else {
        return candidates[rng.gen_range(0..candidates.len())].clone();
    };
    let wrong: Vec<&ActionToken> = candidates.iter().filter(|c| *c != correct).collect();
    if !wrong.is_empty() && draw(rng, profile.p_overlook) {
        return wrong[rng.gen_range(0..wrong.len())].clone();
    }
    correct.clone()
}

struct ExpertAgent {
    effective: ExpertProfile,
    rng: ChaCha12Rng,
}

impl ExpertAgent {
    /// The overlook mistake is decided once per episode: an overlooking
    /// expert misreads a constraint and stays wrong for the whole episode,
    /// while a careful one picks cleanly throughout. Navigation and
    /// recovery draws stay per-decision. This gives failed demonstrations
    /// a decisive mistake with useful actions around it instead of noise.
    fn for_episode(profile: &ExpertProfile, mut rng: ChaCha12Rng) -> Self {
        let overlooks: bool = rand::Rng::gen::<f64>(&mut rng) < profile.p_overlook;
        ExpertAgent {
            effective: ExpertProfile {
                p_overlook: if overlooks { 1.0 } else { 0.0 },
                ..profile.clone()
            },
            rng,
        }
    }
}

impl Agent for ExpertAgent {
    fn act(
        &mut self,
        observation: &str,
        candidates: &[ActionToken],
        constraints: &TaskConstraints,
    ) -> Result<ActionToken> {
        expert_act(&self.effective, observation, candidates, constraints, &mut self.rng)
    }
}

/// One expert trajectory per context. Per-context rng streams are derived
/// from (seed, context), so the result does not depend on iteration order.
pub fn generate_expert_dataset<E: Environment + ?Sized>(
    env: &mut E,
    contexts: &[ContextId],
    profile: &ExpertProfile,
    seed: u64,
) -> Result<ExpertDataset> {
    profile.validate()?;
    let max_steps = env.kind().horizon();
    let mut trajectories = Vec::with_capacity(contexts.len());
    for (i, ctx) in contexts.iter().enumerate() {
        let mut agent = ExpertAgent::for_episode(
            profile,
            stream(seed, &format!("expert/{}/ctx{}", profile.label, ctx.id)),
        );
        let traj = run_episode(
            env,
            *ctx,
            &mut agent,
            Provenance::Expert(profile.label.clone()),
            max_steps,
            i as TrajId,
        )?;
        trajectories.push(traj);
    }
    Ok(ExpertDataset::from_trajectories(trajectories))
}

/// Binary search on the overlook rate until the measured win rate over the
/// contexts lands within `tol` of `target`. The dataset generated with the
/// returned profile under the same seed is exactly the final measurement.
pub fn calibrate_profile<E: Environment + ?Sized>(
    env: &mut E,
    contexts: &[ContextId],
    base_profile: &ExpertProfile,
    target_winrate: f64,
    tol: f64,
    seed: u64,
) -> Result<ExpertProfile> {
    base_profile.validate()?;
    let measure = |env: &mut E, p: f64| -> Result<f64> {
        let profile = ExpertProfile {
            p_overlook: p,
            ..base_profile.clone()
        };
        Ok(generate_expert_dataset(env, contexts, &profile, seed)?.positive_fraction())
    };
    let ceiling = measure(env, 0.0)?;
    let floor = measure(env, 1.0)?;
    if target_winrate > ceiling + tol || target_winrate < floor - tol {
        return Err(Error::CalibrationUnreachable {
            target: target_winrate,
            low: floor,
            high: ceiling,
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best_rate = ceiling;
    const MAX_ITERS: usize = 40;
    for _ in 0..MAX_ITERS {
        let mid = 0.5 * (lo + hi);
        let rate = measure(env, mid)?;
        if (rate - target_winrate).abs() < (best_rate - target_winrate).abs() {
            best_rate = rate;
        }
        if (rate - target_winrate).abs() <= tol {
            return Ok(ExpertProfile {
                p_overlook: mid,
                ..base_profile.clone()
            });
        }
        if rate > target_winrate {
            // Winning too often; overlook more.
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::CalibrationDiverged {
        target: target_winrate,
        iters: MAX_ITERS,
        best: best_rate,
    })
}
