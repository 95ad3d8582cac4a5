//! Candidate featurization for the softmax policy.
//!
//! Features are extracted from the rendered observation text and the task
//! constraints only, never from hidden state, so the policy sees exactly
//! what a text agent would. One schema covers both environments; slots that
//! do not apply to a page are zero.

use crate::chain::{parse_chain_action, parse_chain_page, ChainPage, RESET_ACTION};
use crate::env::{ActionToken, TaskConstraints};
use crate::error::{Error, Result};
use crate::shop::{
    needed_clicks, parse_shop_action, parse_shop_page, ListedProduct, Product, ShopAction,
    ShopPage,
};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const FEATURE_DIM: usize = 25;

/// Slot indices of the feature schema. The first block is action-type
/// one-hots; the rest are constraint-match and page facts plus the
/// interaction slots the navigation skills hang on.
pub mod slot {
    pub const BIAS: usize = 0;
    pub const ACT_SEARCH: usize = 1;
    pub const ACT_NEXT: usize = 2;
    pub const ACT_PREV: usize = 3;
    pub const ACT_BACK: usize = 4;
    pub const ACT_SELECT_PRODUCT: usize = 5;
    pub const ACT_SELECT_OPTION: usize = 6;
    pub const ACT_BUY: usize = 7;
    pub const SEARCH_COVERAGE: usize = 8;
    pub const PROD_CATEGORY_MATCH: usize = 9;
    pub const PROD_COLOR_MATCH: usize = 10;
    pub const PROD_PRICE_OK: usize = 11;
    pub const PROD_FULL_MATCH: usize = 12;
    pub const PAGE_INDEX: usize = 13;
    pub const REQUIRED_CLICKED: usize = 14;
    pub const ANY_MATCH_ON_PAGE: usize = 15;
    /// The candidate product's page was already opened this episode.
    pub const PROD_VIEWED: usize = 16;
    /// Fraction of the required option values the product is shown to
    /// offer (1 when nothing is required).
    pub const PROD_REQUIRED_LISTED: usize = 17;
    pub const BUY_READY: usize = 18;
    pub const BUY_NOT_READY: usize = 19;
    pub const OPTION_NEEDED: usize = 20;
    pub const CHAIN_HINT_MATCH: usize = 21;
    pub const CHAIN_RESET_JAMMED: usize = 22;
    /// Position of the candidate within its group on the page (listing rank
    /// for products, option order for values, menu order for tools).
    pub const CAND_POSITION: usize = 23;
    /// Exemplar-negative flag used by negative-aware offline training;
    /// always 0 at evaluation time.
    pub const EXEMPLAR_NEGATIVE: usize = 24;
}

/// A fixed-length feature vector for one (observation, candidate) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub schema_version: u32,
}

impl FeatureVector {
    fn zeros() -> Self {
        FeatureVector {
            values: vec![0.0; FEATURE_DIM],
            schema_version: FEATURE_SCHEMA_VERSION,
        }
    }
}

/// Featurize every candidate of an observation in one pass.
pub fn featurize_all(
    observation: &str,
    candidates: &[ActionToken],
    constraints: &TaskConstraints,
) -> Vec<FeatureVector> {
    match constraints {
        TaskConstraints::Shopping { .. } => {
            let page = parse_shop_page(observation);
            candidates
                .iter()
                .map(|c| featurize_shop(&page, c, constraints))
                .collect()
        }
        TaskConstraints::Chain => {
            let page = parse_chain_page(observation);
            candidates.iter().map(|c| featurize_chain(&page, c)).collect()
        }
    }
}

/// Featurize one candidate.
pub fn featurize(
    observation: &str,
    candidate: &ActionToken,
    constraints: &TaskConstraints,
) -> FeatureVector {
    match constraints {
        TaskConstraints::Shopping { .. } => {
            featurize_shop(&parse_shop_page(observation), candidate, constraints)
        }
        TaskConstraints::Chain => featurize_chain(&parse_chain_page(observation), candidate),
    }
}

/// Fraction of constraint terms (color, category, required values) present
/// in a query.
fn query_coverage(query: &str, constraints: &TaskConstraints) -> f64 {
    let Some((category, color, _, required)) = constraints.shopping() else {
        return 0.0;
    };
    let tokens: Vec<&str> = query.split_whitespace().collect();
    let mut terms: Vec<&str> = vec![color, category];
    terms.extend(required.values().map(|v| v.as_str()));
    let hits = terms.iter().filter(|t| tokens.contains(t)).count();
    hits as f64 / terms.len() as f64
}

/// Fraction of required (group, value) pairs visible in a shown option
/// map; 1 when the task requires none.
fn required_values_fraction(
    shown: &std::collections::BTreeMap<String, Vec<String>>,
    constraints: &TaskConstraints,
) -> f64 {
    let Some((_, _, _, required)) = constraints.shopping() else {
        return 0.0;
    };
    if required.is_empty() {
        return 1.0;
    }
    let hits = required
        .iter()
        .filter(|(g, v)| {
            shown
                .get(*g)
                .map(|vs| vs.iter().any(|x| x == *v))
                .unwrap_or(false)
        })
        .count();
    hits as f64 / required.len() as f64
}

fn listing_matches(listing: &ListedProduct, constraints: &TaskConstraints) -> (bool, bool, bool) {
    let Some((category, color, max_price, _)) = constraints.shopping() else {
        return (false, false, false);
    };
    (
        listing.category == category,
        listing.color == color,
        listing.price <= max_price,
    )
}

/// A listing-visible product from a parsed product page, for reuse of the
/// judge-side helpers.
fn product_of_page(page: &ShopPage) -> Option<Product> {
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

fn featurize_shop(
    page: &ShopPage,
    candidate: &ActionToken,
    constraints: &TaskConstraints,
) -> FeatureVector {
    let mut f = FeatureVector::zeros();
    f.values[slot::BIAS] = 1.0;
    let action = parse_shop_action(candidate.as_str());
    match action {
        ShopAction::Search(_) => f.values[slot::ACT_SEARCH] = 1.0,
        ShopAction::Next => f.values[slot::ACT_NEXT] = 1.0,
        ShopAction::Prev => f.values[slot::ACT_PREV] = 1.0,
        ShopAction::Back => f.values[slot::ACT_BACK] = 1.0,
        ShopAction::Product(_) => f.values[slot::ACT_SELECT_PRODUCT] = 1.0,
        ShopAction::Option(_) => f.values[slot::ACT_SELECT_OPTION] = 1.0,
        ShopAction::Buy => f.values[slot::ACT_BUY] = 1.0,
    }

    match page {
        ShopPage::Search => {
            if let ShopAction::Search(query) = &parse_shop_action(candidate.as_str()) {
                f.values[slot::SEARCH_COVERAGE] = query_coverage(query, constraints);
            }
        }
        ShopPage::Results {
            page: page_index,
            listings,
            ..
        } => {
            f.values[slot::PAGE_INDEX] = *page_index as f64 / 10.0;
            let any_match = listings.iter().any(|l| {
                let (c, k, p) = listing_matches(l, constraints);
                c && k && p
            });
            f.values[slot::ANY_MATCH_ON_PAGE] = any_match as u8 as f64;
            match &action {
                ShopAction::Product(pid) => {
                    if let Some(pos) = listings.iter().position(|l| l.pid == *pid) {
                        let listing = &listings[pos];
                        let (cat, col, price) = listing_matches(listing, constraints);
                        f.values[slot::PROD_CATEGORY_MATCH] = cat as u8 as f64;
                        f.values[slot::PROD_COLOR_MATCH] = col as u8 as f64;
                        f.values[slot::PROD_PRICE_OK] = price as u8 as f64;
                        f.values[slot::PROD_FULL_MATCH] = (cat && col && price) as u8 as f64;
                        f.values[slot::PROD_VIEWED] = listing.viewed as u8 as f64;
                        f.values[slot::PROD_REQUIRED_LISTED] =
                            required_values_fraction(&listing.option_groups, constraints);
                        f.values[slot::CAND_POSITION] = pos as f64 / 10.0;
                    }
                }
                _ => {}
            }
        }
        ShopPage::Product { selected, .. } => {
            let product = product_of_page(page).expect("product page");
            let needed = needed_clicks(&product, selected, constraints);
            if let Some((category, color, max_price, required)) = constraints.shopping() {
                let cat = product.category == category;
                let col = product.color == color || product.has_option("color", color);
                let price = product.price <= max_price;
                f.values[slot::PROD_CATEGORY_MATCH] = cat as u8 as f64;
                f.values[slot::PROD_COLOR_MATCH] = col as u8 as f64;
                f.values[slot::PROD_PRICE_OK] = price as u8 as f64;
                let mut clicked = 0usize;
                for (g, v) in required {
                    if selected.get(g).map(|vs| vs.contains(v)).unwrap_or(false) {
                        clicked += 1;
                    }
                }
                if product.color != color
                    && selected
                        .get("color")
                        .map(|vs| vs.contains(color))
                        .unwrap_or(false)
                {
                    clicked += 1;
                }
                f.values[slot::REQUIRED_CLICKED] = clicked as f64 / 4.0;
            }
            let winnable = needed.is_some();
            f.values[slot::PROD_FULL_MATCH] = winnable as u8 as f64;
            f.values[slot::ANY_MATCH_ON_PAGE] = winnable as u8 as f64;
            f.values[slot::PROD_REQUIRED_LISTED] =
                required_values_fraction(&product.option_groups, constraints);
            let ready = needed.as_ref().map(|n| n.is_empty()).unwrap_or(false);
            match &action {
                ShopAction::Buy => {
                    f.values[slot::BUY_READY] = ready as u8 as f64;
                    f.values[slot::BUY_NOT_READY] = (!ready) as u8 as f64;
                }
                ShopAction::Option(value) => {
                    let is_needed = needed
                        .as_ref()
                        .map(|n| n.iter().any(|(_, v)| v == value))
                        .unwrap_or(false);
                    f.values[slot::OPTION_NEEDED] = is_needed as u8 as f64;
                    let pos = product
                        .option_groups
                        .values()
                        .flatten()
                        .position(|v| v == value)
                        .unwrap_or(0);
                    f.values[slot::CAND_POSITION] = pos as f64 / 10.0;
                }
                _ => {}
            }
        }
        ShopPage::Terminal | ShopPage::Unknown => {}
    }
    f
}

fn featurize_chain(page: &ChainPage, candidate: &ActionToken) -> FeatureVector {
    let mut f = FeatureVector::zeros();
    f.values[slot::BIAS] = 1.0;
    let arg = parse_chain_action(candidate.as_str());
    let is_reset = candidate.as_str() == RESET_ACTION;
    if is_reset {
        f.values[slot::ACT_BACK] = 1.0;
    } else {
        f.values[slot::ACT_SELECT_OPTION] = 1.0;
    }
    if let ChainPage::Menu {
        hint,
        jammed,
        stage,
        ..
    } = page
    {
        f.values[slot::PAGE_INDEX] = *stage as f64 / 40.0;
        if is_reset {
            f.values[slot::CHAIN_RESET_JAMMED] = *jammed as u8 as f64;
        } else if let Some(tool) = arg {
            let matches = tool.split_whitespace().next() == Some(hint.as_str());
            f.values[slot::CHAIN_HINT_MATCH] = matches as u8 as f64;
            if let ChainPage::Menu { tools, .. } = page {
                let pos = tools.iter().position(|t| t == tool).unwrap_or(0);
                f.values[slot::CAND_POSITION] = pos as f64 / 10.0;
            }
        }
    }
    f
}

/// Check that parameters were trained against this featurizer.
pub fn check_schema(schema_version: u32) -> Result<()> {
    if schema_version != FEATURE_SCHEMA_VERSION {
        return Err(Error::SchemaMismatch {
            expected: FEATURE_SCHEMA_VERSION,
            got: schema_version,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, Split};
    use crate::shop::{generate_minishop, MiniShopConfig};

    #[test]
    fn next_candidate_sets_exactly_one_action_slot() {
        let constraints = TaskConstraints::Shopping {
            category: "sofa".into(),
            color: "navy".into(),
            max_price: 100.0,
            required_options: Default::default(),
        };
        let f = featurize(
            "Instruction: x\nResults for \"navy sofa\" (page 1 of 2)\n",
            &ActionToken::new("click[Next]"),
            &constraints,
        );
        let one_hots = [
            slot::ACT_SEARCH,
            slot::ACT_NEXT,
            slot::ACT_PREV,
            slot::ACT_BACK,
            slot::ACT_SELECT_PRODUCT,
            slot::ACT_SELECT_OPTION,
            slot::ACT_BUY,
        ];
        let set: Vec<usize> = one_hots
            .iter()
            .copied()
            .filter(|&i| f.values[i] == 1.0)
            .collect();
        assert_eq!(set, vec![slot::ACT_NEXT]);
    }

    #[test]
    fn over_budget_product_clears_price_flag() {
        let (mut env, train, _) = generate_minishop(&MiniShopConfig::default()).unwrap();
        // Find a task and a results page with a product listed above budget.
        'outer: for ctx in train {
            let first = env.reset(ctx).unwrap();
            let constraints = env.constraints(ctx).unwrap();
            let results = env.step(&first.candidates[0].clone()).unwrap();
            let feats = featurize_all(&results.observation, &results.candidates, &constraints);
            let page = parse_shop_page(&results.observation);
            if let ShopPage::Results { listings, .. } = page {
                let (_, _, max_price, _) = constraints.shopping().unwrap();
                for (i, c) in results.candidates.iter().enumerate() {
                    if let ShopAction::Product(pid) = parse_shop_action(c.as_str()) {
                        let listing = listings.iter().find(|l| l.pid == pid).unwrap();
                        if listing.price > max_price {
                            assert_eq!(feats[i].values[slot::PROD_PRICE_OK], 0.0);
                            break 'outer;
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn candidates_on_one_observation_differ_pairwise() {
        let (mut env, train, _) = generate_minishop(&MiniShopConfig::default()).unwrap();
        let mut checked = 0;
        for ctx in train.iter().take(8) {
            let mut result = env.reset(*ctx).unwrap();
            let constraints = env.constraints(*ctx).unwrap();
            for _ in 0..4 {
                if result.done || result.candidates.is_empty() {
                    break;
                }
                let feats =
                    featurize_all(&result.observation, &result.candidates, &constraints);
                for i in 0..feats.len() {
                    for j in (i + 1)..feats.len() {
                        assert_ne!(
                            feats[i].values, feats[j].values,
                            "candidates {} and {} share features on obs:\n{}",
                            result.candidates[i], result.candidates[j], result.observation
                        );
                    }
                }
                checked += 1;
                let action = result.candidates[0].clone();
                result = env.step(&action).unwrap();
            }
        }
        assert!(checked > 0);
        let _ = Split::Train;
    }
}
