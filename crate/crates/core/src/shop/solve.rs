//! Exhaustive solver for MiniShop tasks.
//!
//! Breadth-first search over the semantic episode state with memoization.
//! On product pages only clicks that can still contribute to the judge
//! (required values and a needed color option) are expanded; any winning
//! plan containing other option clicks can be replayed without them, so the
//! reduction preserves completeness. Used at generation time to verify
//! solvability and tag faithfulness, and by tests as an independent oracle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::env::{ActionToken, ContextId, EnvKind, TaskConstraints};
use crate::error::Result;

use super::{parse_shop_action, MiniShopEnv, Product, ShopAction, ShopPhase, ShopState};

/// Restriction applied to the searched action space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionFilter {
    None,
    ExcludeNext,
    ExcludeBack,
}

impl ActionFilter {
    fn allows(self, action: &ActionToken) -> bool {
        match self {
            ActionFilter::None => true,
            ActionFilter::ExcludeNext => action.as_str() != "click[Next]",
            ActionFilter::ExcludeBack => action.as_str() != "click[Back to Search]",
        }
    }
}

/// Option clicks that can still contribute to winning with `product`:
/// unselected required values plus the constraint color when the attribute
/// does not already match. Returns None when the product can never satisfy
/// the constraints no matter what is clicked.
pub fn needed_clicks(
    product: &Product,
    selected: &BTreeMap<String, BTreeSet<String>>,
    constraints: &TaskConstraints,
) -> Option<Vec<(String, String)>> {
    let (category, color, max_price, required) = constraints.shopping()?;
    if product.category != category || product.price > max_price {
        return None;
    }
    let mut needed = Vec::new();
    if product.color != color {
        if !product.has_option("color", color) {
            return None;
        }
        let clicked = selected
            .get("color")
            .map(|vs| vs.contains(color))
            .unwrap_or(false);
        if !clicked {
            needed.push(("color".to_string(), color.to_string()));
        }
    }
    for (group, value) in required {
        if !product.has_option(group, value) {
            return None;
        }
        let clicked = selected
            .get(group)
            .map(|vs| vs.contains(value))
            .unwrap_or(false);
        if !clicked {
            needed.push((group.clone(), value.clone()));
        }
    }
    needed.sort();
    needed.dedup();
    Some(needed)
}

/// Search for a winning action sequence from the initial state of `context`
/// within the environment horizon. Returns None when no such sequence exists
/// under the filter.
pub fn oracle_solve(
    env: &mut MiniShopEnv,
    context: ContextId,
    filter: ActionFilter,
) -> Result<Option<Vec<ActionToken>>> {
    let task = env.task_for(context)?.clone();
    let constraints = task.constraints();
    let horizon = EnvKind::MiniShop.horizon();
    let catalog = env.catalog().clone();

    let start = ShopState {
        task: task.task_id,
        phase: ShopPhase::Search,
        visited: Default::default(),
        done: false,
        reward: 0.0,
    };
    let key_of = |s: &ShopState| serde_json::to_string(s).expect("state key");

    let mut visited: BTreeSet<String> = BTreeSet::new();
    let mut parent: BTreeMap<String, (String, ActionToken)> = BTreeMap::new();
    let mut queue: VecDeque<(ShopState, usize)> = VecDeque::new();
    visited.insert(key_of(&start));
    queue.push_back((start, 0));

    while let Some((state, depth)) = queue.pop_front() {
        if depth >= horizon {
            continue;
        }
        let (_, candidates) = super::text::render(&catalog, &task, &state);
        for action in candidates {
            if !filter.allows(&action) {
                continue;
            }
            if let ShopPhase::Product { pid, selected } = &state.phase {
                if let ShopAction::Option(value) = parse_shop_action(action.as_str()) {
                    let product = catalog.get(pid).expect("product exists");
                    let useful = needed_clicks(product, selected, &constraints)
                        .map(|needed| needed.iter().any(|(_, v)| *v == value))
                        .unwrap_or(false);
                    if !useful {
                        continue;
                    }
                }
            }
            let next = env.transition(&state, &action);
            let next_key = key_of(&next);
            if next.done {
                if next.reward == 1.0 {
                    // Reconstruct the plan.
                    let mut plan = vec![action];
                    let mut cursor = key_of(&state);
                    while let Some((prev, act)) = parent.get(&cursor) {
                        plan.push(act.clone());
                        cursor = prev.clone();
                    }
                    plan.reverse();
                    return Ok(Some(plan));
                }
                continue;
            }
            if visited.insert(next_key.clone()) {
                parent.insert(next_key, (key_of(&state), action));
                queue.push_back((next, depth + 1));
            }
        }
    }
    Ok(None)
}
