//! Observation rendering and parsing for MiniShop.
//!
//! Pages are rendered as plain text with one fact per line so that agents
//! (the featurizer and the scripted experts) can recover product attributes
//! without access to the hidden state.

use std::collections::{BTreeMap, BTreeSet};

use crate::env::ActionToken;

use super::{ranked_results_for_task, Catalog, QueryKind, ShopPhase, ShopState, TaskSpec};

/// The initial query offered on the search page, built from the instruction.
pub(crate) fn canonical_query(task: &TaskSpec) -> String {
    format!("{} {}", task.color, task.category)
}

/// The refined query that additionally names the required option values.
/// Only offered after the agent has inspected a product page. None when the
/// task has no required options.
pub(crate) fn refined_query(task: &TaskSpec) -> Option<String> {
    if task.required_options.is_empty() {
        return None;
    }
    let values: Vec<&str> = task
        .required_options
        .values()
        .map(|v| v.as_str())
        .collect();
    Some(format!(
        "{} {} {}",
        task.color,
        task.category,
        values.join(" ")
    ))
}

pub(crate) fn instruction(task: &TaskSpec) -> String {
    let mut parts = vec![format!("i need a {} {}", task.color, task.category)];
    for (group, value) in &task.required_options {
        parts.push(format!("{group}: {value}"));
    }
    parts.push(format!("price lower than {:.2} dollars", task.max_price));
    parts.join(", ")
}

fn query_text(task: &TaskSpec, kind: QueryKind) -> String {
    match kind {
        QueryKind::Canonical => canonical_query(task),
        QueryKind::Refined => refined_query(task).expect("refined query exists"),
    }
}

/// Render the observation and candidate set for a state.
pub(crate) fn render(
    catalog: &Catalog,
    task: &TaskSpec,
    state: &ShopState,
) -> (String, Vec<ActionToken>) {
    let mut lines = vec![format!("Instruction: {}", instruction(task))];
    let mut candidates = Vec::new();
    match &state.phase {
        ShopPhase::Search => {
            lines.push("[Search]".to_string());
            candidates.push(ActionToken::new(format!(
                "search[{}]",
                canonical_query(task)
            )));
            if !state.visited.is_empty() {
                if let Some(refined) = refined_query(task) {
                    candidates.push(ActionToken::new(format!("search[{refined}]")));
                }
            }
        }
        ShopPhase::Results { query, page } => {
            let q = query_text(task, *query);
            let ranked = ranked_results_for_task(catalog, task, &q);
            let page_size = catalog.page_size;
            let pages = if ranked.is_empty() {
                0
            } else {
                ranked.len().div_ceil(page_size)
            };
            if pages == 0 {
                lines.push(format!("Results for \"{q}\" (no results)"));
            } else {
                lines.push(format!("Results for \"{q}\" (page {} of {pages})", page + 1));
                let start = page * page_size;
                for pid in ranked.iter().skip(start).take(page_size) {
                    let p = catalog.get(pid).expect("ranked pid exists");
                    let viewed = if state.visited.contains(pid) {
                        " (viewed)"
                    } else {
                        ""
                    };
                    let groups: Vec<String> = p
                        .option_groups
                        .iter()
                        .map(|(g, vs)| format!("{g}({})", vs.join(",")))
                        .collect();
                    lines.push(format!(
                        "[{}] {}{viewed} | color: {} | category: {} | ${:.2} | options: {}",
                        p.pid,
                        p.title,
                        p.color,
                        p.category,
                        p.price,
                        groups.join(" ")
                    ));
                    candidates.push(ActionToken::new(format!("click[{}]", p.pid)));
                }
                if (page + 1) * page_size < ranked.len() {
                    candidates.push(ActionToken::new("click[Next]"));
                }
                if *page > 0 {
                    candidates.push(ActionToken::new("click[Prev]"));
                }
            }
            candidates.push(ActionToken::new("click[Back to Search]"));
        }
        ShopPhase::Product { pid, selected } => {
            let p = catalog.get(pid).expect("product exists");
            lines.push(format!("Product [{}] {}", p.pid, p.title));
            lines.push(format!(
                "color: {} | category: {} | price: ${:.2}",
                p.color, p.category, p.price
            ));
            for (group, values) in &p.option_groups {
                let rendered: Vec<String> = values.iter().map(|v| format!("[{v}]")).collect();
                lines.push(format!("{group} options: {}", rendered.join(" ")));
            }
            let mut chosen: Vec<String> = Vec::new();
            for (group, values) in selected {
                for v in values {
                    chosen.push(format!("{group}={v}"));
                }
            }
            if chosen.is_empty() {
                lines.push("selected: none".to_string());
            } else {
                lines.push(format!("selected: {}", chosen.join(" ")));
            }
            for values in p.option_groups.values() {
                for v in values {
                    let already = selected.values().any(|s| s.contains(v));
                    if !already {
                        candidates.push(ActionToken::new(format!("click[{v}]")));
                    }
                }
            }
            candidates.push(ActionToken::new("click[Buy Now]"));
            candidates.push(ActionToken::new("click[Back to Search]"));
        }
        ShopPhase::Terminal { pid } => {
            lines.push(format!("Order placed for [{pid}]."));
        }
    }
    (lines.join("\n"), candidates)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

/// A semantically parsed candidate action.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShopAction {
    Search(String),
    Next,
    Prev,
    Back,
    Product(String),
    Option(String),
    Buy,
}

/// Parse an action token. Product ids follow the `P###` pattern; any other
/// `click[...]` argument is an option value.
pub fn parse_shop_action(text: &str) -> ShopAction {
    if let Some(query) = text.strip_prefix("search[").and_then(|s| s.strip_suffix(']')) {
        return ShopAction::Search(query.to_string());
    }
    if let Some(arg) = text.strip_prefix("click[").and_then(|s| s.strip_suffix(']')) {
        return match arg {
            "Next" => ShopAction::Next,
            "Prev" => ShopAction::Prev,
            "Back to Search" => ShopAction::Back,
            "Buy Now" => ShopAction::Buy,
            _ if arg.starts_with('P') && arg[1..].chars().all(|c| c.is_ascii_digit()) => {
                ShopAction::Product(arg.to_string())
            }
            _ => ShopAction::Option(arg.to_string()),
        };
    }
    // Unknown grammar; treated as an option-style click so the candidate
    // membership check remains the single gate.
    ShopAction::Option(text.to_string())
}

/// One product line on a results page.
#[derive(Debug, Clone, PartialEq)]
pub struct ListedProduct {
    pub pid: String,
    pub title: String,
    pub color: String,
    pub category: String,
    pub price: f64,
    /// Whether this product's page was already opened this episode.
    pub viewed: bool,
    /// Option groups and values shown on the listing line.
    pub option_groups: std::collections::BTreeMap<String, Vec<String>>,
}

/// A parsed MiniShop observation.
#[derive(Debug, Clone, PartialEq)]
pub enum ShopPage {
    Search,
    Results {
        page: usize,
        pages: usize,
        listings: Vec<ListedProduct>,
    },
    Product {
        pid: String,
        title: String,
        color: String,
        category: String,
        price: f64,
        option_groups: BTreeMap<String, Vec<String>>,
        selected: BTreeMap<String, BTreeSet<String>>,
    },
    Terminal,
    Unknown,
}

/// Parse a rendered observation back into structured page facts.
pub fn parse_shop_page(observation: &str) -> ShopPage {
    let lines: Vec<&str> = observation.lines().collect();
    if lines.len() < 2 {
        return ShopPage::Unknown;
    }
    let body = &lines[1..];
    if body[0] == "[Search]" {
        return ShopPage::Search;
    }
    if body[0].starts_with("Order placed") {
        return ShopPage::Terminal;
    }
    if body[0].starts_with("Results for ") {
        let (page, pages) = parse_page_counter(body[0]);
        let mut listings = Vec::new();
        for line in &body[1..] {
            if let Some(lp) = parse_listing_line(line) {
                listings.push(lp);
            }
        }
        return ShopPage::Results {
            page,
            pages,
            listings,
        };
    }
    if body[0].starts_with("Product [") {
        return parse_product_page(body);
    }
    ShopPage::Unknown
}

fn parse_page_counter(line: &str) -> (usize, usize) {
    // `Results for "q" (page 2 of 4)` or `... (no results)`
    if let Some(idx) = line.rfind("(page ") {
        let tail = &line[idx + 6..];
        let mut it = tail.split(|c: char| !c.is_ascii_digit()).filter(|s| !s.is_empty());
        let page = it.next().and_then(|s| s.parse::<usize>().ok()).unwrap_or(1);
        let pages = it.next().and_then(|s| s.parse::<usize>().ok()).unwrap_or(1);
        (page.saturating_sub(1), pages)
    } else {
        (0, 0)
    }
}

fn parse_listing_line(line: &str) -> Option<ListedProduct> {
    // `[P012] Title (viewed) | color: c | category: k | $9.99 | options: size, material`
    let rest = line.strip_prefix('[')?;
    let (pid, rest) = rest.split_once("] ")?;
    let mut fields = rest.split(" | ");
    let mut title = fields.next()?.to_string();
    let viewed = title.ends_with(" (viewed)");
    if viewed {
        title.truncate(title.len() - " (viewed)".len());
    }
    let color = fields.next()?.strip_prefix("color: ")?.to_string();
    let category = fields.next()?.strip_prefix("category: ")?.to_string();
    let price = fields.next()?.strip_prefix('$')?.parse::<f64>().ok()?;
    let mut option_groups = std::collections::BTreeMap::new();
    if let Some(spec) = fields.next().and_then(|f| f.strip_prefix("options: ")) {
        for part in spec.split_whitespace() {
            if let Some(open) = part.find('(') {
                let group = part[..open].to_string();
                let values: Vec<String> = part[open + 1..]
                    .trim_end_matches(')')
                    .split(',')
                    .filter(|v| !v.is_empty())
                    .map(|v| v.to_string())
                    .collect();
                option_groups.insert(group, values);
            }
        }
    }
    Some(ListedProduct {
        pid: pid.to_string(),
        title,
        color,
        category,
        price,
        viewed,
        option_groups,
    })
}

fn parse_product_page(body: &[&str]) -> ShopPage {
    let header = body[0].strip_prefix("Product [").unwrap_or("");
    let (pid, title) = match header.split_once("] ") {
        Some((p, t)) => (p.to_string(), t.to_string()),
        None => return ShopPage::Unknown,
    };
    let mut color = String::new();
    let mut category = String::new();
    let mut price = 0.0;
    let mut option_groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut selected: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for line in &body[1..] {
        if let Some(rest) = line.strip_prefix("color: ") {
            for field in rest.split(" | ") {
                if let Some(v) = field.strip_prefix("category: ") {
                    category = v.to_string();
                } else if let Some(v) = field.strip_prefix("price: $") {
                    price = v.parse().unwrap_or(0.0);
                } else {
                    color = field.to_string();
                }
            }
        } else if let Some(idx) = line.find(" options: ") {
            let group = line[..idx].to_string();
            let values: Vec<String> = line[idx + 10..]
                .split_whitespace()
                .filter_map(|v| {
                    v.strip_prefix('[')
                        .and_then(|v| v.strip_suffix(']'))
                        .map(|v| v.to_string())
                })
                .collect();
            option_groups.insert(group, values);
        } else if let Some(rest) = line.strip_prefix("selected: ") {
            if rest != "none" {
                for pair in rest.split_whitespace() {
                    if let Some((g, v)) = pair.split_once('=') {
                        selected
                            .entry(g.to_string())
                            .or_default()
                            .insert(v.to_string());
                    }
                }
            }
        }
    }
    ShopPage::Product {
        pid,
        title,
        color,
        category,
        price,
        option_groups,
        selected,
    }
}
