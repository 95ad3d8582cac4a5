//! Lexical result ranking and the per-task rank adjustments that realize
//! difficulty tags.

use std::collections::BTreeSet;

use crate::rng::fnv1a64;

use super::{satisfies_best_case, Catalog, DifficultyTag, TaskSpec, MAX_RESULT_PAGES};

fn tokens(text: &str) -> BTreeSet<String> {
    text.split_whitespace()
        .map(|t| t.to_ascii_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

fn tiebreak(seed: u64, pid: &str) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(pid.as_bytes());
    fnv1a64(&buf)
}

/// Deterministic lexical-overlap ranking of the whole catalog for a query.
///
/// The score is dominated by title-token overlap so that a query equal to a
/// product's full title ranks that product first; option values contribute a
/// secondary term so refined queries surface products actually offering the
/// named options. Products with no overlap at all are omitted. Ties break by
/// a per-seed hash of the product id.
pub fn rank_results(catalog: &Catalog, query_text: &str, seed: u64) -> Vec<String> {
    let q = tokens(query_text);
    if q.is_empty() {
        return Vec::new();
    }
    let mut scored: Vec<(f64, u64, &str)> = Vec::new();
    for p in &catalog.products {
        let title = tokens(&p.title);
        let opts: BTreeSet<String> = p
            .option_groups
            .values()
            .flat_map(|vs| vs.iter().map(|v| v.to_ascii_lowercase()))
            .collect();
        let title_hits = q.intersection(&title).count();
        let opt_hits = q.intersection(&opts).count();
        if title_hits + opt_hits == 0 {
            continue;
        }
        let union = q.union(&title).count();
        let jaccard = title_hits as f64 / union as f64;
        let score = 2.0 * title_hits as f64 + opt_hits as f64 + jaccard;
        scored.push((score, tiebreak(seed, &p.pid), &p.pid));
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(b.2))
    });
    scored.into_iter().map(|(_, _, pid)| pid.to_string()).collect()
}

/// Ranking as served during an episode of `task`: the lexical ranking with
/// the task's difficulty adjustment applied, capped at [`MAX_RESULT_PAGES`].
///
/// - easy: the target product is guaranteed a page-one slot.
/// - needs_next: page one holds only non-satisfying products; every
///   satisfying product ranks beyond it, for every query.
/// - needs_back: the initial (non-refined) query filters out all satisfying
///   products entirely and pins the decoy first; the refined query pins the
///   target first.
pub fn ranked_results_for_task(catalog: &Catalog, task: &TaskSpec, query_text: &str) -> Vec<String> {
    let base = rank_results(catalog, query_text, task.rank_seed);
    if base.is_empty() {
        return base;
    }
    let constraints = task.constraints();
    let sat = |pid: &str| -> bool {
        catalog
            .get(pid)
            .map(|p| satisfies_best_case(p, &constraints))
            .unwrap_or(false)
    };
    let page_size = catalog.page_size;
    let cap = page_size * MAX_RESULT_PAGES;
    let refined = super::text::refined_query(task)
        .map(|q| q == query_text)
        .unwrap_or(false);

    let mut ranked: Vec<String> = match task.primary_tag() {
        DifficultyTag::Easy => {
            // Page one: the target at a seeded slot, padded with the best
            // non-satisfying results so a blind first click rarely wins.
            let (sats, nonsats): (Vec<String>, Vec<String>) =
                base.into_iter().partition(|p| sat(p));
            let mut page1: Vec<String> = nonsats
                .iter()
                .take(page_size.saturating_sub(1))
                .cloned()
                .collect();
            // Slot 1..page_size: the top slot never holds the target, so a
            // blind first click does not win by accident.
            let span = (page1.len() + 1).min(page_size).saturating_sub(1).max(1);
            let slot = 1 + (tiebreak(task.rank_seed, "easy-slot") as usize) % span;
            page1.insert(slot.min(page1.len()), task.target_pid.clone());
            let mut out = page1.clone();
            out.extend(sats.into_iter().filter(|p| *p != task.target_pid));
            out.extend(nonsats.into_iter().skip(page_size.saturating_sub(1)));
            out
        }
        DifficultyTag::NeedsNext => {
            // `next_depth` pages of visibly imperfect non-satisfiers, then
            // the look-alike trap immediately ahead of the satisfiers.
            // Other full-looking non-satisfiers rank behind the satisfiers
            // and the second twin is dropped from the results entirely.
            // The refined query cuts the chase to one page, so recovering
            // mid-episode is cheaper than starting over.
            let depth = if refined { 1 } else { task.next_depth.max(1) };
            let trap = task.decoy_pid.clone();
            let looks_full = |pid: &str| -> bool {
                let (Some(p), Some((category, color, max_price, _))) =
                    (catalog.get(pid), constraints.shopping())
                else {
                    return false;
                };
                p.category == category && p.color == color && p.price <= max_price
            };
            let (sats, nonsats): (Vec<String>, Vec<String>) =
                base.into_iter().partition(|p| sat(p));
            let (shady, plain): (Vec<String>, Vec<String>) = nonsats
                .into_iter()
                .filter(|p| Some(p) != trap.as_ref() && Some(p) != task.decoy2_pid.as_ref())
                .partition(|p| looks_full(p));
            let lead = depth * page_size;
            let mut out: Vec<String> = plain.iter().take(lead).cloned().collect();
            out.extend(trap);
            out.extend(sats);
            out.extend(shady);
            out.extend(plain.into_iter().skip(lead));
            out
        }
        DifficultyTag::NeedsBack => {
            if refined {
                let mut out = vec![task.target_pid.clone()];
                out.extend(base.into_iter().filter(|p| *p != task.target_pid));
                out
            } else {
                let mut out: Vec<String> = base.into_iter().filter(|p| !sat(p)).collect();
                if let Some(decoy) = &task.decoy_pid {
                    if let Some(pos) = out.iter().position(|p| p == decoy) {
                        let pid = out.remove(pos);
                        out.insert(0, pid);
                    } else {
                        out.insert(0, decoy.clone());
                    }
                }
                out
            }
        }
    };
    ranked.truncate(cap);
    ranked
}
