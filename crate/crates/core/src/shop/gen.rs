//! Catalog and task generation for MiniShop.
//!
//! The catalog is seeded with "twin pairs": a fully-optioned product and a
//! look-alike from the same category and color whose option set is missing
//! one value. needs_back tasks require that missing value, which makes the
//! look-alike a plausible but losing first pick.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::env::{ContextId, Split};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};

use super::solve::{oracle_solve, ActionFilter};
use super::{Catalog, DifficultyTag, MiniShopConfig, MiniShopEnv, Product, TaskSpec};

const CATEGORIES: [&str; 8] = [
    "sofa",
    "lamp",
    "t-shirt",
    "sneakers",
    "backpack",
    "kettle",
    "headphones",
    "desk",
];
const COLORS: [&str; 8] = [
    "black", "white", "crimson", "navy", "olive", "teal", "beige", "gray",
];
const ADJECTIVES: [&str; 12] = [
    "modern", "classic", "compact", "deluxe", "folding", "vintage", "sturdy", "portable",
    "premium", "basic", "slim", "rustic",
];
const SIZES: [&str; 5] = ["xs", "s", "m", "l", "xl"];
const MATERIALS: [&str; 6] = ["cotton", "wool", "leather", "mesh", "steel", "oak"];

fn round_cents(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn title_case(word: &str) -> String {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().collect::<String>() + chars.as_str(),
        None => String::new(),
    }
}

/// A twin pair recorded during catalog generation: `full_pid` offers
/// `(group, value)`, `limited_pid` is the same-category same-color twin
/// lacking it.
#[derive(Debug, Clone)]
struct TwinPair {
    full_pid: String,
    limited_pid: String,
    group: String,
    value: String,
}

fn subset<'a>(rng: &mut ChaCha12Rng, pool: &[&'a str], min: usize, max: usize) -> Vec<String> {
    let k = rng.gen_range(min..=max.min(pool.len()));
    let mut picks: Vec<&str> = pool.to_vec();
    picks.shuffle(rng);
    let mut chosen: Vec<String> = picks[..k].iter().map(|s| s.to_string()).collect();
    // Keep pool order so rendering is stable regardless of draw order.
    chosen.sort_by_key(|v| pool.iter().position(|p| p == v).unwrap());
    chosen
}

fn generate_catalog(config: &MiniShopConfig) -> (Catalog, Vec<TwinPair>) {
    let mut rng = stream(config.seed, "minishop/catalog");
    let mut products: Vec<Product> = Vec::with_capacity(config.n_products);
    let mut twins: Vec<TwinPair> = Vec::new();
    let mut titles = BTreeSet::new();

    // Products come in triples: a fully-optioned base followed by two
    // look-alikes missing the same option value. The look-alikes are the
    // raw material for needs_back decoys and needs_next traps.
    for i in 0..config.n_products {
        let pid = format!("P{i:03}");
        let base_index = i - i % 3;
        let product = if i % 3 != 0 && base_index < products.len() {
            let base = products[base_index].clone();
            let existing = twins.iter().find(|t| t.full_pid == base.pid).cloned();
            let dropped = match &existing {
                Some(t) => Some((t.group.clone(), t.value.clone())),
                None => base
                    .option_groups
                    .iter()
                    .find(|(_, vs)| vs.len() >= 2)
                    .map(|(g, vs)| (g.clone(), vs[rng.gen_range(0..vs.len())].clone())),
            };
            match dropped {
                Some((group, value)) => {
                    // The look-alike lacks the whole option group, so its
                    // listing shows one fewer group name.
                    let mut option_groups = base.option_groups.clone();
                    option_groups.remove(&group);
                    twins.push(TwinPair {
                        full_pid: base.pid.clone(),
                        limited_pid: pid.clone(),
                        group,
                        value,
                    });
                    let price = round_cents(
                        (base.price * rng.gen_range(0.9..1.15)).clamp(10.0, 200.0),
                    );
                    let title = unique_title(&mut rng, &mut titles, &base.color, &base.category);
                    Product {
                        pid,
                        category: base.category,
                        color: base.color,
                        price,
                        option_groups,
                        title,
                    }
                }
                None => fresh_product(&mut rng, pid, &mut titles),
            }
        } else {
            fresh_product(&mut rng, pid, &mut titles)
        };
        products.push(product);
    }

    (
        Catalog {
            products,
            page_size: config.page_size,
        },
        twins,
    )
}

fn fresh_product(rng: &mut ChaCha12Rng, pid: String, titles: &mut BTreeSet<String>) -> Product {
    let category = CATEGORIES[rng.gen_range(0..CATEGORIES.len())].to_string();
    let color = COLORS[rng.gen_range(0..COLORS.len())].to_string();
    let price = round_cents(rng.gen_range(15.0..180.0));
    let mut option_groups = BTreeMap::new();
    option_groups.insert("size".to_string(), subset(rng, &SIZES, 2, 4));
    if rng.gen_bool(0.5) {
        option_groups.insert("material".to_string(), subset(rng, &MATERIALS, 2, 3));
    }
    if rng.gen_bool(0.4) {
        option_groups.insert("color".to_string(), subset(rng, &COLORS, 2, 3));
    }
    let title = unique_title(rng, titles, &color, &category);
    Product {
        pid,
        category,
        color,
        price,
        option_groups,
        title,
    }
}

fn unique_title(
    rng: &mut ChaCha12Rng,
    titles: &mut BTreeSet<String>,
    color: &str,
    category: &str,
) -> String {
    let start = rng.gen_range(0..ADJECTIVES.len());
    let with_material = rng.gen_bool(0.4);
    let material = MATERIALS[rng.gen_range(0..MATERIALS.len())];
    for offset in 0..ADJECTIVES.len() * 2 {
        let adj = ADJECTIVES[(start + offset) % ADJECTIVES.len()];
        let use_material = with_material || offset >= ADJECTIVES.len();
        let title = if use_material {
            format!(
                "{} {} {} {}",
                title_case(adj),
                title_case(color),
                title_case(material),
                title_case(category)
            )
        } else {
            format!(
                "{} {} {}",
                title_case(adj),
                title_case(color),
                title_case(category)
            )
        };
        if titles.insert(title.clone()) {
            return title;
        }
    }
    // Extremely large catalogs: fall back to an indexed title.
    let title = format!(
        "{} {} {} {}",
        title_case(ADJECTIVES[start]),
        title_case(color),
        title_case(category),
        titles.len()
    );
    titles.insert(title.clone());
    title
}

/// Largest-remainder allocation of `n` tasks over the difficulty mix.
fn allocate(mix: &BTreeMap<DifficultyTag, f64>, n: usize) -> Vec<(DifficultyTag, usize)> {
    let mut counts: Vec<(DifficultyTag, usize, f64)> = mix
        .iter()
        .map(|(tag, f)| {
            let exact = f * n as f64;
            (*tag, exact.floor() as usize, exact - exact.floor())
        })
        .collect();
    let assigned: usize = counts.iter().map(|(_, c, _)| *c).sum();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        counts[b]
            .2
            .partial_cmp(&counts[a].2)
            .unwrap()
            .then(counts[a].0.cmp(&counts[b].0))
    });
    for i in 0..(n - assigned) {
        counts[order[i % order.len()]].1 += 1;
    }
    counts.into_iter().map(|(t, c, _)| (t, c)).collect()
}

struct TaskBuilder<'a> {
    catalog: &'a Catalog,
    twins: &'a [TwinPair],
    /// (full, lim1, lim2, group, value) for bases with two look-alikes.
    triples: Vec<(String, String, String, String, String)>,
    config: &'a MiniShopConfig,
    next_twin: usize,
    next_triple: usize,
}

impl<'a> TaskBuilder<'a> {
    fn build(
        &mut self,
        rng: &mut ChaCha12Rng,
        task_id: usize,
        split: Split,
        tag: DifficultyTag,
    ) -> Result<TaskSpec> {
        match tag {
            DifficultyTag::NeedsBack => self.build_needs_back(rng, task_id, split),
            DifficultyTag::NeedsNext => self.build_needs_next(rng, task_id, split),
            DifficultyTag::Easy => self.build_easy(rng, task_id, split),
        }
    }

    /// needs_next: the target is a fully-optioned product ranked behind
    /// `next_depth` pages of non-matches, and its two option-poor twins
    /// lead the satisfier page as look-alike traps.
    fn build_needs_next(
        &mut self,
        rng: &mut ChaCha12Rng,
        task_id: usize,
        split: Split,
    ) -> Result<TaskSpec> {
        if self.triples.is_empty() {
            return Err(Error::Infeasible(
                "needs_next tasks require twin product triples; increase n_products (>= 3)"
                    .into(),
            ));
        }
        for _attempt in 0..self.triples.len() {
            let (full_pid, lim1, lim2, group, value) =
                self.triples[self.next_triple % self.triples.len()].clone();
            self.next_triple += 1;
            let full = self.catalog.get(&full_pid).unwrap();
            let lim1_price = self.catalog.get(&lim1).unwrap().price;
            let lim2_price = self.catalog.get(&lim2).unwrap().price;
            let max_price = round_cents(
                full.price.max(lim1_price).max(lim2_price) + rng.gen_range(5.0..40.0),
            );
            let mut required = BTreeMap::new();
            required.insert(group, value);
            for depth in [2, 1] {
                let mut task = self.finish(
                    rng,
                    task_id,
                    split,
                    DifficultyTag::NeedsNext,
                    full.pid.clone(),
                    full.color.clone(),
                    full.category.clone(),
                    max_price,
                    required.clone(),
                    Some(lim1.clone()),
                );
                task.decoy2_pid = Some(lim2.clone());
                task.next_depth = depth;
                if self.plausible(&task) {
                    return Ok(task);
                }
            }
        }
        Err(Error::Infeasible(format!(
            "could not build a needs_next task for id {task_id}: no twin triple yields              enough non-matching lead results (n_products = {}, page_size = {})",
            self.config.n_products, self.config.page_size
        )))
    }

    fn build_needs_back(
        &mut self,
        rng: &mut ChaCha12Rng,
        task_id: usize,
        split: Split,
    ) -> Result<TaskSpec> {
        if self.twins.is_empty() {
            return Err(Error::Infeasible(
                "needs_back tasks require twin product pairs; increase n_products (>= 3)".into(),
            ));
        }
        for _attempt in 0..self.twins.len() {
            let pair = &self.twins[self.next_twin % self.twins.len()];
            self.next_twin += 1;
            let full = self.catalog.get(&pair.full_pid).unwrap();
            let limited = self.catalog.get(&pair.limited_pid).unwrap();
            let max_price = round_cents(full.price.max(limited.price) + rng.gen_range(5.0..40.0));
            let mut required = BTreeMap::new();
            required.insert(pair.group.clone(), pair.value.clone());
            let task = self.finish(
                rng,
                task_id,
                split,
                DifficultyTag::NeedsBack,
                full.pid.clone(),
                full.color.clone(),
                full.category.clone(),
                max_price,
                required,
                Some(limited.pid.clone()),
            );
            if self.plausible(&task) {
                return Ok(task);
            }
        }
        Err(Error::Infeasible(format!(
            "could not build a needs_back task for id {task_id}: no twin pair yields \
             a rankable decoy"
        )))
    }

    fn build_easy(
        &mut self,
        rng: &mut ChaCha12Rng,
        task_id: usize,
        split: Split,
    ) -> Result<TaskSpec> {
        let mut order: Vec<usize> = (0..self.catalog.products.len()).collect();
        order.shuffle(rng);
        let want_required = rng.gen_bool(0.5);
        for idx in order {
            let target = &self.catalog.products[idx];
            // The constraint color is the target's listed color, so listing
            // lines alone are enough to recognize a match.
            let color = target.color.clone();
            let mut required = BTreeMap::new();
            if want_required {
                if let Some((group, values)) = target
                    .option_groups
                    .iter()
                    .find(|(g, vs)| *g != "color" && !vs.is_empty())
                {
                    required.insert(group.clone(), values[values.len() / 2].clone());
                }
            }
            let max_price = round_cents(target.price + rng.gen_range(5.0..40.0));
            let task = self.finish(
                rng,
                task_id,
                split,
                DifficultyTag::Easy,
                target.pid.clone(),
                color,
                target.category.clone(),
                max_price,
                required,
                None,
            );
            if self.plausible(&task) {
                return Ok(task);
            }
        }
        Err(Error::Infeasible(format!(
            "could not build an easy task for id {task_id}: catalog too small for a \
             full page of results (n_products = {}, page_size = {})",
            self.config.n_products, self.config.page_size
        )))
    }

    #[allow(clippy::too_many_arguments)]
    fn finish(
        &self,
        rng: &mut ChaCha12Rng,
        task_id: usize,
        split: Split,
        tag: DifficultyTag,
        target_pid: String,
        color: String,
        category: String,
        max_price: f64,
        required_options: BTreeMap<String, String>,
        decoy_pid: Option<String>,
    ) -> TaskSpec {
        let mut tags = BTreeSet::new();
        tags.insert(tag);
        let mut task = TaskSpec {
            task_id,
            split,
            instruction: String::new(),
            category,
            color,
            max_price,
            required_options,
            target_pid,
            tags,
            next_depth: 1,
            rank_seed: rng.gen(),
            decoy_pid,
            decoy2_pid: None,
        };
        task.instruction = super::text::instruction(&task);
        task
    }

    /// Structural checks that the ranking rig can realize the tag.
    fn plausible(&self, task: &TaskSpec) -> bool {
        let constraints = task.constraints();
        let queries: Vec<String> = [
            Some(super::text::canonical_query(task)),
            super::text::refined_query(task),
        ]
        .into_iter()
        .flatten()
        .collect();
        match task.primary_tag() {
            DifficultyTag::Easy => {
                let ranked =
                    super::ranked_results_for_task(self.catalog, task, &queries[0]);
                ranked
                    .iter()
                    .take(self.config.page_size)
                    .any(|p| *p == task.target_pid)
            }
            DifficultyTag::NeedsNext => {
                let trap = task.decoy_pid.as_deref().expect("needs_next has a trap");
                let looks_full = |pid: &str| {
                    let p = self.catalog.get(pid).unwrap();
                    p.category == task.category
                        && p.color == task.color
                        && p.price <= task.max_price
                };
                queries.iter().enumerate().all(|(qi, q)| {
                    let ranked = super::ranked_results_for_task(self.catalog, task, q);
                    let depth = if qi == 1 { 1 } else { task.next_depth };
                    let lead = depth * self.config.page_size;
                    let sat_listed = ranked.iter().any(|pid| {
                        super::satisfies_best_case(self.catalog.get(pid).unwrap(), &constraints)
                    });
                    ranked.len() > lead + 1
                        && ranked[lead] == trap
                        && ranked[..lead].iter().all(|pid| {
                            !super::satisfies_best_case(
                                self.catalog.get(pid).unwrap(),
                                &constraints,
                            ) && !looks_full(pid)
                        })
                        && sat_listed
                })
            }
            DifficultyTag::NeedsBack => {
                let decoy = task.decoy_pid.as_deref().expect("needs_back has decoy");
                let canonical =
                    super::ranked_results_for_task(self.catalog, task, &queries[0]);
                let refined = super::ranked_results_for_task(self.catalog, task, &queries[1]);
                canonical.first().map(|p| p.as_str()) == Some(decoy)
                    && refined.first().map(|p| p.as_str()) == Some(task.target_pid.as_str())
            }
        }
    }
}

/// Generate a MiniShop world: catalog, tasks, and split context lists.
/// Deterministic in the config seed; every task is verified solvable by the
/// exhaustive solver, and navigation tags are verified by re-running the
/// solver with the respective action excluded.
pub fn generate_minishop(
    config: &MiniShopConfig,
) -> Result<(MiniShopEnv, Vec<ContextId>, Vec<ContextId>)> {
    config.validate()?;
    let (catalog, twins) = generate_catalog(config);
    let mut rng = stream(config.seed, "minishop/tasks");

    let mut triples = Vec::new();
    {
        let mut by_base: BTreeMap<&str, Vec<&TwinPair>> = BTreeMap::new();
        for pair in &twins {
            by_base.entry(pair.full_pid.as_str()).or_default().push(pair);
        }
        for (base, pairs) in by_base {
            if pairs.len() >= 2 {
                triples.push((
                    base.to_string(),
                    pairs[0].limited_pid.clone(),
                    pairs[1].limited_pid.clone(),
                    pairs[0].group.clone(),
                    pairs[0].value.clone(),
                ));
            }
        }
    }
    let mut builder = TaskBuilder {
        catalog: &catalog,
        twins: &twins,
        config,
        next_twin: (derive_seed(config.seed, "minishop/twin-start") % twins.len().max(1) as u64)
            as usize,
        next_triple: (derive_seed(config.seed, "minishop/triple-start")
            % triples.len().max(1) as u64) as usize,
        triples,
    };

    let mut tasks = Vec::new();
    let mut task_id = 0;
    for (split, n) in [
        (Split::Train, config.n_tasks_train),
        (Split::Test, config.n_tasks_test),
    ] {
        let mut tag_queue: Vec<DifficultyTag> = Vec::new();
        for (tag, count) in allocate(&config.difficulty_mix, n) {
            tag_queue.extend(std::iter::repeat(tag).take(count));
        }
        // Interleave tags deterministically so split prefixes stay mixed.
        tag_queue.shuffle(&mut rng);
        for tag in tag_queue {
            tasks.push(builder.build(&mut rng, task_id, split, tag)?);
            task_id += 1;
        }
    }

    let env = MiniShopEnv::new(catalog, tasks);
    let train = env.contexts(Split::Train);
    let test = env.contexts(Split::Test);

    // Solvability and tag faithfulness, verified by exhaustive search.
    for ctx in train.iter().chain(test.iter()) {
        let task = &env.tasks()[ctx.id];
        let tag = task.primary_tag();
        let mut probe = env.clone();
        if oracle_solve(&mut probe, *ctx, ActionFilter::None)?.is_none() {
            return Err(Error::Infeasible(format!(
                "generated task {} ({}) is not solvable within the horizon",
                ctx.id,
                tag.as_str()
            )));
        }
        let filter = match tag {
            DifficultyTag::NeedsNext => Some(ActionFilter::ExcludeNext),
            DifficultyTag::NeedsBack => Some(ActionFilter::ExcludeBack),
            DifficultyTag::Easy => None,
        };
        if let Some(filter) = filter {
            if oracle_solve(&mut probe, *ctx, filter)?.is_some() {
                return Err(Error::Infeasible(format!(
                    "generated task {} violates its {} tag: solvable without the \
                     excluded action",
                    ctx.id,
                    tag.as_str()
                )));
            }
        }
    }

    Ok((env, train, test))
}

use crate::env::Environment;
