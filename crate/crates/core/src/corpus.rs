//! Implicit-feedback interaction corpus.
//!
//! Users, items and categories are dense `usize` indices assigned in order
//! of first appearance in the raw interaction stream (categories in order of
//! first appearance while walking items by index). Every interaction keeps a
//! chronological rank: per-user and per-item history lists are ordered
//! oldest first, so "most recent" means "last in the list".

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// One row of a raw interaction log. Rows with `value <= 0` are treated as
/// "not interacted"; any positive value is binarized to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInteraction {
    pub user: String,
    pub item: String,
    pub value: f64,
    pub timestamp: Option<i64>,
}

/// One row of an item → category table. Dataset adapters resolve multi-label
/// items to a single category before producing these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawCategory {
    pub item: String,
    pub category: String,
}

/// A single observed interaction in chronological position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Record {
    pub user: usize,
    pub item: usize,
    pub test: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionCorpus {
    user_tokens: Vec<String>,
    item_tokens: Vec<String>,
    category_tokens: Vec<String>,
    category_of_item: Vec<usize>,
    /// All interactions, oldest first.
    records: Vec<Record>,
    train: Vec<(usize, usize)>,
    test: Vec<(usize, usize)>,
    items_of_user: Vec<Vec<usize>>,
    users_of_item: Vec<Vec<usize>>,
    test_items_of_user: Vec<Vec<usize>>,
    categories_of_user: Vec<Vec<usize>>,
    sorted_items_of_user: Vec<Vec<usize>>,
}

impl InteractionCorpus {
    /// Builds a corpus from a raw log and a category table: binarizes,
    /// drops duplicate pairs (keeping the earliest), checks category
    /// coverage, applies iterative `min_core` filtering and re-indexes.
    /// All surviving interactions land in the training set.
    pub fn ingest<L, C>(raw_log: L, category_map: C, min_core: usize) -> Result<Self>
    where
        L: IntoIterator<Item = RawInteraction>,
        C: IntoIterator<Item = RawCategory>,
    {
        let mut user_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut item_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut user_tokens = Vec::new();
        let mut item_tokens = Vec::new();
        // (user, item, timestamp) in stream order
        let mut rows: Vec<(usize, usize, Option<i64>)> = Vec::new();
        let mut saw_any = false;

        for row in raw_log {
            saw_any = true;
            if !(row.value > 0.0) {
                continue;
            }
            let u = intern(&mut user_ids, &mut user_tokens, row.user);
            let i = intern(&mut item_ids, &mut item_tokens, row.item);
            rows.push((u, i, row.timestamp));
        }
        if !saw_any || rows.is_empty() {
            return Err(Error::EmptyLog);
        }

        let mut category_token_of_item: Vec<Option<String>> = vec![None; item_tokens.len()];
        for entry in category_map {
            if let Some(&i) = item_ids.get(&entry.item) {
                if category_token_of_item[i].is_none() {
                    category_token_of_item[i] = Some(entry.category);
                }
            }
        }
        let missing: Vec<String> = category_token_of_item
            .iter()
            .enumerate()
            .filter(|(_, c)| c.is_none())
            .map(|(i, _)| item_tokens[i].clone())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingCategories(missing));
        }

        // Chronological order: by timestamp when every row carries one,
        // otherwise stream order. The sort is stable, so stream order breaks ties.
        let mut order: Vec<usize> = (0..rows.len()).collect();
        if rows.iter().all(|r| r.2.is_some()) {
            order.sort_by_key(|&k| rows[k].2);
        }

        let mut seen = BTreeMap::new();
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(rows.len());
        for &k in &order {
            let (u, i, _) = rows[k];
            if seen.insert((u, i), ()).is_none() {
                edges.push((u, i));
            }
        }

        if min_core > 1 {
            k_core(&mut edges, user_tokens.len(), item_tokens.len(), min_core);
            if edges.is_empty() {
                return Err(Error::EmptyAfterFiltering(min_core));
            }
        }

        // Compact indices, preserving first-appearance order.
        let mut user_alive = vec![false; user_tokens.len()];
        let mut item_alive = vec![false; item_tokens.len()];
        for &(u, i) in &edges {
            user_alive[u] = true;
            item_alive[i] = true;
        }
        let (user_remap, user_tokens) = compact(user_tokens, &user_alive);
        let (item_remap, item_tokens_new) = compact(item_tokens, &item_alive);

        let mut category_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut category_tokens = Vec::new();
        let mut category_of_item = vec![0; item_tokens_new.len()];
        for (old, alive) in item_alive.iter().enumerate() {
            if *alive {
                let token = category_token_of_item[old].take().unwrap_or_default();
                let c = intern(&mut category_ids, &mut category_tokens, token);
                category_of_item[item_remap[old]] = c;
            }
        }

        let records = edges
            .into_iter()
            .map(|(u, i)| Record {
                user: user_remap[u],
                item: item_remap[i],
                test: false,
            })
            .collect();

        Self::from_records(
            user_tokens,
            item_tokens_new,
            category_tokens,
            category_of_item,
            records,
        )
    }

    /// Assembles a corpus from already-indexed parts, validating every
    /// structural invariant. `records` must be in chronological order.
    pub fn from_records(
        user_tokens: Vec<String>,
        item_tokens: Vec<String>,
        category_tokens: Vec<String>,
        category_of_item: Vec<usize>,
        records: Vec<Record>,
    ) -> Result<Self> {
        let m = user_tokens.len();
        let n = item_tokens.len();
        let c = category_tokens.len();
        if category_of_item.len() != n {
            return Err(Error::InvalidArgument(alloc::format!(
                "{} items but {} category assignments",
                n,
                category_of_item.len()
            )));
        }
        if let Some(bad) = category_of_item.iter().find(|&&k| k >= c) {
            return Err(Error::InvalidArgument(alloc::format!(
                "category id {bad} out of range 0..{c}"
            )));
        }

        let mut items_of_user = vec![Vec::new(); m];
        let mut users_of_item = vec![Vec::new(); n];
        let mut test_items_of_user = vec![Vec::new(); m];
        let mut train = Vec::new();
        let mut test = Vec::new();
        for r in &records {
            if r.user >= m || r.item >= n {
                return Err(Error::InvalidArgument(alloc::format!(
                    "interaction ({}, {}) out of range {m} x {n}",
                    r.user,
                    r.item
                )));
            }
            if r.test {
                test.push((r.user, r.item));
                test_items_of_user[r.user].push(r.item);
            } else {
                train.push((r.user, r.item));
                items_of_user[r.user].push(r.item);
                users_of_item[r.item].push(r.user);
            }
        }

        let mut sorted_items_of_user = Vec::with_capacity(m);
        let mut categories_of_user = Vec::with_capacity(m);
        for u in 0..m {
            let mut all: Vec<usize> = items_of_user[u]
                .iter()
                .chain(&test_items_of_user[u])
                .copied()
                .collect();
            let total = all.len();
            all.sort_unstable();
            all.dedup();
            if all.len() != total {
                return Err(Error::InvalidArgument(alloc::format!(
                    "user {u} has a repeated interaction"
                )));
            }
            let mut sorted = items_of_user[u].clone();
            sorted.sort_unstable();
            let mut cats: Vec<usize> = sorted.iter().map(|&i| category_of_item[i]).collect();
            cats.sort_unstable();
            cats.dedup();
            sorted_items_of_user.push(sorted);
            categories_of_user.push(cats);
        }

        Ok(Self {
            user_tokens,
            item_tokens,
            category_tokens,
            category_of_item,
            records,
            train,
            test,
            items_of_user,
            users_of_item,
            test_items_of_user,
            categories_of_user,
            sorted_items_of_user,
        })
    }

    /// Per-user random split. Each user with `n >= 2` interactions keeps
    /// `ceil(train_fraction * n)` of them for training (capped at `n - 1`);
    /// users with a single interaction keep it in training.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::InvalidArgument(alloc::format!(
                "train fraction must lie in (0, 1), got {train_fraction}"
            )));
        }
        let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); self.num_users()];
        for (pos, r) in self.records.iter().enumerate() {
            per_user[r.user].push(pos);
        }
        let mut rng = rng::stream(seed, Stream::Split);
        let mut is_test = vec![false; self.records.len()];
        for positions in per_user.iter_mut() {
            let n = positions.len();
            if n < 2 {
                continue;
            }
            // guard against 0.8 * 10 = 8.000000000000002 style rounding
            let wanted = libm::ceil(train_fraction * n as f64 - 1e-9) as usize;
            let n_train = wanted.clamp(1, n - 1);
            positions.shuffle(&mut rng);
            for &pos in &positions[n_train..] {
                is_test[pos] = true;
            }
        }
        let records = self
            .records
            .iter()
            .zip(is_test)
            .map(|(r, test)| Record { test, ..*r })
            .collect();
        Self::from_records(
            self.user_tokens.clone(),
            self.item_tokens.clone(),
            self.category_tokens.clone(),
            self.category_of_item.clone(),
            records,
        )
    }

    /// Keeps only the listed users (re-indexed in the given order) and the
    /// items they touch. Used to carve desk-scale subsamples.
    pub fn restrict_to_users(&self, users: &[usize]) -> Result<Self> {
        let mut user_remap = vec![usize::MAX; self.num_users()];
        for (new, &old) in users.iter().enumerate() {
            user_remap[old] = new;
        }
        let mut item_remap = vec![usize::MAX; self.num_items()];
        let mut item_tokens = Vec::new();
        let mut category_of_item = Vec::new();
        let mut records = Vec::new();
        for r in &self.records {
            let u = user_remap[r.user];
            if u == usize::MAX {
                continue;
            }
            if item_remap[r.item] == usize::MAX {
                item_remap[r.item] = item_tokens.len();
                item_tokens.push(self.item_tokens[r.item].clone());
                category_of_item.push(self.category_of_item[r.item]);
            }
            records.push(Record {
                user: u,
                item: item_remap[r.item],
                test: r.test,
            });
        }
        // re-index categories so that every category id is in use
        let mut cat_remap = vec![usize::MAX; self.num_categories()];
        let mut category_tokens = Vec::new();
        for c in category_of_item.iter_mut() {
            if cat_remap[*c] == usize::MAX {
                cat_remap[*c] = category_tokens.len();
                category_tokens.push(self.category_tokens[*c].clone());
            }
            *c = cat_remap[*c];
        }
        let user_tokens = users.iter().map(|&u| self.user_tokens[u].clone()).collect();
        Self::from_records(user_tokens, item_tokens, category_tokens, category_of_item, records)
    }

    pub fn num_users(&self) -> usize {
        self.user_tokens.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_tokens.len()
    }

    pub fn num_categories(&self) -> usize {
        self.category_tokens.len()
    }

    pub fn user_tokens(&self) -> &[String] {
        &self.user_tokens
    }

    pub fn item_tokens(&self) -> &[String] {
        &self.item_tokens
    }

    pub fn category_tokens(&self) -> &[String] {
        &self.category_tokens
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn train_interactions(&self) -> &[(usize, usize)] {
        &self.train
    }

    pub fn test_interactions(&self) -> &[(usize, usize)] {
        &self.test
    }

    pub fn category_of_item(&self) -> &[usize] {
        &self.category_of_item
    }

    /// Training items of `user`, oldest first.
    pub fn items_of_user(&self, user: usize) -> &[usize] {
        &self.items_of_user[user]
    }

    /// Training users of `item`, oldest first.
    pub fn users_of_item(&self, item: usize) -> &[usize] {
        &self.users_of_item[item]
    }

    pub fn test_items_of_user(&self, user: usize) -> &[usize] {
        &self.test_items_of_user[user]
    }

    /// Distinct training categories of `user`, ascending.
    pub fn categories_of_user(&self, user: usize) -> &[usize] {
        &self.categories_of_user[user]
    }

    /// Training items of `user`, ascending; for membership tests.
    pub fn sorted_items_of_user(&self, user: usize) -> &[usize] {
        &self.sorted_items_of_user[user]
    }

    pub fn is_train_pair(&self, user: usize, item: usize) -> bool {
        self.sorted_items_of_user[user].binary_search(&item).is_ok()
    }

    /// `|C_u^+| / |V_u^+|` over training interactions.
    pub fn user_diversity(&self, user: usize) -> Result<f64> {
        let n = self.items_of_user[user].len();
        if n == 0 {
            return Err(Error::EmptyUserHistory(user));
        }
        Ok(self.categories_of_user[user].len() as f64 / n as f64)
    }

    /// Number of training items of `user` in each of its categories, as
    /// `(category, count)` pairs in ascending category order.
    pub fn category_counts(&self, user: usize) -> Vec<(usize, usize)> {
        let mut counts: Vec<(usize, usize)> =
            self.categories_of_user[user].iter().map(|&c| (c, 0)).collect();
        for &i in &self.items_of_user[user] {
            let c = self.category_of_item[i];
            let slot = counts.binary_search_by_key(&c, |e| e.0).expect("category listed");
            counts[slot].1 += 1;
        }
        counts
    }
}

fn intern(ids: &mut BTreeMap<String, usize>, tokens: &mut Vec<String>, token: String) -> usize {
    if let Some(&id) = ids.get(&token) {
        return id;
    }
    let id = tokens.len();
    tokens.push(token.clone());
    ids.insert(token, id);
    id
}

fn compact(tokens: Vec<String>, alive: &[bool]) -> (Vec<usize>, Vec<String>) {
    let mut remap = vec![usize::MAX; tokens.len()];
    let mut kept = Vec::new();
    for (old, token) in tokens.into_iter().enumerate() {
        if alive[old] {
            remap[old] = kept.len();
            kept.push(token);
        }
    }
    (remap, kept)
}

/// Removes edges until every remaining user and item has at least `k` of them.
fn k_core(edges: &mut Vec<(usize, usize)>, users: usize, items: usize, k: usize) {
    loop {
        let mut user_deg = vec![0usize; users];
        let mut item_deg = vec![0usize; items];
        for &(u, i) in edges.iter() {
            user_deg[u] += 1;
            item_deg[i] += 1;
        }
        let before = edges.len();
        edges.retain(|&(u, i)| user_deg[u] >= k && item_deg[i] >= k);
        if edges.len() == before {
            break;
        }
    }
}

/// Third standardized moment with population (divide-by-n) moments.
pub fn skewness(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(Error::DegenerateDistribution("fewer than two values"));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let (mut m2, mut m3) = (0.0, 0.0);
    for &x in values {
        let d = x - mean;
        m2 += d * d;
        m3 += d * d * d;
    }
    m2 /= n;
    m3 /= n;
    let scale = values.iter().fold(0.0f64, |a, x| a.max(libm::fabs(*x))).max(1.0);
    let sigma = libm::sqrt(m2);
    if sigma <= 8.0 * f64::EPSILON * scale {
        return Err(Error::DegenerateDistribution("zero standard deviation"));
    }
    Ok(m3 / (sigma * sigma * sigma))
}

/// Per-user diversity scores and the domain-level skew decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityProfile {
    /// `d_u`; zero for users without training interactions.
    pub diversity_of_user: Vec<f64>,
    pub skewness: f64,
    pub skewed_domain: bool,
}

impl DiversityProfile {
    pub const DEFAULT_SKEW_THRESHOLD: f64 = 0.2;

    pub fn from_corpus(corpus: &InteractionCorpus, skew_threshold: f64) -> Result<Self> {
        let diversity_of_user: Vec<f64> = (0..corpus.num_users())
            .map(|u| corpus.user_diversity(u).unwrap_or(0.0))
            .collect();
        let active: Vec<f64> = (0..corpus.num_users())
            .filter(|&u| !corpus.items_of_user(u).is_empty())
            .map(|u| diversity_of_user[u])
            .collect();
        let skewness = skewness(&active)?;
        Ok(Self {
            diversity_of_user,
            skewness,
            skewed_domain: skewness >= skew_threshold,
        })
    }

    pub fn diversity(&self, user: usize) -> f64 {
        self.diversity_of_user[user]
    }
}
