//! Deterministic toy corpora with planted category preferences.
//!
//! Most users concentrate on one or two categories and a few spread over
//! many, giving the right-skewed diversity distribution seen in real logs.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::{InteractionCorpus, RawCategory, RawInteraction, Record};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub categories: usize,
    pub min_items: usize,
    pub max_items: usize,
    /// probability that an interaction comes from a favored category
    pub focus: f64,
    /// exponent shaping the number of favored categories; larger means
    /// more narrow users
    pub narrowness: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            users: 20,
            items: 50,
            categories: 6,
            min_items: 4,
            max_items: 12,
            focus: 0.85,
            narrowness: 3.0,
            seed: 0,
        }
    }
}

/// One generated interaction, in generation (chronological) order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub user: usize,
    pub item: usize,
}

fn validate(config: &SyntheticConfig) -> Result<()> {
    if config.users == 0 || config.items == 0 || config.categories == 0 {
        return Err(Error::InvalidConfig("synthetic corpus needs users, items and categories".into()));
    }
    if config.categories > config.items {
        return Err(Error::InvalidConfig("more categories than items".into()));
    }
    if config.min_items == 0 || config.min_items > config.max_items || config.max_items >= config.items {
        return Err(Error::InvalidConfig(
            "need 1 <= min_items <= max_items < items".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.focus) {
        return Err(Error::InvalidConfig("focus must lie in [0, 1]".into()));
    }
    Ok(())
}

/// Item `i` belongs to category `i % categories`.
pub fn category_of_item(config: &SyntheticConfig) -> Vec<usize> {
    (0..config.items).map(|i| i % config.categories).collect()
}

pub fn draws(config: &SyntheticConfig) -> Result<Vec<Draw>> {
    validate(config)?;
    let mut rng = rng::stream(config.seed, Stream::Synthetic);
    let c = config.categories;
    let members: Vec<Vec<usize>> = (0..c)
        .map(|k| (k..config.items).step_by(c).collect())
        .collect();
    let mut per_user: Vec<Vec<usize>> = Vec::with_capacity(config.users);
    for _ in 0..config.users {
        let r: f64 = rng.random();
        let breadth = 1 + (libm::pow(r, config.narrowness) * (c - 1) as f64 + 0.5) as usize;
        let mut cats: Vec<usize> = (0..c).collect();
        for i in 0..breadth.min(c) {
            let j = rng.random_range(i..c);
            cats.swap(i, j);
        }
        let favored = &cats[..breadth.min(c)];
        let count = rng.random_range(config.min_items..=config.max_items);
        let mut chosen: Vec<usize> = Vec::with_capacity(count);
        let mut attempts = 0;
        while chosen.len() < count {
            attempts += 1;
            let category = if attempts > 50 * count {
                rng.random_range(0..c)
            } else if rng.random::<f64>() < config.focus {
                favored[rng.random_range(0..favored.len())]
            } else {
                rng.random_range(0..c)
            };
            let pool = &members[category];
            // popularity skew towards low ids within a category
            let u: f64 = rng.random();
            let item = pool[((u * u) * pool.len() as f64) as usize % pool.len()];
            if !chosen.contains(&item) {
                chosen.push(item);
            } else if attempts > 100 * count {
                if let Some(free) = (0..config.items).find(|i| !chosen.contains(i)) {
                    chosen.push(free);
                }
            }
        }
        per_user.push(chosen);
    }
    // interleave users so the log reads like a time-ordered stream
    let mut out = Vec::new();
    let longest = per_user.iter().map(Vec::len).max().unwrap_or(0);
    for step in 0..longest {
        for (user, items) in per_user.iter().enumerate() {
            if let Some(&item) = items.get(step) {
                out.push(Draw { user, item });
            }
        }
    }
    Ok(out)
}

fn token(prefix: &str, i: usize) -> String {
    format!("{prefix}{i}")
}

/// An all-train corpus indexed exactly as generated.
pub fn generate(config: &SyntheticConfig) -> Result<InteractionCorpus> {
    let records = draws(config)?
        .into_iter()
        .map(|d| Record {
            user: d.user,
            item: d.item,
            test: false,
        })
        .collect();
    InteractionCorpus::from_records(
        (0..config.users).map(|u| token("u", u)).collect(),
        (0..config.items).map(|i| token("i", i)).collect(),
        (0..config.categories).map(|k| token("c", k)).collect(),
        category_of_item(config),
        records,
    )
}

/// The same corpus as a raw timestamped log plus category table.
pub fn generate_raw(config: &SyntheticConfig) -> Result<(Vec<RawInteraction>, Vec<RawCategory>)> {
    let log = draws(config)?
        .into_iter()
        .enumerate()
        .map(|(t, d)| RawInteraction {
            user: token("u", d.user),
            item: token("i", d.item),
            value: 1.0,
            timestamp: Some(t as i64),
        })
        .collect();
    let cats = category_of_item(config)
        .into_iter()
        .enumerate()
        .map(|(i, k)| RawCategory {
            item: token("i", i),
            category: token("c", k),
        })
        .collect();
    Ok((log, cats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{skewness, DiversityProfile};

    #[test]
    fn generation_is_deterministic_and_in_range() {
        let config = SyntheticConfig::default();
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.train_interactions(), b.train_interactions());
        for u in 0..config.users {
            let n = a.items_of_user(u).len();
            assert!((config.min_items..=config.max_items).contains(&n));
        }
        let other = generate(&SyntheticConfig {
            seed: 1,
            ..config
        })
        .unwrap();
        assert_ne!(a.train_interactions(), other.train_interactions());
    }

    #[test]
    fn raw_form_ingests_to_the_same_shape() {
        let config = SyntheticConfig::default();
        let (log, cats) = generate_raw(&config).unwrap();
        let corpus = InteractionCorpus::ingest(log, cats, 1).unwrap();
        let direct = generate(&config).unwrap();
        assert_eq!(corpus.train_interactions().len(), direct.train_interactions().len());
    }

    #[test]
    fn diversity_is_right_skewed_at_scale() {
        let corpus = generate(&SyntheticConfig {
            users: 400,
            items: 300,
            categories: 10,
            min_items: 10,
            max_items: 30,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let profile = DiversityProfile::from_corpus(&corpus, 0.2).unwrap();
        assert!(profile.skewed_domain, "skewness {}", profile.skewness);
        assert!(skewness(&profile.diversity_of_user).unwrap() > 0.2);
    }

    #[test]
    fn rejects_bad_shapes() {
        let bad = SyntheticConfig {
            max_items: 50,
            ..SyntheticConfig::default()
        };
        assert!(generate(&bad).is_err());
    }
}
