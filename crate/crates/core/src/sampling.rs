//! Training-pair samplers.
//!
//! The conventional branch sees pairs drawn uniformly from the observed
//! entries. The adaptive branch sees pairs drawn by the reversed sampler:
//! pick a user, pick one of that user's categories from a mixture of the
//! inverse-frequency law `P^R` and the empirical law `P^O` (gated per draw
//! by `z < d_u`), then pick one of the user's items in that category.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::corpus::{DiversityProfile, InteractionCorpus};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchTag {
    Conventional,
    Adaptive,
}

impl BranchTag {
    pub fn as_str(self) -> &'static str {
        match self {
            BranchTag::Conventional => "conventional",
            BranchTag::Adaptive => "adaptive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingBatch {
    pub triples: Vec<Triple>,
    pub branch_tag: BranchTag,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// `count_p` items outside the user's training history, uniformly. Draws
/// are distinct unless the pool of candidates is smaller than `count_p`.
pub fn draw_negatives<R: Rng + ?Sized>(
    corpus: &InteractionCorpus,
    user: usize,
    count_p: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let n = corpus.num_items();
    let seen = corpus.sorted_items_of_user(user);
    let pool = n - seen.len();
    if pool == 0 {
        return Err(Error::NoNegatives(user));
    }
    if pool < count_p {
        let candidates = complement(seen, n);
        return Ok((0..count_p)
            .map(|_| candidates[rng.random_range(0..pool)])
            .collect());
    }
    if pool < 2 * count_p || pool * 8 < n {
        // dense history: partial Fisher-Yates over the explicit pool
        let mut candidates = complement(seen, n);
        for k in 0..count_p {
            let j = rng.random_range(k..pool);
            candidates.swap(k, j);
        }
        candidates.truncate(count_p);
        return Ok(candidates);
    }
    let mut out = Vec::with_capacity(count_p);
    while out.len() < count_p {
        let candidate = rng.random_range(0..n);
        if seen.binary_search(&candidate).is_err() && !out.contains(&candidate) {
            out.push(candidate);
        }
    }
    Ok(out)
}

fn complement(sorted: &[usize], n: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(n - sorted.len());
    let mut it = sorted.iter().peekable();
    for i in 0..n {
        if it.peek() == Some(&&i) {
            it.next();
        } else {
            out.push(i);
        }
    }
    out
}

/// Every observed pair with equal probability, with replacement.
pub fn uniform_sample<R: Rng + ?Sized>(
    corpus: &InteractionCorpus,
    batch_size: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    let train = corpus.train_interactions();
    if train.is_empty() {
        return Err(Error::InvalidArgument("corpus has no training interactions".into()));
    }
    let mut triples = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let (user, positive) = train[rng.random_range(0..train.len())];
        let negatives = draw_negatives(corpus, user, negatives, rng)?;
        triples.push(Triple {
            user,
            positive,
            negatives,
        });
    }
    Ok(TrainingBatch {
        triples,
        branch_tag: BranchTag::Conventional,
    })
}

/// Per-category sampling laws for one user over `C_u^+`, in ascending
/// category order.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoryLaw {
    pub categories: Vec<usize>,
    /// `P^R_i = w_i / sum_j w_j` with `w_i = |V_u^+| / N_i`.
    pub reversed: Vec<f64>,
    /// `P^O_i = N_i / |V_u^+|`.
    pub original: Vec<f64>,
}

impl CategoryLaw {
    /// The category marginal of one reversed-sampler draw for a user with
    /// diversity `d_u`: `d_u P^R + (1 - d_u) P^O`.
    pub fn mixture(&self, diversity: f64) -> Vec<f64> {
        self.reversed
            .iter()
            .zip(&self.original)
            .map(|(r, o)| diversity * r + (1.0 - diversity) * o)
            .collect()
    }
}

pub fn reversed_category_probs(corpus: &InteractionCorpus, user: usize) -> Result<CategoryLaw> {
    let total = corpus.items_of_user(user).len();
    if total == 0 {
        return Err(Error::EmptyUserHistory(user));
    }
    let counts = corpus.category_counts(user);
    let weights: Vec<f64> = counts.iter().map(|&(_, c)| total as f64 / c as f64).collect();
    let weight_sum: f64 = weights.iter().sum();
    Ok(CategoryLaw {
        categories: counts.iter().map(|&(c, _)| c).collect(),
        reversed: weights.iter().map(|w| w / weight_sum).collect(),
        original: counts.iter().map(|&(_, c)| c as f64 / total as f64).collect(),
    })
}

#[derive(Debug, Clone)]
struct UserTable {
    user: usize,
    diversity: f64,
    reversed_cdf: Vec<f64>,
    original_cdf: Vec<f64>,
    /// items of the user grouped by category, in the same order as the CDFs
    items_by_category: Vec<Vec<usize>>,
}

/// Precomputed per-user tables for the reversed sampler.
#[derive(Debug, Clone)]
pub struct ReversedSampler {
    tables: Vec<UserTable>,
}

impl ReversedSampler {
    pub fn new(corpus: &InteractionCorpus, profile: &DiversityProfile) -> Result<Self> {
        let mut tables = Vec::new();
        for user in 0..corpus.num_users() {
            if corpus.items_of_user(user).is_empty() {
                continue;
            }
            let law = reversed_category_probs(corpus, user)?;
            let mut items_by_category = vec![Vec::new(); law.categories.len()];
            for &item in corpus.items_of_user(user) {
                let c = corpus.category_of_item()[item];
                let slot = law.categories.binary_search(&c).expect("user category");
                items_by_category[slot].push(item);
            }
            tables.push(UserTable {
                user,
                diversity: profile.diversity(user),
                reversed_cdf: cumulative(&law.reversed),
                original_cdf: cumulative(&law.original),
                items_by_category,
            });
        }
        if tables.is_empty() {
            return Err(Error::InvalidArgument("corpus has no training interactions".into()));
        }
        Ok(Self { tables })
    }

    /// One positive pair `(user, item)`: a uniform user, then the gated
    /// category draw, then a uniform item of that category.
    fn draw_positive<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let table = &self.tables[rng.random_range(0..self.tables.len())];
        (table.user, Self::draw_from(table, rng))
    }

    fn draw_from<R: Rng + ?Sized>(table: &UserTable, rng: &mut R) -> usize {
        let z: f64 = rng.random();
        let cdf = if z < table.diversity {
            &table.reversed_cdf
        } else {
            &table.original_cdf
        };
        let slot = sample_cdf(cdf, rng.random());
        let items = &table.items_by_category[slot];
        items[rng.random_range(0..items.len())]
    }

    /// A positive item for a fixed user, drawn exactly as inside a batch
    /// once that user has been picked; `None` for users without history.
    pub fn draw_item_for_user<R: Rng + ?Sized>(&self, user: usize, rng: &mut R) -> Option<usize> {
        let at = self.tables.binary_search_by_key(&user, |t| t.user).ok()?;
        Some(Self::draw_from(&self.tables[at], rng))
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        corpus: &InteractionCorpus,
        batch_size: usize,
        negatives: usize,
        rng: &mut R,
    ) -> Result<TrainingBatch> {
        let mut triples = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let (user, positive) = self.draw_positive(rng);
            let negatives = draw_negatives(corpus, user, negatives, rng)?;
            triples.push(Triple {
                user,
                positive,
                negatives,
            });
        }
        Ok(TrainingBatch {
            triples,
            branch_tag: BranchTag::Adaptive,
        })
    }
}

/// Convenience wrapper building the per-user tables on the fly.
pub fn reversed_sample<R: Rng + ?Sized>(
    corpus: &InteractionCorpus,
    profile: &DiversityProfile,
    batch_size: usize,
    negatives: usize,
    rng: &mut R,
) -> Result<TrainingBatch> {
    ReversedSampler::new(corpus, profile)?.sample(corpus, batch_size, negatives, rng)
}

fn cumulative(probs: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .iter()
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    // the last bucket absorbs any rounding shortfall of the final sum
    cdf.iter().position(|&c| u < c).unwrap_or(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{RawCategory, RawInteraction};
    use alloc::format;
    use alloc::string::{String, ToString};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn corpus(pairs: &[(&str, &str)], cats: &[(&str, &str)]) -> InteractionCorpus {
        InteractionCorpus::ingest(
            pairs.iter().map(|(u, i)| RawInteraction {
                user: u.to_string(),
                item: i.to_string(),
                value: 1.0,
                timestamp: None,
            }),
            cats.iter().map(|(i, c)| RawCategory {
                item: i.to_string(),
                category: c.to_string(),
            }),
            1,
        )
        .unwrap()
    }

    #[test]
    fn category_laws_for_three_to_one() {
        let c = corpus(
            &[("u", "a1"), ("u", "a2"), ("u", "a3"), ("u", "b1")],
            &[("a1", "A"), ("a2", "A"), ("a3", "A"), ("b1", "B")],
        );
        let law = reversed_category_probs(&c, 0).unwrap();
        assert_relative_eq!(law.reversed[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(law.reversed[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(law.original[0], 0.75, epsilon = 1e-12);
        assert_relative_eq!(law.original[1], 0.25, epsilon = 1e-12);
        assert_relative_eq!(law.mixture(0.5)[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn category_laws_degenerate_and_symmetric() {
        let single = corpus(&[("u", "a1"), ("u", "a2")], &[("a1", "A"), ("a2", "A")]);
        let law = reversed_category_probs(&single, 0).unwrap();
        assert_eq!(law.reversed, [1.0]);
        assert_eq!(law.original, [1.0]);

        let even = corpus(
            &[("u", "a1"), ("u", "a2"), ("u", "b1"), ("u", "b2")],
            &[("a1", "A"), ("a2", "A"), ("b1", "B"), ("b2", "B")],
        );
        let law = reversed_category_probs(&even, 0).unwrap();
        assert_eq!(law.reversed, [0.5, 0.5]);
        assert_eq!(law.original, [0.5, 0.5]);
    }

    #[test]
    fn negatives_avoid_history() {
        let c = corpus(
            &[("u", "0"), ("u", "1"), ("u", "2"), ("v", "3"), ("v", "4")],
            &[("0", "c"), ("1", "c"), ("2", "c"), ("3", "c"), ("4", "c")],
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let neg = draw_negatives(&c, 0, 2, &mut rng).unwrap();
            assert_eq!(neg.len(), 2);
            assert!(neg.iter().all(|i| *i == 3 || *i == 4));
            assert_ne!(neg[0], neg[1]);
        }
        // pool of 2 smaller than 5 requested: duplicates permitted
        let neg = draw_negatives(&c, 0, 5, &mut rng).unwrap();
        assert_eq!(neg.len(), 5);
    }

    #[test]
    fn negatives_fail_for_saturated_user() {
        let c = corpus(&[("u", "0"), ("u", "1")], &[("0", "c"), ("1", "c")]);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(draw_negatives(&c, 0, 1, &mut rng), Err(Error::NoNegatives(0)));
    }

    #[test]
    fn large_pool_gives_requested_count() {
        let items: Vec<String> = (0..3000).map(|i| format!("i{i}")).collect();
        let mut pairs = vec![("u", "i0")];
        pairs.push(("w", "i1"));
        let cats: Vec<(&str, &str)> = items.iter().map(|i| (i.as_str(), "c")).collect();
        let mut log: Vec<(&str, &str)> = pairs.clone();
        for i in &items[2..] {
            log.push(("w", i.as_str()));
        }
        let c = corpus(&log, &cats);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let neg = draw_negatives(&c, 0, 20, &mut rng).unwrap();
        assert_eq!(neg.len(), 20);
        let mut d = neg.clone();
        d.sort_unstable();
        d.dedup();
        assert_eq!(d.len(), 20);
        assert!(!neg.contains(&0));
    }

    #[test]
    fn uniform_batch_shape_and_tag() {
        let c = corpus(&[("u", "a"), ("u", "b"), ("v", "c")], &[("a", "x"), ("b", "x"), ("c", "y")]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = uniform_sample(&c, 128, 1, &mut rng).unwrap();
        assert_eq!(batch.len(), 128);
        assert_eq!(batch.branch_tag, BranchTag::Conventional);
        for t in &batch.triples {
            assert!(c.is_train_pair(t.user, t.positive));
            assert!(t.negatives.iter().all(|&n| !c.is_train_pair(t.user, n)));
        }
    }

    #[test]
    fn singleton_support() {
        // one observed pair (u, a); item b is never observed
        let c = InteractionCorpus::from_records(
            vec!["u".into()],
            vec!["a".into(), "b".into()],
            vec!["x".into()],
            vec![0, 0],
            vec![crate::corpus::Record { user: 0, item: 0, test: false }],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let batch = uniform_sample(&c, 16, 1, &mut rng).unwrap();
        assert!(batch.triples.iter().all(|t| t.user == 0 && t.positive == 0 && t.negatives == [1]));
    }

    #[test]
    fn reversed_single_category_user_stays_in_category() {
        let c = corpus(
            &[("u", "a1"), ("u", "a2"), ("w", "b1"), ("w", "a1")],
            &[("a1", "A"), ("a2", "A"), ("b1", "B")],
        );
        let profile = DiversityProfile::from_corpus(&c, 0.2).unwrap();
        let sampler = ReversedSampler::new(&c, &profile).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let batch = sampler.sample(&c, 500, 1, &mut rng).unwrap();
        for t in batch.triples.iter().filter(|t| t.user == 0) {
            assert_eq!(c.category_of_item()[t.positive], 0);
        }
    }

    #[test]
    fn fixed_seed_gives_identical_batches() {
        let c = corpus(
            &[("u", "a"), ("u", "b"), ("v", "c"), ("v", "a")],
            &[("a", "x"), ("b", "y"), ("c", "x"), ("d", "y")],
        );
        let profile = DiversityProfile::from_corpus(&c, 0.2).unwrap();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = uniform_sample(&c, 32, 1, &mut rng).unwrap();
            let b = reversed_sample(&c, &profile, 32, 1, &mut rng).unwrap();
            (a, b)
        };
        assert_eq!(run(42), run(42));
    }
}
