//! Top-K evaluation: accuracy (Recall, NDCG), diversity (ILD, category
//! coverage), their F-score and the error of predicted per-user diversity.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::corpus::{DiversityProfile, InteractionCorpus};
use crate::error::{Error, Result};

/// A user's top-K over unobserved items, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub user: usize,
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Descending score, ascending item id on ties; NaN sorts last.
pub fn compare_candidates(a: (usize, f64), b: (usize, f64)) -> Ordering {
    let key = |s: f64| if s.is_nan() { f64::NEG_INFINITY } else { s };
    key(b.1).total_cmp(&key(a.1)).then(a.0.cmp(&b.0))
}

impl RankedList {
    /// Top `k` of `scores` skipping the ids in `excluded` (sorted).
    pub fn top_k_excluding(user: usize, scores: &[f64], excluded: &[usize], k: usize) -> Self {
        let mut candidates: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| excluded.binary_search(i).is_err())
            .map(|(i, &s)| (i, s))
            .collect();
        let k = k.min(candidates.len());
        if k == 0 {
            return Self {
                user,
                items: Vec::new(),
                scores: Vec::new(),
            };
        }
        if k < candidates.len() {
            candidates.select_nth_unstable_by(k - 1, |&a, &b| compare_candidates(a, b));
            candidates.truncate(k);
        }
        candidates.sort_unstable_by(|&a, &b| compare_candidates(a, b));
        Self {
            user,
            items: candidates.iter().map(|c| c.0).collect(),
            scores: candidates.iter().map(|c| c.1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    fn head(&self, k: usize) -> &[usize] {
        &self.items[..k.min(self.items.len())]
    }
}

/// Anything that scores every item for a user.
pub trait Ranker {
    /// Writes one score per item into `out`; higher is better.
    fn score_items(&self, user: usize, out: &mut [f64]);

    fn rank(&self, corpus: &InteractionCorpus, user: usize, k: usize) -> RankedList {
        let mut scores = vec![0.0; corpus.num_items()];
        self.score_items(user, &mut scores);
        RankedList::top_k_excluding(user, &scores, corpus.sorted_items_of_user(user), k)
    }
}

/// `truth` must be sorted.
fn hits<'a>(ranked: &'a RankedList, truth: &'a [usize], k: usize) -> impl Iterator<Item = bool> + 'a {
    ranked.head(k).iter().map(move |i| truth.binary_search(i).is_ok())
}

fn require_truth(truth: &[usize]) -> Result<()> {
    if truth.is_empty() {
        Err(Error::InvalidArgument("empty ground truth".into()))
    } else {
        Ok(())
    }
}

/// `|top-k ∩ truth| / |truth|`; `truth` sorted.
pub fn recall_at_k(ranked: &RankedList, truth: &[usize], k: usize) -> Result<f64> {
    require_truth(truth)?;
    let found = hits(ranked, truth, k).filter(|&h| h).count();
    Ok(found as f64 / truth.len() as f64)
}

/// Binary-relevance NDCG with the ideal list holding `min(k, |truth|)` hits.
pub fn ndcg_at_k(ranked: &RankedList, truth: &[usize], k: usize) -> Result<f64> {
    require_truth(truth)?;
    let gain = |rank: usize| 1.0 / libm::log2(rank as f64 + 2.0);
    let dcg: f64 = hits(ranked, truth, k)
        .enumerate()
        .filter(|(_, h)| *h)
        .fold(0.0, |acc, (r, _)| acc + gain(r));
    let idcg: f64 = (0..k.min(truth.len())).map(gain).sum();
    Ok(dcg / idcg)
}

/// Share of top-k pairs whose categories differ, over `k(k-1)/2` pairs.
pub fn ild_at_k(ranked: &RankedList, category_of_item: &[usize], k: usize) -> Result<f64> {
    if k < 2 {
        return Err(Error::InvalidArgument("ILD needs k >= 2".into()));
    }
    let head = ranked.head(k);
    let n = head.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut differing = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if category_of_item[head[i]] != category_of_item[head[j]] {
                differing += 1;
            }
        }
    }
    Ok(differing as f64 / (n * (n - 1) / 2) as f64)
}

fn distinct_categories(head: &[usize], category_of_item: &[usize]) -> Vec<usize> {
    let mut cats: Vec<usize> = head.iter().map(|&i| category_of_item[i]).collect();
    cats.sort_unstable();
    cats.dedup();
    cats
}

/// `|categories(top-k) ∩ C_u| / min(k, |C_u|)`; `user_categories` sorted.
pub fn cc_at_k(
    ranked: &RankedList,
    category_of_item: &[usize],
    user_categories: &[usize],
    k: usize,
) -> Result<f64> {
    if user_categories.is_empty() {
        return Err(Error::InvalidArgument("user has no training categories".into()));
    }
    let covered = distinct_categories(ranked.head(k), category_of_item)
        .iter()
        .filter(|c| user_categories.binary_search(c).is_ok())
        .count();
    Ok(covered as f64 / k.min(user_categories.len()) as f64)
}

/// Harmonic mean; 0 when both inputs are 0.
pub fn f_score(accuracy: f64, diversity: f64) -> f64 {
    let s = accuracy + diversity;
    if s > 0.0 {
        2.0 * accuracy * diversity / s
    } else {
        0.0
    }
}

/// Distinct categories among the top-k, divided by `k`.
pub fn predicted_diversity(ranked: &RankedList, category_of_item: &[usize], k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    distinct_categories(ranked.head(k), category_of_item).len() as f64 / k as f64
}

/// Mean squared difference over `(user, value)` pairs listed for the same
/// users in the same order.
pub fn diversity_mse(predicted: &[(usize, f64)], original: &[(usize, f64)]) -> Result<f64> {
    if predicted.len() != original.len() || predicted.iter().zip(original).any(|(a, b)| a.0 != b.0) {
        return Err(Error::MismatchedUsers(alloc::format!(
            "{} predicted vs {} original entries",
            predicted.len(),
            original.len()
        )));
    }
    if predicted.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = predicted.iter().zip(original).map(|(a, b)| (a.1 - b.1) * (a.1 - b.1)).sum();
    Ok(total / predicted.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CutoffMetrics {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub ild: f64,
    pub cc: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub diversity: f64,
    pub predicted_diversity: f64,
    pub cutoffs: Vec<CutoffMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    /// one row per cutoff, ascending; means over evaluated users
    pub rows: Vec<CutoffMetrics>,
    pub diversity_mse: f64,
    pub users: Vec<UserMetrics>,
}

impl MetricReport {
    pub fn row(&self, k: usize) -> Option<&CutoffMetrics> {
        self.rows.iter().find(|r| r.k == k)
    }
}

fn normalized_cutoffs(cutoffs: &[usize]) -> Result<Vec<usize>> {
    let mut ks = cutoffs.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() || ks[0] < 2 {
        return Err(Error::InvalidArgument("cutoffs must be nonempty and at least 2".into()));
    }
    Ok(ks)
}

/// Metrics for one user, or `None` when the user has no test items.
/// Predicted diversity uses the largest cutoff.
pub fn evaluate_user<R: Ranker + ?Sized>(
    ranker: &R,
    corpus: &InteractionCorpus,
    profile: &DiversityProfile,
    user: usize,
    cutoffs: &[usize],
) -> Result<Option<UserMetrics>> {
    let ks = normalized_cutoffs(cutoffs)?;
    let truth = corpus.test_items_of_user(user);
    if truth.is_empty() {
        return Ok(None);
    }
    let k_max = *ks.last().expect("nonempty cutoffs");
    let ranked = ranker.rank(corpus, user, k_max);
    let cats = corpus.category_of_item();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in &ks {
        let recall = recall_at_k(&ranked, truth, k)?;
        let ild = ild_at_k(&ranked, cats, k)?;
        rows.push(CutoffMetrics {
            k,
            recall,
            ndcg: ndcg_at_k(&ranked, truth, k)?,
            ild,
            cc: cc_at_k(&ranked, cats, corpus.categories_of_user(user), k)?,
            f1: f_score(recall, ild),
        });
    }
    Ok(Some(UserMetrics {
        user,
        diversity: profile.diversity(user),
        predicted_diversity: predicted_diversity(&ranked, cats, k_max),
        cutoffs: rows,
    }))
}

/// Means over users in the given order; each row's F1 comes from the mean
/// recall and mean ILD.
pub fn aggregate(users: Vec<UserMetrics>, cutoffs: &[usize]) -> Result<MetricReport> {
    let ks = normalized_cutoffs(cutoffs)?;
    let n = users.len().max(1) as f64;
    let mut rows: Vec<CutoffMetrics> = ks
        .iter()
        .map(|&k| CutoffMetrics {
            k,
            recall: 0.0,
            ndcg: 0.0,
            ild: 0.0,
            cc: 0.0,
            f1: 0.0,
        })
        .collect();
    for u in &users {
        for (row, m) in rows.iter_mut().zip(&u.cutoffs) {
            row.recall += m.recall;
            row.ndcg += m.ndcg;
            row.ild += m.ild;
            row.cc += m.cc;
        }
    }
    for row in &mut rows {
        row.recall /= n;
        row.ndcg /= n;
        row.ild /= n;
        row.cc /= n;
        row.f1 = f_score(row.recall, row.ild);
    }
    let predicted: Vec<(usize, f64)> = users.iter().map(|u| (u.user, u.predicted_diversity)).collect();
    let original: Vec<(usize, f64)> = users.iter().map(|u| (u.user, u.diversity)).collect();
    Ok(MetricReport {
        rows,
        diversity_mse: diversity_mse(&predicted, &original)?,
        users,
    })
}

/// Evaluates every user with a nonempty test set, in user-id order.
pub fn evaluate<R: Ranker + ?Sized>(
    ranker: &R,
    corpus: &InteractionCorpus,
    profile: &DiversityProfile,
    cutoffs: &[usize],
) -> Result<MetricReport> {
    let mut users = Vec::new();
    for u in 0..corpus.num_users() {
        if let Some(m) = evaluate_user(ranker, corpus, profile, u, cutoffs)? {
            users.push(m);
        }
    }
    aggregate(users, cutoffs)
}
