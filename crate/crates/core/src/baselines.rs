//! Comparison methods: collaborative metric learning (plain Euclidean
//! embeddings, forward hinge only, no relation vectors) and a maximal
//! marginal relevance re-ranker usable on top of any [`Ranker`].

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use rand_distr::{Distribution, Normal};

use crate::corpus::InteractionCorpus;
use crate::error::{Error, Result};
use crate::gradients::RowGrad;
use crate::math;
use crate::metrics::{RankedList, Ranker};
use crate::optim::TableAdam;
use crate::rng::{self, Stream};
use crate::sampling::{uniform_sample, TrainingBatch};
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct CmlParameters {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub user_embeddings: Vec<f64>,
    pub item_embeddings: Vec<f64>,
}

impl CmlParameters {
    pub fn random<R: rand::Rng + ?Sized>(users: usize, items: usize, dim: usize, std_dev: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, std_dev).expect("finite standard deviation");
        let mut draw = |n: usize| (0..n).map(|_| normal.sample(rng)).collect::<Vec<f64>>();
        let user_embeddings = draw(users * dim);
        let item_embeddings = draw(items * dim);
        Self {
            num_users: users,
            num_items: items,
            dim,
            user_embeddings,
            item_embeddings,
        }
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_embeddings[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// `||p_u - q_v||^2`
    pub fn distance(&self, user: usize, item: usize) -> f64 {
        math::squared_distance(self.user(user), self.item(item))
    }
}

/// Mean over triples of `(1/P) sum_n [d(u,v) - d(u,n) + m]_+`, with
/// gradients added into `users` and `items`.
pub fn cml_loss_and_gradients(
    params: &CmlParameters,
    batch: &TrainingBatch,
    margin: f64,
    users: &mut RowGrad,
    items: &mut RowGrad,
) -> Result<f64> {
    let b = batch.len() as f64;
    let d = params.dim;
    let mut total = 0.0;
    let mut e = vec![0.0; d];
    for (t, triple) in batch.triples.iter().enumerate() {
        let (u, v) = (triple.user, triple.positive);
        let p = triple.negatives.len() as f64;
        let coef = 2.0 / (b * p);
        let d_uv = params.distance(u, v);
        let mut loss = 0.0;
        for &n in &triple.negatives {
            let arg = d_uv - params.distance(u, n) + margin;
            if arg > 0.0 {
                loss += arg;
                // d/dp_u = 2(p_u - q_v) - 2(p_u - q_n) = 2(q_n - q_v)
                for (x, (a, b)) in e.iter_mut().zip(params.item(n).iter().zip(params.item(v))) {
                    *x = a - b;
                }
                math::axpy(coef, &e, users.row_mut(u));
                for (x, (a, b)) in e.iter_mut().zip(params.item(v).iter().zip(params.user(u))) {
                    *x = a - b;
                }
                math::axpy(coef, &e, items.row_mut(v));
                for (x, (a, b)) in e.iter_mut().zip(params.user(u).iter().zip(params.item(n))) {
                    *x = a - b;
                }
                math::axpy(coef, &e, items.row_mut(n));
            }
        }
        loss /= p;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: "cml",
                index: t,
                user: u,
                item: v,
            });
        }
        total += loss;
    }
    Ok(total / b)
}

/// Trains CML with the batch size, epochs, learning rate, margin,
/// dimension, negatives and seed of `config`. Returns the parameters and
/// the per-epoch mean loss.
pub fn train_cml(corpus: &InteractionCorpus, config: &TrainConfig) -> Result<(CmlParameters, Vec<f64>)> {
    config.validate()?;
    if corpus.train_interactions().is_empty() {
        return Err(Error::EmptyLog);
    }
    let (m, n, d) = (corpus.num_users(), corpus.num_items(), config.embedding_dim);
    let mut params = CmlParameters::random(m, n, d, config.init_std, &mut rng::stream(config.seed, Stream::CmlInit));
    let mut sampler_rng = rng::stream(config.seed, Stream::CmlSampler);
    let mut user_opt = TableAdam::new(config.adam(), m * d, d);
    let mut item_opt = TableAdam::new(config.adam(), n * d, d);
    let mut user_grads = RowGrad::new(m, d);
    let mut item_grads = RowGrad::new(n, d);
    let steps = corpus.train_interactions().len().div_ceil(config.batch_size);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut clock = 0u64;
    for epoch in 1..=config.max_epochs {
        let mut sum = 0.0;
        for step in 0..steps {
            let batch = uniform_sample(corpus, config.batch_size, config.negatives, &mut sampler_rng)?;
            user_grads.clear();
            item_grads.clear();
            let loss = cml_loss_and_gradients(&params, &batch, config.margin, &mut user_grads, &mut item_grads)
                .map_err(|e| Error::Diverged {
                    epoch,
                    step,
                    source: alloc::boxed::Box::new(e),
                })?;
            clock += 1;
            user_opt.apply(clock, &mut params.user_embeddings, &user_grads, config.clip_embeddings);
            item_opt.apply(clock, &mut params.item_embeddings, &item_grads, config.clip_embeddings);
            sum += loss;
        }
        history.push(sum / steps as f64);
    }
    Ok((params, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmlModel {
    pub params: CmlParameters,
}

impl Ranker for CmlModel {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        for (item, o) in out.iter_mut().enumerate() {
            *o = -self.params.distance(user, item);
        }
    }
}

/// Greedy MMR over `candidates` (`(item, base score)` pairs). Each step
/// picks the candidate maximizing `lambda * rel - (1 - lambda) * max_sim`,
/// where `rel` is the min-max normalized base score and `max_sim` is 1 if
/// an already picked item shares its category. Ties go to the higher base
/// score, then the lower item id.
pub fn mmr_rerank(
    user: usize,
    candidates: &[(usize, f64)],
    category_of_item: &[usize],
    lambda: f64,
    k: usize,
) -> Result<RankedList> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(alloc::format!("lambda {lambda} outside [0, 1]")));
    }
    let (lo, hi) = candidates
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| (lo.min(c.1), hi.max(c.1)));
    let span = hi - lo;
    let relevance = |s: f64| if span > 0.0 { (s - lo) / span } else { 0.0 };
    let num_categories = candidates
        .iter()
        .map(|c| category_of_item[c.0] + 1)
        .max()
        .unwrap_or(0);
    let mut covered = vec![false; num_categories];
    let mut remaining: Vec<(usize, f64)> = candidates.to_vec();
    let mut items = Vec::with_capacity(k);
    let mut scores = Vec::with_capacity(k);
    while items.len() < k && !remaining.is_empty() {
        let objective = |c: &(usize, f64)| {
            let sim = if covered[category_of_item[c.0]] { 1.0 } else { 0.0 };
            lambda * relevance(c.1) - (1.0 - lambda) * sim
        };
        let mut best = 0;
        for i in 1..remaining.len() {
            let (a, b) = (&remaining[i], &remaining[best]);
            let better = match objective(a).total_cmp(&objective(b)) {
                Ordering::Greater => true,
                Ordering::Less => false,
                Ordering::Equal => crate::metrics::compare_candidates(*a, *b) == Ordering::Less,
            };
            if better {
                best = i;
            }
        }
        let (item, score) = remaining.swap_remove(best);
        covered[category_of_item[item]] = true;
        items.push(item);
        scores.push(score);
    }
    Ok(RankedList { user, items, scores })
}

/// Re-ranks a base ranker's scores over all unobserved items with MMR.
#[derive(Debug, Clone)]
pub struct MmrRanker<R> {
    pub base: R,
    pub lambda: f64,
    category_of_item: Vec<usize>,
}

impl<R: Ranker> MmrRanker<R> {
    pub fn new(base: R, lambda: f64, corpus: &InteractionCorpus) -> Result<Self> {
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::InvalidArgument(alloc::format!("lambda {lambda} outside [0, 1]")));
        }
        Ok(Self {
            base,
            lambda,
            category_of_item: corpus.category_of_item().to_vec(),
        })
    }
}

impl<R: Ranker> Ranker for MmrRanker<R> {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        self.base.score_items(user, out);
    }

    fn rank(&self, corpus: &InteractionCorpus, user: usize, k: usize) -> RankedList {
        let mut scores = vec![0.0; corpus.num_items()];
        self.base.score_items(user, &mut scores);
        let observed = corpus.sorted_items_of_user(user);
        let candidates: Vec<(usize, f64)> = scores
            .iter()
            .enumerate()
            .filter(|(i, _)| observed.binary_search(i).is_err())
            .map(|(i, &s)| (i, s))
            .collect();
        mmr_rerank(user, &candidates, &self.category_of_item, self.lambda, k).expect("lambda validated")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::{BranchTag, Triple};
    use crate::synthetic::{generate, SyntheticConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lambda_one_is_relevance_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cats: Vec<usize> = (0..30).map(|i| i % 4).collect();
        for _ in 0..20 {
            let cands: Vec<(usize, f64)> = (0..30).map(|i| (i, rng.random::<f64>())).collect();
            let scores: Vec<f64> = cands.iter().map(|c| c.1).collect();
            let mmr = mmr_rerank(0, &cands, &cats, 1.0, 10).unwrap();
            let top = RankedList::top_k_excluding(0, &scores, &[], 10);
            assert_eq!(mmr.items, top.items);
        }
    }

    #[test]
    fn lambda_zero_spreads_categories() {
        let cats = [0, 0, 0, 1, 1, 2];
        let cands: Vec<(usize, f64)> = (0..6).map(|i| (i, 1.0 - i as f64 * 0.1)).collect();
        let mmr = mmr_rerank(0, &cands, &cats, 0.0, 3).unwrap();
        let mut seen: Vec<usize> = mmr.items.iter().map(|&i| cats[i]).collect();
        seen.sort_unstable();
        assert_eq!(seen, [0, 1, 2]);
        assert_eq!(mmr.items, [0, 3, 5]);
    }

    #[test]
    fn six_item_trace_matches_greedy_oracle() {
        // scores normalize to (1, .8, .6, .4, .2, 0); categories a a b b c a
        let cats = [0, 0, 1, 1, 2, 0];
        let cands: Vec<(usize, f64)> = (0..6).map(|i| (i, 10.0 - 2.0 * i as f64)).collect();
        // step 1: 0.8*1 → item 0
        // step 2: item1 .8*.8-.2 = .44, item2 .8*.6 = .48 → item 2
        // step 3: item1 .44, item3 .32-.2=.12, item4 .16, item5 -.2 → item 1
        // step 4: item3 .12, item4 .16, item5 -.2 → item 4
        let mmr = mmr_rerank(0, &cands, &cats, 0.8, 4).unwrap();
        assert_eq!(mmr.items, [0, 2, 1, 4]);
    }

    #[test]
    fn short_candidate_lists_and_bad_lambda() {
        let cands = [(3, 0.5), (1, 0.7)];
        assert_eq!(mmr_rerank(0, &cands, &[0, 0, 0, 1], 0.5, 5).unwrap().items.len(), 2);
        assert!(mmr_rerank(0, &cands, &[0, 0, 0, 1], 1.5, 5).is_err());
    }

    #[test]
    fn cml_flat_loss_gives_no_update() {
        let mut params = CmlParameters::random(2, 3, 2, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        params.item_embeddings[4] = 3.0;
        let batch = TrainingBatch {
            triples: vec![Triple {
                user: 0,
                positive: 0,
                negatives: vec![2],
            }],
            branch_tag: BranchTag::Conventional,
        };
        let mut ug = RowGrad::new(2, 2);
        let mut ig = RowGrad::new(3, 2);
        let loss = cml_loss_and_gradients(&params, &batch, 1.0, &mut ug, &mut ig).unwrap();
        assert_eq!(loss, 0.0);
        assert!(ug.touched().is_empty() && ig.touched().is_empty());
    }

    #[test]
    fn cml_gradient_matches_differences() {
        let params = CmlParameters::random(2, 4, 3, 0.3, &mut ChaCha8Rng::seed_from_u64(2));
        let batch = TrainingBatch {
            triples: vec![Triple {
                user: 1,
                positive: 0,
                negatives: vec![2, 3],
            }],
            branch_tag: BranchTag::Conventional,
        };
        let mut ug = RowGrad::new(2, 3);
        let mut ig = RowGrad::new(4, 3);
        cml_loss_and_gradients(&params, &batch, 1.0, &mut ug, &mut ig).unwrap();
        let h = 1e-6;
        let loss = |p: &CmlParameters| {
            cml_loss_and_gradients(p, &batch, 1.0, &mut RowGrad::new(2, 3), &mut RowGrad::new(4, 3)).unwrap()
        };
        for i in 0..params.item_embeddings.len() {
            let mut a = params.clone();
            let mut b = params.clone();
            a.item_embeddings[i] += h;
            b.item_embeddings[i] -= h;
            let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((numeric - ig.dense()[i]).abs() < 1e-7);
        }
        for i in 0..params.user_embeddings.len() {
            let mut a = params.clone();
            let mut b = params.clone();
            a.user_embeddings[i] += h;
            b.user_embeddings[i] -= h;
            let numeric = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((numeric - ug.dense()[i]).abs() < 1e-7);
        }
    }

    #[test]
    fn cml_toy_training_halves_the_loss_and_is_deterministic() {
        let corpus = generate(&SyntheticConfig {
            users: 5,
            items: 8,
            categories: 3,
            min_items: 3,
            max_items: 5,
            seed: 5,
            ..SyntheticConfig::default()
        })
        .unwrap();
        let config = TrainConfig {
            batch_size: 8,
            max_epochs: 200,
            learning_rate: 1e-2,
            embedding_dim: 8,
            negatives: 2,
            init_std: 0.1,
            seed: 4,
            ..TrainConfig::default()
        };
        let (p1, h1) = train_cml(&corpus, &config).unwrap();
        let (p2, h2) = train_cml(&corpus, &config).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(h1, h2);
        assert!(h1[199] <= 0.5 * h1[0], "{} -> {}", h1[0], h1[199]);
    }
}
