//! One branch's parameter space and its forward computation.
//!
//! For a pair `(u, v)` a branch computes
//!
//! ```text
//! h_uv  = sum_j softmax_j(p_u^T W_a q_j) q_j       over j in V_u^+
//! h'_u  = mu_u + eps * sigma_u,  mu_u = T_mu^T w_u,  sigma_u = |T_sigma^T w_u|
//! r_uv  = h_uv + h'_u
//! d(u,v) = || p_u + r_uv - q_v ||^2
//! ```
//!
//! and symmetrically `h_vu`, `h'_v`, `r_vu`, `d(v,u) = || q_v + r_vu - p_u ||^2`
//! over the item's audience `U_v^+` with the same `W_a`. The attention
//! logits do not involve the target, so `r_uv` depends on `u` only and
//! `r_vu` on `v` only.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::corpus::{DiversityProfile, InteractionCorpus};
use crate::error::{Error, Result};
use crate::math;
use crate::metrics::Ranker;
use crate::sampling::BranchTag;

/// Histories longer than this keep only their most recent entries.
pub const DEFAULT_HISTORY_LIMIT: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    /// user → item: attention over the user's items
    Forward,
    /// item → user: attention over the item's users
    Backward,
}

/// Structural switches shared by the forward pass and the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSwitches {
    pub attention: bool,
    pub diversity_relation: bool,
    pub backward_direction: bool,
    pub history_limit: usize,
}

impl Default for ModelSwitches {
    fn default() -> Self {
        Self {
            attention: true,
            diversity_relation: true,
            backward_direction: true,
            history_limit: DEFAULT_HISTORY_LIMIT,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchParameters {
    pub tag: BranchTag,
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub aspects: usize,
    /// `M x D`
    pub user_embeddings: Vec<f64>,
    /// `N x D`
    pub item_embeddings: Vec<f64>,
    /// `W_a`, `D x D`
    pub attention: Vec<f64>,
    /// `T_mu`, `K x D`
    pub aspect_mean: Vec<f64>,
    /// `T_sigma`, `K x D`
    pub aspect_std: Vec<f64>,
}

impl BranchParameters {
    pub fn zeros(tag: BranchTag, users: usize, items: usize, dim: usize, aspects: usize) -> Self {
        Self {
            tag,
            num_users: users,
            num_items: items,
            dim,
            aspects,
            user_embeddings: vec![0.0; users * dim],
            item_embeddings: vec![0.0; items * dim],
            attention: vec![0.0; dim * dim],
            aspect_mean: vec![0.0; aspects * dim],
            aspect_std: vec![0.0; aspects * dim],
        }
    }

    /// Every entry drawn from `N(0, std_dev^2)`.
    pub fn random<R: Rng + ?Sized>(
        tag: BranchTag,
        users: usize,
        items: usize,
        dim: usize,
        aspects: usize,
        std_dev: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = Self::zeros(tag, users, items, dim, aspects);
        let normal = Normal::new(0.0, std_dev).expect("finite standard deviation");
        for tensor in params.tensors_mut() {
            tensor.iter_mut().for_each(|v| *v = normal.sample(rng));
        }
        params
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_embeddings[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_embeddings[i * self.dim..(i + 1) * self.dim]
    }

    /// In order: user embeddings, item embeddings, `W_a`, `T_mu`, `T_sigma`.
    pub fn tensors(&self) -> [&[f64]; 5] {
        [
            &self.user_embeddings,
            &self.item_embeddings,
            &self.attention,
            &self.aspect_mean,
            &self.aspect_std,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 5] {
        [
            &mut self.user_embeddings,
            &mut self.item_embeddings,
            &mut self.attention,
            &mut self.aspect_mean,
            &mut self.aspect_std,
        ]
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn max_embedding_norm(&self) -> f64 {
        self.user_embeddings
            .chunks(self.dim)
            .chain(self.item_embeddings.chunks(self.dim))
            .map(math::norm)
            .fold(0.0, f64::max)
    }
}

/// How the user × category frequency matrix is reduced to `K` aspects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AspectReduction {
    /// Rank-K truncated SVD of the user matrix; items use the same basis.
    #[default]
    Svd,
    /// No reduction; requires `K == |C|`.
    Identity,
}

/// Frozen per-user and per-item attention distributions over `K` aspects.
#[derive(Debug, Clone, PartialEq)]
pub struct AspectProfiles {
    pub aspects: usize,
    /// `M x K`, rows are probability vectors
    pub user_weights: Vec<f64>,
    /// `N x K`, rows are probability vectors
    pub item_weights: Vec<f64>,
}

impl AspectProfiles {
    pub fn user(&self, u: usize) -> &[f64] {
        &self.user_weights[u * self.aspects..(u + 1) * self.aspects]
    }

    pub fn item(&self, i: usize) -> &[f64] {
        &self.item_weights[i * self.aspects..(i + 1) * self.aspects]
    }

    pub fn row(&self, direction: Direction, entity: usize) -> &[f64] {
        match direction {
            Direction::Forward => self.user(entity),
            Direction::Backward => self.item(entity),
        }
    }
}

/// User rows come from each user's category frequencies over training
/// items. Item rows come from the item's audience: the category
/// frequencies of everything the item's users interacted with. Both are
/// projected onto the same `K`-dimensional basis and softmax-normalized.
pub fn build_aspect_profiles(
    corpus: &InteractionCorpus,
    num_aspects: usize,
    reduction: AspectReduction,
) -> Result<AspectProfiles> {
    let c = corpus.num_categories();
    if num_aspects > c {
        return Err(Error::TooManyAspects {
            requested: num_aspects,
            categories: c,
        });
    }
    if num_aspects == 0 {
        return Err(Error::InvalidArgument("at least one aspect is required".into()));
    }
    let m = corpus.num_users();
    let n = corpus.num_items();

    let mut user_counts = vec![0.0; m * c];
    for u in 0..m {
        for &i in corpus.items_of_user(u) {
            user_counts[u * c + corpus.category_of_item()[i]] += 1.0;
        }
    }
    let mut item_counts = vec![0.0; n * c];
    for i in 0..n {
        let row = &mut item_counts[i * c..(i + 1) * c];
        for &u in corpus.users_of_item(i) {
            math::axpy(1.0, &user_counts[u * c..(u + 1) * c], row);
        }
    }
    normalize_rows(&mut user_counts, c);
    normalize_rows(&mut item_counts, c);

    let basis = match reduction {
        AspectReduction::Identity => {
            if num_aspects != c {
                return Err(Error::InvalidArgument(
                    "identity reduction needs as many aspects as categories".into(),
                ));
            }
            let mut eye = vec![0.0; c * c];
            (0..c).for_each(|k| eye[k * c + k] = 1.0);
            eye
        }
        AspectReduction::Svd => svd_basis(&user_counts, m, c, num_aspects),
    };

    Ok(AspectProfiles {
        aspects: num_aspects,
        user_weights: project_softmax(&user_counts, c, &basis, num_aspects),
        item_weights: project_softmax(&item_counts, c, &basis, num_aspects),
    })
}

fn normalize_rows(matrix: &mut [f64], cols: usize) {
    for row in matrix.chunks_mut(cols) {
        let total: f64 = row.iter().sum();
        if total > 0.0 {
            row.iter_mut().for_each(|v| *v /= total);
        }
    }
}

/// Top-`k` right singular vectors as a row-major `C x K` matrix. Columns
/// are ordered by descending singular value and each is signed so its
/// largest-magnitude entry is positive. Columns beyond the matrix rank
/// are zero.
fn svd_basis(matrix: &[f64], rows: usize, cols: usize, k: usize) -> Vec<f64> {
    let mut basis = vec![0.0; cols * k];
    if rows == 0 {
        return basis;
    }
    let a = DMatrix::from_row_slice(rows, cols, matrix);
    let svd = a.svd(false, true);
    let v_t = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&x, &y| {
        svd.singular_values[y]
            .partial_cmp(&svd.singular_values[x])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });
    for (col, &s) in order.iter().take(k).enumerate() {
        let v = v_t.row(s);
        let pivot = (0..cols)
            .max_by(|&x, &y| {
                libm::fabs(v[x])
                    .partial_cmp(&libm::fabs(v[y]))
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(y.cmp(&x))
            })
            .unwrap_or(0);
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..cols {
            basis[r * k + col] = sign * v[r];
        }
    }
    basis
}

fn project_softmax(matrix: &[f64], cols: usize, basis: &[f64], k: usize) -> Vec<f64> {
    let rows = matrix.len() / cols.max(1);
    let mut out = vec![0.0; rows * k];
    for (row, dst) in matrix.chunks(cols).zip(out.chunks_mut(k)) {
        math::mat_t_vec(basis, cols, k, row, dst);
        math::softmax_in_place(dst);
    }
    out
}

/// The history an entity attends over, truncated to the most recent
/// `limit` entries.
pub fn history(
    corpus: &InteractionCorpus,
    direction: Direction,
    entity: usize,
    limit: usize,
) -> &[usize] {
    let full = match direction {
        Direction::Forward => corpus.items_of_user(entity),
        Direction::Backward => corpus.users_of_item(entity),
    };
    &full[full.len().saturating_sub(limit)..]
}

/// Forward-pass intermediates for one entity's relation vector `r`, kept
/// for the backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Relation<'c> {
    pub direction: Direction,
    pub entity: usize,
    pub history: &'c [usize],
    /// `W_a^T x` where `x` is the entity's own embedding
    pub query: Vec<f64>,
    /// attention weights over `history`
    pub weights: Vec<f64>,
    /// `h`: attention-weighted history
    pub relevance: Vec<f64>,
    /// `T_sigma^T w` before the absolute value
    pub raw_std: Vec<f64>,
    /// noise used for the diversity relation, if any
    pub noise: Option<Vec<f64>>,
    /// `h'`
    pub diversity: Vec<f64>,
    /// `r = h + h'`
    pub relation: Vec<f64>,
}

impl<'c> Relation<'c> {
    /// Computes `r` for one entity. An empty history contributes a zero
    /// relevance relation.
    pub fn compute(
        params: &BranchParameters,
        profiles: &AspectProfiles,
        corpus: &'c InteractionCorpus,
        direction: Direction,
        entity: usize,
        noise: Option<&[f64]>,
        switches: &ModelSwitches,
    ) -> Self {
        let d = params.dim;
        let (own, keys) = match direction {
            Direction::Forward => (params.user(entity), &params.item_embeddings),
            Direction::Backward => (params.item(entity), &params.user_embeddings),
        };
        let history = if switches.attention {
            history(corpus, direction, entity, switches.history_limit)
        } else {
            &[]
        };

        let mut query = vec![0.0; d];
        let mut weights = Vec::new();
        let mut relevance = vec![0.0; d];
        if !history.is_empty() {
            math::mat_t_vec(&params.attention, d, d, own, &mut query);
            weights = history
                .iter()
                .map(|&j| math::dot(&query, &keys[j * d..(j + 1) * d]))
                .collect();
            math::softmax_in_place(&mut weights);
            for (&j, &a) in history.iter().zip(&weights) {
                math::axpy(a, &keys[j * d..(j + 1) * d], &mut relevance);
            }
        }

        let mut raw_std = vec![0.0; d];
        let mut diversity = vec![0.0; d];
        if switches.diversity_relation {
            let w = profiles.row(direction, entity);
            math::mat_t_vec(&params.aspect_mean, params.aspects, d, w, &mut diversity);
            math::mat_t_vec(&params.aspect_std, params.aspects, d, w, &mut raw_std);
            if let Some(eps) = noise {
                for ((h, s), e) in diversity.iter_mut().zip(&raw_std).zip(eps) {
                    *h += e * libm::fabs(*s);
                }
            }
        }

        let relation = relevance.iter().zip(&diversity).map(|(a, b)| a + b).collect();
        Self {
            direction,
            entity,
            history,
            query,
            weights,
            relevance,
            raw_std,
            noise: noise.map(|e| e.to_vec()),
            diversity,
            relation,
        }
    }
}

/// `h_uv` (forward) or `h_vu` (backward) with its attention weights.
pub fn relevance_relation(
    params: &BranchParameters,
    corpus: &InteractionCorpus,
    entity: usize,
    direction: Direction,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let switches = ModelSwitches::default();
    if history(corpus, direction, entity, switches.history_limit).is_empty() {
        return Err(match direction {
            Direction::Forward => Error::EmptyUserHistory(entity),
            Direction::Backward => Error::EmptyItemHistory(entity),
        });
    }
    let profiles = AspectProfiles {
        aspects: params.aspects,
        user_weights: vec![0.0; params.num_users * params.aspects],
        item_weights: vec![0.0; params.num_items * params.aspects],
    };
    let off = ModelSwitches {
        diversity_relation: false,
        ..switches
    };
    let rel = Relation::compute(params, &profiles, corpus, direction, entity, None, &off);
    Ok((rel.relevance, rel.weights))
}

/// `h'` for a user (`Forward`) or item (`Backward`); `noise = None` gives
/// the mean.
pub fn diversity_relation(
    params: &BranchParameters,
    profiles: &AspectProfiles,
    direction: Direction,
    entity: usize,
    noise: Option<&[f64]>,
) -> Vec<f64> {
    let d = params.dim;
    let w = profiles.row(direction, entity);
    let mut mean = vec![0.0; d];
    math::mat_t_vec(&params.aspect_mean, params.aspects, d, w, &mut mean);
    if let Some(eps) = noise {
        let mut std = vec![0.0; d];
        math::mat_t_vec(&params.aspect_std, params.aspects, d, w, &mut std);
        for ((m, s), e) in mean.iter_mut().zip(&std).zip(eps) {
            *m += e * libm::fabs(*s);
        }
    }
    mean
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationOutput {
    pub forward_relation: Vec<f64>,
    pub backward_relation: Vec<f64>,
    pub forward_distance: f64,
    pub backward_distance: f64,
    pub attention_weights_fw: Vec<f64>,
    pub attention_weights_bw: Vec<f64>,
}

/// `d(u,v)` and `d(v,u)` with their relations.
pub fn forward_distance(params: &BranchParameters, user: usize, item: usize, r_user: &[f64]) -> f64 {
    let p = params.user(user);
    let q = params.item(item);
    p.iter()
        .zip(r_user)
        .zip(q)
        .map(|((p, r), q)| {
            let e = p + r - q;
            e * e
        })
        .sum()
}

pub fn backward_distance(params: &BranchParameters, user: usize, item: usize, r_item: &[f64]) -> f64 {
    let p = params.user(user);
    let q = params.item(item);
    q.iter()
        .zip(r_item)
        .zip(p)
        .map(|((q, r), p)| {
            let e = q + r - p;
            e * e
        })
        .sum()
}

#[allow(clippy::too_many_arguments)]
pub fn two_way_distance(
    params: &BranchParameters,
    profiles: &AspectProfiles,
    corpus: &InteractionCorpus,
    user: usize,
    item: usize,
    noise_user: Option<&[f64]>,
    noise_item: Option<&[f64]>,
    switches: &ModelSwitches,
) -> Result<RelationOutput> {
    if corpus.items_of_user(user).is_empty() {
        return Err(Error::EmptyUserHistory(user));
    }
    if corpus.users_of_item(item).is_empty() {
        return Err(Error::EmptyItemHistory(item));
    }
    let fw = Relation::compute(params, profiles, corpus, Direction::Forward, user, noise_user, switches);
    let bw = Relation::compute(params, profiles, corpus, Direction::Backward, item, noise_item, switches);
    Ok(RelationOutput {
        forward_distance: forward_distance(params, user, item, &fw.relation),
        backward_distance: backward_distance(params, user, item, &bw.relation),
        forward_relation: fw.relation,
        backward_relation: bw.relation,
        attention_weights_fw: fw.weights,
        attention_weights_bw: bw.weights,
    })
}

/// How the two branches are fused at ranking time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fusion {
    pub conventional: bool,
    pub adaptive: bool,
    pub skewed_domain: bool,
    pub reverse_order: bool,
}

impl Fusion {
    /// `(w_conv, w_adp)` for a user at the end of training, where the
    /// schedule has reached `alpha = d_u`.
    pub fn weights(&self, diversity: f64) -> (f64, f64) {
        match (self.conventional, self.adaptive) {
            (true, false) => (1.0, 0.0),
            (false, true) => (0.0, 1.0),
            _ => crate::training::branch_weights(
                diversity.clamp(0.0, 1.0),
                self.skewed_domain,
                self.reverse_order,
            ),
        }
    }
}

/// Evaluation-mode cache of one branch: `p_u + r_u` for every user and
/// `q_v + r_v` for every item, with `h' = mu`.
#[derive(Debug, Clone)]
struct BranchCache {
    user_points: Vec<f64>,
    item_points: Vec<f64>,
}

impl BranchCache {
    fn new(
        params: &BranchParameters,
        profiles: &AspectProfiles,
        corpus: &InteractionCorpus,
        switches: &ModelSwitches,
    ) -> Self {
        let d = params.dim;
        let mut user_points = params.user_embeddings.clone();
        for u in 0..params.num_users {
            let r = Relation::compute(params, profiles, corpus, Direction::Forward, u, None, switches);
            math::axpy(1.0, &r.relation, &mut user_points[u * d..(u + 1) * d]);
        }
        let mut item_points = params.item_embeddings.clone();
        for i in 0..params.num_items {
            let r = Relation::compute(params, profiles, corpus, Direction::Backward, i, None, switches);
            math::axpy(1.0, &r.relation, &mut item_points[i * d..(i + 1) * d]);
        }
        Self {
            user_points,
            item_points,
        }
    }

    fn pair_distance(&self, params: &BranchParameters, user: usize, item: usize, backward: bool) -> f64 {
        let d = params.dim;
        let fw = math::squared_distance(&self.user_points[user * d..(user + 1) * d], params.item(item));
        if backward {
            fw + math::squared_distance(&self.item_points[item * d..(item + 1) * d], params.user(user))
        } else {
            fw
        }
    }
}

/// A trained two-branch model ready for ranking.
#[derive(Debug, Clone)]
pub struct TamlModel {
    pub conventional: BranchParameters,
    pub adaptive: BranchParameters,
    pub switches: ModelSwitches,
    pub fusion: Fusion,
    diversity_of_user: Vec<f64>,
    caches: [BranchCache; 2],
}

impl TamlModel {
    pub fn new(
        conventional: BranchParameters,
        adaptive: BranchParameters,
        profiles: &AspectProfiles,
        corpus: &InteractionCorpus,
        profile: &DiversityProfile,
        switches: ModelSwitches,
        fusion: Fusion,
    ) -> Self {
        let caches = [
            BranchCache::new(&conventional, profiles, corpus, &switches),
            BranchCache::new(&adaptive, profiles, corpus, &switches),
        ];
        Self {
            conventional,
            adaptive,
            switches,
            fusion,
            diversity_of_user: profile.diversity_of_user.clone(),
            caches,
        }
    }

    /// `-[w1 (d1(u,v) + d1(v,u)) + w2 (d2(u,v) + d2(v,u))] / 2`; higher is better.
    pub fn score(&self, user: usize, item: usize) -> f64 {
        let (w1, w2) = self.fusion.weights(self.diversity_of_user[user]);
        let bw = self.switches.backward_direction;
        let mut total = 0.0;
        if w1 != 0.0 {
            total += w1 * self.caches[0].pair_distance(&self.conventional, user, item, bw);
        }
        if w2 != 0.0 {
            total += w2 * self.caches[1].pair_distance(&self.adaptive, user, item, bw);
        }
        -total / 2.0
    }

    pub fn score_all(&self, user: usize, out: &mut [f64]) {
        for (item, o) in out.iter_mut().enumerate() {
            *o = self.score(user, item);
        }
    }
}

impl Ranker for TamlModel {
    fn score_items(&self, user: usize, out: &mut [f64]) {
        self.score_all(user, out);
    }
}

/// Fused evaluation-mode score computed from scratch, without caches.
#[allow(clippy::too_many_arguments)]
pub fn score_for_ranking(
    branches: [&BranchParameters; 2],
    profiles: &AspectProfiles,
    corpus: &InteractionCorpus,
    profile: &DiversityProfile,
    switches: &ModelSwitches,
    fusion: &Fusion,
    user: usize,
    item: usize,
) -> f64 {
    let (w1, w2) = fusion.weights(profile.diversity(user));
    let mut total = 0.0;
    for (w, params) in [(w1, branches[0]), (w2, branches[1])] {
        if w == 0.0 {
            continue;
        }
        let fw = Relation::compute(params, profiles, corpus, Direction::Forward, user, None, switches);
        let mut d = forward_distance(params, user, item, &fw.relation);
        if switches.backward_direction {
            let bw = Relation::compute(params, profiles, corpus, Direction::Backward, item, None, switches);
            d += backward_distance(params, user, item, &bw.relation);
        }
        total += w * d;
    }
    -total / 2.0
}
