//! Exact reverse-mode gradients of the training objective
//!
//! ```text
//! L = mean_t w_conv(u_t) L_B1(t) + mean_t w_adp(u_t) L_B2(t) + mean_t L_3(t)
//! ```
//!
//! over one uniform batch (branch 1 hinge and the consistency term) and one
//! reversed batch (branch 2 hinge), plus a central finite-difference
//! checker.
//!
//! Within one step every `(direction, entity)` pair of a branch gets one
//! noise vector, so the relation of an entity is computed once per step and
//! its gradient is back-propagated once.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::corpus::{DiversityProfile, InteractionCorpus, Record};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{
    backward_distance, build_aspect_profiles, forward_distance, AspectProfiles, AspectReduction,
    BranchParameters, Direction, ModelSwitches, Relation,
};
use crate::rng::{self, Stream};
use crate::sampling::{uniform_sample, BranchTag, ReversedSampler, TrainingBatch};

/// Gradient of one embedding table: a dense buffer plus the rows written.
#[derive(Debug, Clone, PartialEq)]
pub struct RowGrad {
    dim: usize,
    values: Vec<f64>,
    touched: Vec<usize>,
    marked: Vec<bool>,
}

impl RowGrad {
    pub fn new(rows: usize, dim: usize) -> Self {
        Self {
            dim,
            values: vec![0.0; rows * dim],
            touched: Vec::new(),
            marked: vec![false; rows],
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.dim..(r + 1) * self.dim]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        if !self.marked[r] {
            self.marked[r] = true;
            self.touched.push(r);
        }
        &mut self.values[r * self.dim..(r + 1) * self.dim]
    }

    /// Rows written since the last clear, in first-write order.
    pub fn touched(&self) -> &[usize] {
        &self.touched
    }

    pub fn dense(&self) -> &[f64] {
        &self.values
    }

    pub fn clear(&mut self) {
        for &r in &self.touched {
            self.values[r * self.dim..(r + 1) * self.dim].fill(0.0);
            self.marked[r] = false;
        }
        self.touched.clear();
    }
}

/// Gradients for every tensor of one branch, shaped like [`BranchParameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub user_embeddings: RowGrad,
    pub item_embeddings: RowGrad,
    pub attention: Vec<f64>,
    pub aspect_mean: Vec<f64>,
    pub aspect_std: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &BranchParameters) -> Self {
        Self {
            user_embeddings: RowGrad::new(params.num_users, params.dim),
            item_embeddings: RowGrad::new(params.num_items, params.dim),
            attention: vec![0.0; params.attention.len()],
            aspect_mean: vec![0.0; params.aspect_mean.len()],
            aspect_std: vec![0.0; params.aspect_std.len()],
        }
    }

    pub fn clear(&mut self) {
        self.user_embeddings.clear();
        self.item_embeddings.clear();
        self.attention.fill(0.0);
        self.aspect_mean.fill(0.0);
        self.aspect_std.fill(0.0);
    }

    /// All entries in [`BranchParameters::tensors`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.user_embeddings.dense());
        out.extend_from_slice(self.item_embeddings.dense());
        out.extend_from_slice(&self.attention);
        out.extend_from_slice(&self.aspect_mean);
        out.extend_from_slice(&self.aspect_std);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Frozen reparameterization noise for one branch and one step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BranchNoise {
    table: BTreeMap<(Direction, usize), Vec<f64>>,
}

impl BranchNoise {
    pub fn get(&self, direction: Direction, entity: usize) -> Option<&[f64]> {
        self.table.get(&(direction, entity)).map(Vec::as_slice)
    }

    pub fn insert(&mut self, direction: Direction, entity: usize, eps: Vec<f64>) {
        self.table.insert((direction, entity), eps);
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    fn draw_for<R: Rng + ?Sized>(&mut self, direction: Direction, entity: usize, dim: usize, rng: &mut R) {
        self.table
            .entry((direction, entity))
            .or_insert_with(|| (0..dim).map(|_| StandardNormal.sample(rng)).collect());
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StepNoise {
    pub conventional: BranchNoise,
    pub adaptive: BranchNoise,
}

impl StepNoise {
    /// Draws `eps ~ N(0, I)` for every entity the step will touch, walking
    /// the batches in a fixed order. Nothing is drawn when the diversity
    /// relation is switched off.
    pub fn draw<R: Rng + ?Sized>(
        objective: &Objective,
        dim: usize,
        uniform: &TrainingBatch,
        reversed: &TrainingBatch,
        rng: &mut R,
    ) -> Self {
        let mut noise = Self::default();
        if !objective.switches.diversity_relation {
            return noise;
        }
        let backward = objective.switches.backward_direction;
        let walk = |table: &mut BranchNoise, batch: &TrainingBatch, negatives: bool, rng: &mut R| {
            for t in &batch.triples {
                table.draw_for(Direction::Forward, t.user, dim, rng);
                if backward {
                    table.draw_for(Direction::Backward, t.positive, dim, rng);
                    if negatives {
                        for &n in &t.negatives {
                            table.draw_for(Direction::Backward, n, dim, rng);
                        }
                    }
                }
            }
        };
        if objective.conventional {
            walk(&mut noise.conventional, uniform, true, rng);
        }
        if objective.adaptive {
            if objective.uses_consistency() {
                walk(&mut noise.adaptive, uniform, false, rng);
            }
            walk(&mut noise.adaptive, reversed, true, rng);
        }
        noise
    }
}

/// Which terms the objective contains.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Objective {
    pub margin: f64,
    pub switches: ModelSwitches,
    pub conventional: bool,
    pub adaptive: bool,
    pub consistency: bool,
    /// Treat the conventional branch as a constant inside the consistency
    /// term.
    pub consistency_stop_gradient: bool,
}

impl Objective {
    pub fn full(margin: f64) -> Self {
        Self {
            margin,
            switches: ModelSwitches::default(),
            conventional: true,
            adaptive: true,
            consistency: true,
            consistency_stop_gradient: false,
        }
    }

    pub fn uses_consistency(&self) -> bool {
        self.consistency && self.conventional && self.adaptive
    }
}

/// Branch weights, either shared by the whole batch or looked up per user.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Weighting<'a> {
    Uniform(f64, f64),
    PerUser {
        conventional: &'a [f64],
        adaptive: &'a [f64],
    },
}

impl Weighting<'_> {
    fn conventional(&self, user: usize) -> f64 {
        match self {
            Weighting::Uniform(w, _) => *w,
            Weighting::PerUser { conventional, .. } => conventional[user],
        }
    }

    fn adaptive(&self, user: usize) -> f64 {
        match self {
            Weighting::Uniform(_, w) => *w,
            Weighting::PerUser { adaptive, .. } => adaptive[user],
        }
    }
}

/// Objective value and its unweighted parts (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub total: f64,
    pub conventional: f64,
    pub adaptive: f64,
    pub consistency: f64,
}

/// Read-only inputs shared by every gradient evaluation.
#[derive(Debug, Clone, Copy)]
pub struct LossInputs<'a> {
    pub corpus: &'a InteractionCorpus,
    pub profiles: &'a AspectProfiles,
    pub uniform: &'a TrainingBatch,
    pub reversed: &'a TrainingBatch,
    pub weighting: Weighting<'a>,
    pub objective: &'a Objective,
    pub noise: &'a StepNoise,
}

/// Relations of one branch computed during one step, with their
/// accumulated upstream gradients.
struct BranchPass<'c> {
    relations: Vec<Relation<'c>>,
    upstream: Vec<Vec<f64>>,
    index: BTreeMap<(Direction, usize), usize>,
}

impl<'c> BranchPass<'c> {
    fn new() -> Self {
        Self {
            relations: Vec::new(),
            upstream: Vec::new(),
            index: BTreeMap::new(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn relation(
        &mut self,
        params: &BranchParameters,
        profiles: &AspectProfiles,
        corpus: &'c InteractionCorpus,
        noise: &BranchNoise,
        switches: &ModelSwitches,
        direction: Direction,
        entity: usize,
    ) -> usize {
        if let Some(&i) = self.index.get(&(direction, entity)) {
            return i;
        }
        let eps = if switches.diversity_relation {
            noise.get(direction, entity)
        } else {
            None
        };
        let rel = Relation::compute(params, profiles, corpus, direction, entity, eps, switches);
        let i = self.relations.len();
        self.relations.push(rel);
        self.upstream.push(vec![0.0; params.dim]);
        self.index.insert((direction, entity), i);
        i
    }

    fn backpropagate(
        &self,
        params: &BranchParameters,
        profiles: &AspectProfiles,
        switches: &ModelSwitches,
        grads: &mut GradientSet,
    ) {
        let d = params.dim;
        let k = params.aspects;
        let mut weighted = vec![0.0; d];
        let mut s = vec![0.0; d];
        let mut ws = vec![0.0; d];
        for (rel, g) in self.relations.iter().zip(&self.upstream) {
            if g.iter().all(|&v| v == 0.0) {
                continue;
            }
            if switches.diversity_relation {
                let w = profiles.row(rel.direction, rel.entity);
                for (kk, &wk) in w.iter().enumerate().take(k) {
                    math::axpy(wk, g, &mut grads.aspect_mean[kk * d..(kk + 1) * d]);
                }
                if let Some(eps) = &rel.noise {
                    for ((o, (gi, e)), sv) in weighted.iter_mut().zip(g.iter().zip(eps)).zip(&rel.raw_std) {
                        *o = gi * e * sign(*sv);
                    }
                    for (kk, &wk) in w.iter().enumerate().take(k) {
                        math::axpy(wk, &weighted, &mut grads.aspect_std[kk * d..(kk + 1) * d]);
                    }
                }
            }
            if rel.history.is_empty() {
                continue;
            }
            let (own_table, key_table, own_grad, key_grad) = match rel.direction {
                Direction::Forward => (
                    &params.user_embeddings,
                    &params.item_embeddings,
                    &mut grads.user_embeddings,
                    &mut grads.item_embeddings,
                ),
                Direction::Backward => (
                    &params.item_embeddings,
                    &params.user_embeddings,
                    &mut grads.item_embeddings,
                    &mut grads.user_embeddings,
                ),
            };
            let key = |j: usize| &key_table[j * d..(j + 1) * d];
            let dots: Vec<f64> = rel.history.iter().map(|&j| math::dot(g, key(j))).collect();
            let mean: f64 = dots.iter().zip(&rel.weights).map(|(c, a)| c * a).sum();
            s.fill(0.0);
            for ((&j, &a), &c) in rel.history.iter().zip(&rel.weights).zip(&dots) {
                let dz = a * (c - mean);
                math::axpy(dz, key(j), &mut s);
                let row = key_grad.row_mut(j);
                math::axpy(a, g, row);
                math::axpy(dz, &rel.query, row);
            }
            let own = &own_table[rel.entity * d..(rel.entity + 1) * d];
            math::mat_vec(&params.attention, d, d, &s, &mut ws);
            math::axpy(1.0, &ws, own_grad.row_mut(rel.entity));
            for (a, &x) in own.iter().enumerate() {
                math::axpy(x, &s, &mut grads.attention[a * d..(a + 1) * d]);
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Adds `coef * grad d(u, x)` for `d(u, x) = ||p_u + r_u - q_x||^2`.
fn forward_distance_grad(
    params: &BranchParameters,
    grads: &mut GradientSet,
    upstream_r: &mut [f64],
    user: usize,
    item: usize,
    r: &[f64],
    coef: f64,
) {
    let p = params.user(user);
    let q = params.item(item);
    let e: Vec<f64> = (0..params.dim).map(|i| 2.0 * coef * (p[i] + r[i] - q[i])).collect();
    math::axpy(1.0, &e, grads.user_embeddings.row_mut(user));
    math::axpy(1.0, &e, upstream_r);
    math::axpy(-1.0, &e, grads.item_embeddings.row_mut(item));
}

/// Adds `coef * grad d(x, u)` for `d(x, u) = ||q_x + r_x - p_u||^2`.
fn backward_distance_grad(
    params: &BranchParameters,
    grads: &mut GradientSet,
    upstream_r: &mut [f64],
    user: usize,
    item: usize,
    r: &[f64],
    coef: f64,
) {
    let p = params.user(user);
    let q = params.item(item);
    let e: Vec<f64> = (0..params.dim).map(|i| 2.0 * coef * (q[i] + r[i] - p[i])).collect();
    math::axpy(1.0, &e, grads.item_embeddings.row_mut(item));
    math::axpy(1.0, &e, upstream_r);
    math::axpy(-1.0, &e, grads.user_embeddings.row_mut(user));
}

/// Hinge loss of one branch over a batch. Returns the batch mean of the
/// unweighted per-triple losses and adds weighted gradients.
#[allow(clippy::too_many_arguments)]
fn hinge_pass<'c>(
    pass: &mut BranchPass<'c>,
    params: &BranchParameters,
    inputs: &LossInputs<'c>,
    noise: &BranchNoise,
    batch: &TrainingBatch,
    weight_of: &dyn Fn(usize) -> f64,
    batch_name: &'static str,
    grads: &mut GradientSet,
) -> Result<(f64, f64)> {
    let switches = &inputs.objective.switches;
    let margin = inputs.objective.margin;
    let b = batch.len() as f64;
    let mut unweighted = 0.0;
    let mut weighted = 0.0;
    for (t, triple) in batch.triples.iter().enumerate() {
        let (u, v) = (triple.user, triple.positive);
        let p = triple.negatives.len() as f64;
        let w = weight_of(u);
        let coef = w / (b * p);
        let iu = pass.relation(params, inputs.profiles, inputs.corpus, noise, switches, Direction::Forward, u);
        let r_u = pass.relations[iu].relation.clone();
        let d_uv = forward_distance(params, u, v, &r_u);
        let bw = if switches.backward_direction {
            let iv = pass.relation(params, inputs.profiles, inputs.corpus, noise, switches, Direction::Backward, v);
            let r_v = pass.relations[iv].relation.clone();
            let d_vu = backward_distance(params, u, v, &r_v);
            Some((iv, r_v, d_vu))
        } else {
            None
        };

        let mut loss = 0.0;
        for &n in &triple.negatives {
            let d_un = forward_distance(params, u, n, &r_u);
            let arg = d_uv - d_un + margin;
            if arg > 0.0 {
                loss += arg;
                if coef != 0.0 {
                    forward_distance_grad(params, grads, &mut pass.upstream[iu], u, v, &r_u, coef);
                    forward_distance_grad(params, grads, &mut pass.upstream[iu], u, n, &r_u, -coef);
                }
            }
            if let Some((iv, r_v, d_vu)) = &bw {
                let i_n = pass.relation(params, inputs.profiles, inputs.corpus, noise, switches, Direction::Backward, n);
                let r_n = pass.relations[i_n].relation.clone();
                let d_nu = backward_distance(params, u, n, &r_n);
                let arg = d_vu - d_nu + margin;
                if arg > 0.0 {
                    loss += arg;
                    if coef != 0.0 {
                        backward_distance_grad(params, grads, &mut pass.upstream[*iv], u, v, r_v, coef);
                        backward_distance_grad(params, grads, &mut pass.upstream[i_n], u, n, &r_n, -coef);
                    }
                }
            }
        }
        loss /= p;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                batch: batch_name,
                index: t,
                user: u,
                item: v,
            });
        }
        unweighted += loss;
        weighted += w * loss;
    }
    Ok((unweighted / b, weighted / b))
}

/// `KL(softmax(a) || softmax(b))` with its gradients in `a` and `b`.
pub fn softmax_kl(a: &[f64], b: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let n = a.len();
    let mut log_p = vec![0.0; n];
    let mut log_q = vec![0.0; n];
    math::log_softmax(a, &mut log_p);
    math::log_softmax(b, &mut log_q);
    let p: Vec<f64> = log_p.iter().map(|&l| libm::exp(l)).collect();
    let q: Vec<f64> = log_q.iter().map(|&l| libm::exp(l)).collect();
    let ratio: Vec<f64> = log_p.iter().zip(&log_q).map(|(x, y)| x - y).collect();
    let kl: f64 = p.iter().zip(&ratio).map(|(pi, li)| pi * li).sum();
    let grad_a = p.iter().zip(&ratio).map(|(pi, li)| pi * (li - kl)).collect();
    let grad_b = q.iter().zip(&p).map(|(qi, pi)| qi - pi).collect();
    (kl, grad_a, grad_b)
}

/// Objective value and gradients for both branches, written into `out`
/// (conventional first). `out` is cleared first.
pub fn loss_and_gradients_into(
    branches: [&BranchParameters; 2],
    inputs: &LossInputs<'_>,
    out: &mut [GradientSet; 2],
) -> Result<LossBreakdown> {
    let objective = inputs.objective;
    if !(objective.margin > 0.0) {
        return Err(Error::InvalidArgument("margin must be positive".into()));
    }
    let [conv, adp] = branches;
    let [g_conv, g_adp] = out;
    g_conv.clear();
    g_adp.clear();
    let mut breakdown = LossBreakdown::default();
    let mut pass_conv = BranchPass::new();
    let mut pass_adp = BranchPass::new();

    if objective.conventional && !inputs.uniform.is_empty() {
        let w = |u: usize| inputs.weighting.conventional(u);
        let (mean, weighted) = hinge_pass(
            &mut pass_conv,
            conv,
            inputs,
            &inputs.noise.conventional,
            inputs.uniform,
            &w,
            "uniform",
            g_conv,
        )?;
        breakdown.conventional = mean;
        breakdown.total += weighted;
    }
    if objective.adaptive && !inputs.reversed.is_empty() {
        let w = |u: usize| inputs.weighting.adaptive(u);
        let (mean, weighted) = hinge_pass(
            &mut pass_adp,
            adp,
            inputs,
            &inputs.noise.adaptive,
            inputs.reversed,
            &w,
            "reversed",
            g_adp,
        )?;
        breakdown.adaptive = mean;
        breakdown.total += weighted;
    }
    if objective.uses_consistency() && !inputs.uniform.is_empty() {
        let switches = &objective.switches;
        let b = inputs.uniform.len() as f64;
        let mut total = 0.0;
        for (t, triple) in inputs.uniform.triples.iter().enumerate() {
            let mut keys = vec![(Direction::Forward, triple.user)];
            if switches.backward_direction {
                keys.push((Direction::Backward, triple.positive));
            }
            let mut loss = 0.0;
            for (direction, entity) in keys {
                let i1 = pass_conv.relation(
                    conv,
                    inputs.profiles,
                    inputs.corpus,
                    &inputs.noise.conventional,
                    switches,
                    direction,
                    entity,
                );
                let i2 = pass_adp.relation(
                    adp,
                    inputs.profiles,
                    inputs.corpus,
                    &inputs.noise.adaptive,
                    switches,
                    direction,
                    entity,
                );
                let (kl, ga, gb) =
                    softmax_kl(&pass_conv.relations[i1].relation, &pass_adp.relations[i2].relation);
                loss += kl;
                if !objective.consistency_stop_gradient {
                    math::axpy(1.0 / b, &ga, &mut pass_conv.upstream[i1]);
                }
                math::axpy(1.0 / b, &gb, &mut pass_adp.upstream[i2]);
            }
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    batch: "consistency",
                    index: t,
                    user: triple.user,
                    item: triple.positive,
                });
            }
            total += loss;
        }
        breakdown.consistency = total / b;
        breakdown.total += total / b;
    }

    pass_conv.backpropagate(conv, inputs.profiles, &objective.switches, g_conv);
    pass_adp.backpropagate(adp, inputs.profiles, &objective.switches, g_adp);
    Ok(breakdown)
}

pub fn loss_and_gradients(
    branches: [&BranchParameters; 2],
    inputs: &LossInputs<'_>,
) -> Result<(LossBreakdown, [GradientSet; 2])> {
    let mut out = [
        GradientSet::zeros_like(branches[0]),
        GradientSet::zeros_like(branches[1]),
    ];
    let loss = loss_and_gradients_into(branches, inputs, &mut out)?;
    Ok((loss, out))
}

/// A small, fully frozen instance for dense gradient probing.
#[derive(Debug, Clone)]
pub struct GradCheckInstance {
    pub corpus: InteractionCorpus,
    pub profiles: AspectProfiles,
    pub branches: [BranchParameters; 2],
    pub uniform: TrainingBatch,
    pub reversed: TrainingBatch,
    pub weights_conventional: Vec<f64>,
    pub weights_adaptive: Vec<f64>,
    pub objective: Objective,
    pub noise: StepNoise,
}

impl GradCheckInstance {
    /// `M = N = 6`, `D = 4`, `K = 2`, `P = 2`, three triples per batch.
    pub fn random(seed: u64) -> Result<Self> {
        Self::build(seed, 6, 6, 4, 2, 2, 3)
    }

    /// One triple per batch.
    pub fn single_triple(seed: u64, dim: usize) -> Result<Self> {
        Self::build(seed, 6, 6, dim, 2, 2, 1)
    }

    fn build(
        seed: u64,
        users: usize,
        items: usize,
        dim: usize,
        aspects: usize,
        negatives: usize,
        batch: usize,
    ) -> Result<Self> {
        let mut rng = rng::stream(seed, Stream::Synthetic);
        let categories = 3;
        let category_of_item: Vec<usize> = (0..items).map(|i| i % categories).collect();
        let mut records = Vec::new();
        for u in 0..users {
            let count = rng.random_range(2..=items - negatives);
            let mut pool: Vec<usize> = (0..items).collect();
            for i in 0..count {
                let j = rng.random_range(i..items);
                pool.swap(i, j);
                records.push(Record {
                    user: u,
                    item: pool[i],
                    test: false,
                });
            }
        }
        let names = |p: &str, n: usize| (0..n).map(|i| alloc::format!("{p}{i}")).collect();
        let corpus = InteractionCorpus::from_records(
            names("u", users),
            names("i", items),
            names("c", categories),
            category_of_item,
            records,
        )?;
        let profiles = build_aspect_profiles(&corpus, aspects, AspectReduction::Svd)?;
        let diversity: Vec<f64> = (0..users)
            .map(|u| corpus.user_diversity(u))
            .collect::<Result<_>>()?;
        let profile = DiversityProfile {
            diversity_of_user: diversity.clone(),
            skewness: 0.0,
            skewed_domain: false,
        };
        let uniform = uniform_sample(&corpus, batch, negatives, &mut rng)?;
        let reversed = ReversedSampler::new(&corpus, &profile)?.sample(&corpus, batch, negatives, &mut rng)?;
        let branches = [
            BranchParameters::random(BranchTag::Conventional, users, items, dim, aspects, 0.4, &mut rng),
            BranchParameters::random(BranchTag::Adaptive, users, items, dim, aspects, 0.4, &mut rng),
        ];
        let alpha: Vec<f64> = diversity.iter().map(|d| (d * 0.7).clamp(0.0, 1.0)).collect();
        let objective = Objective::full(1.0);
        let noise = StepNoise::draw(&objective, dim, &uniform, &reversed, &mut rng);
        Ok(Self {
            corpus,
            profiles,
            branches,
            uniform,
            reversed,
            weights_conventional: alpha.clone(),
            weights_adaptive: alpha.iter().map(|a| 1.0 - a).collect(),
            objective,
            noise,
        })
    }

    fn inputs(&self) -> LossInputs<'_> {
        LossInputs {
            corpus: &self.corpus,
            profiles: &self.profiles,
            uniform: &self.uniform,
            reversed: &self.reversed,
            weighting: Weighting::PerUser {
                conventional: &self.weights_conventional,
                adaptive: &self.weights_adaptive,
            },
            objective: &self.objective,
            noise: &self.noise,
        }
    }

    pub fn num_parameters(&self) -> usize {
        self.branches.iter().map(BranchParameters::num_parameters).sum()
    }

    pub fn loss_at(&self, branches: &[BranchParameters; 2]) -> Result<f64> {
        let (loss, _) = loss_and_gradients([&branches[0], &branches[1]], &self.inputs())?;
        Ok(loss.total)
    }

    /// Analytic gradient of both branches, flattened (conventional first).
    pub fn analytic_gradient(&self) -> Result<Vec<f64>> {
        let (_, grads) = loss_and_gradients([&self.branches[0], &self.branches[1]], &self.inputs())?;
        let mut flat = grads[0].flatten();
        flat.extend(grads[1].flatten());
        Ok(flat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub parameters: usize,
    pub max_relative_error: f64,
    /// flat index of the worst coordinate
    pub worst_index: usize,
    pub tolerance: f64,
    pub passed: bool,
}

/// Denominator floor of the relative error, so that coordinates whose true
/// gradient is zero compare on absolute error.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    libm::fabs(analytic - numeric)
        / libm::fabs(analytic).max(libm::fabs(numeric)).max(RELATIVE_ERROR_FLOOR)
}

/// Compares the analytic gradient with central differences of step `step`.
pub fn finite_difference_check(
    instance: &GradCheckInstance,
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    finite_difference_check_with(instance, step, tolerance, GradCheckInstance::analytic_gradient)
}

/// Like [`finite_difference_check`], with the analytic gradient supplied by
/// the caller.
pub fn finite_difference_check_with<F>(
    instance: &GradCheckInstance,
    step: f64,
    tolerance: f64,
    analytic: F,
) -> Result<GradCheckReport>
where
    F: Fn(&GradCheckInstance) -> Result<Vec<f64>>,
{
    if !(step.is_finite() && step != 0.0) {
        return Err(Error::DegenerateProbe("perturbation step must be finite and nonzero"));
    }
    let parameters = instance.num_parameters();
    if parameters > 1000 {
        return Err(Error::InvalidArgument("instance too large for dense probing".into()));
    }
    let grad = analytic(instance)?;
    let mut probe = instance.branches.clone();
    let mut worst = (0.0, 0usize);
    let mut flat = 0;
    for b in 0..2 {
        for t in 0..5 {
            let len = probe[b].tensors()[t].len();
            for i in 0..len {
                let original = probe[b].tensors()[t][i];
                probe[b].tensors_mut()[t][i] = original + step;
                let plus = instance.loss_at(&probe)?;
                probe[b].tensors_mut()[t][i] = original - step;
                let minus = instance.loss_at(&probe)?;
                probe[b].tensors_mut()[t][i] = original;
                let numeric = (plus - minus) / (2.0 * step);
                let err = relative_error(grad[flat], numeric);
                if err > worst.0 || err.is_nan() {
                    worst = (err, flat);
                }
                flat += 1;
            }
        }
    }
    Ok(GradCheckReport {
        parameters,
        max_relative_error: worst.0,
        worst_index: worst.1,
        tolerance,
        passed: worst.0 < tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kl_hand_value() {
        let (kl, _, _) = softmax_kl(&[1.0, 0.0], &[0.0, 1.0]);
        // p = (e/(1+e), 1/(1+e)), q reversed: KL = (p0 - p1) * ln(p0/p1) = tanh(1/2)
        assert_relative_eq!(kl, libm::tanh(0.5), epsilon = 1e-14);
        assert_relative_eq!(kl, 0.4621, epsilon = 1e-4);
        let (same, ga, gb) = softmax_kl(&[0.3, -0.2, 0.9], &[0.3, -0.2, 0.9]);
        assert_eq!(same, 0.0);
        assert!(ga.iter().chain(&gb).all(|&g| g.abs() < 1e-15));
    }

    #[test]
    fn kl_gradient_matches_differences() {
        let a = [0.2, -0.7, 1.1];
        let b = [-0.4, 0.5, 0.3];
        let (_, ga, gb) = softmax_kl(&a, &b);
        let h = 1e-6;
        for i in 0..3 {
            let mut ap = a;
            let mut am = a;
            ap[i] += h;
            am[i] -= h;
            let num = (softmax_kl(&ap, &b).0 - softmax_kl(&am, &b).0) / (2.0 * h);
            assert_relative_eq!(ga[i], num, epsilon = 1e-8);
            let mut bp = b;
            let mut bm = b;
            bp[i] += h;
            bm[i] -= h;
            let num = (softmax_kl(&a, &bp).0 - softmax_kl(&a, &bm).0) / (2.0 * h);
            assert_relative_eq!(gb[i], num, epsilon = 1e-8);
        }
    }

    #[test]
    fn random_instances_pass_the_difference_check() {
        for seed in 0..3 {
            let inst = GradCheckInstance::random(seed).unwrap();
            let report = finite_difference_check(&inst, 1e-5, 1e-4).unwrap();
            assert!(report.passed, "seed {seed}: {report:?}");
            assert_eq!(report.parameters, 160);
        }
    }

    #[test]
    fn single_triple_in_three_dimensions() {
        let inst = GradCheckInstance::single_triple(11, 3).unwrap();
        assert_eq!(inst.uniform.len(), 1);
        let report = finite_difference_check(&inst, 1e-5, 1e-4).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn flipped_attention_gradient_is_caught() {
        let inst = GradCheckInstance::random(4).unwrap();
        let p = &inst.branches[0];
        let start = p.user_embeddings.len() + p.item_embeddings.len();
        let len = p.attention.len();
        let report = finite_difference_check_with(&inst, 1e-5, 1e-4, |i| {
            let mut g = i.analytic_gradient()?;
            g[start..start + len].iter_mut().for_each(|v| *v = -*v);
            Ok(g)
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.worst_index >= start && report.worst_index < start + len);
    }

    #[test]
    fn zero_step_is_degenerate() {
        let inst = GradCheckInstance::random(0).unwrap();
        assert!(matches!(
            finite_difference_check(&inst, 0.0, 1e-4),
            Err(Error::DegenerateProbe(_))
        ));
    }

    #[test]
    fn satisfied_margins_give_zero_gradients() {
        let mut inst = GradCheckInstance::random(2).unwrap();
        let user = 0;
        let positive = inst.corpus.items_of_user(user)[0];
        let negatives: Vec<usize> = (0..inst.corpus.num_items())
            .filter(|&i| !inst.corpus.is_train_pair(user, i))
            .take(2)
            .collect();
        let triple = crate::sampling::Triple { user, positive, negatives: negatives.clone() };
        inst.uniform.triples = vec![triple.clone()];
        inst.reversed.triples = vec![triple];
        let dim = inst.branches[0].dim;
        for b in &mut inst.branches {
            for t in b.tensors_mut() {
                t.fill(0.0);
            }
            // negatives far away, everything else at the origin
            for &n in &negatives {
                b.item_embeddings[n * dim] = 5.0;
            }
        }
        assert_eq!(inst.loss_at(&inst.branches).unwrap(), 0.0);
        assert!(inst.analytic_gradient().unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn doubling_weights_doubles_branch_losses() {
        let mut inst = GradCheckInstance::random(6).unwrap();
        inst.objective.consistency = false;
        let g1 = inst.analytic_gradient().unwrap();
        let l1 = inst.loss_at(&inst.branches).unwrap();
        inst.weights_conventional.iter_mut().for_each(|w| *w *= 2.0);
        inst.weights_adaptive.iter_mut().for_each(|w| *w *= 2.0);
        let g2 = inst.analytic_gradient().unwrap();
        let l2 = inst.loss_at(&inst.branches).unwrap();
        assert_relative_eq!(l2, 2.0 * l1, max_relative = 1e-14);
        for (a, b) in g1.iter().zip(&g2) {
            assert_relative_eq!(*b, 2.0 * a, epsilon = 1e-14, max_relative = 1e-12);
        }
    }

    #[test]
    fn untouched_rows_stay_zero() {
        let inst = GradCheckInstance::random(8).unwrap();
        let (_, grads) = loss_and_gradients([&inst.branches[0], &inst.branches[1]], &inst.inputs()).unwrap();
        for g in &grads {
            for u in 0..inst.corpus.num_users() {
                if !g.user_embeddings.touched().contains(&u) {
                    assert!(g.user_embeddings.row(u).iter().all(|&v| v == 0.0));
                }
            }
            assert!(g.is_finite());
        }
    }

    #[test]
    fn noise_reaches_the_std_matrix() {
        let inst = GradCheckInstance::random(9).unwrap();
        let (_, grads) = loss_and_gradients([&inst.branches[0], &inst.branches[1]], &inst.inputs()).unwrap();
        assert!(grads[0].aspect_std.iter().any(|&v| v != 0.0));
        let mut silent = inst.clone();
        silent.noise = StepNoise::default();
        let (_, grads) =
            loss_and_gradients([&silent.branches[0], &silent.branches[1]], &silent.inputs()).unwrap();
        assert!(grads[0].aspect_std.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn batch_gradient_is_sum_of_triple_gradients() {
        let mut inst = GradCheckInstance::random(12).unwrap();
        inst.objective.adaptive = false;
        let whole = inst.analytic_gradient().unwrap();
        let whole_loss = inst.loss_at(&inst.branches).unwrap();
        let b = inst.uniform.len() as f64;
        let mut summed = vec![0.0; whole.len()];
        let mut loss_sum = 0.0;
        for t in inst.uniform.triples.clone() {
            let mut one = inst.clone();
            one.uniform.triples = vec![t];
            let g = one.analytic_gradient().unwrap();
            math::axpy(1.0 / b, &g, &mut summed);
            loss_sum += one.loss_at(&one.branches).unwrap() / b;
        }
        assert_relative_eq!(whole_loss, loss_sum, epsilon = 1e-12);
        for (a, s) in whole.iter().zip(&summed) {
            assert_relative_eq!(a, s, epsilon = 1e-12);
        }
    }
}
