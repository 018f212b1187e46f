//! The bilateral training loop.
//!
//! Each step draws a uniform batch for the conventional branch and a
//! reversed batch for the adaptive branch, weights every triple's branch
//! losses by its user's schedule, adds the consistency term and applies one
//! Adam step per branch.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand_chacha::ChaCha8Rng;

use crate::corpus::{DiversityProfile, InteractionCorpus};
use crate::error::{Error, Result};
use crate::gradients::{
    loss_and_gradients_into, softmax_kl, GradientSet, LossBreakdown, LossInputs, Objective, StepNoise,
    Weighting,
};
use crate::model::{
    build_aspect_profiles, AspectProfiles, AspectReduction, BranchParameters, Fusion, ModelSwitches,
    TamlModel, DEFAULT_HISTORY_LIMIT,
};
use crate::optim::{AdamConfig, OptimizerState};
use crate::rng::{self, Stream};
use crate::sampling::{uniform_sample, BranchTag, ReversedSampler, TrainingBatch};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub margin: f64,
    pub embedding_dim: usize,
    pub num_aspects: usize,
    pub negatives: usize,
    pub seed: u64,
    pub skew_threshold: f64,
    pub init_std: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_epsilon: f64,
    pub clip_embeddings: bool,
    pub history_limit: usize,
    pub aspect_reduction: AspectReduction,
    pub consistency_stop_gradient: bool,
    pub disable_adaptive_branch: bool,
    pub disable_conventional_branch: bool,
    pub reverse_order: bool,
    pub drop_attention: bool,
    pub drop_diversity_relation: bool,
    pub drop_backward_direction: bool,
    pub drop_consistency_loss: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            max_epochs: 20,
            learning_rate: 5e-4,
            margin: 1.0,
            embedding_dim: 50,
            num_aspects: 20,
            negatives: 20,
            seed: 0,
            skew_threshold: DiversityProfile::DEFAULT_SKEW_THRESHOLD,
            init_std: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_epsilon: 1e-8,
            clip_embeddings: true,
            history_limit: DEFAULT_HISTORY_LIMIT,
            aspect_reduction: AspectReduction::Svd,
            consistency_stop_gradient: false,
            disable_adaptive_branch: false,
            disable_conventional_branch: false,
            reverse_order: false,
            drop_attention: false,
            drop_diversity_relation: false,
            drop_backward_direction: false,
            drop_consistency_loss: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("embedding_dim", self.embedding_dim),
            ("num_aspects", self.num_aspects),
            ("negatives", self.negatives),
            ("history_limit", self.history_limit),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
            }
        }
        let positive = [
            ("learning_rate", self.learning_rate),
            ("margin", self.margin),
            ("adam_epsilon", self.adam_epsilon),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.skew_threshold >= 0.0) {
            return Err(Error::InvalidConfig("skew_threshold must be nonnegative".into()));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::InvalidConfig("init_std must be nonnegative".into()));
        }
        for (name, beta) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&beta) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1)")));
            }
        }
        if self.disable_adaptive_branch && self.disable_conventional_branch {
            return Err(Error::InvalidConfig("both branches are disabled".into()));
        }
        Ok(())
    }

    pub fn switches(&self) -> ModelSwitches {
        ModelSwitches {
            attention: !self.drop_attention,
            diversity_relation: !self.drop_diversity_relation,
            backward_direction: !self.drop_backward_direction,
            history_limit: self.history_limit,
        }
    }

    pub fn objective(&self) -> Objective {
        Objective {
            margin: self.margin,
            switches: self.switches(),
            conventional: !self.disable_conventional_branch,
            adaptive: !self.disable_adaptive_branch,
            consistency: !self.drop_consistency_loss,
            consistency_stop_gradient: self.consistency_stop_gradient,
        }
    }

    pub fn fusion(&self, skewed_domain: bool) -> Fusion {
        Fusion {
            conventional: !self.disable_conventional_branch,
            adaptive: !self.disable_adaptive_branch,
            skewed_domain,
            reverse_order: self.reverse_order,
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.adam_epsilon,
        }
    }

    /// `K` used for a corpus: the configured value, capped at `|C|`.
    pub fn effective_aspects(&self, corpus: &InteractionCorpus) -> usize {
        self.num_aspects.min(corpus.num_categories()).max(1)
    }
}

/// The seven model variants compared in the ablation table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    /// full model, branch order picked by the skew test
    Full,
    /// full model, branch order forced opposite to the skew test
    ReversedOrder,
    ConventionalOnly,
    AdaptiveOnly,
    WithoutDiversityRelation,
    WithoutAttention,
    WithoutTwoWay,
}

impl Ablation {
    pub const ALL: [Ablation; 7] = [
        Ablation::Full,
        Ablation::ReversedOrder,
        Ablation::ConventionalOnly,
        Ablation::AdaptiveOnly,
        Ablation::WithoutDiversityRelation,
        Ablation::WithoutAttention,
        Ablation::WithoutTwoWay,
    ];

    /// Variant name; the first two depend on the domain's branch order.
    pub fn label(self, skewed_domain: bool) -> &'static str {
        match self {
            Ablation::Full | Ablation::ReversedOrder => {
                let forward = skewed_domain == (self == Ablation::Full);
                if forward {
                    "conv->adp"
                } else {
                    "adp->conv"
                }
            }
            Ablation::ConventionalOnly => "conv-only",
            Ablation::AdaptiveOnly => "adp-only",
            Ablation::WithoutDiversityRelation => "w/o-dist",
            Ablation::WithoutAttention => "w/o-attn",
            Ablation::WithoutTwoWay => "w/o-twoway",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::ReversedOrder => c.reverse_order = !c.reverse_order,
            Ablation::ConventionalOnly => c.disable_adaptive_branch = true,
            Ablation::AdaptiveOnly => c.disable_conventional_branch = true,
            Ablation::WithoutDiversityRelation => c.drop_diversity_relation = true,
            Ablation::WithoutAttention => c.drop_attention = true,
            Ablation::WithoutTwoWay => c.drop_backward_direction = true,
        }
        c
    }
}

/// `d_u * T / T_max`, clamped to `[0, 1]`.
pub fn alpha(profile: &DiversityProfile, user: usize, epoch: usize, total: usize) -> f64 {
    schedule(profile.diversity(user), epoch, total)
}

fn schedule(diversity: f64, epoch: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (diversity * epoch as f64 / total as f64).clamp(0.0, 1.0)
}

/// `(w_conv, w_adp)`: `(alpha, 1 - alpha)` for a non-skewed domain and
/// `(1 - alpha, alpha)` for a skewed one; `reverse_order` swaps the pair.
pub fn branch_weights(alpha: f64, skewed_domain: bool, reverse_order: bool) -> (f64, f64) {
    let (a, b) = if skewed_domain {
        (1.0 - alpha, alpha)
    } else {
        (alpha, 1.0 - alpha)
    };
    if reverse_order {
        (b, a)
    } else {
        (a, b)
    }
}

/// Which branch dominates early training.
pub fn branch_order(skewed_domain: bool, reverse_order: bool) -> &'static str {
    if skewed_domain != reverse_order {
        "conv->adp"
    } else {
        "adp->conv"
    }
}

/// Two-way hinge for one positive and one negative.
pub fn margin_loss(distances_pos: (f64, f64), distances_neg: (f64, f64), margin: f64) -> f64 {
    (distances_pos.0 - distances_neg.0 + margin).max(0.0) + (distances_pos.1 - distances_neg.1 + margin).max(0.0)
}

/// `KL(softmax(fw1) || softmax(fw2)) + KL(softmax(bw1) || softmax(bw2))`.
pub fn consistency_loss(branch1: (&[f64], &[f64]), branch2: (&[f64], &[f64])) -> f64 {
    softmax_kl(branch1.0, branch2.0).0 + softmax_kl(branch1.1, branch2.1).0
}

/// Epoch means of the unweighted branch losses; `None` for terms the
/// configuration removes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub conventional: Option<f64>,
    pub adaptive: Option<f64>,
    pub consistency: Option<f64>,
    /// mean weighted objective
    pub total: f64,
}

pub struct Trainer<'c> {
    corpus: &'c InteractionCorpus,
    profile: &'c DiversityProfile,
    config: TrainConfig,
    profiles: AspectProfiles,
    objective: Objective,
    branches: [BranchParameters; 2],
    optimizers: [OptimizerState; 2],
    grads: [GradientSet; 2],
    reversed: Option<ReversedSampler>,
    uniform_rng: ChaCha8Rng,
    reversed_rng: ChaCha8Rng,
    noise_rng: ChaCha8Rng,
    epoch: usize,
    history: Vec<EpochRecord>,
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c InteractionCorpus, profile: &'c DiversityProfile, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        if corpus.train_interactions().is_empty() {
            return Err(Error::EmptyLog);
        }
        let k = config.effective_aspects(corpus);
        let profiles = build_aspect_profiles(corpus, k, config.aspect_reduction)?;
        let (m, n, d) = (corpus.num_users(), corpus.num_items(), config.embedding_dim);
        let branches = [
            BranchParameters::random(
                BranchTag::Conventional,
                m,
                n,
                d,
                k,
                config.init_std,
                &mut rng::stream(config.seed, Stream::InitConventional),
            ),
            BranchParameters::random(
                BranchTag::Adaptive,
                m,
                n,
                d,
                k,
                config.init_std,
                &mut rng::stream(config.seed, Stream::InitAdaptive),
            ),
        ];
        let optimizers = [
            OptimizerState::new(config.adam(), &branches[0]),
            OptimizerState::new(config.adam(), &branches[1]),
        ];
        let grads = [GradientSet::zeros_like(&branches[0]), GradientSet::zeros_like(&branches[1])];
        let reversed = if config.disable_adaptive_branch {
            None
        } else {
            Some(ReversedSampler::new(corpus, profile)?)
        };
        Ok(Self {
            corpus,
            profile,
            objective: config.objective(),
            uniform_rng: rng::stream(config.seed, Stream::UniformSampler),
            reversed_rng: rng::stream(config.seed, Stream::ReversedSampler),
            noise_rng: rng::stream(config.seed, Stream::Noise),
            config,
            profiles,
            branches,
            optimizers,
            grads,
            reversed,
            epoch: 0,
            history: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn profiles(&self) -> &AspectProfiles {
        &self.profiles
    }

    pub fn branches(&self) -> &[BranchParameters; 2] {
        &self.branches
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn is_finished(&self) -> bool {
        self.epoch >= self.config.max_epochs
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.corpus.train_interactions().len().div_ceil(self.config.batch_size)
    }

    /// Per-user `(w_conv, w_adp)` for a 1-based epoch.
    pub fn weights_for_epoch(&self, epoch: usize) -> (Vec<f64>, Vec<f64>) {
        let m = self.corpus.num_users();
        let mut conv = vec![0.0; m];
        let mut adp = vec![0.0; m];
        for u in 0..m {
            let (a, b) = match (self.objective.conventional, self.objective.adaptive) {
                (true, false) => (1.0, 0.0),
                (false, true) => (0.0, 1.0),
                _ => branch_weights(
                    alpha(self.profile, u, epoch, self.config.max_epochs),
                    self.profile.skewed_domain,
                    self.config.reverse_order,
                ),
            };
            conv[u] = a;
            adp[u] = b;
        }
        (conv, adp)
    }

    pub fn run_epoch(&mut self) -> Result<EpochRecord> {
        let epoch = self.epoch + 1;
        let (w_conv, w_adp) = self.weights_for_epoch(epoch);
        let steps = self.steps_per_epoch();
        let empty = |tag| TrainingBatch {
            triples: Vec::new(),
            branch_tag: tag,
        };
        let mut sums = LossBreakdown::default();
        for step in 0..steps {
            let uniform = if self.objective.conventional || self.objective.uses_consistency() {
                uniform_sample(
                    self.corpus,
                    self.config.batch_size,
                    self.config.negatives,
                    &mut self.uniform_rng,
                )?
            } else {
                empty(BranchTag::Conventional)
            };
            let reversed = match &self.reversed {
                Some(sampler) => sampler.sample(
                    self.corpus,
                    self.config.batch_size,
                    self.config.negatives,
                    &mut self.reversed_rng,
                )?,
                None => empty(BranchTag::Adaptive),
            };
            let noise = StepNoise::draw(
                &self.objective,
                self.config.embedding_dim,
                &uniform,
                &reversed,
                &mut self.noise_rng,
            );
            let inputs = LossInputs {
                corpus: self.corpus,
                profiles: &self.profiles,
                uniform: &uniform,
                reversed: &reversed,
                weighting: Weighting::PerUser {
                    conventional: &w_conv,
                    adaptive: &w_adp,
                },
                objective: &self.objective,
                noise: &noise,
            };
            let [b0, b1] = &self.branches;
            let loss = loss_and_gradients_into([b0, b1], &inputs, &mut self.grads).map_err(|e| {
                Error::Diverged {
                    epoch,
                    step,
                    source: alloc::boxed::Box::new(e),
                }
            })?;
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step,
                    source: alloc::boxed::Box::new(Error::NonFiniteLoss {
                        batch: "step",
                        index: 0,
                        user: 0,
                        item: 0,
                    }),
                });
            }
            let active = [self.objective.conventional, self.objective.adaptive];
            for (b, _) in active.iter().enumerate().filter(|(_, on)| **on) {
                self.optimizers[b].step(&mut self.branches[b], &self.grads[b], self.config.clip_embeddings);
            }
            sums.total += loss.total;
            sums.conventional += loss.conventional;
            sums.adaptive += loss.adaptive;
            sums.consistency += loss.consistency;
        }
        let s = steps as f64;
        let record = EpochRecord {
            epoch,
            conventional: self.objective.conventional.then_some(sums.conventional / s),
            adaptive: self.objective.adaptive.then_some(sums.adaptive / s),
            consistency: self.objective.uses_consistency().then_some(sums.consistency / s),
            total: sums.total / s,
        };
        self.epoch = epoch;
        self.history.push(record);
        Ok(record)
    }

    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.run_epoch()?;
        }
        Ok(())
    }

    pub fn model(&self) -> TamlModel {
        TamlModel::new(
            self.branches[0].clone(),
            self.branches[1].clone(),
            &self.profiles,
            self.corpus,
            self.profile,
            self.config.switches(),
            self.config.fusion(self.profile.skewed_domain),
        )
    }

    pub fn into_parts(self) -> ([BranchParameters; 2], AspectProfiles, Vec<EpochRecord>) {
        (self.branches, self.profiles, self.history)
    }
}

/// Trains for `max_epochs` and returns the model with its loss history.
pub fn train(
    corpus: &InteractionCorpus,
    profile: &DiversityProfile,
    config: &TrainConfig,
) -> Result<(TamlModel, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(corpus, profile, config.clone())?;
    trainer.run()?;
    let model = trainer.model();
    Ok((model, trainer.history))
}
