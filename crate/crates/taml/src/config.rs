//! Experiment configuration: a flat `dotted.key=value` file, overridden by
//! `TAML_*` environment variables, overridden by command-line flags.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, ensure, Context, Result};
use taml_core::model::AspectReduction;
use taml_core::TrainConfig;

use crate::formats::DatasetFormat;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Taml,
    Cml,
    CmlMmr,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Taml => "taml",
            Self::Cml => "cml",
            Self::CmlMmr => "cml+mmr",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "taml" => Ok(Self::Taml),
            "cml" => Ok(Self::Cml),
            "cml+mmr" => Ok(Self::CmlMmr),
            other => bail!("unknown model {other:?} (expected taml, cml or cml+mmr)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_path: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    /// `None` uses the format's default
    pub min_core: Option<usize>,
    pub train_fraction: f64,
    /// 0 keeps every user
    pub max_users: usize,
    pub drop_uncategorized: bool,
    /// a corpus snapshot to load instead of the raw dataset
    pub snapshot: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub model: ModelKind,
    pub mmr_lambda: f64,
    pub cutoffs: Vec<usize>,
    pub threads: usize,
    pub histogram_bins: usize,
    pub sweep_dims: Vec<usize>,
    pub sweep_negatives: Vec<usize>,
    pub sweep_aspects: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset_path: None,
            dataset_format: DatasetFormat::CanonicalTsv,
            min_core: None,
            train_fraction: 0.8,
            max_users: 0,
            drop_uncategorized: false,
            snapshot: None,
            output_dir: PathBuf::from("taml-out"),
            model: ModelKind::Taml,
            mmr_lambda: 0.8,
            cutoffs: vec![5, 10],
            threads: 1,
            histogram_bins: 20,
            sweep_dims: Vec::new(),
            sweep_negatives: Vec::new(),
            sweep_aspects: Vec::new(),
            train: TrainConfig::default(),
        }
    }
}

pub struct KeySpec {
    pub key: &'static str,
    pub help: &'static str,
}

macro_rules! keys {
    ($($key:literal => $help:literal,)*) => {
        pub const KEYS: &[KeySpec] = &[$(KeySpec { key: $key, help: $help },)*];
    };
}

keys! {
    "seed" => "top-level seed for the split, initialization, samplers and noise",
    "dataset.path" => "dataset directory",
    "dataset.format" => "movielens-1m, amazon-5core-json or canonical-tsv",
    "dataset.min_core" => "iterative k-core threshold (empty: 5 for Amazon, 1 otherwise)",
    "dataset.train_fraction" => "per-user fraction of interactions kept for training",
    "dataset.max_users" => "random user subsample size taken before the split (0: all users)",
    "dataset.drop_uncategorized" => "drop interactions with items missing from the category table",
    "dataset.snapshot" => "load this corpus snapshot instead of the raw dataset",
    "output.dir" => "directory receiving the artifacts",
    "model" => "taml, cml or cml+mmr",
    "mmr.lambda" => "MMR relevance/diversity trade-off in [0, 1]",
    "eval.cutoffs" => "comma-separated top-K cutoffs",
    "eval.threads" => "evaluation worker threads",
    "report.bins" => "bins of the per-user diversity histogram",
    "sweep.dims" => "comma-separated embedding dimensions to sweep",
    "sweep.negatives" => "comma-separated negative counts to sweep",
    "sweep.aspects" => "comma-separated aspect counts to sweep",
    "train.batch_size" => "positive pairs per batch",
    "train.max_epochs" => "training epochs",
    "train.learning_rate" => "Adam learning rate",
    "train.margin" => "hinge margin",
    "train.embedding_dim" => "embedding dimension",
    "train.num_aspects" => "diversity aspects (clamped to the number of categories)",
    "train.negatives" => "negatives per positive pair",
    "train.skew_threshold" => "skewness at or above which the domain counts as skewed",
    "train.init_std" => "standard deviation of the Gaussian initialization",
    "train.beta1" => "Adam first-moment decay",
    "train.beta2" => "Adam second-moment decay",
    "train.adam_epsilon" => "Adam denominator epsilon",
    "train.clip_embeddings" => "project embeddings onto the unit ball after each step",
    "train.history_limit" => "most recent interactions kept per history",
    "train.aspect_reduction" => "svd or identity",
    "train.consistency_stop_gradient" => "treat the conventional side of the consistency loss as constant",
    "train.disable_adaptive_branch" => "conventional branch only",
    "train.disable_conventional_branch" => "adaptive branch only",
    "train.reverse_order" => "swap the branch order chosen from the skewness",
    "train.drop_attention" => "replace attention with a plain history mean",
    "train.drop_diversity_relation" => "remove the diversity relation",
    "train.drop_backward_direction" => "score with the forward translation only",
    "train.drop_consistency_loss" => "remove the consistency loss",
}

/// `train.batch_size` becomes `train-batch-size`.
pub fn flag_name(key: &str) -> String {
    key.replace(['.', '_'], "-")
}

/// `train.batch_size` becomes `TAML_TRAIN_BATCH_SIZE`.
pub fn env_name(key: &str) -> String {
    format!("TAML_{}", key.replace('.', "_").to_ascii_uppercase())
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow::anyhow!("{key}: cannot parse {value:?}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => bail!("{key}: expected true or false, got {other:?}"),
    }
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn parse_path(value: &str) -> Option<PathBuf> {
    let v = value.trim();
    (!v.is_empty()).then(|| PathBuf::from(v))
}

fn list(values: &[usize]) -> String {
    values.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn reduction_name(r: AspectReduction) -> &'static str {
    match r {
        AspectReduction::Svd => "svd",
        AspectReduction::Identity => "identity",
    }
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => t.seed = parse(key, value)?,
            "dataset.path" => self.dataset_path = parse_path(value),
            "dataset.format" => self.dataset_format = value.trim().parse()?,
            "dataset.min_core" => {
                self.min_core = match value.trim() {
                    "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "dataset.train_fraction" => self.train_fraction = parse(key, value)?,
            "dataset.max_users" => self.max_users = parse(key, value)?,
            "dataset.drop_uncategorized" => self.drop_uncategorized = parse_bool(key, value)?,
            "dataset.snapshot" => self.snapshot = parse_path(value),
            "output.dir" => {
                self.output_dir = parse_path(value).with_context(|| format!("{key} must not be empty"))?
            }
            "model" => self.model = value.trim().parse()?,
            "mmr.lambda" => self.mmr_lambda = parse(key, value)?,
            "eval.cutoffs" => self.cutoffs = parse_list(key, value)?,
            "eval.threads" => self.threads = parse(key, value)?,
            "report.bins" => self.histogram_bins = parse(key, value)?,
            "sweep.dims" => self.sweep_dims = parse_list(key, value)?,
            "sweep.negatives" => self.sweep_negatives = parse_list(key, value)?,
            "sweep.aspects" => self.sweep_aspects = parse_list(key, value)?,
            "train.batch_size" => t.batch_size = parse(key, value)?,
            "train.max_epochs" => t.max_epochs = parse(key, value)?,
            "train.learning_rate" => t.learning_rate = parse(key, value)?,
            "train.margin" => t.margin = parse(key, value)?,
            "train.embedding_dim" => t.embedding_dim = parse(key, value)?,
            "train.num_aspects" => t.num_aspects = parse(key, value)?,
            "train.negatives" => t.negatives = parse(key, value)?,
            "train.skew_threshold" => t.skew_threshold = parse(key, value)?,
            "train.init_std" => t.init_std = parse(key, value)?,
            "train.beta1" => t.beta1 = parse(key, value)?,
            "train.beta2" => t.beta2 = parse(key, value)?,
            "train.adam_epsilon" => t.adam_epsilon = parse(key, value)?,
            "train.clip_embeddings" => t.clip_embeddings = parse_bool(key, value)?,
            "train.history_limit" => t.history_limit = parse(key, value)?,
            "train.aspect_reduction" => {
                t.aspect_reduction = match value.trim() {
                    "svd" => AspectReduction::Svd,
                    "identity" => AspectReduction::Identity,
                    other => bail!("{key}: expected svd or identity, got {other:?}"),
                }
            }
            "train.consistency_stop_gradient" => t.consistency_stop_gradient = parse_bool(key, value)?,
            "train.disable_adaptive_branch" => t.disable_adaptive_branch = parse_bool(key, value)?,
            "train.disable_conventional_branch" => t.disable_conventional_branch = parse_bool(key, value)?,
            "train.reverse_order" => t.reverse_order = parse_bool(key, value)?,
            "train.drop_attention" => t.drop_attention = parse_bool(key, value)?,
            "train.drop_diversity_relation" => t.drop_diversity_relation = parse_bool(key, value)?,
            "train.drop_backward_direction" => t.drop_backward_direction = parse_bool(key, value)?,
            "train.drop_consistency_loss" => t.drop_consistency_loss = parse_bool(key, value)?,
            other => bail!("unknown configuration key {other:?}"),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        let t = &self.train;
        Some(match key {
            "seed" => t.seed.to_string(),
            "dataset.path" => path(&self.dataset_path),
            "dataset.format" => self.dataset_format.to_string(),
            "dataset.min_core" => self.min_core.map(|k| k.to_string()).unwrap_or_default(),
            "dataset.train_fraction" => self.train_fraction.to_string(),
            "dataset.max_users" => self.max_users.to_string(),
            "dataset.drop_uncategorized" => self.drop_uncategorized.to_string(),
            "dataset.snapshot" => path(&self.snapshot),
            "output.dir" => self.output_dir.display().to_string(),
            "model" => self.model.to_string(),
            "mmr.lambda" => self.mmr_lambda.to_string(),
            "eval.cutoffs" => list(&self.cutoffs),
            "eval.threads" => self.threads.to_string(),
            "report.bins" => self.histogram_bins.to_string(),
            "sweep.dims" => list(&self.sweep_dims),
            "sweep.negatives" => list(&self.sweep_negatives),
            "sweep.aspects" => list(&self.sweep_aspects),
            "train.batch_size" => t.batch_size.to_string(),
            "train.max_epochs" => t.max_epochs.to_string(),
            "train.learning_rate" => t.learning_rate.to_string(),
            "train.margin" => t.margin.to_string(),
            "train.embedding_dim" => t.embedding_dim.to_string(),
            "train.num_aspects" => t.num_aspects.to_string(),
            "train.negatives" => t.negatives.to_string(),
            "train.skew_threshold" => t.skew_threshold.to_string(),
            "train.init_std" => t.init_std.to_string(),
            "train.beta1" => t.beta1.to_string(),
            "train.beta2" => t.beta2.to_string(),
            "train.adam_epsilon" => t.adam_epsilon.to_string(),
            "train.clip_embeddings" => t.clip_embeddings.to_string(),
            "train.history_limit" => t.history_limit.to_string(),
            "train.aspect_reduction" => reduction_name(t.aspect_reduction).to_owned(),
            "train.consistency_stop_gradient" => t.consistency_stop_gradient.to_string(),
            "train.disable_adaptive_branch" => t.disable_adaptive_branch.to_string(),
            "train.disable_conventional_branch" => t.disable_conventional_branch.to_string(),
            "train.reverse_order" => t.reverse_order.to_string(),
            "train.drop_attention" => t.drop_attention.to_string(),
            "train.drop_diversity_relation" => t.drop_diversity_relation.to_string(),
            "train.drop_backward_direction" => t.drop_backward_direction.to_string(),
            "train.drop_consistency_loss" => t.drop_consistency_loss.to_string(),
            _ => return None,
        })
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{origin}:{}: expected key=value", n + 1))?;
            self.set(key.trim(), value)
                .with_context(|| format!("{origin}:{}", n + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies every `TAML_*` variable that names a known key.
    pub fn apply_env<I>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let vars: std::collections::HashMap<String, String> = vars.into_iter().collect();
        for spec in KEYS {
            if let Some(value) = vars.get(&env_name(spec.key)) {
                self.set(spec.key, value)
                    .with_context(|| format!("environment variable {}", env_name(spec.key)))?;
            }
        }
        Ok(())
    }

    /// The resolved configuration in file syntax, one key per line in
    /// table order, so it can be fed back as a config file.
    pub fn to_text(&self) -> String {
        KEYS.iter()
            .map(|spec| format!("{}={}\n", spec.key, self.get(spec.key).expect("every key renders")))
            .collect()
    }

    pub fn min_core(&self) -> usize {
        self.min_core.unwrap_or(self.dataset_format.default_min_core())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        ensure!(
            self.train_fraction > 0.0 && self.train_fraction < 1.0,
            "dataset.train_fraction must lie in (0, 1)"
        );
        ensure!((0.0..=1.0).contains(&self.mmr_lambda), "mmr.lambda must lie in [0, 1]");
        ensure!(!self.cutoffs.is_empty(), "eval.cutoffs must not be empty");
        ensure!(self.cutoffs.iter().all(|&k| k >= 2), "eval.cutoffs must all be at least 2");
        ensure!(self.threads >= 1, "eval.threads must be at least 1");
        ensure!(self.histogram_bins >= 1, "report.bins must be at least 1");
        Ok(())
    }
}

/// Resolves file < environment < flags.
pub fn resolve<E>(file: Option<&Path>, env: E, flags: &[(String, String)]) -> Result<ExperimentConfig>
where
    E: IntoIterator<Item = (String, String)>,
{
    let mut config = ExperimentConfig::default();
    if let Some(path) = file {
        config.apply_file(path)?;
    }
    config.apply_env(env)?;
    for (key, value) in flags {
        config.set(key, value).with_context(|| format!("flag --{}", flag_name(key)))?;
    }
    config.validate()?;
    Ok(config)
}
