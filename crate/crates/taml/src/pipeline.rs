//! Experiment orchestration: ingest, split, profile, train, evaluate,
//! ablations and sweeps. Every command stages its outputs and commits them
//! only when it succeeds.

use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use log::info;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use taml_core::baselines::{train_cml, CmlModel, MmrRanker};
use taml_core::corpus::{skewness, DiversityProfile, Record};
use taml_core::metrics::{aggregate, evaluate_user, MetricReport, Ranker};
use taml_core::model::{build_aspect_profiles, TamlModel};
use taml_core::rng::{self, Stream};
use taml_core::synthetic::{generate_raw, SyntheticConfig};
use taml_core::training::branch_order;
use taml_core::{Ablation, BranchParameters, BranchTag, EpochRecord, InteractionCorpus, Trainer};

use crate::checkpoint;
use crate::config::{ExperimentConfig, ModelKind};
use crate::formats::{self, RawDataset};
use crate::output::{self, Staging};
use crate::snapshot;

pub const CONFIG_FILE: &str = "config.txt";
pub const CORPUS_FILE: &str = "corpus.tsv";
pub const PROFILE_FILE: &str = "profile.csv";
pub const DIVERSITY_FILE: &str = "diversity.tsv";
pub const HISTOGRAM_FILE: &str = "histogram.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const USERS_FILE: &str = "users.tsv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CONVENTIONAL_CHECKPOINT: &str = "checkpoints/conventional.bin";
pub const ADAPTIVE_CHECKPOINT: &str = "checkpoints/adaptive.bin";
pub const CML_CHECKPOINT: &str = "checkpoints/cml.bin";

/// A split corpus with its training-side diversity profile.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub corpus: InteractionCorpus,
    pub profile: DiversityProfile,
    /// skewness of `d_u` over all interactions, before the split; `None`
    /// when the distribution is degenerate
    pub full_skewness: Option<f64>,
}

/// Fails early, before any output is staged, when an input is missing.
pub fn check_inputs(config: &ExperimentConfig) -> Result<()> {
    if let Some(snapshot) = &config.snapshot {
        ensure!(snapshot.is_file(), "corpus snapshot {} does not exist", snapshot.display());
        return Ok(());
    }
    let path = config
        .dataset_path
        .as_ref()
        .context("no dataset configured (set dataset.path or dataset.snapshot)")?;
    ensure!(path.is_dir(), "dataset directory {} does not exist", path.display());
    Ok(())
}

/// Loads, filters and optionally subsamples the dataset; every interaction
/// is still in the training set.
pub fn load_unsplit(config: &ExperimentConfig) -> Result<InteractionCorpus> {
    let path = config.dataset_path.as_ref().context("no dataset configured")?;
    let mut raw: RawDataset = formats::load(config.dataset_format, path)
        .with_context(|| format!("corpus: loading {} dataset", config.dataset_format))?;
    if config.drop_uncategorized {
        let dropped = raw.drop_uncategorized();
        if dropped > 0 {
            info!("dropped {dropped} interactions with uncategorized items");
        }
    }
    let corpus = InteractionCorpus::ingest(raw.interactions, raw.categories, config.min_core())
        .context("corpus: ingesting interactions")?;
    subsample(&corpus, config.max_users, config.train.seed)
}

/// A seeded random subset of `max_users` users (all users when 0),
/// kept in their original order.
pub fn subsample(corpus: &InteractionCorpus, max_users: usize, seed: u64) -> Result<InteractionCorpus> {
    if max_users == 0 || max_users >= corpus.num_users() {
        return Ok(corpus.clone());
    }
    let mut users: Vec<usize> = (0..corpus.num_users()).collect();
    users.shuffle(&mut rng::stream(seed, Stream::Subsample));
    users.truncate(max_users);
    users.sort_unstable();
    corpus.restrict_to_users(&users).context("corpus: subsampling users")
}

/// The same corpus with every interaction moved back to training.
pub fn unsplit(corpus: &InteractionCorpus) -> Result<InteractionCorpus> {
    let records = corpus.records().iter().map(|r| Record { test: false, ..*r }).collect();
    Ok(InteractionCorpus::from_records(
        corpus.user_tokens().to_vec(),
        corpus.item_tokens().to_vec(),
        corpus.category_tokens().to_vec(),
        corpus.category_of_item().to_vec(),
        records,
    )?)
}

fn active_skewness(corpus: &InteractionCorpus) -> Option<f64> {
    let d: Vec<f64> = (0..corpus.num_users())
        .filter_map(|u| corpus.user_diversity(u).ok())
        .collect();
    skewness(&d).ok()
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    check_inputs(config)?;
    let (full, corpus) = match &config.snapshot {
        Some(path) => {
            let corpus = snapshot::read(path).context("corpus: reading snapshot")?;
            (unsplit(&corpus)?, corpus)
        }
        None => {
            let full = load_unsplit(config)?;
            let split = full
                .split(config.train_fraction, config.train.seed)
                .context("corpus: splitting")?;
            (full, split)
        }
    };
    let profile = DiversityProfile::from_corpus(&corpus, config.train.skew_threshold)
        .context("corpus: diversity profile of the training split")?;
    info!(
        "corpus: {} users, {} items, {} categories, {} train / {} test interactions, skewness {:.4}",
        corpus.num_users(),
        corpus.num_items(),
        corpus.num_categories(),
        corpus.train_interactions().len(),
        corpus.test_interactions().len(),
        profile.skewness
    );
    Ok(Prepared {
        full_skewness: active_skewness(&full),
        corpus,
        profile,
    })
}

/// Ranks and scores every user with a nonempty test set on `threads`
/// workers. Per-user results are collected in user order, so the report
/// does not depend on the thread count.
pub fn evaluate_parallel<R: Ranker + Sync + ?Sized>(
    ranker: &R,
    prepared: &Prepared,
    cutoffs: &[usize],
    threads: usize,
) -> Result<MetricReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .context("metrics: building the evaluation thread pool")?;
    let per_user = pool.install(|| {
        (0..prepared.corpus.num_users())
            .into_par_iter()
            .map(|u| evaluate_user(ranker, &prepared.corpus, &prepared.profile, u, cutoffs))
            .collect::<Result<Vec<_>, _>>()
    })
    .context("metrics: evaluation")?;
    aggregate(per_user.into_iter().flatten().collect(), cutoffs).context("metrics: aggregation")
}

#[derive(Debug, Clone)]
pub enum LossHistory {
    Taml(Vec<EpochRecord>),
    Cml(Vec<f64>),
}

pub enum Fitted {
    Taml { model: Box<TamlModel>, history: Vec<EpochRecord> },
    Cml { model: CmlModel, history: Vec<f64> },
}

impl Fitted {
    pub fn history(&self) -> LossHistory {
        match self {
            Fitted::Taml { history, .. } => LossHistory::Taml(history.clone()),
            Fitted::Cml { history, .. } => LossHistory::Cml(history.clone()),
        }
    }
}

/// Trains the configured model. With a staging area, checkpoints are
/// written after every epoch (the latest epoch replaces the previous one).
pub fn fit(config: &ExperimentConfig, prepared: &Prepared, staging: Option<&Staging>) -> Result<Fitted> {
    let seed = config.train.seed;
    match config.model {
        ModelKind::Taml => {
            let mut trainer = Trainer::new(&prepared.corpus, &prepared.profile, config.train.clone())
                .context("training: setting up")?;
            info!(
                "training: branch order {}, {} steps per epoch",
                branch_order(prepared.profile.skewed_domain, config.train.reverse_order),
                trainer.steps_per_epoch()
            );
            while !trainer.is_finished() {
                let record = trainer.run_epoch().context("training")?;
                let show = |x: Option<f64>| x.map_or("-".to_owned(), output::fmt);
                info!(
                    "epoch {}: L_B1 {} L_B2 {} L_3 {} total {}",
                    record.epoch,
                    show(record.conventional),
                    show(record.adaptive),
                    show(record.consistency),
                    output::fmt(record.total)
                );
                if let Some(staging) = staging {
                    let [conv, adp] = trainer.branches();
                    for (name, params) in [(CONVENTIONAL_CHECKPOINT, conv), (ADAPTIVE_CHECKPOINT, adp)] {
                        let bytes = checkpoint::encode_branch(params, seed, record.epoch);
                        checkpoint::write(&staging.path(name)?, &bytes).context("checkpoint")?;
                    }
                }
            }
            let model = trainer.model();
            let (_, _, history) = trainer.into_parts();
            Ok(Fitted::Taml { model: Box::new(model), history })
        }
        ModelKind::Cml | ModelKind::CmlMmr => {
            let (params, history) = train_cml(&prepared.corpus, &config.train).context("training: CML baseline")?;
            if let Some(staging) = staging {
                let bytes = checkpoint::encode_cml(&params, seed, history.len());
                checkpoint::write(&staging.path(CML_CHECKPOINT)?, &bytes).context("checkpoint")?;
            }
            Ok(Fitted::Cml {
                model: CmlModel { params },
                history,
            })
        }
    }
}

pub fn evaluate_fitted(config: &ExperimentConfig, prepared: &Prepared, fitted: &Fitted) -> Result<MetricReport> {
    match (fitted, config.model) {
        (Fitted::Taml { model, .. }, _) => evaluate_parallel(model.as_ref(), prepared, &config.cutoffs, config.threads),
        (Fitted::Cml { model, .. }, ModelKind::CmlMmr) => {
            let ranker = MmrRanker::new(model.clone(), config.mmr_lambda, &prepared.corpus)?;
            evaluate_parallel(&ranker, prepared, &config.cutoffs, config.threads)
        }
        (Fitted::Cml { model, .. }, _) => evaluate_parallel(model, prepared, &config.cutoffs, config.threads),
    }
}

fn check_shape(header: &checkpoint::Header, corpus: &InteractionCorpus) -> Result<()> {
    ensure!(
        header.users == corpus.num_users() && header.items == corpus.num_items(),
        "checkpoint is for {} users and {} items but the corpus has {} and {}",
        header.users,
        header.items,
        corpus.num_users(),
        corpus.num_items()
    );
    Ok(())
}

/// Rebuilds a trained model from a run directory's checkpoints.
pub fn load_fitted(config: &ExperimentConfig, prepared: &Prepared, run_dir: &Path) -> Result<Fitted> {
    let corpus = &prepared.corpus;
    match config.model {
        ModelKind::Taml => {
            let read = |name: &str, tag: BranchTag| -> Result<BranchParameters> {
                let (header, params) = checkpoint::read_branch(&run_dir.join(name))?;
                check_shape(&header, corpus)?;
                ensure!(params.tag == tag, "{name} holds the wrong branch");
                Ok(params)
            };
            let conventional = read(CONVENTIONAL_CHECKPOINT, BranchTag::Conventional)?;
            let adaptive = read(ADAPTIVE_CHECKPOINT, BranchTag::Adaptive)?;
            let k = config.train.effective_aspects(corpus);
            ensure!(
                conventional.aspects == k,
                "checkpoint has {} aspects but the configuration implies {k}",
                conventional.aspects
            );
            let profiles = build_aspect_profiles(corpus, k, config.train.aspect_reduction).context("model: aspects")?;
            let model = TamlModel::new(
                conventional,
                adaptive,
                &profiles,
                corpus,
                &prepared.profile,
                config.train.switches(),
                config.train.fusion(prepared.profile.skewed_domain),
            );
            Ok(Fitted::Taml {
                model: Box::new(model),
                history: Vec::new(),
            })
        }
        ModelKind::Cml | ModelKind::CmlMmr => {
            let (header, params) = checkpoint::read_cml(&run_dir.join(CML_CHECKPOINT))?;
            check_shape(&header, corpus)?;
            Ok(Fitted::Cml {
                model: CmlModel { params },
                history: Vec::new(),
            })
        }
    }
}

fn write_history(path: &Path, history: &LossHistory) -> Result<()> {
    match history {
        LossHistory::Taml(h) => output::write_losses(path, h),
        LossHistory::Cml(h) => output::write_cml_losses(path, h),
    }
}

fn stage_config(staging: &Staging, config: &ExperimentConfig) -> Result<()> {
    std::fs::write(staging.path(CONFIG_FILE)?, config.to_text()).context("writing the resolved config")
}

fn stage_corpus(staging: &Staging, prepared: &Prepared) -> Result<()> {
    snapshot::write(&staging.path(CORPUS_FILE)?, &prepared.corpus)
}

fn stage_profile(staging: &Staging, config: &ExperimentConfig, prepared: &Prepared) -> Result<()> {
    let (corpus, profile) = (&prepared.corpus, &prepared.profile);
    let full = prepared
        .full_skewness
        .map(output::fmt)
        .unwrap_or_else(|| "undefined".to_owned());
    let rows = [
        ("users", corpus.num_users().to_string()),
        ("items", corpus.num_items().to_string()),
        ("categories", corpus.num_categories().to_string()),
        ("train_interactions", corpus.train_interactions().len().to_string()),
        ("test_interactions", corpus.test_interactions().len().to_string()),
        ("skewness_all_interactions", full),
        ("skewness_train", output::fmt(profile.skewness)),
        ("skew_threshold", output::fmt(config.train.skew_threshold)),
        ("skewed_domain", profile.skewed_domain.to_string()),
        (
            "branch_order",
            branch_order(profile.skewed_domain, config.train.reverse_order).to_owned(),
        ),
    ];
    output::write_summary(&staging.path(PROFILE_FILE)?, &rows)?;
    output::write_diversity(&staging.path(DIVERSITY_FILE)?, corpus, profile)?;
    let counts = output::histogram(corpus, profile, config.histogram_bins);
    output::write_histogram(&staging.path(HISTOGRAM_FILE)?, &counts)
}

fn stage_report(staging: &Staging, prefix: &str, prepared: &Prepared, report: &MetricReport) -> Result<()> {
    output::write_metrics(&staging.path(&format!("{prefix}{METRICS_FILE}"))?, report)?;
    output::write_user_metrics(&staging.path(&format!("{prefix}{USERS_FILE}"))?, report, &prepared.corpus)
}

fn commit(staging: Staging) -> Result<Vec<PathBuf>> {
    let target = staging.target().to_path_buf();
    let files = staging.commit()?;
    info!("wrote {} files to {}", files.len(), target.display());
    Ok(files)
}

/// Snapshot of the split corpus plus its diversity summary.
pub fn ingest(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_config(&staging, config)?;
    stage_corpus(&staging, &prepared)?;
    stage_profile(&staging, config, &prepared)?;
    commit(staging)
}

/// Diversity profile report: per-user `d_u`, histogram data, skewness and
/// the chosen branch order.
pub fn report(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_profile(&staging, config, &prepared)?;
    commit(staging)
}

/// Trains and writes the config, corpus snapshot, checkpoints and losses.
pub fn train(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_config(&staging, config)?;
    stage_corpus(&staging, &prepared)?;
    let fitted = fit(config, &prepared, Some(&staging))?;
    write_history(&staging.path(LOSSES_FILE)?, &fitted.history())?;
    commit(staging)
}

/// Evaluates the checkpoints of an earlier `train` run against its corpus
/// snapshot.
pub fn evaluate(config: &ExperimentConfig, run_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut config = config.clone();
    config.snapshot = Some(run_dir.join(CORPUS_FILE));
    let prepared = prepare(&config)?;
    let fitted = load_fitted(&config, &prepared, run_dir)?;
    let staging = Staging::new(&config.output_dir)?;
    let report = evaluate_fitted(&config, &prepared, &fitted)?;
    stage_report(&staging, "", &prepared, &report)?;
    commit(staging)
}

/// The whole pipeline in one go.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_config(&staging, config)?;
    stage_corpus(&staging, &prepared)?;
    stage_profile(&staging, config, &prepared)?;
    let fitted = fit(config, &prepared, Some(&staging))?;
    write_history(&staging.path(LOSSES_FILE)?, &fitted.history())?;
    let report = evaluate_fitted(config, &prepared, &fitted)?;
    stage_report(&staging, "", &prepared, &report)?;
    commit(staging)
}

/// File-system friendly variant name: `conv->adp` becomes `conv-to-adp`,
/// `w/o-dist` becomes `wo-dist`.
pub fn slug(label: &str) -> String {
    label.replace("->", "-to-").replace('/', "")
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: &'static str,
    pub report: MetricReport,
    pub history: Vec<EpochRecord>,
}

/// Trains and evaluates all seven variants on one corpus with one seed.
pub fn ablation_rows(config: &ExperimentConfig, prepared: &Prepared) -> Result<Vec<AblationRow>> {
    ensure!(config.model == ModelKind::Taml, "ablations apply to the taml model only");
    let mut rows = Vec::with_capacity(Ablation::ALL.len());
    for variant in Ablation::ALL {
        let label = variant.label(prepared.profile.skewed_domain);
        info!("ablation variant {label}");
        let mut cfg = config.clone();
        cfg.train = variant.apply(&config.train);
        let fitted = fit(&cfg, prepared, None).with_context(|| format!("ablation variant {label}"))?;
        let report = evaluate_fitted(&cfg, prepared, &fitted)?;
        let Fitted::Taml { history, .. } = fitted else {
            unreachable!("taml model checked above")
        };
        rows.push(AblationRow {
            variant: label,
            report,
            history,
        });
    }
    Ok(rows)
}

fn write_ablation_table(path: &Path, rows: &[AblationRow], cutoffs: &[usize]) -> Result<()> {
    let mut ks = cutoffs.to_vec();
    ks.sort_unstable();
    ks.dedup();
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    let mut header = vec!["variant".to_string()];
    for k in &ks {
        header.extend(output::METRIC_COLUMNS.iter().map(|m| format!("{m}@{k}")));
    }
    header.push("diversity_mse".into());
    w.write_record(&header)?;
    for row in rows {
        let mut record = vec![row.variant.to_string()];
        for k in &ks {
            let m = row.report.row(*k).context("missing cutoff row")?;
            record.extend([m.recall, m.ndcg, m.ild, m.cc, m.f1].map(output::fmt));
        }
        record.push(output::fmt(row.report.diversity_mse));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn ablate(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    ensure!(config.model == ModelKind::Taml, "ablations apply to the taml model only");
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_config(&staging, config)?;
    stage_corpus(&staging, &prepared)?;
    let rows = ablation_rows(config, &prepared)?;
    write_ablation_table(&staging.path(ABLATION_FILE)?, &rows, &config.cutoffs)?;
    for row in &rows {
        let dir = format!("ablation/{}/", slug(row.variant));
        output::write_losses(&staging.path(&format!("{dir}{LOSSES_FILE}"))?, &row.history)?;
        output::write_metrics(&staging.path(&format!("{dir}{METRICS_FILE}"))?, &row.report)?;
    }
    commit(staging)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParameter {
    Dim,
    Negatives,
    Aspects,
}

impl SweepParameter {
    pub fn name(self) -> &'static str {
        match self {
            Self::Dim => "dim",
            Self::Negatives => "negatives",
            Self::Aspects => "aspects",
        }
    }
}

/// Every (parameter, value) pair requested by the sweep lists.
pub fn sweep_points(config: &ExperimentConfig) -> Result<Vec<(SweepParameter, usize)>> {
    let points: Vec<(SweepParameter, usize)> = [
        (SweepParameter::Dim, &config.sweep_dims),
        (SweepParameter::Negatives, &config.sweep_negatives),
        (SweepParameter::Aspects, &config.sweep_aspects),
    ]
    .into_iter()
    .flat_map(|(p, values)| values.iter().map(move |&v| (p, v)))
    .collect();
    if points.is_empty() {
        bail!("a sweep needs at least one of sweep.dims, sweep.negatives or sweep.aspects");
    }
    Ok(points)
}

pub fn sweep(config: &ExperimentConfig) -> Result<Vec<PathBuf>> {
    let points = sweep_points(config)?;
    let prepared = prepare(config)?;
    let staging = Staging::new(&config.output_dir)?;
    stage_config(&staging, config)?;
    stage_corpus(&staging, &prepared)?;
    let path = staging.path(SWEEP_FILE)?;
    let mut w = csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(["parameter", "value", "k", "recall", "ndcg", "ild", "cc", "f1", "diversity_mse"])?;
    for (parameter, value) in points {
        info!("sweep {}={value}", parameter.name());
        let mut cfg = config.clone();
        match parameter {
            SweepParameter::Dim => cfg.train.embedding_dim = value,
            SweepParameter::Negatives => cfg.train.negatives = value,
            SweepParameter::Aspects => cfg.train.num_aspects = value,
        }
        cfg.validate()?;
        let fitted = fit(&cfg, &prepared, None).with_context(|| format!("sweep {}={value}", parameter.name()))?;
        let report = evaluate_fitted(&cfg, &prepared, &fitted)?;
        let dir = format!("sweep/{}-{value}/", parameter.name());
        write_history(&staging.path(&format!("{dir}{LOSSES_FILE}"))?, &fitted.history())?;
        output::write_metrics(&staging.path(&format!("{dir}{METRICS_FILE}"))?, &report)?;
        for row in &report.rows {
            w.write_record([
                parameter.name().to_string(),
                value.to_string(),
                row.k.to_string(),
                output::fmt(row.recall),
                output::fmt(row.ndcg),
                output::fmt(row.ild),
                output::fmt(row.cc),
                output::fmt(row.f1),
                output::fmt(report.diversity_mse),
            ])?;
        }
    }
    w.flush()?;
    drop(w);
    commit(staging)
}

/// Writes a synthetic dataset in the canonical TSV layout.
pub fn synthesize(config: &SyntheticConfig, out: &Path) -> Result<Vec<PathBuf>> {
    let (interactions, categories) = generate_raw(config).context("synthetic corpus")?;
    let staging = Staging::new(out)?;
    let data = RawDataset {
        interactions,
        categories,
    };
    formats::write_canonical(staging.dir(), &data)?;
    commit(staging)
}
