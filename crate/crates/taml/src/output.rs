//! Artifact writers and failure-atomic output staging.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use taml_core::corpus::DiversityProfile;
use taml_core::metrics::MetricReport;
use taml_core::{EpochRecord, InteractionCorpus};

/// Collects outputs in a scratch directory beside the target and moves
/// them into place only on success, so a failed run leaves the target
/// untouched.
pub struct Staging {
    scratch: tempfile::TempDir,
    target: PathBuf,
}

impl Staging {
    pub fn new(target: &Path) -> Result<Self> {
        let parent = match target.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        fs::create_dir_all(&parent).with_context(|| format!("creating {}", parent.display()))?;
        let scratch = tempfile::Builder::new()
            .prefix(".taml-staging-")
            .tempdir_in(&parent)
            .with_context(|| format!("creating a staging directory in {}", parent.display()))?;
        Ok(Self {
            scratch,
            target: target.to_path_buf(),
        })
    }

    /// The scratch directory itself.
    pub fn dir(&self) -> &Path {
        self.scratch.path()
    }

    pub fn target(&self) -> &Path {
        &self.target
    }

    /// Path of a staged file, creating its parent directories.
    pub fn path(&self, relative: &str) -> Result<PathBuf> {
        let path = self.scratch.path().join(relative);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    /// Moves every staged file into the target, replacing files of the
    /// same name, and returns the committed paths in sorted order.
    pub fn commit(self) -> Result<Vec<PathBuf>> {
        let mut files = Vec::new();
        collect_files(self.scratch.path(), &mut files)?;
        files.sort();
        let mut out = Vec::with_capacity(files.len());
        for file in files {
            let relative = file.strip_prefix(self.scratch.path()).expect("inside scratch");
            let dest = self.target.join(relative);
            if let Some(parent) = dest.parent() {
                fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
            }
            fs::rename(&file, &dest).with_context(|| format!("moving output into {}", dest.display()))?;
            out.push(dest);
        }
        Ok(out)
    }
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("listing {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

/// Fixed six decimals; adding zero folds `-0.0` into `0.0`.
pub fn fmt(x: f64) -> String {
    format!("{:.6}", x + 0.0)
}

fn optional(x: Option<f64>) -> String {
    x.map(fmt).unwrap_or_default()
}

fn writer(path: &Path, delimiter: u8) -> Result<csv::Writer<fs::File>> {
    csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path)
        .with_context(|| format!("creating {}", path.display()))
}

/// Per-epoch losses; cells are empty for terms the configuration removes.
pub fn write_losses(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["epoch", "L_B1", "L_B2", "L_3", "total"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            optional(r.conventional),
            optional(r.adaptive),
            optional(r.consistency),
            fmt(r.total),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_cml_losses(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["epoch", "loss"])?;
    for (e, loss) in history.iter().enumerate() {
        w.write_record([(e + 1).to_string(), fmt(*loss)])?;
    }
    w.flush()?;
    Ok(())
}

pub const METRIC_COLUMNS: [&str; 5] = ["recall", "ndcg", "ild", "cc", "f1"];

/// One row per cutoff.
pub fn write_metrics(path: &Path, report: &MetricReport) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["k", "recall", "ndcg", "ild", "cc", "f1", "diversity_mse", "users"])?;
    for row in &report.rows {
        w.write_record([
            row.k.to_string(),
            fmt(row.recall),
            fmt(row.ndcg),
            fmt(row.ild),
            fmt(row.cc),
            fmt(row.f1),
            fmt(report.diversity_mse),
            report.users.len().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-user metrics: d_u, predicted diversity and each metric at each cutoff.
pub fn write_user_metrics(path: &Path, report: &MetricReport, corpus: &InteractionCorpus) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    let mut header = vec!["user".to_string(), "d_u".to_string(), "predicted_diversity".to_string()];
    for row in &report.rows {
        for name in ["recall", "ndcg", "ild", "cc"] {
            header.push(format!("{name}@{}", row.k));
        }
    }
    w.write_record(&header)?;
    for u in &report.users {
        let mut record = vec![corpus.user_tokens()[u.user].clone(), fmt(u.diversity), fmt(u.predicted_diversity)];
        for c in &u.cutoffs {
            record.extend([fmt(c.recall), fmt(c.ndcg), fmt(c.ild), fmt(c.cc)]);
        }
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-user diversity scores over the training interactions.
pub fn write_diversity(path: &Path, corpus: &InteractionCorpus, profile: &DiversityProfile) -> Result<()> {
    let mut w = writer(path, b'\t')?;
    w.write_record(["user", "items", "categories", "d_u"])?;
    for u in 0..corpus.num_users() {
        w.write_record([
            corpus.user_tokens()[u].clone(),
            corpus.items_of_user(u).len().to_string(),
            corpus.categories_of_user(u).len().to_string(),
            fmt(profile.diversity(u)),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Counts of users with training data per equal-width bin of `d_u` over
/// `[0, 1]`; the last bin is closed.
pub fn histogram(corpus: &InteractionCorpus, profile: &DiversityProfile, bins: usize) -> Vec<usize> {
    let mut counts = vec![0usize; bins];
    for u in 0..corpus.num_users() {
        if corpus.items_of_user(u).is_empty() {
            continue;
        }
        let bin = ((profile.diversity(u) * bins as f64) as usize).min(bins - 1);
        counts[bin] += 1;
    }
    counts
}

pub fn write_histogram(path: &Path, counts: &[usize]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["bin_low", "bin_high", "users"])?;
    let bins = counts.len() as f64;
    for (b, count) in counts.iter().enumerate() {
        w.write_record([fmt(b as f64 / bins), fmt((b + 1) as f64 / bins), count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// `key,value` summary rows.
pub fn write_summary(path: &Path, rows: &[(&str, String)]) -> Result<()> {
    let mut w = writer(path, b',')?;
    w.write_record(["key", "value"])?;
    for (k, v) in rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
