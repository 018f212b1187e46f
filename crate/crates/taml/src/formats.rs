//! Dataset adapters. Every source is translated into the canonical raw log
//! plus category table before the core ingests it.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use serde_json::Value;
use taml_core::corpus::{RawCategory, RawInteraction};

pub const INTERACTIONS_FILE: &str = "interactions.tsv";
pub const CATEGORIES_FILE: &str = "categories.tsv";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    MovieLens1m,
    Amazon5coreJson,
    CanonicalTsv,
}

impl DatasetFormat {
    pub const ALL: [DatasetFormat; 3] = [Self::MovieLens1m, Self::Amazon5coreJson, Self::CanonicalTsv];

    pub fn name(self) -> &'static str {
        match self {
            Self::MovieLens1m => "movielens-1m",
            Self::Amazon5coreJson => "amazon-5core-json",
            Self::CanonicalTsv => "canonical-tsv",
        }
    }

    /// k-core threshold applied when the config leaves it unset.
    pub fn default_min_core(self) -> usize {
        match self {
            Self::Amazon5coreJson => 5,
            Self::MovieLens1m | Self::CanonicalTsv => 1,
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetFormat {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .with_context(|| format!("unknown dataset format {s:?} (expected movielens-1m, amazon-5core-json or canonical-tsv)"))
    }
}

/// A raw log in chronological file order plus its category table.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawDataset {
    pub interactions: Vec<RawInteraction>,
    pub categories: Vec<RawCategory>,
}

impl RawDataset {
    /// Drops log rows whose item has no category entry.
    pub fn drop_uncategorized(&mut self) -> usize {
        let known: std::collections::HashSet<&str> = self.categories.iter().map(|c| c.item.as_str()).collect();
        let before = self.interactions.len();
        let kept: Vec<RawInteraction> = self
            .interactions
            .drain(..)
            .filter(|r| known.contains(r.item.as_str()))
            .collect();
        self.interactions = kept;
        before - self.interactions.len()
    }
}

pub fn load(format: DatasetFormat, path: &Path) -> Result<RawDataset> {
    if !path.is_dir() {
        bail!("dataset directory {} does not exist", path.display());
    }
    match format {
        DatasetFormat::MovieLens1m => load_movielens(path),
        DatasetFormat::Amazon5coreJson => load_amazon(path),
        DatasetFormat::CanonicalTsv => load_canonical(path),
    }
}

/// MovieLens files are latin-1; map each byte to the code point of the same value.
fn latin1_lines(path: &Path) -> Result<Vec<String>> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let text: String = bytes.iter().map(|&b| b as char).collect();
    Ok(text.lines().map(str::to_owned).filter(|l| !l.trim().is_empty()).collect())
}

/// `ratings.dat` (`user::movie::rating::timestamp`) and `movies.dat`
/// (`movie::title::Genre|Genre`); the first listed genre is the category.
pub fn load_movielens(dir: &Path) -> Result<RawDataset> {
    let ratings = dir.join("ratings.dat");
    let movies = dir.join("movies.dat");
    let mut interactions = Vec::new();
    for (n, line) in latin1_lines(&ratings)?.iter().enumerate() {
        let fields: Vec<&str> = line.split("::").collect();
        if fields.len() != 4 {
            bail!("{}:{}: expected 4 '::'-separated fields", ratings.display(), n + 1);
        }
        let value: f64 = fields[2]
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad rating", ratings.display(), n + 1))?;
        let timestamp: i64 = fields[3]
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad timestamp", ratings.display(), n + 1))?;
        interactions.push(RawInteraction {
            user: fields[0].trim().to_owned(),
            item: fields[1].trim().to_owned(),
            value,
            timestamp: Some(timestamp),
        });
    }
    let mut categories = Vec::new();
    for (n, line) in latin1_lines(&movies)?.iter().enumerate() {
        // split from both ends so a title containing "::" still parses
        let (Some((id, _)), Some((_, genres))) = (line.split_once("::"), line.rsplit_once("::")) else {
            bail!("{}:{}: expected 'id::title::genres'", movies.display(), n + 1);
        };
        let genre = genres.split('|').next().unwrap_or("").trim();
        if genre.is_empty() {
            bail!("{}:{}: movie without a genre", movies.display(), n + 1);
        }
        categories.push(RawCategory {
            item: id.trim().to_owned(),
            category: genre.to_owned(),
        });
    }
    Ok(RawDataset { interactions, categories })
}

fn json_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with(prefix) && (n.ends_with(".json") || n.ends_with(".jsonl")))
        })
        .collect();
    out.sort();
    if out.is_empty() {
        bail!("no {prefix}*.json file in {}", dir.display());
    }
    Ok(out)
}

fn json_lines(path: &Path) -> Result<Vec<Value>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).with_context(|| format!("{}:{}: invalid JSON", path.display(), n + 1))?;
        out.push(value);
    }
    Ok(out)
}

/// Picks one category from Amazon metadata. Category paths start with the
/// store department shared by every item, so the second path element is
/// used when present.
pub fn amazon_category(meta: &Value) -> Option<String> {
    let path: Vec<&str> = match (meta.get("categories"), meta.get("category")) {
        (Some(Value::Array(paths)), _) => paths
            .first()
            .and_then(Value::as_array)
            .map(|p| p.iter().filter_map(Value::as_str).collect())
            .unwrap_or_default(),
        (_, Some(Value::Array(path))) => path.iter().filter_map(Value::as_str).collect(),
        _ => Vec::new(),
    };
    let pick = path.get(1).or_else(|| path.first())?;
    let pick = pick.trim();
    (!pick.is_empty()).then(|| pick.to_owned())
}

/// A directory holding `reviews*.json` (reviewerID, asin, overall,
/// unixReviewTime) and `meta*.json` (asin plus a category path), one JSON
/// object per line.
pub fn load_amazon(dir: &Path) -> Result<RawDataset> {
    let mut interactions = Vec::new();
    for path in json_files(dir, "reviews")? {
        for (n, review) in json_lines(&path)?.into_iter().enumerate() {
            let field = |name: &str| {
                review
                    .get(name)
                    .with_context(|| format!("{}:{}: missing {name}", path.display(), n + 1))
            };
            let user = field("reviewerID")?.as_str().context("reviewerID is not a string")?;
            let item = field("asin")?.as_str().context("asin is not a string")?;
            let value = field("overall")?.as_f64().context("overall is not a number")?;
            let timestamp = review.get("unixReviewTime").and_then(Value::as_i64);
            interactions.push(RawInteraction {
                user: user.to_owned(),
                item: item.to_owned(),
                value,
                timestamp,
            });
        }
    }
    let mut categories = Vec::new();
    for path in json_files(dir, "meta")? {
        for meta in json_lines(&path)? {
            let (Some(asin), Some(category)) = (meta.get("asin").and_then(Value::as_str), amazon_category(&meta)) else {
                continue;
            };
            categories.push(RawCategory {
                item: asin.to_owned(),
                category,
            });
        }
    }
    Ok(RawDataset { interactions, categories })
}

fn tsv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .quoting(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))
}

/// `interactions.tsv` (user, item, value, timestamp; timestamp may be
/// empty) and `categories.tsv` (item, category), both with header rows.
pub fn load_canonical(dir: &Path) -> Result<RawDataset> {
    let path = dir.join(INTERACTIONS_FILE);
    let mut interactions = Vec::new();
    for (n, row) in tsv_reader(&path)?.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), n + 2))?;
        if row.len() != 4 {
            bail!("{}: row {}: expected 4 columns", path.display(), n + 2);
        }
        let value: f64 = row[2]
            .trim()
            .parse()
            .with_context(|| format!("{}: row {}: bad value", path.display(), n + 2))?;
        let timestamp = match row[3].trim() {
            "" => None,
            t => Some(t.parse().with_context(|| format!("{}: row {}: bad timestamp", path.display(), n + 2))?),
        };
        interactions.push(RawInteraction {
            user: row[0].to_owned(),
            item: row[1].to_owned(),
            value,
            timestamp,
        });
    }
    let path = dir.join(CATEGORIES_FILE);
    let mut categories = Vec::new();
    for (n, row) in tsv_reader(&path)?.records().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), n + 2))?;
        if row.len() != 2 {
            bail!("{}: row {}: expected 2 columns", path.display(), n + 2);
        }
        categories.push(RawCategory {
            item: row[0].to_owned(),
            category: row[1].to_owned(),
        });
    }
    Ok(RawDataset { interactions, categories })
}

pub fn write_canonical(dir: &Path, data: &RawDataset) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(INTERACTIONS_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "user\titem\tvalue\ttimestamp")?;
    for r in &data.interactions {
        let ts = r.timestamp.map(|t| t.to_string()).unwrap_or_default();
        writeln!(out, "{}\t{}\t{}\t{}", r.user, r.item, r.value, ts)?;
    }
    out.flush()?;
    let path = dir.join(CATEGORIES_FILE);
    let mut out = std::io::BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(out, "item\tcategory")?;
    for c in &data.categories {
        writeln!(out, "{}\t{}", c.item, c.category)?;
    }
    out.flush()?;
    Ok(())
}
