//! Versioned TSV snapshot of a split corpus, so later stages reuse the
//! exact indexing and split of an earlier run.
//!
//! ```text
//! #taml-corpus v1
//! U <token>              one line per user, in index order
//! C <token>              one line per category
//! I <token> <category>   one line per item
//! R <user> <item> <train|test>   interactions, oldest first
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use taml_core::corpus::Record;
use taml_core::InteractionCorpus;

pub const HEADER: &str = "#taml-corpus v1";

fn check_token(kind: &str, token: &str) -> Result<()> {
    ensure!(
        !token.contains(['\t', '\n', '\r']),
        "{kind} token {token:?} contains a tab or line break and cannot be snapshotted"
    );
    Ok(())
}

pub fn to_string(corpus: &InteractionCorpus) -> Result<String> {
    let mut out = String::new();
    out.push_str(HEADER);
    out.push('\n');
    for u in corpus.user_tokens() {
        check_token("user", u)?;
        out.push_str(&format!("U\t{u}\n"));
    }
    for c in corpus.category_tokens() {
        check_token("category", c)?;
        out.push_str(&format!("C\t{c}\n"));
    }
    for (i, cat) in corpus.item_tokens().iter().zip(corpus.category_of_item()) {
        check_token("item", i)?;
        out.push_str(&format!("I\t{i}\t{cat}\n"));
    }
    for r in corpus.records() {
        let split = if r.test { "test" } else { "train" };
        out.push_str(&format!("R\t{}\t{}\t{split}\n", r.user, r.item));
    }
    Ok(out)
}

pub fn from_str(text: &str) -> Result<InteractionCorpus> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, HEADER)) => {}
        Some((_, other)) => bail!("unsupported snapshot header {other:?} (expected {HEADER:?})"),
        None => bail!("empty snapshot"),
    }
    let (mut users, mut categories, mut items, mut category_of_item, mut records) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let index = |field: &str, n: usize| -> Result<usize> {
        field.parse().with_context(|| format!("snapshot line {}: bad index {field:?}", n + 1))
    };
    for (n, line) in lines {
        let fields: Vec<&str> = line.split('\t').collect();
        match fields.as_slice() {
            ["U", token] => users.push(token.to_string()),
            ["C", token] => categories.push(token.to_string()),
            ["I", token, cat] => {
                items.push(token.to_string());
                category_of_item.push(index(cat, n)?);
            }
            ["R", user, item, split] => {
                let test = match *split {
                    "train" => false,
                    "test" => true,
                    other => bail!("snapshot line {}: split must be train or test, got {other:?}", n + 1),
                };
                records.push(Record {
                    user: index(user, n)?,
                    item: index(item, n)?,
                    test,
                });
            }
            [""] => {}
            _ => bail!("snapshot line {}: unrecognized record", n + 1),
        }
    }
    for (what, bound, values) in [
        ("category", categories.len(), &category_of_item),
        ("user", users.len(), &records.iter().map(|r| r.user).collect()),
        ("item", items.len(), &records.iter().map(|r| r.item).collect()),
    ] {
        if let Some(bad) = values.iter().find(|&&v| v >= bound) {
            bail!("snapshot references {what} {bad} but declares only {bound}");
        }
    }
    Ok(InteractionCorpus::from_records(users, items, categories, category_of_item, records)?)
}

pub fn write(path: &Path, corpus: &InteractionCorpus) -> Result<()> {
    let text = to_string(corpus)?;
    let mut file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    file.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read(path: &Path) -> Result<InteractionCorpus> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use taml_core::synthetic::{generate, SyntheticConfig};

    #[test]
    fn round_trip_preserves_split_and_indexing() {
        let corpus = generate(&SyntheticConfig::default()).unwrap().split(0.8, 3).unwrap();
        let text = to_string(&corpus).unwrap();
        let back = from_str(&text).unwrap();
        assert_eq!(back, corpus);
        assert_eq!(to_string(&back).unwrap(), text);
    }

    #[test]
    fn rejects_other_versions_and_bad_indices() {
        assert!(from_str("#taml-corpus v2\n").is_err());
        assert!(from_str("").is_err());
        let bad = format!("{HEADER}\nU\tu\nC\tc\nI\ti\t0\nR\t0\t3\ttrain\n");
        assert!(from_str(&bad).unwrap_err().to_string().contains("item 3"));
        let bad = format!("{HEADER}\nU\tu\nC\tc\nI\ti\t0\nR\t0\t0\tholdout\n");
        assert!(from_str(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = generate(&SyntheticConfig::default()).unwrap();
        let path = dir.path().join("corpus.tsv");
        write(&path, &corpus).unwrap();
        assert_eq!(read(&path).unwrap(), corpus);
    }
}
