//! Corpus schema: class vocabulary, video entries, manifests and fold plans.
//!
//! # Manifest format
//!
//! A manifest is UTF-8 JSON Lines. The first record is the header, every
//! following record describes one video:
//!
//! ```text
//! {"name":"instaindoor","classes":["Cafe","Bar",...]}
//! {"id":"insta-cafe-00001","uri":"instaindoor/cafe/00001.mp4","label":"Cafe","split":"train"}
//! ```
//!
//! Header fields are `name` and `classes`; entry fields are `id`, `uri`,
//! `label` and `split` (`"train"` or `"test"`). Unknown fields are rejected.
//! Blank lines and lines starting with `#` are ignored. Line numbers in parse
//! errors are 1-based and count every physical line.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::store;

/// Validation fraction of the train split in every fold.
pub const VALIDATION_FRACTION: f64 = 0.2;
pub const DEFAULT_FOLDS: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct ClassVocabulary {
    names: Vec<String>,
}

impl ClassVocabulary {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Validation("class vocabulary is empty".into()));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.trim().is_empty() {
                return Err(Error::Validation("class names must be non-empty".into()));
            }
            if !seen.insert(n.as_str()) {
                return Err(Error::Validation(format!("duplicate class name '{n}'")));
            }
        }
        Ok(Self { names })
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

impl TryFrom<Vec<String>> for ClassVocabulary {
    type Error = Error;
    fn try_from(names: Vec<String>) -> Result<Self> {
        Self::new(names)
    }
}

impl From<ClassVocabulary> for Vec<String> {
    fn from(v: ClassVocabulary) -> Self {
        v.names
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoEntry {
    pub id: String,
    pub uri: String,
    pub label: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    name: String,
    classes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub name: String,
    pub vocabulary: ClassVocabulary,
    pub entries: Vec<VideoEntry>,
}

/// Ids double as cache directory names, so they must be path-safe.
fn check_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && !id.starts_with(".tmp-")
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.' | '#'));
    if ok {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "entry id '{id}' must be non-empty and use only [A-Za-z0-9._#-]"
        )))
    }
}

impl DatasetManifest {
    pub fn new(
        name: impl Into<String>,
        vocabulary: ClassVocabulary,
        entries: Vec<VideoEntry>,
    ) -> Result<Self> {
        let m = Self {
            name: name.into(),
            vocabulary,
            entries,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() {
            return Err(Error::Validation("empty manifest".into()));
        }
        let mut ids = HashSet::with_capacity(self.entries.len());
        for e in &self.entries {
            check_id(&e.id)?;
            if !ids.insert(e.id.as_str()) {
                return Err(Error::Validation(format!("duplicate id '{}'", e.id)));
            }
            if self.vocabulary.index_of(&e.label).is_none() {
                return Err(Error::Validation(format!(
                    "entry '{}' has label '{}' which is not in the class vocabulary",
                    e.id, e.label
                )));
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut header: Option<ManifestHeader> = None;
        let mut entries = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |e: serde_json::Error| Error::Parse {
                line: line_no,
                message: e.to_string(),
            };
            if header.is_none() {
                header = Some(serde_json::from_str(line).map_err(parse_err)?);
            } else {
                entries.push(serde_json::from_str::<VideoEntry>(line).map_err(parse_err)?);
            }
        }
        let header = header.ok_or_else(|| Error::Validation("empty manifest".into()))?;
        let vocabulary = ClassVocabulary::new(header.classes)?;
        Self::new(header.name, vocabulary, entries)
    }

    pub fn to_jsonl(&self) -> String {
        let header = ManifestHeader {
            name: self.name.clone(),
            classes: self.vocabulary.names().to_vec(),
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        store::atomic_write(path, self.to_jsonl().as_bytes())
    }

    pub fn label_index(&self, entry: &VideoEntry) -> usize {
        self.vocabulary
            .index_of(&entry.label)
            .expect("validated manifest labels are in the vocabulary")
    }

    pub fn entry(&self, id: &str) -> Option<&VideoEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    /// Reassigns labels by a seeded shuffle of the label column, keeping the
    /// class marginals but breaking any link between content and label.
    pub fn with_permuted_labels(&self, seed: u64) -> Self {
        let mut labels: Vec<String> = self.entries.iter().map(|e| e.label.clone()).collect();
        labels.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let entries = self
            .entries
            .iter()
            .zip(labels)
            .map(|(e, label)| VideoEntry {
                label,
                ..e.clone()
            })
            .collect();
        Self {
            name: format!("{}-permuted-{seed}", self.name),
            vocabulary: self.vocabulary.clone(),
            entries,
        }
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let bytes = store::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| Error::Parse {
        line: 0,
        message: format!("manifest is not valid UTF-8: {e}"),
    })?;
    DatasetManifest::parse(&text)
}

/// Per-class entry counts for both splits, in vocabulary order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassDistribution {
    pub classes: Vec<String>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl ClassDistribution {
    pub fn count(&self, class: &str, split: Split) -> usize {
        let Some(i) = self.classes.iter().position(|c| c == class) else {
            return 0;
        };
        match split {
            Split::Train => self.train[i],
            Split::Test => self.test[i],
        }
    }

    pub fn class_total(&self, class: &str) -> usize {
        self.count(class, Split::Train) + self.count(class, Split::Test)
    }

    pub fn split_total(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train.iter().sum(),
            Split::Test => self.test.iter().sum(),
        }
    }

    pub fn total(&self) -> usize {
        self.split_total(Split::Train) + self.split_total(Split::Test)
    }
}

impl fmt::Display for ClassDistribution {
    /// One column per class plus a total column; rows Train, Test, Total.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let widths: Vec<usize> = self.classes.iter().map(|c| c.len().max(5)).collect();
        write!(f, "{:<6}", "Class")?;
        for (c, w) in self.classes.iter().zip(&widths) {
            write!(f, " | {c:>w$}")?;
        }
        writeln!(f, " | {:>5}", "Total")?;
        let row = |f: &mut fmt::Formatter<'_>, name: &str, vals: &[usize]| -> fmt::Result {
            write!(f, "{name:<6}")?;
            for (v, w) in vals.iter().zip(&widths) {
                write!(f, " | {v:>w$}")?;
            }
            writeln!(f, " | {:>5}", vals.iter().sum::<usize>())
        };
        row(f, "Train", &self.train)?;
        row(f, "Test", &self.test)?;
        let totals: Vec<usize> = self.train.iter().zip(&self.test).map(|(a, b)| a + b).collect();
        row(f, "Total", &totals)
    }
}

pub fn class_distribution(manifest: &DatasetManifest) -> ClassDistribution {
    let n = manifest.vocabulary.size();
    let mut train = vec![0; n];
    let mut test = vec![0; n];
    for e in &manifest.entries {
        let i = manifest.label_index(e);
        match e.split {
            Split::Train => train[i] += 1,
            Split::Test => test[i] += 1,
        }
    }
    ClassDistribution {
        classes: manifest.vocabulary.names().to_vec(),
        train,
        test,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train_ids: Vec<String>,
    pub val_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

/// Size of the validation window for a train split of `n` entries.
pub fn validation_size(n: usize) -> usize {
    let v = (VALIDATION_FRACTION * n as f64).round() as usize;
    v.clamp(1, n.saturating_sub(1).max(1))
}

/// Seeded, unstratified K-fold plan over the train split.
///
/// The sorted train ids are shuffled once; fold `f` takes the validation
/// window of `validation_size(n)` ids starting at offset `f * n / k`
/// (wrapping), and trains on the rest.
pub fn make_folds(manifest: &DatasetManifest, k: usize, seed: u64) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Validation(format!("k must be at least 2, got {k}")));
    }
    let mut ids: Vec<String> = manifest.split(Split::Train).map(|e| e.id.clone()).collect();
    let n = ids.len();
    if n < k {
        return Err(Error::TooFewEntries { needed: k, found: n });
    }
    ids.sort();
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let v = validation_size(n);
    let folds = (0..k)
        .map(|f| {
            let start = f * n / k;
            let in_val: HashSet<usize> = (0..v).map(|j| (start + j) % n).collect();
            let mut train_ids = Vec::with_capacity(n - v);
            let mut val_ids = Vec::with_capacity(v);
            for (i, id) in ids.iter().enumerate() {
                if in_val.contains(&i) {
                    val_ids.push(id.clone());
                } else {
                    train_ids.push(id.clone());
                }
            }
            train_ids.sort();
            val_ids.sort();
            Fold { train_ids, val_ids }
        })
        .collect();
    Ok(FoldPlan { k, seed, folds })
}

impl FoldPlan {
    /// Checks the union/disjointness/size invariants against a manifest.
    pub fn check(&self, manifest: &DatasetManifest) -> Result<()> {
        let all: HashSet<&str> = manifest.split(Split::Train).map(|e| e.id.as_str()).collect();
        let expected_val = validation_size(all.len());
        for (i, fold) in self.folds.iter().enumerate() {
            let train: HashSet<&str> = fold.train_ids.iter().map(String::as_str).collect();
            let val: HashSet<&str> = fold.val_ids.iter().map(String::as_str).collect();
            if !train.is_disjoint(&val) {
                return Err(Error::Validation(format!("fold {i}: train and val overlap")));
            }
            let union: HashSet<&str> = train.union(&val).copied().collect();
            if union != all {
                return Err(Error::Validation(format!(
                    "fold {i}: train ∪ val differs from the train split"
                )));
            }
            if val.len().abs_diff(expected_val) > 1 {
                return Err(Error::Validation(format!(
                    "fold {i}: {} validation ids, expected {expected_val}",
                    val.len()
                )));
            }
        }
        Ok(())
    }
}
