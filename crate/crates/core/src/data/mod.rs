//! N-ary tuple datasets: parsing, vocabularies, the filter index used by
//! filtered ranking, and statistics.
//!
//! On disk a dataset is a directory with `train.txt`, `valid.txt` and
//! `test.txt`. Each line holds a relation token followed by two or more
//! entity tokens, tab separated. Blank lines and `#` comments are skipped.

mod filter;
mod stats;
mod synthetic;

pub use filter::FilterIndex;
pub use stats::DatasetStats;
pub use synthetic::{synthetic_dataset, SyntheticSpec};

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing dataset file {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: malformed lines (need a relation and at least 2 entities): {}", format_lines(.lines))]
    Malformed { file: String, lines: Vec<(usize, String)> },
    #[error("{0} contains no tuples")]
    NoTuples(String),
    #[error("no tuples of arity {0} to extract")]
    EmptyExtraction(usize),
}

fn format_lines(lines: &[(usize, String)]) -> String {
    lines
        .iter()
        .take(10)
        .map(|(n, l)| format!("line {n}: {l:?}"))
        .collect::<Vec<_>>()
        .join("; ")
}

pub type Result<T> = std::result::Result<T, DataError>;

/// One fact `r(e_1, ..., e_n)` as vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KnowledgeTuple {
    pub relation: usize,
    pub entities: Vec<usize>,
}

impl KnowledgeTuple {
    pub fn arity(&self) -> usize {
        self.entities.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.txt",
            Split::Valid => "valid.txt",
            Split::Test => "test.txt",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split {other:?} (expected train, valid or test)")),
        }
    }
}

/// Name/id bijection with dense ids in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Interner {
    names: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Interner {
    pub fn intern(&mut self, name: &str) -> usize {
        if let Some(&id) = self.ids.get(name) {
            return id;
        }
        let id = self.names.len();
        self.names.push(name.to_owned());
        self.ids.insert(name.to_owned(), id);
        id
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.ids.get(name).copied()
    }

    pub fn name(&self, id: usize) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocab {
    pub entities: Interner,
    pub relations: Interner,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadOptions {
    /// Split on any run of whitespace instead of tabs only.
    pub permissive_whitespace: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub vocab: Vocab,
    pub train: Vec<KnowledgeTuple>,
    pub valid: Vec<KnowledgeTuple>,
    pub test: Vec<KnowledgeTuple>,
}

impl Dataset {
    pub fn split(&self, split: Split) -> &[KnowledgeTuple] {
        match split {
            Split::Train => &self.train,
            Split::Valid => &self.valid,
            Split::Test => &self.test,
        }
    }

    pub fn num_entities(&self) -> usize {
        self.vocab.entities.len()
    }

    pub fn num_relations(&self) -> usize {
        self.vocab.relations.len()
    }

    pub fn all_tuples(&self) -> impl Iterator<Item = &KnowledgeTuple> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    /// Tuple counts per arity over all three splits.
    pub fn arity_histogram(&self) -> BTreeMap<usize, usize> {
        let mut hist = BTreeMap::new();
        for t in self.all_tuples() {
            *hist.entry(t.arity()).or_insert(0) += 1;
        }
        hist
    }

    pub fn arities(&self, split: Split) -> BTreeSet<usize> {
        self.split(split).iter().map(KnowledgeTuple::arity).collect()
    }

    /// Parses tuples from text, interning names into `vocab`.
    pub fn parse_split(
        text: &str,
        file: &str,
        vocab: &mut Vocab,
        options: LoadOptions,
    ) -> Result<Vec<KnowledgeTuple>> {
        let mut tuples = Vec::new();
        let mut bad = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let tokens: Vec<&str> = if options.permissive_whitespace {
                line.split_whitespace().collect()
            } else {
                line.split('\t').collect()
            };
            if tokens.len() < 3 || tokens.iter().any(|t| t.is_empty()) {
                bad.push((idx + 1, line.to_owned()));
                continue;
            }
            let relation = vocab.relations.intern(tokens[0]);
            let entities = tokens[1..].iter().map(|e| vocab.entities.intern(e)).collect();
            tuples.push(KnowledgeTuple { relation, entities });
        }
        if !bad.is_empty() {
            return Err(DataError::Malformed {
                file: file.to_owned(),
                lines: bad,
            });
        }
        Ok(tuples)
    }

    /// Formats one tuple back into its on-disk line.
    pub fn format_tuple(&self, tuple: &KnowledgeTuple) -> String {
        let mut parts = vec![self.vocab.relations.name(tuple.relation).unwrap_or("?")];
        parts.extend(
            tuple
                .entities
                .iter()
                .map(|&e| self.vocab.entities.name(e).unwrap_or("?")),
        );
        parts.join("\t")
    }

    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|source| DataError::Io {
            path: dir.to_owned(),
            source,
        })?;
        for split in Split::ALL {
            let mut text = String::new();
            for t in self.split(split) {
                text.push_str(&self.format_tuple(t));
                text.push('\n');
            }
            let path = dir.join(split.file_name());
            fs::write(&path, text).map_err(|source| DataError::Io { path, source })?;
        }
        Ok(())
    }

    /// Keeps only tuples of one arity in every split. The vocabulary is
    /// re-derived from the surviving tuples.
    pub fn fixed_arity(&self, arity: usize) -> Result<Dataset> {
        let mut out = Dataset::default();
        for split in Split::ALL {
            let kept = self
                .split(split)
                .iter()
                .filter(|t| t.arity() == arity)
                .map(|t| {
                    let relation = out
                        .vocab
                        .relations
                        .intern(self.vocab.relations.name(t.relation).unwrap());
                    let entities = t
                        .entities
                        .iter()
                        .map(|&e| out.vocab.entities.intern(self.vocab.entities.name(e).unwrap()))
                        .collect();
                    KnowledgeTuple { relation, entities }
                })
                .collect();
            match split {
                Split::Train => out.train = kept,
                Split::Valid => out.valid = kept,
                Split::Test => out.test = kept,
            }
        }
        if out.all_tuples().next().is_none() {
            return Err(DataError::EmptyExtraction(arity));
        }
        Ok(out)
    }
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    load_dataset_with(dir, LoadOptions::default())
}

pub fn load_dataset_with(dir: &Path, options: LoadOptions) -> Result<Dataset> {
    let mut texts = Vec::with_capacity(3);
    for split in Split::ALL {
        let path = dir.join(split.file_name());
        if !path.is_file() {
            return Err(DataError::MissingFile(path));
        }
        let text = fs::read_to_string(&path).map_err(|source| DataError::Io {
            path: path.clone(),
            source,
        })?;
        texts.push(text);
    }
    let mut ds = Dataset::default();
    ds.train = Dataset::parse_split(&texts[0], "train.txt", &mut ds.vocab, options)?;
    ds.valid = Dataset::parse_split(&texts[1], "valid.txt", &mut ds.vocab, options)?;
    ds.test = Dataset::parse_split(&texts[2], "test.txt", &mut ds.vocab, options)?;
    if ds.train.is_empty() {
        return Err(DataError::NoTuples("train.txt".into()));
    }
    Ok(ds)
}
