//! VWSD instances and gold labels.
//!
//! The on-disk layout is two files: a tab-separated data file with one instance
//! per line (`target_word`, `full_phrase`, then ten candidate image ids) and a gold
//! file holding one image id per line, aligned with the data file.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::normalize_whitespace;

/// Number of candidate images in every instance.
pub const NUM_CANDIDATES: usize = 10;

const DATA_COLUMNS: usize = 2 + NUM_CANDIDATES;
const ID_WIDTH: usize = 6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} tab-separated columns, found {found}")]
    ColumnCount {
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("line {line}: gold id {gold:?} is not among the candidates")]
    GoldNotCandidate { line: usize, gold: String },
    #[error("line {line}: candidate {id:?} appears more than once")]
    DuplicateCandidate { line: usize, id: String },
    #[error("line {line}: {what} is empty")]
    EmptyField { line: usize, what: &'static str },
    #[error("data file has {data} lines but gold file has {gold}")]
    LineCountMismatch { data: usize, gold: usize },
}

/// One disambiguation problem.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VwsdInstance {
    pub instance_id: String,
    pub target_word: String,
    pub context_word: String,
    pub full_phrase: String,
    pub candidate_ids: Vec<String>,
    pub gold_id: String,
}

impl VwsdInstance {
    /// Builds an instance and checks its invariants. `line` is only used for error messages.
    pub fn new(
        instance_id: String,
        target_word: &str,
        full_phrase: &str,
        candidate_ids: Vec<String>,
        gold_id: String,
        line: usize,
    ) -> Result<Self, DatasetError> {
        let full_phrase = normalize_whitespace(full_phrase);
        if full_phrase.is_empty() {
            return Err(DatasetError::EmptyField {
                line,
                what: "full phrase",
            });
        }
        if candidate_ids.len() != NUM_CANDIDATES {
            return Err(DatasetError::ColumnCount {
                line,
                expected: DATA_COLUMNS,
                found: candidate_ids.len() + 2,
            });
        }
        let mut seen = HashSet::with_capacity(NUM_CANDIDATES);
        for id in &candidate_ids {
            if id.is_empty() {
                return Err(DatasetError::EmptyField {
                    line,
                    what: "candidate id",
                });
            }
            if !seen.insert(id.as_str()) {
                return Err(DatasetError::DuplicateCandidate {
                    line,
                    id: id.clone(),
                });
            }
        }
        if !seen.contains(gold_id.as_str()) {
            return Err(DatasetError::GoldNotCandidate {
                line,
                gold: gold_id,
            });
        }
        let target_word = normalize_whitespace(target_word);
        let context_word = derive_context(&target_word, &full_phrase);
        Ok(Self {
            instance_id,
            target_word,
            context_word,
            full_phrase,
            candidate_ids,
            gold_id,
        })
    }

    /// 0-based position of the gold image among the candidates.
    pub fn gold_position(&self) -> usize {
        self.candidate_ids
            .iter()
            .position(|c| *c == self.gold_id)
            .expect("gold id validated at construction")
    }

    pub fn candidate_position(&self, id: &str) -> Option<usize> {
        self.candidate_ids.iter().position(|c| c == id)
    }
}

/// Removes the first occurrence of the target word's tokens from the phrase.
/// Falls back to the whole phrase when the target does not occur in it.
fn derive_context(target: &str, phrase: &str) -> String {
    let phrase_tokens: Vec<&str> = phrase.split(' ').collect();
    let target_tokens: Vec<&str> = target.split_whitespace().collect();
    if target_tokens.is_empty() || target_tokens.len() > phrase_tokens.len() {
        return phrase.to_string();
    }
    let found = phrase_tokens
        .windows(target_tokens.len())
        .position(|w| w == target_tokens.as_slice());
    match found {
        Some(start) => phrase_tokens[..start]
            .iter()
            .chain(&phrase_tokens[start + target_tokens.len()..])
            .copied()
            .collect::<Vec<_>>()
            .join(" "),
        None => phrase.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Dataset {
    pub instances: Vec<VwsdInstance>,
    pub image_ids: BTreeSet<String>,
}

impl Dataset {
    pub fn from_instances(instances: Vec<VwsdInstance>) -> Self {
        let image_ids = instances
            .iter()
            .flat_map(|inst| inst.candidate_ids.iter().cloned())
            .collect();
        Self {
            instances,
            image_ids,
        }
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, instance_id: &str) -> Option<&VwsdInstance> {
        self.instances.iter().find(|i| i.instance_id == instance_id)
    }

    /// Parses the two-file layout from in-memory contents.
    pub fn parse(data: &str, gold: &str) -> Result<Self, DatasetError> {
        let data_lines = split_lines(data);
        let gold_lines = split_lines(gold);
        if data_lines.len() != gold_lines.len() {
            return Err(DatasetError::LineCountMismatch {
                data: data_lines.len(),
                gold: gold_lines.len(),
            });
        }
        let width = ID_WIDTH.max(data_lines.len().to_string().len());
        let mut instances = Vec::with_capacity(data_lines.len());
        for (idx, (row, gold)) in data_lines.iter().zip(&gold_lines).enumerate() {
            let line = idx + 1;
            let cols: Vec<&str> = row.split('\t').collect();
            if cols.len() != DATA_COLUMNS {
                return Err(DatasetError::ColumnCount {
                    line,
                    expected: DATA_COLUMNS,
                    found: cols.len(),
                });
            }
            let candidates = cols[2..].iter().map(|c| c.trim().to_string()).collect();
            instances.push(VwsdInstance::new(
                format!("{idx:0width$}"),
                cols[0],
                cols[1],
                candidates,
                gold.trim().to_string(),
                line,
            )?);
        }
        Ok(Self::from_instances(instances))
    }

    /// Serializes back into the `(data.tsv, gold.txt)` layout.
    pub fn to_tsv(&self) -> (String, String) {
        let mut data = String::new();
        let mut gold = String::new();
        for inst in &self.instances {
            data.push_str(&inst.target_word);
            data.push('\t');
            data.push_str(&inst.full_phrase);
            for id in &inst.candidate_ids {
                data.push('\t');
                data.push_str(id);
            }
            data.push('\n');
            gold.push_str(&inst.gold_id);
            gold.push('\n');
        }
        (data, gold)
    }
}

fn split_lines(s: &str) -> Vec<&str> {
    let mut lines: Vec<&str> = s
        .split('\n')
        .map(|l| l.strip_suffix('\r').unwrap_or(l))
        .collect();
    if lines.last() == Some(&"") {
        lines.pop();
    }
    lines
}

fn read(path: &Path) -> Result<String, DatasetError> {
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a dataset from `data.tsv` and `gold.txt`.
pub fn load_dataset(data_path: &Path, gold_path: &Path) -> Result<Dataset, DatasetError> {
    Dataset::parse(&read(data_path)?, &read(gold_path)?)
}
