//! Image captions exported by the captioning sidecar.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Captions per image under beam decoding.
pub const BEAM_CAPTIONS: usize = 10;

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("image {image_id:?} ({captioner}, {strategy}): expected {expected} captions, found {found}")]
    Cardinality {
        image_id: String,
        captioner: String,
        strategy: CaptionStrategy,
        expected: usize,
        found: usize,
    },
    #[error("image {image_id:?} ({captioner}, {strategy}): empty caption")]
    EmptyCaption {
        image_id: String,
        captioner: String,
        strategy: CaptionStrategy,
    },
    #[error("image {image_id:?} ({captioner}, {strategy}): duplicate entry with different captions")]
    ConflictingDuplicate {
        image_id: String,
        captioner: String,
        strategy: CaptionStrategy,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionStrategy {
    Greedy,
    Beam,
}

impl CaptionStrategy {
    pub fn expected_count(self) -> usize {
        match self {
            CaptionStrategy::Greedy => 1,
            CaptionStrategy::Beam => BEAM_CAPTIONS,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            CaptionStrategy::Greedy => "greedy",
            CaptionStrategy::Beam => "beam",
        }
    }
}

impl fmt::Display for CaptionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CaptionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "greedy" => Ok(CaptionStrategy::Greedy),
            "beam" => Ok(CaptionStrategy::Beam),
            other => Err(format!("unknown caption strategy {other:?} (expected greedy or beam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionSet {
    pub image_id: String,
    pub captioner: String,
    pub strategy: CaptionStrategy,
    pub captions: Vec<String>,
}

impl CaptionSet {
    pub fn validate(&self) -> Result<(), CaptionError> {
        let expected = self.strategy.expected_count();
        if self.captions.len() != expected {
            return Err(CaptionError::Cardinality {
                image_id: self.image_id.clone(),
                captioner: self.captioner.clone(),
                strategy: self.strategy,
                expected,
                found: self.captions.len(),
            });
        }
        if self.captions.iter().any(|c| c.is_empty()) {
            return Err(CaptionError::EmptyCaption {
                image_id: self.image_id.clone(),
                captioner: self.captioner.clone(),
                strategy: self.strategy,
            });
        }
        Ok(())
    }
}

/// Text that stands in for an image inside a QA prompt.
///
/// Greedy sets yield their single caption verbatim; beam sets are joined with `", "`.
pub fn caption_text(set: &CaptionSet) -> String {
    match set.strategy {
        CaptionStrategy::Greedy => set.captions[0].clone(),
        CaptionStrategy::Beam => set.captions.join(", "),
    }
}

type Key = (String, String, CaptionStrategy);

#[derive(Debug, Default, Clone)]
pub struct CaptionStore {
    sets: HashMap<Key, CaptionSet>,
}

impl CaptionStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.sets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sets.is_empty()
    }

    pub fn insert(&mut self, set: CaptionSet) -> Result<(), CaptionError> {
        set.validate()?;
        let key = (set.image_id.clone(), set.captioner.clone(), set.strategy);
        match self.sets.get(&key) {
            Some(existing) if *existing == set => Ok(()),
            Some(_) => Err(CaptionError::ConflictingDuplicate {
                image_id: set.image_id,
                captioner: set.captioner,
                strategy: set.strategy,
            }),
            None => {
                self.sets.insert(key, set);
                Ok(())
            }
        }
    }

    pub fn get(&self, image_id: &str, captioner: &str, strategy: CaptionStrategy) -> Option<&CaptionSet> {
        self.sets
            .get(&(image_id.to_string(), captioner.to_string(), strategy))
    }

    pub fn parse_jsonl(text: &str) -> Result<Self, CaptionError> {
        let mut store = Self::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let set: CaptionSet = serde_json::from_str(line).map_err(|e| CaptionError::Malformed {
                line: idx + 1,
                message: e.to_string(),
            })?;
            store.insert(set)?;
        }
        Ok(store)
    }
}

pub fn load_captions(path: &Path) -> Result<CaptionStore, CaptionError> {
    let text = fs::read_to_string(path).map_err(|source| CaptionError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    CaptionStore::parse_jsonl(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn beam(captions: Vec<String>) -> CaptionSet {
        CaptionSet {
            image_id: "img".into(),
            captioner: "blip-l".into(),
            strategy: CaptionStrategy::Beam,
            captions,
        }
    }

    #[test]
    fn loads_greedy_record() {
        let line = r#"{"image_id":"img1","captioner":"git-l","strategy":"greedy","captions":["a student gets a hug from a student."]}"#;
        let store = CaptionStore::parse_jsonl(line).unwrap();
        assert_eq!(store.len(), 1);
        let set = store.get("img1", "git-l", CaptionStrategy::Greedy).unwrap();
        assert_eq!(caption_text(set), "a student gets a hug from a student.");
        assert!(store.get("img1", "git-l", CaptionStrategy::Beam).is_none());
    }

    #[test]
    fn beam_needs_ten() {
        let nine: Vec<String> = (0..9).map(|i| format!("c{i}")).collect();
        assert!(matches!(
            beam(nine).validate(),
            Err(CaptionError::Cardinality {
                expected: 10,
                found: 9,
                ..
            })
        ));
        let mut greedy = beam(vec!["a".into(), "b".into()]);
        greedy.strategy = CaptionStrategy::Greedy;
        assert!(greedy.validate().is_err());
    }

    #[test]
    fn empty_caption_rejected() {
        let mut caps: Vec<String> = (0..10).map(|i| format!("c{i}")).collect();
        caps[4].clear();
        assert!(matches!(beam(caps).validate(), Err(CaptionError::EmptyCaption { .. })));
    }

    #[test]
    fn beam_join() {
        let caps: Vec<String> = (1..=10).map(|i| format!("c{i}")).collect();
        let text = caption_text(&beam(caps));
        assert_eq!(text, "c1, c2, c3, c4, c5, c6, c7, c8, c9, c10");
        assert_eq!(text.matches(", ").count(), 9);
    }

    #[test]
    fn beam_join_keeps_internal_commas() {
        let mut caps: Vec<String> = (1..=10).map(|i| format!("c{i}")).collect();
        caps[0] = "a large, thin, green plant".into();
        let text = caption_text(&beam(caps));
        assert!(text.starts_with("a large, thin, green plant, c2, "));
    }

    #[test]
    fn duplicates() {
        let caps: Vec<String> = (1..=10).map(|i| format!("c{i}")).collect();
        let mut store = CaptionStore::new();
        store.insert(beam(caps.clone())).unwrap();
        store.insert(beam(caps.clone())).unwrap();
        assert_eq!(store.len(), 1);
        let mut other = caps;
        other[0] = "different".into();
        assert!(matches!(
            store.insert(beam(other)),
            Err(CaptionError::ConflictingDuplicate { .. })
        ));
    }
}
