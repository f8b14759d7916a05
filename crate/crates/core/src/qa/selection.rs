//! In-context example selection.
//!
//! `top` takes the k instances whose full-phrase embeddings are closest (cosine) to the
//! query's and orders them most similar first; `inverse_top` is the same list reversed.
//! `random` draws k instances uniformly without replacement and keeps dataset order.
//! The query itself is never selected.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{OptionLetter, QaError};
use crate::dataset::{Dataset, VwsdInstance};
use crate::vector_store::{similarity, EmbeddingStore, SimilarityMeasure};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    #[default]
    Random,
    Top,
    InverseTop,
}

impl SelectionStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionStrategy::Random => "random",
            SelectionStrategy::Top => "top",
            SelectionStrategy::InverseTop => "inverse-top",
        }
    }
}

impl fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(SelectionStrategy::Random),
            "top" => Ok(SelectionStrategy::Top),
            "inverse-top" | "inverse_top" => Ok(SelectionStrategy::InverseTop),
            other => Err(format!(
                "unknown selection strategy {other:?} (expected random, top or inverse-top)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InContextConfig {
    pub k: usize,
    pub strategy: SelectionStrategy,
    pub seed: u64,
    /// Model whose text embeddings of full phrases drive `top` / `inverse_top`.
    pub embedding_model: String,
}

fn phrase_vector<'a>(
    store: &'a EmbeddingStore,
    model: &str,
    inst: &VwsdInstance,
) -> Result<&'a [f32], QaError> {
    store
        .text(model, &inst.full_phrase)
        .map(|r| r.vector.as_slice())
        .ok_or_else(|| QaError::MissingPhraseEmbedding {
            instance_id: inst.instance_id.clone(),
            model: model.to_string(),
            phrase: inst.full_phrase.clone(),
        })
}

/// Per-query RNG stream so results do not depend on processing order.
fn query_rng(seed: u64, query_id: &str) -> ChaCha8Rng {
    let mut state = seed;
    for b in query_id.bytes() {
        state = state.wrapping_mul(0x100_0000_01b3).wrapping_add(u64::from(b));
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Picks `config.k` solved examples for `query`, each with its gold letter.
pub fn select_in_context<'a>(
    query: &VwsdInstance,
    dataset: &'a Dataset,
    store: &EmbeddingStore,
    config: &InContextConfig,
) -> Result<Vec<(&'a VwsdInstance, OptionLetter)>, QaError> {
    let pool: Vec<&VwsdInstance> = dataset
        .instances
        .iter()
        .filter(|i| i.instance_id != query.instance_id)
        .collect();
    if config.k > pool.len() {
        return Err(QaError::TooManyShots {
            k: config.k,
            pool: pool.len(),
        });
    }
    if config.k == 0 {
        return Ok(Vec::new());
    }
    let chosen: Vec<&VwsdInstance> = match config.strategy {
        SelectionStrategy::Random => {
            let mut rng = query_rng(config.seed, &query.instance_id);
            let mut picked = index::sample(&mut rng, pool.len(), config.k).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| pool[i]).collect()
        }
        SelectionStrategy::Top | SelectionStrategy::InverseTop => {
            let q = phrase_vector(store, &config.embedding_model, query)?;
            let mut scored = Vec::with_capacity(pool.len());
            for inst in &pool {
                let v = phrase_vector(store, &config.embedding_model, inst)?;
                let s = similarity(q, v, SimilarityMeasure::Cosine).map_err(|source| {
                    QaError::Similarity {
                        instance_id: inst.instance_id.clone(),
                        source,
                    }
                })?;
                scored.push((*inst, s));
            }
            // stable: equal cosines keep dataset order
            scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
            let mut top: Vec<&VwsdInstance> =
                scored.into_iter().take(config.k).map(|(i, _)| i).collect();
            if config.strategy == SelectionStrategy::InverseTop {
                top.reverse();
            }
            top
        }
    };
    Ok(chosen
        .into_iter()
        .map(|inst| {
            let letter = OptionLetter::from_index(inst.gold_position()).expect("ten candidates");
            (inst, letter)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vector_store::{EmbeddingKind, EmbeddingRecord, text_key};

    fn dataset(phrases: &[&str]) -> Dataset {
        let instances = phrases
            .iter()
            .enumerate()
            .map(|(n, p)| {
                let ids: Vec<String> = (0..10).map(|i| format!("i{n}_{i}")).collect();
                let gold = ids[n % 10].clone();
                VwsdInstance::new(format!("{n:06}"), p.split(' ').next().unwrap(), p, ids, gold, n + 1)
                    .unwrap()
            })
            .collect();
        Dataset::from_instances(instances)
    }

    fn store(phrases: &[&str], vectors: &[[f32; 2]]) -> EmbeddingStore {
        EmbeddingStore::from_records(phrases.iter().zip(vectors).map(|(p, v)| EmbeddingRecord {
            key: text_key(p),
            kind: EmbeddingKind::Text,
            model: "align".into(),
            dim: 2,
            vector: v.to_vec(),
        }))
        .unwrap()
    }

    fn config(k: usize, strategy: SelectionStrategy) -> InContextConfig {
        InContextConfig {
            k,
            strategy,
            seed: 7,
            embedding_model: "align".into(),
        }
    }

    const PHRASES: [&str; 6] = ["q one", "a two", "b three", "c four", "d five", "e six"];

    fn ids(sel: &[(&VwsdInstance, OptionLetter)]) -> Vec<String> {
        sel.iter().map(|(i, _)| i.instance_id.clone()).collect()
    }

    #[test]
    fn top_and_inverse() {
        let ds = dataset(&PHRASES);
        // query along x; others at increasing angles
        let st = store(&PHRASES, &[[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [1.0, 1.0], [1.0, 0.5], [-1.0, 0.0]]);
        let q = &ds.instances[0];
        let top = select_in_context(q, &ds, &st, &config(3, SelectionStrategy::Top)).unwrap();
        assert_eq!(ids(&top), ["000002", "000004", "000003"]);
        let inv = select_in_context(q, &ds, &st, &config(3, SelectionStrategy::InverseTop)).unwrap();
        assert_eq!(ids(&inv), ["000003", "000004", "000002"]);
        // gold letters follow the gold position
        assert_eq!(top[0].1.index(), 2);
    }

    #[test]
    fn k1_is_nearest() {
        let ds = dataset(&PHRASES);
        let st = store(&PHRASES, &[[1.0, 0.0], [0.0, 1.0], [1.0, 0.1], [1.0, 1.0], [1.0, 0.5], [-1.0, 0.0]]);
        let top = select_in_context(&ds.instances[5], &ds, &st, &config(1, SelectionStrategy::Top)).unwrap();
        assert_eq!(ids(&top), ["000001"]);
    }

    #[test]
    fn cosine_ties_follow_dataset_order() {
        let ds = dataset(&PHRASES);
        let st = store(&PHRASES, &[[1.0, 0.0]; 6]);
        let top = select_in_context(&ds.instances[2], &ds, &st, &config(4, SelectionStrategy::Top)).unwrap();
        assert_eq!(ids(&top), ["000000", "000001", "000003", "000004"]);
    }

    #[test]
    fn random_is_seeded_and_ordered() {
        let ds = dataset(&PHRASES);
        let st = EmbeddingStore::new();
        let q = &ds.instances[3];
        let a = select_in_context(q, &ds, &st, &config(3, SelectionStrategy::Random)).unwrap();
        let b = select_in_context(q, &ds, &st, &config(3, SelectionStrategy::Random)).unwrap();
        assert_eq!(ids(&a), ids(&b));
        let got = ids(&a);
        let mut sorted = got.clone();
        sorted.sort();
        assert_eq!(got, sorted);
        assert!(!got.contains(&q.instance_id));
    }

    #[test]
    fn errors() {
        let ds = dataset(&PHRASES);
        let st = store(&PHRASES[..5], &[[1.0, 0.0]; 5]);
        let q = &ds.instances[0];
        assert!(matches!(
            select_in_context(q, &ds, &st, &config(6, SelectionStrategy::Random)),
            Err(QaError::TooManyShots { k: 6, pool: 5 })
        ));
        assert_eq!(
            select_in_context(q, &ds, &st, &config(5, SelectionStrategy::Random)).unwrap().len(),
            5
        );
        let err = select_in_context(q, &ds, &st, &config(2, SelectionStrategy::Top)).unwrap_err();
        assert!(matches!(err, QaError::MissingPhraseEmbedding { ref instance_id, .. } if instance_id == "000005"));
    }

    #[test]
    fn strategy_names() {
        assert_eq!("inverse-top".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::InverseTop);
        assert_eq!("top".parse::<SelectionStrategy>().unwrap(), SelectionStrategy::Top);
        assert!("best".parse::<SelectionStrategy>().is_err());
    }
}
