//! Candidate ranking by phrase–image similarity, with the optional majority-bias penalty.
//!
//! The penalty follows a two-pass protocol over a whole evaluation batch:
//! rank every instance without penalty, count how often each image comes out on top
//! ([`compute_penalty`]), then re-rank with `score = sim − p(i)` ([`rerank_with_penalty`]).

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::VwsdInstance;
use crate::vector_store::{similarity, EmbeddingStore, SimilarityMeasure, VectorError};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("instance {instance_id}: no {model:?} embedding for candidate image {image_id:?}")]
    MissingEmbedding {
        instance_id: String,
        image_id: String,
        model: String,
    },
    #[error("instance {instance_id}: phrase embedding has dim {phrase_dim} but model {model:?} images have dim {image_dim}")]
    DimMismatch {
        instance_id: String,
        model: String,
        phrase_dim: usize,
        image_dim: usize,
    },
    #[error("instance {instance_id}: {source}")]
    Similarity {
        instance_id: String,
        #[source]
        source: VectorError,
    },
    #[error("penalty needs at least one ranking in the batch")]
    EmptyBatch,
    #[error("penalty weight must be a finite non-negative number, got {0}")]
    InvalidLambda(f64),
    #[error("instance {0}: penalty must be computed from unpenalized rankings")]
    AlreadyPenalized(String),
    #[error("instance {0}: ranking does not match the instance candidates")]
    CandidateMismatch(String),
}

/// Per-image penalty `p(i) = λ · n_top(i) / N` for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltyTable {
    pub lambda: f64,
    /// How many phrases of the batch ranked each image first.
    pub counts: BTreeMap<String, usize>,
    /// Number of phrases in the batch.
    pub total: usize,
    pub values: BTreeMap<String, f64>,
}

impl PenaltyTable {
    /// Penalty for an image; zero for images never ranked first.
    pub fn penalty(&self, image_id: &str) -> f64 {
        self.values.get(image_id).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub image_id: String,
    pub raw_sim: f64,
    pub final_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingResult {
    pub instance_id: String,
    pub phrase_used: String,
    pub measure: SimilarityMeasure,
    pub penalized: bool,
    pub ranked: Vec<RankedCandidate>,
    /// 1-based rank of the gold image.
    pub gold_rank: usize,
}

impl RankingResult {
    pub fn top(&self) -> &str {
        &self.ranked[0].image_id
    }
}

/// Sorts candidates by `raw − penalty` descending; ties keep the input (candidate) order.
///
/// Returns the ranked list. `penalties`, when given, is aligned with `candidates`.
pub fn rank_scores(
    candidates: &[(String, f64)],
    penalties: Option<&[f64]>,
) -> Vec<RankedCandidate> {
    let mut ranked: Vec<RankedCandidate> = candidates
        .iter()
        .enumerate()
        .map(|(idx, (id, raw))| RankedCandidate {
            image_id: id.clone(),
            raw_sim: *raw,
            final_score: match penalties {
                Some(p) => raw - p[idx],
                None => *raw,
            },
        })
        .collect();
    // stable sort keeps candidate order among equal scores
    ranked.sort_by(|a, b| {
        b.final_score
            .partial_cmp(&a.final_score)
            .unwrap_or(Ordering::Equal)
    });
    ranked
}

fn gold_rank_of(ranked: &[RankedCandidate], gold_id: &str) -> usize {
    ranked
        .iter()
        .position(|c| c.image_id == gold_id)
        .map(|p| p + 1)
        .expect("gold id is one of the candidates")
}

/// Ranks the ten candidates of `instance` against a phrase embedding.
///
/// Candidate image embeddings are looked up under `model`, which must be the
/// model that produced `phrase_vector`.
#[allow(clippy::too_many_arguments)]
pub fn rank_candidates(
    instance: &VwsdInstance,
    phrase_used: &str,
    phrase_vector: &[f32],
    model: &str,
    store: &EmbeddingStore,
    measure: SimilarityMeasure,
    penalty: Option<&PenaltyTable>,
) -> Result<RankingResult, RetrievalError> {
    let mut scored = Vec::with_capacity(instance.candidate_ids.len());
    for id in &instance.candidate_ids {
        let record = store
            .image(model, id)
            .ok_or_else(|| RetrievalError::MissingEmbedding {
                instance_id: instance.instance_id.clone(),
                image_id: id.clone(),
                model: model.to_string(),
            })?;
        if record.dim != phrase_vector.len() {
            return Err(RetrievalError::DimMismatch {
                instance_id: instance.instance_id.clone(),
                model: model.to_string(),
                phrase_dim: phrase_vector.len(),
                image_dim: record.dim,
            });
        }
        let sim = similarity(phrase_vector, &record.vector, measure).map_err(|source| {
            RetrievalError::Similarity {
                instance_id: instance.instance_id.clone(),
                source,
            }
        })?;
        scored.push((id.clone(), sim));
    }
    let penalties: Option<Vec<f64>> =
        penalty.map(|t| instance.candidate_ids.iter().map(|id| t.penalty(id)).collect());
    let ranked = rank_scores(&scored, penalties.as_deref());
    Ok(RankingResult {
        instance_id: instance.instance_id.clone(),
        phrase_used: phrase_used.to_string(),
        measure,
        penalized: penalty.is_some(),
        gold_rank: gold_rank_of(&ranked, &instance.gold_id),
        ranked,
    })
}

/// Counts rank-1 occurrences over an unpenalized batch and derives `p(i) = λ·n_top(i)/N`.
pub fn compute_penalty(
    rankings: &[RankingResult],
    lambda: f64,
) -> Result<PenaltyTable, RetrievalError> {
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(RetrievalError::InvalidLambda(lambda));
    }
    if rankings.is_empty() {
        return Err(RetrievalError::EmptyBatch);
    }
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in rankings {
        if r.penalized {
            return Err(RetrievalError::AlreadyPenalized(r.instance_id.clone()));
        }
        *counts.entry(r.top().to_string()).or_default() += 1;
    }
    let total = rankings.len();
    let values = counts
        .iter()
        .map(|(id, &n)| (id.clone(), lambda * n as f64 / total as f64))
        .collect();
    Ok(PenaltyTable {
        lambda,
        counts,
        total,
        values,
    })
}

/// Second pass: re-ranks an unpenalized result with the batch penalty, reusing its raw similarities.
pub fn rerank_with_penalty(
    plain: &RankingResult,
    instance: &VwsdInstance,
    table: &PenaltyTable,
) -> Result<RankingResult, RetrievalError> {
    if plain.penalized {
        return Err(RetrievalError::AlreadyPenalized(plain.instance_id.clone()));
    }
    let mut scored = Vec::with_capacity(instance.candidate_ids.len());
    for id in &instance.candidate_ids {
        let raw = plain
            .ranked
            .iter()
            .find(|c| &c.image_id == id)
            .map(|c| c.raw_sim)
            .ok_or_else(|| RetrievalError::CandidateMismatch(plain.instance_id.clone()))?;
        scored.push((id.clone(), raw));
    }
    let penalties: Vec<f64> = instance.candidate_ids.iter().map(|id| table.penalty(id)).collect();
    let ranked = rank_scores(&scored, Some(&penalties));
    Ok(RankingResult {
        instance_id: plain.instance_id.clone(),
        phrase_used: plain.phrase_used.clone(),
        measure: plain.measure,
        penalized: true,
        gold_rank: gold_rank_of(&ranked, &instance.gold_id),
        ranked,
    })
}
