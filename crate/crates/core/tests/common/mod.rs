#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vwsd::dataset::{Dataset, VwsdInstance};
use vwsd::vector_store::{text_key, EmbeddingKind, EmbeddingRecord, EmbeddingStore, SimilarityMeasure};

pub const MODEL: &str = "synthetic";

pub fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn random_vector(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

pub fn image_record(id: &str, vector: Vec<f32>) -> EmbeddingRecord {
    EmbeddingRecord {
        key: id.to_string(),
        kind: EmbeddingKind::Image,
        model: MODEL.into(),
        dim: vector.len(),
        vector,
    }
}

pub fn text_record(text: &str, vector: Vec<f32>) -> EmbeddingRecord {
    EmbeddingRecord {
        key: text_key(text),
        kind: EmbeddingKind::Text,
        model: MODEL.into(),
        dim: vector.len(),
        vector,
    }
}

/// `n` instances with ten candidates each and random vectors of `dim` components.
/// Roughly one instance in five repeats a candidate vector under another id, so
/// exact score ties occur.
pub fn synthetic_batch(seed: u64, n: usize, dim: usize) -> (Dataset, EmbeddingStore) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut instances = Vec::new();
    for i in 0..n {
        let ids: Vec<String> = (0..10).map(|j| format!("img_{i}_{j}")).collect();
        let mut vectors: Vec<Vec<f32>> = (0..10).map(|_| random_vector(&mut rng, dim)).collect();
        if rng.gen_ratio(1, 5) {
            let a = rng.gen_range(0..10);
            let b = rng.gen_range(0..10);
            vectors[b] = vectors[a].clone();
        }
        for (id, v) in ids.iter().zip(vectors) {
            records.push(image_record(id, v));
        }
        let phrase = format!("word{i} sense{i}");
        records.push(text_record(&phrase, random_vector(&mut rng, dim)));
        let gold = ids[rng.gen_range(0..10)].clone();
        instances.push(
            VwsdInstance::new(format!("{i:06}"), &format!("word{i}"), &phrase, ids, gold, i + 1).unwrap(),
        );
    }
    (Dataset::from_instances(instances), EmbeddingStore::from_records(records).unwrap())
}

/// Independent similarity: plain f64 loops, distances negated.
pub fn oracle_similarity(u: &[f32], v: &[f32], measure: SimilarityMeasure) -> f64 {
    let u: Vec<f64> = u.iter().map(|&x| x as f64).collect();
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    match measure {
        SimilarityMeasure::Cosine => {
            let mut dot = 0.0;
            let mut a = 0.0;
            let mut b = 0.0;
            for k in 0..u.len() {
                dot += u[k] * v[k];
                a += u[k] * u[k];
                b += v[k] * v[k];
            }
            dot / (a.sqrt() * b.sqrt())
        }
        SimilarityMeasure::Euclidean => {
            let mut s = 0.0;
            for k in 0..u.len() {
                s += (u[k] - v[k]) * (u[k] - v[k]);
            }
            -s.sqrt()
        }
        SimilarityMeasure::Manhattan => {
            let mut s = 0.0;
            for k in 0..u.len() {
                s += (u[k] - v[k]).abs();
            }
            -s
        }
    }
}

/// Brute-force ranking: repeatedly take the highest remaining score, earliest
/// position first among equals.
pub fn oracle_order(scores: &[f64]) -> Vec<usize> {
    let mut left: Vec<usize> = (0..scores.len()).collect();
    let mut order = Vec::new();
    while !left.is_empty() {
        let mut best = 0;
        for k in 1..left.len() {
            if scores[left[k]] > scores[left[best]] {
                best = k;
            }
        }
        order.push(left.remove(best));
    }
    order
}

/// Classic dynamic-programming edit distance over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}
