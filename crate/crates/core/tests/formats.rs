mod common;

use std::fs;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{levenshtein, oracle_similarity, random_vector};
use vwsd::captions::{caption_text, load_captions, CaptionSet, CaptionStrategy};
use vwsd::qa::parser::{caption_similarity, normalize_for_match};
use vwsd::vector_store::{
    encode_binary, load_embeddings, similarity, text_key, EmbeddingKind, EmbeddingRecord, EmbeddingStore,
    SimilarityMeasure,
};

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn seeded_records(seed: u64, n: usize) -> Vec<EmbeddingRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (model, dim) = if i % 3 == 0 { ("clip-b", 4) } else { ("clip-l", 12) };
            let (kind, key) = if i % 2 == 0 {
                (EmbeddingKind::Image, format!("image.{i}.jpg"))
            } else {
                (EmbeddingKind::Text, text_key(&format!("phrase number {i} é")))
            };
            EmbeddingRecord {
                key,
                kind,
                model: model.into(),
                dim,
                vector: random_vector(&mut rng, dim),
            }
        })
        .collect()
}

#[test]
fn embeddings_round_trip_through_jsonl_and_binary() {
    let records = seeded_records(42, 1000);
    let dir = tempfile::tempdir().unwrap();
    let store = EmbeddingStore::from_records(records.clone()).unwrap();
    assert_eq!(store.len(), 1000);

    let jsonl = dir.path().join("emb.jsonl");
    fs::write(&jsonl, store.to_jsonl()).unwrap();
    let bin = dir.path().join("emb.bin");
    fs::write(&bin, encode_binary(&records)).unwrap();

    let from_jsonl = load_embeddings(&jsonl).unwrap();
    let from_bin = load_embeddings(&bin).unwrap();
    for loaded in [&from_jsonl, &from_bin] {
        assert_eq!(loaded.len(), 1000);
        for r in &records {
            let got = loaded.get(&r.model, r.kind, &r.key).unwrap();
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&got.vector), bits(&r.vector), "{}", r.key);
        }
    }
    assert_eq!(from_jsonl.to_jsonl(), from_bin.to_jsonl());
    assert_eq!(from_jsonl.dim("clip-b"), Some(4));
    assert_eq!(from_jsonl.dim("clip-l"), Some(12));
}

#[test]
fn truncated_binary_is_rejected() {
    let bytes = encode_binary(&seeded_records(1, 3));
    assert!(EmbeddingStore::parse_binary(&bytes[..bytes.len() - 2]).is_err());
}

#[test]
fn captions_fixture_loads_greedy_and_beam_sets() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = String::new();
    for i in 0..10 {
        let greedy = CaptionSet {
            image_id: format!("image.{i}.jpg"),
            captioner: "git-l".into(),
            strategy: CaptionStrategy::Greedy,
            captions: vec![format!("a photo of thing {i}")],
        };
        let beam = CaptionSet {
            strategy: CaptionStrategy::Beam,
            captions: (0..10).map(|b| format!("thing {i} view {b}")).collect(),
            ..greedy.clone()
        };
        for set in [greedy, beam] {
            lines.push_str(&serde_json::to_string(&set).unwrap());
            lines.push('\n');
        }
    }
    let path = dir.path().join("captions.jsonl");
    fs::write(&path, lines).unwrap();
    let store = load_captions(&path).unwrap();
    assert_eq!(store.len(), 20);
    let g = store.get("image.3.jpg", "git-l", CaptionStrategy::Greedy).unwrap();
    assert_eq!(caption_text(g), "a photo of thing 3");
    let b = store.get("image.3.jpg", "git-l", CaptionStrategy::Beam).unwrap();
    assert!(caption_text(b).starts_with("thing 3 view 0, thing 3 view 1, "));
    assert!(store.get("image.3.jpg", "blip", CaptionStrategy::Greedy).is_none());
}

#[test]
fn beam_set_with_wrong_cardinality_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("captions.jsonl");
    fs::write(
        &path,
        "{\"image_id\":\"x\",\"captioner\":\"git-l\",\"strategy\":\"beam\",\"captions\":[\"a\",\"b\"]}\n",
    )
    .unwrap();
    assert!(load_captions(&path).is_err());
}

#[test]
fn cosine_of_known_vectors() {
    let u = [1.0f32, 2.0, 3.0];
    let v = [4.0f32, 5.0, 6.0];
    let got = similarity(&u, &v, SimilarityMeasure::Cosine).unwrap();
    let want = oracle_similarity(&u, &v, SimilarityMeasure::Cosine);
    assert!(close(got, 0.974632, 1e-6), "{got}");
    assert!(close(got, want, 1e-12));
    assert!(close(similarity(&u, &v, SimilarityMeasure::Euclidean).unwrap(), -27f64.sqrt(), 1e-12));
    assert!(close(similarity(&u, &v, SimilarityMeasure::Manhattan).unwrap(), -9.0, 1e-12));
}

#[test]
fn similarity_agrees_with_oracle_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..2000 {
        let dim = rng.gen_range(1..64);
        let u = random_vector(&mut rng, dim);
        let v = random_vector(&mut rng, dim);
        for m in SimilarityMeasure::ALL {
            let got = similarity(&u, &v, m).unwrap();
            let want = oracle_similarity(&u, &v, m);
            assert!(close(got, want, 1e-9 * want.abs().max(1.0)), "{m}: {got} vs {want}");
        }
    }
}

#[test]
fn dimension_mismatch_is_an_error() {
    assert!(similarity(&[1.0, 2.0], &[1.0], SimilarityMeasure::Cosine).is_err());
}

fn random_words(rng: &mut ChaCha8Rng, n: usize) -> String {
    const WORDS: [&str; 8] = ["a", "metal", "plate", "with", "lines", "tender", "hug", "café"];
    (0..n).map(|_| WORDS[rng.gen_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

#[test]
fn caption_similarity_matches_edit_distance_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..1000 {
        let cap_words = rng.gen_range(1..7);
        let caption = random_words(&mut rng, cap_words);
        let resp_words = rng.gen_range(1..=cap_words);
        let response = random_words(&mut rng, resp_words);
        let (r, c) = (normalize_for_match(&response), normalize_for_match(&caption));
        let len = r.chars().count().max(c.chars().count());
        let want = 1.0 - levenshtein(&r, &c) as f64 / len as f64;
        let got = caption_similarity(&response, &caption);
        assert!(close(got, want, 1e-12), "{response:?} vs {caption:?}: {got} != {want}");
    }
}
