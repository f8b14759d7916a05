//! Regenerates the offline replay fixture under `tests/fixtures/replay`.
//!
//! Writes a 12-instance dataset, image and phrase embeddings, greedy and beam
//! captions, and an LLM cache filled by a scripted backend through the same
//! command code the CLI uses. Run with `cargo run --example build_fixture`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vwsd::captions::{CaptionSet, CaptionStrategy};
use vwsd::commands::{cmd_enhance_with, cmd_qa_with};
use vwsd::config::RunConfig;
use vwsd::enhancer::combine;
use vwsd::gateway::{BackendError, LlmGateway, LlmRequest, ResponseCache, ScriptedBackend};
use vwsd::qa::SelectionStrategy;
use vwsd::vector_store::{text_key, EmbeddingKind, EmbeddingRecord};

const MODEL: &str = "clip-fixture";
const DIM: usize = 8;

const METAL_CAPTIONS: [&str; 10] = [
    "a chocolate bar with three sides",
    "[unused0] and [unused0] at the concert in 2007",
    "a guitar and a guitar are displayed in front of a speaker.",
    "frosty patterns on a window",
    "gold in the rocks - -",
    "a black piece of metal with a large black square in the middle.",
    "a jar of honey on a wooden table.",
    "a close up of a metal plate with a pattern of lines.",
    "a large white quartz rock with a clear base.",
    "gold jewelry from the late 19th century.",
];

const TENDER_CAPTIONS: [&str; 10] = [
    "a small boat sitting on top of a dock.",
    "a group of people walking on a green hill.",
    "a student gets a hug from a student.",
    "a large fly laying on a rock in the water.",
    "the bus stop at the station",
    "a train is parked at a station.",
    "a crowd of people watching a concert.",
    "a train station with a sign on the side of it.",
    "a black and red train on a track.",
    "a man laying in the sand on top of a surfboard.",
];

const METAL_NO_COT: &str = "The most appropriate caption for the metal steel would be (F) a black piece of metal with a large black square in the middle.";
const METAL_RATIONALE: &str = "First, we need to understand what metal steel is and what its characteristics are. Steel is a hard and strong metal alloy made mainly of iron and carbon. It is often used in construction, machinery, and transportation. Based on this information, the most appropriate caption for metal steel would be (H) a close up of a metal plate with a pattern of lines. This caption describes the texture and appearance of steel, which is often characterized by its distinctive pattern of lines. The other options do not accurately describe steel or its unique qualities.";
const METAL_COT: &str = "(H) a close up of a metal plate with a pattern of lines.\" ";
const TENDER_NO_COT: &str = "The most appropriate caption for the tender embrace would be: (C) a student gets a hug from a student.";
const TENDER_RATIONALE: &str = "First, we need to understand what the tender embrace is referring to. Once we know that, we can look at the answer choices and find the one that best matches the subject of the photo. Therefore, without further information about the photo, it is not possible to choose the most appropriate caption. Could you please provide more context or information about the photo?";
const TENDER_COT: &str = "not applicable without more information about the photo\" ";

struct Item {
    target: &'static str,
    phrase: &'static str,
    subject: &'static str,
    /// Gold position among the ten candidates.
    gold: usize,
}

const ITEMS: [Item; 12] = [
    Item { target: "andromeda", phrase: "andromeda tree", subject: "an evergreen shrub with white flowers", gold: 0 },
    Item { target: "metal", phrase: "metal steel", subject: "", gold: 7 },
    Item { target: "tender", phrase: "tender embrace", subject: "", gold: 2 },
    Item { target: "bank", phrase: "river bank", subject: "a grassy slope beside flowing water", gold: 5 },
    Item { target: "mole", phrase: "mole animal", subject: "a small furry digging mammal", gold: 9 },
    Item { target: "crane", phrase: "crane machine", subject: "a tall lifting tower at a building site", gold: 3 },
    Item { target: "pitcher", phrase: "pitcher baseball", subject: "a player throwing a ball from the mound", gold: 6 },
    Item { target: "seal", phrase: "seal wax", subject: "a red wax stamp on an envelope", gold: 1 },
    Item { target: "bass", phrase: "bass fish", subject: "a green fish held above a lake", gold: 8 },
    Item { target: "bat", phrase: "bat club", subject: "a wooden club leaning on a fence", gold: 4 },
    Item { target: "jaguar", phrase: "jaguar car", subject: "a sleek sports car on a road", gold: 2 },
    Item { target: "mercury", phrase: "mercury planet", subject: "a small grey planet near the sun", gold: 7 },
];

/// Images shared by several instances; `image.5000.jpg` appears in most lists.
const SHARED: [&str; 3] = ["image.5000.jpg", "image.5001.jpg", "image.5002.jpg"];

const FILLER: [&str; 10] = [
    "a dog running on a beach",
    "a bowl of soup on a table",
    "a city skyline at night",
    "a child riding a bicycle",
    "a bookshelf full of books",
    "a field of yellow flowers",
    "a red umbrella in the rain",
    "a plate of cookies",
    "a mountain covered in snow",
    "a cat sleeping on a sofa",
];

fn candidates(n: usize) -> Vec<String> {
    let mut ids: Vec<String> = (0..10).map(|j| format!("image.{}.jpg", 100 * (n + 1) + j)).collect();
    if n != 1 && n != 2 {
        // slots other than gold get the shared distractors
        let mut slot = (ITEMS[n].gold + 1) % 10;
        let share = if n.is_multiple_of(3) { 3 } else { 1 };
        for id in SHARED.iter().take(share) {
            ids[slot] = id.to_string();
            slot = (slot + 4) % 10;
        }
    }
    ids
}

fn greedy_caption(n: usize, j: usize, id: &str) -> String {
    match (n, id) {
        (_, "image.5000.jpg") => "a blurry photo of a white wall".into(),
        (_, "image.5001.jpg") => "a stack of newspapers".into(),
        (_, "image.5002.jpg") => "a parking lot with cars".into(),
        (1, _) => METAL_CAPTIONS[j].into(),
        (2, _) => TENDER_CAPTIONS[j].into(),
        _ if j == ITEMS[n].gold => ITEMS[n].subject.into(),
        _ => format!("{} {}", FILLER[j], ITEMS[n].target),
    }
}

fn beam_captions(greedy: &str) -> Vec<String> {
    let lead = [
        "", "a photo of ", "an image of ", "a picture of ", "there is ", "a view of ", "a close up of ",
        "a shot of ", "an old photo of ", "a blurry photo of ",
    ];
    lead.iter().map(|l| format!("{l}{greedy}")).collect()
}

fn knowledge(phrase: &str) -> String {
    format!("  {phrase}\n refers to the sense of the word  seen in everyday use. ")
}

fn unit(rng: &mut ChaCha8Rng) -> Vec<f32> {
    (0..DIM).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

fn mix(parts: &[(f32, &[f32])]) -> Vec<f32> {
    (0..DIM).map(|k| parts.iter().map(|(w, v)| w * v[k]).sum()).collect()
}

fn text_record(text: &str, vector: Vec<f32>) -> EmbeddingRecord {
    EmbeddingRecord {
        key: text_key(text),
        kind: EmbeddingKind::Text,
        model: MODEL.into(),
        dim: DIM,
        vector,
    }
}

fn jsonl<T: serde::Serialize>(items: &[T]) -> String {
    items.iter().map(|i| serde_json::to_string(i).unwrap() + "\n").collect()
}

/// Which fixture instance a prompt is about: the phrase whose question appears last.
fn query_of(prompt: &str) -> Option<usize> {
    ITEMS
        .iter()
        .enumerate()
        .filter_map(|(n, it)| {
            let a = prompt.rfind(&format!("for the {}?", it.phrase));
            let b = prompt.rfind(&format!("represent the {}.", it.phrase));
            a.max(b).map(|pos| (pos, n))
        })
        .max()
        .map(|(_, n)| n)
}

fn letter(i: usize) -> char {
    (b'A' + i as u8) as char
}

/// Letter a synthetic instance "answers": usually gold, sometimes a fixed wrong pick.
fn scripted_letter(n: usize) -> usize {
    let gold = ITEMS[n].gold;
    if n % 4 == 3 {
        (gold + 3) % 10
    } else {
        gold
    }
}

fn respond(req: &LlmRequest) -> Result<String, BackendError> {
    let prompt = req.prompt();
    if !prompt.contains("(A)") {
        let phrase = ITEMS
            .iter()
            .map(|it| it.phrase)
            .find(|p| prompt.contains(p))
            .ok_or_else(|| BackendError::Fatal(format!("unscripted prompt {prompt:?}")))?;
        return Ok(knowledge(phrase));
    }
    let n = query_of(prompt).ok_or_else(|| BackendError::Fatal(format!("unscripted prompt {prompt:?}")))?;
    let it = &ITEMS[n];
    let l = letter(scripted_letter(n));
    let cot_stage = prompt.ends_with("the answer is");
    let think_stage = prompt.ends_with("step by step. ");
    let choose_cot = prompt.ends_with("Question: What image do you choose?") && prompt.contains("Thought:");
    let text = match (n, cot_stage, think_stage) {
        (1, true, _) => METAL_COT.to_string(),
        (1, _, true) => METAL_RATIONALE.to_string(),
        (2, true, _) => TENDER_COT.to_string(),
        (2, _, true) => TENDER_RATIONALE.to_string(),
        (1, _, _) if !choose_cot => METAL_NO_COT.to_string(),
        (2, _, _) if !choose_cot => TENDER_NO_COT.to_string(),
        (9, _, _) => "I cannot tell which image is meant without more information.".to_string(),
        (_, true, _) => format!(" ({l})."),
        (_, _, true) => format!("The {} most likely matches option ({l}).", it.phrase),
        _ if choose_cot => format!(
            "Thought: the {} suggests option ({l}).\nResult: ({l})\nFinal Answer: ({l})",
            it.phrase
        ),
        _ => match n % 3 {
            0 => format!("({l})"),
            1 => format!("The answer is {l}."),
            _ => format!("{l}"),
        },
    };
    Ok(text)
}

fn run_toml() -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[data]");
    let _ = writeln!(s, "data = \"data.tsv\"");
    let _ = writeln!(s, "gold = \"gold.txt\"");
    let _ = writeln!(s, "embeddings = [\"embeddings.jsonl\"]");
    let _ = writeln!(s, "captions = \"captions.jsonl\"");
    let _ = writeln!(s, "\n[retrieval]");
    let _ = writeln!(s, "model = \"{MODEL}\"");
    let _ = writeln!(s, "measure = \"cosine\"");
    let _ = writeln!(s, "\n[qa]");
    let _ = writeln!(s, "captioner = \"git-l\"");
    let _ = writeln!(s, "\n[llm]");
    let _ = writeln!(s, "model = \"gpt-3.5-turbo\"");
    let _ = writeln!(s, "cache_dir = \"cache\"");
    s
}

/// QA settings replayed by the acceptance suite: (template, strategy, shots, selection).
pub const QA_RUNS: [(&str, CaptionStrategy, usize, SelectionStrategy); 7] = [
    ("no_cot", CaptionStrategy::Greedy, 0, SelectionStrategy::Random),
    ("cot", CaptionStrategy::Greedy, 0, SelectionStrategy::Random),
    ("choose_no_cot", CaptionStrategy::Greedy, 0, SelectionStrategy::Random),
    ("choose_cot", CaptionStrategy::Beam, 0, SelectionStrategy::Random),
    ("no_cot", CaptionStrategy::Greedy, 3, SelectionStrategy::Random),
    ("no_cot", CaptionStrategy::Greedy, 3, SelectionStrategy::Top),
    ("choose_no_cot", CaptionStrategy::Beam, 2, SelectionStrategy::InverseTop),
];

fn main() {
    let dir: PathBuf = std::env::args_os()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/replay"));
    fs::create_dir_all(&dir).unwrap();
    let cache = dir.join("cache");
    if cache.exists() {
        fs::remove_dir_all(&cache).unwrap();
    }

    let mut rng = ChaCha8Rng::seed_from_u64(20230712);
    let mut data = String::new();
    let mut gold = String::new();
    let mut captions = Vec::new();
    let mut images: Vec<EmbeddingRecord> = Vec::new();
    let mut texts = Vec::new();
    let mut image_vec = std::collections::BTreeMap::new();
    for id in SHARED {
        image_vec.insert(id.to_string(), unit(&mut rng));
    }
    let hub = image_vec["image.5000.jpg"].clone();

    for (n, it) in ITEMS.iter().enumerate() {
        let ids = candidates(n);
        let _ = writeln!(data, "{}\t{}\t{}", it.target, it.phrase, ids.join("\t"));
        let _ = writeln!(gold, "{}", ids[it.gold]);
        for (j, id) in ids.iter().enumerate() {
            if !image_vec.contains_key(id) {
                image_vec.insert(id.clone(), unit(&mut rng));
                let g = greedy_caption(n, j, id);
                captions.push(CaptionSet {
                    image_id: id.clone(),
                    captioner: "git-l".into(),
                    strategy: CaptionStrategy::Beam,
                    captions: beam_captions(&g),
                });
                captions.push(CaptionSet {
                    image_id: id.clone(),
                    captioner: "git-l".into(),
                    strategy: CaptionStrategy::Greedy,
                    captions: vec![g],
                });
            }
        }
        let g = image_vec[&ids[it.gold]].clone();
        let noise = unit(&mut rng);
        let phrase_vec = mix(&[(0.45, &g), (0.5, &noise), (0.5, &hub)]);
        texts.push(text_record(it.phrase, phrase_vec));
        let enhanced = combine(it.phrase, &knowledge(it.phrase));
        texts.push(text_record(&enhanced, mix(&[(0.8, &g), (0.3, &noise), (0.2, &hub)])));
    }
    for id in SHARED {
        let g = greedy_caption(0, 0, id);
        captions.push(CaptionSet {
            image_id: id.to_string(),
            captioner: "git-l".into(),
            strategy: CaptionStrategy::Beam,
            captions: beam_captions(&g),
        });
        captions.push(CaptionSet {
            image_id: id.to_string(),
            captioner: "git-l".into(),
            strategy: CaptionStrategy::Greedy,
            captions: vec![g],
        });
    }
    for (id, v) in image_vec {
        images.push(EmbeddingRecord {
            key: id,
            kind: EmbeddingKind::Image,
            model: MODEL.into(),
            dim: DIM,
            vector: v,
        });
    }
    images.extend(texts);

    fs::write(dir.join("data.tsv"), data).unwrap();
    fs::write(dir.join("gold.txt"), gold).unwrap();
    fs::write(dir.join("captions.jsonl"), jsonl(&captions)).unwrap();
    fs::write(dir.join("embeddings.jsonl"), jsonl(&images)).unwrap();
    fs::write(dir.join("run.toml"), run_toml()).unwrap();

    let backend = Arc::new(ScriptedBackend::new().with_responder(respond));
    let gateway = LlmGateway::new(Some(backend.clone()), ResponseCache::on_disk(cache));
    let scratch = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&dir.join("run.toml")).unwrap();
    cfg.output.out_dir = scratch.path().to_path_buf();

    let enhanced = cmd_enhance_with(&cfg, &gateway).unwrap();
    assert!(enhanced.failed.is_empty());
    for (template, strategy, shots, selection) in QA_RUNS {
        let mut c = cfg.clone();
        c.qa.template = template.into();
        c.qa.strategy = strategy;
        c.qa.shots = shots;
        c.qa.selection = selection;
        c.qa.seed = 7;
        let report = cmd_qa_with(&c, &gateway).unwrap();
        println!("{template} {strategy} k={shots} {selection}: acc {}", report.accuracy);
    }
    println!("{} LLM calls cached under {}", backend.call_count(), dir.join("cache").display());
}
