mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use common::{fixture_dir, golden_dir};
use vwsd::captions::load_captions;
use vwsd::commands::cmd_qa_with;
use vwsd::config::RunConfig;
use vwsd::dataset::load_dataset;
use vwsd::gateway::{LlmGateway, ResponseCache, ScriptedBackend};
use vwsd::qa::{render_qa_prompt, QaTemplate};

fn replay_config() -> PathBuf {
    fixture_dir().join("replay/run.toml")
}

fn vwsd(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vwsd")).args(args).output().unwrap()
}

fn offline(out: &Path, rest: &[&str]) -> Output {
    let cfg = replay_config();
    let mut args = vec!["--config", cfg.to_str().unwrap(), "--offline", "--out-dir", out.to_str().unwrap()];
    args.extend_from_slice(rest);
    vwsd(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn golden(name: &str) -> String {
    fs::read_to_string(golden_dir().join("cli").join(name)).unwrap()
}

#[test]
fn missing_embeddings_file_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere.jsonl");
    let out = offline(tmp.path(), &["retrieve", "--embeddings", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("nowhere.jsonl"), "{}", stderr(&out));
}

#[test]
fn unknown_enhancement_template_lists_valid_names() {
    let tmp = tempfile::tempdir().unwrap();
    let out = offline(tmp.path(), &["enhance", "--template", "meaning_off"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for name in ["exact", "what_is", "describe", "meaning_of"] {
        assert!(err.contains(name), "{err}");
    }
}

#[test]
fn report_without_inputs_is_a_usage_error() {
    let out = vwsd(&["report"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).to_lowercase().contains("usage"));
}

#[test]
fn unknown_flag_exits_one() {
    assert_eq!(vwsd(&["retrieve", "--bogus"]).status.code(), Some(1));
}

#[test]
fn help_lists_every_flag() {
    let expectations: [(&[&str], &[&str]); 6] = [
        (&["--help"], &["--config", "--jobs", "--offline", "--out-dir", "retrieve", "enhance", "qa", "eval", "report"]),
        (
            &["retrieve", "--help"],
            &["--data", "--gold", "--embeddings", "--captions", "--run-id", "--embedding-model", "--measure", "--penalty", "--no-penalty", "--lambda", "--enhanced"],
        ),
        (
            &["enhance", "--help"],
            &["--template", "--model", "--temperature", "--max-tokens", "--rpm", "--cache-dir", "--base-url"],
        ),
        (
            &["qa", "--help"],
            &["--qa-template", "--captioner", "--strategy", "--shots", "--selection", "--seed", "--embedding-model", "--model"],
        ),
        (&["eval", "--help"], &["--run-id", "<FILE>"]),
        (&["report", "--help"], &["<REPORT_JSON>"]),
    ];
    for (args, flags) in expectations {
        let out = vwsd(args);
        assert_eq!(out.status.code(), Some(0));
        let text = String::from_utf8_lossy(&out.stdout);
        for flag in flags {
            assert!(text.contains(flag), "{args:?} help lacks {flag}:\n{text}");
        }
    }
}

/// Copies the replay fixture so a test can modify its inputs.
fn fixture_copy(dir: &Path) -> PathBuf {
    let src = fixture_dir().join("replay");
    for name in ["run.toml", "data.tsv", "gold.txt", "embeddings.jsonl", "captions.jsonl"] {
        fs::copy(src.join(name), dir.join(name)).unwrap();
    }
    let toml = fs::read_to_string(dir.join("run.toml")).unwrap();
    let cache = src.join("cache");
    fs::write(
        dir.join("run.toml"),
        toml.replace("cache_dir = \"cache\"", &format!("cache_dir = {:?}", cache.to_str().unwrap())),
    )
    .unwrap();
    dir.join("run.toml")
}

#[test]
fn empty_dataset_enhances_to_empty_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_copy(tmp.path());
    fs::write(tmp.path().join("data.tsv"), "").unwrap();
    fs::write(tmp.path().join("gold.txt"), "").unwrap();
    let out_dir = tmp.path().join("out");
    let out = vwsd(&["--config", cfg.to_str().unwrap(), "--offline", "--out-dir", out_dir.to_str().unwrap(), "enhance"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(fs::read(out_dir.join("enhanced.jsonl")).unwrap(), b"");
}

#[test]
fn partial_failure_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = fixture_copy(tmp.path());
    let mut data = fs::read_to_string(tmp.path().join("data.tsv")).unwrap();
    let ids: Vec<String> = (0..10).map(|j| format!("image.{}.jpg", 1300 + j)).collect();
    data.push_str(&format!("quokka\tquokka marsupial\t{}\n", ids.join("\t")));
    fs::write(tmp.path().join("data.tsv"), data).unwrap();
    let mut gold = fs::read_to_string(tmp.path().join("gold.txt")).unwrap();
    gold.push_str("image.1300.jpg\n");
    fs::write(tmp.path().join("gold.txt"), gold).unwrap();

    let out_dir = tmp.path().join("out");
    let out = vwsd(&["--config", cfg.to_str().unwrap(), "--offline", "--out-dir", out_dir.to_str().unwrap(), "enhance"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("12 phrases, 1 failed"), "{}", stderr(&out));
    let written = fs::read_to_string(out_dir.join("enhanced.jsonl")).unwrap();
    assert_eq!(written.lines().count(), 12);
}

#[test]
fn retrieve_report_matches_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = offline(tmp.path(), &["retrieve"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let want = golden("retrieve_report.md");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), want);
    assert_eq!(fs::read_to_string(tmp.path().join("report.md")).unwrap(), want);
}

#[test]
fn comparison_bolds_best_run() {
    let tmp = tempfile::tempdir().unwrap();
    let plain = tmp.path().join("plain");
    let pen = tmp.path().join("pen");
    assert_eq!(offline(&plain, &["retrieve"]).status.code(), Some(0));
    assert_eq!(offline(&pen, &["retrieve", "--penalty"]).status.code(), Some(0));
    let merged = tmp.path().join("merged");
    let out = offline(
        &merged,
        &["report", plain.join("report.json").to_str().unwrap(), pen.join("report.json").to_str().unwrap()],
    );
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    let want = golden("comparison.md");
    assert_eq!(String::from_utf8(out.stdout).unwrap(), want);
    assert_eq!(fs::read_to_string(merged.join("comparison.md")).unwrap(), want);

    // the same report twice is a conflict
    let p = plain.join("report.json");
    let dup = offline(&merged, &["report", p.to_str().unwrap(), p.to_str().unwrap()]);
    assert_eq!(dup.status.code(), Some(1));
}

#[test]
fn enhanced_phrases_match_golden() {
    let tmp = tempfile::tempdir().unwrap();
    let out = offline(tmp.path(), &["enhance", "--template", "meaning_of"]);
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(
        fs::read_to_string(tmp.path().join("enhanced.jsonl")).unwrap(),
        golden("enhanced_meaning_of.jsonl")
    );
}

#[test]
fn offline_cache_miss_fails_every_instance() {
    let tmp = tempfile::tempdir().unwrap();
    let out = offline(tmp.path(), &["qa", "--qa-template", "no_cot", "--temperature", "0.3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("all 12 instances failed"), "{}", stderr(&out));
}

/// A QA run against a scripted backend answering with `answer(prompt, gold_letter)`.
fn scripted_qa(answer: fn(char) -> String) -> vwsd::evaluator::RunReport {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = RunConfig::load(&replay_config()).unwrap();
    cfg.output.out_dir = tmp.path().to_path_buf();
    let (data, gold) = cfg.dataset_paths().unwrap();
    let dataset = load_dataset(data, gold).unwrap();
    let captions = load_captions(cfg.data.captions.as_deref().unwrap()).unwrap();
    let gold_by_prompt: std::collections::HashMap<String, char> = dataset
        .instances
        .iter()
        .map(|inst| {
            let p = render_qa_prompt(inst, &captions, QaTemplate::NoCotGreedy, "git-l").unwrap();
            let pos = p.option_order.iter().position(|id| *id == inst.gold_id).unwrap();
            (p.rendered, (b'A' + pos as u8) as char)
        })
        .collect();
    let backend = ScriptedBackend::new().with_responder(move |req| Ok(answer(gold_by_prompt[req.prompt()])));
    let gateway = LlmGateway::new(Some(Arc::new(backend)), ResponseCache::in_memory());
    cmd_qa_with(&cfg, &gateway).unwrap()
}

#[test]
fn gold_answering_stub_scores_full_marks() {
    let report = scripted_qa(|l| format!("({l})"));
    assert_eq!(report.accuracy.to_string(), "100.00");
    assert_eq!(report.mrr.to_string(), "100.00");
    assert_eq!(report.evaluated, 12);
}

#[test]
fn abstaining_stub_scores_zero() {
    let report = scripted_qa(|_| "I cannot tell from these captions.".into());
    assert_eq!(report.accuracy.to_string(), "0.00");
    assert_eq!(report.failures, 0);
    assert_eq!(report.evaluated, 12);
}
