//! Subcommand implementations: load inputs, run a pipeline stage, write artifacts.
//!
//! Output files under the run's out dir:
//!
//! | command    | files |
//! | ---------- | ----- |
//! | `retrieve` | `rankings.jsonl`, `report.{md,csv,json}` |
//! | `enhance`  | `enhanced.jsonl` |
//! | `qa`       | `transcripts.jsonl`, `report.{md,csv,json}` |
//! | `eval`     | `report.{md,csv,json}` |
//! | `report`   | `comparison.md` |

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::captions::load_captions;
use crate::config::RunConfig;
use crate::dataset::{load_dataset, Dataset};
use crate::enhancer::{enhance_all, EnhancedPhrase};
use crate::evaluator::{
    compare_reports, emit_report, score_answers, score_rankings, ReportFormat, RunKind, RunReport,
};
use crate::gateway::{ChatBackend, HttpBackend, LlmGateway, ResponseCache};
use crate::qa::{InContextConfig, QaRunner, QaTranscript, SelectionStrategy};
use crate::retrieval::{compute_penalty, rank_candidates, rerank_with_penalty, RankingResult};
use crate::vector_store::{load_embeddings, EmbeddingStore};

pub const RANKINGS_FILE: &str = "rankings.jsonl";
pub const ENHANCED_FILE: &str = "enhanced.jsonl";
pub const TRANSCRIPTS_FILE: &str = "transcripts.jsonl";
pub const REPORT_STEM: &str = "report";
pub const COMPARISON_FILE: &str = "comparison.md";

/// Something a command produced, and how many instances failed along the way.
pub trait Failures {
    fn failures(&self) -> usize;
}

impl Failures for RunReport {
    fn failures(&self) -> usize {
        self.failures
    }
}

#[derive(Debug)]
pub struct EnhanceOutcome {
    pub phrases: Vec<EnhancedPhrase>,
    /// `(instance_id, error)` for instances the gateway could not serve.
    pub failed: Vec<(String, String)>,
}

impl Failures for EnhanceOutcome {
    fn failures(&self) -> usize {
        self.failed.len()
    }
}

fn load_data(cfg: &RunConfig) -> Result<Dataset> {
    let (data, gold) = cfg.dataset_paths()?;
    load_dataset(data, gold)
        .with_context(|| format!("loading dataset {} / {}", data.display(), gold.display()))
}

fn load_all_embeddings(paths: &[PathBuf]) -> Result<EmbeddingStore> {
    if paths.is_empty() {
        bail!("no embeddings file configured (data.embeddings / --embeddings)");
    }
    let mut store = EmbeddingStore::new();
    for p in paths {
        let part = load_embeddings(p).with_context(|| format!("loading embeddings {}", p.display()))?;
        store
            .merge(part)
            .with_context(|| format!("merging embeddings {}", p.display()))?;
    }
    Ok(store)
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).with_context(|| format!("{}:{}: malformed record", path.display(), i + 1))
        })
        .collect()
}

fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
    Ok(path)
}

/// Writes `report.md`, `report.csv` and `report.json`.
pub fn write_report(dir: &Path, report: &RunReport) -> Result<()> {
    for format in ReportFormat::ALL {
        let name = format!("{REPORT_STEM}.{}", format.extension());
        write_file(dir, &name, &emit_report(report, format))?;
    }
    Ok(())
}

/// Builds the gateway: on-disk cache, HTTP backend from config or environment
/// unless offline.
pub fn build_gateway(cfg: &RunConfig) -> Result<LlmGateway> {
    let cache = ResponseCache::on_disk(cfg.llm.cache_dir.clone());
    let backend: Option<Arc<dyn ChatBackend>> = if cfg.llm.offline {
        None
    } else {
        let http = match &cfg.llm.base_url {
            Some(url) => Some(HttpBackend::new(url, std::env::var(crate::gateway::API_KEY_ENV).ok())),
            None => HttpBackend::from_env(),
        };
        match http {
            Some(b) => Some(Arc::new(b.context("building HTTP client")?)),
            None => None,
        }
    };
    Ok(LlmGateway::new(backend, cache)
        .with_offline(cfg.llm.offline)
        .with_rate_limit(cfg.llm.rpm))
}

fn finish(cfg: &RunConfig, kind: RunKind, report: RunReport, mut snapshot: BTreeMap<String, String>) -> RunReport {
    let run_id = cfg.run_id(kind, &snapshot);
    snapshot.retain(|_, v| !v.is_empty());
    report.with_run_id(run_id).with_config(snapshot)
}

/// Ranks every instance, applying the two-pass penalty when enabled.
pub fn cmd_retrieve(cfg: &RunConfig) -> Result<RunReport> {
    let dataset = load_data(cfg)?;
    let store = load_all_embeddings(&cfg.data.embeddings)?;
    let model = cfg.retrieval.model.as_str();
    let mut snapshot = cfg.snapshot(RunKind::Ranking);

    let enhanced: Option<HashMap<String, EnhancedPhrase>> = match &cfg.data.enhanced {
        Some(path) => {
            let records: Vec<EnhancedPhrase> = read_jsonl(path)?;
            let join = |f: fn(&EnhancedPhrase) -> String| {
                records.iter().map(f).collect::<BTreeSet<_>>().into_iter().collect::<Vec<_>>().join(",")
            };
            snapshot.insert("phrases".into(), "enhanced".into());
            snapshot.insert("enhancement_template".into(), join(|r| r.template.name().to_string()));
            snapshot.insert("llm_model".into(), join(|r| r.model.clone()));
            Some(records.into_iter().map(|r| (r.instance_id.clone(), r)).collect())
        }
        None => {
            snapshot.insert("phrases".into(), "full".into());
            None
        }
    };

    let plain: Vec<RankingResult> = dataset
        .instances
        .par_iter()
        .map(|inst| {
            let phrase = match &enhanced {
                Some(map) => map
                    .get(&inst.instance_id)
                    .map(|e| e.enhanced.as_str())
                    .ok_or_else(|| anyhow!("instance {}: no enhanced phrase", inst.instance_id))?,
                None => inst.full_phrase.as_str(),
            };
            let vector = store.text(model, phrase).ok_or_else(|| {
                anyhow!(
                    "instance {}: no {model:?} text embedding for phrase {phrase:?}",
                    inst.instance_id
                )
            })?;
            Ok(rank_candidates(inst, phrase, &vector.vector, model, &store, cfg.retrieval.measure, None)?)
        })
        .collect::<Result<_>>()?;

    let rankings = match cfg.retrieval.effective_lambda() {
        Some(lambda) => {
            let table = compute_penalty(&plain, lambda)?;
            plain
                .iter()
                .zip(&dataset.instances)
                .map(|(r, inst)| rerank_with_penalty(r, inst, &table))
                .collect::<Result<Vec<_>, _>>()?
        }
        None => plain,
    };

    let out = &cfg.output.out_dir;
    write_file(out, RANKINGS_FILE, to_jsonl(&rankings).as_bytes())?;
    let report = finish(cfg, RunKind::Ranking, score_rankings(&rankings)?, snapshot);
    write_report(out, &report)?;
    Ok(report)
}

/// Enhances every phrase through the LLM gateway and writes `enhanced.jsonl`.
pub fn cmd_enhance(cfg: &RunConfig) -> Result<EnhanceOutcome> {
    cmd_enhance_with(cfg, &build_gateway(cfg)?)
}

/// [`cmd_enhance`] with a caller-supplied gateway.
pub fn cmd_enhance_with(cfg: &RunConfig, gateway: &LlmGateway) -> Result<EnhanceOutcome> {
    let template = cfg.enhancement_template()?;
    let dataset = load_data(cfg)?;
    let params = cfg.llm.params();
    let mut phrases = Vec::new();
    let mut failed = Vec::new();
    for (inst, result) in dataset
        .instances
        .iter()
        .zip(enhance_all(&dataset.instances, template, gateway, &params))
    {
        match result {
            Ok(p) => phrases.push(p),
            Err(e) => {
                log::error!("instance {}: {e}", inst.instance_id);
                failed.push((inst.instance_id.clone(), e.to_string()));
            }
        }
    }
    write_file(&cfg.output.out_dir, ENHANCED_FILE, to_jsonl(&phrases).as_bytes())?;
    Ok(EnhanceOutcome { phrases, failed })
}

fn score_transcripts(transcripts: &[QaTranscript]) -> Result<RunReport> {
    let mut answers = Vec::new();
    let mut failed = Vec::new();
    for t in transcripts {
        match t.parsed() {
            Some(p) if !t.failed() => answers.push((t.instance_id.clone(), p, t.gold_letter)),
            _ => failed.push(t.instance_id.clone()),
        }
    }
    if answers.is_empty() && !failed.is_empty() {
        bail!("all {} instances failed; see the transcripts for errors", failed.len());
    }
    Ok(score_answers(&answers)?.with_failures(failed))
}

/// Runs the QA pipeline (zero-shot, CoT or few-shot) and writes transcripts and a report.
pub fn cmd_qa(cfg: &RunConfig) -> Result<RunReport> {
    cmd_qa_with(cfg, &build_gateway(cfg)?)
}

/// [`cmd_qa`] with a caller-supplied gateway.
pub fn cmd_qa_with(cfg: &RunConfig, gateway: &LlmGateway) -> Result<RunReport> {
    let template = cfg.qa_template()?;
    let dataset = load_data(cfg)?;
    let captions_path = cfg
        .data
        .captions
        .as_deref()
        .ok_or_else(|| anyhow!("no captions file configured (data.captions / --captions)"))?;
    let captions =
        load_captions(captions_path).with_context(|| format!("loading captions {}", captions_path.display()))?;
    let needs_embeddings = cfg.qa.shots > 0 && cfg.qa.selection != SelectionStrategy::Random;
    let phrase_embeddings = if needs_embeddings {
        Some(load_all_embeddings(&cfg.data.embeddings)?)
    } else {
        None
    };
    let runner = QaRunner {
        dataset: &dataset,
        captions: &captions,
        phrase_embeddings: phrase_embeddings.as_ref(),
        gateway,
        params: cfg.llm.params(),
        template,
        captioner: cfg.qa.captioner.clone(),
        strategy: cfg.qa.strategy,
        in_context: (cfg.qa.shots > 0).then(|| InContextConfig {
            k: cfg.qa.shots,
            strategy: cfg.qa.selection,
            seed: cfg.qa.seed,
            embedding_model: cfg.selection_model().to_string(),
        }),
    };
    let transcripts = runner.run_all()?;
    let out = &cfg.output.out_dir;
    write_file(out, TRANSCRIPTS_FILE, to_jsonl(&transcripts).as_bytes())?;
    for t in transcripts.iter().filter(|t| t.failed()) {
        log::error!("instance {}: {}", t.instance_id, t.error.as_deref().unwrap_or_default());
    }
    let report = finish(cfg, RunKind::Qa, score_transcripts(&transcripts)?, cfg.snapshot(RunKind::Qa));
    write_report(out, &report)?;
    Ok(report)
}

/// Scores an existing `rankings.jsonl` or `transcripts.jsonl`.
pub fn cmd_eval(cfg: &RunConfig, input: &Path) -> Result<RunReport> {
    let text = fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
    let first: serde_json::Value = match text.lines().find(|l| !l.trim().is_empty()) {
        Some(line) => serde_json::from_str(line).with_context(|| format!("{}:1: malformed record", input.display()))?,
        None => bail!("{} has no records", input.display()),
    };
    let mut snapshot = BTreeMap::new();
    snapshot.insert(
        "source".to_string(),
        input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
    );
    let (kind, report) = if first.get("ranked").is_some() {
        let rankings: Vec<RankingResult> = read_jsonl(input)?;
        let measures: BTreeSet<&str> = rankings.iter().map(|r| r.measure.as_str()).collect();
        snapshot.insert("measure".into(), measures.into_iter().collect::<Vec<_>>().join(","));
        let penalized = rankings.iter().any(|r| r.penalized);
        snapshot.insert("penalty".into(), if penalized { "on" } else { "off" }.into());
        (RunKind::Ranking, score_rankings(&rankings)?)
    } else if first.get("template").is_some() {
        let transcripts: Vec<QaTranscript> = read_jsonl(input)?;
        let templates: BTreeSet<String> = transcripts.iter().map(|t| t.template.to_string()).collect();
        let captioners: BTreeSet<&str> = transcripts.iter().map(|t| t.captioner.as_str()).collect();
        snapshot.insert("qa_template".into(), templates.into_iter().collect::<Vec<_>>().join(","));
        snapshot.insert("captioner".into(), captioners.into_iter().collect::<Vec<_>>().join(","));
        (RunKind::Qa, score_transcripts(&transcripts)?)
    } else {
        bail!("{}: records are neither rankings nor QA transcripts", input.display());
    };
    let report = finish(cfg, kind, report, snapshot);
    write_report(&cfg.output.out_dir, &report)?;
    Ok(report)
}

/// Merges `report.json` files into one comparison table.
pub fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<String> {
    let reports = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_slice::<RunReport>(&bytes).with_context(|| format!("{}: not a JSON run report", p.display()))
        })
        .collect::<Result<Vec<_>>>()?;
    let table = compare_reports(&reports)?;
    write_file(out_dir, COMPARISON_FILE, table.as_bytes())?;
    Ok(table)
}
