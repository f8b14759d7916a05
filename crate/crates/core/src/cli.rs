//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 on any error (including usage errors), 2 when the
//! run completed but some instances failed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::captions::CaptionStrategy;
use crate::commands::{cmd_enhance, cmd_eval, cmd_qa, cmd_report, cmd_retrieve, Failures};
use crate::config::RunConfig;
use crate::evaluator::{emit_report, ReportFormat, RunReport};
use crate::qa::SelectionStrategy;
use crate::vector_store::SimilarityMeasure;

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAILURES: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "vwsd", version, about = "Visual word sense disambiguation harness")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Worker threads (defaults to the number of CPUs).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
    /// Serve LLM calls from the cache only; a cache miss is an error.
    #[arg(long, global = true)]
    pub offline: bool,
    #[arg(long, global = true, value_name = "DIR")]
    pub out_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank candidate images by phrase-image embedding similarity.
    Retrieve {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Enhanced phrases (from `enhance`) to rank instead of the full phrases.
        #[arg(long, value_name = "FILE")]
        enhanced: Option<PathBuf>,
    },
    /// Enrich phrases with LLM-generated knowledge.
    Enhance {
        #[command(flatten)]
        data: DataArgs,
        /// Enhancement template: exact, what_is, describe or meaning_of.
        #[arg(long)]
        template: Option<String>,
        #[command(flatten)]
        llm: LlmArgs,
    },
    /// Answer VWSD as multiple-choice questions over image captions.
    Qa {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        qa: QaArgs,
        #[command(flatten)]
        llm: LlmArgs,
        /// Embedding model for top / inverse-top example selection.
        #[arg(long)]
        embedding_model: Option<String>,
    },
    /// Score an existing rankings.jsonl or transcripts.jsonl.
    Eval {
        #[arg(value_name = "FILE")]
        input: PathBuf,
        #[arg(long)]
        run_id: Option<String>,
    },
    /// Merge run reports (report.json) into one comparison table.
    Report {
        #[arg(value_name = "REPORT_JSON", required = true)]
        reports: Vec<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// data.tsv with target word, phrase and ten candidate image ids per line.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// gold.txt with one gold image id per line.
    #[arg(long, value_name = "FILE")]
    pub gold: Option<PathBuf>,
    /// Embedding file (JSONL or VWSDEMB1 binary); repeatable.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Vec<PathBuf>,
    #[arg(long, value_name = "FILE")]
    pub captions: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct RetrievalArgs {
    /// Embedding model to rank with.
    #[arg(long)]
    pub embedding_model: Option<String>,
    #[arg(long, value_parser = clap::value_parser!(SimilarityMeasure))]
    pub measure: Option<SimilarityMeasure>,
    /// Enable the majority-bias penalty.
    #[arg(long, conflicts_with = "no_penalty")]
    pub penalty: bool,
    #[arg(long)]
    pub no_penalty: bool,
    /// Penalty weight.
    #[arg(long)]
    pub lambda: Option<f64>,
}

#[derive(Debug, Args)]
pub struct LlmArgs {
    /// LLM model name sent to the endpoint.
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub max_tokens: Option<u32>,
    /// Requests per minute sent to the endpoint.
    #[arg(long)]
    pub rpm: Option<u32>,
    #[arg(long, value_name = "DIR")]
    pub cache_dir: Option<PathBuf>,
    /// Endpoint base URL (default: $VWSD_LLM_BASE_URL).
    #[arg(long)]
    pub base_url: Option<String>,
}

#[derive(Debug, Args)]
pub struct QaArgs {
    /// QA template name, or a family (think, cot, no_cot, choose_no_cot, choose_cot).
    #[arg(long)]
    pub qa_template: Option<String>,
    #[arg(long)]
    pub captioner: Option<String>,
    /// Caption strategy: greedy or beam.
    #[arg(long, value_parser = clap::value_parser!(CaptionStrategy))]
    pub strategy: Option<CaptionStrategy>,
    /// Number of in-context examples.
    #[arg(long, value_name = "K")]
    pub shots: Option<usize>,
    /// In-context selection: random, top or inverse-top.
    #[arg(long, value_parser = clap::value_parser!(SelectionStrategy))]
    pub selection: Option<SelectionStrategy>,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl DataArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let d = &mut cfg.data;
        if self.data.is_some() {
            d.data = self.data;
        }
        if self.gold.is_some() {
            d.gold = self.gold;
        }
        if !self.embeddings.is_empty() {
            d.embeddings = self.embeddings;
        }
        if self.captions.is_some() {
            d.captions = self.captions;
        }
        if self.run_id.is_some() {
            cfg.output.run_id = self.run_id;
        }
    }
}

impl LlmArgs {
    fn apply(self, cfg: &mut RunConfig) {
        let l = &mut cfg.llm;
        set(&mut l.model, self.model);
        set(&mut l.temperature, self.temperature);
        set(&mut l.max_tokens, self.max_tokens);
        set(&mut l.cache_dir, self.cache_dir);
        if self.rpm.is_some() {
            l.rpm = self.rpm;
        }
        if self.base_url.is_some() {
            l.base_url = self.base_url;
        }
    }
}

fn write_stdout(bytes: &[u8]) -> Result<()> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes)?;
    out.flush()?;
    Ok(())
}

fn print_report(report: &RunReport) -> Result<()> {
    write_stdout(&emit_report(report, ReportFormat::Markdown))
}

fn exit_code(outcome: &impl Failures) -> i32 {
    if outcome.failures() > 0 {
        EXIT_FAILURES
    } else {
        EXIT_OK
    }
}

/// Builds the effective config from file and flags, then runs the subcommand.
pub fn execute(cli: Cli) -> Result<i32> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    set(&mut cfg.output.out_dir, cli.out_dir);
    cfg.llm.offline |= cli.offline;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n.max(1));
    }
    let pool = pool.build().context("starting worker pool")?;

    match cli.command {
        Command::Retrieve {
            data,
            retrieval,
            enhanced,
        } => {
            data.apply(&mut cfg);
            if enhanced.is_some() {
                cfg.data.enhanced = enhanced;
            }
            let r = &mut cfg.retrieval;
            set(&mut r.model, retrieval.embedding_model);
            set(&mut r.measure, retrieval.measure);
            set(&mut r.lambda, retrieval.lambda);
            if retrieval.penalty {
                r.penalty = true;
            }
            if retrieval.no_penalty {
                r.penalty = false;
            }
            let report = pool.install(|| cmd_retrieve(&cfg))?;
            print_report(&report)?;
            Ok(exit_code(&report))
        }
        Command::Enhance { data, template, llm } => {
            data.apply(&mut cfg);
            llm.apply(&mut cfg);
            set(&mut cfg.enhancement.template, template);
            let outcome = pool.install(|| cmd_enhance(&cfg))?;
            eprintln!(
                "enhanced {} phrases, {} failed",
                outcome.phrases.len(),
                outcome.failed.len()
            );
            Ok(exit_code(&outcome))
        }
        Command::Qa {
            data,
            qa,
            llm,
            embedding_model,
        } => {
            data.apply(&mut cfg);
            llm.apply(&mut cfg);
            let q = &mut cfg.qa;
            set(&mut q.template, qa.qa_template);
            set(&mut q.captioner, qa.captioner);
            set(&mut q.strategy, qa.strategy);
            set(&mut q.shots, qa.shots);
            set(&mut q.selection, qa.selection);
            set(&mut q.seed, qa.seed);
            if embedding_model.is_some() {
                q.embedding_model = embedding_model;
            }
            let report = pool.install(|| cmd_qa(&cfg))?;
            print_report(&report)?;
            Ok(exit_code(&report))
        }
        Command::Eval { input, run_id } => {
            if run_id.is_some() {
                cfg.output.run_id = run_id;
            }
            let report = cmd_eval(&cfg, &input)?;
            print_report(&report)?;
            Ok(exit_code(&report))
        }
        Command::Report { reports } => {
            let table = cmd_report(&reports, &cfg.output.out_dir)?;
            write_stdout(table.as_bytes())?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses arguments, runs, and reports errors on stderr. Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_ERROR
        }
    }
}
