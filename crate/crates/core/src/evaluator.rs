//! Accuracy and MRR over rankings or parsed answers, and run report emission.
//!
//! Percentages are kept as exact rationals and only rounded (half-up, two decimals)
//! when formatted, so `67.50` is produced from `270/4` without floating point.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::qa::{AnswerOutcome, OptionLetter, ParsedAnswer};
use crate::retrieval::RankingResult;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to score: the run has no evaluated instances")]
    Empty,
    #[error("instance {0}: gold rank must be at least 1")]
    ZeroRank(String),
    #[error("no reports to merge")]
    NoReports,
    #[error("run id {0:?} appears in more than one report")]
    ConflictingRunId(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

/// Exact non-negative rational `numer / denom`, in percent units.
#[derive(Debug, Clone, Copy)]
pub struct Percentage {
    numer: u128,
    denom: u128,
}

impl Percentage {
    pub fn new(numer: u128, denom: u128) -> Self {
        assert!(denom > 0, "percentage denominator must be positive");
        Self { numer, denom }
    }

    /// `100 · part / whole`.
    pub fn ratio(part: u128, whole: u128) -> Self {
        Self::new(100 * part, whole)
    }

    pub fn as_f64(self) -> f64 {
        self.numer as f64 / self.denom as f64
    }

    /// Value in hundredths, rounded half-up.
    pub fn hundredths(self) -> u128 {
        (200 * self.numer + self.denom) / (2 * self.denom)
    }
}

impl PartialEq for Percentage {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Percentage {}

impl PartialOrd for Percentage {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Percentage {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.numer * other.denom).cmp(&(other.numer * self.denom))
    }
}

impl fmt::Display for Percentage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let h = self.hundredths();
        write!(f, "{}.{:02}", h / 100, h % 100)
    }
}

impl FromStr for Percentage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || format!("{s:?} is not a decimal percentage");
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if int.is_empty() || !int.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) || frac.len() > 18 {
            return Err(bad());
        }
        let denom = 10u128.pow(frac.len() as u32);
        let numer = format!("{int}{frac}").parse::<u128>().map_err(|_| bad())?;
        Ok(Self::new(numer, denom))
    }
}

impl Serialize for Percentage {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Percentage {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Ranking,
    Qa,
}

impl RunKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RunKind::Ranking => "ranking",
            RunKind::Qa => "qa",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceScore {
    pub instance_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_rank: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<AnswerOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_letter: Option<OptionLetter>,
    pub correct: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub kind: RunKind,
    /// Settings that produced the run, in key order.
    pub config: BTreeMap<String, String>,
    pub evaluated: usize,
    pub correct: usize,
    pub accuracy: Percentage,
    pub mrr: Percentage,
    pub failures: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_instances: Vec<String>,
    pub per_instance: Vec<InstanceScore>,
}

impl RunReport {
    pub fn with_run_id(mut self, run_id: impl Into<String>) -> Self {
        self.run_id = run_id.into();
        self
    }

    pub fn with_config(mut self, config: BTreeMap<String, String>) -> Self {
        self.config = config;
        self
    }

    /// Records instances that failed before they could be scored.
    pub fn with_failures(mut self, failed: Vec<String>) -> Self {
        self.failures = failed.len();
        self.failed_instances = failed;
        self
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean reciprocal rank as an exact percentage.
fn mean_reciprocal_rank(ranks: &[usize]) -> Percentage {
    let distinct: BTreeSet<u128> = ranks.iter().map(|&r| r as u128).collect();
    let lcm = distinct.iter().fold(1u128, |acc, &r| acc / gcd(acc, r) * r);
    let sum: u128 = ranks.iter().map(|&r| lcm / r as u128).sum();
    Percentage::new(100 * sum, lcm * ranks.len() as u128)
}

pub fn score_rankings(rankings: &[RankingResult]) -> Result<RunReport, EvalError> {
    if rankings.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut ranks = Vec::with_capacity(rankings.len());
    let mut per_instance = Vec::with_capacity(rankings.len());
    for r in rankings {
        if r.gold_rank == 0 {
            return Err(EvalError::ZeroRank(r.instance_id.clone()));
        }
        ranks.push(r.gold_rank);
        per_instance.push(InstanceScore {
            instance_id: r.instance_id.clone(),
            gold_rank: Some(r.gold_rank),
            outcome: None,
            gold_letter: None,
            correct: r.gold_rank == 1,
        });
    }
    let correct = per_instance.iter().filter(|s| s.correct).count();
    Ok(RunReport {
        run_id: String::new(),
        kind: RunKind::Ranking,
        config: BTreeMap::new(),
        evaluated: ranks.len(),
        correct,
        accuracy: Percentage::ratio(correct as u128, ranks.len() as u128),
        mrr: mean_reciprocal_rank(&ranks),
        failures: 0,
        failed_instances: Vec::new(),
        per_instance,
    })
}

/// Scores `(instance_id, parsed answer, gold letter)` triples; abstentions are wrong.
pub fn score_answers(answers: &[(String, ParsedAnswer, OptionLetter)]) -> Result<RunReport, EvalError> {
    if answers.is_empty() {
        return Err(EvalError::Empty);
    }
    let per_instance: Vec<InstanceScore> = answers
        .iter()
        .map(|(id, parsed, gold)| InstanceScore {
            instance_id: id.clone(),
            gold_rank: None,
            outcome: Some(parsed.outcome),
            gold_letter: Some(*gold),
            correct: parsed.outcome == AnswerOutcome::Option(*gold),
        })
        .collect();
    let correct = per_instance.iter().filter(|s| s.correct).count();
    let accuracy = Percentage::ratio(correct as u128, answers.len() as u128);
    Ok(RunReport {
        run_id: String::new(),
        kind: RunKind::Qa,
        config: BTreeMap::new(),
        evaluated: answers.len(),
        correct,
        accuracy,
        mrr: accuracy,
        failures: 0,
        failed_instances: Vec::new(),
        per_instance,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub const ALL: [ReportFormat; 3] = [ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json];

    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

pub fn emit_report(report: &RunReport, format: ReportFormat) -> Vec<u8> {
    match format {
        ReportFormat::Markdown => markdown(report).into_bytes(),
        ReportFormat::Csv => csv_bytes(report),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
            out.push(b'\n');
            out
        }
    }
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn markdown(report: &RunReport) -> String {
    use std::fmt::Write;
    let mut s = String::new();
    let _ = writeln!(s, "# Run report `{}`\n", report.run_id);
    let _ = writeln!(s, "kind: {}\n", report.kind.as_str());
    if !report.config.is_empty() {
        s.push_str("| setting | value |\n| --- | --- |\n");
        for (k, v) in &report.config {
            let _ = writeln!(s, "| {k} | {} |", escape_cell(v));
        }
        s.push('\n');
    }
    s.push_str("| evaluated | correct | acc. | MRR |\n| ---: | ---: | ---: | ---: |\n");
    let _ = writeln!(
        s,
        "| {} | {} | {} | {} |\n",
        report.evaluated, report.correct, report.accuracy, report.mrr
    );
    let _ = writeln!(s, "failures: {}", report.failures);
    for id in &report.failed_instances {
        let _ = writeln!(s, "- failed: {id}");
    }
    s.push_str("\n## Per instance\n\n");
    match report.kind {
        RunKind::Ranking => {
            s.push_str("| instance | gold rank | correct |\n| --- | ---: | --- |\n");
            for p in &report.per_instance {
                let rank = p.gold_rank.map_or_else(|| "-".to_string(), |r| r.to_string());
                let _ = writeln!(s, "| {} | {rank} | {} |", p.instance_id, yes_no(p.correct));
            }
        }
        RunKind::Qa => {
            s.push_str("| instance | answer | gold | correct |\n| --- | --- | --- | --- |\n");
            for p in &report.per_instance {
                let answer = match p.outcome {
                    Some(AnswerOutcome::Option(l)) => l.to_string(),
                    Some(AnswerOutcome::Abstain) => "abstain".to_string(),
                    None => "-".to_string(),
                };
                let gold = p.gold_letter.map_or_else(|| "-".to_string(), |l| l.to_string());
                let _ = writeln!(s, "| {} | {answer} | {gold} | {} |", p.instance_id, yes_no(p.correct));
            }
        }
    }
    s
}

fn escape_cell(v: &str) -> String {
    v.replace('|', "\\|").replace('\n', " ")
}

fn csv_bytes(report: &RunReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["run_id".to_string(), "kind".to_string()];
    header.extend(report.config.keys().cloned());
    header.extend(["evaluated", "correct", "failures", "accuracy", "mrr"].map(String::from));
    let mut row = vec![report.run_id.clone(), report.kind.as_str().to_string()];
    row.extend(report.config.values().cloned());
    row.extend([
        report.evaluated.to_string(),
        report.correct.to_string(),
        report.failures.to_string(),
        report.accuracy.to_string(),
        report.mrr.to_string(),
    ]);
    w.write_record(&header).expect("in-memory write");
    w.write_record(&row).expect("in-memory write");
    w.into_inner().expect("in-memory flush")
}

/// Reads back the single data row of a csv report as `column -> value`.
pub fn parse_csv_report(bytes: &[u8]) -> Result<BTreeMap<String, String>, EvalError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers()?.clone();
    let row = r.records().next().transpose()?.ok_or(EvalError::Empty)?;
    Ok(header.iter().map(String::from).zip(row.iter().map(String::from)).collect())
}

/// Merges reports into one markdown table, one row per run, bolding the best
/// accuracy and MRR (every tied row is bolded).
pub fn compare_reports(reports: &[RunReport]) -> Result<String, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::NoReports);
    }
    let mut seen = HashSet::new();
    for r in reports {
        if !seen.insert(r.run_id.as_str()) {
            return Err(EvalError::ConflictingRunId(r.run_id.clone()));
        }
    }
    let keys: BTreeSet<&str> = reports
        .iter()
        .flat_map(|r| r.config.keys().map(String::as_str))
        .collect();
    let best_acc = reports.iter().map(|r| r.accuracy).max().expect("non-empty");
    let best_mrr = reports.iter().map(|r| r.mrr).max().expect("non-empty");
    let bold = |p: Percentage, best: Percentage| {
        if p == best {
            format!("**{p}**")
        } else {
            p.to_string()
        }
    };

    let mut header = vec!["run"];
    header.extend(keys.iter().copied());
    header.extend(["acc.", "MRR", "failures"]);
    let mut out = format!("| {} |\n", header.join(" | "));
    let align: Vec<&str> = header
        .iter()
        .map(|h| match *h {
            "acc." | "MRR" | "failures" => "---:",
            _ => "---",
        })
        .collect();
    out.push_str(&format!("| {} |\n", align.join(" | ")));
    for r in reports {
        let mut cells = vec![r.run_id.clone()];
        cells.extend(
            keys.iter()
                .map(|k| r.config.get(*k).map_or_else(|| "-".to_string(), |v| escape_cell(v))),
        );
        cells.push(bold(r.accuracy, best_acc));
        cells.push(bold(r.mrr, best_mrr));
        cells.push(r.failures.to_string());
        out.push_str(&format!("| {} |\n", cells.join(" | ")));
    }
    Ok(out)
}
