//! Append-only line-delimited JSON run log.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::eval::FitnessReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LogRecord {
    RunStart(RunStart),
    LlmCall(LlmCallRecord),
    OperatorOutcome(OutcomeRecord),
    Grounding(GroundingRecord),
    Evaluation(EvaluationRecord),
    Anomaly(AnomalyRecord),
    Selection(SelectionRecord),
    Generation(GenerationRecord),
    RunEnd(RunEnd),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStart {
    /// `treevo` or `gp`.
    pub engine: String,
    pub label: String,
    pub seed: u64,
    pub population_size: usize,
    pub evaluation_budget: usize,
    pub config: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmCallRecord {
    pub generation: u32,
    pub kind: String,
    pub index: u64,
    pub attempt: u32,
    pub temperature: f64,
    pub system: String,
    pub user: String,
    pub response: Option<String>,
    pub error: Option<String>,
    pub latency_ms: u64,
    pub http_attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Accepted,
    /// The child already exists elsewhere in the run.
    Duplicate,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub generation: u32,
    pub operator: String,
    pub slot: usize,
    pub parents: Vec<String>,
    pub status: OutcomeStatus,
    pub child: Option<String>,
    pub tree: Option<String>,
    pub attempts: u32,
    pub size_delta: Option<i64>,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRecord {
    pub generation: u32,
    pub thought: String,
    pub expression: Option<String>,
    pub attempts: u32,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub generation: u32,
    /// Thought id for LLM-driven runs; absent for GP.
    pub thought: Option<String>,
    pub expression: String,
    pub complexity: usize,
    pub status: super::EvalStatus,
    pub evals_used: usize,
    pub train: Option<FitnessReport>,
    pub validation: Option<FitnessReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRecord {
    pub generation: u32,
    pub thought: Option<String>,
    pub message: String,
}

/// One ranked entry of a selection pool (best first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub train_ic: Option<f64>,
    pub complexity: usize,
    pub generation: u32,
    pub expression: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRecord {
    pub generation: u32,
    pub target: usize,
    pub pool: Vec<RankedEntry>,
    pub survivors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub generation: u32,
    pub attempted: BTreeMap<String, usize>,
    pub accepted: BTreeMap<String, usize>,
    pub evaluations_used: usize,
    pub new_evaluations: usize,
    pub best_train_ic: Option<f64>,
    pub mean_train_ic: Option<f64>,
    pub best_validation_ic: Option<f64>,
    pub survivors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub id: Option<String>,
    pub expression: String,
    pub generation: u32,
    pub train: FitnessReport,
    pub validation: FitnessReport,
    pub test: FitnessReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEnd {
    pub status: RunStatus,
    pub reason: Option<String>,
    pub stop: String,
    pub evaluations_used: usize,
    pub generations: u32,
    pub llm_calls: usize,
    pub best: Option<BestRecord>,
}

/// In-memory record list with an optional file sink written as records arrive.
#[derive(Default)]
pub struct RunLog {
    records: Vec<LogRecord>,
    sink: Option<BufWriter<File>>,
}

impl std::fmt::Debug for RunLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RunLog").field("records", &self.records.len()).finish()
    }
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_sink(path: impl AsRef<Path>) -> std::io::Result<Self> {
        Ok(RunLog {
            records: Vec::new(),
            sink: Some(BufWriter::new(File::create(path)?)),
        })
    }

    pub fn push(&mut self, record: LogRecord) {
        if let Some(sink) = self.sink.as_mut() {
            let line = serde_json::to_string(&record).expect("log records serialize");
            // a failing sink must not stop the search; the in-memory copy stays complete
            if writeln!(sink, "{line}").and_then(|_| sink.flush()).is_err() {
                self.sink = None;
            }
        }
        self.records.push(record);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<LogRecord> {
        self.records
    }

    pub fn to_jsonl(&self) -> String {
        to_jsonl(&self.records)
    }
}

pub fn to_jsonl(records: &[LogRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("log records serialize"));
        out.push('\n');
    }
    out
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("log contains no records")]
    Empty,
}

pub fn read_run_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>, LogError> {
    parse_run_log(BufReader::new(File::open(path)?))
}

pub fn parse_run_log<R: BufRead>(reader: R) -> Result<Vec<LogRecord>, LogError> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| LogError::Corrupt {
            line: k + 1,
            message: e.to_string(),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(LogError::Empty);
    }
    Ok(out)
}

/// Best validation IC so far after each fresh evaluation.
pub fn convergence_from_log(records: &[LogRecord]) -> Vec<super::ConvergencePoint> {
    let mut best: Option<f64> = None;
    let mut out = Vec::new();
    for r in records {
        if let LogRecord::Evaluation(e) = r {
            if e.status != super::EvalStatus::Fresh {
                continue;
            }
            if let Some(v) = e.validation.as_ref().and_then(|v| v.ic) {
                if best.is_none_or(|b| v > b) {
                    best = Some(v);
                }
            }
            out.push(super::ConvergencePoint {
                evaluations: e.evals_used,
                best_validation_ic: best,
            });
        }
    }
    out
}

/// Two-column table: evaluations consumed, best validation IC (empty when none yet).
pub fn convergence_csv(points: &[super::ConvergencePoint]) -> String {
    let mut out = String::from("evaluations,best_validation_ic\n");
    for p in points {
        let v = p.best_validation_ic.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{}\n", p.evaluations, v));
    }
    out
}

/// The run label stored in the first record, if any.
pub fn run_label(records: &[LogRecord]) -> Option<&str> {
    records.iter().find_map(|r| match r {
        LogRecord::RunStart(s) => Some(s.label.as_str()),
        _ => None,
    })
}
