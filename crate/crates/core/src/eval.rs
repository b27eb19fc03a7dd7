//! Scoring of prediction methods against benchmark ground truth.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::BayesNet;
use crate::benchgen::BenchmarkItem;
use crate::inference::{answer_query, fallback_value, QueryType};
use crate::ingest::Codebook;
use crate::llm::{CompletionParams, LanguageModelClient, LlmError};
use crate::querylang::{translate_question, NlQuestion, TranslateError, VariantType};
use crate::retrieval::{retrieve, PremiseIndex, RetrievalError, RetrievalMode};

/// Slack on the inclusive accuracy thresholds, absorbing decimal round-off.
const ACC_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no records to score")]
    Empty,
    #[error("model transport failure: {0}")]
    Transport(#[from] LlmError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error("item {item}: target {node:?} is not in the codebook")]
    MissingNode { item: String, node: String },
    #[error("line {line}: {reason}")]
    Store { line: usize, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Autobn,
    Premise,
    PremiseInsights,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Autobn, Method::Premise, Method::PremiseInsights, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Autobn => "autobn",
            Method::Premise => "premise",
            Method::PremiseInsights => "premise-insights",
            Method::Random => "random",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method {s:?} (autobn, premise, premise-insights, random)"))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub item_id: String,
    pub query_type: QueryType,
    pub variant: VariantType,
    pub prediction: Option<f64>,
    pub valid: bool,
    /// Substituted value when the prediction is invalid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<f64>,
    pub ground_truth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl EvalRecord {
    /// Builds a record, marking it invalid unless the prediction is a number
    /// in [0, 1]; invalid records carry `1 / num_states` as fallback.
    pub fn new(
        item: &BenchmarkItem,
        variant: VariantType,
        prediction: Option<f64>,
        ground_truth: f64,
        num_states: usize,
    ) -> Self {
        let valid = prediction.is_some_and(|p| (0.0..=1.0).contains(&p));
        Self {
            item_id: item.id.clone(),
            query_type: item.query_type,
            variant,
            prediction,
            valid,
            fallback: if valid { None } else { fallback_value(num_states).ok() },
            ground_truth,
            note: None,
        }
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }

    /// The value that enters MAE, RMSE and accuracy.
    pub fn scored(&self) -> f64 {
        match (self.valid, self.prediction, self.fallback) {
            (true, Some(p), _) => p,
            (_, _, Some(f)) => f,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Percent of records without a valid prediction.
    pub error_rate: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Percent of records with absolute error at most 0.02.
    pub acc_002: f64,
    pub acc_005: f64,
    pub n: usize,
}

pub fn compute_metrics(records: &[EvalRecord]) -> Result<Metrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::Empty);
    }
    let n = records.len() as f64;
    let errors: Vec<f64> = records.iter().map(|r| (r.scored() - r.ground_truth).abs()).collect();
    let within = |x: f64| 100.0 * errors.iter().filter(|&&e| e <= x + ACC_TOLERANCE).count() as f64 / n;
    Ok(Metrics {
        error_rate: 100.0 * records.iter().filter(|r| !r.valid).count() as f64 / n,
        mae: errors.iter().sum::<f64>() / n,
        rmse: (errors.iter().map(|e| e * e).sum::<f64>() / n).sqrt(),
        acc_002: within(0.02),
        acc_005: within(0.05),
        n: records.len(),
    })
}

/// First number in the reply that reads as a probability. `42%` reads as
/// 0.42; digits glued to letters (as in `X3`) are not numbers.
pub fn extract_probability(reply: &str) -> Option<f64> {
    let bytes = reply.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        let starts_number = bytes[i].is_ascii_digit()
            || (bytes[i] == b'.' && bytes.get(i + 1).is_some_and(u8::is_ascii_digit));
        let glued = i > 0 && (bytes[i - 1].is_ascii_alphanumeric() || bytes[i - 1] == b'_' || bytes[i - 1] == b'.');
        if !starts_number || glued {
            i += 1;
            continue;
        }
        let start = i;
        while i < bytes.len() && bytes[i].is_ascii_digit() {
            i += 1;
        }
        if i + 1 < bytes.len() && bytes[i] == b'.' && bytes[i + 1].is_ascii_digit() {
            i += 1;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
        }
        let negative = start > 0 && bytes[start - 1] == b'-';
        let Ok(mut value) = reply[start..i].parse::<f64>() else {
            continue;
        };
        if bytes.get(i) == Some(&b'%') {
            value /= 100.0;
        }
        if !negative && (0.0..=1.0).contains(&value) {
            return Some(value);
        }
    }
    None
}

fn num_states(codebook: &Codebook, item: &BenchmarkItem) -> Result<usize, EvalError> {
    codebook
        .column(&item.query.target)
        .map(|c| c.cardinality())
        .ok_or_else(|| EvalError::MissingNode {
            item: item.id.clone(),
            node: item.query.target.clone(),
        })
}

/// Translate each selected question with the model and answer the
/// translated query exactly. Translation failures become invalid records;
/// transport failures abort the run.
pub fn run_autobn(
    net: &BayesNet,
    codebook: &Codebook,
    items: &[BenchmarkItem],
    llm: &dyn LanguageModelClient,
    variants: &[VariantType],
) -> Result<Vec<EvalRecord>, EvalError> {
    let mut records = Vec::new();
    for item in items {
        let k = num_states(codebook, item)?;
        for v in item.variants.iter().filter(|v| variants.contains(&v.variant_type)) {
            let question = NlQuestion {
                text: v.question.clone(),
                table: item.table.clone(),
                question_type: v.variant_type,
                source_id: Some(item.id.clone()),
            };
            let record = match translate_question(&question, codebook, llm) {
                Ok(q) => match answer_query(net, &q) {
                    Ok(p) => EvalRecord::new(item, v.variant_type, Some(p), v.ground_truth, k),
                    Err(e) => EvalRecord::new(item, v.variant_type, None, v.ground_truth, k).with_note(e.to_string()),
                },
                Err(TranslateError::Failed(f)) => {
                    EvalRecord::new(item, v.variant_type, None, v.ground_truth, k).with_note(f.to_string())
                }
                Err(TranslateError::Transport(e)) => return Err(e.into()),
            };
            records.push(record);
        }
    }
    Ok(records)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PremiseMethodConfig {
    pub k_premises: usize,
    pub k_insights: usize,
    pub mode: RetrievalMode,
}

impl Default for PremiseMethodConfig {
    fn default() -> Self {
        Self {
            k_premises: 40,
            k_insights: 20,
            mode: RetrievalMode::Bm25,
        }
    }
}

/// Prompt for the premise methods. Insights are listed after premises.
pub fn premise_prompt(question: &str, table_description: &str, premises: &[&str], insights: &[&str]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "Answer a probability question about a table using the statements below.");
    let _ = writeln!(out, "{table_description}");
    let _ = writeln!(out, "Statements:");
    for p in premises {
        let _ = writeln!(out, "- {p}");
    }
    if !insights.is_empty() {
        let _ = writeln!(out, "Key insights:");
        for p in insights {
            let _ = writeln!(out, "- {p}");
        }
    }
    let _ = writeln!(out, "Question: {question}");
    let _ = writeln!(out, "Reply with a single probability between 0 and 1.");
    out
}

/// Retrieval-augmented answering: one model call per question with the top
/// premises (and insights, when an insight index is given) in the prompt.
#[allow(clippy::too_many_arguments)]
pub fn run_premise_method(
    index: &PremiseIndex,
    insights: Option<&PremiseIndex>,
    codebook: &Codebook,
    items: &[BenchmarkItem],
    llm: &dyn LanguageModelClient,
    config: &PremiseMethodConfig,
    table_description: &str,
    variants: &[VariantType],
) -> Result<Vec<EvalRecord>, EvalError> {
    let params = CompletionParams::default();
    let mut records = Vec::new();
    for item in items {
        let k = num_states(codebook, item)?;
        for v in item.variants.iter().filter(|v| variants.contains(&v.variant_type)) {
            let premise_hits = retrieve(index, &v.question, config.k_premises, config.mode)?;
            let premise_texts: Vec<&str> = premise_hits.iter().filter_map(|h| index.text_of(&h.id)).collect();
            let insight_texts: Vec<&str> = match insights {
                Some(ix) => retrieve(ix, &v.question, config.k_insights, config.mode)?
                    .iter()
                    .filter_map(|h| ix.text_of(&h.id))
                    .collect(),
                None => Vec::new(),
            };
            let prompt = premise_prompt(&v.question, table_description, &premise_texts, &insight_texts);
            let reply = llm.complete(&prompt, &params)?;
            let prediction = extract_probability(&reply);
            let mut record = EvalRecord::new(item, v.variant_type, prediction, v.ground_truth, k);
            if !record.valid {
                record = record.with_note(format!("unusable reply: {}", reply.chars().take(120).collect::<String>()));
            }
            records.push(record);
        }
    }
    Ok(records)
}

/// Uniform random guess per question.
pub fn run_random(items: &[BenchmarkItem], seed: u64, variants: &[VariantType]) -> Vec<EvalRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for item in items {
        for v in item.variants.iter().filter(|v| variants.contains(&v.variant_type)) {
            let guess = rng.gen::<f64>();
            records.push(EvalRecord::new(item, v.variant_type, Some(guess), v.ground_truth, 1));
        }
    }
    records
}

pub fn records_to_jsonl(records: &[EvalRecord]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<EvalRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let r: EvalRecord = serde_json::from_str(line).map_err(|e| EvalError::Store {
                line: i + 1,
                reason: e.to_string(),
            })?;
            if !r.valid && r.fallback.is_none() {
                return Err(EvalError::Store {
                    line: i + 1,
                    reason: "invalid record without fallback".into(),
                });
            }
            Ok(r)
        })
        .collect()
}

/// Metrics of one method on one table for one variant type ("all" pools
/// every variant).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableResult {
    pub table: String,
    pub method: String,
    pub variant: String,
    pub metrics: Metrics,
}

pub fn table_results(table: &str, method: &str, records: &[EvalRecord]) -> Result<Vec<TableResult>, EvalError> {
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.variant.as_str().to_string()).or_default().push(r.clone());
    }
    if groups.len() > 1 {
        groups.insert("all".into(), records.to_vec());
    }
    groups
        .into_iter()
        .map(|(variant, rs)| {
            Ok(TableResult {
                table: table.to_string(),
                method: method.to_string(),
                variant,
                metrics: compute_metrics(&rs)?,
            })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single table.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: String,
    pub variant: String,
    pub tables: usize,
    pub error_rate: Stat,
    pub mae: Stat,
    pub rmse: Stat,
    pub acc_002: Stat,
    pub acc_005: Stat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<AggregateRow>,
    pub tables: Vec<TableResult>,
}

/// Mean and standard deviation of each metric across tables, per
/// (method, variant).
pub fn aggregate(results: &[TableResult]) -> Report {
    let mut groups: BTreeMap<(&str, &str), Vec<&Metrics>> = BTreeMap::new();
    for r in results {
        groups.entry((&r.method, &r.variant)).or_default().push(&r.metrics);
    }
    let rows = groups
        .into_iter()
        .map(|((method, variant), ms)| {
            let stat = |f: fn(&Metrics) -> f64| Stat::of(&ms.iter().map(|m| f(m)).collect::<Vec<_>>());
            AggregateRow {
                method: method.to_string(),
                variant: variant.to_string(),
                tables: ms.len(),
                error_rate: stat(|m| m.error_rate),
                mae: stat(|m| m.mae),
                rmse: stat(|m| m.rmse),
                acc_002: stat(|m| m.acc_002),
                acc_005: stat(|m| m.acc_005),
            }
        })
        .collect();
    let mut tables = results.to_vec();
    tables.sort_by(|a, b| (&a.table, &a.method, &a.variant).cmp(&(&b.table, &b.method, &b.variant)));
    Report { rows, tables }
}

impl Report {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EvalError> {
        serde_json::from_str(text).map_err(|e| EvalError::Store {
            line: e.line(),
            reason: e.to_string(),
        })
    }

    /// Aligned text table of means ± standard deviations.
    pub fn to_text(&self) -> String {
        let header = ["method", "variant", "tables", "error %", "MAE", "RMSE", "Acc0.02 %", "Acc0.05 %"];
        let pm = |s: &Stat, d: usize| format!("{:.*} ± {:.*}", d, s.mean, d, s.std);
        let rows: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.method.clone(),
                    r.variant.clone(),
                    r.tables.to_string(),
                    pm(&r.error_rate, 1),
                    pm(&r.mae, 4),
                    pm(&r.rmse, 4),
                    pm(&r.acc_002, 1),
                    pm(&r.acc_005, 1),
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: Vec<&str>| {
            cells
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (cell, w))| {
                    if c < 2 {
                        format!("{cell:<w$}")
                    } else {
                        format!("{cell:>w$}")
                    }
                })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = line(header.to_vec());
        out.push('\n');
        for r in &rows {
            out.push_str(&line(r.iter().map(String::as_str).collect()));
            out.push('\n');
        }
        out
    }
}
