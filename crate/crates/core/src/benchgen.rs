//! Benchmark synthesis: typed probabilistic queries with four phrasings each
//! and exact ground truth.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::{BayesNet, Dag};
use crate::inference::{answer_query, joint_marginal, InferenceError, ProbQuery, QueryType};
use crate::ingest::{format_number, Codebook, StateDef};
use crate::llm::{CompletionParams, LanguageModelClient, LlmError};
use crate::querylang::{parse_query, render_query, QueryError, VariantType};

/// Tolerance when re-checking stored ground truth.
pub const GROUND_TRUTH_TOLERANCE: f64 = 1e-9;
/// Evidence configurations rarer than this are never emitted.
const MIN_EVIDENCE_PROBABILITY: f64 = 1e-9;
// Keeps the split stream independent of the item stream.
const SPLIT_STREAM: u64 = 0x5eed_5911;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error("codebook has no entry for node {0:?}")]
    MissingNode(String),
    #[error("paraphrase hook failed: {0}")]
    Paraphrase(#[from] LlmError),
    #[error("line {line}: {reason}")]
    Store { line: usize, reason: String },
    #[error("item {item}: {reason}")]
    Invalid { item: String, reason: String },
}

/// Type of `q` from the DAG's perspective. Explain-away wins over causal,
/// causal over evidential, evidential over mixed.
pub fn classify_query(dag: &Dag, q: &ProbQuery) -> QueryType {
    let Some(t) = dag.index_of(&q.target) else {
        return QueryType::Unspecified;
    };
    let evidence: Option<BTreeSet<usize>> = q.evidence.keys().map(|n| dag.index_of(n)).collect();
    let Some(evidence) = evidence.filter(|e| !e.is_empty() && !e.contains(&t)) else {
        return QueryType::Unspecified;
    };
    let explain_away = dag
        .children(t)
        .into_iter()
        .filter(|c| evidence.contains(c))
        .any(|c| dag.parents(c).iter().any(|&p| p != t && evidence.contains(&p)));
    if explain_away {
        return QueryType::ExplainAway;
    }
    if evidence.is_subset(&dag.ancestors(t)) {
        return QueryType::Causal;
    }
    if evidence.is_subset(&dag.descendants(t)) {
        return QueryType::Evidential;
    }
    if evidence.len() >= 2 {
        QueryType::MixedRedundant
    } else {
        QueryType::Unspecified
    }
}

/// 40 causal, 40 evidential, 37 explain-away and 40 mixed: 157 per table.
pub fn default_counts() -> BTreeMap<QueryType, usize> {
    BTreeMap::from([
        (QueryType::Causal, 40),
        (QueryType::Evidential, 40),
        (QueryType::ExplainAway, 37),
        (QueryType::MixedRedundant, 40),
    ])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisConfig {
    pub counts: BTreeMap<QueryType, usize>,
    pub seed: u64,
    pub max_evidence: usize,
    /// When set, each item is assigned to the test split with this probability.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_fraction: Option<f64>,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        Self {
            counts: default_counts(),
            seed: 0,
            max_evidence: 3,
            test_fraction: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// A numeric value or range quoted in a question, for auditing that it lies
/// inside the resolved bin.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stated {
    pub node: String,
    pub low: f64,
    pub high: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub variant_type: VariantType,
    pub question: String,
    pub resolved: ProbQuery,
    pub ground_truth: f64,
    pub stated: Vec<Stated>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkItem {
    pub id: String,
    pub table: String,
    pub query_type: QueryType,
    pub query: ProbQuery,
    pub variants: Vec<Variant>,
    pub split: Option<Split>,
}

impl BenchmarkItem {
    pub fn variant(&self, t: VariantType) -> Option<&Variant> {
        self.variants.iter().find(|v| v.variant_type == t)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shortfall {
    pub query_type: QueryType,
    pub requested: usize,
    pub produced: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub items: Vec<BenchmarkItem>,
    pub shortfall: Vec<Shortfall>,
}

fn pick<R: Rng>(rng: &mut R, pool: &[usize], min: usize, max: usize) -> Option<Vec<usize>> {
    let max = max.min(pool.len());
    if min == 0 || max < min {
        return None;
    }
    let k = rng.gen_range(min..=max);
    let mut chosen: Vec<usize> = pool.choose_multiple(rng, k).copied().collect();
    chosen.sort_unstable();
    Some(chosen)
}

/// Proposes `(target, evidence nodes)` shaped for `ty`; the caller still
/// checks the classification.
fn propose<R: Rng>(rng: &mut R, dag: &Dag, ty: QueryType, max_evidence: usize) -> Option<(usize, Vec<usize>)> {
    let n = dag.len();
    let t = rng.gen_range(0..n);
    let others: Vec<usize> = (0..n).filter(|&v| v != t).collect();
    let evidence = match ty {
        QueryType::Causal => pick(rng, &dag.ancestors(t).into_iter().collect::<Vec<_>>(), 1, max_evidence)?,
        QueryType::Evidential => pick(rng, &dag.descendants(t).into_iter().collect::<Vec<_>>(), 1, max_evidence)?,
        QueryType::ExplainAway => {
            let colliders: Vec<usize> = dag.children(t).into_iter().filter(|&c| dag.parents(c).len() >= 2).collect();
            let &c = colliders.choose(rng)?;
            let spouses: Vec<usize> = dag.parents(c).iter().copied().filter(|&p| p != t).collect();
            let &p = spouses.choose(rng)?;
            let mut e = vec![c, p];
            if max_evidence >= 3 && rng.gen_bool(0.5) {
                let rest: Vec<usize> = others.iter().copied().filter(|v| !e.contains(v)).collect();
                if let Some(&x) = rest.choose(rng) {
                    e.push(x);
                }
            }
            e.sort_unstable();
            e
        }
        QueryType::MixedRedundant => pick(rng, &others, 2, max_evidence)?,
        QueryType::Unspecified => return None,
    };
    Some((t, evidence))
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.len() - 1
}

fn states_of<'a>(codebook: &'a Codebook, node: &str) -> Result<&'a [StateDef], BenchError> {
    codebook
        .column(node)
        .map(|c| c.states.as_slice())
        .ok_or_else(|| BenchError::MissingNode(node.to_string()))
}

/// A sub-range `[a, b]` with `lower < a < b < upper`, printed with as few
/// significant digits as keep it strictly inside.
fn shifted_range<R: Rng>(rng: &mut R, def: &StateDef) -> Option<(String, String, f64, f64)> {
    let (lo, hi) = (def.lower?, def.upper?);
    let width = hi - lo;
    if !(width > 0.0) {
        return None;
    }
    let a = lo + width * rng.gen_range(0.1..0.4);
    let b = lo + width * rng.gen_range(0.6..0.9);
    (3..=15).find_map(|digits| {
        let (sa, sb) = (format_number(a, digits), format_number(b, digits));
        let (pa, pb) = (sa.parse::<f64>().ok()?, sb.parse::<f64>().ok()?);
        (lo < pa && pa < pb && pb < hi).then_some((sa, sb, pa, pb))
    })
}

/// A single value strictly inside the bin.
fn certain_value<R: Rng>(rng: &mut R, def: &StateDef) -> Option<(String, f64)> {
    let (lo, hi) = (def.lower?, def.upper?);
    if !(hi > lo) {
        return None;
    }
    let x = lo + (hi - lo) * rng.gen_range(0.25..0.75);
    (3..=15).find_map(|digits| {
        let s = format_number(x, digits);
        let v = s.parse::<f64>().ok()?;
        (lo < v && v < hi).then_some((s, v))
    })
}

fn question_for<R: Rng>(
    rng: &mut R,
    codebook: &Codebook,
    q: &ProbQuery,
    variant: VariantType,
) -> Result<(String, Vec<Stated>), BenchError> {
    let target_def = &states_of(codebook, &q.target)?[q.target_state];
    let target_text = match variant {
        VariantType::Natural => target_def.phrase.as_str(),
        _ => target_def.label.as_str(),
    };
    let mut stated = Vec::new();
    let mut conditions = Vec::new();
    for (node, &state) in &q.evidence {
        let def = &states_of(codebook, node)?[state];
        let text = match variant {
            VariantType::Exact => def.label.clone(),
            VariantType::Natural => def.phrase.clone(),
            VariantType::Shifted => match shifted_range(rng, def) {
                Some((sa, sb, a, b)) => {
                    stated.push(Stated {
                        node: node.clone(),
                        low: a,
                        high: b,
                    });
                    format!("between {sa} and {sb}")
                }
                None => def.label.clone(),
            },
            VariantType::Certain => match certain_value(rng, def) {
                Some((s, v)) => {
                    stated.push(Stated {
                        node: node.clone(),
                        low: v,
                        high: v,
                    });
                    s
                }
                None => def.label.clone(),
            },
        };
        conditions.push(format!("{node} is {text}"));
    }
    let context = conditions.join(" and ");
    let question = match variant {
        VariantType::Natural => format!("How likely is it that {} is {target_text} when {context}?", q.target),
        _ => format!("What is the probability that {} is {target_text} given that {context}?", q.target),
    };
    Ok((question, stated))
}

const PARAPHRASE_PROMPT: &str =
    "Rewrite the following question in different words without changing its meaning. Reply with the question only.\n";

/// Seeded benchmark generation. Requested counts that the DAG cannot
/// support are reported in `shortfall` instead of being padded.
pub fn synthesize_items(
    net: &BayesNet,
    codebook: &Codebook,
    table: &str,
    config: &SynthesisConfig,
    paraphrase: Option<&dyn LanguageModelClient>,
) -> Result<Synthesis, BenchError> {
    for v in 0..net.len() {
        if states_of(codebook, net.name(v))?.len() != net.cardinality(v) {
            return Err(BenchError::MissingNode(net.name(v).to_string()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let dag = net.dag();
    let mut seen = BTreeSet::new();
    let mut items = Vec::new();
    let mut shortfall = Vec::new();
    let usable = |node: usize, state: usize| codebook.state(net.name(node), state).is_some_and(|d| d.role.is_none());

    for (&ty, &requested) in &config.counts {
        let mut produced = 0;
        let budget = 200 * requested + 1000;
        let mut attempts = 0;
        while produced < requested && attempts < budget && net.len() >= 2 {
            attempts += 1;
            let Some((t, evars)) = propose(&mut rng, dag, ty, config.max_evidence.max(1)) else {
                continue;
            };
            let joint = joint_marginal(net, &evars);
            let mut idx = sample_index(&mut rng, joint.values());
            if joint.values()[idx] < MIN_EVIDENCE_PROBABILITY {
                continue;
            }
            let mut estates = vec![0; evars.len()];
            for (slot, &v) in evars.iter().enumerate().rev() {
                estates[slot] = idx % net.cardinality(v);
                idx /= net.cardinality(v);
            }
            if evars.iter().zip(&estates).any(|(&v, &s)| !usable(v, s)) {
                continue;
            }
            let candidates: Vec<usize> = (0..net.cardinality(t)).filter(|&s| usable(t, s)).collect();
            let Some(&ts) = candidates.choose(&mut rng) else {
                continue;
            };
            let mut q = evars
                .iter()
                .zip(&estates)
                .fold(ProbQuery::new(net.name(t), ts), |q, (&v, &s)| q.given(net.name(v), s));
            if classify_query(dag, &q) != ty || !seen.insert(render_query(&q, codebook)) {
                continue;
            }
            q.query_type = ty;
            let truth = answer_query(net, &q)?;
            let mut variants = Vec::with_capacity(4);
            for vt in VariantType::ALL {
                let (mut question, stated) = question_for(&mut rng, codebook, &q, vt)?;
                if let (VariantType::Natural, Some(llm)) = (vt, paraphrase) {
                    let reply = llm.complete(&format!("{PARAPHRASE_PROMPT}{question}"), &CompletionParams::default())?;
                    if !reply.trim().is_empty() {
                        question = reply.trim().to_string();
                    }
                }
                variants.push(Variant {
                    variant_type: vt,
                    question,
                    resolved: q.clone(),
                    ground_truth: truth,
                    stated,
                });
            }
            items.push(BenchmarkItem {
                id: String::new(),
                table: table.to_string(),
                query_type: ty,
                query: q,
                variants,
                split: None,
            });
            produced += 1;
        }
        if produced < requested {
            log::warn!("{table}: produced {produced} of {requested} {} queries", ty.as_str());
            shortfall.push(Shortfall {
                query_type: ty,
                requested,
                produced,
            });
        }
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed ^ SPLIT_STREAM);
    for (i, item) in items.iter_mut().enumerate() {
        item.id = format!("{table}-{:04}", i + 1);
        item.split = config.test_fraction.map(|f| {
            if split_rng.gen_bool(f.clamp(0.0, 1.0)) {
                Split::Test
            } else {
                Split::Train
            }
        });
    }
    Ok(Synthesis { items, shortfall })
}


/// Per-variant truth recomputed from the network.
pub fn ground_truth(net: &BayesNet, item: &BenchmarkItem) -> Result<Vec<f64>, InferenceError> {
    item.variants.iter().map(|v| answer_query(net, &v.resolved)).collect()
}

/// Checks stored truth, type labels and stated values against the network
/// and codebook.
pub fn verify_items(net: &BayesNet, codebook: &Codebook, items: &[BenchmarkItem]) -> Result<(), BenchError> {
    for item in items {
        let bad = |reason: String| BenchError::Invalid {
            item: item.id.clone(),
            reason,
        };
        let found = classify_query(net.dag(), &item.query);
        if found != item.query_type {
            return Err(bad(format!("labelled {} but classifies as {}", item.query_type.as_str(), found.as_str())));
        }
        for (v, truth) in item.variants.iter().zip(ground_truth(net, item)?) {
            if (v.ground_truth - truth).abs() > GROUND_TRUTH_TOLERANCE {
                return Err(bad(format!(
                    "{} variant stores {} but inference gives {truth}",
                    v.variant_type.as_str(),
                    v.ground_truth
                )));
            }
            for s in &v.stated {
                let state = v.resolved.evidence.get(&s.node).copied();
                let column = codebook.column(&s.node).ok_or_else(|| BenchError::MissingNode(s.node.clone()))?;
                let def = state.and_then(|st| column.states.get(st));
                let inside = def.is_some_and(|d| match (d.lower, d.upper) {
                    (Some(lo), Some(hi)) => lo <= s.low && s.low <= s.high && s.high <= hi,
                    _ => false,
                });
                if !inside {
                    return Err(bad(format!("stated value for {} lies outside its resolved state", s.node)));
                }
            }
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct VariantRecord {
    #[serde(rename = "type")]
    variant_type: VariantType,
    question: String,
    resolved_query: String,
    ground_truth: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    stated: Vec<Stated>,
}

#[derive(Serialize, Deserialize)]
struct ItemRecord {
    id: String,
    table: String,
    query_type: QueryType,
    canonical_query: String,
    variants: Vec<VariantRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<Split>,
}

pub fn items_to_jsonl(items: &[BenchmarkItem], codebook: &Codebook) -> String {
    let mut out = String::new();
    for item in items {
        let record = ItemRecord {
            id: item.id.clone(),
            table: item.table.clone(),
            query_type: item.query_type,
            canonical_query: render_query(&item.query, codebook),
            variants: item
                .variants
                .iter()
                .map(|v| VariantRecord {
                    variant_type: v.variant_type,
                    question: v.question.clone(),
                    resolved_query: render_query(&v.resolved, codebook),
                    ground_truth: v.ground_truth,
                    stated: v.stated.clone(),
                })
                .collect(),
            split: item.split,
        };
        out.push_str(&serde_json::to_string(&record).expect("item serializes"));
        out.push('\n');
    }
    out
}

pub fn items_from_jsonl(text: &str, codebook: &Codebook) -> Result<Vec<BenchmarkItem>, BenchError> {
    let mut ids = BTreeSet::new();
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| BenchError::Store { line: i + 1, reason };
        let record: ItemRecord = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let parse = |text: &str| {
            parse_query(text, codebook)
                .map(|mut q| {
                    q.query_type = record.query_type;
                    q
                })
                .map_err(|e: QueryError| bad(format!("query {text:?}: {e}")))
        };
        if !ids.insert(record.id.clone()) {
            return Err(bad(format!("duplicate item id {:?}", record.id)));
        }
        let kinds: BTreeSet<VariantType> = record.variants.iter().map(|v| v.variant_type).collect();
        if record.variants.len() != 4 || kinds.len() != 4 {
            return Err(bad("expected exactly one variant of each of the four types".into()));
        }
        let mut variants = Vec::with_capacity(4);
        for v in &record.variants {
            if !(0.0..=1.0).contains(&v.ground_truth) {
                return Err(bad(format!("ground truth {} outside [0, 1]", v.ground_truth)));
            }
            variants.push(Variant {
                variant_type: v.variant_type,
                question: v.question.clone(),
                resolved: parse(&v.resolved_query)?,
                ground_truth: v.ground_truth,
                stated: v.stated.clone(),
            });
        }
        items.push(BenchmarkItem {
            query: parse(&record.canonical_query)?,
            id: record.id,
            table: record.table,
            query_type: record.query_type,
            variants,
            split: record.split,
        });
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bayesnet::synthetic::{numeric_codebook, toy_chain};

    #[test]
    fn chain_classification() {
        let net = toy_chain();
        let dag = net.dag();
        assert_eq!(classify_query(dag, &ProbQuery::new("C", 1).given("A", 1)), QueryType::Causal);
        assert_eq!(classify_query(dag, &ProbQuery::new("A", 1).given("C", 1)), QueryType::Evidential);
        assert_eq!(
            classify_query(dag, &ProbQuery::new("B", 1).given("A", 1).given("C", 0)),
            QueryType::MixedRedundant
        );
        assert_eq!(classify_query(dag, &ProbQuery::new("B", 1)), QueryType::Unspecified);
    }

    #[test]
    fn collider_is_explain_away() {
        let names = vec!["A".to_string(), "B".to_string(), "C".to_string()];
        let dag = Dag::from_named_edges(names, &[("A", "C"), ("B", "C")]).unwrap();
        assert_eq!(
            classify_query(&dag, &ProbQuery::new("A", 0).given("C", 1).given("B", 1)),
            QueryType::ExplainAway
        );
        assert_eq!(classify_query(&dag, &ProbQuery::new("A", 0).given("C", 1)), QueryType::Evidential);
    }

    #[test]
    fn causal_items_on_chain() {
        let net = toy_chain();
        let cb = numeric_codebook(&net);
        let config = SynthesisConfig {
            counts: BTreeMap::from([(QueryType::Causal, 2)]),
            seed: 7,
            ..Default::default()
        };
        let out = synthesize_items(&net, &cb, "chain", &config, None).unwrap();
        assert_eq!(out.items.len(), 2);
        assert!(out.shortfall.is_empty());
        assert_eq!(out.items.iter().map(|i| i.variants.len()).sum::<usize>(), 8);
        for item in &out.items {
            for v in &item.variants {
                assert!((0.0..=1.0).contains(&v.ground_truth));
            }
        }
        verify_items(&net, &cb, &out.items).unwrap();
    }

    #[test]
    fn impossible_type_is_reported() {
        let net = toy_chain();
        let cb = numeric_codebook(&net);
        let config = SynthesisConfig {
            counts: BTreeMap::from([(QueryType::ExplainAway, 3)]),
            ..Default::default()
        };
        let out = synthesize_items(&net, &cb, "chain", &config, None).unwrap();
        assert!(out.items.is_empty());
        assert_eq!(
            out.shortfall,
            vec![Shortfall {
                query_type: QueryType::ExplainAway,
                requested: 3,
                produced: 0
            }]
        );
    }

    #[test]
    fn jsonl_round_trip() {
        let net = toy_chain();
        let cb = numeric_codebook(&net);
        let config = SynthesisConfig {
            counts: BTreeMap::from([(QueryType::Causal, 2), (QueryType::Evidential, 2)]),
            seed: 3,
            test_fraction: Some(0.5),
            ..Default::default()
        };
        let items = synthesize_items(&net, &cb, "chain", &config, None).unwrap().items;
        let text = items_to_jsonl(&items, &cb);
        let back = items_from_jsonl(&text, &cb).unwrap();
        assert_eq!(back, items);
        assert_eq!(items_to_jsonl(&back, &cb), text);
    }

    #[test]
    fn shifted_and_certain_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let def = StateDef {
            id: 0,
            label: "between 1 and 1.001".into(),
            phrase: "low".into(),
            lower: Some(1.0),
            upper: Some(1.001),
            values: None,
            role: None,
        };
        for _ in 0..100 {
            let (_, _, a, b) = shifted_range(&mut rng, &def).unwrap();
            assert!(1.0 < a && a < b && b < 1.001);
            let (_, v) = certain_value(&mut rng, &def).unwrap();
            assert!(1.0 < v && v < 1.001);
        }
    }
}
