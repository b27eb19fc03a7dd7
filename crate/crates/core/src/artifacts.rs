//! Premise and insight stores derived from a fitted network.
//!
//! A premise is one CPT row: the distribution of a node under one
//! configuration of its parents. Insights are the premises whose
//! distribution departs most from the node's unconditional marginal,
//! weighted by how likely the parent configuration is.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::BayesNet;
use crate::ingest::Codebook;
use crate::inference::{joint_marginal, marginals};

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("premise {premise:?} refers to unknown node {node:?}")]
    UnknownNode { premise: String, node: String },
    #[error("premise {premise:?} does not match any CPT row of the network")]
    NotInNetwork { premise: String },
    #[error("codebook has no entry for {node:?} state {state}")]
    MissingCodebookEntry { node: String, state: usize },
    #[error("insight total must be at least 1")]
    ZeroTotal,
    #[error("line {line}: {reason}")]
    Store { line: usize, reason: String },
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParentState {
    pub node: String,
    pub state: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Premise {
    pub id: String,
    pub target: String,
    pub parents: Vec<ParentState>,
    pub probs: Vec<f64>,
    #[serde(default)]
    pub text_numeric: String,
    #[serde(default)]
    pub text_natural: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RenderStyle {
    Numeric,
    Natural,
}

impl Premise {
    /// Content-derived identifier, e.g. `price[volume=2,open=0]`.
    pub fn make_id(target: &str, parents: &[ParentState]) -> String {
        let cfg: Vec<String> = parents.iter().map(|p| format!("{}={}", p.node, p.state)).collect();
        format!("{target}[{}]", cfg.join(","))
    }

    pub fn is_root(&self) -> bool {
        self.parents.is_empty()
    }

    pub fn text(&self, style: RenderStyle) -> &str {
        match style {
            RenderStyle::Numeric => &self.text_numeric,
            RenderStyle::Natural => &self.text_natural,
        }
    }

    pub fn render_all(&mut self, codebook: &Codebook) -> Result<(), ArtifactError> {
        self.text_numeric = render_premise(self, RenderStyle::Numeric, codebook)?;
        self.text_natural = render_premise(self, RenderStyle::Natural, codebook)?;
        Ok(())
    }
}

/// One premise per CPT row of every node, in node then row order. Texts are
/// left empty; see [`render_premise`].
pub fn generate_premises(net: &BayesNet) -> Vec<Premise> {
    let mut premises = Vec::new();
    for v in 0..net.len() {
        let cpt = net.cpt(v);
        let target = net.name(v);
        for row in 0..cpt.row_count() {
            let parents: Vec<ParentState> = cpt
                .parents
                .iter()
                .zip(cpt.config_states(row))
                .map(|(&p, state)| ParentState {
                    node: net.name(p).to_string(),
                    state,
                })
                .collect();
            premises.push(Premise {
                id: Premise::make_id(target, &parents),
                target: target.to_string(),
                parents,
                probs: cpt.row(row).to_vec(),
                text_numeric: String::new(),
                text_natural: String::new(),
                impact: None,
            });
        }
    }
    premises
}

/// Generates the premise store with both renderings filled in.
pub fn generate_rendered_premises(net: &BayesNet, codebook: &Codebook) -> Result<Vec<Premise>, ArtifactError> {
    let mut premises = generate_premises(net);
    for p in &mut premises {
        p.render_all(codebook)?;
    }
    Ok(premises)
}

/// Closed-form premise count: one per CPT row, one for each root.
pub fn expected_premise_count(net: &BayesNet) -> usize {
    (0..net.len()).map(|v| net.cpt(v).row_count().max(1)).sum()
}

fn descriptor(codebook: &Codebook, node: &str, state: usize, style: RenderStyle) -> Result<String, ArtifactError> {
    let def = codebook.state(node, state).ok_or_else(|| ArtifactError::MissingCodebookEntry {
        node: node.to_string(),
        state,
    })?;
    let text = match style {
        RenderStyle::Numeric => &def.label,
        RenderStyle::Natural => &def.phrase,
    };
    Ok(format!("{node} is {text}"))
}

/// Renders a premise. Both styles share one template and differ only in the
/// state descriptors: bin labels for numeric, qualitative phrases for natural.
pub fn render_premise(p: &Premise, style: RenderStyle, codebook: &Codebook) -> Result<String, ArtifactError> {
    let outcomes = p
        .probs
        .iter()
        .enumerate()
        .map(|(state, prob)| {
            Ok(format!(
                "the probability that {} is {prob:.4}",
                descriptor(codebook, &p.target, state, style)?
            ))
        })
        .collect::<Result<Vec<_>, ArtifactError>>()?
        .join("; ");
    if p.parents.is_empty() {
        return Ok(format!("{}{}.", outcomes[..1].to_uppercase(), &outcomes[1..]));
    }
    let context = p
        .parents
        .iter()
        .map(|ps| descriptor(codebook, &ps.node, ps.state, style))
        .collect::<Result<Vec<_>, _>>()?
        .join(" and ");
    Ok(format!("When {context}, {outcomes}."))
}

/// Kullback-Leibler divergence in nats, with `0 ln(0/q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi / qi).ln())
        .sum::<f64>()
        .max(0.0)
}

/// Precomputed marginals and parent-configuration probabilities for scoring
/// many premises of one network.
pub struct ImpactScorer<'a> {
    net: &'a BayesNet,
    marginals: Vec<Vec<f64>>,
    parent_joints: Vec<Vec<f64>>,
}

impl<'a> ImpactScorer<'a> {
    pub fn new(net: &'a BayesNet) -> Self {
        let parent_joints = (0..net.len())
            .map(|v| {
                let parents = &net.cpt(v).parents;
                if parents.is_empty() {
                    vec![1.0]
                } else {
                    // parents are sorted, so the factor's layout matches CPT row order
                    joint_marginal(net, parents).values().to_vec()
                }
            })
            .collect();
        Self {
            net,
            marginals: marginals(net),
            parent_joints,
        }
    }

    pub fn marginal(&self, node: usize) -> &[f64] {
        &self.marginals[node]
    }

    /// `P(parent configuration) * KL(premise || marginal)`.
    pub fn impact(&self, p: &Premise) -> Result<f64, ArtifactError> {
        let v = self.net.index_of(&p.target).ok_or_else(|| ArtifactError::UnknownNode {
            premise: p.id.clone(),
            node: p.target.clone(),
        })?;
        let cpt = self.net.cpt(v);
        let declared: Vec<Option<usize>> = p.parents.iter().map(|ps| self.net.index_of(&ps.node)).collect();
        if declared.iter().copied().collect::<Option<Vec<_>>>().as_deref() != Some(&cpt.parents[..])
            || p.probs.len() != cpt.cardinality
            || p.parents.iter().zip(&cpt.parent_cards).any(|(ps, &k)| ps.state >= k)
        {
            return Err(ArtifactError::NotInNetwork { premise: p.id.clone() });
        }
        let states: Vec<usize> = p.parents.iter().map(|ps| ps.state).collect();
        let weight = self.parent_joints[v][cpt.config_index(&states)];
        Ok(weight * kl_divergence(&p.probs, &self.marginals[v]))
    }
}

pub fn premise_impact(net: &BayesNet, p: &Premise) -> Result<f64, ArtifactError> {
    ImpactScorer::new(net).impact(p)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Insight {
    #[serde(flatten)]
    pub premise: Premise,
    pub rank: usize,
}

impl Insight {
    pub fn impact(&self) -> f64 {
        self.premise.impact.unwrap_or(0.0)
    }
}

/// Default per-node cap: twice the even share of `total` across nodes.
pub fn default_per_node_cap(total: usize, nodes: usize) -> usize {
    total.div_ceil(nodes.max(1)) * 2
}

/// Ranks premises by impact (descending, ties by id) and keeps the top
/// `total`, letting no node take more than `per_node_cap` slots unless the
/// capped selection would come up short.
pub fn extract_insights(
    net: &BayesNet,
    premises: &[Premise],
    total: usize,
    per_node_cap: Option<usize>,
) -> Result<Vec<Insight>, ArtifactError> {
    if total == 0 {
        return Err(ArtifactError::ZeroTotal);
    }
    let scorer = ImpactScorer::new(net);
    let mut scored: Vec<(f64, &Premise)> = premises
        .iter()
        .map(|p| Ok((scorer.impact(p)?, p)))
        .collect::<Result<_, ArtifactError>>()?;
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));

    let chosen: Vec<usize> = if total >= scored.len() {
        (0..scored.len()).collect()
    } else {
        let cap = per_node_cap.unwrap_or_else(|| default_per_node_cap(total, net.len())).max(1);
        let mut per_node: BTreeMap<&str, usize> = BTreeMap::new();
        let mut picked = BTreeSet::new();
        for (i, (_, p)) in scored.iter().enumerate() {
            if picked.len() == total {
                break;
            }
            let used = per_node.entry(p.target.as_str()).or_default();
            if *used < cap {
                *used += 1;
                picked.insert(i);
            }
        }
        for i in 0..scored.len() {
            if picked.len() == total {
                break;
            }
            picked.insert(i);
        }
        picked.into_iter().collect()
    };

    Ok(chosen
        .into_iter()
        .enumerate()
        .map(|(rank, i)| {
            let (impact, p) = scored[i];
            let mut premise = p.clone();
            premise.impact = Some(impact);
            Insight { premise, rank: rank + 1 }
        })
        .collect())
}

pub fn premises_to_jsonl(premises: &[Premise]) -> String {
    jsonl(premises)
}

pub fn insights_to_jsonl(insights: &[Insight]) -> String {
    jsonl(insights)
}

fn jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

fn check_premise(p: &Premise, line: usize) -> Result<(), ArtifactError> {
    let bad = |reason: String| ArtifactError::Store { line, reason };
    if p.probs.is_empty() || p.probs.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(bad(format!("premise {:?} has invalid probabilities", p.id)));
    }
    let sum: f64 = p.probs.iter().sum();
    if (sum - 1.0).abs() > crate::bayesnet::ROW_SUM_TOLERANCE {
        return Err(bad(format!("premise {:?} probabilities sum to {sum}", p.id)));
    }
    if p.impact.is_some_and(|x| !(x >= 0.0)) {
        return Err(bad(format!("premise {:?} has a negative impact", p.id)));
    }
    Ok(())
}

pub fn premises_from_jsonl(text: &str) -> Result<Vec<Premise>, ArtifactError> {
    let mut ids = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Premise = serde_json::from_str(line).map_err(|e| ArtifactError::Store {
            line: i + 1,
            reason: e.to_string(),
        })?;
        check_premise(&p, i + 1)?;
        if !ids.insert(p.id.clone()) {
            return Err(ArtifactError::Store {
                line: i + 1,
                reason: format!("duplicate premise id {:?}", p.id),
            });
        }
        out.push(p);
    }
    Ok(out)
}

pub fn insights_from_jsonl(text: &str) -> Result<Vec<Insight>, ArtifactError> {
    let mut out: Vec<Insight> = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = |reason: String| ArtifactError::Store { line: i + 1, reason };
        let insight: Insight = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        check_premise(&insight.premise, i + 1)?;
        if insight.premise.impact.is_none() {
            return Err(bad("insight without impact".into()));
        }
        if insight.rank != out.len() + 1 {
            return Err(bad(format!("expected rank {}, found {}", out.len() + 1, insight.rank)));
        }
        if let Some(prev) = out.last() {
            if prev.impact() < insight.impact() {
                return Err(bad("insights not sorted by impact".into()));
            }
        }
        out.push(insight);
    }
    Ok(out)
}
