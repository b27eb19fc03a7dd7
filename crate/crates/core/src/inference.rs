//! Exact inference by variable elimination.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesnet::BayesNet;

#[derive(Debug, Error, PartialEq)]
pub enum InferenceError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("state {state} out of range for node {node:?} with {cardinality} states")]
    UnknownState {
        node: String,
        state: usize,
        cardinality: usize,
    },
    #[error("target {0:?} also appears in the evidence")]
    TargetInEvidence(String),
    #[error("evidence has probability zero under the network")]
    ImpossibleEvidence,
    #[error("elimination order must list every non-target, non-evidence node exactly once")]
    BadOrder,
    #[error("num_states must be at least 1")]
    NoStates,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryType {
    Causal,
    Evidential,
    ExplainAway,
    MixedRedundant,
    #[default]
    Unspecified,
}

impl QueryType {
    pub const GENERATED: [QueryType; 4] = [
        QueryType::Causal,
        QueryType::Evidential,
        QueryType::ExplainAway,
        QueryType::MixedRedundant,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            QueryType::Causal => "causal",
            QueryType::Evidential => "evidential",
            QueryType::ExplainAway => "explain_away",
            QueryType::MixedRedundant => "mixed_redundant",
            QueryType::Unspecified => "unspecified",
        }
    }
}

/// A structured query `P(target = target_state | evidence)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbQuery {
    pub target: String,
    pub target_state: usize,
    pub evidence: BTreeMap<String, usize>,
    #[serde(default)]
    pub query_type: QueryType,
}

impl ProbQuery {
    pub fn new(target: impl Into<String>, target_state: usize) -> Self {
        Self {
            target: target.into(),
            target_state,
            evidence: BTreeMap::new(),
            query_type: QueryType::Unspecified,
        }
    }

    pub fn given(mut self, node: impl Into<String>, state: usize) -> Self {
        self.evidence.insert(node.into(), state);
        self
    }

    /// Same condition, ignoring the type label.
    pub fn same_condition(&self, other: &ProbQuery) -> bool {
        self.target == other.target && self.target_state == other.target_state && self.evidence == other.evidence
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Posterior {
    pub target: String,
    pub probs: Vec<f64>,
    pub evidence: BTreeMap<String, usize>,
}

/// A table over a sorted set of variables; the last variable varies fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Factor {
    vars: Vec<usize>,
    cards: Vec<usize>,
    values: Vec<f64>,
}

impl Factor {
    pub fn new(vars: Vec<usize>, cards: Vec<usize>, values: Vec<f64>) -> Self {
        debug_assert!(vars.windows(2).all(|w| w[0] < w[1]));
        debug_assert_eq!(values.len(), cards.iter().product::<usize>());
        Self { vars, cards, values }
    }

    pub fn vars(&self) -> &[usize] {
        &self.vars
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.cards[i + 1];
        }
        strides
    }

    /// The CPT of `node` as a factor over the node and its parents.
    pub fn from_cpt(net: &BayesNet, node: usize) -> Self {
        let cpt = net.cpt(node);
        let mut scope: Vec<usize> = cpt.parents.clone();
        scope.push(node);
        let mut vars = scope.clone();
        vars.sort_unstable();
        let cards: Vec<usize> = vars.iter().map(|&v| net.cardinality(v)).collect();
        let size: usize = cards.iter().product();
        let mut values = vec![0.0; size];
        let mut assignment = vec![0usize; vars.len()];
        for value in values.iter_mut() {
            let state_of = |v: usize| assignment[vars.binary_search(&v).unwrap()];
            let parent_states: Vec<usize> = cpt.parents.iter().map(|&p| state_of(p)).collect();
            *value = cpt.row(cpt.config_index(&parent_states))[state_of(node)];
            increment(&mut assignment, &cards);
        }
        Self { vars, cards, values }
    }

    pub fn product(&self, other: &Factor) -> Factor {
        let vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect::<BTreeSet<_>>().into_iter().collect();
        let cards: Vec<usize> = vars
            .iter()
            .map(|v| {
                self.vars
                    .iter()
                    .position(|x| x == v)
                    .map(|i| self.cards[i])
                    .unwrap_or_else(|| other.cards[other.vars.iter().position(|x| x == v).unwrap()])
            })
            .collect();
        let project = |f: &Factor| -> Vec<usize> {
            let strides = f.strides();
            vars.iter()
                .map(|v| f.vars.iter().position(|x| x == v).map(|i| strides[i]).unwrap_or(0))
                .collect()
        };
        let (sa, sb) = (project(self), project(other));
        let size: usize = cards.iter().product();
        let mut values = Vec::with_capacity(size);
        let mut assignment = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            // odometer step keeping both flat indices in sync
            for d in (0..vars.len()).rev() {
                assignment[d] += 1;
                ia += sa[d];
                ib += sb[d];
                if assignment[d] < cards[d] {
                    break;
                }
                ia -= sa[d] * cards[d];
                ib -= sb[d] * cards[d];
                assignment[d] = 0;
            }
        }
        Factor { vars, cards, values }
    }

    pub fn sum_out(&self, var: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let strides = self.strides();
        let (k, stride) = (self.cards[pos], strides[pos]);
        let outer = self.values.len() / (k * stride);
        let mut values = Vec::with_capacity(self.values.len() / k);
        for o in 0..outer {
            for i in 0..stride {
                let base = o * k * stride + i;
                values.push((0..k).map(|s| self.values[base + s * stride]).sum());
            }
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor { vars, cards, values }
    }

    /// Fixes `var` to `state`, dropping it from the scope.
    pub fn reduce(&self, var: usize, state: usize) -> Factor {
        let Some(pos) = self.vars.iter().position(|&v| v == var) else {
            return self.clone();
        };
        let strides = self.strides();
        let (k, stride) = (self.cards[pos], strides[pos]);
        let outer = self.values.len() / (k * stride);
        let mut values = Vec::with_capacity(self.values.len() / k);
        for o in 0..outer {
            let base = o * k * stride + state * stride;
            values.extend_from_slice(&self.values[base..base + stride]);
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor { vars, cards, values }
    }
}

fn increment(assignment: &mut [usize], cards: &[usize]) {
    for d in (0..assignment.len()).rev() {
        assignment[d] += 1;
        if assignment[d] < cards[d] {
            return;
        }
        assignment[d] = 0;
    }
}

/// How to order the variables being summed out.
#[derive(Clone, Debug, Default)]
pub enum Elimination {
    /// Greedy minimum degree in the interaction graph, ties to the lowest index.
    #[default]
    MinDegree,
    /// An explicit order over exactly the variables to eliminate.
    Order(Vec<usize>),
}

fn min_degree_order(factors: &[Factor], eliminate: &BTreeSet<usize>) -> Vec<usize> {
    let mut neighbours: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for f in factors {
        for &a in &f.vars {
            let entry = neighbours.entry(a).or_default();
            entry.extend(f.vars.iter().copied().filter(|&b| b != a));
        }
    }
    let mut remaining = eliminate.clone();
    let mut order = Vec::with_capacity(remaining.len());
    while let Some(&next) = remaining
        .iter()
        .min_by_key(|v| (neighbours.get(v).map_or(0, BTreeSet::len), **v))
    {
        remaining.remove(&next);
        order.push(next);
        let adjacent = neighbours.remove(&next).unwrap_or_default();
        for &a in &adjacent {
            let entry = neighbours.entry(a).or_default();
            entry.remove(&next);
            entry.extend(adjacent.iter().copied().filter(|&b| b != a));
        }
    }
    order
}

/// Unnormalized joint over `keep` with `evidence` applied: sums out every
/// other variable. The total of the result is P(evidence).
pub fn joint_factor(
    net: &BayesNet,
    keep: &[usize],
    evidence: &[(usize, usize)],
    elimination: &Elimination,
) -> Result<Factor, InferenceError> {
    let observed: BTreeSet<usize> = evidence.iter().map(|&(v, _)| v).collect();
    let kept: BTreeSet<usize> = keep.iter().copied().collect();
    let mut factors: Vec<Factor> = (0..net.len())
        .map(|v| {
            evidence
                .iter()
                .fold(Factor::from_cpt(net, v), |f, &(var, state)| f.reduce(var, state))
        })
        .collect();

    let eliminate: BTreeSet<usize> = (0..net.len())
        .filter(|v| !kept.contains(v) && !observed.contains(v))
        .collect();
    let order = match elimination {
        Elimination::MinDegree => min_degree_order(&factors, &eliminate),
        Elimination::Order(order) => {
            let given: BTreeSet<usize> = order.iter().copied().collect();
            if given != eliminate || order.len() != eliminate.len() {
                return Err(InferenceError::BadOrder);
            }
            order.clone()
        }
    };

    for var in order {
        let (touching, rest): (Vec<Factor>, Vec<Factor>) = factors.into_iter().partition(|f| f.vars.contains(&var));
        factors = rest;
        if let Some(product) = touching.into_iter().reduce(|a, b| a.product(&b)) {
            factors.push(product.sum_out(var));
        }
    }
    let joint = factors
        .into_iter()
        .reduce(|a, b| a.product(&b))
        .unwrap_or_else(|| Factor::new(vec![], vec![], vec![1.0]));
    Ok(joint)
}

fn resolve_evidence(
    net: &BayesNet,
    evidence: &BTreeMap<String, usize>,
) -> Result<Vec<(usize, usize)>, InferenceError> {
    evidence
        .iter()
        .map(|(name, &state)| {
            let v = net.index_of(name).ok_or_else(|| InferenceError::UnknownNode(name.clone()))?;
            check_state(net, v, state)?;
            Ok((v, state))
        })
        .collect()
}

fn check_state(net: &BayesNet, node: usize, state: usize) -> Result<(), InferenceError> {
    if state >= net.cardinality(node) {
        return Err(InferenceError::UnknownState {
            node: net.name(node).to_string(),
            state,
            cardinality: net.cardinality(node),
        });
    }
    Ok(())
}

/// Exact `P(target | evidence)` with the min-degree elimination order.
pub fn posterior(net: &BayesNet, target: &str, evidence: &BTreeMap<String, usize>) -> Result<Posterior, InferenceError> {
    posterior_with(net, target, evidence, &Elimination::MinDegree)
}

pub fn posterior_with(
    net: &BayesNet,
    target: &str,
    evidence: &BTreeMap<String, usize>,
    elimination: &Elimination,
) -> Result<Posterior, InferenceError> {
    let t = net.index_of(target).ok_or_else(|| InferenceError::UnknownNode(target.to_string()))?;
    if evidence.contains_key(target) {
        return Err(InferenceError::TargetInEvidence(target.to_string()));
    }
    let observed = resolve_evidence(net, evidence)?;
    let joint = joint_factor(net, &[t], &observed, elimination)?;
    let total = joint.total();
    if !(total > 0.0) || !total.is_finite() {
        return Err(InferenceError::ImpossibleEvidence);
    }
    Ok(Posterior {
        target: target.to_string(),
        probs: joint.values.iter().map(|v| v / total).collect(),
        evidence: evidence.clone(),
    })
}

/// Probability of a joint assignment (used for evidence weighting).
pub fn assignment_probability(net: &BayesNet, assignment: &BTreeMap<String, usize>) -> Result<f64, InferenceError> {
    let observed = resolve_evidence(net, assignment)?;
    Ok(joint_factor(net, &[], &observed, &Elimination::MinDegree)?.total())
}

/// Unconditional marginal of every node.
pub fn marginals(net: &BayesNet) -> Vec<Vec<f64>> {
    (0..net.len())
        .map(|v| {
            let f = joint_factor(net, &[v], &[], &Elimination::MinDegree).expect("no evidence");
            let total = f.total();
            f.values.iter().map(|x| x / total).collect()
        })
        .collect()
}

/// Normalized joint distribution over `vars` (sorted ascending in the
/// returned factor).
pub fn joint_marginal(net: &BayesNet, vars: &[usize]) -> Factor {
    let f = joint_factor(net, vars, &[], &Elimination::MinDegree).expect("no evidence");
    let total = f.total();
    Factor {
        values: f.values.iter().map(|x| x / total).collect(),
        ..f
    }
}

/// The probability of `q.target_state` under `P(q.target | q.evidence)`.
pub fn answer_query(net: &BayesNet, q: &ProbQuery) -> Result<f64, InferenceError> {
    let t = net.index_of(&q.target).ok_or_else(|| InferenceError::UnknownNode(q.target.clone()))?;
    check_state(net, t, q.target_state)?;
    Ok(posterior(net, &q.target, &q.evidence)?.probs[q.target_state])
}

/// Uniform-prior substitute for a missing or invalid prediction.
pub fn fallback_value(num_states: usize) -> Result<f64, InferenceError> {
    if num_states == 0 {
        return Err(InferenceError::NoStates);
    }
    Ok(1.0 / num_states as f64)
}
