//! Discrete Bayesian networks: structure, conditional probability tables,
//! parameter fitting and the JSON interchange format.

mod dag;
mod score;
mod search;
pub mod synthetic;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dag::Dag;
pub use score::{family_score_bic, total_score_bic};
pub use search::{climb_trace, learn_structure, LearnConfig, MIN_ROWS};

use crate::ingest::{Codebook, DiscreteTable};
use score::{config_index, family_counts};

/// Tolerance on CPT row sums.
pub const ROW_SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("unknown node {0:?}")]
    UnknownNode(String),
    #[error("edge {parent} -> {child} would create a cycle")]
    Cycle { parent: String, child: String },
    #[error("structure learning needs at least {needed} rows, got {rows}")]
    TooFewRows { rows: usize, needed: usize },
    #[error("node {node:?}, row {row}: {reason}")]
    InvalidCpt { node: String, row: usize, reason: String },
    #[error("node {node:?}: {reason}")]
    InvalidNode { node: String, reason: String },
    #[error("malformed network JSON: {0}")]
    Json(String),
}

/// Conditional probability table for one node. Rows are indexed by parent
/// configuration with the first parent most significant.
#[derive(Clone, Debug, PartialEq)]
pub struct Cpt {
    pub parents: Vec<usize>,
    pub parent_cards: Vec<usize>,
    pub cardinality: usize,
    pub probs: Vec<f64>,
}

impl Cpt {
    pub fn row_count(&self) -> usize {
        self.parent_cards.iter().product()
    }

    pub fn row(&self, config: usize) -> &[f64] {
        &self.probs[config * self.cardinality..(config + 1) * self.cardinality]
    }

    pub fn config_index(&self, parent_states: &[usize]) -> usize {
        config_index(parent_states.iter().copied(), &self.parent_cards)
    }

    /// Parent states of row `config`, in parent order.
    pub fn config_states(&self, mut config: usize) -> Vec<usize> {
        let mut states = vec![0; self.parent_cards.len()];
        for (slot, &k) in states.iter_mut().zip(&self.parent_cards).rev() {
            *slot = config % k;
            config /= k;
        }
        states
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeInfo {
    pub name: String,
    pub states: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub rows: usize,
    pub alpha: f64,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BayesNet {
    nodes: Vec<NodeInfo>,
    dag: Dag,
    cpts: Vec<Cpt>,
    pub meta: FitMeta,
}

impl BayesNet {
    /// Assembles and validates a network. `tables[i]` is node `i`'s flattened
    /// CPT over the parent configurations of `dag`.
    pub fn new(nodes: Vec<NodeInfo>, dag: Dag, tables: Vec<Vec<f64>>, meta: FitMeta) -> Result<Self, NetError> {
        if nodes.len() != dag.len() || tables.len() != dag.len() {
            return Err(NetError::Json(format!(
                "{} nodes, {} graph nodes, {} tables",
                nodes.len(),
                dag.len(),
                tables.len()
            )));
        }
        let cpts = tables
            .into_iter()
            .enumerate()
            .map(|(v, probs)| {
                let parents = dag.parents(v).to_vec();
                Cpt {
                    parent_cards: parents.iter().map(|&p| nodes[p].states.len()).collect(),
                    parents,
                    cardinality: nodes[v].states.len(),
                    probs,
                }
            })
            .collect();
        let net = Self { nodes, dag, cpts, meta };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), NetError> {
        if !self.dag.is_acyclic() {
            return Err(NetError::Json("graph has a directed cycle".into()));
        }
        for (v, (node, cpt)) in self.nodes.iter().zip(&self.cpts).enumerate() {
            if node.states.is_empty() {
                return Err(NetError::InvalidNode {
                    node: node.name.clone(),
                    reason: "no states".into(),
                });
            }
            if self.dag.name(v) != node.name || cpt.parents != self.dag.parents(v) {
                return Err(NetError::InvalidNode {
                    node: node.name.clone(),
                    reason: "CPT parents do not match the graph".into(),
                });
            }
            if cpt.probs.len() != cpt.row_count() * cpt.cardinality {
                return Err(NetError::InvalidNode {
                    node: node.name.clone(),
                    reason: format!(
                        "expected {} rows of {} probabilities, got {} values",
                        cpt.row_count(),
                        cpt.cardinality,
                        cpt.probs.len()
                    ),
                });
            }
            for row in 0..cpt.row_count() {
                let probs = cpt.row(row);
                let invalid = |reason: String| NetError::InvalidCpt {
                    node: node.name.clone(),
                    row,
                    reason,
                };
                if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(invalid(format!("probability {p} outside [0, 1]")));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                    return Err(invalid(format!("row sums to {sum}")));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn nodes(&self) -> &[NodeInfo] {
        &self.nodes
    }

    pub fn cpt(&self, node: usize) -> &Cpt {
        &self.cpts[node]
    }

    pub fn cpts(&self) -> &[Cpt] {
        &self.cpts
    }

    pub fn name(&self, node: usize) -> &str {
        &self.nodes[node].name
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    pub fn cardinality(&self, node: usize) -> usize {
        self.nodes[node].states.len()
    }

    pub fn cardinalities(&self) -> Vec<usize> {
        self.nodes.iter().map(|n| n.states.len()).collect()
    }

    /// Replaces positional state labels with the codebook's labels.
    pub fn with_codebook_labels(mut self, codebook: &Codebook) -> Self {
        for node in &mut self.nodes {
            if let Some(column) = codebook.column(&node.name) {
                if column.cardinality() == node.states.len() {
                    node.states = column.states.iter().map(|s| s.label.clone()).collect();
                }
            }
        }
        self
    }

    /// Draws `n` rows by forward sampling in topological order.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Vec<Vec<usize>> {
        let order = self.dag.topological_order().expect("validated acyclic");
        (0..n)
            .map(|_| {
                let mut row = vec![0; self.len()];
                for &v in &order {
                    let cpt = &self.cpts[v];
                    let parent_states: Vec<usize> = cpt.parents.iter().map(|&p| row[p]).collect();
                    let probs = cpt.row(cpt.config_index(&parent_states));
                    row[v] = sample_index(rng, probs);
                }
                row
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        let file = NetFile {
            nodes: self.nodes.clone(),
            edges: self
                .dag
                .edges()
                .into_iter()
                .map(|(p, c)| [self.name(p).to_string(), self.name(c).to_string()])
                .collect(),
            cpts: self
                .nodes
                .iter()
                .zip(&self.cpts)
                .map(|(node, cpt)| {
                    let rows = (0..cpt.row_count())
                        .map(|r| CptRowFile {
                            config: cpt.config_states(r),
                            probs: cpt.row(r).to_vec(),
                        })
                        .collect();
                    let parents = cpt.parents.iter().map(|&p| self.name(p).to_string()).collect();
                    (node.name.clone(), CptFile { parents, rows })
                })
                .collect(),
            meta: self.meta.clone(),
        };
        serde_json::to_string_pretty(&file).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let file: NetFile = serde_json::from_str(text).map_err(|e| NetError::Json(e.to_string()))?;
        let names: Vec<String> = file.nodes.iter().map(|n| n.name.clone()).collect();
        let edges: Vec<(&str, &str)> = file.edges.iter().map(|[p, c]| (p.as_str(), c.as_str())).collect();
        let dag = Dag::from_named_edges(names, &edges)?;
        if file.cpts.len() != file.nodes.len() {
            return Err(NetError::Json(format!(
                "{} CPTs for {} nodes",
                file.cpts.len(),
                file.nodes.len()
            )));
        }
        let mut tables = Vec::with_capacity(file.nodes.len());
        for (v, node) in file.nodes.iter().enumerate() {
            let cpt = file.cpts.get(&node.name).ok_or_else(|| NetError::InvalidNode {
                node: node.name.clone(),
                reason: "no CPT".into(),
            })?;
            let declared: Vec<Option<usize>> = cpt.parents.iter().map(|p| dag.index_of(p)).collect();
            if declared.iter().copied().collect::<Option<Vec<_>>>().as_deref() != Some(dag.parents(v)) {
                return Err(NetError::InvalidNode {
                    node: node.name.clone(),
                    reason: "CPT parents do not match edges".into(),
                });
            }
            let parent_cards: Vec<usize> = dag.parents(v).iter().map(|&p| file.nodes[p].states.len()).collect();
            let k = node.states.len();
            let rows: usize = parent_cards.iter().product();
            let mut probs = vec![f64::NAN; rows * k];
            let mut seen = vec![false; rows];
            for (i, row) in cpt.rows.iter().enumerate() {
                let invalid = |reason: String| NetError::InvalidCpt {
                    node: node.name.clone(),
                    row: i,
                    reason,
                };
                if row.config.len() != parent_cards.len()
                    || row.config.iter().zip(&parent_cards).any(|(s, k)| s >= k)
                {
                    return Err(invalid(format!("bad parent configuration {:?}", row.config)));
                }
                if row.probs.len() != k {
                    return Err(invalid(format!("{} probabilities for {k} states", row.probs.len())));
                }
                let at = config_index(row.config.iter().copied(), &parent_cards);
                if std::mem::replace(&mut seen[at], true) {
                    return Err(invalid(format!("duplicate configuration {:?}", row.config)));
                }
                probs[at * k..(at + 1) * k].copy_from_slice(&row.probs);
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(NetError::InvalidCpt {
                    node: node.name.clone(),
                    row: missing,
                    reason: "parent configuration missing".into(),
                });
            }
            tables.push(probs);
        }
        Self::new(file.nodes, dag, tables, file.meta)
    }
}

pub(crate) fn sample_index<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[derive(Serialize, Deserialize)]
struct NetFile {
    nodes: Vec<NodeInfo>,
    edges: Vec<[String; 2]>,
    cpts: IndexMap<String, CptFile>,
    meta: FitMeta,
}

#[derive(Serialize, Deserialize)]
struct CptFile {
    parents: Vec<String>,
    rows: Vec<CptRowFile>,
}

#[derive(Serialize, Deserialize)]
struct CptRowFile {
    config: Vec<usize>,
    probs: Vec<f64>,
}

/// Fits CPTs with Laplace smoothing: `(count + alpha) / (total + alpha * K)`.
/// Parent configurations with no data get the uniform distribution.
pub fn fit_parameters(data: &DiscreteTable, dag: &Dag, alpha: f64) -> Result<BayesNet, NetError> {
    let columns: Vec<usize> = dag
        .names()
        .iter()
        .map(|n| data.column_index(n).ok_or_else(|| NetError::UnknownNode(n.clone())))
        .collect::<Result<_, _>>()?;
    // Re-index the table so node i is column i.
    let cards: Vec<usize> = columns.iter().map(|&c| data.cardinalities[c]).collect();
    let projected = if columns.iter().enumerate().all(|(i, &c)| i == c) && columns.len() == data.column_count() {
        data.clone()
    } else {
        let rows = (0..data.row_count())
            .map(|r| columns.iter().map(|&c| data.get(r, c)).collect())
            .collect();
        DiscreteTable::new(data.name.clone(), dag.names().to_vec(), cards.clone(), rows)
            .map_err(|e| NetError::Json(e.to_string()))?
    };

    let nodes: Vec<NodeInfo> = dag
        .names()
        .iter()
        .zip(&cards)
        .map(|(name, &k)| NodeInfo {
            name: name.clone(),
            states: (0..k).map(|s| s.to_string()).collect(),
        })
        .collect();
    let tables = (0..dag.len())
        .map(|v| {
            let k = cards[v];
            let counts = family_counts(&projected, v, dag.parents(v));
            counts
                .chunks(k)
                .flat_map(|row| {
                    let total: usize = row.iter().sum();
                    let denom = total as f64 + alpha * k as f64;
                    row.iter()
                        .map(move |&n| if denom > 0.0 { (n as f64 + alpha) / denom } else { 1.0 / k as f64 })
                        .collect::<Vec<_>>()
                })
                .collect()
        })
        .collect();
    BayesNet::new(
        nodes,
        dag.clone(),
        tables,
        FitMeta {
            rows: data.row_count(),
            alpha,
            seed: None,
        },
    )
}
