//! Seeded synthetic networks for tests, demos and benchmarks.

use rand::Rng;

use super::{BayesNet, Dag, FitMeta, NodeInfo};
use crate::ingest::{level_phrases, Codebook, ColumnCodebook, StateDef, StateKind};

#[derive(Clone, Copy, Debug)]
pub struct RandomNetSpec {
    pub nodes: usize,
    pub min_states: usize,
    pub max_states: usize,
    pub max_parents: usize,
    /// Probability that an earlier node is proposed as a parent.
    pub edge_probability: f64,
}

impl Default for RandomNetSpec {
    fn default() -> Self {
        Self {
            nodes: 5,
            min_states: 2,
            max_states: 4,
            max_parents: 3,
            edge_probability: 0.5,
        }
    }
}

fn node(name: String, k: usize) -> NodeInfo {
    NodeInfo {
        name,
        states: (0..k).map(|s| format!("s{s}")).collect(),
    }
}

/// A random distribution with every entry strictly positive (flat Dirichlet
/// draws with a small floor).
pub fn random_distribution<R: Rng>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln() + 1e-3).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

/// Nodes `X0..Xn` in topological order; each earlier node is proposed as a
/// parent with `edge_probability`, keeping at most `max_parents`.
pub fn random_network<R: Rng>(rng: &mut R, spec: &RandomNetSpec) -> BayesNet {
    let names: Vec<String> = (0..spec.nodes).map(|i| format!("X{i}")).collect();
    let cards: Vec<usize> = (0..spec.nodes)
        .map(|_| rng.gen_range(spec.min_states..=spec.max_states))
        .collect();
    let mut dag = Dag::empty(names.clone());
    for child in 0..spec.nodes {
        let mut candidates: Vec<usize> = (0..child).filter(|_| rng.gen_bool(spec.edge_probability)).collect();
        while candidates.len() > spec.max_parents {
            let drop = rng.gen_range(0..candidates.len());
            candidates.remove(drop);
        }
        for parent in candidates {
            dag.add_edge(parent, child).expect("forward edges are acyclic");
        }
    }
    let tables = (0..spec.nodes)
        .map(|v| {
            let rows: usize = dag.parents(v).iter().map(|&p| cards[p]).product();
            (0..rows).flat_map(|_| random_distribution(rng, cards[v])).collect()
        })
        .collect();
    let nodes = names.into_iter().zip(&cards).map(|(n, &k)| node(n, k)).collect();
    BayesNet::new(nodes, dag, tables, FitMeta::default()).expect("synthetic network is valid")
}

/// The densest network allowed by `max_parents`: node `i` takes the
/// `min(i, max_parents)` nodes immediately before it as parents.
pub fn dense_network<R: Rng>(rng: &mut R, nodes: usize, states: usize, max_parents: usize) -> BayesNet {
    let names: Vec<String> = (0..nodes).map(|i| format!("X{i}")).collect();
    let mut dag = Dag::empty(names.clone());
    for child in 0..nodes {
        for parent in child.saturating_sub(max_parents)..child {
            dag.add_edge(parent, child).expect("forward edges are acyclic");
        }
    }
    let tables = (0..nodes)
        .map(|v| {
            let rows = states.pow(dag.parents(v).len() as u32);
            (0..rows).flat_map(|_| random_distribution(rng, states)).collect()
        })
        .collect();
    let nodes = names.into_iter().map(|n| node(n, states)).collect();
    BayesNet::new(nodes, dag, tables, FitMeta::default()).expect("synthetic network is valid")
}

/// Binary chain `A -> B -> C` with P(A=1)=0.5, P(B=1|A=1)=0.8,
/// P(B=1|A=0)=0.3, P(C=1|B=1)=0.9, P(C=1|B=0)=0.2. State 0 is "0", state 1 is "1".
pub fn toy_chain() -> BayesNet {
    let names = vec!["A".to_string(), "B".to_string(), "C".to_string()];
    let dag = Dag::from_edges(names.clone(), &[(0, 1), (1, 2)]).expect("chain");
    let nodes = names
        .into_iter()
        .map(|name| NodeInfo {
            name,
            states: vec!["0".into(), "1".into()],
        })
        .collect();
    let tables = vec![vec![0.5, 0.5], vec![0.7, 0.3, 0.2, 0.8], vec![0.8, 0.2, 0.1, 0.9]];
    BayesNet::new(nodes, dag, tables, FitMeta::default()).expect("chain is valid")
}

/// Numeric codebook for a synthetic network: state `i` of every node is the
/// bin `[10i, 10(i+1))`, described by the usual level phrases.
pub fn numeric_codebook(net: &BayesNet) -> Codebook {
    let mut codebook = Codebook::default();
    for v in 0..net.len() {
        let k = net.cardinality(v);
        let phrases = level_phrases(k);
        let states = (0..k)
            .map(|i| {
                let (lower, upper) = (10.0 * i as f64, 10.0 * (i + 1) as f64);
                StateDef {
                    id: i,
                    label: format!("between {lower} and {upper}"),
                    phrase: phrases[i].clone(),
                    lower: Some(lower),
                    upper: Some(upper),
                    values: None,
                    role: None,
                }
            })
            .collect();
        codebook.columns.insert(
            net.name(v).to_string(),
            ColumnCodebook {
                kind: StateKind::Numeric,
                states,
            },
        );
    }
    codebook
}
