//! Greedy hill climbing over edge additions, deletions and reversals.

use std::cmp::Ordering;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::family_score_bic;
use super::{Dag, NetError};
use crate::ingest::DiscreteTable;

pub const MIN_ROWS: usize = 10;
const IMPROVEMENT_EPS: f64 = 1e-9;
const TIE_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LearnConfig {
    pub max_parents: usize,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            max_parents: 4,
            restarts: 3,
            seed: 0,
        }
    }
}

// Variant order doubles as the tie-break order: add < delete < reverse.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum MoveKind {
    Add,
    Delete,
    Reverse,
}

#[derive(Clone, Copy, Debug)]
struct Move {
    kind: MoveKind,
    parent: usize,
    child: usize,
    delta: f64,
}

struct ScoreCache<'a> {
    data: &'a DiscreteTable,
    scores: HashMap<(usize, Vec<usize>), f64>,
}

impl<'a> ScoreCache<'a> {
    fn new(data: &'a DiscreteTable) -> Self {
        Self {
            data,
            scores: HashMap::new(),
        }
    }

    fn family(&mut self, child: usize, parents: &[usize]) -> f64 {
        let data = self.data;
        *self
            .scores
            .entry((child, parents.to_vec()))
            .or_insert_with(|| family_score_bic(data, child, parents))
    }

    fn total(&mut self, dag: &Dag) -> f64 {
        (0..dag.len()).map(|v| self.family(v, dag.parents(v))).sum()
    }
}

fn with(parents: &[usize], extra: usize) -> Vec<usize> {
    let mut out = parents.to_vec();
    if let Err(at) = out.binary_search(&extra) {
        out.insert(at, extra);
    }
    out
}

fn without(parents: &[usize], gone: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&p| p != gone).collect()
}

/// Learns a DAG maximizing total BIC.
///
/// The first climb starts from the empty graph; each restart perturbs the
/// best graph so far with seeded random edge toggles and climbs again.
pub fn learn_structure(data: &DiscreteTable, config: &LearnConfig) -> Result<Dag, NetError> {
    let names = data.columns.clone();
    if names.len() < 2 {
        return Ok(Dag::empty(names));
    }
    if data.row_count() < MIN_ROWS {
        return Err(NetError::TooFewRows {
            rows: data.row_count(),
            needed: MIN_ROWS,
        });
    }
    let mut cache = ScoreCache::new(data);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut best = climb(Dag::empty(names), &mut cache, config.max_parents);
    let mut best_score = cache.total(&best);
    log::debug!("initial climb: {} edges, score {best_score:.4}", best.edge_count());

    for restart in 0..config.restarts {
        let start = perturb(&best, &mut rng, config.max_parents);
        let candidate = climb(start, &mut cache, config.max_parents);
        let score = cache.total(&candidate);
        log::debug!("restart {restart}: {} edges, score {score:.4}", candidate.edge_count());
        if score > best_score + IMPROVEMENT_EPS {
            best = candidate;
            best_score = score;
        }
    }
    Ok(best)
}

fn perturb(dag: &Dag, rng: &mut ChaCha8Rng, max_parents: usize) -> Dag {
    let mut out = dag.clone();
    let n = dag.len();
    for _ in 0..n {
        let parent = rng.gen_range(0..n);
        let child = rng.gen_range(0..n);
        if parent == child {
            continue;
        }
        if out.has_edge(parent, child) {
            out.remove_edge(parent, child);
        } else if out.parents(child).len() < max_parents && !out.reaches(child, parent) {
            out.add_edge(parent, child).expect("checked acyclic");
        }
    }
    out
}

fn better(a: &Move, b: &Move, dag: &Dag) -> bool {
    if a.delta > b.delta + TIE_EPS {
        return true;
    }
    if a.delta < b.delta - TIE_EPS {
        return false;
    }
    let key = |m: &Move| (m.kind, dag.name(m.parent).to_string(), dag.name(m.child).to_string());
    key(a).cmp(&key(b)) == Ordering::Less
}

fn best_move(dag: &Dag, cache: &mut ScoreCache, max_parents: usize) -> Option<Move> {
    let n = dag.len();
    let mut best: Option<Move> = None;
    let mut consider = |m: Move| {
        if best.as_ref().is_none_or(|b| better(&m, b, dag)) {
            best = Some(m);
        }
    };
    for parent in 0..n {
        for child in 0..n {
            if parent == child {
                continue;
            }
            let child_parents = dag.parents(child);
            let current = cache.family(child, child_parents);
            if dag.has_edge(parent, child) {
                let delete_delta = cache.family(child, &without(child_parents, parent)) - current;
                consider(Move {
                    kind: MoveKind::Delete,
                    parent,
                    child,
                    delta: delete_delta,
                });
                let parent_parents = dag.parents(parent);
                if parent_parents.len() < max_parents {
                    let mut trial = dag.clone();
                    trial.remove_edge(parent, child);
                    if !trial.reaches(parent, child) {
                        let delta = delete_delta + cache.family(parent, &with(parent_parents, child))
                            - cache.family(parent, parent_parents);
                        consider(Move {
                            kind: MoveKind::Reverse,
                            parent,
                            child,
                            delta,
                        });
                    }
                }
            } else if child_parents.len() < max_parents && !dag.reaches(child, parent) {
                let delta = cache.family(child, &with(child_parents, parent)) - current;
                consider(Move {
                    kind: MoveKind::Add,
                    parent,
                    child,
                    delta,
                });
            }
        }
    }
    best.filter(|m| m.delta > IMPROVEMENT_EPS)
}

fn climb(mut dag: Dag, cache: &mut ScoreCache, max_parents: usize) -> Dag {
    while let Some(m) = best_move(&dag, cache, max_parents) {
        apply(&mut dag, &m);
    }
    dag
}

fn apply(dag: &mut Dag, m: &Move) {
    match m.kind {
        MoveKind::Add => dag.add_edge(m.parent, m.child).expect("move checked acyclic"),
        MoveKind::Delete => {
            dag.remove_edge(m.parent, m.child);
        }
        MoveKind::Reverse => {
            dag.remove_edge(m.parent, m.child);
            dag.add_edge(m.child, m.parent).expect("move checked acyclic");
        }
    }
}

/// Runs one climb from `start`, recording the total score after every
/// accepted move.
pub fn climb_trace(data: &DiscreteTable, start: Dag, max_parents: usize) -> (Dag, Vec<f64>) {
    let mut cache = ScoreCache::new(data);
    let mut dag = start;
    let mut trace = vec![cache.total(&dag)];
    while let Some(m) = best_move(&dag, &mut cache, max_parents) {
        apply(&mut dag, &m);
        trace.push(cache.total(&dag));
    }
    (dag, trace)
}
