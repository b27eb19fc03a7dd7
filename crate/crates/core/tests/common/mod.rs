//! Independent oracles: everything here works from the full joint table or
//! from first principles, never through the library's inference code.

#![allow(dead_code)]

use probtab::bayesnet::BayesNet;
use std::collections::BTreeMap;

/// Every full assignment with its probability, by the chain rule.
pub fn full_joint(net: &BayesNet) -> Vec<(Vec<usize>, f64)> {
    let cards = net.cardinalities();
    let total: usize = cards.iter().product();
    let mut out = Vec::with_capacity(total);
    for mut code in 0..total {
        let mut a = vec![0; cards.len()];
        for (slot, &k) in a.iter_mut().zip(&cards).rev() {
            *slot = code % k;
            code /= k;
        }
        let mut p = 1.0;
        for v in 0..net.len() {
            let cpt = net.cpt(v);
            let mut row = 0;
            for (&parent, &k) in cpt.parents.iter().zip(&cpt.parent_cards) {
                row = row * k + a[parent];
            }
            p *= cpt.probs[row * cpt.cardinality + a[v]];
        }
        out.push((a, p));
    }
    out
}

/// Posterior of `target` given `evidence` (node index to state), or `None`
/// when the evidence has probability zero.
pub fn enum_posterior(net: &BayesNet, target: usize, evidence: &[(usize, usize)]) -> Option<Vec<f64>> {
    let mut dist = vec![0.0; net.cardinality(target)];
    for (a, p) in full_joint(net) {
        if evidence.iter().all(|&(v, s)| a[v] == s) {
            dist[a[target]] += p;
        }
    }
    let z: f64 = dist.iter().sum();
    (z > 0.0).then(|| dist.iter().map(|x| x / z).collect())
}

/// Probability of a partial assignment.
pub fn enum_probability(net: &BayesNet, fixed: &[(usize, usize)]) -> f64 {
    full_joint(net)
        .into_iter()
        .filter(|(a, _)| fixed.iter().all(|&(v, s)| a[v] == s))
        .map(|(_, p)| p)
        .sum()
}

pub fn kl_nats(p: &[f64], q: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (a, b) in p.iter().zip(q) {
        if *a > 0.0 {
            sum += a * (a / b).ln();
        }
    }
    sum
}

/// Named-evidence map for the library API.
pub fn named(net: &BayesNet, evidence: &[(usize, usize)]) -> BTreeMap<String, usize> {
    evidence.iter().map(|&(v, s)| (net.name(v).to_string(), s)).collect()
}
