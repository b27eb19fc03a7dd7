use crate::ingest::DiscreteTable;

/// Index of a parent configuration, first parent most significant.
pub(crate) fn config_index(states: impl Iterator<Item = usize>, cards: &[usize]) -> usize {
    states.zip(cards).fold(0, |acc, (s, k)| acc * k + s)
}

/// Joint counts `n[config][child_state]`, flattened row-major.
pub(crate) fn family_counts(data: &DiscreteTable, child: usize, parents: &[usize]) -> Vec<usize> {
    let child_card = data.cardinalities[child];
    let parent_cards: Vec<usize> = parents.iter().map(|&p| data.cardinalities[p]).collect();
    let configs: usize = parent_cards.iter().product();
    let mut counts = vec![0usize; configs * child_card];
    for r in 0..data.row_count() {
        let row = data.row(r);
        let cfg = config_index(parents.iter().map(|&p| row[p]), &parent_cards);
        counts[cfg * child_card + row[child]] += 1;
    }
    counts
}

/// BIC of one family: maximum-likelihood log-likelihood of `child` given
/// `parents`, minus `ln(N)/2` per free parameter.
pub fn family_score_bic(data: &DiscreteTable, child: usize, parents: &[usize]) -> f64 {
    let k = data.cardinalities[child];
    let counts = family_counts(data, child, parents);
    let configs = counts.len() / k;
    let mut log_likelihood = 0.0;
    for row in counts.chunks(k) {
        let total: usize = row.iter().sum();
        if total == 0 {
            continue;
        }
        for &n in row.iter().filter(|&&n| n > 0) {
            log_likelihood += n as f64 * (n as f64 / total as f64).ln();
        }
    }
    let free = configs * (k - 1);
    let n = data.row_count() as f64;
    log_likelihood - 0.5 * n.ln() * free as f64
}

/// Sum of family scores over every node of `dag`.
pub fn total_score_bic(data: &DiscreteTable, dag: &super::Dag) -> f64 {
    (0..dag.len()).map(|v| family_score_bic(data, v, dag.parents(v))).sum()
}
