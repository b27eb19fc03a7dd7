use std::collections::{BTreeSet, VecDeque};

use super::NetError;

/// Directed acyclic graph over named nodes. Parent lists are kept sorted.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dag {
    names: Vec<String>,
    parents: Vec<Vec<usize>>,
}

impl Dag {
    pub fn empty(names: Vec<String>) -> Self {
        let parents = vec![Vec::new(); names.len()];
        Self { names, parents }
    }

    pub fn from_edges(names: Vec<String>, edges: &[(usize, usize)]) -> Result<Self, NetError> {
        let mut dag = Self::empty(names);
        for &(p, c) in edges {
            dag.add_edge(p, c)?;
        }
        Ok(dag)
    }

    pub fn from_named_edges(names: Vec<String>, edges: &[(&str, &str)]) -> Result<Self, NetError> {
        let mut dag = Self::empty(names);
        for (p, c) in edges {
            let p = dag.index_of(p).ok_or_else(|| NetError::UnknownNode(p.to_string()))?;
            let c = dag.index_of(c).ok_or_else(|| NetError::UnknownNode(c.to_string()))?;
            dag.add_edge(p, c)?;
        }
        Ok(dag)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn parents(&self, node: usize) -> &[usize] {
        &self.parents[node]
    }

    pub fn children(&self, node: usize) -> Vec<usize> {
        (0..self.len()).filter(|&c| self.parents[c].contains(&node)).collect()
    }

    pub fn has_edge(&self, parent: usize, child: usize) -> bool {
        self.parents[child].binary_search(&parent).is_ok()
    }

    /// Edges as `(parent, child)`, ordered by child then parent.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect()
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    pub fn max_in_degree(&self) -> usize {
        self.parents.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// True if a directed path leads from `from` to `to` (a node reaches itself).
    pub fn reaches(&self, from: usize, to: usize) -> bool {
        if from == to {
            return true;
        }
        let children = self.children_lists();
        let mut seen = vec![false; self.len()];
        let mut stack = vec![from];
        while let Some(n) = stack.pop() {
            for &c in &children[n] {
                if c == to {
                    return true;
                }
                if !seen[c] {
                    seen[c] = true;
                    stack.push(c);
                }
            }
        }
        false
    }

    fn children_lists(&self) -> Vec<Vec<usize>> {
        let mut children = vec![Vec::new(); self.len()];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                children[p].push(c);
            }
        }
        children
    }

    pub fn add_edge(&mut self, parent: usize, child: usize) -> Result<(), NetError> {
        if parent >= self.len() || child >= self.len() {
            return Err(NetError::UnknownNode(format!("#{}", parent.max(child))));
        }
        if self.has_edge(parent, child) {
            return Ok(());
        }
        if self.reaches(child, parent) {
            return Err(NetError::Cycle {
                parent: self.names[parent].clone(),
                child: self.names[child].clone(),
            });
        }
        let ps = &mut self.parents[child];
        let at = ps.binary_search(&parent).unwrap_err();
        ps.insert(at, parent);
        Ok(())
    }

    pub fn remove_edge(&mut self, parent: usize, child: usize) -> bool {
        match self.parents[child].binary_search(&parent) {
            Ok(at) => {
                self.parents[child].remove(at);
                true
            }
            Err(_) => false,
        }
    }

    /// Kahn's algorithm, always releasing the lowest-index ready node first.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let children = self.children_lists();
        let mut indegree: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: BTreeSet<usize> = (0..self.len()).filter(|&n| indegree[n] == 0).collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(n) = ready.pop_first() {
            order.push(n);
            for &c in &children[n] {
                indegree[c] -= 1;
                if indegree[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn ancestors(&self, node: usize) -> BTreeSet<usize> {
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = self.parents[node].iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n) {
                queue.extend(self.parents[n].iter().copied());
            }
        }
        seen
    }

    pub fn descendants(&self, node: usize) -> BTreeSet<usize> {
        let children = self.children_lists();
        let mut seen = BTreeSet::new();
        let mut queue: VecDeque<usize> = children[node].iter().copied().collect();
        while let Some(n) = queue.pop_front() {
            if seen.insert(n) {
                queue.extend(children[n].iter().copied());
            }
        }
        seen
    }

    /// Parents, children and the children's other parents.
    pub fn markov_blanket(&self, node: usize) -> BTreeSet<usize> {
        let mut blanket: BTreeSet<usize> = self.parents[node].iter().copied().collect();
        for child in self.children(node) {
            blanket.insert(child);
            blanket.extend(self.parents[child].iter().copied());
        }
        blanket.remove(&node);
        blanket
    }

    pub fn markov_blanket_of(&self, name: &str) -> Result<BTreeSet<String>, NetError> {
        let node = self.index_of(name).ok_or_else(|| NetError::UnknownNode(name.to_string()))?;
        Ok(self.markov_blanket(node).into_iter().map(|n| self.names[n].clone()).collect())
    }

    /// Undirected edge set, each pair ordered by name.
    pub fn skeleton(&self) -> BTreeSet<(String, String)> {
        self.edges()
            .into_iter()
            .map(|(p, c)| {
                let (a, b) = (self.names[p].clone(), self.names[c].clone());
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect()
    }
}
