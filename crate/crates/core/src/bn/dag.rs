use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Directed acyclic graph over named nodes. Parent lists are kept sorted by
/// node index, which is also the parent order of every CPT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "DagRepr", try_from = "DagRepr")]
pub struct Dag {
    nodes: Vec<String>,
    parents: Vec<Vec<usize>>,
}

#[derive(Serialize, Deserialize)]
struct DagRepr {
    nodes: Vec<String>,
    parents: BTreeMap<String, Vec<String>>,
}

impl From<Dag> for DagRepr {
    fn from(d: Dag) -> Self {
        let parents = d
            .nodes
            .iter()
            .enumerate()
            .filter(|(i, _)| !d.parents[*i].is_empty())
            .map(|(i, n)| {
                (
                    n.clone(),
                    d.parents[i].iter().map(|&p| d.nodes[p].clone()).collect(),
                )
            })
            .collect();
        DagRepr {
            nodes: d.nodes,
            parents,
        }
    }
}

impl TryFrom<DagRepr> for Dag {
    type Error = Error;

    fn try_from(r: DagRepr) -> Result<Self> {
        let mut dag = Dag::empty(r.nodes)?;
        for (child, ps) in r.parents {
            let c = dag.require(&child)?;
            for p in ps {
                let p = dag.require(&p)?;
                dag.add_edge(p, c)?;
            }
        }
        Ok(dag)
    }
}

impl Dag {
    /// Graph with the given nodes and no edges.
    pub fn empty(nodes: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = nodes.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidNetwork(format!("duplicate node `{dup}`")));
        }
        let parents = vec![Vec::new(); nodes.len()];
        Ok(Dag { nodes, parents })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[String] {
        &self.nodes
    }

    pub fn name(&self, i: usize) -> &str {
        &self.nodes[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.index_of(name)
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn parents(&self, i: usize) -> &[usize] {
        &self.parents[i]
    }

    pub fn parent_names(&self, i: usize) -> Vec<&str> {
        self.parents[i]
            .iter()
            .map(|&p| self.nodes[p].as_str())
            .collect()
    }

    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&c| self.parents[c].contains(&i))
            .collect()
    }

    pub fn has_edge(&self, from: usize, to: usize) -> bool {
        self.parents[to].binary_search(&from).is_ok()
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .flat_map(|(c, ps)| ps.iter().map(move |&p| (p, c)))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn edge_count(&self) -> usize {
        self.parents.iter().map(Vec::len).sum()
    }

    /// True when `to` is reachable from `from` along directed edges.
    pub fn has_path(&self, from: usize, to: usize) -> bool {
        let children = self.child_lists();
        let mut stack = vec![from];
        let mut seen = vec![false; self.len()];
        while let Some(n) = stack.pop() {
            if n == to {
                return true;
            }
            if std::mem::replace(&mut seen[n], true) {
                continue;
            }
            stack.extend(children[n].iter().copied());
        }
        false
    }

    pub(crate) fn child_lists(&self) -> Vec<Vec<usize>> {
        let mut ch = vec![Vec::new(); self.len()];
        for (c, ps) in self.parents.iter().enumerate() {
            for &p in ps {
                ch[p].push(c);
            }
        }
        ch
    }

    pub fn add_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if from == to {
            return Err(Error::InvalidNetwork(format!(
                "self loop on `{}`",
                self.nodes[from]
            )));
        }
        if self.has_edge(from, to) {
            return Ok(());
        }
        if self.has_path(to, from) {
            return Err(Error::InvalidNetwork(format!(
                "edge {} -> {} would create a cycle",
                self.nodes[from], self.nodes[to]
            )));
        }
        let ps = &mut self.parents[to];
        let at = ps.binary_search(&from).unwrap_err();
        ps.insert(at, from);
        Ok(())
    }

    pub fn add_edge_by_name(&mut self, from: &str, to: &str) -> Result<()> {
        let (f, t) = (self.require(from)?, self.require(to)?);
        self.add_edge(f, t)
    }

    pub fn remove_edge(&mut self, from: usize, to: usize) -> bool {
        match self.parents[to].binary_search(&from) {
            Ok(at) => {
                self.parents[to].remove(at);
                true
            }
            Err(_) => false,
        }
    }

    pub fn reverse_edge(&mut self, from: usize, to: usize) -> Result<()> {
        if !self.remove_edge(from, to) {
            return Err(Error::InvalidNetwork("no such edge to reverse".into()));
        }
        if let Err(e) = self.add_edge(to, from) {
            self.add_edge(from, to)
                .expect("restoring an edge keeps acyclicity");
            return Err(e);
        }
        Ok(())
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<usize>> {
        let children = self.child_lists();
        let mut indeg: Vec<usize> = self.parents.iter().map(Vec::len).collect();
        let mut ready: Vec<usize> = (0..self.len()).filter(|&i| indeg[i] == 0).rev().collect();
        let mut order = Vec::with_capacity(self.len());
        while let Some(n) = ready.pop() {
            order.push(n);
            for &c in children[n].iter().rev() {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(c);
                }
            }
        }
        (order.len() == self.len()).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    /// Nodes in `seeds` together with all their ancestors.
    pub fn ancestral_set(&self, seeds: impl IntoIterator<Item = usize>) -> Vec<bool> {
        let mut keep = vec![false; self.len()];
        let mut stack: Vec<usize> = seeds.into_iter().collect();
        while let Some(n) = stack.pop() {
            if std::mem::replace(&mut keep[n], true) {
                continue;
            }
            stack.extend(self.parents[n].iter().copied());
        }
        keep
    }

    pub(crate) fn set_parents(&mut self, node: usize, parents: Vec<usize>) {
        debug_assert!(parents.windows(2).all(|w| w[0] < w[1]));
        self.parents[node] = parents;
    }
}
