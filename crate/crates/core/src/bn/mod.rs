//! Discrete Bayesian networks: structure search, parameter fitting and exact
//! inference.

mod dag;
mod data;
mod infer;
mod score;
mod search;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use dag::Dag;
pub use data::DiscreteData;
pub use infer::Posterior;
pub use score::{bic_score, family_log_likelihood, family_parameters, family_score};
pub use search::{
    learn_structure, learn_structure_traced, Move, SearchResult, StructureSearchConfig,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Tolerance on the row sums of a CPT.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// Conditional probability table of one node.
///
/// `rows` is row-major over parent configurations in `parents` order with the
/// last parent varying fastest; each row is a distribution over the node's
/// states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Cpt<T> {
    pub node: String,
    pub parents: Vec<String>,
    pub rows: Vec<Vec<T>>,
}

impl<T: Scalar> Cpt<T> {
    pub fn row(&self, config: usize) -> &[T] {
        &self.rows[config]
    }
}

/// A node as written in the serialized form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeSpec<T> {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<String>,
    pub cpt: Vec<Vec<T>>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
struct NetRepr<T> {
    nodes: Vec<NodeSpec<T>>,
}

/// DAG plus state spaces and one CPT per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", into = "NetRepr<T>", try_from = "NetRepr<T>")]
pub struct BayesNet<T> {
    dag: Dag,
    states: Vec<Vec<String>>,
    cpts: Vec<Cpt<T>>,
}

impl<T: Scalar> From<BayesNet<T>> for NetRepr<T> {
    fn from(net: BayesNet<T>) -> Self {
        let nodes = net
            .cpts
            .into_iter()
            .zip(net.states)
            .map(|(cpt, states)| NodeSpec {
                name: cpt.node,
                states,
                parents: cpt.parents,
                cpt: cpt.rows,
            })
            .collect();
        NetRepr { nodes }
    }
}

impl<T: Scalar> TryFrom<NetRepr<T>> for BayesNet<T> {
    type Error = Error;
    fn try_from(r: NetRepr<T>) -> Result<Self> {
        BayesNet::from_nodes(r.nodes)
    }
}

impl<T: Scalar> BayesNet<T> {
    /// Builds and validates a network. Parent lists may be given in any order;
    /// CPT rows must follow the order given.
    pub fn from_nodes(nodes: Vec<NodeSpec<T>>) -> Result<Self> {
        let mut dag = Dag::empty(nodes.iter().map(|n| n.name.clone()).collect())?;
        for n in &nodes {
            for p in &n.parents {
                dag.add_edge_by_name(p, &n.name)?;
            }
        }
        let states: Vec<Vec<String>> = nodes.iter().map(|n| n.states.clone()).collect();
        let mut cpts = Vec::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            if n.states.is_empty() {
                return Err(Error::InvalidNetwork(format!("`{}` has no states", n.name)));
            }
            // re-index rows into the DAG's canonical parent order
            let given: Vec<usize> = n
                .parents
                .iter()
                .map(|p| dag.index_of(p).expect("added above"))
                .collect();
            let canonical = dag.parents(i).to_vec();
            let cards_given: Vec<usize> = given.iter().map(|&p| states[p].len()).collect();
            let q: usize = cards_given.iter().product();
            if n.cpt.len() != q {
                return Err(Error::InvalidNetwork(format!(
                    "`{}` needs {q} CPT rows, got {}",
                    n.name,
                    n.cpt.len()
                )));
            }
            let cards_canon: Vec<usize> = canonical.iter().map(|&p| states[p].len()).collect();
            let mut rows = vec![Vec::new(); q];
            for (canon_idx, row) in rows.iter_mut().enumerate() {
                let assignment = decode(canon_idx, &cards_canon);
                let given_idx = given.iter().fold(0, |acc, g| {
                    let pos = canonical
                        .iter()
                        .position(|c| c == g)
                        .expect("same parent set");
                    acc * states[*g].len() + assignment[pos]
                });
                *row = n.cpt[given_idx].clone();
            }
            for row in &rows {
                check_distribution(&n.name, row, n.states.len())?;
            }
            cpts.push(Cpt {
                node: n.name.clone(),
                parents: dag.parent_names(i).into_iter().map(String::from).collect(),
                rows,
            });
        }
        Ok(BayesNet { dag, states, cpts })
    }

    pub fn dag(&self) -> &Dag {
        &self.dag
    }

    pub fn len(&self) -> usize {
        self.dag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dag.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.dag.index_of(name)
    }

    pub fn states(&self, node: usize) -> &[String] {
        &self.states[node]
    }

    pub fn state_index(&self, node: usize, label: &str) -> Option<usize> {
        self.states[node].iter().position(|s| s == label)
    }

    pub fn cardinality(&self, node: usize) -> usize {
        self.states[node].len()
    }

    pub fn cpt(&self, node: usize) -> &Cpt<T> {
        &self.cpts[node]
    }

    pub fn cpts(&self) -> &[Cpt<T>] {
        &self.cpts
    }

    pub(crate) fn parent_config(&self, node: usize, assignment: &[usize]) -> usize {
        self.dag
            .parents(node)
            .iter()
            .fold(0, |acc, &p| acc * self.states[p].len() + assignment[p])
    }

    pub fn to_nodes(&self) -> Vec<NodeSpec<T>> {
        NetRepr::from(self.clone()).nodes
    }

    /// Resolves `name -> state label` evidence to indices.
    pub fn resolve_evidence(
        &self,
        evidence: &BTreeMap<String, String>,
    ) -> Result<Vec<(usize, usize)>> {
        evidence
            .iter()
            .map(|(var, state)| {
                let v = self
                    .index_of(var)
                    .ok_or_else(|| Error::UnknownVariable(var.clone()))?;
                let s = self
                    .state_index(v, state)
                    .ok_or_else(|| Error::UnknownState {
                        var: var.clone(),
                        state: state.clone(),
                    })?;
                Ok((v, s))
            })
            .collect()
    }

    fn query_index(&self, query: &str) -> Result<usize> {
        self.index_of(query)
            .ok_or_else(|| Error::UnknownVariable(query.to_string()))
    }

    /// Exact posterior `P(query | evidence)` by variable elimination.
    pub fn infer(&self, evidence: &BTreeMap<String, String>, query: &str) -> Result<Posterior<T>> {
        let ev = self.resolve_evidence(evidence)?;
        self.infer_indexed(&ev, self.query_index(query)?)
    }

    /// Posterior by summing the full joint; for tests and small networks.
    pub fn enumerate_joint(
        &self,
        evidence: &BTreeMap<String, String>,
        query: &str,
    ) -> Result<Posterior<T>> {
        let ev = self.resolve_evidence(evidence)?;
        self.enumerate_joint_indexed(&ev, self.query_index(query)?)
    }
}

fn check_distribution<T: Scalar>(node: &str, row: &[T], width: usize) -> Result<()> {
    if row.len() != width {
        return Err(Error::InvalidNetwork(format!(
            "`{node}` CPT row has {} entries for {width} states",
            row.len()
        )));
    }
    if row.iter().any(|p| !(*p >= T::zero())) {
        return Err(Error::InvalidNetwork(format!(
            "`{node}` has a negative probability"
        )));
    }
    let sum: T = row.iter().copied().sum();
    let tol = T::of(NORMALIZATION_TOLERANCE).max(T::epsilon() * T::of(16.0));
    if (sum - T::one()).abs() > tol {
        return Err(Error::InvalidNetwork(format!(
            "`{node}` CPT row sums to {sum}"
        )));
    }
    Ok(())
}

/// Mixed-radix decoding, last position fastest.
pub(crate) fn decode(mut idx: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = vec![0; cards.len()];
    for (slot, &c) in out.iter_mut().zip(cards).rev() {
        *slot = idx % c;
        idx /= c;
    }
    out
}

/// Laplace-smoothed maximum-likelihood CPTs:
/// `(N_jk + alpha) / (N_j + alpha * r)`. Parent configurations with no data
/// and `alpha = 0` get a uniform row.
pub fn fit_cpts<T: Scalar>(dag: &Dag, data: &DiscreteData, alpha: T) -> Result<BayesNet<T>> {
    if alpha < T::zero() {
        return Err(Error::Config("laplace alpha must be non-negative".into()));
    }
    let cols = score::column_map(dag, data)?;
    let mut states = Vec::with_capacity(dag.len());
    let mut cpts = Vec::with_capacity(dag.len());
    for i in 0..dag.len() {
        let node_col = cols[i];
        let r = data.cardinality(node_col);
        if r == 0 {
            return Err(Error::InvalidNetwork(format!(
                "`{}` has no states",
                dag.name(i)
            )));
        }
        let parent_cols: Vec<usize> = dag.parents(i).iter().map(|&p| cols[p]).collect();
        let q: usize = parent_cols.iter().map(|&p| data.cardinality(p)).product();
        let mut counts = vec![vec![0u64; r]; q];
        for row in 0..data.n_rows() {
            let cfg = parent_cols.iter().fold(0, |acc, &p| {
                acc * data.cardinality(p) + data.column(p)[row] as usize
            });
            counts[cfg][data.column(node_col)[row] as usize] += 1;
        }
        let rows = counts
            .into_iter()
            .map(|c| {
                let total: u64 = c.iter().sum();
                let denom = T::of(total as f64) + alpha * T::of_usize(r);
                if denom > T::zero() {
                    c.into_iter()
                        .map(|n| (T::of(n as f64) + alpha) / denom)
                        .collect()
                } else {
                    vec![T::one() / T::of_usize(r); r]
                }
            })
            .collect();
        states.push(data.states(node_col).to_vec());
        cpts.push(Cpt {
            node: dag.name(i).to_string(),
            parents: dag.parent_names(i).into_iter().map(String::from).collect(),
            rows,
        });
    }
    Ok(BayesNet {
        dag: dag.clone(),
        states,
        cpts,
    })
}
