//! Decomposable BIC score: `sum over nodes of LL(node | parents) - ln(N)/2 * K`.

use std::collections::HashMap;

use super::{Dag, DiscreteData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Count tables denser than this fall back to a hash map.
const DENSE_LIMIT: u128 = 1 << 20;

/// Sufficient statistics `N_jk` of one family, keyed by parent configuration.
pub(crate) fn family_counts(data: &DiscreteData, node: usize, parents: &[usize]) -> Vec<Vec<u32>> {
    let r = data.cardinality(node);
    let q: u128 = parents
        .iter()
        .map(|&p| data.cardinality(p) as u128)
        .product();
    let config = |row: usize| -> u128 {
        parents.iter().fold(0u128, |acc, &p| {
            acc * data.cardinality(p) as u128 + data.column(p)[row] as u128
        })
    };
    let col = data.column(node);
    if q * r as u128 <= DENSE_LIMIT {
        let mut counts = vec![vec![0u32; r]; q as usize];
        for (row, &s) in col.iter().enumerate() {
            counts[config(row) as usize][s as usize] += 1;
        }
        counts
    } else {
        let mut sparse: HashMap<u128, Vec<u32>> = HashMap::new();
        for (row, &s) in col.iter().enumerate() {
            sparse.entry(config(row)).or_insert_with(|| vec![0; r])[s as usize] += 1;
        }
        sparse.into_values().collect()
    }
}

/// Maximum-likelihood log-likelihood of a family.
pub fn family_log_likelihood<T: Scalar>(data: &DiscreteData, node: usize, parents: &[usize]) -> T {
    family_counts(data, node, parents)
        .iter()
        .map(|row| {
            let nj: u32 = row.iter().sum();
            if nj == 0 {
                return T::zero();
            }
            let nj = T::of(nj as f64);
            row.iter()
                .filter(|&&c| c > 0)
                .map(|&c| {
                    let c = T::of(c as f64);
                    c * (c / nj).ln()
                })
                .sum::<T>()
        })
        .sum()
}

/// Number of free parameters `(r - 1) * q` of a family.
pub fn family_parameters(data: &DiscreteData, node: usize, parents: &[usize]) -> f64 {
    let q: f64 = parents
        .iter()
        .map(|&p| data.cardinality(p) as f64)
        .product();
    (data.cardinality(node).max(1) - 1) as f64 * q
}

/// Local BIC contribution of `node` given `parents`.
pub fn family_score<T: Scalar>(data: &DiscreteData, node: usize, parents: &[usize]) -> T {
    let n = T::of_usize(data.n_rows());
    family_log_likelihood::<T>(data, node, parents)
        - n.ln() / T::of(2.0) * T::of(family_parameters(data, node, parents))
}

/// Maps DAG node indices to data columns by name.
pub(crate) fn column_map(dag: &Dag, data: &DiscreteData) -> Result<Vec<usize>> {
    dag.nodes()
        .iter()
        .map(|n| {
            data.index_of(n)
                .ok_or_else(|| Error::UnknownVariable(n.clone()))
        })
        .collect()
}

/// BIC of a whole structure; higher is better.
pub fn bic_score<T: Scalar>(dag: &Dag, data: &DiscreteData) -> Result<T> {
    if data.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let cols = column_map(dag, data)?;
    Ok((0..dag.len())
        .map(|i| {
            let ps: Vec<usize> = dag.parents(i).iter().map(|&p| cols[p]).collect();
            family_score::<T>(data, cols[i], &ps)
        })
        .sum())
}
