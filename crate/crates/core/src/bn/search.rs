//! Greedy hill climbing over DAGs with random restarts.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::score::family_score;
use super::{Dag, DiscreteData};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct StructureSearchConfig<T> {
    pub max_parents: usize,
    pub max_iterations: usize,
    pub restarts: usize,
    pub seed: u64,
    /// Minimum score gain for a move to be accepted.
    pub score_epsilon: T,
    /// Include edge reversal in the neighbourhood.
    pub allow_reversal: bool,
}

impl<T: Scalar> Default for StructureSearchConfig<T> {
    fn default() -> Self {
        StructureSearchConfig {
            max_parents: 4,
            max_iterations: 1000,
            restarts: 3,
            seed: 0,
            score_epsilon: T::of(1e-9),
            allow_reversal: true,
        }
    }
}

impl<T: Scalar> StructureSearchConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if self.max_parents == 0 || self.max_iterations == 0 || self.restarts == 0 {
            return Err(Error::Config(
                "max_parents, max_iterations and restarts must be positive".into(),
            ));
        }
        if !(self.score_epsilon > T::zero()) {
            return Err(Error::Config("score_epsilon must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Add(usize, usize),
    Delete(usize, usize),
    Reverse(usize, usize),
}

#[derive(Debug, Clone)]
pub struct SearchResult<T> {
    pub dag: Dag,
    pub score: T,
    /// Incumbent score after the start and after each accepted move, one
    /// trace per restart.
    pub traces: Vec<Vec<T>>,
}

pub fn learn_structure<T: Scalar>(
    data: &DiscreteData,
    cfg: &StructureSearchConfig<T>,
) -> Result<Dag> {
    learn_structure_traced(data, cfg).map(|r| r.dag)
}

/// Hill climbing over every column of `data`. The first restart starts from
/// the empty graph, later ones from random DAGs; the best final structure
/// wins (earliest restart on ties).
pub fn learn_structure_traced<T: Scalar>(
    data: &DiscreteData,
    cfg: &StructureSearchConfig<T>,
) -> Result<SearchResult<T>> {
    cfg.validate()?;
    if data.n_rows() == 0 {
        return Err(Error::EmptyData);
    }
    let mut scorer = FamilyCache::new(data);
    let mut best: Option<(Dag, T)> = None;
    let mut traces = Vec::with_capacity(cfg.restarts);
    for restart in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(restart as u64));
        let start = if restart == 0 {
            Dag::empty(data.names().to_vec())?
        } else {
            random_dag(data, cfg.max_parents, &mut rng)?
        };
        let (dag, score, trace) = climb(&mut scorer, start, cfg);
        traces.push(trace);
        if best.as_ref().is_none_or(|(_, s)| score > *s) {
            best = Some((dag, score));
        }
    }
    let (dag, score) = best.expect("at least one restart");
    Ok(SearchResult { dag, score, traces })
}

struct FamilyCache<'a, T> {
    data: &'a DiscreteData,
    cache: HashMap<(usize, Vec<usize>), T>,
}

impl<'a, T: Scalar> FamilyCache<'a, T> {
    fn new(data: &'a DiscreteData) -> Self {
        FamilyCache {
            data,
            cache: HashMap::new(),
        }
    }

    fn score(&mut self, node: usize, parents: &[usize]) -> T {
        if let Some(s) = self.cache.get(&(node, parents.to_vec())) {
            return *s;
        }
        let s = family_score(self.data, node, parents);
        self.cache.insert((node, parents.to_vec()), s);
        s
    }
}

fn with(parents: &[usize], extra: usize) -> Vec<usize> {
    let mut v = parents.to_vec();
    let at = v.binary_search(&extra).unwrap_err();
    v.insert(at, extra);
    v
}

fn without(parents: &[usize], gone: usize) -> Vec<usize> {
    parents.iter().copied().filter(|&p| p != gone).collect()
}

fn climb<T: Scalar>(
    scorer: &mut FamilyCache<'_, T>,
    mut dag: Dag,
    cfg: &StructureSearchConfig<T>,
) -> (Dag, T, Vec<T>) {
    let n = dag.len();
    let mut local: Vec<T> = (0..n).map(|i| scorer.score(i, dag.parents(i))).collect();
    let mut score: T = local.iter().copied().sum();
    let mut trace = vec![score];

    for _ in 0..cfg.max_iterations {
        let mut best: Option<(Move, T)> = None;
        let mut consider = |m: Move, delta: T| {
            if best.as_ref().is_none_or(|(_, d)| delta > *d) {
                best = Some((m, delta));
            }
        };
        for to in 0..n {
            for from in 0..n {
                if from == to {
                    continue;
                }
                if dag.has_edge(from, to) {
                    let to_without = without(dag.parents(to), from);
                    let del = scorer.score(to, &to_without) - local[to];
                    consider(Move::Delete(from, to), del);
                    if cfg.allow_reversal && dag.parents(from).len() < cfg.max_parents {
                        let mut probe = dag.clone();
                        probe.remove_edge(from, to);
                        if !probe.has_path(from, to) {
                            let gain =
                                scorer.score(from, &with(dag.parents(from), to)) - local[from];
                            consider(Move::Reverse(from, to), del + gain);
                        }
                    }
                } else if !dag.has_edge(to, from)
                    && dag.parents(to).len() < cfg.max_parents
                    && !dag.has_path(to, from)
                {
                    let gain = scorer.score(to, &with(dag.parents(to), from)) - local[to];
                    consider(Move::Add(from, to), gain);
                }
            }
        }
        let Some((mv, delta)) = best else { break };
        if !(delta > cfg.score_epsilon) {
            break;
        }
        match mv {
            Move::Add(f, t) => dag.add_edge(f, t).expect("checked acyclic"),
            Move::Delete(f, t) => {
                dag.remove_edge(f, t);
            }
            Move::Reverse(f, t) => dag.reverse_edge(f, t).expect("checked acyclic"),
        }
        for i in 0..n {
            local[i] = scorer.score(i, dag.parents(i));
        }
        let next: T = local.iter().copied().sum();
        assert!(dag.is_acyclic(), "accepted move produced a cycle");
        assert!(
            next >= score,
            "hill climbing score decreased: {score} -> {next}"
        );
        score = next;
        trace.push(score);
    }
    (dag, score, trace)
}

fn random_dag<R: Rng>(data: &DiscreteData, max_parents: usize, rng: &mut R) -> Result<Dag> {
    let n = data.n_vars();
    let mut dag = Dag::empty(data.names().to_vec())?;
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.gen_range(0..=i));
    }
    let p = (1.5 / n.max(1) as f64).min(0.5);
    for a in 0..n {
        for b in (a + 1)..n {
            let (from, to) = (order[a], order[b]);
            if dag.parents(to).len() < max_parents && rng.gen_bool(p) {
                let ps = with(dag.parents(to), from);
                dag.set_parents(to, ps);
            }
        }
    }
    debug_assert!(dag.is_acyclic());
    Ok(dag)
}
