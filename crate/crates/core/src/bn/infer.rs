use serde::{Deserialize, Serialize};

use super::{decode, BayesNet};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest joint state space `enumerate_joint` will walk.
pub const MAX_JOINT_STATES: u128 = 1 << 20;

/// Distribution over the states of a query node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Posterior<T> {
    pub states: Vec<String>,
    pub probs: Vec<T>,
    /// The evidence had probability zero; `probs` is uniform.
    pub zero_evidence: bool,
}

impl<T: Scalar> Posterior<T> {
    pub fn prob(&self, state: &str) -> Option<T> {
        self.states
            .iter()
            .position(|s| s == state)
            .map(|i| self.probs[i])
    }

    fn normalized(states: Vec<String>, raw: Vec<T>) -> Self {
        let z: T = raw.iter().copied().sum();
        if z > T::zero() && z.is_finite() {
            Posterior {
                states,
                probs: raw.into_iter().map(|p| p / z).collect(),
                zero_evidence: false,
            }
        } else {
            let u = T::one() / T::of_usize(raw.len());
            Posterior {
                states,
                probs: vec![u; raw.len()],
                zero_evidence: true,
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Factor<T> {
    /// Ascending variable indices.
    vars: Vec<usize>,
    cards: Vec<usize>,
    /// Row-major, last variable fastest.
    values: Vec<T>,
}

impl<T: Scalar> Factor<T> {
    fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.vars.len()];
        for i in (0..self.vars.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * self.cards[i + 1];
        }
        s
    }

    fn product(&self, other: &Factor<T>) -> Factor<T> {
        let mut vars: Vec<usize> = self.vars.iter().chain(&other.vars).copied().collect();
        vars.sort_unstable();
        vars.dedup();
        let card_of = |v: usize| {
            self.vars
                .iter()
                .position(|&x| x == v)
                .map(|i| self.cards[i])
                .unwrap_or_else(|| other.cards[other.vars.iter().position(|&x| x == v).unwrap()])
        };
        let cards: Vec<usize> = vars.iter().map(|&v| card_of(v)).collect();
        let size: usize = cards.iter().product();
        let (sa, sb) = (self.strides(), other.strides());
        let map_a: Vec<usize> = vars
            .iter()
            .map(|v| self.vars.iter().position(|x| x == v).map_or(0, |i| sa[i]))
            .collect();
        let map_b: Vec<usize> = vars
            .iter()
            .map(|v| other.vars.iter().position(|x| x == v).map_or(0, |i| sb[i]))
            .collect();
        let mut values = Vec::with_capacity(size);
        let mut assign = vec![0usize; vars.len()];
        let (mut ia, mut ib) = (0usize, 0usize);
        for _ in 0..size {
            values.push(self.values[ia] * other.values[ib]);
            // odometer increment
            for k in (0..vars.len()).rev() {
                assign[k] += 1;
                ia += map_a[k];
                ib += map_b[k];
                if assign[k] < cards[k] {
                    break;
                }
                ia -= map_a[k] * cards[k];
                ib -= map_b[k] * cards[k];
                assign[k] = 0;
            }
        }
        Factor {
            vars,
            cards,
            values,
        }
    }

    fn sum_out(&self, var: usize) -> Factor<T> {
        let pos = self
            .vars
            .iter()
            .position(|&v| v == var)
            .expect("var in factor");
        self.collapse(pos, None)
    }

    fn reduce(&self, var: usize, state: usize) -> Factor<T> {
        match self.vars.iter().position(|&v| v == var) {
            Some(pos) => self.collapse(pos, Some(state)),
            None => self.clone(),
        }
    }

    /// Drops position `pos`, summing over it or keeping one slice.
    fn collapse(&self, pos: usize, keep: Option<usize>) -> Factor<T> {
        let strides = self.strides();
        let (outer, card, inner) = (
            self.values.len() / (self.cards[pos] * strides[pos]),
            self.cards[pos],
            strides[pos],
        );
        let mut values = vec![T::zero(); outer * inner];
        for o in 0..outer {
            for s in 0..card {
                if keep.is_some_and(|k| k != s) {
                    continue;
                }
                let base = o * card * inner + s * inner;
                for i in 0..inner {
                    values[o * inner + i] += self.values[base + i];
                }
            }
        }
        let mut vars = self.vars.clone();
        let mut cards = self.cards.clone();
        vars.remove(pos);
        cards.remove(pos);
        Factor {
            vars,
            cards,
            values,
        }
    }
}

impl<T: Scalar> BayesNet<T> {
    fn node_factor(&self, node: usize) -> Factor<T> {
        let parents = self.dag().parents(node);
        let mut scope: Vec<usize> = parents.to_vec();
        scope.push(node);
        // CPT layout: parents in DAG order (ascending), node last
        let cards: Vec<usize> = scope.iter().map(|&v| self.cardinality(v)).collect();
        let cpt = self.cpt(node);
        let mut flat = Vec::with_capacity(cards.iter().product());
        for row in &cpt.rows {
            flat.extend_from_slice(row);
        }
        let raw = Factor {
            vars: scope.clone(),
            cards: cards.clone(),
            values: flat,
        };
        if scope.windows(2).all(|w| w[0] < w[1]) {
            return raw;
        }
        // permute into ascending variable order
        let mut order: Vec<usize> = (0..scope.len()).collect();
        order.sort_by_key(|&i| scope[i]);
        let vars: Vec<usize> = order.iter().map(|&i| scope[i]).collect();
        let new_cards: Vec<usize> = order.iter().map(|&i| cards[i]).collect();
        let old_strides = raw.strides();
        let values = (0..raw.values.len())
            .map(|idx| {
                let a = decode(idx, &new_cards);
                let old: usize = order
                    .iter()
                    .zip(&a)
                    .map(|(&o, &s)| s * old_strides[o])
                    .sum();
                raw.values[old]
            })
            .collect();
        Factor {
            vars,
            cards: new_cards,
            values,
        }
    }

    fn check_query(&self, evidence: &[(usize, usize)], query: usize) -> Result<()> {
        if query >= self.len() {
            return Err(Error::UnknownVariable(query.to_string()));
        }
        for &(v, s) in evidence {
            if v >= self.len() {
                return Err(Error::UnknownVariable(v.to_string()));
            }
            if s >= self.cardinality(v) {
                return Err(Error::UnknownState {
                    var: self.dag().name(v).to_string(),
                    state: s.to_string(),
                });
            }
            if v == query {
                return Err(Error::QueryObserved(self.dag().name(v).to_string()));
            }
        }
        Ok(())
    }

    /// Variable elimination restricted to the ancestors of the query and the
    /// evidence, eliminating in greedy min-degree order.
    pub fn infer_indexed(&self, evidence: &[(usize, usize)], query: usize) -> Result<Posterior<T>> {
        self.check_query(evidence, query)?;
        let relevant = self
            .dag()
            .ancestral_set(evidence.iter().map(|&(v, _)| v).chain([query]));
        let mut factors: Vec<Factor<T>> = (0..self.len())
            .filter(|&i| relevant[i])
            .map(|i| {
                evidence
                    .iter()
                    .fold(self.node_factor(i), |f, &(v, s)| f.reduce(v, s))
            })
            .collect();
        let mut hidden: Vec<usize> = (0..self.len())
            .filter(|&i| relevant[i] && i != query && !evidence.iter().any(|&(v, _)| v == i))
            .collect();
        while !hidden.is_empty() {
            let (pick, _) = hidden
                .iter()
                .enumerate()
                .map(|(k, &v)| {
                    let mut nb: Vec<usize> = factors
                        .iter()
                        .filter(|f| f.vars.contains(&v))
                        .flat_map(|f| f.vars.iter().copied())
                        .collect();
                    nb.sort_unstable();
                    nb.dedup();
                    (k, nb.len())
                })
                .min_by_key(|&(k, d)| (d, hidden[k]))
                .expect("non-empty");
            let var = hidden.swap_remove(pick);
            let (touching, rest): (Vec<_>, Vec<_>) =
                factors.into_iter().partition(|f| f.vars.contains(&var));
            factors = rest;
            if let Some(prod) = touching.into_iter().reduce(|a, b| a.product(&b)) {
                factors.push(prod.sum_out(var));
            }
        }
        let joint = factors
            .into_iter()
            .reduce(|a, b| a.product(&b))
            .expect("query factor present");
        debug_assert_eq!(joint.vars, vec![query]);
        Ok(Posterior::normalized(
            self.states(query).to_vec(),
            joint.values,
        ))
    }

    /// Posterior by walking every joint assignment.
    pub fn enumerate_joint_indexed(
        &self,
        evidence: &[(usize, usize)],
        query: usize,
    ) -> Result<Posterior<T>> {
        self.check_query(evidence, query)?;
        let cards: Vec<usize> = (0..self.len()).map(|i| self.cardinality(i)).collect();
        let total = cards
            .iter()
            .fold(1u128, |acc, &c| acc.saturating_mul(c as u128));
        if total > MAX_JOINT_STATES {
            return Err(Error::JointTooLarge(total));
        }
        let mut acc = vec![T::zero(); cards[query]];
        for idx in 0..total as usize {
            let a = decode(idx, &cards);
            if evidence.iter().any(|&(v, s)| a[v] != s) {
                continue;
            }
            let p = (0..self.len()).fold(T::one(), |p, i| {
                p * self.cpt(i).rows[self.parent_config(i, &a)][a[i]]
            });
            acc[a[query]] += p;
        }
        Ok(Posterior::normalized(self.states(query).to_vec(), acc))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use proptest::prelude::*;

    use super::*;
    use crate::bn::NodeSpec;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn running_example() -> BayesNet<f64> {
        let yes_no = s(&["yes", "no"]);
        BayesNet::from_nodes(vec![
            NodeSpec {
                name: "Company type".into(),
                states: s(&["a", "not_a"]),
                parents: vec![],
                cpt: vec![vec![0.2, 0.8]],
            },
            NodeSpec {
                name: "Revenue".into(),
                states: s(&["b", "not_b"]),
                parents: s(&["Company type"]),
                cpt: vec![vec![0.4, 0.6], vec![0.1, 0.9]],
            },
            NodeSpec {
                name: "Tax ID".into(),
                states: yes_no,
                parents: s(&["Company type", "Revenue"]),
                cpt: vec![
                    vec![0.9, 0.1],
                    vec![0.4, 0.6],
                    vec![0.4, 0.6],
                    vec![0.1, 0.9],
                ],
            },
        ])
        .unwrap()
    }

    #[test]
    fn running_example_posterior() {
        let net = running_example();
        let ev = BTreeMap::from([("Company type".to_string(), "a".to_string())]);
        let ve = net.infer(&ev, "Tax ID").unwrap();
        // 0.4 * 0.9 + 0.6 * 0.4
        assert!((ve.prob("yes").unwrap() - 0.6).abs() < 1e-12);
        let en = net.enumerate_joint(&ev, "Tax ID").unwrap();
        assert!((en.probs[0] - 0.6).abs() < 1e-12);
        let none = net.infer(&BTreeMap::new(), "Company type").unwrap();
        assert!((none.probs[0] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let net = running_example();
        let ev = BTreeMap::from([("Tax ID".to_string(), "yes".to_string())]);
        assert!(matches!(
            net.infer(&ev, "Tax ID"),
            Err(Error::QueryObserved(_))
        ));
        let bad = BTreeMap::from([("Revenue".to_string(), "huge".to_string())]);
        assert!(matches!(
            net.infer(&bad, "Tax ID"),
            Err(Error::UnknownState { .. })
        ));
        assert!(matches!(
            net.infer(&BTreeMap::new(), "nope"),
            Err(Error::UnknownVariable(_))
        ));
    }

    #[test]
    fn zero_probability_evidence_is_uniform() {
        let net = BayesNet::<f64>::from_nodes(vec![
            NodeSpec {
                name: "a".into(),
                states: s(&["0", "1"]),
                parents: vec![],
                cpt: vec![vec![1.0, 0.0]],
            },
            NodeSpec {
                name: "b".into(),
                states: s(&["0", "1"]),
                parents: vec![],
                cpt: vec![vec![0.3, 0.7]],
            },
        ])
        .unwrap();
        let p = net.infer_indexed(&[(0, 1)], 1).unwrap();
        assert!(p.zero_evidence);
        assert_eq!(p.probs, vec![0.5, 0.5]);
    }

    #[test]
    fn f32_networks() {
        let net: BayesNet<f32> =
            serde_json::from_str(&serde_json::to_string(&running_example()).unwrap()).unwrap();
        let p = net.infer_indexed(&[(0, 0)], 2).unwrap();
        assert!((p.probs[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn joint_too_large() {
        let nodes = (0..21)
            .map(|i| NodeSpec {
                name: format!("n{i}"),
                states: s(&["0", "1"]),
                parents: vec![],
                cpt: vec![vec![0.5, 0.5]],
            })
            .collect();
        let net = BayesNet::<f64>::from_nodes(nodes).unwrap();
        assert!(matches!(
            net.enumerate_joint_indexed(&[], 0),
            Err(Error::JointTooLarge(_))
        ));
        assert!(net.infer_indexed(&[(20, 1)], 0).is_ok());
    }

    /// Random network: node `i` may take parents only among `0..i`.
    pub(crate) fn arb_net() -> impl Strategy<Value = BayesNet<f64>> {
        (2usize..=6)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(2usize..=4, n),
                    proptest::collection::vec(proptest::bool::weighted(0.4), n * n),
                    proptest::collection::vec(0.01f64..1.0, 4096),
                )
            })
            .prop_map(|(cards, edges, weights)| {
                let n = cards.len();
                let mut w = weights.into_iter().cycle();
                let nodes = (0..n)
                    .map(|i| {
                        let parents: Vec<usize> =
                            (0..i).filter(|&j| edges[j * n + i]).take(3).collect();
                        let q: usize = parents.iter().map(|&p| cards[p]).product();
                        let cpt = (0..q)
                            .map(|_| {
                                let raw: Vec<f64> =
                                    (0..cards[i]).map(|_| w.next().unwrap()).collect();
                                let z: f64 = raw.iter().sum();
                                raw.into_iter().map(|x| x / z).collect()
                            })
                            .collect();
                        NodeSpec {
                            name: format!("v{i}"),
                            states: (0..cards[i]).map(|k| k.to_string()).collect(),
                            parents: parents.iter().map(|p| format!("v{p}")).collect(),
                            cpt,
                        }
                    })
                    .collect();
                BayesNet::from_nodes(nodes).unwrap()
            })
    }

    proptest! {
        #[test]
        fn elimination_matches_enumeration(net in arb_net(), picks in proptest::collection::vec(any::<u32>(), 8)) {
            let n = net.len();
            let query = picks[0] as usize % n;
            let evidence: Vec<(usize, usize)> = (0..n)
                .filter(|&v| v != query && picks[1 + v % 7] % 3 == 0)
                .map(|v| (v, picks[(v + 2) % 8] as usize % net.cardinality(v)))
                .collect();
            let a = net.infer_indexed(&evidence, query).unwrap();
            let b = net.enumerate_joint_indexed(&evidence, query).unwrap();
            for (x, y) in a.probs.iter().zip(&b.probs) {
                prop_assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
            }
            prop_assert!((a.probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn marginalization_is_consistent(net in arb_net(), pick in any::<u32>()) {
            // P(q) = sum_s P(q | e = s) P(e = s)
            let n = net.len();
            let q = pick as usize % n;
            let e = (q + 1) % n;
            let prior_q = net.infer_indexed(&[], q).unwrap();
            let prior_e = net.infer_indexed(&[], e).unwrap();
            for state in 0..net.cardinality(q) {
                let mut total = 0.0;
                for es in 0..net.cardinality(e) {
                    let cond = net.infer_indexed(&[(e, es)], q).unwrap();
                    total += cond.probs[state] * prior_e.probs[es];
                }
                prop_assert!((total - prior_q.probs[state]).abs() < 1e-9);
            }
        }
    }
}
