//! Synthetic minority oversampling for per-target training sets.
//!
//! Features are either ordinal (interval indices, interpolated between a
//! minority seed and one of its nearest minority neighbours) or nominal
//! (categories and required/optional marks, which take the mode of the seed's
//! neighbourhood). Distances follow the SMOTE-NC convention: squared
//! differences on ordinal features plus a squared penalty per nominal
//! mismatch.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::BinaryClass;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Feature<T> {
    Ordinal(T),
    Nominal(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedInstance<T> {
    pub features: Vec<Feature<T>>,
    pub class: BinaryClass,
}

impl<T> EncodedInstance<T> {
    pub fn new(features: Vec<Feature<T>>, class: BinaryClass) -> Self {
        EncodedInstance { features, class }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoteConfig {
    pub k: usize,
    /// Desired minority/majority ratio after oversampling, in (0, 1].
    pub target_ratio: f64,
    pub seed: u64,
}

impl Default for SmoteConfig {
    fn default() -> Self {
        SmoteConfig {
            k: 5,
            target_ratio: 1.0,
            seed: 0,
        }
    }
}

impl SmoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("smote k must be at least 1".into()));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "smote target_ratio {} outside (0, 1]",
                self.target_ratio
            )));
        }
        Ok(())
    }
}

/// Mixed ordinal/nominal distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixedMetric<T> {
    /// Contribution of one nominal mismatch (before squaring).
    pub penalty: T,
}

impl<T: Scalar> Default for MixedMetric<T> {
    fn default() -> Self {
        MixedMetric { penalty: T::one() }
    }
}

impl<T: Scalar> MixedMetric<T> {
    /// Penalty = median of the per-column standard deviations of ordinal
    /// values; 1 when there are no ordinal values or the median is zero.
    pub fn fit(instances: &[EncodedInstance<T>]) -> Self {
        let width = instances.first().map_or(0, |i| i.features.len());
        let mut stds: Vec<T> = (0..width)
            .filter_map(|col| {
                let xs: Vec<T> = instances
                    .iter()
                    .filter_map(|i| match i.features.get(col) {
                        Some(Feature::Ordinal(x)) => Some(*x),
                        _ => None,
                    })
                    .collect();
                if xs.is_empty() {
                    return None;
                }
                let n = T::of_usize(xs.len());
                let mean = xs.iter().copied().sum::<T>() / n;
                let var = xs.iter().map(|x| (*x - mean) * (*x - mean)).sum::<T>() / n;
                Some(var.sqrt())
            })
            .collect();
        if stds.is_empty() {
            return Self::default();
        }
        stds.sort_by(|a, b| a.partial_cmp(b).expect("finite std"));
        let mid = stds.len() / 2;
        let median = if stds.len() % 2 == 1 {
            stds[mid]
        } else {
            (stds[mid - 1] + stds[mid]) / T::of(2.0)
        };
        if median > T::zero() {
            MixedMetric { penalty: median }
        } else {
            Self::default()
        }
    }

    pub fn distance(&self, a: &EncodedInstance<T>, b: &EncodedInstance<T>) -> Result<T> {
        if a.features.len() != b.features.len() {
            return Err(Error::LayoutMismatch(a.features.len(), b.features.len()));
        }
        let p2 = self.penalty * self.penalty;
        let sum: T = a
            .features
            .iter()
            .zip(&b.features)
            .map(|pair| match pair {
                (Feature::Ordinal(x), Feature::Ordinal(y)) => (*x - *y) * (*x - *y),
                (Feature::Nominal(x), Feature::Nominal(y)) if x == y => T::zero(),
                _ => p2,
            })
            .sum();
        Ok(sum.sqrt())
    }
}

/// Distance with the default unit mismatch penalty.
pub fn distance<T: Scalar>(a: &EncodedInstance<T>, b: &EncodedInstance<T>) -> Result<T> {
    MixedMetric::default().distance(a, b)
}

/// `seed + gap * (neighbor - seed)`.
pub fn interpolate<T: Scalar>(seed: T, neighbor: T, gap: T) -> T {
    seed + gap * (neighbor - seed)
}

/// Nearest integer, halves rounded up.
pub fn round_half_up<T: Scalar>(x: T) -> T {
    (x + T::of(0.5)).floor()
}

/// Source of the random choices SMOTE makes; injectable for tests.
pub trait InterpolationSource {
    /// Index of the minority seed, in `0..n`.
    fn seed_index(&mut self, n: usize) -> usize;
    /// Index into the seed's neighbour list, in `0..k`.
    fn neighbor_index(&mut self, k: usize) -> usize;
    /// Interpolation gap in [0, 1).
    fn gap(&mut self) -> f64;
}

pub struct RngSource<R>(pub R);

impl<R: Rng> InterpolationSource for RngSource<R> {
    fn seed_index(&mut self, n: usize) -> usize {
        self.0.gen_range(0..n)
    }
    fn neighbor_index(&mut self, k: usize) -> usize {
        self.0.gen_range(0..k)
    }
    fn gap(&mut self) -> f64 {
        self.0.gen::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmoteOutcome<T> {
    /// Originals first, in input order, then synthetic instances.
    pub instances: Vec<EncodedInstance<T>>,
    /// For each synthetic instance, input indices of its seed and neighbour
    /// (equal when the instance is a duplicate).
    pub origins: Vec<(usize, usize)>,
    pub gaps: Vec<T>,
    /// Set when only one class is present and nothing could be synthesized.
    pub single_class: bool,
}

impl<T> SmoteOutcome<T> {
    pub fn synthetic(&self) -> &[EncodedInstance<T>] {
        &self.instances[self.instances.len() - self.origins.len()..]
    }
}

pub fn oversample<T: Scalar>(
    data: &[EncodedInstance<T>],
    cfg: &SmoteConfig,
) -> Result<SmoteOutcome<T>> {
    let mut src = RngSource(ChaCha8Rng::seed_from_u64(cfg.seed));
    oversample_with(data, cfg, &mut src)
}

pub fn oversample_with<T: Scalar, S: InterpolationSource>(
    data: &[EncodedInstance<T>],
    cfg: &SmoteConfig,
    src: &mut S,
) -> Result<SmoteOutcome<T>> {
    cfg.validate()?;
    if let Some(first) = data.first() {
        if let Some(bad) = data
            .iter()
            .find(|i| i.features.len() != first.features.len())
        {
            return Err(Error::LayoutMismatch(
                first.features.len(),
                bad.features.len(),
            ));
        }
    }
    let unchanged = |single_class| SmoteOutcome {
        instances: data.to_vec(),
        origins: Vec::new(),
        gaps: Vec::new(),
        single_class,
    };

    let optional = data
        .iter()
        .filter(|i| i.class == BinaryClass::Optional)
        .count();
    let required = data.len() - optional;
    if optional == 0 || required == 0 {
        tracing::warn!(rows = data.len(), "single class, oversampling skipped");
        return Ok(unchanged(true));
    }
    let (minority_class, majority) = if optional < required {
        (BinaryClass::Optional, required)
    } else {
        (BinaryClass::Required, optional)
    };
    let minority: Vec<usize> = (0..data.len())
        .filter(|&i| data[i].class == minority_class)
        .collect();
    let m = minority.len();
    let goal = ((cfg.target_ratio * majority as f64) + 1e-9).floor() as usize;
    let needed = goal.max(m) - m;
    if needed == 0 {
        return Ok(unchanged(false));
    }

    let metric = MixedMetric::fit(
        &minority
            .iter()
            .map(|&i| data[i].clone())
            .collect::<Vec<_>>(),
    );
    let k = cfg.k.min(m - 1);
    let mut neighbors: Vec<Vec<usize>> = Vec::with_capacity(m);
    for (a, &ia) in minority.iter().enumerate() {
        let mut d: Vec<(T, usize)> = Vec::with_capacity(m - 1);
        for (b, &ib) in minority.iter().enumerate() {
            if a != b {
                d.push((metric.distance(&data[ia], &data[ib])?, b));
            }
        }
        d.sort_by(|x, y| {
            x.0.partial_cmp(&y.0)
                .expect("finite distance")
                .then(x.1.cmp(&y.1))
        });
        neighbors.push(d.into_iter().take(k).map(|(_, b)| b).collect());
    }

    let mut out = data.to_vec();
    let mut origins = Vec::with_capacity(needed);
    let mut gaps = Vec::with_capacity(needed);
    for _ in 0..needed {
        let s = src.seed_index(m);
        let seed = &data[minority[s]];
        if k == 0 {
            out.push(seed.clone());
            origins.push((minority[s], minority[s]));
            gaps.push(T::zero());
            continue;
        }
        let nb_local = neighbors[s][src.neighbor_index(k)];
        let nb = &data[minority[nb_local]];
        let gap = T::of(src.gap());
        let hood: Vec<&EncodedInstance<T>> = std::iter::once(seed)
            .chain(neighbors[s].iter().map(|&j| &data[minority[j]]))
            .collect();
        let features = (0..seed.features.len())
            .map(|col| match (&seed.features[col], &nb.features[col]) {
                (Feature::Ordinal(a), Feature::Ordinal(b)) => {
                    Feature::Ordinal(round_half_up(interpolate(*a, *b, gap)))
                }
                _ => neighborhood_mode(&hood, col),
            })
            .collect();
        out.push(EncodedInstance::new(features, minority_class));
        origins.push((minority[s], minority[nb_local]));
        gaps.push(gap);
    }
    Ok(SmoteOutcome {
        instances: out,
        origins,
        gaps,
        single_class: false,
    })
}

/// Most frequent value of column `col` in the neighbourhood; the first entry
/// is the seed, which wins ties, then nearer neighbours win.
fn neighborhood_mode<T: Scalar>(hood: &[&EncodedInstance<T>], col: usize) -> Feature<T> {
    let mut best: Option<(&Feature<T>, usize)> = None;
    for (i, inst) in hood.iter().enumerate() {
        let v = &inst.features[col];
        if hood[..i].iter().any(|p| &p.features[col] == v) {
            continue;
        }
        let count = hood.iter().filter(|p| &p.features[col] == v).count();
        if best.is_none_or(|(_, c)| count > c) {
            best = Some((v, count));
        }
    }
    best.expect("neighbourhood contains the seed").0.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use BinaryClass::{Optional as O, Required as R};

    fn ord(x: f64, c: BinaryClass) -> EncodedInstance<f64> {
        EncodedInstance::new(vec![Feature::Ordinal(x)], c)
    }

    fn fig3() -> Vec<EncodedInstance<f64>> {
        vec![
            ord(39.0, O),
            ord(42.0, O),
            ord(25.0, O),
            ord(100.0, R),
            ord(150.0, R),
            ord(200.0, R),
            ord(400.0, R),
        ]
    }

    struct Fixed {
        seed: usize,
        neighbor: usize,
        gap: f64,
    }

    impl InterpolationSource for Fixed {
        fn seed_index(&mut self, _: usize) -> usize {
            self.seed
        }
        fn neighbor_index(&mut self, _: usize) -> usize {
            self.neighbor
        }
        fn gap(&mut self) -> f64 {
            self.gap
        }
    }

    #[test]
    fn distances() {
        let d = fig3();
        assert_eq!(distance(&d[0], &d[1]).unwrap(), 3.0);
        assert_eq!(distance(&d[0], &d[2]).unwrap(), 14.0);
        assert_eq!(distance(&d[1], &d[2]).unwrap(), 17.0);
        assert_eq!(distance(&d[3], &d[3]).unwrap(), 0.0);
        let a = EncodedInstance::<f64>::new(vec![Feature::Nominal("x".into())], O);
        let b = EncodedInstance::<f64>::new(vec![Feature::Nominal("y".into())], O);
        assert_eq!(distance(&a, &b).unwrap(), 1.0);
        let c = EncodedInstance::<f64>::new(vec![], O);
        assert!(matches!(distance(&a, &c), Err(Error::LayoutMismatch(1, 0))));
    }

    #[test]
    fn fig3_interpolation() {
        let cfg = SmoteConfig {
            k: 1,
            target_ratio: 1.0,
            seed: 0,
        };
        // minority order is i1, i2, i3; seed i2 = index 1, its nearest is i1
        let mut src = Fixed {
            seed: 1,
            neighbor: 0,
            gap: 0.7,
        };
        let out = oversample_with(&fig3(), &cfg, &mut src).unwrap();
        assert_eq!(out.origins[0], (1, 0));
        assert!((interpolate(42.0f64, 39.0, 0.7) - 39.9).abs() < 1e-12);
        assert_eq!(out.synthetic()[0], ord(40.0, O));
        assert_eq!(out.synthetic().len(), 1);
    }

    #[test]
    fn balanced_input_is_unchanged() {
        let d = vec![ord(1.0, O), ord(2.0, R)];
        let out = oversample(&d, &SmoteConfig::default()).unwrap();
        assert_eq!(out.instances, d);
        assert!(!out.single_class);
    }

    #[test]
    fn single_minority_instance_is_duplicated() {
        let d = vec![ord(7.0, O), ord(1.0, R), ord(2.0, R), ord(3.0, R)];
        let out = oversample(&d, &SmoteConfig::default()).unwrap();
        assert_eq!(out.synthetic(), &[ord(7.0, O), ord(7.0, O)]);
    }

    #[test]
    fn single_class_is_flagged() {
        let d = vec![ord(1.0, R), ord(2.0, R)];
        let out = oversample(&d, &SmoteConfig::default()).unwrap();
        assert!(out.single_class);
        assert_eq!(out.instances, d);
    }

    #[test]
    fn three_minority_nine_majority() {
        let mut d: Vec<_> = (0..3).map(|i| ord(i as f64, O)).collect();
        d.extend((0..9).map(|i| ord(10.0 + i as f64, R)));
        let out = oversample(&d, &SmoteConfig::default()).unwrap();
        assert_eq!(out.synthetic().len(), 6);
        let opt = out.instances.iter().filter(|i| i.class == O).count();
        assert_eq!((opt, out.instances.len() - opt), (9, 9));
    }

    #[test]
    fn partial_ratio() {
        let mut d: Vec<_> = (0..2).map(|i| ord(i as f64, O)).collect();
        d.extend((0..10).map(|i| ord(10.0 + i as f64, R)));
        let cfg = SmoteConfig {
            target_ratio: 0.5,
            ..Default::default()
        };
        let out = oversample(&d, &cfg).unwrap();
        assert_eq!(out.synthetic().len(), 3);
    }

    #[test]
    fn nominal_takes_neighbourhood_mode() {
        let mk = |x: f64, s: &str| {
            EncodedInstance::new(vec![Feature::Ordinal(x), Feature::Nominal(s.into())], O)
        };
        let d = vec![
            mk(0.0, "a"),
            mk(1.0, "b"),
            mk(2.0, "b"),
            mk(50.0, "c"),
            EncodedInstance::new(vec![Feature::Ordinal(9.0), Feature::Nominal("z".into())], R),
        ];
        let d: Vec<_> = d
            .into_iter()
            .chain((0..5).map(|i| {
                EncodedInstance::new(
                    vec![Feature::Ordinal(i as f64), Feature::Nominal("z".into())],
                    R,
                )
            }))
            .collect();
        let cfg = SmoteConfig {
            k: 2,
            ..Default::default()
        };
        // seed "a" (0.0), neighbours 1.0 "b" and 2.0 "b": mode is "b"
        let mut src = Fixed {
            seed: 0,
            neighbor: 0,
            gap: 0.5,
        };
        let out = oversample_with(&d, &cfg, &mut src).unwrap();
        for s in out.synthetic() {
            assert_eq!(s.features[1], Feature::Nominal("b".into()));
            assert_eq!(s.features[0], Feature::Ordinal(1.0));
        }
    }

    #[test]
    fn invalid_config() {
        let bad = SmoteConfig {
            k: 0,
            ..Default::default()
        };
        assert!(oversample(&fig3(), &bad).is_err());
        let bad = SmoteConfig {
            target_ratio: 1.5,
            ..Default::default()
        };
        assert!(oversample(&fig3(), &bad).is_err());
    }

    fn dataset() -> impl Strategy<Value = Vec<EncodedInstance<f64>>> {
        let row = (
            prop::collection::vec(0u8..6, 2),
            prop_oneof![Just("p"), Just("q"), Just("r")],
            prop::bool::weighted(0.25),
        );
        prop::collection::vec(row, 4..40).prop_map(|rows| {
            rows.into_iter()
                .map(|(xs, s, opt)| {
                    let mut f: Vec<Feature<f64>> =
                        xs.into_iter().map(|x| Feature::Ordinal(x as f64)).collect();
                    f.push(Feature::Nominal(s.to_string()));
                    EncodedInstance::new(f, if opt { O } else { R })
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn balance_convexity_originals_determinism(data in dataset(), seed in any::<u64>(), k in 1usize..6) {
            let cfg = SmoteConfig { k, target_ratio: 1.0, seed };
            let out = oversample(&data, &cfg).unwrap();
            prop_assert_eq!(&out.instances[..data.len()], &data[..]);
            if !out.single_class {
                let opt = out.instances.iter().filter(|i| i.class == O).count();
                prop_assert_eq!(opt * 2, out.instances.len());
            }
            for (s, &(a, b)) in out.synthetic().iter().zip(&out.origins) {
                for col in 0..2 {
                    let (Feature::Ordinal(x), Feature::Ordinal(lo), Feature::Ordinal(hi)) =
                        (&s.features[col], &data[a].features[col], &data[b].features[col])
                    else { unreachable!() };
                    prop_assert!(*x >= lo.min(*hi) && *x <= lo.max(*hi));
                }
            }
            prop_assert_eq!(oversample(&data, &cfg).unwrap(), out);
        }
    }
}
