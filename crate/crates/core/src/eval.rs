//! Simulated filling sessions over held-out submissions and the metrics
//! computed from them.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FormSchema};
use crate::error::Result;
use crate::pipeline::ModelBundle;
use crate::preprocess::{classify_cell, MeaninglessDictionary};
use crate::relax::{predict_requirement, Decision, PartialForm};
use crate::scalar::Scalar;
use crate::BinaryClass;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioMode {
    /// Fields are filled in tab order.
    Sequential,
    /// Fields are filled in a random order; grouped fields move together and
    /// keep their order.
    PartialRandom,
}

impl std::str::FromStr for ScenarioMode {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sequential" => Ok(ScenarioMode::Sequential),
            "partial-random" => Ok(ScenarioMode::PartialRandom),
            other => Err(format!(
                "unknown scenario `{other}` (sequential, partial-random)"
            )),
        }
    }
}

impl std::fmt::Display for ScenarioMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioMode::Sequential => "sequential",
            ScenarioMode::PartialRandom => "partial-random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub mode: ScenarioMode,
    pub seed: u64,
    /// Keep group members together in random orders.
    pub honor_groups: bool,
}

impl ScenarioConfig {
    pub fn sequential() -> Self {
        ScenarioConfig {
            mode: ScenarioMode::Sequential,
            seed: 0,
            honor_groups: true,
        }
    }

    pub fn partial_random(seed: u64) -> Self {
        ScenarioConfig {
            mode: ScenarioMode::PartialRandom,
            seed,
            honor_groups: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    /// Row of the instance in the test set.
    pub instance: usize,
    pub prefix: BTreeMap<String, String>,
    pub target: String,
    pub truth: BinaryClass,
}

/// Fill order for one instance.
pub fn fill_order(schema: &FormSchema, scenario: &ScenarioConfig, instance: usize) -> Vec<String> {
    let tab = schema.tab_order_names();
    if scenario.mode == ScenarioMode::Sequential {
        return tab;
    }
    let groups = crate::dataset::group_of(schema);
    let mut units: Vec<Vec<String>> = Vec::new();
    for f in tab {
        let grouped = scenario.honor_groups.then(|| groups.get(&f)).flatten();
        match (grouped, units.last_mut()) {
            (Some(g), Some(last)) if groups.get(&last[0]) == Some(g) => last.push(f),
            _ => units.push(vec![f]),
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
    rng.set_stream(instance as u64);
    units.shuffle(&mut rng);
    units.into_iter().flatten().collect()
}

/// One case per (instance, target): the prefix holds the non-blank values of
/// the fields filled before the target, and the truth is whether the target's
/// own value was missing or meaningless.
pub fn generate_cases(
    test: &Dataset,
    targets: &[String],
    dict: &MeaninglessDictionary,
    scenario: &ScenarioConfig,
) -> Vec<TestCase> {
    let schema = &test.schema;
    // a single field has nothing to condition on
    if schema.fields.len() < 2 {
        return Vec::new();
    }
    let mut cases = Vec::new();
    for (idx, inst) in test.instances.iter().enumerate() {
        let order = fill_order(schema, scenario, idx);
        let mut prefix = BTreeMap::new();
        for f in order {
            if targets.contains(&f) {
                let kind = schema.field(&f).expect("ordered from schema").kind;
                let truth = classify_cell(inst.get(&f), kind, dict).class();
                cases.push(TestCase {
                    instance: idx,
                    prefix: prefix.clone(),
                    target: f.clone(),
                    truth,
                });
            }
            if let Some(v) = inst.get(&f) {
                if !v.trim().is_empty() {
                    prefix.insert(f, v.to_string());
                }
            }
        }
    }
    cases
}

/// Counts with Required as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

fn ratio<T: Scalar>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::of(num as f64) / T::of(den as f64))
}

impl ConfusionMatrix {
    pub fn record(&mut self, predicted: BinaryClass, truth: BinaryClass) {
        use BinaryClass::{Optional, Required};
        match (predicted, truth) {
            (Required, Required) => self.tp += 1,
            (Required, Optional) => self.fp += 1,
            (Optional, Optional) => self.tn += 1,
            (Optional, Required) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn precision<T: Scalar>(&self) -> Option<T> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall<T: Scalar>(&self) -> Option<T> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn npv<T: Scalar>(&self) -> Option<T> {
        ratio(self.tn, self.tn + self.fn_)
    }

    pub fn specificity<T: Scalar>(&self) -> Option<T> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn accuracy<T: Scalar>(&self) -> Option<T> {
        ratio(self.tp + self.tn, self.total())
    }
}

/// Metrics of one confusion matrix; undefined ratios are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub confusion: ConfusionMatrix,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub npv: Option<f64>,
    pub specificity: Option<f64>,
    pub accuracy: Option<f64>,
}

impl From<ConfusionMatrix> for MetricSet {
    fn from(c: ConfusionMatrix) -> Self {
        MetricSet {
            confusion: c,
            precision: c.precision(),
            recall: c.recall(),
            npv: c.npv(),
            specificity: c.specificity(),
            accuracy: c.accuracy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scenario: Option<ScenarioMode>,
    pub variant: Option<String>,
    pub cases: usize,
    pub overall: MetricSet,
    pub per_target: BTreeMap<String, MetricSet>,
    pub latency: Option<LatencyStats>,
    pub train_seconds: Option<f64>,
}

/// Scores final decisions against the truth.
pub fn score(decisions: &[(Decision, BinaryClass)]) -> MetricsReport {
    let mut overall = ConfusionMatrix::default();
    let mut per: BTreeMap<String, ConfusionMatrix> = BTreeMap::new();
    for (d, truth) in decisions {
        overall.record(d.final_class(), *truth);
        per.entry(d.target.clone())
            .or_default()
            .record(d.final_class(), *truth);
    }
    let ms: Vec<f64> = decisions
        .iter()
        .map(|(d, _)| d.latency.as_secs_f64() * 1e3)
        .collect();
    let latency = (!ms.is_empty()).then(|| LatencyStats {
        mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
        min_ms: ms.iter().copied().fold(f64::INFINITY, f64::min),
        max_ms: ms.iter().copied().fold(0.0, f64::max),
    });
    MetricsReport {
        scenario: None,
        variant: None,
        cases: decisions.len(),
        overall: overall.into(),
        per_target: per.into_iter().map(|(k, v)| (k, v.into())).collect(),
        latency,
        train_seconds: None,
    }
}

/// Generates cases from `test`, predicts each with the bundle and scores the
/// final decisions.
pub fn run_experiment(
    bundle: &ModelBundle,
    test: &Dataset,
    scenario: &ScenarioConfig,
) -> Result<MetricsReport> {
    bundle.check_schema(&test.schema)?;
    let targets: Vec<String> = bundle.models.keys().cloned().collect();
    let cases = generate_cases(test, &targets, &bundle.preprocessor.meaningless, scenario);
    let decisions = cases
        .par_iter()
        .map(|c| {
            let form = PartialForm {
                filled: c.prefix.clone(),
                timestamp: None,
            };
            Ok((predict_requirement(bundle, &form, &c.target)?, c.truth))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = score(&decisions);
    report.scenario = Some(scenario.mode);
    report.variant = Some(bundle.train_config.variant().to_string());
    report.train_seconds = Some(bundle.train_seconds);
    Ok(report)
}

fn cell(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.3}"))
}

impl MetricsReport {
    /// Aligned text table: one row per target plus the overall row.
    pub fn to_table(&self) -> String {
        let mut rows: Vec<(String, &MetricSet)> = self
            .per_target
            .iter()
            .map(|(k, v)| (k.clone(), v))
            .collect();
        rows.push(("(all)".to_string(), &self.overall));
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
        let mut out = String::new();
        if let Some(s) = self.scenario {
            let _ = write!(out, "scenario: {s}");
            if let Some(v) = &self.variant {
                let _ = write!(out, "  variant: {v}");
            }
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
            "target", "Prec", "Rec", "NPV", "Spec", "Acc", "cases"
        );
        for (name, m) in rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}  {:>6}  {:>7}",
                name,
                cell(m.precision),
                cell(m.recall),
                cell(m.npv),
                cell(m.specificity),
                cell(m.accuracy),
                m.confusion.total()
            );
        }
        if let Some(t) = self.train_seconds {
            let _ = writeln!(out, "train: {t:.2} s");
        }
        if let Some(l) = self.latency {
            let _ = writeln!(
                out,
                "predict: {:.3} ms avg ({:.3} to {:.3} ms)",
                l.mean_ms, l.min_ms, l.max_ms
            );
        }
        out
    }
}
