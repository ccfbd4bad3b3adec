//! Abstraction of raw form values.
//!
//! Missing and meaningless values become [`CellValue::OptionalMark`], valid
//! text becomes [`CellValue::RequiredMark`], categories are kept, and numbers
//! are discretized into intervals. Fields that are constant after this
//! transformation carry no information and are dropped.
//!
//! Numeric discretization is supervised by the completeness class of a target
//! field, so cut points are stored per `(target, numeric field)` pair and a
//! numeric cell stays [`StagedCell::Numeric`] until a target is chosen.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, FieldKind};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::BinaryClass;

/// Category used at prediction time for labels never seen in training.
pub const UNSEEN_CATEGORY: &str = "__unseen__";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum CellValue {
    RequiredMark,
    OptionalMark,
    Category(String),
    Interval(usize),
}

impl CellValue {
    /// Completeness class of the cell: only an optional mark is `Optional`.
    pub fn class(&self) -> BinaryClass {
        match self {
            CellValue::OptionalMark => BinaryClass::Optional,
            _ => BinaryClass::Required,
        }
    }

    /// Stable string used as a Bayesian network state.
    pub fn state_label(&self) -> String {
        match self {
            CellValue::RequiredMark => "Required".to_string(),
            CellValue::OptionalMark => "Optional".to_string(),
            CellValue::Category(c) => format!("cat:{c}"),
            CellValue::Interval(i) => format!("bin:{i}"),
        }
    }

    pub fn from_state_label(s: &str) -> Option<CellValue> {
        match s {
            "Required" => Some(CellValue::RequiredMark),
            "Optional" => Some(CellValue::OptionalMark),
            _ => {
                if let Some(c) = s.strip_prefix("cat:") {
                    Some(CellValue::Category(c.to_string()))
                } else {
                    s.strip_prefix("bin:")?
                        .parse()
                        .ok()
                        .map(CellValue::Interval)
                }
            }
        }
    }
}

impl fmt::Display for CellValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.state_label())
    }
}

/// A cell after classification; numbers wait for per-target bins.
#[derive(Debug, Clone, PartialEq)]
pub enum StagedCell {
    Ready(CellValue),
    Numeric(f64),
}

impl StagedCell {
    pub fn class(&self) -> BinaryClass {
        match self {
            StagedCell::Ready(c) => c.class(),
            StagedCell::Numeric(_) => BinaryClass::Required,
        }
    }
}

/// Known placeholder values entered only to get past a required check.
///
/// Matching is exact after trimming and lowercasing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MeaninglessDictionary {
    entries: BTreeSet<String>,
}

impl MeaninglessDictionary {
    pub fn new<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let entries = values
            .into_iter()
            .map(|v| normalize(v.as_ref()))
            .filter(|v| !v.is_empty())
            .collect();
        MeaninglessDictionary { entries }
    }

    /// One value per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Self {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::parse(&text))
    }

    pub fn contains(&self, raw: &str) -> bool {
        self.entries.contains(&normalize(raw))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Classifies one raw value. The dictionary is consulted before the field
/// kind, so a placeholder is optional whatever the field type.
pub fn classify_cell(
    raw: Option<&str>,
    kind: FieldKind,
    dict: &MeaninglessDictionary,
) -> StagedCell {
    let Some(raw) = raw.map(str::trim).filter(|s| !s.is_empty()) else {
        return StagedCell::Ready(CellValue::OptionalMark);
    };
    if dict.contains(raw) {
        return StagedCell::Ready(CellValue::OptionalMark);
    }
    match kind {
        FieldKind::Textual => StagedCell::Ready(CellValue::RequiredMark),
        FieldKind::Categorical => StagedCell::Ready(CellValue::Category(raw.to_string())),
        FieldKind::Numerical => match raw.parse::<f64>() {
            Ok(x) if x.is_finite() => StagedCell::Numeric(x),
            _ => StagedCell::Ready(CellValue::OptionalMark),
        },
    }
}

/// How numeric fields are cut into intervals.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DiscretizerMode {
    /// Recursive entropy splits with the MDL stopping rule, supervised by the
    /// target's completeness class.
    #[default]
    Mdlp,
    /// Unsupervised equal-frequency bins, identical for every target.
    GlobalEqualFrequency { bins: usize },
}

impl DiscretizerMode {
    pub fn cuts(&self, values: &[(f64, BinaryClass)]) -> Vec<f64> {
        match *self {
            DiscretizerMode::Mdlp => fit_discretizer(values),
            DiscretizerMode::GlobalEqualFrequency { bins } => {
                let xs: Vec<f64> = values.iter().map(|v| v.0).collect();
                equal_frequency_cuts(&xs, bins)
            }
        }
    }
}

/// Supervised entropy/MDLP discretization of a labelled numeric column.
///
/// Returns strictly increasing cut points (midpoints between adjacent distinct
/// values); an empty list means a single bin.
pub fn fit_discretizer<T: Scalar>(values: &[(T, BinaryClass)]) -> Vec<T> {
    let mut sorted: Vec<(T, BinaryClass)> = values
        .iter()
        .copied()
        .filter(|(x, _)| x.is_finite())
        .collect();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite"));
    let mut cuts = Vec::new();
    mdlp_split(&sorted, &mut cuts);
    cuts.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    cuts
}

fn class_counts<T>(v: &[(T, BinaryClass)]) -> [usize; 2] {
    let opt = v
        .iter()
        .filter(|(_, c)| *c == BinaryClass::Optional)
        .count();
    [v.len() - opt, opt]
}

fn entropy<T: Scalar>(counts: [usize; 2]) -> T {
    let n = counts[0] + counts[1];
    if n == 0 {
        return T::zero();
    }
    let n = T::of_usize(n);
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = T::of_usize(c) / n;
            -p * p.log2()
        })
        .sum()
}

fn distinct_classes(counts: [usize; 2]) -> usize {
    counts.iter().filter(|&&c| c > 0).count()
}

fn mdlp_split<T: Scalar>(v: &[(T, BinaryClass)], cuts: &mut Vec<T>) {
    let n = v.len();
    if n < 2 {
        return;
    }
    let total = class_counts(v);
    let ent: T = entropy(total);
    if ent <= T::zero() {
        return;
    }
    let nt = T::of_usize(n);
    let mut left = [0usize; 2];
    let mut best: Option<(usize, T, [usize; 2])> = None;
    for i in 1..n {
        left[(v[i - 1].1 == BinaryClass::Optional) as usize] += 1;
        if v[i - 1].0 >= v[i].0 {
            continue;
        }
        let right = [total[0] - left[0], total[1] - left[1]];
        let w = T::of_usize(i) / nt * entropy::<T>(left)
            + T::of_usize(n - i) / nt * entropy::<T>(right);
        if best.as_ref().is_none_or(|(_, bw, _)| w < *bw) {
            best = Some((i, w, left));
        }
    }
    let Some((i, weighted, left)) = best else {
        return;
    };
    let right = [total[0] - left[0], total[1] - left[1]];
    let (e1, e2): (T, T) = (entropy(left), entropy(right));
    let k = T::of_usize(distinct_classes(total));
    let k1 = T::of_usize(distinct_classes(left));
    let k2 = T::of_usize(distinct_classes(right));
    let gain = ent - weighted;
    let three = T::of(3.0);
    let delta = (three.powf(k) - T::of(2.0)).log2() - (k * ent - k1 * e1 - k2 * e2);
    let threshold = ((nt - T::one()).log2() + delta) / nt;
    if gain > threshold {
        cuts.push((v[i - 1].0 + v[i].0) / T::of(2.0));
        mdlp_split(&v[..i], cuts);
        mdlp_split(&v[i..], cuts);
    }
}

/// Cut points giving roughly `bins` equally populated intervals.
pub fn equal_frequency_cuts<T: Scalar>(values: &[T], bins: usize) -> Vec<T> {
    let mut v: Vec<T> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = v.len();
    let mut cuts: Vec<T> = Vec::new();
    if bins < 2 || n < 2 {
        return cuts;
    }
    for j in 1..bins {
        let idx = j * n / bins;
        if idx == 0 || idx >= n || v[idx - 1] >= v[idx] {
            continue;
        }
        let c = (v[idx - 1] + v[idx]) / T::of(2.0);
        if cuts.last().is_none_or(|&last| c > last) {
            cuts.push(c);
        }
    }
    cuts
}

/// Interval index of `x`: intervals are `[cut[i-1], cut[i])`, so values
/// outside the learned range land in the first or last bin.
pub fn bin_index<T: PartialOrd>(cuts: &[T], x: T) -> usize {
    cuts.partition_point(|c| *c <= x)
}

/// A submission with every retained field abstracted.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessedInstance {
    pub values: BTreeMap<String, CellValue>,
}

impl PreprocessedInstance {
    pub fn get(&self, field: &str) -> Option<&CellValue> {
        self.values.get(field)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A submission whose numeric cells are not yet discretized.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StagedInstance {
    pub cells: BTreeMap<String, StagedCell>,
}

impl StagedInstance {
    pub fn class_of(&self, field: &str) -> Option<BinaryClass> {
        self.cells.get(field).map(StagedCell::class)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessorModel {
    pub kinds: BTreeMap<String, FieldKind>,
    pub dropped_fields: BTreeSet<String>,
    pub meaningless: MeaninglessDictionary,
    /// target field -> numeric field -> strictly increasing cut points.
    pub bins: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    pub category_vocab: BTreeMap<String, BTreeSet<String>>,
    /// Categorical labels seen in training but absent from the schema.
    #[serde(default)]
    pub unknown_categories: BTreeMap<String, BTreeSet<String>>,
}

/// Fits the field-level part of preprocessing: dropped fields and category
/// vocabularies. Per-target bins are added later by the training pipeline.
pub fn fit_preprocessor(
    train: &Dataset,
    dict: &MeaninglessDictionary,
) -> Result<PreprocessorModel> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let schema = &train.schema;
    let mut kinds = BTreeMap::new();
    let mut dropped = BTreeSet::new();
    let mut vocab = BTreeMap::new();
    let mut unknown = BTreeMap::new();

    for field in &schema.fields {
        kinds.insert(field.name.clone(), field.kind);
        let mut distinct: BTreeSet<String> = BTreeSet::new();
        let mut labels: BTreeSet<String> = field.categories.iter().cloned().collect();
        let mut unseen_in_schema = BTreeSet::new();
        for inst in &train.instances {
            let cell = classify_cell(inst.get(&field.name), field.kind, dict);
            let key = match &cell {
                StagedCell::Ready(c) => c.state_label(),
                StagedCell::Numeric(x) => format!("num:{}", x.to_bits()),
            };
            if let StagedCell::Ready(CellValue::Category(c)) = &cell {
                if !field.categories.contains(c) {
                    unseen_in_schema.insert(c.clone());
                }
                labels.insert(c.clone());
            }
            distinct.insert(key);
        }
        if distinct.len() <= 1 {
            dropped.insert(field.name.clone());
        }
        if field.kind == FieldKind::Categorical {
            if !unseen_in_schema.is_empty() {
                tracing::warn!(
                    field = %field.name,
                    count = unseen_in_schema.len(),
                    "categorical values outside the schema vocabulary"
                );
                unknown.insert(field.name.clone(), unseen_in_schema);
            }
            vocab.insert(field.name.clone(), labels);
        }
    }

    Ok(PreprocessorModel {
        kinds,
        dropped_fields: dropped,
        meaningless: dict.clone(),
        bins: BTreeMap::new(),
        category_vocab: vocab,
        unknown_categories: unknown,
    })
}

impl PreprocessorModel {
    pub fn is_retained(&self, field: &str) -> bool {
        self.kinds.contains_key(field) && !self.dropped_fields.contains(field)
    }

    pub fn retained_fields(&self) -> Vec<String> {
        self.kinds
            .keys()
            .filter(|f| !self.dropped_fields.contains(*f))
            .cloned()
            .collect()
    }

    pub fn kind(&self, field: &str) -> Option<FieldKind> {
        self.kinds.get(field).copied()
    }

    fn classify(&self, field: &str, raw: Option<&str>) -> Option<StagedCell> {
        let kind = self.kind(field)?;
        let cell = classify_cell(raw, kind, &self.meaningless);
        Some(match cell {
            StagedCell::Ready(CellValue::Category(c)) if !self.knows_category(field, &c) => {
                StagedCell::Ready(CellValue::Category(UNSEEN_CATEGORY.to_string()))
            }
            other => other,
        })
    }

    fn knows_category(&self, field: &str, label: &str) -> bool {
        self.category_vocab
            .get(field)
            .is_some_and(|v| v.contains(label))
    }

    /// Stages a complete historical submission: every retained field gets a
    /// cell, and an absent value counts as optional.
    pub fn stage(&self, values: &BTreeMap<String, String>) -> StagedInstance {
        let cells = self
            .kinds
            .keys()
            .filter(|f| !self.dropped_fields.contains(*f))
            .filter_map(|f| {
                let raw = values.get(f).map(String::as_str);
                self.classify(f, raw).map(|c| (f.clone(), c))
            })
            .collect();
        StagedInstance { cells }
    }

    /// Stages a partial form: only filled, retained, known fields appear.
    pub fn stage_partial(&self, filled: &BTreeMap<String, String>) -> StagedInstance {
        let cells = filled
            .iter()
            .filter(|(f, _)| self.is_retained(f))
            .filter_map(|(f, v)| self.classify(f, Some(v)).map(|c| (f.clone(), c)))
            .collect();
        StagedInstance { cells }
    }

    pub fn cuts(&self, target: &str, field: &str) -> &[f64] {
        self.bins
            .get(target)
            .and_then(|m| m.get(field))
            .map_or(&[], Vec::as_slice)
    }

    /// Discretizes the numeric cells of a staged instance for `target`.
    pub fn resolve(&self, staged: &StagedInstance, target: &str) -> PreprocessedInstance {
        let values = staged
            .cells
            .iter()
            .map(|(f, cell)| {
                let v = match cell {
                    StagedCell::Ready(c) => c.clone(),
                    StagedCell::Numeric(x) => {
                        CellValue::Interval(bin_index(self.cuts(target, f), *x))
                    }
                };
                (f.clone(), v)
            })
            .collect();
        PreprocessedInstance { values }
    }

    /// Preprocesses the filled part of a form for predicting `target`.
    /// Values of dropped fields are skipped; the target itself is ignored.
    pub fn transform_partial(
        &self,
        filled: &BTreeMap<String, String>,
        target: &str,
    ) -> PreprocessedInstance {
        let mut staged = self.stage_partial(filled);
        staged.cells.remove(target);
        self.resolve(&staged, target)
    }

    /// Re-applies the model to an instance that is already abstract. The
    /// result of [`Self::transform_partial`] is a fixed point.
    pub fn conform(&self, inst: &PreprocessedInstance, target: &str) -> PreprocessedInstance {
        let values = inst
            .values
            .iter()
            .filter(|(f, _)| self.is_retained(f) && f.as_str() != target)
            .map(|(f, v)| {
                let v = match v {
                    CellValue::Category(c)
                        if c != UNSEEN_CATEGORY && !self.knows_category(f, c) =>
                    {
                        CellValue::Category(UNSEEN_CATEGORY.to_string())
                    }
                    CellValue::Interval(i) => {
                        CellValue::Interval((*i).min(self.cuts(target, f).len()))
                    }
                    other => other.clone(),
                };
                (f.clone(), v)
            })
            .collect();
        PreprocessedInstance { values }
    }
}
