//! Per-target model building, threshold tuning and the persisted bundle.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bn::{self, fit_cpts, learn_structure, DiscreteData};
use crate::dataset::{temporal_split, Dataset, FieldKind, FormSchema, SplitRatios};
use crate::error::{Error, Result};
use crate::preprocess::{
    fit_preprocessor, CellValue, DiscretizerMode, MeaninglessDictionary, PreprocessedInstance,
    PreprocessorModel, StagedCell, StagedInstance,
};
use crate::relax::decide;
use crate::smote::{oversample, EncodedInstance, Feature, SmoteConfig};
use crate::{BinaryClass, Real};

pub const BUNDLE_VERSION: u32 = 1;

/// Candidate endorser thresholds, 0.00 to 1.00 in steps of 0.05.
pub fn theta_grid() -> [f64; 21] {
    std::array::from_fn(|i| i as f64 / 20.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub split: SplitRatios,
    pub smote: SmoteConfig,
    pub structure: bn::StructureSearchConfig<Real>,
    pub laplace_alpha: Real,
    pub discretizer: DiscretizerMode,
    pub enable_smote: bool,
    pub enable_endorser: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            split: SplitRatios::default(),
            smote: SmoteConfig::default(),
            structure: bn::StructureSearchConfig::default(),
            laplace_alpha: 1.0,
            discretizer: DiscretizerMode::default(),
            enable_smote: true,
            enable_endorser: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.smote.validate()?;
        self.structure.validate()?;
        if !(self.laplace_alpha >= 0.0 && self.laplace_alpha.is_finite()) {
            return Err(Error::Config(
                "laplace alpha must be a non-negative number".into(),
            ));
        }
        if let DiscretizerMode::GlobalEqualFrequency { bins } = self.discretizer {
            if bins == 0 {
                return Err(Error::Config(
                    "equal-frequency discretizer needs at least one bin".into(),
                ));
            }
        }
        Ok(())
    }

    /// Short variant name: full, -S, -E or -SE.
    pub fn variant(&self) -> &'static str {
        match (self.enable_smote, self.enable_endorser) {
            (true, true) => "full",
            (false, true) => "-S",
            (true, false) => "-E",
            (false, false) => "-SE",
        }
    }
}

/// RNG seed for one target, independent of which other targets exist.
pub fn target_seed(global: u64, target: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(global.to_le_bytes());
    h.update(target.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSummary {
    pub cases: usize,
    /// Tuning accuracy of the chosen threshold.
    pub accuracy: Option<Real>,
    /// Set when no tuning data was available and the default was used.
    pub defaulted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetModel {
    pub target: String,
    pub net: bn::BayesNet<Real>,
    pub theta: Real,
    pub class_order: [BinaryClass; 2],
    /// Class counts of the set the network was trained on, after oversampling.
    pub class_counts: [usize; 2],
    pub synthetic_rows: usize,
    pub tuning: Option<TuningSummary>,
}

impl TargetModel {
    /// Maps preprocessed cells to network evidence. Cells whose state the
    /// network never saw carry no information and are left out.
    pub fn evidence(&self, inst: &PreprocessedInstance) -> Vec<(usize, usize)> {
        inst.values
            .iter()
            .filter(|(f, _)| f.as_str() != self.target)
            .filter_map(|(f, v)| {
                let node = self.net.index_of(f)?;
                let state = self.net.state_index(node, &v.state_label())?;
                Some((node, state))
            })
            .collect()
    }

    /// `(P(Required), P(Optional))` given the preprocessed evidence.
    pub fn class_probabilities(&self, inst: &PreprocessedInstance) -> Result<(Real, Real, bool)> {
        let q = self.net.index_of(&self.target).ok_or_else(|| {
            Error::InvalidNetwork(format!("target `{}` missing from its network", self.target))
        })?;
        let post = self.net.infer_indexed(&self.evidence(inst), q)?;
        Ok((post.probs[0], post.probs[1], post.zero_evidence))
    }
}

/// Training rows of one target, in network layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetDataset {
    pub target: String,
    /// Target first, then the features in tab order.
    pub columns: Vec<String>,
    pub states: Vec<Vec<String>>,
    pub rows: Vec<Vec<String>>,
    pub bins: BTreeMap<String, Vec<f64>>,
}

impl TargetDataset {
    pub fn class_counts(&self) -> [usize; 2] {
        let opt = self
            .rows
            .iter()
            .filter(|r| r[0] == BinaryClass::Optional.label())
            .count();
        [self.rows.len() - opt, opt]
    }
}

/// Required fields that survive preprocessing, in tab order.
pub fn candidate_targets(schema: &FormSchema, pre: &PreprocessorModel) -> Vec<String> {
    schema
        .in_tab_order()
        .into_iter()
        .filter(|f| f.required && pre.is_retained(&f.name))
        .map(|f| f.name.clone())
        .collect()
}

fn state_space(pre: &PreprocessorModel, field: &str, cuts: Option<&Vec<f64>>) -> Vec<String> {
    let opt = CellValue::OptionalMark.state_label();
    match pre.kind(field) {
        Some(FieldKind::Categorical) => std::iter::once(opt)
            .chain(
                pre.category_vocab
                    .get(field)
                    .into_iter()
                    .flatten()
                    .map(|c| CellValue::Category(c.clone()).state_label()),
            )
            .collect(),
        Some(FieldKind::Numerical) => {
            let n = cuts.map_or(0, Vec::len);
            std::iter::once(opt)
                .chain((0..=n).map(|i| CellValue::Interval(i).state_label()))
                .collect()
        }
        _ => vec![CellValue::RequiredMark.state_label(), opt],
    }
}

/// Builds the labelled, discretized training set for `target`: the target
/// column collapses to Required/Optional and numeric features are binned
/// against that label.
pub fn make_target_dataset(
    schema: &FormSchema,
    pre: &PreprocessorModel,
    staged: &[StagedInstance],
    target: &str,
    mode: &DiscretizerMode,
) -> Result<TargetDataset> {
    if staged.is_empty() {
        return Err(Error::EmptyData);
    }
    if !pre.is_retained(target) {
        return Err(Error::UnknownTarget(target.to_string()));
    }
    let labels: Vec<BinaryClass> = staged
        .iter()
        .map(|s| s.class_of(target).unwrap_or(BinaryClass::Optional))
        .collect();
    if labels.iter().all(|c| *c == labels[0]) {
        return Err(Error::TargetConstant(target.to_string()));
    }
    let features: Vec<String> = schema
        .tab_order_names()
        .into_iter()
        .filter(|f| f != target && pre.is_retained(f))
        .collect();

    let mut bins = BTreeMap::new();
    for f in &features {
        if pre.kind(f) == Some(FieldKind::Numerical) {
            let values: Vec<(f64, BinaryClass)> = staged
                .iter()
                .zip(&labels)
                .filter_map(|(s, c)| match s.cells.get(f) {
                    Some(StagedCell::Numeric(x)) => Some((*x, *c)),
                    _ => None,
                })
                .collect();
            bins.insert(f.clone(), mode.cuts(&values));
        }
    }

    let mut columns = vec![target.to_string()];
    columns.extend(features.iter().cloned());
    let mut states = vec![vec![
        BinaryClass::Required.label().to_string(),
        BinaryClass::Optional.label().to_string(),
    ]];
    states.extend(features.iter().map(|f| state_space(pre, f, bins.get(f))));

    let rows = staged
        .iter()
        .zip(&labels)
        .map(|(s, c)| {
            let mut row = vec![c.label().to_string()];
            for f in &features {
                let v = match s.cells.get(f) {
                    Some(StagedCell::Ready(v)) => v.clone(),
                    Some(StagedCell::Numeric(x)) => {
                        CellValue::Interval(crate::preprocess::bin_index(&bins[f], *x))
                    }
                    None => CellValue::OptionalMark,
                };
                row.push(v.state_label());
            }
            row
        })
        .collect();
    Ok(TargetDataset {
        target: target.to_string(),
        columns,
        states,
        rows,
        bins,
    })
}

fn encode(ds: &TargetDataset) -> Vec<EncodedInstance<Real>> {
    ds.rows
        .iter()
        .map(|row| {
            let class = if row[0] == BinaryClass::Optional.label() {
                BinaryClass::Optional
            } else {
                BinaryClass::Required
            };
            let features = row[1..]
                .iter()
                .map(|label| match CellValue::from_state_label(label) {
                    Some(CellValue::Interval(i)) => Feature::Ordinal(i as Real),
                    _ => Feature::Nominal(label.clone()),
                })
                .collect();
            EncodedInstance::new(features, class)
        })
        .collect()
}

fn decode(ds: &TargetDataset, encoded: &[EncodedInstance<Real>]) -> Vec<Vec<String>> {
    encoded
        .iter()
        .map(|e| {
            let mut row = vec![e.class.label().to_string()];
            for (j, f) in e.features.iter().enumerate() {
                row.push(match f {
                    Feature::Ordinal(x) => {
                        let top = ds.bins.get(&ds.columns[j + 1]).map_or(0, Vec::len);
                        CellValue::Interval((x.max(0.0).round() as usize).min(top)).state_label()
                    }
                    Feature::Nominal(s) => s.clone(),
                });
            }
            row
        })
        .collect()
}

/// Oversamples (when enabled), learns the structure and fits the CPTs for one
/// target.
pub fn build_target_model(ds: &TargetDataset, cfg: &TrainConfig) -> Result<TargetModel> {
    let seed = target_seed(cfg.seed, &ds.target);
    let (rows, synthetic) = if cfg.enable_smote {
        let smote = SmoteConfig { seed, ..cfg.smote };
        let out = oversample(&encode(ds), &smote)?;
        let synthetic = out.origins.len();
        (decode(ds, &out.instances), synthetic)
    } else {
        (ds.rows.clone(), 0)
    };
    let data = DiscreteData::from_rows_with_states(ds.columns.clone(), ds.states.clone(), &rows)?;
    let structure = bn::StructureSearchConfig {
        seed,
        ..cfg.structure
    };
    let dag = learn_structure(&data, &structure)?;
    let net = fit_cpts(&dag, &data, cfg.laplace_alpha)?;
    let opt = rows
        .iter()
        .filter(|r| r[0] == BinaryClass::Optional.label())
        .count();
    Ok(TargetModel {
        target: ds.target.clone(),
        net,
        theta: 0.0,
        class_order: [BinaryClass::Required, BinaryClass::Optional],
        class_counts: [rows.len() - opt, opt],
        synthetic_rows: synthetic,
        tuning: None,
    })
}

/// Output of [`build_models`].
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltModels {
    pub models: BTreeMap<String, TargetModel>,
    /// target -> numeric field -> cut points.
    pub bins: BTreeMap<String, BTreeMap<String, Vec<f64>>>,
    /// Targets skipped because their column had a single class.
    pub skipped: Vec<String>,
}

/// Builds one model per target with both classes present; targets are
/// processed in parallel.
pub fn build_models(
    schema: &FormSchema,
    pre: &PreprocessorModel,
    staged: &[StagedInstance],
    cfg: &TrainConfig,
) -> Result<BuiltModels> {
    if staged.is_empty() {
        return Err(Error::EmptyData);
    }
    let targets = candidate_targets(schema, pre);
    type Built = Result<(TargetModel, BTreeMap<String, Vec<f64>>)>;
    let results: Vec<(String, Built)> = targets
        .par_iter()
        .map(|t| {
            let r = make_target_dataset(schema, pre, staged, t, &cfg.discretizer)
                .and_then(|ds| Ok((build_target_model(&ds, cfg)?, ds.bins)));
            (t.clone(), r)
        })
        .collect();
    let mut built = BuiltModels {
        models: BTreeMap::new(),
        bins: BTreeMap::new(),
        skipped: Vec::new(),
    };
    for (t, r) in results {
        match r {
            Ok((m, bins)) => {
                tracing::info!(target_field = %t, edges = m.net.dag().edge_count(), synthetic = m.synthetic_rows, "model built");
                built.bins.insert(t.clone(), bins);
                built.models.insert(t, m);
            }
            Err(Error::TargetConstant(_)) => {
                tracing::info!(target_field = %t, "single class, no model");
                built.skipped.push(t);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(built)
}

/// Number of tuning cases decided correctly at each grid threshold.
pub fn sweep_correct(scored: &[(Real, Real, BinaryClass)]) -> [usize; 21] {
    let grid = theta_grid();
    std::array::from_fn(|i| {
        scored
            .iter()
            .filter(|(p_req, p_opt, truth)| {
                let d = decide(*p_req, *p_opt, grid[i]);
                d.final_class() == *truth
            })
            .count()
    })
}

/// Scores each tuning instance with all other fields as evidence.
pub fn score_tuning_set(
    pre: &PreprocessorModel,
    model: &TargetModel,
    tune: &Dataset,
) -> Result<Vec<(Real, Real, BinaryClass)>> {
    tune.instances
        .iter()
        .map(|inst| {
            let truth = pre
                .stage(&inst.values)
                .class_of(&model.target)
                .unwrap_or(BinaryClass::Optional);
            let mut filled = inst.values.clone();
            filled.remove(&model.target);
            let evidence = pre.transform_partial(&filled, &model.target);
            let (p_req, p_opt, _) = model.class_probabilities(&evidence)?;
            Ok((p_req, p_opt, truth))
        })
        .collect()
}

/// Picks each target's endorser threshold: the grid value with the highest
/// tuning accuracy, smallest on ties. Without the endorser every threshold is
/// zero; without tuning data it is 0.5.
pub fn tune_thresholds(
    pre: &PreprocessorModel,
    models: &mut BTreeMap<String, TargetModel>,
    tune: &Dataset,
    enable_endorser: bool,
) -> Result<()> {
    let grid = theta_grid();
    models.par_iter_mut().try_for_each(|(_, m)| -> Result<()> {
        if !enable_endorser {
            m.theta = 0.0;
            m.tuning = None;
            return Ok(());
        }
        if tune.is_empty() {
            tracing::warn!(target_field = %m.target, "empty tuning set, default threshold");
            m.theta = 0.5;
            m.tuning = Some(TuningSummary {
                cases: 0,
                accuracy: None,
                defaulted: true,
            });
            return Ok(());
        }
        let scored = score_tuning_set(pre, m, tune)?;
        let correct = sweep_correct(&scored);
        let mut best = 0;
        for i in 1..grid.len() {
            if correct[i] > correct[best] {
                best = i;
            }
        }
        m.theta = grid[best];
        m.tuning = Some(TuningSummary {
            cases: scored.len(),
            accuracy: Some(correct[best] as Real / scored.len() as Real),
            defaulted: false,
        });
        Ok(())
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub bundle_version: u32,
    pub schema_hash: String,
    pub schema: FormSchema,
    pub preprocessor: PreprocessorModel,
    pub models: BTreeMap<String, TargetModel>,
    #[serde(default)]
    pub skipped_targets: Vec<String>,
    pub train_config: TrainConfig,
    pub created_at: String,
    pub train_seconds: f64,
}

impl ModelBundle {
    pub fn model(&self, target: &str) -> Option<&TargetModel> {
        self.models.get(target)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let b: ModelBundle = serde_json::from_str(s)?;
        if b.bundle_version != BUNDLE_VERSION {
            return Err(Error::BundleVersion(b.bundle_version));
        }
        let hash = b.schema.hash();
        if hash != b.schema_hash {
            return Err(Error::SchemaMismatch {
                expected: b.schema_hash,
                found: hash,
            });
        }
        Ok(b)
    }

    /// Fails unless the bundle was trained for `schema`.
    pub fn check_schema(&self, schema: &FormSchema) -> Result<()> {
        let found = schema.hash();
        if found == self.schema_hash {
            Ok(())
        } else {
            Err(Error::SchemaMismatch {
                expected: self.schema_hash.clone(),
                found,
            })
        }
    }
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, bundle.to_json()?).map_err(|e| Error::io(path, e))
}

/// Loads a bundle; with `schema` given, also checks it matches.
pub fn load_bundle(path: impl AsRef<Path>, schema: Option<&FormSchema>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bundle = ModelBundle::from_json(&text)?;
    if let Some(s) = schema {
        bundle.check_schema(s)?;
    }
    Ok(bundle)
}

/// Fits preprocessing, builds every model on `train` and tunes thresholds on
/// `tune`.
pub fn train(
    train: &Dataset,
    tune: &Dataset,
    dict: &MeaninglessDictionary,
    cfg: &TrainConfig,
) -> Result<ModelBundle> {
    cfg.validate()?;
    let started = Instant::now();
    let mut pre = fit_preprocessor(train, dict)?;
    let staged: Vec<StagedInstance> = train
        .instances
        .par_iter()
        .map(|i| pre.stage(&i.values))
        .collect();
    let built = build_models(&train.schema, &pre, &staged, cfg)?;
    pre.bins = built.bins;
    let mut models = built.models;
    tune_thresholds(&pre, &mut models, tune, cfg.enable_endorser)?;
    Ok(ModelBundle {
        bundle_version: BUNDLE_VERSION,
        schema_hash: train.schema.hash(),
        schema: train.schema.clone(),
        preprocessor: pre,
        models,
        skipped_targets: built.skipped,
        train_config: cfg.clone(),
        created_at: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        train_seconds: started.elapsed().as_secs_f64(),
    })
}

/// Splits by time, trains on the first two parts and returns the bundle with
/// the held-out test part.
pub fn train_with_split(
    data: &Dataset,
    dict: &MeaninglessDictionary,
    cfg: &TrainConfig,
) -> Result<(ModelBundle, Dataset)> {
    let (tr, tu, te) = temporal_split(data, cfg.split)?;
    Ok((train(&tr, &tu, dict, cfg)?, te))
}
