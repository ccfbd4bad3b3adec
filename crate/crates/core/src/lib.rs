//! Learns, from historical form submissions, when a required field of a data
//! entry form can be relaxed to optional, and answers that question live while
//! a form is being filled.
//!
//! The crate is organised bottom-up:
//!
//! * [`dataset`]: form schema, raw submissions and the temporal split.
//! * [`preprocess`]: abstraction of raw cells into required/optional marks,
//!   categories and intervals, including supervised discretization.
//! * [`smote`]: minority oversampling of per-target training sets.
//! * [`bn`]: discrete Bayesian networks: BIC hill climbing, CPT estimation and
//!   exact inference by variable elimination.
//! * [`pipeline`]: per-target model building, endorser threshold tuning and
//!   the persisted [`ModelBundle`].
//! * [`relax`]: the online decision for one partially filled form.
//! * [`eval`]: fill-order simulation and metrics.
//! * [`synth`]: synthetic fixtures with planted relaxation rules.
//!
//! The numeric core (`bn`, `smote`, the discretizer and the metric ratios) is
//! generic over a [`Scalar`]; the aliases below pin it to `f64`, which is what
//! the pipeline and the bundle format use.

pub mod bn;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod pipeline;
pub mod preprocess;
pub mod relax;
pub mod scalar;
pub mod smote;
pub mod synth;

pub use dataset::{Dataset, FieldKind, FieldSpec, FormSchema, RawInstance, Timestamp};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, MetricsReport, ScenarioConfig, ScenarioMode, TestCase};
pub use pipeline::{ModelBundle, TargetModel, TrainConfig};
pub use preprocess::{CellValue, MeaninglessDictionary, PreprocessedInstance, PreprocessorModel};
pub use relax::{Decision, PartialForm};
pub use scalar::Scalar;

/// Scalar used by the pipeline and the serialized bundle.
pub type Real = f64;

/// Two-valued completeness class of a field in one submission.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum BinaryClass {
    Required,
    Optional,
}

impl BinaryClass {
    pub fn as_str(self) -> &'static str {
        match self {
            BinaryClass::Required => "required",
            BinaryClass::Optional => "optional",
        }
    }

    /// State label of the class inside a network.
    pub fn label(self) -> &'static str {
        match self {
            BinaryClass::Required => "Required",
            BinaryClass::Optional => "Optional",
        }
    }
}

impl std::fmt::Display for BinaryClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

pub type Dag = bn::Dag;
pub type BayesNet = bn::BayesNet<Real>;
pub type BayesNetF32 = bn::BayesNet<f32>;
pub type Cpt = bn::Cpt<Real>;
pub type Posterior = bn::Posterior<Real>;
pub type StructureSearchConfig = bn::StructureSearchConfig<Real>;
pub type EncodedInstance = smote::EncodedInstance<Real>;
pub type Feature = smote::Feature<Real>;
