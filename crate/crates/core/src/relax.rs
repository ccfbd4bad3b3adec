//! Fill-time relaxation: decides whether a required field may be left empty
//! given what the user has filled so far.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dataset::Timestamp;
use crate::error::{Error, Result};
use crate::pipeline::ModelBundle;
use crate::{BinaryClass, Real};

/// Values entered so far. Blank values count as not filled.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialForm {
    pub filled: BTreeMap<String, String>,
    #[serde(default)]
    pub timestamp: Option<Timestamp>,
}

impl PartialForm {
    pub fn new<I, K, V>(values: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let filled = values
            .into_iter()
            .map(|(k, v)| (k.into(), v.into()))
            .filter(|(_, v)| !v.trim().is_empty())
            .collect();
        PartialForm {
            filled,
            timestamp: None,
        }
    }

    pub fn is_filled(&self, field: &str) -> bool {
        self.filled.get(field).is_some_and(|v| !v.trim().is_empty())
    }

    fn non_blank(&self) -> BTreeMap<String, String> {
        self.filled
            .iter()
            .filter(|(_, v)| !v.trim().is_empty())
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }
}

/// Outcome of the endorsed decision rule for one pair of class probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub predicted_class: BinaryClass,
    /// Probability of the predicted class.
    pub probability: Real,
    pub endorsed: bool,
    pub final_required: bool,
}

impl Verdict {
    pub fn final_class(&self) -> BinaryClass {
        if self.final_required {
            BinaryClass::Required
        } else {
            BinaryClass::Optional
        }
    }
}

/// Takes the more probable class (Required on a tie) and lets an Optional
/// prediction stand only when its probability reaches `theta`.
pub fn decide(p_required: Real, p_optional: Real, theta: Real) -> Verdict {
    if p_optional > p_required {
        let endorsed = p_optional >= theta;
        Verdict {
            predicted_class: BinaryClass::Optional,
            probability: p_optional,
            endorsed,
            final_required: !endorsed,
        }
    } else {
        Verdict {
            predicted_class: BinaryClass::Required,
            probability: p_required,
            endorsed: false,
            final_required: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub target: String,
    pub predicted_class: BinaryClass,
    pub probability: Real,
    pub theta_used: Real,
    pub endorsed: bool,
    pub final_required: bool,
    pub latency: Duration,
    /// The target had no model; it stays required.
    #[serde(default)]
    pub no_model: bool,
    /// The filled values were impossible under the model.
    #[serde(default)]
    pub zero_evidence: bool,
}

impl Decision {
    pub fn final_class(&self) -> BinaryClass {
        if self.final_required {
            BinaryClass::Required
        } else {
            BinaryClass::Optional
        }
    }
}

/// Predicts with the target's tuned threshold.
pub fn predict_requirement(
    bundle: &ModelBundle,
    form: &PartialForm,
    target: &str,
) -> Result<Decision> {
    predict_with_theta(bundle, form, target, None)
}

/// Predicts with `theta` in place of the tuned threshold when given.
pub fn predict_with_theta(
    bundle: &ModelBundle,
    form: &PartialForm,
    target: &str,
    theta: Option<Real>,
) -> Result<Decision> {
    let started = Instant::now();
    if !bundle.schema.contains(target) {
        return Err(Error::UnknownTarget(target.to_string()));
    }
    if let Some(unknown) = form.filled.keys().find(|k| !bundle.schema.contains(k)) {
        return Err(Error::UnknownColumn(unknown.clone()));
    }
    if form.is_filled(target) {
        return Err(Error::TargetFilled(target.to_string()));
    }
    let Some(model) = bundle.model(target) else {
        return Ok(Decision {
            target: target.to_string(),
            predicted_class: BinaryClass::Required,
            probability: 1.0,
            theta_used: theta.unwrap_or(0.0),
            endorsed: false,
            final_required: true,
            latency: started.elapsed(),
            no_model: true,
            zero_evidence: false,
        });
    };
    let evidence = bundle
        .preprocessor
        .transform_partial(&form.non_blank(), target);
    let (p_req, p_opt, zero) = model.class_probabilities(&evidence)?;
    let theta = theta.unwrap_or(model.theta);
    let v = decide(p_req, p_opt, theta);
    Ok(Decision {
        target: target.to_string(),
        predicted_class: v.predicted_class,
        probability: v.probability,
        theta_used: theta,
        endorsed: v.endorsed,
        final_required: v.final_required,
        latency: started.elapsed(),
        no_model: false,
        zero_evidence: zero,
    })
}

/// One decision per modelled, unfilled field, in tab order.
pub fn predict_all(bundle: &ModelBundle, form: &PartialForm) -> Result<Vec<Decision>> {
    bundle
        .schema
        .tab_order_names()
        .into_iter()
        .filter(|f| bundle.models.contains_key(f) && !form.is_filled(f))
        .map(|f| predict_requirement(bundle, form, &f))
        .collect()
}
