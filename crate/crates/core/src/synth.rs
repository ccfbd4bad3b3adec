//! Synthetic submissions with known completeness rules, for tests, demos and
//! benchmarks.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, FieldKind, FieldSpec, FormSchema, RawInstance, Timestamp};
use crate::preprocess::MeaninglessDictionary;

/// 2018-01-01T00:00:00Z
const EPOCH: i64 = 1_514_764_800;

pub const COMPANY_TYPES: [&str; 3] = ["PA", "NPO", "Private"];
pub const ACTIVITIES: [&str; 4] = ["health", "education", "charity", "finance"];
pub const PLACEHOLDERS: [&str; 4] = ["n/a", "@", "none", "-"];

/// The five-field company registration form.
pub fn company_schema() -> FormSchema {
    FormSchema::new(
        vec![
            FieldSpec::new("Company name", FieldKind::Textual, 1).required(),
            FieldSpec::new("Monthly revenue", FieldKind::Numerical, 2).required(),
            FieldSpec::new("Company type", FieldKind::Categorical, 3)
                .required()
                .with_categories(COMPANY_TYPES),
            FieldSpec::new("Field of activity", FieldKind::Categorical, 4)
                .required()
                .with_categories(ACTIVITIES),
            FieldSpec::new("Tax ID", FieldKind::Textual, 5)
                .required()
                .conditionally_required(),
        ],
        vec![],
    )
    .expect("static schema is valid")
}

pub fn placeholder_dictionary() -> MeaninglessDictionary {
    MeaninglessDictionary::new(PLACEHOLDERS)
}

/// Whether the hidden rule exempts a company from giving a tax ID.
pub fn tax_id_exempt(company_type: &str, activity: &str) -> bool {
    company_type == "NPO" && matches!(activity, "charity" | "education")
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantedConfig {
    pub rows: usize,
    /// Probability that a row's Tax ID completeness is decided by a coin flip
    /// instead of the rule.
    pub noise: f64,
    /// Probability that each of the other four fields is left blank or
    /// filled with a placeholder, making them relaxation targets too.
    pub other_missing: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        PlantedConfig {
            rows: 10_000,
            noise: 0.05,
            other_missing: 0.0,
            seed: 0,
        }
    }
}

fn blank_or_placeholder(rng: &mut ChaCha8Rng) -> Option<&'static str> {
    if rng.gen_bool(0.5) {
        None
    } else {
        Some(PLACEHOLDERS[rng.gen_range(0..PLACEHOLDERS.len())])
    }
}

/// Submissions over [`company_schema`] where Tax ID is left out exactly when
/// [`tax_id_exempt`] holds, up to label noise. Timestamps increase by one
/// minute per row.
pub fn planted_dataset(cfg: &PlantedConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.rows);
    for i in 0..cfg.rows {
        let ctype = if rng.gen_bool(0.4) {
            "NPO"
        } else if rng.gen_bool(0.5) {
            "PA"
        } else {
            "Private"
        };
        let activity = if ctype == "NPO" {
            match rng.gen_range(0..20) {
                0..=6 => "charity",
                7..=13 => "education",
                14..=16 => "health",
                _ => "finance",
            }
        } else {
            ACTIVITIES[rng.gen_range(0..4)]
        };
        let revenue = if ctype == "NPO" {
            rng.gen_range(1..60)
        } else {
            rng.gen_range(10..300)
        };
        let exempt = if rng.gen_bool(cfg.noise) {
            rng.gen_bool(0.5)
        } else {
            tax_id_exempt(ctype, activity)
        };

        let mut r = RawInstance::new(Timestamp(EPOCH + 60 * i as i64));
        let others = [
            ("Company name", format!("Company {i}")),
            ("Monthly revenue", revenue.to_string()),
            ("Company type", ctype.to_string()),
            ("Field of activity", activity.to_string()),
        ];
        for (field, value) in others {
            if cfg.other_missing > 0.0 && rng.gen_bool(cfg.other_missing) {
                if let Some(p) = blank_or_placeholder(&mut rng) {
                    r.set(field, p);
                }
            } else {
                r.set(field, value);
            }
        }
        if exempt {
            if let Some(p) = blank_or_placeholder(&mut rng) {
                r.set("Tax ID", p);
            }
        } else {
            r.set("Tax ID", format!("T{:06}", rng.gen_range(0..1_000_000)));
        }
        rows.push(r);
    }
    Dataset::new(company_schema(), rows).expect("rows use schema fields")
}

/// A form with `n_fields` required fields cycling through categorical,
/// textual and numeric kinds. Each textual field is usually left blank when
/// the categorical field before it holds `k0`.
pub fn wide_schema(n_fields: usize) -> FormSchema {
    let fields = (0..n_fields)
        .map(|i| {
            let name = format!("field_{i:02}");
            let tab = i as u32 + 1;
            match i % 3 {
                0 => FieldSpec::new(name, FieldKind::Categorical, tab)
                    .required()
                    .with_categories(["k0", "k1", "k2", "k3"]),
                1 => FieldSpec::new(name, FieldKind::Textual, tab).required(),
                _ => FieldSpec::new(name, FieldKind::Numerical, tab).required(),
            }
        })
        .collect();
    FormSchema::new(fields, vec![]).expect("generated schema is valid")
}

pub fn wide_dataset(n_fields: usize, rows: usize, seed: u64) -> Dataset {
    let schema = wide_schema(n_fields);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..rows)
        .map(|i| {
            let mut r = RawInstance::new(Timestamp(EPOCH + 60 * i as i64));
            let mut last_cat = "k1";
            for (j, f) in schema.fields.iter().enumerate() {
                match j % 3 {
                    0 => {
                        last_cat = ["k0", "k1", "k2", "k3"][rng.gen_range(0..4)];
                        r.set(&f.name, last_cat);
                    }
                    1 => {
                        let p_blank = if last_cat == "k0" { 0.8 } else { 0.05 };
                        if !rng.gen_bool(p_blank) {
                            r.set(&f.name, format!("v{}", rng.gen_range(0..1000)));
                        }
                    }
                    _ => {
                        if !rng.gen_bool(0.1) {
                            r.set(&f.name, rng.gen_range(0..500).to_string());
                        }
                    }
                }
            }
            r
        })
        .collect();
    Dataset::new(schema, instances).expect("rows use schema fields")
}
