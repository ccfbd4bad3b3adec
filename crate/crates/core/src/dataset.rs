//! Form schema, historical submissions and the temporal train/tune/test split.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Default name of the CSV column carrying the submission time.
pub const DEFAULT_TIMESTAMP_COLUMN: &str = "submitted_at";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    #[serde(alias = "Textual", alias = "text")]
    Textual,
    #[serde(alias = "Numerical", alias = "numeric", alias = "number")]
    Numerical,
    #[serde(alias = "Categorical", alias = "category")]
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    pub required: bool,
    #[serde(default)]
    pub conditionally_required: bool,
    pub tab_index: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub categories: Vec<String>,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, kind: FieldKind, tab_index: u32) -> Self {
        FieldSpec {
            name: name.into(),
            kind,
            required: false,
            conditionally_required: false,
            tab_index,
            group: None,
            categories: Vec::new(),
        }
    }

    pub fn required(mut self) -> Self {
        self.required = true;
        self
    }

    pub fn conditionally_required(mut self) -> Self {
        self.required = true;
        self.conditionally_required = true;
        self
    }

    pub fn with_categories<I, S>(mut self, labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.categories = labels.into_iter().map(Into::into).collect();
        self
    }

    pub fn in_group(mut self, group: impl Into<String>) -> Self {
        self.group = Some(group.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldGroup {
    pub id: String,
    pub members: Vec<String>,
}

/// A validated data entry form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormSchema {
    pub fields: Vec<FieldSpec>,
    #[serde(default)]
    pub groups: Vec<FieldGroup>,
}

impl FormSchema {
    /// Builds a schema and checks every structural invariant.
    pub fn new(fields: Vec<FieldSpec>, groups: Vec<FieldGroup>) -> Result<Self> {
        let schema = FormSchema { fields, groups };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let schema: FormSchema = serde_json::from_str(s)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::SchemaInvalid(msg));
        if self.fields.is_empty() {
            return invalid("schema has no fields".into());
        }
        let mut names = HashSet::new();
        let mut tabs = HashSet::new();
        for f in &self.fields {
            if f.name.trim().is_empty() {
                return invalid("field with empty name".into());
            }
            if !names.insert(f.name.as_str()) {
                return invalid(format!("duplicate field name `{}`", f.name));
            }
            if !tabs.insert(f.tab_index) {
                return invalid(format!("duplicate tab_index {}", f.tab_index));
            }
            if f.conditionally_required && !f.required {
                return invalid(format!(
                    "`{}` is conditionally required but not required",
                    f.name
                ));
            }
            match (f.kind, f.categories.is_empty()) {
                (FieldKind::Categorical, true) => {
                    return invalid(format!("categorical field `{}` has no categories", f.name))
                }
                (FieldKind::Textual | FieldKind::Numerical, false) => {
                    return invalid(format!(
                        "non-categorical field `{}` lists categories",
                        f.name
                    ))
                }
                _ => {}
            }
        }

        let order: HashMap<&str, usize> = self
            .in_tab_order()
            .into_iter()
            .enumerate()
            .map(|(i, f)| (f.name.as_str(), i))
            .collect();
        let mut group_ids = HashSet::new();
        let mut grouped = HashSet::new();
        for g in &self.groups {
            if !group_ids.insert(g.id.as_str()) {
                return invalid(format!("duplicate group id `{}`", g.id));
            }
            if g.members.is_empty() {
                return invalid(format!("group `{}` is empty", g.id));
            }
            let mut positions = Vec::with_capacity(g.members.len());
            for m in &g.members {
                let Some(&pos) = order.get(m.as_str()) else {
                    return invalid(format!("group `{}` references unknown field `{m}`", g.id));
                };
                if !grouped.insert(m.as_str()) {
                    return invalid(format!("field `{m}` belongs to more than one group"));
                }
                positions.push(pos);
            }
            // members are listed in tab order and occupy a contiguous run
            for w in positions.windows(2) {
                if w[1] != w[0] + 1 {
                    return invalid(format!(
                        "members of group `{}` are not contiguous in tab order",
                        g.id
                    ));
                }
            }
        }
        for f in &self.fields {
            if let Some(gid) = &f.group {
                let listed = self
                    .groups
                    .iter()
                    .any(|g| &g.id == gid && g.members.iter().any(|m| m == &f.name));
                if !listed {
                    return invalid(format!(
                        "field `{}` names group `{gid}` which does not list it",
                        f.name
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.fields.iter().find(|f| f.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.field(name).is_some()
    }

    /// Fields sorted by `tab_index`.
    pub fn in_tab_order(&self) -> Vec<&FieldSpec> {
        let mut v: Vec<&FieldSpec> = self.fields.iter().collect();
        v.sort_by_key(|f| f.tab_index);
        v
    }

    pub fn tab_order_names(&self) -> Vec<String> {
        self.in_tab_order()
            .into_iter()
            .map(|f| f.name.clone())
            .collect()
    }

    pub fn required_fields(&self) -> impl Iterator<Item = &FieldSpec> {
        self.fields.iter().filter(|f| f.required)
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("schema serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub fn load_schema(path: impl AsRef<Path>) -> Result<FormSchema> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    FormSchema::from_json_str(&text)
}

/// Submission time in seconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub i64);

impl Timestamp {
    /// Accepts compact `YYYYMMDDhhmmss`, RFC 3339, `YYYY-MM-DD hh:mm:ss`,
    /// `YYYY-MM-DD`, or a bare integer of epoch seconds.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.len() == 14 && s.bytes().all(|b| b.is_ascii_digit()) {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y%m%d%H%M%S") {
                return Ok(Timestamp(dt.and_utc().timestamp()));
            }
        }
        if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
            return Ok(Timestamp(dt.timestamp()));
        }
        for fmt in ["%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M:%S"] {
            if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
                return Ok(Timestamp(dt.and_utc().timestamp()));
            }
        }
        if let Ok(d) = NaiveDate::parse_from_str(s, "%Y-%m-%d") {
            return Ok(Timestamp(
                d.and_hms_opt(0, 0, 0).unwrap().and_utc().timestamp(),
            ));
        }
        s.parse::<i64>()
            .map(Timestamp)
            .map_err(|_| Error::Parse(format!("unrecognised timestamp `{s}`")))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match DateTime::from_timestamp(self.0, 0) {
            Some(dt) => write!(f, "{}", dt.format("%Y%m%d%H%M%S")),
            None => write!(f, "{}", self.0),
        }
    }
}

/// One historical submission. Absent keys are missing values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawInstance {
    pub values: BTreeMap<String, String>,
    pub submitted_at: Timestamp,
}

impl RawInstance {
    pub fn new(submitted_at: Timestamp) -> Self {
        RawInstance {
            values: BTreeMap::new(),
            submitted_at,
        }
    }

    pub fn with(mut self, field: impl Into<String>, value: impl Into<String>) -> Self {
        self.set(field, value);
        self
    }

    /// Stores a value; empty strings are treated as missing.
    pub fn set(&mut self, field: impl Into<String>, value: impl Into<String>) {
        let value = value.into();
        if value.is_empty() {
            return;
        }
        self.values.insert(field.into(), value);
    }

    pub fn get(&self, field: &str) -> Option<&str> {
        self.values.get(field).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub schema: FormSchema,
    pub instances: Vec<RawInstance>,
}

impl Dataset {
    pub fn new(schema: FormSchema, instances: Vec<RawInstance>) -> Result<Self> {
        for inst in &instances {
            if let Some(k) = inst.values.keys().find(|k| !schema.contains(k)) {
                return Err(Error::UnknownColumn(k.clone()));
            }
        }
        Ok(Dataset { schema, instances })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    fn with_instances(&self, instances: Vec<RawInstance>) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            instances,
        }
    }

    /// Writes the dataset as CSV in tab order with a trailing timestamp column.
    pub fn write_csv<W: std::io::Write>(&self, out: W, timestamp_column: &str) -> Result<()> {
        let names = self.schema.tab_order_names();
        let mut w = csv::Writer::from_writer(out);
        let mut header = names.clone();
        header.push(timestamp_column.to_string());
        w.write_record(&header)?;
        for inst in &self.instances {
            let mut row: Vec<String> = names
                .iter()
                .map(|n| inst.get(n).unwrap_or("").to_string())
                .collect();
            row.push(inst.submitted_at.to_string());
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn load_instances(path: impl AsRef<Path>, schema: &FormSchema) -> Result<Dataset> {
    load_instances_with(path, schema, DEFAULT_TIMESTAMP_COLUMN)
}

pub fn load_instances_with(
    path: impl AsRef<Path>,
    schema: &FormSchema,
    timestamp_column: &str,
) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_instances(file, schema, timestamp_column)
}

/// Parses CSV submissions: header row first, empty cells are missing.
pub fn read_instances<R: std::io::Read>(
    reader: R,
    schema: &FormSchema,
    timestamp_column: &str,
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut ts_idx = None;
    for (i, h) in headers.iter().enumerate() {
        if h == timestamp_column {
            ts_idx = Some(i);
        } else if !schema.contains(h) {
            return Err(Error::UnknownColumn(h.to_string()));
        }
    }
    let ts_idx = ts_idx.ok_or_else(|| Error::MissingTimestamp(timestamp_column.to_string()))?;

    let mut instances = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let ts = record
            .get(ts_idx)
            .ok_or_else(|| Error::Parse(format!("row {}: missing timestamp", line + 2)))?;
        let ts =
            Timestamp::parse(ts).map_err(|e| Error::Parse(format!("row {}: {e}", line + 2)))?;
        let mut inst = RawInstance::new(ts);
        for (i, cell) in record.iter().enumerate() {
            if i != ts_idx {
                inst.set(&headers[i], cell);
            }
        }
        instances.push(inst);
    }
    Ok(Dataset {
        schema: schema.clone(),
        instances,
    })
}

/// Fractions of the data for training, threshold tuning and testing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub tune: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            train: 0.8,
            tune: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.train, self.tune, self.test]
            .iter()
            .all(|r| r.is_finite() && *r > 0.0)
            && (self.train + self.tune + self.test - 1.0).abs() <= 1e-9;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidRatios((self.train, self.tune, self.test)))
        }
    }

    /// Part sizes for `n` instances: floor for train and tune, remainder to test.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        // the epsilon absorbs representation error such as 0.29 * 100 = 28.999..
        let part = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let train = part(self.train).min(n);
        let tune = part(self.tune).min(n - train);
        (train, tune, n - train - tune)
    }
}

/// Orders instances by submission time (stable, so ties keep row order) and
/// cuts them into train/tune/test parts.
pub fn temporal_split(
    dataset: &Dataset,
    ratios: SplitRatios,
) -> Result<(Dataset, Dataset, Dataset)> {
    ratios.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut sorted = dataset.instances.clone();
    sorted.sort_by_key(|i| i.submitted_at);
    let (n_train, n_tune, _) = ratios.sizes(sorted.len());
    let test = sorted.split_off(n_train + n_tune);
    let tune = sorted.split_off(n_train);
    Ok((
        dataset.with_instances(sorted),
        dataset.with_instances(tune),
        dataset.with_instances(test),
    ))
}

/// Maps each grouped field name to its group id.
pub(crate) fn group_of(schema: &FormSchema) -> HashMap<String, String> {
    let mut m = HashMap::new();
    for g in &schema.groups {
        for member in &g.members {
            m.insert(member.clone(), g.id.clone());
        }
    }
    m
}

/// Convenience for tests and fixtures: the set of schema field names.
pub fn field_names(schema: &FormSchema) -> BTreeSet<String> {
    schema.fields.iter().map(|f| f.name.clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig1_schema() -> FormSchema {
        FormSchema::new(
            vec![
                FieldSpec::new("Company name", FieldKind::Textual, 1).required(),
                FieldSpec::new("Monthly revenue", FieldKind::Numerical, 2).required(),
                FieldSpec::new("Company type", FieldKind::Categorical, 3)
                    .required()
                    .with_categories(["Large enterprise", "NPO"]),
                FieldSpec::new("Field of activity", FieldKind::Categorical, 4)
                    .required()
                    .with_categories(["Real estate", "Manufacturing", "Education", "Charity"]),
                FieldSpec::new("Tax ID", FieldKind::Textual, 5).required(),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn five_required_fields() {
        let s = fig1_schema();
        assert_eq!(s.fields.len(), 5);
        assert_eq!(s.required_fields().count(), 5);
    }

    #[test]
    fn single_field_schema_is_valid() {
        let s = FormSchema::from_json_str(
            r#"{"fields":[{"name":"a","kind":"textual","required":false,"tab_index":0}]}"#,
        )
        .unwrap();
        assert_eq!(s.fields.len(), 1);
        assert!(s.groups.is_empty());
    }

    #[test]
    fn rejects_duplicate_names() {
        let err = FormSchema::new(
            vec![
                FieldSpec::new("a", FieldKind::Textual, 0),
                FieldSpec::new("a", FieldKind::Textual, 1),
            ],
            vec![],
        )
        .unwrap_err();
        assert!(matches!(err, Error::SchemaInvalid(_)));
    }

    #[test]
    fn rejects_empty_categories_and_bad_groups() {
        let r = FormSchema::new(vec![FieldSpec::new("c", FieldKind::Categorical, 0)], vec![]);
        assert!(matches!(r, Err(Error::SchemaInvalid(_))));

        let fields = vec![
            FieldSpec::new("a", FieldKind::Textual, 0),
            FieldSpec::new("b", FieldKind::Textual, 1),
            FieldSpec::new("c", FieldKind::Textual, 2),
        ];
        let gap = FieldGroup {
            id: "g".into(),
            members: vec!["a".into(), "c".into()],
        };
        assert!(FormSchema::new(fields.clone(), vec![gap]).is_err());
        let ghost = FieldGroup {
            id: "g".into(),
            members: vec!["zz".into()],
        };
        assert!(FormSchema::new(fields.clone(), vec![ghost]).is_err());
        let ok = FieldGroup {
            id: "g".into(),
            members: vec!["b".into(), "c".into()],
        };
        assert!(FormSchema::new(fields, vec![ok]).is_ok());
    }

    #[test]
    fn conditionally_required_implies_required() {
        let mut f = FieldSpec::new("a", FieldKind::Textual, 0);
        f.conditionally_required = true;
        assert!(FormSchema::new(vec![f], vec![]).is_err());
    }

    #[test]
    fn schema_json_round_trip() {
        let s = fig1_schema();
        assert_eq!(FormSchema::from_json_str(&s.to_json()).unwrap(), s);
    }

    #[test]
    fn loads_fig4_table() {
        let csv = "\
Company name,Monthly revenue,Company type,Field of activity,Tax ID,submitted_at
UCI,20,Large enterprise,Real estate,T190,20180101194321
KDL,21,Large enterprise,Manufacturing,T201,20180101194723
EoP,@,Large enterprise,Manufacturing,T200,20180101194801
JBL,21,NPO,Charity,t211,20180101194837
LBC,21,Large enterprise,Manufacturing,T221,20180101204725
MBC,39,NPO,Education,,20180102132016
";
        let ds = read_instances(csv.as_bytes(), &fig1_schema(), "submitted_at").unwrap();
        assert_eq!(ds.len(), 6);
        assert_eq!(ds.instances[5].get("Tax ID"), None);
        assert_eq!(ds.instances[2].get("Monthly revenue"), Some("@"));
        assert_eq!(ds.instances[0].submitted_at.to_string(), "20180101194321");
    }

    #[test]
    fn empty_body_and_bad_headers() {
        let s = fig1_schema();
        let ds = read_instances("Tax ID,submitted_at\n".as_bytes(), &s, "submitted_at").unwrap();
        assert!(ds.is_empty());
        let e = read_instances("Nope,submitted_at\n".as_bytes(), &s, "submitted_at");
        assert!(matches!(e, Err(Error::UnknownColumn(c)) if c == "Nope"));
        let e = read_instances("Tax ID\nT1\n".as_bytes(), &s, "submitted_at");
        assert!(matches!(e, Err(Error::MissingTimestamp(_))));
    }

    fn numbered(n: usize) -> Dataset {
        let s = fig1_schema();
        let inst = (0..n)
            .map(|i| RawInstance::new(Timestamp((n - i) as i64)).with("Tax ID", i.to_string()))
            .collect();
        Dataset::new(s, inst).unwrap()
    }

    #[test]
    fn split_sizes() {
        let r = SplitRatios::default();
        assert_eq!(r.sizes(10), (8, 1, 1));
        // independent count: floor(0.8 n), floor(0.1 n), rest
        let n = 235_538usize;
        let train = n * 8 / 10;
        let tune = n / 10;
        assert_eq!(r.sizes(n), (train, tune, n - train - tune));
        assert_eq!(r.sizes(n), (188_430, 23_553, 23_555));
    }

    #[test]
    fn split_orders_by_time() {
        let (a, b, c) = temporal_split(&numbered(10), SplitRatios::default()).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let max_a = a.instances.iter().map(|i| i.submitted_at).max().unwrap();
        assert!(max_a <= b.instances[0].submitted_at);
        assert!(b.instances[0].submitted_at <= c.instances[0].submitted_at);
    }

    #[test]
    fn split_errors() {
        let empty = numbered(0);
        assert!(matches!(
            temporal_split(&empty, SplitRatios::default()),
            Err(Error::EmptyDataset)
        ));
        let bad = SplitRatios {
            train: 0.5,
            tune: 0.5,
            test: 0.5,
        };
        assert!(matches!(
            temporal_split(&numbered(3), bad),
            Err(Error::InvalidRatios(_))
        ));
    }

    #[test]
    fn timestamp_formats() {
        let a = Timestamp::parse("20180101194321").unwrap();
        let b = Timestamp::parse("2018-01-01T19:43:21Z").unwrap();
        let c = Timestamp::parse("2018-01-01 19:43:21").unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
        assert_eq!(Timestamp::parse("42").unwrap(), Timestamp(42));
        assert!(Timestamp::parse("yesterday").is_err());
    }
}
