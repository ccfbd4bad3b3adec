use std::collections::BTreeSet;

use crate::error::{Error, Result};

/// Column-oriented table of discrete observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteData {
    names: Vec<String>,
    states: Vec<Vec<String>>,
    columns: Vec<Vec<u32>>,
    rows: usize,
}

impl DiscreteData {
    /// State spaces are the sorted distinct labels of each column.
    pub fn from_rows<S: AsRef<str>>(names: Vec<String>, rows: &[Vec<S>]) -> Result<Self> {
        let states: Vec<Vec<String>> = (0..names.len())
            .map(|c| {
                rows.iter()
                    .filter_map(|r| r.get(c).map(|s| s.as_ref().to_string()))
                    .collect::<BTreeSet<_>>()
                    .into_iter()
                    .collect()
            })
            .collect();
        Self::from_rows_with_states(names, states, rows)
    }

    pub fn from_rows_with_states<S: AsRef<str>>(
        names: Vec<String>,
        states: Vec<Vec<String>>,
        rows: &[Vec<S>],
    ) -> Result<Self> {
        if names.len() != states.len() {
            return Err(Error::InvalidNetwork("one state list per variable".into()));
        }
        let mut columns = vec![Vec::with_capacity(rows.len()); names.len()];
        for row in rows {
            if row.len() != names.len() {
                return Err(Error::LayoutMismatch(names.len(), row.len()));
            }
            for (c, label) in row.iter().enumerate() {
                let label = label.as_ref();
                let s = states[c].iter().position(|s| s == label).ok_or_else(|| {
                    Error::UnknownState {
                        var: names[c].clone(),
                        state: label.to_string(),
                    }
                })?;
                columns[c].push(s as u32);
            }
        }
        Ok(DiscreteData {
            names,
            states,
            columns,
            rows: rows.len(),
        })
    }

    /// Builds directly from state indices (column-major).
    pub fn from_columns(
        names: Vec<String>,
        states: Vec<Vec<String>>,
        columns: Vec<Vec<u32>>,
    ) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if names.len() != states.len() || names.len() != columns.len() {
            return Err(Error::InvalidNetwork(
                "names, states and columns differ in length".into(),
            ));
        }
        for (c, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::LayoutMismatch(rows, col.len()));
            }
            if col.iter().any(|&s| s as usize >= states[c].len()) {
                return Err(Error::InvalidNetwork(format!(
                    "state index out of range in `{}`",
                    names[c]
                )));
            }
        }
        Ok(DiscreteData {
            names,
            states,
            columns,
            rows,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_vars(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn states(&self, var: usize) -> &[String] {
        &self.states[var]
    }

    pub fn cardinality(&self, var: usize) -> usize {
        self.states[var].len()
    }

    pub fn column(&self, var: usize) -> &[u32] {
        &self.columns[var]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}
