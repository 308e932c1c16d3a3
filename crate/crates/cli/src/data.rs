//! CSV ingestion and design-matrix construction.
//!
//! Data files are RFC-4180 CSV with a header row. The response column must
//! hold non-negative integers (`3` and `3.0` are both accepted). Covariate
//! terms are written as
//!
//! * `name` — the column as is;
//! * `name^2` — its square;
//! * `name==value` — an indicator, 1 where the cell equals `value`.
//!
//! The design matrix carries an `(Intercept)` column first unless the config
//! turns it off; columns are named after their terms.

use std::collections::BTreeMap;
use std::path::Path;

use cmpglm::glm::Dataset;
use nalgebra::{DMatrix, DVector};

use crate::config::DataSpec;
use crate::error::{CliError, Result};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Column(String),
    Square(String),
    Indicator { column: String, level: String },
}

impl Term {
    pub fn parse(text: &str) -> Result<Self> {
        let text = text.trim();
        let term = if let Some((column, level)) = text.split_once("==") {
            Term::Indicator {
                column: column.trim().to_string(),
                level: level.trim().to_string(),
            }
        } else if let Some(column) = text.strip_suffix("^2") {
            Term::Square(column.trim().to_string())
        } else {
            Term::Column(text.to_string())
        };
        if term.column().is_empty() {
            return Err(CliError::Config(format!("malformed term `{text}`")));
        }
        Ok(term)
    }

    /// Source column.
    pub fn column(&self) -> &str {
        match self {
            Term::Column(c) | Term::Square(c) | Term::Indicator { column: c, .. } => c,
        }
    }

    /// Design-matrix column name.
    pub fn name(&self) -> String {
        match self {
            Term::Column(c) => c.clone(),
            Term::Square(c) => format!("{c}^2"),
            Term::Indicator { column, level } => format!("{column}=={level}"),
        }
    }

    fn indicator_matches(level: &str, cell: &str) -> bool {
        let cell = cell.trim();
        if cell == level {
            return true;
        }
        matches!((level.parse::<f64>(), cell.parse::<f64>()), (Ok(a), Ok(b)) if a == b)
    }

    /// Value of the term for one raw cell; `None` when a numeric cell is not a number.
    fn evaluate(&self, cell: &str) -> Option<f64> {
        match self {
            Term::Indicator { level, .. } => Some(if Self::indicator_matches(level, cell) { 1.0 } else { 0.0 }),
            Term::Column(_) => parse_number(cell),
            Term::Square(_) => parse_number(cell).map(|v| v * v),
        }
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

pub fn parse_terms(terms: &[String]) -> Result<Vec<Term>> {
    terms.iter().map(|t| Term::parse(t)).collect()
}

/// Design column names for a data spec.
pub fn design_names(spec: &DataSpec) -> Result<Vec<String>> {
    let mut names = Vec::with_capacity(spec.terms.len() + 1);
    if spec.intercept {
        names.push(INTERCEPT.to_string());
    }
    names.extend(parse_terms(&spec.terms)?.iter().map(Term::name));
    Ok(names)
}

/// One design row from raw covariate values, for prediction.
pub fn design_row(spec: &DataSpec, values: &BTreeMap<String, f64>) -> Result<DVector<f64>> {
    let terms = parse_terms(&spec.terms)?;
    let mut row = Vec::with_capacity(terms.len() + 1);
    if spec.intercept {
        row.push(1.0);
    }
    for term in &terms {
        let v = *values
            .get(term.column())
            .ok_or_else(|| CliError::Config(format!("predict.values has no entry for `{}`", term.column())))?;
        row.push(term.evaluate(&v.to_string()).expect("finite value evaluates"));
    }
    Ok(DVector::from_vec(row))
}

fn parse_count(path: &Path, row: usize, cell: &str) -> Result<u64> {
    let trimmed = cell.trim();
    let value: f64 = trimmed.parse().map_err(|_| CliError::NonIntegerResponse {
        path: path.to_path_buf(),
        row,
        value: cell.to_string(),
    })?;
    if !value.is_finite() || value.fract() != 0.0 {
        return Err(CliError::NonIntegerResponse {
            path: path.to_path_buf(),
            row,
            value: cell.to_string(),
        });
    }
    if value < 0.0 {
        return Err(CliError::NegativeCount {
            path: path.to_path_buf(),
            row,
            value: cell.to_string(),
        });
    }
    if value > u64::MAX as f64 {
        return Err(CliError::NonIntegerResponse {
            path: path.to_path_buf(),
            row,
            value: cell.to_string(),
        });
    }
    Ok(value as u64)
}

/// Read a CSV file into a validated [`Dataset`]. Rows are numbered from 1,
/// not counting the header.
pub fn load_csv(spec: &DataSpec) -> Result<Dataset> {
    let path = spec.path.as_path();
    let schema = |message: String| CliError::Schema {
        path: path.to_path_buf(),
        message,
    };
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(bytes.as_slice());
    let header = reader.headers().map_err(|e| schema(e.to_string()))?.clone();
    if header.is_empty() || header.iter().all(|h| h.trim().is_empty()) {
        return Err(schema("missing header row".into()));
    }
    let find = |column: &str| {
        header
            .iter()
            .position(|h| h.trim() == column)
            .ok_or_else(|| CliError::MissingColumn {
                path: path.to_path_buf(),
                column: column.to_string(),
            })
    };
    let response = find(&spec.response)?;
    let terms = parse_terms(&spec.terms)?;
    let sources = terms.iter().map(|t| find(t.column())).collect::<Result<Vec<_>>>()?;
    let names = design_names(spec)?;

    let mut y = Vec::new();
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = record.map_err(|e| schema(e.to_string()))?;
        y.push(parse_count(path, row, &record[response])?);
        if spec.intercept {
            values.push(1.0);
        }
        for (term, &src) in terms.iter().zip(&sources) {
            let cell = &record[src];
            let v = term.evaluate(cell).ok_or_else(|| CliError::NonNumeric {
                path: path.to_path_buf(),
                row,
                column: term.column().to_string(),
                value: cell.to_string(),
            })?;
            values.push(v);
        }
    }
    if y.is_empty() {
        return Err(schema("no data rows".into()));
    }
    let x = DMatrix::from_row_slice(y.len(), names.len(), &values);
    Dataset::new(y, x, names).map_err(|e| match e {
        cmpglm::Error::RankDeficient { rank, p } => CliError::RankDeficient { rank, p },
        other => CliError::Model(other),
    })
}
