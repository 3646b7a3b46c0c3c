//! Long-format longitudinal panel data: one row per subject and time.
//!
//! A record carries the at-risk indicator, the visit indicator, the exposure,
//! a named covariate vector (confounders, monitoring covariates and mediators
//! alike) and, at visits only, the ordinal outcome in `1..=J`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fmt_f64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SubjectId(pub String);

impl fmt::Display for SubjectId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for SubjectId {
    fn from(s: &str) -> Self {
        SubjectId(s.to_owned())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PanelRecord {
    pub subject: SubjectId,
    /// Time since cohort entry.
    pub time: f64,
    pub at_risk: bool,
    pub visit: bool,
    pub exposure: f64,
    pub covariates: Vec<f64>,
    /// Ordinal category in `1..=J`; only present at visits.
    pub outcome: Option<usize>,
}

impl PanelRecord {
    /// True when the record contributes to the outcome model.
    pub fn is_observed_visit(&self) -> bool {
        self.visit && self.outcome.is_some()
    }
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("row {row}, column `{column}`: cannot parse `{value}`")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("row {row}, column `{column}`: missing covariate value")]
    MissingCovariate { row: usize, column: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ordering error: {0}")]
    Ordering(String),
    #[error("consistency error: {0}")]
    Consistency(String),
    #[error("schema error: {0}")]
    Schema(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    /// Times not strictly increasing within a subject, or subject rows not contiguous.
    Ordering,
    /// Outcome without visit, or visit while not at risk.
    Consistency,
    /// Value outside its admissible range.
    Domain,
    /// Covariate vector shape does not match the declared names.
    Schema,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Violation {
    pub kind: ViolationKind,
    /// Zero-based record index, when the violation concerns one record.
    pub record: Option<usize>,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, kind: ViolationKind, record: Option<usize>, message: String) {
        self.violations.push(Violation {
            kind,
            record,
            message,
        });
    }

    fn into_result(self) -> Result<(), PanelError> {
        match self.violations.into_iter().next() {
            None => Ok(()),
            Some(v) => Err(match v.kind {
                ViolationKind::Ordering => PanelError::Ordering(v.message),
                ViolationKind::Consistency => PanelError::Consistency(v.message),
                ViolationKind::Domain => PanelError::Domain(v.message),
                ViolationKind::Schema => PanelError::Schema(v.message),
            }),
        }
    }
}

/// Checks every dataset invariant and lists the violations. Never fails.
pub fn validate_records(
    records: &[PanelRecord],
    n_categories: usize,
    covariate_names: &[String],
) -> ValidationReport {
    let mut report = ValidationReport::default();
    if n_categories < 2 {
        report.push(
            ViolationKind::Schema,
            None,
            format!("need at least 2 outcome categories, got {n_categories}"),
        );
    }
    let mut seen: HashSet<&SubjectId> = HashSet::new();
    let mut prev: Option<&PanelRecord> = None;
    for (i, r) in records.iter().enumerate() {
        if r.covariates.len() != covariate_names.len() {
            report.push(
                ViolationKind::Schema,
                Some(i),
                format!(
                    "record {i} has {} covariates, expected {}",
                    r.covariates.len(),
                    covariate_names.len()
                ),
            );
        }
        if !(r.time.is_finite() && r.time >= 0.0) {
            report.push(
                ViolationKind::Domain,
                Some(i),
                format!("record {i} (subject {}) has invalid time {}", r.subject, r.time),
            );
        }
        if !r.exposure.is_finite() || r.covariates.iter().any(|c| !c.is_finite()) {
            report.push(
                ViolationKind::Domain,
                Some(i),
                format!("record {i} (subject {}) has a non-finite value", r.subject),
            );
        }
        if let Some(y) = r.outcome {
            if y < 1 || y > n_categories {
                report.push(
                    ViolationKind::Domain,
                    Some(i),
                    format!("record {i} outcome {y} outside 1..={n_categories}"),
                );
            }
            if !r.visit {
                report.push(
                    ViolationKind::Consistency,
                    Some(i),
                    format!("record {i} (subject {}) has an outcome but no visit", r.subject),
                );
            }
        }
        if r.visit && !r.at_risk {
            report.push(
                ViolationKind::Consistency,
                Some(i),
                format!("record {i} (subject {}) is a visit while not at risk", r.subject),
            );
        }
        match prev {
            Some(p) if p.subject == r.subject => {
                if !(r.time > p.time) {
                    report.push(
                        ViolationKind::Ordering,
                        Some(i),
                        format!(
                            "subject {}: time {} does not increase after {}",
                            r.subject, r.time, p.time
                        ),
                    );
                }
            }
            _ => {
                if !seen.insert(&r.subject) {
                    report.push(
                        ViolationKind::Ordering,
                        Some(i),
                        format!("subject {} rows are not contiguous", r.subject),
                    );
                }
            }
        }
        prev = Some(r);
    }
    report
}

/// Validated, immutable panel dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PanelDataset {
    records: Vec<PanelRecord>,
    n_categories: usize,
    covariate_names: Vec<String>,
    tau: f64,
}

impl PanelDataset {
    /// Builds a dataset; `tau` defaults to the largest record time.
    pub fn new(
        records: Vec<PanelRecord>,
        n_categories: usize,
        covariate_names: Vec<String>,
    ) -> Result<Self, PanelError> {
        validate_records(&records, n_categories, &covariate_names).into_result()?;
        let tau = records.iter().map(|r| r.time).fold(0.0, f64::max);
        Ok(Self {
            records,
            n_categories,
            covariate_names,
            tau,
        })
    }

    /// Overrides the maximum follow-up time.
    pub fn with_tau(mut self, tau: f64) -> Result<Self, PanelError> {
        let max_time = self.records.iter().map(|r| r.time).fold(0.0, f64::max);
        if !(tau >= max_time) {
            return Err(PanelError::Domain(format!(
                "tau {tau} is smaller than the last record time {max_time}"
            )));
        }
        self.tau = tau;
        Ok(self)
    }

    pub fn records(&self) -> &[PanelRecord] {
        &self.records
    }

    pub fn n_categories(&self) -> usize {
        self.n_categories
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|n| n == name)
    }

    /// Contiguous per-subject record blocks, in dataset order.
    pub fn subjects(&self) -> Vec<&[PanelRecord]> {
        self.records
            .chunk_by(|a, b| a.subject == b.subject)
            .collect()
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects().len()
    }

    /// Re-runs validation (always empty for a constructed dataset).
    pub fn validate(&self) -> ValidationReport {
        validate_records(&self.records, self.n_categories, &self.covariate_names)
    }

    /// Records with a visit and an observed outcome.
    pub fn visit_records(&self) -> PanelDataset {
        PanelDataset {
            records: self
                .records
                .iter()
                .filter(|r| r.is_observed_visit())
                .cloned()
                .collect(),
            n_categories: self.n_categories,
            covariate_names: self.covariate_names.clone(),
            tau: self.tau,
        }
    }

    /// Replaces the exposure by `log2(exposure + 1)`.
    pub fn with_log2_exposure(&self) -> Result<PanelDataset, PanelError> {
        if let Some(r) = self.records.iter().find(|r| r.exposure <= -1.0) {
            return Err(PanelError::Domain(format!(
                "log2 transform needs exposure > -1, subject {} has {}",
                r.subject, r.exposure
            )));
        }
        let mut out = self.clone();
        for r in &mut out.records {
            r.exposure = (r.exposure + 1.0).log2();
        }
        Ok(out)
    }

    /// Builds a dataset from pre-validated parts without re-checking.
    pub(crate) fn from_parts_unchecked(
        records: Vec<PanelRecord>,
        n_categories: usize,
        covariate_names: Vec<String>,
        tau: f64,
    ) -> Self {
        debug_assert!(validate_records(&records, n_categories, &covariate_names).is_valid());
        Self {
            records,
            n_categories,
            covariate_names,
            tau,
        }
    }
}

/// Name that selects the record's exposure in covariate role lists.
pub const EXPOSURE_NAME: &str = "exposure";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Source {
    Exposure,
    Column(usize),
}

/// Resolved list of named covariates, where [`EXPOSURE_NAME`] refers to the
/// exposure field and any other name to a covariate column.
#[derive(Clone, Debug, PartialEq)]
pub struct CovariateSelector {
    names: Vec<String>,
    sources: Vec<Source>,
}

impl CovariateSelector {
    pub fn resolve<S: AsRef<str>>(data: &PanelDataset, names: &[S]) -> Result<Self, PanelError> {
        let mut sources = Vec::with_capacity(names.len());
        for name in names {
            let name = name.as_ref();
            sources.push(if name == EXPOSURE_NAME {
                Source::Exposure
            } else {
                Source::Column(
                    data.covariate_index(name)
                        .ok_or_else(|| PanelError::Schema(format!("unknown covariate `{name}`")))?,
                )
            });
        }
        Ok(Self {
            names: names.iter().map(|n| n.as_ref().to_owned()).collect(),
            sources,
        })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn fill(&self, record: &PanelRecord, out: &mut [f64]) {
        for (o, s) in out.iter_mut().zip(&self.sources) {
            *o = match *s {
                Source::Exposure => record.exposure,
                Source::Column(c) => record.covariates[c],
            };
        }
    }

    pub fn values(&self, record: &PanelRecord) -> Vec<f64> {
        let mut v = vec![0.0; self.len()];
        self.fill(record, &mut v);
        v
    }
}

/// Column-name mapping for [`load_csv`]. Every other column is a covariate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub id: String,
    pub time: String,
    pub at_risk: String,
    pub visit: String,
    pub exposure: String,
    pub outcome: String,
    /// Number of outcome categories; inferred as the largest observed outcome when absent.
    pub n_categories: Option<usize>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id: "id".into(),
            time: "time".into(),
            at_risk: "at_risk".into(),
            visit: "visit".into(),
            exposure: "exposure".into(),
            outcome: "outcome".into(),
            n_categories: None,
        }
    }
}

fn parse_f64(field: &str, row: usize, column: &str) -> Result<f64, PanelError> {
    field.trim().parse::<f64>().map_err(|_| PanelError::Parse {
        row,
        column: column.to_owned(),
        value: field.to_owned(),
    })
}

fn parse_bool(field: &str, row: usize, column: &str) -> Result<bool, PanelError> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        _ => Err(PanelError::Parse {
            row,
            column: column.to_owned(),
            value: field.to_owned(),
        }),
    }
}

/// Loads a long-format CSV file. Rows are numbered from 1 after the header.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<PanelDataset, PanelError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PanelError::MissingColumn(name.to_owned()))
    };
    let id_col = find(&schema.id)?;
    let time_col = find(&schema.time)?;
    let risk_col = find(&schema.at_risk)?;
    let visit_col = find(&schema.visit)?;
    let exposure_col = find(&schema.exposure)?;
    let outcome_col = find(&schema.outcome)?;
    let reserved = [id_col, time_col, risk_col, visit_col, exposure_col, outcome_col];
    let covariate_cols: Vec<usize> = (0..headers.len())
        .filter(|c| !reserved.contains(c))
        .collect();
    let covariate_names: Vec<String> = covariate_cols
        .iter()
        .map(|&c| headers[c].to_owned())
        .collect();

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let outcome_field = row[outcome_col].trim();
        let outcome = if outcome_field.is_empty() {
            None
        } else {
            let v = parse_f64(outcome_field, row_no, &schema.outcome)?;
            if v.fract() != 0.0 || v < 0.0 {
                return Err(PanelError::Domain(format!(
                    "row {row_no}: outcome `{outcome_field}` is not a category number"
                )));
            }
            Some(v as usize)
        };
        let mut covariates = Vec::with_capacity(covariate_cols.len());
        for &c in &covariate_cols {
            if row[c].trim().is_empty() {
                return Err(PanelError::MissingCovariate {
                    row: row_no,
                    column: headers[c].to_owned(),
                });
            }
            covariates.push(parse_f64(&row[c], row_no, &headers[c])?);
        }
        records.push(PanelRecord {
            subject: SubjectId(row[id_col].to_owned()),
            time: parse_f64(&row[time_col], row_no, &schema.time)?,
            at_risk: parse_bool(&row[risk_col], row_no, &schema.at_risk)?,
            visit: parse_bool(&row[visit_col], row_no, &schema.visit)?,
            exposure: parse_f64(&row[exposure_col], row_no, &schema.exposure)?,
            covariates,
            outcome,
        });
    }
    let n_categories = match schema.n_categories {
        Some(j) => j,
        None => records
            .iter()
            .filter_map(|r| r.outcome)
            .max()
            .unwrap_or(0)
            .max(2),
    };
    PanelDataset::new(records, n_categories, covariate_names)
}

/// Writes the dataset with the default column names; floats carry 17
/// significant digits so [`load_csv`] reproduces them exactly.
pub fn write_csv(data: &PanelDataset, path: impl AsRef<Path>) -> Result<(), PanelError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    let schema = CsvSchema::default();
    let mut header = vec![
        schema.id.clone(),
        schema.time.clone(),
        schema.at_risk.clone(),
        schema.visit.clone(),
        schema.exposure.clone(),
        schema.outcome.clone(),
    ];
    header.extend(data.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &data.records {
        let mut row = vec![
            r.subject.0.clone(),
            fmt_f64(r.time),
            u8::from(r.at_risk).to_string(),
            u8::from(r.visit).to_string(),
            fmt_f64(r.exposure),
            r.outcome.map(|y| y.to_string()).unwrap_or_default(),
        ];
        row.extend(r.covariates.iter().map(|&c| fmt_f64(c)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}
