//! Entities of the testing data model.
//!
//! A project owns test subjects; a subject has one model and its data; run
//! configurations select properties and bind their parameters; every
//! execution of a configuration yields a run collection with one run per
//! property; runs own test cases and their results.

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{CoreError, Result};
use crate::sample::{Prediction, Sample};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub id: String,
    pub name: String,
    #[serde(default)]
    pub test_subjects: Vec<String>,
    pub created_at: DateTime<Utc>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Modality {
    Tabular,
    Text,
    Timeseries,
}

impl Modality {
    pub fn default_format(self) -> DataFormat {
        match self {
            Modality::Tabular => DataFormat::CsvTable,
            Modality::Text => DataFormat::TextLines,
            Modality::Timeseries => DataFormat::TimeseriesCsv,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestSubject {
    pub id: String,
    pub project_id: String,
    pub modality: Modality,
    pub model_id: String,
    pub data_refs: Vec<DataRef>,
    #[serde(default)]
    pub data_properties: Map<String, Value>,
}

impl TestSubject {
    pub fn data(&self, kind: DataKind) -> Option<&DataRef> {
        self.data_refs.iter().find(|d| d.kind == kind)
    }

    /// Column names sniffed at registration.
    pub fn columns(&self) -> Vec<String> {
        self.data_properties
            .get("columns")
            .and_then(Value::as_array)
            .map(|cols| {
                cols.iter()
                    .filter_map(|c| c.as_str().map(str::to_string))
                    .collect()
            })
            .unwrap_or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    Training,
    LabeledEval,
    ResultVisualization,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DataFormat {
    CsvTable,
    TextLines,
    TimeseriesCsv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataRef {
    pub id: String,
    pub kind: DataKind,
    pub format: DataFormat,
    /// Path relative to the store root.
    pub location: String,
    pub row_count: u64,
}

/// The black-box contract for a model API. Header values may hold secrets
/// and are never shown by `Debug`.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    #[serde(default)]
    pub id: String,
    pub name: String,
    pub endpoint_url: String,
    #[serde(default)]
    pub http_method: HttpMethod,
    #[serde(default)]
    pub headers: BTreeMap<String, String>,
    pub request_template: String,
    pub label_path: String,
    #[serde(default)]
    pub confidence_path: Option<String>,
    #[serde(default = "default_batch_limit")]
    pub batch_limit: usize,
}

fn default_batch_limit() -> usize {
    32
}

pub const SAMPLES_PLACEHOLDER: &str = "{{SAMPLES}}";
pub const SAMPLE_PLACEHOLDER: &str = "{{SAMPLE}}";

impl ModelSpec {
    /// Checks the template, label path and batch limit.
    pub fn validate(&self) -> Result<()> {
        let many = self.request_template.matches(SAMPLES_PLACEHOLDER).count();
        let single = self.request_template.matches(SAMPLE_PLACEHOLDER).count();
        if many + single != 1 {
            return Err(CoreError::invalid(
                "request template must contain exactly one placeholder ({{SAMPLES}} or {{SAMPLE}})",
            ));
        }
        if self.label_path.trim().is_empty() {
            return Err(CoreError::invalid("label_path must not be empty"));
        }
        if self.batch_limit == 0 {
            return Err(CoreError::invalid("batch_limit must be at least 1"));
        }
        if self.name.trim().is_empty() {
            return Err(CoreError::invalid("model name must not be empty"));
        }
        Ok(())
    }

    /// Single-row templates send one sample per request.
    pub fn is_single_row(&self) -> bool {
        self.request_template.contains(SAMPLE_PLACEHOLDER)
    }

    pub fn effective_batch_limit(&self) -> usize {
        if self.is_single_row() {
            1
        } else {
            self.batch_limit.max(1)
        }
    }
}

impl fmt::Debug for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ModelSpec")
            .field("id", &self.id)
            .field("name", &self.name)
            .field("endpoint_url", &self.endpoint_url)
            .field("http_method", &self.http_method)
            .field("headers", &format_args!("<{} redacted>", self.headers.len()))
            .field("label_path", &self.label_path)
            .field("confidence_path", &self.confidence_path)
            .field("batch_limit", &self.batch_limit)
            .finish()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HttpMethod {
    #[default]
    Post,
    Get,
}

/// Which way a metric is "better" when comparing runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    Higher,
    Lower,
    /// Closest to one (disparate impact).
    TowardOne,
    /// Closest to zero (demographic parity).
    TowardZero,
    Neutral,
}

/// Data-driven mapping from a metric value to a verdict; thresholds are
/// named parameters of the owning property.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum VerdictRule {
    Informational,
    /// Pass iff the value lies in the closed interval held by `parameter`.
    InRange { parameter: String },
    /// Pass iff value <= parameter.
    AtMost { parameter: String },
    /// Pass iff value >= parameter.
    AtLeast { parameter: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricVerdict {
    Pass,
    Fail,
    Informational,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDef {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub better: Direction,
    pub rule: VerdictRule,
    /// Recommendation text per verdict.
    #[serde(default)]
    pub recommendations: BTreeMap<MetricVerdict, String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ParamType {
    Real,
    Integer,
    /// `[lo, hi]`
    RealRange,
    Text,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterDef {
    pub name: String,
    pub value_type: ParamType,
    /// Absent default means the parameter is mandatory.
    #[serde(default)]
    pub default: Option<Value>,
    /// Legal closed range for numeric parameters (both ends of a range).
    #[serde(default)]
    pub legal: Option<(f64, f64)>,
    #[serde(default)]
    pub help: String,
}

impl ParameterDef {
    pub fn is_mandatory(&self) -> bool {
        self.default.is_none()
    }

    /// Checks that `value` has the declared type and lies in the legal range.
    pub fn check(&self, value: &Value) -> Result<()> {
        let in_range = |x: f64| match self.legal {
            Some((lo, hi)) => x >= lo && x <= hi,
            None => true,
        };
        let bad = |what: &str| {
            Err(CoreError::invalid(format!(
                "parameter {}: {what} (got {value})",
                self.name
            )))
        };
        match self.value_type {
            ParamType::Real => match value.as_f64() {
                Some(x) if in_range(x) => Ok(()),
                Some(_) => bad("outside legal range"),
                None => bad("expected a number"),
            },
            ParamType::Integer => match value.as_i64() {
                Some(x) if in_range(x as f64) => Ok(()),
                Some(_) => bad("outside legal range"),
                None => bad("expected an integer"),
            },
            ParamType::RealRange => match value.as_array().map(|a| a.as_slice()) {
                Some([lo, hi]) => match (lo.as_f64(), hi.as_f64()) {
                    (Some(lo), Some(hi)) if lo < hi && in_range(lo) && in_range(hi) => Ok(()),
                    (Some(_), Some(_)) => bad("expected lo < hi inside the legal range"),
                    _ => bad("expected two numbers"),
                },
                _ => bad("expected [lo, hi]"),
            },
            ParamType::Text => match value {
                Value::String(_) => Ok(()),
                _ => bad("expected text"),
            },
        }
    }
}

/// One column a failing test case exposes; drives the result tables in the UI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultColumn {
    pub name: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyDefinition {
    pub id: String,
    pub modality: Modality,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    pub metric_defs: Vec<MetricDef>,
    #[serde(default)]
    pub parameter_defs: Vec<ParameterDef>,
    /// Keys of the configuration's data-specific inputs this property needs.
    #[serde(default)]
    pub required_data: Vec<String>,
    #[serde(default)]
    pub result_schema: Vec<ResultColumn>,
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic())
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

impl PropertyDefinition {
    pub fn validate(&self) -> Result<()> {
        if !is_identifier(&self.id) {
            return Err(CoreError::invalid(format!("invalid property id {:?}", self.id)));
        }
        if self.metric_defs.is_empty() {
            return Err(CoreError::invalid("property needs at least one metric"));
        }
        let mut seen = std::collections::BTreeSet::new();
        for m in &self.metric_defs {
            if !is_identifier(&m.name) {
                return Err(CoreError::invalid(format!("invalid metric name {:?}", m.name)));
            }
            if !seen.insert(m.name.as_str()) {
                return Err(CoreError::invalid(format!("duplicate metric {:?}", m.name)));
            }
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.parameter_defs {
            if !is_identifier(&p.name) {
                return Err(CoreError::invalid(format!("invalid parameter name {:?}", p.name)));
            }
            if !seen.insert(p.name.as_str()) {
                return Err(CoreError::invalid(format!("duplicate parameter {:?}", p.name)));
            }
            if let Some(default) = &p.default {
                p.check(default)?;
            }
        }
        for m in &self.metric_defs {
            let referenced = match &m.rule {
                VerdictRule::Informational => None,
                VerdictRule::InRange { parameter }
                | VerdictRule::AtMost { parameter }
                | VerdictRule::AtLeast { parameter } => Some(parameter),
            };
            if let Some(name) = referenced {
                if self.parameter(name).is_none() {
                    return Err(CoreError::invalid(format!(
                        "metric {} references unknown parameter {name}",
                        m.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parameter(&self, name: &str) -> Option<&ParameterDef> {
        self.parameter_defs.iter().find(|p| p.name == name)
    }

    pub fn metric(&self, name: &str) -> Option<&MetricDef> {
        self.metric_defs.iter().find(|m| m.name == name)
    }

    /// Bound parameter values: explicit ones over declared defaults.
    pub fn resolve_parameters(
        &self,
        explicit: Option<&BTreeMap<String, Value>>,
    ) -> Result<BTreeMap<String, Value>> {
        let mut out = BTreeMap::new();
        for def in &self.parameter_defs {
            let value = explicit
                .and_then(|m| m.get(&def.name))
                .or(def.default.as_ref())
                .ok_or_else(|| {
                    CoreError::invalid(format!(
                        "property {}: mandatory parameter {} is not bound",
                        self.id, def.name
                    ))
                })?;
            def.check(value)?;
            out.insert(def.name.clone(), value.clone());
        }
        if let Some(explicit) = explicit {
            if let Some(unknown) = explicit.keys().find(|k| self.parameter(k).is_none()) {
                return Err(CoreError::invalid(format!(
                    "property {}: unknown parameter {unknown}",
                    self.id
                )));
            }
        }
        Ok(out)
    }

    /// Applies a metric's verdict rule with the bound parameters.
    pub fn verdict_for(
        &self,
        metric: &str,
        value: f64,
        params: &BTreeMap<String, Value>,
    ) -> MetricVerdict {
        let Some(def) = self.metric(metric) else {
            return MetricVerdict::Informational;
        };
        if value.is_nan() {
            return MetricVerdict::Informational;
        }
        let scalar = |name: &str| params.get(name).and_then(Value::as_f64);
        let pass = match &def.rule {
            VerdictRule::Informational => return MetricVerdict::Informational,
            VerdictRule::InRange { parameter } => {
                match params.get(parameter).and_then(Value::as_array).map(|a| a.as_slice()) {
                    Some([lo, hi]) => match (lo.as_f64(), hi.as_f64()) {
                        (Some(lo), Some(hi)) => value >= lo && value <= hi,
                        _ => return MetricVerdict::Informational,
                    },
                    _ => return MetricVerdict::Informational,
                }
            }
            VerdictRule::AtMost { parameter } => match scalar(parameter) {
                Some(limit) => value <= limit,
                None => return MetricVerdict::Informational,
            },
            VerdictRule::AtLeast { parameter } => match scalar(parameter) {
                Some(limit) => value >= limit,
                None => return MetricVerdict::Informational,
            },
        };
        if pass {
            MetricVerdict::Pass
        } else {
            MetricVerdict::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfiguration {
    pub id: String,
    pub project_id: String,
    pub test_subject_id: String,
    pub selected_properties: Vec<String>,
    /// property id -> parameter name -> value
    #[serde(default)]
    pub parameter_values: BTreeMap<String, BTreeMap<String, Value>>,
    /// Inputs shared across properties: protected attributes, favorable
    /// label, minority-group expression, UDC document, label column.
    #[serde(default)]
    pub data_specific: Map<String, Value>,
    pub generation_limit: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollectionState {
    Pending,
    Running,
    Completed,
    Cancelled,
    Errored,
}

impl CollectionState {
    pub fn is_terminal(self) -> bool {
        matches!(
            self,
            CollectionState::Completed | CollectionState::Cancelled | CollectionState::Errored
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunCollection {
    pub id: String,
    pub project_id: String,
    pub run_configuration_id: String,
    pub started_at: DateTime<Utc>,
    #[serde(default)]
    pub finished_at: Option<DateTime<Utc>>,
    pub runs: Vec<String>,
    pub state: CollectionState,
    #[serde(default)]
    pub idempotency_key: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunState {
    Pending,
    Running,
    Completed,
    Cancelled,
    Errored,
}

impl RunState {
    pub fn is_terminal(self) -> bool {
        matches!(self, RunState::Completed | RunState::Cancelled | RunState::Errored)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatusSnapshot {
    pub generated: u64,
    pub executed: u64,
    pub passed: u64,
    pub failed: u64,
    pub errored: u64,
}

impl StatusSnapshot {
    /// `executed = passed + failed + errored` and `executed <= generated`.
    pub fn is_consistent(&self) -> bool {
        self.executed == self.passed + self.failed + self.errored && self.executed <= self.generated
    }

    pub fn record(&mut self, verdict: Verdict) {
        self.executed += 1;
        match verdict {
            Verdict::Pass => self.passed += 1,
            Verdict::Fail => self.failed += 1,
            Verdict::Error => self.errored += 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetric {
    #[serde(with = "crate::float_repr")]
    pub value: f64,
    pub verdict: MetricVerdict,
    #[serde(default)]
    pub recommendation: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Run {
    pub id: String,
    pub project_id: String,
    pub run_collection_id: String,
    pub property_id: String,
    pub state: RunState,
    #[serde(default)]
    pub status: StatusSnapshot,
    #[serde(default)]
    pub run_metrics: BTreeMap<String, RunMetric>,
    /// Bound parameter values the run executed with.
    #[serde(default)]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default)]
    pub error: Option<String>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
    Error,
}

pub const ROLE_ORIGINAL: &str = "original";
pub const ROLE_TRANSFORMED: &str = "transformed";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestCase {
    pub id: String,
    pub run_id: String,
    pub samples: Vec<Sample>,
    /// Property-specific reference values (gold label, group tags, horizon actuals...).
    #[serde(default)]
    pub reference: Value,
    pub role_tags: Vec<String>,
}

impl TestCase {
    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(CoreError::invalid("test case needs at least one sample"));
        }
        if self.role_tags.len() != self.samples.len() {
            return Err(CoreError::invalid("role_tags length must equal samples length"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub test_case_id: String,
    pub run_id: String,
    #[serde(default)]
    pub predictions: Vec<Prediction>,
    pub verdict: Verdict,
    #[serde(default)]
    pub detail: String,
}
