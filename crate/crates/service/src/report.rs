//! Per-run reports: metric table, explanation, a heat grid and failure pages.

use std::collections::BTreeMap;

use probekit_core::catalog::ids;
use probekit_core::model::{
    MetricVerdict, PropertyDefinition, Run, RunState, StatusSnapshot, TestCase, TestResult, Verdict,
};
use probekit_core::repo::Repository;
use probekit_core::testers::timeseries::case_delta_r;
use probekit_core::Sample;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ServiceResult;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricLine {
    pub name: String,
    #[serde(with = "probekit_core::float_repr")]
    pub value: f64,
    pub verdict: MetricVerdict,
    pub recommendation: String,
    pub description: String,
}

/// Row-major grid of shares in `[0, 1]`; `None` marks cells without data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatGrid {
    pub title: String,
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub run_id: String,
    pub property_id: String,
    pub state: RunState,
    pub status: StatusSnapshot,
    pub metrics: Vec<MetricLine>,
    pub explanation: String,
    pub grid: Option<HeatGrid>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureItem {
    pub test_case_id: String,
    pub samples: Vec<Value>,
    pub role_tags: Vec<String>,
    pub reference: Value,
    pub predictions: Vec<String>,
    pub detail: String,
    /// Columns whose values differ between the first two row samples.
    pub differing_columns: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailurePage {
    pub run_id: String,
    pub total: usize,
    pub offset: usize,
    pub items: Vec<FailureItem>,
}

/// Counts `(row, column)` pairs and normalizes each row to shares.
pub fn share_grid(title: &str, pairs: impl IntoIterator<Item = (String, String)>) -> HeatGrid {
    let mut counts: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut columns: Vec<String> = Vec::new();
    for (r, c) in pairs {
        if !columns.contains(&c) {
            columns.push(c.clone());
        }
        *counts.entry(r).or_default().entry(c).or_default() += 1;
    }
    columns.sort();
    let rows: Vec<String> = counts.keys().cloned().collect();
    let values = counts
        .values()
        .map(|row| {
            let total: usize = row.values().sum();
            columns
                .iter()
                .map(|c| Some(row.get(c).copied().unwrap_or(0) as f64 / total as f64))
                .collect()
        })
        .collect();
    HeatGrid {
        title: title.to_string(),
        rows,
        columns,
        values,
    }
}

fn text_of(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn label_grid(property_id: &str, cases: &BTreeMap<&str, &TestCase>, results: &[TestResult]) -> Option<HeatGrid> {
    let mut pairs = Vec::new();
    let title = match property_id {
        ids::GROUP_DISCRIMINATION => "group x predicted label",
        ids::INDIVIDUAL_DISCRIMINATION => "protected value x predicted label",
        ids::CORRECTNESS => "gold label x predicted label",
        _ => "original prediction x transformed prediction",
    };
    for r in results {
        let Some(case) = cases.get(r.test_case_id.as_str()) else {
            continue;
        };
        if r.predictions.len() != case.samples.len() {
            continue;
        }
        let labels = r.predictions.iter().map(|p| p.label.clone());
        match property_id {
            ids::GROUP_DISCRIMINATION => pairs.extend(case.role_tags.iter().cloned().zip(labels)),
            ids::INDIVIDUAL_DISCRIMINATION => {
                let values = [
                    case.reference.get("original_value"),
                    case.reference.get("transformed_value"),
                ];
                for (v, label) in values.into_iter().zip(labels) {
                    if let Some(v) = v {
                        pairs.push((text_of(v), label));
                    }
                }
            }
            ids::CORRECTNESS => {
                if let (Some(gold), Some(p)) = (case.reference.get("gold"), r.predictions.first()) {
                    pairs.push((text_of(gold), p.label.clone()));
                }
            }
            _ => {
                if let [a, b] = r.predictions.as_slice() {
                    pairs.push((a.label.clone(), b.label.clone()));
                }
            }
        }
    }
    (!pairs.is_empty()).then(|| share_grid(title, pairs))
}

/// Windows x time-series properties of one collection, cells holding |ΔR|
/// divided by the largest |ΔR| in the grid.
fn series_grid(repo: &Repository, run: &Run) -> ServiceResult<Option<HeatGrid>> {
    let collection = repo.collection(&run.run_collection_id)?;
    let series_ids = [ids::SMALL_LINEAR_CHANGE, ids::UNORDERED_DATA, ids::LARGE_LINEAR_CHANGE];
    let mut columns = Vec::new();
    let mut per_property: Vec<Vec<Option<f64>>> = Vec::new();
    for r in repo.runs_of(&collection)? {
        if !series_ids.contains(&r.property_id.as_str()) {
            continue;
        }
        let results: BTreeMap<String, TestResult> =
            repo.results(&r.id).into_iter().map(|x| (x.test_case_id.clone(), x)).collect();
        let deltas = repo
            .cases(&r.id)
            .iter()
            .map(|c| {
                let res = results.get(&c.id)?;
                if res.verdict == Verdict::Error {
                    return None;
                }
                let outcomes: Vec<_> = res.predictions.iter().cloned().map(Ok).collect();
                case_delta_r(c, &outcomes).ok().map(f64::abs)
            })
            .collect();
        columns.push(r.property_id.clone());
        per_property.push(deltas);
    }
    let windows = per_property.iter().map(Vec::len).max().unwrap_or(0);
    if windows == 0 {
        return Ok(None);
    }
    let peak = per_property
        .iter()
        .flatten()
        .flatten()
        .copied()
        .filter(|d| d.is_finite())
        .fold(0.0, f64::max);
    let values = (0..windows)
        .map(|w| {
            per_property
                .iter()
                .map(|col| {
                    let d = col.get(w).copied().flatten()?;
                    Some(if peak > 0.0 { (d / peak).min(1.0) } else { 0.0 })
                })
                .collect()
        })
        .collect();
    Ok(Some(HeatGrid {
        title: "window x property, normalized |delta R|".into(),
        rows: (0..windows).map(|w| format!("window {w}")).collect(),
        columns,
        values,
    }))
}

fn explanation(def: &PropertyDefinition, run: &Run, status: &StatusSnapshot) -> String {
    let mut text = format!(
        "{} {} of {} cases executed: {} passed, {} failed, {} errored.",
        def.description, status.executed, status.generated, status.passed, status.failed, status.errored
    );
    for (name, m) in &run.run_metrics {
        if m.verdict != MetricVerdict::Informational {
            text.push_str(&format!(" {name} verdict: {:?}.", m.verdict).to_lowercase());
        }
    }
    text
}

pub fn metric_report(repo: &Repository, run_id: &str) -> ServiceResult<MetricReport> {
    let run = repo.run(run_id)?;
    let def = repo.property(&run.property_id)?;
    let status = repo.compute_status_snapshot(run_id)?;
    let metrics = def
        .metric_defs
        .iter()
        .filter_map(|m| {
            let value = run.run_metrics.get(&m.name)?;
            Some(MetricLine {
                name: m.name.clone(),
                value: value.value,
                verdict: value.verdict,
                recommendation: value.recommendation.clone(),
                description: m.description.clone(),
            })
        })
        .collect();
    let grid = if def.modality == probekit_core::model::Modality::Timeseries {
        series_grid(repo, &run)?
    } else {
        let cases = repo.cases(run_id);
        let by_id: BTreeMap<&str, &TestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
        label_grid(&run.property_id, &by_id, &repo.results(run_id))
    };
    Ok(MetricReport {
        explanation: explanation(&def, &run, &status),
        run_id: run.id,
        property_id: run.property_id,
        state: run.state,
        status,
        metrics,
        grid,
        warnings: run.warnings,
    })
}

pub fn differing_columns(samples: &[Sample]) -> Vec<String> {
    match (samples.first().and_then(Sample::as_row), samples.get(1).and_then(Sample::as_row)) {
        (Some(a), Some(b)) => {
            let mut names: Vec<String> = a
                .keys()
                .chain(b.keys())
                .filter(|k| a.get(*k) != b.get(*k))
                .cloned()
                .collect();
            names.sort();
            names.dedup();
            names
        }
        _ => Vec::new(),
    }
}

pub fn failure_page(repo: &Repository, run_id: &str, offset: usize, limit: usize) -> ServiceResult<FailurePage> {
    let (total, items) = repo.failures(run_id, offset, limit)?;
    Ok(FailurePage {
        run_id: run_id.to_string(),
        total,
        offset,
        items: items
            .into_iter()
            .map(|(case, result)| FailureItem {
                differing_columns: differing_columns(&case.samples),
                test_case_id: case.id,
                samples: case.samples.iter().map(Sample::to_json).collect(),
                role_tags: case.role_tags,
                reference: case.reference,
                predictions: result.predictions.into_iter().map(|p| p.label).collect(),
                detail: result.detail,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn shares_sum_to_one_per_row() {
        let pairs = [("a", "x"), ("a", "y"), ("a", "y"), ("b", "x")]
            .map(|(r, c)| (r.to_string(), c.to_string()));
        let g = share_grid("t", pairs);
        assert_eq!(g.rows, ["a", "b"]);
        assert_eq!(g.columns, ["x", "y"]);
        assert_eq!(g.values[0], [Some(1.0 / 3.0), Some(2.0 / 3.0)]);
        assert_eq!(g.values[1], [Some(1.0), Some(0.0)]);
    }

    #[test]
    fn differing_columns_of_rows() {
        let a = Sample::Row(json!({"g": "A", "x": 1.0, "y": 2}).as_object().unwrap().clone());
        let b = Sample::Row(json!({"g": "B", "x": 1.0, "y": 3}).as_object().unwrap().clone());
        assert_eq!(differing_columns(&[a, b]), ["g", "y"]);
        assert!(differing_columns(&[Sample::Text("t".into())]).is_empty());
    }
}
