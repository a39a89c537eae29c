//! Built-in property definitions.
//!
//! Everything the UI and orchestrator need to know about a property lives
//! here as data: metrics with their verdict rules and recommendation texts,
//! parameters with defaults and legal ranges, and the columns a failing case
//! exposes.

use std::collections::BTreeMap;

use serde_json::{json, Value};

use crate::model::{
    Direction, MetricDef, MetricVerdict, Modality, ParamType, ParameterDef, PropertyDefinition, ResultColumn,
    VerdictRule,
};

pub mod ids {
    pub const CORRECTNESS: &str = "correctness";
    pub const GROUP_DISCRIMINATION: &str = "group-discrimination";
    pub const INDIVIDUAL_DISCRIMINATION: &str = "individual-discrimination";
    pub const ADVERSARIAL_ROBUSTNESS: &str = "adversarial-robustness";
    pub const TYPO_SENSITIVITY: &str = "typo-sensitivity";
    pub const NOISE_SENSITIVITY: &str = "noise-sensitivity";
    pub const SMALL_LINEAR_CHANGE: &str = "small-linear-change";
    pub const UNORDERED_DATA: &str = "unordered-data";
    pub const LARGE_LINEAR_CHANGE: &str = "large-linear-change";

    pub const ALL: [&str; 9] = [
        CORRECTNESS,
        GROUP_DISCRIMINATION,
        INDIVIDUAL_DISCRIMINATION,
        ADVERSARIAL_ROBUSTNESS,
        TYPO_SENSITIVITY,
        NOISE_SENSITIVITY,
        SMALL_LINEAR_CHANGE,
        UNORDERED_DATA,
        LARGE_LINEAR_CHANGE,
    ];
}

const RETRAIN_ON_FAILURES: &str = "Retrain the model with the failing pairs appended to the training data.";

fn recs(pass: &str, fail: &str, info: &str) -> BTreeMap<MetricVerdict, String> {
    let mut out = BTreeMap::new();
    for (v, text) in [
        (MetricVerdict::Pass, pass),
        (MetricVerdict::Fail, fail),
        (MetricVerdict::Informational, info),
    ] {
        if !text.is_empty() {
            out.insert(v, text.to_string());
        }
    }
    out
}

fn metric(name: &str, description: &str, better: Direction, rule: VerdictRule) -> MetricDef {
    MetricDef {
        name: name.into(),
        description: description.into(),
        better,
        rule,
        recommendations: BTreeMap::new(),
    }
}

fn param(name: &str, value_type: ParamType, default: Value, legal: Option<(f64, f64)>, help: &str) -> ParameterDef {
    ParameterDef {
        name: name.into(),
        value_type,
        default: Some(default),
        legal,
        help: help.into(),
    }
}

fn columns(names: &[(&str, &str)]) -> Vec<ResultColumn> {
    names
        .iter()
        .map(|(n, d)| ResultColumn {
            name: n.to_string(),
            description: d.to_string(),
        })
        .collect()
}

fn flip_rate_metric(what: &str) -> MetricDef {
    MetricDef {
        recommendations: recs(
            "",
            "",
            &format!("A nonzero flip rate means {what} changes predictions. {RETRAIN_ON_FAILURES}"),
        ),
        ..metric(
            "flip_rate",
            "Share of judged pairs whose two predicted labels differ; errored pairs are excluded.",
            Direction::Lower,
            VerdictRule::Informational,
        )
    }
}

fn correctness() -> PropertyDefinition {
    let info = "Inspect the mislabelled rows and add similar examples to the training data.";
    let m = |name: &str, description: &str| MetricDef {
        recommendations: recs("", "", info),
        ..metric(name, description, Direction::Higher, VerdictRule::Informational)
    };
    PropertyDefinition {
        id: ids::CORRECTNESS.into(),
        modality: Modality::Tabular,
        title: "Correctness".into(),
        description: "Predicted label against the gold label of every labelled row.".into(),
        metric_defs: vec![
            m("accuracy", "Correct predictions over all judged rows."),
            m("precision", "Macro-averaged precision over the union of gold and predicted labels."),
            m("recall", "Macro-averaged recall over the union of gold and predicted labels."),
            m("f_score", "Mean of the per-label F1 scores."),
        ],
        parameter_defs: vec![],
        required_data: vec![],
        result_schema: columns(&[("sample", "Input row"), ("gold", "Gold label"), ("predicted", "Model label")]),
    }
}

fn group_discrimination() -> PropertyDefinition {
    PropertyDefinition {
        id: ids::GROUP_DISCRIMINATION.into(),
        modality: Modality::Tabular,
        title: "Group discrimination".into(),
        description: "Favorable-outcome rates of the minority group against everyone else.".into(),
        metric_defs: vec![
            MetricDef {
                recommendations: recs(
                    "Favorable rates of both groups are within the accepted band.",
                    "Rebalance the training data for the protected attributes or apply a bias mitigation step, then retrain.",
                    "",
                ),
                ..metric(
                    "disparate_impact",
                    "Minority favorable rate over majority favorable rate.",
                    Direction::TowardOne,
                    VerdictRule::InRange {
                        parameter: "di_range".into(),
                    },
                )
            },
            metric(
                "demographic_parity",
                "Minority favorable rate minus majority favorable rate.",
                Direction::TowardZero,
                VerdictRule::Informational,
            ),
            metric(
                "minority_rate",
                "Favorable rate of the minority group.",
                Direction::Neutral,
                VerdictRule::Informational,
            ),
            metric(
                "majority_rate",
                "Favorable rate of the majority group.",
                Direction::Neutral,
                VerdictRule::Informational,
            ),
        ],
        parameter_defs: vec![param(
            "di_range",
            ParamType::RealRange,
            json!([0.8, 1.25]),
            Some((0.0, 100.0)),
            "Accepted disparate impact band, bounds inclusive.",
        )],
        required_data: vec![
            "protected_attributes".into(),
            "favorable_label".into(),
            "minority_group".into(),
        ],
        result_schema: columns(&[
            ("group", "minority or majority"),
            ("sample", "Input row"),
            ("predicted", "Model label"),
        ]),
    }
}

fn individual_discrimination() -> PropertyDefinition {
    PropertyDefinition {
        id: ids::INDIVIDUAL_DISCRIMINATION.into(),
        modality: Modality::Tabular,
        title: "Individual discrimination".into(),
        description: "Pairs of rows that differ only in one protected attribute must get the same label.".into(),
        metric_defs: vec![flip_rate_metric("a protected attribute alone")],
        parameter_defs: vec![],
        required_data: vec!["protected_attributes".into()],
        result_schema: columns(&[
            ("original", "Synthetic row"),
            ("transformed", "Row with one protected attribute changed"),
            ("attribute", "Changed attribute"),
        ]),
    }
}

fn adversarial_robustness() -> PropertyDefinition {
    PropertyDefinition {
        id: ids::ADVERSARIAL_ROBUSTNESS.into(),
        modality: Modality::Tabular,
        title: "Adversarial robustness".into(),
        description: "Small perturbations of numeric columns must not change the label.".into(),
        metric_defs: vec![flip_rate_metric("a small numeric perturbation")],
        parameter_defs: vec![
            param(
                "epsilon",
                ParamType::Real,
                json!(0.05),
                Some((1e-9, 0.5)),
                "Perturbation half-width as a fraction of each numeric column's range.",
            ),
            param(
                "neighbors",
                ParamType::Integer,
                json!(4),
                Some((1.0, 1000.0)),
                "Perturbed neighbors per source row.",
            ),
        ],
        required_data: vec![],
        result_schema: columns(&[("original", "Synthetic row"), ("transformed", "Perturbed row")]),
    }
}

fn text_sensitivity(id: &str, title: &str, what: &str, level_help: &str) -> PropertyDefinition {
    PropertyDefinition {
        id: id.into(),
        modality: Modality::Text,
        title: title.into(),
        description: format!("{what} must not change the label."),
        metric_defs: vec![flip_rate_metric(&what.to_lowercase())],
        parameter_defs: vec![param("level", ParamType::Integer, json!(1), Some((1.0, 100.0)), level_help)],
        required_data: vec![],
        result_schema: columns(&[
            ("original", "Corpus sentence"),
            ("transformed", "Perturbed sentence"),
            ("operations", "Applied edits"),
        ]),
    }
}

fn series_property(id: &str, title: &str, description: &str, kind_is_large: bool) -> PropertyDefinition {
    let (name, rule, better, help, pass, fail) = if kind_is_large {
        (
            "beta",
            VerdictRule::AtLeast {
                parameter: "beta".into(),
            },
            Direction::Higher,
            "Minimum relative RMSE increase expected after an out-of-range shift.",
            "Error grows on out-of-range inputs as expected.",
            "The model hides out-of-range inputs, for example by normalizing each window; check its preprocessing.",
        )
    } else {
        (
            "alpha",
            VerdictRule::AtMost {
                parameter: "alpha".into(),
            },
            Direction::Lower,
            "Maximum tolerated relative RMSE increase.",
            "Forecast error is stable under the transformation.",
            "Augment training windows with the transformation applied and retrain.",
        )
    };
    PropertyDefinition {
        id: id.into(),
        modality: Modality::Timeseries,
        title: title.into(),
        description: description.into(),
        metric_defs: vec![
            MetricDef {
                recommendations: recs(pass, fail, ""),
                ..metric(
                    "delta_r",
                    "Mean relative RMSE change, (rmse_transformed - rmse_original) / rmse_original.",
                    better,
                    rule,
                )
            },
            metric(
                "failure_rate",
                "Share of judged windows that failed.",
                Direction::Lower,
                VerdictRule::Informational,
            ),
        ],
        parameter_defs: vec![
            param(name, ParamType::Real, json!(0.10), Some((1e-9, 1e6)), help),
            param("history_length", ParamType::Integer, json!(48), Some((2.0, 1e6)), "Points of history per window."),
            param("horizon_length", ParamType::Integer, json!(12), Some((1.0, 1e6)), "Points to forecast per window."),
            param("stride", ParamType::Integer, json!(12), Some((1.0, 1e6)), "Offset between window starts."),
        ],
        required_data: vec![],
        result_schema: columns(&[
            ("original", "History window"),
            ("transformed", "Transformed history window"),
            ("delta_r", "Relative RMSE change"),
        ]),
    }
}

/// The built-in properties, in display order.
pub fn builtin() -> Vec<PropertyDefinition> {
    vec![
        correctness(),
        group_discrimination(),
        individual_discrimination(),
        adversarial_robustness(),
        text_sensitivity(
            ids::TYPO_SENSITIVITY,
            "Typo sensitivity",
            "Keyboard typos inside words",
            "Number of typo edits per sentence.",
        ),
        text_sensitivity(
            ids::NOISE_SENSITIVITY,
            "Noise sensitivity",
            "Random characters inserted at word boundaries",
            "Number of inserted characters per sentence.",
        ),
        series_property(
            ids::SMALL_LINEAR_CHANGE,
            "Small linear change",
            "Adding a small constant to history and actuals must not increase forecast error.",
            false,
        ),
        series_property(
            ids::UNORDERED_DATA,
            "Unordered data",
            "Presenting the history records in a shuffled order must not increase forecast error.",
            false,
        ),
        series_property(
            ids::LARGE_LINEAR_CHANGE,
            "Large linear change",
            "Shifting the window far outside the training range must increase forecast error.",
            true,
        ),
    ]
}

pub fn builtin_property(id: &str) -> Option<PropertyDefinition> {
    builtin().into_iter().find(|p| p.id == id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn catalog_is_valid_and_complete() {
        let all = builtin();
        assert_eq!(all.len(), ids::ALL.len());
        for (def, id) in all.iter().zip(ids::ALL) {
            assert_eq!(def.id, id);
            def.validate().unwrap();
            assert!(crate::testers::tester_for(id).is_some());
            assert_eq!(crate::testers::tester_for(id).unwrap().property_id(), id);
        }
    }

    #[test]
    fn di_range_default() {
        let g = builtin_property(ids::GROUP_DISCRIMINATION).unwrap();
        assert_eq!(g.parameter("di_range").unwrap().default, Some(json!([0.8, 1.25])));
    }
}
