//! Property testers.
//!
//! Every tester follows the same pipeline, driven by the orchestrator:
//! generate test cases from the subject data, obtain predictions for every
//! sample, judge each case, then compute run metrics over all stored cases
//! and results. Judging and metrics never call the model, so stored cases
//! can be re-evaluated and metrics recomputed at any time.

pub mod expr;
pub mod metrics;
pub mod tabular;
pub mod text;
pub mod timeseries;

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::data::{RawTable, TextRow};
use crate::error::{CoreError, Result};
use crate::model::{TestCase, TestResult, Verdict, ROLE_ORIGINAL, ROLE_TRANSFORMED};
use crate::sample::{Outcome, Predictor, Sample, SeriesPoint};

/// A test case before it is given an id and persisted.
#[derive(Clone, Debug, PartialEq)]
pub struct CaseDraft {
    pub samples: Vec<Sample>,
    pub reference: Value,
    pub role_tags: Vec<String>,
}

impl CaseDraft {
    pub fn pair(original: Sample, transformed: Sample, reference: Value) -> Self {
        CaseDraft {
            samples: vec![original, transformed],
            reference,
            role_tags: vec![ROLE_ORIGINAL.into(), ROLE_TRANSFORMED.into()],
        }
    }

    pub fn into_case(self, id: String, run_id: String) -> TestCase {
        TestCase {
            id,
            run_id,
            samples: self.samples,
            reference: self.reference,
            role_tags: self.role_tags,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Generated {
    pub cases: Vec<CaseDraft>,
    /// Source samples consumed (capped by the generation limit).
    pub source_count: usize,
    pub notes: Vec<String>,
    /// Set when the property does not apply to this subject.
    pub inapplicable: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Judgement {
    pub verdict: Verdict,
    pub detail: String,
}

impl Judgement {
    pub fn new(verdict: Verdict, detail: impl Into<String>) -> Self {
        Judgement {
            verdict,
            detail: detail.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SubjectData {
    Tabular {
        training: RawTable,
        labeled_eval: Option<RawTable>,
    },
    Text {
        training: Vec<TextRow>,
    },
    Series {
        training: Vec<SeriesPoint>,
        evaluation: Option<Vec<SeriesPoint>>,
    },
}

/// Everything a tester may read besides the data: bound parameters of its
/// property, shared data-specific inputs, the generation limit and seed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bindings {
    pub params: BTreeMap<String, Value>,
    pub data_specific: Map<String, Value>,
    pub generation_limit: usize,
    pub seed: u64,
}

impl Bindings {
    pub fn real(&self, name: &str) -> Result<f64> {
        self.params
            .get(name)
            .and_then(Value::as_f64)
            .ok_or_else(|| CoreError::invalid(format!("parameter {name} is not bound to a number")))
    }

    pub fn integer(&self, name: &str) -> Result<usize> {
        self.params
            .get(name)
            .and_then(Value::as_u64)
            .map(|v| v as usize)
            .ok_or_else(|| CoreError::invalid(format!("parameter {name} is not bound to an integer")))
    }

    pub fn range(&self, name: &str) -> Result<(f64, f64)> {
        match self.params.get(name).and_then(Value::as_array).map(Vec::as_slice) {
            Some([lo, hi]) => match (lo.as_f64(), hi.as_f64()) {
                (Some(lo), Some(hi)) => Ok((lo, hi)),
                _ => Err(CoreError::invalid(format!("parameter {name} is not a numeric range"))),
            },
            _ => Err(CoreError::invalid(format!("parameter {name} is not bound to [lo, hi]"))),
        }
    }

    pub fn data_text(&self, key: &str) -> Option<String> {
        match self.data_specific.get(key)? {
            Value::String(s) => Some(s.clone()),
            Value::Null => None,
            other => Some(other.to_string()),
        }
    }

    pub fn require_text(&self, key: &str) -> Result<String> {
        self.data_text(key)
            .ok_or_else(|| CoreError::invalid(format!("data-specific input {key} is required")))
    }

    pub fn data_list(&self, key: &str) -> Vec<String> {
        match self.data_specific.get(key) {
            Some(Value::Array(items)) => items
                .iter()
                .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                .collect(),
            Some(Value::String(s)) => s
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect(),
            _ => Vec::new(),
        }
    }

    pub fn data_real(&self, key: &str) -> Option<f64> {
        match self.data_specific.get(key)? {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.parse().ok(),
            _ => None,
        }
    }
}

pub trait PropertyTester: Send + Sync {
    fn property_id(&self) -> &'static str;

    /// Builds test cases. May query the predictor (surrogate fitting).
    fn generate(&self, data: &SubjectData, bind: &Bindings, predictor: &dyn Predictor) -> Result<Generated>;

    /// Judges one case from the outcomes of its samples, in sample order.
    fn judge(&self, case: &TestCase, outcomes: &[Outcome], bind: &Bindings) -> Judgement;

    /// Run-level metric values computed from stored cases and results.
    fn metrics(&self, cases: &[TestCase], results: &[TestResult], bind: &Bindings) -> BTreeMap<String, f64>;
}

/// Returns the tester implementing a built-in property.
pub fn tester_for(property_id: &str) -> Option<Box<dyn PropertyTester>> {
    use crate::catalog::ids;
    Some(match property_id {
        ids::CORRECTNESS => Box::new(tabular::Correctness),
        ids::GROUP_DISCRIMINATION => Box::new(tabular::GroupDiscrimination),
        ids::INDIVIDUAL_DISCRIMINATION => Box::new(tabular::IndividualDiscrimination),
        ids::ADVERSARIAL_ROBUSTNESS => Box::new(tabular::AdversarialRobustness),
        ids::TYPO_SENSITIVITY => Box::new(text::TextSensitivity::typo()),
        ids::NOISE_SENSITIVITY => Box::new(text::TextSensitivity::noise()),
        ids::SMALL_LINEAR_CHANGE => Box::new(timeseries::Metamorphic::new(timeseries::TransformKind::SmallLinear)),
        ids::UNORDERED_DATA => Box::new(timeseries::Metamorphic::new(timeseries::TransformKind::Unordered)),
        ids::LARGE_LINEAR_CHANGE => Box::new(timeseries::Metamorphic::new(timeseries::TransformKind::LargeLinear)),
        _ => return None,
    })
}

/// Labels of all outcomes, or the first error message.
pub fn labels(outcomes: &[Outcome]) -> std::result::Result<Vec<&str>, String> {
    outcomes
        .iter()
        .map(|o| match o {
            Ok(p) => Ok(p.label.as_str()),
            Err(e) => Err(e.message.clone()),
        })
        .collect()
}

/// Pair verdict: fail iff the two predicted labels differ.
pub fn judge_label_pair(outcomes: &[Outcome]) -> Judgement {
    match labels(outcomes) {
        Err(e) => Judgement::new(Verdict::Error, format!("prediction failed: {e}")),
        Ok(l) if l.len() != 2 => Judgement::new(Verdict::Error, format!("expected 2 predictions, got {}", l.len())),
        Ok(l) if l[0] == l[1] => Judgement::new(Verdict::Pass, format!("label unchanged ({})", l[0])),
        Ok(l) => Judgement::new(Verdict::Fail, format!("label changed: {} -> {}", l[0], l[1])),
    }
}

/// Flip rate over pass/fail results; errored pairs are excluded. NaN when none were judged.
pub fn flip_rate_of(results: &[TestResult]) -> f64 {
    let failed = results.iter().filter(|r| r.verdict == Verdict::Fail).count();
    let judged = results.iter().filter(|r| r.verdict != Verdict::Error).count();
    metrics::flip_rate::<f64>(failed, judged).unwrap_or(f64::NAN)
}

/// Deterministic choice of `k` indices out of `n` (all of them, in order, if `k >= n`).
pub fn choose_indices(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::SeedableRng;
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{PredictError, Prediction};

    #[test]
    fn pair_judgement() {
        let same = [Ok(Prediction::label("a")), Ok(Prediction::label("a"))];
        let diff = [Ok(Prediction::label("a")), Ok(Prediction::label("b"))];
        let err = [Ok(Prediction::label("a")), Err(PredictError::new("boom"))];
        assert_eq!(judge_label_pair(&same).verdict, Verdict::Pass);
        assert_eq!(judge_label_pair(&diff).verdict, Verdict::Fail);
        assert_eq!(judge_label_pair(&err).verdict, Verdict::Error);
    }

    #[test]
    fn chosen_indices_are_sorted_and_distinct() {
        let idx = choose_indices(100, 10, 5);
        assert_eq!(idx.len(), 10);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, choose_indices(100, 10, 5));
        assert_eq!(choose_indices(3, 10, 5), vec![0, 1, 2]);
    }
}
