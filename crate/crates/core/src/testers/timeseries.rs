//! Metamorphic properties of forecasting models judged by relative RMSE change.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{CoreError, Result};
use crate::ids::derive_seed;
use crate::model::{TestCase, TestResult, Verdict};
use crate::num::Scalar;
use crate::sample::{Outcome, Predictor, Sample, SeriesPoint};

use super::metrics::{mean, rmse_gain};
use super::{Bindings, CaseDraft, Generated, Judgement, PropertyTester, SubjectData};

/// Multiplier of the training range for the large shift.
pub const LARGE_SHIFT_FACTOR: f64 = 10.0;
/// Divisor of the mean first difference for the small shift.
pub const SMALL_SHIFT_DIVISOR: f64 = 100.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    SmallLinear,
    Unordered,
    LargeLinear,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesWindow {
    pub history: Vec<SeriesPoint>,
    pub horizon: Vec<SeriesPoint>,
}

impl SeriesWindow {
    pub fn validate(&self) -> Result<()> {
        if self.history.is_empty() || self.horizon.is_empty() {
            return Err(CoreError::invalid("window needs history and horizon"));
        }
        for part in [&self.history, &self.horizon] {
            if part.windows(2).any(|w| w[0].0 >= w[1].0) {
                return Err(CoreError::invalid("window timestamps must increase"));
            }
        }
        Ok(())
    }

    pub fn actuals(&self) -> Vec<f64> {
        self.horizon.iter().map(|p| p.1).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetamorphicSpec {
    pub kind: TransformKind,
    /// Threshold on ΔR: fail above it (small shift, reordering) or below it (large shift).
    pub threshold: f64,
    pub training_min: f64,
    pub training_max: f64,
    pub seed: u64,
}

/// Sliding windows with stride `stride`; at most `limit` of them.
pub fn make_windows(series: &[SeriesPoint], history: usize, horizon: usize, stride: usize, limit: usize) -> Result<Vec<SeriesWindow>> {
    if history == 0 || horizon == 0 || stride == 0 {
        return Err(CoreError::invalid("history, horizon and stride must be positive"));
    }
    if series.len() < history + horizon {
        return Err(CoreError::Data(format!(
            "series has {} points, a window needs {}",
            series.len(),
            history + horizon
        )));
    }
    Ok((0..=series.len() - history - horizon)
        .step_by(stride)
        .take(limit)
        .map(|s| SeriesWindow {
            history: series[s..s + history].to_vec(),
            horizon: series[s + history..s + history + horizon].to_vec(),
        })
        .collect())
}

/// Mean first-order difference of `values`, divided by 100.
pub fn small_shift<F: Scalar>(values: &[F]) -> Result<F> {
    if values.len() < 2 {
        return Err(CoreError::Data("need at least 2 history points for differences".into()));
    }
    let total: F = values.windows(2).map(|w| w[1] - w[0]).sum();
    Ok(total / F::of_usize(values.len() - 1) / F::of(SMALL_SHIFT_DIVISOR))
}

pub fn large_shift<F: Scalar>(training_min: F, training_max: F) -> F {
    F::of(LARGE_SHIFT_FACTOR) * (training_max - training_min)
}

fn shifted(points: &[SeriesPoint], c: f64) -> Vec<SeriesPoint> {
    points.iter().map(|&(t, v)| (t, v + c)).collect()
}

pub fn transform_series(window: &SeriesWindow, spec: &MetamorphicSpec) -> Result<SeriesWindow> {
    window.validate()?;
    Ok(match spec.kind {
        TransformKind::SmallLinear => {
            let values: Vec<f64> = window.history.iter().map(|p| p.1).collect();
            let c = small_shift(&values)?;
            SeriesWindow {
                history: shifted(&window.history, c),
                horizon: shifted(&window.horizon, c),
            }
        }
        TransformKind::LargeLinear => {
            if spec.training_min > spec.training_max {
                return Err(CoreError::invalid("training_min exceeds training_max"));
            }
            let c = large_shift(spec.training_min, spec.training_max);
            SeriesWindow {
                history: shifted(&window.history, c),
                horizon: shifted(&window.horizon, c),
            }
        }
        TransformKind::Unordered => {
            let mut history = window.history.clone();
            history.shuffle(&mut ChaCha8Rng::seed_from_u64(spec.seed));
            SeriesWindow {
                history,
                horizon: window.horizon.clone(),
            }
        }
    })
}

/// Case verdict from ΔR: reordering and small shifts must not hurt by more
/// than the threshold, a large shift must hurt by at least it.
pub fn verdict_for(kind: TransformKind, delta_r: f64, threshold: f64) -> Verdict {
    let fails = match kind {
        TransformKind::SmallLinear | TransformKind::Unordered => delta_r > threshold,
        TransformKind::LargeLinear => delta_r < threshold,
    };
    if fails {
        Verdict::Fail
    } else {
        Verdict::Pass
    }
}

pub fn metamorphic_case(window: &SeriesWindow, spec: &MetamorphicSpec) -> Result<CaseDraft> {
    let t = transform_series(window, spec)?;
    Ok(CaseDraft::pair(
        Sample::Series(window.history.clone()),
        Sample::Series(t.history.clone()),
        json!({
            "kind": spec.kind,
            "horizon_timestamps": window.horizon.iter().map(|p| p.0).collect::<Vec<_>>(),
            "actuals_original": window.actuals(),
            "actuals_transformed": t.actuals(),
        }),
    ))
}

fn floats(v: Option<&Value>) -> Option<Vec<f64>> {
    v?.as_array()?.iter().map(Value::as_f64).collect()
}

/// ΔR of a judged case, from its reference and the two forecasts.
pub fn case_delta_r(case: &TestCase, outcomes: &[Outcome]) -> std::result::Result<f64, String> {
    let forecasts: Vec<Vec<f64>> = outcomes
        .iter()
        .map(|o| match o {
            Ok(p) => p.forecast().ok_or_else(|| format!("label {:?} is not a forecast", p.label)),
            Err(e) => Err(format!("prediction failed: {e}")),
        })
        .collect::<std::result::Result<_, _>>()?;
    if forecasts.len() != 2 {
        return Err(format!("expected 2 forecasts, got {}", forecasts.len()));
    }
    let a_o = floats(case.reference.get("actuals_original")).ok_or("missing actuals")?;
    let a_t = floats(case.reference.get("actuals_transformed")).ok_or("missing actuals")?;
    rmse_gain(&forecasts[0], &forecasts[1], &a_o, &a_t)
        .map(|g| g.delta_r)
        .map_err(|e| e.to_string())
}

pub struct Metamorphic {
    pub kind: TransformKind,
}

impl Metamorphic {
    pub fn new(kind: TransformKind) -> Self {
        Metamorphic { kind }
    }

    fn threshold_name(&self) -> &'static str {
        match self.kind {
            TransformKind::LargeLinear => "beta",
            _ => "alpha",
        }
    }
}

impl PropertyTester for Metamorphic {
    fn property_id(&self) -> &'static str {
        use crate::catalog::ids;
        match self.kind {
            TransformKind::SmallLinear => ids::SMALL_LINEAR_CHANGE,
            TransformKind::Unordered => ids::UNORDERED_DATA,
            TransformKind::LargeLinear => ids::LARGE_LINEAR_CHANGE,
        }
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, _predictor: &dyn Predictor) -> Result<Generated> {
        let SubjectData::Series { training, evaluation } = data else {
            return Err(CoreError::invalid("property needs a time series"));
        };
        let series = evaluation.as_deref().unwrap_or(training);
        let windows = make_windows(
            series,
            bind.integer("history_length")?,
            bind.integer("horizon_length")?,
            bind.integer("stride")?,
            bind.generation_limit,
        )?;
        let tmin = bind
            .data_real("training_min")
            .unwrap_or_else(|| training.iter().map(|p| p.1).fold(f64::INFINITY, f64::min));
        let tmax = bind
            .data_real("training_max")
            .unwrap_or_else(|| training.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max));
        let cases = windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let spec = MetamorphicSpec {
                    kind: self.kind,
                    threshold: 0.0,
                    training_min: tmin,
                    training_max: tmax,
                    seed: derive_seed(bind.seed, i as u64),
                };
                metamorphic_case(w, &spec)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Generated {
            source_count: cases.len(),
            cases,
            notes: Vec::new(),
            inapplicable: None,
        })
    }

    fn judge(&self, case: &TestCase, outcomes: &[Outcome], bind: &Bindings) -> Judgement {
        let threshold = bind.real(self.threshold_name()).unwrap_or(0.10);
        match case_delta_r(case, outcomes) {
            Err(e) => Judgement::new(Verdict::Error, e),
            Ok(d) => Judgement::new(
                verdict_for(self.kind, d, threshold),
                format!("delta_r {d:.6} vs {} {threshold}", self.threshold_name()),
            ),
        }
    }

    fn metrics(&self, cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        let by_id: BTreeMap<&str, &TestCase> = cases.iter().map(|c| (c.id.as_str(), c)).collect();
        let deltas: Vec<f64> = results
            .iter()
            .filter(|r| r.verdict != Verdict::Error)
            .filter_map(|r| {
                let case = by_id.get(r.test_case_id.as_str())?;
                let outcomes: Vec<Outcome> = r.predictions.iter().cloned().map(Ok).collect();
                case_delta_r(case, &outcomes).ok()
            })
            .collect();
        let judged = deltas.len();
        let failed = results.iter().filter(|r| r.verdict == Verdict::Fail).count();
        BTreeMap::from([
            ("delta_r".to_string(), mean(&deltas).unwrap_or(f64::NAN)),
            (
                "failure_rate".to_string(),
                if judged == 0 { f64::NAN } else { failed as f64 / judged as f64 },
            ),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(values: &[f64]) -> SeriesWindow {
        let pts: Vec<SeriesPoint> = values.iter().enumerate().map(|(i, v)| (i as i64, *v)).collect();
        SeriesWindow {
            history: pts[..pts.len() - 1].to_vec(),
            horizon: pts[pts.len() - 1..].to_vec(),
        }
    }

    #[test]
    fn small_shift_of_one_two_four() {
        assert!((small_shift(&[1.0f64, 2.0, 4.0]).unwrap() - 0.015).abs() < 1e-15);
        assert!(small_shift(&[1.0f64]).is_err());
    }

    #[test]
    fn large_shift_adds_ten_ranges() {
        let spec = MetamorphicSpec {
            kind: TransformKind::LargeLinear,
            threshold: 0.1,
            training_min: 0.0,
            training_max: 10.0,
            seed: 0,
        };
        let t = transform_series(&window(&[1.0, 2.0, 3.0]), &spec).unwrap();
        assert_eq!(t.history, vec![(0, 101.0), (1, 102.0)]);
        assert_eq!(t.horizon, vec![(2, 103.0)]);
    }

    #[test]
    fn windows_slide_by_stride() {
        let s: Vec<SeriesPoint> = (0..100).map(|i| (i, i as f64)).collect();
        let w = make_windows(&s, 48, 12, 12, 100).unwrap();
        assert_eq!(w.len(), 4);
        assert_eq!(w[1].history[0].0, 12);
        assert_eq!(make_windows(&s, 48, 12, 12, 2).unwrap().len(), 2);
        assert!(make_windows(&s[..50], 48, 12, 12, 10).is_err());
    }

    #[test]
    fn verdict_is_monotone() {
        assert_eq!(verdict_for(TransformKind::SmallLinear, 0.1, 0.1), Verdict::Pass);
        assert_eq!(verdict_for(TransformKind::SmallLinear, 0.11, 0.1), Verdict::Fail);
        assert_eq!(verdict_for(TransformKind::LargeLinear, 0.05, 0.1), Verdict::Fail);
        assert_eq!(verdict_for(TransformKind::LargeLinear, 0.1, 0.1), Verdict::Pass);
    }
}
