//! Metric kernels shared by the testers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::Scalar;

/// Denominator floor for relative RMSE change.
pub const RMSE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct ClassificationScores<F> {
    pub accuracy: F,
    pub precision: F,
    pub recall: F,
    pub f_score: F,
}

fn ratio<F: Scalar>(num: usize, den: usize) -> F {
    if den == 0 {
        F::zero()
    } else {
        F::of_usize(num) / F::of_usize(den)
    }
}

/// Accuracy plus macro-averaged precision, recall and F1 over the union of
/// gold and predicted labels. A 0/0 ratio counts as 0.
pub fn classification_scores<F: Scalar>(pairs: &[(&str, &str)]) -> ClassificationScores<F> {
    if pairs.is_empty() {
        return ClassificationScores {
            accuracy: F::zero(),
            precision: F::zero(),
            recall: F::zero(),
            f_score: F::zero(),
        };
    }
    let labels: BTreeSet<&str> = pairs.iter().flat_map(|(g, p)| [*g, *p]).collect();
    let correct = pairs.iter().filter(|(g, p)| g == p).count();
    let (mut p_sum, mut r_sum, mut f_sum) = (F::zero(), F::zero(), F::zero());
    for label in &labels {
        let tp = pairs.iter().filter(|(g, p)| g == label && p == label).count();
        let predicted = pairs.iter().filter(|(_, p)| p == label).count();
        let actual = pairs.iter().filter(|(g, _)| g == label).count();
        let p: F = ratio(tp, predicted);
        let r: F = ratio(tp, actual);
        let f = if p + r > F::zero() {
            F::of(2.0) * p * r / (p + r)
        } else {
            F::zero()
        };
        p_sum += p;
        r_sum += r;
        f_sum += f;
    }
    let k = F::of_usize(labels.len());
    ClassificationScores {
        accuracy: ratio(correct, pairs.len()),
        precision: p_sum / k,
        recall: r_sum / k,
        f_score: f_sum / k,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct GroupMetrics<F> {
    pub minority_rate: F,
    pub majority_rate: F,
    /// `minority_rate / majority_rate`; `+inf` when only the minority gets favorable outcomes.
    pub disparate_impact: F,
    /// `minority_rate - majority_rate`
    pub demographic_parity: F,
}

/// Group fairness metrics from favorable counts. Fails with "undefined DI"
/// when a group is empty or both rates are zero.
pub fn group_metrics<F: Scalar>(
    minority_favorable: usize,
    minority_total: usize,
    majority_favorable: usize,
    majority_total: usize,
) -> Result<GroupMetrics<F>> {
    if minority_total == 0 || majority_total == 0 {
        return Err(CoreError::Data(format!(
            "undefined DI: empty group (minority {minority_total}, majority {majority_total})"
        )));
    }
    let minority_rate: F = ratio(minority_favorable, minority_total);
    let majority_rate: F = ratio(majority_favorable, majority_total);
    let disparate_impact = if majority_favorable > 0 {
        minority_rate / majority_rate
    } else if minority_favorable > 0 {
        F::infinity()
    } else {
        return Err(CoreError::Data("undefined DI: no favorable outcome in either group".into()));
    };
    Ok(GroupMetrics {
        minority_rate,
        majority_rate,
        disparate_impact,
        demographic_parity: minority_rate - majority_rate,
    })
}

/// Share of judged pairs whose labels differ; `None` when nothing was judged.
pub fn flip_rate<F: Scalar>(flipped: usize, judged: usize) -> Option<F> {
    (judged > 0).then(|| ratio(flipped, judged))
}

pub fn rmse<F: Scalar>(forecast: &[F], actual: &[F]) -> Result<F> {
    if forecast.len() != actual.len() || actual.is_empty() {
        return Err(CoreError::Data(format!(
            "forecast length {} does not match horizon length {}",
            forecast.len(),
            actual.len()
        )));
    }
    let sq: F = forecast.iter().zip(actual).map(|(f, a)| (*f - *a) * (*f - *a)).sum();
    Ok((sq / F::of_usize(actual.len())).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct RmseGain<F> {
    pub rmse_original: F,
    pub rmse_transformed: F,
    pub delta_r: F,
}

/// Relative RMSE change of the transformed window over the original one.
pub fn rmse_gain<F: Scalar>(
    forecast_original: &[F],
    forecast_transformed: &[F],
    actual_original: &[F],
    actual_transformed: &[F],
) -> Result<RmseGain<F>> {
    let rmse_original = rmse(forecast_original, actual_original)?;
    let rmse_transformed = rmse(forecast_transformed, actual_transformed)?;
    let delta_r = (rmse_transformed - rmse_original) / rmse_original.max(F::of(RMSE_FLOOR));
    Ok(RmseGain {
        rmse_original,
        rmse_transformed,
        delta_r,
    })
}

pub fn mean<F: Scalar>(values: &[F]) -> Option<F> {
    (!values.is_empty()).then(|| values.iter().copied().sum::<F>() / F::of_usize(values.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_confusion_matrix() {
        // TP=4, FP=1, FN=1, TN=4 with "yes" as the positive label.
        let mut pairs = vec![("yes", "yes"); 4];
        pairs.push(("no", "yes"));
        pairs.push(("yes", "no"));
        pairs.extend(vec![("no", "no"); 4]);
        let s: ClassificationScores<f64> = classification_scores(&pairs);
        for v in [s.accuracy, s.precision, s.recall, s.f_score] {
            assert!((v - 0.8).abs() < 1e-12);
        }
    }

    #[test]
    fn group_metrics_edges() {
        let g: GroupMetrics<f64> = group_metrics(3, 10, 0, 10).unwrap();
        assert!(g.disparate_impact.is_infinite());
        assert!(group_metrics::<f64>(0, 10, 0, 10).is_err());
        assert!(group_metrics::<f64>(0, 0, 1, 10).is_err());
    }

    #[test]
    fn rmse_gain_floor() {
        let g: RmseGain<f64> = rmse_gain(&[1.0], &[1.5], &[1.0], &[1.0]).unwrap();
        assert_eq!(g.rmse_original, 0.0);
        assert!((g.delta_r - 0.5 / RMSE_FLOOR).abs() < 1.0);
        assert!(rmse::<f64>(&[1.0, 2.0], &[1.0]).is_err());
    }
}
