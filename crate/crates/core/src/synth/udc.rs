//! User-defined constraints: per-attribute overrides of the learned distribution.
//!
//! ```json
//! {"gender": {"distribution": {"F": 0.9, "M": 0.1}}, "age": {"range": [60, 80]}}
//! ```

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::Scalar;

use super::joint::JointDistributionModel;
use super::marginal::{Bin, ColumnMarginal, Interval};
use super::schema::Domain;

const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum AttributeOverride {
    /// Replacement categorical marginal.
    Distribution(BTreeMap<String, f64>),
    /// Closed numeric range `[lo, hi]`.
    Range([f64; 2]),
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserDefinedConstraint {
    pub attributes: BTreeMap<String, AttributeOverride>,
}

impl UserDefinedConstraint {
    pub fn parse(value: &serde_json::Value) -> Result<Self> {
        let udc: Self = serde_json::from_value(value.clone())
            .map_err(|e| CoreError::invalid(format!("malformed UDC: {e}")))?;
        udc.check_shape()?;
        Ok(udc)
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    /// Checks what can be checked without a schema.
    pub fn check_shape(&self) -> Result<()> {
        for (attr, o) in &self.attributes {
            match o {
                AttributeOverride::Distribution(probs) => {
                    if probs.is_empty() {
                        return Err(CoreError::invalid(format!("UDC {attr}: empty distribution")));
                    }
                    if probs.values().any(|p| !p.is_finite() || *p < 0.0) {
                        return Err(CoreError::invalid(format!("UDC {attr}: probabilities must be non-negative")));
                    }
                    let total: f64 = probs.values().sum();
                    if (total - 1.0).abs() > SUM_TOLERANCE {
                        return Err(CoreError::invalid(format!(
                            "UDC {attr}: probabilities must sum to 1 (got {total})"
                        )));
                    }
                }
                AttributeOverride::Range([lo, hi]) => {
                    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                        return Err(CoreError::invalid(format!("UDC {attr}: range needs lo <= hi")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Replaces or truncates the targeted marginals and detaches those columns
/// from the dependency tree. Their former children become independent roots.
pub fn apply_udc<F: Scalar>(
    model: &JointDistributionModel<F>,
    udc: &UserDefinedConstraint,
) -> Result<JointDistributionModel<F>> {
    udc.check_shape()?;
    let mut out = model.clone();
    for (attr, o) in &udc.attributes {
        let idx = out
            .schema
            .index_of(attr)
            .ok_or_else(|| CoreError::invalid(format!("UDC attribute {attr} is not a column")))?;
        let spec = &mut out.schema.columns[idx];
        let marginal = match (o, &out.marginals[idx]) {
            (AttributeOverride::Distribution(probs), ColumnMarginal::Categorical { probs: old }) => {
                if let Some(unknown) = probs.keys().find(|k| !old.iter().any(|(c, _)| c == *k)) {
                    return Err(CoreError::invalid(format!(
                        "UDC {attr}: category {unknown} does not occur in the data"
                    )));
                }
                ColumnMarginal::Categorical {
                    probs: old
                        .iter()
                        .map(|(c, _)| (c.clone(), F::of(probs.get(c).copied().unwrap_or(0.0))))
                        .collect(),
                }
            }
            (AttributeOverride::Range([lo, hi]), ColumnMarginal::Numeric { bins }) => {
                let region = Interval::closed(F::of(*lo), F::of(*hi));
                let kept: Vec<(Interval<F>, f64)> = bins
                    .iter()
                    .filter_map(|b| {
                        let share = b.interval.overlap_fraction(&region, spec.integral);
                        (share > 0.0).then(|| (b.interval.intersect(&region), b.prob.f64() * share))
                    })
                    .collect();
                let total: f64 = kept.iter().map(|(_, w)| w).sum();
                if !(total > 0.0) {
                    return Err(CoreError::invalid(format!(
                        "UDC {attr}: range [{lo}, {hi}] is disjoint from the column domain"
                    )));
                }
                let (dmin, dmax) = spec.range().expect("numeric column");
                spec.domain = Domain::Numeric {
                    min: dmin.max(region.lo),
                    max: dmax.min(region.hi),
                };
                ColumnMarginal::Numeric {
                    bins: kept
                        .into_iter()
                        .map(|(interval, w)| Bin {
                            interval,
                            prob: F::of(w / total),
                        })
                        .collect(),
                }
            }
            (AttributeOverride::Distribution(_), _) => {
                return Err(CoreError::invalid(format!("UDC {attr}: distribution given for a numeric column")))
            }
            (AttributeOverride::Range(_), _) => {
                return Err(CoreError::invalid(format!("UDC {attr}: range given for a categorical column")))
            }
        };
        out.marginals[idx] = marginal;
        out.edges.retain(|e| e.parent != *attr && e.child != *attr);
        if !out.detached.contains(attr) {
            out.detached.push(attr.clone());
        }
    }
    out.detached.sort();
    out.validate()?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn parses_both_forms() {
        let udc = UserDefinedConstraint::parse(&json!({
            "gender": {"distribution": {"F": 0.9, "M": 0.1}},
            "age": {"range": [60, 80]}
        }))
        .unwrap();
        assert_eq!(udc.attributes.len(), 2);
        assert_eq!(udc.attributes["age"], AttributeOverride::Range([60.0, 80.0]));
    }

    #[test]
    fn rejects_bad_sums_and_ranges() {
        let err = UserDefinedConstraint::parse(&json!({"g": {"distribution": {"F": 0.5, "M": 0.3}}}))
            .unwrap_err();
        assert!(err.to_string().contains("sum to 1"));
        assert!(UserDefinedConstraint::parse(&json!({"a": {"range": [80, 60]}})).is_err());
        assert!(UserDefinedConstraint::parse(&json!({"a": {"between": [1, 2]}})).is_err());
    }
}
