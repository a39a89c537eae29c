//! Deterministic mock models whose behaviour is known by construction.

use probekit_core::sample::SeriesPoint;
use probekit_core::{Outcome, PredictError, Prediction, Predictor, Sample};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{GatewayError, Result};

fn favorable() -> String {
    "favorable".into()
}
fn unfavorable() -> String {
    "unfavorable".into()
}
fn positive() -> String {
    "positive".into()
}
fn negative() -> String {
    "negative".into()
}
fn one() -> String {
    "1".into()
}
fn zero() -> String {
    "0".into()
}
fn half() -> f64 {
    0.5
}
fn horizon() -> usize {
    12
}
fn protected() -> String {
    "protected".into()
}
fn privileged() -> String {
    "A".into()
}
fn score() -> String {
    "score".into()
}
fn x() -> String {
    "x".into()
}
fn good() -> Vec<String> {
    vec!["good".into()]
}
fn no() -> String {
    "no".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MockModel {
    /// Always the same label.
    Constant {
        #[serde(default = "no")]
        label: String,
    },
    /// Favorable iff `attribute == privileged` or `score_column > cutoff`.
    PlantedBias {
        #[serde(default = "protected")]
        attribute: String,
        #[serde(default = "privileged")]
        privileged: String,
        #[serde(default = "score")]
        score_column: String,
        #[serde(default = "half")]
        cutoff: f64,
        #[serde(default = "favorable")]
        favorable: String,
        #[serde(default = "unfavorable")]
        unfavorable: String,
    },
    /// `above` iff `column > cutoff`, else `below`.
    Threshold {
        #[serde(default = "x")]
        column: String,
        #[serde(default = "half")]
        cutoff: f64,
        #[serde(default = "one")]
        above: String,
        #[serde(default = "zero")]
        below: String,
    },
    /// `hit` iff the lower-cased text contains one of `words`.
    KeywordText {
        #[serde(default = "good")]
        words: Vec<String>,
        #[serde(default = "positive")]
        hit: String,
        #[serde(default = "negative")]
        miss: String,
    },
    /// Repeats the value with the latest timestamp.
    LastValue {
        #[serde(default = "horizon")]
        horizon: usize,
    },
    /// Repeats the mean of the history values.
    Mean {
        #[serde(default = "horizon")]
        horizon: usize,
    },
    /// Min-max normalizes the window, averages the last three normalized
    /// values and maps the result back, so shifts of any size cancel out.
    Normalizing {
        #[serde(default = "horizon")]
        horizon: usize,
    },
    /// Repeats the last value in payload order, ignoring timestamps.
    OrderSensitive {
        #[serde(default = "horizon")]
        horizon: usize,
    },
    /// Last value clamped to `[lo, hi]`.
    Bounded {
        lo: f64,
        hi: f64,
        #[serde(default = "horizon")]
        horizon: usize,
    },
}

pub const KINDS: [&str; 9] = [
    "constant",
    "planted-bias",
    "threshold",
    "keyword-text",
    "last-value",
    "mean",
    "normalizing",
    "order-sensitive",
    "bounded",
];

fn number(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn field<'a>(row: &'a Map<String, Value>, name: &str) -> Result<&'a Value> {
    row.get(name)
        .ok_or_else(|| GatewayError::MockInput(format!("missing column {name}")))
}

fn forecast(value: f64, horizon: usize) -> Prediction {
    Prediction::label(Value::from(vec![value; horizon.max(1)]).to_string())
}

fn by_time(points: &[SeriesPoint]) -> Vec<f64> {
    let mut sorted = points.to_vec();
    sorted.sort_by_key(|p| p.0);
    sorted.into_iter().map(|p| p.1).collect()
}

impl MockModel {
    /// Builds a model from its kind name and optional JSON parameters.
    pub fn from_kind(kind: &str, params: Map<String, Value>) -> Result<Self> {
        if !KINDS.contains(&kind) {
            return Err(GatewayError::UnknownMock(kind.to_string()));
        }
        let mut obj = params;
        obj.insert("kind".into(), Value::from(kind));
        serde_json::from_value(Value::Object(obj)).map_err(|e| GatewayError::MockInput(e.to_string()))
    }

    pub fn kind(&self) -> &'static str {
        match self {
            MockModel::Constant { .. } => "constant",
            MockModel::PlantedBias { .. } => "planted-bias",
            MockModel::Threshold { .. } => "threshold",
            MockModel::KeywordText { .. } => "keyword-text",
            MockModel::LastValue { .. } => "last-value",
            MockModel::Mean { .. } => "mean",
            MockModel::Normalizing { .. } => "normalizing",
            MockModel::OrderSensitive { .. } => "order-sensitive",
            MockModel::Bounded { .. } => "bounded",
        }
    }

    /// Accepts a sample in its wire form (row object, text, or `[t, v]` pairs).
    pub fn predict_json(&self, sample: &Value) -> Result<Prediction> {
        match self {
            MockModel::Constant { label } => Ok(Prediction::label(label.clone())),
            MockModel::PlantedBias {
                attribute,
                privileged,
                score_column,
                cutoff,
                favorable,
                unfavorable,
            } => {
                let row = sample
                    .as_object()
                    .ok_or_else(|| GatewayError::MockInput("expected a row object".into()))?;
                let group = text(field(row, attribute)?);
                let s = number(field(row, score_column)?)
                    .ok_or_else(|| GatewayError::MockInput(format!("{score_column} is not numeric")))?;
                let fav = group == *privileged || s > *cutoff;
                Ok(Prediction::label(if fav { favorable } else { unfavorable }.clone()))
            }
            MockModel::Threshold {
                column,
                cutoff,
                above,
                below,
            } => {
                let row = sample
                    .as_object()
                    .ok_or_else(|| GatewayError::MockInput("expected a row object".into()))?;
                let v = number(field(row, column)?)
                    .ok_or_else(|| GatewayError::MockInput(format!("{column} is not numeric")))?;
                Ok(Prediction::label(if v > *cutoff { above } else { below }.clone()))
            }
            MockModel::KeywordText { words, hit, miss } => {
                let t = sample
                    .as_str()
                    .ok_or_else(|| GatewayError::MockInput("expected text".into()))?
                    .to_lowercase();
                let found = words.iter().any(|w| t.contains(&w.to_lowercase()));
                Ok(Prediction::label(if found { hit } else { miss }.clone()))
            }
            _ => {
                let points: Vec<SeriesPoint> = serde_json::from_value(sample.clone())
                    .map_err(|_| GatewayError::MockInput("expected [timestamp, value] pairs".into()))?;
                self.predict_series(&points)
            }
        }
    }

    fn predict_series(&self, points: &[SeriesPoint]) -> Result<Prediction> {
        if points.is_empty() {
            return Err(GatewayError::MockInput("empty history".into()));
        }
        let values = by_time(points);
        let last = values[values.len() - 1];
        Ok(match self {
            MockModel::LastValue { horizon } => forecast(last, *horizon),
            MockModel::Mean { horizon } => {
                forecast(values.iter().sum::<f64>() / values.len() as f64, *horizon)
            }
            MockModel::Normalizing { horizon } => {
                let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let span = if hi > lo { hi - lo } else { 1.0 };
                let tail = &values[values.len().saturating_sub(3)..];
                let z = tail.iter().map(|v| (v - lo) / span).sum::<f64>() / tail.len() as f64;
                forecast(lo + z * span, *horizon)
            }
            MockModel::OrderSensitive { horizon } => forecast(points[points.len() - 1].1, *horizon),
            MockModel::Bounded { lo, hi, horizon } => forecast(last.clamp(*lo, *hi), *horizon),
            _ => return Err(GatewayError::MockInput("model does not forecast".into())),
        })
    }

    pub fn mock_predict(&self, sample: &Sample) -> Result<Prediction> {
        self.predict_json(&sample.to_json())
    }
}

impl Predictor for MockModel {
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        samples
            .iter()
            .map(|s| self.mock_predict(s).map_err(|e| PredictError::new(e.to_string())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn rule_examples() {
        let bias = MockModel::from_kind("planted-bias", Map::new()).unwrap();
        let p = bias.predict_json(&json!({"protected": "B", "score": 0.7})).unwrap();
        assert_eq!(p.label, "favorable");
        let p = bias.predict_json(&json!({"protected": "B", "score": 0.2})).unwrap();
        assert_eq!(p.label, "unfavorable");
        let p = bias.predict_json(&json!({"protected": "A", "score": 0.2})).unwrap();
        assert_eq!(p.label, "favorable");

        let c = MockModel::Constant { label: "no".into() };
        assert_eq!(c.predict_json(&json!({"anything": 1})).unwrap().label, "no");

        let k = MockModel::from_kind("keyword-text", Map::new()).unwrap();
        assert_eq!(k.predict_json(&json!("GOOD day")).unwrap().label, "positive");
        assert_eq!(k.predict_json(&json!("bad day")).unwrap().label, "negative");
    }

    #[test]
    fn unknown_kind() {
        assert!(matches!(
            MockModel::from_kind("oracle", Map::new()),
            Err(GatewayError::UnknownMock(_))
        ));
    }

    #[test]
    fn forecasters() {
        let window = json!([[2, 5.0], [0, 1.0], [1, 3.0]]);
        let f = |k: &str| {
            MockModel::from_kind(k, json!({"horizon": 2}).as_object().unwrap().clone())
                .unwrap()
                .predict_json(&window)
                .unwrap()
                .forecast()
                .unwrap()
        };
        assert_eq!(f("last-value"), vec![5.0, 5.0]);
        assert_eq!(f("mean"), vec![3.0, 3.0]);
        assert_eq!(f("order-sensitive"), vec![3.0, 3.0]);
        assert_eq!(f("normalizing"), vec![3.0, 3.0]);
    }
}
