//! Samples sent to a model and the predictions that come back.
//!
//! Testers only ever see a [`Predictor`]: something that maps a batch of
//! samples to one outcome per sample. Endpoint, headers and credentials stay
//! behind that trait.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

/// One `(epoch seconds, value)` observation.
pub type SeriesPoint = (i64, f64);

/// A single model input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sample {
    /// Tabular row; key order follows the subject schema.
    Row(Map<String, Value>),
    Text(String),
    /// Time-series history as `[timestamp, value]` pairs, in payload order.
    Series(Vec<SeriesPoint>),
}

impl Sample {
    pub fn to_json(&self) -> Value {
        match self {
            Sample::Row(map) => Value::Object(map.clone()),
            Sample::Text(text) => Value::String(text.clone()),
            Sample::Series(points) => Value::Array(
                points
                    .iter()
                    .map(|(t, v)| {
                        Value::Array(vec![
                            Value::from(*t),
                            serde_json::Number::from_f64(*v)
                                .map(Value::Number)
                                .unwrap_or(Value::Null),
                        ])
                    })
                    .collect(),
            ),
        }
    }

    pub fn as_row(&self) -> Option<&Map<String, Value>> {
        match self {
            Sample::Row(map) => Some(map),
            _ => None,
        }
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Sample::Text(text) => Some(text),
            _ => None,
        }
    }

    pub fn as_series(&self) -> Option<&[SeriesPoint]> {
        match self {
            Sample::Series(points) => Some(points),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Prediction {
    pub fn label(label: impl Into<String>) -> Self {
        Prediction {
            label: label.into(),
            confidence: None,
        }
    }

    /// Reads the label as a forecast: a JSON array of numbers or a single number.
    pub fn forecast(&self) -> Option<Vec<f64>> {
        match serde_json::from_str::<Value>(&self.label).ok()? {
            Value::Number(n) => n.as_f64().map(|x| vec![x]),
            Value::Array(items) => items.iter().map(Value::as_f64).collect(),
            _ => None,
        }
    }
}

/// Failure to obtain a prediction for a sample (transport, status or extraction).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictError {
    pub message: String,
}

impl PredictError {
    pub fn new(message: impl Into<String>) -> Self {
        PredictError {
            message: message.into(),
        }
    }
}

impl fmt::Display for PredictError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for PredictError {}

pub type Outcome = Result<Prediction, PredictError>;

/// Black-box prediction capability. Returns exactly one outcome per sample, in order.
pub trait Predictor: Send + Sync {
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome>;
}

impl<P: Predictor + ?Sized> Predictor for &P {
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        (**self).predict_batch(samples)
    }
}

impl<P: Predictor + ?Sized> Predictor for Arc<P> {
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        (**self).predict_batch(samples)
    }
}

impl<P: Predictor + ?Sized> Predictor for Box<P> {
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        (**self).predict_batch(samples)
    }
}

/// Adapts a per-sample closure into a [`Predictor`].
pub struct FnPredictor<F>(pub F);

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(&Sample) -> Outcome + Send + Sync,
{
    fn predict_batch(&self, samples: &[Sample]) -> Vec<Outcome> {
        samples.iter().map(&self.0).collect()
    }
}

pub fn from_fn<F>(f: F) -> FnPredictor<F>
where
    F: Fn(&Sample) -> Outcome + Send + Sync,
{
    FnPredictor(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn untagged_round_trip_keeps_variant() {
        let samples = vec![
            Sample::Text("hi".into()),
            Sample::Series(vec![(1, 2.0), (2, 3.5)]),
            Sample::Row(serde_json::from_str(r#"{"b":1,"a":"x"}"#).unwrap()),
        ];
        let json = serde_json::to_string(&samples).unwrap();
        let back: Vec<Sample> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, samples);
        assert_eq!(json, r#"["hi",[[1,2.0],[2,3.5]],{"b":1,"a":"x"}]"#);
    }

    #[test]
    fn forecast_parsing() {
        assert_eq!(Prediction::label("[1, 2.5]").forecast(), Some(vec![1.0, 2.5]));
        assert_eq!(Prediction::label("3").forecast(), Some(vec![3.0]));
        assert_eq!(Prediction::label("yes").forecast(), None);
    }
}
