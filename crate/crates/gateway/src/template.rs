//! Request rendering and response extraction for a [`ModelSpec`].

use probekit_core::model::{ModelSpec, SAMPLES_PLACEHOLDER, SAMPLE_PLACEHOLDER};
use probekit_core::{Prediction, Sample};
use serde_json::Value;

use crate::error::{GatewayError, Result};
use crate::jsonpath::JsonPath;

/// Substitutes the samples into the request template.
///
/// `{{SAMPLES}}` becomes a JSON array of all samples; `{{SAMPLE}}` becomes
/// the single sample and requires a batch of one.
pub fn render_request(spec: &ModelSpec, samples: &[Sample]) -> Result<String> {
    let limit = spec.effective_batch_limit();
    if samples.is_empty() {
        return Err(GatewayError::Template("no samples to render".into()));
    }
    if samples.len() > limit {
        return Err(GatewayError::BatchOverflow {
            got: samples.len(),
            limit,
        });
    }
    let many = spec.request_template.matches(SAMPLES_PLACEHOLDER).count();
    let single = spec.request_template.matches(SAMPLE_PLACEHOLDER).count();
    match (many, single) {
        (1, 0) => {
            let array = Value::Array(samples.iter().map(Sample::to_json).collect());
            Ok(spec.request_template.replace(SAMPLES_PLACEHOLDER, &array.to_string()))
        }
        (0, 1) => Ok(spec
            .request_template
            .replace(SAMPLE_PLACEHOLDER, &samples[0].to_json().to_string())),
        _ => Err(GatewayError::Template(
            "template must contain exactly one placeholder".into(),
        )),
    }
}

fn label_text(v: &Value) -> Result<String> {
    match v {
        Value::String(s) => Ok(s.clone()),
        Value::Null => Err(GatewayError::Label("null label".into())),
        Value::Bool(_) | Value::Number(_) | Value::Array(_) | Value::Object(_) => Ok(v.to_string()),
    }
}

fn confidence(v: &Value) -> Result<f64> {
    let x = match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .filter(|x| x.is_finite())
    .ok_or_else(|| GatewayError::NonNumericConfidence(v.to_string()))?;
    if !(0.0..=1.0).contains(&x) {
        return Err(GatewayError::ConfidenceRange(x));
    }
    Ok(x)
}

/// Reads exactly `expected` labels (and confidences, when configured) from a response body.
pub fn extract_predictions(body: &str, spec: &ModelSpec, expected: usize) -> Result<Vec<Prediction>> {
    let doc: Value = serde_json::from_str(body).map_err(|e| GatewayError::MalformedJson(e.to_string()))?;
    let labels = JsonPath::parse(&spec.label_path)?.select(&doc);
    if labels.len() != expected {
        return Err(GatewayError::Cardinality {
            what: "label",
            expected,
            got: labels.len(),
        });
    }
    let confidences = match &spec.confidence_path {
        None => None,
        Some(path) => {
            let values = JsonPath::parse(path)?.select(&doc);
            if values.len() != expected {
                return Err(GatewayError::Cardinality {
                    what: "confidence",
                    expected,
                    got: values.len(),
                });
            }
            Some(values.into_iter().map(confidence).collect::<Result<Vec<_>>>()?)
        }
    };
    labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| {
            Ok(Prediction {
                label: label_text(l)?,
                confidence: confidences.as_ref().map(|c| c[i]),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use probekit_core::model::HttpMethod;
    use serde_json::json;

    pub(crate) fn spec(template: &str, label: &str, conf: Option<&str>, batch_limit: usize) -> ModelSpec {
        ModelSpec {
            id: "m".into(),
            name: "m".into(),
            endpoint_url: "http://127.0.0.1:9".into(),
            http_method: HttpMethod::Post,
            headers: Default::default(),
            request_template: template.into(),
            label_path: label.into(),
            confidence_path: conf.map(str::to_string),
            batch_limit,
        }
    }

    fn row(v: Value) -> Sample {
        Sample::Row(v.as_object().unwrap().clone())
    }

    #[test]
    fn renders_samples_array() {
        let s = spec(r#"{"instances": {{SAMPLES}}}"#, "$.p[*]", None, 2);
        let body = render_request(&s, &[row(json!({"age": 30}))]).unwrap();
        assert_eq!(body, r#"{"instances": [{"age":30}]}"#);
        let body = render_request(&s, &[row(json!({"age": 30})), row(json!({"age": 31}))]).unwrap();
        let parsed: Value = serde_json::from_str(&body).unwrap();
        assert_eq!(parsed["instances"].as_array().unwrap().len(), 2);
        let three = vec![row(json!({"age": 1})); 3];
        assert!(matches!(
            render_request(&s, &three),
            Err(GatewayError::BatchOverflow { got: 3, limit: 2 })
        ));
    }

    #[test]
    fn keeps_column_order() {
        let s = spec("{{SAMPLES}}", "$", None, 4);
        let body = render_request(&s, &[row(json!({"z": 1, "a": 2, "m": 3}))]).unwrap();
        assert_eq!(body, r#"[{"z":1,"a":2,"m":3}]"#);
    }

    #[test]
    fn single_sample_mode() {
        let s = spec(r#"{"instance": {{SAMPLE}}}"#, "$.label", None, 16);
        let body = render_request(&s, &[Sample::Text("hi".into())]).unwrap();
        assert_eq!(body, r#"{"instance": "hi"}"#);
        assert!(render_request(&s, &[Sample::Text("a".into()), Sample::Text("b".into())]).is_err());
    }

    #[test]
    fn extracts_labels_and_confidences() {
        let s = spec("{{SAMPLES}}", "$.predictions[*].label", Some("$.predictions[*].p"), 8);
        let body = r#"{"predictions":[{"label":"yes","p":0.9},{"label":"no","p":0.6}]}"#;
        let p = extract_predictions(body, &s, 2).unwrap();
        assert_eq!(p[0].label, "yes");
        assert_eq!(p[0].confidence, Some(0.9));
        assert_eq!(p[1].label, "no");
        assert_eq!(p[1].confidence, Some(0.6));
        assert!(matches!(
            extract_predictions(body, &s, 3),
            Err(GatewayError::Cardinality { expected: 3, got: 2, .. })
        ));
        let high = r#"{"predictions":[{"label":"yes","p":"high"}]}"#;
        let err = extract_predictions(high, &s, 1).unwrap_err();
        assert!(err.to_string().contains("non-numeric confidence"));
        assert!(matches!(
            extract_predictions("{not json", &s, 1),
            Err(GatewayError::MalformedJson(_))
        ));
    }

    #[test]
    fn array_labels_become_json_text() {
        let s = spec("{{SAMPLES}}", "$.predictions[*].forecast", None, 8);
        let p = extract_predictions(r#"{"predictions":[{"forecast":[1.5,2]}]}"#, &s, 1).unwrap();
        assert_eq!(p[0].label, "[1.5,2]");
        assert_eq!(p[0].forecast(), Some(vec![1.5, 2.0]));
        assert_eq!(p[0].confidence, None);
    }
}
