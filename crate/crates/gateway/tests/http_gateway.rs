use std::time::Duration;

use probekit_core::model::{HttpMethod, ModelSpec};
use probekit_core::{Predictor, Sample};
use probekit_gateway::{Faults, Gateway, GatewayConfig, MockModel, MockServer};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn fast_gateway() -> Gateway {
    Gateway::new(GatewayConfig {
        retry_delays: vec![Duration::from_millis(1); 3],
        ..GatewayConfig::default()
    })
    .unwrap()
}

fn spec(url: String, batch_limit: usize) -> ModelSpec {
    ModelSpec {
        id: String::new(),
        name: "mock".into(),
        endpoint_url: url,
        http_method: HttpMethod::Post,
        headers: [("X-Api-Key".to_string(), "sekrit-token-123".to_string())].into(),
        request_template: r#"{"instances": {{SAMPLES}}}"#.into(),
        label_path: "$.predictions[*].label".into(),
        confidence_path: Some("$.predictions[*].confidence".into()),
        batch_limit,
    }
}

fn rows(n: usize) -> Vec<Sample> {
    (0..n)
        .map(|i| {
            let mut m = Map::new();
            m.insert("x".into(), json!(i as f64 / n as f64));
            m.insert("tag".into(), json!(format!("row{i}")));
            Sample::Row(m)
        })
        .collect()
}

fn threshold() -> MockModel {
    MockModel::from_kind("threshold", Map::new()).unwrap()
}

#[test]
fn chunks_by_batch_limit() {
    let server = MockServer::start(threshold(), Faults::default()).unwrap();
    let handle = fast_gateway().handle(spec(server.url(), 10)).unwrap();
    let samples = rows(25);
    let out = handle.predict_batch(&samples);
    assert_eq!(out.len(), 25);
    assert_eq!(server.requests(), 3);
    for (i, o) in out.iter().enumerate() {
        let expected = if i as f64 / 25.0 > 0.5 { "1" } else { "0" };
        assert_eq!(o.as_ref().unwrap().label, expected);
        assert_eq!(o.as_ref().unwrap().confidence, Some(1.0));
    }
    assert!(handle.predict_batch(&[]).is_empty());
    assert_eq!(server.requests(), 3);
}

#[test]
fn failing_chunk_marks_only_its_samples() {
    let faults = Faults {
        fail_when_contains: Some("row12".into()),
        ..Faults::default()
    };
    let server = MockServer::start(threshold(), faults).unwrap();
    let handle = fast_gateway().handle(spec(server.url(), 10)).unwrap();
    let out = handle.predict_batch(&rows(25));
    for (i, o) in out.iter().enumerate() {
        assert_eq!(o.is_err(), (10..20).contains(&i), "sample {i}");
    }
    assert!(out[10].as_ref().unwrap_err().message.contains("500"));
    // chunk 1, chunk 2 with three retries, chunk 3
    assert_eq!(server.requests(), 6);
}

#[test]
fn transient_failures_are_retried() {
    let faults = Faults {
        fail_first: 2,
        ..Faults::default()
    };
    let server = MockServer::start(threshold(), faults).unwrap();
    let handle = fast_gateway().handle(spec(server.url(), 10)).unwrap();
    assert!(handle.predict_batch(&rows(3)).iter().all(|o| o.is_ok()));
    assert_eq!(server.requests(), 3);
}

#[test]
fn client_errors_are_not_retried() {
    let faults = Faults {
        reject_when_contains: Some("row0".into()),
        ..Faults::default()
    };
    let server = MockServer::start(threshold(), faults).unwrap();
    let handle = fast_gateway().handle(spec(server.url(), 10)).unwrap();
    let out = handle.predict_batch(&rows(2));
    assert!(out.iter().all(|o| o.is_err()));
    assert_eq!(server.requests(), 1);
}

#[test]
fn transport_errors_exhaust_retries() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/predict", listener.local_addr().unwrap());
    drop(listener);
    let handle = fast_gateway().handle(spec(url, 4)).unwrap();
    let out = handle.predict_batch(&rows(2));
    assert!(out.iter().all(|o| o.as_ref().unwrap_err().message.contains("transport")));
}

#[test]
fn headers_reach_upstream_but_not_callers() {
    let faults = Faults {
        require_header: Some(["X-Api-Key".into(), "sekrit-token-123".into()]),
        ..Faults::default()
    };
    let server = MockServer::start(threshold(), faults).unwrap();
    let gateway = fast_gateway();
    let handle = gateway.handle(spec(server.url(), 10)).unwrap();
    assert!(handle.predict_batch(&rows(2)).iter().all(|o| o.is_ok()));

    let mut wrong = spec(server.url(), 10);
    wrong.headers.insert("X-Api-Key".into(), "other-secret-456".into());
    let errors = gateway.handle(wrong).unwrap().predict_batch(&rows(1));
    let message = &errors[0].as_ref().unwrap_err().message;
    assert!(message.contains("401"));

    let surfaces = [
        format!("{handle:?}"),
        serde_json::to_string(&handle).unwrap(),
        format!("{gateway:?}"),
        message.clone(),
    ];
    for s in surfaces {
        for secret in ["X-Api-Key", "sekrit-token-123", "other-secret-456"] {
            assert!(!s.contains(secret), "{secret} leaked in {s}");
        }
    }
}

#[test]
fn single_sample_templates_send_one_request_per_sample() {
    let server = MockServer::start(threshold(), Faults::default()).unwrap();
    let mut s = spec(server.url(), 10);
    s.request_template = r#"{"instance": {{SAMPLE}}}"#.into();
    s.label_path = "$.prediction.label".into();
    s.confidence_path = None;
    let out = fast_gateway().handle(s).unwrap().predict_batch(&rows(4));
    assert_eq!(out.len(), 4);
    assert_eq!(server.requests(), 4);
}

#[test]
fn forecasts_travel_as_arrays() {
    let model = MockModel::from_kind("last-value", json!({"horizon": 3}).as_object().unwrap().clone()).unwrap();
    let server = MockServer::start(model, Faults::default()).unwrap();
    let mut s = spec(server.url(), 4);
    s.confidence_path = None;
    let out = fast_gateway()
        .handle(s)
        .unwrap()
        .predict_batch(&[Sample::Series(vec![(0, 1.0), (60, 2.5)])]);
    assert_eq!(out[0].as_ref().unwrap().forecast(), Some(vec![2.5, 2.5, 2.5]));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn order_is_preserved_under_permutation(perm in Just((0..17usize).collect::<Vec<_>>()).prop_shuffle()) {
        let server = MockServer::start(threshold(), Faults::default()).unwrap();
        let handle = fast_gateway().handle(spec(server.url(), 5)).unwrap();
        let base = rows(17);
        let labels = |s: &[Sample]| -> Vec<Value> {
            handle.predict_batch(s).into_iter().map(|o| json!(o.unwrap().label)).collect()
        };
        let straight = labels(&base);
        let permuted: Vec<Sample> = perm.iter().map(|&i| base[i].clone()).collect();
        let expected: Vec<Value> = perm.iter().map(|&i| straight[i].clone()).collect();
        prop_assert_eq!(labels(&permuted), expected);
    }
}
