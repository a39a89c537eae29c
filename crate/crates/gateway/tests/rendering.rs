use probekit_core::model::{HttpMethod, ModelSpec};
use probekit_core::Sample;
use probekit_gateway::{extract_predictions, render_request, JsonPath};
use proptest::prelude::*;
use serde_json::{json, Map, Value};

fn spec(limit: usize) -> ModelSpec {
    ModelSpec {
        id: String::new(),
        name: "m".into(),
        endpoint_url: "http://127.0.0.1:1".into(),
        http_method: HttpMethod::Post,
        headers: Default::default(),
        request_template: r#"{"instances": {{SAMPLES}}}"#.into(),
        label_path: "$.predictions[*]".into(),
        confidence_path: None,
        batch_limit: limit,
    }
}

fn sample_strategy() -> impl Strategy<Value = Sample> {
    (any::<i32>(), "[a-z\"\\\\ ]{0,6}", prop::bool::ANY).prop_map(|(a, b, c)| {
        let mut m = Map::new();
        m.insert("a".into(), json!(a));
        m.insert("b".into(), json!(b));
        m.insert("c".into(), json!(c));
        Sample::Row(m)
    })
}

proptest! {
    #[test]
    fn rendering_is_injective(x in prop::collection::vec(sample_strategy(), 1..5),
                              y in prop::collection::vec(sample_strategy(), 1..5)) {
        let s = spec(8);
        let bx = render_request(&s, &x).unwrap();
        let by = render_request(&s, &y).unwrap();
        prop_assert_eq!(x == y, bx == by);
        let parsed: Value = serde_json::from_str(&bx).unwrap();
        prop_assert_eq!(parsed["instances"].as_array().unwrap().len(), x.len());
    }

    #[test]
    fn extraction_is_exact_or_error(n in 0usize..6, expected in 0usize..6) {
        let body = json!({"predictions": (0..n).map(|i| format!("l{i}")).collect::<Vec<_>>()}).to_string();
        match extract_predictions(&body, &spec(8), expected) {
            Ok(p) => prop_assert!(p.len() == expected && n == expected),
            Err(e) => {
                prop_assert!(n != expected);
                prop_assert!(e.to_string().contains("cardinality mismatch"));
            }
        }
    }

    #[test]
    fn wildcard_selects_every_element(items in prop::collection::vec(any::<i64>(), 0..10)) {
        let doc = json!({"xs": items.clone()});
        let got: Vec<i64> = JsonPath::parse("$.xs[*]").unwrap().select(&doc).iter().map(|v| v.as_i64().unwrap()).collect();
        prop_assert_eq!(got, items);
    }
}
