mod common;

use std::time::Duration;

use probekit_gateway::{Faults, MockModel, MockServer};
use serde_json::{json, Map, Value};

use common::*;

struct Fixture {
    _dir: tempfile::TempDir,
    _model: MockServer,
    server: probekit_service::ApiServer,
    api: Api,
    project: String,
    subject: String,
}

fn fixture(faults: Faults) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let model = MockServer::start(MockModel::from_kind("planted-bias", Map::new()).unwrap(), faults).unwrap();
    let server = start_api(&dir.path().join("store"));
    let api = Api::new(&server.url());
    let (code, project, _) = api.post("/projects", &json!({"name": "p"}));
    assert_eq!(code, 201);
    let project = project["id"].as_str().unwrap().to_string();
    let (code, subject, text) = api.post(
        &format!("/projects/{project}/subjects"),
        &json!({
            "modality": "tabular",
            "model": model_body("m", &model.url(), json!({"authorization": "Bearer hidden-token"})),
            "training": {"file_name": "t.csv", "content": tabular_csv(120, 1)},
        }),
    );
    assert_eq!(code, 201, "{text}");
    Fixture {
        subject: subject["id"].as_str().unwrap().to_string(),
        _dir: dir,
        _model: model,
        server,
        api,
        project,
    }
}

fn config(f: &Fixture, properties: &[&str], limit: u64) -> String {
    let (code, c, text) = f.api.post(
        &format!("/subjects/{}/configs", f.subject),
        &json!({
            "selected_properties": properties,
            "data_specific": {
                "protected_attributes": ["protected"],
                "favorable_label": "favorable",
                "minority_group": "protected == \"B\"",
            },
            "generation_limit": limit,
            "seed": 3,
        }),
    );
    assert_eq!(code, 201, "{text}");
    c["id"].as_str().unwrap().to_string()
}

fn run(f: &Fixture, config: &str, body: Value) -> Value {
    let (code, c, text) = f.api.post(&format!("/configs/{config}/run"), &body);
    assert_eq!(code, 202, "{text}");
    c
}

#[test]
fn health_and_catalog() {
    let f = fixture(Faults::default());
    let (code, h, _) = f.api.get("/health");
    assert_eq!(code, 200);
    assert_eq!(h["status"], "ok");
    let (_, props, _) = f.api.get("/properties");
    let ids: Vec<&str> = props.as_array().unwrap().iter().map(|p| p["id"].as_str().unwrap()).collect();
    assert_eq!(ids.len(), 9);
    assert!(ids.contains(&"group-discrimination") && ids.contains(&"unordered-data"));
}

#[test]
fn errors_carry_code_and_status() {
    let f = fixture(Faults::default());
    let (code, body, _) = f.api.get("/runs/nope/metrics");
    assert_eq!(code, 404);
    assert_eq!(body["code"], "not_found");
    assert!(body["message"].is_string());

    let (code, body, _) = f.api.post("/projects", &json!({"name": "p"}));
    assert_eq!(code, 409);
    assert_eq!(body["code"], "duplicate");

    let (code, body, _) = f.api.post(
        &format!("/subjects/{}/configs", f.subject),
        &json!({"selected_properties": ["no-such-property"]}),
    );
    assert!(code == 400 || code == 404, "{code}");
    assert!(body["code"].is_string());

    let (code, body, _) = f.api.post(
        &format!("/subjects/{}/configs", f.subject),
        &json!({"selected_properties": ["typo-sensitivity"]}),
    );
    assert_eq!(code, 400, "text property on a tabular subject: {body}");

    let (code, body, _) = f.api.post(
        &format!("/projects/{}/subjects", f.project),
        &json!({
            "modality": "tabular",
            "model": model_body("x", "http://127.0.0.1:9/predict", json!({})),
            "training": {"file_name": "t.csv", "content": "a,b\n1\n"},
        }),
    );
    assert_eq!(code, 422, "{body}");
    assert_eq!(body["code"], "bad_data");

    let (code, body, _) = f.api.post(&format!("/subjects/{}/configs", f.subject), &json!({"seed": "x"}));
    assert_eq!(code, 400);
    assert_eq!(body["code"], "invalid_body");
}

#[test]
fn subject_view_hides_header_values() {
    let f = fixture(Faults::default());
    for path in [format!("/subjects/{}", f.subject), format!("/projects/{}/subjects", f.project)] {
        let (code, _, text) = f.api.get(&path);
        assert_eq!(code, 200);
        assert!(!text.contains("hidden-token"), "{path}");
        assert!(text.contains("authorization"), "{path}");
    }
}

#[test]
fn unreachable_model_is_refused_unless_forced() {
    let f = fixture(Faults::default());
    let (_, s, _) = f.api.post(
        &format!("/projects/{}/subjects", f.project),
        &json!({
            "modality": "tabular",
            "model": model_body("gone", "http://127.0.0.1:9/predict", json!({})),
            "training": {"file_name": "t.csv", "content": tabular_csv(40, 2)},
        }),
    );
    let sid = s["id"].as_str().unwrap();
    let (_, c, _) = f.api.post(
        &format!("/subjects/{sid}/configs"),
        &json!({"selected_properties": ["correctness"], "generation_limit": 10}),
    );
    let cfg = c["id"].as_str().unwrap();
    let (code, body, _) = f.api.post(&format!("/configs/{cfg}/run"), &json!({}));
    assert_eq!(code, 502);
    assert_eq!(body["code"], "model_unreachable");

    let c = run(&f, cfg, json!({"force": true}));
    let status = f.api.wait(c["id"].as_str().unwrap(), Duration::from_secs(60));
    let r = &status["runs"][0];
    assert_eq!(r["status"]["errored"], r["status"]["generated"]);
    assert!(snapshot_consistent(&r["status"]));
}

#[test]
fn idempotency_key_returns_the_same_collection() {
    let f = fixture(Faults::default());
    let cfg = config(&f, &["correctness"], 30);
    let a = run(&f, &cfg, json!({"idempotency_key": "k1"}));
    let b = run(&f, &cfg, json!({"idempotency_key": "k1"}));
    assert_eq!(a["id"], b["id"]);
    let c = run(&f, &cfg, json!({}));
    assert_ne!(a["id"], c["id"]);
    f.api.wait(a["id"].as_str().unwrap(), Duration::from_secs(60));
    f.api.wait(c["id"].as_str().unwrap(), Duration::from_secs(60));
    let (_, list, _) = f.api.get(&format!("/configs/{cfg}/collections"));
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[test]
fn completed_run_reports_metrics_grid_and_failures() {
    let f = fixture(Faults::default());
    let cfg = config(&f, &["individual-discrimination", "group-discrimination", "correctness"], 80);
    let c = run(&f, &cfg, json!({}));
    let status = f.api.wait(c["id"].as_str().unwrap(), Duration::from_secs(60));
    assert_eq!(status["state"], "completed");
    for r in status["runs"].as_array().unwrap() {
        let id = r["run_id"].as_str().unwrap();
        let (code, report, _) = f.api.get(&format!("/runs/{id}/metrics"));
        assert_eq!(code, 200);
        assert!(!report["metrics"].as_array().unwrap().is_empty());
        assert!(report["explanation"].as_str().unwrap().contains("cases executed"));
        let grid = &report["grid"];
        assert!(grid.is_object(), "{}", r["property_id"]);
        for row in grid["values"].as_array().unwrap() {
            let total: f64 = row.as_array().unwrap().iter().filter_map(Value::as_f64).sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
        let (_, re, _) = f.api.post(&format!("/runs/{id}/reevaluate"), &json!({}));
        assert_eq!(re["identical"], true);
    }

    let individual = status["runs"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["property_id"] == "individual-discrimination")
        .unwrap();
    let id = individual["run_id"].as_str().unwrap();
    let failed = individual["status"]["failed"].as_u64().unwrap() as usize;
    assert!(failed > 0, "the planted bias must produce flips");
    let (_, page, _) = f.api.get(&format!("/runs/{id}/failures?offset=1&limit=3"));
    assert_eq!(page["total"].as_u64().unwrap() as usize, failed);
    assert_eq!(page["offset"], 1);
    let items = page["items"].as_array().unwrap();
    assert_eq!(items.len(), 3.min(failed - 1));
    for item in items {
        assert_eq!(item["differing_columns"], json!(["protected"]));
        let p = item["predictions"].as_array().unwrap();
        assert_ne!(p[0], p[1]);
    }
}

#[test]
fn compare_lists_one_cell_per_collection() {
    let f = fixture(Faults::default());
    let one = config(&f, &["correctness"], 40);
    let two = config(&f, &["correctness", "group-discrimination"], 40);
    let a = run(&f, &one, json!({}));
    let b = run(&f, &two, json!({}));
    let (a, b) = (a["id"].as_str().unwrap(), b["id"].as_str().unwrap());
    f.api.wait(a, Duration::from_secs(60));
    f.api.wait(b, Duration::from_secs(60));
    let (code, report, text) = f.api.get(&format!("/projects/{}/compare?collections={a},{b}", f.project));
    assert_eq!(code, 200, "{text}");
    let rows = report["rows"].as_array().unwrap();
    let accuracy = rows.iter().find(|r| r["metric"] == "accuracy").unwrap();
    assert_eq!(accuracy["cells"].as_array().unwrap().len(), 2);
    assert_eq!(accuracy["cells"][0]["status"], "metric");
    let di = rows.iter().find(|r| r["metric"] == "disparate_impact").unwrap();
    assert_eq!(di["cells"][0]["status"], "not-run");
    assert_eq!(di["cells"][1]["status"], "metric");

    let (code, _, _) = f.api.get(&format!("/projects/{}/compare?collections=missing", f.project));
    assert_eq!(code, 404);
}

#[test]
fn cancel_stops_a_slow_run_and_is_idempotent() {
    let f = fixture(Faults {
        delay_ms: 150,
        ..Faults::default()
    });
    let cfg = config(&f, &["individual-discrimination"], 120);
    let c = run(&f, &cfg, json!({}));
    let id = c["id"].as_str().unwrap();
    std::thread::sleep(Duration::from_millis(200));
    let (code, first, _) = f.api.delete(&format!("/collections/{id}"));
    assert_eq!(code, 202);
    assert_eq!(first["outcome"], "cancelling");
    let (code, second, _) = f.api.delete(&format!("/collections/{id}"));
    assert_eq!(code, 202);
    assert_eq!(second["outcome"], "already-cancelled");

    let status = f.api.wait(id, Duration::from_secs(60));
    assert_eq!(status["state"], "cancelled");
    let r = &status["runs"][0];
    assert!(snapshot_consistent(&r["status"]));
    assert!(r["status"]["executed"].as_u64() < r["status"]["generated"].as_u64());

    let (code, again, _) = f.api.delete(&format!("/collections/{id}"));
    assert_eq!(code, 202);
    assert_eq!(again["outcome"], "already-cancelled");
}

#[test]
fn cancelling_a_finished_collection_conflicts() {
    let f = fixture(Faults::default());
    let cfg = config(&f, &["correctness"], 20);
    let c = run(&f, &cfg, json!({}));
    let id = c["id"].as_str().unwrap();
    f.api.wait(id, Duration::from_secs(60));
    let (code, body, _) = f.api.delete(&format!("/collections/{id}"));
    assert_eq!(code, 409);
    assert_eq!(body["code"], "conflict");
}

#[test]
fn transient_upstream_failures_are_retried() {
    let f = fixture(Faults {
        fail_first: 2,
        ..Faults::default()
    });
    let cfg = config(&f, &["correctness"], 30);
    let c = run(&f, &cfg, json!({"force": true}));
    let status = f.api.wait(c["id"].as_str().unwrap(), Duration::from_secs(60));
    assert_eq!(status["runs"][0]["status"]["errored"], 0);
}

#[test]
fn deleting_a_project_removes_it() {
    let f = fixture(Faults::default());
    let (code, _, _) = f.api.delete(&format!("/projects/{}", f.project));
    assert_eq!(code, 204);
    let (code, _, _) = f.api.get(&format!("/projects/{}", f.project));
    assert_eq!(code, 404);
    let (code, _, _) = f.api.get(&format!("/subjects/{}", f.subject));
    assert_eq!(code, 404);
    drop(f.server);
}
