use std::collections::BTreeMap;
use std::sync::Arc;

use probekit_core::model::{DataKind, Modality, ModelSpec, Run, RunState, TestCase, TestResult, Verdict};
use probekit_core::repo::{ComparisonCell, DataUpload, NewConfig, Repository};
use probekit_core::store::FileStore;
use probekit_core::testers::SubjectData;
use probekit_core::{CoreError, Prediction, Sample};
use serde_json::json;

fn repo(dir: &std::path::Path) -> Repository {
    let repo = Repository::new(Arc::new(FileStore::open(dir).unwrap()));
    repo.ensure_builtin_properties().unwrap();
    repo
}

fn spec(name: &str) -> ModelSpec {
    serde_json::from_value(json!({
        "name": name,
        "endpoint_url": "http://127.0.0.1:1/predict",
        "headers": {"x-key": "secret-value"},
        "request_template": "{\"instances\": {{SAMPLES}}}",
        "label_path": "$.predictions[*].label",
    }))
    .unwrap()
}

fn training(content: &str) -> DataUpload {
    DataUpload {
        kind: DataKind::Training,
        file_name: "train.csv".into(),
        format: None,
        content: content.into(),
    }
}

const CSV: &str = "g,x,label\nA,1,yes\nB,2,no\nA,3,yes\n";

fn config(repo: &Repository, subject: &str, properties: &[&str]) -> probekit_core::model::RunConfiguration {
    repo.create_config(
        subject,
        NewConfig {
            selected_properties: properties.iter().map(|s| s.to_string()).collect(),
            parameter_values: BTreeMap::new(),
            data_specific: json!({"protected_attributes": ["g"]}).as_object().unwrap().clone(),
            generation_limit: 10,
            seed: 0,
        },
    )
    .unwrap()
}

fn case(run: &Run, n: usize) -> TestCase {
    TestCase {
        id: format!("{}-{n:04}", run.id),
        run_id: run.id.clone(),
        samples: vec![Sample::Row(json!({"x": n}).as_object().unwrap().clone())],
        reference: json!({"gold": "yes"}),
        role_tags: vec!["original".into()],
    }
}

fn result(c: &TestCase, verdict: Verdict) -> TestResult {
    TestResult {
        test_case_id: c.id.clone(),
        run_id: c.run_id.clone(),
        predictions: vec![Prediction::label("yes")],
        verdict,
        detail: String::new(),
    }
}

#[test]
fn registration_persists_across_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let (pid, sid) = {
        let r = repo(dir.path());
        let p = r.create_project("alpha").unwrap();
        let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
        (p.id, s.id)
    };
    let r = repo(dir.path());
    assert_eq!(r.properties().len(), 9);
    let s = r.subject(&sid).unwrap();
    assert_eq!(s.project_id, pid);
    assert_eq!(r.project(&pid).unwrap().test_subjects, [sid]);
    assert_eq!(s.data_refs[0].row_count, 3);
    assert_eq!(r.model(&s.model_id).unwrap().headers["x-key"], "secret-value");
    match r.subject_data(&s).unwrap() {
        SubjectData::Tabular { training, labeled_eval } => {
            assert_eq!(training.headers, ["g", "x", "label"]);
            assert!(labeled_eval.is_none());
        }
        other => panic!("unexpected data {other:?}"),
    }
}

#[test]
fn registration_rejects_duplicates_and_bad_input() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    assert!(matches!(r.create_project("alpha"), Err(CoreError::Duplicate(_))));
    assert!(matches!(r.create_project("  "), Err(CoreError::Invalid(_))));
    r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    assert!(matches!(
        r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)),
        Err(CoreError::Duplicate(_))
    ));
    assert!(matches!(
        r.register_test_subject(&p.id, Modality::Tabular, spec("empty"), &training("g,x\n")),
        Err(CoreError::Data(_))
    ));
    let mut bad = spec("bad");
    bad.request_template = "{}".into();
    assert!(r.register_test_subject(&p.id, Modality::Tabular, bad, &training(CSV)).is_err());
    assert!(matches!(
        r.register_test_subject("missing", Modality::Tabular, spec("z"), &training(CSV)),
        Err(CoreError::NotFound { .. })
    ));
}

#[test]
fn configs_validate_properties_and_bind_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let c = config(&r, &s.id, &["correctness"]);
    assert!(c.parameter_values.contains_key("correctness"));

    let attempt = |props: Vec<&str>, data: serde_json::Value, limit: u64| {
        r.create_config(
            &s.id,
            NewConfig {
                selected_properties: props.into_iter().map(String::from).collect(),
                parameter_values: BTreeMap::new(),
                data_specific: data.as_object().unwrap().clone(),
                generation_limit: limit,
                seed: 0,
            },
        )
    };
    assert!(attempt(vec!["typo-sensitivity"], json!({}), 10).is_err());
    assert!(attempt(vec!["correctness", "correctness"], json!({}), 10).is_err());
    assert!(attempt(vec!["correctness"], json!({}), 0).is_err());
    assert!(attempt(vec!["group-discrimination"], json!({}), 10).is_err());
    assert!(attempt(
        vec!["group-discrimination"],
        json!({"protected_attributes": ["g"], "favorable_label": "yes", "minority_group": "g =="}),
        10
    )
    .is_err());
    assert!(attempt(
        vec!["group-discrimination"],
        json!({"protected_attributes": ["g"], "favorable_label": "yes", "minority_group": "g == B"}),
        10
    )
    .is_ok());
}

#[test]
fn collections_are_idempotent_per_key() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let c = config(&r, &s.id, &["correctness", "individual-discrimination"]);
    let (a, fresh) = r.create_collection(&c, Some("k")).unwrap();
    assert!(fresh);
    let (b, fresh) = r.create_collection(&c, Some("k")).unwrap();
    assert!(!fresh);
    assert_eq!(a.id, b.id);
    let (d, _) = r.create_collection(&c, None).unwrap();
    assert_ne!(a.id, d.id);
    let runs = r.runs_of(&a).unwrap();
    assert_eq!(runs.len(), 2);
    assert!(runs.iter().all(|run| run.state == RunState::Pending));
    assert_eq!(r.collections_of(&c.id).len(), 2);
}

#[test]
fn status_snapshot_follows_results() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let c = config(&r, &s.id, &["correctness"]);
    let (col, _) = r.create_collection(&c, None).unwrap();
    let run = r.runs_of(&col).unwrap().remove(0);
    let cases: Vec<TestCase> = (0..6).map(|n| case(&run, n)).collect();
    r.put_cases(&p.id, &cases).unwrap();
    let verdicts = [Verdict::Pass, Verdict::Fail, Verdict::Error, Verdict::Fail];
    let results: Vec<TestResult> = cases.iter().zip(verdicts).map(|(c, v)| result(c, v)).collect();
    r.put_results(&p.id, &results).unwrap();

    let snap = r.compute_status_snapshot(&run.id).unwrap();
    assert_eq!((snap.generated, snap.executed, snap.passed, snap.failed, snap.errored), (6, 4, 1, 2, 1));
    assert!(snap.is_consistent());

    // A later result for the same case replaces the earlier one.
    r.put_results(&p.id, &[result(&cases[1], Verdict::Pass)]).unwrap();
    let snap = r.compute_status_snapshot(&run.id).unwrap();
    assert_eq!((snap.executed, snap.passed, snap.failed), (4, 2, 1));

    let (total, page) = r.failures(&run.id, 0, 10).unwrap();
    assert_eq!(total, 1);
    assert_eq!(page[0].0.id, cases[3].id);
}

#[test]
fn comparison_marks_missing_properties() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let one = config(&r, &s.id, &["correctness"]);
    let (a, _) = r.create_collection(&one, None).unwrap();
    let two = config(&r, &s.id, &["correctness", "individual-discrimination"]);
    let (b, _) = r.create_collection(&two, None).unwrap();

    let def = r.property("correctness").unwrap();
    for (col, accuracy) in [(&a, 0.5), (&b, 0.75)] {
        for mut run in r.runs_of(col).unwrap() {
            let values = BTreeMap::from([("accuracy".to_string(), accuracy)]);
            for (name, v) in values {
                run.run_metrics.insert(
                    name.clone(),
                    probekit_core::model::RunMetric {
                        value: v,
                        verdict: def.verdict_for(&name, v, &run.parameters),
                        recommendation: String::new(),
                    },
                );
            }
            run.state = RunState::Completed;
            r.put_run(&run).unwrap();
        }
    }
    let report = r.compare_collections(&[b.id.clone(), a.id.clone()]).unwrap();
    assert_eq!(report.collections, [a.id.clone(), b.id.clone()]);
    let acc = report.rows.iter().find(|row| row.metric == "accuracy").unwrap();
    assert_eq!(acc.best, Some(1));
    let flips = report
        .rows
        .iter()
        .find(|row| row.property_id == "individual-discrimination")
        .unwrap();
    assert_eq!(flips.cells[0], ComparisonCell::NotRun);

    let other = r.create_project("beta").unwrap();
    let s2 = r.register_test_subject(&other.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let (c, _) = r.create_collection(&config(&r, &s2.id, &["correctness"]), None).unwrap();
    assert!(r.compare_collections(&[a.id.clone(), c.id]).is_err());
    assert!(r.compare_collections(&[]).is_err());
}

#[test]
fn deleting_a_project_removes_its_records() {
    let dir = tempfile::tempdir().unwrap();
    let r = repo(dir.path());
    let p = r.create_project("alpha").unwrap();
    let keep = r.create_project("beta").unwrap();
    let s = r.register_test_subject(&p.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    r.register_test_subject(&keep.id, Modality::Tabular, spec("m"), &training(CSV)).unwrap();
    let c = config(&r, &s.id, &["correctness"]);
    r.delete_project(&p.id).unwrap();
    assert!(r.project(&p.id).is_err());
    assert!(r.subject(&s.id).is_err());
    assert!(r.config(&c.id).is_err());
    assert_eq!(r.subjects(&keep.id).len(), 1);
    assert_eq!(r.properties().len(), 9);
}
