//! Executes run configurations: one worker thread per selected property.
//!
//! A worker generates cases, persists them, fetches predictions in batches
//! through the gateway, judges each case, persists results and finally the
//! run metrics. Cancellation is checked between batches.

use std::collections::{BTreeMap, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use chrono::Utc;
use probekit_core::ids::new_ids;
use probekit_core::model::{
    CollectionState, PropertyDefinition, Run, RunCollection, RunConfiguration, RunMetric, RunState, StatusSnapshot,
    TestCase, TestResult, Verdict,
};
use probekit_core::repo::Repository;
use probekit_core::testers::{tester_for, Bindings, PropertyTester, SubjectData};
use probekit_core::{CoreError, Outcome, Predictor};
use probekit_gateway::Gateway;
use serde::{Deserialize, Serialize};

use crate::error::{ServiceError, ServiceResult};

/// Cases judged per prediction round trip; cancellation is observed between batches.
pub const CASE_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunStatus {
    pub run_id: String,
    pub property_id: String,
    pub state: RunState,
    pub status: StatusSnapshot,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectionStatus {
    pub collection_id: String,
    pub state: CollectionState,
    pub runs: Vec<RunStatus>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reevaluation {
    pub run_id: String,
    pub cases: usize,
    pub identical: bool,
    /// Cases whose fresh verdict or predictions differ from the stored result.
    pub changed: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CancelOutcome {
    Cancelling,
    AlreadyCancelled,
}

pub struct Orchestrator {
    repo: Repository,
    gateway: Gateway,
    cancel_flags: Mutex<HashMap<String, Arc<AtomicBool>>>,
    start_lock: Mutex<()>,
}

fn bindings(config: &RunConfiguration, run: &Run) -> Bindings {
    Bindings {
        params: run.parameters.clone(),
        data_specific: config.data_specific.clone(),
        generation_limit: config.generation_limit.min(usize::MAX as u64) as usize,
        seed: config.seed,
    }
}

/// Judges a slice of cases from one flat prediction round trip.
fn judge_cases(
    tester: &dyn PropertyTester,
    cases: &[TestCase],
    predictor: &dyn Predictor,
    bind: &Bindings,
) -> Vec<TestResult> {
    let samples: Vec<_> = cases.iter().flat_map(|c| c.samples.iter().cloned()).collect();
    let mut outcomes = predictor.predict_batch(&samples).into_iter();
    cases
        .iter()
        .map(|case| {
            let mine: Vec<Outcome> = outcomes.by_ref().take(case.samples.len()).collect();
            let judgement = if mine.len() == case.samples.len() {
                tester.judge(case, &mine, bind)
            } else {
                probekit_core::testers::Judgement::new(Verdict::Error, "predictor returned too few outcomes")
            };
            TestResult {
                test_case_id: case.id.clone(),
                run_id: case.run_id.clone(),
                predictions: if judgement.verdict == Verdict::Error {
                    mine.into_iter().filter_map(Result::ok).collect()
                } else {
                    mine.into_iter().map(|o| o.expect("judged outcomes are all ok")).collect()
                },
                verdict: judgement.verdict,
                detail: judgement.detail,
            }
        })
        .collect()
}

/// Metric values with their verdicts and recommendation texts; metrics the
/// tester did not produce are recorded as NaN.
pub fn run_metrics(
    def: &PropertyDefinition,
    values: &BTreeMap<String, f64>,
    params: &BTreeMap<String, serde_json::Value>,
) -> BTreeMap<String, RunMetric> {
    def.metric_defs
        .iter()
        .map(|m| {
            let value = values.get(&m.name).copied().unwrap_or(f64::NAN);
            let verdict = def.verdict_for(&m.name, value, params);
            (
                m.name.clone(),
                RunMetric {
                    value,
                    verdict,
                    recommendation: m.recommendations.get(&verdict).cloned().unwrap_or_default(),
                },
            )
        })
        .collect()
}

impl Orchestrator {
    pub fn new(repo: Repository, gateway: Gateway) -> Self {
        Orchestrator {
            repo,
            gateway,
            cancel_flags: Mutex::new(HashMap::new()),
            start_lock: Mutex::new(()),
        }
    }

    pub fn repo(&self) -> &Repository {
        &self.repo
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    /// Starts a collection for a configuration and returns immediately.
    pub fn execute(
        self: &Arc<Self>,
        config_id: &str,
        idempotency_key: Option<&str>,
        force: bool,
    ) -> ServiceResult<RunCollection> {
        let config = self.repo.config(config_id)?;
        let subject = self.repo.subject(&config.test_subject_id)?;
        let model = self.repo.model(&subject.model_id)?;
        let _guard = self.start_lock.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(key) = idempotency_key {
            if let Some(existing) = self
                .repo
                .collections_of(&config.id)
                .into_iter()
                .find(|c| c.idempotency_key.as_deref() == Some(key))
            {
                return Ok(existing);
            }
        }
        let data = self.repo.subject_data(&subject)?;
        if !force {
            self.gateway
                .probe(&model)
                .map_err(|e| ServiceError::Unreachable(e.to_string()))?;
        }
        for p in &config.selected_properties {
            let def = self.repo.property(p)?;
            def.resolve_parameters(config.parameter_values.get(p))?;
        }
        let handle = self.gateway.handle(model).map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let (mut collection, _) = self.repo.create_collection(&config, idempotency_key)?;
        collection.state = CollectionState::Running;
        self.repo.put_collection(&collection)?;

        let flag = Arc::new(AtomicBool::new(false));
        self.cancel_flags
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(collection.id.clone(), flag.clone());

        let runs = self.repo.runs_of(&collection)?;
        let data = Arc::new(data);
        let config = Arc::new(config);
        let predictor: Arc<dyn Predictor> = Arc::new(handle);
        let mut workers = Vec::new();
        for run in runs {
            let me = self.clone();
            let (data, config, predictor, flag) = (data.clone(), config.clone(), predictor.clone(), flag.clone());
            workers.push(thread::spawn(move || {
                let run_id = run.id.clone();
                let outcome = catch_unwind(AssertUnwindSafe(|| {
                    me.run_worker(run, &config, &data, predictor.as_ref(), &flag)
                }));
                let failure = match outcome {
                    Ok(Ok(())) => None,
                    Ok(Err(e)) => Some(e.to_string()),
                    Err(panic) => Some(
                        panic
                            .downcast_ref::<String>()
                            .cloned()
                            .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                            .unwrap_or_else(|| "tester panicked".into()),
                    ),
                };
                if let Some(message) = failure {
                    me.mark_errored(&run_id, message);
                }
            }));
        }

        let me = self.clone();
        let collection_id = collection.id.clone();
        thread::spawn(move || {
            for w in workers {
                let _ = w.join();
            }
            me.finish_collection(&collection_id, &flag);
        });
        Ok(collection)
    }

    fn mark_errored(&self, run_id: &str, message: String) {
        if let Ok(mut run) = self.repo.run(run_id) {
            run.state = RunState::Errored;
            run.error = Some(message);
            if let Ok(s) = self.repo.compute_status_snapshot(run_id) {
                run.status = s;
            }
            let _ = self.repo.put_run(&run);
        }
    }

    fn finish_collection(&self, collection_id: &str, flag: &AtomicBool) {
        let Ok(mut collection) = self.repo.collection(collection_id) else {
            return;
        };
        let runs = self.repo.runs_of(&collection).unwrap_or_default();
        collection.state = if flag.load(Ordering::SeqCst) {
            CollectionState::Cancelled
        } else if !runs.is_empty() && runs.iter().all(|r| r.state == RunState::Errored) {
            CollectionState::Errored
        } else {
            CollectionState::Completed
        };
        collection.finished_at = Some(Utc::now());
        let _ = self.repo.put_collection(&collection);
        self.cancel_flags
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(collection_id);
    }

    fn run_worker(
        &self,
        mut run: Run,
        config: &RunConfiguration,
        data: &SubjectData,
        predictor: &dyn Predictor,
        cancel: &AtomicBool,
    ) -> ServiceResult<()> {
        let def = self.repo.property(&run.property_id)?;
        let tester = tester_for(&run.property_id).ok_or_else(|| {
            CoreError::invalid(format!("no tester is installed for property {}", run.property_id))
        })?;
        let bind = bindings(config, &run);
        run.state = RunState::Running;
        self.repo.put_run(&run)?;

        let generated = tester.generate(data, &bind, predictor)?;
        run.warnings.extend(generated.notes.iter().cloned());
        if let Some(reason) = generated.inapplicable {
            run.warnings.push(format!("property not applicable: {reason}"));
            run.run_metrics = run_metrics(&def, &BTreeMap::new(), &run.parameters);
            run.state = RunState::Completed;
            self.repo.put_run(&run)?;
            return Ok(());
        }
        let ids = new_ids(generated.cases.len());
        let cases: Vec<TestCase> = generated
            .cases
            .into_iter()
            .zip(ids)
            .map(|(draft, id)| draft.into_case(id, run.id.clone()))
            .collect();
        self.repo.put_cases(&run.project_id, &cases)?;
        run.status.generated = cases.len() as u64;
        self.repo.put_run(&run)?;

        let mut results = Vec::with_capacity(cases.len());
        for batch in cases.chunks(CASE_BATCH) {
            if cancel.load(Ordering::SeqCst) {
                run.state = RunState::Cancelled;
                run.status = self.repo.compute_status_snapshot(&run.id)?;
                self.repo.put_run(&run)?;
                return Ok(());
            }
            let judged = judge_cases(tester.as_ref(), batch, predictor, &bind);
            self.repo.put_results(&run.project_id, &judged)?;
            results.extend(judged);
            run.status = self.repo.compute_status_snapshot(&run.id)?;
            self.repo.put_run(&run)?;
        }

        let values = tester.metrics(&cases, &results, &bind);
        run.run_metrics = run_metrics(&def, &values, &run.parameters);
        run.status = self.repo.compute_status_snapshot(&run.id)?;
        run.state = RunState::Completed;
        self.repo.put_run(&run)?;
        Ok(())
    }

    pub fn status(&self, collection_id: &str) -> ServiceResult<CollectionStatus> {
        let collection = self.repo.collection(collection_id)?;
        let runs = self
            .repo
            .runs_of(&collection)?
            .into_iter()
            .map(|r| {
                Ok(RunStatus {
                    status: self.repo.compute_status_snapshot(&r.id)?,
                    run_id: r.id,
                    property_id: r.property_id,
                    state: r.state,
                    error: r.error,
                })
            })
            .collect::<ServiceResult<Vec<_>>>()?;
        Ok(CollectionStatus {
            collection_id: collection.id,
            state: collection.state,
            runs,
        })
    }

    /// Requests cooperative cancellation; cancelling twice is acknowledged.
    pub fn cancel(&self, collection_id: &str) -> ServiceResult<CancelOutcome> {
        let collection = self.repo.collection(collection_id)?;
        let flags = self.cancel_flags.lock().unwrap_or_else(|e| e.into_inner());
        match flags.get(collection_id) {
            Some(flag) => {
                let before = flag.swap(true, Ordering::SeqCst);
                Ok(if before {
                    CancelOutcome::AlreadyCancelled
                } else {
                    CancelOutcome::Cancelling
                })
            }
            None if collection.state == CollectionState::Cancelled => Ok(CancelOutcome::AlreadyCancelled),
            None => Err(ServiceError::Core(CoreError::Conflict(format!(
                "collection is terminal ({:?})",
                collection.state
            )))),
        }
    }

    /// Blocks until the collection reaches a terminal state or the timeout passes.
    pub fn wait(&self, collection_id: &str, timeout: Duration) -> ServiceResult<CollectionStatus> {
        let deadline = Instant::now() + timeout;
        loop {
            let status = self.status(collection_id)?;
            if status.state.is_terminal() || Instant::now() >= deadline {
                return Ok(status);
            }
            thread::sleep(Duration::from_millis(20));
        }
    }

    /// Re-judges stored cases against fresh predictions without storing anything.
    pub fn reevaluate(&self, run_id: &str) -> ServiceResult<Reevaluation> {
        let run = self.repo.run(run_id)?;
        let collection = self.repo.collection(&run.run_collection_id)?;
        let config = self.repo.config(&collection.run_configuration_id)?;
        let subject = self.repo.subject(&config.test_subject_id)?;
        let handle = self
            .gateway
            .handle(self.repo.model(&subject.model_id)?)
            .map_err(|e| ServiceError::Invalid(e.to_string()))?;
        let tester = tester_for(&run.property_id)
            .ok_or_else(|| CoreError::invalid(format!("no tester is installed for property {}", run.property_id)))?;
        let bind = bindings(&config, &run);
        let stored: BTreeMap<String, TestResult> = self
            .repo
            .results(run_id)
            .into_iter()
            .map(|r| (r.test_case_id.clone(), r))
            .collect();
        let cases: Vec<TestCase> = self
            .repo
            .cases(run_id)
            .into_iter()
            .filter(|c| stored.contains_key(&c.id))
            .collect();
        let mut changed = Vec::new();
        for batch in cases.chunks(CASE_BATCH) {
            for fresh in judge_cases(tester.as_ref(), batch, &handle, &bind) {
                if stored.get(&fresh.test_case_id) != Some(&fresh) {
                    changed.push(fresh.test_case_id);
                }
            }
        }
        Ok(Reevaluation {
            run_id: run_id.to_string(),
            cases: cases.len(),
            identical: changed.is_empty(),
            changed,
        })
    }

    /// Recomputes and stores run metrics from stored cases and results
    /// using the property's current definition.
    pub fn recompute_metrics(&self, run_id: &str) -> ServiceResult<Run> {
        let mut run = self.repo.run(run_id)?;
        let collection = self.repo.collection(&run.run_collection_id)?;
        let config = self.repo.config(&collection.run_configuration_id)?;
        let def = self.repo.property(&run.property_id)?;
        let tester = tester_for(&run.property_id)
            .ok_or_else(|| CoreError::invalid(format!("no tester is installed for property {}", run.property_id)))?;
        let bind = bindings(&config, &run);
        let values = tester.metrics(&self.repo.cases(run_id), &self.repo.results(run_id), &bind);
        run.run_metrics = run_metrics(&def, &values, &run.parameters);
        self.repo.put_run(&run)?;
        Ok(run)
    }
}
