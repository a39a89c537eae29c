//! Typed access to the record store: registration, configuration, run
//! bookkeeping, status aggregation and run comparison.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use chrono::Utc;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{parse_csv_table, parse_text_lines, parse_timeseries, sniff};
use crate::error::{CoreError, Result};
use crate::ids::new_id;
use crate::model::{
    CollectionState, DataFormat, DataKind, DataRef, Direction, MetricVerdict, Modality, ModelSpec, Project,
    PropertyDefinition, Run, RunCollection, RunConfiguration, RunState, StatusSnapshot, TestCase, TestResult,
    TestSubject, Verdict,
};
use crate::store::{Kind, Record, RecordStore};
use crate::testers::SubjectData;

/// A data file handed over at registration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataUpload {
    pub kind: DataKind,
    pub file_name: String,
    #[serde(default)]
    pub format: Option<DataFormat>,
    pub content: String,
}

pub const DEFAULT_GENERATION_LIMIT: u64 = 100;

fn default_generation_limit() -> u64 {
    DEFAULT_GENERATION_LIMIT
}

/// Fields of a run configuration chosen by the user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NewConfig {
    pub selected_properties: Vec<String>,
    #[serde(default)]
    pub parameter_values: BTreeMap<String, BTreeMap<String, Value>>,
    #[serde(default)]
    pub data_specific: Map<String, Value>,
    #[serde(default = "default_generation_limit")]
    pub generation_limit: u64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum ComparisonCell {
    Metric {
        #[serde(with = "crate::float_repr")]
        value: f64,
        verdict: MetricVerdict,
    },
    NotRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub property_id: String,
    pub metric: String,
    pub better: Direction,
    /// One cell per compared collection, in report order.
    pub cells: Vec<ComparisonCell>,
    /// Index of the best collection by the metric's direction, if any.
    pub best: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub project_id: String,
    /// Collection ids ordered by start time.
    pub collections: Vec<String>,
    pub rows: Vec<ComparisonRow>,
}

#[derive(Clone)]
pub struct Repository {
    store: Arc<dyn RecordStore>,
}

fn put_one<T: Serialize>(
    store: &dyn RecordStore,
    kind: Kind,
    id: &str,
    project_id: &str,
    parent: Option<&str>,
    body: &T,
) -> Result<()> {
    store.put(kind, &[Record::new(id, project_id, parent.map(str::to_string), body)?])
}

fn decode<T: for<'de> Deserialize<'de>>(record: Option<Record>, kind: &'static str, id: &str) -> Result<T> {
    record.ok_or_else(|| CoreError::not_found(kind, id))?.decode()
}

fn better_of(direction: Direction, a: f64, b: f64) -> bool {
    match direction {
        Direction::Higher => a > b,
        Direction::Lower => a < b,
        Direction::TowardOne => (a - 1.0).abs() < (b - 1.0).abs(),
        Direction::TowardZero => a.abs() < b.abs(),
        Direction::Neutral => false,
    }
}

impl Repository {
    pub fn new(store: Arc<dyn RecordStore>) -> Self {
        Repository { store }
    }

    pub fn store(&self) -> &dyn RecordStore {
        self.store.as_ref()
    }

    // ------------------------------------------------------------ projects

    pub fn create_project(&self, name: &str) -> Result<Project> {
        if name.trim().is_empty() {
            return Err(CoreError::invalid("project name must not be empty"));
        }
        if self.store.projects().iter().any(|p| p.name == name) {
            return Err(CoreError::Duplicate(format!("project name {name:?} exists")));
        }
        let project = Project {
            id: new_id(),
            name: name.to_string(),
            test_subjects: Vec::new(),
            created_at: Utc::now(),
        };
        self.store.put_project(&project)?;
        Ok(project)
    }

    pub fn project(&self, id: &str) -> Result<Project> {
        self.store.project(id).ok_or_else(|| CoreError::not_found("project", id))
    }

    pub fn projects(&self) -> Vec<Project> {
        self.store.projects()
    }

    pub fn delete_project(&self, id: &str) -> Result<()> {
        self.store.delete_project(id)
    }

    // ------------------------------------------------------------ subjects

    fn store_data(&self, project_id: &str, upload: &DataUpload, modality: Modality) -> Result<(DataRef, Vec<String>)> {
        let format = upload.format.unwrap_or(modality.default_format());
        let (row_count, columns) = sniff(format, upload.content.as_bytes())?;
        if row_count == 0 {
            return Err(CoreError::Data("empty training data".into()));
        }
        let id = new_id();
        let location = self.store.save_data(
            project_id,
            &format!("{id}_{}", upload.file_name),
            upload.content.as_bytes(),
        )?;
        Ok((
            DataRef {
                id,
                kind: upload.kind,
                format,
                location,
                row_count,
            },
            columns,
        ))
    }

    /// Registers a model with its training data as a new test subject.
    pub fn register_test_subject(
        &self,
        project_id: &str,
        modality: Modality,
        mut model: ModelSpec,
        training: &DataUpload,
    ) -> Result<TestSubject> {
        let mut project = self.project(project_id)?;
        model.validate()?;
        if training.kind != DataKind::Training {
            return Err(CoreError::invalid("registration needs training data"));
        }
        if self.models(project_id).iter().any(|m| m.name == model.name) {
            return Err(CoreError::Duplicate(format!(
                "model name {:?} already registered in project",
                model.name
            )));
        }
        let (data_ref, columns) = self.store_data(project_id, training, modality)?;
        model.id = new_id();
        let subject = TestSubject {
            id: new_id(),
            project_id: project_id.to_string(),
            modality,
            model_id: model.id.clone(),
            data_refs: vec![data_ref],
            data_properties: Map::from_iter([(
                "columns".to_string(),
                Value::from(columns),
            )]),
        };
        put_one(self.store(), Kind::Models, &model.id, project_id, Some(&subject.id), &model)?;
        put_one(self.store(), Kind::Subjects, &subject.id, project_id, Some(project_id), &subject)?;
        project.test_subjects.push(subject.id.clone());
        self.store.put_project(&project)?;
        Ok(subject)
    }

    /// Attaches another data file (labelled evaluation rows, evaluation series...).
    pub fn add_subject_data(&self, subject_id: &str, upload: &DataUpload) -> Result<TestSubject> {
        let mut subject = self.subject(subject_id)?;
        let (data_ref, _) = self.store_data(&subject.project_id, upload, subject.modality)?;
        subject.data_refs.retain(|d| d.kind != upload.kind);
        subject.data_refs.push(data_ref);
        put_one(
            self.store(),
            Kind::Subjects,
            &subject.id,
            &subject.project_id.clone(),
            Some(&subject.project_id),
            &subject,
        )?;
        Ok(subject)
    }

    pub fn subject(&self, id: &str) -> Result<TestSubject> {
        decode(self.store.get(Kind::Subjects, id), "subject", id)
    }

    pub fn subjects(&self, project_id: &str) -> Vec<TestSubject> {
        self.store
            .children(Kind::Subjects, project_id)
            .iter()
            .filter_map(|r| r.decode().ok())
            .collect()
    }

    pub fn model(&self, id: &str) -> Result<ModelSpec> {
        decode(self.store.get(Kind::Models, id), "model", id)
    }

    pub fn models(&self, project_id: &str) -> Vec<ModelSpec> {
        self.store
            .list(Kind::Models, project_id)
            .iter()
            .filter_map(|r| r.decode().ok())
            .collect()
    }

    /// Parses the stored data of a subject for its testers.
    pub fn subject_data(&self, subject: &TestSubject) -> Result<SubjectData> {
        let read = |kind: DataKind| -> Result<Option<Vec<u8>>> {
            subject
                .data(kind)
                .map(|d| self.store.read_data(&d.location))
                .transpose()
        };
        let training = read(DataKind::Training)?
            .ok_or_else(|| CoreError::Data("subject has no training data".into()))?;
        let eval = read(DataKind::LabeledEval)?;
        Ok(match subject.modality {
            Modality::Tabular => SubjectData::Tabular {
                training: parse_csv_table(&training)?,
                labeled_eval: eval.map(|e| parse_csv_table(&e)).transpose()?,
            },
            Modality::Text => SubjectData::Text {
                training: parse_text_lines(&training)?,
            },
            Modality::Timeseries => SubjectData::Series {
                training: parse_timeseries(&training)?,
                evaluation: eval.map(|e| parse_timeseries(&e)).transpose()?,
            },
        })
    }

    // ---------------------------------------------------------- properties

    pub fn register_property_definition(&self, def: &PropertyDefinition) -> Result<String> {
        def.validate()?;
        if self.store.properties().iter().any(|p| p.id == def.id) {
            return Err(CoreError::Duplicate(format!("property {} exists", def.id)));
        }
        self.store.put_property(def)?;
        Ok(def.id.clone())
    }

    /// Registers every built-in property not yet in the store; returns the ids added.
    pub fn ensure_builtin_properties(&self) -> Result<Vec<String>> {
        let known: BTreeSet<String> = self.store.properties().into_iter().map(|p| p.id).collect();
        crate::catalog::builtin()
            .iter()
            .filter(|d| !known.contains(&d.id))
            .map(|d| self.register_property_definition(d))
            .collect()
    }

    pub fn property(&self, id: &str) -> Result<PropertyDefinition> {
        self.store
            .properties()
            .into_iter()
            .find(|p| p.id == id)
            .ok_or_else(|| CoreError::not_found("property", id))
    }

    pub fn properties(&self) -> Vec<PropertyDefinition> {
        self.store.properties()
    }

    // -------------------------------------------------------------- configs

    pub fn create_config(&self, subject_id: &str, new: NewConfig) -> Result<RunConfiguration> {
        let subject = self.subject(subject_id)?;
        if new.generation_limit == 0 {
            return Err(CoreError::invalid("generation_limit must be at least 1"));
        }
        if new.selected_properties.is_empty() {
            return Err(CoreError::invalid("select at least one property"));
        }
        let mut seen = BTreeSet::new();
        let mut parameter_values = BTreeMap::new();
        for id in &new.selected_properties {
            if !seen.insert(id.as_str()) {
                return Err(CoreError::invalid(format!("property {id} selected twice")));
            }
            let def = self.property(id)?;
            if def.modality != subject.modality {
                return Err(CoreError::invalid(format!(
                    "property {id} does not apply to {:?} subjects",
                    subject.modality
                )));
            }
            for key in &def.required_data {
                if matches!(new.data_specific.get(key), None | Some(Value::Null)) {
                    return Err(CoreError::invalid(format!("property {id} needs data-specific input {key}")));
                }
            }
            let bound = def.resolve_parameters(new.parameter_values.get(id))?;
            parameter_values.insert(id.clone(), bound);
        }
        if let Some(unknown) = new.parameter_values.keys().find(|k| !seen.contains(k.as_str())) {
            return Err(CoreError::invalid(format!("parameters given for unselected property {unknown}")));
        }
        if let Some(Value::String(expr)) = new.data_specific.get("minority_group") {
            crate::testers::expr::GroupExpr::parse(expr)?;
        }
        if let Some(udc) = new.data_specific.get("udc") {
            crate::synth::UserDefinedConstraint::parse(udc)?;
        }
        let config = RunConfiguration {
            id: new_id(),
            project_id: subject.project_id.clone(),
            test_subject_id: subject.id.clone(),
            selected_properties: new.selected_properties,
            parameter_values,
            data_specific: new.data_specific,
            generation_limit: new.generation_limit,
            seed: new.seed,
        };
        put_one(self.store(), Kind::Configs, &config.id, &config.project_id, Some(subject_id), &config)?;
        Ok(config)
    }

    pub fn config(&self, id: &str) -> Result<RunConfiguration> {
        decode(self.store.get(Kind::Configs, id), "configuration", id)
    }

    // ------------------------------------------------------- runs, results

    /// Creates a pending collection with one pending run per selected
    /// property. With an idempotency key already used for this configuration
    /// the existing collection is returned and `false` signals no new work.
    pub fn create_collection(
        &self,
        config: &RunConfiguration,
        idempotency_key: Option<&str>,
    ) -> Result<(RunCollection, bool)> {
        if let Some(key) = idempotency_key {
            if let Some(existing) = self
                .collections_of(&config.id)
                .into_iter()
                .find(|c| c.idempotency_key.as_deref() == Some(key))
            {
                return Ok((existing, false));
            }
        }
        let collection_id = new_id();
        let runs: Vec<Run> = config
            .selected_properties
            .iter()
            .map(|p| Run {
                id: new_id(),
                project_id: config.project_id.clone(),
                run_collection_id: collection_id.clone(),
                property_id: p.clone(),
                state: RunState::Pending,
                status: StatusSnapshot::default(),
                run_metrics: BTreeMap::new(),
                parameters: config.parameter_values.get(p).cloned().unwrap_or_default(),
                error: None,
                warnings: Vec::new(),
            })
            .collect();
        let collection = RunCollection {
            id: collection_id,
            project_id: config.project_id.clone(),
            run_configuration_id: config.id.clone(),
            started_at: Utc::now(),
            finished_at: None,
            runs: runs.iter().map(|r| r.id.clone()).collect(),
            state: CollectionState::Pending,
            idempotency_key: idempotency_key.map(str::to_string),
        };
        for run in &runs {
            self.put_run(run)?;
        }
        self.put_collection(&collection)?;
        Ok((collection, true))
    }

    pub fn put_collection(&self, c: &RunCollection) -> Result<()> {
        put_one(self.store(), Kind::Collections, &c.id, &c.project_id, Some(&c.run_configuration_id), c)
    }

    pub fn collection(&self, id: &str) -> Result<RunCollection> {
        decode(self.store.get(Kind::Collections, id), "collection", id)
    }

    pub fn collections_of(&self, config_id: &str) -> Vec<RunCollection> {
        self.store
            .children(Kind::Collections, config_id)
            .iter()
            .filter_map(|r| r.decode().ok())
            .collect()
    }

    pub fn put_run(&self, run: &Run) -> Result<()> {
        put_one(self.store(), Kind::Runs, &run.id, &run.project_id, Some(&run.run_collection_id), run)
    }

    pub fn run(&self, id: &str) -> Result<Run> {
        decode(self.store.get(Kind::Runs, id), "run", id)
    }

    pub fn runs_of(&self, collection: &RunCollection) -> Result<Vec<Run>> {
        collection.runs.iter().map(|id| self.run(id)).collect()
    }

    pub fn put_cases(&self, project_id: &str, cases: &[TestCase]) -> Result<()> {
        let records = cases
            .iter()
            .map(|c| {
                c.validate()?;
                Record::new(&c.id, project_id, Some(c.run_id.clone()), c)
            })
            .collect::<Result<Vec<_>>>()?;
        self.store.put(Kind::Cases, &records)
    }

    /// Stores results keyed by test case id: the latest result per case wins.
    pub fn put_results(&self, project_id: &str, results: &[TestResult]) -> Result<()> {
        let records = results
            .iter()
            .map(|r| Record::new(&r.test_case_id, project_id, Some(r.run_id.clone()), r))
            .collect::<Result<Vec<_>>>()?;
        self.store.put(Kind::Results, &records)
    }

    /// Cases of a run ordered by id.
    pub fn cases(&self, run_id: &str) -> Vec<TestCase> {
        self.store
            .children(Kind::Cases, run_id)
            .iter()
            .filter_map(|r| r.decode().ok())
            .collect()
    }

    /// Results of a run ordered by test case id.
    pub fn results(&self, run_id: &str) -> Vec<TestResult> {
        self.store
            .children(Kind::Results, run_id)
            .iter()
            .filter_map(|r| r.decode().ok())
            .collect()
    }

    /// Status counts aggregated from the stored cases and results of a run.
    pub fn compute_status_snapshot(&self, run_id: &str) -> Result<StatusSnapshot> {
        self.run(run_id)?;
        let generated = self.store.children(Kind::Cases, run_id).len() as u64;
        let mut snapshot = StatusSnapshot {
            generated,
            ..Default::default()
        };
        for r in self.results(run_id) {
            snapshot.record(r.verdict);
        }
        Ok(snapshot)
    }

    /// Failing cases with their results, ordered by case id.
    pub fn failures(&self, run_id: &str, offset: usize, limit: usize) -> Result<(usize, Vec<(TestCase, TestResult)>)> {
        self.run(run_id)?;
        let failing: BTreeMap<String, TestResult> = self
            .results(run_id)
            .into_iter()
            .filter(|r| r.verdict == Verdict::Fail)
            .map(|r| (r.test_case_id.clone(), r))
            .collect();
        let total = failing.len();
        let items = failing
            .into_iter()
            .skip(offset)
            .take(limit)
            .filter_map(|(id, r)| {
                let case: TestCase = self.store.get(Kind::Cases, &id)?.decode().ok()?;
                Some((case, r))
            })
            .collect();
        Ok((total, items))
    }

    /// Per-property, per-metric table with one column per collection.
    pub fn compare_collections(&self, ids: &[String]) -> Result<ComparisonReport> {
        if ids.is_empty() {
            return Err(CoreError::invalid("name at least one collection"));
        }
        let mut collections = ids
            .iter()
            .map(|id| self.collection(id))
            .collect::<Result<Vec<_>>>()?;
        let project_id = collections[0].project_id.clone();
        if collections.iter().any(|c| c.project_id != project_id) {
            return Err(CoreError::invalid("collections span projects"));
        }
        collections.sort_by(|a, b| a.started_at.cmp(&b.started_at).then_with(|| a.id.cmp(&b.id)));

        let mut per_collection: Vec<BTreeMap<String, Run>> = Vec::new();
        let mut properties = BTreeSet::new();
        for c in &collections {
            let runs: BTreeMap<String, Run> = self
                .runs_of(c)?
                .into_iter()
                .map(|r| (r.property_id.clone(), r))
                .collect();
            properties.extend(runs.keys().cloned());
            per_collection.push(runs);
        }

        let mut rows = Vec::new();
        for property_id in properties {
            let def = self.property(&property_id).ok();
            let mut metric_names: Vec<String> = def
                .as_ref()
                .map(|d| d.metric_defs.iter().map(|m| m.name.clone()).collect())
                .unwrap_or_default();
            for runs in &per_collection {
                if let Some(run) = runs.get(&property_id) {
                    for name in run.run_metrics.keys() {
                        if !metric_names.contains(name) {
                            metric_names.push(name.clone());
                        }
                    }
                }
            }
            for metric in metric_names {
                let better = def
                    .as_ref()
                    .and_then(|d| d.metric(&metric))
                    .map(|m| m.better)
                    .unwrap_or(Direction::Neutral);
                let cells: Vec<ComparisonCell> = per_collection
                    .iter()
                    .map(|runs| match runs.get(&property_id).and_then(|r| r.run_metrics.get(&metric)) {
                        Some(m) => ComparisonCell::Metric {
                            value: m.value,
                            verdict: m.verdict,
                        },
                        None => ComparisonCell::NotRun,
                    })
                    .collect();
                let mut best: Option<(usize, f64)> = None;
                for (i, cell) in cells.iter().enumerate() {
                    if let ComparisonCell::Metric { value, .. } = cell {
                        if value.is_nan() {
                            continue;
                        }
                        if best.is_none_or(|(_, b)| better_of(better, *value, b)) {
                            best = Some((i, *value));
                        }
                    }
                }
                let distinct = cells
                    .iter()
                    .filter_map(|c| match c {
                        ComparisonCell::Metric { value, .. } if !value.is_nan() => Some(value.to_bits()),
                        _ => None,
                    })
                    .collect::<BTreeSet<_>>()
                    .len();
                rows.push(ComparisonRow {
                    property_id: property_id.clone(),
                    metric,
                    better,
                    best: if better == Direction::Neutral || distinct < 2 {
                        None
                    } else {
                        best.map(|(i, _)| i)
                    },
                    cells,
                });
            }
        }
        Ok(ComparisonReport {
            project_id,
            collections: collections.into_iter().map(|c| c.id).collect(),
            rows,
        })
    }
}
