//! Tabular properties: correctness, group and individual discrimination,
//! adversarial robustness.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::data::RawTable;
use crate::error::{CoreError, Result};
use crate::ids::derive_seed;
use crate::model::{TestCase, TestResult, Verdict};
use crate::sample::{Outcome, Predictor, Sample};
use crate::synth::{
    apply_udc, extract_paths, fit_distribution_model, fit_surrogate, generate_for_paths,
    path_coverage_masked, CartParams, Cell, Row, Table, TableSchema, UserDefinedConstraint,
    DEFAULT_BINS,
};

use super::expr::GroupExpr;
use super::metrics::{classification_scores, group_metrics};
use super::{choose_indices, flip_rate_of, judge_label_pair, labels, Bindings, CaseDraft, Generated, Judgement, PropertyTester, SubjectData};

pub const DEFAULT_LABEL_COLUMN: &str = "label";
/// Training rows labelled by the model to fit the surrogate tree.
pub const SURROGATE_ROWS: usize = 2000;
pub const ROLE_MINORITY: &str = "minority";
pub const ROLE_MAJORITY: &str = "majority";

fn label_column(bind: &Bindings) -> String {
    bind.data_text("label_column")
        .unwrap_or_else(|| DEFAULT_LABEL_COLUMN.to_string())
}

/// Training features typed into a table; protected attributes and listed
/// categorical columns are kept categorical, the label column is dropped.
pub fn feature_table(training: &RawTable, bind: &Bindings) -> Result<Table<f64>> {
    let label = label_column(bind);
    let features = if training.column_index(&label).is_some() {
        training.split_column(&label)?.0
    } else {
        training.clone()
    };
    let mut categorical = bind.data_list("categorical_columns");
    categorical.extend(bind.data_list("protected_attributes"));
    Table::from_raw(&features, &categorical)
}

fn tabular_data(data: &SubjectData) -> Result<(&RawTable, Option<&RawTable>)> {
    match data {
        SubjectData::Tabular {
            training,
            labeled_eval,
        } => Ok((training, labeled_eval.as_ref())),
        _ => Err(CoreError::invalid("property needs tabular data")),
    }
}

fn udc_of(bind: &Bindings) -> Result<Option<UserDefinedConstraint>> {
    match bind.data_specific.get("udc") {
        None | Some(Value::Null) => Ok(None),
        Some(Value::String(s)) if s.trim().is_empty() => Ok(None),
        Some(Value::String(s)) => {
            let v: Value = serde_json::from_str(s).map_err(|e| CoreError::invalid(format!("UDC is not JSON: {e}")))?;
            UserDefinedConstraint::parse(&v).map(Some)
        }
        Some(v) => UserDefinedConstraint::parse(v).map(Some),
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticRows {
    pub schema: TableSchema<f64>,
    pub rows: Vec<Row<f64>>,
    pub notes: Vec<String>,
}

/// Realistic rows spread over the decision paths of a surrogate of the model.
pub fn synthesize(table: &Table<f64>, bind: &Bindings, predictor: &dyn Predictor, n: usize) -> Result<SyntheticRows> {
    let mut model = fit_distribution_model(table, DEFAULT_BINS)?;
    if let Some(udc) = udc_of(bind)? {
        model = apply_udc(&model, &udc)?;
    }
    let pick = choose_indices(table.rows.len(), SURROGATE_ROWS, derive_seed(bind.seed, 1));
    let surrogate_rows: Vec<Row<f64>> = pick.iter().map(|&i| table.rows[i].clone()).collect();
    let params = CartParams {
        seed: derive_seed(bind.seed, 2),
        ..CartParams::default()
    };
    let tree = fit_surrogate(&table.schema, &surrogate_rows, predictor, params)?;
    let paths = extract_paths(&tree);
    let generated = generate_for_paths(&paths, &model, n, derive_seed(bind.seed, 3))?;
    let mask = generated.satisfiable_mask();
    let rows: Vec<Row<f64>> = generated.rows.into_iter().map(|g| g.row).collect();
    let coverage = path_coverage_masked(&rows, &tree, &mask);
    let mut notes = vec![format!(
        "surrogate tree: {} leaves, depth {}, fidelity {:.3}; path coverage {:.3} over {} satisfiable paths",
        paths.len(),
        tree.depth(),
        tree.fidelity,
        coverage,
        mask.iter().filter(|m| **m).count()
    )];
    notes.extend(generated.warnings);
    Ok(SyntheticRows {
        schema: table.schema.clone(),
        rows,
        notes,
    })
}

// ---------------------------------------------------------------- correctness

pub struct Correctness;

/// One single-sample case per labelled row; the gold label is the reference.
pub fn correctness_cases(table: &Table<f64>, gold: &[String]) -> Vec<CaseDraft> {
    table
        .rows
        .iter()
        .zip(gold)
        .map(|(row, g)| CaseDraft {
            samples: vec![table.schema.to_sample(row)],
            reference: json!({ "gold": g }),
            role_tags: vec![crate::model::ROLE_ORIGINAL.to_string()],
        })
        .collect()
}

impl PropertyTester for Correctness {
    fn property_id(&self) -> &'static str {
        crate::catalog::ids::CORRECTNESS
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, _predictor: &dyn Predictor) -> Result<Generated> {
        let (training, labeled_eval) = tabular_data(data)?;
        let source = labeled_eval.unwrap_or(training);
        let label = label_column(bind);
        let (features, gold) = source
            .split_column(&label)
            .map_err(|_| CoreError::Data(format!("missing gold column {label}")))?;
        let categorical = bind.data_list("categorical_columns");
        let table: Table<f64> = Table::from_raw(&features, &categorical)?;
        let keep = choose_indices(table.rows.len(), bind.generation_limit, bind.seed);
        let subset = Table {
            schema: table.schema.clone(),
            rows: keep.iter().map(|&i| table.rows[i].clone()).collect(),
        };
        let gold: Vec<String> = keep.iter().map(|&i| gold[i].clone()).collect();
        Ok(Generated {
            cases: correctness_cases(&subset, &gold),
            source_count: keep.len(),
            notes: Vec::new(),
            inapplicable: None,
        })
    }

    fn judge(&self, case: &TestCase, outcomes: &[Outcome], _bind: &Bindings) -> Judgement {
        let gold = case.reference.get("gold").and_then(Value::as_str).unwrap_or_default();
        match labels(outcomes) {
            Err(e) => Judgement::new(Verdict::Error, format!("prediction failed: {e}")),
            Ok(l) if l.first() == Some(&gold) => Judgement::new(Verdict::Pass, format!("predicted gold label {gold}")),
            Ok(l) => Judgement::new(
                Verdict::Fail,
                format!("predicted {} but gold label is {gold}", l.first().unwrap_or(&"nothing")),
            ),
        }
    }

    fn metrics(&self, cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        let gold: BTreeMap<&str, &str> = cases
            .iter()
            .map(|c| (c.id.as_str(), c.reference.get("gold").and_then(Value::as_str).unwrap_or_default()))
            .collect();
        let pairs: Vec<(&str, &str)> = results
            .iter()
            .filter(|r| r.verdict != Verdict::Error)
            .filter_map(|r| Some((*gold.get(r.test_case_id.as_str())?, r.predictions.first()?.label.as_str())))
            .collect();
        let mut out = BTreeMap::new();
        if pairs.is_empty() {
            for m in ["accuracy", "precision", "recall", "f_score"] {
                out.insert(m.to_string(), f64::NAN);
            }
            return out;
        }
        let s = classification_scores::<f64>(&pairs);
        out.insert("accuracy".into(), s.accuracy);
        out.insert("precision".into(), s.precision);
        out.insert("recall".into(), s.recall);
        out.insert("f_score".into(), s.f_score);
        out
    }
}

// ------------------------------------------------------- group discrimination

pub struct GroupDiscrimination;

/// Fairness inputs shared by the discrimination properties.
#[derive(Clone, Debug)]
pub struct FairnessConfig {
    pub protected_attributes: Vec<String>,
    pub favorable_label: String,
    pub minority_group: GroupExpr,
}

impl FairnessConfig {
    pub fn from_bindings(bind: &Bindings, need_group: bool) -> Result<Self> {
        let protected_attributes = bind.data_list("protected_attributes");
        if protected_attributes.is_empty() {
            return Err(CoreError::invalid("protected_attributes must name at least one column"));
        }
        let minority_group = if need_group {
            let expr = GroupExpr::parse(&bind.require_text("minority_group")?)?;
            if let Some(c) = expr.columns().into_iter().find(|c| !protected_attributes.iter().any(|p| p == c)) {
                return Err(CoreError::invalid(format!(
                    "minority_group refers to {c}, which is not a protected attribute"
                )));
            }
            expr
        } else {
            GroupExpr::Eq(String::new(), String::new())
        };
        Ok(FairnessConfig {
            protected_attributes,
            favorable_label: if need_group {
                bind.require_text("favorable_label")?
            } else {
                bind.data_text("favorable_label").unwrap_or_default()
            },
            minority_group,
        })
    }

    pub fn check_schema(&self, schema: &TableSchema<f64>) -> Result<()> {
        for p in &self.protected_attributes {
            let spec = schema
                .column(p)
                .ok_or_else(|| CoreError::invalid(format!("protected attribute {p} is not a column")))?;
            if spec.is_numeric() {
                return Err(CoreError::invalid(format!("protected attribute {p} must be categorical")));
            }
        }
        Ok(())
    }
}

/// A single case holding every sample, tagged with its group.
pub fn group_case(schema: &TableSchema<f64>, rows: &[Row<f64>], config: &FairnessConfig) -> CaseDraft {
    let samples: Vec<Sample> = rows.iter().map(|r| schema.to_sample(r)).collect();
    let role_tags = samples
        .iter()
        .map(|s| {
            let minority = s.as_row().is_some_and(|m| config.minority_group.eval(m));
            if minority { ROLE_MINORITY } else { ROLE_MAJORITY }.to_string()
        })
        .collect();
    CaseDraft {
        samples,
        reference: json!({
            "minority_group": config.minority_group.to_string(),
            "favorable_label": config.favorable_label,
        }),
        role_tags,
    }
}

/// (minority favorable, minority total, majority favorable, majority total)
fn group_counts(role_tags: &[String], labels: &[&str], favorable: &str) -> (usize, usize, usize, usize) {
    let mut c = (0, 0, 0, 0);
    for (tag, label) in role_tags.iter().zip(labels) {
        let fav = usize::from(*label == favorable);
        if tag == ROLE_MINORITY {
            c.0 += fav;
            c.1 += 1;
        } else {
            c.2 += fav;
            c.3 += 1;
        }
    }
    c
}

impl PropertyTester for GroupDiscrimination {
    fn property_id(&self) -> &'static str {
        crate::catalog::ids::GROUP_DISCRIMINATION
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, predictor: &dyn Predictor) -> Result<Generated> {
        let config = FairnessConfig::from_bindings(bind, true)?;
        let table = feature_table(tabular_data(data)?.0, bind)?;
        config.check_schema(&table.schema)?;
        let synth = synthesize(&table, bind, predictor, bind.generation_limit)?;
        let case = group_case(&synth.schema, &synth.rows, &config);
        Ok(Generated {
            source_count: case.samples.len(),
            cases: vec![case],
            notes: synth.notes,
            inapplicable: None,
        })
    }

    fn judge(&self, case: &TestCase, outcomes: &[Outcome], bind: &Bindings) -> Judgement {
        let favorable = case
            .reference
            .get("favorable_label")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let l = match labels(outcomes) {
            Ok(l) => l,
            Err(e) => return Judgement::new(Verdict::Error, format!("prediction failed: {e}")),
        };
        let (mf, mt, jf, jt) = group_counts(&case.role_tags, &l, favorable);
        let g = match group_metrics::<f64>(mf, mt, jf, jt) {
            Ok(g) => g,
            Err(e) => return Judgement::new(Verdict::Error, e.to_string().replace("data error: ", "")),
        };
        let (lo, hi) = bind.range("di_range").unwrap_or((0.8, 1.25));
        let detail = format!(
            "minority favorable {mf}/{mt}, majority favorable {jf}/{jt}, DI {:.6}, parity {:.6}, range [{lo}, {hi}]",
            g.disparate_impact, g.demographic_parity
        );
        if g.disparate_impact >= lo && g.disparate_impact <= hi {
            Judgement::new(Verdict::Pass, detail)
        } else {
            Judgement::new(Verdict::Fail, detail)
        }
    }

    fn metrics(&self, cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = ["disparate_impact", "demographic_parity", "minority_rate", "majority_rate"]
            .into_iter()
            .map(|m| (m.to_string(), f64::NAN))
            .collect();
        let Some(case) = cases.first() else { return out };
        let Some(result) = results.iter().find(|r| r.test_case_id == case.id && r.verdict != Verdict::Error) else {
            return out;
        };
        let favorable = case
            .reference
            .get("favorable_label")
            .and_then(Value::as_str)
            .unwrap_or_default();
        let l: Vec<&str> = result.predictions.iter().map(|p| p.label.as_str()).collect();
        let (mf, mt, jf, jt) = group_counts(&case.role_tags, &l, favorable);
        if let Ok(g) = group_metrics::<f64>(mf, mt, jf, jt) {
            out.insert("disparate_impact".into(), g.disparate_impact);
            out.insert("demographic_parity".into(), g.demographic_parity);
            out.insert("minority_rate".into(), g.minority_rate);
            out.insert("majority_rate".into(), g.majority_rate);
        }
        out
    }
}

// -------------------------------------------------- individual discrimination

pub struct IndividualDiscrimination;

/// For every row, every protected attribute and every other category of it,
/// a pair differing only in that attribute.
pub fn individual_cases(schema: &TableSchema<f64>, rows: &[Row<f64>], protected: &[String]) -> Result<Vec<CaseDraft>> {
    let mut cases = Vec::new();
    for (i, row) in rows.iter().enumerate() {
        for attr in protected {
            let j = schema
                .index_of(attr)
                .ok_or_else(|| CoreError::invalid(format!("protected attribute {attr} is not a column")))?;
            let current = row[j].cat().unwrap_or_default().to_string();
            for alt in schema.columns[j].categories() {
                if *alt == current {
                    continue;
                }
                let mut changed = row.clone();
                changed[j] = Cell::Cat(alt.clone());
                cases.push(CaseDraft::pair(
                    schema.to_sample(row),
                    schema.to_sample(&changed),
                    json!({ "source_row": i, "attribute": attr, "original_value": current, "transformed_value": alt }),
                ));
            }
        }
    }
    Ok(cases)
}

impl PropertyTester for IndividualDiscrimination {
    fn property_id(&self) -> &'static str {
        crate::catalog::ids::INDIVIDUAL_DISCRIMINATION
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, predictor: &dyn Predictor) -> Result<Generated> {
        let config = FairnessConfig::from_bindings(bind, false)?;
        let table = feature_table(tabular_data(data)?.0, bind)?;
        config.check_schema(&table.schema)?;
        let synth = synthesize(&table, bind, predictor, bind.generation_limit)?;
        let cases = individual_cases(&synth.schema, &synth.rows, &config.protected_attributes)?;
        if cases.is_empty() {
            return Err(CoreError::Data(
                "nothing to test: every protected attribute has a single category".into(),
            ));
        }
        Ok(Generated {
            source_count: synth.rows.len(),
            cases,
            notes: synth.notes,
            inapplicable: None,
        })
    }

    fn judge(&self, _case: &TestCase, outcomes: &[Outcome], _bind: &Bindings) -> Judgement {
        judge_label_pair(outcomes)
    }

    fn metrics(&self, _cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        BTreeMap::from([("flip_rate".to_string(), flip_rate_of(results))])
    }
}

// ------------------------------------------------------ adversarial robustness

pub struct AdversarialRobustness;

/// Neighbours of each row: every numeric column moved by a uniform draw in
/// `[-epsilon * range, +epsilon * range]`, clamped to the column domain.
pub fn robustness_cases(
    schema: &TableSchema<f64>,
    rows: &[Row<f64>],
    epsilon: f64,
    neighbors: usize,
    seed: u64,
) -> Vec<CaseDraft> {
    let mut cases = Vec::with_capacity(rows.len() * neighbors);
    for (i, row) in rows.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64));
        for k in 0..neighbors {
            let mut moved = row.clone();
            for (j, spec) in schema.columns.iter().enumerate() {
                let (Some((min, max)), Some(x)) = (spec.range(), row[j].num()) else {
                    continue;
                };
                let radius = epsilon * (max - min);
                let delta = if radius > 0.0 { rng.gen_range(-radius..=radius) } else { 0.0 };
                let mut y = (x + delta).clamp(min, max);
                if spec.integral {
                    y = y.round().clamp(min.ceil(), max.floor());
                }
                moved[j] = Cell::Num(y);
            }
            cases.push(CaseDraft::pair(
                schema.to_sample(row),
                schema.to_sample(&moved),
                json!({ "source_row": i, "neighbor": k, "epsilon": epsilon }),
            ));
        }
    }
    cases
}

impl PropertyTester for AdversarialRobustness {
    fn property_id(&self) -> &'static str {
        crate::catalog::ids::ADVERSARIAL_ROBUSTNESS
    }

    fn generate(&self, data: &SubjectData, bind: &Bindings, predictor: &dyn Predictor) -> Result<Generated> {
        let table = feature_table(tabular_data(data)?.0, bind)?;
        if !table.schema.columns.iter().any(|c| c.is_numeric()) {
            return Ok(Generated {
                inapplicable: Some("no numeric columns to perturb".into()),
                ..Generated::default()
            });
        }
        let epsilon = bind.real("epsilon")?;
        let neighbors = bind.integer("neighbors")?;
        let synth = synthesize(&table, bind, predictor, bind.generation_limit)?;
        let cases = robustness_cases(&table.schema, &synth.rows, epsilon, neighbors, derive_seed(bind.seed, 4));
        Ok(Generated {
            source_count: synth.rows.len(),
            cases,
            notes: synth.notes,
            inapplicable: None,
        })
    }

    fn judge(&self, _case: &TestCase, outcomes: &[Outcome], _bind: &Bindings) -> Judgement {
        judge_label_pair(outcomes)
    }

    fn metrics(&self, _cases: &[TestCase], results: &[TestResult], _bind: &Bindings) -> BTreeMap<String, f64> {
        BTreeMap::from([("flip_rate".to_string(), flip_rate_of(results))])
    }
}
