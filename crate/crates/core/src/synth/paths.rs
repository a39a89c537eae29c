//! Decision paths of a surrogate tree and path-guided row generation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::ids::derive_seed;
use crate::num::Scalar;

use super::joint::{ColumnRegion, JointDistributionModel};
use super::marginal::Interval;
use super::schema::{Cell, Row, TableSchema};
use super::surrogate::{SplitTest, SurrogateTree, TreeNode};

/// Attempts per requested row before switching to constrained sampling.
pub const REJECTION_FACTOR: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum Predicate<F> {
    Le { column: String, value: F },
    Gt { column: String, value: F },
    In { column: String, set: Vec<String> },
    NotIn { column: String, set: Vec<String> },
}

impl<F: Scalar> Predicate<F> {
    pub fn column(&self) -> &str {
        match self {
            Predicate::Le { column, .. }
            | Predicate::Gt { column, .. }
            | Predicate::In { column, .. }
            | Predicate::NotIn { column, .. } => column,
        }
    }

    pub fn holds(&self, cell: &Cell<F>) -> bool {
        match (self, cell) {
            (Predicate::Le { value, .. }, Cell::Num(x)) => *x <= *value,
            (Predicate::Gt { value, .. }, Cell::Num(x)) => *x > *value,
            (Predicate::In { set, .. }, Cell::Cat(c)) => set.contains(c),
            (Predicate::NotIn { set, .. }, Cell::Cat(c)) => !set.contains(c),
            _ => false,
        }
    }
}

impl<F: Scalar> fmt::Display for Predicate<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Le { column, value } => write!(f, "{column} <= {value}"),
            Predicate::Gt { column, value } => write!(f, "{column} > {value}"),
            Predicate::In { column, set } => write!(f, "{column} in {{{}}}", set.join(", ")),
            Predicate::NotIn { column, set } => write!(f, "{column} not in {{{}}}", set.join(", ")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct DecisionPath<F> {
    /// Position in leaf order.
    pub leaf: usize,
    pub label: String,
    pub predicates: Vec<Predicate<F>>,
}

impl<F: Scalar> DecisionPath<F> {
    pub fn satisfied_by(&self, schema: &TableSchema<F>, row: &[Cell<F>]) -> bool {
        self.predicates.iter().all(|p| {
            schema
                .index_of(p.column())
                .and_then(|j| row.get(j))
                .is_some_and(|c| p.holds(c))
        })
    }

    /// Per-column feasible region implied by the predicates.
    pub fn regions(&self, schema: &TableSchema<F>) -> Vec<ColumnRegion<F>> {
        schema
            .columns
            .iter()
            .map(|spec| {
                let preds: Vec<&Predicate<F>> =
                    self.predicates.iter().filter(|p| p.column() == spec.name).collect();
                if preds.is_empty() {
                    return ColumnRegion::Any;
                }
                if spec.is_numeric() {
                    let mut iv = Interval::unbounded();
                    for p in preds {
                        match p {
                            Predicate::Le { value, .. } => {
                                iv = iv.intersect(&Interval {
                                    lo: F::neg_infinity(),
                                    lo_open: true,
                                    hi: *value,
                                    hi_open: false,
                                })
                            }
                            Predicate::Gt { value, .. } => {
                                iv = iv.intersect(&Interval {
                                    lo: *value,
                                    lo_open: true,
                                    hi: F::infinity(),
                                    hi_open: true,
                                })
                            }
                            _ => {}
                        }
                    }
                    ColumnRegion::Numeric(iv)
                } else {
                    ColumnRegion::Categories(
                        spec.categories()
                            .iter()
                            .filter(|c| {
                                let cell = Cell::Cat((*c).clone());
                                preds.iter().all(|p| p.holds(&cell))
                            })
                            .cloned()
                            .collect(),
                    )
                }
            })
            .collect()
    }

    /// Whether the joint model can produce a row on this path.
    pub fn satisfiable(&self, model: &JointDistributionModel<F>) -> bool {
        self.regions(&model.schema)
            .iter()
            .zip(&model.marginals)
            .zip(&model.schema.columns)
            .all(|((r, m), spec)| r.satisfiable(m, spec.integral))
    }
}

impl<F: Scalar> fmt::Display for DecisionPath<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.predicates.is_empty() {
            return write!(f, "(all rows) => {}", self.label);
        }
        let parts: Vec<String> = self.predicates.iter().map(ToString::to_string).collect();
        write!(f, "{} => {}", parts.join(" and "), self.label)
    }
}

/// One path per leaf, in leaf order.
pub fn extract_paths<F: Scalar>(tree: &SurrogateTree<F>) -> Vec<DecisionPath<F>> {
    fn walk<F: Scalar>(
        tree: &SurrogateTree<F>,
        node: usize,
        trail: &mut Vec<Predicate<F>>,
        out: &mut Vec<DecisionPath<F>>,
    ) {
        match &tree.nodes[node] {
            TreeNode::Leaf { label, .. } => out.push(DecisionPath {
                leaf: out.len(),
                label: label.clone(),
                predicates: trail.clone(),
            }),
            TreeNode::Split {
                column,
                test,
                left,
                right,
            } => {
                let (yes, no) = match test {
                    SplitTest::Threshold { threshold } => (
                        Predicate::Le {
                            column: column.clone(),
                            value: *threshold,
                        },
                        Predicate::Gt {
                            column: column.clone(),
                            value: *threshold,
                        },
                    ),
                    SplitTest::Categories { categories } => (
                        Predicate::In {
                            column: column.clone(),
                            set: categories.clone(),
                        },
                        Predicate::NotIn {
                            column: column.clone(),
                            set: categories.clone(),
                        },
                    ),
                };
                trail.push(yes);
                walk(tree, *left, trail, out);
                trail.pop();
                trail.push(no);
                walk(tree, *right, trail, out);
                trail.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(tree, 0, &mut Vec::new(), &mut out);
    out
}

/// `floor(n / k)` each, the remainder going one apiece to the first paths.
pub fn allocate(n: usize, k: usize) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    (0..k).map(|i| n / k + usize::from(i < n % k)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathReport {
    pub leaf: usize,
    pub label: String,
    pub satisfiable: bool,
    pub quota: usize,
    pub emitted: usize,
    /// Rows produced by constrained sampling after rejection ran out of attempts.
    pub fallback: usize,
    pub attempts: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct GeneratedRow<F> {
    pub row: Row<F>,
    pub leaf: usize,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct PathGeneration<F> {
    pub rows: Vec<GeneratedRow<F>>,
    pub report: Vec<PathReport>,
    pub warnings: Vec<String>,
}

impl<F: Scalar> PathGeneration<F> {
    pub fn requested(&self) -> usize {
        self.report.iter().map(|r| r.quota).sum()
    }

    pub fn satisfiable_mask(&self) -> Vec<bool> {
        self.report.iter().map(|r| r.satisfiable).collect()
    }
}

/// Generates `n` rows spread equally over `paths`.
pub fn generate_for_paths<F: Scalar>(
    paths: &[DecisionPath<F>],
    model: &JointDistributionModel<F>,
    n: usize,
    seed: u64,
) -> Result<PathGeneration<F>> {
    let satisfiable: Vec<bool> = paths.iter().map(|p| p.satisfiable(model)).collect();
    if !satisfiable.iter().any(|s| *s) {
        return Err(CoreError::Data("no decision path is satisfiable under the constraints".into()));
    }
    let quotas = allocate(n, paths.len());
    let mut out = PathGeneration {
        rows: Vec::with_capacity(n),
        report: Vec::with_capacity(paths.len()),
        warnings: Vec::new(),
    };
    for (k, path) in paths.iter().enumerate() {
        let quota = quotas[k];
        let mut report = PathReport {
            leaf: path.leaf,
            label: path.label.clone(),
            satisfiable: satisfiable[k],
            quota,
            emitted: 0,
            fallback: 0,
            attempts: 0,
        };
        if !satisfiable[k] {
            out.warnings.push(format!(
                "path {} ({path}) is unsatisfiable under the constraints; 0 rows generated",
                path.leaf
            ));
            out.report.push(report);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, k as u64));
        let cap = REJECTION_FACTOR.saturating_mul(quota);
        while report.emitted < quota && report.attempts < cap {
            report.attempts += 1;
            let row = model.sample_row(&mut rng);
            if path.satisfied_by(&model.schema, &row) {
                out.rows.push(GeneratedRow {
                    row,
                    leaf: path.leaf,
                    fallback: false,
                });
                report.emitted += 1;
            }
        }
        if report.emitted < quota {
            let regions = path.regions(&model.schema);
            let mut misses = 0;
            while report.emitted < quota && misses < REJECTION_FACTOR {
                match model.sample_row_constrained(&mut rng, Some(&regions)) {
                    Some(row) if path.satisfied_by(&model.schema, &row) => {
                        out.rows.push(GeneratedRow {
                            row,
                            leaf: path.leaf,
                            fallback: true,
                        });
                        report.emitted += 1;
                        report.fallback += 1;
                    }
                    _ => misses += 1,
                }
            }
            if report.emitted < quota {
                out.warnings.push(format!(
                    "path {} produced {} of {} rows",
                    path.leaf, report.emitted, quota
                ));
            }
        }
        out.report.push(report);
    }
    Ok(out)
}

/// Share of leaves reached by at least one row.
pub fn path_coverage<F: Scalar>(rows: &[Row<F>], tree: &SurrogateTree<F>) -> F {
    let leaves = tree.leaf_count();
    path_coverage_masked(rows, tree, &vec![true; leaves])
}

/// Share of the leaves selected by `mask` (leaf order) reached by at least one row.
pub fn path_coverage_masked<F: Scalar>(rows: &[Row<F>], tree: &SurrogateTree<F>, mask: &[bool]) -> F {
    let total = mask.iter().filter(|m| **m).count();
    if total == 0 || rows.is_empty() {
        return F::zero();
    }
    let mut hit = vec![false; mask.len()];
    for r in rows {
        if let Some(h) = hit.get_mut(tree.leaf_index(r)) {
            *h = true;
        }
    }
    let covered = hit.iter().zip(mask).filter(|(h, m)| **h && **m).count();
    F::of(covered as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allocation_is_equal_with_leading_remainder() {
        assert_eq!(allocate(90, 3), vec![30, 30, 30]);
        assert_eq!(allocate(10, 3), vec![4, 3, 3]);
        assert_eq!(allocate(2, 3), vec![1, 1, 0]);
    }

    #[test]
    fn predicate_display() {
        let p: Predicate<f64> = Predicate::In {
            column: "m".into(),
            set: vec!["a".into(), "b".into()],
        };
        assert_eq!(p.to_string(), "m in {a, b}");
    }
}
