//! CART surrogate of a black-box classifier.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::sample::Predictor;

use super::schema::{Cell, Row, TableSchema};

pub const DEFAULT_MAX_DEPTH: usize = 6;
pub const DEFAULT_MIN_LEAF: usize = 20;
/// Largest share of rows the predictor may fail on before fitting aborts.
pub const MAX_ERROR_SHARE: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CartParams {
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
}

impl Default for CartParams {
    fn default() -> Self {
        CartParams {
            max_depth: DEFAULT_MAX_DEPTH,
            min_leaf: DEFAULT_MIN_LEAF,
            seed: 0,
        }
    }
}

/// Left branch test. Rows failing it go right.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum SplitTest<F> {
    /// `value <= threshold`
    Threshold { threshold: F },
    /// `value ∈ categories`; unseen categories fail the test.
    Categories { categories: Vec<String> },
}

impl<F: Scalar> SplitTest<F> {
    pub fn goes_left(&self, cell: &Cell<F>) -> bool {
        match (self, cell) {
            (SplitTest::Threshold { threshold }, Cell::Num(x)) => *x <= *threshold,
            (SplitTest::Categories { categories }, Cell::Cat(c)) => categories.iter().any(|k| k == c),
            _ => false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "snake_case")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum TreeNode<F> {
    Split {
        column: String,
        test: SplitTest<F>,
        left: usize,
        right: usize,
    },
    Leaf {
        label: String,
        support: usize,
    },
}

/// Binary decision tree stored as an arena; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct SurrogateTree<F> {
    pub schema: TableSchema<F>,
    pub nodes: Vec<TreeNode<F>>,
    /// Agreement with the black-box on held-out rows.
    pub fidelity: F,
    #[serde(default)]
    pub train_rows: usize,
    #[serde(default)]
    pub held_out_rows: usize,
}

impl<F: Scalar> SurrogateTree<F> {
    /// Wraps a hand-built arena after checking its structure.
    pub fn new(schema: TableSchema<F>, nodes: Vec<TreeNode<F>>) -> Result<Self> {
        let tree = SurrogateTree {
            schema,
            nodes,
            fidelity: F::one(),
            train_rows: 0,
            held_out_rows: 0,
        };
        tree.validate()?;
        Ok(tree)
    }

    pub fn single_leaf(schema: TableSchema<F>, label: impl Into<String>, support: usize) -> Self {
        SurrogateTree {
            schema,
            nodes: vec![TreeNode::Leaf {
                label: label.into(),
                support,
            }],
            fidelity: F::one(),
            train_rows: support,
            held_out_rows: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(CoreError::invalid("tree has no nodes"));
        }
        let mut seen = vec![false; self.nodes.len()];
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            let node = self
                .nodes
                .get(i)
                .ok_or_else(|| CoreError::invalid(format!("node {i} out of range")))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(CoreError::invalid(format!("node {i} reached twice")));
            }
            if let TreeNode::Split {
                column,
                test,
                left,
                right,
            } = node
            {
                let spec = self
                    .schema
                    .column(column)
                    .ok_or_else(|| CoreError::invalid(format!("split on unknown column {column}")))?;
                let kind_ok = matches!(test, SplitTest::Threshold { .. }) == spec.is_numeric();
                if !kind_ok {
                    return Err(CoreError::invalid(format!("split kind does not match column {column}")));
                }
                stack.push(*right);
                stack.push(*left);
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(CoreError::invalid("tree has unreachable nodes"));
        }
        Ok(())
    }

    /// Leaf node ids in depth-first, left-first order.
    pub fn leaves(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack = vec![0usize];
        while let Some(i) = stack.pop() {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => out.push(i),
                TreeNode::Split { left, right, .. } => {
                    stack.push(*right);
                    stack.push(*left);
                }
            }
        }
        out
    }

    pub fn leaf_count(&self) -> usize {
        self.leaves().len()
    }

    pub fn depth(&self) -> usize {
        fn go<F>(nodes: &[TreeNode<F>], i: usize) -> usize {
            match &nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + go(nodes, *left).max(go(nodes, *right)),
            }
        }
        go(&self.nodes, 0)
    }

    /// Node id of the leaf a row falls into.
    pub fn route(&self, row: &[Cell<F>]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                TreeNode::Leaf { .. } => return i,
                TreeNode::Split {
                    column,
                    test,
                    left,
                    right,
                } => {
                    let goes_left = self
                        .schema
                        .index_of(column)
                        .and_then(|j| row.get(j))
                        .is_some_and(|c| test.goes_left(c));
                    i = if goes_left { *left } else { *right };
                }
            }
        }
    }

    /// Position of the row's leaf in [`leaves`](Self::leaves) order.
    pub fn leaf_index(&self, row: &[Cell<F>]) -> usize {
        let node = self.route(row);
        self.leaves()
            .iter()
            .position(|&l| l == node)
            .expect("route ends at a leaf")
    }

    pub fn predict(&self, row: &[Cell<F>]) -> &str {
        match &self.nodes[self.route(row)] {
            TreeNode::Leaf { label, .. } => label,
            TreeNode::Split { .. } => unreachable!("route ends at a leaf"),
        }
    }

    /// Columns used by at least one split.
    pub fn split_columns(&self) -> Vec<&str> {
        let mut cols: Vec<&str> = self
            .nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { column, .. } => Some(column.as_str()),
                TreeNode::Leaf { .. } => None,
            })
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }
}

fn gini(counts: &[usize], n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    // Strictly greater keeps the lowest class index (labels are sorted) on ties.
    let mut best = 0;
    for (i, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = i;
        }
    }
    best
}

struct Candidate<F> {
    impurity: f64,
    column: usize,
    test: SplitTest<F>,
}

struct Cart<'a, F> {
    schema: &'a TableSchema<F>,
    rows: &'a [Row<F>],
    classes: &'a [usize],
    n_classes: usize,
    class_names: &'a [String],
    params: CartParams,
    nodes: Vec<TreeNode<F>>,
}

impl<F: Scalar> Cart<'_, F> {
    fn counts(&self, idx: &[usize]) -> Vec<usize> {
        let mut c = vec![0; self.n_classes];
        for &i in idx {
            c[self.classes[i]] += 1;
        }
        c
    }

    fn best_split(&self, idx: &[usize]) -> Option<Candidate<F>> {
        let n = idx.len();
        let min_leaf = self.params.min_leaf.max(1);
        let mut best: Option<Candidate<F>> = None;
        let mut consider = |cand: Candidate<F>| {
            if best.as_ref().is_none_or(|b| cand.impurity < b.impurity - 1e-12) {
                best = Some(cand);
            }
        };
        for (j, spec) in self.schema.columns.iter().enumerate() {
            if spec.is_numeric() {
                let mut sorted: Vec<(F, usize)> = idx
                    .iter()
                    .filter_map(|&i| self.rows[i][j].num().map(|x| (x, self.classes[i])))
                    .collect();
                sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
                let mut left = vec![0usize; self.n_classes];
                let mut right = self.counts(idx);
                for k in 1..sorted.len() {
                    let class = sorted[k - 1].1;
                    left[class] += 1;
                    right[class] -= 1;
                    if k < min_leaf || sorted.len() - k < min_leaf || !(sorted[k - 1].0 < sorted[k].0) {
                        continue;
                    }
                    let impurity = (k as f64 * gini(&left, k)
                        + (n - k) as f64 * gini(&right, n - k))
                        / n as f64;
                    let threshold = F::of((sorted[k - 1].0.f64() + sorted[k].0.f64()) / 2.0);
                    consider(Candidate {
                        impurity,
                        column: j,
                        test: SplitTest::Threshold { threshold },
                    });
                }
            } else {
                let mut per_cat: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
                for &i in idx {
                    if let Some(c) = self.rows[i][j].cat() {
                        per_cat.entry(c).or_insert_with(|| vec![0; self.n_classes])[self.classes[i]] += 1;
                    }
                }
                if per_cat.len() < 2 {
                    continue;
                }
                let reference = majority(&self.counts(idx));
                let mut order: Vec<(&str, Vec<usize>)> = per_cat.into_iter().collect();
                let share = |c: &[usize]| c[reference] as f64 / c.iter().sum::<usize>() as f64;
                order.sort_by(|a, b| {
                    share(&a.1)
                        .partial_cmp(&share(&b.1))
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then_with(|| a.0.cmp(b.0))
                });
                let mut left = vec![0usize; self.n_classes];
                let mut right = self.counts(idx);
                let mut k = 0;
                for p in 0..order.len() - 1 {
                    for (c, cnt) in order[p].1.iter().enumerate() {
                        left[c] += cnt;
                        right[c] -= cnt;
                        k += cnt;
                    }
                    if k < min_leaf || n - k < min_leaf {
                        continue;
                    }
                    let impurity = (k as f64 * gini(&left, k)
                        + (n - k) as f64 * gini(&right, n - k))
                        / n as f64;
                    let mut categories: Vec<String> =
                        order[..=p].iter().map(|(c, _)| c.to_string()).collect();
                    categories.sort();
                    consider(Candidate {
                        impurity,
                        column: j,
                        test: SplitTest::Categories { categories },
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, idx: Vec<usize>, depth: usize) -> usize {
        let counts = self.counts(&idx);
        let here = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            label: self.class_names[majority(&counts)].clone(),
            support: idx.len(),
        });
        let parent_impurity = gini(&counts, idx.len());
        if depth >= self.params.max_depth
            || idx.len() < 2 * self.params.min_leaf.max(1)
            || parent_impurity <= 0.0
        {
            return here;
        }
        let Some(best) = self.best_split(&idx) else {
            return here;
        };
        if best.impurity >= parent_impurity - 1e-12 {
            return here;
        }
        let (l, r): (Vec<usize>, Vec<usize>) = idx
            .into_iter()
            .partition(|&i| best.test.goes_left(&self.rows[i][best.column]));
        let left = self.grow(l, depth + 1);
        let right = self.grow(r, depth + 1);
        self.nodes[here] = TreeNode::Split {
            column: self.schema.columns[best.column].name.clone(),
            test: best.test,
            left,
            right,
        };
        here
    }
}

/// Induces a CART classifier with Gini impurity on labelled rows.
pub fn fit_cart<F: Scalar>(
    schema: &TableSchema<F>,
    rows: &[Row<F>],
    labels: &[String],
    params: CartParams,
) -> Result<SurrogateTree<F>> {
    if rows.is_empty() || rows.len() != labels.len() {
        return Err(CoreError::invalid("need one label per row and at least one row"));
    }
    let mut class_names: Vec<String> = labels.to_vec();
    class_names.sort();
    class_names.dedup();
    let classes: Vec<usize> = labels
        .iter()
        .map(|l| class_names.binary_search(l).expect("label present"))
        .collect();
    let mut cart = Cart {
        schema,
        rows,
        classes: &classes,
        n_classes: class_names.len(),
        class_names: &class_names,
        params,
        nodes: Vec::new(),
    };
    cart.grow((0..rows.len()).collect(), 0);
    let tree = SurrogateTree {
        schema: schema.clone(),
        nodes: cart.nodes,
        fidelity: F::one(),
        train_rows: rows.len(),
        held_out_rows: 0,
    };
    tree.validate()?;
    Ok(tree)
}

/// Labels `rows` with the black-box, fits a tree on 80% of them and
/// measures agreement on the other 20%.
pub fn fit_surrogate<F: Scalar>(
    schema: &TableSchema<F>,
    rows: &[Row<F>],
    predictor: &dyn Predictor,
    params: CartParams,
) -> Result<SurrogateTree<F>> {
    if rows.is_empty() {
        return Err(CoreError::Data("no rows to fit a surrogate on".into()));
    }
    let samples: Vec<_> = rows.iter().map(|r| schema.to_sample(r)).collect();
    let outcomes = predictor.predict_batch(&samples);
    if outcomes.len() != rows.len() {
        return Err(CoreError::Predictor(format!(
            "expected {} predictions, got {}",
            rows.len(),
            outcomes.len()
        )));
    }
    let mut labelled = Vec::with_capacity(rows.len());
    let mut failures = Vec::new();
    for (row, outcome) in rows.iter().zip(outcomes) {
        match outcome {
            Ok(p) => labelled.push((row.clone(), p.label)),
            Err(e) => failures.push(e.message),
        }
    }
    if failures.len() as f64 > MAX_ERROR_SHARE * rows.len() as f64 {
        return Err(CoreError::Predictor(format!(
            "model failed on {} of {} rows while fitting the surrogate; first error: {}",
            failures.len(),
            rows.len(),
            failures[0]
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    labelled.shuffle(&mut rng);
    let n_test = labelled.len() / 5;
    let (test, train) = labelled.split_at(n_test);
    let (train_rows, train_labels): (Vec<Row<F>>, Vec<String>) = train.iter().cloned().unzip();
    let mut tree = fit_cart(schema, &train_rows, &train_labels, params)?;
    let eval = if test.is_empty() { train } else { test };
    let agree = eval.iter().filter(|(r, l)| tree.predict(r) == l).count();
    tree.fidelity = F::of(agree as f64 / eval.len() as f64);
    tree.held_out_rows = test.len();
    Ok(tree)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::schema::{ColumnSpec, Domain};

    fn schema() -> TableSchema<f64> {
        TableSchema {
            columns: vec![
                ColumnSpec {
                    name: "x".into(),
                    domain: Domain::Numeric { min: 0.0, max: 1.0 },
                    integral: false,
                },
                ColumnSpec {
                    name: "g".into(),
                    domain: Domain::Categorical {
                        categories: vec!["a".into(), "b".into(), "c".into()],
                    },
                    integral: false,
                },
            ],
        }
    }

    #[test]
    fn pure_data_gives_single_leaf() {
        let rows: Vec<Row<f64>> = (0..50)
            .map(|i| vec![Cell::Num(i as f64 / 50.0), Cell::Cat("a".into())])
            .collect();
        let labels = vec!["yes".to_string(); 50];
        let t = fit_cart(&schema(), &rows, &labels, CartParams::default()).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.depth(), 0);
    }

    #[test]
    fn categorical_split_groups_categories() {
        let cats = ["a", "b", "c"];
        let rows: Vec<Row<f64>> = (0..300)
            .map(|i| vec![Cell::Num(0.5), Cell::Cat(cats[i % 3].into())])
            .collect();
        let labels: Vec<String> = (0..300)
            .map(|i| if i % 3 == 1 { "yes" } else { "no" }.to_string())
            .collect();
        let t = fit_cart(&schema(), &rows, &labels, CartParams::default()).unwrap();
        assert_eq!(t.depth(), 1);
        for (i, r) in rows.iter().enumerate() {
            assert_eq!(t.predict(r), labels[i]);
        }
        // Unseen category routes right.
        let unseen = vec![Cell::Num(0.5), Cell::Cat("zzz".into())];
        let TreeNode::Split { right, .. } = &t.nodes[0] else { panic!() };
        assert_eq!(t.route(&unseen), *right);
    }

    #[test]
    fn leaves_are_depth_first_left_first() {
        let nodes = vec![
            TreeNode::Split {
                column: "x".into(),
                test: SplitTest::Threshold { threshold: 0.5 },
                left: 2,
                right: 1,
            },
            TreeNode::Leaf { label: "r".into(), support: 1 },
            TreeNode::Leaf { label: "l".into(), support: 1 },
        ];
        let t = SurrogateTree::new(schema(), nodes).unwrap();
        assert_eq!(t.leaves(), vec![2, 1]);
        assert_eq!(t.leaf_index(&[Cell::Num(0.7), Cell::Cat("a".into())]), 1);
    }

    #[test]
    fn malformed_arena_rejected() {
        let nodes = vec![TreeNode::Split {
            column: "g".into(),
            test: SplitTest::Threshold { threshold: 0.5 },
            left: 0,
            right: 0,
        }];
        assert!(SurrogateTree::new(schema(), nodes).is_err());
    }
}
