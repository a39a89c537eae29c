//! Joint distribution over table columns as a Chow-Liu dependency tree.
//!
//! Columns are discretized (categories, or equal-frequency bins for numeric
//! columns). Pairwise mutual information on the discretized columns,
//! Laplace-smoothed, weights a maximum spanning tree. The tree is rooted at
//! the column with the largest incident MI and each child gets a smoothed
//! conditional probability table given its parent. Sampling is ancestral;
//! numeric values are drawn uniformly inside the sampled bin.

use std::cmp::Ordering;
use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::{sums_to_one, Scalar};

use super::marginal::{draw_weighted, ColumnMarginal, Interval};
use super::schema::{Row, Table, TableSchema};

/// Pseudo-count added to every cell of contingency and conditional tables.
pub const LAPLACE_ALPHA: f64 = 1.0;
pub const DEFAULT_BINS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct DependencyEdge<F> {
    pub parent: String,
    pub child: String,
    /// Mutual information in nats.
    pub mi: F,
    /// `cpt[parent_state][child_state]`
    pub cpt: Vec<Vec<F>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct JointDistributionModel<F> {
    pub schema: TableSchema<F>,
    pub marginals: Vec<ColumnMarginal<F>>,
    pub edges: Vec<DependencyEdge<F>>,
    pub root: String,
    /// Columns sampled independently from their (overridden) marginal.
    #[serde(default)]
    pub detached: Vec<String>,
}

fn mutual_information(joint: &[Vec<f64>]) -> f64 {
    let total: f64 = joint.iter().flatten().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let rows: Vec<f64> = joint.iter().map(|r| r.iter().sum::<f64>() / total).collect();
    let cols: Vec<f64> = (0..joint.first().map_or(0, Vec::len))
        .map(|j| joint.iter().map(|r| r[j]).sum::<f64>() / total)
        .collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let p = c / total;
            if p > 0.0 {
                mi += p * (p / (rows[i] * cols[j])).ln();
            }
        }
    }
    mi.max(0.0)
}

/// Smoothed mutual information (nats) between two discretized columns.
pub fn smoothed_mi(a: &[usize], b: &[usize], card_a: usize, card_b: usize) -> f64 {
    let mut joint = vec![vec![LAPLACE_ALPHA; card_b]; card_a];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0;
    }
    mutual_information(&joint)
}

struct DisjointSet(Vec<usize>);

impl DisjointSet {
    fn find(&mut self, x: usize) -> usize {
        let mut r = x;
        while self.0[r] != r {
            r = self.0[r];
        }
        let mut c = x;
        while self.0[c] != r {
            let next = self.0[c];
            self.0[c] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.0[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Maximum spanning tree (Kruskal) over `nodes` given symmetric weights.
/// Ties break on the lexicographic order of the endpoint names.
pub fn maximum_spanning_tree(
    nodes: &[usize],
    names: &[String],
    weight: impl Fn(usize, usize) -> f64,
) -> Vec<(usize, usize, f64)> {
    let mut candidates = Vec::new();
    for (ai, &a) in nodes.iter().enumerate() {
        for &b in &nodes[ai + 1..] {
            let (x, y) = if names[a] <= names[b] { (a, b) } else { (b, a) };
            candidates.push((x, y, weight(x, y)));
        }
    }
    candidates.sort_by(|p, q| {
        q.2.partial_cmp(&p.2)
            .unwrap_or(Ordering::Equal)
            .then_with(|| names[p.0].cmp(&names[q.0]))
            .then_with(|| names[p.1].cmp(&names[q.1]))
    });
    let mut dsu = DisjointSet((0..names.len()).collect());
    candidates
        .into_iter()
        .filter(|&(a, b, _)| dsu.union(a, b))
        .collect()
}

impl<F: Scalar> JointDistributionModel<F> {
    /// Fits marginals, the Chow-Liu tree and its conditional tables.
    pub fn fit(table: &Table<F>, bins: usize) -> Result<Self> {
        let schema = table.schema.clone();
        let n_cols = schema.columns.len();
        if n_cols == 0 {
            return Err(CoreError::Data("table has no columns".into()));
        }
        if table.rows.len() < 2 {
            return Err(CoreError::Data("need at least 2 rows to fit a distribution".into()));
        }
        let names = schema.names();

        let mut marginals = Vec::with_capacity(n_cols);
        for (j, spec) in schema.columns.iter().enumerate() {
            let col: Vec<_> = table.rows.iter().map(|r| &r[j]).collect();
            marginals.push(ColumnMarginal::fit(spec, &col, bins)?);
        }
        let states: Vec<Vec<usize>> = (0..n_cols)
            .map(|j| {
                table
                    .rows
                    .iter()
                    .map(|r| {
                        marginals[j].state_of(&r[j]).ok_or_else(|| {
                            CoreError::Data(format!("column {} has a value outside its domain", names[j]))
                        })
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        let cards: Vec<usize> = marginals.iter().map(ColumnMarginal::n_states).collect();
        let observed = |j: usize| marginals[j].probs().iter().filter(|p| p.f64() > 0.0).count();

        let varying: Vec<usize> = (0..n_cols).filter(|&j| observed(j) > 1).collect();
        let constant: Vec<usize> = (0..n_cols).filter(|&j| observed(j) <= 1).collect();

        let tree = maximum_spanning_tree(&varying, &names, |a, b| {
            smoothed_mi(&states[a], &states[b], cards[a], cards[b])
        });

        let mut incident = vec![0.0f64; n_cols];
        for &(a, b, w) in &tree {
            incident[a] += w;
            incident[b] += w;
        }
        let pool = if varying.is_empty() { &constant } else { &varying };
        let root = *pool
            .iter()
            .max_by(|&&a, &&b| {
                incident[a]
                    .partial_cmp(&incident[b])
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| names[b].cmp(&names[a]))
            })
            .expect("at least one column");

        let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_cols];
        for &(a, b, w) in &tree {
            adjacency[a].push((b, w));
            adjacency[b].push((a, w));
        }
        for &c in &constant {
            if c != root {
                adjacency[root].push((c, 0.0));
                adjacency[c].push((root, 0.0));
            }
        }

        let mut edges = Vec::new();
        let mut seen = vec![false; n_cols];
        let mut queue = VecDeque::from([root]);
        seen[root] = true;
        while let Some(p) = queue.pop_front() {
            let mut kids = adjacency[p].clone();
            kids.sort_by(|x, y| names[x.0].cmp(&names[y.0]));
            for (c, w) in kids {
                if seen[c] {
                    continue;
                }
                seen[c] = true;
                queue.push_back(c);
                let mut counts = vec![vec![LAPLACE_ALPHA; cards[c]]; cards[p]];
                for (&sp, &sc) in states[p].iter().zip(&states[c]) {
                    counts[sp][sc] += 1.0;
                }
                let cpt = counts
                    .into_iter()
                    .map(|row| {
                        let total: f64 = row.iter().sum();
                        row.into_iter().map(|x| F::of(x / total)).collect()
                    })
                    .collect();
                edges.push(DependencyEdge {
                    parent: names[p].clone(),
                    child: names[c].clone(),
                    mi: F::of(w),
                    cpt,
                });
            }
        }

        let model = JointDistributionModel {
            schema,
            marginals,
            edges,
            root: names[root].clone(),
            detached: Vec::new(),
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.schema.validate()?;
        if self.marginals.len() != self.schema.columns.len() {
            return Err(CoreError::invalid("one marginal per column required"));
        }
        for m in &self.marginals {
            m.validate()?;
        }
        for e in &self.edges {
            if e.cpt.iter().any(|row| !sums_to_one(row.iter().copied())) {
                return Err(CoreError::invalid(format!(
                    "CPT row for {} -> {} does not sum to 1",
                    e.parent, e.child
                )));
            }
        }
        // Acyclic with at most one parent per column.
        let mut has_parent = vec![false; self.schema.columns.len()];
        for e in &self.edges {
            let c = self
                .schema
                .index_of(&e.child)
                .ok_or_else(|| CoreError::invalid("edge references unknown column"))?;
            if has_parent[c] {
                return Err(CoreError::invalid(format!("column {} has two parents", e.child)));
            }
            has_parent[c] = true;
        }
        if self.order().len() != self.schema.columns.len() {
            return Err(CoreError::invalid("dependency structure is cyclic"));
        }
        Ok(())
    }

    /// Parent column index and CPT per column.
    pub fn parents(&self) -> Vec<Option<(usize, &DependencyEdge<F>)>> {
        let mut out = vec![None; self.schema.columns.len()];
        for e in &self.edges {
            if let (Some(p), Some(c)) = (self.schema.index_of(&e.parent), self.schema.index_of(&e.child)) {
                out[c] = Some((p, e));
            }
        }
        out
    }

    /// Topological sampling order: parents before children.
    pub fn order(&self) -> Vec<usize> {
        let n = self.schema.columns.len();
        let parents = self.parents();
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut roots = Vec::new();
        for (c, p) in parents.iter().enumerate() {
            match p {
                Some((p, _)) => children[*p].push(c),
                None => roots.push(c),
            }
        }
        let mut order = Vec::with_capacity(n);
        let mut queue: VecDeque<usize> = roots.into();
        let mut visited = vec![false; n];
        while let Some(x) = queue.pop_front() {
            if visited[x] {
                continue;
            }
            visited[x] = true;
            order.push(x);
            queue.extend(children[x].iter().copied());
        }
        order
    }

    /// Mutual information of the tree edges, as `(parent, child, mi)`.
    pub fn mi_weights(&self) -> Vec<(String, String, F)> {
        self.edges
            .iter()
            .map(|e| (e.parent.clone(), e.child.clone(), e.mi))
            .collect()
    }

    /// Total MI over tree edges.
    pub fn total_mi(&self) -> F {
        self.edges.iter().map(|e| e.mi).sum()
    }

    /// Draws one row; `regions` optionally restricts each column (constrained sampling).
    pub fn sample_row_constrained<R: Rng + ?Sized>(
        &self,
        rng: &mut R,
        regions: Option<&[ColumnRegion<F>]>,
    ) -> Option<Row<F>> {
        let n = self.schema.columns.len();
        let parents = self.parents();
        let mut states = vec![usize::MAX; n];
        let mut row: Vec<Option<super::schema::Cell<F>>> = vec![None; n];
        for c in self.order() {
            let marginal = &self.marginals[c];
            let base: Vec<F> = match parents[c] {
                Some((p, edge)) => edge.cpt[states[p]].clone(),
                None => marginal.probs(),
            };
            let spec = &self.schema.columns[c];
            let region = regions.map(|r| &r[c]);
            let (state, value) = match region {
                None | Some(ColumnRegion::Any) => {
                    let s = draw_weighted(&base, rng)?;
                    (s, marginal.draw_value(s, None, spec.integral, rng)?)
                }
                Some(region) => {
                    let support = marginal.probs();
                    let feasible = region.feasibility(marginal, spec.integral);
                    let weighted: Vec<F> = base
                        .iter()
                        .zip(&feasible)
                        .zip(&support)
                        .map(|((b, f), s)| if s.f64() > 0.0 { *b * F::of(*f) } else { F::zero() })
                        .collect();
                    let s = match draw_weighted(&weighted, rng) {
                        Some(s) => s,
                        None => {
                            let fallback: Vec<F> = support
                                .iter()
                                .zip(&feasible)
                                .map(|(s, f)| *s * F::of(*f))
                                .collect();
                            draw_weighted(&fallback, rng)?
                        }
                    };
                    (s, marginal.draw_value(s, region.interval(), spec.integral, rng)?)
                }
            };
            states[c] = state;
            row[c] = Some(value);
        }
        row.into_iter().collect()
    }

    pub fn sample_row<R: Rng + ?Sized>(&self, rng: &mut R) -> Row<F> {
        self.sample_row_constrained(rng, None)
            .expect("unconstrained sampling always succeeds on a valid model")
    }

    /// Draws `n` rows deterministically from `seed`.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Row<F>> {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.sample_row(&mut rng)).collect()
    }
}

/// Restriction of one column used by constrained sampling.
#[derive(Clone, Debug, PartialEq)]
pub enum ColumnRegion<F> {
    Any,
    Numeric(Interval<F>),
    Categories(Vec<String>),
}

impl<F: Scalar> ColumnRegion<F> {
    fn interval(&self) -> Option<&Interval<F>> {
        match self {
            ColumnRegion::Numeric(iv) => Some(iv),
            _ => None,
        }
    }

    /// Per-state share of mass that satisfies the region.
    pub fn feasibility(&self, marginal: &ColumnMarginal<F>, integral: bool) -> Vec<f64> {
        match (self, marginal) {
            (ColumnRegion::Any, m) => vec![1.0; m.n_states()],
            (ColumnRegion::Categories(allowed), ColumnMarginal::Categorical { probs }) => probs
                .iter()
                .map(|(c, _)| if allowed.contains(c) { 1.0 } else { 0.0 })
                .collect(),
            (ColumnRegion::Numeric(iv), ColumnMarginal::Numeric { bins }) => bins
                .iter()
                .map(|b| b.interval.overlap_fraction(iv, integral))
                .collect(),
            (_, m) => vec![0.0; m.n_states()],
        }
    }

    /// Whether some supported state can satisfy the region.
    pub fn satisfiable(&self, marginal: &ColumnMarginal<F>, integral: bool) -> bool {
        self.feasibility(marginal, integral)
            .iter()
            .zip(marginal.probs())
            .any(|(f, p)| *f > 0.0 && p.f64() > 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::schema::{Cell, ColumnSpec, Domain};

    fn binary_table(n: usize, correlated: bool) -> Table<f64> {
        let cats = vec!["0".to_string(), "1".to_string()];
        let schema = TableSchema {
            columns: vec![
                ColumnSpec {
                    name: "c1".into(),
                    domain: Domain::Categorical { categories: cats.clone() },
                    integral: false,
                },
                ColumnSpec {
                    name: "c2".into(),
                    domain: Domain::Categorical { categories: cats },
                    integral: false,
                },
            ],
        };
        let rows = (0..n)
            .map(|i| {
                let a = (i % 2).to_string();
                let b = if correlated { a.clone() } else { ((i / 2) % 2).to_string() };
                vec![Cell::Cat(a), Cell::Cat(b)]
            })
            .collect();
        Table { schema, rows }
    }

    /// Hand computation: counts [[50,0],[0,50]] + 1 -> [[51,1],[1,51]] / 104,
    /// both margins 1/2, MI = 2(51/104)ln(51/26) + 2(1/104)ln(1/26).
    #[test]
    fn perfectly_correlated_pair_mi_matches_hand_computation() {
        let expected = 2.0 * (51.0 / 104.0) * (51.0f64 / 26.0).ln()
            + 2.0 * (1.0 / 104.0) * (1.0f64 / 26.0).ln();
        let model = JointDistributionModel::fit(&binary_table(100, true), DEFAULT_BINS).unwrap();
        assert_eq!(model.edges.len(), 1);
        assert!((model.edges[0].mi - expected).abs() < 1e-12);
        assert!((expected - 0.598_07).abs() < 1e-4);
        // Smoothing pulls it below ln 2.
        assert!(model.edges[0].mi < std::f64::consts::LN_2);
    }

    #[test]
    fn single_column_has_root_only() {
        let mut t = binary_table(10, true);
        t.schema.columns.truncate(1);
        for r in &mut t.rows {
            r.truncate(1);
        }
        let model = JointDistributionModel::fit(&t, DEFAULT_BINS).unwrap();
        assert!(model.edges.is_empty());
        assert_eq!(model.root, "c1");
    }

    #[test]
    fn constant_column_attaches_as_leaf() {
        let mut t = binary_table(20, true);
        t.schema.columns.push(ColumnSpec {
            name: "k".into(),
            domain: Domain::Numeric { min: 5.0, max: 5.0 },
            integral: true,
        });
        for r in &mut t.rows {
            r.push(Cell::Num(5.0));
        }
        let model = JointDistributionModel::fit(&t, DEFAULT_BINS).unwrap();
        let k_edge = model.edges.iter().find(|e| e.child == "k").unwrap();
        assert_eq!(k_edge.mi, 0.0);
        assert!(model.edges.iter().all(|e| e.parent != "k"));
    }

    #[test]
    fn too_few_rows_is_an_error() {
        assert!(JointDistributionModel::fit(&binary_table(1, true), DEFAULT_BINS).is_err());
    }

    #[test]
    fn sampling_is_deterministic_for_a_seed() {
        let model = JointDistributionModel::fit(&binary_table(100, false), DEFAULT_BINS).unwrap();
        assert_eq!(model.sample(50, 3), model.sample(50, 3));
        assert_ne!(model.sample(50, 3), model.sample(50, 4));
    }

    #[test]
    fn cpt_rows_sum_to_one_f32() {
        let t = binary_table(100, true);
        let t32: Table<f32> = Table {
            schema: TableSchema {
                columns: t
                    .schema
                    .columns
                    .iter()
                    .map(|c| ColumnSpec {
                        name: c.name.clone(),
                        domain: Domain::Categorical {
                            categories: c.categories().to_vec(),
                        },
                        integral: false,
                    })
                    .collect(),
            },
            rows: t
                .rows
                .iter()
                .map(|r| r.iter().map(|c| Cell::Cat(c.cat().unwrap().to_string())).collect())
                .collect(),
        };
        let model = JointDistributionModel::fit(&t32, DEFAULT_BINS).unwrap();
        assert!((model.edges[0].cpt[0][0] - 51.0 / 52.0).abs() < 1e-6);
    }
}
