//! Synthetic tabular data: distribution inference, constraints, surrogate
//! trees and path-guided generation.

pub mod joint;
pub mod marginal;
pub mod paths;
pub mod schema;
pub mod surrogate;
pub mod udc;

pub use joint::{ColumnRegion, DependencyEdge, JointDistributionModel, DEFAULT_BINS};
pub use marginal::{Bin, ColumnMarginal, Interval};
pub use paths::{
    extract_paths, generate_for_paths, path_coverage, path_coverage_masked, DecisionPath,
    GeneratedRow, PathGeneration, PathReport, Predicate,
};
pub use schema::{Cell, ColumnSpec, Domain, Row, Table, TableSchema};
pub use surrogate::{fit_cart, fit_surrogate, CartParams, SplitTest, SurrogateTree, TreeNode};
pub use udc::{apply_udc, AttributeOverride, UserDefinedConstraint};

use crate::error::Result;
use crate::num::Scalar;

/// Fits the joint model with `bins` equal-frequency bins per numeric column.
pub fn fit_distribution_model<F: Scalar>(table: &Table<F>, bins: usize) -> Result<JointDistributionModel<F>> {
    JointDistributionModel::fit(table, bins)
}

/// Draws `n` rows by ancestral sampling; deterministic in `seed`.
pub fn sample_joint<F: Scalar>(model: &JointDistributionModel<F>, n: usize, seed: u64) -> Vec<Row<F>> {
    model.sample(n, seed)
}
