//! Per-column marginal distributions and their discretization.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::num::{sums_to_one, Scalar};

use super::schema::{Cell, ColumnSpec, Domain};

/// A real interval with independently open or closed ends.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct Interval<F> {
    pub lo: F,
    #[serde(default)]
    pub lo_open: bool,
    pub hi: F,
    #[serde(default)]
    pub hi_open: bool,
}

impl<F: Scalar> Interval<F> {
    pub fn closed(lo: F, hi: F) -> Self {
        Interval {
            lo,
            lo_open: false,
            hi,
            hi_open: false,
        }
    }

    pub fn unbounded() -> Self {
        Interval {
            lo: F::neg_infinity(),
            lo_open: true,
            hi: F::infinity(),
            hi_open: true,
        }
    }

    pub fn contains(&self, x: F) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        let below = if self.hi_open { x < self.hi } else { x <= self.hi };
        above && below
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && (self.lo_open || self.hi_open))
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi && !self.is_empty()
    }

    pub fn intersect(&self, other: &Interval<F>) -> Interval<F> {
        let (lo, lo_open) = if self.lo > other.lo {
            (self.lo, self.lo_open)
        } else if other.lo > self.lo {
            (other.lo, other.lo_open)
        } else {
            (self.lo, self.lo_open || other.lo_open)
        };
        let (hi, hi_open) = if self.hi < other.hi {
            (self.hi, self.hi_open)
        } else if other.hi < self.hi {
            (other.hi, other.hi_open)
        } else {
            (self.hi, self.hi_open || other.hi_open)
        };
        Interval {
            lo,
            lo_open,
            hi,
            hi_open,
        }
    }

    pub fn length(&self) -> F {
        if self.is_empty() {
            F::zero()
        } else {
            self.hi - self.lo
        }
    }

    fn int_bounds(&self) -> Option<(i64, i64)> {
        if self.is_empty() {
            return None;
        }
        let lo = self.lo.f64();
        let hi = self.hi.f64();
        let first = if self.lo_open && lo.fract() == 0.0 {
            lo + 1.0
        } else {
            lo.ceil()
        };
        let last = if self.hi_open && hi.fract() == 0.0 {
            hi - 1.0
        } else {
            hi.floor()
        };
        (first <= last).then_some((first as i64, last as i64))
    }

    /// Number of whole numbers inside.
    pub fn int_count(&self) -> u64 {
        self.int_bounds()
            .map(|(a, b)| (b - a + 1) as u64)
            .unwrap_or(0)
    }

    /// Share of `self` (a bin) that also lies in `region`, by length, or by
    /// whole-number count for integral columns.
    pub fn overlap_fraction(&self, region: &Interval<F>, integral: bool) -> f64 {
        let inter = self.intersect(region);
        if inter.is_empty() {
            return 0.0;
        }
        if integral {
            let total = self.int_count();
            if total == 0 {
                return 0.0;
            }
            return inter.int_count() as f64 / total as f64;
        }
        if self.is_point() {
            return 1.0;
        }
        let len = self.length().f64();
        if len <= 0.0 {
            return 0.0;
        }
        inter.length().f64() / len
    }

    /// Uniform draw inside the interval; whole numbers only if `integral`.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, integral: bool) -> Option<F> {
        if self.is_empty() {
            return None;
        }
        if integral {
            let (a, b) = self.int_bounds()?;
            return Some(F::of(rng.gen_range(a..=b) as f64));
        }
        if self.is_point() {
            return Some(self.lo);
        }
        for _ in 0..64 {
            let u: f64 = rng.gen();
            let x = F::of(self.lo.f64() + (self.hi.f64() - self.lo.f64()) * u);
            if self.contains(x) {
                return Some(x);
            }
        }
        let mid = F::of((self.lo.f64() + self.hi.f64()) / 2.0);
        self.contains(mid).then_some(mid)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct Bin<F> {
    pub interval: Interval<F>,
    pub prob: F,
}

/// Empirical distribution of one column. Numeric columns are represented by
/// equal-frequency bins, each sampled uniformly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum ColumnMarginal<F> {
    Categorical { probs: Vec<(String, F)> },
    Numeric { bins: Vec<Bin<F>> },
}

/// Equal-frequency bin intervals for sorted values: `[e_i, e_{i+1})`, the last one closed.
fn equal_frequency_edges<F: Scalar>(sorted: &[F], k: usize) -> Vec<Interval<F>> {
    let n = sorted.len();
    let min = sorted[0];
    let max = sorted[n - 1];
    if min == max {
        return vec![Interval::closed(min, max)];
    }
    let mut edges = vec![min];
    for i in 1..k {
        let e = sorted[i * n / k];
        if e > *edges.last().unwrap() && e < max {
            edges.push(e);
        }
    }
    edges.push(max);
    edges
        .windows(2)
        .enumerate()
        .map(|(i, w)| Interval {
            lo: w[0],
            lo_open: false,
            hi: w[1],
            hi_open: i + 2 < edges.len(),
        })
        .collect()
}

impl<F: Scalar> ColumnMarginal<F> {
    /// Empirical marginal of a column; numeric columns use up to `k` bins.
    pub fn fit(spec: &ColumnSpec<F>, values: &[&Cell<F>], k: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(CoreError::Data("empty table".into()));
        }
        let n = F::of_usize(values.len());
        match &spec.domain {
            Domain::Categorical { categories } => {
                let mut counts = vec![0usize; categories.len()];
                for v in values {
                    let s = v
                        .cat()
                        .ok_or_else(|| CoreError::Data(format!("column {}: expected category", spec.name)))?;
                    let i = categories
                        .binary_search_by(|c| c.as_str().cmp(s))
                        .map_err(|_| CoreError::Data(format!("column {}: unknown category {s}", spec.name)))?;
                    counts[i] += 1;
                }
                Ok(ColumnMarginal::Categorical {
                    probs: categories
                        .iter()
                        .zip(counts)
                        .map(|(c, n_c)| (c.clone(), F::of_usize(n_c) / n))
                        .collect(),
                })
            }
            Domain::Numeric { .. } => {
                let mut sorted: Vec<F> = values
                    .iter()
                    .map(|v| {
                        v.num()
                            .ok_or_else(|| CoreError::Data(format!("column {}: expected number", spec.name)))
                    })
                    .collect::<Result<_>>()?;
                sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                let intervals = equal_frequency_edges(&sorted, k.max(1));
                let mut counts = vec![0usize; intervals.len()];
                for x in &sorted {
                    counts[locate(&intervals, *x)] += 1;
                }
                Ok(ColumnMarginal::Numeric {
                    bins: intervals
                        .into_iter()
                        .zip(counts)
                        .map(|(interval, c)| Bin {
                            interval,
                            prob: F::of_usize(c) / n,
                        })
                        .collect(),
                })
            }
        }
    }

    pub fn n_states(&self) -> usize {
        match self {
            ColumnMarginal::Categorical { probs } => probs.len(),
            ColumnMarginal::Numeric { bins } => bins.len(),
        }
    }

    pub fn probs(&self) -> Vec<F> {
        match self {
            ColumnMarginal::Categorical { probs } => probs.iter().map(|(_, p)| *p).collect(),
            ColumnMarginal::Numeric { bins } => bins.iter().map(|b| b.prob).collect(),
        }
    }

    /// Discrete state (category index or bin index) of a cell.
    pub fn state_of(&self, cell: &Cell<F>) -> Option<usize> {
        match (self, cell) {
            (ColumnMarginal::Categorical { probs }, Cell::Cat(s)) => {
                probs.iter().position(|(c, _)| c == s)
            }
            (ColumnMarginal::Numeric { bins }, Cell::Num(x)) => {
                if bins.is_empty() {
                    None
                } else {
                    let intervals: Vec<Interval<F>> = bins.iter().map(|b| b.interval).collect();
                    Some(locate(&intervals, *x))
                }
            }
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !sums_to_one(self.probs()) {
            return Err(CoreError::invalid("marginal probabilities do not sum to 1"));
        }
        if let ColumnMarginal::Numeric { bins } = self {
            if bins.windows(2).any(|w| !(w[0].interval.lo < w[1].interval.lo)) {
                return Err(CoreError::invalid("bin edges not strictly increasing"));
            }
        }
        Ok(())
    }

    /// Materializes a cell for `state`, restricted to `region` for numeric columns.
    pub fn draw_value<R: Rng + ?Sized>(
        &self,
        state: usize,
        region: Option<&Interval<F>>,
        integral: bool,
        rng: &mut R,
    ) -> Option<Cell<F>> {
        match self {
            ColumnMarginal::Categorical { probs } => Some(Cell::Cat(probs.get(state)?.0.clone())),
            ColumnMarginal::Numeric { bins } => {
                let bin = bins.get(state)?.interval;
                let target = match region {
                    Some(r) => bin.intersect(r),
                    None => bin,
                };
                target.draw(rng, integral).map(Cell::Num)
            }
        }
    }
}

/// Index of the interval holding `x`; values outside are clamped to the end bins.
fn locate<F: Scalar>(intervals: &[Interval<F>], x: F) -> usize {
    let idx = intervals.partition_point(|iv| iv.lo <= x);
    idx.saturating_sub(1).min(intervals.len() - 1)
}

/// Draws an index with probability proportional to `weights`.
pub fn draw_weighted<F: Scalar, R: Rng + ?Sized>(weights: &[F], rng: &mut R) -> Option<usize> {
    let total: f64 = weights.iter().map(|w| w.f64().max(0.0)).sum();
    if !(total > 0.0) {
        return None;
    }
    let mut u = rng.gen::<f64>() * total;
    let mut last = None;
    for (i, w) in weights.iter().enumerate() {
        let w = w.f64().max(0.0);
        if w <= 0.0 {
            continue;
        }
        last = Some(i);
        if u < w {
            return Some(i);
        }
        u -= w;
    }
    last
}
