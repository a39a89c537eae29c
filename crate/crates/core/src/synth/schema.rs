use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::RawTable;
use crate::error::{CoreError, Result};
use crate::num::Scalar;
use crate::sample::Sample;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum Domain<F> {
    Categorical { categories: Vec<String> },
    Numeric { min: F, max: F },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct ColumnSpec<F> {
    pub name: String,
    pub domain: Domain<F>,
    /// Every training value was a whole number; generated values are whole too.
    #[serde(default)]
    pub integral: bool,
}

impl<F: Scalar> ColumnSpec<F> {
    pub fn is_numeric(&self) -> bool {
        matches!(self.domain, Domain::Numeric { .. })
    }

    pub fn categories(&self) -> &[String] {
        match &self.domain {
            Domain::Categorical { categories } => categories,
            Domain::Numeric { .. } => &[],
        }
    }

    pub fn range(&self) -> Option<(F, F)> {
        match self.domain {
            Domain::Numeric { min, max } => Some((min, max)),
            Domain::Categorical { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct TableSchema<F> {
    pub columns: Vec<ColumnSpec<F>>,
}

impl<F: Scalar> TableSchema<F> {
    pub fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for c in &self.columns {
            if !names.insert(c.name.as_str()) {
                return Err(CoreError::invalid(format!("duplicate column {}", c.name)));
            }
            if let Domain::Numeric { min, max } = c.domain {
                if !(min <= max) {
                    return Err(CoreError::invalid(format!("column {}: min > max", c.name)));
                }
            }
        }
        Ok(())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&ColumnSpec<F>> {
        self.columns.iter().find(|c| c.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.columns.iter().map(|c| c.name.clone()).collect()
    }

    /// Renders a row as a JSON object in column order.
    pub fn to_sample(&self, row: &[Cell<F>]) -> Sample {
        let mut map = Map::new();
        for (spec, cell) in self.columns.iter().zip(row) {
            let value = match cell {
                Cell::Cat(s) => Value::String(s.clone()),
                Cell::Num(x) if spec.integral && x.is_finite() => Value::from(x.f64().round() as i64),
                Cell::Num(x) => serde_json::Number::from_f64(x.f64())
                    .map(Value::Number)
                    .unwrap_or(Value::Null),
            };
            map.insert(spec.name.clone(), value);
        }
        Sample::Row(map)
    }

    /// Reads a row back from a JSON object sample.
    pub fn row_from_sample(&self, sample: &Sample) -> Result<Row<F>> {
        let map = sample
            .as_row()
            .ok_or_else(|| CoreError::invalid("expected a tabular sample"))?;
        self.columns
            .iter()
            .map(|spec| {
                let v = map
                    .get(&spec.name)
                    .ok_or_else(|| CoreError::invalid(format!("sample lacks column {}", spec.name)))?;
                Ok(if spec.is_numeric() {
                    let x = match v {
                        Value::Number(n) => n.as_f64(),
                        Value::String(s) => s.parse().ok(),
                        _ => None,
                    }
                    .ok_or_else(|| CoreError::invalid(format!("column {}: not numeric", spec.name)))?;
                    Cell::Num(F::of(x))
                } else {
                    Cell::Cat(match v {
                        Value::String(s) => s.clone(),
                        other => other.to_string(),
                    })
                })
            })
            .collect()
    }

    /// A row lies inside the schema domain.
    pub fn conforms(&self, row: &[Cell<F>]) -> bool {
        row.len() == self.columns.len()
            && self.columns.iter().zip(row).all(|(spec, cell)| match (&spec.domain, cell) {
                (Domain::Numeric { min, max }, Cell::Num(x)) => *x >= *min && *x <= *max,
                (Domain::Categorical { categories }, Cell::Cat(s)) => categories.contains(s),
                _ => false,
            })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub enum Cell<F> {
    Num(F),
    Cat(String),
}

impl<F: Scalar> Cell<F> {
    pub fn num(&self) -> Option<F> {
        match self {
            Cell::Num(x) => Some(*x),
            Cell::Cat(_) => None,
        }
    }

    pub fn cat(&self) -> Option<&str> {
        match self {
            Cell::Cat(s) => Some(s),
            Cell::Num(_) => None,
        }
    }
}

pub type Row<F> = Vec<Cell<F>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "F: Scalar", deserialize = "F: Scalar"))]
pub struct Table<F> {
    pub schema: TableSchema<F>,
    pub rows: Vec<Row<F>>,
}

impl<F: Scalar> Table<F> {
    /// Types a raw CSV table: a column is numeric when every value parses as
    /// a finite number and it is not listed in `force_categorical`.
    pub fn from_raw(raw: &RawTable, force_categorical: &[String]) -> Result<Self> {
        if raw.headers.is_empty() {
            return Err(CoreError::Data("table has no columns".into()));
        }
        if raw.rows.is_empty() {
            return Err(CoreError::Data("empty training data".into()));
        }
        let mut columns = Vec::with_capacity(raw.headers.len());
        let mut numeric_cols = Vec::with_capacity(raw.headers.len());
        for (j, name) in raw.headers.iter().enumerate() {
            let parsed: Option<Vec<f64>> = if force_categorical.contains(name) {
                None
            } else {
                raw.rows
                    .iter()
                    .map(|r| r[j].parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect()
            };
            match parsed {
                Some(values) => {
                    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
                    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let integral = values.iter().all(|x| x.fract() == 0.0);
                    columns.push(ColumnSpec {
                        name: name.clone(),
                        domain: Domain::Numeric {
                            min: F::of(min),
                            max: F::of(max),
                        },
                        integral,
                    });
                    numeric_cols.push(Some(values));
                }
                None => {
                    let cats: BTreeSet<&str> = raw.rows.iter().map(|r| r[j].as_str()).collect();
                    columns.push(ColumnSpec {
                        name: name.clone(),
                        domain: Domain::Categorical {
                            categories: cats.into_iter().map(str::to_string).collect(),
                        },
                        integral: false,
                    });
                    numeric_cols.push(None);
                }
            }
        }
        let rows = (0..raw.rows.len())
            .map(|i| {
                (0..raw.headers.len())
                    .map(|j| match &numeric_cols[j] {
                        Some(values) => Cell::Num(F::of(values[i])),
                        None => Cell::Cat(raw.rows[i][j].clone()),
                    })
                    .collect()
            })
            .collect();
        let table = Table {
            schema: TableSchema { columns },
            rows,
        };
        table.schema.validate()?;
        Ok(table)
    }

    pub fn samples(&self) -> Vec<Sample> {
        self.rows.iter().map(|r| self.schema.to_sample(r)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_csv_table;

    #[test]
    fn infers_kinds_and_domains() {
        let raw = parse_csv_table(b"age,marital,score\n30,single,0.5\n40,married,0.25\n").unwrap();
        let t: Table<f64> = Table::from_raw(&raw, &[]).unwrap();
        let cols = &t.schema.columns;
        assert_eq!(cols[0].domain, Domain::Numeric { min: 30.0, max: 40.0 });
        assert!(cols[0].integral);
        assert_eq!(cols[1].categories(), &["married".to_string(), "single".to_string()]);
        assert!(!cols[2].integral);
        let forced: Table<f64> = Table::from_raw(&raw, &["age".to_string()]).unwrap();
        assert!(!forced.schema.columns[0].is_numeric());
    }

    #[test]
    fn sample_rendering_keeps_order_and_integers() {
        let raw = parse_csv_table(b"age,marital\n30,single\n").unwrap();
        let t: Table<f64> = Table::from_raw(&raw, &[]).unwrap();
        let s = t.schema.to_sample(&t.rows[0]);
        assert_eq!(serde_json::to_string(&s).unwrap(), r#"{"age":30,"marital":"single"}"#);
        assert_eq!(t.schema.row_from_sample(&s).unwrap(), t.rows[0]);
    }

    #[test]
    fn works_with_f32() {
        let raw = parse_csv_table(b"x\n0.5\n1.5\n").unwrap();
        let t: Table<f32> = Table::from_raw(&raw, &[]).unwrap();
        assert_eq!(t.schema.columns[0].range(), Some((0.5f32, 1.5f32)));
    }
}
