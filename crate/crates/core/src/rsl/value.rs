use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length must equal rows * cols");
        Self { rows, cols, data }
    }

    /// Builds a matrix from equal-length rows. Returns `None` for ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Option<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return None;
            }
            data.extend_from_slice(r);
        }
        Some(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }
}

/// A value visible to reward programs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "serde_json::Value", into = "serde_json::Value")]
pub enum Value {
    Num(f64),
    Bool(bool),
    Vector(Arc<Vec<f64>>),
    Matrix(Arc<Matrix>),
    Record(Arc<BTreeMap<String, f64>>),
    Str(Arc<str>),
}

impl Value {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Value::Num(_) => "scalar",
            Value::Bool(_) => "boolean",
            Value::Vector(_) => "vector",
            Value::Matrix(_) => "matrix",
            Value::Record(_) => "record",
            Value::Str(_) => "string",
        }
    }

    pub fn is_finite(&self) -> bool {
        match self {
            Value::Num(x) => x.is_finite(),
            Value::Bool(_) | Value::Str(_) => true,
            Value::Vector(v) => v.iter().all(|x| x.is_finite()),
            Value::Matrix(m) => m.data().iter().all(|x| x.is_finite()),
            Value::Record(r) => r.values().all(|x| x.is_finite()),
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Num(x) => Some(*x),
            Value::Bool(b) => Some(if *b { 1.0 } else { 0.0 }),
            _ => None,
        }
    }

    pub fn as_slice(&self) -> Option<&[f64]> {
        match self {
            Value::Vector(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_matrix(&self) -> Option<&Matrix> {
        match self {
            Value::Matrix(m) => Some(m),
            _ => None,
        }
    }

    /// Element count for collections, 1 for scalars.
    pub fn size(&self) -> usize {
        match self {
            Value::Vector(v) => v.len(),
            Value::Matrix(m) => m.data().len(),
            Value::Record(r) => r.len(),
            _ => 1,
        }
    }
}

impl From<f64> for Value {
    fn from(x: f64) -> Self {
        Value::Num(x)
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<usize> for Value {
    fn from(x: usize) -> Self {
        Value::Num(x as f64)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::Vector(Arc::new(v))
    }
}

impl From<&[f64]> for Value {
    fn from(v: &[f64]) -> Self {
        Value::Vector(Arc::new(v.to_vec()))
    }
}

impl From<Matrix> for Value {
    fn from(m: Matrix) -> Self {
        Value::Matrix(Arc::new(m))
    }
}

impl From<Value> for serde_json::Value {
    fn from(v: Value) -> Self {
        use serde_json::json;
        match v {
            Value::Num(x) => json!(x),
            Value::Bool(b) => json!(b),
            Value::Vector(v) => json!(*v),
            Value::Matrix(m) => json!(m.to_rows()),
            Value::Record(r) => json!(*r),
            Value::Str(s) => json!(&*s),
        }
    }
}

impl TryFrom<serde_json::Value> for Value {
    type Error = String;

    fn try_from(v: serde_json::Value) -> Result<Self, String> {
        use serde_json::Value as J;
        let num = |j: &J| j.as_f64().ok_or_else(|| format!("expected a number, found {j}"));
        Ok(match v {
            J::Number(n) => Value::Num(n.as_f64().ok_or("number out of range")?),
            J::Bool(b) => Value::Bool(b),
            J::String(s) => Value::Str(s.into()),
            J::Array(items) => {
                if items.first().is_some_and(J::is_array) {
                    let rows = items
                        .iter()
                        .map(|r| match r {
                            J::Array(cells) => cells.iter().map(num).collect::<Result<Vec<_>, _>>(),
                            other => Err(format!("expected a matrix row, found {other}")),
                        })
                        .collect::<Result<Vec<_>, _>>()?;
                    Value::from(Matrix::from_rows(&rows).ok_or("ragged matrix rows")?)
                } else {
                    Value::from(items.iter().map(num).collect::<Result<Vec<_>, _>>()?)
                }
            }
            J::Object(map) => Value::Record(Arc::new(
                map.iter()
                    .map(|(k, v)| Ok((k.clone(), num(v)?)))
                    .collect::<Result<BTreeMap<_, _>, String>>()?,
            )),
            J::Null => return Err("null is not a value".into()),
        })
    }
}
