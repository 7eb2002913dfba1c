//! Observation batches, CSV ingestion and the train/test/scaling helpers.

use std::path::Path;

use crate::error::{GpError, Result};
use crate::exact_gp::check_targets;
use crate::kernel::InputMatrix;

/// A block of streamed observations.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    pub x: InputMatrix,
    pub y: Vec<f64>,
}

impl DataBatch {
    pub fn new(x: InputMatrix, y: Vec<f64>) -> Result<Self> {
        check_targets(&x, &y)?;
        Ok(Self { x, y })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self { x: self.x.select_rows(idx), y: idx.iter().map(|&i| self.y[i]).collect() }
    }

    /// Rows `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        self.select(&(start..end).collect::<Vec<_>>())
    }

    pub fn concat(&self, other: &Self) -> Result<Self> {
        let x = self.x.vstack(&other.x)?;
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Self { x, y })
    }
}

/// Reads the named input columns and target column from a headed CSV file.
pub fn load_csv(path: impl AsRef<Path>, x_cols: &[String], y_col: &str) -> Result<(InputMatrix, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers = rdr.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| GpError::Parse { line: 1, message: format!("missing column `{name}`") })
    };
    if x_cols.is_empty() {
        return Err(GpError::invalid("at least one input column is required"));
    }
    let xi = x_cols.iter().map(|c| find(c)).collect::<Result<Vec<_>>>()?;
    let yi = find(y_col)?;

    let mut values = Vec::new();
    let mut y = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            GpError::Parse { line, message: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| -> Result<f64> {
            let raw = rec.get(i).ok_or_else(|| GpError::Parse { line, message: "ragged row".into() })?;
            let v: f64 = raw
                .trim()
                .parse()
                .map_err(|_| GpError::Parse { line, message: format!("non-numeric cell `{raw}`") })?;
            if !v.is_finite() {
                return Err(GpError::Parse { line, message: format!("non-finite cell `{raw}`") });
            }
            Ok(v)
        };
        for &i in &xi {
            values.push(cell(i)?);
        }
        y.push(cell(yi)?);
    }
    let x = InputMatrix::new(y.len(), xi.len(), values)?;
    Ok((x, y))
}

/// Writes inputs as `x0..x{D-1}` and the target as `y`.
pub fn write_csv(path: impl AsRef<Path>, x: &InputMatrix, y: &[f64]) -> Result<()> {
    check_targets(x, y)?;
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..x.dim()).map(|d| format!("x{d}")).collect();
    header.push("y".into());
    w.write_record(&header)?;
    for (i, yi) in y.iter().enumerate() {
        let mut row: Vec<String> = x.row(i).iter().map(|v| format!("{v:e}")).collect();
        row.push(format!("{yi:e}"));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Rows with `i % stride == 0` go to train, the rest to test.
pub fn interleave_split(x: &InputMatrix, y: &[f64], stride: usize) -> Result<(DataBatch, DataBatch)> {
    if stride < 2 {
        return Err(GpError::invalid("interleave stride must be at least 2"));
    }
    let all = DataBatch::new(x.clone(), y.to_vec())?;
    let (train, test): (Vec<usize>, Vec<usize>) = (0..all.len()).partition(|i| i % stride == 0);
    Ok((all.select(&train), all.select(&test)))
}

/// Per-column affine map `x ↦ offset + scale·x`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineTransform {
    pub scale: Vec<f64>,
    pub offset: Vec<f64>,
}

impl AffineTransform {
    pub fn apply(&self, x: &InputMatrix) -> Result<InputMatrix> {
        self.map(x, |v, d| self.offset[d] + self.scale[d] * v)
    }

    pub fn inverse(&self, x: &InputMatrix) -> Result<InputMatrix> {
        self.map(x, |v, d| (v - self.offset[d]) / self.scale[d])
    }

    fn map(&self, x: &InputMatrix, f: impl Fn(f64, usize) -> f64) -> Result<InputMatrix> {
        if x.dim() != self.scale.len() {
            return Err(GpError::DimensionMismatch {
                context: "affine transform",
                expected: self.scale.len(),
                found: x.dim(),
            });
        }
        let m = x.as_matrix().map_with_location(|_, d, v| f(v, d));
        InputMatrix::from_matrix(m)
    }
}

/// Linearly maps every column onto `[lo, hi]`.
pub fn scale_inputs(x: &InputMatrix, lo: f64, hi: f64) -> Result<(InputMatrix, AffineTransform)> {
    if !(hi > lo) {
        return Err(GpError::invalid("target range must satisfy hi > lo"));
    }
    if x.is_empty() {
        return Err(GpError::invalid("cannot scale an empty input matrix"));
    }
    let mut scale = Vec::with_capacity(x.dim());
    let mut offset = Vec::with_capacity(x.dim());
    for col in x.as_matrix().column_iter() {
        let (min, max) = (col.min(), col.max());
        if max <= min {
            return Err(GpError::invalid("cannot scale a constant input column"));
        }
        let s = (hi - lo) / (max - min);
        scale.push(s);
        offset.push(lo - s * min);
    }
    let t = AffineTransform { scale, offset };
    Ok((t.apply(x)?, t))
}
