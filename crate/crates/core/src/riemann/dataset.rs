//! JSON-lines persistence of labelled covariances and MDM models.
//!
//! Each line is `{"label": 0-3 | null, "dim": d, "upper": [...]}` with the
//! upper triangle in row-major order. A model file is four such lines, one
//! mean per class in class order.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{MdmModel, MiClass, RiemannError, SpdMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub label: Option<MiClass>,
    pub dim: usize,
    pub upper: Vec<f64>,
}

impl DatasetRecord {
    pub fn new(matrix: &SpdMatrix, label: Option<MiClass>) -> Self {
        Self { label, dim: matrix.dim(), upper: matrix.upper() }
    }

    pub fn matrix(&self) -> Result<SpdMatrix, RiemannError> {
        SpdMatrix::from_upper(self.dim, &self.upper)
    }
}

fn io_err(e: impl std::fmt::Display) -> RiemannError {
    RiemannError::Format(e.to_string())
}

fn write_records(
    mut out: impl Write,
    records: impl IntoIterator<Item = DatasetRecord>,
) -> Result<(), RiemannError> {
    for r in records {
        serde_json::to_writer(&mut out, &r).map_err(io_err)?;
        out.write_all(b"\n").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn read_records(input: impl BufRead) -> Result<Vec<DatasetRecord>, RiemannError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: DatasetRecord =
            serde_json::from_str(&line).map_err(|e| RiemannError::Format(format!("line {}: {e}", n + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_dataset(out: impl Write, labeled: &[(SpdMatrix, MiClass)]) -> Result<(), RiemannError> {
    write_records(out, labeled.iter().map(|(m, c)| DatasetRecord::new(m, Some(*c))))
}

/// Reads a labelled dataset; unlabelled lines are rejected.
pub fn read_dataset(input: impl BufRead) -> Result<Vec<(SpdMatrix, MiClass)>, RiemannError> {
    read_records(input)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let label = r.label.ok_or_else(|| RiemannError::Format(format!("record {} has no label", i + 1)))?;
            Ok((r.matrix()?, label))
        })
        .collect()
}

pub fn write_model(out: impl Write, model: &MdmModel) -> Result<(), RiemannError> {
    write_records(
        out,
        model.class_means.iter().zip(MiClass::ALL).map(|(m, c)| DatasetRecord::new(m, Some(c))),
    )
}

pub fn read_model(input: impl BufRead) -> Result<MdmModel, RiemannError> {
    let mut means: Vec<Option<SpdMatrix>> = vec![None; MiClass::ALL.len()];
    for r in read_records(input)? {
        let c = r.label.ok_or_else(|| RiemannError::Format("model record without label".into()))?;
        means[c.index()] = Some(r.matrix()?);
    }
    let means = means
        .into_iter()
        .enumerate()
        .map(|(i, m)| m.ok_or(RiemannError::MissingClass(i)))
        .collect::<Result<Vec<_>, _>>()?;
    MdmModel::new(means)
}
