//! CSV ingestion and emission.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CliError;
use crate::model::Dataset;

const RESERVED: [&str; 4] = ["y", "a_obs", "a_obs2", "a_true"];

/// A parsed input file.
#[derive(Debug, Clone, PartialEq)]
pub struct InputTable {
    pub covariate_names: Vec<String>,
    pub data: Dataset,
    pub a_true: Option<Vec<bool>>,
}

fn parse_binary(cell: &str, line: u64, column: &str) -> Result<bool, CliError> {
    match cell {
        "0" => Ok(false),
        "1" => Ok(true),
        "" => Err(CliError::input(format!("row {line}, column {column}: missing value"))),
        other => Err(CliError::input(format!(
            "row {line}, column {column}: expected 0 or 1, found '{other}'"
        ))),
    }
}

fn parse_number(cell: &str, line: u64, column: &str) -> Result<f64, CliError> {
    if cell.trim().is_empty() {
        return Err(CliError::input(format!("row {line}, column {column}: missing value")));
    }
    match cell.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::input(format!(
            "row {line}, column {column}: '{cell}' is not a finite number"
        ))),
    }
}

/// Reads a table with a header row. Covariates are every column other than
/// `y`, `a_obs`, `a_obs2` and `a_true` unless `covariates` names them.
pub fn read_table(path: &Path, covariates: Option<&[String]>) -> Result<InputTable, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::input(format!("cannot open {}: {e}", path.display())))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::input(format!("{}: unreadable header: {e}", path.display())))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let find = |name: &str| headers.iter().position(|h| h == name);
    for (i, h) in headers.iter().enumerate() {
        if h.is_empty() {
            return Err(CliError::input(format!("header column {} is blank", i + 1)));
        }
        if headers[..i].contains(h) {
            return Err(CliError::input(format!("header column '{h}' appears twice")));
        }
    }
    let y_col = find("y").ok_or_else(|| CliError::input("missing required column 'y'"))?;
    let a_col = find("a_obs").ok_or_else(|| CliError::input("missing required column 'a_obs'"))?;
    let a2_col = find("a_obs2");
    let truth_col = find("a_true");

    let cov_cols: Vec<usize> = match covariates {
        Some(names) => names
            .iter()
            .map(|n| match find(n) {
                Some(_) if RESERVED.contains(&n.as_str()) => Err(CliError::input(format!(
                    "--covariates: '{n}' is a reserved column"
                ))),
                Some(i) => Ok(i),
                None => Err(CliError::input(format!("--covariates: no column named '{n}'"))),
            })
            .collect::<Result<_, _>>()?,
        None => (0..headers.len())
            .filter(|&i| !RESERVED.contains(&headers[i].as_str()))
            .collect(),
    };
    let d = cov_cols.len();

    let mut x = Vec::new();
    let mut y = Vec::new();
    let mut a_obs = Vec::new();
    let mut a_obs2 = a2_col.map(|_| Vec::new());
    let mut a_true = truth_col.map(|_| Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != headers.len() {
            return Err(CliError::input(format!(
                "row {line}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        y.push(parse_binary(&record[y_col], line, "y")?);
        a_obs.push(parse_binary(&record[a_col], line, "a_obs")?);
        if let (Some(c), Some(v)) = (a2_col, a_obs2.as_mut()) {
            v.push(parse_binary(&record[c], line, "a_obs2")?);
        }
        if let (Some(c), Some(v)) = (truth_col, a_true.as_mut()) {
            v.push(parse_binary(&record[c], line, "a_true")?);
        }
        for &c in &cov_cols {
            x.push(parse_number(&record[c], line, &headers[c])?);
        }
    }
    if y.is_empty() {
        return Err(CliError::input(format!("{} has no data rows", path.display())));
    }
    let data = Dataset::new(d, x, y, a_obs, a_obs2).map_err(CliError::from)?;
    Ok(InputTable {
        covariate_names: cov_cols.iter().map(|&c| headers[c].clone()).collect(),
        data,
        a_true,
    })
}

/// Column means and standard deviations used to z-score covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub columns: Vec<String>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

/// Centers and scales each covariate by its sample mean and standard
/// deviation. Constant columns are only centered.
pub fn standardize(table: &InputTable) -> Result<(Dataset, Standardization), CliError> {
    let data = &table.data;
    let (n, d) = (data.n(), data.d());
    let mut means = vec![0.0; d];
    for i in 0..n {
        for (m, v) in means.iter_mut().zip(data.row(i)) {
            *m += v / n as f64;
        }
    }
    let mut sds = vec![0.0; d];
    for i in 0..n {
        for ((s, v), m) in sds.iter_mut().zip(data.row(i)).zip(&means) {
            *s += (v - m).powi(2);
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for s in &mut sds {
        *s = (*s / denom).sqrt();
        if !(*s > 0.0) {
            *s = 1.0;
        }
    }
    let mut x = Vec::with_capacity(n * d);
    for i in 0..n {
        for ((v, m), s) in data.row(i).iter().zip(&means).zip(&sds) {
            x.push((v - m) / s);
        }
    }
    let scaled = Dataset::new(
        d,
        x,
        data.y().to_vec(),
        data.a_obs().to_vec(),
        data.a_obs2().map(<[bool]>::to_vec),
    )?;
    Ok((
        scaled,
        Standardization {
            columns: table.covariate_names.clone(),
            means,
            sds,
        },
    ))
}

fn bit(v: bool) -> &'static str {
    if v {
        "1"
    } else {
        "0"
    }
}

/// Writes a dataset in the input layout: `y, a_obs[, a_obs2], x1..xd[, a_true]`.
pub fn write_dataset<W: Write>(
    out: W,
    data: &Dataset,
    a_true: Option<&[bool]>,
) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(out));
    let mut header = vec!["y".to_string(), "a_obs".to_string()];
    if data.has_second_obs() {
        header.push("a_obs2".into());
    }
    header.extend((1..=data.d()).map(|j| format!("x{j}")));
    if a_true.is_some() {
        header.push("a_true".into());
    }
    w.write_record(&header).map_err(CliError::io)?;
    let mut fields: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n() {
        fields.clear();
        fields.push(bit(data.y()[i]).into());
        fields.push(bit(data.a_obs()[i]).into());
        if let Some(second) = data.a_obs2() {
            fields.push(bit(second[i]).into());
        }
        fields.extend(data.row(i).iter().map(|v| v.to_string()));
        if let Some(t) = a_true {
            fields.push(bit(t[i]).into());
        }
        w.write_record(&fields).map_err(CliError::io)?;
    }
    w.flush().map_err(|e| CliError::io(e.into()))?;
    Ok(())
}

/// Writes a header plus rows of pre-formatted cells.
pub fn write_rows<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(BufWriter::new(out));
    w.write_record(header).map_err(CliError::io)?;
    for row in rows {
        w.write_record(row).map_err(CliError::io)?;
    }
    w.flush().map_err(|e| CliError::io(e.into()))?;
    Ok(())
}
