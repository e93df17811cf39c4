//! CSV ingestion, confounder reduction and atomic output files.

use std::fs;
use std::path::Path;

use clap::ValueEnum;
use jne_core::{validate_dataset, Dataset, SquareMatrix};
use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConfounderReduce {
    #[default]
    SingleColumn,
    PcaFirstComponent,
}

/// A parsed input file.
#[derive(Debug, Clone)]
pub struct Ingested {
    pub dataset: Dataset,
    /// Names of the observed variables, in column order.
    pub variables: Vec<String>,
    /// Raw confounder columns, one per named confounder.
    pub confounders: DMatrix<f64>,
}

fn parse_error(path: &Path, message: impl Into<String>) -> CliError {
    CliError::Parse {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn read_table(path: &Path) -> CliResult<(Vec<String>, Vec<Vec<f64>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_error(path, e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| parse_error(path, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| parse_error(path, e.to_string()))?;
        let row = record
            .iter()
            .enumerate()
            .map(|(c, field)| {
                field.parse::<f64>().map_err(|_| {
                    parse_error(path, format!("row {}, column {}: {field:?} is not a number", line + 1, header[c]))
                })
            })
            .collect::<CliResult<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Reads a CSV with a header row. The named confounder columns are reduced to
/// a scalar confounder; every other column is an observed variable.
pub fn ingest_csv(path: &Path, confounder_cols: &[String], reduce: ConfounderReduce) -> CliResult<Ingested> {
    if confounder_cols.is_empty() {
        return Err(CliError::Config("at least one confounder column is required".into()));
    }
    let (header, rows) = read_table(path)?;
    let mut conf_idx = Vec::with_capacity(confounder_cols.len());
    for name in confounder_cols {
        let idx = header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::MissingColumn(name.clone()))?;
        conf_idx.push(idx);
    }
    let var_idx: Vec<usize> = (0..header.len()).filter(|c| !conf_idx.contains(c)).collect();
    let n = rows.len();
    let samples = DMatrix::from_fn(n, var_idx.len(), |i, j| rows[i][var_idx[j]]);
    let confounders = DMatrix::from_fn(n, conf_idx.len(), |i, j| rows[i][conf_idx[j]]);
    let g = reduce_confounders(&confounders, confounder_cols, reduce)?;
    Ok(Ingested {
        dataset: validate_dataset(samples, g)?,
        variables: var_idx.iter().map(|&c| header[c].clone()).collect(),
        confounders,
    })
}

/// Scalar confounder from an `n × q` block. The principal-component reduction
/// standardizes the columns, projects onto the leading eigenvector of their
/// correlation matrix and rescales to unit sample variance.
pub fn reduce_confounders(block: &DMatrix<f64>, names: &[String], reduce: ConfounderReduce) -> CliResult<Vec<f64>> {
    let (n, q) = block.shape();
    match reduce {
        ConfounderReduce::SingleColumn => {
            if q != 1 {
                return Err(CliError::Config(format!(
                    "single-column reduction needs exactly one confounder column, got {q}"
                )));
            }
            Ok(block.column(0).iter().copied().collect())
        }
        ConfounderReduce::PcaFirstComponent => {
            if n < 2 {
                return Err(CliError::Core(jne_core::Error::TooFewSamples(n)));
            }
            let mut z = block.clone();
            for c in 0..q {
                let mean = z.column(c).mean();
                let var = z.column(c).iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                if !(var > 0.0) {
                    return Err(CliError::ConstantConfounder(names[c].clone()));
                }
                let sd = var.sqrt();
                z.column_mut(c).apply(|v| *v = (*v - mean) / sd);
            }
            let corr = z.transpose() * &z / (n - 1) as f64;
            let eig = SymmetricEigen::new(corr);
            let lead = eig.eigenvalues.imax();
            let mut dir = eig.eigenvectors.column(lead).into_owned();
            if dir[dir.iamax()] < 0.0 {
                dir = -dir;
            }
            let proj = &z * dir;
            let sd = (proj.norm_squared() / (n - 1) as f64).sqrt();
            if !(sd > 0.0) {
                return Err(CliError::ConstantConfounder(names.join(",")));
            }
            Ok(proj.iter().map(|v| v / sd).collect())
        }
    }
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_value(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes).map_err(|e| CliError::io(path, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

fn csv_bytes(header: &[String], rows: impl Iterator<Item = Vec<String>>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::Config(format!("csv encoding: {e}"));
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(&row).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::Config(format!("csv encoding: {e}")))
}

/// Dense matrix, one row per line, with the variable names as header.
pub fn write_matrix_csv(path: &Path, m: &SquareMatrix, names: &[String]) -> CliResult<()> {
    let p = m.order();
    let header: Vec<String> = if names.len() == p {
        names.to_vec()
    } else {
        (1..=p).map(|j| format!("v{j}")).collect()
    };
    let rows = (0..p).map(|i| (0..p).map(|j| format_value(m[(i, j)])).collect());
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn read_matrix_csv(path: &Path) -> CliResult<SquareMatrix> {
    let (header, rows) = read_table(path)?;
    let p = header.len();
    if rows.len() != p {
        return Err(parse_error(path, format!("{} rows for {p} columns", rows.len())));
    }
    let values: Vec<f64> = rows.into_iter().flatten().collect();
    Ok(SquareMatrix::from_row_slice(p, &values)?)
}

/// Observations followed by a `g` column.
pub fn write_dataset_csv(path: &Path, dataset: &Dataset) -> CliResult<()> {
    let p = dataset.p();
    let mut header: Vec<String> = (1..=p).map(|j| format!("z{j}")).collect();
    header.push("g".into());
    let z = dataset.samples();
    let g = dataset.confounders();
    let rows = (0..dataset.n()).map(|i| {
        let mut row: Vec<String> = (0..p).map(|j| format_value(z[(i, j)])).collect();
        row.push(format_value(g[i]));
        row
    });
    write_atomic(path, &csv_bytes(&header, rows)?)
}

pub fn write_rows_csv(path: &Path, header: &[&str], rows: Vec<Vec<String>>) -> CliResult<()> {
    let header: Vec<String> = header.iter().map(|s| s.to_string()).collect();
    write_atomic(path, &csv_bytes(&header, rows.into_iter())?)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| CliError::Config(format!("json encoding: {e}")))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}
