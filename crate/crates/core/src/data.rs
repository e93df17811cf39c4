//! Core value types shared by every estimator: observations paired with a
//! scalar confounder, finite square matrices, and the matrix norms used by
//! the column programs.

use std::ops::Deref;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// `n` observations `z^i` (rows of `samples`) with scalar confounders `g^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: DMatrix<f64>,
    confounders: Vec<f64>,
}

/// Checks shapes and finiteness and builds a [`Dataset`].
pub fn validate_dataset(samples: DMatrix<f64>, confounders: Vec<f64>) -> Result<Dataset> {
    if samples.nrows() != confounders.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} sample rows but {} confounder values",
            samples.nrows(),
            confounders.len()
        )));
    }
    if samples.ncols() < 2 {
        return Err(Error::TooFewVariables(samples.ncols()));
    }
    if samples.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if let Some(pos) = samples.iter().position(|v| !v.is_finite()) {
        let (row, col) = (pos % samples.nrows(), pos / samples.nrows());
        return Err(Error::NonFiniteInput(format!("samples[{row}, {col}]")));
    }
    if let Some(i) = confounders.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(format!("confounders[{i}]")));
    }
    Ok(Dataset {
        samples,
        confounders,
    })
}

impl Dataset {
    /// Builds a dataset from row-major sample vectors.
    pub fn from_rows(rows: &[Vec<f64>], confounders: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch("ragged sample rows".into()));
        }
        let samples = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        validate_dataset(samples, confounders)
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn p(&self) -> usize {
        self.samples.ncols()
    }

    pub fn samples(&self) -> &DMatrix<f64> {
        &self.samples
    }

    pub fn confounders(&self) -> &[f64] {
        &self.confounders
    }

    /// Observation `i` as an owned vector.
    pub fn sample(&self, i: usize) -> DVector<f64> {
        self.samples.row(i).transpose()
    }

    /// Sub-dataset made of the given observation indices, in order.
    pub fn select(&self, indices: &[usize]) -> Result<Dataset> {
        let samples = self.samples.select_rows(indices);
        let confounders = indices.iter().map(|&i| self.confounders[i]).collect();
        validate_dataset(samples, confounders)
    }

    /// Pooled uncentered second moment `(1/n) Σ z zᵀ`.
    pub fn second_moment(&self) -> SquareMatrix {
        let n = self.n() as f64;
        let mut s = self.samples.transpose() * &self.samples;
        s /= n;
        SquareMatrix::from_unchecked(symmetrize_average(s))
    }
}

fn symmetrize_average(mut m: DMatrix<f64>) -> DMatrix<f64> {
    let p = m.nrows();
    for j in 0..p {
        for k in (j + 1)..p {
            let v = 0.5 * (m[(j, k)] + m[(k, j)]);
            m[(j, k)] = v;
            m[(k, j)] = v;
        }
    }
    m
}

/// A `p × p` matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SquareMatrix(DMatrix<f64>);

impl SquareMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "expected a square matrix, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("matrix entries".into()));
        }
        Ok(SquareMatrix(m))
    }

    /// Row-major constructor.
    pub fn from_row_slice(order: usize, values: &[f64]) -> Result<Self> {
        if values.len() != order * order {
            return Err(Error::DimensionMismatch(format!(
                "{} values for order {order}",
                values.len()
            )));
        }
        Self::new(DMatrix::from_row_slice(order, order, values))
    }

    pub(crate) fn from_unchecked(m: DMatrix<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        SquareMatrix(m)
    }

    pub fn zeros(order: usize) -> Self {
        SquareMatrix(DMatrix::zeros(order, order))
    }

    pub fn identity(order: usize) -> Self {
        SquareMatrix(DMatrix::identity(order, order))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// Largest `|A_jk − A_kj|`.
    pub fn asymmetry(&self) -> f64 {
        let p = self.order();
        let mut worst = 0.0f64;
        for j in 0..p {
            for k in (j + 1)..p {
                worst = worst.max((self.0[(j, k)] - self.0[(k, j)]).abs());
            }
        }
        worst
    }

    pub fn is_symmetric(&self) -> bool {
        self.asymmetry() == 0.0
    }

    /// Entry-wise `self − other`; orders must agree.
    pub fn sub(&self, other: &SquareMatrix) -> Result<SquareMatrix> {
        same_order(self, other)?;
        Ok(SquareMatrix(&self.0 - &other.0))
    }

    pub fn scale(&self, factor: f64) -> SquareMatrix {
        SquareMatrix(&self.0 * factor)
    }
}

impl Deref for SquareMatrix {
    type Target = DMatrix<f64>;

    fn deref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

pub(crate) fn same_order(a: &SquareMatrix, b: &SquareMatrix) -> Result<()> {
    if a.order() != b.order() {
        return Err(Error::DimensionMismatch(format!(
            "orders {} and {} differ",
            a.order(),
            b.order()
        )));
    }
    Ok(())
}

/// `max_jk |A_jk|`.
pub fn elementwise_inf(a: &SquareMatrix) -> f64 {
    a.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

/// `Σ_jk |A_jk|`, the matrix norm minimized by the estimators. It splits
/// into per-column vector L1 norms, which is what lets the problem be
/// solved one column at a time.
pub fn entrywise_l1(a: &SquareMatrix) -> f64 {
    a.iter().map(|v| v.abs()).sum()
}

pub fn vector_l1(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
