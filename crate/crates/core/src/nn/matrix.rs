use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                values.len()
            )));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite matrix entry {bad}")));
        }
        Ok(Matrix { rows, cols, values })
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.values[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.values[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x + bias`.
    pub fn affine(&self, x: &[f64], bias: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols || bias.len() != self.rows {
            return Err(Error::Shape(format!(
                "affine: matrix {}x{}, input {}, bias {}",
                self.rows,
                self.cols,
                x.len(),
                bias.len()
            )));
        }
        Ok(self
            .values
            .chunks_exact(self.cols)
            .zip(bias)
            .map(|(row, b)| dot(row, x) + b)
            .collect())
    }

    /// `selfᵀ · y`.
    pub fn transpose_mul(&self, y: &[f64]) -> Result<Vec<f64>> {
        if y.len() != self.rows {
            return Err(Error::Shape(format!(
                "transpose_mul: matrix {}x{}, vector {}",
                self.rows,
                self.cols,
                y.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &yi) in self.values.chunks_exact(self.cols).zip(y) {
            if yi == 0.0 {
                continue;
            }
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * yi;
            }
        }
        Ok(out)
    }

    /// `self += scale · u vᵀ`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64], scale: f64) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ui) in self.values.chunks_exact_mut(self.cols).zip(u) {
            let s = scale * ui;
            if s == 0.0 {
                continue;
            }
            for (w, vj) in row.iter_mut().zip(v) {
                *w += s * vj;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
