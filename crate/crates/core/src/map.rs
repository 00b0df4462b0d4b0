//! Dense per-token attention planes over the patch grid.

use crate::error::{Error, Result};

/// One `rows × cols` plane of attention weights, stored row-major.
///
/// Raw maps exported from a model are non-negative sub-distributions;
/// purified maps may contain negative values. Both must be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    rows: usize,
    cols: usize,
    values: Vec<f32>,
}

impl AttentionMap {
    pub fn new(rows: usize, cols: usize, values: Vec<f32>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Validation(format!(
                "attention map must be at least 1x1, got {rows}x{cols}"
            )));
        }
        if values.len() != rows * cols {
            return Err(Error::Validation(format!(
                "attention map of {rows}x{cols} needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite value {} at row {}, col {}",
                values[i],
                i / cols,
                i % cols
            )));
        }
        Ok(Self { rows, cols, values })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "attention map must be at least 1x1");
        Self {
            rows,
            cols,
            values: vec![0.0; rows * cols],
        }
    }

    /// Builds a map by evaluating `f(row, col)` at every cell.
    ///
    /// # Panics
    /// Panics if the grid is empty or `f` returns a non-finite value.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                values.push(f(r, c));
            }
        }
        Self::new(rows, cols, values).expect("from_fn produced an invalid map")
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

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    pub fn min(&self) -> f32 {
        self.values.iter().copied().fold(f32::INFINITY, f32::min)
    }

    pub fn max(&self) -> f32 {
        self.values.iter().copied().fold(f32::NEG_INFINITY, f32::max)
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().map(|&v| v as f64).sum()
    }

    /// `(row, col)` of the largest value; the first in raster order on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate() {
            if v > self.values[best] {
                best = i;
            }
        }
        (best / self.cols, best % self.cols)
    }

    pub(crate) fn ensure_same_shape(&self, other: &AttentionMap, what: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Validation(format!(
                "{what}: shape {}x{} does not match {}x{}",
                other.rows, other.cols, self.rows, self.cols
            )));
        }
        Ok(())
    }

    /// Checks the raw-export invariant: non-negative entries summing to at
    /// most one (a softmax row restricted to the image tokens).
    pub fn check_raw(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|&v| v < 0.0) {
            return Err(Error::Validation(format!(
                "negative raw attention {} at row {}, col {}",
                self.values[i],
                i / self.cols,
                i % self.cols
            )));
        }
        let total = self.sum();
        if total > 1.0 + 1e-4 {
            return Err(Error::Validation(format!(
                "raw attention sums to {total}, more than one"
            )));
        }
        Ok(())
    }
}
