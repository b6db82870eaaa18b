//! Point descriptors: the FPFH baseline, handcrafted local encodings and the
//! trainable per-point descriptor network.

mod encoding;
mod fpfh;
mod net;

pub use encoding::{local_encoding, EncodingConfig};
pub use fpfh::{fpfh_compute, FpfhResult, FPFH_BINS};
pub use net::{
    load_checkpoint, net_backward, net_forward, param_init, save_checkpoint, Checkpoint, Layer, NetParams,
};

use crate::error::{Error, Result};

/// Row-major `N × ℓ` descriptor matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    normalized: bool,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {rows}x{cols} feature matrix",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch("non-finite feature value".into()));
        }
        Ok(Self {
            rows,
            cols,
            values,
            normalized: false,
        })
    }

    /// Like [`FeatureMatrix::new`] but rescales every non-zero row to unit norm.
    pub fn normalized(rows: usize, cols: usize, mut values: Vec<f64>) -> Result<Self> {
        if cols > 0 {
            for row in values.chunks_exact_mut(cols) {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                if n > 0.0 {
                    row.iter_mut().for_each(|v| *v /= n);
                }
            }
        }
        let mut m = Self::new(rows, cols, values)?;
        m.normalized = true;
        Ok(m)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }
}
