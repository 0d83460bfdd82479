//! Shared JSON encoding for dense matrices: `{rows, cols, data_b64}` with the
//! payload holding little-endian f64 values in row-major order.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodedMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data_b64: String,
}

impl EncodedMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut bytes = Vec::with_capacity(m.len() * 8);
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                bytes.extend_from_slice(&m[(r, c)].to_le_bytes());
            }
        }
        Self { rows: m.nrows(), cols: m.ncols(), data_b64: STANDARD.encode(bytes) }
    }

    /// Column vector.
    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self::from_matrix(&DMatrix::from_column_slice(v.len(), 1, v.as_slice()))
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        let bytes = STANDARD
            .decode(&self.data_b64)
            .map_err(|e| Error::Format(format!("matrix payload is not base64: {e}")))?;
        if bytes.len() != self.rows * self.cols * 8 {
            return Err(Error::Format(format!(
                "matrix {}x{} needs {} bytes, payload has {}",
                self.rows,
                self.cols,
                self.rows * self.cols * 8,
                bytes.len()
            )));
        }
        let vals: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("matrix contains non-finite values".into()));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &vals))
    }

    pub fn to_vector(&self) -> Result<DVector<f64>> {
        if self.cols != 1 {
            return Err(Error::Format(format!("expected a column vector, got {} columns", self.cols)));
        }
        Ok(self.to_matrix()?.column(0).into_owned())
    }
}
