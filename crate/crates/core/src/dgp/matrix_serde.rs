//! Row-major `{rows, cols, data}` encoding for matrices in parameter files.

use nalgebra::DMatrix;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Serialize, Deserialize)]
struct RowMajor {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl RowMajor {
    fn of(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: (0..m.nrows()).flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>()).collect(),
        }
    }

    fn into_matrix<E: serde::de::Error>(self) -> Result<DMatrix<f64>, E> {
        let expected = self.rows.checked_mul(self.cols).ok_or_else(|| E::custom("matrix too large"))?;
        if self.data.len() != expected {
            return Err(E::custom(format!(
                "matrix data has {} entries, expected {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(E::custom("matrix entries must be finite"));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }
}

pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
    RowMajor::of(m).serialize(s)
}

pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
    RowMajor::deserialize(d)?.into_matrix()
}

pub mod option {
    use super::*;

    pub fn serialize<S: Serializer>(m: &Option<DMatrix<f64>>, s: S) -> Result<S::Ok, S::Error> {
        m.as_ref().map(RowMajor::of).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DMatrix<f64>>, D::Error> {
        Option::<RowMajor>::deserialize(d)?
            .map(|r| r.into_matrix::<D::Error>())
            .transpose()
            .map_err(D::Error::custom)
    }
}
