//! JSON encoding for complex matrices and vectors.
//!
//! Complex scalars are written as `[re, im]` pairs and matrices as row-major
//! nested arrays. Floats go through `serde_json`'s round-trip formatter, so
//! decode(encode(x)) is bit-exact.

use nalgebra::{Complex, DMatrix, DVector};
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

type C64 = Complex<f64>;

fn rows_of(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

fn matrix_from_rows<E: serde::de::Error>(rows: Vec<Vec<[f64; 2]>>) -> Result<DMatrix<C64>, E> {
    let nrows = rows.len();
    if nrows == 0 {
        return Err(E::custom("matrix must have at least one row"));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(E::custom("matrix must have at least one column"));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(E::custom("ragged matrix rows"));
    }
    let mut out = DMatrix::zeros(nrows, ncols);
    for (i, row) in rows.iter().enumerate() {
        for (j, z) in row.iter().enumerate() {
            if !z[0].is_finite() || !z[1].is_finite() {
                return Err(E::custom(format!("non-finite entry at ({i}, {j})")));
            }
            out[(i, j)] = C64::new(z[0], z[1]);
        }
    }
    Ok(out)
}

pub mod matrix {
    use super::*;

    pub fn serialize<S: Serializer>(m: &DMatrix<C64>, s: S) -> Result<S::Ok, S::Error> {
        rows_of(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<C64>, D::Error> {
        let rows = Vec::<Vec<[f64; 2]>>::deserialize(d)?;
        matrix_from_rows(rows)
    }
}

pub mod matrix_list {
    use super::*;

    pub fn serialize<S: Serializer>(ms: &[DMatrix<C64>], s: S) -> Result<S::Ok, S::Error> {
        ms.iter().map(rows_of).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<C64>>, D::Error> {
        let all = Vec::<Vec<Vec<[f64; 2]>>>::deserialize(d)?;
        all.into_iter().map(matrix_from_rows).collect()
    }
}

pub mod vector {
    use super::*;

    pub fn serialize<S: Serializer>(v: &DVector<C64>, s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<C64>, D::Error> {
        let raw = Vec::<[f64; 2]>::deserialize(d)?;
        if raw.is_empty() {
            return Err(D::Error::custom("empty vector"));
        }
        if raw.iter().any(|z| !z[0].is_finite() || !z[1].is_finite()) {
            return Err(D::Error::custom("non-finite vector entry"));
        }
        Ok(DVector::from_iterator(
            raw.len(),
            raw.into_iter().map(|z| C64::new(z[0], z[1])),
        ))
    }
}
