//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Solve `a x = b` for symmetric `a`, Cholesky first, LU as fallback.
pub fn sym_solve(a: &Mat, b: &Mat) -> Option<Mat> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let lu = a.clone().full_piv_lu();
    if !lu.is_invertible() {
        return None;
    }
    let x = lu.solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Positive definiteness via Cholesky.
pub fn is_pd(a: &Mat) -> bool {
    a.is_square() && a.iter().all(|v| v.is_finite()) && a.clone().cholesky().is_some()
}

/// Positive semidefiniteness up to a small relative tolerance.
pub fn is_psd(a: &Mat) -> bool {
    if !a.is_square() || a.iter().any(|v| !v.is_finite()) {
        return false;
    }
    if a.nrows() == 0 {
        return true;
    }
    let sym = (a + a.transpose()) * 0.5;
    let scale = sym.amax().max(1.0);
    sym.symmetric_eigenvalues().iter().all(|&l| l >= -1e-10 * scale)
}

pub fn max_abs(a: &Mat) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Row-major nested vectors to a matrix; `None` when ragged.
pub fn from_rows(rows: &[Vec<f64>]) -> Option<Mat> {
    let n = rows.len();
    let m = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != m) {
        return None;
    }
    Some(Mat::from_fn(n, m, |i, j| rows[i][j]))
}

pub fn to_rows(a: &Mat) -> Vec<Vec<f64>> {
    (0..a.nrows()).map(|i| a.row(i).iter().copied().collect()).collect()
}

pub fn diag(d: &[f64]) -> Mat {
    Mat::from_diagonal(&Vector::from_column_slice(d))
}

/// Serde adapters: matrices as row lists, vectors as flat arrays.
pub mod serde_mat {
    use super::*;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_rows(a).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).ok_or_else(|| D::Error::custom("ragged matrix rows"))
    }
}

pub mod serde_mat_list {
    use super::*;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(a: &[Mat], s: S) -> Result<S::Ok, S::Error> {
        a.iter().map(to_rows).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
        let all = Vec::<Vec<Vec<f64>>>::deserialize(d)?;
        all.iter().map(|r| from_rows(r).ok_or_else(|| D::Error::custom("ragged matrix rows"))).collect()
    }
}

pub mod serde_vec {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vector, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vector, D::Error> {
        Ok(Vector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

pub mod serde_vec_list {
    use super::*;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Vector], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.as_slice().to_vec()).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vector>, D::Error> {
        Ok(Vec::<Vec<f64>>::deserialize(d)?.into_iter().map(Vector::from_vec).collect())
    }
}
