//! Per-step LTV data and the implicit stacked operators built from it.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::model::LinearizedModel;
use crate::tubes::TubeParams;

/// Error dynamics `Δx_{k+1} = A_k Δx_k + B_k Δu_k + E_k w_k`,
/// `Δy_{k+1} = C_k Δx_k + F_k e_k`, `Δx_0 = Ξ w̃`.
///
/// Process-disturbance block `j = 0` is `w̃` (scaled by `Ξ`), block `j ≥ 1` is `w_{j−1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct StackedLtv {
    pub horizon: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_r: usize,
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
    pub c: Vec<Mat>,
    pub e: Vec<Mat>,
    pub f: Vec<Mat>,
    pub xi: Mat,
}

impl StackedLtv {
    pub fn new(a: Vec<Mat>, b: Vec<Mat>, c: Vec<Mat>, e: Vec<Mat>, f: Vec<Mat>, xi: Mat) -> Result<Self> {
        let t = a.len();
        if t == 0 {
            return Err(Error::Shape("empty horizon".into()));
        }
        let n_x = a[0].nrows();
        let n_u = b[0].ncols();
        let n_r = c[0].nrows();
        let ok = b.len() == t
            && c.len() == t
            && e.len() == t
            && f.len() == t
            && xi.shape() == (n_x, n_x)
            && a.iter().all(|m| m.shape() == (n_x, n_x))
            && b.iter().all(|m| m.shape() == (n_x, n_u))
            && c.iter().all(|m| m.shape() == (n_r, n_x))
            && e.iter().all(|m| m.shape() == (n_x, n_x))
            && f.iter().all(|m| m.shape() == (n_r, n_r));
        if !ok {
            return Err(Error::Shape("inconsistent LTV block shapes".into()));
        }
        Ok(StackedLtv { horizon: t, n_x, n_u, n_r, a, b, c, e, f, xi })
    }

    /// Time-invariant data repeated over `horizon` steps.
    pub fn time_invariant(a: &Mat, b: &Mat, c: &Mat, e: &Mat, f: &Mat, xi: &Mat, horizon: usize) -> Result<Self> {
        Self::new(
            vec![a.clone(); horizon],
            vec![b.clone(); horizon],
            vec![c.clone(); horizon],
            vec![e.clone(); horizon],
            vec![f.clone(); horizon],
            xi.clone(),
        )
    }

    /// Linearization plus tube scalings: `E_j = Σ_{j+1}`, `F_j = Υ_j`, `Ξ = Σ_0`.
    pub fn from_linearization(lin: &LinearizedModel, cr: &Mat, tubes: &TubeParams) -> Result<Self> {
        let t = lin.a.len();
        Self::new(
            lin.a.clone(),
            lin.b.clone(),
            vec![cr.clone(); t],
            tubes.sigma[1..].to_vec(),
            tubes.upsilon.clone(),
            tubes.sigma[0].clone(),
        )
    }

    /// Scaling of process-disturbance block `j`.
    #[inline]
    pub fn e_block(&self, j: usize) -> &Mat {
        if j == 0 {
            &self.xi
        } else {
            &self.e[j - 1]
        }
    }

    pub fn dense_m(&self) -> Mat {
        let (t, n) = (self.horizon, self.n_x);
        let mut m = Mat::identity((t + 1) * n, (t + 1) * n);
        for k in 1..=t {
            m.view_mut((k * n, (k - 1) * n), (n, n)).copy_from(&(-&self.a[k - 1]));
        }
        m
    }

    pub fn dense_zb(&self) -> Mat {
        let (t, n, m) = (self.horizon, self.n_x, self.n_u);
        let mut d = Mat::zeros((t + 1) * n, t * m);
        for k in 1..=t {
            d.view_mut((k * n, (k - 1) * m), (n, m)).copy_from(&self.b[k - 1]);
        }
        d
    }

    pub fn dense_zc(&self) -> Mat {
        let (t, n, r) = (self.horizon, self.n_x, self.n_r);
        let mut d = Mat::zeros(t * r, (t + 1) * n);
        for j in 0..t {
            d.view_mut((j * r, j * n), (r, n)).copy_from(&self.c[j]);
        }
        d
    }

    pub fn dense_e(&self) -> Mat {
        let (t, n) = (self.horizon, self.n_x);
        let mut d = Mat::zeros((t + 1) * n, (t + 1) * n);
        for j in 0..=t {
            d.view_mut((j * n, j * n), (n, n)).copy_from(self.e_block(j));
        }
        d
    }

    pub fn dense_f(&self) -> Mat {
        let (t, r) = (self.horizon, self.n_r);
        let mut d = Mat::zeros(t * r, t * r);
        for j in 0..t {
            d.view_mut((j * r, j * r), (r, r)).copy_from(&self.f[j]);
        }
        d
    }
}
