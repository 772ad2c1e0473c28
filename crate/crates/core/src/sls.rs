//! Closed-loop response maps, realizability checks and gain recovery.

use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::ltv::StackedLtv;

/// Disturbance-to-deviation maps. Row `k` of the x-maps is `Δx_k` (`k = 0..T`),
/// row `k` of the u-maps is `Δu_k` (`k = 0..T−1`); w-column `j` is block `j` of the
/// process disturbance (0 is the initial condition), e-column `j` is `e_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResponseMaps {
    pub xw: BlockMatrix,
    pub xe: BlockMatrix,
    pub uw: BlockMatrix,
    pub ue: BlockMatrix,
}

impl ResponseMaps {
    pub fn zeros(horizon: usize, n_x: usize, n_u: usize, n_r: usize) -> Self {
        let t = horizon;
        ResponseMaps {
            xw: BlockMatrix::zeros(t + 1, t + 1, n_x, n_x),
            xe: BlockMatrix::zeros(t + 1, t, n_x, n_r),
            uw: BlockMatrix::zeros(t, t + 1, n_u, n_x),
            ue: BlockMatrix::zeros(t, t, n_u, n_r),
        }
    }

    pub fn horizon(&self) -> usize {
        self.ue.block_rows
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.xw.row_dim, self.uw.row_dim, self.xe.col_dim)
    }

    /// Maps of the system with all feedback removed.
    pub fn open_loop(ltv: &StackedLtv) -> Self {
        let mut maps = Self::zeros(ltv.horizon, ltv.n_x, ltv.n_u, ltv.n_r);
        for j in 0..=ltv.horizon {
            let mut cur = Mat::identity(ltv.n_x, ltv.n_x);
            maps.xw.set(j, j, cur.clone());
            for k in j..ltv.horizon {
                cur = &ltv.a[k] * cur;
                maps.xw.set(k + 1, j, cur.clone());
            }
        }
        maps
    }

    fn check_against(&self, ltv: &StackedLtv) -> Result<()> {
        let (n, m, r) = self.dims();
        if self.horizon() != ltv.horizon || (n, m, r) != (ltv.n_x, ltv.n_u, ltv.n_r) {
            return Err(Error::Shape("response maps do not match the LTV data".into()));
        }
        Ok(())
    }

    /// `[Φxe; Φue]` column `j` weighted: `Σ_k tr(Φᵀ W_k Φ)` with `W = Q` (k < T), `P` (k = T), `R` for inputs.
    pub fn e_column_weight(&self, j: usize, q: &Mat, r: &Mat, p: &Mat) -> f64 {
        let t = self.horizon();
        let mut s = 0.0;
        for k in (j + 1)..=t {
            let b = self.xe.get(k, j);
            let w = if k == t { p } else { q };
            s += (b.transpose() * w * b).trace();
        }
        for k in (j + 1)..t {
            let b = self.ue.get(k, j);
            s += (b.transpose() * r * b).trace();
        }
        s
    }
}

/// Stacked disturbance realization: `w` holds `T+1` blocks (`w̃, w_0..w_{T−1}`), `e` holds `T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disturbance {
    #[serde(with = "crate::linalg::serde_vec_list")]
    pub w: Vec<Vector>,
    #[serde(with = "crate::linalg::serde_vec_list")]
    pub e: Vec<Vector>,
}

impl Disturbance {
    pub fn zeros(horizon: usize, n_x: usize, n_r: usize) -> Self {
        Disturbance { w: vec![Vector::zeros(n_x); horizon + 1], e: vec![Vector::zeros(n_r); horizon] }
    }

    fn check(&self, ltv: &StackedLtv) -> Result<()> {
        if self.w.len() != ltv.horizon + 1
            || self.e.len() != ltv.horizon
            || self.w.iter().any(|w| w.len() != ltv.n_x)
            || self.e.iter().any(|e| e.len() != ltv.n_r)
        {
            return Err(Error::Shape("disturbance does not match the LTV dimensions".into()));
        }
        Ok(())
    }
}

/// `(Δx, Δu) = Φ · blkdiag(𝐄, 𝐅) · (w, e)`.
pub fn apply_response(maps: &ResponseMaps, ltv: &StackedLtv, d: &Disturbance) -> Result<(Vec<Vector>, Vec<Vector>)> {
    maps.check_against(ltv)?;
    d.check(ltv)?;
    let t = ltv.horizon;
    let ws: Vec<Vector> = (0..=t).map(|j| ltv.e_block(j) * &d.w[j]).collect();
    let es: Vec<Vector> = (0..t).map(|j| &ltv.f[j] * &d.e[j]).collect();
    let dx = (0..=t)
        .map(|k| {
            let mut x = Vector::zeros(ltv.n_x);
            for j in 0..=k {
                x += maps.xw.get(k, j) * &ws[j];
            }
            for j in 0..k.min(t) {
                x += maps.xe.get(k, j) * &es[j];
            }
            x
        })
        .collect();
    let du = (0..t)
        .map(|k| {
            let mut u = Vector::zeros(ltv.n_u);
            for j in 0..=k {
                u += maps.uw.get(k, j) * &ws[j];
            }
            for j in 0..k {
                u += maps.ue.get(k, j) * &es[j];
            }
            u
        })
        .collect();
    Ok((dx, du))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentityResiduals {
    pub left: f64,
    pub right: f64,
    pub causality: f64,
}

impl IdentityResiduals {
    pub fn max(&self) -> f64 {
        self.left.max(self.right).max(self.causality)
    }
}

/// Max-abs residuals of the two affine realizability identities and of the causal band.
pub fn check_identities(maps: &ResponseMaps, ltv: &StackedLtv) -> IdentityResiduals {
    let t = ltv.horizon;
    let mut left: f64 = 0.0;
    let mut right: f64 = 0.0;
    let eye = Mat::identity(ltv.n_x, ltv.n_x);

    // [I − ZA, −ZB] Φ = [I, 0]
    for k in 0..=t {
        for j in 0..=t {
            let mut res = maps.xw.get(k, j).clone();
            if k > 0 {
                res -= &ltv.a[k - 1] * maps.xw.get(k - 1, j) + &ltv.b[k - 1] * maps.uw.get(k - 1, j);
            }
            if k == j {
                res -= &eye;
            }
            left = left.max(res.amax());
        }
        for j in 0..t {
            let mut res = maps.xe.get(k, j).clone();
            if k > 0 {
                res -= &ltv.a[k - 1] * maps.xe.get(k - 1, j) + &ltv.b[k - 1] * maps.ue.get(k - 1, j);
            }
            left = left.max(res.amax());
        }
    }

    // Φ [I − ZA; −ZC] = [I; 0]
    for k in 0..=t {
        for j in 0..=t {
            let mut res = maps.xw.get(k, j).clone();
            if j < t {
                res -= maps.xw.get(k, j + 1) * &ltv.a[j] + maps.xe.get(k, j) * &ltv.c[j];
            }
            if k == j {
                res -= &eye;
            }
            right = right.max(res.amax());
        }
    }
    for k in 0..t {
        for j in 0..=t {
            let mut res = maps.uw.get(k, j).clone();
            if j < t {
                res -= maps.uw.get(k, j + 1) * &ltv.a[j] + maps.ue.get(k, j) * &ltv.c[j];
            }
            right = right.max(res.amax());
        }
    }

    let causality =
        maps.xw.above_band(0).max(maps.uw.above_band(0)).max(maps.xe.above_band(1)).max(maps.ue.above_band(1));
    IdentityResiduals { left, right, causality }
}

/// Output-feedback gains `K_{k,j}` acting on `Δy_{j+1}` (`j < k`) and initial-state gains `K⁰_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub k: BlockMatrix,
    #[serde(with = "crate::linalg::serde_mat_list")]
    pub k0: Vec<Mat>,
}

impl GainSchedule {
    pub fn zeros(horizon: usize, n_x: usize, n_u: usize, n_r: usize) -> Self {
        GainSchedule { k: BlockMatrix::zeros(horizon, horizon, n_u, n_r), k0: vec![Mat::zeros(n_u, n_x); horizon] }
    }

    pub fn horizon(&self) -> usize {
        self.k0.len()
    }
}

fn invert_diag(d: &Mat, block: usize) -> Result<Mat> {
    let lu = d.clone().lu();
    lu.try_inverse().filter(|m| m.iter().all(|v| v.is_finite())).ok_or(Error::GainRecoveryFailed { block })
}

/// `𝐊 = Φue − Φuw (Φxw)⁻¹ Φxe` by block forward substitution; `K⁰` from the
/// initial-condition column of `Φuw (Φxw)⁻¹ − 𝐊 𝐙𝐂`.
pub fn recover_gains(maps: &ResponseMaps, ltv: &StackedLtv) -> Result<GainSchedule> {
    maps.check_against(ltv)?;
    let t = ltv.horizon;
    let (n_x, n_u, n_r) = (ltv.n_x, ltv.n_u, ltv.n_r);
    let dinv: Vec<Mat> = (0..=t).map(|k| invert_diag(maps.xw.get(k, k), k)).collect::<Result<_>>()?;

    // X = (Φxw)⁻¹ Φxe
    let mut x = BlockMatrix::zeros(t + 1, t, n_x, n_r);
    for j in 0..t {
        for k in 0..=t {
            let mut acc = maps.xe.get(k, j).clone();
            for i in 0..k {
                acc -= maps.xw.get(k, i) * x.get(i, j);
            }
            x.set(k, j, &dinv[k] * acc);
        }
    }

    let mut gains = GainSchedule::zeros(t, n_x, n_u, n_r);
    for k in 0..t {
        for j in 0..k {
            let mut acc = maps.ue.get(k, j).clone();
            for i in 0..=t {
                acc -= maps.uw.get(k, i) * x.get(i, j);
            }
            gains.k.set(k, j, acc);
        }
    }

    // Y = Φuw (Φxw)⁻¹ by backward substitution along each row; only column 0 is kept.
    for k in 0..t {
        let mut y: Vec<Mat> = vec![Mat::zeros(n_u, n_x); t + 1];
        for j in (0..=t).rev() {
            let mut acc = maps.uw.get(k, j).clone();
            for i in (j + 1)..=t {
                acc -= &y[i] * maps.xw.get(i, j);
            }
            y[j] = acc * &dinv[j];
        }
        gains.k0[k] = &y[0] - gains.k.get(k, 0) * &ltv.c[0];
    }
    Ok(gains)
}

/// Step-by-step simulation of the error dynamics under the causal affine policy.
pub fn simulate_closed_loop_ltv(
    ltv: &StackedLtv,
    gains: &GainSchedule,
    d: &Disturbance,
) -> Result<(Vec<Vector>, Vec<Vector>)> {
    d.check(ltv)?;
    if gains.horizon() != ltv.horizon {
        return Err(Error::Shape("gain schedule horizon mismatch".into()));
    }
    let t = ltv.horizon;
    let mut dx = Vec::with_capacity(t + 1);
    let mut du = Vec::with_capacity(t);
    let mut dy: Vec<Vector> = Vec::with_capacity(t);
    dx.push(&ltv.xi * &d.w[0]);
    for k in 0..t {
        let mut u = &gains.k0[k] * &dx[0];
        for (j, y) in dy.iter().enumerate() {
            u += gains.k.get(k, j) * y;
        }
        dy.push(&ltv.c[k] * &dx[k] + &ltv.f[k] * &d.e[k]);
        let next = &ltv.a[k] * &dx[k] + &ltv.b[k] * &u + &ltv.e[k] * &d.w[k + 1];
        du.push(u);
        dx.push(next);
    }
    Ok((dx, du))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_ltv(a: f64, c: f64, e: f64, f: f64, xi: f64, t: usize) -> StackedLtv {
        let s = |v: f64| Mat::from_element(1, 1, v);
        StackedLtv::time_invariant(&s(a), &s(1.0), &s(c), &s(e), &s(f), &s(xi), t).unwrap()
    }

    #[test]
    fn open_loop_satisfies_identities() {
        let ltv = scalar_ltv(1.3, 0.7, 1.0, 1.0, 1.0, 4);
        let maps = ResponseMaps::open_loop(&ltv);
        let r = check_identities(&maps, &ltv);
        assert!(r.max() < 1e-14, "{r:?}");
    }

    #[test]
    fn perturbed_diagonal_is_detected() {
        let ltv = scalar_ltv(1.3, 0.7, 1.0, 1.0, 1.0, 3);
        let mut maps = ResponseMaps::open_loop(&ltv);
        maps.xw.get_mut(1, 1)[(0, 0)] += 1e-3;
        assert!(check_identities(&maps, &ltv).left >= 1e-3 - 1e-15);
    }

    #[test]
    fn zero_feedback_gives_zero_gains() {
        let ltv = scalar_ltv(0.9, 1.0, 1.0, 1.0, 1.0, 3);
        let g = recover_gains(&ResponseMaps::open_loop(&ltv), &ltv).unwrap();
        assert!(g.k0.iter().all(|m| m.amax() == 0.0));
        for k in 0..3 {
            for j in 0..3 {
                assert_eq!(g.k.get(k, j).amax(), 0.0);
            }
        }
    }

    #[test]
    fn open_loop_impulse() {
        let ltv = scalar_ltv(2.0, 1.0, 1.0, 1.0, 1.0, 1);
        let maps = ResponseMaps::open_loop(&ltv);
        let mut d = Disturbance::zeros(1, 1, 1);
        d.w[0][0] = 1.0;
        let (dx, du) = apply_response(&maps, &ltv, &d).unwrap();
        assert_eq!(dx[1][0], 2.0);
        assert_eq!(du[0][0], 0.0);
    }

    #[test]
    fn singular_diagonal_fails() {
        let ltv = scalar_ltv(1.0, 1.0, 1.0, 1.0, 1.0, 2);
        let mut maps = ResponseMaps::open_loop(&ltv);
        maps.xw.set(1, 1, Mat::zeros(1, 1));
        assert!(matches!(recover_gains(&maps, &ltv), Err(Error::GainRecoveryFailed { block: 1 })));
    }

    #[test]
    fn shape_errors() {
        let ltv = scalar_ltv(1.0, 1.0, 1.0, 1.0, 1.0, 2);
        let maps = ResponseMaps::open_loop(&ltv);
        let d = Disturbance::zeros(3, 1, 1);
        assert!(matches!(apply_response(&maps, &ltv, &d), Err(Error::Shape(_))));
    }

    /// Two-step scalar system with hand-built feasible maps: compare against the
    /// closed form of `Φue − Φuw (Φxw)⁻¹ Φxe`.
    #[test]
    fn scalar_gain_matches_closed_form() {
        let (a, b, c) = (1.2, 0.5, 0.8);
        let s = |v: f64| Mat::from_element(1, 1, v);
        let ltv = StackedLtv::time_invariant(&s(a), &s(b), &s(c), &s(1.0), &s(1.0), &s(1.0), 2).unwrap();
        // policy Δu_0 = 0, Δu_1 = κ Δy_1
        let kappa = -0.6;
        let g = GainSchedule {
            k: {
                let mut m = BlockMatrix::zeros(2, 2, 1, 1);
                m.set(1, 0, s(kappa));
                m
            },
            k0: vec![s(0.0), s(0.0)],
        };
        let mut maps = ResponseMaps::zeros(2, 1, 1, 1);
        // Δx_0 = ŵ0; Δx_1 = a ŵ0 + ŵ1; Δu_1 = κ(c ŵ0 + ê0); Δx_2 = aΔx_1 + bΔu_1 + ŵ2
        maps.xw.set(0, 0, s(1.0));
        maps.xw.set(1, 0, s(a));
        maps.xw.set(1, 1, s(1.0));
        maps.xw.set(2, 0, s(a * a + b * kappa * c));
        maps.xw.set(2, 1, s(a));
        maps.xw.set(2, 2, s(1.0));
        maps.uw.set(1, 0, s(kappa * c));
        maps.ue.set(1, 0, s(kappa));
        maps.xe.set(2, 0, s(b * kappa));
        assert!(check_identities(&maps, &ltv).max() < 1e-14);
        let rec = recover_gains(&maps, &ltv).unwrap();
        assert!((rec.k.get(1, 0)[(0, 0)] - kappa).abs() < 1e-14);
        assert!(rec.k0.iter().all(|m| m.amax() < 1e-14));
        let d = Disturbance {
            w: vec![Vector::from_element(1, 0.3), Vector::from_element(1, -0.2), Vector::from_element(1, 0.9)],
            e: vec![Vector::from_element(1, 0.5), Vector::from_element(1, -1.0)],
        };
        let (x1, u1) = apply_response(&maps, &ltv, &d).unwrap();
        let (x2, u2) = simulate_closed_loop_ltv(&ltv, &g, &d).unwrap();
        for (p, q) in x1.iter().zip(&x2).chain(u1.iter().zip(&u2)) {
            assert!((p - q).amax() < 1e-14);
        }
    }
}
