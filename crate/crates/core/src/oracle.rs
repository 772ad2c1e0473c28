//! Dense reference solver for the unconstrained output-feedback LQG problem.
//!
//! The realizability identities are solved in closed form for every block except the
//! strictly causal part of `Φue`, which is the free variable:
//! `Φuw = Φue 𝐙𝐂 𝐌⁻¹`, `Φxw = 𝐌⁻¹(𝐈 + 𝐙𝐁 Φuw)`, `Φxe = 𝐌⁻¹ 𝐙𝐁 Φue`.
//! The reduced quadratic program is then solved through its dense normal equations.

use crate::block::BlockMatrix;
use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::ltv::StackedLtv;
use crate::riccati::{lqg_cost, LqgWeights};
use crate::sls::ResponseMaps;

/// Guard on the number of scalar unknowns.
pub const ORACLE_LIMIT: usize = 2000;

pub fn oracle_unknowns(ltv: &StackedLtv) -> usize {
    let t = ltv.horizon;
    ltv.n_u * ltv.n_r * t * t.saturating_sub(1) / 2
}

pub fn dense_kkt_oracle(ltv: &StackedLtv, w: &LqgWeights) -> Result<(ResponseMaps, f64)> {
    let nvar = oracle_unknowns(ltv);
    if nvar > ORACLE_LIMIT {
        return Err(Error::OracleTooLarge { size: nvar, limit: ORACLE_LIMIT });
    }
    let t = ltv.horizon;
    let (n_x, n_u, n_r) = (ltv.n_x, ltv.n_u, ltv.n_r);
    let (nx_all, nu_all, nr_all) = ((t + 1) * n_x, t * n_u, t * n_r);

    let m = ltv.dense_m();
    let minv = m
        .solve_lower_triangular(&Mat::identity(nx_all, nx_all))
        .ok_or_else(|| Error::OracleFailed("singular shift operator".into()))?;
    let zb = ltv.dense_zb();
    let zc = ltv.dense_zc();

    // Φ = Φ0 + L Φue Rt with L = [𝐌⁻¹𝐙𝐁; I], Rt = [𝐙𝐂𝐌⁻¹, I]
    let mut l = Mat::zeros(nx_all + nu_all, nu_all);
    l.view_mut((0, 0), (nx_all, nu_all)).copy_from(&(&minv * &zb));
    l.view_mut((nx_all, 0), (nu_all, nu_all)).fill_with_identity();
    let mut rt = Mat::zeros(nr_all, nx_all + nr_all);
    rt.view_mut((0, 0), (nr_all, nx_all)).copy_from(&(&zc * &minv));
    rt.view_mut((0, nx_all), (nr_all, nr_all)).fill_with_identity();

    let mut wdiag = Mat::zeros(nx_all + nu_all, nx_all + nu_all);
    for k in 0..=t {
        let wk = if k == t { &w.p } else { &w.q };
        wdiag.view_mut((k * n_x, k * n_x), (n_x, n_x)).copy_from(wk);
    }
    for k in 0..t {
        wdiag.view_mut((nx_all + k * n_u, nx_all + k * n_u), (n_u, n_u)).copy_from(&w.r);
    }
    let mut d = Mat::zeros(nx_all + nr_all, nx_all + nr_all);
    d.view_mut((0, 0), (nx_all, nx_all)).copy_from(&ltv.dense_e());
    d.view_mut((nx_all, nx_all), (nr_all, nr_all)).copy_from(&ltv.dense_f());
    let g = &d * d.transpose();

    let lwl = l.transpose() * &wdiag * &l;
    let rgr = &rt * &g * rt.transpose();
    let mut phi0 = Mat::zeros(nx_all + nu_all, nx_all + nr_all);
    phi0.view_mut((0, 0), (nx_all, nx_all)).copy_from(&minv);
    let lin = l.transpose() * &wdiag * &phi0 * &g * rt.transpose();

    // causal entries of Φue: block (k, j) with j < k
    let mut vars = Vec::with_capacity(nvar);
    for k in 0..t {
        for j in 0..k {
            for a in 0..n_u {
                for b in 0..n_r {
                    vars.push((k * n_u + a, j * n_r + b));
                }
            }
        }
    }
    let hess = Mat::from_fn(nvar, nvar, |i, j| {
        let (ri, ci) = vars[i];
        let (rj, cj) = vars[j];
        2.0 * lwl[(ri, rj)] * rgr[(ci, cj)]
    });
    let grad = Mat::from_fn(nvar, 1, |i, _| -2.0 * lin[(vars[i].0, vars[i].1)]);

    let sol = match hess.clone().cholesky() {
        Some(ch) => ch.solve(&grad),
        None => hess.svd(true, true).solve(&grad, 1e-13).map_err(|e| Error::OracleFailed(e.to_string()))?,
    };
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::OracleFailed("non-finite solution".into()));
    }

    let mut ue = Mat::zeros(nu_all, nr_all);
    for (i, &(r, c)) in vars.iter().enumerate() {
        ue[(r, c)] = sol[(i, 0)];
    }
    let uw = &ue * &zc * &minv;
    let xw = &minv * (Mat::identity(nx_all, nx_all) + &zb * &uw);
    let xe = &minv * &zb * &ue;
    let maps = ResponseMaps {
        xw: BlockMatrix::from_dense(&xw, t + 1, t + 1, n_x, n_x),
        xe: BlockMatrix::from_dense(&xe, t + 1, t, n_x, n_r),
        uw: BlockMatrix::from_dense(&uw, t, t + 1, n_u, n_x),
        ue: BlockMatrix::from_dense(&ue, t, t, n_u, n_r),
    };
    let cost = lqg_cost(&maps, ltv, w);
    Ok((maps, cost))
}
