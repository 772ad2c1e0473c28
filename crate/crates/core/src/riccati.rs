//! Output-feedback LQG in response-map form: control Riccati, Kalman recursion,
//! forward propagation and assembly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::block::BlockMatrix;
use crate::error::{Error, Result};
use crate::linalg::{sym_solve, Mat};
use crate::ltv::StackedLtv;
use crate::sls::ResponseMaps;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LqgWeights {
    #[serde(with = "crate::linalg::serde_mat")]
    pub q: Mat,
    #[serde(with = "crate::linalg::serde_mat")]
    pub r: Mat,
    #[serde(with = "crate::linalg::serde_mat")]
    pub p: Mat,
}

impl LqgWeights {
    pub fn identity(n_x: usize, n_u: usize) -> Self {
        LqgWeights { q: Mat::identity(n_x, n_x), r: Mat::identity(n_u, n_u), p: Mat::identity(n_x, n_x) }
    }
}

/// Weights for disturbance column `j`; overrides the shared weights when supplied.
pub type ColumnWeights<'a> = &'a (dyn Fn(usize) -> LqgWeights + Sync);

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiPass {
    /// Cost-to-go `S_0..S_T`.
    pub s: Vec<Mat>,
    /// Gains `K_0..K_{T−1}`.
    pub k: Vec<Mat>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ControlRecursion {
    pub shared: RiccatiPass,
    /// One pass per w-column `j = 0..T` when per-column weights are injected.
    pub per_column: Option<Vec<RiccatiPass>>,
}

impl ControlRecursion {
    #[inline]
    pub fn gain(&self, k: usize, j: usize) -> &Mat {
        match &self.per_column {
            Some(cols) => &cols[j].k[k],
            None => &self.shared.k[k],
        }
    }
}

fn riccati_pass(ltv: &StackedLtv, w: &LqgWeights) -> Result<RiccatiPass> {
    let t = ltv.horizon;
    let mut s = vec![Mat::zeros(ltv.n_x, ltv.n_x); t + 1];
    let mut gains = vec![Mat::zeros(ltv.n_u, ltv.n_x); t];
    s[t] = w.p.clone();
    for k in (0..t).rev() {
        let (a, b) = (&ltv.a[k], &ltv.b[k]);
        let sb = &s[k + 1] * b;
        let h = &w.r + b.transpose() * &sb;
        let rhs = sb.transpose() * a;
        let chol = h.cholesky().ok_or(Error::RiccatiSingular { step: k })?;
        let kk = -chol.solve(&rhs);
        if kk.iter().any(|v| !v.is_finite()) {
            return Err(Error::RiccatiSingular { step: k });
        }
        let sn = &w.q + a.transpose() * &s[k + 1] * a + rhs.transpose() * &kk;
        s[k] = (&sn + sn.transpose()) * 0.5;
        gains[k] = kk;
    }
    Ok(RiccatiPass { s, k: gains })
}

/// `S_T = P`, `K = −(R + BᵀS′B)⁻¹BᵀS′A`, `S = Q + AᵀS′A + AᵀS′B K`.
pub fn backward_control(
    ltv: &StackedLtv,
    weights: &LqgWeights,
    per_column: Option<ColumnWeights<'_>>,
) -> Result<ControlRecursion> {
    let shared = riccati_pass(ltv, weights)?;
    let per_column = match per_column {
        None => None,
        Some(f) => {
            Some((0..=ltv.horizon).into_par_iter().map(|j| riccati_pass(ltv, &f(j))).collect::<Result<Vec<_>>>()?)
        }
    };
    Ok(ControlRecursion { shared, per_column })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KalmanRecursion {
    /// `Π_0..Π_T`.
    pub pi: Vec<Mat>,
    /// `L_0..L_T`; `L_0` is unused and zero.
    pub l: Vec<Mat>,
}

/// `Π_0 = ΞΞᵀ`, `L_{j+1} = −(FFᵀ + CΠCᵀ)⁻¹CΠAᵀ`, `Π_{j+1} = EEᵀ + AΠAᵀ + AΠCᵀL_{j+1}`.
///
/// Runs forward in `j` even though it plays the role of the backward (dual) recursion.
pub fn backward_kalman(ltv: &StackedLtv) -> Result<KalmanRecursion> {
    let t = ltv.horizon;
    let mut pi = vec![Mat::zeros(ltv.n_x, ltv.n_x); t + 1];
    let mut l = vec![Mat::zeros(ltv.n_r, ltv.n_x); t + 1];
    pi[0] = &ltv.xi * ltv.xi.transpose();
    for j in 0..t {
        let (a, c, e, f) = (&ltv.a[j], &ltv.c[j], &ltv.e[j], &ltv.f[j]);
        let pc = &pi[j] * c.transpose();
        let innov = f * f.transpose() + c * &pc;
        let rhs = pc.transpose() * a.transpose();
        let lj = -sym_solve(&innov, &rhs).ok_or(Error::KalmanSingular { step: j })?;
        let pn = e * e.transpose() + a * &pi[j] * a.transpose() + a * &pc * &lj;
        pi[j + 1] = (&pn + pn.transpose()) * 0.5;
        l[j + 1] = lj;
    }
    Ok(KalmanRecursion { pi, l })
}

/// Closed-loop propagation operators.
#[derive(Clone, Debug, PartialEq)]
pub struct PropagationOps {
    /// `(T+1)×(T+1)` blocks `n_x × n_x`.
    pub bar_x: BlockMatrix,
    /// `T×(T+1)` blocks `n_u × n_x`.
    pub bar_u: BlockMatrix,
    /// `(T+1)×(T+1)` blocks `n_x × n_x`.
    pub hat_x: BlockMatrix,
    /// `(T+1)×T` blocks `n_x × n_r`, column index is the measurement-noise index.
    pub hat_y: BlockMatrix,
    /// Whether every column used the same gains (enables the O(T²) assembly).
    pub shared_gains: bool,
}

/// Forward in `k` per column for the control side, backward in `j` per row for the estimator.
pub fn forward_passes(ltv: &StackedLtv, ctrl: &ControlRecursion, kal: &KalmanRecursion) -> PropagationOps {
    let t = ltv.horizon;
    let (n_x, n_u, n_r) = (ltv.n_x, ltv.n_u, ltv.n_r);

    let columns: Vec<(Vec<Mat>, Vec<Mat>)> = (0..=t)
        .into_par_iter()
        .map(|j| {
            let mut xs = Vec::with_capacity(t + 1 - j);
            let mut us = Vec::with_capacity(t - j);
            let mut cur = Mat::identity(n_x, n_x);
            for k in j..t {
                let kk = ctrl.gain(k, j);
                us.push(kk * &cur);
                let next = (&ltv.a[k] + &ltv.b[k] * kk) * &cur;
                xs.push(std::mem::replace(&mut cur, next));
            }
            xs.push(cur);
            (xs, us)
        })
        .collect();

    let rows: Vec<(Vec<Mat>, Vec<Mat>)> = (0..=t)
        .into_par_iter()
        .map(|k| {
            // stored in reverse: index 0 is j = k
            let mut xs = Vec::with_capacity(k + 1);
            let mut ys = Vec::with_capacity(k);
            xs.push(Mat::identity(n_x, n_x));
            for j in (0..k).rev() {
                let prev = xs.last().unwrap();
                let y = prev * kal.l[j + 1].transpose();
                let x = prev * &ltv.a[j] + &y * &ltv.c[j];
                ys.push(y);
                xs.push(x);
            }
            (xs, ys)
        })
        .collect();

    let mut bar_x = BlockMatrix::zeros(t + 1, t + 1, n_x, n_x);
    let mut bar_u = BlockMatrix::zeros(t, t + 1, n_u, n_x);
    for (j, (xs, us)) in columns.into_iter().enumerate() {
        for (i, m) in xs.into_iter().enumerate() {
            bar_x.set(j + i, j, m);
        }
        for (i, m) in us.into_iter().enumerate() {
            bar_u.set(j + i, j, m);
        }
    }
    let mut hat_x = BlockMatrix::zeros(t + 1, t + 1, n_x, n_x);
    let mut hat_y = BlockMatrix::zeros(t + 1, t, n_x, n_r);
    for (k, (xs, ys)) in rows.into_iter().enumerate() {
        for (i, m) in xs.into_iter().enumerate() {
            hat_x.set(k, k - i, m);
        }
        for (i, m) in ys.into_iter().enumerate() {
            hat_y.set(k, k - 1 - i, m);
        }
    }
    PropagationOps { bar_x, bar_u, hat_x, hat_y, shared_gains: ctrl.per_column.is_none() }
}

/// `(𝐌 X)_{k,j} = X_{k,j} − A_{k−1} X_{k−1,j}`.
fn left_m(ltv: &StackedLtv, x: &BlockMatrix) -> BlockMatrix {
    let mut out = x.clone();
    for k in 1..x.block_rows {
        for j in 0..x.block_cols {
            let prev = x.get(k - 1, j);
            if prev.iter().any(|v| *v != 0.0) {
                *out.get_mut(k, j) -= &ltv.a[k - 1] * prev;
            }
        }
    }
    out
}

/// `(Φ̄x X, Φ̄u X)` for lower-triangular `X` whose column `j` vanishes above row `j`.
fn closed_loop_products(props: &PropagationOps, x: &BlockMatrix) -> (BlockMatrix, BlockMatrix) {
    let t = props.bar_u.block_rows;
    let (n_x, n_u) = (props.bar_x.row_dim, props.bar_u.row_dim);
    let cols = x.block_cols;
    let results: Vec<(Vec<Mat>, Vec<Mat>)> = (0..cols)
        .into_par_iter()
        .map(|j| {
            let mut ys = vec![Mat::zeros(n_x, x.col_dim); t + 1];
            let mut us = vec![Mat::zeros(n_u, x.col_dim); t];
            if props.shared_gains {
                // Y_{k+1} = Φ̄x_{k+1,k} Y_k + X_{k+1}, (Φ̄u X)_k = K_k Y_k
                ys[j] = x.get(j, j).clone();
                for k in j..t {
                    us[k] = props.bar_u.get(k, k) * &ys[k];
                    ys[k + 1] = props.bar_x.get(k + 1, k) * &ys[k] + x.get(k + 1, j);
                }
            } else {
                for k in j..=t {
                    let mut acc = Mat::zeros(n_x, x.col_dim);
                    let mut accu = Mat::zeros(n_u, x.col_dim);
                    for i in j..=k {
                        acc += props.bar_x.get(k, i) * x.get(i, j);
                        if k < t {
                            accu += props.bar_u.get(k, i) * x.get(i, j);
                        }
                    }
                    ys[k] = acc;
                    if k < t {
                        us[k] = accu;
                    }
                }
            }
            (ys, us)
        })
        .collect();
    let mut px = BlockMatrix::zeros(t + 1, cols, n_x, x.col_dim);
    let mut pu = BlockMatrix::zeros(t, cols, n_u, x.col_dim);
    for (j, (ys, us)) in results.into_iter().enumerate() {
        for (k, m) in ys.into_iter().enumerate().skip(j) {
            px.set(k, j, m);
        }
        for (k, m) in us.into_iter().enumerate().skip(j) {
            pu.set(k, j, m);
        }
    }
    (px, pu)
}

fn sub_into(a: &mut BlockMatrix, b: &BlockMatrix) {
    for k in 0..a.block_rows {
        for j in 0..a.block_cols {
            *a.get_mut(k, j) -= b.get(k, j);
        }
    }
}

/// `Φxw = Φ̄x + Φ̂x − Φ̄x𝐌Φ̂x`, `Φuw = Φ̄u(𝐈 − 𝐌Φ̂x)`, `Φxe = Φ̂y − Φ̄x𝐌Φ̂y`, `Φue = −Φ̄u𝐌Φ̂y`.
pub fn assemble(props: &PropagationOps, ltv: &StackedLtv) -> ResponseMaps {
    let mx = left_m(ltv, &props.hat_x);
    let my = left_m(ltv, &props.hat_y);
    let (x_mx, u_mx) = closed_loop_products(props, &mx);
    let (x_my, u_my) = closed_loop_products(props, &my);

    let mut xw = props.bar_x.clone();
    for k in 0..xw.block_rows {
        for j in 0..=k {
            *xw.get_mut(k, j) += props.hat_x.get(k, j);
        }
    }
    sub_into(&mut xw, &x_mx);
    let mut uw = props.bar_u.clone();
    sub_into(&mut uw, &u_mx);
    let mut xe = props.hat_y.clone();
    sub_into(&mut xe, &x_my);
    let mut ue = u_my;
    for k in 0..ue.block_rows {
        for j in 0..ue.block_cols {
            let b = ue.get_mut(k, j);
            *b = -&*b;
        }
    }
    ResponseMaps { xw, xe, uw, ue }
}

/// Weighted squared Frobenius norm of `Φ · blkdiag(𝐄, 𝐅)`; weight `Q` on state rows
/// `0..T−1`, `P` on row `T`, `R` on input rows.
pub fn lqg_cost(maps: &ResponseMaps, ltv: &StackedLtv, w: &LqgWeights) -> f64 {
    let t = ltv.horizon;
    let mut cost = 0.0;
    for k in 0..=t {
        let wk = if k == t { &w.p } else { &w.q };
        for j in 0..=k {
            let b = maps.xw.get(k, j) * ltv.e_block(j);
            cost += (b.transpose() * wk * &b).trace();
        }
        for j in 0..k {
            let b = maps.xe.get(k, j) * &ltv.f[j];
            cost += (b.transpose() * wk * &b).trace();
        }
    }
    for k in 0..t {
        for j in 0..=k {
            let b = maps.uw.get(k, j) * ltv.e_block(j);
            cost += (b.transpose() * &w.r * &b).trace();
        }
        for j in 0..k {
            let b = maps.ue.get(k, j) * &ltv.f[j];
            cost += (b.transpose() * &w.r * &b).trace();
        }
    }
    cost
}

#[derive(Clone, Debug)]
pub struct LqgSolution {
    pub ctrl: ControlRecursion,
    pub kal: KalmanRecursion,
    pub maps: ResponseMaps,
    pub cost: f64,
}

/// Full solve: both recursions, forward passes, assembly, cost.
pub fn solve_lqg(ltv: &StackedLtv, weights: &LqgWeights, per_column: Option<ColumnWeights<'_>>) -> Result<LqgSolution> {
    let ctrl = backward_control(ltv, weights, per_column)?;
    let kal = backward_kalman(ltv)?;
    let props = forward_passes(ltv, &ctrl, &kal);
    let maps = assemble(&props, ltv);
    let cost = lqg_cost(&maps, ltv, weights);
    Ok(LqgSolution { ctrl, kal, maps, cost })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn scalar_control_step() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 1).unwrap();
        let w = LqgWeights { q: s(1.0), r: s(1.0), p: s(1.0) };
        let c = backward_control(&ltv, &w, None).unwrap();
        assert!((c.shared.k[0][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((c.shared.s[0][(0, 0)] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn no_actuation_no_gain() {
        let ltv = StackedLtv::time_invariant(&s(2.0), &s(0.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 3).unwrap();
        let w = LqgWeights { q: s(1.0), r: s(1.0), p: s(1.0) };
        let c = backward_control(&ltv, &w, None).unwrap();
        assert!(c.shared.k.iter().all(|k| k[(0, 0)] == 0.0));
        assert_eq!(c.shared.s[2][(0, 0)], 1.0 + 4.0);
        let z = LqgWeights { q: s(0.0), r: s(1.0), p: s(0.0) };
        let c = backward_control(&ltv, &z, None).unwrap();
        assert!(c.shared.s.iter().all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn singular_input_weight() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(0.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 2).unwrap();
        let w = LqgWeights { q: s(1.0), r: s(0.0), p: s(1.0) };
        assert!(matches!(backward_control(&ltv, &w, None), Err(Error::RiccatiSingular { step: 1 })));
    }

    #[test]
    fn scalar_kalman_step() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(0.0), &s(1.0), &s(1.0), 1).unwrap();
        let k = backward_kalman(&ltv).unwrap();
        assert!((k.l[1][(0, 0)] + 0.5).abs() < 1e-15);
        assert!((k.pi[1][(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn unobserved_covariance_grows() {
        let ltv = StackedLtv::time_invariant(&s(2.0), &s(1.0), &s(0.0), &s(1.0), &s(1.0), &s(1.0), 2).unwrap();
        let k = backward_kalman(&ltv).unwrap();
        assert_eq!(k.l[1][(0, 0)], 0.0);
        assert_eq!(k.pi[1][(0, 0)], 1.0 + 4.0);
        assert_eq!(k.pi[2][(0, 0)], 1.0 + 20.0);
    }

    #[test]
    fn no_uncertainty_no_observer() {
        let ltv = StackedLtv::time_invariant(&s(2.0), &s(1.0), &s(1.0), &s(0.0), &s(1.0), &s(0.0), 3).unwrap();
        let k = backward_kalman(&ltv).unwrap();
        assert!(k.pi.iter().chain(k.l.iter()).all(|m| m[(0, 0)] == 0.0));
    }

    #[test]
    fn singular_innovation() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(0.0), &s(0.0), 2).unwrap();
        assert!(matches!(backward_kalman(&ltv), Err(Error::KalmanSingular { step: 0 })));
    }

    #[test]
    fn open_loop_scalar_cost() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 1).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        // Φxw = [[1,0],[1,1]]: Q on row 0, P on row 1
        let w = LqgWeights { q: s(1.0), r: s(1.0), p: s(0.0) };
        assert_eq!(lqg_cost(&maps, &ltv, &w), 1.0);
        let w = LqgWeights { q: s(1.0), r: s(1.0), p: s(1.0) };
        assert_eq!(lqg_cost(&maps, &ltv, &w), 3.0);
    }

    #[test]
    fn zero_gains_give_transitions() {
        let ltv = StackedLtv::time_invariant(&s(1.5), &s(0.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 3).unwrap();
        let w = LqgWeights { q: s(1.0), r: s(1.0), p: s(1.0) };
        let ctrl = backward_control(&ltv, &w, None).unwrap();
        let kal = KalmanRecursion { pi: vec![s(0.0); 4], l: vec![s(0.0); 4] };
        let p = forward_passes(&ltv, &ctrl, &kal);
        assert!((p.bar_x.get(3, 1)[(0, 0)] - 2.25).abs() < 1e-15);
        assert!((p.hat_x.get(3, 0)[(0, 0)] - 3.375).abs() < 1e-15);
        assert_eq!(p.hat_y.get(3, 0)[(0, 0)], 0.0);
        assert_eq!(p.bar_u.get(2, 0)[(0, 0)], 0.0);
    }
}
