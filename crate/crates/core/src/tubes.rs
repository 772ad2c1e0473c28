//! Disturbance scalings, ℓ1 constraint tightening and tube radii.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::qp::{solve_qp, QuadraticProgram};
use crate::sls::ResponseMaps;
use crate::spec::{ConstraintSet, ProblemSpec, RowKind, TerminalTightening};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeParams {
    /// `Σ_0 = Ξ`, `Σ_{j+1}` for `w_j`.
    #[serde(with = "crate::linalg::serde_mat_list")]
    pub sigma: Vec<Mat>,
    /// `Υ_j` for `e_j`, `j = 0..T−1`.
    #[serde(with = "crate::linalg::serde_mat_list")]
    pub upsilon: Vec<Mat>,
    /// Radii `τ_0..τ_{T−1}`.
    pub tau: Vec<f64>,
    /// Initial-set radius.
    pub rho: f64,
}

impl TubeParams {
    pub fn horizon(&self) -> usize {
        self.upsilon.len()
    }
}

/// `Σ_0 = Ξ`, `Σ_{j+1} = E(z_j) + σ(τ_j, z_j, v_j) I`, `Υ_j = b(z_j) I`.
pub fn build_scalings(z: &[Vector], v: &[Vector], tau: &[f64], spec: &ProblemSpec) -> Result<TubeParams> {
    let t = v.len();
    if z.len() != t + 1 || tau.len() != t {
        return Err(Error::Shape("trajectory and radius lengths are inconsistent".into()));
    }
    let (n_x, n_r) = (spec.n_x, spec.n_r);
    let mut sigma = Vec::with_capacity(t + 1);
    sigma.push(spec.noise.xi.clone());
    let mut upsilon = Vec::with_capacity(t);
    for j in 0..t {
        let s = spec.noise.sigma_at(tau[j], &z[j], &v[j]);
        if !(s >= 0.0) {
            return Err(Error::Shape(format!("linearization bound negative at step {j}")));
        }
        sigma.push(spec.noise.e_at(&z[j]) + Mat::identity(n_x, n_x) * s);
        let b = spec.observation.envelope.value(&z[j]);
        if !(b >= 0.0) {
            return Err(Error::InvalidEnvelope { step: j, value: b });
        }
        upsilon.push(Mat::identity(n_r, n_r) * b);
    }
    Ok(TubeParams { sigma, upsilon, tau: tau.to_vec(), rho: 0.0 })
}

fn l1_row(row: &nalgebra::RowDVector<f64>, s: &Mat) -> f64 {
    (row * s).iter().map(|v| v.abs()).sum()
}

/// `Σ_{j≤k} ‖cᵀ Φw_{k,j} Σ_j‖₁ + ‖cᵀ Φe_{k,j} Υ_j‖₁`; the input part of `c` is ignored at `k = T`.
pub fn margin(maps: &ResponseMaps, tubes: &TubeParams, c: &Vector, k: usize) -> f64 {
    let t = maps.horizon();
    let (n_x, n_u, _) = maps.dims();
    let cx = c.rows(0, n_x).transpose();
    let cu = (k < t && c.len() == n_x + n_u).then(|| c.rows(n_x, n_u).transpose());
    let mut total = 0.0;
    for j in 0..=k {
        let mut row = &cx * maps.xw.get(k, j);
        if let Some(cu) = &cu {
            row += cu * maps.uw.get(k, j);
        }
        total += l1_row(&row, &tubes.sigma[j]);
    }
    for j in 0..k.min(t) {
        let mut row = &cx * maps.xe.get(k, j);
        if let Some(cu) = &cu {
            row += cu * maps.ue.get(k, j);
        }
        total += l1_row(&row, &tubes.upsilon[j]);
    }
    total
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TightenedEntry {
    pub step: usize,
    pub kind: RowKind,
    pub index: usize,
    /// `cᵀ(z_k, v_k) + b`.
    pub nominal: f64,
    pub margin: f64,
    /// `−(nominal + margin)`.
    pub slack: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TightenedConstraintReport {
    pub entries: Vec<TightenedEntry>,
}

impl TightenedConstraintReport {
    pub fn min_slack(&self) -> f64 {
        self.entries.iter().map(|e| e.slack).fold(f64::INFINITY, f64::min)
    }

    pub fn max_margin(&self) -> f64 {
        self.entries.iter().map(|e| e.margin).fold(0.0, f64::max)
    }

    pub fn feasible(&self, tol: f64) -> bool {
        self.min_slack() >= -tol
    }

    /// Sum of positive parts of `nominal + margin`.
    pub fn violation(&self) -> f64 {
        self.entries.iter().map(|e| (-e.slack).max(0.0)).sum()
    }
}

/// Tightened check of every row in force along `(z, v)`.
pub fn tighten(
    maps: &ResponseMaps,
    tubes: &TubeParams,
    constraints: &ConstraintSet,
    z: &[Vector],
    v: &[Vector],
) -> TightenedConstraintReport {
    let t = v.len();
    let n_u = maps.dims().1;
    let mut entries = Vec::new();
    for (k, zk) in z.iter().enumerate() {
        let vk = v.get(k);
        for active in constraints.rows_at(k, t, zk, n_u) {
            let nominal = active.row.eval(zk, vk);
            let m = if active.tightened { margin(maps, tubes, &active.row.c, k) } else { 0.0 };
            entries.push(TightenedEntry {
                step: k,
                kind: active.kind,
                index: active.index,
                nominal,
                margin: m,
                slack: -(nominal + m),
            });
        }
    }
    if constraints.terminal == TerminalTightening::Feasible {
        let terminal: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].kind == RowKind::Terminal).collect();
        let rows: Vec<(Vector, f64, f64)> = terminal
            .iter()
            .map(|&i| {
                let r = &constraints.terminal_rows[entries[i].index];
                (r.c.rows(0, z[t].len()).into_owned(), r.b, entries[i].margin)
            })
            .collect();
        let alpha = feasible_scale(&rows);
        for i in terminal {
            let e = &mut entries[i];
            e.margin *= alpha;
            e.slack = -(e.nominal + e.margin);
        }
    }
    TightenedConstraintReport { entries }
}

/// Share of the largest feasible margin scale actually used, keeping the tightened set a nontrivial region.
pub const FEASIBLE_SCALE_FRACTION: f64 = 0.95;

/// `FEASIBLE_SCALE_FRACTION · α*` with `α*` the largest `α ≤ 1` such that
/// `{x : cᵢᵀx + bᵢ + α mᵢ ≤ 0}` is nonempty; `1` when full tightening is feasible.
pub fn feasible_scale(rows: &[(Vector, f64, f64)]) -> f64 {
    let Some(n) = rows.first().map(|r| r.0.len()) else {
        return 1.0;
    };
    let mut qp = QuadraticProgram::new(n + 1);
    qp.q[n] = -1.0;
    for (c, b, m) in rows {
        qp.g.push_row((0..n).map(|i| (i, c[i])).chain([(n, *m)]));
        qp.h.push(-b);
    }
    qp.g.push_row([(n, 1.0)]);
    qp.h.push(1.0);
    qp.g.push_row([(n, -1.0)]);
    qp.h.push(0.0);
    match solve_qp(&qp) {
        Ok(sol) if sol.x[n] >= 1.0 - 1e-9 => 1.0,
        Ok(sol) => (FEASIBLE_SCALE_FRACTION * sol.x[n]).clamp(0.0, 1.0),
        Err(_) => 0.0,
    }
}

/// Per-coordinate tube half-widths and the radius consistency check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeRadii {
    /// `r_{l,k}`: `n_x + n_u` entries for `k < T`, `n_x` at `k = T`.
    pub halfwidths: Vec<Vec<f64>>,
    pub max: Vec<f64>,
    /// `max_l r_{l,k} ≤ τ_k` for `k < T`.
    pub consistent: Vec<bool>,
}

pub fn tube_radii(maps: &ResponseMaps, tubes: &TubeParams) -> TubeRadii {
    let t = maps.horizon();
    let (n_x, n_u, _) = maps.dims();
    let mut halfwidths = Vec::with_capacity(t + 1);
    for k in 0..=t {
        let width = if k < t { n_x + n_u } else { n_x };
        let hw: Vec<f64> = (0..width)
            .map(|l| {
                let mut c = Vector::zeros(n_x + n_u);
                c[l] = 1.0;
                margin(maps, tubes, &c, k)
            })
            .collect();
        halfwidths.push(hw);
    }
    let max: Vec<f64> = halfwidths.iter().map(|h| h.iter().copied().fold(0.0, f64::max)).collect();
    let consistent =
        (0..t).map(|k| tubes.tau.get(k).is_some_and(|&tau| max[k] <= tau + 1e-12 * (1.0 + tau.abs()))).collect();
    TubeRadii { halfwidths, max, consistent }
}

/// Enumeration guard for the vertex oracle.
pub const VERTEX_LIMIT: usize = 20;

/// Worst case of `direction ᵀ (Δx_k; Δu_k)` over all ±1 disturbance vertices.
pub fn vertex_oracle(maps: &ResponseMaps, tubes: &TubeParams, direction: &Vector, k: usize) -> Result<f64> {
    let t = maps.horizon();
    let (n_x, n_u, n_r) = maps.dims();
    let dim = (t + 1) * n_x + t * n_r;
    if dim > VERTEX_LIMIT {
        return Err(Error::OracleTooLarge { size: dim, limit: VERTEX_LIMIT });
    }
    if direction.len() != n_x + n_u {
        return Err(Error::Shape("direction must have n_x + n_u entries".into()));
    }
    let cx = direction.rows(0, n_x).transpose();
    let cu = direction.rows(n_x, n_u).transpose();
    // coefficient of each scalar disturbance entry
    let mut coef = Vec::with_capacity(dim);
    for j in 0..=t {
        let mut row = &cx * maps.xw.get(k, j);
        if k < t {
            row += &cu * maps.uw.get(k, j);
        }
        coef.extend((row * &tubes.sigma[j]).iter().copied());
    }
    for j in 0..t {
        let mut row = &cx * maps.xe.get(k, j);
        if k < t {
            row += &cu * maps.ue.get(k, j);
        }
        coef.extend((row * &tubes.upsilon[j]).iter().copied());
    }
    let mut best = f64::NEG_INFINITY;
    for mask in 0u64..(1u64 << dim) {
        let val: f64 = coef.iter().enumerate().map(|(i, c)| if mask >> i & 1 == 1 { *c } else { -*c }).sum();
        best = best.max(val);
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ltv::StackedLtv;

    fn s(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn scalar_tubes(sig: &[f64], ups: &[f64]) -> TubeParams {
        TubeParams {
            sigma: sig.iter().map(|&v| s(v)).collect(),
            upsilon: ups.iter().map(|&v| s(v)).collect(),
            tau: vec![0.0; ups.len()],
            rho: 0.0,
        }
    }

    #[test]
    fn hand_margin() {
        let a = 0.7;
        let ltv = StackedLtv::time_invariant(&s(a), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 1).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        let tubes = scalar_tubes(&[0.3, 0.2], &[0.0]);
        let c = Vector::from_vec(vec![1.0, 0.0]);
        let m = margin(&maps, &tubes, &c, 1);
        assert!((m - (a * 0.3 + 0.2)).abs() < 1e-15);
        let v = vertex_oracle(&maps, &tubes, &c, 1).unwrap();
        assert!((m - v).abs() < 1e-15);
    }

    #[test]
    fn zero_scaling_zero_margin() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 3).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        let tubes = scalar_tubes(&[0.0; 4], &[0.0; 3]);
        let r = tube_radii(&maps, &tubes);
        assert!(r.halfwidths.iter().flatten().all(|v| *v == 0.0));
        assert!(r.consistent.iter().all(|c| *c));
    }

    #[test]
    fn open_loop_integrator_radii() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 4).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        let tubes = scalar_tubes(&[1.0; 5], &[0.0; 4]);
        let r = tube_radii(&maps, &tubes);
        for k in 0..=4 {
            assert_eq!(r.halfwidths[k][0], (k + 1) as f64);
        }
    }

    #[test]
    fn single_channel_and_zero_direction() {
        let ltv = StackedLtv::time_invariant(&s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), &s(1.0), 1).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        let tubes = scalar_tubes(&[-0.4, 0.0], &[0.0]);
        let c = Vector::from_vec(vec![1.0, 0.0]);
        assert!((vertex_oracle(&maps, &tubes, &c, 0).unwrap() - 0.4).abs() < 1e-15);
        assert_eq!(vertex_oracle(&maps, &tubes, &Vector::zeros(2), 1).unwrap(), 0.0);
    }

    #[test]
    fn oracle_guard() {
        let i = Mat::identity(3, 3);
        let ltv = StackedLtv::time_invariant(&i, &i, &i, &i, &i, &i, 4).unwrap();
        let maps = ResponseMaps::open_loop(&ltv);
        let tubes = TubeParams { sigma: vec![i.clone(); 5], upsilon: vec![i.clone(); 4], tau: vec![0.0; 4], rho: 0.0 };
        assert!(matches!(vertex_oracle(&maps, &tubes, &Vector::zeros(6), 2), Err(Error::OracleTooLarge { .. })));
    }
}
