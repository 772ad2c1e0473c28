//! Convex QP interface: `min ½xᵀPx + qᵀx  s.t.  A x = b,  G x ≤ h`.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, SolverStatus, SupportedConeT, ZeroConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};

/// Coordinate-format sparse matrix; repeated entries are summed.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets { nrows, ncols, entries: Vec::new() }
    }

    pub fn push(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.nrows && j < self.ncols);
        if v != 0.0 {
            self.entries.push((i, j, v));
        }
    }

    /// Append a row and return its index.
    pub fn push_row(&mut self, cols: impl IntoIterator<Item = (usize, f64)>) -> usize {
        let i = self.nrows;
        self.nrows += 1;
        for (j, v) in cols {
            self.push(i, j, v);
        }
        i
    }

    pub fn add_block(&mut self, i0: usize, j0: usize, m: &Mat) {
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                self.push(i0 + i, j0 + j, m[(i, j)]);
            }
        }
    }

    pub fn from_dense(m: &Mat) -> Self {
        let mut t = Triplets::new(m.nrows(), m.ncols());
        t.add_block(0, 0, m);
        t
    }

    pub fn to_dense(&self) -> Mat {
        let mut m = Mat::zeros(self.nrows, self.ncols);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.nrows];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; self.ncols];
        for &(i, j, v) in &self.entries {
            x[j] += v * y[i];
        }
        x
    }

    fn to_csc(&self, upper_only: bool) -> CscMatrix<f64> {
        let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j, v) in &self.entries {
            if !upper_only || i <= j {
                ii.push(i);
                jj.push(j);
                vv.push(v);
            }
        }
        CscMatrix::new_from_triplets(self.nrows, self.ncols, ii, jj, vv)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticProgram {
    /// Full symmetric Hessian.
    pub p: Triplets,
    pub q: Vec<f64>,
    pub a_eq: Triplets,
    pub b_eq: Vec<f64>,
    pub g: Triplets,
    pub h: Vec<f64>,
}

impl QuadraticProgram {
    pub fn new(n: usize) -> Self {
        QuadraticProgram {
            p: Triplets::new(n, n),
            q: vec![0.0; n],
            a_eq: Triplets::new(0, n),
            b_eq: Vec::new(),
            g: Triplets::new(0, n),
            h: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let px = self.p.mul_vec(x);
        x.iter().zip(&px).map(|(a, b)| 0.5 * a * b).sum::<f64>()
            + x.iter().zip(&self.q).map(|(a, b)| a * b).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Solved,
    /// Converged to reduced accuracy.
    AlmostSolved,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: Vec<f64>,
    /// Nonnegative multipliers of the inequality rows.
    pub y_ineq: Vec<f64>,
    pub status: QpStatus,
    pub iterations: u32,
}

pub fn solve_qp(qp: &QuadraticProgram) -> Result<QpSolution> {
    let n = qp.n();
    if qp.p.nrows != n || qp.p.ncols != n || qp.a_eq.ncols != n || qp.g.ncols != n {
        return Err(Error::Shape("QP matrix dimensions".into()));
    }
    if qp.a_eq.nrows != qp.b_eq.len() || qp.g.nrows != qp.h.len() {
        return Err(Error::Shape("QP right-hand side lengths".into()));
    }
    let (m_eq, m_in) = (qp.a_eq.nrows, qp.g.nrows);
    let p = qp.p.to_csc(true);
    let mut stacked = Triplets::new(m_eq + m_in, n);
    stacked.entries.extend(qp.a_eq.entries.iter().copied());
    stacked.entries.extend(qp.g.entries.iter().map(|&(i, j, v)| (i + m_eq, j, v)));
    let a = stacked.to_csc(false);
    let mut b = qp.b_eq.clone();
    b.extend_from_slice(&qp.h);
    let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
    if m_eq > 0 {
        cones.push(ZeroConeT(m_eq));
    }
    if m_in > 0 {
        cones.push(NonnegativeConeT(m_in));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(200)
        .tol_gap_abs(1e-9)
        .tol_gap_rel(1e-9)
        .tol_feas(1e-9)
        .presolve_enable(false)
        .max_threads(1)
        .build()
        .map_err(|e| Error::QpFailed(e.to_string()))?;
    let mut solver =
        DefaultSolver::new(&p, &qp.q, &a, &b, &cones, settings).map_err(|e| Error::QpFailed(e.to_string()))?;
    solver.solve();
    let status = match solver.solution.status {
        SolverStatus::Solved => QpStatus::Solved,
        SolverStatus::AlmostSolved => QpStatus::AlmostSolved,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => return Err(Error::QpInfeasible),
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            return Err(Error::QpFailed("objective unbounded below".into()))
        }
        SolverStatus::MaxIterations | SolverStatus::MaxTime => return Err(Error::QpMaxIter),
        other => return Err(Error::QpFailed(format!("{other:?}"))),
    };
    let z = &solver.solution.z;
    Ok(QpSolution {
        x: solver.solution.x.clone(),
        y_eq: z[..m_eq].to_vec(),
        y_ineq: z[m_eq..].to_vec(),
        status,
        iterations: solver.solution.iterations,
    })
}

/// Max-abs primal, dual and complementarity residuals of a solution.
pub fn kkt_residuals(qp: &QuadraticProgram, sol: &QpSolution) -> (f64, f64, f64) {
    let ax = qp.a_eq.mul_vec(&sol.x);
    let gx = qp.g.mul_vec(&sol.x);
    let mut primal: f64 = 0.0;
    for (a, b) in ax.iter().zip(&qp.b_eq) {
        primal = primal.max((a - b).abs());
    }
    for (g, h) in gx.iter().zip(&qp.h) {
        primal = primal.max((g - h).max(0.0));
    }
    let px = qp.p.mul_vec(&sol.x);
    let aty = qp.a_eq.tr_mul_vec(&sol.y_eq);
    let gtz = qp.g.tr_mul_vec(&sol.y_ineq);
    let mut dual: f64 = 0.0;
    for i in 0..qp.n() {
        dual = dual.max((px[i] + qp.q[i] + aty[i] + gtz[i]).abs());
    }
    for z in &sol.y_ineq {
        dual = dual.max((-z).max(0.0));
    }
    let mut comp: f64 = 0.0;
    for (z, (g, h)) in sol.y_ineq.iter().zip(gx.iter().zip(&qp.h)) {
        comp = comp.max((z * (h - g)).abs());
    }
    (primal, dual, comp)
}

pub fn to_vector(x: &[f64]) -> Vector {
    Vector::from_column_slice(x)
}
