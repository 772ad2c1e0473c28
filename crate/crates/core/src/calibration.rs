//! Perception-error envelopes, coverage and the local observability metric.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::model::{step_with_jacobian, DynamicsModel};
use crate::qp::{solve_qp, QuadraticProgram};
use crate::spec::EnvelopeModel;

/// Total-degree monomials over selected coordinates, constant term first, graded order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MonomialBasis {
    pub coords: Vec<usize>,
    pub degree: usize,
    exponents: Vec<Vec<u32>>,
}

impl MonomialBasis {
    pub fn new(coords: Vec<usize>, degree: usize) -> Self {
        let d = coords.len();
        let mut exponents = Vec::new();
        for total in 0..=degree {
            let mut cur = vec![0u32; d];
            graded(&mut exponents, &mut cur, 0, total as u32);
        }
        MonomialBasis { coords, degree, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[Vec<u32>] {
        &self.exponents
    }

    pub fn eval(&self, x: &Vector) -> Vec<f64> {
        self.exponents.iter().map(|e| self.coords.iter().zip(e).map(|(&i, &p)| x[i].powi(p as i32)).product()).collect()
    }

    /// `len() × n_x` Jacobian of `eval`.
    pub fn gradient(&self, x: &Vector) -> Mat {
        let mut g = Mat::zeros(self.len(), x.len());
        for (row, e) in self.exponents.iter().enumerate() {
            for (a, &ia) in self.coords.iter().enumerate() {
                if e[a] == 0 {
                    continue;
                }
                let mut v = e[a] as f64 * x[ia].powi(e[a] as i32 - 1);
                for (b, &ib) in self.coords.iter().enumerate() {
                    if b != a {
                        v *= x[ib].powi(e[b] as i32);
                    }
                }
                g[(row, ia)] += v;
            }
        }
        g
    }
}

// exponent vectors summing to `left`, lexicographically descending in the first coordinate
fn graded(out: &mut Vec<Vec<u32>>, cur: &mut Vec<u32>, pos: usize, left: u32) {
    if pos + 1 >= cur.len() {
        if let Some(last) = cur.last_mut() {
            *last = left;
            out.push(cur.clone());
        } else if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    for p in (0..=left).rev() {
        cur[pos] = p;
        graded(out, cur, pos + 1, left - p);
    }
    cur[pos] = 0;
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualDataset {
    pub states: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
}

impl ResidualDataset {
    pub fn new(states: Vec<Vec<f64>>, residuals: Vec<f64>) -> Result<Self> {
        if states.len() != residuals.len() {
            return Err(Error::Shape("one residual per state required".into()));
        }
        if let Some(i) = residuals.iter().position(|r| !(*r >= 0.0)) {
            return Err(Error::InvalidSpec(vec![format!("residual {} is negative or not finite", i + 1)]));
        }
        Ok(ResidualDataset { states, residuals })
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    pub fn state(&self, i: usize) -> Vector {
        Vector::from_column_slice(&self.states[i])
    }

    /// Columns: state coordinates then `r`. A non-numeric first line is treated as a header.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut states = Vec::new();
        let mut residuals = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: std::result::Result<Vec<f64>, _> = line.split(',').map(|s| s.trim().parse::<f64>()).collect();
            match fields {
                Ok(mut v) if v.len() >= 2 => {
                    let r = v.pop().unwrap();
                    states.push(v);
                    residuals.push(r);
                }
                Err(_) if ln == 0 => continue,
                _ => return Err(Error::InvalidSpec(vec![format!("residual CSV line {}: malformed", ln + 1)])),
            }
        }
        if let Some(w) = states.first().map(Vec::len) {
            if states.iter().any(|s| s.len() != w) {
                return Err(Error::InvalidSpec(vec!["residual CSV rows differ in width".into()]));
            }
        }
        ResidualDataset::new(states, residuals)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub coords: Vec<usize>,
    pub degree: usize,
    pub beta: Vec<f64>,
    /// Hinge slacks at the fit points.
    pub slacks: Vec<f64>,
}

impl Envelope {
    pub fn basis(&self) -> MonomialBasis {
        MonomialBasis::new(self.coords.clone(), self.degree)
    }

    pub fn value(&self, x: &Vector) -> f64 {
        self.basis().eval(x).iter().zip(&self.beta).map(|(m, b)| m * b).sum()
    }

    pub fn to_model(&self) -> EnvelopeModel {
        EnvelopeModel::Polynomial { coords: self.coords.clone(), degree: self.degree, coefficients: self.beta.clone() }
    }
}

pub const DEFAULT_GAMMA: f64 = 1e-4;
pub const DEFAULT_MU: f64 = 1e3;

/// `min Σ βᵀm(x_i) + γ‖β‖² + μ Σ ξ_i  s.t.  βᵀm(x_i) + ξ_i ≥ r_i,  ξ ≥ 0`.
pub fn fit_envelope(data: &ResidualDataset, basis: &MonomialBasis, gamma: f64, mu: f64) -> Result<Envelope> {
    let (nb, n) = (basis.len(), data.len());
    if n < nb {
        return Err(Error::InvalidSpec(vec![format!("{n} samples for a basis of size {nb}")]));
    }
    if !(gamma >= 0.0 && mu >= 0.0) {
        return Err(Error::InvalidSpec(vec!["gamma and mu must be nonnegative".into()]));
    }
    let feats: Vec<Vec<f64>> = (0..n).map(|i| basis.eval(&data.state(i))).collect();
    let mut qp = QuadraticProgram::new(nb + n);
    for j in 0..nb {
        qp.p.push(j, j, 2.0 * gamma);
        qp.q[j] = feats.iter().map(|m| m[j]).sum();
    }
    for i in 0..n {
        qp.q[nb + i] = mu;
        let row: Vec<(usize, f64)> =
            feats[i].iter().enumerate().map(|(j, m)| (j, -m)).chain([(nb + i, -1.0)]).collect();
        qp.g.push_row(row);
        qp.h.push(-data.residuals[i]);
        qp.g.push_row([(nb + i, -1.0)]);
        qp.h.push(0.0);
    }
    let sol = solve_qp(&qp).map_err(|e| match e {
        Error::QpFailed(_) => Error::FitUnbounded,
        other => other,
    })?;
    let beta = sol.x[..nb].to_vec();
    let slacks = (0..n)
        .map(|i| {
            let b: f64 = feats[i].iter().zip(&beta).map(|(m, c)| m * c).sum();
            (data.residuals[i] - b).max(0.0)
        })
        .collect();
    Ok(Envelope { coords: basis.coords.clone(), degree: basis.degree, beta, slacks })
}

/// Fraction of points with `r_i ≤ b(x_i)`.
pub fn coverage(b: impl Fn(&Vector) -> f64, held_out: &ResidualDataset) -> Result<f64> {
    if held_out.is_empty() {
        return Err(Error::InvalidSpec(vec!["empty held-out set".into()]));
    }
    let hit = (0..held_out.len()).filter(|&i| held_out.residuals[i] <= b(&held_out.state(i))).count();
    Ok(hit as f64 / held_out.len() as f64)
}

/// Residuals `r = scale·(x_coord − center)² + U[0, noise]` at states uniform in `[lo, hi]` per coordinate.
#[derive(Clone, Debug)]
pub struct SyntheticResiduals {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub coord: usize,
    pub center: f64,
    pub scale: f64,
    pub noise: f64,
}

impl SyntheticResiduals {
    pub fn truth(&self, x: &Vector) -> f64 {
        self.scale * (x[self.coord] - self.center).powi(2)
    }

    pub fn sample(&self, n: usize, seed: u64) -> ResidualDataset {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut states = Vec::with_capacity(n);
        let mut residuals = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = self.lo.iter().zip(&self.hi).map(|(l, h)| rng.random_range(*l..=*h)).collect();
            let r = self.truth(&Vector::from_column_slice(&x)) + rng.random_range(0.0..=self.noise);
            states.push(x);
            residuals.push(r);
        }
        ResidualDataset { states, residuals }
    }
}

/// Stacked outputs `h(x_1), …, h(x_n)` along the discrete dynamics and their Jacobian in `x̂`.
pub fn observability_matrix(
    model: &DynamicsModel,
    cr: &Mat,
    x_hat: &Vector,
    u_seq: &[Vector],
    dt: f64,
) -> Result<(Vector, Mat)> {
    if u_seq.is_empty() {
        return Err(Error::Shape("empty input sequence".into()));
    }
    let (p, n) = (cr.nrows(), x_hat.len());
    let mut out = Vector::zeros(p * u_seq.len());
    let mut jac = Mat::zeros(p * u_seq.len(), n);
    let mut x = x_hat.clone();
    let mut sens = Mat::identity(n, n);
    for (i, u) in u_seq.iter().enumerate() {
        let (next, a, _) = step_with_jacobian(model, &x, u, dt)?;
        sens = a * sens;
        x = next;
        out.rows_mut(i * p, p).copy_from(&(cr * &x));
        jac.view_mut((i * p, 0), (p, n)).copy_from(&(cr * &sens));
    }
    Ok((out, jac))
}

/// `σ_min` of the observability Jacobian; zero when it has fewer rows than states.
pub fn observability_metric(model: &DynamicsModel, cr: &Mat, x_hat: &Vector, u_seq: &[Vector], dt: f64) -> Result<f64> {
    let (_, jac) = observability_matrix(model, cr, x_hat, u_seq, dt)?;
    Ok(min_singular_value(&jac))
}

pub fn min_singular_value(j: &Mat) -> f64 {
    if j.nrows() < j.ncols() {
        return 0.0;
    }
    j.singular_values().iter().copied().fold(f64::INFINITY, f64::min).max(0.0)
}

/// Matching error `‖ŷ − C^r x‖₂` minus `λ σ_min`.
pub fn observability_loss(
    model: &DynamicsModel,
    cr: &Mat,
    reduced_obs: &Vector,
    x: &Vector,
    u_seq: &[Vector],
    dt: f64,
    lambda: f64,
) -> Result<f64> {
    let matching = (reduced_obs - cr * x).norm();
    Ok(matching - lambda * observability_metric(model, cr, x, u_seq, dt)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_sizes_and_order() {
        let b = MonomialBasis::new(vec![0, 1], 3);
        assert_eq!(b.len(), 10);
        assert_eq!(b.exponents()[0], vec![0, 0]);
        assert_eq!(b.exponents()[1], vec![1, 0]);
        assert_eq!(b.exponents()[2], vec![0, 1]);
        assert_eq!(MonomialBasis::new(vec![0], 0).len(), 1);
        assert_eq!(MonomialBasis::new(vec![0, 1, 2], 4).len(), 35);
    }

    #[test]
    fn basis_gradient_fd() {
        let b = MonomialBasis::new(vec![0, 2], 3);
        let x = Vector::from_vec(vec![0.7, -0.3, 1.3]);
        let g = b.gradient(&x);
        for i in 0..3 {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += 1e-6;
            xm[i] -= 1e-6;
            let (ep, em) = (b.eval(&xp), b.eval(&xm));
            for r in 0..b.len() {
                assert!((g[(r, i)] - (ep[r] - em[r]) / 2e-6).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn csv_header_skipped() {
        let d = ResidualDataset::from_csv("px,py,r\n1,2,0.5\n3,4,0.25\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.states[1], vec![3.0, 4.0]);
        assert!(ResidualDataset::from_csv("1,2,-0.5\n").is_err());
    }
}
