//! Continuous-time dynamics, RK4 discretization and trajectory linearization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_mat, Mat, Vector};

/// Registered vector fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", content = "params", rename_all = "snake_case")]
pub enum DynamicsModel {
    /// `ẋ = u` in `dim` dimensions.
    SingleIntegrator { dim: usize },
    /// State `(p_x, p_y, θ, v)`, input `(ω, a)`.
    DubinsCar {},
    /// Ten-state near-hover quadrotor, input `(u_x, u_y, u_z)`.
    Quadrotor { gravity: f64 },
    /// `ẋ = A x + B u`.
    Linear {
        #[serde(with = "serde_mat")]
        a: Mat,
        #[serde(with = "serde_mat")]
        b: Mat,
    },
}

impl DynamicsModel {
    pub fn n_x(&self) -> usize {
        match self {
            DynamicsModel::SingleIntegrator { dim } => *dim,
            DynamicsModel::DubinsCar {} => 4,
            DynamicsModel::Quadrotor { .. } => 10,
            DynamicsModel::Linear { a, .. } => a.nrows(),
        }
    }

    pub fn n_u(&self) -> usize {
        match self {
            DynamicsModel::SingleIntegrator { dim } => *dim,
            DynamicsModel::DubinsCar {} => 2,
            DynamicsModel::Quadrotor { .. } => 3,
            DynamicsModel::Linear { b, .. } => b.ncols(),
        }
    }

    /// State rate `f_c(x, u)`.
    pub fn rate(&self, x: &Vector, u: &Vector) -> Vector {
        match self {
            DynamicsModel::SingleIntegrator { .. } => u.clone(),
            DynamicsModel::DubinsCar {} => {
                let (th, v) = (x[2], x[3]);
                Vector::from_vec(vec![v * th.cos(), v * th.sin(), u[0], u[1]])
            }
            DynamicsModel::Quadrotor { gravity: g } => Vector::from_vec(vec![
                x[3],
                x[4],
                x[5],
                g * x[6].tan() - 3.0 * x[3],
                g * x[7].tan() - 3.0 * x[4],
                u[2] - g - x[5],
                -10.0 * x[6] + x[8],
                -10.0 * x[7] + x[9],
                -10.0 * x[6] + 50.0 * u[0],
                -10.0 * x[7] + 50.0 * u[1],
            ]),
            DynamicsModel::Linear { a, b } => a * x + b * u,
        }
    }

    /// Analytic `(∂f_c/∂x, ∂f_c/∂u)`.
    pub fn rate_jacobian(&self, x: &Vector, _u: &Vector) -> Option<(Mat, Mat)> {
        let (n, m) = (self.n_x(), self.n_u());
        let mut fx = Mat::zeros(n, n);
        let mut fu = Mat::zeros(n, m);
        match self {
            DynamicsModel::SingleIntegrator { .. } => fu.fill_with_identity(),
            DynamicsModel::DubinsCar {} => {
                let (th, v) = (x[2], x[3]);
                fx[(0, 2)] = -v * th.sin();
                fx[(0, 3)] = th.cos();
                fx[(1, 2)] = v * th.cos();
                fx[(1, 3)] = th.sin();
                fu[(2, 0)] = 1.0;
                fu[(3, 1)] = 1.0;
            }
            DynamicsModel::Quadrotor { gravity: g } => {
                for i in 0..3 {
                    fx[(i, i + 3)] = 1.0;
                }
                let sec2 = |t: f64| 1.0 / (t.cos() * t.cos());
                fx[(3, 3)] = -3.0;
                fx[(3, 6)] = g * sec2(x[6]);
                fx[(4, 4)] = -3.0;
                fx[(4, 7)] = g * sec2(x[7]);
                fx[(5, 5)] = -1.0;
                fx[(6, 6)] = -10.0;
                fx[(6, 8)] = 1.0;
                fx[(7, 7)] = -10.0;
                fx[(7, 9)] = 1.0;
                fx[(8, 6)] = -10.0;
                fx[(9, 7)] = -10.0;
                fu[(5, 2)] = 1.0;
                fu[(8, 0)] = 50.0;
                fu[(9, 1)] = 50.0;
            }
            DynamicsModel::Linear { a, b } => {
                fx.copy_from(a);
                fu.copy_from(b);
            }
        }
        Some((fx, fu))
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DynamicsModel::SingleIntegrator { .. } | DynamicsModel::Linear { .. })
    }
}

fn check_finite(x: Vector) -> Result<Vector> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(Error::IntegrationDiverged)
    }
}

/// One classical RK4 step.
pub fn discretize_step(model: &DynamicsModel, x: &Vector, u: &Vector, dt: f64) -> Result<Vector> {
    let h = dt;
    let k1 = model.rate(x, u);
    let k2 = model.rate(&(x + &k1 * (h / 2.0)), u);
    let k3 = model.rate(&(x + &k2 * (h / 2.0)), u);
    let k4 = model.rate(&(x + &k3 * h), u);
    check_finite(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))
}

/// RK4 step together with its exact sensitivities `(∂x⁺/∂x, ∂x⁺/∂u)`.
pub fn step_with_jacobian(model: &DynamicsModel, x: &Vector, u: &Vector, dt: f64) -> Result<(Vector, Mat, Mat)> {
    let Some((f1x, f1u)) = model.rate_jacobian(x, u) else {
        let next = discretize_step(model, x, u, dt)?;
        let (a, b) = finite_difference_jacobian(model, x, u, dt)?;
        return Ok((next, a, b));
    };
    let h = dt;
    let n = x.len();
    let eye = Mat::identity(n, n);

    let k1 = model.rate(x, u);
    let (d1x, d1u) = (f1x, f1u);

    let x2 = x + &k1 * (h / 2.0);
    let k2 = model.rate(&x2, u);
    let (f2x, f2u) = model.rate_jacobian(&x2, u).unwrap();
    let d2x = &f2x * (&eye + &d1x * (h / 2.0));
    let d2u = &f2x * (&d1u * (h / 2.0)) + f2u;

    let x3 = x + &k2 * (h / 2.0);
    let k3 = model.rate(&x3, u);
    let (f3x, f3u) = model.rate_jacobian(&x3, u).unwrap();
    let d3x = &f3x * (&eye + &d2x * (h / 2.0));
    let d3u = &f3x * (&d2u * (h / 2.0)) + f3u;

    let x4 = x + &k3 * h;
    let k4 = model.rate(&x4, u);
    let (f4x, f4u) = model.rate_jacobian(&x4, u).unwrap();
    let d4x = &f4x * (&eye + &d3x * h);
    let d4u = &f4x * (&d3u * h) + f4u;

    let next = check_finite(x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0))?;
    let a = eye + (d1x + d2x * 2.0 + d3x * 2.0 + d4x) * (h / 6.0);
    let b = (d1u + d2u * 2.0 + d3u * 2.0 + d4u) * (h / 6.0);
    Ok((next, a, b))
}

/// Central differences of the discrete step, step `1e-6·max(1,|x_i|)`.
pub fn finite_difference_jacobian(model: &DynamicsModel, x: &Vector, u: &Vector, dt: f64) -> Result<(Mat, Mat)> {
    let (n, m) = (x.len(), u.len());
    let mut a = Mat::zeros(n, n);
    let mut b = Mat::zeros(n, m);
    for i in 0..n {
        let h = 1e-6 * x[i].abs().max(1.0);
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        let d = (discretize_step(model, &xp, u, dt)? - discretize_step(model, &xm, u, dt)?) / (2.0 * h);
        a.set_column(i, &d);
    }
    for i in 0..m {
        let h = 1e-6 * u[i].abs().max(1.0);
        let (mut up, mut um) = (u.clone(), u.clone());
        up[i] += h;
        um[i] -= h;
        let d = (discretize_step(model, x, &up, dt)? - discretize_step(model, x, &um, dt)?) / (2.0 * h);
        b.set_column(i, &d);
    }
    Ok((a, b))
}

/// Per-step Jacobians of the discrete dynamics along a nominal trajectory.
#[derive(Clone, Debug)]
pub struct LinearizedModel {
    pub a: Vec<Mat>,
    pub b: Vec<Mat>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JacobianMode {
    Analytic,
    FiniteDifference,
}

pub fn linearize(model: &DynamicsModel, z: &[Vector], v: &[Vector], dt: f64) -> Result<LinearizedModel> {
    linearize_with(model, z, v, dt, JacobianMode::Analytic)
}

pub fn linearize_with(
    model: &DynamicsModel,
    z: &[Vector],
    v: &[Vector],
    dt: f64,
    mode: JacobianMode,
) -> Result<LinearizedModel> {
    if z.len() != v.len() + 1 {
        return Err(Error::Shape(format!("|z| = {} but |v| = {}", z.len(), v.len())));
    }
    let mut a = Vec::with_capacity(v.len());
    let mut b = Vec::with_capacity(v.len());
    for k in 0..v.len() {
        let (ak, bk) = match mode {
            JacobianMode::Analytic => {
                let (_, ak, bk) =
                    step_with_jacobian(model, &z[k], &v[k], dt).map_err(|_| Error::LinearizationFailed { step: k })?;
                (ak, bk)
            }
            JacobianMode::FiniteDifference => finite_difference_jacobian(model, &z[k], &v[k], dt)
                .map_err(|_| Error::LinearizationFailed { step: k })?,
        };
        if ak.iter().chain(bk.iter()).any(|x| !x.is_finite()) {
            return Err(Error::LinearizationFailed { step: k });
        }
        a.push(ak);
        b.push(bk);
    }
    Ok(LinearizedModel { a, b })
}

/// Roll the discrete dynamics forward from `x0` under `v`.
pub fn simulate(model: &DynamicsModel, x0: &Vector, v: &[Vector], dt: f64) -> Result<Vec<Vector>> {
    let mut z = Vec::with_capacity(v.len() + 1);
    z.push(x0.clone());
    for u in v {
        let next = discretize_step(model, z.last().unwrap(), u, dt)?;
        z.push(next);
    }
    Ok(z)
}
