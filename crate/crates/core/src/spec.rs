//! Problem specification and its JSON document format.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibration::MonomialBasis;
use crate::error::{Error, Result};
use crate::linalg::{from_rows, is_pd, is_psd, to_rows, Mat, Vector};
use crate::model::DynamicsModel;

/// Scalar perception-error envelope `b(x) ≥ 0`; the measurement scaling is `b(x)·I`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "id", content = "params", rename_all = "snake_case")]
pub enum EnvelopeModel {
    Constant {
        value: f64,
    },
    /// `offset + scale·(x[coord] − center)²`.
    Quadratic {
        coord: usize,
        center: f64,
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `beta0 + beta1·exp(−‖x[coords] − center‖² / radius²)`.
    Occlusion {
        coords: Vec<usize>,
        center: Vec<f64>,
        radius: f64,
        beta0: f64,
        beta1: f64,
    },
    /// `βᵀ m(x)` over total-degree monomials.
    Polynomial {
        coords: Vec<usize>,
        degree: usize,
        coefficients: Vec<f64>,
    },
}

impl EnvelopeModel {
    pub fn value(&self, x: &Vector) -> f64 {
        match self {
            EnvelopeModel::Constant { value } => *value,
            EnvelopeModel::Quadratic { coord, center, scale, offset } => offset + scale * (x[*coord] - center).powi(2),
            EnvelopeModel::Occlusion { coords, center, radius, beta0, beta1 } => {
                let d2: f64 = coords.iter().zip(center).map(|(&i, c)| (x[i] - c).powi(2)).sum();
                beta0 + beta1 * (-d2 / (radius * radius)).exp()
            }
            EnvelopeModel::Polynomial { coords, degree, coefficients } => {
                let basis = MonomialBasis::new(coords.clone(), *degree);
                basis.eval(x).iter().zip(coefficients).map(|(m, b)| m * b).sum()
            }
        }
    }

    pub fn gradient(&self, x: &Vector) -> Vector {
        let mut g = Vector::zeros(x.len());
        match self {
            EnvelopeModel::Constant { .. } => {}
            EnvelopeModel::Quadratic { coord, center, scale, .. } => {
                g[*coord] = 2.0 * scale * (x[*coord] - center);
            }
            EnvelopeModel::Occlusion { coords, center, radius, beta1, .. } => {
                let r2 = radius * radius;
                let d2: f64 = coords.iter().zip(center).map(|(&i, c)| (x[i] - c).powi(2)).sum();
                let e = beta1 * (-d2 / r2).exp();
                for (&i, c) in coords.iter().zip(center) {
                    g[i] += -2.0 * (x[i] - c) / r2 * e;
                }
            }
            EnvelopeModel::Polynomial { coords, degree, coefficients } => {
                let basis = MonomialBasis::new(coords.clone(), *degree);
                let jac = basis.gradient(x);
                for (row, b) in jac.row_iter().zip(coefficients) {
                    g += row.transpose() * *b;
                }
            }
        }
        g
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    pub cr: Mat,
    pub envelope: EnvelopeModel,
}

/// `cᵀ(x, u) + b ≤ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    #[serde(with = "crate::linalg::serde_vec")]
    pub c: Vector,
    pub b: f64,
}

impl ConstraintRow {
    pub fn eval(&self, x: &Vector, u: Option<&Vector>) -> f64 {
        let n_x = x.len();
        let mut s = self.b + self.c.rows(0, n_x).dot(x);
        if let Some(u) = u {
            s += self.c.rows(n_x, u.len()).dot(u);
        }
        s
    }
}

/// Row applied only at one step `k ∈ 0..=T`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRow {
    pub step: usize,
    #[serde(flatten)]
    pub row: ConstraintRow,
}

/// Keep-out ball `‖x[coords] − center‖ ≥ radius`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Obstacle {
    pub coords: Vec<usize>,
    pub center: Vec<f64>,
    pub radius: f64,
}

impl Obstacle {
    pub fn distance(&self, x: &Vector) -> f64 {
        self.coords.iter().zip(&self.center).map(|(&i, c)| (x[i] - c).powi(2)).sum::<f64>().sqrt()
    }

    /// Half-space `−nᵀp + nᵀc + r ≤ 0` tangent at the projection of `x`.
    pub fn linearize(&self, x: &Vector, n_u: usize) -> ConstraintRow {
        let n_x = x.len();
        let d = self.distance(x);
        let mut dir: Vec<f64> = self.coords.iter().zip(&self.center).map(|(&i, c)| x[i] - c).collect();
        if d < 1e-9 {
            dir.iter_mut().for_each(|v| *v = 0.0);
            dir[0] = 1.0;
        } else {
            dir.iter_mut().for_each(|v| *v /= d);
        }
        let mut c = Vector::zeros(n_x + n_u);
        let mut b = self.radius;
        for ((&i, ci), ni) in self.coords.iter().zip(&self.center).zip(&dir) {
            c[i] = -ni;
            b += ni * ci;
        }
        ConstraintRow { c, b }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Stage,
    Terminal,
    Step,
    Obstacle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveRow {
    pub kind: RowKind,
    pub index: usize,
    pub row: ConstraintRow,
    /// Whether the row is tightened by the tube margin.
    pub tightened: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ConstraintSet {
    /// Stage rows for `k = 0..T−1` over `(x, u)`.
    pub rows: Vec<ConstraintRow>,
    /// Rows at `k = T`; the input part of `c` is ignored.
    pub terminal_rows: Vec<ConstraintRow>,
    pub step_rows: Vec<StepRow>,
    pub obstacles: Vec<Obstacle>,
    pub terminal: TerminalTightening,
}

/// How terminal rows are tightened.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalTightening {
    /// Imposed on the nominal only.
    #[default]
    Nominal,
    /// Full tube margin.
    Full,
    /// Margins scaled by the largest common factor in `[0, 1]` that keeps the terminal set nonempty.
    Feasible,
}

impl ConstraintSet {
    /// Two rows per finite bound; `None` means unbounded.
    pub fn box_rows(lower: &[Option<f64>], upper: &[Option<f64>], offset: usize, width: usize) -> Vec<ConstraintRow> {
        let mut rows = Vec::new();
        for (i, (lo, hi)) in lower.iter().zip(upper).enumerate() {
            if let Some(hi) = hi {
                let mut c = Vector::zeros(width);
                c[offset + i] = 1.0;
                rows.push(ConstraintRow { c, b: -hi });
            }
            if let Some(lo) = lo {
                let mut c = Vector::zeros(width);
                c[offset + i] = -1.0;
                rows.push(ConstraintRow { c, b: *lo });
            }
        }
        rows
    }

    /// Rows in force at step `k`, obstacles linearized about `z_k`.
    pub fn rows_at(&self, k: usize, horizon: usize, z_k: &Vector, n_u: usize) -> Vec<ActiveRow> {
        let mut out = Vec::new();
        if k < horizon {
            for (i, r) in self.rows.iter().enumerate() {
                out.push(ActiveRow { kind: RowKind::Stage, index: i, row: r.clone(), tightened: true });
            }
        } else {
            for (i, r) in self.terminal_rows.iter().enumerate() {
                let mut row = r.clone();
                row.c.rows_mut(z_k.len(), n_u).fill(0.0);
                out.push(ActiveRow {
                    kind: RowKind::Terminal,
                    index: i,
                    row,
                    tightened: self.terminal != TerminalTightening::Nominal,
                });
            }
        }
        for (i, s) in self.step_rows.iter().enumerate().filter(|(_, s)| s.step == k) {
            out.push(ActiveRow { kind: RowKind::Step, index: i, row: s.row.clone(), tightened: true });
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            out.push(ActiveRow { kind: RowKind::Obstacle, index: i, row: o.linearize(z_k, n_u), tightened: true });
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty() && self.terminal_rows.is_empty() && self.step_rows.is_empty() && self.obstacles.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostWeights {
    pub q_bar: Mat,
    pub r_bar: Mat,
    pub p_bar: Mat,
    pub q: Mat,
    pub r: Mat,
    pub p: Mat,
}

pub type StateScalingFn = Arc<dyn Fn(&Vector) -> Mat + Send + Sync>;
pub type SigmaFn = Arc<dyn Fn(f64, &Vector, &Vector) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct NoiseSpec {
    pub xi: Mat,
    /// Constant process-noise scaling, overridden by `e_fn` when set.
    pub e: Mat,
    /// Constant linearization-error bound, overridden by `sigma_fn` when set.
    pub sigma: f64,
    pub e_fn: Option<StateScalingFn>,
    pub sigma_fn: Option<SigmaFn>,
}

impl NoiseSpec {
    pub fn new(xi: Mat, e: Mat) -> Self {
        NoiseSpec { xi, e, sigma: 0.0, e_fn: None, sigma_fn: None }
    }

    pub fn e_at(&self, x: &Vector) -> Mat {
        match &self.e_fn {
            Some(f) => f(x),
            None => self.e.clone(),
        }
    }

    pub fn sigma_at(&self, tau: f64, z: &Vector, v: &Vector) -> f64 {
        match &self.sigma_fn {
            Some(f) => f(tau, z, v),
            None => self.sigma,
        }
    }

    pub fn has_sigma(&self) -> bool {
        self.sigma_fn.is_some() || self.sigma != 0.0
    }
}

impl fmt::Debug for NoiseSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("NoiseSpec")
            .field("xi", &self.xi)
            .field("e", &self.e)
            .field("sigma", &self.sigma)
            .field("e_fn", &self.e_fn.is_some())
            .field("sigma_fn", &self.sigma_fn.is_some())
            .finish()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Goal {
    Point(Vector),
    Trajectory(Vec<Vector>),
}

impl Goal {
    pub fn at(&self, k: usize) -> &Vector {
        match self {
            Goal::Point(g) => g,
            Goal::Trajectory(t) => &t[k.min(t.len() - 1)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct ProblemSpec {
    pub name: Option<String>,
    pub n_x: usize,
    pub n_u: usize,
    pub n_r: usize,
    pub horizon: usize,
    pub dt: f64,
    pub dynamics: DynamicsModel,
    pub observation: ObservationModel,
    pub constraints: ConstraintSet,
    pub costs: CostWeights,
    pub noise: NoiseSpec,
    pub x0: Vector,
    pub goal: Goal,
    /// Input used to seed the nominal trajectory; zero when absent.
    pub initial_input: Option<Vector>,
}

fn check_shape(out: &mut Vec<String>, name: &str, m: &Mat, r: usize, c: usize) -> bool {
    if m.shape() != (r, c) {
        out.push(format!("{name} has shape {}x{}, expected {r}x{c}", m.nrows(), m.ncols()));
        return false;
    }
    if m.iter().any(|v| !v.is_finite()) {
        out.push(format!("{name} has non-finite entries"));
        return false;
    }
    true
}

/// Invariant violations, each naming the field and the rule.
pub fn validate_spec(spec: &ProblemSpec) -> Vec<String> {
    let mut out = Vec::new();
    let (n, m, r) = (spec.n_x, spec.n_u, spec.n_r);
    if n == 0 || m == 0 || r == 0 {
        out.push("ProblemSpec.dims must be positive".into());
        return out;
    }
    if spec.horizon < 1 {
        out.push("ProblemSpec.horizon must be at least 1".into());
    }
    if !(spec.dt > 0.0 && spec.dt.is_finite()) {
        out.push("ProblemSpec.dt must be positive".into());
    }
    if spec.dynamics.n_x() != n || spec.dynamics.n_u() != m {
        out.push(format!(
            "DynamicsModel dims ({}, {}) do not match (n_x, n_u) = ({n}, {m})",
            spec.dynamics.n_x(),
            spec.dynamics.n_u()
        ));
    }
    check_shape(&mut out, "ObservationModel.Cr", &spec.observation.cr, r, n);

    let c = &spec.costs;
    if check_shape(&mut out, "CostWeights.Q̄", &c.q_bar, n, n) && !is_psd(&c.q_bar) {
        out.push("CostWeights.Q̄ not positive semidefinite".into());
    }
    if check_shape(&mut out, "CostWeights.R̄", &c.r_bar, m, m) && !is_pd(&c.r_bar) {
        out.push("CostWeights.R̄ not positive definite".into());
    }
    if check_shape(&mut out, "CostWeights.P̄", &c.p_bar, n, n) && !is_psd(&c.p_bar) {
        out.push("CostWeights.P̄ not positive semidefinite".into());
    }
    if check_shape(&mut out, "CostWeights.Q", &c.q, n, n) && !is_psd(&c.q) {
        out.push("CostWeights.Q not positive semidefinite".into());
    }
    if check_shape(&mut out, "CostWeights.R", &c.r, m, m) && !is_pd(&c.r) {
        out.push("CostWeights.R not positive definite".into());
    }
    if check_shape(&mut out, "CostWeights.P", &c.p, n, n) && !is_psd(&c.p) {
        out.push("CostWeights.P not positive semidefinite".into());
    }

    check_shape(&mut out, "NoiseSpec.Ξ", &spec.noise.xi, n, n);
    check_shape(&mut out, "NoiseSpec.E", &spec.noise.e, n, n);
    if !(spec.noise.sigma >= 0.0 && spec.noise.sigma.is_finite()) {
        out.push("NoiseSpec.σ must be nonnegative".into());
    }

    let width = n + m;
    for (i, row) in spec.constraints.rows.iter().enumerate() {
        if row.c.len() != width {
            out.push(format!("ConstraintSet row {} has length {}, expected {width}", i + 1, row.c.len()));
        } else if row.c.iter().all(|v| *v == 0.0) {
            out.push(format!("ConstraintSet row {} is zero", i + 1));
        } else if !row.b.is_finite() || row.c.iter().any(|v| !v.is_finite()) {
            out.push(format!("ConstraintSet row {} is not finite", i + 1));
        }
    }
    for (i, row) in spec.constraints.terminal_rows.iter().enumerate() {
        if row.c.len() != width {
            out.push(format!("ConstraintSet terminal row {} has length {}, expected {width}", i + 1, row.c.len()));
        } else if row.c.rows(0, n).iter().all(|v| *v == 0.0) {
            out.push(format!("ConstraintSet terminal row {} is zero", i + 1));
        }
    }
    for (i, s) in spec.constraints.step_rows.iter().enumerate() {
        if s.row.c.len() != width {
            out.push(format!("ConstraintSet step row {} has length {}, expected {width}", i + 1, s.row.c.len()));
        } else if s.row.c.iter().all(|v| *v == 0.0) {
            out.push(format!("ConstraintSet step row {} is zero", i + 1));
        }
        if s.step > spec.horizon {
            out.push(format!("ConstraintSet step row {} has step {} beyond the horizon", i + 1, s.step));
        }
    }
    for (i, o) in spec.constraints.obstacles.iter().enumerate() {
        if o.coords.is_empty() || o.coords.len() != o.center.len() || o.coords.iter().any(|&c| c >= n) {
            out.push(format!("ConstraintSet obstacle {} has inconsistent coordinates", i + 1));
        }
        if !(o.radius > 0.0) {
            out.push(format!("ConstraintSet obstacle {} radius must be positive", i + 1));
        }
    }

    if spec.x0.len() != n {
        out.push(format!("ProblemSpec.x0 has length {}, expected {n}", spec.x0.len()));
    }
    match &spec.goal {
        Goal::Point(g) if g.len() != n => out.push(format!("ProblemSpec.goal has length {}, expected {n}", g.len())),
        Goal::Trajectory(t) => {
            if t.len() != spec.horizon + 1 {
                out.push(format!("ProblemSpec.goal trajectory has {} points, expected {}", t.len(), spec.horizon + 1));
            }
            if t.iter().any(|g| g.len() != n) {
                out.push("ProblemSpec.goal trajectory has wrong state length".into());
            }
        }
        _ => {}
    }
    if let Some(u) = &spec.initial_input {
        if u.len() != m {
            out.push(format!("ProblemSpec.initial_input has length {}, expected {m}", u.len()));
        }
    }

    match &spec.observation.envelope {
        EnvelopeModel::Quadratic { coord, .. } if *coord >= n => {
            out.push("ObservationModel.envelope coordinate out of range".into())
        }
        EnvelopeModel::Occlusion { coords, center, radius, .. } => {
            if coords.len() != center.len() || coords.iter().any(|&c| c >= n) {
                out.push("ObservationModel.envelope coordinates inconsistent".into());
            }
            if !(*radius > 0.0) {
                out.push("ObservationModel.envelope radius must be positive".into());
            }
        }
        EnvelopeModel::Polynomial { coords, degree, coefficients } => {
            if coords.iter().any(|&c| c >= n) {
                out.push("ObservationModel.envelope coordinates out of range".into());
            } else if MonomialBasis::new(coords.clone(), *degree).len() != coefficients.len() {
                out.push("ObservationModel.envelope coefficient count does not match basis".into());
            }
        }
        _ => {}
    }
    if out.is_empty() && spec.x0.len() == n {
        let b0 = spec.observation.envelope.value(&spec.x0);
        if !(b0 >= 0.0) {
            out.push("ObservationModel.envelope negative at x0".into());
        }
    }
    out
}

// ---------------------------------------------------------------------------
// JSON document layer

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum MatrixDoc {
    Diag { diag: Vec<f64> },
    Full(Vec<Vec<f64>>),
}

impl MatrixDoc {
    fn to_mat(&self, name: &str) -> Result<Mat> {
        match self {
            MatrixDoc::Diag { diag } => Ok(crate::linalg::diag(diag)),
            MatrixDoc::Full(rows) => {
                from_rows(rows).ok_or_else(|| Error::InvalidSpec(vec![format!("{name} has ragged rows")]))
            }
        }
    }

    fn from_mat(m: &Mat) -> Self {
        let is_diag = m.is_square()
            && m.nrows() > 1
            && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0));
        if is_diag {
            MatrixDoc::Diag { diag: m.diagonal().iter().copied().collect() }
        } else {
            MatrixDoc::Full(to_rows(m))
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct DimsDoc {
    n_x: usize,
    n_u: usize,
    n_r: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ObservationDoc {
    #[serde(rename = "Cr")]
    cr: MatrixDoc,
    envelope: EnvelopeModel,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct BoxDoc {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct ConstraintsDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    state_box: Option<BoxDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    input_box: Option<BoxDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    terminal_box: Option<BoxDoc>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rows: Vec<ConstraintRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    terminal_rows: Vec<ConstraintRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    step_rows: Vec<StepRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    obstacles: Vec<Obstacle>,
    #[serde(default, skip_serializing_if = "is_nominal")]
    terminal_tightening: TerminalTightening,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CostsDoc {
    #[serde(rename = "Q_bar")]
    q_bar: MatrixDoc,
    #[serde(rename = "R_bar")]
    r_bar: MatrixDoc,
    #[serde(rename = "P_bar")]
    p_bar: MatrixDoc,
    #[serde(rename = "Q")]
    q: MatrixDoc,
    #[serde(rename = "R")]
    r: MatrixDoc,
    #[serde(rename = "P")]
    p: MatrixDoc,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct NoiseDoc {
    #[serde(rename = "Xi")]
    xi: MatrixDoc,
    #[serde(rename = "E")]
    e: MatrixDoc,
    #[serde(default)]
    sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
enum GoalDoc {
    Point(Vec<f64>),
    Trajectory(Vec<Vec<f64>>),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct SpecDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    dims: DimsDoc,
    horizon: usize,
    dt: f64,
    dynamics: DynamicsModel,
    observation: ObservationDoc,
    #[serde(default)]
    constraints: ConstraintsDoc,
    costs: CostsDoc,
    noise: NoiseDoc,
    x0: Vec<f64>,
    goal: GoalDoc,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    initial_input: Option<Vec<f64>>,
}

fn is_nominal(t: &TerminalTightening) -> bool {
    *t == TerminalTightening::Nominal
}

fn box_len_check(b: &BoxDoc, name: &str, len: usize) -> Result<()> {
    if b.lower.len() != len || b.upper.len() != len {
        return Err(Error::InvalidSpec(vec![format!("ConstraintSet.{name} bounds must have length {len}")]));
    }
    Ok(())
}

impl ProblemSpec {
    /// Parse and validate a JSON problem document.
    pub fn from_json(text: &str) -> Result<ProblemSpec> {
        let doc: SpecDoc = serde_json::from_str(text)?;
        let spec = Self::from_doc(doc)?;
        let issues = validate_spec(&spec);
        if !issues.is_empty() {
            return Err(Error::InvalidSpec(issues));
        }
        Ok(spec)
    }

    fn from_doc(doc: SpecDoc) -> Result<ProblemSpec> {
        let (n, m) = (doc.dims.n_x, doc.dims.n_u);
        let width = n + m;
        let cons = doc.constraints;
        let mut rows = Vec::new();
        if let Some(b) = &cons.state_box {
            box_len_check(b, "state_box", n)?;
            rows.extend(ConstraintSet::box_rows(&b.lower, &b.upper, 0, width));
        }
        if let Some(b) = &cons.input_box {
            box_len_check(b, "input_box", m)?;
            rows.extend(ConstraintSet::box_rows(&b.lower, &b.upper, n, width));
        }
        rows.extend(cons.rows);
        let mut terminal_rows = Vec::new();
        if let Some(b) = &cons.terminal_box {
            box_len_check(b, "terminal_box", n)?;
            terminal_rows.extend(ConstraintSet::box_rows(&b.lower, &b.upper, 0, width));
        }
        terminal_rows.extend(cons.terminal_rows);

        let goal = match doc.goal {
            GoalDoc::Point(g) => Goal::Point(Vector::from_vec(g)),
            GoalDoc::Trajectory(t) => Goal::Trajectory(t.into_iter().map(Vector::from_vec).collect()),
        };
        let mut noise = NoiseSpec::new(doc.noise.xi.to_mat("NoiseSpec.Ξ")?, doc.noise.e.to_mat("NoiseSpec.E")?);
        noise.sigma = doc.noise.sigma;
        Ok(ProblemSpec {
            name: doc.name,
            n_x: n,
            n_u: m,
            n_r: doc.dims.n_r,
            horizon: doc.horizon,
            dt: doc.dt,
            dynamics: doc.dynamics,
            observation: ObservationModel {
                cr: doc.observation.cr.to_mat("ObservationModel.Cr")?,
                envelope: doc.observation.envelope,
            },
            constraints: ConstraintSet {
                rows,
                terminal_rows,
                step_rows: cons.step_rows,
                obstacles: cons.obstacles,
                terminal: cons.terminal_tightening,
            },
            costs: CostWeights {
                q_bar: doc.costs.q_bar.to_mat("CostWeights.Q̄")?,
                r_bar: doc.costs.r_bar.to_mat("CostWeights.R̄")?,
                p_bar: doc.costs.p_bar.to_mat("CostWeights.P̄")?,
                q: doc.costs.q.to_mat("CostWeights.Q")?,
                r: doc.costs.r.to_mat("CostWeights.R")?,
                p: doc.costs.p.to_mat("CostWeights.P")?,
            },
            noise,
            x0: Vector::from_vec(doc.x0),
            goal,
            initial_input: doc.initial_input.map(Vector::from_vec),
        })
    }

    fn to_doc(&self) -> SpecDoc {
        let c = &self.constraints;
        SpecDoc {
            name: self.name.clone(),
            dims: DimsDoc { n_x: self.n_x, n_u: self.n_u, n_r: self.n_r },
            horizon: self.horizon,
            dt: self.dt,
            dynamics: self.dynamics.clone(),
            observation: ObservationDoc {
                cr: MatrixDoc::Full(to_rows(&self.observation.cr)),
                envelope: self.observation.envelope.clone(),
            },
            constraints: ConstraintsDoc {
                rows: c.rows.clone(),
                terminal_rows: c.terminal_rows.clone(),
                step_rows: c.step_rows.clone(),
                obstacles: c.obstacles.clone(),
                terminal_tightening: c.terminal,
                ..Default::default()
            },
            costs: CostsDoc {
                q_bar: MatrixDoc::from_mat(&self.costs.q_bar),
                r_bar: MatrixDoc::from_mat(&self.costs.r_bar),
                p_bar: MatrixDoc::from_mat(&self.costs.p_bar),
                q: MatrixDoc::from_mat(&self.costs.q),
                r: MatrixDoc::from_mat(&self.costs.r),
                p: MatrixDoc::from_mat(&self.costs.p),
            },
            noise: NoiseDoc {
                xi: MatrixDoc::from_mat(&self.noise.xi),
                e: MatrixDoc::from_mat(&self.noise.e),
                sigma: self.noise.sigma,
            },
            x0: self.x0.as_slice().to_vec(),
            goal: match &self.goal {
                Goal::Point(g) => GoalDoc::Point(g.as_slice().to_vec()),
                Goal::Trajectory(t) => GoalDoc::Trajectory(t.iter().map(|g| g.as_slice().to_vec()).collect()),
            },
            initial_input: self.initial_input.as_ref().map(|u| u.as_slice().to_vec()),
        }
    }

    /// Serialize with boxes expanded to explicit rows.
    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_doc()).expect("spec serializes")
    }

    pub fn from_json_value(value: serde_json::Value) -> Result<ProblemSpec> {
        Self::from_json(&value.to_string())
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(&self.to_doc()).expect("spec serializes")
    }
}
