//! Built-in benchmarks, disturbance sampling and closed-loop rollouts of the true
//! nonlinear system under the synthesized affine policy.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_vec_list, Vector};
use crate::model::discretize_step;
use crate::scp::SynthesisResult;
use crate::sls::Disturbance;
use crate::spec::{ProblemSpec, RowKind};

const LIGHTDARK: &str = include_str!("../specs/lightdark.json");
const CAR: &str = include_str!("../specs/car.json");
const QUADROTOR: &str = include_str!("../specs/quadrotor.json");

pub const BUILTIN_NAMES: [&str; 3] = ["lightdark", "car", "quadrotor"];

/// JSON text of a built-in benchmark; accepts the bare name or `<name>.json`.
pub fn builtin_json(name: &str) -> Option<&'static str> {
    match name.strip_suffix(".json").unwrap_or(name) {
        "lightdark" | "light_dark" | "light-dark" => Some(LIGHTDARK),
        "car" | "parking_lot" => Some(CAR),
        "quadrotor" | "quad" => Some(QUADROTOR),
        _ => None,
    }
}

pub fn builtin_spec(name: &str) -> Result<ProblemSpec> {
    let text =
        builtin_json(name).ok_or_else(|| Error::InvalidSpec(vec![format!("no built-in benchmark named {name}")]))?;
    ProblemSpec::from_json(text)
}

pub fn light_dark() -> ProblemSpec {
    builtin_spec("lightdark").expect("embedded spec is valid")
}

pub fn car() -> ProblemSpec {
    builtin_spec("car").expect("embedded spec is valid")
}

pub fn quadrotor() -> ProblemSpec {
    builtin_spec("quadrotor").expect("embedded spec is valid")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// Entries i.i.d. uniform on `[−1, 1]`.
    Uniform,
    /// Entries i.i.d. uniform on `{−1, +1}`.
    Extreme,
}

impl std::str::FromStr for DisturbanceMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "uniform" => Ok(DisturbanceMode::Uniform),
            "extreme" => Ok(DisturbanceMode::Extreme),
            other => Err(format!("unknown disturbance mode {other:?} (expected uniform or extreme)")),
        }
    }
}

fn draw(rng: &mut ChaCha20Rng, mode: DisturbanceMode, n: usize) -> Vector {
    Vector::from_iterator(
        n,
        (0..n).map(|_| match mode {
            DisturbanceMode::Uniform => rng.random_range(-1.0..=1.0),
            DisturbanceMode::Extreme => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
        }),
    )
}

pub fn sample_with(
    rng: &mut ChaCha20Rng,
    mode: DisturbanceMode,
    n_x: usize,
    n_r: usize,
    horizon: usize,
) -> Disturbance {
    let w = (0..=horizon).map(|_| draw(rng, mode, n_x)).collect();
    let e = (0..horizon).map(|_| draw(rng, mode, n_r)).collect();
    Disturbance { w, e }
}

/// `w̃, w_0..w_{T−1}` and `e_0..e_{T−1}`, deterministic in `seed`.
pub fn sample_disturbance(mode: DisturbanceMode, n_x: usize, n_r: usize, horizon: usize, seed: u64) -> Disturbance {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    sample_with(&mut rng, mode, n_x, n_r, horizon)
}

/// Generator for rollout `index` of a batch seeded with `seed`.
pub fn rollout_rng(seed: u64, index: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub step: usize,
    pub kind: RowKind,
    pub index: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutResult {
    #[serde(with = "serde_vec_list")]
    pub x: Vec<Vector>,
    #[serde(with = "serde_vec_list")]
    pub u: Vec<Vector>,
    /// `y_1..y_T`.
    #[serde(with = "serde_vec_list")]
    pub y: Vec<Vector>,
    /// Per step: state coordinates, then inputs for `k < T`.
    pub contained: Vec<Vec<bool>>,
    pub violations: Vec<Violation>,
    pub terminal_ok: bool,
    /// Largest `|deviation| / halfwidth` over all coordinates and steps.
    pub max_excursion: f64,
    pub diverged: bool,
}

impl RolloutResult {
    pub fn all_contained(&self) -> bool {
        self.contained.iter().all(|c| c.iter().all(|&b| b))
    }

    pub fn violated(&self) -> bool {
        self.diverged || !self.violations.is_empty() || !self.terminal_ok
    }

    pub fn success(&self) -> bool {
        !self.violated()
    }
}

const FLAG_TOL: f64 = 1e-9;

fn excursion(dev: f64, r: f64) -> f64 {
    if dev <= FLAG_TOL {
        0.0
    } else {
        dev / r.max(1e-300)
    }
}

/// Closed-loop rollout; `closed_loop = false` applies the nominal inputs only.
pub fn rollout_with(
    result: &SynthesisResult,
    spec: &ProblemSpec,
    d: &Disturbance,
    closed_loop: bool,
) -> Result<RolloutResult> {
    let t = spec.horizon;
    let (n_x, n_u, n_r) = (spec.n_x, spec.n_u, spec.n_r);
    if result.v.len() != t || d.w.len() != t + 1 || d.e.len() != t {
        return Err(Error::Shape("rollout horizon mismatch".into()));
    }
    if d.w.iter().any(|w| w.len() != n_x) || d.e.iter().any(|e| e.len() != n_r) {
        return Err(Error::Shape("disturbance dimensions".into()));
    }
    let cr = &spec.observation.cr;
    let (z, v) = (&result.z, &result.v);
    let mut x = Vec::with_capacity(t + 1);
    let mut u = Vec::with_capacity(t);
    let mut y: Vec<Vector> = Vec::with_capacity(t);
    let mut dy: Vec<Vector> = Vec::with_capacity(t);
    x.push(&spec.x0 + &spec.noise.xi * &d.w[0]);
    let dx0 = &x[0] - &z[0];
    let mut diverged = false;
    for k in 0..t {
        let mut uk = v[k].clone();
        if closed_loop {
            uk += &result.gains.k0[k] * &dx0;
            for (j, dyj) in dy.iter().enumerate() {
                uk += result.gains.k.get(k, j) * dyj;
            }
        }
        let b = spec.observation.envelope.value(&x[k]);
        let yk = cr * &x[k] + &d.e[k] * b;
        dy.push(&yk - cr * &z[k]);
        y.push(yk);
        let next = match discretize_step(&spec.dynamics, &x[k], &uk, spec.dt) {
            Ok(n) => n + spec.noise.e_at(&x[k]) * &d.w[k + 1],
            Err(_) => {
                diverged = true;
                u.push(uk);
                break;
            }
        };
        u.push(uk);
        if next.iter().any(|v| !v.is_finite()) {
            diverged = true;
            break;
        }
        x.push(next);
    }

    let hw = &result.radii.halfwidths;
    let mut contained = Vec::with_capacity(x.len());
    let mut max_excursion: f64 = 0.0;
    for (k, xk) in x.iter().enumerate() {
        let mut flags = Vec::with_capacity(n_x + n_u);
        for l in 0..n_x {
            let dev = (xk[l] - z[k][l]).abs();
            flags.push(dev <= hw[k][l] + FLAG_TOL);
            max_excursion = max_excursion.max(excursion(dev, hw[k][l]));
        }
        if k < u.len() && k < t {
            for l in 0..n_u {
                let dev = (u[k][l] - v[k][l]).abs();
                flags.push(dev <= hw[k][n_x + l] + FLAG_TOL);
                max_excursion = max_excursion.max(excursion(dev, hw[k][n_x + l]));
            }
        }
        contained.push(flags);
    }
    if diverged {
        contained.push(vec![false]);
    }

    let mut violations = Vec::new();
    for (k, xk) in x.iter().enumerate() {
        let uk = u.get(k).filter(|_| k < t);
        if k < t {
            for (i, r) in spec.constraints.rows.iter().enumerate() {
                let val = r.eval(xk, uk);
                if val > FLAG_TOL {
                    violations.push(Violation { step: k, kind: RowKind::Stage, index: i, value: val });
                }
            }
        }
        for (i, s) in spec.constraints.step_rows.iter().enumerate().filter(|(_, s)| s.step == k) {
            let val = s.row.eval(xk, uk);
            if val > FLAG_TOL {
                violations.push(Violation { step: k, kind: RowKind::Step, index: i, value: val });
            }
        }
        for (i, o) in spec.constraints.obstacles.iter().enumerate() {
            let val = o.radius - o.distance(xk);
            if val > FLAG_TOL {
                violations.push(Violation { step: k, kind: RowKind::Obstacle, index: i, value: val });
            }
        }
    }
    let terminal_ok = !diverged
        && x.len() == t + 1
        && spec.constraints.terminal_rows.iter().all(|r| {
            let mut row = r.clone();
            row.c.rows_mut(n_x, row.c.len() - n_x).fill(0.0);
            row.eval(&x[t], None) <= FLAG_TOL
        });
    Ok(RolloutResult { x, u, y, contained, violations, terminal_ok, max_excursion, diverged })
}

pub fn rollout(result: &SynthesisResult, spec: &ProblemSpec, d: &Disturbance) -> Result<RolloutResult> {
    rollout_with(result, spec, d, true)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloReport {
    pub n: usize,
    pub mode: DisturbanceMode,
    pub seed: u64,
    pub closed_loop: bool,
    /// Fraction reaching the terminal set without any raw violation.
    pub success_rate: f64,
    /// Fraction with at least one raw violation (terminal misses included).
    pub violation_rate: f64,
    /// Fraction of rollouts that never leave the tubes.
    pub containment_rate: f64,
    pub max_normalized_excursion: f64,
    pub diverged: usize,
    pub terminal_misses: usize,
}

/// `n` rollouts with per-rollout streams of one seeded generator.
pub fn monte_carlo_runs(
    result: &SynthesisResult,
    spec: &ProblemSpec,
    n: usize,
    mode: DisturbanceMode,
    seed: u64,
    closed_loop: bool,
) -> Result<(MonteCarloReport, Vec<RolloutResult>)> {
    if n == 0 {
        return Err(Error::InvalidSpec(vec!["at least one rollout required".into()]));
    }
    let runs: Vec<RolloutResult> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = rollout_rng(seed, i as u64);
            let d = sample_with(&mut rng, mode, spec.n_x, spec.n_r, spec.horizon);
            rollout_with(result, spec, &d, closed_loop)
        })
        .collect::<Result<_>>()?;
    let frac = |f: &dyn Fn(&RolloutResult) -> bool| runs.iter().filter(|r| f(r)).count() as f64 / n as f64;
    let report = MonteCarloReport {
        n,
        mode,
        seed,
        closed_loop,
        success_rate: frac(&|r| r.success()),
        violation_rate: frac(&|r| r.violated()),
        containment_rate: frac(&|r| r.all_contained()),
        max_normalized_excursion: runs.iter().map(|r| r.max_excursion).fold(0.0, f64::max),
        diverged: runs.iter().filter(|r| r.diverged).count(),
        terminal_misses: runs.iter().filter(|r| !r.terminal_ok).count(),
    };
    Ok((report, runs))
}

pub fn monte_carlo(
    result: &SynthesisResult,
    spec: &ProblemSpec,
    n: usize,
    mode: DisturbanceMode,
    seed: u64,
) -> Result<MonteCarloReport> {
    monte_carlo_runs(result, spec, n, mode, seed, true).map(|(r, _)| r)
}
