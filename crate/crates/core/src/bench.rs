//! Horizon sweeps comparing the Riccati path against the dense oracle.

use std::time::Instant;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::Mat;
use crate::ltv::StackedLtv;
use crate::oracle::{dense_kkt_oracle, oracle_unknowns, ORACLE_LIMIT};
use crate::riccati::{solve_lqg, LqgWeights};

pub const SWEEP_DIMS: (usize, usize, usize) = (2, 2, 2);
pub const TIMING_RUNS: usize = 5;
pub const NOISE_SCALE: f64 = 0.1;
pub const SPECTRAL_RADIUS: f64 = 0.95;

fn uniform(rng: &mut ChaCha20Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0))
}

pub fn spectral_radius(a: &Mat) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Seeded random instance: `A_k, B_k, C_k` uniform in [−1, 1] with each `A_k` rescaled to
/// spectral radius 0.95, and `E = F = Ξ = 0.1 I`.
pub fn random_ltv(seed: u64, horizon: usize, n_x: usize, n_u: usize, n_r: usize) -> Result<StackedLtv> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut a = Vec::with_capacity(horizon);
    let mut b = Vec::with_capacity(horizon);
    let mut c = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let mut ak = uniform(&mut rng, n_x, n_x);
        let rho = spectral_radius(&ak);
        if rho > 1e-12 {
            ak *= SPECTRAL_RADIUS / rho;
        }
        a.push(ak);
        b.push(uniform(&mut rng, n_x, n_u));
        c.push(uniform(&mut rng, n_r, n_x));
    }
    let e = vec![Mat::identity(n_x, n_x) * NOISE_SCALE; horizon];
    let f = vec![Mat::identity(n_r, n_r) * NOISE_SCALE; horizon];
    StackedLtv::new(a, b, c, e, f, Mat::identity(n_x, n_x) * NOISE_SCALE)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingRecord {
    #[serde(rename = "T")]
    pub t: usize,
    pub n_x: usize,
    pub n_u: usize,
    pub n_r: usize,
    pub riccati_wall_ms: Option<f64>,
    pub oracle_wall_ms: Option<f64>,
    pub cost_riccati: Option<f64>,
    pub cost_oracle: Option<f64>,
    pub cost_rel_err: Option<f64>,
    pub error: Option<String>,
}

pub fn relative_error(a: f64, oracle: f64) -> f64 {
    (a - oracle).abs() / oracle.max(f64::EPSILON)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// One warm-up call, then the median wall time of `runs` calls in milliseconds.
fn timed<T>(runs: usize, mut f: impl FnMut() -> Result<T>) -> Result<(T, f64)> {
    let mut out = f()?;
    let mut times = Vec::with_capacity(runs);
    for _ in 0..runs {
        let t0 = Instant::now();
        out = f()?;
        times.push(t0.elapsed().as_secs_f64() * 1e3);
    }
    Ok((out, median(times)))
}

pub fn sweep_row(seed: u64, horizon: usize) -> ScalingRecord {
    let (n_x, n_u, n_r) = SWEEP_DIMS;
    let mut rec = ScalingRecord {
        t: horizon,
        n_x,
        n_u,
        n_r,
        riccati_wall_ms: None,
        oracle_wall_ms: None,
        cost_riccati: None,
        cost_oracle: None,
        cost_rel_err: None,
        error: None,
    };
    let ltv = match random_ltv(seed, horizon, n_x, n_u, n_r) {
        Ok(l) => l,
        Err(e) => {
            rec.error = Some(e.to_string());
            return rec;
        }
    };
    let w = LqgWeights::identity(n_x, n_u);
    match timed(TIMING_RUNS, || solve_lqg(&ltv, &w, None)) {
        Ok((sol, ms)) => {
            rec.riccati_wall_ms = Some(ms);
            rec.cost_riccati = Some(sol.cost);
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    if oracle_unknowns(&ltv) > ORACLE_LIMIT {
        return rec;
    }
    match timed(TIMING_RUNS, || dense_kkt_oracle(&ltv, &w)) {
        Ok(((_, cost), ms)) => {
            rec.oracle_wall_ms = Some(ms);
            rec.cost_oracle = Some(cost);
            rec.cost_rel_err = rec.cost_riccati.map(|c| relative_error(c, cost));
        }
        Err(e) => {
            rec.error.get_or_insert_with(|| e.to_string());
        }
    }
    rec
}

/// Rows run sequentially so timings do not interfere.
pub fn horizon_sweep(seed: u64, horizons: &[usize]) -> Vec<ScalingRecord> {
    horizons.iter().map(|&t| sweep_row(seed, t)).collect()
}

/// Least-squares slope of `ln y` against `ln x`; `None` with fewer than two usable points.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> =
        points.iter().filter(|(x, y)| *x > 0.0 && *y > 0.0).map(|(x, y)| (x.ln(), y.ln())).collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}

pub fn riccati_slope(records: &[ScalingRecord]) -> Option<f64> {
    loglog_slope(&records.iter().filter_map(|r| Some((r.t as f64, r.riccati_wall_ms?))).collect::<Vec<_>>())
}

pub fn oracle_slope(records: &[ScalingRecord]) -> Option<f64> {
    loglog_slope(&records.iter().filter_map(|r| Some((r.t as f64, r.oracle_wall_ms?))).collect::<Vec<_>>())
}
