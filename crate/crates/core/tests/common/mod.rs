#![allow(dead_code)]

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sls_core::bench::spectral_radius;
use sls_core::linalg::{Mat, Vector};
use sls_core::ltv::StackedLtv;
use sls_core::riccati::LqgWeights;
use sls_core::sls::Disturbance;

pub fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha20Rng, r: usize, c: usize) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-1.0..=1.0))
}

pub fn random_pd(rng: &mut ChaCha20Rng, n: usize) -> Mat {
    let g = uniform(rng, n, n);
    &g * g.transpose() + Mat::identity(n, n) * 0.1
}

pub fn random_diag(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Mat {
    Mat::from_diagonal(&Vector::from_fn(n, |_, _| rng.random_range(lo..=hi)))
}

/// Random LTV with spectral radii in [0.5, 1.5] (stable and unstable mixed).
pub fn random_ltv(rng: &mut ChaCha20Rng, t: usize, n_x: usize, n_u: usize, n_r: usize) -> StackedLtv {
    let mut a = Vec::new();
    let (mut b, mut c, mut e, mut f) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let target = rng.random_range(0.5..=1.5);
    for _ in 0..t {
        let mut ak = uniform(rng, n_x, n_x);
        let rho = spectral_radius(&ak);
        if rho > 1e-9 {
            ak *= target / rho;
        }
        a.push(ak);
        b.push(uniform(rng, n_x, n_u));
        c.push(uniform(rng, n_r, n_x));
        e.push(random_diag(rng, n_x, 0.05, 0.3));
        f.push(random_diag(rng, n_r, 0.05, 0.3));
    }
    let xi = random_diag(rng, n_x, 0.05, 0.3);
    StackedLtv::new(a, b, c, e, f, xi).unwrap()
}

pub fn random_weights(rng: &mut ChaCha20Rng, n_x: usize, n_u: usize) -> LqgWeights {
    LqgWeights { q: random_pd(rng, n_x), r: random_pd(rng, n_u), p: random_pd(rng, n_x) }
}

/// Dimensions within `n_x ≤ 4, n_u ≤ 2, n_r ≤ 3, T ≤ 8`.
pub fn small_instance(seed: u64) -> (StackedLtv, LqgWeights) {
    let mut g = rng(seed);
    let n_x = g.random_range(1..=4);
    let n_u = g.random_range(1..=2);
    let n_r = g.random_range(1..=3);
    let t = g.random_range(1..=8);
    let ltv = random_ltv(&mut g, t, n_x, n_u, n_r);
    let w = random_weights(&mut g, n_x, n_u);
    (ltv, w)
}

pub fn random_disturbance(rng: &mut ChaCha20Rng, ltv: &StackedLtv) -> Disturbance {
    Disturbance {
        w: (0..=ltv.horizon).map(|_| Vector::from_fn(ltv.n_x, |_, _| rng.random_range(-1.0..=1.0))).collect(),
        e: (0..ltv.horizon).map(|_| Vector::from_fn(ltv.n_r, |_, _| rng.random_range(-1.0..=1.0))).collect(),
    }
}

pub fn max_diff(a: &[Vector], b: &[Vector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).amax()).fold(0.0, f64::max)
}
