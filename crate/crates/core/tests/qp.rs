#![allow(clippy::needless_range_loop)]

use rand::RngExt;
use sls_core::linalg::{Mat, Vector};
use sls_core::qp::*;
use sls_core::Error;

mod common;
use common::{random_pd, rng, uniform};

fn dense_qp(p: &Mat, q: &[f64]) -> QuadraticProgram {
    let mut qp = QuadraticProgram::new(q.len());
    qp.p = Triplets::from_dense(p);
    qp.q = q.to_vec();
    qp
}

#[test]
fn equality_only_matches_kkt_solve() {
    let mut g = rng(3);
    for _ in 0..10 {
        let (n, m) = (8, 3);
        let p = random_pd(&mut g, n);
        let q: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..=1.0)).collect();
        let a = uniform(&mut g, m, n);
        let b: Vec<f64> = (0..m).map(|_| g.random_range(-1.0..=1.0)).collect();
        let mut qp = dense_qp(&p, &q);
        qp.a_eq = Triplets::from_dense(&a);
        qp.b_eq = b.clone();
        let sol = solve_qp(&qp).unwrap();

        let mut kkt = Mat::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p);
        kkt.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&a);
        let mut rhs = Vector::zeros(n + m);
        for i in 0..n {
            rhs[i] = -q[i];
        }
        for i in 0..m {
            rhs[n + i] = b[i];
        }
        let x = kkt.lu().solve(&rhs).unwrap();
        for i in 0..n {
            assert!((sol.x[i] - x[i]).abs() <= 1e-8, "{} vs {}", sol.x[i], x[i]);
        }
    }
}

/// Exhaustive active-set search for `min ½xᵀPx + qᵀx` on `lo ≤ x ≤ hi`.
fn box_oracle(p: &Mat, q: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = q.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for code in 0..3usize.pow(n as u32) {
        // 0 free, 1 at lower, 2 at upper
        let mut state = vec![0; n];
        let mut c = code;
        for s in state.iter_mut() {
            *s = c % 3;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 0).collect();
        let mut x = vec![0.0; n];
        for i in 0..n {
            x[i] = match state[i] {
                1 => lo[i],
                2 => hi[i],
                _ => 0.0,
            };
        }
        if !free.is_empty() {
            let pff = Mat::from_fn(free.len(), free.len(), |a, b| p[(free[a], free[b])]);
            let rhs = Vector::from_fn(free.len(), |a, _| {
                -q[free[a]] - (0..n).filter(|j| state[*j] != 0).map(|j| p[(free[a], j)] * x[j]).sum::<f64>()
            });
            let xf = pff.cholesky().unwrap().solve(&rhs);
            for (a, &i) in free.iter().enumerate() {
                x[i] = xf[a];
            }
        }
        if (0..n).any(|i| x[i] < lo[i] - 1e-12 || x[i] > hi[i] + 1e-12) {
            continue;
        }
        let xv = Vector::from_column_slice(&x);
        let f = 0.5 * xv.dot(&(p * &xv)) + xv.dot(&Vector::from_column_slice(q));
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, x));
        }
    }
    best.unwrap().1
}

#[test]
fn box_qp_matches_active_set_enumeration() {
    let mut g = rng(17);
    for trial in 0..20 {
        let n = 2 + trial % 5;
        let p = random_pd(&mut g, n);
        let q: Vec<f64> = (0..n).map(|_| g.random_range(-3.0..=3.0)).collect();
        let lo: Vec<f64> = (0..n).map(|_| g.random_range(-1.0..=0.0)).collect();
        let hi: Vec<f64> = (0..n).map(|_| g.random_range(0.0..=1.0)).collect();
        let mut qp = dense_qp(&p, &q);
        for i in 0..n {
            qp.g.push_row([(i, 1.0)]);
            qp.h.push(hi[i]);
            qp.g.push_row([(i, -1.0)]);
            qp.h.push(-lo[i]);
        }
        let sol = solve_qp(&qp).unwrap();
        let x = box_oracle(&p, &q, &lo, &hi);
        for i in 0..n {
            assert!((sol.x[i] - x[i]).abs() <= 1e-6, "trial {trial}: {} vs {}", sol.x[i], x[i]);
        }
        let (pr, du, co) = kkt_residuals(&qp, &sol);
        assert!(pr <= 1e-6 && du <= 1e-6 && co <= 1e-6);
    }
}

#[test]
fn large_box_qp_kkt() {
    let mut g = rng(5);
    let n = 50;
    let p = random_pd(&mut g, n);
    let q: Vec<f64> = (0..n).map(|_| g.random_range(-5.0..=5.0)).collect();
    let mut qp = dense_qp(&p, &q);
    for i in 0..n {
        qp.g.push_row([(i, 1.0)]);
        qp.h.push(0.5);
        qp.g.push_row([(i, -1.0)]);
        qp.h.push(0.5);
    }
    let sol = solve_qp(&qp).unwrap();
    let (pr, du, co) = kkt_residuals(&qp, &sol);
    assert!(pr <= 1e-6 && du <= 1e-6 && co <= 1e-6, "{pr} {du} {co}");
}

#[test]
fn deterministic() {
    let mut g = rng(8);
    let p = random_pd(&mut g, 6);
    let mut qp = dense_qp(&p, &[1.0, -1.0, 0.5, 0.0, 2.0, -3.0]);
    qp.g.push_row((0..6).map(|i| (i, 1.0)));
    qp.h.push(0.1);
    let a = solve_qp(&qp).unwrap();
    let b = solve_qp(&qp).unwrap();
    assert_eq!(a.x, b.x);
}

#[test]
fn unbounded_is_reported() {
    let mut qp = QuadraticProgram::new(1);
    qp.q = vec![1.0];
    assert!(matches!(solve_qp(&qp), Err(Error::QpFailed(_))));
}
