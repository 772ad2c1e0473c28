//! One PASS/FAIL line per acceptance criterion; exits nonzero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::RngExt;
use sls_core::bench::{horizon_sweep, oracle_slope, relative_error, riccati_slope};
use sls_core::calibration::{coverage, fit_envelope, MonomialBasis, SyntheticResiduals, DEFAULT_GAMMA, DEFAULT_MU};
use sls_core::envs::{builtin_spec, monte_carlo, DisturbanceMode};
use sls_core::linalg::Vector;
use sls_core::oracle::dense_kkt_oracle;
use sls_core::riccati::{backward_control, backward_kalman, solve_lqg};
use sls_core::scp::{ce_baseline, mean_envelope, synthesize};
use sls_core::sls::{apply_response, check_identities, recover_gains, simulate_closed_loop_ltv};
use sls_core::tubes::{margin, vertex_oracle, TubeParams, VERTEX_LIMIT};

mod common;
use common::{max_diff, random_disturbance, random_ltv, random_weights, rng, small_instance};

type Outcome = Result<String, String>;
type Criterion = (&'static str, u64, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn oracle_equivalence() -> Outcome {
    let (mut worst_cost, mut worst_id) = (0.0f64, 0.0f64);
    for seed in 0..20 {
        let (ltv, w) = small_instance(seed);
        let sol = solve_lqg(&ltv, &w, None).map_err(|e| e.to_string())?;
        let (_, oc) = dense_kkt_oracle(&ltv, &w).map_err(|e| e.to_string())?;
        worst_cost = worst_cost.max(relative_error(sol.cost, oc));
        worst_id = worst_id.max(check_identities(&sol.maps, &ltv).max());
    }
    ensure(worst_cost <= 1e-6 && worst_id <= 1e-8, || format!("cost rel {worst_cost:.2e}, identity {worst_id:.2e}"))?;
    Ok(format!("20 instances, max cost rel err {worst_cost:.2e}, max identity residual {worst_id:.2e}"))
}

fn closed_loop_equivalence() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let (ltv, w) = small_instance(seed);
        let maps = solve_lqg(&ltv, &w, None).map_err(|e| e.to_string())?.maps;
        let gains = recover_gains(&maps, &ltv).map_err(|e| e.to_string())?;
        let mut g = rng(10_000 + seed);
        for _ in 0..100 {
            let d = random_disturbance(&mut g, &ltv);
            let (x1, u1) = apply_response(&maps, &ltv, &d).map_err(|e| e.to_string())?;
            let (x2, u2) = simulate_closed_loop_ltv(&ltv, &gains, &d).map_err(|e| e.to_string())?;
            worst = worst.max(max_diff(&x1, &x2)).max(max_diff(&u1, &u2));
        }
    }
    ensure(worst <= 1e-8, || format!("max deviation {worst:.2e}"))?;
    Ok(format!("20 instances x 100 realizations, max deviation {worst:.2e}"))
}

fn support_function_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let mut checked = 0;
    let shapes = [(1, 1, 1, 1), (2, 1, 1, 1), (3, 2, 1, 2), (2, 3, 2, 2), (4, 2, 1, 1), (1, 4, 2, 3), (3, 1, 2, 1)];
    for (seed, &(t, n_x, n_u, n_r)) in shapes.iter().cycle().take(21).enumerate() {
        let mut g = rng(2_000 + seed as u64);
        let ltv = random_ltv(&mut g, t, n_x, n_u, n_r);
        assert!((t + 1) * n_x + t * n_r <= VERTEX_LIMIT);
        let w = random_weights(&mut g, n_x, n_u);
        let maps = solve_lqg(&ltv, &w, None).map_err(|e| e.to_string())?.maps;
        let mut sigma = vec![ltv.xi.clone()];
        sigma.extend(ltv.e.iter().cloned());
        let tubes = TubeParams { sigma, upsilon: ltv.f.clone(), tau: vec![0.0; t], rho: 0.0 };
        for k in 0..=t {
            let width = if k < t { n_x + n_u } else { n_x };
            let mut dirs: Vec<Vector> = (0..width)
                .map(|l| {
                    let mut c = Vector::zeros(n_x + n_u);
                    c[l] = 1.0;
                    c
                })
                .collect();
            for _ in 0..3 {
                let mut c = Vector::from_fn(n_x + n_u, |_, _| g.random_range(-1.0..=1.0));
                c.rows_mut(width, n_x + n_u - width).fill(0.0);
                dirs.push(c);
            }
            for c in &dirs {
                let m = margin(&maps, &tubes, c, k);
                let o = vertex_oracle(&maps, &tubes, c, k).map_err(|e| e.to_string())?;
                worst = worst.max((m - o).abs());
                checked += 1;
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max gap {worst:.2e}"))?;
    Ok(format!("{checked} margins vs vertex enumeration, max gap {worst:.2e}"))
}

fn light_dark_end_to_end() -> Outcome {
    let spec = builtin_spec("lightdark").map_err(|e| e.to_string())?;
    let r = synthesize(&spec).map_err(|e| e.to_string())?;
    ensure(r.converged && r.iterations <= 20, || format!("converged {} in {} iterations", r.converged, r.iterations))?;
    let rep = monte_carlo(&r, &spec, 50, DisturbanceMode::Uniform, 7).map_err(|e| e.to_string())?;
    ensure(rep.success_rate == 1.0 && rep.violation_rate == 0.0 && rep.containment_rate == 1.0, || format!("{rep:?}"))?;
    Ok(format!(
        "{} iterations, SR {:.0}%, CVR {:.0}%, containment {:.0}%",
        r.iterations,
        100.0 * rep.success_rate,
        100.0 * rep.violation_rate,
        100.0 * rep.containment_rate
    ))
}

fn information_gathering() -> Outcome {
    let spec = builtin_spec("lightdark").map_err(|e| e.to_string())?;
    let full = synthesize(&spec).map_err(|e| e.to_string())?;
    let ce = ce_baseline(&spec).map_err(|e| e.to_string())?;
    let t = spec.horizon;
    let (hf, hc) = (&full.radii.halfwidths[t], &ce.radii.halfwidths[t]);
    let (bf, bc) = (mean_envelope(&spec, &full.z), mean_envelope(&spec, &ce.z));
    ensure(hf.iter().zip(hc).all(|(a, b)| a < b), || format!("terminal half-widths full {hf:?} vs CE {hc:?}"))?;
    ensure(bf < bc, || format!("mean envelope full {bf} vs CE {bc}"))?;
    Ok(format!("terminal half-widths full {:.4?} < CE {:.4?}; mean b {bf:.4} < {bc:.4}", hf, hc))
}

fn car_and_quadrotor() -> Outcome {
    let mut parts = Vec::new();
    for name in ["car", "quadrotor"] {
        let spec = builtin_spec(name).map_err(|e| e.to_string())?;
        let r = synthesize(&spec).map_err(|e| format!("{name}: {e}"))?;
        ensure(r.report.min_slack() >= -1e-8, || format!("{name}: tightened slack {:.2e}", r.report.min_slack()))?;
        let rep = monte_carlo(&r, &spec, 50, DisturbanceMode::Uniform, 7).map_err(|e| e.to_string())?;
        ensure(rep.containment_rate == 1.0 && rep.violation_rate == 0.0, || format!("{name}: {rep:?}"))?;
        parts.push(format!(
            "{name}: {} iterations, containment {:.0}%, CVR {:.0}%, SR {:.0}%",
            r.iterations,
            100.0 * rep.containment_rate,
            100.0 * rep.violation_rate,
            100.0 * rep.success_rate
        ));
    }
    Ok(parts.join("; "))
}

fn horizon_scaling() -> Outcome {
    let rows = horizon_sweep(1, &[10, 20, 40, 80]);
    if let Some(e) = rows.iter().find_map(|r| r.error.clone()) {
        return Err(e);
    }
    let rs = riccati_slope(&rows).ok_or("no Riccati timings")?;
    let os = oracle_slope(&rows).ok_or("fewer than two oracle timings")?;
    let worst = rows.iter().filter_map(|r| r.cost_rel_err).fold(0.0, f64::max);
    ensure(rs <= 2.3 && os >= rs + 0.5 && worst <= 1e-6, || format!("slopes {rs:.2}/{os:.2}, cost err {worst:.2e}"))?;
    Ok(format!("Riccati slope {rs:.2}, oracle slope {os:.2}, max cost rel err {worst:.2e}"))
}

fn calibration_trend() -> Outcome {
    let g = SyntheticResiduals {
        lo: vec![-1.0, -1.0],
        hi: vec![5.0, 3.0],
        coord: 0,
        center: 2.0,
        scale: 0.02,
        noise: 0.005,
    };
    let held = g.sample(2000, 999);
    let basis = MonomialBasis::new(vec![0, 1], 2);
    let mut covs = Vec::new();
    for n in [50usize, 100, 250, 500] {
        let env =
            fit_envelope(&g.sample(n, 100 + n as u64), &basis, DEFAULT_GAMMA, DEFAULT_MU).map_err(|e| e.to_string())?;
        covs.push(coverage(|x| env.value(x), &held).map_err(|e| e.to_string())?);
    }
    ensure(covs.windows(2).all(|w| w[1] >= w[0]) && covs[3] >= 0.95, || format!("coverage {covs:?}"))?;
    Ok(format!("held-out coverage at 50/100/250/500 points: {covs:.3?}"))
}

fn separation() -> Outcome {
    for seed in 0..10 {
        let mut g = rng(3_000 + seed);
        let n_x = g.random_range(2..=4);
        let ltv = random_ltv(&mut g, 6, n_x, 2, 2);
        let w = random_weights(&mut g, n_x, 2);
        let ctrl = backward_control(&ltv, &w, None).map_err(|e| e.to_string())?;
        let kal = backward_kalman(&ltv).map_err(|e| e.to_string())?;
        let mut obs = ltv.clone();
        obs.c = obs.c.iter().map(|c| c + common::uniform(&mut g, 2, n_x)).collect();
        obs.f = obs.f.iter().map(|f| f * g.random_range(0.5..=2.0)).collect();
        obs.xi *= g.random_range(0.5..=2.0);
        ensure(backward_control(&obs, &w, None).map_err(|e| e.to_string())? == ctrl, || {
            format!("control changed, seed {seed}")
        })?;
        ensure(backward_kalman(&ltv).map_err(|e| e.to_string())? == kal, || format!("Kalman changed, seed {seed}"))?;
    }
    Ok("10 instances, recursions bit-identical under the complementary perturbations".into())
}

fn main() -> ExitCode {
    let criteria: [Criterion; 9] = [
        ("Riccati cost equals dense KKT oracle", 30, oracle_equivalence),
        ("response maps equal closed-loop simulation", 10, closed_loop_equivalence),
        ("margins equal vertex enumeration", 60, support_function_exactness),
        ("light-dark end to end", 120, light_dark_end_to_end),
        ("information gathering vs certainty equivalence", 120, information_gathering),
        ("car and quadrotor containment", 600, car_and_quadrotor),
        ("horizon scaling", 300, horizon_scaling),
        ("calibration coverage trend", 30, calibration_trend),
        ("separation of control and estimation", 10, separation),
    ];
    let mut failed = 0;
    for (i, (name, budget, f)) in criteria.iter().enumerate() {
        let t0 = Instant::now();
        let out = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let el = t0.elapsed();
        let out = match out {
            Ok(msg) if el > Duration::from_secs(*budget) => Err(format!("{msg} (took {el:.1?}, budget {budget}s)")),
            other => other,
        };
        match out {
            Ok(msg) => println!("PASS {} {name}: {msg} [{el:.2?}]", i + 1),
            Err(msg) => {
                failed += 1;
                println!("FAIL {} {name}: {msg} [{el:.2?}]", i + 1);
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
