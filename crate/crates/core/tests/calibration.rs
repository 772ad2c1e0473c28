use sls_core::calibration::*;
use sls_core::envs::{car, light_dark};
use sls_core::linalg::{Mat, Vector};
use sls_core::model::DynamicsModel;
use sls_core::Error;

mod common;

fn generator() -> SyntheticResiduals {
    SyntheticResiduals { lo: vec![-1.0, -1.0], hi: vec![5.0, 3.0], coord: 0, center: 2.0, scale: 0.02, noise: 0.005 }
}

fn constant_data(r: f64, n: usize) -> ResidualDataset {
    let states = (0..n).map(|i| vec![i as f64 * 0.1, 1.0]).collect();
    ResidualDataset::new(states, vec![r; n]).unwrap()
}

#[test]
fn constant_residuals_give_constant_envelope() {
    let env = fit_envelope(&constant_data(0.05, 40), &MonomialBasis::new(vec![0], 0), DEFAULT_GAMMA, 1e6).unwrap();
    assert!((env.beta[0] - 0.05).abs() < 1e-3);
    let env = fit_envelope(&constant_data(0.0, 40), &MonomialBasis::new(vec![0], 0), DEFAULT_GAMMA, 1e6).unwrap();
    assert!(env.beta[0].abs() < 1e-3);
}

#[test]
fn hinge_feasible_at_optimum() {
    let data = generator().sample(200, 3);
    let env = fit_envelope(&data, &MonomialBasis::new(vec![0, 1], 2), DEFAULT_GAMMA, DEFAULT_MU).unwrap();
    for i in 0..data.len() {
        assert!(env.slacks[i] >= 0.0);
        assert!(env.value(&data.state(i)) + env.slacks[i] >= data.residuals[i] - 1e-7);
    }
}

#[test]
fn quadratic_truth_is_dominated() {
    let g = generator();
    let env = fit_envelope(&g.sample(300, 8), &MonomialBasis::new(vec![0], 2), DEFAULT_GAMMA, DEFAULT_MU).unwrap();
    let mut hit = 0;
    let n = 200;
    for i in 0..n {
        let x = Vector::from_vec(vec![-1.0 + 6.0 * i as f64 / (n - 1) as f64, 0.0]);
        if env.value(&x) >= g.truth(&x) {
            hit += 1;
        }
    }
    assert!(hit as f64 / n as f64 >= 0.95);
}

#[test]
fn coverage_trivial_bounds() {
    let data = generator().sample(100, 1);
    let top = data.residuals.iter().copied().fold(0.0, f64::max);
    assert_eq!(coverage(|_| top + 1.0, &data).unwrap(), 1.0);
    let positive = ResidualDataset::new(vec![vec![0.0]; 3], vec![0.1, 0.2, 0.3]).unwrap();
    assert_eq!(coverage(|_| 0.0, &positive).unwrap(), 0.0);
    let empty = ResidualDataset::new(vec![], vec![]).unwrap();
    assert!(coverage(|_| 0.0, &empty).is_err());
}

#[test]
fn coverage_grows_with_calibration_size() {
    let g = generator();
    let held = g.sample(2000, 999);
    let basis = MonomialBasis::new(vec![0, 1], 2);
    let covs: Vec<f64> = [50usize, 100, 250, 500]
        .iter()
        .map(|&n| {
            let env = fit_envelope(&g.sample(n, 100 + n as u64), &basis, DEFAULT_GAMMA, DEFAULT_MU).unwrap();
            coverage(|x| env.value(x), &held).unwrap()
        })
        .collect();
    assert!(covs.windows(2).all(|w| w[1] >= w[0]), "{covs:?}");
    assert!(covs[3] >= 0.95);
}

#[test]
fn training_coverage_monotone_in_mu() {
    let data = generator().sample(150, 4);
    let basis = MonomialBasis::new(vec![0], 2);
    let mut last = 0.0;
    for mu in [0.01, 0.1, 1.0, 10.0, 100.0, 1000.0] {
        let env = fit_envelope(&data, &basis, DEFAULT_GAMMA, mu).unwrap();
        let c = coverage(|x| env.value(x) + 1e-9, &data).unwrap();
        assert!(c >= last, "mu {mu}: {c} < {last}");
        last = c;
    }
}

#[test]
fn unbounded_fit_is_reported() {
    let data = constant_data(0.1, 10);
    let r = fit_envelope(&data, &MonomialBasis::new(vec![0], 1), 0.0, 0.0);
    assert!(matches!(r, Err(Error::FitUnbounded)));
}

#[test]
fn envelope_model_matches_fit() {
    let data = generator().sample(120, 6);
    let env = fit_envelope(&data, &MonomialBasis::new(vec![0, 1], 3), DEFAULT_GAMMA, DEFAULT_MU).unwrap();
    let model = env.to_model();
    let x = Vector::from_vec(vec![1.3, -0.4]);
    assert!((model.value(&x) - env.value(&x)).abs() < 1e-12);
}

#[test]
fn linear_observability_rows() {
    let mut g = common::rng(2);
    let a = common::uniform(&mut g, 3, 3) * 0.5;
    let b = common::uniform(&mut g, 3, 1);
    let cr = common::uniform(&mut g, 1, 3);
    let model = DynamicsModel::Linear { a: a.clone(), b };
    let dt = 0.1;
    let u = vec![Vector::from_element(1, 0.3); 3];
    let (_, jac) = observability_matrix(&model, &cr, &Vector::zeros(3), &u, dt).unwrap();
    let (_, ad, _) = sls_core::model::step_with_jacobian(&model, &Vector::zeros(3), &u[0], dt).unwrap();
    let mut p = ad.clone();
    for i in 0..3 {
        assert!((jac.rows(i, 1) - &cr * &p).amax() < 1e-12);
        p = &ad * p;
    }
    assert!(observability_metric(&model, &cr, &Vector::zeros(3), &u, dt).unwrap() > 0.0);
    assert_eq!(observability_metric(&model, &Mat::zeros(1, 3), &Vector::zeros(3), &u, dt).unwrap(), 0.0);
}

#[test]
fn light_dark_one_step_metric() {
    let spec = light_dark();
    let u = vec![Vector::zeros(2)];
    let (_, jac) = observability_matrix(&spec.dynamics, &spec.observation.cr, &spec.x0, &u, spec.dt).unwrap();
    assert!((jac - Mat::identity(2, 2)).amax() < 1e-15);
    let s = observability_metric(&spec.dynamics, &spec.observation.cr, &spec.x0, &u, spec.dt).unwrap();
    assert!((s - 1.0).abs() < 1e-12);
}

#[test]
fn car_jacobian_matches_differences_and_rank() {
    let spec = car();
    let x = Vector::from_vec(vec![-0.7, 0.4, 0.9, 0.8]);
    let u = vec![Vector::from_vec(vec![0.2, 0.1]); 3];
    let cr = &spec.observation.cr;
    let (_, jac) = observability_matrix(&spec.dynamics, cr, &x, &u, spec.dt).unwrap();
    for i in 0..4 {
        let h = 1e-6;
        let (mut xp, mut xm) = (x.clone(), x.clone());
        xp[i] += h;
        xm[i] -= h;
        let fp = observability_matrix(&spec.dynamics, cr, &xp, &u, spec.dt).unwrap().0;
        let fm = observability_matrix(&spec.dynamics, cr, &xm, &u, spec.dt).unwrap().0;
        assert!(((fp - fm) / (2.0 * h) - jac.column(i)).amax() < 1e-4);
    }
    assert_eq!(observability_metric(&spec.dynamics, cr, &x, &u[..1], spec.dt).unwrap(), 0.0);
    assert!(observability_metric(&spec.dynamics, cr, &x, &u[..2], spec.dt).unwrap() > 0.0);
}

#[test]
fn metric_scales_with_output_map() {
    let spec = car();
    let x = Vector::from_vec(vec![0.1, -0.3, 0.4, 1.1]);
    let u = vec![Vector::from_vec(vec![0.0, 0.5]); 3];
    let cr = &spec.observation.cr;
    let s = observability_metric(&spec.dynamics, cr, &x, &u, spec.dt).unwrap();
    let s3 = observability_metric(&spec.dynamics, &(cr * 3.0), &x, &u, spec.dt).unwrap();
    assert!((s3 - 3.0 * s).abs() <= 1e-10 * s3.max(1.0));
}

#[test]
fn loss_trades_matching_against_metric() {
    let spec = light_dark();
    let u = vec![Vector::zeros(2)];
    let y = Vector::from_vec(vec![3.0, 6.0]);
    let l0 = observability_loss(&spec.dynamics, &spec.observation.cr, &y, &spec.x0, &u, spec.dt, 0.0).unwrap();
    let l1 = observability_loss(&spec.dynamics, &spec.observation.cr, &y, &spec.x0, &u, spec.dt, 2.0).unwrap();
    assert!((l0 - 5.0).abs() < 1e-12);
    assert!((l0 - l1 - 2.0).abs() < 1e-12);
}

#[test]
fn csv_round_trip() {
    let text = "px,py,r\n0.5,1.0,0.01\n-1.0,2.0,0.2\n";
    let d = ResidualDataset::from_csv(text).unwrap();
    assert_eq!(d.len(), 2);
    assert_eq!(d.state(1), Vector::from_vec(vec![-1.0, 2.0]));
    assert!(ResidualDataset::from_csv("px,r\n0.1,-0.5\n").is_err());
}
