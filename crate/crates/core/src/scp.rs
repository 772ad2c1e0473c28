//! Sequential convex programming over the nominal trajectory with Riccati-based
//! response maps and tube tightening.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{serde_vec_list, Mat, Vector};
use crate::ltv::StackedLtv;
use crate::model::{discretize_step, linearize_with, simulate, JacobianMode, LinearizedModel};
use crate::qp::{solve_qp, QpStatus, QuadraticProgram, Triplets};
use crate::riccati::{solve_lqg, LqgWeights};
use crate::sls::{recover_gains, GainSchedule, ResponseMaps};
use crate::spec::{validate_spec, ConstraintRow, ProblemSpec};
use crate::tubes::{
    build_scalings, tighten, tube_radii, TightenedConstraintReport, TightenedEntry, TubeParams, TubeRadii,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Tightened constraints and tube cost inside the loop.
    Full,
    /// Nominal planned without margins, maps and tubes computed once afterwards.
    CertaintyEquivalent,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Mode {
    Raw,
    Full,
}

#[derive(Clone, Debug)]
pub struct ScpOptions {
    /// Cap on accepted nominal updates.
    pub max_iterations: usize,
    pub guess_iterations: usize,
    /// Cap on subproblem solves, counting trust-region retries.
    pub max_qp_solves: usize,
    /// Stop once `‖(Δz, Δv)‖₂` falls below this.
    pub step_tol: f64,
    pub trust_init: f64,
    pub trust_max: f64,
    pub trust_min: f64,
    /// Exact-penalty weight on constraint slacks.
    pub penalty: f64,
    /// Extra tightening on every row inside the QP.
    pub backoff: f64,
    pub feasibility_tol: f64,
    pub tau_sweeps: usize,
    pub jacobian: JacobianMode,
}

impl Default for ScpOptions {
    fn default() -> Self {
        ScpOptions {
            max_iterations: 20,
            guess_iterations: 20,
            max_qp_solves: 100,
            step_tol: 1e-3,
            trust_init: 1.0,
            trust_max: 1.0,
            trust_min: 1e-4,
            penalty: 1e6,
            backoff: 1e-6,
            feasibility_tol: 1e-8,
            tau_sweeps: 5,
            jacobian: JacobianMode::Analytic,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub attempt: usize,
    pub step_norm: f64,
    pub qp_status: String,
    pub max_margin: f64,
    pub merit: f64,
    pub trust: f64,
    pub j_traj: f64,
    pub j_tube: f64,
    pub violation: f64,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub traj: f64,
    pub tube: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisResult {
    pub method: Method,
    #[serde(with = "serde_vec_list")]
    pub z: Vec<Vector>,
    #[serde(with = "serde_vec_list")]
    pub v: Vec<Vector>,
    pub maps: ResponseMaps,
    pub gains: GainSchedule,
    pub tubes: TubeParams,
    pub radii: TubeRadii,
    pub report: TightenedConstraintReport,
    pub cost: CostBreakdown,
    pub log: Vec<IterationLog>,
    pub converged: bool,
    pub iterations: usize,
    /// False when the radius fixed point did not settle within the sweep limit.
    pub tau_converged: bool,
}

impl SynthesisResult {
    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}

struct Tubes {
    ltv: StackedLtv,
    tubes: TubeParams,
    maps: ResponseMaps,
    j_tube: f64,
    tau_converged: bool,
}

struct Evaluation {
    lin: LinearizedModel,
    tube: Option<Tubes>,
    report: TightenedConstraintReport,
    j_traj: f64,
}

impl Evaluation {
    fn j_tube(&self) -> f64 {
        self.tube.as_ref().map_or(0.0, |t| t.j_tube)
    }

    fn merit(&self, penalty: f64) -> f64 {
        self.j_traj + self.j_tube() + penalty * self.report.violation()
    }
}

fn tube_weights(spec: &ProblemSpec) -> LqgWeights {
    LqgWeights { q: spec.costs.q.clone(), r: spec.costs.r.clone(), p: spec.costs.p.clone() }
}

pub fn trajectory_cost(spec: &ProblemSpec, z: &[Vector], v: &[Vector]) -> f64 {
    let t = v.len();
    let c = &spec.costs;
    let mut j = 0.0;
    for k in 0..t {
        let dz = &z[k] - spec.goal.at(k);
        j += dz.dot(&(&c.q_bar * &dz)) + v[k].dot(&(&c.r_bar * &v[k]));
    }
    let dz = &z[t] - spec.goal.at(t);
    j + dz.dot(&(&c.p_bar * &dz))
}

/// Maps, scalings and tube cost at `(z, v)`, with `τ` settled by fixed-point sweeps.
fn solve_tubes(
    spec: &ProblemSpec,
    lin: &LinearizedModel,
    z: &[Vector],
    v: &[Vector],
    opts: &ScpOptions,
) -> Result<Tubes> {
    let t = spec.horizon;
    let weights = tube_weights(spec);
    let mut tau = vec![0.0; t];
    let sweeps = if spec.noise.has_sigma() { opts.tau_sweeps.max(1) } else { 1 };
    let mut last = None;
    let mut settled = !spec.noise.has_sigma();
    for _ in 0..sweeps {
        let tubes = build_scalings(z, v, &tau, spec)?;
        let ltv = StackedLtv::from_linearization(lin, &spec.observation.cr, &tubes)?;
        let sol = solve_lqg(&ltv, &weights, None)?;
        let radii = tube_radii(&sol.maps, &tubes);
        let next: Vec<f64> = radii.max[..t].to_vec();
        let change = next.iter().zip(&tau).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        tau = next;
        last = Some((ltv, tubes, sol, radii));
        if spec.noise.has_sigma() && change <= 1e-9 * (1.0 + tau.iter().copied().fold(0.0, f64::max)) {
            settled = true;
            break;
        }
    }
    let (ltv, mut tubes, sol, radii) = last.expect("at least one sweep");
    tubes.tau = tau;
    tubes.rho = radii.halfwidths[0][..spec.n_x].iter().copied().fold(0.0, f64::max);
    Ok(Tubes { ltv, tubes, maps: sol.maps, j_tube: sol.cost, tau_converged: settled })
}

fn nominal_report(spec: &ProblemSpec, z: &[Vector], v: &[Vector]) -> TightenedConstraintReport {
    let t = v.len();
    let mut entries = Vec::new();
    for (k, zk) in z.iter().enumerate() {
        for a in spec.constraints.rows_at(k, t, zk, spec.n_u) {
            let nominal = a.row.eval(zk, v.get(k));
            entries.push(TightenedEntry {
                step: k,
                kind: a.kind,
                index: a.index,
                nominal,
                margin: 0.0,
                slack: -nominal,
            });
        }
    }
    TightenedConstraintReport { entries }
}

fn evaluate(spec: &ProblemSpec, z: &[Vector], v: &[Vector], mode: Mode, opts: &ScpOptions) -> Result<Evaluation> {
    let lin = linearize_with(&spec.dynamics, z, v, spec.dt, opts.jacobian)?;
    let j_traj = trajectory_cost(spec, z, v);
    match mode {
        Mode::Raw => Ok(Evaluation { lin, tube: None, report: nominal_report(spec, z, v), j_traj }),
        Mode::Full => {
            let tb = solve_tubes(spec, &lin, z, v, opts)?;
            let report = tighten(&tb.maps, &tb.tubes, &spec.constraints, z, v);
            Ok(Evaluation { lin, tube: Some(tb), report, j_traj })
        }
    }
}

struct Layout {
    t: usize,
    n_x: usize,
    n_u: usize,
}

impl Layout {
    fn dz(&self, k: usize, i: usize) -> usize {
        k * self.n_x + i
    }
    fn dv(&self, k: usize, i: usize) -> usize {
        (self.t + 1) * self.n_x + k * self.n_u + i
    }
    fn n_traj(&self) -> usize {
        (self.t + 1) * self.n_x + self.t * self.n_u
    }
}

struct Subproblem {
    qp: QuadraticProgram,
    n_traj: usize,
    /// Penalized slack at `δ = 0`.
    slack0: f64,
}

fn add_sym_block(p: &mut Triplets, i0: usize, m: &Mat) {
    p.add_block(i0, i0, m);
}

fn build_subproblem(
    spec: &ProblemSpec,
    z: &[Vector],
    v: &[Vector],
    ev: &Evaluation,
    trust: f64,
    opts: &ScpOptions,
) -> Result<Subproblem> {
    let (t, n_x, n_u) = (spec.horizon, spec.n_x, spec.n_u);
    let lay = Layout { t, n_x, n_u };
    let c = &spec.costs;

    let rows: Vec<(usize, ConstraintRow, f64)> = (0..=t)
        .flat_map(|k| spec.constraints.rows_at(k, t, &z[k], n_u).into_iter().map(move |a| (k, a)))
        .zip(&ev.report.entries)
        .map(|((k, a), e)| {
            debug_assert!(e.step == k && e.kind == a.kind && e.index == a.index);
            (k, a.row, e.margin)
        })
        .collect();

    let n_traj = lay.n_traj();
    let n = n_traj + rows.len();
    let mut qp = QuadraticProgram::new(n);

    for k in 0..=t {
        let (w, dz) = if k < t { (&c.q_bar, &z[k] - spec.goal.at(k)) } else { (&c.p_bar, &z[t] - spec.goal.at(t)) };
        add_sym_block(&mut qp.p, lay.dz(k, 0), &(w * 2.0));
        let g = (w + w.transpose()) * &dz;
        for i in 0..n_x {
            qp.q[lay.dz(k, i)] += g[i];
        }
    }
    for k in 0..t {
        add_sym_block(&mut qp.p, lay.dv(k, 0), &(&c.r_bar * 2.0));
        let g = (&c.r_bar + c.r_bar.transpose()) * &v[k];
        for i in 0..n_u {
            qp.q[lay.dv(k, i)] += g[i];
        }
    }
    // Gauss-Newton model of the envelope-dependent part of the tube cost.
    if let Some(tb) = &ev.tube {
        for j in 1..t {
            let cj = tb.maps.e_column_weight(j, &c.q, &c.r, &c.p);
            if cj == 0.0 {
                continue;
            }
            let b = spec.observation.envelope.value(&z[j]);
            let g = spec.observation.envelope.gradient(&z[j]);
            add_sym_block(&mut qp.p, lay.dz(j, 0), &(&g * g.transpose() * (2.0 * cj)));
            for i in 0..n_x {
                qp.q[lay.dz(j, i)] += 2.0 * cj * b * g[i];
            }
        }
    }

    // dynamics
    for i in 0..n_x {
        qp.a_eq.push_row([(lay.dz(0, i), 1.0)]);
        qp.b_eq.push(0.0);
    }
    for k in 0..t {
        let defect = discretize_step(&spec.dynamics, &z[k], &v[k], spec.dt)? - &z[k + 1];
        let (a, b) = (&ev.lin.a[k], &ev.lin.b[k]);
        for i in 0..n_x {
            let mut row = vec![(lay.dz(k + 1, i), 1.0)];
            row.extend((0..n_x).map(|j| (lay.dz(k, j), -a[(i, j)])));
            row.extend((0..n_u).map(|j| (lay.dv(k, j), -b[(i, j)])));
            qp.a_eq.push_row(row);
            qp.b_eq.push(defect[i]);
        }
    }

    // elastic constraint rows
    let mut slack0 = 0.0;
    for (r, (k, row, m)) in rows.iter().enumerate() {
        let s = n_traj + r;
        let val = row.eval(&z[*k], v.get(*k)) + m + opts.backoff;
        slack0 += val.max(0.0);
        let mut entries: Vec<(usize, f64)> = (0..n_x).map(|i| (lay.dz(*k, i), row.c[i])).collect();
        if *k < t && row.c.len() == n_x + n_u {
            entries.extend((0..n_u).map(|i| (lay.dv(*k, i), row.c[n_x + i])));
        }
        entries.push((s, -1.0));
        qp.g.push_row(entries);
        qp.h.push(-val);
        qp.g.push_row([(s, -1.0)]);
        qp.h.push(0.0);
        qp.q[s] = opts.penalty;
    }

    // trust region
    for idx in n_x..n_traj {
        qp.g.push_row([(idx, 1.0)]);
        qp.h.push(trust);
        qp.g.push_row([(idx, -1.0)]);
        qp.h.push(trust);
    }
    Ok(Subproblem { qp, n_traj, slack0: opts.penalty * slack0 })
}

/// Infeasibility of the stage or terminal polytope on its own.
fn static_feasibility(spec: &ProblemSpec) -> Result<()> {
    let (n_x, n_u) = (spec.n_x, spec.n_u);
    let groups: [(&str, &[ConstraintRow], usize); 2] =
        [("stage", &spec.constraints.rows, n_x + n_u), ("terminal", &spec.constraints.terminal_rows, n_x)];
    for (name, rows, width) in groups {
        if rows.is_empty() {
            continue;
        }
        let mut qp = QuadraticProgram::new(width);
        for r in rows {
            qp.g.push_row((0..width).map(|i| (i, r.c[i])));
            qp.h.push(-r.b);
        }
        match solve_qp(&qp) {
            Err(Error::QpInfeasible) => {
                return Err(Error::SynthesisInfeasible {
                    iteration: 1,
                    reason: format!("{name} constraint set is empty"),
                })
            }
            _ => continue,
        }
    }
    Ok(())
}

struct Outcome {
    z: Vec<Vector>,
    v: Vec<Vector>,
    ev: Evaluation,
    log: Vec<IterationLog>,
    converged: bool,
    iterations: usize,
}

fn run(
    spec: &ProblemSpec,
    mut z: Vec<Vector>,
    mut v: Vec<Vector>,
    mode: Mode,
    max_iterations: usize,
    opts: &ScpOptions,
) -> Result<Outcome> {
    let mut ev = evaluate(spec, &z, &v, mode, opts)?;
    let mut merit = ev.merit(opts.penalty);
    let mut trust = opts.trust_init;
    let mut log = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut attempt = 0;
    while iterations < max_iterations && attempt < opts.max_qp_solves {
        attempt += 1;
        let it = iterations + 1;
        let sub = build_subproblem(spec, &z, &v, &ev, trust, opts)?;
        let sol = match solve_qp(&sub.qp) {
            Ok(s) => s,
            Err(e @ (Error::QpInfeasible | Error::QpMaxIter | Error::QpFailed(_))) => {
                log.push(IterationLog {
                    iteration: it,
                    attempt,
                    step_norm: 0.0,
                    qp_status: e.to_string(),
                    max_margin: ev.report.max_margin(),
                    merit,
                    trust,
                    j_traj: ev.j_traj,
                    j_tube: ev.j_tube(),
                    violation: ev.report.violation(),
                    accepted: false,
                });
                trust *= 0.5;
                if trust < opts.trust_min {
                    return Err(Error::SynthesisInfeasible { iteration: it, reason: format!("QP failed: {e}") });
                }
                continue;
            }
            Err(e) => return Err(e),
        };
        let step = &sol.x[..sub.n_traj];
        let step_norm = step.iter().map(|x| x * x).sum::<f64>().sqrt();
        let step_inf = step.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let pred = sub.slack0 - sub.qp.objective(&sol.x);
        let lay = Layout { t: spec.horizon, n_x: spec.n_x, n_u: spec.n_u };
        let v_new: Vec<Vector> = (0..spec.horizon)
            .map(|k| &v[k] + Vector::from_iterator(spec.n_u, (0..spec.n_u).map(|i| step[lay.dv(k, i)])))
            .collect();
        let status = match sol.status {
            QpStatus::Solved => "solved",
            QpStatus::AlmostSolved => "almost_solved",
        };

        let candidate = simulate(&spec.dynamics, &spec.x0, &v_new, spec.dt).and_then(|z_new| {
            let e = evaluate(spec, &z_new, &v_new, mode, opts)?;
            Ok((z_new, e))
        });
        let (accepted, ratio) = match &candidate {
            Ok((_, e)) => {
                let m_new = e.merit(opts.penalty);
                let actual = merit - m_new;
                let scale = 1e-12 * merit.abs().max(1.0);
                let ratio = if pred > scale {
                    actual / pred
                } else if actual >= -scale {
                    1.0
                } else {
                    -1.0
                };
                (ratio > 1e-4 || (actual >= 0.0 && pred <= scale), ratio)
            }
            Err(_) => (false, -1.0),
        };
        if accepted {
            iterations = it;
            let (z_new, e) = candidate.unwrap();
            z = z_new;
            v = v_new;
            ev = e;
            merit = ev.merit(opts.penalty);
        }
        log.push(IterationLog {
            iteration: it,
            attempt,
            step_norm,
            qp_status: status.into(),
            max_margin: ev.report.max_margin(),
            merit,
            trust,
            j_traj: ev.j_traj,
            j_tube: ev.j_tube(),
            violation: ev.report.violation(),
            accepted,
        });
        if step_norm <= opts.step_tol {
            iterations = it;
            converged = ev.report.feasible(opts.feasibility_tol);
            break;
        }
        if ratio < 0.25 {
            trust = (trust * 0.5).max(opts.trust_min);
        } else if ratio > 0.75 && step_inf >= 0.99 * trust {
            trust = (trust * 2.0).min(opts.trust_max);
        }
    }
    Ok(Outcome { z, v, ev, log, converged, iterations })
}

fn seed_inputs(spec: &ProblemSpec) -> Vec<Vector> {
    let u0 = spec.initial_input.clone().unwrap_or_else(|| Vector::zeros(spec.n_u));
    vec![u0; spec.horizon]
}

fn check(spec: &ProblemSpec) -> Result<()> {
    let problems = validate_spec(spec);
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvalidSpec(problems))
    }
}

fn guess(spec: &ProblemSpec, opts: &ScpOptions) -> Result<Outcome> {
    let v = seed_inputs(spec);
    let z = simulate(&spec.dynamics, &spec.x0, &v, spec.dt).map_err(|e| Error::InitialGuessFailed(e.to_string()))?;
    run(spec, z, v, Mode::Raw, opts.guess_iterations, opts).map_err(|e| match e {
        Error::SynthesisInfeasible { .. } | Error::IntegrationDiverged | Error::LinearizationFailed { .. } => {
            Error::InitialGuessFailed(e.to_string())
        }
        other => other,
    })
}

/// Nominal from margin-free SCP iterations, dynamically feasible by construction.
pub fn initial_guess(spec: &ProblemSpec) -> Result<(Vec<Vector>, Vec<Vector>)> {
    check(spec)?;
    let out = guess(spec, &ScpOptions::default())?;
    Ok((out.z, out.v))
}

pub fn synthesize(spec: &ProblemSpec) -> Result<SynthesisResult> {
    synthesize_with(spec, Method::Full, &ScpOptions::default())
}

pub fn ce_baseline(spec: &ProblemSpec) -> Result<SynthesisResult> {
    synthesize_with(spec, Method::CertaintyEquivalent, &ScpOptions::default())
}

pub fn synthesize_with(spec: &ProblemSpec, method: Method, opts: &ScpOptions) -> Result<SynthesisResult> {
    check(spec)?;
    static_feasibility(spec)?;
    let g = guess(spec, opts)?;
    let out = match method {
        Method::CertaintyEquivalent => {
            let ev = evaluate(spec, &g.z, &g.v, Mode::Full, opts)?;
            Outcome { ev, ..g }
        }
        Method::Full => {
            let out = run(spec, g.z, g.v, Mode::Full, opts.max_iterations, opts)?;
            if !out.ev.report.feasible(opts.feasibility_tol) {
                return Err(Error::SynthesisInfeasible {
                    iteration: out.iterations,
                    reason: format!("tightened constraints violated by {:.3e}", out.ev.report.violation()),
                });
            }
            out
        }
    };
    let tb = out.ev.tube.expect("tube evaluation");
    let gains = recover_gains(&tb.maps, &tb.ltv)?;
    let radii = tube_radii(&tb.maps, &tb.tubes);
    let cost = CostBreakdown { traj: out.ev.j_traj, tube: tb.j_tube, total: out.ev.j_traj + tb.j_tube };
    Ok(SynthesisResult {
        method,
        z: out.z,
        v: out.v,
        maps: tb.maps,
        gains,
        tubes: tb.tubes,
        radii,
        report: out.ev.report,
        cost,
        log: out.log,
        converged: out.converged,
        iterations: out.iterations,
        tau_converged: tb.tau_converged,
    })
}

/// Time average of the envelope along the nominal, `k = 0..T−1`.
pub fn mean_envelope(spec: &ProblemSpec, z: &[Vector]) -> f64 {
    let t = spec.horizon;
    z[..t].iter().map(|x| spec.observation.envelope.value(x)).sum::<f64>() / t as f64
}
