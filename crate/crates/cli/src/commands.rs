use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde_json::{json, Value};
use sls_core::bench::{horizon_sweep, oracle_slope, riccati_slope};
use sls_core::calibration::{coverage, fit_envelope, MonomialBasis, ResidualDataset};
use sls_core::envs::{builtin_json, monte_carlo_runs, DisturbanceMode};
use sls_core::scp::{synthesize_with, Method, ScpOptions, SynthesisResult};
use sls_core::spec::ProblemSpec;

use crate::output::{fmt_f64, sha256_hex, timestamp, Csv, OutputSet, RunManifest};
use crate::{Cli, CliError, Command};

const RNG_NAME: &str = "ChaCha20 (rand_chacha), one stream per rollout";

fn read_file(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::User(format!("cannot read {}: {e}", path.display())))
}

/// A spec file path, falling back to the built-in benchmarks by name.
pub fn load_spec(arg: &str) -> Result<(ProblemSpec, String), CliError> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        read_file(path)?
    } else if let Some(t) = builtin_json(arg) {
        t.to_string()
    } else {
        return Err(CliError::User(format!("spec file not found: {arg}")));
    };
    let spec = ProblemSpec::from_json(&text).map_err(|e| CliError::User(format!("{arg}: {e}")))?;
    let hash = sha256_hex(spec.to_json_pretty().as_bytes());
    Ok((spec, hash))
}

pub fn load_result(path: &Path) -> Result<(ProblemSpec, SynthesisResult), CliError> {
    let text = read_file(path)?;
    let bad = |m: String| CliError::User(format!("{}: {m}", path.display()));
    let mut v: Value = serde_json::from_str(&text).map_err(|e| bad(e.to_string()))?;
    let spec = v.get_mut("spec").map(Value::take).ok_or_else(|| bad("missing \"spec\"".into()))?;
    let result = v.get_mut("result").map(Value::take).ok_or_else(|| bad("missing \"result\"".into()))?;
    let spec = ProblemSpec::from_json_value(spec).map_err(|e| bad(e.to_string()))?;
    let result: SynthesisResult = serde_json::from_value(result).map_err(|e| bad(e.to_string()))?;
    if result.z.len() != spec.horizon + 1 || result.z.first().is_none_or(|z| z.len() != spec.n_x) {
        return Err(bad("result does not match its spec".into()));
    }
    Ok((spec, result))
}

fn manifest(cli: &Cli, command: &str, spec_sha256: Option<String>, started: u64) -> RunManifest {
    RunManifest {
        tool: "sls-synth",
        version: env!("CARGO_PKG_VERSION"),
        command: command.into(),
        spec_sha256,
        seed: cli.seed,
        rng: RNG_NAME,
        started_unix: started,
        finished_unix: started,
        files: Vec::new(),
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let started = timestamp();
    match &cli.command {
        Command::Synthesize { spec, out, certainty_equivalent } => {
            let (spec, hash) = load_spec(spec)?;
            let method = if *certainty_equivalent { Method::CertaintyEquivalent } else { Method::Full };
            let result = synthesize_with(&spec, method, &ScpOptions::default())?;
            if !result.converged {
                eprintln!("warning: stopped after {} iterations without meeting the step tolerance", result.iterations);
            }
            let mut files = OutputSet::create(out)?;
            files.write_json("result.json", &json!({ "spec": spec.to_json_value(), "result": result }))?;
            files.write("tubes.csv", &tubes_csv(&spec, &result))?;
            files.write("iterations.csv", &iterations_csv(&result))?;
            files.finish("manifest.json", manifest(cli, "synthesize", Some(hash), started))?;
            println!(
                "synthesized in {} iterations (converged: {}), cost {}",
                result.iterations, result.converged, result.cost.total
            );
        }
        Command::Rollout { result, n, mode, open_loop, out } => {
            let mode: DisturbanceMode = mode.parse().map_err(CliError::User)?;
            if *n == 0 {
                return Err(CliError::User("--n must be positive".into()));
            }
            let (spec, res) = load_result(result)?;
            let hash = sha256_hex(spec.to_json_pretty().as_bytes());
            let (report, runs) = monte_carlo_runs(&res, &spec, *n, mode, cli.seed, !open_loop)?;
            let mut csv = Csv::new(&["rollout_id", "k", "state_index", "value", "tube_lo", "tube_hi"]);
            for (i, r) in runs.iter().enumerate() {
                for (k, x) in r.x.iter().enumerate() {
                    for j in 0..spec.n_x {
                        let (z, h) = (res.z[k][j], res.radii.halfwidths[k][j]);
                        csv.row(&[
                            i.to_string(),
                            k.to_string(),
                            j.to_string(),
                            fmt_f64(x[j]),
                            fmt_f64(z - h),
                            fmt_f64(z + h),
                        ]);
                    }
                }
            }
            let mut files = OutputSet::create(out)?;
            files.write_json("report.json", &report)?;
            files.write("rollouts.csv", &csv.finish())?;
            files.finish("rollout_manifest.json", manifest(cli, "rollout", Some(hash), started))?;
            println!(
                "SR {:.1}%  CVR {:.1}%  containment {:.1}%",
                100.0 * report.success_rate,
                100.0 * report.violation_rate,
                100.0 * report.containment_rate
            );
        }
        Command::BenchHorizon { horizons, out } => {
            if horizons.is_empty() || horizons.contains(&0) {
                return Err(CliError::User("horizons must be positive".into()));
            }
            let rows = horizon_sweep(cli.seed, horizons);
            let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
            let mut csv = Csv::new(&[
                "T",
                "n_x",
                "n_u",
                "n_r",
                "riccati_wall_ms",
                "oracle_wall_ms",
                "cost_riccati",
                "cost_oracle",
                "cost_rel_err",
                "error",
            ]);
            for r in &rows {
                csv.row(&[
                    r.t.to_string(),
                    r.n_x.to_string(),
                    r.n_u.to_string(),
                    r.n_r.to_string(),
                    opt(r.riccati_wall_ms),
                    opt(r.oracle_wall_ms),
                    opt(r.cost_riccati),
                    opt(r.cost_oracle),
                    opt(r.cost_rel_err),
                    r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
                ]);
            }
            let mut files = OutputSet::create(out)?;
            files.write("scaling.csv", &csv.finish())?;
            files.finish("manifest.json", manifest(cli, "bench-horizon", None, started))?;
            let slope = |s: Option<f64>| s.map_or("n/a".to_string(), |s| format!("{s:.2}"));
            println!("log-log slope: riccati {}, oracle {}", slope(riccati_slope(&rows)), slope(oracle_slope(&rows)));
            if let Some(e) = rows.iter().find_map(|r| r.error.clone()) {
                return Err(CliError::Numerical(e));
            }
        }
        Command::Calibrate { data, basis, gamma, mu, out } => {
            let text = read_file(data)?;
            let ds =
                ResidualDataset::from_csv(&text).map_err(|e| CliError::User(format!("{}: {e}", data.display())))?;
            if ds.is_empty() {
                return Err(CliError::User(format!("{}: no residual rows", data.display())));
            }
            let basis = parse_basis(basis, &header(&text), ds.states[0].len())?;
            let env = fit_envelope(&ds, &basis, *gamma, *mu)?;
            let in_sample = coverage(|x| env.value(x), &ds)?;
            let name = out
                .file_name()
                .and_then(|s| s.to_str())
                .ok_or_else(|| CliError::User(format!("bad output path {}", out.display())))?;
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
            let mut files = OutputSet::create(dir)?;
            files.write_json(
                name,
                &json!({
                    "envelope": env.to_model(),
                    "gamma": gamma,
                    "mu": mu,
                    "samples": ds.len(),
                    "in_sample_coverage": in_sample,
                    "slacks": env.slacks,
                }),
            )?;
            let stem = name.strip_suffix(".json").unwrap_or(name);
            files.finish(&format!("{stem}.manifest.json"), manifest(cli, "calibrate", None, started))?;
            println!("fitted {} coefficients, in-sample coverage {:.3}", env.beta.len(), in_sample);
        }
        Command::Report { synth, rollouts, out } => {
            let rdir = rollouts.as_deref().unwrap_or(synth);
            let tubes = read_table(&synth.join("tubes.csv"))?;
            let rolls = read_table(&rdir.join("rollouts.csv"))?;
            let mut files = OutputSet::create(out.as_deref().unwrap_or(rdir))?;
            let (summary, steps) = merge(&tubes, &rolls)?;
            files.write("tube_summary.csv", &summary)?;
            files.write("step_containment.csv", &steps)?;
            let report_path = rdir.join("report.json");
            if report_path.is_file() {
                let r: Value =
                    serde_json::from_str(&read_file(&report_path)?).map_err(|e| CliError::User(e.to_string()))?;
                let pct =
                    |k: &str| r.get(k).and_then(Value::as_f64).map_or("n/a".into(), |x| format!("{:.1}%", 100.0 * x));
                println!(
                    "SR {}  CVR {}  containment {}",
                    pct("success_rate"),
                    pct("violation_rate"),
                    pct("containment_rate")
                );
            }
            files.finish("report_manifest.json", manifest(cli, "report", None, started))?;
        }
    }
    Ok(())
}

fn tubes_csv(spec: &ProblemSpec, r: &SynthesisResult) -> String {
    let mut csv = Csv::new(&["k", "kind", "index", "nominal", "halfwidth", "lo", "hi"]);
    for k in 0..=spec.horizon {
        for (l, &h) in r.radii.halfwidths[k].iter().enumerate() {
            let (kind, i, nom) =
                if l < spec.n_x { ("x", l, r.z[k][l]) } else { ("u", l - spec.n_x, r.v[k][l - spec.n_x]) };
            csv.row(&[
                k.to_string(),
                kind.into(),
                i.to_string(),
                fmt_f64(nom),
                fmt_f64(h),
                fmt_f64(nom - h),
                fmt_f64(nom + h),
            ]);
        }
    }
    csv.finish()
}

fn iterations_csv(r: &SynthesisResult) -> String {
    let mut csv = Csv::new(&[
        "iteration",
        "attempt",
        "accepted",
        "qp_status",
        "step_norm",
        "trust",
        "merit",
        "j_traj",
        "j_tube",
        "violation",
        "max_margin",
    ]);
    for l in &r.log {
        csv.row(&[
            l.iteration.to_string(),
            l.attempt.to_string(),
            l.accepted.to_string(),
            l.qp_status.replace(',', ";"),
            fmt_f64(l.step_norm),
            fmt_f64(l.trust),
            fmt_f64(l.merit),
            fmt_f64(l.j_traj),
            fmt_f64(l.j_tube),
            fmt_f64(l.violation),
            fmt_f64(l.max_margin),
        ]);
    }
    csv.finish()
}

/// Header names of a CSV whose first line is not numeric.
fn header(text: &str) -> Vec<String> {
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let cells: Vec<&str> = first.split(',').map(str::trim).collect();
    if cells.iter().all(|c| c.parse::<f64>().is_ok()) {
        Vec::new()
    } else {
        cells.iter().map(|c| c.to_string()).collect()
    }
}

/// `names:degree`; each name is a header column or a zero-based index.
pub fn parse_basis(arg: &str, header: &[String], n_state: usize) -> Result<MonomialBasis, CliError> {
    let bad = |m: String| CliError::User(format!("--basis {arg:?}: {m}"));
    let (names, degree) = arg.rsplit_once(':').ok_or_else(|| bad("expected coords:degree".into()))?;
    let degree: usize = degree.trim().parse().map_err(|_| bad("degree must be a nonnegative integer".into()))?;
    let mut coords = Vec::new();
    for name in names.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let idx = match header.iter().position(|h| h == name) {
            Some(i) => i,
            None => name.parse::<usize>().map_err(|_| bad(format!("unknown coordinate {name:?}")))?,
        };
        if idx >= n_state {
            return Err(bad(format!("coordinate {name:?} is not a state column")));
        }
        if coords.contains(&idx) {
            return Err(bad(format!("coordinate {name:?} repeated")));
        }
        coords.push(idx);
    }
    if coords.is_empty() {
        return Err(bad("no coordinates".into()));
    }
    Ok(MonomialBasis::new(coords, degree))
}

type Table = (Vec<String>, Vec<Vec<String>>);

fn read_table(path: &Path) -> Result<Table, CliError> {
    let text = read_file(path)?;
    let mut lines = text.lines();
    let head: Vec<String> = lines.next().unwrap_or("").split(',').map(String::from).collect();
    let rows = lines.filter(|l| !l.is_empty()).map(|l| l.split(',').map(String::from).collect()).collect();
    Ok((head, rows))
}

fn column(t: &Table, name: &str) -> Result<usize, CliError> {
    t.0.iter().position(|h| h == name).ok_or_else(|| CliError::User(format!("CSV column {name:?} missing")))
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, CliError> {
    s.parse().map_err(|_| CliError::User(format!("bad CSV value {s:?}")))
}

#[derive(Default)]
struct Cell {
    nominal: f64,
    lo: f64,
    hi: f64,
    min: f64,
    max: f64,
    sum: f64,
    count: usize,
    inside: usize,
}

/// Per `(k, state)` envelope of the rollouts against the tube, and per-step containment.
fn merge(tubes: &Table, rolls: &Table) -> Result<(String, String), CliError> {
    let (tk, tkind, ti, tn, tlo, thi) = (
        column(tubes, "k")?,
        column(tubes, "kind")?,
        column(tubes, "index")?,
        column(tubes, "nominal")?,
        column(tubes, "lo")?,
        column(tubes, "hi")?,
    );
    let mut cells: BTreeMap<(usize, usize), Cell> = BTreeMap::new();
    for r in &tubes.1 {
        if r[tkind] != "x" {
            continue;
        }
        cells.insert(
            (num(&r[tk])?, num(&r[ti])?),
            Cell {
                nominal: num(&r[tn])?,
                lo: num(&r[tlo])?,
                hi: num(&r[thi])?,
                min: f64::INFINITY,
                max: f64::NEG_INFINITY,
                ..Default::default()
            },
        );
    }
    let (rid, rk, rj, rv) =
        (column(rolls, "rollout_id")?, column(rolls, "k")?, column(rolls, "state_index")?, column(rolls, "value")?);
    let mut step_in: BTreeMap<usize, BTreeMap<usize, bool>> = BTreeMap::new();
    for r in &rolls.1 {
        let key: (usize, usize) = (num(&r[rk])?, num(&r[rj])?);
        let v: f64 = num(&r[rv])?;
        let c = cells.get_mut(&key).ok_or_else(|| {
            CliError::User(format!("rollouts reference step {} state {} absent from tubes", key.0, key.1))
        })?;
        c.min = c.min.min(v);
        c.max = c.max.max(v);
        c.sum += v;
        c.count += 1;
        let ok = v >= c.lo - 1e-9 && v <= c.hi + 1e-9;
        c.inside += ok as usize;
        *step_in.entry(key.0).or_default().entry(num(&r[rid])?).or_insert(true) &= ok;
    }
    let mut summary = Csv::new(&[
        "k",
        "state_index",
        "nominal",
        "tube_lo",
        "tube_hi",
        "rollout_min",
        "rollout_mean",
        "rollout_max",
        "contained_fraction",
    ]);
    for ((k, j), c) in &cells {
        let per = |a: f64| if c.count == 0 { f64::NAN } else { a / c.count as f64 };
        summary.row(&[
            k.to_string(),
            j.to_string(),
            fmt_f64(c.nominal),
            fmt_f64(c.lo),
            fmt_f64(c.hi),
            fmt_f64(c.min),
            fmt_f64(per(c.sum)),
            fmt_f64(c.max),
            fmt_f64(per(c.inside as f64)),
        ]);
    }
    let mut steps = Csv::new(&["k", "rollouts", "fully_contained_fraction"]);
    for (k, m) in &step_in {
        let inside = m.values().filter(|&&b| b).count();
        steps.row(&[k.to_string(), m.len().to_string(), fmt_f64(inside as f64 / m.len() as f64)]);
    }
    Ok((summary.finish(), steps.finish()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_by_name_and_index() {
        let head = vec!["px".to_string(), "py".to_string(), "r".to_string()];
        let b = parse_basis("px,py:3", &head, 2).unwrap();
        assert_eq!((b.coords.clone(), b.degree), (vec![0, 1], 3));
        assert_eq!(parse_basis("1:2", &[], 2).unwrap().coords, vec![1]);
        assert!(parse_basis("pz:2", &head, 2).is_err());
        assert!(parse_basis("px,px:2", &head, 2).is_err());
        assert!(parse_basis("px", &head, 2).is_err());
        assert!(parse_basis("2:1", &head, 2).is_err());
    }

    #[test]
    fn header_detection() {
        assert_eq!(header("a,b\n1,2\n"), vec!["a", "b"]);
        assert!(header("1,2\n").is_empty());
    }
}
