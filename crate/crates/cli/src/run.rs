use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use convid_core::ecf::{empirical_moments, regression_moments, Model, MomentSet, SampleSet};
use convid_core::families::{Family, ProductLaw, Regression};
use convid_core::grid::{make_grid, GridFn, GridSpec};
use convid_core::ident::{choose_case, default_tau, recover_real_onto, solve, Case, Cleanup, SolveOptions, Solution, Target};
use convid_core::io::{read_gridfn, read_samples, sidecar_path, write_samples, write_solution};
use convid_core::regular::{make_weight, solve_regularized, WeightParams};
use convid_core::sim::{generate, ModelSpec};
use convid_core::wellposed::{
    check_tail_class, check_tail_class_grid, doubling_schedule, illposed_demo as demo_rows, TailClassParams,
};

use crate::config::{provenance, CliError};
use crate::{DemoArgs, DiagnoseArgs, EstOpts, EstimateArgs, MonteCarloArgs, SimOpts, SimulateArgs};

const SIDECAR_FORMAT: &str = "convid-sample/1";

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    p.as_deref()
        .ok_or_else(|| CliError::Config(format!("missing required option --{flag}")))
}

/// Prints one JSON line on stdout; a closed pipe is not an error.
fn emit(v: &Value) {
    let _ = writeln!(std::io::stdout().lock(), "{v}");
}

fn write_json(path: &Path, v: &Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    fs::write(path, serde_json::to_string_pretty(v)? + "\n")?;
    Ok(())
}

/// `lo:hi:n`, comma-separated per axis.
pub fn parse_grid(s: &str) -> Result<GridSpec, CliError> {
    let (mut lo, mut hi, mut n) = (Vec::new(), Vec::new(), Vec::new());
    for axis in s.split(',') {
        let parts: Vec<&str> = axis.trim().split(':').collect();
        let bad = || CliError::Config(format!("grid axis '{axis}' is not lo:hi:n"));
        if parts.len() != 3 {
            return Err(bad());
        }
        lo.push(parts[0].parse::<f64>().map_err(|_| bad())?);
        hi.push(parts[1].parse::<f64>().map_err(|_| bad())?);
        n.push(parts[2].parse::<usize>().map_err(|_| bad())?);
    }
    Ok(make_grid(lo.len(), &lo, &hi, &n)?)
}

fn parse_model(s: &str) -> Result<Model, CliError> {
    Ok(s.parse::<Model>()?)
}

fn parse_law(s: &str, what: &str) -> Result<ProductLaw, CliError> {
    s.parse::<ProductLaw>()
        .map_err(|e| CliError::Config(format!("--{what}: {e}")))
}

/// Builds and validates the generating spec.
fn model_spec(o: &SimOpts) -> Result<ModelSpec, CliError> {
    let model = parse_model(&o.model)?;
    let f = parse_law(&o.f, "f")?;
    let d = f.dim();
    let ux = parse_law(&o.ux, "ux")?;
    let ux = if ux.dim() == 1 && d == 2 { ProductLaw::iid(ux.axes[0], 2) } else { ux };
    let mut spec = match model {
        Model::Example2 => {
            let reg: Regression = o
                .regression
                .parse()
                .map_err(|e| CliError::Config(format!("--regression: {e}")))?;
            let z = parse_law(&o.z_law, "z-law")?;
            let mut s = ModelSpec::berkson(reg, z, f, o.n, o.seed);
            s.u_y = Some(o.uy.parse::<Family>().map_err(|e| CliError::Config(format!("--uy: {e}")))?);
            s
        }
        m => ModelSpec::classical(m, parse_law(&o.g, "g")?, f, o.n, o.seed),
    };
    spec.u_x = ux;
    spec.validate()?;
    Ok(spec)
}

#[derive(Serialize, Deserialize)]
struct Sidecar {
    format: String,
    spec: ModelSpec,
    #[serde(default)]
    provenance: Value,
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let out = required(&a.out, "out")?.to_path_buf();
    let spec = model_spec(&a.sim)?;
    let sample = generate(&spec)?;
    write_samples(&out, &sample)?;
    let side = Sidecar {
        format: SIDECAR_FORMAT.into(),
        spec,
        provenance: provenance("simulate", &a)?,
    };
    write_json(&sidecar_path(&out), &serde_json::to_value(&side)?)?;
    emit(&json!({ "samples": out, "sidecar": sidecar_path(&out), "n": sample.len(), "dim": sample.dim }));
    Ok(())
}

/// Estimator settings after validation.
struct Settings {
    spatial: GridSpec,
    freq: GridSpec,
    case: Option<Case>,
    tau: Option<f64>,
    weight: Option<WeightParams>,
    bandwidth: Option<f64>,
    cleanup: Option<Cleanup>,
}

fn settings(o: &EstOpts) -> Result<Settings, CliError> {
    let spatial = parse_grid(&o.grid)?;
    let freq = spatial.dual();
    let case = match o.case.trim() {
        "auto" => None,
        c => Some(c.parse::<Case>()?),
    };
    if let Some(t) = o.tau {
        if !(t.is_finite() && t >= 0.0) {
            return Err(CliError::Config(format!("--tau must be non-negative, got {t}")));
        }
    }
    let weight = match o.reg.as_deref().map(str::trim) {
        None | Some("off") | Some("none") => None,
        Some(r) => {
            let w: WeightParams = r.parse()?;
            // validates the cutoff against the grid before any work is done
            make_weight(w.cutoff, w.profile, &freq)?;
            Some(w)
        }
    };
    let cleanup = match o.cleanup.as_deref() {
        None => None,
        Some("density") => Some(Cleanup::Density),
        Some("signed") => Some(Cleanup::Signed),
        Some(other) => return Err(CliError::Config(format!("unknown cleanup '{other}'"))),
    };
    Ok(Settings {
        spatial,
        freq,
        case,
        tau: o.tau,
        weight,
        bandwidth: o.bandwidth,
        cleanup,
    })
}

struct Estimate {
    sol: Solution,
    case_reason: String,
    g_real: GridFn,
    f_real: Option<GridFn>,
    /// Where the recovered function is compared with the truth.
    region: Option<GridFn>,
    bandwidth: Option<f64>,
    warnings: Vec<String>,
}

fn estimate_sample(sample: &SampleSet, s: &Settings) -> Result<Estimate, CliError> {
    if sample.dim != s.spatial.dim() {
        return Err(CliError::Config(format!(
            "{}-d sample on a {}-d grid",
            sample.dim,
            s.spatial.dim()
        )));
    }
    let mut warnings = Vec::new();
    let (m, region, bandwidth): (MomentSet, Option<GridFn>, Option<f64>) = match sample.model {
        Model::Example2 => {
            let y = sample
                .y
                .as_ref()
                .ok_or_else(|| CliError::Config("model example2 needs a y column".into()))?;
            let r = regression_moments(y, &sample.x, &sample.z, &s.freq, s.bandwidth)?;
            if r.degenerate {
                warnings.push("y is constant; only the regularized solution is meaningful".into());
            }
            (r.moments, Some(r.window), Some(r.bandwidth))
        }
        _ => (empirical_moments(sample, &s.freq)?, None, None),
    };
    let tau = match (s.tau, s.weight) {
        (Some(t), _) => t,
        (None, Some(_)) => 1.5 / (sample.len() as f64).sqrt(),
        (None, None) => default_tau(&m),
    };
    let (case, case_reason) = match s.case {
        Some(c) => (c, "set by the caller".to_string()),
        None => choose_case(&m, tau),
    };
    let sol = match s.weight {
        Some(w) => solve_regularized(&m, &make_weight(w.cutoff, w.profile, &s.freq)?, case, tau)?,
        None => solve(&m, case, SolveOptions::with_tau(tau))?,
    };
    if sol.floored > 0 {
        warnings.push(format!("{} frequencies used the floored denominator", sol.floored));
    }
    let cleanup = s.cleanup.unwrap_or(match sample.model {
        Model::Example2 => Cleanup::Signed,
        _ => Cleanup::Density,
    });
    let g_real = recover_real_onto(&sol, Target::G, cleanup, &s.spatial)?;
    let f_real = match recover_real_onto(&sol, Target::F, Cleanup::Density, &s.spatial) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("error density not recovered: {e}"));
            None
        }
    };
    Ok(Estimate {
        sol,
        case_reason,
        g_real,
        f_real,
        region,
        bandwidth,
        warnings,
    })
}

#[derive(Serialize, Clone, Copy, Debug)]
struct Distances {
    l1: f64,
    l2: f64,
}

/// Distances of the recovered latent function from the generating truth:
/// the density of `x*`, or the regression function where the spatial window
/// is flat.
fn distances(est: &Estimate, spec: &ModelSpec) -> Option<Distances> {
    let g = &est.g_real;
    let d = g.spec.dim();
    let truth = |p: &[f64]| -> Option<f64> {
        match spec.model {
            Model::Example2 => spec.regression.map(|r| r.eval(p)),
            _ => spec.g.as_ref().and_then(|law| law.density(p)),
        }
    };
    let cell = g.spec.cell_volume();
    let (mut l1, mut l2) = (0.0, 0.0);
    for (i, p) in g.spec.points() {
        if let Some(w) = &est.region {
            if w.values[i].re < 1.0 - 1e-12 {
                continue;
            }
        }
        let diff = (g.values[i].re - truth(&p[..d])?).abs();
        l1 += diff * cell;
        l2 += diff * diff * cell;
    }
    Some(Distances { l1, l2: l2.sqrt() })
}

fn read_sidecar(csv: &Path) -> Result<Option<Sidecar>, CliError> {
    let p = sidecar_path(csv);
    if !p.exists() {
        return Ok(None);
    }
    let side: Sidecar = serde_json::from_str(&fs::read_to_string(&p)?)
        .map_err(|e| CliError::Config(format!("sidecar {}: {e}", p.display())))?;
    if side.format != SIDECAR_FORMAT {
        return Err(CliError::Config(format!("sidecar {}: unsupported format '{}'", p.display(), side.format)));
    }
    Ok(Some(side))
}

pub fn estimate(a: EstimateArgs) -> Result<(), CliError> {
    let input = required(&a.input, "in")?;
    let out = required(&a.out, "out")?;
    let s = settings(&a.est)?;
    let side = read_sidecar(input)?;
    let model = match (&a.model, &side) {
        (Some(m), _) => parse_model(m)?,
        (None, Some(side)) => side.spec.model,
        (None, None) => Model::Example1,
    };
    let sample = read_samples(input, model)?;
    let mut est = estimate_sample(&sample, &s)?;
    est.sol.g_real = Some(est.g_real.clone());
    est.sol.f_real = est.f_real.clone();
    let manifest = write_solution(out, &est.sol)?;
    let prov = provenance("estimate", &a)?;

    let truth = side.as_ref().filter(|sd| sd.spec.model == model).and_then(|sd| distances(&est, &sd.spec));
    let summary = json!({
        "format": "convid-summary/1",
        "case": est.sol.case,
        "case_reason": est.case_reason,
        "tau": est.sol.tau,
        "residual": est.sol.residual,
        "mask_points": manifest.mask_points,
        "mask_coverage": manifest.mask_coverage,
        "floored": est.sol.floored,
        "dropped": est.sol.dropped,
        "identified": est.sol.identified,
        "weight": est.sol.weight,
        "bandwidth": est.bandwidth,
        "n_samples": sample.len(),
        "truth": truth,
        "warnings": est.warnings,
        "config_hash": prov["config_hash"],
    });
    let mut full = serde_json::to_value(&manifest)?;
    let obj = full.as_object_mut().expect("manifest is an object");
    obj.insert("case_reason".into(), json!(est.case_reason));
    obj.insert("bandwidth".into(), json!(est.bandwidth));
    obj.insert("provenance".into(), prov);
    write_json(&out.join("manifest.json"), &full)?;
    write_json(&out.join("summary.json"), &summary)?;
    emit(&summary);
    Ok(())
}

#[derive(Serialize)]
struct TrialRow {
    trial: u64,
    seed: u64,
    case: String,
    l1: Option<f64>,
    l2: Option<f64>,
    residual: Option<f64>,
    mask_coverage: Option<f64>,
    error: String,
}

pub fn montecarlo(a: MonteCarloArgs) -> Result<(), CliError> {
    let out = required(&a.out, "out")?;
    let base = model_spec(&a.sim)?;
    let s = settings(&a.est)?;
    if a.trials == 0 {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }
    let rows: Vec<TrialRow> = (0..a.trials)
        .into_par_iter()
        .map(|r| {
            let spec = ModelSpec {
                seed: base.seed.wrapping_add(r),
                ..base.clone()
            };
            let res = generate(&spec)
                .map_err(CliError::from)
                .and_then(|sample| estimate_sample(&sample, &s));
            match res {
                Ok(est) => {
                    let dist = distances(&est, &spec);
                    TrialRow {
                        trial: r,
                        seed: spec.seed,
                        case: est.sol.case.to_string(),
                        l1: dist.map(|d| d.l1),
                        l2: dist.map(|d| d.l2),
                        residual: Some(est.sol.residual),
                        mask_coverage: Some(est.sol.mask.coverage()),
                        error: String::new(),
                    }
                }
                Err(e) => TrialRow {
                    trial: r,
                    seed: spec.seed,
                    case: String::new(),
                    l1: None,
                    l2: None,
                    residual: None,
                    mask_coverage: None,
                    error: e.to_string(),
                },
            }
        })
        .collect();
    fs::create_dir_all(out)?;
    let mut w = csv::Writer::from_path(out.join("trials.csv"))?;
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;

    let mut l1: Vec<f64> = rows.iter().filter_map(|r| r.l1).collect();
    l1.sort_by(f64::total_cmp);
    let median = if l1.is_empty() {
        None
    } else {
        let k = l1.len();
        Some(if k % 2 == 1 { l1[k / 2] } else { 0.5 * (l1[k / 2 - 1] + l1[k / 2]) })
    };
    let failures = rows.iter().filter(|r| !r.error.is_empty()).count();
    let summary = json!({
        "format": "convid-montecarlo/1",
        "trials": a.trials,
        "failures": failures,
        "median_l1": median,
        "mean_l1": if l1.is_empty() { None } else { Some(l1.iter().sum::<f64>() / l1.len() as f64) },
        "max_l1": l1.last(),
        "provenance": provenance("montecarlo", &a)?,
    });
    write_json(&out.join("summary.json"), &summary)?;
    emit(&summary);
    if failures as u64 == a.trials {
        return Err(CliError::Numerical(format!("all {failures} trials failed: {}", rows[0].error)));
    }
    Ok(())
}

pub fn diagnose(a: DiagnoseArgs) -> Result<(), CliError> {
    let class: TailClassParams = a
        .class
        .as_deref()
        .ok_or_else(|| CliError::Config("missing required option --class".into()))?
        .parse()?;
    let diag = match (&a.input, &a.family) {
        (Some(p), None) => {
            let b = read_gridfn(p)?;
            let r0 = a.r0.unwrap_or(b.spec.inner_radius() / 32.0);
            check_tail_class_grid(&b, &class, &doubling_schedule(r0))?
        }
        (None, Some(law)) => {
            let law = parse_law(law, "family")?;
            let grid = parse_grid(&a.grid)?;
            if law.dim() != grid.dim() {
                return Err(CliError::Config(format!("{}-d law on a {}-d grid", law.dim(), grid.dim())));
            }
            let ln = |t: &[f64]| law.ln_abs_cf(t);
            let r0 = a.r0.unwrap_or(grid.inner_radius());
            check_tail_class(&ln, &grid, &class, &doubling_schedule(r0))?
        }
        _ => return Err(CliError::Config("give exactly one of --in and --family".into())),
    };
    let report = json!({
        "format": "convid-diagnosis/1",
        "diagnosis": diag,
        "provenance": provenance("diagnose", &a)?,
    });
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    emit(&report);
    Ok(())
}

pub fn illposed_demo(a: DemoArgs) -> Result<(), CliError> {
    if a.n_min < 2 || a.n_max < a.n_min {
        return Err(CliError::Config(format!("need 2 <= n-min <= n-max, got {}..{}", a.n_min, a.n_max)));
    }
    let ns: Vec<u32> = (a.n_min..=a.n_max).collect();
    let rows = demo_rows(&ns)?;
    let report = json!({
        "format": "convid-illposed/1",
        "rows": rows,
        "all_bounds_hold": rows.iter().all(|r| r.bound_holds),
        "provenance": provenance("illposed-demo", &a)?,
    });
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("illposed.csv"))?;
        for r in &rows {
            w.serialize(r)?;
        }
        w.flush()?;
        write_json(&dir.join("illposed.json"), &report)?;
    }
    emit(&report);
    match rows.iter().find(|r| !r.bound_holds) {
        Some(r) => Err(CliError::Numerical(format!("lower bound violated at n = {}", r.n))),
        None => Ok(()),
    }
}
