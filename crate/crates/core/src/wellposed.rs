//! Well-posedness diagnostics: membership in the weighted-integrability class
//! `Φ(m, V)` and its Gaussian-tail refinement `Φ(B, Λ, m, V)`, the bump
//! sequence `bₙ` showing that deconvolution by a Gaussian is discontinuous, and
//! a perturbation experiment for the stability of the solution.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::ecf::MomentSet;
use crate::error::{Error, Result};
use crate::families::ProductLaw;
use crate::grid::{trapezoid_weight, weak_distance, GridFn, GridSpec, TestBank, C64, DEFAULT_GAUSSIAN_SCALES};
use crate::ident::{solve, Case, SolveOptions};

/// `m` (per-axis polynomial exponents) and bound `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub m: Vec<u32>,
    pub v: f64,
}

impl ClassParams {
    pub fn new(m: Vec<u32>, v: f64) -> Result<ClassParams> {
        if m.is_empty() || !(v > 0.0) {
            return Err(Error::Input(format!("class needs exponents and V > 0, got m={m:?}, V={v}")));
        }
        Ok(ClassParams { m, v })
    }
}

/// Tail radius `B`, Gaussian exponent `Λ` (row-major `d × d`, symmetric) and
/// the `Φ(m, V)` parameters of the compensated function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailClassParams {
    pub b: f64,
    pub lambda: Vec<f64>,
    pub class: ClassParams,
}

impl TailClassParams {
    pub fn new(b: f64, lambda: Vec<f64>, class: ClassParams) -> Result<TailClassParams> {
        let d = class.m.len();
        if !(b > 0.0) {
            return Err(Error::Input(format!("tail radius must be positive, got {b}")));
        }
        if lambda.len() != d * d {
            return Err(Error::Input(format!("Λ needs {} entries for d = {d}", d * d)));
        }
        for i in 0..d {
            for j in 0..i {
                if (lambda[i * d + j] - lambda[j * d + i]).abs() > 1e-12 {
                    return Err(Error::Input("Λ must be symmetric".into()));
                }
            }
        }
        Ok(TailClassParams { b, lambda, class })
    }

    pub fn dim(&self) -> usize {
        self.class.m.len()
    }
}

impl FromStr for TailClassParams {
    type Err = Error;

    /// `m:V:B:Λ`; in 2-d `m` is `m1,m2` and `Λ` is `l11,l12,l22`.
    fn from_str(s: &str) -> Result<TailClassParams> {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 4 {
            return Err(Error::Input(format!("class spec '{s}' is not m:V:B:Lambda")));
        }
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Input(format!("bad number '{t}' in class spec")))
        };
        let m = parts[0]
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| Error::Input(format!("bad exponent '{t}'"))))
            .collect::<Result<Vec<_>>>()?;
        let lam = parts[3].split(',').map(num).collect::<Result<Vec<_>>>()?;
        let lambda = match (m.len(), lam.len()) {
            (1, 1) => lam,
            (2, 3) => vec![lam[0], lam[1], lam[1], lam[2]],
            (d, k) => return Err(Error::Input(format!("{k} Λ entries for d = {d}"))),
        };
        TailClassParams::new(num(parts[2])?, lambda, ClassParams::new(m, num(parts[1])?)?)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Member,
    Nonmember,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Member => "member",
            Verdict::Nonmember => "nonmember",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub radius: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub verdict: Verdict,
    pub trace: Vec<TracePoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit_residual: Option<f64>,
    pub reason: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub parts: Vec<(String, Diagnosis)>,
}

/// Something whose modulus can be integrated over growing cubes.
pub enum ClassInput<'a> {
    /// Sampled values; only radii inside the grid are usable.
    Grid(&'a GridFn),
    /// `t ↦ ln |b(t)|`, `-∞` where `b` vanishes.
    Closed {
        dim: usize,
        ln_abs: &'a dyn Fn(&[f64]) -> f64,
    },
}

impl ClassInput<'_> {
    pub fn dim(&self) -> usize {
        match self {
            ClassInput::Grid(g) => g.spec.dim(),
            ClassInput::Closed { dim, .. } => *dim,
        }
    }
}

/// `ln Πₖ (1 + tₖ²)^{-mₖ}`.
fn ln_weight(m: &[u32], t: &[f64]) -> f64 {
    m.iter().zip(t).map(|(&mk, &x)| -(mk as f64) * (x * x).ln_1p()).sum()
}

/// Trapezoid rule over a box with `n` intervals per axis.
fn box_integral(f: &dyn Fn(&[f64]) -> f64, lo: &[f64], hi: &[f64], n: usize) -> f64 {
    let d = lo.len();
    let h: Vec<f64> = (0..d).map(|k| (hi[k] - lo[k]) / n as f64).collect();
    let w = |i: usize| if i == 0 || i == n { 0.5 } else { 1.0 };
    let mut total = 0.0;
    if d == 1 {
        for i in 0..=n {
            total += w(i) * f(&[lo[0] + i as f64 * h[0]]);
        }
        total * h[0]
    } else {
        for i in 0..=n {
            let t0 = lo[0] + i as f64 * h[0];
            for j in 0..=n {
                total += w(i) * w(j) * f(&[t0, lo[1] + j as f64 * h[1]]);
            }
        }
        total * h[0] * h[1]
    }
}

/// `∫_{r_in < ‖t‖∞ ≤ r_out} w_m(t) |b(t)| dt`, `None` past the grid.
fn shell_integral(b: &ClassInput, m: &[u32], r_in: f64, r_out: f64) -> Option<f64> {
    let d = b.dim();
    match b {
        ClassInput::Grid(g) => {
            if r_out > g.spec.inner_radius() + 1e-9 {
                return None;
            }
            let mut s = 0.0;
            for (i, p) in g.spec.points() {
                let r = p[..d].iter().map(|v| v.abs()).fold(0.0, f64::max);
                if (r_in == 0.0 || r > r_in) && r <= r_out {
                    s += (ln_weight(m, &p[..d])).exp() * g.values[i].norm() * trapezoid_weight(&g.spec, i);
                }
            }
            Some(s)
        }
        ClassInput::Closed { ln_abs, .. } => {
            let f = |t: &[f64]| (ln_abs(t) + ln_weight(m, t)).exp();
            let per_unit = if d == 1 { 8192 } else { 256 };
            if r_in == 0.0 {
                let lo = vec![-r_out; d];
                let hi = vec![r_out; d];
                return Some(box_integral(&f, &lo, &hi, per_unit));
            }
            if d == 1 {
                Some(
                    box_integral(&f, &[-r_out], &[-r_in], per_unit)
                        + box_integral(&f, &[r_in], &[r_out], per_unit),
                )
            } else {
                // Two full-width slabs and two side pieces.
                let top = box_integral(&f, &[-r_out, r_in], &[r_out, r_out], per_unit);
                let bottom = box_integral(&f, &[-r_out, -r_out], &[r_out, -r_in], per_unit);
                let left = box_integral(&f, &[-r_out, -r_in], &[-r_in, r_in], per_unit);
                let right = box_integral(&f, &[r_in, -r_in], &[r_out, r_in], per_unit);
                Some(top + bottom + left + right)
            }
        }
    }
}

/// Radii `r0·2^j`, `j = 0..=5`.
pub fn doubling_schedule(r0: f64) -> Vec<f64> {
    (0..6).map(|j| r0 * 2f64.powi(j)).collect()
}

/// Tests `∫ Πₖ(1 + tₖ²)^{-mₖ} |b(t)| dt < V` on nested cubes.
///
/// Member: all values finite, the last increment is below 1% of the value,
/// increments do not grow, and the value is below `V`. Nonmember: a value
/// reaches `V` or is not finite, or the increments grow. Otherwise
/// inconclusive.
pub fn check_phi_mv(b: &ClassInput, params: &ClassParams, radii: &[f64]) -> Result<Diagnosis> {
    if params.m.len() != b.dim() {
        return Err(Error::Input(format!(
            "{} exponents for a {}-d function",
            params.m.len(),
            b.dim()
        )));
    }
    if radii.is_empty() || radii.windows(2).any(|w| w[1] <= w[0]) || radii[0] <= 0.0 {
        return Err(Error::Input("radii must be positive and strictly increasing".into()));
    }
    let mut trace = Vec::new();
    let mut increments = Vec::new();
    let mut value = 0.0;
    let mut prev = 0.0;
    for &r in radii {
        let Some(s) = shell_integral(b, &params.m, prev, r) else {
            break;
        };
        value += s;
        increments.push(s);
        trace.push(TracePoint { radius: r, value });
        prev = r;
        if !value.is_finite() {
            break;
        }
    }
    let done = |verdict, reason: String| {
        Ok(Diagnosis {
            verdict,
            trace: trace.clone(),
            lambda: None,
            fit_residual: None,
            reason,
            parts: Vec::new(),
        })
    };
    if trace.is_empty() {
        return done(Verdict::Inconclusive, "no radius fits inside the grid".into());
    }
    if !value.is_finite() {
        return done(Verdict::Nonmember, "weighted integral is not finite".into());
    }
    if value >= params.v {
        return done(Verdict::Nonmember, format!("weighted integral {value:.6e} >= V = {}", params.v));
    }
    let k = increments.len();
    if k >= 2 && increments[k - 1] > increments[k - 2] {
        return done(Verdict::Nonmember, "increments grow with the radius".into());
    }
    if k < 3 {
        return done(Verdict::Inconclusive, format!("only {k} radii fit inside the grid"));
    }
    let last = increments[k - 1];
    if last <= 0.01 * value {
        done(Verdict::Member, format!("converged to {value:.6e} < V = {}", params.v))
    } else {
        done(
            Verdict::Inconclusive,
            format!("last increment {last:.3e} is above 1% of {value:.3e}"),
        )
    }
}

/// Gaussian tail fit of a sampled function.
#[derive(Clone, Debug)]
pub struct TailFit {
    /// Row-major `d × d`.
    pub lambda: Vec<f64>,
    /// `b·exp(ζ'Λζ)` on the grid.
    pub compensated: GridFn,
    /// RMS residual of the log-linear fit.
    pub residual: f64,
    pub points: usize,
}

fn quad_form(lambda: &[f64], t: &[f64]) -> f64 {
    let d = t.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += t[i] * lambda[i * d + j] * t[j];
        }
    }
    s
}

/// Least squares of `ln|b|` on `ζ'Λζ` plus a slowly varying offset
/// (`1` and `ln(1 + ζₖ²)`), over grid points with `‖ζ‖ > B`.
fn fit_tail_ln(spec: &GridSpec, ln_b: &[f64], b_radius: f64) -> Result<(Vec<f64>, f64, usize)> {
    let d = spec.dim();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    for (i, p) in spec.points() {
        let t = &p[..d];
        let r = t.iter().map(|v| v * v).sum::<f64>().sqrt();
        if r <= b_radius || !ln_b[i].is_finite() {
            continue;
        }
        let mut row = vec![1.0];
        row.extend(t.iter().map(|v| (v * v).ln_1p()));
        if d == 1 {
            row.push(-t[0] * t[0]);
        } else {
            row.push(-t[0] * t[0]);
            row.push(-2.0 * t[0] * t[1]);
            row.push(-t[1] * t[1]);
        }
        rows.push(row);
        rhs.push(ln_b[i]);
    }
    let ncol = if d == 1 { 3 } else { 6 };
    if rows.len() <= ncol {
        return Err(Error::Input(format!(
            "function vanishes on the tail region ‖ζ‖ > {b_radius} ({} usable points)",
            rows.len()
        )));
    }
    let a = DMatrix::from_fn(rows.len(), ncol, |i, j| rows[i][j]);
    let y = DVector::from_vec(rhs);
    let svd = a.clone().svd(true, true);
    let coef = svd
        .solve(&y, 1e-12)
        .map_err(|e| Error::Numerical(format!("tail fit failed: {e}")))?;
    let resid = (&a * &coef - &y).norm() / (rows.len() as f64).sqrt();
    let lambda = if d == 1 {
        vec![coef[2]]
    } else {
        vec![coef[3], coef[4], coef[4], coef[5]]
    };
    Ok((lambda, resid, rows.len()))
}

/// Fits `b(ζ) ≈ b̄(ζ)·exp(-ζ'Λζ)` on `‖ζ‖ > B`.
pub fn fit_tail_gaussian(b: &GridFn, b_radius: f64) -> Result<TailFit> {
    let ln_b: Vec<f64> = b.values.iter().map(|v| v.norm().ln()).collect();
    let (lambda, residual, points) = fit_tail_ln(&b.spec, &ln_b, b_radius)?;
    let d = b.spec.dim();
    let compensated = GridFn::from_fn(&b.spec, "b_bar", |t| b.values[b.spec.flat(grid_index(&b.spec, t))] * quad_form(&lambda, &t[..d]).exp());
    Ok(TailFit {
        lambda,
        compensated,
        residual,
        points,
    })
}

fn grid_index(spec: &GridSpec, t: &[f64]) -> [usize; 2] {
    let mut idx = [0; 2];
    for k in 0..spec.dim() {
        let a = spec.axis(k);
        idx[k] = ((t[k] - a.lo) / a.step()).round() as usize;
    }
    idx
}

/// Relative tolerance on the fitted exponent.
pub const LAMBDA_TOL: f64 = 1e-3;

/// `b ∈ Φ(B, Λ, m, V)`: the fitted exponent matches `Λ`, and both the
/// compensated function and its reciprocal lie in `Φ(m, V)`.
///
/// `ln_abs` is evaluated on `fit_grid` for the fit and in closed form for the
/// integrability checks, which therefore extend past the grid.
pub fn check_tail_class(
    ln_abs: &dyn Fn(&[f64]) -> f64,
    fit_grid: &GridSpec,
    params: &TailClassParams,
    radii: &[f64],
) -> Result<Diagnosis> {
    let d = fit_grid.dim();
    if params.dim() != d {
        return Err(Error::Input(format!("{}-d class for a {d}-d grid", params.dim())));
    }
    let ln_b: Vec<f64> = fit_grid.points().map(|(_, p)| ln_abs(&p[..d])).collect();
    let (lambda, residual, _) = fit_tail_ln(fit_grid, &ln_b, params.b)?;
    let lam = lambda.clone();
    let bbar = move |t: &[f64]| ln_abs(t) + quad_form(&lam, t);
    let lam = lambda.clone();
    let bbar_inv = move |t: &[f64]| -(ln_abs(t) + quad_form(&lam, t));
    let d1 = check_phi_mv(&ClassInput::Closed { dim: d, ln_abs: &bbar }, &params.class, radii)?;
    let d2 = check_phi_mv(&ClassInput::Closed { dim: d, ln_abs: &bbar_inv }, &params.class, radii)?;
    Ok(tail_verdict(lambda, residual, params, d1, d2))
}

/// [`check_tail_class`] for a sampled function; the integrability checks stop
/// at the edge of its grid.
pub fn check_tail_class_grid(b: &GridFn, params: &TailClassParams, radii: &[f64]) -> Result<Diagnosis> {
    let d = b.spec.dim();
    if params.dim() != d {
        return Err(Error::Input(format!("{}-d class for a {d}-d grid", params.dim())));
    }
    let fit = fit_tail_gaussian(b, params.b)?;
    let inverse = fit.compensated.map("b_bar_inverse", |v| C64::new(1.0, 0.0) / v);
    let d1 = check_phi_mv(&ClassInput::Grid(&fit.compensated), &params.class, radii)?;
    let d2 = check_phi_mv(&ClassInput::Grid(&inverse), &params.class, radii)?;
    Ok(tail_verdict(fit.lambda, fit.residual, params, d1, d2))
}

fn tail_verdict(
    lambda: Vec<f64>,
    residual: f64,
    params: &TailClassParams,
    d1: Diagnosis,
    d2: Diagnosis,
) -> Diagnosis {
    let scale = params.lambda.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    let mismatch = lambda
        .iter()
        .zip(&params.lambda)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let (verdict, reason) = if mismatch > LAMBDA_TOL * scale {
        (
            Verdict::Nonmember,
            format!("fitted Λ = {lambda:?} differs from {:?} by {mismatch:.3e}", params.lambda),
        )
    } else if d1.verdict == Verdict::Member && d2.verdict == Verdict::Member {
        (Verdict::Member, "Λ matches; b̄ and 1/b̄ are in Φ(m, V)".into())
    } else if d1.verdict == Verdict::Nonmember || d2.verdict == Verdict::Nonmember {
        (Verdict::Nonmember, "b̄ or 1/b̄ is not in Φ(m, V)".into())
    } else {
        (Verdict::Inconclusive, "integrability of b̄ or 1/b̄ undecided".into())
    };
    Diagnosis {
        verdict,
        trace: d1.trace.clone(),
        lambda: Some(lambda),
        fit_residual: Some(residual),
        reason,
        parts: vec![("b_bar".into(), d1), ("b_bar_inverse".into(), d2)],
    }
}

/// Shape of `bₙ` relative to its height `e^{-n}`: 1 on `(n - 1/n, n + 1/n)`,
/// raised-cosine shoulders over one further `1/n` on each side.
pub fn bn_shape(n: u32, x: f64) -> f64 {
    let nf = n as f64;
    let w = 1.0 / nf;
    let r = (x - nf).abs();
    if r < w {
        1.0
    } else if r < 2.0 * w {
        (0.5 * std::f64::consts::PI * (2.0 * w - r) / w).sin().powi(2)
    } else {
        0.0
    }
}

/// `bₙ(x) = e^{-n}·shape(x)` on a 1-d grid.
pub fn build_bn(n: u32, spec: &GridSpec) -> Result<GridFn> {
    if spec.dim() != 1 {
        return Err(Error::Input("bₙ is defined on a 1-d grid".into()));
    }
    if n == 0 {
        return Err(Error::Input("n must be positive".into()));
    }
    let nf = n as f64;
    let a = spec.axis(0);
    if a.lo > nf - 2.0 / nf || a.hi - a.step() < nf + 2.0 / nf {
        return Err(Error::Grid(format!(
            "grid [{}, {}) does not cover [{}, {}]",
            a.lo,
            a.hi,
            nf - 2.0 / nf,
            nf + 2.0 / nf
        )));
    }
    let height = (-nf).exp();
    Ok(GridFn::from_real(spec, format!("b_{n}"), |x| height * bn_shape(n, x[0])))
}

/// `ln Σ exp(aᵢ)` without overflow.
pub fn log_sum_exp(a: &[f64]) -> f64 {
    let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + a.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRow {
    pub n: u32,
    /// `⟨bₙ, e^{-|x|}⟩`.
    pub pairing: f64,
    /// `max_ψ |⟨bₙ, ψ⟩|` over the default bank.
    pub bank_max: f64,
    /// `ln ⟨bₙ e^{x²}, e^{-|x|}⟩`.
    pub log_pairing_inverse: f64,
    /// `ln(2/n) - 2n + (n - 1/n)²`.
    pub log_bound: f64,
    pub bound_holds: bool,
}

/// Quadrature nodes over the support of `bₙ` and their trapezoid log-weights.
fn bn_nodes(n: u32, intervals: usize) -> Vec<(f64, f64)> {
    let nf = n as f64;
    let (lo, hi) = (nf - 2.0 / nf, nf + 2.0 / nf);
    let h = (hi - lo) / intervals as f64;
    (0..=intervals)
        .map(|i| {
            let w = if i == 0 || i == intervals { 0.5 * h } else { h };
            (lo + i as f64 * h, w.ln())
        })
        .collect()
}

/// For each `n`, pairs `bₙ` and `bₙ/φ` (with `φ(x) = e^{-x²}`) against
/// `ψ(x) = e^{-|x|}`, entirely in log space, and compares with the lower bound
/// `ln(2/n) - 2n + (n - 1/n)²`.
pub fn illposed_demo(ns: &[u32]) -> Result<Vec<DemoRow>> {
    let mut rows = Vec::with_capacity(ns.len());
    for &n in ns {
        if n < 2 {
            return Err(Error::Input(format!("n must be at least 2, got {n}")));
        }
        let nf = n as f64;
        let nodes = bn_nodes(n, 4096);
        let ln_shape = |x: f64| bn_shape(n, x).ln();
        let inv: Vec<f64> = nodes
            .iter()
            .map(|&(x, lw)| -nf + ln_shape(x) + x * x - x.abs() + lw)
            .collect();
        let direct: Vec<f64> = nodes.iter().map(|&(x, lw)| -nf + ln_shape(x) - x.abs() + lw).collect();
        let mut bank_max: f64 = log_sum_exp(&direct).exp();
        for s in DEFAULT_GAUSSIAN_SCALES {
            let terms: Vec<f64> = nodes
                .iter()
                .map(|&(x, lw)| -nf + ln_shape(x) - x * x / (2.0 * s * s) + lw)
                .collect();
            bank_max = bank_max.max(log_sum_exp(&terms).exp());
        }
        let log_pairing_inverse = log_sum_exp(&inv);
        let log_bound = (2.0 / nf).ln() - 2.0 * nf + (nf - 1.0 / nf).powi(2);
        rows.push(DemoRow {
            n,
            pairing: log_sum_exp(&direct).exp(),
            bank_max,
            log_pairing_inverse,
            log_bound,
            bound_holds: log_pairing_inverse >= log_bound,
        });
    }
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Same Gaussian exponent as `ε₁`.
    Consistent,
    /// Exponent scaled by a factor; the perturbation of `γ` then grows.
    WrongLambda,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityRow {
    pub kind: PerturbationKind,
    pub scale: f64,
    /// Weak distance between perturbed and base `γ`; `None` for failed trials.
    pub distance: Option<f64>,
    pub mask_points: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub rows: Vec<StabilityRow>,
    /// Exponent used by the wrong-`Λ` perturbation.
    pub wrong_lambda: Vec<f64>,
    /// `distance(s/10) / distance(s)` for consecutive consistent scales.
    pub decade_ratios: Vec<f64>,
    /// Consistent distances strictly decrease with the scale.
    pub monotone: bool,
}

impl StabilityReport {
    pub fn distance(&self, kind: PerturbationKind, scale: f64) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.kind == kind && r.scale == scale)
            .and_then(|r| r.distance)
    }
}

/// Moments of the base pair with `ε₁` perturbed by
/// `β(ζ) = s‖ζ‖² exp(-ζ'Λζ)`, attributed to `γ`: `γₛ = γ + β/φ`. `β(0) = 0`
/// keeps the anchor.
pub fn perturbed_moments(
    g: &ProductLaw,
    f: &ProductLaw,
    freq: &GridSpec,
    lambda: &[f64],
    s: f64,
) -> Result<MomentSet> {
    let d = freq.dim();
    let beta = |t: &[f64]| {
        let r2: f64 = t.iter().map(|v| v * v).sum();
        s * r2 * (-quad_form(lambda, t)).exp()
    };
    let dbeta = |t: &[f64], k: usize| {
        let r2: f64 = t.iter().map(|v| v * v).sum();
        let lt: f64 = (0..d).map(|j| lambda[k * d + j] * t[j]).sum();
        s * (2.0 * t[k] - 2.0 * r2 * lt) * (-quad_form(lambda, t)).exp()
    };
    MomentSet::from_transforms(
        freq,
        |t| g.cf(t) + beta(t) / f.cf(t),
        |t, k| {
            let phi = f.cf(t);
            g.cf_partial(t, k) + dbeta(t, k) / phi - beta(t) * f.cf_partial(t, k) / (phi * phi)
        },
        |t| f.cf(t),
        |t, k| f.cf_partial(t, k),
    )
}

/// Re-solves perturbed systems and reports the weak distance of `γ` from the
/// unperturbed solution. Consistent perturbations use `params.lambda`; the
/// contrast run uses `params.lambda·wrong_factor` at every scale.
pub fn stability_experiment(
    g: &ProductLaw,
    f: &ProductLaw,
    freq: &GridSpec,
    params: &TailClassParams,
    scales: &[f64],
    wrong_factor: f64,
    case: Case,
    tau: f64,
) -> Result<StabilityReport> {
    let bank = TestBank::default_for(freq);
    let opts = SolveOptions::with_tau(tau);
    let base_m = crate::ecf::oracle_moments(g, f, freq)?;
    let base = solve(&base_m, case, opts)?;
    let wrong: Vec<f64> = params.lambda.iter().map(|v| v * wrong_factor).collect();

    let mut rows = Vec::new();
    for (kind, lambda) in [
        (PerturbationKind::Consistent, &params.lambda),
        (PerturbationKind::WrongLambda, &wrong),
    ] {
        for &s in scales {
            let trial = perturbed_moments(g, f, freq, lambda, s).and_then(|m| {
                let sol = solve(&m, case, opts)?;
                let dist = weak_distance(&sol.gamma, &base.gamma, &bank)?;
                Ok((dist, sol.mask.count()))
            });
            rows.push(match trial {
                Ok((dist, count)) => StabilityRow {
                    kind,
                    scale: s,
                    distance: Some(dist),
                    mask_points: count,
                    error: None,
                },
                Err(e) => StabilityRow {
                    kind,
                    scale: s,
                    distance: None,
                    mask_points: 0,
                    error: Some(e.to_string()),
                },
            });
        }
    }

    let mut consistent: Vec<(f64, Option<f64>)> = rows
        .iter()
        .filter(|r| r.kind == PerturbationKind::Consistent)
        .map(|r| (r.scale, r.distance))
        .collect();
    consistent.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = consistent.windows(2).all(|w| match (w[0].1, w[1].1) {
        (Some(a), Some(b)) => b < a || (a == 0.0 && b == 0.0),
        _ => false,
    });
    let decade_ratios = consistent
        .windows(2)
        .filter(|w| (w[0].0 / w[1].0 - 10.0).abs() < 1e-9)
        .filter_map(|w| match (w[0].1, w[1].1) {
            (Some(a), Some(b)) if a > 0.0 => Some(b / a),
            _ => None,
        })
        .collect();
    Ok(StabilityReport {
        rows,
        wrong_lambda: wrong,
        decade_ratios,
        monotone,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;
    use crate::grid::{pair, TestFn};

    fn closed(f: &dyn Fn(&[f64]) -> f64) -> ClassInput<'_> {
        ClassInput::Closed { dim: 1, ln_abs: f }
    }

    #[test]
    fn laplace_inverse_cf_is_member() {
        let f = |t: &[f64]| -(t[0] * t[0]).ln_1p();
        let p = ClassParams::new(vec![2], 10.0).unwrap();
        let d = check_phi_mv(&closed(&f), &p, &[10.0, 20.0, 40.0]).unwrap();
        assert_eq!(d.verdict, Verdict::Member, "{}", d.reason);
        // ∫ (1+t²)^{-3} dt = 3π/8
        let limit = 3.0 * std::f64::consts::PI / 8.0;
        assert!((d.trace.last().unwrap().value - limit).abs() < 1e-5);
    }

    #[test]
    fn growing_function_is_nonmember() {
        let f = |t: &[f64]| t[0] * t[0];
        let p = ClassParams::new(vec![5], 1e300).unwrap();
        let d = check_phi_mv(&closed(&f), &p, &doubling_schedule(1.0)).unwrap();
        assert_eq!(d.verdict, Verdict::Nonmember);
    }

    #[test]
    fn zero_is_member_for_any_v() {
        let f = |_: &[f64]| f64::NEG_INFINITY;
        for v in [1e-9, 1.0, 1e9] {
            let p = ClassParams::new(vec![0], v).unwrap();
            let d = check_phi_mv(&closed(&f), &p, &doubling_schedule(1.0)).unwrap();
            assert_eq!(d.verdict, Verdict::Member);
        }
    }

    #[test]
    fn trace_radii_increase_and_bad_radii_rejected() {
        let f = |_: &[f64]| 0.0;
        let p = ClassParams::new(vec![1], 10.0).unwrap();
        let d = check_phi_mv(&closed(&f), &p, &doubling_schedule(2.0)).unwrap();
        assert!(d.trace.windows(2).all(|w| w[1].radius > w[0].radius));
        assert!(check_phi_mv(&closed(&f), &p, &[2.0, 1.0]).is_err());
    }

    #[test]
    fn grid_input_stops_at_grid_edge() {
        let g = GridSpec::line(-16.0, 16.0, 512).unwrap();
        let b = GridFn::from_real(&g, "b", |t| 1.0 / (1.0 + t[0] * t[0]));
        let p = ClassParams::new(vec![2], 10.0).unwrap();
        let d = check_phi_mv(&ClassInput::Grid(&b), &p, &doubling_schedule(1.0)).unwrap();
        assert_eq!(d.trace.len(), 4);
        assert_eq!(d.verdict, Verdict::Member, "{}", d.reason);
    }

    #[test]
    fn tail_fit_examples() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        let b = GridFn::from_real(&g, "g", |t| (-t[0] * t[0]).exp());
        let fit = fit_tail_gaussian(&b, 1.0).unwrap();
        assert!((fit.lambda[0] - 1.0).abs() < 1e-6);
        assert!(fit.compensated.values.iter().all(|v| (v.re - 1.0).abs() < 1e-6));

        let b = GridFn::from_real(&g, "lg", |t| (-2.0 * t[0] * t[0]).exp() / (1.0 + t[0] * t[0]));
        let fit = fit_tail_gaussian(&b, 1.0).unwrap();
        assert!((fit.lambda[0] - 2.0).abs() < 1e-6);
        for (i, t) in g.points() {
            let want = 1.0 / (1.0 + t[0] * t[0]);
            assert!((fit.compensated.values[i].re - want).abs() < 1e-4 * want);
        }

        let b = GridFn::from_real(&g, "l", |t| 1.0 / (1.0 + t[0] * t[0]));
        let fit = fit_tail_gaussian(&b, 1.0).unwrap();
        assert!(fit.lambda[0].abs() < 1e-8);
        assert!(fit.residual < 1e-8);

        assert!(fit_tail_gaussian(&GridFn::zeros(&g, "0"), 1.0).is_err());
    }

    #[test]
    fn tail_class_examples() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        let gauss = |t: &[f64]| -0.5 * t[0] * t[0];
        let class = ClassParams::new(vec![2], 10.0).unwrap();
        let radii = doubling_schedule(10.0);
        let ok = TailClassParams::new(1.0, vec![0.5], class.clone()).unwrap();
        let d = check_tail_class(&gauss, &g, &ok, &radii).unwrap();
        assert_eq!(d.verdict, Verdict::Member, "{}", d.reason);
        let wrong = TailClassParams::new(1.0, vec![1.0], class.clone()).unwrap();
        assert_eq!(check_tail_class(&gauss, &g, &wrong, &radii).unwrap().verdict, Verdict::Nonmember);

        let lap = Family::Laplace { loc: 0.0, scale: 1.0 };
        let ln = |t: &[f64]| lap.ln_abs_cf(t[0]);
        let p = TailClassParams::new(1.0, vec![0.0], class).unwrap();
        let d = check_tail_class(&ln, &g, &p, &radii).unwrap();
        assert_eq!(d.verdict, Verdict::Member, "{}", d.reason);
    }

    #[test]
    fn tail_class_on_sampled_functions() {
        let g = GridSpec::line(-32.0, 32.0, 4096).unwrap();
        let class = ClassParams::new(vec![3], 10.0).unwrap();
        let radii = doubling_schedule(0.5);
        let lap = GridFn::from_real(&g, "lap", |t| 1.0 / (1.0 + t[0] * t[0]));
        let p = TailClassParams::new(1.0, vec![0.0], class.clone()).unwrap();
        let d = check_tail_class_grid(&lap, &p, &radii).unwrap();
        assert_eq!(d.verdict, Verdict::Member, "{}", d.reason);
        let gauss = GridFn::from_real(&g, "gauss", |t| (-0.125 * t[0] * t[0]).exp());
        let p = TailClassParams::new(1.0, vec![0.15], class).unwrap();
        assert_eq!(check_tail_class_grid(&gauss, &p, &radii).unwrap().verdict, Verdict::Nonmember);
    }

    #[test]
    fn class_spec_parsing() {
        let p: TailClassParams = "2:10:1:0.5".parse().unwrap();
        assert_eq!(p.class.m, vec![2]);
        assert_eq!(p.lambda, vec![0.5]);
        let p: TailClassParams = "1,2:10:1:0.5,0.1,0.7".parse().unwrap();
        assert_eq!(p.lambda, vec![0.5, 0.1, 0.1, 0.7]);
        assert!("2:10:1".parse::<TailClassParams>().is_err());
        assert!("2:-1:1:0.5".parse::<TailClassParams>().is_err());
    }

    #[test]
    fn bn_properties() {
        let g = GridSpec::line(-16.0, 16.0, 8192).unwrap();
        let h = g.step(0);
        for n in 2..=10u32 {
            let b = build_bn(n, &g).unwrap();
            let top = (-(n as f64)).exp();
            let nf = n as f64;
            for (i, x) in g.points() {
                let v = b.values[i].re;
                assert!((0.0..=top).contains(&v));
                if x[0] >= nf - 1.0 / nf + h && x[0] <= nf + 1.0 / nf - h {
                    assert_eq!(v, top);
                }
                if (x[0] - nf).abs() >= 2.0 / nf {
                    assert_eq!(v, 0.0);
                }
            }
            assert!(crate::grid::integrate(&b).re <= 4.0 / nf * top);
        }
        let b2 = build_bn(2, &g).unwrap();
        assert!(b2.values.iter().zip(g.points()).all(|(v, (_, x))| v.re == 0.0 || (x[0] > 1.0 && x[0] < 3.0)));
        assert!(build_bn(20, &g).is_err());
    }

    #[test]
    fn bn_pairing_below_bound() {
        let g = GridSpec::line(-16.0, 16.0, 8192).unwrap();
        let b5 = build_bn(5, &g).unwrap();
        let v = pair(&b5, &TestFn::exp_abs(&g)).unwrap().re;
        assert!(v > 0.0 && v <= 0.8 * (-5.0f64).exp() * (-(5.0 - 0.4f64)).exp());
    }

    #[test]
    fn log_sum_exp_handles_huge_terms() {
        assert!((log_sum_exp(&[1000.0, 1000.0]) - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(log_sum_exp(&[f64::NEG_INFINITY]), f64::NEG_INFINITY);
    }

    #[test]
    fn demo_bound_arithmetic() {
        let rows = illposed_demo(&[2, 6]).unwrap();
        assert!((rows[0].log_bound - (-1.75)).abs() < 1e-12);
        let want = (1.0f64 / 3.0).ln() - 12.0 + (6.0 - 1.0 / 6.0f64).powi(2);
        assert!((rows[1].log_bound - want).abs() < 1e-12);
        assert!((rows[1].log_bound - 20.93).abs() < 0.01);
        assert!(rows.iter().all(|r| r.bound_holds));
        assert!(illposed_demo(&[1]).is_err());
    }
}
