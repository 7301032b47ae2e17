//! Constructive solution of the Fourier-domain system
//!
//! ```text
//! γ φ = ε₁,    -i ∂ₖγ φ = ε₂ₖ
//! ```
//!
//! Case (a) integrates `κₖ = iε₂ₖ/ε₁ = ∂ₖ log γ`; case (b) integrates
//! `κ̃ₖ = (∂ₖε₁ - iε₂ₖ)/ε₁ = ∂ₖ log φ` and divides. Log-derivatives are
//! integrated along a staircase path from the origin and exponentiated
//! afterwards, so no complex logarithm is ever taken.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecf::MomentSet;
use crate::error::{Error, Result};
use crate::grid::{cumulative_segment, fourier_inverse_onto, integrate, GridFn, GridSpec, C64};
use crate::regular::WeightParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Case {
    /// Latent transform `γ` differentiable; integrate `∂ log γ`.
    A,
    /// Error transform `φ` differentiable; integrate `∂ log φ`.
    B,
}

impl fmt::Display for Case {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Case::A => "a",
            Case::B => "b",
        })
    }
}

impl FromStr for Case {
    type Err = Error;

    fn from_str(s: &str) -> Result<Case> {
        match s.trim() {
            "a" | "A" => Ok(Case::A),
            "b" | "B" => Ok(Case::B),
            other => Err(Error::Input(format!("unknown case '{other}'"))),
        }
    }
}

/// Region of the frequency grid where the system is solved.
#[derive(Clone, Debug, PartialEq)]
pub struct SupportMask {
    pub spec: GridSpec,
    pub inside: Vec<bool>,
    pub tau: f64,
}

impl SupportMask {
    pub fn full(spec: &GridSpec) -> SupportMask {
        SupportMask {
            spec: spec.clone(),
            inside: vec![true; spec.len()],
            tau: 0.0,
        }
    }

    pub fn count(&self) -> usize {
        self.inside.iter().filter(|&&b| b).count()
    }

    pub fn contains(&self, flat: usize) -> bool {
        self.inside[flat]
    }

    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.inside.len() as f64
    }

    pub fn is_single_point(&self) -> bool {
        self.count() == 1 && self.inside[self.spec.origin_flat()]
    }

    pub fn intersect(&self, other: &SupportMask) -> Result<SupportMask> {
        self.spec.ensure_matches(&other.spec)?;
        Ok(SupportMask {
            spec: self.spec.clone(),
            inside: self.inside.iter().zip(&other.inside).map(|(a, b)| *a && *b).collect(),
            tau: self.tau.max(other.tau),
        })
    }

    /// Largest half-width `r` such that the cube `‖ζ‖∞ ≤ r` lies in the mask.
    pub fn inscribed_radius(&self) -> f64 {
        let d = self.spec.dim();
        self.spec
            .points()
            .filter(|(i, _)| !self.inside[*i])
            .map(|(_, p)| p[..d].iter().map(|v| v.abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Mask where `|ε₁| > τ`, reduced to the connected component containing the
/// origin and made convex (an interval in 1-d, the rasterized convex hull in
/// 2-d).
pub fn threshold_support(eps1: &GridFn, tau: f64) -> Result<SupportMask> {
    if !(tau.is_finite() && tau > 0.0) {
        return Err(Error::Input(format!("threshold must be positive, got {tau}")));
    }
    if tau >= 1.0 {
        return Err(Error::EmptyMask { tau });
    }
    let spec = &eps1.spec;
    let o = spec.origin_flat();
    let raw: Vec<bool> = eps1.values.iter().map(|v| v.norm() > tau).collect();
    if !raw[o] {
        return Err(Error::EmptyMask { tau });
    }
    let comp = origin_component(spec, &raw);
    let inside = if spec.dim() == 2 { convex_fill(spec, &comp) } else { comp };
    Ok(SupportMask {
        spec: spec.clone(),
        inside,
        tau,
    })
}

fn neighbours(spec: &GridSpec, flat: usize) -> impl Iterator<Item = usize> + '_ {
    let idx = spec.unflat(flat);
    let d = spec.dim();
    (0..d).flat_map(move |k| {
        let mut out = Vec::with_capacity(2);
        if idx[k] > 0 {
            out.push(flat - spec.stride(k));
        }
        if idx[k] + 1 < spec.n(k) {
            out.push(flat + spec.stride(k));
        }
        out
    })
}

fn origin_component(spec: &GridSpec, raw: &[bool]) -> Vec<bool> {
    let mut seen = vec![false; raw.len()];
    let o = spec.origin_flat();
    let mut queue = VecDeque::from([o]);
    seen[o] = true;
    while let Some(c) = queue.pop_front() {
        for nb in neighbours(spec, c) {
            if raw[nb] && !seen[nb] {
                seen[nb] = true;
                queue.push_back(nb);
            }
        }
    }
    seen
}

fn cross(o: (i64, i64), a: (i64, i64), b: (i64, i64)) -> i64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Adds every grid point inside the convex hull of the marked cells.
fn convex_fill(spec: &GridSpec, comp: &[bool]) -> Vec<bool> {
    let mut pts: Vec<(i64, i64)> = (0..comp.len())
        .filter(|&i| comp[i])
        .map(|i| {
            let idx = spec.unflat(i);
            (idx[0] as i64, idx[1] as i64)
        })
        .collect();
    pts.sort_unstable();
    // Andrew's monotone chain, counter-clockwise, collinear points dropped.
    let mut hull: Vec<(i64, i64)> = Vec::new();
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    let mut out = comp.to_vec();
    if hull.len() < 3 {
        return out;
    }
    let (min0, max0) = (pts[0].0, pts[pts.len() - 1].0);
    let min1 = pts.iter().map(|p| p.1).min().unwrap();
    let max1 = pts.iter().map(|p| p.1).max().unwrap();
    for i0 in min0..=max0 {
        for i1 in min1..=max1 {
            let q = (i0, i1);
            let inside = (0..hull.len()).all(|e| cross(hull[e], hull[(e + 1) % hull.len()], q) >= 0);
            if inside {
                out[spec.flat([i0 as usize, i1 as usize])] = true;
            }
        }
    }
    out
}

/// Shared body of the two log-derivative formulas. Points with
/// `|ε₁| < floor` use `floor·ε₁/|ε₁|` as denominator; the number of such
/// points is returned.
pub(crate) fn log_derivatives(
    m: &MomentSet,
    mask: &SupportMask,
    case: Case,
    floor: f64,
) -> Result<(Vec<GridFn>, usize)> {
    m.spec().ensure_matches(&mask.spec)?;
    let i = C64::new(0.0, 1.0);
    let zero = C64::new(0.0, 0.0);
    let mut vanishing = 0;
    let mut floored = 0;
    let dens: Vec<Option<C64>> = m
        .eps1
        .values
        .iter()
        .enumerate()
        .map(|(idx, &e)| {
            if !mask.inside[idx] {
                return None;
            }
            let r = e.norm();
            if r < floor {
                floored += 1;
                return Some(if r > 0.0 { e * (floor / r) } else { C64::new(floor, 0.0) });
            }
            if r <= f64::EPSILON {
                vanishing += 1;
            }
            Some(e)
        })
        .collect();
    if vanishing > 0 {
        return Err(Error::VanishingDenominator { count: vanishing });
    }
    let kappas = (0..m.dim())
        .map(|k| {
            let vals = dens
                .iter()
                .enumerate()
                .map(|(idx, den)| match den {
                    None => zero,
                    Some(den) => {
                        let num = match case {
                            Case::A => i * m.eps2[k].values[idx],
                            Case::B => m.deps1[k].values[idx] - i * m.eps2[k].values[idx],
                        };
                        num / den
                    }
                })
                .collect();
            let label = match case {
                Case::A => format!("kappa_{}", k + 1),
                Case::B => format!("kappa_tilde_{}", k + 1),
            };
            GridFn::new(m.spec().clone(), vals, label)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((kappas, floored))
}

/// `κₖ = iε₂ₖ/ε₁` on the mask, zero elsewhere.
pub fn kappa_a(m: &MomentSet, mask: &SupportMask) -> Result<Vec<GridFn>> {
    Ok(log_derivatives(m, mask, Case::A, 0.0)?.0)
}

/// `κ̃ₖ = (∂ₖε₁ - iε₂ₖ)/ε₁` on the mask, zero elsewhere.
pub fn kappa_b(m: &MomentSet, mask: &SupportMask) -> Result<Vec<GridFn>> {
    Ok(log_derivatives(m, mask, Case::B, 0.0)?.0)
}

/// Contiguous run of `inside` around `at` on the line `base + j·stride`.
fn run_around(inside: &[bool], base: usize, stride: usize, n: usize, at: usize) -> (usize, usize) {
    let mut lo = at;
    while lo > 0 && inside[base + (lo - 1) * stride] {
        lo -= 1;
    }
    let mut hi = at;
    while hi + 1 < n && inside[base + (hi + 1) * stride] {
        hi += 1;
    }
    (lo, hi)
}

/// `∫₀^ζ Σₖ κₖ dξₖ` along the staircase that runs first along `order[0]`,
/// then along `order[1]`. Returns the integral and the set of reached points.
fn path_log_integral(
    kappas: &[GridFn],
    mask: &SupportMask,
    order: [usize; 2],
) -> Result<(Vec<C64>, Vec<bool>)> {
    let spec = &mask.spec;
    let d = spec.dim();
    if kappas.len() != d {
        return Err(Error::Input(format!("{} log-derivatives for a {d}-d grid", kappas.len())));
    }
    for kp in kappas {
        spec.ensure_matches(&kp.spec)?;
    }
    let o = spec.origin_flat();
    if !mask.inside[o] {
        return Err(Error::Input("origin is not in the mask".into()));
    }
    let oidx = spec.origin_index();
    let zero = C64::new(0.0, 0.0);
    let mut log = vec![zero; spec.len()];
    let mut reached = vec![false; spec.len()];

    let integrate_line = |axis: usize, base: usize, at: usize, log: &mut [C64], reached: &mut [bool], offset: C64| {
        let n = spec.n(axis);
        let stride = spec.stride(axis);
        let (lo, hi) = run_around(&mask.inside, base, stride, n, at);
        let line: Vec<C64> = (0..n).map(|j| kappas[axis].values[base + j * stride]).collect();
        let cum = cumulative_segment(&line, spec.step(axis), at, lo, hi);
        for (j, c) in (lo..=hi).zip(cum) {
            log[base + j * stride] = offset + c;
            reached[base + j * stride] = true;
        }
        (lo, hi)
    };

    let a = order[0];
    let base_a = o - oidx[a] * spec.stride(a);
    let (lo, hi) = integrate_line(a, base_a, oidx[a], &mut log, &mut reached, zero);
    if d == 2 {
        let b = order[1];
        for j in lo..=hi {
            let start = base_a + j * spec.stride(a);
            let base_b = start - oidx[b] * spec.stride(b);
            let offset = log[start];
            integrate_line(b, base_b, oidx[b], &mut log, &mut reached, offset);
        }
    }
    Ok((log, reached))
}

/// Result of exponentiating a path integral.
#[derive(Clone, Debug)]
pub struct PathIntegral {
    pub value: GridFn,
    /// Points actually reached from the origin inside the input mask.
    pub mask: SupportMask,
    /// Masked points that the staircase path could not reach.
    pub dropped: usize,
}

/// `c·exp ∫₀^ζ Σₖ κₖ(ξ) dξₖ` on the mask, zero outside. In 2-d the path is
/// `(0,0) → (ζ₁,0) → (ζ₁,ζ₂)`.
pub fn exp_path_integral(kappas: &[GridFn], c: C64, mask: &SupportMask) -> Result<PathIntegral> {
    let (log, reached) = path_log_integral(kappas, mask, [0, 1])?;
    let dropped = mask.count() - reached.iter().filter(|&&r| r).count();
    let values: Vec<C64> = log
        .iter()
        .zip(&reached)
        .map(|(l, &r)| if r { c * l.exp() } else { C64::new(0.0, 0.0) })
        .collect();
    Ok(PathIntegral {
        value: GridFn::new(mask.spec.clone(), values, "path_exp")?,
        mask: SupportMask {
            spec: mask.spec.clone(),
            inside: reached,
            tau: mask.tau,
        },
        dropped,
    })
}

/// Largest difference between the two staircase orders, over points both
/// reach. 2-d only.
pub fn path_independence_check(kappas: &[GridFn], mask: &SupportMask) -> Result<f64> {
    if mask.spec.dim() != 2 {
        return Err(Error::Input("path independence is only defined in 2-d".into()));
    }
    let (l12, r12) = path_log_integral(kappas, mask, [0, 1])?;
    let (l21, r21) = path_log_integral(kappas, mask, [1, 0])?;
    Ok((0..l12.len())
        .filter(|&i| r12[i] && r21[i])
        .map(|i| (l12[i] - l21[i]).norm())
        .fold(0.0, f64::max))
}

/// Recovered transforms and bookkeeping.
#[derive(Clone, Debug)]
pub struct Solution {
    pub gamma: GridFn,
    pub phi: GridFn,
    pub case: Case,
    /// Value of `γ` at the origin.
    pub c: C64,
    pub mask: SupportMask,
    pub tau: f64,
    /// `sup |γφ - ε₁|` over the mask (`ψε₁` for regularized solves).
    pub residual: f64,
    /// Masked points the path integral could not reach.
    pub dropped: usize,
    /// False when the mask degenerates to the origin alone.
    pub identified: bool,
    /// Points where the denominator was floored at `τ`.
    pub floored: usize,
    pub weight: Option<WeightParams>,
    pub g_real: Option<GridFn>,
    pub f_real: Option<GridFn>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveOptions {
    pub tau: f64,
    /// Anchor `γ(0)` for case (a).
    pub c: C64,
}

impl SolveOptions {
    pub fn with_tau(tau: f64) -> SolveOptions {
        SolveOptions {
            tau,
            c: C64::new(1.0, 0.0),
        }
    }
}

/// Default threshold: `1e-6` for oracle input, `max(1e-6, 2.5/√n)` for data.
pub fn default_tau(m: &MomentSet) -> f64 {
    match m.n_samples {
        Some(n) if n > 0 => (2.5 / (n as f64).sqrt()).max(1e-6),
        _ => 1e-6,
    }
}

fn trivial_solution(m: &MomentSet, mask: SupportMask, case: Case, c: C64) -> Result<Solution> {
    let spec = m.spec().clone();
    let o = spec.origin_flat();
    let mut gamma = GridFn::zeros(&spec, "gamma");
    let mut phi = GridFn::zeros(&spec, "phi");
    gamma.values[o] = c;
    phi.values[o] = m.eps1.values[o] / c;
    Ok(Solution {
        gamma,
        phi,
        case,
        c,
        tau: mask.tau,
        mask,
        residual: 0.0,
        dropped: 0,
        identified: false,
        floored: 0,
        weight: None,
        g_real: None,
        f_real: None,
    })
}

/// Core of both cases. `target` is what `γφ` must reproduce (`ε₁`, or `ψε₁`
/// for the weighted system); `floor` is the denominator floor.
pub(crate) fn solve_on_mask(
    m: &MomentSet,
    target: &GridFn,
    mask: SupportMask,
    case: Case,
    c: C64,
    floor: f64,
) -> Result<Solution> {
    if mask.is_single_point() {
        return trivial_solution(m, mask, case, c);
    }
    let (kappas, floored) = log_derivatives(m, &mask, case, floor)?;
    let anchor = match case {
        Case::A => c,
        Case::B => C64::new(1.0, 0.0),
    };
    let path = exp_path_integral(&kappas, anchor, &mask)?;
    let mask = path.mask;
    let zero = C64::new(0.0, 0.0);
    let spec = m.spec().clone();
    let mut gamma = vec![zero; spec.len()];
    let mut phi = vec![zero; spec.len()];
    for i in 0..spec.len() {
        if !mask.inside[i] {
            continue;
        }
        let p = path.value.values[i];
        match case {
            Case::A => {
                gamma[i] = p;
                phi[i] = target.values[i] / p;
            }
            Case::B => {
                phi[i] = p;
                gamma[i] = target.values[i] / p;
            }
        }
    }
    let gamma = GridFn::new(spec.clone(), gamma, "gamma")?;
    let phi = GridFn::new(spec.clone(), phi, "phi")?;
    let residual = (0..spec.len())
        .filter(|&i| mask.inside[i])
        .map(|i| (gamma.values[i] * phi.values[i] - target.values[i]).norm())
        .fold(0.0, f64::max);
    let c = gamma.at_origin();
    Ok(Solution {
        gamma,
        phi,
        case,
        c,
        tau: mask.tau,
        mask,
        residual,
        dropped: path.dropped,
        identified: true,
        floored,
        weight: None,
        g_real: None,
        f_real: None,
    })
}

pub fn solve(m: &MomentSet, case: Case, opts: SolveOptions) -> Result<Solution> {
    let mask = threshold_support(&m.eps1, opts.tau)?;
    solve_on_mask(m, &m.eps1, mask, case, opts.c, 0.0)
}

/// Case (a): `γ = c·exp ∫ κ`, `φ = ε₁/γ`.
pub fn solve_case_a(m: &MomentSet, tau: f64) -> Result<Solution> {
    solve(m, Case::A, SolveOptions::with_tau(tau))
}

/// Case (b): `φ̃ = exp ∫ κ̃`, `γ = ε₁/φ̃`.
pub fn solve_case_b(m: &MomentSet, tau: f64) -> Result<Solution> {
    solve(m, Case::B, SolveOptions::with_tau(tau))
}

/// Normalised second-difference energy `Σ|Δ²u|² / Σ|u|²` along axis 0 of the
/// origin line, restricted to the mask.
fn roughness(u: &[f64]) -> f64 {
    if u.len() < 3 {
        return 0.0;
    }
    let num: f64 = u.windows(3).map(|w| (w[0] - 2.0 * w[1] + w[2]).powi(2)).sum();
    let den: f64 = u.iter().map(|v| v * v).sum();
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Heuristic case choice. Picks (b) when `|ε₁|` drops below `τ` and comes back
/// along some axis through the origin (zeros of `γ` break case (a)), or when
/// `|ε₁|` is smoother than `|ε₂|/|ε₁|` by normalised second-difference energy
/// (a kink in `γ` shows up in the latter). Otherwise (a).
pub fn choose_case(m: &MomentSet, tau: f64) -> (Case, String) {
    let spec = m.spec();
    let o = spec.origin_flat();
    let oidx = spec.origin_index();
    let mut rough_e1 = 0.0;
    let mut rough_ratio = 0.0;
    for k in 0..spec.dim() {
        let stride = spec.stride(k);
        let base = o - oidx[k] * stride;
        let n = spec.n(k);
        let modulus: Vec<f64> = (0..n).map(|j| m.eps1.values[base + j * stride].norm()).collect();
        let above: Vec<bool> = modulus.iter().map(|&v| v > tau).collect();
        let (lo, hi) = run_around(&above, 0, 1, n, oidx[k]);
        if above[..lo].iter().any(|&b| b) || above[hi + 1..].iter().any(|&b| b) {
            return (
                Case::B,
                format!("|eps1| falls below tau = {tau:e} and recovers along axis {}", k + 1),
            );
        }
        let e1: Vec<f64> = (lo..=hi).map(|j| modulus[j]).collect();
        let ratio: Vec<f64> = (lo..=hi)
            .map(|j| m.eps2[k].values[base + j * stride].norm() / modulus[j])
            .collect();
        rough_e1 += roughness(&e1);
        rough_ratio += roughness(&ratio);
    }
    if rough_e1 < rough_ratio {
        (
            Case::B,
            format!("|eps1| smoother than |eps2|/|eps1| (roughness {rough_e1:.3e} < {rough_ratio:.3e})"),
        )
    } else {
        (
            Case::A,
            format!("|eps2|/|eps1| smoother than |eps1| (roughness {rough_ratio:.3e} <= {rough_e1:.3e})"),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    G,
    F,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cleanup {
    /// Clip negative values and renormalise to unit mass.
    Density,
    /// Keep the real part as is.
    Signed,
}

/// Inverse transform of `γ` or `φ` (zero outside the mask) onto `spatial`,
/// which must be conjugate to the frequency grid. Fails when the imaginary
/// part exceeds 1% of the real part in sup norm.
pub fn recover_real_onto(
    sol: &Solution,
    which: Target,
    cleanup: Cleanup,
    spatial: &GridSpec,
) -> Result<GridFn> {
    let src = match which {
        Target::G => &sol.gamma,
        Target::F => &sol.phi,
    };
    let raw = fourier_inverse_onto(src, spatial)?;
    let sup_im = raw.values.iter().map(|v| v.im.abs()).fold(0.0, f64::max);
    let sup_re = raw.values.iter().map(|v| v.re.abs()).fold(0.0, f64::max);
    if sup_im > 0.01 * sup_re {
        return Err(Error::NotReal {
            imag: sup_im,
            real: sup_re,
        });
    }
    let label = match which {
        Target::G => "g_real",
        Target::F => "f_real",
    };
    let mut out = GridFn::from_fn(spatial, label, |_| C64::new(0.0, 0.0));
    for (o, v) in out.values.iter_mut().zip(&raw.values) {
        *o = C64::new(v.re, 0.0);
    }
    if cleanup == Cleanup::Density {
        for v in out.values.iter_mut() {
            v.re = v.re.max(0.0);
        }
        let mass = integrate(&out).re;
        if !(mass > 0.0) {
            return Err(Error::Numerical(format!("{label} has no positive mass")));
        }
        for v in out.values.iter_mut() {
            v.re /= mass;
        }
    }
    Ok(out)
}

/// [`recover_real_onto`] the centred dual grid.
pub fn recover_real(sol: &Solution, which: Target, cleanup: Cleanup) -> Result<GridFn> {
    let spatial = sol.gamma.spec.dual();
    recover_real_onto(sol, which, cleanup, &spatial)
}

/// Fills `g_real` and `f_real` as densities where possible.
pub fn attach_real(sol: &mut Solution, cleanup: Cleanup) -> Result<()> {
    sol.g_real = Some(recover_real(sol, Target::G, cleanup)?);
    sol.f_real = Some(recover_real(sol, Target::F, cleanup)?);
    Ok(())
}
