//! Fourier-domain observables `ε₁`, `ε₂ₖ`, `∂ₖε₁`, estimated from data or
//! built from closed-form laws.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::families::ProductLaw;
use crate::grid::{fourier_forward, GridFn, GridSpec, C64, MAX_DIM};

/// Which structural model generated a sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Model {
    /// Classical error: `x = x* + u_x`, `z = x* + u`.
    Example1,
    /// Berkson errors-in-variables regression.
    Example2,
    /// Two-period panel, estimated like `Example1`.
    Example3,
}

impl fmt::Display for Model {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Model::Example1 => "example1",
            Model::Example2 => "example2",
            Model::Example3 => "example3",
        })
    }
}

impl FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Model> {
        match s.trim().to_ascii_lowercase().as_str() {
            "example1" | "1" => Ok(Model::Example1),
            "example2" | "2" => Ok(Model::Example2),
            "example3" | "3" => Ok(Model::Example3),
            other => Err(Error::Input(format!("unknown model '{other}'"))),
        }
    }
}

/// Observed data. `z` and `x` are row-major `n × dim`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    pub model: Model,
    pub dim: usize,
    pub z: Vec<f64>,
    pub x: Vec<f64>,
    pub y: Option<Vec<f64>>,
    pub seed: Option<u64>,
}

impl SampleSet {
    pub fn new(
        model: Model,
        dim: usize,
        z: Vec<f64>,
        x: Vec<f64>,
        y: Option<Vec<f64>>,
    ) -> Result<SampleSet> {
        if dim == 0 || dim > MAX_DIM {
            return Err(Error::Input(format!("dimension {dim} not supported")));
        }
        if z.len() % dim != 0 || z.len() != x.len() {
            return Err(Error::Input(format!(
                "z has {} values and x has {}; both must be n × {dim}",
                z.len(),
                x.len()
            )));
        }
        let n = z.len() / dim;
        if n < 2 {
            return Err(Error::Input(format!("need at least 2 observations, got {n}")));
        }
        match (&y, model) {
            (None, Model::Example2) => {
                return Err(Error::Input("model example2 requires a y column".into()))
            }
            (Some(y), _) if y.len() != n => {
                return Err(Error::Input(format!("y has {} rows, z has {n}", y.len())))
            }
            _ => {}
        }
        let all_finite = z.iter().chain(&x).chain(y.iter().flatten()).all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Input("sample contains non-finite values".into()));
        }
        Ok(SampleSet {
            model,
            dim,
            z,
            x,
            y,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.z.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn z_row(&self, j: usize) -> &[f64] {
        &self.z[j * self.dim..(j + 1) * self.dim]
    }

    pub fn x_row(&self, j: usize) -> &[f64] {
        &self.x[j * self.dim..(j + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Empirical,
    Oracle,
}

/// `ε₁`, `ε₂ₖ` and `∂ₖε₁` on one frequency grid.
#[derive(Clone, Debug)]
pub struct MomentSet {
    pub eps1: GridFn,
    pub eps2: Vec<GridFn>,
    pub deps1: Vec<GridFn>,
    pub source: Source,
    pub n_samples: Option<usize>,
}

impl MomentSet {
    pub fn new(
        eps1: GridFn,
        eps2: Vec<GridFn>,
        deps1: Vec<GridFn>,
        source: Source,
        n_samples: Option<usize>,
    ) -> Result<MomentSet> {
        let d = eps1.spec.dim();
        if eps2.len() != d || deps1.len() != d {
            return Err(Error::Input(format!(
                "expected {d} components, got {} ε₂ and {} ∂ε₁",
                eps2.len(),
                deps1.len()
            )));
        }
        for g in eps2.iter().chain(&deps1) {
            eps1.spec.ensure_matches(&g.spec)?;
        }
        Ok(MomentSet {
            eps1,
            eps2,
            deps1,
            source,
            n_samples,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.eps1.spec
    }

    pub fn dim(&self) -> usize {
        self.spec().dim()
    }

    /// Builds the system from closed-form transforms: `ε₁ = γφ`,
    /// `ε₂ₖ = -i ∂ₖγ φ`, `∂ₖε₁ = ∂ₖγ φ + γ ∂ₖφ`.
    pub fn from_transforms<G, DG, P, DP>(
        freq: &GridSpec,
        gamma: G,
        dgamma: DG,
        phi: P,
        dphi: DP,
    ) -> Result<MomentSet>
    where
        G: Fn(&[f64]) -> C64,
        DG: Fn(&[f64], usize) -> C64,
        P: Fn(&[f64]) -> C64,
        DP: Fn(&[f64], usize) -> C64,
    {
        let d = freq.dim();
        let mi = C64::new(0.0, -1.0);
        let mut e1 = Vec::with_capacity(freq.len());
        let mut e2 = vec![Vec::with_capacity(freq.len()); d];
        let mut de = vec![Vec::with_capacity(freq.len()); d];
        for (_, p) in freq.points() {
            let t = &p[..d];
            let (g, f) = (gamma(t), phi(t));
            e1.push(g * f);
            for k in 0..d {
                let dg = dgamma(t, k);
                e2[k].push(mi * dg * f);
                de[k].push(dg * f + g * dphi(t, k));
            }
        }
        let eps1 = GridFn::new(freq.clone(), e1, "eps1")?;
        let eps2 = e2
            .into_iter()
            .enumerate()
            .map(|(k, v)| GridFn::new(freq.clone(), v, format!("eps2_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        let deps1 = de
            .into_iter()
            .enumerate()
            .map(|(k, v)| GridFn::new(freq.clone(), v, format!("deps1_{}", k + 1)))
            .collect::<Result<Vec<_>>>()?;
        MomentSet::new(eps1, eps2, deps1, Source::Oracle, None)
    }

    /// Pointwise product of every component with `w`.
    pub fn weighted(&self, w: &GridFn) -> Result<MomentSet> {
        Ok(MomentSet {
            eps1: self.eps1.mul(w)?,
            eps2: self.eps2.iter().map(|e| e.mul(w)).collect::<Result<_>>()?,
            deps1: self.deps1.iter().map(|e| e.mul(w)).collect::<Result<_>>()?,
            source: self.source,
            n_samples: self.n_samples,
        })
    }

    /// Largest violation of `∂ₖε₁ - iε₂ₖ = γ ∂ₖφ` given the true `γ` and `∂φ`.
    /// Used to certify oracle builds.
    pub fn system_defect<G, DP>(&self, gamma: G, dphi: DP) -> f64
    where
        G: Fn(&[f64]) -> C64,
        DP: Fn(&[f64], usize) -> C64,
    {
        let d = self.dim();
        let i = C64::new(0.0, 1.0);
        let mut worst: f64 = 0.0;
        for (idx, p) in self.spec().points() {
            let t = &p[..d];
            for k in 0..d {
                let lhs = self.deps1[k].values[idx] - i * self.eps2[k].values[idx];
                worst = worst.max((lhs - gamma(t) * dphi(t, k)).norm());
            }
        }
        worst
    }
}

/// Noiseless moments for independent `x* ~ g` and `u ~ f`.
pub fn oracle_moments(g: &ProductLaw, f: &ProductLaw, freq: &GridSpec) -> Result<MomentSet> {
    let d = freq.dim();
    if g.dim() != d || f.dim() != d {
        return Err(Error::Family(format!(
            "laws of dimension {} and {} on a {d}-d grid",
            g.dim(),
            f.dim()
        )));
    }
    for fam in g.axes.iter().chain(&f.axes) {
        fam.validate()?;
    }
    let m = MomentSet::from_transforms(
        freq,
        |t| g.cf(t),
        |t, k| g.cf_partial(t, k),
        |t| f.cf(t),
        |t, k| f.cf_partial(t, k),
    )?;
    let defect = m.system_defect(|t| g.cf(t), |t, k| f.cf_partial(t, k));
    if defect > 1e-10 {
        return Err(Error::Numerical(format!("oracle system identity violated by {defect:e}")));
    }
    Ok(m)
}

/// Phases `e^{i (j - o) h v}` for `j = 0..n`, exact at `j = o` and Hermitian
/// about it. Recurrence re-anchored every 32 steps.
fn phase_line(v: f64, h: f64, o: usize, n: usize, out: &mut [C64]) {
    let reach = o.max(n - 1 - o);
    let step = C64::from_polar(1.0, h * v);
    let mut p = C64::new(1.0, 0.0);
    out[o] = p;
    for m in 1..=reach {
        p = if m % 32 == 0 {
            C64::from_polar(1.0, m as f64 * h * v)
        } else {
            p * step
        };
        if o + m < n {
            out[o + m] = p;
        }
        if m <= o {
            out[o - m] = p.conj();
        }
    }
}

/// `S_c(ζ) = Σⱼ w_c[j] e^{iζ·zⱼ}` for every weight column `c`.
fn phase_sums(z: &[f64], weights: &[Vec<f64>], freq: &GridSpec) -> Vec<Vec<C64>> {
    let d = freq.dim();
    let n_obs = z.len() / d;
    let len = freq.len();
    let ncol = weights.len();
    let axes: Vec<(f64, usize, usize)> = (0..d)
        .map(|k| (freq.step(k), freq.axis(k).origin_index(), freq.n(k)))
        .collect();
    let zero = C64::new(0.0, 0.0);

    let chunk = 256;
    (0..n_obs.div_ceil(chunk))
        .into_par_iter()
        .fold(
            || vec![vec![zero; len]; ncol],
            |mut acc, c| {
                let mut lines: Vec<Vec<C64>> = axes.iter().map(|a| vec![zero; a.2]).collect();
                for j in c * chunk..((c + 1) * chunk).min(n_obs) {
                    for (k, &(h, o, n)) in axes.iter().enumerate() {
                        phase_line(z[j * d + k], h, o, n, &mut lines[k]);
                    }
                    for (col, w) in acc.iter_mut().zip(weights) {
                        let wj = w[j];
                        if wj == 0.0 {
                            continue;
                        }
                        if d == 1 {
                            for (a, p) in col.iter_mut().zip(&lines[0]) {
                                *a += p * wj;
                            }
                        } else {
                            let n2 = axes[1].2;
                            for (i1, p1) in lines[0].iter().enumerate() {
                                let p1w = p1 * wj;
                                let row = &mut col[i1 * n2..(i1 + 1) * n2];
                                for (a, p2) in row.iter_mut().zip(&lines[1]) {
                                    *a += p1w * p2;
                                }
                            }
                        }
                    }
                }
                acc
            },
        )
        .reduce(
            || vec![vec![zero; len]; ncol],
            |mut a, b| {
                for (ca, cb) in a.iter_mut().zip(b) {
                    for (x, y) in ca.iter_mut().zip(cb) {
                        *x += y;
                    }
                }
                a
            },
        )
}

fn check_points(z: &[f64], freq: &GridSpec) -> Result<usize> {
    let d = freq.dim();
    if z.is_empty() {
        return Err(Error::EmptySample);
    }
    if z.len() % d != 0 {
        return Err(Error::Input(format!("{} values do not form rows of {d}", z.len())));
    }
    Ok(z.len() / d)
}

fn column(data: &[f64], d: usize, k: usize) -> Result<Vec<f64>> {
    if k >= d {
        return Err(Error::Input(format!("component {} of a {d}-d sample", k + 1)));
    }
    Ok(data.iter().skip(k).step_by(d).copied().collect())
}

fn finish(spec: &GridSpec, sums: Vec<C64>, n: usize, factor: C64, label: String) -> GridFn {
    let n = n as f64;
    GridFn {
        spec: spec.clone(),
        values: sums.into_iter().map(|v| (v * factor).unscale(n)).collect(),
        label,
    }
}

/// Empirical characteristic function `(1/n) Σⱼ e^{iζ·zⱼ}`; `z` is row-major
/// with `freq.dim()` columns.
pub fn ecf(z: &[f64], freq: &GridSpec) -> Result<GridFn> {
    let n = check_points(z, freq)?;
    let sums = phase_sums(z, &[vec![1.0; n]], freq).remove(0);
    Ok(finish(freq, sums, n, C64::new(1.0, 0.0), "eps1".into()))
}

/// `(1/n) Σⱼ xⱼₖ e^{iζ·zⱼ}`.
pub fn moment_ecf(x: &[f64], z: &[f64], k: usize, freq: &GridSpec) -> Result<GridFn> {
    let n = check_points(z, freq)?;
    if x.len() != z.len() {
        return Err(Error::Input("x and z are not aligned".into()));
    }
    let w = column(x, freq.dim(), k)?;
    let sums = phase_sums(z, &[w], freq).remove(0);
    Ok(finish(freq, sums, n, C64::new(1.0, 0.0), format!("eps2_{}", k + 1)))
}

/// Exact derivative of the empirical characteristic function,
/// `(1/n) Σⱼ i zⱼₖ e^{iζ·zⱼ}`.
pub fn ecf_derivative(z: &[f64], k: usize, freq: &GridSpec) -> Result<GridFn> {
    let n = check_points(z, freq)?;
    let w = column(z, freq.dim(), k)?;
    let sums = phase_sums(z, &[w], freq).remove(0);
    Ok(finish(freq, sums, n, C64::new(0.0, 1.0), format!("deps1_{}", k + 1)))
}

/// All observables for the classical-error models in a single pass over the
/// sample.
pub fn empirical_moments(sample: &SampleSet, freq: &GridSpec) -> Result<MomentSet> {
    let d = freq.dim();
    if sample.dim != d {
        return Err(Error::SpecMismatch(format!(
            "{}-d sample on a {d}-d grid",
            sample.dim
        )));
    }
    if sample.model == Model::Example2 {
        return Err(Error::Input(
            "example2 moments need regression_moments (conditional means)".into(),
        ));
    }
    let n = sample.len();
    let mut cols = vec![vec![1.0; n]];
    for k in 0..d {
        cols.push(column(&sample.x, d, k)?);
    }
    for k in 0..d {
        cols.push(column(&sample.z, d, k)?);
    }
    let mut sums = phase_sums(&sample.z, &cols, freq).into_iter();
    let one = C64::new(1.0, 0.0);
    let eps1 = finish(freq, sums.next().unwrap(), n, one, "eps1".into());
    let eps2 = (0..d)
        .map(|k| finish(freq, sums.next().unwrap(), n, one, format!("eps2_{}", k + 1)))
        .collect();
    let deps1 = (0..d)
        .map(|k| {
            let s = sums.next().unwrap();
            finish(freq, s, n, C64::new(0.0, 1.0), format!("deps1_{}", k + 1))
        })
        .collect();
    MomentSet::new(eps1, eps2, deps1, Source::Empirical, Some(n))
}

/// Output of the Berkson-model estimator: the moments plus the smoothed
/// conditional means they were computed from.
#[derive(Clone, Debug)]
pub struct RegressionMoments {
    pub moments: MomentSet,
    /// Windowed `E(y|z)` on the spatial grid.
    pub w1: GridFn,
    /// Windowed `E(xₖ y|z)`.
    pub w2: Vec<GridFn>,
    pub window: GridFn,
    pub bandwidth: f64,
    /// `y` is constant: the regression function is a constant, whose transform
    /// is not a function. Such input should go through the regularized solver.
    pub degenerate: bool,
}

/// Silverman-style rule `1.06 σ̂ n^{-1/(d+4)}`, with `σ̂` the average over axes
/// of `min(sd, IQR/1.34)`.
pub fn silverman_bandwidth(z: &[f64], d: usize) -> f64 {
    let n = z.len() / d;
    let mut spread = 0.0;
    for k in 0..d {
        let mut col: Vec<f64> = z.iter().skip(k).step_by(d).copied().collect();
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1).max(1) as f64).sqrt();
        col.sort_by(f64::total_cmp);
        let q = |p: f64| col[((p * (n - 1) as f64).round() as usize).min(n - 1)];
        let iqr = (q(0.75) - q(0.25)) / 1.34;
        spread += if iqr > 0.0 { sd.min(iqr) } else { sd };
    }
    1.06 * (spread / d as f64) * (n as f64).powf(-1.0 / (d as f64 + 4.0))
}

/// Raised-cosine taper over the outer `frac` of `[lo, hi]`, zero outside.
fn edge_window(v: f64, lo: f64, hi: f64, frac: f64) -> f64 {
    if v < lo || v > hi {
        return 0.0;
    }
    let ramp = frac * (hi - lo);
    let t = ((v - lo).min(hi - v) / ramp).min(1.0);
    (0.5 * PI * t).sin().powi(2)
}

/// Berkson-model observables: Nadaraya–Watson estimates of `E(y|z)` and
/// `E(xₖy|z)` on the spatial grid conjugate to `freq`, a raised-cosine window
/// over the outer 10% of the data range, then forward transforms. `∂ₖε₁` is the
/// transform of `i zₖ w₁`.
pub fn regression_moments(
    y: &[f64],
    x: &[f64],
    z: &[f64],
    freq: &GridSpec,
    bandwidth: Option<f64>,
) -> Result<RegressionMoments> {
    let d = freq.dim();
    let n = check_points(z, freq)?;
    if x.len() != z.len() || y.len() != n {
        return Err(Error::Input("y, x and z are not aligned".into()));
    }
    let spatial = freq.dual();
    if !spatial.dual().matches(freq) {
        return Err(Error::Grid(
            "regression moments need a frequency grid centred at index n/2".into(),
        ));
    }
    let bw = bandwidth.unwrap_or_else(|| silverman_bandwidth(z, d));
    if !(bw > 0.0 && bw.is_finite()) {
        return Err(Error::Input(format!("bandwidth must be positive, got {bw}")));
    }

    let mut lo = [0.0; MAX_DIM];
    let mut hi = [0.0; MAX_DIM];
    for k in 0..d {
        let col = z.iter().skip(k).step_by(d);
        lo[k] = col.clone().copied().fold(f64::INFINITY, f64::min);
        hi[k] = col.copied().fold(f64::NEG_INFINITY, f64::max);
        if hi[k] <= lo[k] {
            return Err(Error::Input(format!("z component {} is constant", k + 1)));
        }
    }

    // Observations sorted by the first coordinate for windowed lookups.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| z[a * d].total_cmp(&z[b * d]));
    let z0: Vec<f64> = order.iter().map(|&j| z[j * d]).collect();
    let reach = 4.0 * bw;
    let inv2 = 1.0 / (2.0 * bw * bw);

    let cells: Vec<(usize, [f64; MAX_DIM])> = spatial.points().collect();
    let est: Vec<Option<(f64, f64, [f64; MAX_DIM])>> = cells
        .par_iter()
        .map(|(_, p)| {
            let inside = (0..d).all(|k| p[k] >= lo[k] && p[k] <= hi[k]);
            if !inside {
                return Some((0.0, 0.0, [0.0; MAX_DIM]));
            }
            let start = z0.partition_point(|&v| v < p[0] - reach);
            let end = z0.partition_point(|&v| v <= p[0] + reach);
            let (mut sw, mut sy) = (0.0, 0.0);
            let mut sxy = [0.0; MAX_DIM];
            for &j in &order[start..end] {
                let r2: f64 = (0..d).map(|k| (z[j * d + k] - p[k]).powi(2)).sum();
                if r2 > reach * reach {
                    continue;
                }
                let w = (-r2 * inv2).exp();
                sw += w;
                sy += w * y[j];
                for k in 0..d {
                    sxy[k] += w * x[j * d + k] * y[j];
                }
            }
            if sw <= 0.0 {
                return None;
            }
            for v in sxy.iter_mut() {
                *v /= sw;
            }
            Some((1.0, sy / sw, sxy))
        })
        .collect();

    let empty = est.iter().filter(|e| e.is_none()).count();
    if empty > 0 {
        return Err(Error::Bandwidth {
            bandwidth: bw,
            cells: empty,
        });
    }

    let window = GridFn::from_real(&spatial, "window", |p| {
        (0..d).map(|k| edge_window(p[k], lo[k], hi[k], 0.1)).product()
    });
    let mut w1 = Vec::with_capacity(cells.len());
    let mut w2 = vec![Vec::with_capacity(cells.len()); d];
    let mut zw1 = vec![Vec::with_capacity(cells.len()); d];
    for ((idx, p), e) in cells.iter().zip(&est) {
        let (_, m1, m2) = e.expect("checked above");
        let w = window.values[*idx].re;
        w1.push(C64::new(w * m1, 0.0));
        for k in 0..d {
            w2[k].push(C64::new(w * m2[k], 0.0));
            zw1[k].push(C64::new(0.0, p[k] * w * m1));
        }
    }
    let w1 = GridFn::new(spatial.clone(), w1, "w1")?;
    let w2: Vec<GridFn> = w2
        .into_iter()
        .enumerate()
        .map(|(k, v)| GridFn::new(spatial.clone(), v, format!("w2_{}", k + 1)))
        .collect::<Result<_>>()?;

    let eps1 = fourier_forward(&w1).with_label("eps1");
    let eps2: Vec<GridFn> = w2
        .iter()
        .enumerate()
        .map(|(k, w)| fourier_forward(w).with_label(format!("eps2_{}", k + 1)))
        .collect();
    let deps1 = zw1
        .into_iter()
        .enumerate()
        .map(|(k, v)| {
            let g = GridFn::new(spatial.clone(), v, "izw1")?;
            Ok(fourier_forward(&g).with_label(format!("deps1_{}", k + 1)))
        })
        .collect::<Result<Vec<_>>>()?;
    let spec_fix = |g: GridFn| GridFn {
        spec: freq.clone(),
        ..g
    };
    let moments = MomentSet::new(
        spec_fix(eps1),
        eps2.into_iter().map(spec_fix).collect(),
        deps1.into_iter().map(spec_fix).collect(),
        Source::Empirical,
        Some(n),
    )?;
    let y0 = y[0];
    let degenerate = y.iter().all(|&v| v == y0);
    Ok(RegressionMoments {
        moments,
        w1,
        w2,
        window,
        bandwidth: bw,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::Family;

    fn line() -> GridSpec {
        GridSpec::line(-8.0, 8.0, 256).unwrap()
    }

    #[test]
    fn ecf_of_origin_is_one() {
        let e = ecf(&[0.0], &line()).unwrap();
        assert!(e.values.iter().all(|v| *v == C64::new(1.0, 0.0)));
    }

    #[test]
    fn ecf_two_points_is_cosine() {
        let g = line();
        let e = ecf(&[1.0, -1.0], &g).unwrap();
        let d = ecf_derivative(&[1.0, -1.0], 0, &g).unwrap();
        for (i, p) in g.points() {
            assert!((e.values[i] - C64::new(p[0].cos(), 0.0)).norm() < 1e-12);
            assert!((d.values[i] - C64::new(-p[0].sin(), 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn ecf_is_one_at_origin_and_hermitian() {
        let g = line();
        let z: Vec<f64> = (0..500).map(|j| ((j * 37 % 101) as f64 - 50.0) / 13.7).collect();
        let e = ecf(&z, &g).unwrap();
        let o = g.origin_flat();
        assert_eq!(e.values[o], C64::new(1.0, 0.0));
        for m in 1..128 {
            assert!((e.values[o - m] - e.values[o + m].conj()).norm() < 1e-12);
        }
    }

    #[test]
    fn empty_sample_is_rejected() {
        assert!(matches!(ecf(&[], &line()), Err(Error::EmptySample)));
    }

    #[test]
    fn moment_with_x_equal_z_is_derivative_times_minus_i() {
        let g = line();
        let z = [0.3, -1.2, 2.5, 0.0];
        let m = moment_ecf(&z, &z, 0, &g).unwrap();
        let d = ecf_derivative(&z, 0, &g).unwrap();
        for i in 0..g.len() {
            assert!((m.values[i] - d.values[i] * C64::new(0.0, -1.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn two_d_phase_sums_match_direct_evaluation() {
        let g = GridSpec::square(-4.0, 4.0, 16).unwrap();
        let z = [0.5, -0.25, -1.0, 2.0, 3.0, 0.1];
        let e = ecf(&z, &g).unwrap();
        for (i, p) in g.points() {
            let direct: C64 = z
                .chunks(2)
                .map(|r| C64::from_polar(1.0, p[0] * r[0] + p[1] * r[1]))
                .sum::<C64>()
                / 3.0;
            assert!((e.values[i] - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn oracle_examples() {
        let g = line();
        let lap = ProductLaw::univariate(Family::Laplace { loc: 0.0, scale: 1.0 });
        let m = oracle_moments(&ProductLaw::univariate(Family::zero()), &lap, &g).unwrap();
        for (i, p) in g.points() {
            assert!((m.eps1.values[i].re - 1.0 / (1.0 + p[0] * p[0])).abs() < 1e-15);
            assert!(m.eps2[0].values[i].norm() < 1e-15);
        }
        let n01 = ProductLaw::univariate(Family::Gaussian { mean: 0.0, var: 1.0 });
        let m = oracle_moments(&n01, &n01, &g).unwrap();
        for (i, p) in g.points() {
            let e = (-p[0] * p[0]).exp();
            assert!((m.eps1.values[i].re - e).abs() < 1e-15);
            let want = C64::new(0.0, -1.0) * (-p[0]) * (-0.5 * p[0] * p[0]).exp()
                * (-0.5 * p[0] * p[0]).exp();
            assert!((m.eps2[0].values[i] - want).norm() < 1e-15);
        }
        let mix = ProductLaw::univariate(Family::Mixture {
            weight: 0.5,
            mean1: -1.0,
            var1: 1.0,
            mean2: 1.0,
            var2: 1.0,
        });
        let m = oracle_moments(&mix, &lap, &g).unwrap();
        for (i, p) in g.points() {
            let t = p[0];
            let want = t.cos() * (-0.5 * t * t).exp() / (1.0 + t * t);
            assert!((m.eps1.values[i] - C64::new(want, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn oracle_rejects_dimension_mismatch() {
        let n01 = ProductLaw::univariate(Family::Gaussian { mean: 0.0, var: 1.0 });
        let sq = GridSpec::square(-4.0, 4.0, 16).unwrap();
        assert!(matches!(oracle_moments(&n01, &n01, &sq), Err(Error::Family(_))));
    }

    #[test]
    fn sample_set_validation() {
        assert!(SampleSet::new(Model::Example1, 1, vec![1.0], vec![1.0], None).is_err());
        assert!(SampleSet::new(Model::Example2, 1, vec![1.0, 2.0], vec![1.0, 2.0], None).is_err());
        let s = SampleSet::new(Model::Example1, 2, vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 4], None)
            .unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.z_row(1), &[3.0, 4.0]);
        assert!("example3".parse::<Model>().is_ok());
        assert!("example9".parse::<Model>().is_err());
    }

    #[test]
    fn edge_window_profile() {
        assert_eq!(edge_window(0.0, -1.0, 1.0, 0.1), 1.0);
        assert_eq!(edge_window(-1.0, -1.0, 1.0, 0.1), 0.0);
        assert_eq!(edge_window(1.5, -1.0, 1.0, 0.1), 0.0);
        assert!((edge_window(-0.9, -1.0, 1.0, 0.1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn tiny_bandwidth_is_reported() {
        let g = GridSpec::line(-16.0, 16.0, 256).unwrap();
        let z = [-3.0, 3.0];
        let err = regression_moments(&[1.0, 2.0], &z, &z, &g, Some(1e-3)).unwrap_err();
        assert!(matches!(err, Error::Bandwidth { .. }));
    }
}
