//! Uniform grids on R^d (d = 1, 2) and the functions sampled on them.
//!
//! A [`GridSpec`] always contains the origin as an exact grid point, and the
//! number of points per axis is a power of two. The continuous Fourier
//! transform uses the kernel `e^{+i ζ·x}`:
//!
//! ```text
//! F(ζ) = ∫ e^{iζ·x} f(x) dx,        f(x) = (2π)^{-d} ∫ e^{-iζ·x} F(ζ) dζ
//! ```
//!
//! With this convention `Ft(x_k f) = -i ∂_k Ft(f)`, which is what makes the
//! ratio `i ε₂ₖ / ε₁` the log-derivative of the latent transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const MAX_DIM: usize = 2;

/// A grid point; only the first `dim` coordinates are meaningful.
pub type Point = [f64; MAX_DIM];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.lo + i as f64 * self.step()
    }

    pub fn origin_index(&self) -> usize {
        (-self.lo / self.step()).round() as usize
    }

    fn dual(&self) -> Axis {
        let dz = 2.0 * PI / (self.hi - self.lo);
        let half = (self.n / 2) as f64;
        Axis {
            lo: -half * dz,
            hi: half * dz,
            n: self.n,
        }
    }
}

/// Discretized domain: per-axis bounds and point counts.
///
/// Points are `lo + j·h` for `j = 0..n`, `h = (hi - lo)/n`; `hi` itself is not
/// sampled.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpecRepr", into = "GridSpecRepr")]
pub struct GridSpec {
    axes: Vec<Axis>,
}

#[derive(Serialize, Deserialize)]
struct GridSpecRepr {
    dim: usize,
    lo: Vec<f64>,
    hi: Vec<f64>,
    n: Vec<usize>,
}

impl TryFrom<GridSpecRepr> for GridSpec {
    type Error = Error;

    fn try_from(r: GridSpecRepr) -> Result<Self> {
        make_grid(r.dim, &r.lo, &r.hi, &r.n)
    }
}

impl From<GridSpec> for GridSpecRepr {
    fn from(g: GridSpec) -> Self {
        GridSpecRepr {
            dim: g.dim(),
            lo: g.axes.iter().map(|a| a.lo).collect(),
            hi: g.axes.iter().map(|a| a.hi).collect(),
            n: g.axes.iter().map(|a| a.n).collect(),
        }
    }
}

/// Builds a validated grid.
pub fn make_grid(dim: usize, lo: &[f64], hi: &[f64], n: &[usize]) -> Result<GridSpec> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Grid(format!("dimension {dim} not in 1..={MAX_DIM}")));
    }
    if lo.len() != dim || hi.len() != dim || n.len() != dim {
        return Err(Error::Grid(format!(
            "expected {dim} bounds and sizes, got lo={}, hi={}, n={}",
            lo.len(),
            hi.len(),
            n.len()
        )));
    }
    let mut axes = Vec::with_capacity(dim);
    for k in 0..dim {
        let axis = Axis {
            lo: lo[k],
            hi: hi[k],
            n: n[k],
        };
        if !axis.n.is_power_of_two() {
            return Err(Error::Grid(format!("n = {} is not a power of two", axis.n)));
        }
        if axis.n < 16 {
            return Err(Error::Grid(format!("n = {} is below the minimum of 16", axis.n)));
        }
        if !(axis.lo.is_finite() && axis.hi.is_finite()) || axis.lo >= axis.hi {
            return Err(Error::Grid(format!("bounds [{}, {}] are not ordered", axis.lo, axis.hi)));
        }
        if !(axis.lo < 0.0 && axis.hi > 0.0) {
            return Err(Error::Grid(format!(
                "bounds [{}, {}] do not contain the origin",
                axis.lo, axis.hi
            )));
        }
        let j = -axis.lo / axis.step();
        if (j - j.round()).abs() > 1e-9 * j.max(1.0) {
            return Err(Error::Grid(format!(
                "origin is not a grid point on axis {k} (offset {j} steps)"
            )));
        }
        axes.push(axis);
    }
    Ok(GridSpec { axes })
}

impl GridSpec {
    pub fn line(lo: f64, hi: f64, n: usize) -> Result<GridSpec> {
        make_grid(1, &[lo], &[hi], &[n])
    }

    pub fn square(lo: f64, hi: f64, n: usize) -> Result<GridSpec> {
        make_grid(2, &[lo, lo], &[hi, hi], &[n, n])
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn axis(&self, k: usize) -> &Axis {
        &self.axes[k]
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn n(&self, k: usize) -> usize {
        self.axes[k].n
    }

    pub fn step(&self, k: usize) -> f64 {
        self.axes[k].step()
    }

    pub fn len(&self) -> usize {
        self.axes.iter().map(|a| a.n).product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Volume element `Π h_k`.
    pub fn cell_volume(&self) -> f64 {
        self.axes.iter().map(Axis::step).product()
    }

    /// Row-major strides: axis 0 is the slowest.
    pub fn stride(&self, k: usize) -> usize {
        self.axes[k + 1..].iter().map(|a| a.n).product()
    }

    pub fn origin_index(&self) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for (k, a) in self.axes.iter().enumerate() {
            idx[k] = a.origin_index();
        }
        idx
    }

    pub fn origin_flat(&self) -> usize {
        self.flat(self.origin_index())
    }

    pub fn flat(&self, idx: [usize; MAX_DIM]) -> usize {
        (0..self.dim()).map(|k| idx[k] * self.stride(k)).sum()
    }

    pub fn unflat(&self, mut flat: usize) -> [usize; MAX_DIM] {
        let mut idx = [0; MAX_DIM];
        for k in (0..self.dim()).rev() {
            let n = self.axes[k].n;
            idx[k] = flat % n;
            flat /= n;
        }
        idx
    }

    pub fn point(&self, flat: usize) -> Point {
        let idx = self.unflat(flat);
        let mut p = [0.0; MAX_DIM];
        for (k, a) in self.axes.iter().enumerate() {
            p[k] = a.coord(idx[k]);
        }
        p
    }

    /// Centered grid on the conjugate variable: spacing `2π/(hi - lo)` and
    /// origin at index `n/2` on every axis.
    pub fn dual(&self) -> GridSpec {
        GridSpec {
            axes: self.axes.iter().map(Axis::dual).collect(),
        }
    }

    /// Same shape and (up to rounding) the same coordinates.
    pub fn matches(&self, other: &GridSpec) -> bool {
        self.dim() == other.dim()
            && self.axes.iter().zip(&other.axes).all(|(a, b)| {
                let tol = 1e-9 * a.step();
                a.n == b.n && (a.lo - b.lo).abs() <= tol && (a.hi - b.hi).abs() <= tol
            })
    }

    pub fn ensure_matches(&self, other: &GridSpec) -> Result<()> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(Error::SpecMismatch(format!("{self:?} vs {other:?}")))
        }
    }

    /// Half-width of the largest origin-centred cube inside the grid.
    pub fn inner_radius(&self) -> f64 {
        self.axes
            .iter()
            .map(|a| (-a.lo).min(a.hi - a.step()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Iterator over `(flat index, point)`.
    pub fn points(&self) -> impl Iterator<Item = (usize, Point)> + '_ {
        (0..self.len()).map(move |i| (i, self.point(i)))
    }
}

/// A complex function sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridFn {
    pub spec: GridSpec,
    pub values: Vec<C64>,
    pub label: String,
}

impl GridFn {
    pub fn new(spec: GridSpec, values: Vec<C64>, label: impl Into<String>) -> Result<GridFn> {
        if values.len() != spec.len() {
            return Err(Error::Input(format!(
                "{} values for a grid of {} points",
                values.len(),
                spec.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !(v.re.is_finite() && v.im.is_finite())) {
            return Err(Error::Numerical(format!("non-finite value at flat index {i}")));
        }
        Ok(GridFn {
            spec,
            values,
            label: label.into(),
        })
    }

    pub fn zeros(spec: &GridSpec, label: impl Into<String>) -> GridFn {
        GridFn {
            values: vec![C64::new(0.0, 0.0); spec.len()],
            spec: spec.clone(),
            label: label.into(),
        }
    }

    pub fn from_fn<F>(spec: &GridSpec, label: impl Into<String>, f: F) -> GridFn
    where
        F: Fn(&[f64]) -> C64,
    {
        let d = spec.dim();
        let values = spec.points().map(|(_, p)| f(&p[..d])).collect();
        GridFn {
            spec: spec.clone(),
            values,
            label: label.into(),
        }
    }

    pub fn from_real<F>(spec: &GridSpec, label: impl Into<String>, f: F) -> GridFn
    where
        F: Fn(&[f64]) -> f64,
    {
        Self::from_fn(spec, label, |x| C64::new(f(x), 0.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn at_origin(&self) -> C64 {
        self.values[self.spec.origin_flat()]
    }

    pub fn with_label(mut self, label: impl Into<String>) -> GridFn {
        self.label = label.into();
        self
    }

    pub fn map(&self, label: impl Into<String>, f: impl Fn(C64) -> C64) -> GridFn {
        GridFn {
            spec: self.spec.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            label: label.into(),
        }
    }

    pub fn zip_with(&self, other: &GridFn, f: impl Fn(C64, C64) -> C64) -> Result<GridFn> {
        self.spec.ensure_matches(&other.spec)?;
        Ok(GridFn {
            spec: self.spec.clone(),
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
            label: self.label.clone(),
        })
    }

    pub fn sub(&self, other: &GridFn) -> Result<GridFn> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &GridFn) -> Result<GridFn> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn mul(&self, other: &GridFn) -> Result<GridFn> {
        self.zip_with(other, |a, b| a * b)
    }

    pub fn scale(&self, s: C64) -> GridFn {
        self.map(self.label.clone(), |v| v * s)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// `sup |self - other|` over the points selected by `keep`.
    pub fn sup_diff_where(&self, other: &GridFn, keep: impl Fn(usize, &[f64]) -> bool) -> f64 {
        let d = self.spec.dim();
        self.spec
            .points()
            .filter(|(i, p)| keep(*i, &p[..d]))
            .map(|(i, _)| (self.values[i] - other.values[i]).norm())
            .fold(0.0, f64::max)
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.re).collect()
    }
}

/// `out_a = scale · Σ_b in_b · exp(s·2πi (a - o_out)(b - o_in) / n)` along one axis.
fn transform_axis(
    data: &mut [C64],
    spec: &GridSpec,
    axis: usize,
    sign: f64,
    o_in: usize,
    o_out: usize,
    scale: f64,
    planner: &mut FftPlanner<f64>,
) {
    let n = spec.n(axis);
    let stride = spec.stride(axis);
    let direction = if sign > 0.0 {
        FftDirection::Inverse
    } else {
        FftDirection::Forward
    };
    let fft = planner.plan_fft(n, direction);
    let unit = |m: usize| {
        let theta = sign * 2.0 * PI * (m % n) as f64 / n as f64;
        C64::new(theta.cos(), theta.sin())
    };
    let pre: Vec<C64> = (0..n).map(|b| unit(n - (o_out * b) % n)).collect();
    // post_a = exp(s·2πi (o_out·o_in - a·o_in)/n)
    let post: Vec<C64> = (0..n)
        .map(|a| {
            let m = (o_out * o_in + n * n - (a * o_in) % n) % n;
            unit(m) * scale
        })
        .collect();

    let outer = data.len() / (n * stride);
    let mut line = vec![C64::new(0.0, 0.0); n];
    for o in 0..outer {
        for s in 0..stride {
            let base = o * n * stride + s;
            for b in 0..n {
                line[b] = data[base + b * stride] * pre[b];
            }
            fft.process(&mut line);
            for a in 0..n {
                data[base + a * stride] = line[a] * post[a];
            }
        }
    }
}

/// `F(ζ) ≈ ∫ e^{iζ·x} f(x) dx` on the dual grid of `f.spec`.
pub fn fourier_forward(f: &GridFn) -> GridFn {
    let dual = f.spec.dual();
    let mut data = f.values.clone();
    let mut planner = FftPlanner::new();
    for k in 0..f.spec.dim() {
        let o_in = f.spec.axis(k).origin_index();
        let o_out = dual.axis(k).origin_index();
        transform_axis(&mut data, &f.spec, k, 1.0, o_in, o_out, f.spec.step(k), &mut planner);
    }
    GridFn {
        spec: dual,
        values: data,
        label: format!("Ft[{}]", f.label),
    }
}

/// Inverse transform onto the centered dual grid of `big_f.spec`.
pub fn fourier_inverse(big_f: &GridFn) -> GridFn {
    let target = big_f.spec.dual();
    fourier_inverse_onto(big_f, &target).expect("dual grid is always compatible")
}

/// Inverse transform onto an explicit spatial grid whose spacing is conjugate to
/// the frequency spacing of `big_f` (`h·dζ·n = 2π` per axis).
pub fn fourier_inverse_onto(big_f: &GridFn, spatial: &GridSpec) -> Result<GridFn> {
    let freq = &big_f.spec;
    if spatial.dim() != freq.dim() {
        return Err(Error::SpecMismatch("dimension".into()));
    }
    for k in 0..freq.dim() {
        let (a, b) = (spatial.axis(k), freq.axis(k));
        let product = a.step() * b.step() * a.n as f64;
        if a.n != b.n || (product - 2.0 * PI).abs() > 1e-9 {
            return Err(Error::SpecMismatch(format!(
                "axis {k}: spatial grid is not conjugate to the frequency grid"
            )));
        }
    }
    let mut data = big_f.values.clone();
    let mut planner = FftPlanner::new();
    for k in 0..freq.dim() {
        let o_in = freq.axis(k).origin_index();
        let o_out = spatial.axis(k).origin_index();
        let scale = freq.step(k) / (2.0 * PI);
        transform_axis(&mut data, freq, k, -1.0, o_in, o_out, scale, &mut planner);
    }
    Ok(GridFn {
        spec: spatial.clone(),
        values: data,
        label: format!("Ft^-1[{}]", big_f.label),
    })
}

/// Product trapezoid weight of a grid point (half weight on the first and last
/// sample of each axis).
pub fn trapezoid_weight(spec: &GridSpec, flat: usize) -> f64 {
    let idx = spec.unflat(flat);
    let mut w = 1.0;
    for (k, a) in spec.axes().iter().enumerate() {
        let edge = idx[k] == 0 || idx[k] == a.n - 1;
        w *= if edge { 0.5 * a.step() } else { a.step() };
    }
    w
}

/// Trapezoid quadrature of a grid function.
pub fn integrate(f: &GridFn) -> C64 {
    f.values
        .iter()
        .enumerate()
        .map(|(i, v)| v * trapezoid_weight(&f.spec, i))
        .sum()
}

/// Trapezoid quadrature of `|f|`.
pub fn integrate_abs(f: &GridFn) -> f64 {
    f.values
        .iter()
        .enumerate()
        .map(|(i, v)| v.norm() * trapezoid_weight(&f.spec, i))
        .sum()
}

/// Weak pairing `⟨b, ψ⟩ = ∫ b ψ`.
pub fn pair(b: &GridFn, psi: &TestFn) -> Result<C64> {
    b.spec.ensure_matches(&psi.values.spec)?;
    Ok(b.values
        .iter()
        .zip(&psi.values.values)
        .enumerate()
        .map(|(i, (x, y))| x * y * trapezoid_weight(&b.spec, i))
        .sum())
}

/// Cumulative integral along `axis`, anchored to zero at the origin and
/// extended outward in both directions, for every line parallel to `axis`.
pub fn line_integral_cumulative(kappa: &GridFn, axis: usize) -> GridFn {
    let spec = &kappa.spec;
    let n = spec.n(axis);
    let stride = spec.stride(axis);
    let h = spec.step(axis);
    let o = spec.axis(axis).origin_index();
    let mut out = vec![C64::new(0.0, 0.0); kappa.len()];
    let outer = kappa.len() / (n * stride);
    let mut line = vec![C64::new(0.0, 0.0); n];
    for a in 0..outer {
        for s in 0..stride {
            let base = a * n * stride + s;
            for j in 0..n {
                line[j] = kappa.values[base + j * stride];
            }
            let cum = cumulative_segment(&line, h, o, 0, n - 1);
            for j in 0..n {
                out[base + j * stride] = cum[j];
            }
        }
    }
    GridFn {
        spec: spec.clone(),
        values: out,
        label: format!("cumint[{}]", kappa.label),
    }
}

/// Cumulative integral of `f[start..=end]` measured from index `origin`.
///
/// Trapezoid rule with the Euler–Maclaurin end correction
/// `-h²/12·(f'(b) - f'(a))`, derivatives taken by fourth-order differences
/// inside the segment (one-sided four-point stencils at its ends). Exact for
/// cubics once the segment has four points, `O(h⁴)` for smooth integrands,
/// and exactly zero at the origin.
pub fn cumulative_segment(f: &[C64], h: f64, origin: usize, start: usize, end: usize) -> Vec<C64> {
    debug_assert!(start <= origin && origin <= end && end < f.len());
    let seg = &f[start..=end];
    let len = seg.len();
    let os = origin - start;
    let deriv: Vec<C64> = if len >= 4 {
        let last = len - 1;
        (0..len)
            .map(|i| {
                if i == 0 {
                    (seg[1] * 18.0 - seg[0] * 11.0 - seg[2] * 9.0 + seg[3] * 2.0) / (6.0 * h)
                } else if i == 1 {
                    (seg[2] * 6.0 - seg[0] * 2.0 - seg[1] * 3.0 - seg[3]) / (6.0 * h)
                } else if i == last {
                    (seg[last] * 11.0 - seg[last - 1] * 18.0 + seg[last - 2] * 9.0 - seg[last - 3] * 2.0) / (6.0 * h)
                } else if i == last - 1 {
                    (seg[last] * 2.0 + seg[i] * 3.0 - seg[i - 1] * 6.0 + seg[i - 2]) / (6.0 * h)
                } else {
                    (seg[i - 2] - seg[i + 2] + (seg[i + 1] - seg[i - 1]) * 8.0) / (12.0 * h)
                }
            })
            .collect()
    } else if len == 3 {
        let d = (seg[2] - seg[0]) / (2.0 * h);
        vec![(seg[1] * 4.0 - seg[0] * 3.0 - seg[2]) / (2.0 * h), d, (seg[2] * 3.0 - seg[1] * 4.0 + seg[0]) / (2.0 * h)]
    } else {
        vec![C64::new(0.0, 0.0); len]
    };
    let corr = h * h / 12.0;
    let mut out = vec![C64::new(0.0, 0.0); len];
    let mut t = C64::new(0.0, 0.0);
    for i in os + 1..len {
        t += (seg[i - 1] + seg[i]) * (0.5 * h);
        out[i] = t - (deriv[i] - deriv[os]) * corr;
    }
    t = C64::new(0.0, 0.0);
    for i in (0..os).rev() {
        t += (seg[i] + seg[i + 1]) * (0.5 * h);
        out[i] = -t + (deriv[os] - deriv[i]) * corr;
    }
    out
}

/// A named, positive, integrable test function sampled on a grid.
#[derive(Clone, Debug)]
pub struct TestFn {
    pub name: String,
    pub values: GridFn,
}

impl TestFn {
    pub fn new(spec: &GridSpec, name: impl Into<String>, f: impl Fn(&[f64]) -> f64) -> TestFn {
        let name = name.into();
        TestFn {
            values: GridFn::from_real(spec, name.clone(), f),
            name,
        }
    }

    pub fn gaussian(spec: &GridSpec, scale: f64) -> TestFn {
        let s2 = 2.0 * scale * scale;
        TestFn::new(spec, format!("gauss_{scale}"), move |x| {
            (-x.iter().map(|v| v * v).sum::<f64>() / s2).exp()
        })
    }

    /// `x ↦ exp(-|x|₁)`.
    pub fn exp_abs(spec: &GridSpec) -> TestFn {
        TestFn::new(spec, "exp_abs", |x| (-x.iter().map(|v| v.abs()).sum::<f64>()).exp())
    }
}

/// Finite family of test functions used as a proxy for weak convergence.
#[derive(Clone, Debug)]
pub struct TestBank {
    pub members: Vec<TestFn>,
}

pub const DEFAULT_GAUSSIAN_SCALES: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

impl TestBank {
    /// Centred Gaussians with scales 0.5, 1, 2, 4 and `exp(-|x|₁)`.
    pub fn default_for(spec: &GridSpec) -> TestBank {
        let mut members: Vec<TestFn> = DEFAULT_GAUSSIAN_SCALES
            .iter()
            .map(|&s| TestFn::gaussian(spec, s))
            .collect();
        members.push(TestFn::exp_abs(spec));
        TestBank { members }
    }

    pub fn spec(&self) -> Option<&GridSpec> {
        self.members.first().map(|m| &m.values.spec)
    }
}

/// `max_ψ |⟨b1 - b2, ψ⟩|` over the bank.
pub fn weak_distance(b1: &GridFn, b2: &GridFn, bank: &TestBank) -> Result<f64> {
    let diff = b1.sub(b2)?;
    let mut best: f64 = 0.0;
    for psi in &bank.members {
        best = best.max(pair(&diff, psi)?.norm());
    }
    Ok(best)
}
