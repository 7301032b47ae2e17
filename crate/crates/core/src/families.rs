//! Closed-form distribution families: characteristic functions, their
//! derivatives, densities and samplers.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::distr::Open01;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::C64;

/// A univariate law with a closed-form characteristic function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// Point mass (δ at `at`).
    Point { at: f64 },
    Gaussian { mean: f64, var: f64 },
    /// Density `exp(-|x - loc|/scale) / (2 scale)`.
    Laplace { loc: f64, scale: f64 },
    /// `weight·N(mean1, var1) + (1 - weight)·N(mean2, var2)`.
    Mixture {
        weight: f64,
        mean1: f64,
        var1: f64,
        mean2: f64,
        var2: f64,
    },
    Uniform { lo: f64, hi: f64 },
    /// Band-limited law: characteristic function `max(0, 1 - |t|/width)`,
    /// density `(width/2π)·sinc²(width·x/2)`.
    Fejer { width: f64 },
}

impl Family {
    pub fn zero() -> Family {
        Family::Point { at: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Family::Point { at } => at.is_finite(),
            Family::Gaussian { mean, var } => mean.is_finite() && var > 0.0 && var.is_finite(),
            Family::Laplace { loc, scale } => loc.is_finite() && scale > 0.0 && scale.is_finite(),
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                (0.0..=1.0).contains(&weight)
                    && mean1.is_finite()
                    && mean2.is_finite()
                    && var1 > 0.0
                    && var2 > 0.0
            }
            Family::Uniform { lo, hi } => lo.is_finite() && hi.is_finite() && lo < hi,
            Family::Fejer { width } => width > 0.0 && width.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Family(format!("invalid parameters: {self}")))
        }
    }

    /// Characteristic function `E e^{itX}`.
    pub fn cf(&self, t: f64) -> C64 {
        match *self {
            Family::Point { at } => C64::new(0.0, at * t).exp(),
            Family::Gaussian { mean, var } => C64::new(-0.5 * var * t * t, mean * t).exp(),
            Family::Laplace { loc, scale } => {
                C64::new(0.0, loc * t).exp() / (1.0 + scale * scale * t * t)
            }
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                let a = Family::Gaussian {
                    mean: mean1,
                    var: var1,
                };
                let b = Family::Gaussian {
                    mean: mean2,
                    var: var2,
                };
                a.cf(t) * weight + b.cf(t) * (1.0 - weight)
            }
            Family::Uniform { lo, hi } => {
                let (c, a) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                C64::new(0.0, c * t).exp() * sinc(a * t)
            }
            Family::Fejer { width } => C64::new((1.0 - t.abs() / width).max(0.0), 0.0),
        }
    }

    /// `d/dt` of the characteristic function. At the kink of the Fejér law the
    /// symmetric derivative (zero) is returned.
    pub fn cf_deriv(&self, t: f64) -> C64 {
        let i = C64::new(0.0, 1.0);
        match *self {
            Family::Point { at } => i * at * self.cf(t),
            Family::Gaussian { mean, var } => self.cf(t) * C64::new(-var * t, mean),
            Family::Laplace { loc, scale } => {
                let s2 = scale * scale;
                self.cf(t) * C64::new(-2.0 * s2 * t / (1.0 + s2 * t * t), loc)
            }
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                let a = Family::Gaussian {
                    mean: mean1,
                    var: var1,
                };
                let b = Family::Gaussian {
                    mean: mean2,
                    var: var2,
                };
                a.cf_deriv(t) * weight + b.cf_deriv(t) * (1.0 - weight)
            }
            Family::Uniform { lo, hi } => {
                let (c, a) = (0.5 * (lo + hi), 0.5 * (hi - lo));
                let shift = C64::new(0.0, c * t).exp();
                shift * (i * c * sinc(a * t) + a * sinc_deriv(a * t))
            }
            Family::Fejer { width } => {
                if t == 0.0 || t.abs() >= width {
                    C64::new(0.0, 0.0)
                } else {
                    C64::new(-t.signum() / width, 0.0)
                }
            }
        }
    }

    /// `ln |cf(t)|`, evaluated without underflow where a closed form exists.
    pub fn ln_abs_cf(&self, t: f64) -> f64 {
        match *self {
            Family::Point { .. } => 0.0,
            Family::Gaussian { var, .. } => -0.5 * var * t * t,
            Family::Laplace { scale, .. } => -(scale * scale * t * t).ln_1p(),
            _ => self.cf(t).norm().ln(),
        }
    }

    /// Lebesgue density, `None` for the point mass.
    pub fn density(&self, x: f64) -> Option<f64> {
        Some(match *self {
            Family::Point { .. } => return None,
            Family::Gaussian { mean, var } => {
                (-(x - mean).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
            }
            Family::Laplace { loc, scale } => (-(x - loc).abs() / scale).exp() / (2.0 * scale),
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                let a = Family::Gaussian {
                    mean: mean1,
                    var: var1,
                };
                let b = Family::Gaussian {
                    mean: mean2,
                    var: var2,
                };
                weight * a.density(x)? + (1.0 - weight) * b.density(x)?
            }
            Family::Uniform { lo, hi } => {
                if (lo..=hi).contains(&x) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Family::Fejer { width } => width / (2.0 * PI) * sinc(0.5 * width * x).powi(2),
        })
    }

    pub fn mean(&self) -> Option<f64> {
        Some(match *self {
            Family::Point { at } => at,
            Family::Gaussian { mean, .. } => mean,
            Family::Laplace { loc, .. } => loc,
            Family::Mixture {
                weight,
                mean1,
                mean2,
                ..
            } => weight * mean1 + (1.0 - weight) * mean2,
            Family::Uniform { lo, hi } => 0.5 * (lo + hi),
            Family::Fejer { .. } => return None,
        })
    }

    pub fn variance(&self) -> Option<f64> {
        Some(match *self {
            Family::Point { .. } => 0.0,
            Family::Gaussian { var, .. } => var,
            Family::Laplace { scale, .. } => 2.0 * scale * scale,
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                let m = weight * mean1 + (1.0 - weight) * mean2;
                weight * (var1 + mean1 * mean1) + (1.0 - weight) * (var2 + mean2 * mean2) - m * m
            }
            Family::Uniform { lo, hi } => (hi - lo).powi(2) / 12.0,
            Family::Fejer { .. } => return None,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Family::Point { at } => at,
            Family::Gaussian { mean, var } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + var.sqrt() * z
            }
            Family::Laplace { loc, scale } => {
                let u: f64 = rng.sample::<f64, _>(Open01) - 0.5;
                loc - scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
            }
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => {
                let first = rng.random::<f64>() < weight;
                let (mean, var) = if first { (mean1, var1) } else { (mean2, var2) };
                Family::Gaussian { mean, var }.sample(rng)
            }
            Family::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Family::Fejer { width } => {
                // sinc²(u) ≤ 2/(1+u²): Cauchy proposal with rejection.
                loop {
                    let u = (PI * (rng.random::<f64>() - 0.5)).tan();
                    let accept = sinc(u).powi(2) * (1.0 + u * u) / 2.0;
                    if rng.random::<f64>() < accept {
                        return 2.0 * u / width;
                    }
                }
            }
        }
    }
}

fn sinc(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        let u2 = u * u;
        1.0 - u2 / 6.0 * (1.0 - u2 / 20.0)
    } else {
        u.sin() / u
    }
}

fn sinc_deriv(u: f64) -> f64 {
    if u.abs() < 1e-2 {
        let u2 = u * u;
        -u / 3.0 * (1.0 - u2 / 10.0 * (1.0 - u2 / 28.0))
    } else {
        (u * u.cos() - u.sin()) / (u * u)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Family::Point { at } => write!(f, "point:{at}"),
            Family::Gaussian { mean, var } => write!(f, "gauss:{mean}:{var}"),
            Family::Laplace { loc, scale } => write!(f, "laplace:{loc}:{scale}"),
            Family::Mixture {
                weight,
                mean1,
                var1,
                mean2,
                var2,
            } => write!(f, "mix:{weight}:{mean1}:{var1}:{mean2}:{var2}"),
            Family::Uniform { lo, hi } => write!(f, "uniform:{lo}:{hi}"),
            Family::Fejer { width } => write!(f, "fejer:{width}"),
        }
    }
}

fn parse_params(name: &str, rest: &[&str], want: usize) -> Result<Vec<f64>> {
    if rest.len() != want {
        return Err(Error::Family(format!(
            "{name} takes {want} parameters, got {}",
            rest.len()
        )));
    }
    rest.iter()
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::Family(format!("bad number '{s}' in {name}")))
        })
        .collect()
}

impl FromStr for Family {
    type Err = Error;

    /// `gauss:mean:var`, `laplace:loc:scale`, `mix:w:m1:v1:m2:v2`,
    /// `uniform:lo:hi`, `point:x`, `fejer:width`, `none`.
    fn from_str(s: &str) -> Result<Family> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let (name, rest) = (parts[0], &parts[1..]);
        let fam = match name {
            "none" | "zero" => Family::zero(),
            "point" | "delta" => {
                let p = parse_params(name, rest, 1)?;
                Family::Point { at: p[0] }
            }
            "gauss" | "gaussian" | "normal" => {
                let p = parse_params(name, rest, 2)?;
                Family::Gaussian {
                    mean: p[0],
                    var: p[1],
                }
            }
            "laplace" => {
                let p = parse_params(name, rest, 2)?;
                Family::Laplace {
                    loc: p[0],
                    scale: p[1],
                }
            }
            "mix" | "mixture" => {
                let p = parse_params(name, rest, 5)?;
                Family::Mixture {
                    weight: p[0],
                    mean1: p[1],
                    var1: p[2],
                    mean2: p[3],
                    var2: p[4],
                }
            }
            "uniform" => {
                let p = parse_params(name, rest, 2)?;
                Family::Uniform { lo: p[0], hi: p[1] }
            }
            "fejer" | "triangle" => {
                let p = parse_params(name, rest, 1)?;
                Family::Fejer { width: p[0] }
            }
            other => return Err(Error::Family(format!("unknown family '{other}'"))),
        };
        fam.validate()?;
        Ok(fam)
    }
}

/// Independent product of univariate laws, one per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductLaw {
    pub axes: Vec<Family>,
}

impl ProductLaw {
    pub fn new(axes: Vec<Family>) -> Result<ProductLaw> {
        if axes.is_empty() {
            return Err(Error::Family("a law needs at least one axis".into()));
        }
        for a in &axes {
            a.validate()?;
        }
        Ok(ProductLaw { axes })
    }

    pub fn iid(fam: Family, dim: usize) -> ProductLaw {
        ProductLaw {
            axes: vec![fam; dim],
        }
    }

    pub fn univariate(fam: Family) -> ProductLaw {
        Self::iid(fam, 1)
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn cf(&self, t: &[f64]) -> C64 {
        self.axes.iter().zip(t).map(|(f, &x)| f.cf(x)).product()
    }

    /// `∂_k cf(t)`.
    pub fn cf_partial(&self, t: &[f64], k: usize) -> C64 {
        self.axes
            .iter()
            .zip(t)
            .enumerate()
            .map(|(j, (f, &x))| if j == k { f.cf_deriv(x) } else { f.cf(x) })
            .product()
    }

    pub fn ln_abs_cf(&self, t: &[f64]) -> f64 {
        self.axes.iter().zip(t).map(|(f, &x)| f.ln_abs_cf(x)).sum()
    }

    pub fn density(&self, x: &[f64]) -> Option<f64> {
        self.axes
            .iter()
            .zip(x)
            .map(|(f, &v)| f.density(v))
            .product()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for (f, o) in self.axes.iter().zip(out.iter_mut()) {
            *o = f.sample(rng);
        }
    }
}

impl FromStr for ProductLaw {
    type Err = Error;

    /// Comma-separated per-axis families, e.g. `gauss:0:1,laplace:0:1`.
    fn from_str(s: &str) -> Result<ProductLaw> {
        ProductLaw::new(s.split(',').map(str::parse).collect::<Result<Vec<_>>>()?)
    }
}

impl fmt::Display for ProductLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.axes.iter().map(|a| a.to_string()).collect();
        write!(f, "{}", parts.join(","))
    }
}

/// Regression functions for the Berkson errors-in-variables model.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Regression {
    /// `a + b·Σ x_k`
    Linear { a: f64, b: f64 },
    /// `a + b·Σ x_k + c·Σ x_k²`
    Quadratic { a: f64, b: f64, c: f64 },
    /// `1{x_1 > threshold}`
    Step { threshold: f64 },
}

impl Regression {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match *self {
            Regression::Linear { a, b } => a + b * x.iter().sum::<f64>(),
            Regression::Quadratic { a, b, c } => {
                a + b * x.iter().sum::<f64>() + c * x.iter().map(|v| v * v).sum::<f64>()
            }
            Regression::Step { threshold } => {
                if x[0] > threshold {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Regression {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Regression::Linear { a, b } => write!(f, "linear:{a}:{b}"),
            Regression::Quadratic { a, b, c } => write!(f, "quadratic:{a}:{b}:{c}"),
            Regression::Step { threshold } => write!(f, "step:{threshold}"),
        }
    }
}

impl FromStr for Regression {
    type Err = Error;

    /// `linear:a:b`, `quadratic:a:b:c`, `step:threshold`.
    fn from_str(s: &str) -> Result<Regression> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let (name, rest) = (parts[0], &parts[1..]);
        Ok(match name {
            "linear" => {
                let p = parse_params(name, rest, 2)?;
                Regression::Linear { a: p[0], b: p[1] }
            }
            "quadratic" => {
                let p = parse_params(name, rest, 3)?;
                Regression::Quadratic {
                    a: p[0],
                    b: p[1],
                    c: p[2],
                }
            }
            "step" => {
                let p = parse_params(name, rest, 1)?;
                Regression::Step { threshold: p[0] }
            }
            other => return Err(Error::Family(format!("unknown regression '{other}'"))),
        })
    }
}
