//! Synthetic samples with known ground truth.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ecf::{Model, SampleSet};
use crate::error::{Error, Result};
use crate::families::{Family, ProductLaw, Regression};

/// Everything needed to regenerate a sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: Model,
    /// Law of the latent `x*` (classical-error models).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<ProductLaw>,
    /// Regression function (Berkson model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regression: Option<Regression>,
    /// Law of the observed `z` (Berkson model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z_law: Option<ProductLaw>,
    /// Measurement error `u`.
    pub f: ProductLaw,
    /// Mean-zero noise on `x`, drawn independently of everything else.
    pub u_x: ProductLaw,
    /// Mean-zero outcome noise (Berkson model).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u_y: Option<Family>,
    pub n: usize,
    pub seed: u64,
}

impl ModelSpec {
    /// Classical-error spec with no extra noise on `x`.
    pub fn classical(model: Model, g: ProductLaw, f: ProductLaw, n: usize, seed: u64) -> ModelSpec {
        let d = g.dim();
        ModelSpec {
            model,
            g: Some(g),
            regression: None,
            z_law: None,
            f,
            u_x: ProductLaw::iid(Family::zero(), d),
            u_y: None,
            n,
            seed,
        }
    }

    pub fn berkson(
        regression: Regression,
        z_law: ProductLaw,
        f: ProductLaw,
        n: usize,
        seed: u64,
    ) -> ModelSpec {
        let d = z_law.dim();
        ModelSpec {
            model: Model::Example2,
            g: None,
            regression: Some(regression),
            z_law: Some(z_law),
            f,
            u_x: ProductLaw::iid(Family::zero(), d),
            u_y: Some(Family::zero()),
            n,
            seed,
        }
    }

    pub fn dim(&self) -> usize {
        self.f.dim()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.n < 2 {
            return Err(Error::Input(format!("need n >= 2, got {}", self.n)));
        }
        let mut laws = vec![("f", &self.f), ("u_x", &self.u_x)];
        match self.model {
            Model::Example1 | Model::Example3 => {
                let g = self
                    .g
                    .as_ref()
                    .ok_or_else(|| Error::Input(format!("model {} needs a latent law g", self.model)))?;
                laws.push(("g", g));
            }
            Model::Example2 => {
                if self.regression.is_none() {
                    return Err(Error::Input("model example2 needs a regression function".into()));
                }
                let z = self
                    .z_law
                    .as_ref()
                    .ok_or_else(|| Error::Input("model example2 needs a law for z".into()))?;
                laws.push(("z_law", z));
            }
        }
        for (name, law) in laws {
            if law.dim() != d {
                return Err(Error::Input(format!("{name} has dimension {}, expected {d}", law.dim())));
            }
            for a in &law.axes {
                a.validate()?;
            }
        }
        let centred = |f: &Family| matches!(f.mean(), Some(m) if m == 0.0);
        if !self.u_x.axes.iter().all(centred) {
            return Err(Error::Family("u_x must have mean zero".into()));
        }
        if let Some(u) = &self.u_y {
            u.validate()?;
            if !centred(u) {
                return Err(Error::Family("u_y must have mean zero".into()));
            }
        }
        Ok(())
    }
}

fn classical(spec: &ModelSpec, model: Model) -> Result<SampleSet> {
    let mut spec = spec.clone();
    spec.model = model;
    spec.validate()?;
    let d = spec.dim();
    let g = spec.g.as_ref().expect("validated");
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut z = Vec::with_capacity(spec.n * d);
    let mut x = Vec::with_capacity(spec.n * d);
    let (mut xs, mut u, mut ux) = ([0.0; 2], [0.0; 2], [0.0; 2]);
    for _ in 0..spec.n {
        g.sample(&mut rng, &mut xs[..d]);
        spec.f.sample(&mut rng, &mut u[..d]);
        spec.u_x.sample(&mut rng, &mut ux[..d]);
        for k in 0..d {
            x.push(xs[k] + ux[k]);
            z.push(xs[k] + u[k]);
        }
    }
    let mut s = SampleSet::new(model, d, z, x, None)?;
    s.seed = Some(spec.seed);
    Ok(s)
}

/// `x = x* + u_x`, `z = x* + u` with `x* ~ g`, `u ~ f`.
pub fn gen_example1(spec: &ModelSpec) -> Result<SampleSet> {
    classical(spec, Model::Example1)
}

/// Berkson regression: `z` drawn first, `x* = z + u` with `u ⊥ z`,
/// `y = g(x*) + u_y`, `x = x* + u_x`.
pub fn gen_example2(spec: &ModelSpec) -> Result<SampleSet> {
    let mut spec = spec.clone();
    spec.model = Model::Example2;
    spec.validate()?;
    let d = spec.dim();
    let reg = spec.regression.expect("validated");
    let z_law = spec.z_law.as_ref().expect("validated");
    let u_y = spec.u_y.unwrap_or(Family::zero());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut z = Vec::with_capacity(spec.n * d);
    let mut x = Vec::with_capacity(spec.n * d);
    let mut y = Vec::with_capacity(spec.n);
    let (mut zs, mut u, mut ux, mut xs) = ([0.0; 2], [0.0; 2], [0.0; 2], [0.0; 2]);
    for _ in 0..spec.n {
        z_law.sample(&mut rng, &mut zs[..d]);
        spec.f.sample(&mut rng, &mut u[..d]);
        spec.u_x.sample(&mut rng, &mut ux[..d]);
        let ey = u_y.sample(&mut rng);
        for k in 0..d {
            xs[k] = zs[k] + u[k];
            z.push(zs[k]);
            x.push(xs[k] + ux[k]);
        }
        y.push(reg.eval(&xs[..d]) + ey);
    }
    let mut s = SampleSet::new(Model::Example2, d, z, x, Some(y))?;
    s.seed = Some(spec.seed);
    Ok(s)
}

/// Two-period panel at a fixed covariate: `x*` plays the role of the
/// individual effect, the periods are generated as in the classical model and
/// returned as `(x, z)`.
pub fn gen_example3(spec: &ModelSpec) -> Result<SampleSet> {
    classical(spec, Model::Example3)
}

pub fn generate(spec: &ModelSpec) -> Result<SampleSet> {
    match spec.model {
        Model::Example1 => gen_example1(spec),
        Model::Example2 => gen_example2(spec),
        Model::Example3 => gen_example3(spec),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn n01() -> ProductLaw {
        ProductLaw::univariate(Family::Gaussian { mean: 0.0, var: 1.0 })
    }

    fn lap() -> ProductLaw {
        ProductLaw::univariate(Family::Laplace { loc: 0.0, scale: 1.0 })
    }

    fn zero() -> ProductLaw {
        ProductLaw::univariate(Family::zero())
    }

    #[test]
    fn noiseless_classical_gives_x_equal_z() {
        for model in [Model::Example1, Model::Example3] {
            let s = generate(&ModelSpec::classical(model, n01(), zero(), 100, 3)).unwrap();
            assert_eq!(s.x, s.z);
            assert_eq!(s.model, model);
        }
    }

    #[test]
    fn classical_variance_adds() {
        let n = 100_000;
        let s = gen_example1(&ModelSpec::classical(Model::Example1, n01(), lap(), n, 11)).unwrap();
        let mean = s.z.iter().sum::<f64>() / n as f64;
        let var = s.z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of the sample variance: (μ₄ - σ⁴)/n with μ₄ = 3 + 6·2 + 24 = 39.
        let se = ((39.0 - 9.0) / n as f64).sqrt();
        assert!((var - 3.0).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let spec = ModelSpec::classical(Model::Example3, n01(), lap(), 1000, 42);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ModelSpec { seed: 43, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().z, generate(&other).unwrap().z);
    }

    #[test]
    fn noiseless_linear_berkson() {
        let spec = ModelSpec::berkson(Regression::Linear { a: 1.0, b: 2.0 }, n01(), zero(), 200, 5);
        let s = gen_example2(&spec).unwrap();
        for (y, z) in s.y.as_ref().unwrap().iter().zip(&s.z) {
            assert_eq!(*y, 1.0 + 2.0 * z);
        }
    }

    /// Per bin: mean of z, mean of y and the standard error of the latter.
    fn binned_means(s: &SampleSet, edges: &[f64]) -> Vec<(f64, f64, f64)> {
        let y = s.y.as_ref().unwrap();
        edges
            .windows(2)
            .map(|w| {
                let (mut zs, mut ys, mut yy, mut cnt) = (0.0, 0.0, 0.0, 0.0);
                for (z, v) in s.z.iter().zip(y) {
                    if *z >= w[0] && *z < w[1] {
                        zs += z;
                        ys += v;
                        yy += v * v;
                        cnt += 1.0;
                    }
                }
                let m = ys / cnt;
                let var = (yy / cnt - m * m) * cnt / (cnt - 1.0);
                (zs / cnt, m, (var / cnt).sqrt())
            })
            .collect()
    }

    #[test]
    fn quadratic_berkson_conditional_mean() {
        let spec = ModelSpec::berkson(Regression::Quadratic { a: 0.0, b: 0.0, c: 1.0 }, n01(), lap(), 100_000, 9);
        let s = gen_example2(&spec).unwrap();
        let edges: Vec<f64> = (0..=10).map(|i| -1.0 + 0.2 * i as f64).collect();
        for (zbar, m, se) in binned_means(&s, &edges) {
            // E(z² | bin) exceeds z̄² by the within-bin variance, at most 0.2²/12.
            assert!((m - (zbar * zbar + 2.0)).abs() < 4.0 * se + 0.004, "{zbar}: {m} ± {se}");
        }
    }

    #[test]
    fn step_berkson_conditional_mean_is_normal_cdf() {
        use statrs::distribution::{ContinuousCDF, Normal};
        let spec = ModelSpec::berkson(Regression::Step { threshold: 0.0 }, n01(), n01(), 100_000, 21);
        let s = gen_example2(&spec).unwrap();
        let phi = Normal::new(0.0, 1.0).unwrap();
        let edges: Vec<f64> = (0..=12).map(|i| -1.5 + 0.25 * i as f64).collect();
        for (zbar, m, se) in binned_means(&s, &edges) {
            assert!((m - phi.cdf(zbar)).abs() < 0.02, "{zbar}: {m}");
            assert!((m - phi.cdf(zbar)).abs() < 4.0 * se + 0.003, "{zbar}: {m} ± {se}");
        }
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut spec = ModelSpec::classical(Model::Example1, n01(), lap(), 10, 0);
        spec.u_x = ProductLaw::univariate(Family::Gaussian { mean: 1.0, var: 1.0 });
        assert!(generate(&spec).is_err());
        let mut spec = ModelSpec::classical(Model::Example1, n01(), lap(), 10, 0);
        spec.g = None;
        assert!(generate(&spec).is_err());
        let mut spec = ModelSpec::berkson(Regression::Linear { a: 0.0, b: 1.0 }, n01(), lap(), 10, 0);
        spec.regression = None;
        assert!(generate(&spec).is_err());
        let spec = ModelSpec::classical(Model::Example1, n01(), ProductLaw::iid(Family::zero(), 2), 10, 0);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn spec_round_trips_through_json() {
        let spec = ModelSpec::berkson(Regression::Step { threshold: 0.5 }, n01(), lap(), 10, 7);
        let js = serde_json::to_string(&spec).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&js).unwrap(), spec);
    }
}
