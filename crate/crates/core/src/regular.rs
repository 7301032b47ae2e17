//! Regularized solution with a compactly supported frequency weight `ψ`.
//!
//! Multiplying the system by `ψ` replaces the target `g` by the smoothed
//! `g ∗ Ft⁻¹(ψ)`; the two coincide only when `γ` vanishes outside `supp ψ`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::ecf::MomentSet;
use crate::error::{Error, Result};
use crate::grid::{trapezoid_weight, GridFn, GridSpec, C64};
use crate::ident::{exp_path_integral, log_derivatives, Case, Solution, SupportMask};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Profile {
    /// `exp(1 - 1/(1 - a²))` for `a < 1`.
    Bump,
    /// Flat on `a ≤ 0.8`, `cos²` rolloff to zero at `a = 1`.
    RaisedCosine,
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Bump => "bump",
            Profile::RaisedCosine => "raised_cosine",
        })
    }
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Profile> {
        match s.trim() {
            "bump" => Ok(Profile::Bump),
            "raised_cosine" | "rc" | "cosine" => Ok(Profile::RaisedCosine),
            other => Err(Error::Input(format!("unknown weight profile '{other}'"))),
        }
    }
}

impl Profile {
    /// Profile at `a = |ζ|/C`.
    pub fn eval(self, a: f64) -> f64 {
        let a = a.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            Profile::Bump => (1.0 - 1.0 / (1.0 - a * a)).exp(),
            Profile::RaisedCosine => {
                if a <= 0.8 {
                    1.0
                } else {
                    (0.5 * PI * (a - 0.8) / 0.2).cos().powi(2)
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    pub cutoff: f64,
    pub profile: Profile,
}

impl FromStr for WeightParams {
    type Err = Error;

    /// `C` or `C:profile`.
    fn from_str(s: &str) -> Result<WeightParams> {
        let (c, p) = match s.split_once(':') {
            Some((c, p)) => (c, p.parse()?),
            None => (s, Profile::Bump),
        };
        let cutoff = c
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::Input(format!("bad cutoff '{c}'")))?;
        Ok(WeightParams { cutoff, profile: p })
    }
}

/// `ψ(ζ) = Πₖ profile(|ζₖ|/C)` on a frequency grid.
#[derive(Clone, Debug)]
pub struct RegWeight {
    pub params: WeightParams,
    pub psi: GridFn,
}

pub fn make_weight(cutoff: f64, profile: Profile, spec: &GridSpec) -> Result<RegWeight> {
    if !(cutoff.is_finite() && cutoff > 0.0) {
        return Err(Error::Input(format!("cutoff must be positive, got {cutoff}")));
    }
    if cutoff > spec.inner_radius() {
        return Err(Error::Input(format!(
            "cutoff {cutoff} exceeds the frequency grid (half-width {})",
            spec.inner_radius()
        )));
    }
    let psi = GridFn::from_real(spec, "psi", |z| z.iter().map(|v| profile.eval(v / cutoff)).product());
    Ok(RegWeight {
        params: WeightParams { cutoff, profile },
        psi,
    })
}

/// Solves the weighted system `ψε₁ = γ̂φ`, `ψε₂ₖ = -i ∂ₖγ̂ φ` on `supp ψ`.
///
/// The log-derivatives are unchanged by the weight (it cancels in the ratio),
/// so they are formed from the unweighted moments; points of `supp ψ` where
/// `|ε₁| < τ` use a denominator floored at `τ` and are counted in
/// [`Solution::floored`]. The returned `gamma` is the regularized target
/// `ψγ`, and `phi` is unweighted.
pub fn solve_regularized(m: &MomentSet, w: &RegWeight, case: Case, tau: f64) -> Result<Solution> {
    m.spec().ensure_matches(&w.psi.spec)?;
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::Input(format!("threshold must be non-negative, got {tau}")));
    }
    let spec = m.spec().clone();
    let mask = SupportMask {
        spec: spec.clone(),
        inside: w.psi.values.iter().map(|v| v.re > 0.0).collect(),
        tau,
    };
    let (kappas, floored) = log_derivatives(m, &mask, case, tau)?;
    let path = exp_path_integral(&kappas, C64::new(1.0, 0.0), &mask)?;
    let zero = C64::new(0.0, 0.0);
    let mut gamma = vec![zero; spec.len()];
    let mut phi = vec![zero; spec.len()];
    let mut residual: f64 = 0.0;
    for i in 0..spec.len() {
        if !path.mask.inside[i] {
            continue;
        }
        let p = path.value.values[i];
        let psi = w.psi.values[i].re;
        let e = m.eps1.values[i];
        match case {
            Case::A => {
                gamma[i] = p * psi;
                phi[i] = e / p;
            }
            Case::B => {
                phi[i] = p;
                gamma[i] = e * psi / p;
            }
        }
        residual = residual.max((gamma[i] * phi[i] - e * psi).norm());
    }
    let gamma = GridFn::new(spec.clone(), gamma, "gamma_reg")?;
    let phi = GridFn::new(spec, phi, "phi")?;
    Ok(Solution {
        c: gamma.at_origin(),
        gamma,
        phi,
        case,
        mask: path.mask,
        tau,
        residual,
        dropped: path.dropped,
        identified: true,
        floored,
        weight: Some(w.params),
        g_real: None,
        f_real: None,
    })
}

/// Fraction of `∫|γ|` carried by `‖ζ‖∞ > C`.
pub fn bandlimit_diagnostic(gamma: &GridFn, cutoff: f64) -> Result<f64> {
    let d = gamma.spec.dim();
    let (mut outside, mut total) = (0.0, 0.0);
    for (i, p) in gamma.spec.points() {
        let w = gamma.values[i].norm() * trapezoid_weight(&gamma.spec, i);
        total += w;
        if p[..d].iter().any(|v| v.abs() > cutoff) {
            outside += w;
        }
    }
    if !(total > 0.0) {
        return Err(Error::Input("gamma has zero total mass".into()));
    }
    Ok(outside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecf::oracle_moments;
    use crate::families::{Family, ProductLaw};
    use crate::grid::fourier_inverse;

    #[test]
    fn bump_profile() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        let w = make_weight(2.0, Profile::Bump, &g).unwrap();
        let at = |z: f64| w.psi.values[g.origin_flat() + (z / g.step(0)).round() as i64 as usize].re;
        assert_eq!(at(0.0), 1.0);
        assert_eq!(at(2.0), 0.0);
        // one-sided differences vanish as the edge is approached
        let h = g.step(0);
        let d1 = (at(2.0 - h) - at(2.0 - 2.0 * h)) / h;
        let d2 = (at(2.0 - 4.0 * h) - at(2.0 - 5.0 * h)) / h;
        assert!(d1.abs() < d2.abs() && d1.abs() < 1e-10);
    }

    #[test]
    fn raised_cosine_profile() {
        assert_eq!(Profile::RaisedCosine.eval(1.6 / 2.0), 1.0);
        assert!((Profile::RaisedCosine.eval(1.8 / 2.0) - 0.5).abs() < 1e-12);
        assert_eq!(Profile::RaisedCosine.eval(1.0), 0.0);
    }

    #[test]
    fn weight_transform_is_real_and_even() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        for prof in [Profile::Bump, Profile::RaisedCosine] {
            let w = make_weight(2.0, prof, &g).unwrap();
            let k = fourier_inverse(&w.psi);
            let o = k.spec.origin_flat();
            for m in 1..500 {
                assert!(k.values[o + m].im.abs() < 1e-12);
                assert!((k.values[o + m].re - k.values[o - m].re).abs() < 1e-12);
            }
            assert!(crate::grid::integrate_abs(&k).is_finite());
        }
    }

    #[test]
    fn cutoff_beyond_grid_is_rejected() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        assert!(make_weight(9.0, Profile::Bump, &g).is_err());
        assert!(make_weight(0.0, Profile::Bump, &g).is_err());
    }

    #[test]
    fn parse_weight_params() {
        let w: WeightParams = "2.5:raised_cosine".parse().unwrap();
        assert_eq!(w.cutoff, 2.5);
        assert_eq!(w.profile, Profile::RaisedCosine);
        assert_eq!("3".parse::<WeightParams>().unwrap().profile, Profile::Bump);
        assert!("x:bump".parse::<WeightParams>().is_err());
    }

    #[test]
    fn bandlimit_examples() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        let tri = GridFn::from_real(&g, "tri", |z| (1.0 - z[0].abs()).max(0.0));
        assert_eq!(bandlimit_diagnostic(&tri, 2.0).unwrap(), 0.0);
        let one = GridFn::from_real(&g, "one", |_| 1.0);
        let frac = bandlimit_diagnostic(&one, 4.0).unwrap();
        assert!((frac - 0.5).abs() < 2.0 * g.step(0) / 16.0, "{frac}");
        assert!(bandlimit_diagnostic(&GridFn::zeros(&g, "0"), 1.0).is_err());
    }

    #[test]
    fn weighted_residual_on_oracle() {
        let g = GridSpec::line(-8.0, 8.0, 1024).unwrap();
        let m = oracle_moments(
            &ProductLaw::univariate(Family::Gaussian { mean: 1.0, var: 0.25 }),
            &ProductLaw::univariate(Family::Laplace { loc: 0.0, scale: 1.0 }),
            &g,
        )
        .unwrap();
        for case in [Case::A, Case::B] {
            let w = make_weight(3.0, Profile::Bump, &g).unwrap();
            let s = solve_regularized(&m, &w, case, 1e-6).unwrap();
            assert!(s.residual < 1e-8);
            assert_eq!(s.floored, 0);
            assert_eq!(s.weight.unwrap().cutoff, 3.0);
        }
    }
}
