//! Half-line heat-equation profiles: erfc boundary layers, the Dirichlet
//! image convolution and the Gaussian decay-bound check.

use std::sync::OnceLock;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::fornberg;
use crate::quadrature::{integrate, QuadOptions};
use crate::scalar::{Real, C};

/// erfc(ξ / (2√τ)), continuously extended to τ = 0.
pub fn erfc_profile<T: Real>(xi: T, tau: T) -> Result<T> {
    if xi < T::zero() || tau < T::zero() || xi.is_nan() || tau.is_nan() {
        return Err(Error::spec(format!("erfc profile needs ξ, τ ≥ 0 (got {xi}, {tau})")));
    }
    Ok(erfc_profile_unchecked(xi, tau))
}

#[inline]
pub(crate) fn erfc_profile_unchecked<T: Real>(xi: T, tau: T) -> T {
    if tau == T::zero() {
        return if xi == T::zero() { T::one() } else { T::zero() };
    }
    (xi / (T::lit(2.0) * tau.sqrt())).erfc()
}

/// erfc(ξ / (2√τ)) for complex ξ with Re ξ ≥ 0 (complex λ_i).
pub fn erfc_profile_complex<T: Real>(xi: C<T>, tau: T) -> C<T> {
    if tau == T::zero() {
        return if xi == C::new(T::zero(), T::zero()) {
            C::new(T::one(), T::zero())
        } else {
            C::new(T::zero(), T::zero())
        };
    }
    if xi.im == T::zero() {
        return C::new(erfc_profile_unchecked(xi.re, tau), T::zero());
    }
    T::erfc_complex(xi / C::new(T::lit(2.0) * tau.sqrt(), T::zero()))
}

/// Truncation of the Gaussian variable in the convolution quadrature (e^{-w²} < 1e-18).
const GAUSS_CUTOFF: f64 = 6.5;

/// I(ξ,τ) = (1/2√π) ∫_0^τ ∫_0^∞ S(η,s) (τ−s)^{-1/2} [e^{-(ξ-η)²/4(τ-s)} − e^{-(ξ+η)²/4(τ-s)}] dη ds,
/// the solution of I_τ − I_ξξ = S on the half-line with zero initial and boundary values.
///
/// Evaluated with σ = √(τ−s), η = ξ + 2σw, which removes the endpoint singularity.
pub fn heat_convolution<T: Real>(xi: T, tau: T, source: &(dyn Fn(T, T) -> T + Sync), tol: T) -> Result<T> {
    if xi < T::zero() || tau < T::zero() {
        return Err(Error::spec("heat convolution needs ξ, τ ≥ 0"));
    }
    if xi == T::zero() || tau == T::zero() {
        return Ok(T::zero());
    }
    let big_w = T::lit(GAUSS_CUTOFF);
    let inner_opts = QuadOptions {
        abs_tol: tol * T::lit(0.1),
        rel_tol: tol * T::lit(0.1),
        max_intervals: 400,
    };
    let mut failure: Option<Error> = None;
    let outer = |sigma: T| -> T {
        if sigma == T::zero() {
            return T::zero();
        }
        let s = tau - sigma * sigma;
        let lo = (-xi / (T::lit(2.0) * sigma)).max(-big_w);
        let shift = xi / sigma;
        let f = |w: T| {
            let eta = xi + T::lit(2.0) * sigma * w;
            let k = (-w * w).exp() - (-(w + shift) * (w + shift)).exp();
            source(eta.max(T::zero()), s.max(T::zero())) * k
        };
        match integrate(f, lo, big_w, inner_opts) {
            Ok(v) => sigma * v,
            Err(e) => {
                if failure.is_none() {
                    failure = Some(e);
                }
                T::nan()
            }
        }
    };
    let outer_opts = QuadOptions {
        abs_tol: tol,
        rel_tol: tol,
        max_intervals: 400,
    };
    let res = integrate(outer, T::zero(), tau.sqrt(), outer_opts);
    if let Some(e) = failure {
        return Err(Error::Numerical(format!("convolution at ξ={xi}, τ={tau}: {e}")));
    }
    let v = res.map_err(|e| Error::Numerical(format!("convolution at ξ={xi}, τ={tau}: {e}")))?;
    Ok(v * T::lit(2.0) / T::PI().sqrt())
}

/// Tabulated similarity profile G with I(ξ,τ) = τ·G(ξ/(2√τ)), valid for sources
/// of the form S(η/(2√s)) (such as the erfc layer itself).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConvolutionTable {
    pub z_max: f64,
    pub step: f64,
    pub values: Vec<f64>,
}

/// Points in the interpolation stencil of [`ConvolutionTable::g`].
const TABLE_STENCIL: usize = 6;

impl ConvolutionTable {
    /// Tabulates G(z) = I(2z, 1) on [0, z_max].
    pub fn build(source: &(dyn Fn(f64, f64) -> f64 + Sync), z_max: f64, step: f64, tol: f64) -> Result<Self> {
        let m = (z_max / step).round() as usize;
        let values: Result<Vec<f64>> = (0..=m)
            .into_par_iter()
            .map(|k| heat_convolution(2.0 * k as f64 * step, 1.0, source, tol))
            .collect();
        Ok(ConvolutionTable {
            z_max: m as f64 * step,
            step,
            values: values?,
        })
    }

    /// Table for the erfc source, built once per process.
    pub fn erfc_source() -> &'static ConvolutionTable {
        static TABLE: OnceLock<ConvolutionTable> = OnceLock::new();
        TABLE.get_or_init(|| {
            ConvolutionTable::build(&|eta, s| erfc_profile_unchecked(eta, s), 7.0, 0.005, 1e-13)
                .expect("convolution table for the erfc source")
        })
    }

    /// G(z) by local polynomial interpolation; zero beyond the table.
    pub fn g(&self, z: f64) -> f64 {
        if z >= self.z_max {
            return 0.0;
        }
        let z = z.max(0.0);
        let m = self.values.len();
        let k = (z / self.step).floor() as isize;
        let start = (k - (TABLE_STENCIL as isize / 2 - 1)).clamp(0, (m - TABLE_STENCIL) as isize) as usize;
        let nodes: Vec<f64> = (start..start + TABLE_STENCIL).map(|j| j as f64 * self.step).collect();
        let w = fornberg(z, &nodes, 0);
        w[0].iter()
            .zip(&self.values[start..start + TABLE_STENCIL])
            .map(|(a, b)| a * b)
            .sum()
    }

    /// I(ξ, τ) = τ G(ξ / (2√τ)).
    pub fn eval<T: Real>(&self, xi: T, tau: T) -> T {
        if tau <= T::zero() || xi <= T::zero() {
            return T::zero();
        }
        let z = xi.as_f64() / (2.0 * tau.as_f64().sqrt());
        tau * T::lit(self.g(z))
    }
}

/// Profile attached to a layer amplitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    /// d(x,t)·erfc(ξ/2√τ)
    Erfc,
    /// d(x,t)·erfc(ξ/2√τ) + h̄(x,t)·I(ξ,τ) with the erfc source
    ErfcPlusConvolution,
}

/// Description of one layer function y = amplitude·erfc + conv_amplitude·I.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerProfile {
    pub kind: ProfileKind,
}

/// Grid for [`check_decay_bound`]: ξ uniform on [0, xi_max], τ geometric on [tau_min, tau_max].
#[derive(Clone, Copy, Debug)]
pub struct DecayGrid {
    pub xi_max: f64,
    pub n_xi: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_tau: usize,
}

impl Default for DecayGrid {
    fn default() -> Self {
        DecayGrid {
            xi_max: 8.0,
            n_xi: 64,
            tau_min: 0.02,
            tau_max: 4.0,
            n_tau: 32,
        }
    }
}

impl DecayGrid {
    /// Doubles the resolution, doubles the ξ range and halves τ_min.
    pub fn refined(&self) -> Self {
        DecayGrid {
            xi_max: 2.0 * self.xi_max,
            n_xi: 4 * self.n_xi,
            tau_min: 0.5 * self.tau_min,
            tau_max: self.tau_max,
            n_tau: 2 * self.n_tau + 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct DecayFit {
    /// Minimal c with |p| ≤ c·exp(−ξ²/8τ) on the base grid.
    pub c_fit: f64,
    /// Same on the refined grid.
    pub c_refined: f64,
    pub pass: bool,
}

fn decay_constant(profile: &(dyn Fn(f64, f64) -> f64 + Sync), g: &DecayGrid) -> f64 {
    let mut log_c = f64::NEG_INFINITY;
    for a in 0..g.n_tau {
        let tau = g.tau_min * (g.tau_max / g.tau_min).powf(a as f64 / (g.n_tau - 1) as f64);
        for b in 0..=g.n_xi {
            let xi = g.xi_max * b as f64 / g.n_xi as f64;
            let p = profile(xi, tau).abs();
            if p == 0.0 {
                continue;
            }
            log_c = log_c.max(p.ln() + xi * xi / (8.0 * tau));
        }
    }
    log_c.exp()
}

/// Fits c in |p(ξ,τ)| ≤ c·exp(−ξ²/(8τ)) and checks that it is finite and
/// changes by less than 10% when the grid is refined.
pub fn check_decay_bound(profile: &(dyn Fn(f64, f64) -> f64 + Sync), grid: &DecayGrid) -> DecayFit {
    let c1 = decay_constant(profile, grid);
    let c2 = decay_constant(profile, &grid.refined());
    let pass = c1.is_finite() && c2.is_finite() && (c2 - c1).abs() <= 0.1 * c1.max(c2);
    DecayFit {
        c_fit: c1,
        c_refined: c2,
        pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// I for the erfc source in closed form: ξ√τ·ierfc(ξ/2√τ).
    fn conv_exact(xi: f64, tau: f64) -> f64 {
        let z = xi / (2.0 * tau.sqrt());
        let ierfc = (-z * z).exp() / std::f64::consts::PI.sqrt() - z * Real::erfc(z);
        xi * tau.sqrt() * ierfc
    }

    #[test]
    fn erfc_profile_values_and_domain() {
        assert_eq!(erfc_profile(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(erfc_profile(3.0, 0.0).unwrap(), 0.0);
        assert_eq!(erfc_profile(0.0, 0.0).unwrap(), 1.0);
        assert!((erfc_profile(2.0f64, 1.0).unwrap() - 0.1572992).abs() < 1e-7);
        assert!(erfc_profile(-1.0, 1.0).is_err());
        let z = erfc_profile_complex(C::new(2.0f64, 0.0), 1.0);
        assert!((z.re - 0.157_299_207_050_285).abs() < 1e-14);
    }

    #[test]
    fn convolution_vanishes_for_zero_source_and_at_the_wall() {
        let zero = |_: f64, _: f64| 0.0;
        assert_eq!(heat_convolution(1.3, 2.0, &zero, 1e-10).unwrap(), 0.0);
        let one = |_: f64, _: f64| 1.0;
        assert_eq!(heat_convolution(0.0, 2.0, &one, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn convolution_matches_riemann_sum_oracle() {
        // midpoint sums in (η, s) on 400×400 cells, kernel singularity at s = τ
        // handled by the midpoint offset
        let (xi, tau) = (1.0f64, 1.0f64);
        let eta_max = 12.0;
        let n = 400;
        let (de, ds) = (eta_max / n as f64, tau / n as f64);
        let mut sum = 0.0;
        for a in 0..n {
            let s = (a as f64 + 0.5) * ds;
            let r = tau - s;
            for b in 0..n {
                let eta = (b as f64 + 0.5) * de;
                let src = Real::erfc(eta / (2.0 * s.sqrt()));
                let k = (-(xi - eta).powi(2) / (4.0 * r)).exp() - (-(xi + eta).powi(2) / (4.0 * r)).exp();
                sum += src * k / r.sqrt();
            }
        }
        let riemann = sum * de * ds / (2.0 * std::f64::consts::PI.sqrt());
        let src = |e: f64, s: f64| erfc_profile_unchecked(e, s);
        let quad = heat_convolution(xi, tau, &src, 1e-11).unwrap();
        assert!((quad - riemann).abs() < 1e-3, "{quad} vs {riemann}");
        assert!((quad - conv_exact(xi, tau)).abs() < 1e-10);
    }

    #[test]
    fn table_reproduces_closed_form() {
        let t = ConvolutionTable::erfc_source();
        for &(xi, tau) in &[(0.3, 0.2), (1.0, 1.0), (5.0, 3.0), (0.01, 50.0), (12.0, 2.0)] {
            let want = conv_exact(xi, tau);
            assert!((t.eval(xi, tau) - want).abs() < 1e-11 * tau.max(1.0), "{xi} {tau}");
        }
    }

    #[test]
    fn convolution_satisfies_inhomogeneous_heat_equation() {
        let t = ConvolutionTable::erfc_source();
        let (xi, tau, h): (f64, f64, f64) = (1.2, 0.8, 1e-3);
        let it = (t.eval(xi, tau + h) - t.eval(xi, tau - h)) / (2.0 * h);
        let ixx = (t.eval(xi + h, tau) - 2.0 * t.eval(xi, tau) + t.eval(xi - h, tau)) / (h * h);
        let src = erfc_profile_unchecked(xi, tau);
        assert!((it - ixx - src).abs() < 1e-5);
    }

    #[test]
    fn decay_bounds_for_erfc_zero_and_violating_profiles() {
        let g = DecayGrid::default();
        let erfc = |xi: f64, tau: f64| erfc_profile_unchecked(xi, tau);
        let fit = check_decay_bound(&erfc, &g);
        assert!(fit.pass && fit.c_fit <= 2.0);
        let zero = |_: f64, _: f64| 0.0;
        let fit = check_decay_bound(&zero, &g);
        assert!(fit.pass && fit.c_fit == 0.0);
        let bad = |xi: f64, tau: f64| (-xi / tau).exp() * tau;
        assert!(!check_decay_bound(&bad, &g).pass);
    }
}
