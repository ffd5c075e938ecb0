//! Regularizing variables ξ_{i,l} = φ_{i,l}(x)/ε^{3/2}, τ = ln((t+ε)/ε)/ε,
//! μ_j = β_j(0) ln((t+ε)/ε).

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::interp::{Grid1, Tab1};
use crate::quadrature::{integrate, QuadOptions};
use crate::scalar::{cr, principal_sqrt, Real, C};
use crate::spectral::{SpatialSpectrum, TemporalSpectrum};

/// Tabulated stretching functions φ_{i,1}(x) = ∫_0^x λ_i^{-1/2}, φ_{i,2}(x) = ∫_x^1 λ_i^{-1/2}.
#[derive(Clone, Debug)]
pub struct StretchMap<T> {
    /// `phi[i][l]`, l = 0 for the layer at x = 0 and l = 1 for x = 1.
    pub phi: Vec<[Tab1<T, C<T>>; 2]>,
    /// λ_i^{-1/2} on the same grid (|φ′|).
    inv_sqrt_lambda: Vec<Tab1<T, C<T>>>,
}

/// Default number of tabulation intervals for φ.
pub const STRETCH_INTERVALS: usize = 1024;

pub fn build_stretch_map<T: Real>(spatial: &SpatialSpectrum<T>, quad_tol: T) -> Result<StretchMap<T>> {
    build_stretch_map_on(spatial, quad_tol, STRETCH_INTERVALS)
}

pub fn build_stretch_map_on<T: Real>(
    spatial: &SpatialSpectrum<T>,
    quad_tol: T,
    intervals: usize,
) -> Result<StretchMap<T>> {
    if !(quad_tol > T::zero() && quad_tol <= T::lit(1e-4)) {
        return Err(Error::spec("quadrature tolerance must lie in (0, 1e-4]"));
    }
    let n = spatial.dim();
    let grid = Grid1::uniform(T::zero(), T::one(), intervals);
    let mut phi = Vec::with_capacity(n);
    let mut inv = Vec::with_capacity(n);
    for i in 0..n {
        let g = |s: T| C::new(T::one(), T::zero()) / principal_sqrt(spatial.lambda_exact(i, s));
        let mut cum = Vec::with_capacity(grid.len());
        let mut acc = C::zero();
        cum.push(acc);
        let opts = QuadOptions {
            abs_tol: quad_tol * T::lit(1e-3) / T::lit(intervals as f64),
            rel_tol: quad_tol * T::lit(1e-3),
            max_intervals: 200,
        };
        for w in grid.nodes.windows(2) {
            let piece = integrate(g, w[0], w[1], opts).map_err(|e| {
                Error::Numerical(format!("stretch map i={} l=1,2: {e}", i + 1))
            })?;
            acc += piece;
            cum.push(acc);
        }
        let total = acc;
        let left: Vec<C<T>> = cum.clone();
        let mut right: Vec<C<T>> = cum.iter().map(|&c| total - c).collect();
        let last = right.len() - 1;
        right[last] = C::zero();
        phi.push([
            Tab1::new(grid.clone(), left),
            Tab1::new(grid.clone(), right),
        ]);
        inv.push(Tab1::from_fn(grid.clone(), g));
    }
    Ok(StretchMap {
        phi,
        inv_sqrt_lambda: inv,
    })
}

impl<T: Real> StretchMap<T> {
    pub fn dim(&self) -> usize {
        self.phi.len()
    }

    /// φ_{i,l}(x), with l ∈ {0, 1} indexing the boundary x = l.
    pub fn phi(&self, i: usize, l: usize, x: T) -> C<T> {
        if l == 0 && x == T::zero() || l == 1 && x == T::one() {
            return C::zero();
        }
        self.phi[i][l].eval(x)
    }

    /// φ′_{i,l}(x) = ±λ_i(x)^{-1/2}.
    pub fn phi_prime(&self, i: usize, l: usize, x: T) -> C<T> {
        let v = self.inv_sqrt_lambda[i].eval(x);
        if l == 0 {
            v
        } else {
            -v
        }
    }

    /// φ″_{i,l}(x) by differentiating the tabulated φ′.
    pub fn phi_second(&self, i: usize, l: usize, x: T) -> C<T> {
        let v = self.inv_sqrt_lambda[i].deriv(x);
        if l == 0 {
            v
        } else {
            -v
        }
    }
}

/// A physical point (x, t) lifted to the regularizing variables at a given ε.
#[derive(Clone, Debug)]
pub struct RegularizedPoint<T> {
    pub x: T,
    pub t: T,
    /// ξ_{i,l} for l ∈ {0, 1}.
    pub xi: Vec<[C<T>; 2]>,
    pub tau: T,
    pub mu: Vec<C<T>>,
    /// exp(μ_j) = ((t+ε)/ε)^{β_j(0)}.
    pub exp_mu: Vec<C<T>>,
}

pub fn regularize<T: Real>(
    x: T,
    t: T,
    eps: T,
    map: &StretchMap<T>,
    temporal: &TemporalSpectrum<T>,
) -> RegularizedPoint<T> {
    let n = map.dim();
    let scale = T::one() / (eps * eps.sqrt());
    let xi = (0..n)
        .map(|i| [map.phi(i, 0, x) * scale, map.phi(i, 1, x) * scale])
        .collect();
    let (tau, mu, exp_mu) = time_variables(t, eps, (0..n).map(|j| temporal.beta0(j)));
    RegularizedPoint {
        x,
        t,
        xi,
        tau,
        mu,
        exp_mu,
    }
}

/// (τ, μ_j, exp μ_j) for the given β_j(0).
pub fn time_variables<T: Real>(
    t: T,
    eps: T,
    beta0: impl Iterator<Item = C<T>>,
) -> (T, Vec<C<T>>, Vec<C<T>>) {
    let log = ((t + eps) / eps).ln();
    let tau = log / eps;
    let (mu, exp_mu) = beta0
        .map(|b| {
            let m = b * cr(log);
            (m, m.exp())
        })
        .unzip();
    (tau, mu, exp_mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{Poly, Poly2};
    use crate::problem::{preset, ProblemSpec};
    use crate::spectral::{decompose_spatial, decompose_temporal};

    fn scalar_map(a: Poly<f64>) -> (StretchMap<f64>, TemporalSpectrum<f64>) {
        let s = ProblemSpec {
            n: 1,
            a: vec![vec![a]],
            d: vec![vec![Poly::constant(-1.0)]],
            f: vec![Poly2::zero()],
            h: vec![Poly::zero()],
            t_end: 1.0,
            epsilons: vec![],
        };
        let sp = decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, 64)).unwrap();
        let tp = decompose_temporal(&s, &Grid1::uniform(0.0, 1.0, 16)).unwrap();
        (build_stretch_map(&sp, 1e-10).unwrap(), tp)
    }

    #[test]
    fn unit_and_constant_lambda() {
        let (m, _) = scalar_map(Poly::constant(1.0));
        for &x in &[0.0, 0.123, 0.5, 1.0] {
            assert!((m.phi(0, 0, x) - cr(x)).norm() < 1e-13);
            assert!((m.phi(0, 1, x) - cr(1.0 - x)).norm() < 1e-13);
        }
        let (m4, _) = scalar_map(Poly::constant(4.0));
        assert!((m4.phi(0, 0, 0.3) - cr(0.15)).norm() < 1e-13);
    }

    #[test]
    fn quadratic_lambda_gives_logarithm() {
        let (m, _) = scalar_map(Poly::new(&[1.0, 2.0, 1.0]));
        for &x in &[0.01, 0.3, 0.77, 1.0] {
            assert!((m.phi(0, 0, x) - cr((1.0f64 + x).ln())).norm() < 1e-12);
            assert!((m.phi_prime(0, 0, x) - cr(1.0 / (1.0 + x))).norm() < 1e-10);
            assert!((m.phi_second(0, 0, x) + cr(1.0 / (1.0 + x).powi(2))).norm() < 1e-8);
        }
        assert_eq!(m.phi(0, 0, 0.0), C::zero());
        assert_eq!(m.phi(0, 1, 1.0), C::zero());
        // φ_2 positive inside and decreasing towards x = 1
        let mut prev = f64::INFINITY;
        for k in 0..100 {
            let v = m.phi(0, 1, k as f64 / 100.0).re;
            assert!(v > 0.0 && v < prev);
            prev = v;
        }
    }

    #[test]
    fn derivative_of_tabulation_matches_inverse_root() {
        let s = preset::<f64>("complex-2x2").unwrap();
        let sp = decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, 64)).unwrap();
        let m = build_stretch_map(&sp, 1e-10).unwrap();
        for i in 0..2 {
            for &x in &[0.1, 0.5, 0.9] {
                let d = m.phi[i][0].deriv(x);
                let want = C::new(1.0, 0.0) / principal_sqrt(sp.lambda_exact(i, x));
                assert!((d - want).norm() / want.norm() < 1e-6);
                assert!(m.phi(i, 0, x).re > 0.0 && m.phi(i, 1, x).re > 0.0);
            }
        }
    }

    #[test]
    fn time_variables_match_direct_formulas() {
        let (m, tp) = scalar_map(Poly::constant(1.0));
        let p = regularize(0.5, 0.0, 0.1, &m, &tp);
        assert_eq!(p.tau, 0.0);
        assert_eq!(p.mu[0], C::zero());
        assert_eq!(p.exp_mu[0], C::new(1.0, 0.0));
        let p = regularize(0.5, 0.1, 0.1, &m, &tp);
        assert!((p.tau - 10.0 * 2f64.ln()).abs() < 1e-12);
        assert!((p.tau - 6.93147).abs() < 1e-5);
        let e = std::f64::consts::E;
        let eps = 0.05;
        let p = regularize(0.5, eps * (e - 1.0), eps, &m, &tp);
        assert!((p.exp_mu[0].re - 0.367879).abs() < 1e-6);
        assert!((p.xi[0][0].re - 0.5 / eps.powf(1.5)).abs() < 1e-9);
    }
}
