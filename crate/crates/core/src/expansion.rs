//! Order-by-order construction of the series terms u_0 … u_n.
//!
//! Each term has the form
//!
//! ```text
//! u_k = Σ_i ψ_i(t) [v_i + Σ_j e^{μ_j} (c_ij + δ_ij p_j(x))]
//!     + Σ_{l,i} b_i(x) [(d_i^l + Σ_j e^{μ_j} ω_ij^l) erfc(ξ_{i,l}/2√τ)
//!                       + (h̄_i^l + Σ_j e^{μ_j} h̄_ij^l) I(ξ_{i,l}, τ)]
//! ```
//!
//! with every coefficient tabulated on a fixed (x, t) grid. Nothing here
//! depends on ε; ε only enters when a term is evaluated at a regularized point.

use num_traits::{One, Zero};
use rayon::prelude::*;

use crate::degenerate_ode::{bounded_startup, solve_degenerate, DegenerateSystem};
use crate::error::{Error, Result};
use crate::interp::{cumulative_integral, Field2, Grid1, Tab1};
use crate::layers::{erfc_profile_complex, ConvolutionTable, LayerProfile, ProfileKind};
use crate::linalg::{inner, vec_norm, CMat};
use crate::problem::{validate_assumptions, ProblemSpec};
use crate::regularization::{build_stretch_map_on, regularize, RegularizedPoint, StretchMap, STRETCH_INTERVALS};
use crate::scalar::{cr, principal_sqrt, Real, C};
use crate::spectral::{coupling_gamma, CouplingGamma, SpectralData, TemporalSpectrum};

/// Highest supported order.
pub const K_MAX: usize = 3;

/// Layer sources outside the b_i direction larger than this are not representable.
const CROSS_TOL: f64 = 1e-10;
const ASSEMBLY_TOL: f64 = 1e-6;
const P_SLOPE_TOL: f64 = 1e-10;
const P_RESIDUAL_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug)]
pub struct ExpansionOptions<T> {
    /// Intervals of the uniform x grid.
    pub nx: usize,
    /// Intervals of the uniform t grid on [0, T].
    pub nt: usize,
    pub stretch_intervals: usize,
    pub quad_tol: T,
}

impl<T: Real> Default for ExpansionOptions<T> {
    fn default() -> Self {
        ExpansionOptions {
            nx: 128,
            nt: 1024,
            stretch_intervals: STRETCH_INTERVALS,
            quad_tol: T::lit(1e-10),
        }
    }
}

/// A coefficient tabulated on the expansion grid; `None` when identically zero.
#[derive(Clone, Debug)]
pub struct Coefficient<T>(Option<Field2<T, C<T>>>);

impl<T: Real> Coefficient<T> {
    pub fn zero() -> Self {
        Coefficient(None)
    }

    pub fn from_field(f: Field2<T, C<T>>) -> Self {
        if f.data.iter().all(|z| z.is_zero()) {
            Coefficient(None)
        } else {
            Coefficient(Some(f))
        }
    }

    fn from_fn(x: &Grid1<T>, t: &Grid1<T>, f: impl Fn(usize, usize) -> C<T>) -> Self {
        let rows = (0..x.len())
            .map(|ix| (0..t.len()).map(|it| f(ix, it)).collect())
            .collect();
        Self::from_field(Field2::from_rows(x.clone(), t.clone(), rows))
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_none()
    }

    pub fn field(&self) -> Option<&Field2<T, C<T>>> {
        self.0.as_ref()
    }

    #[inline]
    pub fn at(&self, ix: usize, it: usize) -> C<T> {
        self.0.as_ref().map_or(C::zero(), |f| f.at(ix, it))
    }

    /// Cubic interpolation in x and t.
    #[inline]
    pub fn eval(&self, x: T, t: T) -> C<T> {
        self.0.as_ref().map_or(C::zero(), |f| f.eval(x, t))
    }

    pub fn max_magnitude(&self) -> T {
        self.0.as_ref().map_or(T::zero(), |f| f.max_magnitude())
    }

    fn row(&self, ix: usize, nt: usize) -> Vec<C<T>> {
        match &self.0 {
            Some(f) => f.row(ix).to_vec(),
            None => vec![C::zero(); nt],
        }
    }

    fn dt(&self) -> Self {
        Coefficient(self.0.as_ref().map(|f| f.dt_nodes()))
    }

}

/// Problem data shared by every order: spectra, stretch map, couplings and
/// the x-dependence of transported layer amplitudes.
#[derive(Clone, Debug)]
pub struct ExpansionContext<T> {
    pub spec: ProblemSpec<T>,
    pub spectral: SpectralData<T>,
    pub stretch: StretchMap<T>,
    pub gamma: CouplingGamma<T>,
    /// `transport[l][i][ix]`: amplitude at x relative to its value at x = l.
    pub transport: [Vec<Vec<C<T>>>; 2],
}

impl<T: Real> ExpansionContext<T> {
    pub fn new(spec: &ProblemSpec<T>, opts: &ExpansionOptions<T>) -> Result<Self> {
        if opts.nx < 8 || opts.nt < 8 {
            return Err(Error::spec("expansion grids need at least 8 intervals"));
        }
        validate_assumptions(spec, opts.nx.max(16))?.into_result()?;
        let x_grid = Grid1::uniform(T::zero(), T::one(), opts.nx);
        let t_grid = Grid1::uniform(T::zero(), spec.t_end, opts.nt);
        let spectral = SpectralData::new(spec, &x_grid, &t_grid)?;
        let stretch = build_stretch_map_on(&spectral.spatial, opts.quad_tol, opts.stretch_intervals)?;
        let gamma = coupling_gamma(&spectral.spatial, &t_grid, spec);
        let transport = transport_factors(&spectral);
        Ok(ExpansionContext {
            spec: spec.clone(),
            spectral,
            stretch,
            gamma,
            transport,
        })
    }

    pub fn dim(&self) -> usize {
        self.spec.n
    }

    pub fn x_grid(&self) -> &Grid1<T> {
        &self.spectral.spatial.grid
    }

    pub fn t_grid(&self) -> &Grid1<T> {
        &self.spectral.temporal.grid
    }

    fn boundary_index(&self, l: usize) -> usize {
        if l == 0 {
            0
        } else {
            self.x_grid().len() - 1
        }
    }

    /// ψ_i(t) and b_i(x) at one point.
    pub fn basis_at(&self, x: T, t: T) -> PointBasis<T> {
        let n = self.dim();
        PointBasis {
            psi: (0..n).map(|i| self.spectral.temporal.psi_at(i, t)).collect(),
            b: (0..n).map(|i| self.spectral.spatial.b_at(i, x)).collect(),
        }
    }

    pub fn regularize(&self, x: T, t: T, eps: T) -> RegularizedPoint<T> {
        regularize(x, t, eps, &self.stretch, &self.spectral.temporal)
    }
}

/// Eigenvectors ψ_i(t) and b_i(x) at an evaluation point.
#[derive(Clone, Debug)]
pub struct PointBasis<T> {
    pub psi: Vec<Vec<C<T>>>,
    pub b: Vec<Vec<C<T>>>,
}

/// Closed-form solution of 2φ′[d′ + (b′_i, b*_i) d] + φ″ d = 0 normalised to 1 at x = l:
/// (λ_i(x)/λ_i(l))^{1/4} exp(−∫_l^x (b′_i, b*_i)).
fn transport_factors<T: Real>(spectral: &SpectralData<T>) -> [Vec<Vec<C<T>>>; 2] {
    let sp = &spectral.spatial;
    let n = sp.dim();
    let nx = sp.grid.len();
    let mut out: [Vec<Vec<C<T>>>; 2] = [Vec::new(), Vec::new()];
    for (l, slot) in out.iter_mut().enumerate() {
        let at = if l == 0 { 0 } else { nx - 1 };
        for i in 0..n {
            let cum = cumulative_integral(&sp.grid, &sp.b_prime_dual_nodes(i));
            let root = |k: usize| principal_sqrt(sp.samples[k].values[i]);
            let r0 = root(at);
            slot.push(
                (0..nx)
                    .map(|k| principal_sqrt(root(k) / r0) * (-(cum[k] - cum[at])).exp())
                    .collect(),
            );
        }
    }
    out
}

/// Right-hand side of T₀u_k = h_k split into its interior, exponential and layer parts.
#[derive(Clone, Debug)]
pub struct RhsDecomposition<T> {
    pub k: usize,
    /// Interior coefficients against ψ_r: `interior[r]`.
    pub interior: Vec<Coefficient<T>>,
    /// Coefficients of e^{μ_j} ψ_r: `exponential[r * n + j]`.
    pub exponential: Vec<Coefficient<T>>,
    /// Layer sources h̄_i^l (coefficient of b_i·erfc(ξ_{i,l}/2√τ)): `layer[l][i]`.
    pub layer: [Vec<Coefficient<T>>; 2],
    /// Layer sources h̄_ij^l multiplying e^{μ_j}: `layer_exp[l][i * n + j]`.
    pub layer_exp: [Vec<Coefficient<T>>; 2],
}

impl<T: Real> RhsDecomposition<T> {
    fn zero(k: usize, n: usize) -> Self {
        RhsDecomposition {
            k,
            interior: vec![Coefficient::zero(); n],
            exponential: vec![Coefficient::zero(); n * n],
            layer: [vec![Coefficient::zero(); n], vec![Coefficient::zero(); n]],
            layer_exp: [vec![Coefficient::zero(); n * n], vec![Coefficient::zero(); n * n]],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.interior
            .iter()
            .chain(&self.exponential)
            .chain(self.layer.iter().flatten())
            .chain(self.layer_exp.iter().flatten())
            .all(Coefficient::is_zero)
    }

    /// Reassembles the vector right-hand side at a regularized point.
    pub fn value(&self, p: &RegularizedPoint<T>, basis: &PointBasis<T>) -> Vec<C<T>> {
        let n = basis.psi.len();
        let mut out = vec![C::zero(); n];
        for r in 0..n {
            let mut a = self.interior[r].eval(p.x, p.t);
            for j in 0..n {
                a += p.exp_mu[j] * self.exponential[r * n + j].eval(p.x, p.t);
            }
            axpy(&mut out, a, &basis.psi[r]);
        }
        for l in 0..2 {
            for i in 0..n {
                let mut a = self.layer[l][i].eval(p.x, p.t);
                for j in 0..n {
                    a += p.exp_mu[j] * self.layer_exp[l][i * n + j].eval(p.x, p.t);
                }
                if !a.is_zero() {
                    axpy(&mut out, a * erfc_profile_complex(p.xi[i][l], p.tau), &basis.b[i]);
                }
            }
        }
        out
    }
}

#[inline]
fn axpy<T: Real>(y: &mut [C<T>], a: C<T>, x: &[C<T>]) {
    for (yk, xk) in y.iter_mut().zip(x) {
        *yk += a * *xk;
    }
}

/// Boundary and initial consistency of an assembled term.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct TermResiduals {
    /// max over t nodes of |u_k| at x = 0 and x = 1 (ξ = 0).
    pub boundary: f64,
    /// max over x nodes of |u_k − h δ_k0| at t = τ = μ = 0.
    pub initial: f64,
}

#[derive(Clone, Debug)]
pub struct AsymptoticTerm<T> {
    pub k: usize,
    /// v_{k,i}: `v[i]`.
    pub v: Vec<Coefficient<T>>,
    /// c^k_ij: `c[i * n + j]`.
    pub c: Vec<Coefficient<T>>,
    /// p^k_j(x) on the x grid.
    pub p: Vec<Tab1<T, C<T>>>,
    /// d_i^{k,l}: `d[l][i]`.
    pub d: [Vec<Coefficient<T>>; 2],
    /// ω_ij^{k,l}: `omega[l][i * n + j]`.
    pub omega: [Vec<Coefficient<T>>; 2],
    /// Amplitudes of the convolution profile, same layout as `d`.
    pub d_conv: [Vec<Coefficient<T>>; 2],
    /// Amplitudes of the convolution profile, same layout as `omega`.
    pub omega_conv: [Vec<Coefficient<T>>; 2],
    /// `profiles[l][i]`
    pub profiles: [Vec<LayerProfile>; 2],
    pub residuals: TermResiduals,
}

impl<T: Real> AsymptoticTerm<T> {
    pub fn dim(&self) -> usize {
        self.v.len()
    }

    /// c_ij + δ_ij p_j at a node.
    fn w_at(&self, i: usize, j: usize, ix: usize, it: usize) -> C<T> {
        let n = self.dim();
        let mut w = self.c[i * n + j].at(ix, it);
        if i == j {
            w += self.p[j].values[ix];
        }
        w
    }

    pub fn is_zero(&self) -> bool {
        self.v
            .iter()
            .chain(&self.c)
            .chain(self.d.iter().flatten())
            .chain(self.omega.iter().flatten())
            .chain(self.d_conv.iter().flatten())
            .chain(self.omega_conv.iter().flatten())
            .all(Coefficient::is_zero)
            && self.p.iter().all(|p| p.values.iter().all(|z| z.is_zero()))
    }

    /// u_k at a regularized point.
    pub fn value(&self, p: &RegularizedPoint<T>, basis: &PointBasis<T>) -> Vec<C<T>> {
        let n = self.dim();
        let (x, t) = (p.x, p.t);
        let mut out = vec![C::zero(); n];
        for i in 0..n {
            let mut a = self.v[i].eval(x, t);
            for j in 0..n {
                let mut w = self.c[i * n + j].eval(x, t);
                if i == j {
                    w += self.p[j].eval(x);
                }
                a += p.exp_mu[j] * w;
            }
            axpy(&mut out, a, &basis.psi[i]);
        }
        let table = ConvolutionTable::erfc_source();
        for l in 0..2 {
            for i in 0..n {
                let mut amp = self.d[l][i].eval(x, t);
                let mut conv = self.d_conv[l][i].eval(x, t);
                for j in 0..n {
                    amp += p.exp_mu[j] * self.omega[l][i * n + j].eval(x, t);
                    conv += p.exp_mu[j] * self.omega_conv[l][i * n + j].eval(x, t);
                }
                let xi = p.xi[i][l];
                let mut y = C::zero();
                if !amp.is_zero() {
                    y += amp * erfc_profile_complex(xi, p.tau);
                }
                if !conv.is_zero() {
                    y += conv * cr(table.eval(xi.re, p.tau));
                }
                if !y.is_zero() {
                    axpy(&mut out, y, &basis.b[i]);
                }
            }
        }
        out
    }
}

/// Interior systems t[y′ + αᵀy] + (s − diag β(t)) y = g with tabulated g.
///
/// `shift` is 0 for the V system and β_j(0) for column j of the C system;
/// `column` carries (j, p_j) for the C system.
struct InteriorSystem<'a, T: Real> {
    temporal: &'a TemporalSpectrum<T>,
    forcing: Vec<Vec<C<T>>>,
    shift: C<T>,
    column: Option<(usize, C<T>)>,
}

fn interp_row<T: Real>(grid: &Grid1<T>, row: &[C<T>], t: T) -> C<T> {
    let (s, w) = grid.cubic_weights(t);
    let width = grid.len().min(4);
    (0..width).fold(C::zero(), |acc, k| acc + row[s + k] * cr(w[k]))
}

impl<T: Real> DegenerateSystem<T> for InteriorSystem<'_, T> {
    fn dim(&self) -> usize {
        self.forcing.len()
    }

    fn matrix(&self, t: T) -> CMat<T> {
        let n = self.dim();
        let alpha = self.temporal.alpha_at(t);
        CMat::from_fn(n, n, |row, col| {
            let mut m = alpha[(col, row)] * cr(t);
            if row == col {
                m += self.shift - self.temporal.beta_at(row, t);
            }
            m
        })
    }

    fn forcing(&self, t: T) -> Vec<C<T>> {
        let grid = &self.temporal.grid;
        let mut g: Vec<C<T>> = self.forcing.iter().map(|row| interp_row(grid, row, t)).collect();
        if let Some((j, p)) = self.column {
            if !p.is_zero() {
                let alpha = self.temporal.alpha_at(t);
                for (i, gi) in g.iter_mut().enumerate() {
                    let coupling = if i == j {
                        self.temporal.beta0(j) - self.temporal.beta_at(j, t)
                    } else {
                        alpha[(j, i)] * cr(t)
                    };
                    *gi -= p * coupling;
                }
            }
        }
        g
    }
}

/// Builds the right-hand side of order k from the finished lower orders.
/// β_i(0) − β_j(0) = 1 gives c_ij a t ln t component, whose time derivative
/// (the forcing two orders up) is unbounded at t = 0.
fn check_unit_resonance<T: Real>(ctx: &ExpansionContext<T>) -> Result<()> {
    let tp = &ctx.spectral.temporal;
    let n = ctx.dim();
    for i in 0..n {
        for j in 0..n {
            let d = tp.beta0(i) - tp.beta0(j) - C::new(T::one(), T::zero());
            if d.norm() < T::lit(1e-9) {
                return Err(Error::Unsupported(format!(
                    "β_{}(0) − β_{}(0) = 1: the order-2 forcing has a logarithmic singularity at t=0",
                    i + 1,
                    j + 1
                )));
            }
        }
    }
    Ok(())
}

pub fn build_rhs<T: Real>(
    ctx: &ExpansionContext<T>,
    k: usize,
    terms: &[AsymptoticTerm<T>],
) -> Result<RhsDecomposition<T>> {
    if k > K_MAX {
        return Err(Error::Unsupported(format!(
            "order {k} needs nested layer convolutions (supported up to {K_MAX})"
        )));
    }
    if terms.len() < k {
        return Err(Error::spec(format!("order {k} needs orders 0..{} first", k - 1)));
    }
    if k >= 2 {
        check_unit_resonance(ctx)?;
    }
    let n = ctx.dim();
    let xg = ctx.x_grid();
    let tg = ctx.t_grid();
    let temporal = &ctx.spectral.temporal;
    let mut rhs = RhsDecomposition::zero(k, n);

    if k == 0 {
        let coords: Vec<Vec<Vec<C<T>>>> = xg
            .nodes
            .iter()
            .map(|&x| {
                tg.nodes
                    .iter()
                    .enumerate()
                    .map(|(it, &t)| temporal.samples[it].coordinates(&ctx.spec.f_at(x, t)))
                    .collect()
            })
            .collect();
        for r in 0..n {
            rhs.interior[r] = Coefficient::from_fn(xg, tg, |ix, it| coords[ix][it][r]);
        }
        return Ok(rhs);
    }
    if k < 2 {
        return Ok(rhs);
    }

    // Interior: −∂_t of the interior part of u_{k−2}.
    let prev = &terms[k - 2];
    let dv: Vec<Coefficient<T>> = prev.v.iter().map(Coefficient::dt).collect();
    let dc: Vec<Coefficient<T>> = prev.c.iter().map(Coefficient::dt).collect();
    if !prev.v.iter().all(Coefficient::is_zero) {
        for r in 0..n {
            rhs.interior[r] = Coefficient::from_fn(xg, tg, |ix, it| {
                let a = &temporal.alpha[it];
                let s = (0..n).fold(dv[r].at(ix, it), |acc, i| acc + a[(i, r)] * prev.v[i].at(ix, it));
                -s
            });
        }
    }
    let has_exp = !prev.c.iter().all(Coefficient::is_zero)
        || prev.p.iter().any(|p| p.values.iter().any(|z| !z.is_zero()));
    if has_exp {
        for r in 0..n {
            for j in 0..n {
                rhs.exponential[r * n + j] = Coefficient::from_fn(xg, tg, |ix, it| {
                    let a = &temporal.alpha[it];
                    let s = (0..n).fold(dc[r * n + j].at(ix, it), |acc, i| {
                        acc + a[(i, r)] * prev.w_at(i, j, ix, it)
                    });
                    -s
                });
            }
        }
    }

    // Layers.
    if prev.d_conv.iter().chain(&prev.omega_conv).flatten().any(|c| !c.is_zero()) {
        return Err(Error::Unsupported(format!(
            "order {k} would need a nested layer convolution"
        )));
    }
    if k == 2 {
        layer_sources_from_time_operator(ctx, prev, &mut rhs)?;
    }
    if k == 3 {
        check_transport_cross_terms(ctx, &terms[0])?;
    }
    Ok(rhs)
}

/// −T₁ applied to the erfc layers of u_{k−2}, projected on b_i:
/// h̄_i = −(t∂_t d − γ_ii d), h̄_ij = −(t∂_t ω + (β_j(0) − γ_ii) ω).
fn layer_sources_from_time_operator<T: Real>(
    ctx: &ExpansionContext<T>,
    prev: &AsymptoticTerm<T>,
    rhs: &mut RhsDecomposition<T>,
) -> Result<()> {
    let n = ctx.dim();
    let xg = ctx.x_grid();
    let tg = ctx.t_grid();
    let gamma = |i: usize, r: usize, ix: usize, it: usize| ctx.gamma.fields[i * n + r].at(ix, it);
    for l in 0..2 {
        for i in 0..n {
            let amps: Vec<(Option<usize>, &Coefficient<T>)> = std::iter::once((None, &prev.d[l][i]))
                .chain((0..n).map(|j| (Some(j), &prev.omega[l][i * n + j])))
                .collect();
            for (j, amp) in amps {
                if amp.is_zero() {
                    continue;
                }
                let scale = amp.max_magnitude().max(T::one());
                let mut cross = T::zero();
                for r in (0..n).filter(|&r| r != i) {
                    for ix in 0..xg.len() {
                        for it in 0..tg.len() {
                            cross = cross.max((gamma(i, r, ix, it) * amp.at(ix, it)).norm());
                        }
                    }
                }
                if cross > T::lit(CROSS_TOL) * scale {
                    return Err(Error::Unsupported(format!(
                        "layer source of order 2 at x={l} couples b_{} into another direction (|γ·d| = {cross:e})",
                        i + 1
                    )));
                }
                let da = amp.dt();
                let shift = j.map_or(C::zero(), |j| ctx.spectral.temporal.beta0(j));
                let h = Coefficient::from_fn(xg, tg, |ix, it| {
                    let t = tg.nodes[it];
                    -(da.at(ix, it) * cr(t) + (shift - gamma(i, i, ix, it)) * amp.at(ix, it))
                });
                match j {
                    None => rhs.layer[l][i] = h,
                    Some(j) => rhs.layer_exp[l][i * n + j] = h,
                }
            }
        }
    }
    Ok(())
}

/// The order-3 equation contains L^ξ u_0; its b_i component vanishes by the
/// transport equation, the remaining components 2φ′ d (b′_i, b*_r) must vanish too.
fn check_transport_cross_terms<T: Real>(ctx: &ExpansionContext<T>, u0: &AsymptoticTerm<T>) -> Result<()> {
    let n = ctx.dim();
    if n == 1 {
        return Ok(());
    }
    let sp = &ctx.spectral.spatial;
    let xg = ctx.x_grid();
    let tg = ctx.t_grid();
    for i in 0..n {
        let phi1: Vec<C<T>> = xg.nodes.iter().map(|&x| ctx.stretch.phi_prime(i, 0, x)).collect();
        for r in (0..n).filter(|&r| r != i) {
            let coupling = sp.b_prime_coupling_nodes(i, r);
            for l in 0..2 {
                let amps = std::iter::once(&u0.d[l][i]).chain((0..n).map(|j| &u0.omega[l][i * n + j]));
                for amp in amps.filter(|a| !a.is_zero()) {
                    let scale = amp.max_magnitude().max(T::one());
                    for ix in 0..xg.len() {
                        let g = (phi1[ix] * coupling[ix]).norm() * T::lit(2.0);
                        for it in 0..tg.len() {
                            if g * amp.at(ix, it).norm() > T::lit(CROSS_TOL) * scale {
                                return Err(Error::Unsupported(format!(
                                    "order 3: transport of layer b_{} at x={l} leaks into b_{} (x-dependent eigenvectors)",
                                    i + 1,
                                    r + 1
                                )));
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn transpose_solution<T: Real>(
    ctx: &ExpansionContext<T>,
    sols: &[Vec<Vec<C<T>>>],
    comp: usize,
) -> Coefficient<T> {
    Coefficient::from_fn(ctx.x_grid(), ctx.t_grid(), |ix, it| sols[ix][it][comp])
}

/// Bounded solutions of t[v′ + αᵀv] − diag(β) v = g^V at every x node.
pub fn solve_interior_v<T: Real>(ctx: &ExpansionContext<T>, rhs: &RhsDecomposition<T>) -> Result<Vec<Coefficient<T>>> {
    let n = ctx.dim();
    if rhs.interior.iter().all(Coefficient::is_zero) {
        return Ok(vec![Coefficient::zero(); n]);
    }
    let nt = ctx.t_grid().len();
    let xg = ctx.x_grid();
    let sols: Vec<Vec<Vec<C<T>>>> = (0..xg.len())
        .into_par_iter()
        .map(|ix| {
            let sys = InteriorSystem {
                temporal: &ctx.spectral.temporal,
                forcing: rhs.interior.iter().map(|g| g.row(ix, nt)).collect(),
                shift: C::zero(),
                column: None,
            };
            let y0 = bounded_startup(&sys)?;
            solve_degenerate(&sys, ctx.t_grid(), &y0).map_err(|e| annotate(e, "V", xg.nodes[ix]))
        })
        .collect::<Result<_>>()?;
    Ok((0..n).map(|i| transpose_solution(ctx, &sols, i)).collect())
}

fn annotate<T: Real>(e: Error, what: &str, x: T) -> Error {
    match e {
        Error::Numerical(m) => Error::Numerical(format!("{what} at x={x}: {m}")),
        Error::Degeneracy(m) => Error::Degeneracy(format!("{what} at x={x}: {m}")),
        other => other,
    }
}

/// Inputs of one column solve of the C system at a fixed x node.
pub struct ColumnProblem<'a, T: Real> {
    pub temporal: &'a TemporalSpectrum<T>,
    pub j: usize,
    /// g_ij(t) for i = 0..n at the t nodes.
    pub forcing: Vec<Vec<C<T>>>,
    /// c_ij(0) with the diagonal entry taken at p_j = 0.
    pub start: Vec<C<T>>,
}

impl<T: Real> ColumnProblem<'_, T> {
    /// c_·j on the t grid for a given p_j.
    pub fn solve(&self, p: C<T>) -> Result<Vec<Vec<C<T>>>> {
        let sys = InteriorSystem {
            temporal: self.temporal,
            forcing: self.forcing.clone(),
            shift: self.temporal.beta0(self.j),
            column: Some((self.j, p)),
        };
        let mut y0 = self.start.clone();
        y0[self.j] -= p;
        solve_degenerate(&sys, &self.temporal.grid, &y0)
    }

    /// c_jj′(0) + Σ_r α_rj(0) c_rj(0) + α_jj(0) p_j: the value at t = 0 of the
    /// diagonal right-hand side two orders up, which must vanish.
    pub fn regularity_residual(&self, sol: &[Vec<C<T>>], p: C<T>) -> C<T> {
        let j = self.j;
        let (s, w) = self.temporal.grid.node_derivative_weights(0);
        let dc = w
            .iter()
            .enumerate()
            .fold(C::<T>::zero(), |acc, (k, wk)| acc + sol[s + k][j] * cr(*wk));
        let a0 = &self.temporal.alpha[0];
        let n = sol[0].len();
        (0..n).fold(dc + a0[(j, j)] * p, |acc, r| acc + a0[(r, j)] * sol[0][r])
    }
}

/// Solves the C system column by column; p_j fixed by the regularity of order k+2
/// when `need_p`, else zero. `initial[ix][i]` are the coordinates of h at t = 0
/// (order 0 only).
pub fn solve_interior_cp<T: Real>(
    ctx: &ExpansionContext<T>,
    rhs: &RhsDecomposition<T>,
    v: &[Coefficient<T>],
    initial: Option<&[Vec<C<T>>]>,
    need_p: bool,
) -> Result<(Vec<Coefficient<T>>, Vec<Tab1<T, C<T>>>)> {
    let n = ctx.dim();
    let xg = ctx.x_grid();
    let nt = ctx.t_grid().len();
    let temporal = &ctx.spectral.temporal;
    let zero_p = || Tab1::new(xg.clone(), vec![C::zero(); xg.len()]);
    let has_ic = initial.is_some_and(|h| h.iter().flatten().any(|z| !z.is_zero()));
    if !has_ic && rhs.exponential.iter().all(Coefficient::is_zero) && v.iter().all(Coefficient::is_zero) {
        return Ok((vec![Coefficient::zero(); n * n], (0..n).map(|_| zero_p()).collect()));
    }
    let b0: Vec<C<T>> = (0..n).map(|j| temporal.beta0(j)).collect();
    // per x: (solutions per column [j][it][i], p per column)
    let per_x: Vec<(Vec<Vec<Vec<C<T>>>>, Vec<C<T>>)> = (0..xg.len())
        .into_par_iter()
        .map(|ix| {
            let x = xg.nodes[ix];
            let g = |i: usize, j: usize| rhs.exponential[i * n + j].row(ix, nt);
            let mut start = CMat::zeros(n, n);
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    start[(i, j)] = rhs.exponential[i * n + j].at(ix, 0) / (b0[j] - b0[i]);
                }
            }
            let mut cols = Vec::with_capacity(n);
            let mut ps = Vec::with_capacity(n);
            for j in 0..n {
                let mut s = start.col(j);
                let h = initial.map_or(C::zero(), |h| h[ix][j]);
                s[j] = (0..n)
                    .filter(|&q| q != j)
                    .fold(h - v[j].at(ix, 0), |acc, q| acc - start[(j, q)]);
                let prob = ColumnProblem {
                    temporal,
                    j,
                    forcing: (0..n).map(|i| g(i, j)).collect(),
                    start: s,
                };
                let sol0 = prob.solve(C::zero()).map_err(|e| annotate(e, "C", x))?;
                if !need_p {
                    cols.push(sol0);
                    ps.push(C::zero());
                    continue;
                }
                let sol1 = prob.solve(C::one()).map_err(|e| annotate(e, "C", x))?;
                let r0 = prob.regularity_residual(&sol0, C::zero());
                let slope = prob.regularity_residual(&sol1, C::one()) - r0;
                let scale = T::one().max(vec_norm(&sol0[0]));
                let p = if slope.norm() > T::lit(P_SLOPE_TOL) * scale {
                    -r0 / slope
                } else if r0.norm() <= T::lit(P_RESIDUAL_TOL) * scale {
                    C::zero()
                } else {
                    return Err(Error::Degeneracy(format!(
                        "p_{} at x={x}: regularity condition independent of p (α_jj(0) = 0) but violated by {:e}",
                        j + 1,
                        r0.norm()
                    )));
                };
                let sol: Vec<Vec<C<T>>> = sol0
                    .iter()
                    .zip(&sol1)
                    .map(|(a, b)| a.iter().zip(b).map(|(a, b)| *a + (*b - *a) * p).collect())
                    .collect();
                cols.push(sol);
                ps.push(p);
            }
            Ok((cols, ps))
        })
        .collect::<Result<_>>()?;
    let mut c = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            c.push(Coefficient::from_fn(xg, ctx.t_grid(), |ix, it| per_x[ix].0[j][it][i]));
        }
    }
    let p = (0..n)
        .map(|j| Tab1::new(xg.clone(), per_x.iter().map(|(_, ps)| ps[j]).collect()))
        .collect();
    Ok((c, p))
}

/// Layer amplitudes (d, ω) from the boundary traces of the interior part, continued in x
/// by the transport factors.
#[allow(clippy::type_complexity)]
pub fn transport_amplitudes<T: Real>(
    ctx: &ExpansionContext<T>,
    v: &[Coefficient<T>],
    c: &[Coefficient<T>],
    p: &[Tab1<T, C<T>>],
) -> ([Vec<Coefficient<T>>; 2], [Vec<Coefficient<T>>; 2]) {
    let n = ctx.dim();
    let xg = ctx.x_grid();
    let tg = ctx.t_grid();
    let temporal = &ctx.spectral.temporal;
    let mut d: [Vec<Coefficient<T>>; 2] = [Vec::new(), Vec::new()];
    let mut omega: [Vec<Coefficient<T>>; 2] = [Vec::new(), Vec::new()];
    for l in 0..2 {
        let xb = ctx.boundary_index(l);
        let duals = &ctx.spectral.spatial.samples[xb].duals;
        // kappa[it][r][i] = (ψ_r(t), b*_i(l))
        let kappa: Vec<Vec<Vec<C<T>>>> = temporal
            .samples
            .iter()
            .map(|s| {
                s.vectors
                    .iter()
                    .map(|psi| duals.iter().map(|bs| inner(psi, bs)).collect())
                    .collect()
            })
            .collect();
        for i in 0..n {
            let theta = &ctx.transport[l][i];
            let trace: Vec<C<T>> = (0..tg.len())
                .map(|it| (0..n).fold(C::zero(), |acc, r| acc - v[r].at(xb, it) * kappa[it][r][i]))
                .collect();
            d[l].push(Coefficient::from_fn(xg, tg, |ix, it| trace[it] * theta[ix]));
            for j in 0..n {
                let trace: Vec<C<T>> = (0..tg.len())
                    .map(|it| {
                        (0..n).fold(C::zero(), |acc, r| {
                            let mut w = c[r * n + j].at(xb, it);
                            if r == j {
                                w += p[j].values[xb];
                            }
                            acc - w * kappa[it][r][i]
                        })
                    })
                    .collect();
                omega[l].push(Coefficient::from_fn(xg, tg, |ix, it| trace[it] * theta[ix]));
            }
        }
    }
    (d, omega)
}

/// Packs the parts of order k, checks the boundary and initial conditions on the grid.
#[allow(clippy::too_many_arguments)]
pub fn assemble_term<T: Real>(
    ctx: &ExpansionContext<T>,
    k: usize,
    v: Vec<Coefficient<T>>,
    c: Vec<Coefficient<T>>,
    p: Vec<Tab1<T, C<T>>>,
    amplitudes: ([Vec<Coefficient<T>>; 2], [Vec<Coefficient<T>>; 2]),
    rhs: &RhsDecomposition<T>,
) -> Result<AsymptoticTerm<T>> {
    let n = ctx.dim();
    let (d, omega) = amplitudes;
    let sp = &ctx.spectral.spatial;
    let mut profiles: [Vec<LayerProfile>; 2] = [Vec::new(), Vec::new()];
    for l in 0..2 {
        for i in 0..n {
            let conv = !rhs.layer[l][i].is_zero() || (0..n).any(|j| !rhs.layer_exp[l][i * n + j].is_zero());
            if conv && sp.samples.iter().any(|s| s.values[i].im.abs() > T::lit(1e-12)) {
                return Err(Error::Unsupported(format!(
                    "convolution layer profile for complex λ_{} (complex stretched variable)",
                    i + 1
                )));
            }
            profiles[l].push(LayerProfile {
                kind: if conv {
                    ProfileKind::ErfcPlusConvolution
                } else {
                    ProfileKind::Erfc
                },
            });
        }
    }
    let mut term = AsymptoticTerm {
        k,
        v,
        c,
        p,
        d,
        omega,
        d_conv: rhs.layer.clone(),
        omega_conv: rhs.layer_exp.clone(),
        profiles,
        residuals: TermResiduals::default(),
    };
    term.residuals = term_residuals(ctx, &term);
    let worst = term.residuals.boundary.max(term.residuals.initial);
    if !(worst <= ASSEMBLY_TOL) {
        return Err(Error::Numerical(format!(
            "order {k} fails its boundary/initial conditions (residual {worst:e})"
        )));
    }
    Ok(term)
}

fn term_residuals<T: Real>(ctx: &ExpansionContext<T>, term: &AsymptoticTerm<T>) -> TermResiduals {
    let n = ctx.dim();
    let xg = ctx.x_grid();
    let tg = ctx.t_grid();
    let temporal = &ctx.spectral.temporal;
    let sp = &ctx.spectral.spatial;
    let mut boundary = T::zero();
    for l in 0..2 {
        let xb = ctx.boundary_index(l);
        let b = &sp.samples[xb].vectors;
        for it in 0..tg.len() {
            let psi = &temporal.samples[it].vectors;
            // the e^{μ_j}-free part and each e^{μ_j} part separately
            for part in 0..=n {
                let mut u = vec![C::zero(); n];
                for i in 0..n {
                    let (a, amp) = match part {
                        0 => (term.v[i].at(xb, it), term.d[l][i].at(xb, it)),
                        j1 => (term.w_at(i, j1 - 1, xb, it), term.omega[l][i * n + j1 - 1].at(xb, it)),
                    };
                    axpy(&mut u, a, &psi[i]);
                    axpy(&mut u, amp, &b[i]);
                }
                boundary = boundary.max(vec_norm(&u));
            }
        }
    }
    let mut initial = T::zero();
    let psi = &temporal.samples[0].vectors;
    for (ix, &x) in xg.nodes.iter().enumerate() {
        let mut u = if term.k == 0 {
            ctx.spec.h_at(x).into_iter().map(|z| -z).collect()
        } else {
            vec![C::zero(); n]
        };
        for i in 0..n {
            let a = (0..n).fold(term.v[i].at(ix, 0), |acc, j| acc + term.w_at(i, j, ix, 0));
            axpy(&mut u, a, &psi[i]);
        }
        initial = initial.max(vec_norm(&u));
    }
    TermResiduals {
        boundary: boundary.as_f64(),
        initial: initial.as_f64(),
    }
}

/// Solves order k given orders 0..k−1; `need_p` when order k+2 will be built.
pub fn solve_order<T: Real>(
    ctx: &ExpansionContext<T>,
    k: usize,
    terms: &[AsymptoticTerm<T>],
    need_p: bool,
) -> Result<(RhsDecomposition<T>, AsymptoticTerm<T>)> {
    let rhs = build_rhs(ctx, k, terms)?;
    let v = solve_interior_v(ctx, &rhs)?;
    let initial: Option<Vec<Vec<C<T>>>> = (k == 0).then(|| {
        let s0 = &ctx.spectral.temporal.samples[0];
        ctx.x_grid()
            .nodes
            .iter()
            .map(|&x| s0.coordinates(&ctx.spec.h_at(x)))
            .collect()
    });
    let (c, p) = solve_interior_cp(ctx, &rhs, &v, initial.as_deref(), need_p)?;
    let amps = transport_amplitudes(ctx, &v, &c, &p);
    let term = assemble_term(ctx, k, v, c, p, amps, &rhs)?;
    Ok((rhs, term))
}

/// The terms u_0 … u_n of one problem.
#[derive(Clone, Debug)]
pub struct Expansion<T> {
    pub ctx: ExpansionContext<T>,
    pub order: usize,
    pub terms: Vec<AsymptoticTerm<T>>,
    pub rhs: Vec<RhsDecomposition<T>>,
}

impl<T: Real> Expansion<T> {
    pub fn build(spec: &ProblemSpec<T>, order: usize, opts: &ExpansionOptions<T>) -> Result<Self> {
        if order > K_MAX {
            return Err(Error::Unsupported(format!(
                "order {order} requested, at most {K_MAX} is supported"
            )));
        }
        let ctx = ExpansionContext::new(spec, opts)?;
        Self::build_in(ctx, order)
    }

    /// Builds on an existing context (spectra and stretch maps are reused).
    pub fn build_in(ctx: ExpansionContext<T>, order: usize) -> Result<Self> {
        if order > K_MAX {
            return Err(Error::Unsupported(format!(
                "order {order} requested, at most {K_MAX} is supported"
            )));
        }
        let mut terms = Vec::with_capacity(order + 1);
        let mut rhs = Vec::with_capacity(order + 1);
        for k in 0..=order {
            let (r, t) = solve_order(&ctx, k, &terms, k + 2 <= order)?;
            rhs.push(r);
            terms.push(t);
        }
        Ok(Expansion { ctx, order, terms, rhs })
    }

    pub fn dim(&self) -> usize {
        self.ctx.dim()
    }

    /// Σ_{k ≤ n} ε^{k/2} u_k at a regularized point.
    pub fn partial_sum_at(&self, n: usize, p: &RegularizedPoint<T>, basis: &PointBasis<T>, eps: T) -> Vec<C<T>> {
        let mut out = vec![C::zero(); self.dim()];
        let root = eps.sqrt();
        let mut scale = T::one();
        for term in self.terms.iter().take(n + 1) {
            if !term.is_zero() {
                axpy(&mut out, cr(scale), &term.value(p, basis));
            }
            scale *= root;
        }
        out
    }

    /// u_εn(x, t) with n = `self.order`.
    pub fn evaluate(&self, x: T, t: T, eps: T) -> Vec<C<T>> {
        let p = self.ctx.regularize(x, t, eps);
        let basis = self.ctx.basis_at(x, t);
        self.partial_sum_at(self.order, &p, &basis, eps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{Poly, Poly2};
    use crate::problem::preset;

    fn small() -> ExpansionOptions<f64> {
        ExpansionOptions {
            nx: 32,
            nt: 128,
            stretch_intervals: 256,
            quad_tol: 1e-10,
        }
    }

    fn scalar_spec(a: &[f64], d: &[f64], f: &[&[f64]], h: &[f64]) -> ProblemSpec<f64> {
        ProblemSpec {
            n: 1,
            a: vec![vec![Poly::new(a)]],
            d: vec![vec![Poly::new(d)]],
            f: vec![Poly2::new(f)],
            h: vec![Poly::new(h)],
            t_end: 1.0,
            epsilons: vec![],
        }
    }

    #[test]
    fn orders_zero_and_one_have_zero_homogeneous_rhs() {
        let spec = preset::<f64>("scalar-const").unwrap();
        let e = Expansion::build(&spec, 1, &small()).unwrap();
        assert!(e.rhs[1].is_zero());
        assert!(e.terms[1].is_zero());
        // order 0: only f enters
        assert!(e.rhs[0].exponential.iter().all(Coefficient::is_zero));
        assert!(e.rhs[0].layer.iter().flatten().all(Coefficient::is_zero));
    }

    #[test]
    fn zero_data_gives_zero_terms() {
        let spec = scalar_spec(&[1.0], &[-1.0], &[&[0.0]], &[0.0]);
        let e = Expansion::build(&spec, 3, &small()).unwrap();
        assert!(e.terms.iter().all(AsymptoticTerm::is_zero));
    }

    #[test]
    fn scalar_constant_order_zero_matches_hand_assembly() {
        // t v' + v = (x − x²)(1 + t)  →  v = (x − x²)(1 + t/2); c = h − v(0) = x − x²; no layers
        let spec = preset::<f64>("scalar-const").unwrap();
        let e = Expansion::build(&spec, 0, &small()).unwrap();
        let mut rng = 12345u64;
        let mut next = || {
            rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (rng >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..10 {
            let (x, t, eps) = (next(), next(), 0.01 + 0.1 * next());
            let b = x - x * x;
            let want = b * (1.0 + t / 2.0) + b * eps / (t + eps);
            let got = e.evaluate(x, t, eps);
            assert!((got[0] - cr(want)).norm() < 1e-10, "{x} {t}: {} vs {want}", got[0]);
        }
    }

    #[test]
    fn initial_and_boundary_conditions_hold() {
        for name in ["scalar-var-lambda", "coupled-2x2", "complex-2x2"] {
            let spec = preset::<f64>(name).unwrap();
            let e = Expansion::build(&spec, 2, &small()).unwrap();
            for term in &e.terms {
                assert!(term.residuals.boundary < 1e-12, "{name} k={}", term.k);
                assert!(term.residuals.initial < 1e-12, "{name} k={}", term.k);
            }
            let eps = 0.01;
            for &x in &[0.1, 0.37, 0.8] {
                let u = e.terms[0].value(&e.ctx.regularize(x, 0.0, eps), &e.ctx.basis_at(x, 0.0));
                let h = spec.h_at(x);
                for i in 0..spec.n {
                    assert!((u[i] - h[i]).norm() < 1e-10, "{name}");
                }
            }
            for &t in &[0.05, 0.5, 1.0] {
                for x in [0.0, 1.0] {
                    let p = e.ctx.regularize(x, t, eps);
                    let basis = e.ctx.basis_at(x, t);
                    for term in &e.terms[1..] {
                        assert!(vec_norm(&term.value(&p, &basis)) < 1e-10);
                    }
                    assert!(vec_norm(&e.terms[0].value(&p, &basis)) < 1e-10);
                }
            }
        }
    }

    #[test]
    fn construction_is_linear_in_the_data() {
        let spec = preset::<f64>("coupled-2x2-varying").unwrap();
        let e1 = Expansion::build(&spec, 2, &small()).unwrap();
        let e2 = Expansion::build(&spec.scaled_data(2.0), 2, &small()).unwrap();
        for (a, b) in e1.terms.iter().zip(&e2.terms) {
            let pairs = a.v.iter().zip(&b.v).chain(a.c.iter().zip(&b.c));
            for (ca, cb) in pairs {
                let scale = ca.max_magnitude().max(1.0);
                if let (Some(fa), Some(fb)) = (ca.field(), cb.field()) {
                    for (za, zb) in fa.data.iter().zip(&fb.data) {
                        assert!((*za * 2.0 - *zb).norm() < 1e-11 * scale);
                    }
                } else {
                    assert!(ca.is_zero() && cb.is_zero());
                }
            }
            for (pa, pb) in a.p.iter().zip(&b.p) {
                for (za, zb) in pa.values.iter().zip(&pb.values) {
                    assert!((*za * 2.0 - *zb).norm() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn transport_of_quadratic_lambda_matches_stepper() {
        // λ = (1+x)²: 2d′/(1+x) − d/(1+x)² = 0, d(0) = 1 → d = (1+x)^{1/2}
        let spec = scalar_spec(&[1.0, 2.0, 1.0], &[-1.0], &[&[1.0]], &[0.0, 1.0, -1.0]);
        let ctx = ExpansionContext::new(&spec, &small()).unwrap();
        // independent RK4 on d′ = −φ″/(2φ′) d with φ′ = λ^{-1/2}
        let rate = |x: f64| 1.0 / (2.0 * (1.0 + x));
        let steps = 4000;
        let h = 1.0 / steps as f64;
        let mut d = 1.0;
        let mut oracle = vec![1.0];
        for s in 0..steps {
            let x = s as f64 * h;
            let k1 = rate(x) * d;
            let k2 = rate(x + h / 2.0) * (d + h * k1 / 2.0);
            let k3 = rate(x + h / 2.0) * (d + h * k2 / 2.0);
            let k4 = rate(x + h) * (d + h * k3);
            d += h * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0;
            oracle.push(d);
        }
        let xg = ctx.x_grid();
        for (ix, &x) in xg.nodes.iter().enumerate() {
            let want = oracle[(x * steps as f64).round() as usize];
            assert!((ctx.transport[0][0][ix].re - want).abs() < 1e-8);
            let right = ((1.0 + x) / 2.0).sqrt();
            assert!((ctx.transport[1][0][ix].re - right).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_lambda_gives_constant_transport() {
        let spec = preset::<f64>("scalar-const").unwrap();
        let ctx = ExpansionContext::new(&spec, &small()).unwrap();
        for l in 0..2 {
            assert!(ctx.transport[l][0].iter().all(|z| (z - cr(1.0)).norm() < 1e-14));
        }
    }

    #[test]
    fn homogeneous_boundary_data_gives_no_layers() {
        let spec = preset::<f64>("coupled-2x2").unwrap();
        let e = Expansion::build(&spec, 2, &small()).unwrap();
        for term in &e.terms {
            assert!(term.d.iter().chain(&term.omega).flatten().all(Coefficient::is_zero));
        }
    }

    #[test]
    fn p_probes_are_affine() {
        let spec = preset::<f64>("coupled-2x2-varying").unwrap();
        let ctx = ExpansionContext::new(&spec, &small()).unwrap();
        let (_, u0) = solve_order(&ctx, 0, &[], true).unwrap();
        let (_, u1) = solve_order(&ctx, 1, std::slice::from_ref(&u0), false).unwrap();
        let rhs = build_rhs(&ctx, 2, &[u0, u1]).unwrap();
        let nt = ctx.t_grid().len();
        let n = 2;
        let ix = 11;
        for j in 0..n {
            let prob = ColumnProblem {
                temporal: &ctx.spectral.temporal,
                j,
                forcing: (0..n).map(|i| rhs.exponential[i * n + j].row(ix, nt)).collect(),
                start: (0..n)
                    .map(|i| {
                        if i == j {
                            cr(0.3)
                        } else {
                            let tp = &ctx.spectral.temporal;
                            rhs.exponential[i * n + j].at(ix, 0) / (tp.beta0(j) - tp.beta0(i))
                        }
                    })
                    .collect(),
            };
            let s0 = prob.solve(cr(0.0)).unwrap();
            let s1 = prob.solve(cr(1.0)).unwrap();
            let s2 = prob.solve(cr(2.0)).unwrap();
            // the line is formed from s0 and s1, so roundoff scales with their size
            let sup = s0.iter().chain(&s1).chain(&s2).flatten().fold(1.0f64, |m, z| m.max(z.norm()));
            for it in 0..nt {
                for i in 0..n {
                    let line = s0[it][i] + (s1[it][i] - s0[it][i]) * 2.0;
                    assert!((line - s2[it][i]).norm() < 1e-9 * sup);
                }
            }
        }
    }

    #[test]
    fn p_makes_the_next_order_regular() {
        let spec = preset::<f64>("coupled-2x2-varying").unwrap();
        let e = Expansion::build(&spec, 2, &small()).unwrap();
        let n = 2;
        // diagonal rhs of order 2 vanishes at t = 0
        for j in 0..n {
            let g = &e.rhs[2].exponential[j * n + j];
            for ix in 0..e.ctx.x_grid().len() {
                assert!(g.at(ix, 0).norm() < 1e-8, "j={j} ix={ix}: {}", g.at(ix, 0));
            }
        }
        assert!(e.terms[0].p.iter().any(|p| p.max_magnitude() > 1e-6));
    }

    #[test]
    fn order_two_rhs_matches_direct_recomputation() {
        // f − T₁u₀ recomputed by differencing u₀ in t and μ with (ξ, τ) fixed.
        // Its interior part vanishes (order-0 interior equation) up to the
        // diagonal term −t α_jj p_j e^{μ_j} ψ_j left out of the C system, so
        // it must equal the layer part of the order-2 decomposition plus that term.
        for name in ["scalar-var-lambda", "coupled-2x2-varying"] {
            let spec = preset::<f64>(name).unwrap();
            let e = Expansion::build(&spec, 2, &ExpansionOptions::default()).unwrap();
            let n = spec.n;
            let u0 = &e.terms[0];
            let b0: Vec<C<f64>> = (0..n).map(|j| e.ctx.spectral.temporal.beta0(j)).collect();
            let mut rng = 99u64;
            let mut next = || {
                rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (rng >> 11) as f64 / (1u64 << 53) as f64
            };
            for _ in 0..10 {
                let (x, t) = (0.05 + 0.9 * next(), 0.1 + 0.8 * next());
                let p = e.ctx.regularize(x, t, 0.02);
                let basis = e.ctx.basis_at(x, t);
                let h = 1e-4;
                let at_t = |s: f64| {
                    let mut q = p.clone();
                    q.t = s;
                    u0.value(&q, &e.ctx.basis_at(x, s))
                };
                let (up, um) = (at_t(t + h), at_t(t - h));
                let u = u0.value(&p, &basis);
                // u₀ is linear in each e^{μ_j}, so ∂_{μ_j} is a difference quotient in e^{μ_j}
                let du_mu: Vec<Vec<C<f64>>> = (0..n)
                    .map(|j| {
                        let mut q = p.clone();
                        q.exp_mu[j] = p.exp_mu[j] * 2.0;
                        u0.value(&q, &basis).iter().zip(&u).map(|(a, b)| a - b).collect()
                    })
                    .collect();
                let du = spec.d_at(t).mul_vec(&u);
                let f = spec.f_at(x, t);
                let mut got = layer_part(&e.rhs[2], &p, &basis);
                let alpha = e.ctx.spectral.temporal.alpha_at(t);
                for j in 0..n {
                    let a = -p.exp_mu[j] * alpha[(j, j)] * u0.p[j].eval(x) * t;
                    axpy(&mut got, a, &basis.psi[j]);
                }
                for i in 0..n {
                    let dt = (up[i] - um[i]) / (2.0 * h);
                    let mu = (0..n).fold(C::zero(), |acc, j| acc + b0[j] * du_mu[j][i]);
                    let want = f[i] - (dt * t + mu - du[i]);
                    assert!((want - got[i]).norm() < 1e-8, "{name}: {want} vs {}", got[i]);
                }
            }
        }
    }

    fn layer_part(r: &RhsDecomposition<f64>, p: &RegularizedPoint<f64>, basis: &PointBasis<f64>) -> Vec<C<f64>> {
        let mut q = r.clone();
        q.interior.iter_mut().for_each(|c| *c = Coefficient::zero());
        q.exponential.iter_mut().for_each(|c| *c = Coefficient::zero());
        q.value(p, basis)
    }

    #[test]
    fn unsupported_orders_are_rejected() {
        let spec = preset::<f64>("scalar-const").unwrap();
        assert!(matches!(Expansion::build(&spec, 4, &small()), Err(Error::Unsupported(_))));
    }

    #[test]
    fn unit_exponent_resonance_stops_at_order_two() {
        let mut spec = preset::<f64>("coupled-2x2").unwrap();
        spec.d[1][1] = Poly::constant(-2.0);
        let e = Expansion::build(&spec, 1, &small()).unwrap();
        assert!(e.terms[0].c.iter().all(|c| c.max_magnitude().is_finite()));
        assert!(matches!(Expansion::build(&spec, 2, &small()), Err(Error::Unsupported(_))));
    }
}
