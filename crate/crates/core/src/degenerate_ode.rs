//! Linear systems t·y′ + M(t)·y = g(t) with a regular singular point at t = 0.
//!
//! Bounded solutions are selected by their value at t = 0 (obtained
//! algebraically by setting t = 0 in the equation, or supplied for the
//! components where M(0) is singular). The first step is a Taylor step at the
//! singular point; after that the two-stage Gauss–Legendre collocation method
//! takes over.

use num_traits::Zero;

use crate::error::{Error, Result};
use crate::interp::{fornberg, Grid1};
use crate::linalg::{eigenvector, inner, CMat};
use crate::scalar::{cr, Real, C};

pub trait DegenerateSystem<T: Real> {
    fn dim(&self) -> usize;
    fn matrix(&self, t: T) -> CMat<T>;
    fn forcing(&self, t: T) -> Vec<C<T>>;
}

/// y(0) = M(0)⁻¹ g(0); fails when M(0) is singular.
pub fn bounded_startup<T: Real, S: DegenerateSystem<T> + ?Sized>(sys: &S) -> Result<Vec<C<T>>> {
    let m0 = sys.matrix(T::zero());
    m0.solve(&sys.forcing(T::zero())).map_err(|_| {
        Error::Degeneracy("singular algebraic startup at t=0 (some β_i(0) = 0)".into())
    })
}

/// Integrates from `grid.first()` with initial value `y0`; returns y at every node.
pub fn solve_degenerate<T: Real, S: DegenerateSystem<T> + ?Sized>(
    sys: &S,
    grid: &Grid1<T>,
    y0: &[C<T>],
) -> Result<Vec<Vec<C<T>>>> {
    assert_eq!(y0.len(), sys.dim());
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0.to_vec();
    out.push(y.clone());
    // a t^m ln t component needs steps small relative to t near the origin
    let mut graded = false;
    for (step, w) in grid.nodes.windows(2).enumerate() {
        let (t0, h) = (w[0], w[1] - w[0]);
        if step == 0 && t0 == T::zero() {
            (y, graded) = start_from_singular_point(sys, h, &y)?;
        } else {
            let pieces = if graded {
                (h / (T::lit(GRADING) * t0)).ceil().to_usize().unwrap_or(1).max(1)
            } else {
                1
            };
            let dt = h / T::lit(pieces as f64);
            for p in 0..pieces {
                y = gl_step(sys, t0 + dt * T::lit(p as f64), dt, &y).map_err(|e| {
                    Error::Numerical(format!("degenerate ODE step {step} at t={t0}: {e}"))
                })?;
            }
        }
        if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Numerical(format!("degenerate ODE blew up at step {step}")));
        }
        out.push(y.clone());
    }
    Ok(out)
}

/// One two-stage Gauss–Legendre step from t0 to t0 + h.
fn gl_step<T: Real, S: DegenerateSystem<T> + ?Sized>(sys: &S, t0: T, h: T, y: &[C<T>]) -> Result<Vec<C<T>>> {
    let n = sys.dim();
    let r3 = T::lit(3.0).sqrt();
    let half = T::lit(0.5);
    let quarter = T::lit(0.25);
    let c = [half - r3 / T::lit(6.0), half + r3 / T::lit(6.0)];
    let a = [
        [quarter, quarter - r3 / T::lit(6.0)],
        [quarter + r3 / T::lit(6.0), quarter],
    ];
    let ts = [t0 + c[0] * h, t0 + c[1] * h];
    let ms = [sys.matrix(ts[0]), sys.matrix(ts[1])];
    let gs = [sys.forcing(ts[0]), sys.forcing(ts[1])];
    let mut big = CMat::zeros(2 * n, 2 * n);
    let mut rhs = vec![C::zero(); 2 * n];
    for s in 0..2 {
        let my = ms[s].mul_vec(y);
        for i in 0..n {
            rhs[s * n + i] = gs[s][i] - my[i];
            big[(s * n + i, s * n + i)] += cr(ts[s]);
            for l in 0..2 {
                let f = cr(h * a[s][l]);
                for j in 0..n {
                    big[(s * n + i, l * n + j)] += ms[s][(i, j)] * f;
                }
            }
        }
    }
    let k = big.solve(&rhs)?;
    Ok((0..n).map(|i| y[i] + (k[i] + k[n + i]) * cr(h * half)).collect())
}

/// First step away from t = 0. Without a logarithmic resonance this is a plain
/// Taylor step to h. With one, the Taylor step (log term included) only goes
/// to h/1024, where the neglected t^{m+1} ln t terms are negligible, and
/// geometrically graded collocation steps carry the solution on to h.
fn start_from_singular_point<T: Real, S: DegenerateSystem<T> + ?Sized>(
    sys: &S,
    h: T,
    y0: &[C<T>],
) -> Result<(Vec<C<T>>, bool)> {
    let direct = taylor_start(sys, h, h, y0)?;
    if !direct.1 {
        return Ok(direct);
    }
    let s = h / T::lit(1024.0);
    let (mut y, _) = taylor_start(sys, h, s, y0)?;
    let steps = (T::lit(1024.0).ln() / (T::one() + T::lit(GRADING)).ln())
        .ceil()
        .to_usize()
        .unwrap_or(300);
    let ratio = (h / s).powf(T::one() / T::lit(steps as f64));
    let mut t = s;
    for k in 0..steps {
        let next = if k + 1 == steps { h } else { t * ratio };
        y = gl_step(sys, t, next - t, &y)?;
        t = next;
    }
    Ok((y, true))
}

/// Largest step relative to t while a logarithmic mode is being resolved.
const GRADING: f64 = 0.025;

/// Taylor expansion at the singular point t = 0, evaluated at t = `at`.
///
/// Differentiating k times and setting t = 0 gives
/// (kI + M(0)) y⁽ᵏ⁾(0) = g⁽ᵏ⁾(0) − Σ_{i=1..k} C(k,i) M⁽ⁱ⁾(0) y⁽ᵏ⁻ⁱ⁾(0).
/// When M(0) has an eigenvalue −m the k = m system is singular: the bounded
/// mode t^m is free and its coefficient is set to zero. If the right-hand
/// side has a component along the left null vector w, a term L t^m ln t with
/// L in the right null space r absorbs it:
/// (mI + M(0)) y⁽ᵐ⁾ = rhs − m! L, L = r (w, rhs) / (m! (w, r)).
/// Derivatives of M and g come from samples spaced `h` apart. Returns the value
/// and whether a logarithmic term was added.
fn taylor_start<T: Real, S: DegenerateSystem<T> + ?Sized>(
    sys: &S,
    h: T,
    at: T,
    y0: &[C<T>],
) -> Result<(Vec<C<T>>, bool)> {
    const ORDER: usize = 5;
    let n = sys.dim();
    let pts: Vec<T> = (0..ORDER + 3).map(|k| h * T::lit(k as f64)).collect();
    let w = fornberg(T::zero(), &pts, ORDER);
    let ms: Vec<CMat<T>> = pts.iter().map(|&t| sys.matrix(t)).collect();
    let gs: Vec<Vec<C<T>>> = pts.iter().map(|&t| sys.forcing(t)).collect();
    let mder: Vec<CMat<T>> = (0..=ORDER)
        .map(|d| {
            CMat::from_fn(n, n, |r, c| {
                (0..pts.len()).fold(C::zero(), |acc, k| acc + ms[k][(r, c)] * cr(w[d][k]))
            })
        })
        .collect();
    let gder: Vec<Vec<C<T>>> = (0..=ORDER)
        .map(|d| {
            (0..n)
                .map(|r| (0..pts.len()).fold(C::zero(), |acc, k| acc + gs[k][r] * cr(w[d][k])))
                .collect()
        })
        .collect();
    let mut ders = vec![y0.to_vec()];
    let mut log_term: Option<(usize, Vec<C<T>>)> = None;
    let mut fact = T::one();
    for k in 1..=ORDER {
        fact = fact * T::lit(k as f64);
        let mut rhs = gder[k].clone();
        let mut binom = T::one();
        for i in 1..=k {
            binom = binom * T::lit((k - i + 1) as f64) / T::lit(i as f64);
            let my = mder[i].mul_vec(&ders[k - i]);
            for r in 0..n {
                rhs[r] -= my[r] * cr(binom);
            }
        }
        let mut a = mder[0].clone();
        for r in 0..n {
            a[(r, r)] += cr(T::lit(k as f64));
        }
        let (sol, rank) = rank_revealing_solve(&a, &rhs)?;
        if rank + 1 == n && log_term.is_none() {
            if let Some(l) = log_coefficient(&a, &rhs, fact)? {
                for r in 0..n {
                    rhs[r] -= l[r] * cr(fact);
                }
                ders.push(rank_revealing_solve(&a, &rhs)?.0);
                log_term = Some((k, l));
                continue;
            }
        }
        ders.push(sol);
    }
    let mut y = y0.to_vec();
    let mut fac = T::one();
    for (k, d) in ders.iter().enumerate().skip(1) {
        fac = fac * at / T::lit(k as f64);
        for r in 0..n {
            y[r] += d[r] * cr(fac);
        }
    }
    let logged = log_term.is_some();
    if let Some((m, l)) = log_term {
        let f = at.powi(m as i32) * at.ln();
        for r in 0..n {
            y[r] += l[r] * cr(f);
        }
    }
    Ok((y, logged))
}

/// L making (a)(·) = rhs − m! L solvable, or None when the null vectors are
/// (numerically) orthogonal. The decision depends on `a` only, so the result
/// stays linear in the data.
fn log_coefficient<T: Real>(a: &CMat<T>, rhs: &[C<T>], fact: T) -> Result<Option<Vec<C<T>>>> {
    let r = eigenvector(a, C::zero())?;
    let w = eigenvector(&a.adjoint(), C::zero())?;
    let wr = inner(&r, &w);
    let wb = inner(rhs, &w);
    if wr.norm() <= T::lit(1e-8) {
        return Ok(None);
    }
    let alpha = wb / (wr * cr(fact));
    Ok(Some(r.iter().map(|&z| z * alpha).collect()))
}

/// Basic solution of B k = r by elimination with complete pivoting; pivots below
/// 1e-10·max|B| are treated as zero and their unknowns set to 0. Also returns
/// the numerical rank.
fn rank_revealing_solve<T: Real>(b: &CMat<T>, r: &[C<T>]) -> Result<(Vec<C<T>>, usize)> {
    let n = b.rows;
    let mut a = b.clone();
    let mut rhs = r.to_vec();
    let mut cols: Vec<usize> = (0..n).collect();
    let tol = T::lit(1e-10) * a.max_abs();
    let mut rank = n;
    for k in 0..n {
        let (mut pi, mut pj, mut best) = (k, k, T::zero());
        for i in k..n {
            for j in k..n {
                let v = a[(i, j)].norm();
                if v > best {
                    (pi, pj, best) = (i, j, v);
                }
            }
        }
        if !best.is_finite() {
            return Err(Error::Numerical("non-finite stage matrix".into()));
        }
        if best <= tol {
            rank = k;
            break;
        }
        for j in 0..n {
            a.data.swap(pi * n + j, k * n + j);
        }
        rhs.swap(pi, k);
        for i in 0..n {
            a.data.swap(i * n + pj, i * n + k);
        }
        cols.swap(pj, k);
        let d = a[(k, k)];
        for i in k + 1..n {
            let m = a[(i, k)] / d;
            if m.is_zero() {
                continue;
            }
            for j in k..n {
                let t = a[(k, j)];
                a[(i, j)] -= m * t;
            }
            let t = rhs[k];
            rhs[i] -= m * t;
        }
    }
    let mut y = vec![C::zero(); n];
    for k in (0..rank).rev() {
        let mut acc = rhs[k];
        for j in k + 1..rank {
            acc -= a[(k, j)] * y[j];
        }
        y[k] = acc / a[(k, k)];
    }
    let mut out = vec![C::zero(); n];
    for (k, &c) in cols.iter().enumerate() {
        out[c] = y[k];
    }
    Ok((out, rank))
}

/// System given by closures; convenient for tests and one-off solves.
pub struct FnSystem<M, G> {
    pub n: usize,
    pub m: M,
    pub g: G,
}

impl<T: Real, M: Fn(T) -> CMat<T>, G: Fn(T) -> Vec<C<T>>> DegenerateSystem<T> for FnSystem<M, G> {
    fn dim(&self) -> usize {
        self.n
    }
    fn matrix(&self, t: T) -> CMat<T> {
        (self.m)(t)
    }
    fn forcing(&self, t: T) -> Vec<C<T>> {
        (self.g)(t)
    }
}
