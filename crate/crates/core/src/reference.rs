//! Direct finite-difference solution of (ε+t)u_t − ε²A(x)u_xx − D(t)u = f on a
//! layer-adapted mesh: three-point differences in x, implicit Euler or
//! Crank–Nicolson in t, one block-tridiagonal solve per step.

use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::Grid1;
use crate::linalg::{CMat, Lu};
use crate::problem::ProblemSpec;
use crate::scalar::{cr, Real, C};
use crate::series::{GridField, GridMeta, Provenance};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ImplicitEuler,
    CrankNicolson,
}

/// Shishkin-type x nodes and log-graded t nodes.
#[derive(Clone, Debug)]
pub struct LayerMesh<T> {
    pub x_nodes: Vec<T>,
    pub t_nodes: Vec<T>,
    pub sigma_x: T,
    pub sigma_t: T,
    pub nx: usize,
    pub nt: usize,
}

/// Layer-width constants: σ_x = min(1/4, c0 ε^{3/2} ln(1/ε)), σ_t = min(T/2, c1 ε ln(1/ε)).
#[derive(Clone, Copy, Debug)]
pub struct MeshConstants<T> {
    pub c0: T,
    pub c1: T,
}

impl<T: Real> Default for MeshConstants<T> {
    fn default() -> Self {
        MeshConstants {
            c0: T::lit(2.0),
            c1: T::lit(2.0),
        }
    }
}

pub fn build_mesh<T: Real>(eps: T, nx: usize, nt: usize, t_end: T) -> Result<LayerMesh<T>> {
    build_mesh_with(eps, nx, nt, t_end, MeshConstants::default())
}

/// N_x/4 intervals in each layer region [0, σ_x], [1−σ_x, 1] and N_x/2 in between.
/// The t nodes are uniform in ln((t+ε)/ε); σ_t is recorded for reference.
pub fn build_mesh_with<T: Real>(eps: T, nx: usize, nt: usize, t_end: T, k: MeshConstants<T>) -> Result<LayerMesh<T>> {
    if nx < 16 || nt < 16 || nx % 4 != 0 || nt % 4 != 0 {
        return Err(Error::spec(format!(
            "mesh counts must be ≥ 16 and divisible by 4 (got N_x={nx}, N_t={nt})"
        )));
    }
    if !(eps > T::zero() && eps < T::one()) || !(t_end > T::zero()) {
        return Err(Error::spec("mesh needs 0 < ε < 1 and T > 0"));
    }
    let log = (T::one() / eps).ln();
    let quarter = T::lit(0.25);
    let sigma_x = quarter.min(k.c0 * eps * eps.sqrt() * log);
    let sigma_t = (t_end / T::lit(2.0)).min(k.c1 * eps * log);
    let q = nx / 4;
    let mut x_nodes = Vec::with_capacity(nx + 1);
    let lit = |v: usize| T::lit(v as f64);
    for i in 0..q {
        x_nodes.push(sigma_x * lit(i) / lit(q));
    }
    let mid = T::one() - sigma_x * T::lit(2.0);
    for i in 0..2 * q {
        x_nodes.push(sigma_x + mid * lit(i) / lit(2 * q));
    }
    for i in 0..q {
        x_nodes.push(T::one() - sigma_x + sigma_x * lit(i) / lit(q));
    }
    x_nodes.push(T::one());
    let t_nodes = crate::series::clustered_t_nodes(nt, t_end, eps);
    Ok(LayerMesh {
        x_nodes,
        t_nodes,
        sigma_x,
        sigma_t,
        nx,
        nt,
    })
}

/// Solution on the full mesh.
pub fn solve_reference<T: Real>(spec: &ProblemSpec<T>, eps: T, mesh: &LayerMesh<T>, scheme: Scheme) -> Result<GridField<T>> {
    solve_reference_strided(spec, eps, mesh, scheme, 1)
}

/// Solution stored at every `stride`-th time node (the last node is always kept).
pub fn solve_reference_strided<T: Real>(
    spec: &ProblemSpec<T>,
    eps: T,
    mesh: &LayerMesh<T>,
    scheme: Scheme,
    stride: usize,
) -> Result<GridField<T>> {
    spec.check_structure()?;
    solve_with(
        spec,
        eps,
        mesh,
        scheme,
        stride,
        &|x, t| spec.f_at(x, t),
        &|x| spec.h_at(x),
    )
}

/// Core solver with forcing and initial data given as closures (A and D from `spec`).
pub fn solve_with<T: Real>(
    spec: &ProblemSpec<T>,
    eps: T,
    mesh: &LayerMesh<T>,
    scheme: Scheme,
    stride: usize,
    forcing: &(dyn Fn(T, T) -> Vec<C<T>> + Sync),
    initial: &(dyn Fn(T) -> Vec<C<T>> + Sync),
) -> Result<GridField<T>> {
    let n = spec.n;
    let xs = &mesh.x_nodes;
    let ts = &mesh.t_nodes;
    let stride = stride.max(1);
    let m = xs.len() - 2;
    let eps2 = eps * eps;
    // u_xx ≈ a u_{i−1} + b u_i + c u_{i+1}
    let stencil: Vec<(T, T, T)> = (1..=m)
        .map(|i| {
            let (hl, hr) = (xs[i] - xs[i - 1], xs[i + 1] - xs[i]);
            let s = T::lit(2.0) / (hl + hr);
            (s / hl, -(s / hl + s / hr), s / hr)
        })
        .collect();
    let a_mats: Vec<CMat<T>> = (1..=m).map(|i| spec.a_at(xs[i])).collect();

    let mut u: Vec<Vec<C<T>>> = xs.iter().map(|&x| initial(x)).collect();
    u[0] = vec![C::zero(); n];
    u[m + 1] = vec![C::zero(); n];
    let mut stored = vec![u.clone()];
    let mut stored_t = vec![ts[0]];
    let mut f_prev: Vec<Vec<C<T>>> = xs.iter().map(|&x| forcing(x, ts[0])).collect();
    let last = ts.len() - 1;

    // operator L u = ε²A u_xx + D u at interior node i
    let apply = |u: &[Vec<C<T>>], d: &CMat<T>, i: usize| -> Vec<C<T>> {
        let (a, b, c) = stencil[i - 1];
        let uxx: Vec<C<T>> = (0..n)
            .map(|r| u[i - 1][r] * cr(a) + u[i][r] * cr(b) + u[i + 1][r] * cr(c))
            .collect();
        let mut out = a_mats[i - 1].mul_vec(&uxx);
        let du = d.mul_vec(&u[i]);
        for r in 0..n {
            out[r] = out[r] * cr(eps2) + du[r];
        }
        out
    };

    for step in 0..last {
        let (t0, t1) = (ts[step], ts[step + 1]);
        let f_next: Vec<Vec<C<T>>> = xs.iter().map(|&x| forcing(x, t1)).collect();
        let rannacher = scheme == Scheme::CrankNicolson && step < 2;
        if scheme == Scheme::ImplicitEuler || rannacher {
            // two half steps at the start of Crank–Nicolson damp the non-smooth start
            let subs = if rannacher { 2 } else { 1 };
            let dt = (t1 - t0) / T::lit(subs as f64);
            for s in 0..subs {
                let ta = t0 + dt * T::lit((s + 1) as f64);
                let f_mid: Vec<Vec<C<T>>>;
                let f_use = if s + 1 == subs {
                    &f_next
                } else {
                    f_mid = xs.iter().map(|&x| forcing(x, ta)).collect();
                    &f_mid
                };
                // (ε+t)/Δt (u⁺ − u) = L u⁺ + f⁺
                let w = (eps + ta) / dt;
                let d = spec.d_at(ta);
                let rhs: Vec<Vec<C<T>>> = (1..=m)
                    .map(|i| (0..n).map(|r| u[i][r] * cr(w) + f_use[i][r]).collect())
                    .collect();
                let new = block_solve(&stencil, &a_mats, &d, eps2, w, T::one(), rhs, step)?;
                for (i, v) in new.into_iter().enumerate() {
                    u[i + 1] = v;
                }
            }
        } else {
            // u⁺ − u = Δt/2 [(L⁺u⁺ + f⁺)/(ε+t⁺) + (L u + f)/(ε+t)]
            let dt = t1 - t0;
            let d0 = spec.d_at(t0);
            let d1 = spec.d_at(t1);
            let w = (eps + t1) * T::lit(2.0) / dt;
            let ratio = (eps + t1) / (eps + t0);
            let rhs: Vec<Vec<C<T>>> = (1..=m)
                .map(|i| {
                    let lu = apply(&u, &d0, i);
                    (0..n)
                        .map(|r| u[i][r] * cr(w) + f_next[i][r] + (lu[r] + f_prev[i][r]) * cr(ratio))
                        .collect()
                })
                .collect();
            let new = block_solve(&stencil, &a_mats, &d1, eps2, w, T::one(), rhs, step)?;
            for (i, v) in new.into_iter().enumerate() {
                u[i + 1] = v;
            }
        }
        f_prev = f_next;
        if (step + 1) % stride == 0 || step + 1 == last {
            if u.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
                return Err(Error::Numerical(format!("reference solution not finite at step {step}")));
            }
            stored.push(u.clone());
            stored_t.push(t1);
        }
    }
    let values: Vec<Vec<Vec<C<T>>>> = (0..xs.len())
        .map(|ix| stored.iter().map(|snap| snap[ix].clone()).collect())
        .collect();
    let meta = GridMeta {
        epsilon: eps,
        order: None,
        provenance: Provenance::Reference,
    };
    GridField::from_nodes(Grid1::new(xs.clone()), Grid1::new(stored_t), values, meta)
}

/// Solves (w I − s(ε²A ∂²ₓ + D)) u = rhs over the interior nodes by block Thomas.
#[allow(clippy::too_many_arguments)]
fn block_solve<T: Real>(
    stencil: &[(T, T, T)],
    a_mats: &[CMat<T>],
    d: &CMat<T>,
    eps2: T,
    w: T,
    s: T,
    mut rhs: Vec<Vec<C<T>>>,
    step: usize,
) -> Result<Vec<Vec<C<T>>>> {
    let m = stencil.len();
    let n = d.rows;
    let fail = |e: Error| Error::Numerical(format!("block solve failed at time step {step}: {e}"));
    let off = |i: usize, coef: T| a_mats[i].scale(cr(-eps2 * s * coef));
    let diag = |i: usize| {
        let mut b = a_mats[i].scale(cr(-eps2 * s * stencil[i].1)).sub(&d.scale(cr(s)));
        for r in 0..n {
            b[(r, r)] += cr(w);
        }
        b
    };
    let mut factors: Vec<Lu<T>> = Vec::with_capacity(m);
    let mut uppers: Vec<CMat<T>> = Vec::with_capacity(m);
    for i in 0..m {
        let mut b = diag(i);
        if i > 0 {
            let lower = off(i, stencil[i].0);
            // B_i − L_i B'_{i−1}⁻¹ U_{i−1}, r_i − L_i B'_{i−1}⁻¹ r_{i−1}
            let x = factors[i - 1].solve_mat(&uppers[i - 1]);
            b = b.sub(&lower.mul(&x));
            let y = factors[i - 1].solve(&rhs[i - 1]);
            let ly = lower.mul_vec(&y);
            for r in 0..n {
                rhs[i][r] -= ly[r];
            }
        }
        factors.push(Lu::new(b).map_err(fail)?);
        uppers.push(if i + 1 < m { off(i, stencil[i].2) } else { CMat::zeros(n, n) });
    }
    let mut out = vec![vec![C::zero(); n]; m];
    for i in (0..m).rev() {
        let mut r = rhs[i].clone();
        if i + 1 < m {
            let uu = uppers[i].mul_vec(&out[i + 1]);
            for k in 0..n {
                r[k] -= uu[k];
            }
        }
        out[i] = factors[i].solve(&r);
    }
    Ok(out)
}
