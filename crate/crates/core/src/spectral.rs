//! Smooth eigen-decompositions of A(x) and D(t) with biorthonormal adjoint systems.

use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::interp::{Field2, Grid1};
use crate::linalg::{eigenvalues, eigenvector, inner, vec_norm, CMat};
use crate::problem::{ProblemSpec, DEGENERACY_TOL};
use crate::scalar::{cr, Real, C};

/// Eigenpairs of one matrix sample: A b_i = λ_i b_i, (b_i, b*_j) = δ_ij, |b_i| = 1.
#[derive(Clone, Debug)]
pub struct Eigenbasis<T> {
    pub values: Vec<C<T>>,
    pub vectors: Vec<Vec<C<T>>>,
    pub duals: Vec<Vec<C<T>>>,
}

impl<T: Real> Eigenbasis<T> {
    /// Decomposes `m`. With `prev`, eigenpairs are matched to it by maximal
    /// overlap and phase-aligned with it; without, they are ordered by
    /// (Re, Im) and the largest component of each vector is made real positive.
    pub fn compute(m: &CMat<T>, prev: Option<&Eigenbasis<T>>, place: &str) -> Result<Self> {
        let n = m.rows;
        let vals = eigenvalues(m)?;
        let tol = T::lit(DEGENERACY_TOL);
        for i in 0..n {
            for j in i + 1..n {
                if (vals[i] - vals[j]).norm() < tol {
                    return Err(Error::Degeneracy(format!(
                        "eigenvalue collision {} ≈ {} at {place}",
                        vals[i], vals[j]
                    )));
                }
            }
        }
        let mut pairs = Vec::with_capacity(n);
        for &l in &vals {
            pairs.push((l, eigenvector(m, l)?));
        }
        let (values, mut vectors): (Vec<_>, Vec<_>) = match prev {
            None => {
                pairs.sort_by(|a, b| {
                    a.0.re
                        .partial_cmp(&b.0.re)
                        .unwrap_or(std::cmp::Ordering::Equal)
                        .then(a.0.im.partial_cmp(&b.0.im).unwrap_or(std::cmp::Ordering::Equal))
                });
                pairs
                    .into_iter()
                    .map(|(l, mut v)| {
                        fix_phase_by_largest(&mut v);
                        (l, v)
                    })
                    .unzip()
            }
            Some(p) => {
                // greedy assignment on the overlap matrix
                let mut taken = vec![false; n];
                let mut slot: Vec<Option<usize>> = vec![None; n];
                for _ in 0..n {
                    let mut best = (T::neg_infinity(), 0, 0);
                    for (a, (_, v)) in pairs.iter().enumerate() {
                        if taken[a] {
                            continue;
                        }
                        for (i, s) in slot.iter().enumerate() {
                            if s.is_some() {
                                continue;
                            }
                            let o = inner(v, &p.vectors[i]).norm();
                            if o > best.0 {
                                best = (o, a, i);
                            }
                        }
                    }
                    taken[best.1] = true;
                    slot[best.2] = Some(best.1);
                }
                slot.into_iter()
                    .enumerate()
                    .map(|(i, a)| {
                        let (l, mut v) = pairs[a.expect("complete assignment")].clone();
                        let o = inner(&v, &p.vectors[i]);
                        if o.norm() > T::zero() {
                            let ph = o.conj() / cr(o.norm());
                            v.iter_mut().for_each(|z| *z = *z * ph);
                        }
                        (l, v)
                    })
                    .unzip()
            }
        };
        for v in vectors.iter_mut() {
            let nrm = vec_norm(v);
            v.iter_mut().for_each(|z| *z = *z / cr(nrm));
        }
        let mut bmat = CMat::zeros(n, n);
        for (i, v) in vectors.iter().enumerate() {
            bmat.set_col(i, v);
        }
        let w = bmat.inverse().map_err(|_| {
            Error::Degeneracy(format!("eigenvectors not independent at {place}"))
        })?;
        let duals = (0..n)
            .map(|j| (0..n).map(|k| w[(j, k)].conj()).collect())
            .collect();
        Ok(Eigenbasis {
            values,
            vectors,
            duals,
        })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Coefficients c_i with v = Σ c_i b_i, i.e. c_i = (v, b*_i).
    pub fn coordinates(&self, v: &[C<T>]) -> Vec<C<T>> {
        self.duals.iter().map(|d| inner(v, d)).collect()
    }
}

fn fix_phase_by_largest<T: Real>(v: &mut [C<T>]) {
    let mut k = 0;
    for (i, z) in v.iter().enumerate() {
        if z.norm() > v[k].norm() {
            k = i;
        }
    }
    let z = v[k];
    if z.norm() > T::zero() {
        let ph = z.conj() / cr(z.norm());
        v.iter_mut().for_each(|w| *w = *w * ph);
    }
}

/// Weighted sum of basis data at the cubic stencil around `s`.
fn blend<T: Real>(grid: &Grid1<T>, s: T, get: impl Fn(usize) -> C<T>) -> C<T> {
    let (start, w) = grid.cubic_weights(s);
    let width = grid.len().min(4);
    (0..width).fold(C::zero(), |acc, k| acc + get(start + k) * cr(w[k]))
}

/// λ_i(x), b_i(x), b*_i(x) tabulated on an x grid.
#[derive(Clone, Debug)]
pub struct SpatialSpectrum<T> {
    pub grid: Grid1<T>,
    pub samples: Vec<Eigenbasis<T>>,
    a_rows: Vec<Vec<crate::poly::Poly<T>>>,
}

impl<T: Real> SpatialSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn lambda_at(&self, i: usize, x: T) -> C<T> {
        blend(&self.grid, x, |k| self.samples[k].values[i])
    }

    /// λ_i(x) from a fresh eigen-solve, picking the root nearest the tabulated branch.
    pub fn lambda_exact(&self, i: usize, x: T) -> C<T> {
        let guess = self.lambda_at(i, x);
        let n = self.dim();
        if n == 1 {
            return cr(self.a_rows[0][0].eval(x));
        }
        let a = CMat::from_fn(n, n, |r, c| cr(self.a_rows[r][c].eval(x)));
        match eigenvalues(&a) {
            Ok(vals) => vals
                .into_iter()
                .min_by(|p, q| {
                    (*p - guess)
                        .norm()
                        .partial_cmp(&(*q - guess).norm())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(guess),
            Err(_) => guess,
        }
    }

    pub fn b_at(&self, i: usize, x: T) -> Vec<C<T>> {
        (0..self.dim())
            .map(|c| blend(&self.grid, x, |k| self.samples[k].vectors[i][c]))
            .collect()
    }

    pub fn b_star_at(&self, i: usize, x: T) -> Vec<C<T>> {
        (0..self.dim())
            .map(|c| blend(&self.grid, x, |k| self.samples[k].duals[i][c]))
            .collect()
    }

    /// (b′_i, b*_i) at the grid nodes.
    pub fn b_prime_dual_nodes(&self, i: usize) -> Vec<C<T>> {
        self.b_prime_coupling_nodes(i, i)
    }

    /// Coupling (b′_i, b*_r) at the grid nodes, from fourth-order differences of b_i.
    pub fn b_prime_coupling_nodes(&self, i: usize, r: usize) -> Vec<C<T>> {
        let n = self.dim();
        (0..self.grid.len())
            .map(|k| {
                let (s, w) = self.grid.node_derivative_weights(k);
                let db: Vec<C<T>> = (0..n)
                    .map(|c| {
                        w.iter().enumerate().fold(C::zero(), |acc, (j, wj)| {
                            acc + self.samples[s + j].vectors[i][c] * cr(*wj)
                        })
                    })
                    .collect();
                inner(&db, &self.samples[k].duals[r])
            })
            .collect()
    }
}

/// β_j(t), ψ_j(t), ψ*_j(t) and α_ir(t) = (ψ′_i, ψ*_r) tabulated on a t grid.
#[derive(Clone, Debug)]
pub struct TemporalSpectrum<T> {
    pub grid: Grid1<T>,
    pub samples: Vec<Eigenbasis<T>>,
    /// α at each node; `alpha[k][(i, r)] = (ψ′_i(t_k), ψ*_r(t_k))`.
    pub alpha: Vec<CMat<T>>,
}

impl<T: Real> TemporalSpectrum<T> {
    pub fn dim(&self) -> usize {
        self.samples[0].dim()
    }

    pub fn beta0(&self, j: usize) -> C<T> {
        self.samples[0].values[j]
    }

    pub fn beta_at(&self, j: usize, t: T) -> C<T> {
        blend(&self.grid, t, |k| self.samples[k].values[j])
    }

    pub fn psi_at(&self, j: usize, t: T) -> Vec<C<T>> {
        (0..self.dim())
            .map(|c| blend(&self.grid, t, |k| self.samples[k].vectors[j][c]))
            .collect()
    }

    pub fn psi_star_at(&self, j: usize, t: T) -> Vec<C<T>> {
        (0..self.dim())
            .map(|c| blend(&self.grid, t, |k| self.samples[k].duals[j][c]))
            .collect()
    }

    pub fn alpha_at(&self, t: T) -> CMat<T> {
        let n = self.dim();
        CMat::from_fn(n, n, |i, r| blend(&self.grid, t, |k| self.alpha[k][(i, r)]))
    }
}

#[derive(Clone, Debug)]
pub struct SpectralData<T> {
    pub spatial: SpatialSpectrum<T>,
    pub temporal: TemporalSpectrum<T>,
}

impl<T: Real> SpectralData<T> {
    pub fn new(spec: &ProblemSpec<T>, x_grid: &Grid1<T>, t_grid: &Grid1<T>) -> Result<Self> {
        Ok(SpectralData {
            spatial: decompose_spatial(spec, x_grid)?,
            temporal: decompose_temporal(spec, t_grid)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.spatial.dim()
    }

    /// γ_ir(x,t) = (D(t) b_i(x), b*_r(x)) evaluated directly.
    pub fn gamma_at(&self, spec: &ProblemSpec<T>, i: usize, r: usize, x: T, t: T) -> C<T> {
        let b = self.spatial.b_at(i, x);
        let db = spec.d_at(t).mul_vec(&b);
        inner(&db, &self.spatial.b_star_at(r, x))
    }
}

fn decompose<T: Real>(grid: &Grid1<T>, mat: impl Fn(T) -> CMat<T>, var: &str) -> Result<Vec<Eigenbasis<T>>> {
    let mut out: Vec<Eigenbasis<T>> = Vec::with_capacity(grid.len());
    for &s in &grid.nodes {
        let place = format!("{var}={s}");
        let b = Eigenbasis::compute(&mat(s), out.last(), &place)?;
        out.push(b);
    }
    Ok(out)
}

/// Eigen-decomposition of A(x) on `x_grid` with continuity across samples.
pub fn decompose_spatial<T: Real>(spec: &ProblemSpec<T>, x_grid: &Grid1<T>) -> Result<SpatialSpectrum<T>> {
    spec.check_structure()?;
    let samples = decompose(x_grid, |x| spec.a_at(x), "x")?;
    Ok(SpatialSpectrum {
        grid: x_grid.clone(),
        samples,
        a_rows: spec.a.clone(),
    })
}

/// Eigen-decomposition of D(t) on `t_grid`; ψ′ by fourth-order differences.
pub fn decompose_temporal<T: Real>(spec: &ProblemSpec<T>, t_grid: &Grid1<T>) -> Result<TemporalSpectrum<T>> {
    spec.check_structure()?;
    let samples = decompose(t_grid, |t| spec.d_at(t), "t")?;
    let n = spec.n;
    let b0 = &samples[0].values;
    for (k, s) in samples.iter().enumerate() {
        for i in 0..n {
            for j in 0..n {
                if i != j && (b0[i] - s.values[j]).norm() < T::lit(DEGENERACY_TOL) {
                    return Err(Error::Degeneracy(format!(
                        "β_{}(0) = β_{}(t) at t={}",
                        i + 1,
                        j + 1,
                        t_grid.nodes[k]
                    )));
                }
            }
        }
    }
    let alpha = (0..t_grid.len())
        .map(|k| {
            let (st, w) = t_grid.node_derivative_weights(k);
            let dpsi: Vec<Vec<C<T>>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|c| {
                            w.iter().enumerate().fold(C::zero(), |acc, (j, wj)| {
                                acc + samples[st + j].vectors[i][c] * cr(*wj)
                            })
                        })
                        .collect()
                })
                .collect();
            CMat::from_fn(n, n, |i, r| inner(&dpsi[i], &samples[k].duals[r]))
        })
        .collect();
    Ok(TemporalSpectrum {
        grid: t_grid.clone(),
        samples,
        alpha,
    })
}

/// γ_ir(x,t) tabulated on x_grid × t_grid; `fields[i * n + r]`.
#[derive(Clone, Debug)]
pub struct CouplingGamma<T> {
    pub n: usize,
    pub fields: Vec<Field2<T, C<T>>>,
}

impl<T: Real> CouplingGamma<T> {
    /// Bilinear evaluation.
    pub fn eval(&self, i: usize, r: usize, x: T, t: T) -> C<T> {
        self.fields[i * self.n + r].eval_bilinear(x, t)
    }
}

pub fn coupling_gamma<T: Real>(
    spatial: &SpatialSpectrum<T>,
    t_grid: &Grid1<T>,
    spec: &ProblemSpec<T>,
) -> CouplingGamma<T> {
    let n = spec.n;
    let xg = &spatial.grid;
    let mut fields = vec![Field2::zeros(xg.clone(), t_grid.clone()); n * n];
    for (it, &t) in t_grid.nodes.iter().enumerate() {
        let d = spec.d_at(t);
        for (ix, s) in spatial.samples.iter().enumerate() {
            for i in 0..n {
                let db = d.mul_vec(&s.vectors[i]);
                for r in 0..n {
                    fields[i * n + r].set(ix, it, inner(&db, &s.duals[r]));
                }
            }
        }
    }
    CouplingGamma { n, fields }
}

/// Largest eigen-residual ‖M b_i − λ_i b_i‖ / max(‖M‖, 1) and biorthonormality defect over samples.
pub fn contract_residuals<T: Real>(samples: &[Eigenbasis<T>], mat: impl Fn(usize) -> CMat<T>) -> (T, T) {
    let mut eig = T::zero();
    let mut bio = T::zero();
    for (k, s) in samples.iter().enumerate() {
        let m = mat(k);
        let scale = m.norm().max(T::one());
        for (i, v) in s.vectors.iter().enumerate() {
            let mv = m.mul_vec(v);
            let r: Vec<C<T>> = mv.iter().zip(v).map(|(a, b)| *a - s.values[i] * *b).collect();
            eig = eig.max(vec_norm(&r) / scale);
            for (j, d) in s.duals.iter().enumerate() {
                let want = if i == j { C::one() } else { C::zero() };
                bio = bio.max((inner(v, d) - want).norm());
            }
        }
    }
    (eig, bio)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{Poly, Poly2};
    use crate::problem::{preset, PRESET_NAMES};

    fn matrix_problem(a: Vec<Vec<Poly<f64>>>, d: Vec<Vec<Poly<f64>>>) -> ProblemSpec<f64> {
        let n = a.len();
        ProblemSpec {
            n,
            a,
            d,
            f: vec![Poly2::zero(); n],
            h: vec![Poly::zero(); n],
            t_end: 1.0,
            epsilons: vec![],
        }
    }

    #[test]
    fn diagonal_matrix_gives_standard_basis() {
        let s = matrix_problem(
            vec![vec![Poly::constant(2.0), Poly::zero()], vec![Poly::zero(), Poly::constant(3.0)]],
            vec![vec![Poly::constant(-1.0), Poly::zero()], vec![Poly::zero(), Poly::constant(-2.0)]],
        );
        let sp = decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, 8)).unwrap();
        let b = &sp.samples[3];
        assert!((b.values[0] - cr(2.0)).norm() < 1e-14 && (b.values[1] - cr(3.0)).norm() < 1e-14);
        assert!((b.vectors[0][0] - cr(1.0)).norm() < 1e-14 && b.vectors[0][1].norm() < 1e-14);
        let tp = decompose_temporal(&s, &Grid1::uniform(0.0, 1.0, 8)).unwrap();
        assert!(tp.alpha.iter().all(|a| a.max_abs() < 1e-14));
    }

    #[test]
    fn companion_matrix_eigenvalues_match_characteristic_roots() {
        // λ² − 3λ + 2 = 0
        let s = matrix_problem(
            vec![vec![Poly::zero(), Poly::constant(1.0)], vec![Poly::constant(-2.0), Poly::constant(3.0)]],
            vec![vec![Poly::constant(-1.0), Poly::zero()], vec![Poly::zero(), Poly::constant(-2.0)]],
        );
        let sp = decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, 4)).unwrap();
        let roots = [(3.0 - 1.0f64) / 2.0, (3.0 + 1.0f64) / 2.0];
        for k in 0..5 {
            assert!((sp.samples[k].values[0].re - roots[0]).abs() < 1e-13);
            assert!((sp.samples[k].values[1].re - roots[1]).abs() < 1e-13);
        }
    }

    #[test]
    fn collision_is_reported_with_location() {
        let s = matrix_problem(
            vec![vec![Poly::new(&[2.0, 1.0]), Poly::zero()], vec![Poly::zero(), Poly::constant(3.0)]],
            vec![vec![Poly::constant(-1.0), Poly::zero()], vec![Poly::zero(), Poly::constant(-2.0)]],
        );
        match decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, 4)) {
            Err(Error::Degeneracy(msg)) => assert!(msg.contains("x=1")),
            other => panic!("expected degeneracy, got {other:?}"),
        }
    }

    #[test]
    fn presets_satisfy_eigen_and_biorthonormality_contracts() {
        for name in PRESET_NAMES {
            let s = preset::<f64>(name).unwrap();
            let xg = Grid1::uniform(0.0, 1.0, 64);
            let tg = Grid1::uniform(0.0, 1.0, 64);
            let sd = SpectralData::new(&s, &xg, &tg).unwrap();
            let (e, b) = contract_residuals(&sd.spatial.samples, |k| s.a_at(xg.nodes[k]));
            assert!(e < 1e-10 && b < 1e-10, "{name}: {e:e} {b:e}");
            let (e, b) = contract_residuals(&sd.temporal.samples, |k| s.d_at(tg.nodes[k]));
            assert!(e < 1e-10 && b < 1e-10, "{name}: {e:e} {b:e}");
        }
    }

    #[test]
    fn spectral_resolution_reconstructs_the_matrix() {
        let s = preset::<f64>("complex-2x2").unwrap();
        let xg = Grid1::uniform(0.0, 1.0, 4);
        let sp = decompose_spatial(&s, &xg).unwrap();
        let e = &sp.samples[2];
        let n = 2;
        let rec = CMat::from_fn(n, n, |r, c| {
            (0..n).fold(C::zero(), |acc, i| acc + e.values[i] * e.vectors[i][r] * e.duals[i][c].conj())
        });
        assert!(rec.sub(&s.a_at(0.5)).norm() < 1e-8);
    }

    #[test]
    fn continuation_has_no_jumps_and_jumps_halve_under_refinement() {
        let s = preset::<f64>("coupled-2x2").unwrap();
        let jump = |m: usize| {
            let sp = decompose_spatial(&s, &Grid1::uniform(0.0, 1.0, m)).unwrap();
            let mut worst: f64 = 0.0;
            for k in 1..sp.samples.len() {
                for i in 0..2 {
                    let d: Vec<C<f64>> = sp.samples[k].vectors[i]
                        .iter()
                        .zip(&sp.samples[k - 1].vectors[i])
                        .map(|(a, b)| a - b)
                        .collect();
                    worst = worst.max(vec_norm(&d));
                }
            }
            worst
        };
        let (j1, j2) = (jump(32), jump(64));
        assert!(j1 < 10.0 / 32.0);
        assert!((j1 / j2 - 2.0).abs() < 0.2, "{j1} {j2}");
    }

    #[test]
    fn alpha_matches_analytic_coupling_for_known_eigenvectors() {
        // D = R diag(-1-t, -3) R^{-1} with R = [[1,1],[t,1+t]]: eigenvector
        // fields are the normalized columns v of R, with v' = (0, 1).
        let s = preset::<f64>("coupled-2x2-varying").unwrap();
        let tg = Grid1::uniform(0.0, 1.0, 200);
        let tp = decompose_temporal(&s, &tg).unwrap();
        let unit_and_derivative = |v: [f64; 2]| {
            let nv = (v[0] * v[0] + v[1] * v[1]).sqrt();
            let dot = v[1]; // v · v'
            let n = [v[0] / nv, v[1] / nv];
            let dn = [-v[0] * dot / nv.powi(3), 1.0 / nv - v[1] * dot / nv.powi(3)];
            (n, dn)
        };
        for &k in &[0usize, 37, 120, 200] {
            let t = tg.nodes[k];
            for i in 0..2 {
                let tab = &tp.samples[k].vectors[i];
                let (best, sign) = [[1.0, t], [1.0, 1.0 + t]]
                    .iter()
                    .map(|&v| unit_and_derivative(v))
                    .map(|(n, dn)| {
                        let o = inner(tab, &[cr(n[0]), cr(n[1])]);
                        (dn, o)
                    })
                    .max_by(|a, b| a.1.norm().partial_cmp(&b.1.norm()).unwrap())
                    .map(|(dn, o)| (dn, o.re.signum()))
                    .unwrap();
                let dpsi = [cr(best[0] * sign), cr(best[1] * sign)];
                for r in 0..2 {
                    let want = inner(&dpsi, &tp.samples[k].duals[r]);
                    assert!((tp.alpha[k][(i, r)] - want).norm() < 1e-8, "t={t} i={i} r={r}");
                }
            }
        }
    }

    #[test]
    fn gamma_table_matches_direct_inner_products() {
        let s = preset::<f64>("coupled-2x2").unwrap();
        let xg = Grid1::uniform(0.0, 1.0, 64);
        let tg = Grid1::uniform(0.0, 1.0, 64);
        let sd = SpectralData::new(&s, &xg, &tg).unwrap();
        let g = coupling_gamma(&sd.spatial, &tg, &s);
        for (ix, it) in [(3, 5), (10, 60), (64, 0), (31, 31)] {
            let (x, t) = (xg.nodes[ix], tg.nodes[it]);
            for i in 0..2 {
                for r in 0..2 {
                    let direct = sd.gamma_at(&s, i, r, x, t);
                    assert!((g.eval(i, r, x, t) - direct).norm() < 1e-12);
                }
            }
        }
        // scalar case: γ = β
        let s1 = preset::<f64>("scalar-const").unwrap();
        let sd1 = SpectralData::new(&s1, &xg, &tg).unwrap();
        let g1 = coupling_gamma(&sd1.spatial, &tg, &s1);
        assert!((g1.eval(0, 0, 0.3, 0.7) - cr(-1.0)).norm() < 1e-14);
    }
}
