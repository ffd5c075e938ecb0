//! Small dense complex linear algebra: LU solves and eigen-decomposition.
//!
//! Systems in this crate have dimension n ≤ 8 (or 2n for the stage
//! equations of the ODE stepper), so everything here is plain O(n³) code
//! over row-major storage.

use num_complex::Complex;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::scalar::{cr, Real, C};

#[derive(Clone, Debug, PartialEq)]
pub struct CMat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<C<T>>,
}

impl<T: Real> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    pub fn from_real(rows: usize, cols: usize, v: &[T]) -> Self {
        assert_eq!(v.len(), rows * cols);
        CMat {
            rows,
            cols,
            data: v.iter().map(|&x| cr(x)).collect(),
        }
    }

    pub fn col(&self, j: usize) -> Vec<C<T>> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_col(&mut self, j: usize, v: &[C<T>]) {
        for i in 0..self.rows {
            self[(i, j)] = v[i];
        }
    }

    pub fn mul(&self, o: &Self) -> Self {
        assert_eq!(self.cols, o.rows);
        let mut r = Self::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..o.cols {
                    r[(i, j)] += a * o[(k, j)];
                }
            }
        }
        r
    }

    pub fn mul_vec(&self, v: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.cols, v.len());
        (0..self.rows)
            .map(|i| {
                let mut s = C::zero();
                for j in 0..self.cols {
                    s += self[(i, j)] * v[j];
                }
                s
            })
            .collect()
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self::from_fn(self.rows, self.cols, |i, j| self[(i, j)] - o[(i, j)])
    }

    pub fn scale(&self, s: C<T>) -> Self {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    /// Frobenius norm.
    pub fn norm(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, z| acc + z.norm_sqr())
            .sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, z| acc.max(z.norm()))
    }

    pub fn lu(&self) -> Result<Lu<T>> {
        Lu::new(self.clone())
    }

    pub fn solve(&self, b: &[C<T>]) -> Result<Vec<C<T>>> {
        Ok(self.lu()?.solve(b))
    }

    pub fn inverse(&self) -> Result<Self> {
        let lu = self.lu()?;
        let n = self.rows;
        let mut inv = Self::zeros(n, n);
        let mut e = vec![C::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|z| *z = C::zero());
            e[j] = C::one();
            inv.set_col(j, &lu.solve(&e));
        }
        Ok(inv)
    }
}

impl<T> std::ops::Index<(usize, usize)> for CMat<T> {
    type Output = C<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &C<T> {
        &self.data[i * self.cols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for CMat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C<T> {
        &mut self.data[i * self.cols + j]
    }
}

/// LU factorization with partial pivoting.
#[derive(Clone, Debug)]
pub struct Lu<T> {
    lu: CMat<T>,
    piv: Vec<usize>,
}

impl<T: Real> Lu<T> {
    pub fn new(mut a: CMat<T>) -> Result<Self> {
        let n = a.rows;
        if n != a.cols {
            return Err(Error::spec("LU of a non-square matrix"));
        }
        let scale = a.max_abs();
        let tiny = scale * T::epsilon() * T::lit(n.max(1) as f64);
        let mut piv: Vec<usize> = (0..n).collect();
        for k in 0..n {
            let mut p = k;
            let mut best = a[(k, k)].norm();
            for i in k + 1..n {
                let v = a[(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if !(best > tiny) || !best.is_finite() {
                return Err(Error::Numerical(format!(
                    "singular matrix in LU at column {k} (pivot {best:e})"
                )));
            }
            if p != k {
                piv.swap(p, k);
                for j in 0..n {
                    a.data.swap(p * n + j, k * n + j);
                }
            }
            let d = a[(k, k)];
            for i in k + 1..n {
                let m = a[(i, k)] / d;
                a[(i, k)] = m;
                if m.is_zero() {
                    continue;
                }
                for j in k + 1..n {
                    let t = a[(k, j)];
                    a[(i, j)] -= m * t;
                }
            }
        }
        Ok(Lu { lu: a, piv })
    }

    pub fn solve(&self, b: &[C<T>]) -> Vec<C<T>> {
        let n = self.lu.rows;
        let mut x: Vec<C<T>> = self.piv.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let t = self.lu[(i, j)] * x[j];
                x[i] -= t;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let t = self.lu[(i, j)] * x[j];
                x[i] -= t;
            }
            x[i] = x[i] / self.lu[(i, i)];
        }
        x
    }

    pub fn solve_mat(&self, b: &CMat<T>) -> CMat<T> {
        let mut out = CMat::zeros(b.rows, b.cols);
        for j in 0..b.cols {
            out.set_col(j, &self.solve(&b.col(j)));
        }
        out
    }
}

/// Eigenvalues of a general complex matrix by shifted QR on the Hessenberg form.
pub fn eigenvalues<T: Real>(a: &CMat<T>) -> Result<Vec<C<T>>> {
    let n = a.rows;
    if n != a.cols {
        return Err(Error::spec("eigenvalues of a non-square matrix"));
    }
    if n == 0 {
        return Ok(vec![]);
    }
    let mut h = hessenberg(a);
    let anorm = a.norm().max(T::min_positive_value());
    let eps = T::epsilon();
    let mut vals = vec![C::zero(); n];
    let mut hi = n;
    let mut iter = 0usize;
    while hi > 0 {
        if hi == 1 {
            vals[0] = h[(0, 0)];
            break;
        }
        // find the active unreduced block [lo, hi)
        let mut lo = hi - 1;
        while lo > 0 {
            let sub = h[(lo, lo - 1)].norm();
            let diag = h[(lo, lo)].norm() + h[(lo - 1, lo - 1)].norm();
            if sub <= eps * diag.max(anorm * eps) {
                h[(lo, lo - 1)] = C::zero();
                break;
            }
            lo -= 1;
        }
        if lo == hi - 1 {
            vals[hi - 1] = h[(hi - 1, hi - 1)];
            hi -= 1;
            iter = 0;
            continue;
        }
        iter += 1;
        if iter > 200 * n {
            return Err(Error::Numerical("QR eigenvalue iteration did not converge".into()));
        }
        // Wilkinson shift from the trailing 2x2 block, with exceptional shifts
        let m = hi - 1;
        let shift = if iter % 11 == 10 {
            h[(m, m)] + cr(h[(m, m - 1)].norm() * T::lit(0.75))
        } else {
            let a11 = h[(m - 1, m - 1)];
            let a12 = h[(m - 1, m)];
            let a21 = h[(m, m - 1)];
            let a22 = h[(m, m)];
            let tr = a11 + a22;
            let det = a11 * a22 - a12 * a21;
            let half = cr(T::lit(0.5));
            let disc = (tr * tr * cr(T::lit(0.25)) - det).sqrt();
            let l1 = tr * half + disc;
            let l2 = tr * half - disc;
            if (l1 - a22).norm() < (l2 - a22).norm() {
                l1
            } else {
                l2
            }
        };
        qr_step(&mut h, lo, hi, shift);
    }
    Ok(vals)
}

fn hessenberg<T: Real>(a: &CMat<T>) -> CMat<T> {
    let n = a.rows;
    let mut h = a.clone();
    for k in 0..n.saturating_sub(2) {
        let alpha_norm = (k + 1..n)
            .fold(T::zero(), |s, i| s + h[(i, k)].norm_sqr())
            .sqrt();
        if alpha_norm == T::zero() {
            continue;
        }
        let x0 = h[(k + 1, k)];
        let phase = if x0.norm() > T::zero() {
            x0 / cr(x0.norm())
        } else {
            C::one()
        };
        let mut v: Vec<C<T>> = (k + 1..n).map(|i| h[(i, k)]).collect();
        v[0] += phase * cr(alpha_norm);
        let vn = v.iter().fold(T::zero(), |s, z| s + z.norm_sqr());
        if vn == T::zero() {
            continue;
        }
        let two = T::lit(2.0);
        // H <- (I - 2vv*/v*v) H (I - 2vv*/v*v)
        for j in 0..n {
            let mut s: C<T> = C::zero();
            for (idx, i) in (k + 1..n).enumerate() {
                s += v[idx].conj() * h[(i, j)];
            }
            let s: C<T> = s * cr(two / vn);
            for (idx, i) in (k + 1..n).enumerate() {
                let t: C<T> = v[idx] * s;
                h[(i, j)] -= t;
            }
        }
        for i in 0..n {
            let mut s: C<T> = C::zero();
            for (idx, j) in (k + 1..n).enumerate() {
                s += h[(i, j)] * v[idx];
            }
            let s: C<T> = s * cr(two / vn);
            for (idx, j) in (k + 1..n).enumerate() {
                let t: C<T> = s * v[idx].conj();
                h[(i, j)] -= t;
            }
        }
        for i in k + 2..n {
            h[(i, k)] = C::zero();
        }
    }
    h
}

/// One explicitly shifted QR sweep on the Hessenberg block [lo, hi) via Givens rotations.
fn qr_step<T: Real>(h: &mut CMat<T>, lo: usize, hi: usize, shift: C<T>) {
    let n = h.rows;
    for i in lo..hi {
        h[(i, i)] -= shift;
    }
    let mut rots: Vec<(C<T>, C<T>)> = Vec::with_capacity(hi - lo);
    for k in lo..hi - 1 {
        let a = h[(k, k)];
        let b = h[(k + 1, k)];
        let r = (a.norm_sqr() + b.norm_sqr()).sqrt();
        let (c, s) = if r == T::zero() {
            (C::one(), C::zero())
        } else {
            (a / cr(r), b / cr(r))
        };
        // G = [[c*, s*], [-s, c]]
        for j in k..n {
            let x = h[(k, j)];
            let y = h[(k + 1, j)];
            h[(k, j)] = c.conj() * x + s.conj() * y;
            h[(k + 1, j)] = -s * x + c * y;
        }
        rots.push((c, s));
    }
    for (idx, k) in (lo..hi - 1).enumerate() {
        let (c, s) = rots[idx];
        for i in 0..(k + 2).min(n) {
            let x = h[(i, k)];
            let y = h[(i, k + 1)];
            h[(i, k)] = x * c + y * s;
            h[(i, k + 1)] = -x * s.conj() + y * c.conj();
        }
    }
    for i in lo..hi {
        h[(i, i)] += shift;
    }
}

/// Eigenvector for a known eigenvalue by inverse iteration; unit Euclidean norm.
pub fn eigenvector<T: Real>(a: &CMat<T>, lambda: C<T>) -> Result<Vec<C<T>>> {
    let n = a.rows;
    let scale = a.norm().max(T::one());
    let delta = scale * T::epsilon() * T::lit(64.0);
    let shifted = CMat::from_fn(n, n, |i, j| {
        let d = if i == j { lambda + cr(delta) } else { C::zero() };
        a[(i, j)] - d
    });
    let lu = Lu::new(shifted).or_else(|_| {
        let bigger = cr(delta * T::lit(1e3));
        Lu::new(CMat::from_fn(n, n, |i, j| {
            let d = if i == j { lambda + bigger } else { C::zero() };
            a[(i, j)] - d
        }))
    })?;
    let mut x: Vec<C<T>> = (0..n)
        .map(|i| Complex::new(T::one(), T::lit(0.1 + 0.37 * i as f64)))
        .collect();
    for _ in 0..3 {
        x = lu.solve(&x);
        let nrm = vec_norm(&x);
        if !(nrm > T::zero()) || !nrm.is_finite() {
            return Err(Error::Numerical("inverse iteration broke down".into()));
        }
        x.iter_mut().for_each(|z| *z = *z / cr(nrm));
    }
    Ok(x)
}

pub fn vec_norm<T: Real>(v: &[C<T>]) -> T {
    v.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt()
}

/// Bilinear pairing (u, w) = Σ u_k conj(w_k).
pub fn inner<T: Real>(u: &[C<T>], w: &[C<T>]) -> C<T> {
    u.iter()
        .zip(w)
        .fold(C::zero(), |s, (a, b)| s + *a * b.conj())
}
