//! Tabulation helpers: local Lagrange interpolation, finite-difference
//! derivatives and cumulative integrals on sorted (possibly non-uniform) grids.

use crate::scalar::{FieldValue, Real};

/// Finite-difference weights for derivatives 0..=m at `z` from nodes `x`
/// (Fornberg's recursion). `w[k][j]` weights node j for the k-th derivative.
pub fn fornberg<T: Real>(z: T, x: &[T], m: usize) -> Vec<Vec<T>> {
    let np = x.len();
    let mut c = vec![vec![T::zero(); np]; m + 1];
    c[0][0] = T::one();
    let mut c1 = T::one();
    let mut c4 = x[0] - z;
    for i in 1..np {
        let mn = i.min(m);
        let mut c2 = T::one();
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (T::lit(k as f64) * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - T::lit(k as f64) * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Sorted node set with interval lookup.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid1<T> {
    pub nodes: Vec<T>,
    uniform: bool,
}

impl<T: Real> Grid1<T> {
    pub fn new(nodes: Vec<T>) -> Self {
        assert!(nodes.len() >= 2, "grid needs at least two nodes");
        assert!(nodes.windows(2).all(|w| w[1] > w[0]), "grid nodes must increase");
        let n = nodes.len() - 1;
        let h = (nodes[n] - nodes[0]) / T::lit(n as f64);
        let tol = h * T::lit(1e-9);
        let uniform = nodes
            .iter()
            .enumerate()
            .all(|(k, &x)| (x - (nodes[0] + h * T::lit(k as f64))).abs() <= tol);
        Grid1 { nodes, uniform }
    }

    pub fn uniform(a: T, b: T, intervals: usize) -> Self {
        let h = (b - a) / T::lit(intervals as f64);
        let mut nodes: Vec<T> = (0..=intervals).map(|k| a + h * T::lit(k as f64)).collect();
        nodes[intervals] = b;
        Grid1 { nodes, uniform: true }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn first(&self) -> T {
        self.nodes[0]
    }

    pub fn last(&self) -> T {
        self.nodes[self.nodes.len() - 1]
    }

    /// Index k with nodes[k] ≤ x ≤ nodes[k+1], clamped to the valid range.
    pub fn interval(&self, x: T) -> usize {
        let n = self.nodes.len();
        if self.uniform {
            let a = self.nodes[0];
            let h = (self.nodes[n - 1] - a) / T::lit((n - 1) as f64);
            let k = ((x - a) / h).floor().to_isize().unwrap_or(0);
            return k.clamp(0, n as isize - 2) as usize;
        }
        match self
            .nodes
            .binary_search_by(|v| v.partial_cmp(&x).unwrap_or(std::cmp::Ordering::Less))
        {
            Ok(k) => k.min(n - 2),
            Err(k) => k.saturating_sub(1).min(n - 2),
        }
    }

    /// Start index of a `width`-point stencil around `x`, kept inside the grid.
    pub fn stencil_start(&self, x: T, width: usize) -> usize {
        let n = self.nodes.len();
        let width = width.min(n);
        let k = self.interval(x) as isize;
        let start = k - (width as isize - 2) / 2;
        start.clamp(0, (n - width) as isize) as usize
    }

    /// Cubic (4-point) Lagrange interpolation weights at x.
    pub fn cubic_weights(&self, x: T) -> (usize, [T; 4]) {
        let n = self.nodes.len();
        if n < 4 {
            let s = self.stencil_start(x, n);
            let w = fornberg(x, &self.nodes[s..s + n], 0);
            let mut out = [T::zero(); 4];
            out[..n].copy_from_slice(&w[0]);
            return (s, out);
        }
        let s = self.stencil_start(x, 4);
        let p = &self.nodes[s..s + 4];
        let mut w = [T::one(); 4];
        for i in 0..4 {
            for j in 0..4 {
                if i != j {
                    w[i] *= (x - p[j]) / (p[i] - p[j]);
                }
            }
        }
        (s, w)
    }

    /// Weights of a `width`-point stencil for the `order`-th derivative at x.
    pub fn derivative_weights(&self, x: T, order: usize, width: usize) -> (usize, Vec<T>) {
        let width = width.min(self.nodes.len());
        let s = self.stencil_start(x, width);
        let w = fornberg(x, &self.nodes[s..s + width], order);
        (s, w[order].clone())
    }

    /// Weights for the derivative at node k using the 5-point stencil (4th order).
    pub fn node_derivative_weights(&self, k: usize) -> (usize, Vec<T>) {
        let n = self.nodes.len();
        let width = 5.min(n);
        let start = (k as isize - 2).clamp(0, (n - width) as isize) as usize;
        let w = fornberg(self.nodes[k], &self.nodes[start..start + width], 1);
        (start, w[1].clone())
    }
}

/// Samples of a function of one variable.
#[derive(Clone, Debug)]
pub struct Tab1<T, V> {
    pub grid: Grid1<T>,
    pub values: Vec<V>,
}

impl<T: Real, V: FieldValue<T>> Tab1<T, V> {
    pub fn new(grid: Grid1<T>, values: Vec<V>) -> Self {
        assert_eq!(grid.len(), values.len());
        Tab1 { grid, values }
    }

    pub fn from_fn(grid: Grid1<T>, f: impl Fn(T) -> V) -> Self {
        let values = grid.nodes.iter().map(|&x| f(x)).collect();
        Tab1 { grid, values }
    }

    pub fn eval(&self, x: T) -> V {
        let (s, w) = self.grid.cubic_weights(x);
        let mut acc = V::zero_value();
        for (k, wk) in w.iter().enumerate() {
            if s + k < self.values.len() {
                acc = acc + self.values[s + k] * *wk;
            }
        }
        acc
    }

    /// Derivative at arbitrary x from a 5-point stencil.
    pub fn deriv(&self, x: T) -> V {
        let (s, w) = self.grid.derivative_weights(x, 1, 5);
        w.iter()
            .enumerate()
            .fold(V::zero_value(), |acc, (k, wk)| acc + self.values[s + k] * *wk)
    }

    /// Fourth-order derivative samples at the nodes.
    pub fn node_derivatives(&self) -> Vec<V> {
        (0..self.grid.len())
            .map(|k| {
                let (s, w) = self.grid.node_derivative_weights(k);
                w.iter()
                    .enumerate()
                    .fold(V::zero_value(), |acc, (j, wj)| acc + self.values[s + j] * *wj)
            })
            .collect()
    }

    /// Running integral from the first node, exact for piecewise cubics.
    pub fn cumulative_integral(&self) -> Vec<V> {
        cumulative_integral(&self.grid, &self.values)
    }

    pub fn max_magnitude(&self) -> T {
        self.values
            .iter()
            .fold(T::zero(), |m, v| m.max(v.magnitude()))
    }
}

/// ∫_{x_0}^{x_k} of the local cubic interpolant, for every k.
pub fn cumulative_integral<T: Real, V: FieldValue<T>>(grid: &Grid1<T>, values: &[V]) -> Vec<V> {
    let n = grid.len();
    let mut out = Vec::with_capacity(n);
    out.push(V::zero_value());
    // two-point Gauss rule integrates the cubic interpolant exactly
    let g = T::one() / T::lit(3.0).sqrt();
    let half = T::lit(0.5);
    let mut acc = V::zero_value();
    for k in 0..n - 1 {
        let a = grid.nodes[k];
        let b = grid.nodes[k + 1];
        let mid = (a + b) * half;
        let hw = (b - a) * half;
        let width = 4.min(n);
        let s = grid.stencil_start(mid, width);
        let p = &grid.nodes[s..s + width];
        let mut piece = V::zero_value();
        for &z in &[mid - hw * g, mid + hw * g] {
            let lw = fornberg(z, p, 0);
            for (j, wj) in lw[0].iter().enumerate() {
                piece = piece + values[s + j] * *wj;
            }
        }
        acc = acc + piece * hw;
        out.push(acc);
    }
    out
}

/// Samples of a function of (x, t) on a tensor grid, x-major.
#[derive(Clone, Debug)]
pub struct Field2<T, V> {
    pub x: Grid1<T>,
    pub t: Grid1<T>,
    pub data: Vec<V>,
}

impl<T: Real, V: FieldValue<T>> Field2<T, V> {
    pub fn zeros(x: Grid1<T>, t: Grid1<T>) -> Self {
        let data = vec![V::zero_value(); x.len() * t.len()];
        Field2 { x, t, data }
    }

    pub fn from_rows(x: Grid1<T>, t: Grid1<T>, rows: Vec<Vec<V>>) -> Self {
        assert_eq!(rows.len(), x.len());
        let mut data = Vec::with_capacity(x.len() * t.len());
        for r in rows {
            assert_eq!(r.len(), t.len());
            data.extend(r);
        }
        Field2 { x, t, data }
    }

    #[inline]
    pub fn at(&self, ix: usize, it: usize) -> V {
        self.data[ix * self.t.len() + it]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, it: usize, v: V) {
        let nt = self.t.len();
        self.data[ix * nt + it] = v;
    }

    pub fn row(&self, ix: usize) -> &[V] {
        let nt = self.t.len();
        &self.data[ix * nt..(ix + 1) * nt]
    }

    /// Tensor-product cubic interpolation.
    pub fn eval(&self, x: T, t: T) -> V {
        let (sx, wx) = self.x.cubic_weights(x);
        let (st, wt) = self.t.cubic_weights(t);
        let nx = self.x.len().min(4);
        let nt = self.t.len().min(4);
        let mut acc = V::zero_value();
        for a in 0..nx {
            let mut inner = V::zero_value();
            for b in 0..nt {
                inner = inner + self.at(sx + a, st + b) * wt[b];
            }
            acc = acc + inner * wx[a];
        }
        acc
    }

    /// Bilinear interpolation.
    pub fn eval_bilinear(&self, x: T, t: T) -> V {
        let ix = self.x.interval(x);
        let it = self.t.interval(t);
        let fx = ((x - self.x.nodes[ix]) / (self.x.nodes[ix + 1] - self.x.nodes[ix]))
            .max(T::zero())
            .min(T::one());
        let ft = ((t - self.t.nodes[it]) / (self.t.nodes[it + 1] - self.t.nodes[it]))
            .max(T::zero())
            .min(T::one());
        let one = T::one();
        self.at(ix, it) * ((one - fx) * (one - ft))
            + self.at(ix + 1, it) * (fx * (one - ft))
            + self.at(ix, it + 1) * ((one - fx) * ft)
            + self.at(ix + 1, it + 1) * (fx * ft)
    }

    /// ∂/∂t at every node (5-point stencils).
    pub fn dt_nodes(&self) -> Self {
        let nt = self.t.len();
        let weights: Vec<(usize, Vec<T>)> =
            (0..nt).map(|k| self.t.node_derivative_weights(k)).collect();
        let mut out = Field2::zeros(self.x.clone(), self.t.clone());
        for ix in 0..self.x.len() {
            let row = self.row(ix);
            for (it, (s, w)) in weights.iter().enumerate() {
                let v = w
                    .iter()
                    .enumerate()
                    .fold(V::zero_value(), |acc, (j, wj)| acc + row[s + j] * *wj);
                out.set(ix, it, v);
            }
        }
        out
    }

    pub fn max_magnitude(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.magnitude()))
    }

    pub fn map(&self, f: impl Fn(V) -> V) -> Self {
        Field2 {
            x: self.x.clone(),
            t: self.t.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fornberg_reproduces_central_differences() {
        let w = fornberg(0.0, &[-1.0, 0.0, 1.0], 2);
        assert_eq!(w[1], vec![-0.5, 0.0, 0.5]);
        assert_eq!(w[2], vec![1.0, -2.0, 1.0]);
    }

    #[test]
    fn cubic_interpolation_is_exact_for_cubics() {
        let g = Grid1::new(vec![0.0, 0.1, 0.25, 0.4, 0.7, 0.75, 1.0]);
        let f = |x: f64| 1.0 - 2.0 * x + 3.0 * x * x - x * x * x;
        let tab = Tab1::from_fn(g, f);
        for &x in &[0.0, 0.05, 0.33, 0.72, 0.99, 1.0] {
            assert!((tab.eval(x) - f(x)).abs() < 1e-13);
        }
        let cum = tab.cumulative_integral();
        let exact = |x: f64| x - x * x + x.powi(3) - x.powi(4) / 4.0;
        for (k, &x) in tab.grid.nodes.iter().enumerate() {
            assert!((cum[k] - exact(x)).abs() < 1e-13);
        }
    }

    #[test]
    fn node_derivatives_are_fourth_order() {
        let err = |n: usize| {
            let tab = Tab1::from_fn(Grid1::uniform(0.0, 1.0, n), |x: f64| x.sin());
            tab.node_derivatives()
                .iter()
                .zip(&tab.grid.nodes)
                .map(|(d, x)| (d - x.cos()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(20) / err(40);
        assert!(ratio > 12.0, "ratio {ratio}");
    }

    #[test]
    fn field_interpolation_matches_smooth_function() {
        let x = Grid1::uniform(0.0, 1.0, 32);
        let t = Grid1::uniform(0.0, 2.0, 64);
        let f = |x: f64, t: f64| (x * t).cos() + x * x;
        let rows = x
            .nodes
            .iter()
            .map(|&xv| t.nodes.iter().map(|&tv| f(xv, tv)).collect())
            .collect();
        let fld = Field2::from_rows(x, t, rows);
        assert!((fld.eval(0.4321, 1.234) - f(0.4321, 1.234)).abs() < 1e-7);
        assert!((fld.eval_bilinear(0.4321, 1.234) - f(0.4321, 1.234)).abs() < 1e-3);
        let dt = fld.dt_nodes();
        let s: f64 = 10.0 / 32.0;
        assert!((dt.at(10, 10) + s * (s * s).sin()).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn interval_brackets_the_point(x in 0.0f64..1.0) {
            let g = Grid1::new(vec![0.0, 0.01, 0.2, 0.5, 0.55, 0.9, 1.0]);
            let k = g.interval(x);
            prop_assert!(g.nodes[k] <= x && x <= g.nodes[k + 1]);
            let u = Grid1::uniform(0.0, 1.0, 37);
            let k = u.interval(x);
            prop_assert!(u.nodes[k] <= x + 1e-15 && x <= u.nodes[k + 1] + 1e-15);
        }
    }
}
