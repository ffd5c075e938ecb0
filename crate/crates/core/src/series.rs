//! Partial sums u_εn = Σ_{k ≤ n} ε^{k/2} u_k restricted to physical (x, t) and
//! sampled on tensor grids.

use std::io::Write;
use std::path::Path;

use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expansion::Expansion;
use crate::interp::{Field2, Grid1};
use crate::problem::ProblemSpec;
use crate::scalar::{Real, C};

pub const GRIDFIELD_SCHEMA: &str = "perturba.gridfield/1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Asymptotic,
    Reference,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta<T> {
    pub epsilon: T,
    /// Order n of the partial sum; `None` for reference solutions.
    pub order: Option<usize>,
    pub provenance: Provenance,
}

/// An n-vector field on a tensor (x, t) grid, one [`Field2`] per component.
#[derive(Clone, Debug)]
pub struct GridField<T> {
    pub components: Vec<Field2<T, C<T>>>,
    pub meta: GridMeta<T>,
}

/// Metadata written next to the CSV values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub schema: String,
    pub n: usize,
    pub nx: usize,
    pub nt: usize,
    pub epsilon: f64,
    pub order: Option<usize>,
    pub provenance: Provenance,
    pub columns: Vec<String>,
}

impl<T: Real> GridField<T> {
    /// Builds from values indexed `[ix][it][component]`; fails on non-finite values.
    pub fn from_nodes(x: Grid1<T>, t: Grid1<T>, values: Vec<Vec<Vec<C<T>>>>, meta: GridMeta<T>) -> Result<Self> {
        let n = values.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if values.len() != x.len() || values.iter().any(|r| r.len() != t.len() || r.iter().any(|v| v.len() != n)) {
            return Err(Error::spec("grid field dimensions are inconsistent"));
        }
        if values.iter().flatten().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Numerical("grid field has non-finite values".into()));
        }
        let components = (0..n)
            .map(|i| {
                let rows = values.iter().map(|r| r.iter().map(|v| v[i]).collect()).collect();
                Field2::from_rows(x.clone(), t.clone(), rows)
            })
            .collect();
        Ok(GridField { components, meta })
    }

    pub fn dim(&self) -> usize {
        self.components.len()
    }

    pub fn x_nodes(&self) -> &[T] {
        &self.components[0].x.nodes
    }

    pub fn t_nodes(&self) -> &[T] {
        &self.components[0].t.nodes
    }

    pub fn value(&self, ix: usize, it: usize) -> Vec<C<T>> {
        self.components.iter().map(|f| f.at(ix, it)).collect()
    }

    pub fn eval_bilinear(&self, x: T, t: T) -> Vec<C<T>> {
        self.components.iter().map(|f| f.eval_bilinear(x, t)).collect()
    }

    /// Largest Euclidean norm over the nodes.
    pub fn max_norm(&self) -> T {
        let (nx, nt) = (self.x_nodes().len(), self.t_nodes().len());
        let mut m = T::zero();
        for ix in 0..nx {
            for it in 0..nt {
                let s = self.components.iter().fold(T::zero(), |s, f| s + f.at(ix, it).norm_sqr());
                m = m.max(s.sqrt());
            }
        }
        m
    }

    pub fn header(&self) -> GridHeader {
        let mut columns = vec!["x".to_string(), "t".to_string()];
        for i in 1..=self.dim() {
            columns.push(format!("re_u{i}"));
            columns.push(format!("im_u{i}"));
        }
        GridHeader {
            schema: GRIDFIELD_SCHEMA.into(),
            n: self.dim(),
            nx: self.x_nodes().len(),
            nt: self.t_nodes().len(),
            epsilon: self.meta.epsilon.as_f64(),
            order: self.meta.order,
            provenance: self.meta.provenance,
            columns,
        }
    }

    /// One row per node, x-major: `x,t,re_u1,im_u1,…`.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "{}", self.header().columns.join(","))?;
        for (ix, &x) in self.x_nodes().iter().enumerate() {
            for (it, &t) in self.t_nodes().iter().enumerate() {
                write!(w, "{:e},{:e}", x.as_f64(), t.as_f64())?;
                for f in &self.components {
                    let z = f.at(ix, it);
                    write!(w, ",{:e},{:e}", z.re.as_f64(), z.im.as_f64())?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }

    /// Writes `<stem>.csv` and `<stem>.json` into `dir`.
    pub fn write_files(&self, dir: &Path, stem: &str) -> Result<()> {
        let csv = std::fs::File::create(dir.join(format!("{stem}.csv")))?;
        self.write_csv(std::io::BufWriter::new(csv))?;
        let json = serde_json::to_string_pretty(&self.header())?;
        std::fs::write(dir.join(format!("{stem}.json")), json)?;
        Ok(())
    }
}

/// Nodes clustered towards x = 0 and x = 1 (Chebyshev–Lobatto).
pub fn clustered_x_nodes<T: Real>(intervals: usize) -> Vec<T> {
    let n = intervals.max(1);
    let mut v: Vec<T> = (0..=n)
        .map(|k| {
            let th = T::PI() * T::lit(k as f64) / T::lit(n as f64);
            (T::one() - th.cos()) / T::lit(2.0)
        })
        .collect();
    v[0] = T::zero();
    v[n] = T::one();
    v
}

/// Nodes uniform in ln((t+ε)/ε), hence geometric near t = 0.
pub fn clustered_t_nodes<T: Real>(intervals: usize, t_end: T, eps: T) -> Vec<T> {
    let n = intervals.max(1);
    let s_end = ((t_end + eps) / eps).ln();
    let mut v: Vec<T> = (0..=n)
        .map(|k| eps * ((s_end * T::lit(k as f64) / T::lit(n as f64)).exp() - T::one()))
        .collect();
    v[0] = T::zero();
    v[n] = t_end;
    v
}

/// u_εn on the tensor grid `x_nodes × t_nodes`.
pub fn evaluate_partial_sum<T: Real>(
    expansion: &Expansion<T>,
    n: usize,
    eps: T,
    x_nodes: &[T],
    t_nodes: &[T],
) -> Result<GridField<T>> {
    if n > expansion.order {
        return Err(Error::spec(format!(
            "partial sum of order {n} requested from an expansion built to order {}",
            expansion.order
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::spec("ε must be positive"));
    }
    let ctx = &expansion.ctx;
    let values: Vec<Vec<Vec<C<T>>>> = x_nodes
        .par_iter()
        .map(|&x| {
            t_nodes
                .iter()
                .map(|&t| {
                    let p = ctx.regularize(x, t, eps);
                    let basis = ctx.basis_at(x, t);
                    expansion.partial_sum_at(n, &p, &basis, eps)
                })
                .collect()
        })
        .collect();
    let meta = GridMeta {
        epsilon: eps,
        order: Some(n),
        provenance: Provenance::Asymptotic,
    };
    GridField::from_nodes(Grid1::new(x_nodes.to_vec()), Grid1::new(t_nodes.to_vec()), values, meta)
}

/// Max-norm residuals of u(x,0) − h(x), u(0,t) and u(1,t).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryResiduals<T> {
    pub initial: T,
    pub left: T,
    pub right: T,
}

impl<T: Real> BoundaryResiduals<T> {
    pub fn max(&self) -> T {
        self.initial.max(self.left).max(self.right)
    }
}

pub fn boundary_residuals<T: Real>(field: &GridField<T>, spec: &ProblemSpec<T>) -> Result<BoundaryResiduals<T>> {
    let xs = field.x_nodes();
    let ts = field.t_nodes();
    if xs[0] != T::zero() || xs[xs.len() - 1] != T::one() || ts[0] != T::zero() {
        return Err(Error::spec("boundary residuals need nodes at x = 0, x = 1 and t = 0"));
    }
    if field.dim() != spec.n {
        return Err(Error::spec("field and problem dimensions differ"));
    }
    let norm = |v: &[C<T>]| v.iter().fold(T::zero(), |s, z| s + z.norm_sqr()).sqrt();
    let mut initial = T::zero();
    for (ix, &x) in xs.iter().enumerate() {
        let h = spec.h_at(x);
        let u = field.value(ix, 0);
        let d: Vec<C<T>> = u.iter().zip(&h).map(|(a, b)| *a - *b).collect();
        initial = initial.max(norm(&d));
    }
    let last = xs.len() - 1;
    let (mut left, mut right) = (T::zero(), T::zero());
    for it in 0..ts.len() {
        left = left.max(norm(&field.value(0, it)));
        right = right.max(norm(&field.value(last, it)));
    }
    Ok(BoundaryResiduals { initial, left, right })
}

/// Zero field of dimension n on the given nodes.
pub fn zero_field<T: Real>(n: usize, x_nodes: &[T], t_nodes: &[T], meta: GridMeta<T>) -> GridField<T> {
    let values = vec![vec![vec![C::zero(); n]; t_nodes.len()]; x_nodes.len()];
    GridField::from_nodes(Grid1::new(x_nodes.to_vec()), Grid1::new(t_nodes.to_vec()), values, meta)
        .expect("zero field is consistent")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expansion::ExpansionOptions;
    use crate::poly::{Poly, Poly2};
    use crate::problem::preset;

    fn opts() -> ExpansionOptions<f64> {
        ExpansionOptions {
            nx: 32,
            nt: 256,
            stretch_intervals: 256,
            quad_tol: 1e-10,
        }
    }

    fn meta(eps: f64) -> GridMeta<f64> {
        GridMeta {
            epsilon: eps,
            order: None,
            provenance: Provenance::Reference,
        }
    }

    #[test]
    fn zero_data_gives_zero_field() {
        let mut spec = preset::<f64>("coupled-2x2").unwrap();
        spec = spec.scaled_data(0.0);
        let e = Expansion::build(&spec, 0, &opts()).unwrap();
        let f = evaluate_partial_sum(&e, 0, 0.1, &clustered_x_nodes(8), &clustered_t_nodes(8, 1.0, 0.1)).unwrap();
        assert_eq!(f.max_norm(), 0.0);
        let r = boundary_residuals(&f, &spec).unwrap();
        assert_eq!(r.max(), 0.0);
    }

    #[test]
    fn zero_field_residuals_measure_the_initial_data() {
        let spec = preset::<f64>("scalar-const").unwrap();
        let xs = clustered_x_nodes(64);
        let f = zero_field(1, &xs, &[0.0, 0.5, 1.0], meta(0.1));
        let r = boundary_residuals(&f, &spec).unwrap();
        // h = 2x(1−x) peaks at x = 1/2, which is a node
        assert!((r.initial - 0.5).abs() < 1e-15);
        assert_eq!((r.left, r.right), (0.0, 0.0));
    }

    #[test]
    fn interior_only_term_does_not_depend_on_epsilon() {
        // h = v(0) makes the exponential part vanish, leaving u_0 = v ψ
        let spec = ProblemSpec {
            n: 1,
            a: vec![vec![Poly::constant(1.0)]],
            d: vec![vec![Poly::constant(-1.0)]],
            f: vec![Poly2::new(&[&[0.0], &[1.0], &[-1.0]])],
            h: vec![Poly::new(&[0.0, 1.0, -1.0])],
            t_end: 1.0,
            epsilons: vec![],
        };
        let e = Expansion::build(&spec, 0, &opts()).unwrap();
        let xs = [0.2, 0.5, 0.7];
        let ts = [0.0, 0.3, 1.0];
        let a = evaluate_partial_sum(&e, 0, 0.1, &xs, &ts).unwrap();
        let b = evaluate_partial_sum(&e, 0, 0.01, &xs, &ts).unwrap();
        for (fa, fb) in a.components.iter().zip(&b.components) {
            for (za, zb) in fa.data.iter().zip(&fb.data) {
                assert!((za - zb).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_preset_matches_hand_evaluation() {
        // v0 = (x−x²)(1+t/2), c0 = x−x², β(0) = −1, no layers
        let spec = preset::<f64>("scalar-const").unwrap();
        let e = Expansion::build(&spec, 0, &opts()).unwrap();
        for eps in [0.1, 0.01] {
            let f = evaluate_partial_sum(&e, 0, eps, &[0.5, 0.6], &[0.9, 1.0]).unwrap();
            let want = 0.25 * 1.5 + 0.25 * ((1.0 + eps) / eps).powf(-1.0);
            assert!((f.value(0, 1)[0] - C::new(want, 0.0)).norm() < 1e-10);
        }
    }

    #[test]
    fn evaluation_is_deterministic() {
        let spec = preset::<f64>("coupled-2x2").unwrap();
        let e = Expansion::build(&spec, 1, &opts()).unwrap();
        let xs = clustered_x_nodes(16);
        let ts = clustered_t_nodes(16, 1.0, 0.05);
        let a = evaluate_partial_sum(&e, 1, 0.05, &xs, &ts).unwrap();
        let b = evaluate_partial_sum(&e, 1, 0.05, &xs, &ts).unwrap();
        for (fa, fb) in a.components.iter().zip(&b.components) {
            assert!(fa.data.iter().zip(&fb.data).all(|(p, q)| p.re.to_bits() == q.re.to_bits() && p.im.to_bits() == q.im.to_bits()));
        }
    }

    #[test]
    fn restriction_residual_shrinks_with_epsilon() {
        // (ε+t)u_t − ε²A u_xx − D u − f by central differences away from the layers
        let spec = preset::<f64>("coupled-2x2").unwrap();
        let e = Expansion::build(&spec, 0, &opts()).unwrap();
        let residual = |eps: f64| {
            let mut worst = 0.0f64;
            for &x in &[0.3, 0.5, 0.7] {
                for &t in &[0.2, 0.6, 0.9] {
                    let (hx, ht) = (1e-3, 1e-4);
                    let u = |x, t| e.evaluate(x, t, eps);
                    let c = u(x, t);
                    let (xp, xm) = (u(x + hx, t), u(x - hx, t));
                    let (tp, tm) = (u(x, t + ht), u(x, t - ht));
                    let a = spec.a_at(x);
                    let d = spec.d_at(t);
                    let f = spec.f_at(x, t);
                    for i in 0..2 {
                        let mut r = (tp[i] - tm[i]) / (2.0 * ht) * (eps + t) - f[i];
                        for j in 0..2 {
                            let uxx = (xp[j] - c[j] * 2.0 + xm[j]) / (hx * hx);
                            r -= a[(i, j)] * uxx * eps * eps + d[(i, j)] * c[j];
                        }
                        worst = worst.max(r.norm());
                    }
                }
            }
            worst
        };
        let (r1, r2) = (residual(0.05), residual(0.025));
        assert!(r2 < 0.7 * r1, "{r1} {r2}");
    }

    #[test]
    fn serialization_round_trips_the_header() {
        let spec = preset::<f64>("scalar-const").unwrap();
        let e = Expansion::build(&spec, 0, &opts()).unwrap();
        let f = evaluate_partial_sum(&e, 0, 0.1, &clustered_x_nodes(4), &clustered_t_nodes(3, 1.0, 0.1)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        f.write_files(dir.path(), "u").unwrap();
        let h: GridHeader = serde_json::from_str(&std::fs::read_to_string(dir.path().join("u.json")).unwrap()).unwrap();
        assert_eq!(h, f.header());
        assert_eq!(h.schema, GRIDFIELD_SCHEMA);
        let csv = std::fs::read_to_string(dir.path().join("u.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "x,t,re_u1,im_u1");
        assert_eq!(lines.len(), 1 + 5 * 4);
        let last: Vec<f64> = lines[lines.len() - 1].split(',').map(|s| s.parse().unwrap()).collect();
        assert_eq!((last[0], last[1]), (1.0, 1.0));
        assert_eq!(last[2], f.value(4, 3)[0].re);
    }

    #[test]
    fn clustered_nodes_are_sorted_and_hit_the_ends() {
        let x: Vec<f64> = clustered_x_nodes(10);
        let t: Vec<f64> = clustered_t_nodes(10, 2.0, 0.01);
        for v in [&x, &t] {
            assert!(v.windows(2).all(|w| w[1] > w[0]));
        }
        assert_eq!((x[0], x[10], t[0], t[10]), (0.0, 1.0, 0.0, 2.0));
        assert!(t[1] < 0.01 && x[1] < 0.05);
    }
}
