//! Problem definition, file format, bundled presets and assumption checks.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{eigenvalues, CMat};
use crate::poly::{Poly, Poly2};
use crate::scalar::{cr, Real, C};

/// Coefficients of a linear parabolic system
/// (ε+t)u_t − ε²A(x)u_xx − D(t)u = f(x,t), u(x,0) = h(x), u(0,t) = u(1,t) = 0.
///
/// Implemented by [`ProblemSpec`] and by manufactured problems in tests.
pub trait PdeCoefficients<T: Real>: Sync {
    fn dim(&self) -> usize;
    fn horizon(&self) -> T;
    fn a_at(&self, x: T) -> CMat<T>;
    fn d_at(&self, t: T) -> CMat<T>;
    /// Source term. The reference solver passes ε so manufactured sources can depend on it.
    fn f_at(&self, x: T, t: T, eps: T) -> Vec<C<T>>;
    fn h_at(&self, x: T) -> Vec<C<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemSpec<T> {
    pub n: usize,
    pub a: Vec<Vec<Poly<T>>>,
    pub d: Vec<Vec<Poly<T>>>,
    pub f: Vec<Poly2<T>>,
    pub h: Vec<Poly<T>>,
    pub t_end: T,
    pub epsilons: Vec<T>,
}

/// On-disk layout; epsilons may be numbers or rational strings such as "1/16".
#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
#[serde(deny_unknown_fields)]
struct ProblemFile<T> {
    n: usize,
    #[serde(rename = "T")]
    t_end: T,
    #[serde(rename = "A")]
    a: Vec<Vec<Poly<T>>>,
    #[serde(rename = "D")]
    d: Vec<Vec<Poly<T>>>,
    f: Vec<Poly2<T>>,
    h: Vec<Poly<T>>,
    #[serde(default)]
    epsilons: Vec<Value>,
}

/// Largest polynomial degree accepted per entry.
pub const MAX_DEGREE: usize = 8;

/// Parse "0.01", "1/16" or "2^-5" into a float.
pub fn parse_epsilon(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::spec(format!("cannot parse epsilon {s:?}"));
    let v = if let Some((num, den)) = s.split_once('/') {
        let num: f64 = num.trim().parse().map_err(|_| bad())?;
        let den: f64 = den.trim().parse().map_err(|_| bad())?;
        num / den
    } else if let Some((base, exp)) = s.split_once('^') {
        let base: f64 = base.trim().parse().map_err(|_| bad())?;
        let exp: i32 = exp.trim().parse().map_err(|_| bad())?;
        base.powi(exp)
    } else {
        s.parse().map_err(|_| bad())?
    };
    if !(v > 0.0 && v < 1.0) {
        return Err(Error::spec(format!("epsilon {s} outside (0,1)")));
    }
    Ok(v)
}

pub fn parse_epsilon_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_epsilon).collect()
}

impl<T: Real> ProblemSpec<T> {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: ProblemFile<T> = serde_json::from_str(text)?;
        let mut epsilons = Vec::with_capacity(file.epsilons.len());
        for v in &file.epsilons {
            let e = match v {
                Value::Number(x) => x
                    .as_f64()
                    .ok_or_else(|| Error::spec("epsilon is not a finite number"))?,
                Value::String(s) => parse_epsilon(s)?,
                other => return Err(Error::spec(format!("bad epsilon entry {other}"))),
            };
            epsilons.push(T::lit(e));
        }
        let spec = ProblemSpec {
            n: file.n,
            a: file.a,
            d: file.d,
            f: file.f,
            h: file.h,
            t_end: file.t_end,
            epsilons,
        };
        spec.check_structure()?;
        Ok(spec)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = ProblemFile {
            n: self.n,
            t_end: self.t_end,
            a: self.a.clone(),
            d: self.d.clone(),
            f: self.f.clone(),
            h: self.h.clone(),
            epsilons: self
                .epsilons
                .iter()
                .map(|e| serde_json::json!(e.as_f64()))
                .collect(),
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Shape and domain checks; independent of the analytic assumptions.
    pub fn check_structure(&self) -> Result<()> {
        let n = self.n;
        if n == 0 {
            return Err(Error::spec("system dimension n must be positive"));
        }
        let square = |m: &Vec<Vec<Poly<T>>>, name: &str| -> Result<()> {
            if m.len() != n || m.iter().any(|r| r.len() != n) {
                return Err(Error::spec(format!("{name} must be an {n}x{n} matrix")));
            }
            if m.iter().flatten().any(|p| p.degree() > MAX_DEGREE) {
                return Err(Error::spec(format!("{name} entry exceeds degree {MAX_DEGREE}")));
            }
            if m.iter().flatten().flat_map(|p| p.0.iter()).any(|c| !c.is_finite()) {
                return Err(Error::spec(format!("{name} has a non-finite coefficient")));
            }
            Ok(())
        };
        square(&self.a, "A")?;
        square(&self.d, "D")?;
        if self.f.len() != n {
            return Err(Error::spec(format!("f must have {n} components")));
        }
        if self.f.iter().any(|p| p.max_degree() > MAX_DEGREE) {
            return Err(Error::spec(format!("f entry exceeds degree {MAX_DEGREE}")));
        }
        if self.h.len() != n {
            return Err(Error::spec(format!("h must have {n} components")));
        }
        if !(self.t_end > T::zero()) || !self.t_end.is_finite() {
            return Err(Error::spec("time horizon T must be positive"));
        }
        for w in self.epsilons.windows(2) {
            if !(w[1] < w[0]) {
                return Err(Error::spec("epsilons must be strictly decreasing"));
            }
        }
        if self
            .epsilons
            .iter()
            .any(|&e| !(e > T::zero() && e < T::one()))
        {
            return Err(Error::spec("epsilons must lie in (0,1)"));
        }
        Ok(())
    }

    pub fn a_at(&self, x: T) -> CMat<T> {
        CMat::from_fn(self.n, self.n, |i, j| cr(self.a[i][j].eval(x)))
    }

    pub fn d_at(&self, t: T) -> CMat<T> {
        CMat::from_fn(self.n, self.n, |i, j| cr(self.d[i][j].eval(t)))
    }

    pub fn f_at(&self, x: T, t: T) -> Vec<C<T>> {
        self.f.iter().map(|p| cr(p.eval(x, t))).collect()
    }

    pub fn h_at(&self, x: T) -> Vec<C<T>> {
        self.h.iter().map(|p| cr(p.eval(x))).collect()
    }

    /// ∂f/∂t, used by manufactured and scalar oracle code.
    pub fn f_dt(&self) -> Vec<Poly2<T>> {
        self.f.iter().map(|p| p.dt()).collect()
    }

    /// Same problem with f and h multiplied by `s`.
    pub fn scaled_data(&self, s: T) -> Self {
        let mut out = self.clone();
        out.f = self.f.iter().map(|p| p.scaled(s)).collect();
        out.h = self
            .h
            .iter()
            .map(|p| Poly(p.0.iter().map(|&c| c * s).collect()))
            .collect();
        out
    }
}

impl<T: Real> PdeCoefficients<T> for ProblemSpec<T> {
    fn dim(&self) -> usize {
        self.n
    }
    fn horizon(&self) -> T {
        self.t_end
    }
    fn a_at(&self, x: T) -> CMat<T> {
        ProblemSpec::a_at(self, x)
    }
    fn d_at(&self, t: T) -> CMat<T> {
        ProblemSpec::d_at(self, t)
    }
    fn f_at(&self, x: T, t: T, _eps: T) -> Vec<C<T>> {
        ProblemSpec::f_at(self, x, t)
    }
    fn h_at(&self, x: T) -> Vec<C<T>> {
        ProblemSpec::h_at(self, x)
    }
}

/// Names of the bundled problems, in listing order.
pub const PRESET_NAMES: [&str; 5] = [
    "scalar-const",
    "scalar-var-lambda",
    "coupled-2x2",
    "complex-2x2",
    "coupled-2x2-varying",
];

/// One-line descriptions matching [`PRESET_NAMES`].
pub const PRESET_SUMMARIES: [&str; 5] = [
    "n=1, A=1, D=-1, f=x(1-x)(1+t), h=2x(1-x)",
    "n=1, A=(1+x)^2, D=-1, f=1, h=x(1-x); boundary layers present",
    "n=2, A=[[2,x],[1,3]], D=[[-1,t],[0,-5/2]], f=x(1-x)(1+t,2), h=x(1-x)(1,-1)",
    "n=2, eigenvalues 2±i and -2±i, f=x(1-x)(1,t), h=x(1-x)(1,0)",
    "n=2, A as coupled-2x2, D(t) with time-dependent eigenvectors and eigenvalues -1-t, -7/2",
];

fn p<T: Real>(c: &[f64]) -> Poly<T> {
    Poly::new(c)
}

/// Default ε sweep 2⁻⁴ … 2⁻⁸.
pub fn default_epsilons<T: Real>() -> Vec<T> {
    (4..=8).map(|k| T::lit(2f64.powi(-k))).collect()
}

pub fn preset<T: Real>(name: &str) -> Option<ProblemSpec<T>> {
    let bubble = [0.0, 1.0, -1.0];
    let eps = default_epsilons();
    let spec = match name {
        "scalar-const" => ProblemSpec {
            n: 1,
            a: vec![vec![p(&[1.0])]],
            d: vec![vec![p(&[-1.0])]],
            f: vec![Poly2::new(&[&[0.0, 0.0], &[1.0, 1.0], &[-1.0, -1.0]])],
            h: vec![p(&[0.0, 2.0, -2.0])],
            t_end: T::one(),
            epsilons: eps,
        },
        "scalar-var-lambda" => ProblemSpec {
            n: 1,
            a: vec![vec![p(&[1.0, 2.0, 1.0])]],
            d: vec![vec![p(&[-1.0])]],
            f: vec![Poly2::new(&[&[1.0]])],
            h: vec![p(&bubble)],
            t_end: T::one(),
            epsilons: eps,
        },
        "coupled-2x2" => ProblemSpec {
            n: 2,
            a: vec![vec![p(&[2.0]), p(&[0.0, 1.0])], vec![p(&[1.0]), p(&[3.0])]],
            d: vec![vec![p(&[-1.0]), p(&[0.0, 1.0])], vec![p(&[0.0]), p(&[-2.5])]],
            f: vec![
                Poly2::new(&[&[0.0, 0.0], &[1.0, 1.0], &[-1.0, -1.0]]),
                Poly2::new(&[&[0.0], &[2.0], &[-2.0]]),
            ],
            h: vec![p(&bubble), p(&[0.0, -1.0, 1.0])],
            t_end: T::one(),
            epsilons: eps,
        },
        "complex-2x2" => ProblemSpec {
            n: 2,
            a: vec![vec![p(&[2.0]), p(&[-1.0])], vec![p(&[1.0]), p(&[2.0])]],
            d: vec![vec![p(&[-2.0]), p(&[-1.0])], vec![p(&[1.0]), p(&[-2.0])]],
            f: vec![
                Poly2::new(&[&[0.0], &[1.0], &[-1.0]]),
                Poly2::new(&[&[0.0, 0.0], &[0.0, 1.0], &[0.0, -1.0]]),
            ],
            h: vec![p(&bubble), p(&[0.0])],
            t_end: T::one(),
            epsilons: eps,
        },
        "coupled-2x2-varying" => ProblemSpec {
            n: 2,
            a: vec![vec![p(&[2.0]), p(&[0.0, 1.0])], vec![p(&[1.0]), p(&[3.0])]],
            // R(t) diag(-1-t, -7/2) R(t)^{-1} with R = [[1,1],[t,1+t]]
            d: vec![
                vec![p(&[-1.0, 1.5, -1.0]), p(&[-2.5, 1.0])],
                vec![p(&[0.0, 2.5, 1.5, -1.0]), p(&[-3.5, -2.5, 1.0])],
            ],
            f: vec![
                Poly2::new(&[&[0.0, 0.0], &[1.0, 1.0], &[-1.0, -1.0]]),
                Poly2::new(&[&[0.0], &[2.0], &[-2.0]]),
            ],
            h: vec![p(&bubble), p(&[0.0, -1.0, 1.0])],
            t_end: T::one(),
            epsilons: eps,
        },
        _ => return None,
    };
    Some(spec)
}

/// Outcome of one standing-assumption check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub condition: String,
    pub description: String,
    pub pass: bool,
    /// Worst value of the checked quantity (sign convention per condition).
    pub margin: f64,
    /// Coordinate of the worst sample, when applicable.
    pub at: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub checks: Vec<ConditionCheck>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> Vec<&ConditionCheck> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }

    /// Converts the first failure into an error.
    pub fn into_result(self) -> Result<Self> {
        if let Some(f) = self.checks.iter().find(|c| !c.pass) {
            return Err(Error::Assumption {
                condition: f.condition.clone(),
                detail: format!("{} (margin {:e})", f.description, f.margin),
            });
        }
        Ok(self)
    }
}

/// Eigenvalue collision tolerance shared with the spectral module.
pub const DEGENERACY_TOL: f64 = 1e-8;

/// Checks the standing assumptions on `grid_density`+1 uniform samples of [0,1] and [0,T].
///
/// Condition 1 (smoothness) holds by construction for polynomial entries.
/// Condition 3 is checked in its strengthened form: besides Re β_j ≤ 0 and
/// β_i(0) ≠ β_j(t) for i ≠ j, the interior solves need β_i(0) ≠ 0.
pub fn validate_assumptions<T: Real>(spec: &ProblemSpec<T>, grid_density: usize) -> Result<AssumptionReport> {
    spec.check_structure()?;
    if grid_density < 16 {
        return Err(Error::spec("grid_density must be at least 16"));
    }
    let m = grid_density;
    let n = spec.n;
    let mut checks = Vec::new();
    checks.push(ConditionCheck {
        condition: "1".into(),
        description: "coefficients are smooth (polynomial entries)".into(),
        pass: true,
        margin: 0.0,
        at: None,
    });

    let mut min_re = f64::INFINITY;
    let mut min_re_at = 0.0;
    let mut min_gap = f64::INFINITY;
    let mut min_gap_at = 0.0;
    for k in 0..=m {
        let x = k as f64 / m as f64;
        let ev = eigenvalues(&spec.a_at(T::lit(x)))?;
        for (i, l) in ev.iter().enumerate() {
            let re = l.re.as_f64();
            if re < min_re {
                min_re = re;
                min_re_at = x;
            }
            for l2 in &ev[i + 1..] {
                let g = (*l - *l2).norm().as_f64();
                if g < min_gap {
                    min_gap = g;
                    min_gap_at = x;
                }
            }
        }
    }
    checks.push(ConditionCheck {
        condition: "2".into(),
        description: "Re λ_i(x) > 0 on [0,1]".into(),
        pass: min_re > 0.0,
        margin: min_re,
        at: Some(min_re_at),
    });
    if n > 1 {
        checks.push(ConditionCheck {
            condition: "2".into(),
            description: "eigenvalues λ_i(x) pairwise distinct on [0,1]".into(),
            pass: min_gap > DEGENERACY_TOL,
            margin: min_gap,
            at: Some(min_gap_at),
        });
    }

    let t_end = spec.t_end.as_f64();
    let beta0 = eigenvalues(&spec.d_at(T::zero()))?;
    let mut max_re = f64::NEG_INFINITY;
    let mut max_re_at = 0.0;
    let mut min_cross = f64::INFINITY;
    let mut min_cross_at = 0.0;
    for k in 0..=m {
        let t = t_end * k as f64 / m as f64;
        let ev = eigenvalues(&spec.d_at(T::lit(t)))?;
        for l in &ev {
            let re = l.re.as_f64();
            if re > max_re {
                max_re = re;
                max_re_at = t;
            }
        }
        // β_i(0) ≠ β_j(t), i ≠ j: skip the nearest value at t=0 (the own branch)
        if n > 1 {
            for l in &ev {
                let mut d: Vec<f64> = beta0.iter().map(|b| (*l - *b).norm().as_f64()).collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                if d[1] < min_cross {
                    min_cross = d[1];
                    min_cross_at = t;
                }
            }
        }
    }
    checks.push(ConditionCheck {
        condition: "3".into(),
        description: "Re β_j(t) ≤ 0 on [0,T]".into(),
        pass: max_re <= 0.0,
        margin: max_re,
        at: Some(max_re_at),
    });
    if n > 1 {
        checks.push(ConditionCheck {
            condition: "3".into(),
            description: "β_i(0) ≠ β_j(t) for i ≠ j on [0,T]".into(),
            pass: min_cross > DEGENERACY_TOL,
            margin: min_cross,
            at: Some(min_cross_at),
        });
    }
    let min_b0 = beta0.iter().map(|b| b.norm().as_f64()).fold(f64::INFINITY, f64::min);
    checks.push(ConditionCheck {
        condition: "3".into(),
        description: "β_i(0) ≠ 0 (bounded interior solutions need a nonsingular startup)".into(),
        pass: min_b0 > DEGENERACY_TOL,
        margin: min_b0,
        at: Some(0.0),
    });

    let h0: f64 = spec.h_at(T::zero()).iter().map(|z| z.norm().as_f64()).sum();
    let h1: f64 = spec.h_at(T::one()).iter().map(|z| z.norm().as_f64()).sum();
    checks.push(ConditionCheck {
        condition: "4".into(),
        description: "h(0) = h(1) = 0".into(),
        pass: h0 + h1 <= 1e-14,
        margin: h0 + h1,
        at: None,
    });
    Ok(AssumptionReport { checks })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(a: f64, d: f64) -> ProblemSpec<f64> {
        ProblemSpec {
            n: 1,
            a: vec![vec![Poly::constant(a)]],
            d: vec![vec![Poly::constant(d)]],
            f: vec![Poly2::zero()],
            h: vec![Poly::new(&[0.0, 1.0, -1.0])],
            t_end: 1.0,
            epsilons: vec![],
        }
    }

    #[test]
    fn scalar_problem_passes_all_conditions() {
        let r = validate_assumptions(&scalar(1.0, -1.0), 32).unwrap();
        assert!(r.all_pass());
    }

    #[test]
    fn negative_diffusion_fails_condition_two_with_margin() {
        let r = validate_assumptions(&scalar(-1.0, -1.0), 32).unwrap();
        let f = r.failures();
        assert_eq!(f.len(), 1);
        assert_eq!(f[0].condition, "2");
        assert!((f[0].margin + 1.0).abs() < 1e-14);
    }

    #[test]
    fn touching_eigenvalues_fail_distinctness() {
        let mut s = preset::<f64>("coupled-2x2").unwrap();
        s.a = vec![
            vec![Poly::new(&[2.0, 1.0]), Poly::zero()],
            vec![Poly::zero(), Poly::constant(3.0)],
        ];
        let r = validate_assumptions(&s, 32).unwrap();
        let f = r.failures();
        assert_eq!(f.len(), 1);
        assert!(f[0].description.contains("distinct"));
        assert!(f[0].margin.abs() < 1e-12);
        assert_eq!(f[0].at, Some(1.0));
    }

    #[test]
    fn nonzero_boundary_data_fails_condition_four() {
        let mut s = scalar(1.0, -1.0);
        s.h = vec![Poly::new(&[0.5, 1.0])];
        let r = validate_assumptions(&s, 16).unwrap();
        assert_eq!(r.failures()[0].condition, "4");
        assert!(r.into_result().is_err());
    }

    #[test]
    fn presets_satisfy_assumptions_and_round_trip() {
        for name in PRESET_NAMES {
            let s = preset::<f64>(name).unwrap();
            assert!(validate_assumptions(&s, 64).unwrap().all_pass(), "{name}");
            let back = ProblemSpec::<f64>::from_json(&s.to_json().unwrap()).unwrap();
            assert_eq!(back, s);
        }
        assert!(preset::<f64>("nope").is_none());
    }

    #[test]
    fn varying_preset_has_the_designed_eigenvalues() {
        let s = preset::<f64>("coupled-2x2-varying").unwrap();
        for &t in &[0.0, 0.3, 1.0] {
            let mut ev = eigenvalues(&s.d_at(t)).unwrap();
            ev.sort_by(|a, b| a.re.partial_cmp(&b.re).unwrap());
            let mut want = [-1.0 - t, -3.5];
            want.sort_by(|a, b| a.partial_cmp(b).unwrap());
            assert!((ev[0].re - want[0]).abs() < 1e-12 && (ev[1].re - want[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn parses_rational_epsilons() {
        let text = r#"{"n":1,"T":1.0,"A":[[[1.0]]],"D":[[[-1.0]]],"f":[[[0.0]]],
            "h":[[0.0,1.0,-1.0]],"epsilons":["1/16",0.03125,"2^-6"]}"#;
        let s = ProblemSpec::<f64>::from_json(text).unwrap();
        assert_eq!(s.epsilons, vec![0.0625, 0.03125, 0.015625]);
        assert!(parse_epsilon("3/2").is_err());
        assert!(ProblemSpec::<f64>::from_json(r#"{"n":2,"T":1,"A":[[[1]]],"D":[[[1]]],"f":[],"h":[]}"#).is_err());
    }
}
