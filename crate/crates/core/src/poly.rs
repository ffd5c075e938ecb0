//! Polynomial coefficient fields.

use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Polynomial in one variable, coefficients in ascending degree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "T: Real")]
pub struct Poly<T>(pub Vec<T>);

impl<T: Real> Poly<T> {
    pub fn new(coeffs: &[f64]) -> Self {
        Poly(coeffs.iter().map(|&c| T::lit(c)).collect())
    }

    pub fn constant(c: f64) -> Self {
        Self::new(&[c])
    }

    pub fn zero() -> Self {
        Poly(vec![])
    }

    pub fn eval(&self, x: T) -> T {
        self.0.iter().rev().fold(T::zero(), |acc, &c| acc * x + c)
    }

    pub fn derivative(&self) -> Self {
        Poly(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(k, &c)| c * T::lit(k as f64))
                .collect(),
        )
    }

    pub fn degree(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|c| *c == T::zero())
    }
}

/// Polynomial in (x, t): `coeffs[a][b]` multiplies x^a t^b.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
#[serde(bound = "T: Real")]
pub struct Poly2<T>(pub Vec<Vec<T>>);

impl<T: Real> Poly2<T> {
    pub fn new(coeffs: &[&[f64]]) -> Self {
        Poly2(
            coeffs
                .iter()
                .map(|row| row.iter().map(|&c| T::lit(c)).collect())
                .collect(),
        )
    }

    pub fn zero() -> Self {
        Poly2(vec![])
    }

    pub fn eval(&self, x: T, t: T) -> T {
        self.0.iter().rev().fold(T::zero(), |acc, row| {
            let inner = row.iter().rev().fold(T::zero(), |a, &c| a * t + c);
            acc * x + inner
        })
    }

    /// Partial derivative in t.
    pub fn dt(&self) -> Self {
        Poly2(self.0.iter().map(|row| Poly(row.clone()).derivative().0).collect())
    }

    /// Partial derivative in x.
    pub fn dx(&self) -> Self {
        Poly2(
            self.0
                .iter()
                .enumerate()
                .skip(1)
                .map(|(a, row)| row.iter().map(|&c| c * T::lit(a as f64)).collect())
                .collect(),
        )
    }

    pub fn max_degree(&self) -> usize {
        let xd = self.0.len().saturating_sub(1);
        let td = self.0.iter().map(|r| r.len().saturating_sub(1)).max().unwrap_or(0);
        xd.max(td)
    }

    pub fn scaled(&self, s: T) -> Self {
        Poly2(self.0.iter().map(|r| r.iter().map(|&c| c * s).collect()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn evaluates_in_both_variables() {
        // x(1-x)(1+t)
        let p = Poly2::<f64>::new(&[&[0.0, 0.0], &[1.0, 1.0], &[-1.0, -1.0]]);
        assert_eq!(p.eval(0.5, 1.0), 0.5);
        assert_eq!(p.dt().eval(0.5, 7.0), 0.25);
        assert_eq!(p.dx().eval(0.0, 1.0), 2.0);
        let q = Poly::<f64>::new(&[1.0, 2.0, 1.0]);
        assert_eq!(q.eval(1.0), 4.0);
        assert_eq!(q.derivative().eval(1.0), 4.0);
    }

    proptest! {
        #[test]
        fn horner_matches_power_sum(c in prop::collection::vec(-3.0f64..3.0, 1..6), x in -1.0f64..1.0) {
            let p = Poly::<f64>(c.clone());
            let direct: f64 = c.iter().enumerate().map(|(k, a)| a * x.powi(k as i32)).sum();
            prop_assert!((p.eval(x) - direct).abs() < 1e-12);
        }
    }
}
