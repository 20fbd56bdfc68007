//! Multivariate polynomials and the saturated polynomial drift used as the
//! smooth finite-dimensional approximant `b`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};

use super::Drift;

/// `coeff · Π_j x_j^{powers[j]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coeff: f64,
    pub powers: Vec<u32>,
}

impl Monomial {
    pub fn degree(&self) -> u32 {
        self.powers.iter().sum()
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.powers
            .iter()
            .zip(x)
            .filter(|(p, _)| **p > 0)
            .fold(self.coeff, |acc, (&p, &xi)| acc * xi.powi(p as i32))
    }

    /// Value of `∂_i` of the monomial.
    fn partial(&self, x: &[f64], i: usize) -> f64 {
        let pi = self.powers[i];
        if pi == 0 {
            return 0.0;
        }
        let mut v = self.coeff * pi as f64 * x[i].powi(pi as i32 - 1);
        for (j, (&p, &xj)) in self.powers.iter().zip(x).enumerate() {
            if j != i && p > 0 {
                v *= xj.powi(p as i32);
            }
        }
        v
    }

    /// Value of `∂_i ∂_j` of the monomial.
    pub(crate) fn second_partial(&self, x: &[f64], i: usize, j: usize) -> f64 {
        let mut powers = self.powers.clone();
        let mut c = self.coeff;
        for k in [i, j] {
            if powers[k] == 0 {
                return 0.0;
            }
            c *= powers[k] as f64;
            powers[k] -= 1;
        }
        Monomial { coeff: c, powers }.eval(x)
    }
}

/// Sparse multivariate polynomial on `ℝ^dim`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    dim: usize,
    terms: Vec<Monomial>,
}

impl Polynomial {
    pub fn new(dim: usize, terms: Vec<Monomial>) -> Result<Self> {
        for t in &terms {
            if t.powers.len() != dim {
                return Err(FpkError::DimensionMismatch {
                    expected: dim,
                    actual: t.powers.len(),
                });
            }
            if !t.coeff.is_finite() {
                return Err(invalid("polynomial coefficients must be finite"));
            }
        }
        let mut p = Self { dim, terms };
        p.simplify();
        Ok(p)
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
        }
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        Self {
            dim,
            terms: vec![Monomial {
                coeff: c,
                powers: vec![0; dim],
            }],
        }
    }

    /// `c · x_i^p`.
    pub fn power(dim: usize, i: usize, p: u32, c: f64) -> Self {
        let mut powers = vec![0; dim];
        powers[i] = p;
        Self {
            dim,
            terms: vec![Monomial { coeff: c, powers }],
        }
    }

    /// `Σ_i c_i x_i`.
    pub fn linear(coeffs: &[f64]) -> Self {
        let dim = coeffs.len();
        let terms = coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0.0)
            .map(|(i, &c)| {
                let mut powers = vec![0; dim];
                powers[i] = 1;
                Monomial { coeff: c, powers }
            })
            .collect();
        Self { dim, terms }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Monomial] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Monomial::degree).max().unwrap_or(0)
    }

    /// Indices of coordinates that appear with a positive power.
    pub fn used_coords(&self) -> Vec<usize> {
        (0..self.dim)
            .filter(|&i| self.terms.iter().any(|t| t.powers[i] > 0))
            .collect()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms.iter().map(|t| t.eval(x)).sum()
    }

    pub fn partial(&self, x: &[f64], i: usize) -> f64 {
        self.terms.iter().map(|t| t.partial(x, i)).sum()
    }

    pub fn second_partial(&self, x: &[f64], i: usize, j: usize) -> f64 {
        self.terms.iter().map(|t| t.second_partial(x, i, j)).sum()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| self.partial(x, i)).collect()
    }

    /// Row-major `dim × dim` Hessian.
    pub fn hessian(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut h = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = self.terms.iter().map(|t| t.second_partial(x, i, j)).sum();
                h[i * n + j] = v;
                h[j * n + i] = v;
            }
        }
        h
    }

    pub fn scaled(&self, s: f64) -> Self {
        let terms = self
            .terms
            .iter()
            .map(|t| Monomial {
                coeff: t.coeff * s,
                powers: t.powers.clone(),
            })
            .collect();
        let mut p = Self {
            dim: self.dim,
            terms,
        };
        p.simplify();
        p
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dim != other.dim {
            return Err(FpkError::DimensionMismatch {
                expected: self.dim,
                actual: other.dim,
            });
        }
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        let mut p = Self {
            dim: self.dim,
            terms,
        };
        p.simplify();
        Ok(p)
    }

    /// Same polynomial viewed on `ℝ^dim` with `dim ≥ self.dim()`.
    pub fn embed(&self, dim: usize) -> Result<Self> {
        if dim < self.dim {
            return Err(invalid("cannot embed a polynomial into fewer variables"));
        }
        let terms = self
            .terms
            .iter()
            .map(|t| {
                let mut powers = t.powers.clone();
                powers.resize(dim, 0);
                Monomial {
                    coeff: t.coeff,
                    powers,
                }
            })
            .collect();
        Ok(Self { dim, terms })
    }

    fn simplify(&mut self) {
        self.terms.sort_by(|a, b| a.powers.cmp(&b.powers));
        let mut merged: Vec<Monomial> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.powers == t.powers => last.coeff += t.coeff,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.coeff != 0.0);
        self.terms = merged;
    }
}

/// All exponent vectors in `dim` variables with total degree `p`.
pub(crate) fn exponents_of_degree(dim: usize, p: u32) -> Vec<Vec<u32>> {
    fn rec(dim: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if cur.len() == dim - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in (0..=left).rev() {
            cur.push(k);
            rec(dim, left - k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if dim == 0 {
        return out;
    }
    rec(dim, p, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// `p! / Π α_j!`.
pub(crate) fn multinomial(powers: &[u32]) -> f64 {
    let total: u32 = powers.iter().sum();
    let mut c = factorial(total);
    for &p in powers {
        c /= factorial(p);
    }
    c
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Default saturation radius for the approximant drift.
pub const DEFAULT_SATURATION_RADIUS: f64 = 1e3;

/// Odd smooth saturation: identity on `|s| ≤ R − 1`, constant `±R` for
/// `|s| ≥ R + 1`, `0 ≤ ψ' ≤ 1`, `C²` in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Saturation {
    pub radius: f64,
}

impl Saturation {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 1.0) {
            return Err(invalid("saturation radius must be finite and > 1"));
        }
        Ok(Self { radius })
    }

    pub fn value(&self, s: f64) -> f64 {
        let a = s.abs();
        let r = self.radius;
        let v = if a <= r - 1.0 {
            a
        } else if a >= r + 1.0 {
            r
        } else {
            let y = a - (r - 1.0);
            let x = y / 2.0;
            (r - 1.0) + y - 2.0 * (x.powi(6) - 3.0 * x.powi(5) + 2.5 * x.powi(4))
        };
        v.copysign(s)
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let a = s.abs();
        let r = self.radius;
        if a <= r - 1.0 {
            1.0
        } else if a >= r + 1.0 {
            0.0
        } else {
            let x = (a - (r - 1.0)) / 2.0;
            1.0 - x.powi(3) * (10.0 - 15.0 * x + 6.0 * x * x)
        }
    }
}

/// Time-independent polynomial drift `b(x) = p(ψ_R(x))`, each coordinate
/// saturated so that `b` is bounded with bounded derivatives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolyDrift {
    components: Vec<Polynomial>,
    #[serde(default = "default_saturation")]
    saturation: Option<Saturation>,
}

fn default_saturation() -> Option<Saturation> {
    Some(Saturation {
        radius: DEFAULT_SATURATION_RADIUS,
    })
}

impl PolyDrift {
    pub fn new(components: Vec<Polynomial>) -> Result<Self> {
        let dim = components.len();
        if dim == 0 {
            return Err(invalid("polynomial drift needs at least one component"));
        }
        if let Some(p) = components.iter().find(|p| p.dim() != dim) {
            return Err(FpkError::DimensionMismatch {
                expected: dim,
                actual: p.dim(),
            });
        }
        Ok(Self {
            components,
            saturation: default_saturation(),
        })
    }

    /// `b(x) = −diag(rates)·x`.
    pub fn linear_decay(rates: &[f64]) -> Self {
        let n = rates.len();
        let components = rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Polynomial::power(n, i, 1, -r))
            .collect();
        Self {
            components,
            saturation: default_saturation(),
        }
    }

    pub fn with_saturation(mut self, saturation: Option<Saturation>) -> Self {
        self.saturation = saturation;
        self
    }

    pub fn saturation(&self) -> Option<Saturation> {
        self.saturation
    }

    pub fn components(&self) -> &[Polynomial] {
        &self.components
    }

    pub fn degree(&self) -> u32 {
        self.components
            .iter()
            .map(Polynomial::degree)
            .max()
            .unwrap_or(0)
    }

    /// `(1 − s)·self + s·other`.
    pub fn blend(&self, other: &Self, s: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(FpkError::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let components = self
            .components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.scaled(1.0 - s).add(&b.scaled(s)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            components,
            saturation: self.saturation,
        })
    }

    /// Replaces component `k` (0-based) by zero.
    pub fn drop_component(&self, k: usize) -> Result<Self> {
        if k >= self.dim() {
            return Err(invalid(format!("component {k} out of range")));
        }
        let mut out = self.clone();
        out.components[k] = Polynomial::zero(self.dim());
        Ok(out)
    }

    fn saturate(&self, x: &[f64]) -> Vec<f64> {
        match self.saturation {
            Some(s) => x.iter().map(|&v| s.value(v)).collect(),
            None => x.to_vec(),
        }
    }

    /// Whether every component is affine in `x` (analytic Jacobian is constant
    /// inside the saturation radius).
    pub fn is_affine(&self) -> bool {
        self.degree() <= 1
    }
}

impl Drift for PolyDrift {
    fn dim(&self) -> usize {
        self.components.len()
    }

    fn scratch_len(&self) -> usize {
        self.components.len()
    }

    fn is_autonomous(&self) -> bool {
        true
    }

    fn eval(&self, x: &[f64], _t: f64, out: &mut [f64], scratch: &mut [f64]) {
        let y = &mut scratch[..x.len()];
        match self.saturation {
            Some(s) => y.iter_mut().zip(x).for_each(|(y, &v)| *y = s.value(v)),
            None => y.copy_from_slice(x),
        }
        for (o, p) in out.iter_mut().zip(&self.components) {
            *o = p.eval(y);
        }
    }

    fn jacobian(&self, x: &[f64], _t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let y = self.saturate(x);
        let dpsi: Vec<f64> = match self.saturation {
            Some(s) => x.iter().map(|&v| s.derivative(v)).collect(),
            None => vec![1.0; n],
        };
        DMatrix::from_fn(n, n, |i, j| self.components[i].partial(&y, j) * dpsi[j])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_poly() -> Polynomial {
        // 3 x0² x1 − 2 x1 + 0.5
        Polynomial::new(
            2,
            vec![
                Monomial {
                    coeff: 3.0,
                    powers: vec![2, 1],
                },
                Monomial {
                    coeff: -2.0,
                    powers: vec![0, 1],
                },
                Monomial {
                    coeff: 0.5,
                    powers: vec![0, 0],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn polynomial_derivatives_match_finite_differences() {
        let p = sample_poly();
        let x = [0.7, -1.3];
        let g = p.gradient(&x);
        let h = p.hessian(&x);
        let step = 1e-5;
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += step;
            xm[i] -= step;
            let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * step);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-8);
            let gp = p.gradient(&xp);
            let gm = p.gradient(&xm);
            for j in 0..2 {
                assert_abs_diff_eq!(h[j * 2 + i], (gp[j] - gm[j]) / (2.0 * step), epsilon = 1e-7);
            }
        }
        assert_eq!(p.degree(), 3);
        assert_eq!(p.used_coords(), vec![0, 1]);
    }

    #[test]
    fn simplify_merges_like_terms() {
        let p = sample_poly();
        let q = p.add(&p.scaled(-1.0)).unwrap();
        assert!(q.terms().is_empty());
        assert_eq!(q.eval(&[1.0, 2.0]), 0.0);
    }

    #[test]
    fn exponent_enumeration_counts() {
        assert_eq!(exponents_of_degree(2, 3).len(), 4);
        assert_eq!(exponents_of_degree(8, 2).len(), 36);
        assert!(exponents_of_degree(3, 2)
            .iter()
            .all(|e| e.iter().sum::<u32>() == 2));
        assert_eq!(multinomial(&[1, 1]), 2.0);
        assert_eq!(multinomial(&[2, 1, 0]), 3.0);
    }

    #[test]
    fn saturation_shape() {
        let s = Saturation::new(10.0).unwrap();
        assert_eq!(s.value(3.0), 3.0);
        assert_eq!(s.value(-9.0), -9.0);
        assert_abs_diff_eq!(s.value(11.0), 10.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.value(-50.0), -10.0, epsilon = 1e-12);
        let mut prev = s.value(8.9);
        for i in 0..=300 {
            let v = 8.9 + i as f64 * 0.01;
            let d = s.derivative(v);
            assert!((0.0..=1.0).contains(&d));
            let fd = (s.value(v + 1e-6) - s.value(v - 1e-6)) / 2e-6;
            assert_abs_diff_eq!(d, fd, epsilon = 1e-6);
            assert!(s.value(v) >= prev - 1e-15);
            prev = s.value(v);
        }
        assert!(Saturation::new(0.5).is_err());
    }

    #[test]
    fn poly_drift_jacobian_matches_finite_differences() {
        let p = sample_poly();
        let b = PolyDrift::new(vec![p.clone(), p.scaled(2.0)])
            .unwrap()
            .with_saturation(Some(Saturation::new(2.0).unwrap()));
        for x in [[0.3, 0.4], [1.5, -0.2], [2.5, 0.7], [-4.0, 3.0]] {
            let j = b.jacobian(&x, 0.0);
            for c in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[c] += 1e-6;
                xm[c] -= 1e-6;
                let fp = b.eval_vec(&xp, 0.0);
                let fm = b.eval_vec(&xm, 0.0);
                for r in 0..2 {
                    assert_abs_diff_eq!(j[(r, c)], (fp[r] - fm[r]) / 2e-6, epsilon = 1e-5);
                }
            }
        }
    }

    #[test]
    fn blend_and_drop() {
        let a = PolyDrift::linear_decay(&[1.0, 2.0]);
        let b = PolyDrift::linear_decay(&[3.0, 4.0]);
        let m = a.blend(&b, 0.5).unwrap();
        let v = m.eval_vec(&[1.0, 1.0], 0.0);
        assert_abs_diff_eq!(v[0], -2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(v[1], -3.0, epsilon = 1e-14);
        let d = a.drop_component(1).unwrap();
        assert_eq!(d.eval_vec(&[1.0, 1.0], 0.0), vec![-1.0, 0.0]);
        assert!(a.is_affine());
    }
}
