//! Coordinate drift families `B^i(u, t)` of the Galerkin-truncated SPDE
//! examples, their analytic Jacobians, and the polynomial approximant `b`.

mod diffusion;
mod poly;

pub use diffusion::{diffusion_matrix, DiffusionMatrix, DiffusionModel, DEGENERACY_TOL};
pub(crate) use diffusion::from_matrix;
pub use poly::{Monomial, PolyDrift, Polynomial, Saturation, DEFAULT_SATURATION_RADIUS};

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};
use crate::spectral::{QuadratureRule, SpectralField, SpectralTransform};

/// A time-dependent vector field on `ℝ^N`.
pub trait Drift: Send + Sync {
    fn dim(&self) -> usize;

    /// Length of the caller-provided scratch buffer for [`Drift::eval`].
    fn scratch_len(&self) -> usize {
        0
    }

    /// Whether `B` does not depend on `t`.
    fn is_autonomous(&self) -> bool {
        false
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]);

    /// `∂_{x_j} B^i` as an `N×N` matrix (row `i`, column `j`).
    fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64>;

    fn eval_vec(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        let mut scratch = vec![0.0; self.scratch_len()];
        self.eval(x, t, &mut out, &mut scratch);
        out
    }
}

impl<D: Drift + ?Sized> Drift for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn scratch_len(&self) -> usize {
        (**self).scratch_len()
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        (**self).eval(x, t, out, scratch)
    }
    fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        (**self).jacobian(x, t)
    }
}

impl<D: Drift + ?Sized> Drift for Arc<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn scratch_len(&self) -> usize {
        (**self).scratch_len()
    }
    fn is_autonomous(&self) -> bool {
        (**self).is_autonomous()
    }
    fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        (**self).eval(x, t, out, scratch)
    }
    fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        (**self).jacobian(x, t)
    }
}

/// Coefficient `c(t)` that is constant between breakpoints:
/// `values[i]` on `[breakpoints[i-1], breakpoints[i])`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiecewiseConstant {
    #[serde(default)]
    pub breakpoints: Vec<f64>,
    pub values: Vec<f64>,
}

impl PiecewiseConstant {
    pub fn constant(c: f64) -> Self {
        Self {
            breakpoints: Vec::new(),
            values: vec![c],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.breakpoints.len() + 1 {
            return Err(invalid(
                "piecewise coefficient needs one more value than breakpoints",
            ));
        }
        if self.breakpoints.windows(2).any(|w| w[0] >= w[1]) {
            return Err(invalid("breakpoints must be strictly increasing"));
        }
        if self.values.iter().chain(&self.breakpoints).any(|v| !v.is_finite()) {
            return Err(invalid("piecewise coefficient must be finite"));
        }
        Ok(())
    }

    pub fn value(&self, t: f64) -> f64 {
        let i = self.breakpoints.partition_point(|&b| b <= t);
        self.values[i]
    }
}

/// One term `c(t)·u^power` of a polynomial reaction nonlinearity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionTerm {
    pub power: u32,
    #[serde(flatten)]
    pub coefficient: PiecewiseConstant,
}

/// Declarative descriptor of a drift family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum DriftModel {
    /// `B^k = −r_k x_k`; `rates` default to the Laplacian eigenvalues `(kπ)²`.
    Ou {
        #[serde(default)]
        rates: Option<Vec<f64>>,
    },
    /// Viscous Burgers: `B^i = −λ_i² u_i − ⟨u², De_i⟩`.
    Burgers,
    /// `B^i = −λ_i² u_i + ⟨Σ_j c_j(t) u^j, e_i⟩`.
    Reaction { terms: Vec<ReactionTerm> },
    /// `B^i = −λ_i² u_i − ⟨u^m, De_i⟩ − ⟨u^{2l+1}, e_i⟩`.
    Mixed { m: u32, l: u32 },
    /// An explicit polynomial vector field.
    CustomPolynomial { drift: PolyDrift },
}

impl DriftModel {
    pub fn ou_laplacian() -> Self {
        DriftModel::Ou { rates: None }
    }

    pub fn name(&self) -> &'static str {
        match self {
            DriftModel::Ou { .. } => "ou",
            DriftModel::Burgers => "burgers",
            DriftModel::Reaction { .. } => "reaction",
            DriftModel::Mixed { .. } => "mixed",
            DriftModel::CustomPolynomial { .. } => "custom-polynomial",
        }
    }

    /// Highest pointwise power appearing in the nonlinearity.
    pub fn nonlinear_degree(&self) -> usize {
        match self {
            DriftModel::Ou { .. } => 1,
            DriftModel::Burgers => 2,
            DriftModel::Reaction { terms } => {
                terms.iter().map(|t| t.power as usize).max().unwrap_or(1).max(1)
            }
            DriftModel::Mixed { m, l } => (*m as usize).max(2 * *l as usize + 1),
            DriftModel::CustomPolynomial { drift } => drift.degree() as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DriftModel::Ou { rates: Some(r) } => {
                if r.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("ou rates must be finite"));
                }
            }
            DriftModel::Reaction { terms } => {
                for t in terms {
                    t.coefficient.validate()?;
                }
            }
            DriftModel::Mixed { m, l } => {
                if *m < 2 || *l < 1 || *m > *l + 2 {
                    return Err(invalid(format!(
                        "mixed family needs m >= 2, l >= 1, m <= l + 2 (got m = {m}, l = {l})"
                    )));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Galerkin drift on the first `n` modes with the default dealiased rule.
    pub fn discretize(&self, n: usize) -> Result<Box<dyn Drift>> {
        self.validate()?;
        match self {
            DriftModel::CustomPolynomial { drift } => {
                if drift.dim() != n {
                    return Err(FpkError::DimensionMismatch {
                        expected: drift.dim(),
                        actual: n,
                    });
                }
                Ok(Box::new(drift.clone()))
            }
            _ => Ok(Box::new(GalerkinDrift::new(self.clone(), n)?)),
        }
    }

    /// Exact polynomial form of the Galerkin drift on `n` modes, as a
    /// saturated [`PolyDrift`]. Reaction coefficients are frozen at `t`.
    pub fn galerkin_polynomial(&self, n: usize, t: f64) -> Result<PolyDrift> {
        self.validate()?;
        if let DriftModel::CustomPolynomial { drift } = self {
            return Ok(drift.clone());
        }
        let g = GalerkinDrift::new(self.clone(), n)?;
        let mut components: Vec<Polynomial> = g
            .rates
            .iter()
            .enumerate()
            .map(|(i, &r)| Polynomial::power(n, i, 1, -r))
            .collect();
        let Some(tr) = &g.transform else {
            return PolyDrift::new(components);
        };
        // Σ_α multinomial(α) ∫ Π e_j^{α_j} Φ_i, Φ_i ∈ {e_i, e_i'}.
        let add_power = |components: &mut Vec<Polynomial>, p: u32, c: f64, derivative: bool| {
            if c == 0.0 {
                return;
            }
            let mut terms: Vec<Vec<Monomial>> = vec![Vec::new(); n];
            for alpha in poly::exponents_of_degree(n, p) {
                let mult = poly::multinomial(&alpha);
                let prod: Vec<f64> = (0..tr.nodes_len())
                    .map(|m| {
                        alpha
                            .iter()
                            .enumerate()
                            .filter(|(_, a)| **a > 0)
                            .map(|(j, &a)| tr.basis_at(m, j).powi(a as i32))
                            .product()
                    })
                    .collect();
                for (i, term) in terms.iter_mut().enumerate() {
                    let row = if derivative {
                        tr.dproj_row(i)
                    } else {
                        tr.proj_row(i)
                    };
                    let v: f64 = row.iter().zip(&prod).map(|(a, b)| a * b).sum();
                    if v.abs() > 1e-14 {
                        term.push(Monomial {
                            coeff: c * mult * v,
                            powers: alpha.clone(),
                        });
                    }
                }
            }
            for (comp, t) in components.iter_mut().zip(terms) {
                *comp = comp
                    .add(&Polynomial::new(n, t).expect("dimensions match"))
                    .expect("dimensions match");
            }
        };
        match self {
            DriftModel::Burgers => add_power(&mut components, 2, -1.0, true),
            DriftModel::Reaction { terms } => {
                for term in terms {
                    add_power(&mut components, term.power, term.coefficient.value(t), false);
                }
            }
            DriftModel::Mixed { m, l } => {
                add_power(&mut components, *m, -1.0, true);
                add_power(&mut components, 2 * l + 1, -1.0, false);
            }
            _ => {}
        }
        PolyDrift::new(components)
    }
}

/// Pseudospectral evaluator of a built-in family on `N` modes.
#[derive(Clone, Debug)]
pub struct GalerkinDrift {
    model: DriftModel,
    rates: Vec<f64>,
    transform: Option<SpectralTransform>,
}

impl GalerkinDrift {
    pub fn new(model: DriftModel, n: usize) -> Result<Self> {
        let q = model.nonlinear_degree();
        let transform = match model {
            DriftModel::Ou { .. } => None,
            _ => Some(SpectralTransform::new(n, q)?),
        };
        Self::build(model, n, transform)
    }

    /// Uses the given quadrature rule; fails with `GridTooCoarse` if it cannot
    /// integrate the nonlinearity exactly.
    pub fn with_rule(model: DriftModel, n: usize, rule: Arc<QuadratureRule>) -> Result<Self> {
        let q = model.nonlinear_degree();
        let transform = match model {
            DriftModel::Ou { .. } => None,
            _ => Some(SpectralTransform::with_rule(
                crate::spectral::BasisSpec::dirichlet_sine(n)?,
                rule,
                q,
            )?),
        };
        Self::build(model, n, transform)
    }

    fn build(model: DriftModel, n: usize, transform: Option<SpectralTransform>) -> Result<Self> {
        model.validate()?;
        if n == 0 {
            return Err(invalid("number of modes must be positive"));
        }
        let rates = match &model {
            DriftModel::Ou { rates: Some(r) } => {
                if r.len() < n {
                    return Err(FpkError::SizeExceeded {
                        requested: n,
                        max: r.len(),
                    });
                }
                r[..n].to_vec()
            }
            DriftModel::CustomPolynomial { .. } => {
                return Err(FpkError::UnsupportedFamily(
                    "custom-polynomial has no Galerkin evaluator".into(),
                ))
            }
            _ => crate::spectral::BasisSpec::dirichlet_sine(n)?.eigenvalues(),
        };
        Ok(Self {
            model,
            rates,
            transform,
        })
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    /// Linear decay rates `r_k` (so that `B^k = −r_k x_k + F^k`).
    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    /// Nonlinear part `F(x)` only.
    pub fn nonlinear(&self, x: &[f64], t: f64) -> Vec<f64> {
        let mut out = self.eval_vec(x, t);
        for ((o, r), xi) in out.iter_mut().zip(&self.rates).zip(x) {
            *o += r * xi;
        }
        out
    }

    fn reaction_value(terms: &[ReactionTerm], u: f64, t: f64) -> f64 {
        terms
            .iter()
            .map(|term| term.coefficient.value(t) * u.powi(term.power as i32))
            .sum()
    }

    fn reaction_slope(terms: &[ReactionTerm], u: f64, t: f64) -> f64 {
        terms
            .iter()
            .filter(|term| term.power > 0)
            .map(|term| {
                term.coefficient.value(t) * term.power as f64 * u.powi(term.power as i32 - 1)
            })
            .sum()
    }
}

impl Drift for GalerkinDrift {
    fn dim(&self) -> usize {
        self.rates.len()
    }

    fn is_autonomous(&self) -> bool {
        match &self.model {
            DriftModel::Reaction { terms } => {
                terms.iter().all(|t| t.coefficient.breakpoints.is_empty())
            }
            _ => true,
        }
    }

    fn scratch_len(&self) -> usize {
        self.transform
            .as_ref()
            .map_or(0, |tr| 3 * tr.nodes_len() + tr.size())
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        for ((o, r), xi) in out.iter_mut().zip(&self.rates).zip(x) {
            *o = -r * xi;
        }
        let Some(tr) = &self.transform else {
            return;
        };
        let m = tr.nodes_len();
        let n = tr.size();
        let (u, rest) = scratch.split_at_mut(m);
        let (g1, rest) = rest.split_at_mut(m);
        let (g2, rest) = rest.split_at_mut(m);
        let acc = &mut rest[..n];
        tr.synthesize_into(x, u);
        match &self.model {
            DriftModel::Burgers => {
                for (g, v) in g1.iter_mut().zip(u.iter()) {
                    *g = v * v;
                }
                tr.project_derivative_into(g1, acc);
                for (o, a) in out.iter_mut().zip(acc.iter()) {
                    *o -= a;
                }
            }
            DriftModel::Reaction { terms } => {
                for (g, v) in g1.iter_mut().zip(u.iter()) {
                    *g = Self::reaction_value(terms, *v, t);
                }
                tr.project_into(g1, acc);
                for (o, a) in out.iter_mut().zip(acc.iter()) {
                    *o += a;
                }
            }
            DriftModel::Mixed { m: pm, l } => {
                let odd = 2 * *l as i32 + 1;
                for ((a, b), v) in g1.iter_mut().zip(g2.iter_mut()).zip(u.iter()) {
                    *a = v.powi(*pm as i32);
                    *b = v.powi(odd);
                }
                tr.project_derivative_into(g1, acc);
                for (o, a) in out.iter_mut().zip(acc.iter()) {
                    *o -= a;
                }
                tr.project_into(g2, acc);
                for (o, a) in out.iter_mut().zip(acc.iter()) {
                    *o -= a;
                }
            }
            _ => {}
        }
    }

    fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let n = self.dim();
        let mut jac = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(
            n,
            self.rates.iter().map(|r| -r),
        ));
        let Some(tr) = &self.transform else {
            return jac;
        };
        let m = tr.nodes_len();
        let mut u = vec![0.0; m];
        tr.synthesize_into(x, &mut u);
        // Pointwise derivative weights h(u_m) against Φ_i = e_i (value) or e_i'.
        let (hv, hd): (Vec<f64>, Vec<f64>) = match &self.model {
            DriftModel::Burgers => (vec![0.0; m], u.iter().map(|v| -2.0 * v).collect()),
            DriftModel::Reaction { terms } => (
                u.iter().map(|&v| Self::reaction_slope(terms, v, t)).collect(),
                vec![0.0; m],
            ),
            DriftModel::Mixed { m: pm, l } => {
                let odd = 2 * *l as i32 + 1;
                (
                    u.iter().map(|v| -(odd as f64) * v.powi(odd - 1)).collect(),
                    u.iter()
                        .map(|v| -(*pm as f64) * v.powi(*pm as i32 - 1))
                        .collect(),
                )
            }
            _ => return jac,
        };
        for i in 0..n {
            let pr = tr.proj_row(i);
            let dr = tr.dproj_row(i);
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..m {
                    s += (pr[k] * hv[k] + dr[k] * hd[k]) * tr.basis_at(k, j);
                }
                jac[(i, j)] += s;
            }
        }
        jac
    }
}

/// Drift on `ℝ^dim` equal to `inner` on the first `inner.dim()` coordinates
/// (evaluated at the projection) and to `−tail_rates[k]·x_k` on the rest.
pub struct EmbeddedDrift<D> {
    inner: D,
    tail_rates: Vec<f64>,
}

impl<D: Drift> EmbeddedDrift<D> {
    pub fn new(inner: D, tail_rates: Vec<f64>) -> Self {
        Self { inner, tail_rates }
    }
}

impl<D: Drift> Drift for EmbeddedDrift<D> {
    fn dim(&self) -> usize {
        self.inner.dim() + self.tail_rates.len()
    }

    fn scratch_len(&self) -> usize {
        self.inner.scratch_len()
    }

    fn is_autonomous(&self) -> bool {
        self.inner.is_autonomous()
    }

    fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
        let m = self.inner.dim();
        self.inner.eval(&x[..m], t, &mut out[..m], scratch);
        for ((o, r), xi) in out[m..].iter_mut().zip(&self.tail_rates).zip(&x[m..]) {
            *o = -r * xi;
        }
    }

    fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
        let m = self.inner.dim();
        let n = self.dim();
        let mut jac = DMatrix::zeros(n, n);
        jac.view_mut((0, 0), (m, m))
            .copy_from(&self.inner.jacobian(&x[..m], t));
        for (k, r) in self.tail_rates.iter().enumerate() {
            jac[(m + k, m + k)] = -r;
        }
        jac
    }
}

/// Galerkin drift coordinates `B_N(u, t)` with `N = u.len()`.
pub fn drift_coords(model: &DriftModel, u: &SpectralField, t: f64) -> Result<Vec<f64>> {
    check_finite(u)?;
    Ok(model.discretize(u.len())?.eval_vec(u.coeffs(), t))
}

/// As [`drift_coords`] but on a caller-chosen quadrature rule.
pub fn drift_coords_with_rule(
    model: &DriftModel,
    u: &SpectralField,
    t: f64,
    rule: Arc<QuadratureRule>,
) -> Result<Vec<f64>> {
    check_finite(u)?;
    Ok(GalerkinDrift::with_rule(model.clone(), u.len(), rule)?.eval_vec(u.coeffs(), t))
}

/// `Σ_k B^k(u) u_k`.
pub fn energy_pairing(model: &DriftModel, u: &SpectralField) -> Result<f64> {
    let b = drift_coords(model, u, 0.0)?;
    Ok(b.iter().zip(u.coeffs()).map(|(a, b)| a * b).sum())
}

pub fn drift_jacobian(model: &DriftModel, u: &SpectralField, t: f64) -> Result<DMatrix<f64>> {
    check_finite(u)?;
    Ok(model.discretize(u.len())?.jacobian(u.coeffs(), t))
}

fn check_finite(u: &SpectralField) -> Result<()> {
    if u.coeffs().iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(invalid("field coefficients must be finite"))
    }
}
