//! Dirichlet sine eigenbasis on (0, 1), quadrature, spectral/grid transforms
//! and the norms used throughout the crate.
//!
//! The basis is fixed as `e_k(z) = √2 sin(kπz)`, `k = 1..N`, with
//! `-e_k'' = λ_k² e_k` and `λ_k = kπ`. All transforms are dense
//! matrix-vector products against composite Gauss–Legendre nodes.

use std::f64::consts::{PI, SQRT_2};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};

/// Nodes per Gauss–Legendre panel used by [`QuadratureRule::for_basis`].
pub const PANEL_ORDER: usize = 16;

/// Minimum number of quadrature nodes needed to integrate a degree-`q`
/// nonlinearity of an `n`-mode field: `⌈(q+1)/2⌉·n`.
pub fn dealias_nodes(n: usize, q: usize) -> usize {
    (q + 2) / 2 * n
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisKind {
    DirichletSine,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    kind: BasisKind,
    size: usize,
}

impl BasisSpec {
    pub fn dirichlet_sine(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(invalid("basis size must be positive"));
        }
        Ok(Self {
            kind: BasisKind::DirichletSine,
            size,
        })
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// `λ_k = kπ` for the 1-based mode index `k`.
    pub fn eigenvalue_sqrt(&self, k: usize) -> f64 {
        k as f64 * PI
    }

    /// `λ_k²` for `k = 1..N`.
    pub fn eigenvalues(&self) -> Vec<f64> {
        (1..=self.size)
            .map(|k| self.eigenvalue_sqrt(k).powi(2))
            .collect()
    }

    pub fn eval(&self, k: usize, z: f64) -> f64 {
        SQRT_2 * (self.eigenvalue_sqrt(k) * z).sin()
    }

    pub fn eval_derivative(&self, k: usize, z: f64) -> f64 {
        let lam = self.eigenvalue_sqrt(k);
        SQRT_2 * lam * (lam * z).cos()
    }
}

/// Nodes and positive weights on (0, 1).
#[derive(Clone, Debug, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    degree: usize,
}

impl QuadratureRule {
    /// Single Gauss–Legendre panel of `order` nodes mapped to (0, 1).
    pub fn gauss_legendre(order: usize) -> Result<Self> {
        Self::composite_gauss_legendre(1, order)
    }

    /// `panels` equal sub-intervals of (0, 1), each with an `order`-point
    /// Gauss–Legendre rule. Exact for polynomials of degree `2·order − 1`.
    pub fn composite_gauss_legendre(panels: usize, order: usize) -> Result<Self> {
        if panels == 0 || order == 0 {
            return Err(invalid("quadrature needs at least one panel and one node"));
        }
        let (x, w) = legendre_nodes(order);
        let h = 1.0 / panels as f64;
        let mut nodes = Vec::with_capacity(panels * order);
        let mut weights = Vec::with_capacity(panels * order);
        for p in 0..panels {
            let a = p as f64 * h;
            for (xi, wi) in x.iter().zip(&w) {
                nodes.push(a + 0.5 * h * (xi + 1.0));
                weights.push(0.5 * h * wi);
            }
        }
        Ok(Self {
            nodes,
            weights,
            degree: 2 * order - 1,
        })
    }

    /// Rule resolving products of degree `q + 1` in the first `n` sine modes:
    /// one panel per ~1.5 periods of the highest frequency, which keeps the
    /// quadrature error at round-off level.
    pub fn for_basis(n: usize, q: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("basis size must be positive"));
        }
        let q = q.max(1);
        let panels = ((q + 1) * n).div_ceil(3).max(1);
        let rule = Self::composite_gauss_legendre(panels, PANEL_ORDER)?;
        debug_assert!(rule.len() >= dealias_nodes(n, q));
        Ok(rule)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Polynomial degree integrated exactly.
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn resolves(&self, n: usize, q: usize) -> bool {
        self.len() >= dealias_nodes(n, q)
    }

    pub fn check_resolves(&self, n: usize, q: usize) -> Result<()> {
        let required = dealias_nodes(n, q);
        if self.len() < required {
            return Err(FpkError::GridTooCoarse {
                required,
                actual: self.len(),
            });
        }
        Ok(())
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Gauss–Legendre nodes/weights on [-1, 1] by Newton iteration on `P_n`.
fn legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        dp = if d != 0.0 { d } else { dp };
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre_with_derivative(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * z * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, d)
}

/// Coefficients `u_k = ⟨u, e_k⟩₂` of a state in the sine basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralField {
    basis: BasisSpec,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(basis: BasisSpec, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != basis.size() {
            return Err(FpkError::DimensionMismatch {
                expected: basis.size(),
                actual: coeffs.len(),
            });
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(invalid("spectral coefficients must be finite"));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn from_coeffs(coeffs: Vec<f64>) -> Result<Self> {
        Self::new(BasisSpec::dirichlet_sine(coeffs.len())?, coeffs)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::from_coeffs(vec![0.0; n])
    }

    /// `c·e_k` for the 1-based index `k`.
    pub fn mode(n: usize, k: usize, c: f64) -> Result<Self> {
        if k == 0 || k > n {
            return Err(invalid(format!("mode index {k} outside 1..={n}")));
        }
        let mut coeffs = vec![0.0; n];
        coeffs[k - 1] = c;
        Self::from_coeffs(coeffs)
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `P_m u`: keep the first `m` coefficients.
    pub fn project(&self, m: usize) -> Result<Self> {
        let m = m.min(self.len());
        Self::from_coeffs(self.coeffs[..m].to_vec())
    }

    /// Pointwise value `u(z) = Σ u_k e_k(z)`.
    pub fn eval(&self, z: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.basis.eval(i + 1, z))
            .sum()
    }

    pub fn norm(&self, selector: &Norm) -> Result<f64> {
        norms(self, selector)
    }
}

/// Values of a function sampled at the nodes of a quadrature rule.
#[derive(Clone, Debug)]
pub struct GridField {
    rule: Arc<QuadratureRule>,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(rule: Arc<QuadratureRule>, values: Vec<f64>) -> Result<Self> {
        if values.len() != rule.len() {
            return Err(FpkError::DimensionMismatch {
                expected: rule.len(),
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("grid values must be finite"));
        }
        Ok(Self { rule, values })
    }

    pub fn sample<F: Fn(f64) -> f64>(rule: Arc<QuadratureRule>, f: F) -> Result<Self> {
        let values = rule.nodes().iter().map(|&z| f(z)).collect();
        Self::new(rule, values)
    }

    pub fn nodes(&self) -> &[f64] {
        self.rule.nodes()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }
}

/// Evaluates `u(z) = Σ u_k √2 sin(kπz)` at the quadrature nodes.
pub fn synthesize(u: &SpectralField, rule: &Arc<QuadratureRule>) -> Result<GridField> {
    rule.check_resolves(u.len(), 1)?;
    let values = rule.nodes().iter().map(|&z| u.eval(z)).collect();
    GridField::new(Arc::clone(rule), values)
}

/// `coeffs_k = Σ_m w_m g(z_m) e_k(z_m)`.
pub fn analyze(g: &GridField, basis: &BasisSpec) -> Result<SpectralField> {
    g.rule.check_resolves(basis.size(), 1)?;
    let coeffs = (1..=basis.size())
        .map(|k| {
            g.nodes()
                .iter()
                .zip(g.rule.weights())
                .zip(&g.values)
                .map(|((&z, &w), &v)| w * v * basis.eval(k, z))
                .sum()
        })
        .collect();
    SpectralField::new(basis.clone(), coeffs)
}

/// Norm selectors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Norm {
    /// `‖u‖₂² = Σ u_k²`.
    L2,
    /// `‖u‖²_{H₀¹} = ‖u'‖₂² = Σ λ_k² u_k²`.
    H01,
    /// `(∫|u|^p)^{1/p}` by quadrature.
    Lp(f64),
    /// `‖x‖²_{l²_λ} = Σ λ_k² x_k²` for an explicit sequence of `λ_k²`.
    WeightedLambda(Vec<f64>),
    /// `‖x‖²_{l²_{1/α}} = Σ α_k⁻¹ x_k²`.
    InverseAlpha(Vec<f64>),
}

pub fn norms(u: &SpectralField, selector: &Norm) -> Result<f64> {
    let c = u.coeffs();
    match selector {
        Norm::L2 => Ok(c.iter().map(|x| x * x).sum::<f64>().sqrt()),
        Norm::H01 => {
            let lam = u.basis().eigenvalues();
            Ok(weighted_sq(c, &lam)?.sqrt())
        }
        Norm::Lp(p) => {
            if !(p.is_finite() && *p >= 1.0) {
                return Err(FpkError::UnsupportedNorm(format!("L^{p}")));
            }
            let rule = QuadratureRule::for_basis(u.len(), p.ceil() as usize)?;
            let s = rule.integrate(|z| u.eval(z).abs().powf(*p));
            Ok(s.powf(1.0 / p))
        }
        Norm::WeightedLambda(lam2) => Ok(weighted_sq(c, lam2)?.sqrt()),
        Norm::InverseAlpha(alpha) => {
            if alpha.iter().take(c.len()).any(|a| *a <= 0.0) {
                return Err(FpkError::UnsupportedNorm(
                    "l²_{1/α} needs positive α_k".into(),
                ));
            }
            let inv: Vec<f64> = alpha.iter().map(|a| 1.0 / a).collect();
            Ok(weighted_sq(c, &inv)?.sqrt())
        }
    }
}

fn weighted_sq(c: &[f64], w: &[f64]) -> Result<f64> {
    if w.len() < c.len() {
        return Err(FpkError::DimensionMismatch {
            expected: c.len(),
            actual: w.len(),
        });
    }
    Ok(c.iter().zip(w).map(|(x, w)| w * x * x).sum())
}

/// Precomputed synthesis and projection matrices for an `n`-mode basis on a
/// fixed quadrature rule. Rows are nodes for `synth`, modes for `proj` and
/// `dproj`.
#[derive(Clone, Debug)]
pub struct SpectralTransform {
    basis: BasisSpec,
    rule: Arc<QuadratureRule>,
    /// `M×N`, `e_k(z_m)`.
    synth: Vec<f64>,
    /// `N×M`, `w_m e_k(z_m)`.
    proj: Vec<f64>,
    /// `N×M`, `w_m e_k'(z_m)`.
    dproj: Vec<f64>,
}

impl SpectralTransform {
    /// Transform able to integrate degree-`q` nonlinearities exactly.
    pub fn new(n: usize, q: usize) -> Result<Self> {
        let basis = BasisSpec::dirichlet_sine(n)?;
        let rule = Arc::new(QuadratureRule::for_basis(n, q)?);
        Self::with_rule(basis, rule, q)
    }

    pub fn with_rule(basis: BasisSpec, rule: Arc<QuadratureRule>, q: usize) -> Result<Self> {
        let n = basis.size();
        rule.check_resolves(n, q)?;
        let m = rule.len();
        let mut synth = vec![0.0; m * n];
        let mut proj = vec![0.0; n * m];
        let mut dproj = vec![0.0; n * m];
        for (j, (&z, &w)) in rule.nodes().iter().zip(rule.weights()).enumerate() {
            for k in 0..n {
                let e = basis.eval(k + 1, z);
                synth[j * n + k] = e;
                proj[k * m + j] = w * e;
                dproj[k * m + j] = w * basis.eval_derivative(k + 1, z);
            }
        }
        Ok(Self {
            basis,
            rule,
            synth,
            proj,
            dproj,
        })
    }

    pub fn size(&self) -> usize {
        self.basis.size()
    }

    pub fn nodes_len(&self) -> usize {
        self.rule.len()
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn rule(&self) -> &Arc<QuadratureRule> {
        &self.rule
    }

    /// `out[m] = Σ_k coeffs[k] e_k(z_m)`.
    pub fn synthesize_into(&self, coeffs: &[f64], out: &mut [f64]) {
        let n = self.size();
        for (row, o) in self.synth.chunks_exact(n).zip(out.iter_mut()) {
            *o = row.iter().zip(coeffs).map(|(a, b)| a * b).sum();
        }
    }

    /// `out[k] = Σ_m w_m g_m e_k(z_m)`.
    pub fn project_into(&self, values: &[f64], out: &mut [f64]) {
        let m = self.nodes_len();
        for (row, o) in self.proj.chunks_exact(m).zip(out.iter_mut()) {
            *o = row.iter().zip(values).map(|(a, b)| a * b).sum();
        }
    }

    /// `out[k] = Σ_m w_m g_m e_k'(z_m)`.
    pub fn project_derivative_into(&self, values: &[f64], out: &mut [f64]) {
        let m = self.nodes_len();
        for (row, o) in self.dproj.chunks_exact(m).zip(out.iter_mut()) {
            *o = row.iter().zip(values).map(|(a, b)| a * b).sum();
        }
    }

    /// `e_k(z_m)` for the 0-based mode `k`.
    pub fn basis_at(&self, node: usize, k: usize) -> f64 {
        self.synth[node * self.size() + k]
    }

    pub(crate) fn proj_row(&self, k: usize) -> &[f64] {
        let m = self.nodes_len();
        &self.proj[k * m..(k + 1) * m]
    }

    pub(crate) fn dproj_row(&self, k: usize) -> &[f64] {
        let m = self.nodes_len();
        &self.dproj[k * m..(k + 1) * m]
    }
}
