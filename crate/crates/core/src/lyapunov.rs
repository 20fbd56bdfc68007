//! Lyapunov functions `V` and compact functions `Θ` on `ℝ^N`.

use std::f64::consts::PI;
use std::sync::atomic::{AtomicBool, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};

/// Exponents above this are clamped before `exp`.
pub const MAX_EXPONENT: f64 = 700.0;

static CLAMP_WARNED: AtomicBool = AtomicBool::new(false);

fn clamp_exponent(e: f64) -> f64 {
    if e > MAX_EXPONENT {
        if !CLAMP_WARNED.swap(true, Ordering::Relaxed) {
            log::warn!("Lyapunov exponent {e:.3e} clamped to {MAX_EXPONENT}");
        }
        MAX_EXPONENT
    } else {
        e
    }
}

/// Per-mode weights; a single entry is broadcast to every mode.
fn weights(w: &[f64], n: usize) -> Result<Vec<f64>> {
    match w.len() {
        1 => Ok(vec![w[0]; n]),
        len if len >= n => Ok(w[..n].to_vec()),
        len => Err(FpkError::SizeExceeded {
            requested: n,
            max: len,
        }),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum LyapunovSpec {
    /// `V = 1 + Σ γ_k x_k²`.
    Quadratic { gamma: Vec<f64> },
    /// `V = exp(κ Σ β_k x_k²)`.
    ExpQuadratic { kappa: f64, beta: Vec<f64> },
    /// `V = exp(κ Σ λ_k² x_k²)` with `λ_k = kπ`.
    ExpWeighted { kappa: f64 },
}

impl LyapunovSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |v: &f64| !(v.is_finite() && *v >= 0.0);
        match self {
            LyapunovSpec::Quadratic { gamma } => {
                if gamma.is_empty() || gamma.iter().any(bad) {
                    return Err(invalid("quadratic V needs nonnegative finite weights"));
                }
            }
            LyapunovSpec::ExpQuadratic { kappa, beta } => {
                if bad(kappa) || beta.is_empty() || beta.iter().any(bad) {
                    return Err(invalid("exp-quadratic V needs nonnegative kappa and weights"));
                }
            }
            LyapunovSpec::ExpWeighted { kappa } => {
                if bad(kappa) {
                    return Err(invalid("exp-weighted V needs nonnegative kappa"));
                }
            }
        }
        Ok(())
    }

    pub fn is_exponential(&self) -> bool {
        !matches!(self, LyapunovSpec::Quadratic { .. })
    }

    /// Resolves the family on `n` modes.
    pub fn on(&self, n: usize) -> Result<LyapunovFn> {
        self.validate()?;
        Ok(match self {
            LyapunovSpec::Quadratic { gamma } => LyapunovFn {
                exponential: false,
                scale: 1.0,
                w: weights(gamma, n)?,
            },
            LyapunovSpec::ExpQuadratic { kappa, beta } => LyapunovFn {
                exponential: true,
                scale: *kappa,
                w: weights(beta, n)?,
            },
            LyapunovSpec::ExpWeighted { kappa } => LyapunovFn {
                exponential: true,
                scale: *kappa,
                w: (1..=n).map(|k| (k as f64 * PI).powi(2)).collect(),
            },
        })
    }
}

/// A Lyapunov family resolved on `N` modes: `1 + q(x)` or `exp(κ q(x))` with
/// `q(x) = Σ w_k x_k²`.
#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovFn {
    exponential: bool,
    /// `κ` for exponentials, 1 otherwise.
    scale: f64,
    w: Vec<f64>,
}

impl LyapunovFn {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn is_exponential(&self) -> bool {
        self.exponential
    }

    pub fn kappa(&self) -> f64 {
        self.scale
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    fn quad(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, v)| w * v * v).sum()
    }

    /// `log V(x)` without clamping.
    pub fn log_value(&self, x: &[f64]) -> f64 {
        if self.exponential {
            self.scale * self.quad(x)
        } else {
            self.quad(x).ln_1p()
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        if self.exponential {
            clamp_exponent(self.scale * self.quad(x)).exp()
        } else {
            1.0 + self.quad(x)
        }
    }

    /// `∇V / V` for exponentials, `∇V` otherwise.
    fn grad_factor(&self, x: &[f64]) -> Vec<f64> {
        let c = if self.exponential { 2.0 * self.scale } else { 2.0 };
        self.w.iter().zip(x).map(|(w, v)| c * w * v).collect()
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = self.grad_factor(x);
        if self.exponential {
            let v = self.value(x);
            g.iter_mut().for_each(|gi| *gi *= v);
        }
        g
    }

    /// Hessian divided by `V` for exponentials; plain Hessian otherwise.
    fn hessian_factor(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        if self.exponential {
            let g = self.grad_factor(x);
            DMatrix::from_fn(n, n, |i, j| {
                g[i] * g[j] + if i == j { 2.0 * self.scale * self.w[i] } else { 0.0 }
            })
        } else {
            DMatrix::from_fn(n, n, |i, j| if i == j { 2.0 * self.w[i] } else { 0.0 })
        }
    }

    pub fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let h = self.hessian_factor(x);
        if self.exponential {
            h * self.value(x)
        } else {
            h
        }
    }

    /// `LV / V` for exponentials and `LV` for the quadratic family, where
    /// `L = Σ a^{ij}∂_i∂_j + Σ B^i∂_i`. Computing the ratio avoids overflow.
    pub fn generator_factor(&self, x: &[f64], drift: &[f64], a: &DMatrix<f64>) -> f64 {
        let h = self.hessian_factor(x);
        let g = self.grad_factor(x);
        let second: f64 = a.component_mul(&h).sum();
        let first: f64 = g.iter().zip(drift).map(|(g, b)| g * b).sum();
        second + first
    }

    pub fn generator(&self, x: &[f64], drift: &[f64], a: &DMatrix<f64>) -> f64 {
        let f = self.generator_factor(x, drift, a);
        if self.exponential {
            f * self.value(x)
        } else {
            f
        }
    }

    /// `Σ a^{ij} ∂_iV ∂_jV`.
    pub fn carre_du_champ(&self, x: &[f64], a: &DMatrix<f64>) -> f64 {
        let g = nalgebra::DVector::from_vec(self.gradient(x));
        (g.transpose() * a * &g)[(0, 0)]
    }
}

/// `Θ(x) = c + Σ w_k x_k²`; also used for the drift-Jacobian bound `θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ThetaSpec {
    Zero,
    Quadratic {
        #[serde(default)]
        constant: f64,
        weights: Vec<f64>,
    },
    /// `c + s·‖x‖²_{H¹₀} = c + s Σ (kπ)² x_k²`.
    H01 {
        #[serde(default)]
        constant: f64,
        scale: f64,
    },
}

impl ThetaSpec {
    pub fn constant(c: f64) -> Self {
        ThetaSpec::Quadratic {
            constant: c,
            weights: vec![0.0],
        }
    }

    pub fn on(&self, n: usize) -> Result<ThetaFn> {
        let (c, w) = match self {
            ThetaSpec::Zero => (0.0, vec![0.0; n]),
            ThetaSpec::Quadratic { constant, weights: w } => (*constant, weights(w, n)?),
            ThetaSpec::H01 { constant, scale } => (
                *constant,
                (1..=n).map(|k| scale * (k as f64 * PI).powi(2)).collect(),
            ),
        };
        if !c.is_finite() || w.iter().any(|v| !v.is_finite()) {
            return Err(invalid("theta coefficients must be finite"));
        }
        Ok(ThetaFn { constant: c, w })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThetaFn {
    pub constant: f64,
    pub w: Vec<f64>,
}

impl ThetaFn {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.constant + self.w.iter().zip(x).map(|(w, v)| w * v * v).sum::<f64>()
    }

    /// Nonnegative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        self.constant >= 0.0 && self.w.iter().all(|w| *w >= 0.0)
    }
}
