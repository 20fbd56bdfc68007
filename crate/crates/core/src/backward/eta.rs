//! Smooth cutoff profile `η` and the localizer `ζ_M(x) = η((1+|x|²)^κ / M)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// `e^{−1/y}` for `y > 0`, else 0.
fn g(y: f64) -> f64 {
    if y > 0.0 {
        (-1.0 / y).exp()
    } else {
        0.0
    }
}

fn dg(y: f64) -> f64 {
    if y > 0.0 {
        g(y) / (y * y)
    } else {
        0.0
    }
}

/// Even `C^∞` function with `η = 1` on `|s| ≤ 1`, `η = 0` on `|s| ≥ 2`,
/// monotone in between, built from the ratio `g(2−s) / (g(2−s) + g(s−1))`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CutoffEta {
    /// `sup |η'|²/η`, computed once by dense sampling.
    pub c_eta: f64,
}

/// Sampling points used to record `C_η`.
const C_ETA_SAMPLES: usize = 200_000;

impl CutoffEta {
    pub fn new() -> Self {
        Self {
            c_eta: Self::sampled_constant(C_ETA_SAMPLES),
        }
    }

    pub fn value(&self, s: f64) -> f64 {
        let s = s.abs();
        if s <= 1.0 {
            1.0
        } else if s >= 2.0 {
            0.0
        } else {
            let u = g(2.0 - s);
            u / (u + g(s - 1.0))
        }
    }

    pub fn derivative(&self, s: f64) -> f64 {
        let a = s.abs();
        if a <= 1.0 || a >= 2.0 {
            return 0.0;
        }
        let u = g(2.0 - a);
        let v = g(a - 1.0);
        let d = -(dg(2.0 - a) * v + u * dg(a - 1.0)) / ((u + v) * (u + v));
        if s < 0.0 {
            -d
        } else {
            d
        }
    }

    /// `max |η'|²/η` over `samples` interior points of `(1, 2)`.
    pub fn sampled_constant(samples: usize) -> f64 {
        let eta = CutoffEta { c_eta: 0.0 };
        (1..samples)
            .map(|i| 1.0 + i as f64 / samples as f64)
            .filter_map(|s| {
                let v = eta.value(s);
                (v > 0.0).then(|| eta.derivative(s).powi(2) / v)
            })
            .fold(0.0, f64::max)
    }
}

impl Default for CutoffEta {
    fn default() -> Self {
        Self::new()
    }
}

/// `ζ_M(x) = η((1+|x|²)^κ / M)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cutoff {
    pub kappa: f64,
    pub m: f64,
}

impl Cutoff {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa > 0.0 && self.m > 0.0 && self.kappa.is_finite() && self.m.is_finite()) {
            return Err(invalid("cutoff needs positive kappa and M"));
        }
        Ok(())
    }

    pub fn value(&self, eta: &CutoffEta, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        eta.value((1.0 + r2).powf(self.kappa) / self.m)
    }
}
