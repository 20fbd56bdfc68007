//! Initial moments `W_k = ∫(V∘P_n)^k dν` and checks of tracked moments
//! against `N_k W_k` or `4W₁`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::constants;
use crate::error::{invalid, Result};
use crate::lyapunov::{LyapunovSpec, MAX_EXPONENT};
use crate::solver::observe::mean_stderr;
use crate::solver::{InitialLaw, MomentForm, MomentReport};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    /// Zero for closed forms.
    pub stderr: f64,
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, j| acc * f64::from(n - j) / f64::from(j + 1))
}

/// `E[Q^j]`, `j ≤ k`, for `Q = Σγ_i x_i²` with independent `x_i ~ N(m_i, s_i²)`,
/// from the cumulants of scaled noncentral chi-squares.
fn quadratic_form_moments(gamma: &[f64], mean: &[f64], var: &[f64], k: u32) -> Vec<f64> {
    let k = k as usize;
    let mut cumulant = vec![0.0; k + 1];
    let mut fact = 1.0;
    for (j, c) in cumulant.iter_mut().enumerate().skip(1) {
        if j > 1 {
            fact *= (j - 1) as f64;
        }
        let scale = 2f64.powi(j as i32 - 1) * fact;
        *c = gamma
            .iter()
            .zip(mean.iter().zip(var))
            .map(|(g, (m, s2))| {
                scale * g.powi(j as i32) * (s2.powi(j as i32) + j as f64 * m * m * s2.powi(j as i32 - 1))
            })
            .sum();
    }
    let mut moment = vec![1.0; k + 1];
    for j in 1..=k {
        moment[j] = (1..=j)
            .map(|i| binomial(j as u32 - 1, i as u32 - 1) * cumulant[i] * moment[j - i])
            .sum();
    }
    moment
}

/// `∫(V∘P_n)^k dν`: closed form for point masses and Gaussians, Monte Carlo
/// with a standard error for sample laws. For the built-in families `V∘P_n`
/// is nondecreasing in `n`, so the largest truncation in use gives `W_k`.
/// An exponential moment that does not exist is returned as `+∞`.
pub fn initial_moment(v: &LyapunovSpec, law: &InitialLaw, n: usize, k: u32) -> Result<Estimate> {
    if k == 0 {
        return Ok(Estimate {
            value: 1.0,
            stderr: 0.0,
        });
    }
    let vf = v.on(n)?;
    let law = law.resolve()?;
    law.validate()?;
    let kf = f64::from(k);
    let power = |x: &[f64]| {
        if vf.is_exponential() {
            (kf * vf.log_value(x)).exp()
        } else {
            vf.value(x).powi(k as i32)
        }
    };
    let exact = |value: f64| Estimate { value, stderr: 0.0 };
    match &law {
        InitialLaw::PointMass { .. } => {
            let x: Vec<f64> = (0..n).map(|i| law.mean(i)).collect();
            Ok(exact(power(&x)))
        }
        InitialLaw::Gaussian { .. } => {
            let mean: Vec<f64> = (0..n).map(|i| law.mean(i)).collect();
            let var: Vec<f64> = (0..n).map(|i| law.variance(i)).collect();
            let w = vf.weights();
            if !vf.is_exponential() {
                let m = quadratic_form_moments(w, &mean, &var, k);
                let value = (0..=k).map(|j| binomial(k, j) * m[j as usize]).sum();
                return Ok(exact(value));
            }
            // E exp(c x²) = (1 − 2cs²)^{−1/2} exp(c m²/(1 − 2cs²)).
            let mut log = 0.0;
            for i in 0..n {
                let c = kf * vf.kappa() * w[i];
                let denom = 1.0 - 2.0 * c * var[i];
                if denom <= 0.0 {
                    return Ok(exact(f64::INFINITY));
                }
                log += -0.5 * denom.ln() + c * mean[i] * mean[i] / denom;
            }
            Ok(exact(if log > MAX_EXPONENT { f64::INFINITY } else { log.exp() }))
        }
        InitialLaw::Samples { points } => {
            let values: Vec<f64> = points
                .iter()
                .map(|p| {
                    let x: Vec<f64> = (0..n).map(|i| p.get(i).copied().unwrap_or(0.0)).collect();
                    power(&x)
                })
                .collect();
            let (value, stderr) = mean_stderr(&values);
            Ok(Estimate { value, stderr })
        }
        InitialLaw::File { .. } => unreachable!("resolved above"),
    }
}

/// `N_k W_k`.
pub fn power_bound(k: u32, c0: f64, m0: f64, w_k: f64) -> f64 {
    constants(k, c0, m0).1 * w_k
}

/// `4W₁`, valid up to time 1.
pub fn exponential_bound(w1: f64) -> f64 {
    4.0 * w1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheckRow {
    pub t: f64,
    pub k: u32,
    /// Tracked moment plus running integral.
    pub value: f64,
    pub stderr: f64,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub pass: bool,
    pub rows: Vec<MomentCheckRow>,
}

/// Requires `value + 3·stderr ≤ bound` at every checkpoint. `bounds` maps
/// `k` to its bound; the exponential form only covers `t ≤ 1`.
pub fn moment_bound_check(
    report: &MomentReport,
    form: MomentForm,
    bounds: &BTreeMap<u32, f64>,
) -> Result<MomentCheck> {
    let mut rows = Vec::with_capacity(report.rows.len());
    for r in &report.rows {
        let bound = *bounds
            .get(&r.k)
            .ok_or_else(|| invalid(format!("no bound supplied for k = {}", r.k)))?;
        if form == MomentForm::Exponential && r.t > 1.0 + 1e-12 {
            return Err(invalid(format!(
                "exponential-form bound covers t <= 1, report has t = {}",
                r.t
            )));
        }
        let value = r.moment + r.running_integral;
        rows.push(MomentCheckRow {
            t: r.t,
            k: r.k,
            value,
            stderr: r.stderr,
            bound,
            pass: value + 3.0 * r.stderr <= bound,
        });
    }
    Ok(MomentCheck {
        pass: rows.iter().all(|r| r.pass),
        rows,
    })
}
