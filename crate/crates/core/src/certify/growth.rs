//! Coefficient growth envelopes `|a^{ij}| + |B^i| ≤ C_i·V^{k_i}(1 + δ(Θ)Θ)`
//! and `≤ C_i(1 + δ(VΘ)VΘ)`, with `δ(s) = (1 + s)^{−q}`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{Certificate, Coefficients, ConditionId, Counterexample, DriftBuf, Envelope, SamplerSpec, SAMPLER_TOL};
use crate::error::{invalid, FpkError, Result};
use crate::lyapunov::{LyapunovSpec, ThetaSpec};

/// Admissible exponents `q` of `δ(s) = (1 + s)^{−q}`.
pub const GROWTH_POWERS: [f64; 3] = [0.25, 0.5, 1.0];

/// An exponent `k` is rejected when the envelope ratio on the outer probe
/// points exceeds its maximum elsewhere by more than this factor.
pub const GROWTH_TREND: f64 = 1.5;

/// Safety factor applied to the fitted constants.
const FIT_MARGIN: f64 = 1.5;

const MAX_POWER: f64 = 8.0;
const POWER_STEP: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GrowthForm {
    /// `C_i V^{k_i}(1 + δ(Θ)Θ)`.
    Theta,
    /// `C_i(1 + δ(VΘ)VΘ)`; no power of `V` is fitted.
    VTheta,
}

/// `log(1 + e^y)` without overflow.
fn softplus(y: f64) -> f64 {
    if y > 0.0 {
        y + (-y).exp().ln_1p()
    } else {
        y.exp().ln_1p()
    }
}

/// `log(1 + δ(s)s)` from `log s`.
fn log_factor(log_s: f64, q: f64) -> f64 {
    if log_s == f64::NEG_INFINITY {
        return 0.0;
    }
    let log_1ps = softplus(log_s);
    softplus(log_s - q * log_1ps)
}

/// Logs needed at one point: `log V`, `log(1 + δΘ…)`, and `log lhs_i`.
struct PointLogs {
    log_v: f64,
    log_fac: f64,
    outer: bool,
    lhs: Vec<f64>,
}

/// Points marked "outer" probe the trend: the outermost axis rays and a
/// copy of the widest Gaussian cloud stretched tenfold.
fn probe_points(sampler: &SamplerSpec, n: usize, with_rim: bool) -> (Vec<f64>, Vec<bool>) {
    let mut pts = sampler.points(n);
    let outer = sampler.outer_ray();
    let mut flags: Vec<bool> = pts
        .chunks(n)
        .map(|x| {
            let r = x.iter().map(|v| v.abs()).fold(0.0, f64::max);
            with_rim && outer.is_some_and(|o| r == o) && x.iter().filter(|v| **v != 0.0).count() == 1
        })
        .collect();
    let widest = sampler.scales.iter().copied().fold(0.0, f64::max);
    if with_rim && widest > 0.0 {
        let rim = SamplerSpec {
            points_per_scale: sampler.points_per_scale.min(RIM_POINTS),
            scales: vec![RIM_STRETCH * widest],
            ray_exponents: Vec::new(),
            seed: crate::rng::derive_seed(sampler.seed, 0x71a),
            ..sampler.clone()
        }
        .points(n);
        // Skip the origin that leads every point set.
        flags.extend(std::iter::repeat(true).take(rim.len() / n - 1));
        pts.extend_from_slice(&rim[n..]);
    }
    (pts, flags)
}

const RIM_POINTS: usize = 2_000;
const RIM_STRETCH: f64 = 10.0;

#[allow(clippy::too_many_arguments)]
fn point_logs(
    coefficients: &Coefficients,
    v: &LyapunovSpec,
    theta: &ThetaSpec,
    q: f64,
    form: GrowthForm,
    times: &[f64],
    n: usize,
    pts: &[f64],
    flags: &[bool],
) -> Result<Vec<PointLogs>> {
    let vf = v.on(n)?;
    let th = theta.on(n)?;
    let (drift, a) = coefficients.at(n)?;
    let d: &dyn crate::drift::Drift = drift.as_ref();
    // max_{j ≤ i} |a^{ij}|
    let a_row: Vec<f64> = (0..n)
        .map(|i| (0..=i).map(|j| a[(i, j)].abs()).fold(0.0, f64::max))
        .collect();
    let mut out = Vec::new();
    for &t in times {
        let chunk: Vec<PointLogs> = pts
            .par_chunks(n)
            .zip(flags.par_iter())
            .map_init(
                || DriftBuf::new(d),
                |buf, (x, &outer)| {
                    let b = buf.eval(d, x, t);
                    let log_v = vf.log_value(x);
                    let theta = th.value(x).max(0.0);
                    let log_s = match form {
                        GrowthForm::Theta => theta.ln(),
                        GrowthForm::VTheta => log_v + theta.ln(),
                    };
                    PointLogs {
                        log_v,
                        log_fac: log_factor(log_s, q),
                        outer,
                        lhs: (0..n).map(|i| (a_row[i] + b[i].abs()).ln()).collect(),
                    }
                },
            )
            .collect();
        out.extend(chunk);
    }
    Ok(out)
}

/// Fits `(C_i, k_i)` per coordinate over the sampler, then re-verifies the
/// envelope on a fresh sample.
///
/// For each coordinate the smallest `k` on the grid `0, ¼, …, 8` whose
/// ratio `lhs / V^k(…)` does not keep growing on the outer probe points is
/// chosen, and `C_i` is 1.5 times the largest ratio seen, probes included.
/// In the [`GrowthForm::VTheta`] form `k` is fixed at 0.
pub fn growth_check(
    coefficients: &Coefficients,
    v: &LyapunovSpec,
    theta: &ThetaSpec,
    q: f64,
    form: GrowthForm,
    sampler: &SamplerSpec,
) -> Result<Certificate> {
    if !GROWTH_POWERS.contains(&q) {
        return Err(invalid(format!("delta exponent q must be one of {GROWTH_POWERS:?}, got {q}")));
    }
    let dims = coefficients.checked_dims(sampler)?;
    let mut data: Vec<(usize, Vec<PointLogs>)> = Vec::new();
    for &n in &dims {
        let (pts, flags) = probe_points(sampler, n, true);
        let logs = point_logs(coefficients, v, theta, q, form, &sampler.times, n, &pts, &flags)?;
        data.push((n, logs));
    }
    let nmax = *dims.iter().max().expect("nonempty");
    let powers: Vec<f64> = match form {
        GrowthForm::Theta => (0..=(MAX_POWER / POWER_STEP) as usize)
            .map(|j| j as f64 * POWER_STEP)
            .collect(),
        GrowthForm::VTheta => vec![0.0],
    };
    let mut envelope = Vec::with_capacity(nmax);
    for i in 0..nmax {
        let fitted = powers.iter().find_map(|&k| {
            let mut inner = f64::NEG_INFINITY;
            let mut rim = f64::NEG_INFINITY;
            for (n, pts) in &data {
                if i >= *n {
                    continue;
                }
                for p in pts {
                    let r = p.lhs[i] - k * p.log_v - p.log_fac;
                    if p.outer {
                        rim = rim.max(r);
                    } else {
                        inner = inner.max(r);
                    }
                }
            }
            let top = inner.max(rim);
            let admissible = rim == f64::NEG_INFINITY || rim <= inner + GROWTH_TREND.ln();
            admissible.then_some((k, top))
        });
        let Some((k, top)) = fitted else {
            return Err(FpkError::EnvelopeNotFound {
                coordinate: i + 1,
                max_power: *powers.last().expect("nonempty"),
            });
        };
        let log_c = top + FIT_MARGIN.ln();
        envelope.push((k, log_c));
    }

    let mut cert = Certificate::new(match form {
        GrowthForm::Theta => ConditionId::Growth,
        GrowthForm::VTheta => ConditionId::GrowthExp,
    });
    cert.set("q", q);
    cert.theta = Some(theta.clone());
    cert.sampler = Some(sampler.clone());
    cert.envelope = envelope
        .iter()
        .enumerate()
        .map(|(i, (k, log_c))| Envelope {
            coordinate: i + 1,
            c: log_c.exp(),
            k: *k,
        })
        .collect();

    let fresh = sampler.fresh();
    for &n in &dims {
        let (raw, flags) = probe_points(&fresh, n, false);
        let pts = point_logs(coefficients, v, theta, q, form, &fresh.times, n, &raw, &flags)?;
        cert.points_checked += pts.len();
        let per_time = raw.len() / n;
        for (idx, p) in pts.iter().enumerate() {
            for (i, (k, log_c)) in envelope.iter().enumerate().take(n) {
                let log_rhs = log_c + k * p.log_v + p.log_fac;
                if p.lhs[i] - log_rhs > SAMPLER_TOL {
                    let j = idx % per_time;
                    cert.fail(Counterexample {
                        x: raw[j * n..(j + 1) * n].to_vec(),
                        t: fresh.times[idx / per_time],
                        inequality: format!("growth-{}", i + 1),
                        lhs: p.lhs[i].exp(),
                        rhs: log_rhs.exp(),
                    });
                }
            }
        }
    }
    Ok(cert)
}
