//! `Γ(V) ≤ M₀V²`, `LV ≤ C₀V − Θ` and `LV ≤ V(1 − Θ)`.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{
    falsify, ray_witness, violates, Certificate, Coefficients, ConditionId, Counterexample,
    DriftBuf, Ineq, SamplerSpec,
};
use crate::drift::{Drift, DriftModel, GalerkinDrift};
use crate::error::{invalid, FpkError, Result};
use crate::lyapunov::{LyapunovFn, LyapunovSpec, ThetaFn, ThetaSpec};

fn witness(name: &str, x: Vec<f64>, t: f64, q: Ineq) -> Option<Counterexample> {
    violates(q.lhs, q.rhs).then(|| Counterexample {
        x,
        t,
        inequality: name.to_string(),
        lhs: q.lhs,
        rhs: q.rhs,
    })
}

/// Linear rates of a family whose drift is `−r_k x_k` plus a part that is
/// orthogonal to `x` (none for OU, the transport term for Burgers).
fn dissipative_rates(model: &DriftModel, n: usize) -> Option<Vec<f64>> {
    match model {
        DriftModel::Ou { .. } | DriftModel::Burgers => {
            GalerkinDrift::new(model.clone(), n).ok().map(|g| g.rates().to_vec())
        }
        _ => None,
    }
}

fn lyapunov_ineqs(
    v: &LyapunovFn,
    th: &ThetaFn,
    a: &DMatrix<f64>,
    c0: f64,
    m0: f64,
    x: &[f64],
    b: &[f64],
    out: &mut Vec<Ineq>,
) {
    let value = v.value(x);
    out.push(Ineq {
        name: "carre-du-champ",
        lhs: v.carre_du_champ(x, a),
        rhs: m0 * value * value,
    });
    out.push(Ineq {
        name: "generator",
        lhs: v.generator(x, b, a),
        rhs: c0 * value - th.value(x),
    });
}

/// Checks `Σ a^{ij}∂_iV∂_jV ≤ M₀V²` and `LV ≤ C₀V − Θ` for a quadratic `V`.
///
/// The first inequality is decided exactly for every family: with
/// `z = Γ^{1/2}x` it reads `4⟨Sz, z⟩ ≤ M₀(1 + |z|²)²`, `S = Γ^{1/2}AΓ^{1/2}`,
/// which holds iff `M₀ ≥ λ_max(S)`. For OU drifts the second is decided
/// exactly as well, by comparing constant and per-mode quadratic terms.
pub fn check_lyapunov(
    coefficients: &Coefficients,
    v: &LyapunovSpec,
    theta: &ThetaSpec,
    c0: f64,
    m0: f64,
    sampler: &SamplerSpec,
) -> Result<Certificate> {
    if v.is_exponential() {
        return Err(FpkError::WrongVFamily(
            "the carre-du-champ bound needs the quadratic family".into(),
        ));
    }
    let dims = coefficients.checked_dims(sampler)?;
    let mut cert = Certificate::new(ConditionId::Lyapunov);
    cert.set("C0", c0);
    cert.set("M0", m0);
    cert.theta = Some(theta.clone());
    cert.sampler = Some(sampler.clone());
    cert.analytic = matches!(coefficients.drift, DriftModel::Ou { .. });
    for &n in &dims {
        let vf = v.on(n)?;
        let th = theta.on(n)?;
        let (drift, a) = coefficients.at(n)?;
        let t0 = sampler.times[0];
        let check = |name: &str, x: &[f64]| {
            let mut buf = DriftBuf::new(drift.as_ref());
            let mut q = Vec::new();
            lyapunov_ineqs(&vf, &th, &a, c0, m0, x, buf.eval(drift.as_ref(), x, t0), &mut q);
            q.into_iter()
                .filter(|q| q.name == name)
                .find_map(|q| witness(name, x.to_vec(), t0, q))
        };

        let gamma = vf.weights();
        let root: Vec<f64> = gamma.iter().map(|g| g.sqrt()).collect();
        let s = DMatrix::from_fn(n, n, |i, j| root[i] * a[(i, j)] * root[j]);
        let eig = SymmetricEigen::new(s);
        let (top, lmax) = eig
            .eigenvalues
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, l)| if *l > b.1 { (i, *l) } else { b });
        cert.set(format!("lambda_max_{n}"), lmax);
        if violates(lmax, m0) {
            let u = eig.eigenvectors.column(top);
            let x: Vec<f64> = (0..n)
                .map(|k| if root[k] > 0.0 { u[k] / root[k] } else { 0.0 })
                .collect();
            if let Some(c) = check("carre-du-champ", &x) {
                cert.fail(c);
            }
        }

        if let (DriftModel::Ou { .. }, Some(rates)) =
            (&coefficients.drift, dissipative_rates(&coefficients.drift, n))
        {
            let constant: f64 = 2.0 * (0..n).map(|k| a[(k, k)] * gamma[k]).sum::<f64>();
            if violates(constant, c0 - th.constant) {
                if let Some(c) = check("generator", &vec![0.0; n]) {
                    cert.fail(c);
                }
            }
            for k in 0..n {
                if violates(-2.0 * gamma[k] * rates[k], c0 * gamma[k] - th.w[k]) {
                    if let Some(c) = ray_witness(n, k, |x| check("generator", x)) {
                        cert.fail(c);
                    }
                }
            }
        }

        let pts = sampler.points(n);
        for &t in &sampler.times {
            cert.points_checked += pts.len() / n;
            let d: &dyn Drift = drift.as_ref();
            let found = falsify(n, t, &pts, || DriftBuf::new(d), |buf, x, out| {
                let b = buf.eval(d, x, t);
                lyapunov_ineqs(&vf, &th, &a, c0, m0, x, b, out)
            });
            if let Some(c) = found {
                cert.fail(c);
            }
        }
    }
    Ok(cert)
}

/// Per-mode data of the closed form `LV/V = 2Σα_k d_k + Σ(4d_k²α_k − 2d_k r_k)x_k²`
/// for `V = exp(Σ d_k x_k²)` under a diagonal `A` and a drift `−r_k x_k` plus
/// a part orthogonal to `x`.
struct ExpRoute {
    d: Vec<f64>,
    rates: Vec<f64>,
    alpha: Vec<f64>,
}

impl ExpRoute {
    fn new(coefficients: &Coefficients, v: &LyapunovSpec, n: usize) -> Option<Self> {
        if !v.is_exponential() || !coefficients.diffusion.is_diagonal() {
            return None;
        }
        let rates = dissipative_rates(&coefficients.drift, n)?;
        let vf = v.on(n).ok()?;
        let d: Vec<f64> = vf.weights().iter().map(|w| vf.kappa() * w).collect();
        // The transport term is orthogonal to x only in the flat pairing.
        if matches!(coefficients.drift, DriftModel::Burgers) && d.iter().any(|v| *v != d[0]) {
            return None;
        }
        let a = coefficients.diffusion.matrix(n).ok()?;
        Some(Self {
            d,
            rates,
            alpha: a.diagonal().iter().copied().collect(),
        })
    }

    fn constant(&self) -> f64 {
        2.0 * self.alpha.iter().zip(&self.d).map(|(a, d)| a * d).sum::<f64>()
    }

    fn quadratic(&self, k: usize) -> f64 {
        let d = self.d[k];
        4.0 * d * d * self.alpha[k] - 2.0 * d * self.rates[k]
    }
}

fn exp_ineqs(v: &LyapunovFn, th: &ThetaFn, a: &DMatrix<f64>, x: &[f64], b: &[f64], out: &mut Vec<Ineq>) {
    let theta = th.value(x);
    let factor = v.generator_factor(x, b, a);
    let (lhs, rhs) = if v.is_exponential() {
        (factor, 1.0 - theta)
    } else {
        (factor, v.value(x) * (1.0 - theta))
    };
    out.push(Ineq {
        name: "generator",
        lhs,
        rhs,
    });
    out.push(Ineq {
        name: "theta-nonnegative",
        lhs: -theta,
        rhs: 0.0,
    });
}

/// `Θ = 1 − 2Σα_k d_k + Σ d_k r_k x_k²`, the compact function produced by the
/// closed form when `4d_kα_k ≤ r_k`. Returned in the weighted-`H¹₀` form
/// when the weights are uniform and the rates are `(kπ)²`.
fn induced_theta(coefficients: &Coefficients, v: &LyapunovSpec, n: usize) -> Option<ThetaSpec> {
    let route = ExpRoute::new(coefficients, v, n)?;
    let constant = 1.0 - route.constant();
    let laplacian = matches!(
        coefficients.drift,
        DriftModel::Burgers | DriftModel::Ou { rates: None }
    );
    if laplacian && route.d.iter().all(|d| *d == route.d[0]) {
        return Some(ThetaSpec::H01 {
            constant,
            scale: route.d[0],
        });
    }
    Some(ThetaSpec::Quadratic {
        constant,
        weights: route.d.iter().zip(&route.rates).map(|(d, r)| d * r).collect(),
    })
}

/// Checks `LV ≤ V(1 − Θ)` and `Θ ≥ 0`.
///
/// Without `theta`, the family must admit the closed form (OU or Burgers
/// drift, diagonal `A`, exponential `V`, uniform weights for Burgers); the
/// induced `Θ` is then emitted, using the trace of `A` over the largest
/// truncation sampled.
pub fn check_lyapunov_exp(
    coefficients: &Coefficients,
    v: &LyapunovSpec,
    theta: Option<&ThetaSpec>,
    sampler: &SamplerSpec,
) -> Result<Certificate> {
    let dims = coefficients.checked_dims(sampler)?;
    let nmax = *dims.iter().max().expect("nonempty");
    let theta = match theta {
        Some(t) => t.clone(),
        None => induced_theta(coefficients, v, nmax).ok_or_else(|| {
            invalid("no closed form for this family; supply theta explicitly")
        })?,
    };
    let mut cert = Certificate::new(ConditionId::LyapunovExp);
    cert.theta = Some(theta.clone());
    cert.sampler = Some(sampler.clone());
    if let Some(route) = ExpRoute::new(coefficients, v, nmax) {
        cert.analytic = true;
        if route.d.iter().all(|d| *d == route.d[0]) {
            cert.set("delta", route.d[0]);
        }
        cert.set("trace_a", route.alpha.iter().sum());
    }
    for &n in &dims {
        let vf = v.on(n)?;
        let th = theta.on(n)?;
        let (drift, a) = coefficients.at(n)?;
        let t0 = sampler.times[0];
        let check = |name: &str, x: &[f64]| {
            let mut buf = DriftBuf::new(drift.as_ref());
            let mut q = Vec::new();
            exp_ineqs(&vf, &th, &a, x, buf.eval(drift.as_ref(), x, t0), &mut q);
            q.into_iter()
                .filter(|q| q.name == name)
                .find_map(|q| witness(name, x.to_vec(), t0, q))
        };

        // Mode checks come first so a dominated quadratic form is reported
        // on its mode rather than through the constant term.
        if let Some(route) = ExpRoute::new(coefficients, v, n) {
            for k in 0..n {
                if violates(route.quadratic(k) + th.w[k], 0.0) {
                    if let Some(c) = ray_witness(n, k, |x| check("generator", x)) {
                        cert.fail(c);
                    }
                }
                if th.w[k] < 0.0 {
                    if let Some(c) = ray_witness(n, k, |x| check("theta-nonnegative", x)) {
                        cert.fail(c);
                    }
                }
            }
            if violates(route.constant(), 1.0 - th.constant) {
                if let Some(c) = check("generator", &vec![0.0; n]) {
                    cert.fail(c);
                }
            }
            if th.constant < 0.0 {
                if let Some(c) = check("theta-nonnegative", &vec![0.0; n]) {
                    cert.fail(c);
                }
            }
        }

        let pts = sampler.points(n);
        for &t in &sampler.times {
            cert.points_checked += pts.len() / n;
            let d: &dyn Drift = drift.as_ref();
            let found = falsify(n, t, &pts, || DriftBuf::new(d), |buf, x, out| {
                let b = buf.eval(d, x, t);
                exp_ineqs(&vf, &th, &a, x, b, out)
            });
            if let Some(c) = found {
                cert.fail(c);
            }
        }
    }
    Ok(cert)
}
