//! Ellipticity of `A_N`, the weighted drift mismatch `ε`, and the Jacobian
//! and `Λ`-weighted Lyapunov bounds for the approximant `b`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{falsify, Certificate, ConditionId, Counterexample, DriftBuf, Ineq, SamplerSpec};
use crate::drift::{diffusion_matrix, from_matrix, DiffusionModel, Drift, PolyDrift, DEGENERACY_TOL};
use crate::error::{invalid, FpkError, Result};
use crate::lyapunov::{LyapunovSpec, ThetaSpec};
use crate::solver::observe::{mean_stderr, per_particle};
use crate::solver::{MeasureView, Observer};

/// `γ_N = min(λ_min, 1/λ_max)` for every requested truncation. A
/// degenerate `A_N` fails with the eigenvector of its smallest eigenvalue.
pub fn check_condition_a(diffusion: &DiffusionModel, dims: &[usize]) -> Result<Certificate> {
    let mut cert = Certificate::new(ConditionId::A);
    cert.analytic = true;
    for &n in dims {
        let m = diffusion_matrix(diffusion, n)?;
        let gamma = m.gamma();
        cert.set(format!("gamma_{n}"), gamma);
        if gamma <= DEGENERACY_TOL {
            let eig = SymmetricEigen::new(m.a.clone());
            let i = eig.eigenvalues.imin();
            let y: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            // |y|² ≤ ⟨Ay, y⟩/γ with the smallest admissible γ.
            cert.fail(Counterexample {
                x: y,
                t: 0.0,
                inequality: "ellipticity".into(),
                lhs: 1.0,
                rhs: eig.eigenvalues[i] / DEGENERACY_TOL,
            });
        }
    }
    Ok(cert)
}

/// Monte Carlo estimate of `∫₀ᵀ∫|A_N^{−1/2}(B_N − b)|² dμ_t dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CondBEstimate {
    pub eps: f64,
    pub stderr: f64,
    pub horizon: f64,
    pub atoms: usize,
    /// Point with the largest pointwise mismatch seen during the run.
    pub worst_x: Vec<f64>,
    pub worst_t: f64,
    pub worst_value: f64,
}

impl CondBEstimate {
    /// Passes when `ε + 3·stderr ≤ target`.
    pub fn certificate(&self, target: f64) -> Certificate {
        let mut cert = Certificate::new(ConditionId::B);
        cert.set("eps", self.eps);
        cert.set("eps_stderr", self.stderr);
        cert.set("target", target);
        cert.points_checked = self.atoms;
        let upper = self.eps + 3.0 * self.stderr;
        if super::violates(upper, target) {
            cert.fail(Counterexample {
                x: self.worst_x.clone(),
                t: self.worst_t,
                inequality: "condition-b".into(),
                lhs: upper,
                rhs: target,
            });
        }
        cert
    }
}

/// Observer accumulating the weighted mismatch between the forward drift
/// (on its first `N` coordinates) and an approximant `b` on `ℝ^N`.
pub struct CondBError<'a> {
    forward: &'a dyn Drift,
    approx: &'a dyn Drift,
    a_inv_sqrt: DMatrix<f64>,
    t_last: Option<f64>,
    prev: Vec<f64>,
    integral: Vec<f64>,
    cur: Vec<f64>,
    worst: (f64, Vec<f64>, f64),
}

struct Buffers {
    big: DriftBuf,
    small: DriftBuf,
    d: DVector<f64>,
}

impl<'a> CondBError<'a> {
    /// `a` is the forward diffusion; its leading `N×N` block is used.
    pub fn new(forward: &'a dyn Drift, approx: &'a dyn Drift, a: &DMatrix<f64>) -> Result<Self> {
        let n = approx.dim();
        if forward.dim() < n || a.nrows() != forward.dim() {
            return Err(FpkError::DimensionMismatch {
                expected: forward.dim(),
                actual: a.nrows(),
            });
        }
        let block = a.view((0, 0), (n, n)).into_owned();
        let a_inv_sqrt = from_matrix(block)?.inverse_sqrt()?;
        Ok(Self {
            forward,
            approx,
            a_inv_sqrt,
            t_last: None,
            prev: Vec::new(),
            integral: Vec::new(),
            cur: Vec::new(),
            worst: (f64::NEG_INFINITY, Vec::new(), 0.0),
        })
    }

    fn buffers(&self) -> Buffers {
        Buffers {
            big: DriftBuf::new(self.forward),
            small: DriftBuf::new(self.approx),
            d: DVector::zeros(self.approx.dim()),
        }
    }

    fn mismatch(&self, s: &mut Buffers, x: &[f64], t: f64) -> f64 {
        let n = self.approx.dim();
        let big = s.big.eval(self.forward, x, t);
        for k in 0..n {
            s.d[k] = big[k];
        }
        let small = s.small.eval(self.approx, &x[..n], t);
        for k in 0..n {
            s.d[k] -= small[k];
        }
        (&self.a_inv_sqrt * &s.d).norm_squared()
    }

    pub fn estimate(&self) -> Result<CondBEstimate> {
        let horizon = self
            .t_last
            .ok_or_else(|| invalid("condition-b observer saw no time level"))?;
        let (eps, stderr) = mean_stderr(&self.integral);
        Ok(CondBEstimate {
            eps,
            stderr,
            horizon,
            atoms: self.integral.len(),
            worst_x: self.worst.1.clone(),
            worst_t: self.worst.2,
            worst_value: self.worst.0,
        })
    }
}

impl Observer for CondBError<'_> {
    fn observe(&mut self, t: f64, view: &MeasureView<'_>) -> Result<()> {
        if view.dim() != self.forward.dim() {
            return Err(FpkError::DimensionMismatch {
                expected: self.forward.dim(),
                actual: view.dim(),
            });
        }
        let mut cur = std::mem::take(&mut self.cur);
        let mut s = self.buffers();
        let worst = match view {
            MeasureView::Particles { dim, positions, .. } => {
                per_particle(*dim, positions, 1, &mut cur, || self.buffers(), |s, _, x, o| {
                    o[0] = self.mismatch(s, x, t)
                });
                let (i, v) = cur
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |b, (i, v)| if *v > b.1 { (i, *v) } else { b });
                (v, positions[i * dim..(i + 1) * dim].to_vec())
            }
            MeasureView::Grid(g) => {
                // Linear in the measure: one aggregated atom.
                let mut total = 0.0;
                let mut worst = (f64::NEG_INFINITY, Vec::new());
                for (idx, m) in g.masses().iter().enumerate() {
                    if *m == 0.0 {
                        continue;
                    }
                    let x = g.center(idx);
                    let v = self.mismatch(&mut s, &x, t);
                    total += m * v;
                    if v > worst.0 {
                        worst = (v, x);
                    }
                }
                cur.clear();
                cur.push(total);
                worst
            }
        };
        if worst.0 > self.worst.0 {
            self.worst = (worst.0, worst.1, t);
        }
        match self.t_last {
            None => {
                self.integral = vec![0.0; cur.len()];
            }
            Some(t0) => {
                let h = 0.5 * (t - t0);
                for ((i, p), c) in self.integral.iter_mut().zip(&self.prev).zip(&cur) {
                    *i += h * (p + c);
                }
            }
        }
        std::mem::swap(&mut self.prev, &mut cur);
        self.cur = cur;
        self.t_last = Some(t);
        Ok(())
    }
}

/// Largest eigenvalue of `(J + Jᵀ)/2`.
pub fn max_sym_eigenvalue(j: &DMatrix<f64>) -> f64 {
    let sym = (j + j.transpose()) * 0.5;
    SymmetricEigen::new(sym).eigenvalues.max()
}

/// Checks `⟨Db(x)h, h⟩ ≤ θ(x)|h|²` through the symmetrized Jacobian, and
/// `L_{a,b}V ≤ (C₀ − Λ)V` with `Λ = 2θ + δ|b|²/(1 + |x|²)` (constant `A`,
/// so no derivative of `σ` enters).
pub fn condbprime_check(
    b: &PolyDrift,
    theta: &ThetaSpec,
    v: &LyapunovSpec,
    diffusion: &DiffusionModel,
    delta: f64,
    c0: f64,
    sampler: &SamplerSpec,
) -> Result<Certificate> {
    sampler.validate()?;
    if !(delta.is_finite() && delta >= 0.0) {
        return Err(invalid("delta must be nonnegative"));
    }
    let n = b.dim();
    let a = diffusion.matrix(n)?;
    let vf = v.on(n)?;
    let th = theta.on(n)?;
    let mut cert = Certificate::new(ConditionId::BPrime);
    cert.set("C0", c0);
    cert.set("delta", delta);
    cert.theta = Some(theta.clone());
    cert.sampler = Some(sampler.clone());
    let pts = sampler.points(n);
    let d: &dyn Drift = b;
    for &t in &sampler.times {
        cert.points_checked += pts.len() / n;
        let found = falsify(n, t, &pts, || DriftBuf::new(d), |buf, x, out| {
            let bx = buf.eval(d, x, t);
            let theta_x = th.value(x);
            out.push(Ineq {
                name: "jacobian",
                lhs: max_sym_eigenvalue(&d.jacobian(x, t)),
                rhs: theta_x,
            });
            let r2: f64 = x.iter().map(|v| v * v).sum();
            let b2: f64 = bx.iter().map(|v| v * v).sum();
            let lambda = 2.0 * theta_x + delta * b2 / (1.0 + r2);
            let factor = vf.generator_factor(x, bx, &a);
            let (lhs, rhs) = if vf.is_exponential() {
                (factor, c0 - lambda)
            } else {
                (factor, (c0 - lambda) * vf.value(x))
            };
            out.push(Ineq {
                name: "lyapunov-lambda",
                lhs,
                rhs,
            });
        });
        if let Some(c) = found {
            cert.fail(c);
        }
    }
    Ok(cert)
}

/// Smallest `C₀` the closed form supports for `b = −diag(r)x`, exponential
/// `V = exp(Σd_k x_k²)`, diagonal `A` and constant `θ`:
/// `C₀ = 2Σα_k d_k + 2θ + δ·max r_k²`, valid when `4d_k²α_k ≤ 2d_k r_k`.
/// Saturation of `b` is ignored, so the value holds on `|x_k| ≤ R − 1`.
pub fn suggest_c0_bprime(
    b: &PolyDrift,
    theta: f64,
    v: &LyapunovSpec,
    diffusion: &DiffusionModel,
    delta: f64,
) -> Option<f64> {
    if !v.is_exponential() || !diffusion.is_diagonal() {
        return None;
    }
    let n = b.dim();
    let mut rates = Vec::with_capacity(n);
    for (i, comp) in b.components().iter().enumerate() {
        let mut r = 0.0;
        for term in comp.terms() {
            let own = term.powers.iter().enumerate().all(|(j, p)| if j == i { *p == 1 } else { *p == 0 });
            if !own {
                return None;
            }
            r -= term.coeff;
        }
        rates.push(r);
    }
    let vf = v.on(n).ok()?;
    let alpha = diffusion.matrix(n).ok()?;
    let mut c0 = 2.0 * theta + delta * rates.iter().map(|r| r * r).fold(0.0, f64::max);
    for k in 0..n {
        let d = vf.kappa() * vf.weights()[k];
        let a = alpha[(k, k)];
        if 4.0 * d * d * a > 2.0 * d * rates[k] {
            return None;
        }
        c0 += 2.0 * a * d;
    }
    Some(c0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{DriftModel, EmbeddedDrift, GalerkinDrift, Polynomial};
    use crate::solver::{solve_forward_observed, InitialLaw, SolveConfig, DEFAULT_GUARD_RADIUS};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn small() -> SamplerSpec {
        SamplerSpec {
            points_per_scale: 500,
            ..SamplerSpec::default()
        }
    }

    #[test]
    fn condition_a() {
        let ok = check_condition_a(&DiffusionModel::PowerLaw { scale: 1.0, power: 2.0 }, &[2, 4]).unwrap();
        assert!(ok.passed());
        assert_relative_eq!(ok.constant("gamma_4").unwrap(), 1.0 / 16.0, epsilon = 1e-12);
        let bad = check_condition_a(&DiffusionModel::diagonal(vec![1.0, 0.0]), &[2]).unwrap();
        let c = bad.counterexample.unwrap();
        assert_relative_eq!(c.x[1].abs(), 1.0, epsilon = 1e-12);
        assert!(super::super::violates(c.lhs, c.rhs));
    }

    fn config(horizon: f64, dt: f64, particles: usize, initial: InitialLaw) -> SolveConfig {
        SolveConfig {
            dt,
            horizon,
            particles,
            seed: 11,
            initial,
            checkpoints: Vec::new(),
            guard_radius: DEFAULT_GUARD_RADIUS,
            moments: None,
        }
    }

    #[test]
    fn matched_approximant_has_zero_error() {
        let model = DriftModel::ou_laplacian();
        let d = model.discretize(2).unwrap();
        let diff = diffusion_matrix(&DiffusionModel::diagonal(vec![1.0, 1.0]), 2).unwrap();
        let b = PolyDrift::linear_decay(&[PI * PI, 4.0 * PI * PI]);
        let mut obs = CondBError::new(d.as_ref(), &b, &diff.a).unwrap();
        let cfg = config(0.1, 1e-3, 200, InitialLaw::Gaussian { mean: vec![], variance: vec![0.5] });
        solve_forward_observed(&cfg, d.as_ref(), &diff, &mut [&mut obs]).unwrap();
        let e = obs.estimate().unwrap();
        assert!(e.eps < 1e-20, "{e:?}");
        assert!(e.certificate(1e-3).passed());
        assert!(!e.certificate(-1.0).passed());
    }

    #[test]
    fn dropped_mode_matches_ou_second_moment() {
        // ε = (λ₂⁴/α) ∫₀ᵀ E x₂(t)² dt for x₂ an OU process started at x0.
        let (alpha, x0, horizon) = (1.0, 0.3, 0.2);
        let r = 4.0 * PI * PI;
        let model = DriftModel::ou_laplacian();
        let d = model.discretize(2).unwrap();
        let diff = diffusion_matrix(&DiffusionModel::diagonal(vec![alpha, alpha]), 2).unwrap();
        let b = PolyDrift::linear_decay(&[PI * PI, 0.0]);
        let mut obs = CondBError::new(d.as_ref(), &b, &diff.a).unwrap();
        let cfg = config(horizon, 1e-4, 4000, InitialLaw::PointMass { x: vec![0.0, x0] });
        solve_forward_observed(&cfg, d.as_ref(), &diff, &mut [&mut obs]).unwrap();
        let e = obs.estimate().unwrap();
        let decay = (1.0 - (-2.0 * r * horizon).exp()) / (2.0 * r);
        let second = x0 * x0 * decay + alpha / r * (horizon - decay);
        let exact = r * r / alpha * second;
        assert!((e.eps - exact).abs() <= 3.0 * e.stderr + 5e-3 * exact, "{} vs {exact} ± {}", e.eps, e.stderr);
    }

    #[test]
    fn singular_diffusion_is_rejected() {
        let model = DriftModel::ou_laplacian();
        let d = model.discretize(2).unwrap();
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!(matches!(CondBError::new(d.as_ref(), d.as_ref(), &a), Err(FpkError::SingularDiffusion(_))));
    }

    #[test]
    fn burgers_error_shrinks_with_approximant_size() {
        let n = 16;
        let forward = GalerkinDrift::new(DriftModel::Burgers, n).unwrap();
        let rates = forward.rates().to_vec();
        let diff = diffusion_matrix(&DiffusionModel::PowerLaw { scale: 1.0, power: 2.0 }, n).unwrap();
        let approx: Vec<EmbeddedDrift<GalerkinDrift>> = [8, 12, 16]
            .iter()
            .map(|&m| EmbeddedDrift::new(GalerkinDrift::new(DriftModel::Burgers, m).unwrap(), rates[m..].to_vec()))
            .collect();
        let mut obs: Vec<CondBError> = approx
            .iter()
            .map(|b| CondBError::new(&forward, b, &diff.a).unwrap())
            .collect();
        let cfg = config(0.01, 1e-4, 300, InitialLaw::PointMass { x: vec![3.0, -2.0, 1.0] });
        let mut refs: Vec<&mut dyn Observer> = obs.iter_mut().map(|o| o as &mut dyn Observer).collect();
        solve_forward_observed(&cfg, &forward, &diff, &mut refs).unwrap();
        let eps: Vec<CondBEstimate> = obs.iter().map(|o| o.estimate().unwrap()).collect();
        assert!(eps[0].eps > eps[1].eps + 3.0 * (eps[0].stderr + eps[1].stderr), "{eps:?}");
        assert!(eps[1].eps > 0.0 && eps[2].eps < 1e-20, "{eps:?}");
    }

    /// Adds `c_i sin(x_i)` to every coordinate of `inner`.
    struct Perturbed<'a> {
        inner: &'a dyn Drift,
        c: Vec<f64>,
    }

    impl Drift for Perturbed<'_> {
        fn dim(&self) -> usize {
            self.inner.dim()
        }
        fn scratch_len(&self) -> usize {
            self.inner.scratch_len()
        }
        fn eval(&self, x: &[f64], t: f64, out: &mut [f64], scratch: &mut [f64]) {
            self.inner.eval(x, t, out, scratch);
            for ((o, c), xi) in out.iter_mut().zip(&self.c).zip(x) {
                *o += c * xi.sin();
            }
        }
        fn jacobian(&self, x: &[f64], t: f64) -> DMatrix<f64> {
            let mut j = self.inner.jacobian(x, t);
            for (i, c) in self.c.iter().enumerate() {
                j[(i, i)] += c * x[i].cos();
            }
            j
        }
    }

    fn run_levels(obs: &mut CondBError, levels: &[Vec<f64>]) {
        for (i, p) in levels.iter().enumerate() {
            let view = MeasureView::Particles {
                dim: 2,
                positions: p,
                noise: None,
            };
            obs.observe(0.1 * i as f64, &view).unwrap();
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn error_ignores_common_perturbations(
            c in proptest::collection::vec(-5.0f64..5.0, 2),
            pts in proptest::collection::vec(-2.0f64..2.0, 12),
        ) {
            let forward = DriftModel::Burgers.discretize(2).unwrap();
            let b = PolyDrift::linear_decay(&[PI * PI, 4.0 * PI * PI]);
            let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.7, 0.3]));
            let levels: Vec<Vec<f64>> = pts.chunks(4).map(|c| c.to_vec()).collect();
            let mut plain = CondBError::new(forward.as_ref(), &b, &a).unwrap();
            run_levels(&mut plain, &levels);
            let fp = Perturbed { inner: forward.as_ref(), c: c.clone() };
            let bp = Perturbed { inner: &b, c };
            let mut shifted = CondBError::new(&fp, &bp, &a).unwrap();
            run_levels(&mut shifted, &levels);
            let (e0, e1) = (plain.estimate().unwrap().eps, shifted.estimate().unwrap().eps);
            prop_assert!((e0 - e1).abs() <= 1e-9 * e0.abs().max(1e-12));
        }
    }

    fn ou_b() -> PolyDrift {
        PolyDrift::linear_decay(&[1.0]).with_saturation(None)
    }

    #[test]
    fn ou_bprime_passes_with_suggested_c0() {
        let v = LyapunovSpec::ExpQuadratic { kappa: 0.25, beta: vec![1.0] };
        let diff = DiffusionModel::diagonal(vec![0.5]);
        let c0 = suggest_c0_bprime(&ou_b(), 0.0, &v, &diff, 0.1).unwrap();
        assert_relative_eq!(c0, 2.0 * 0.5 * 0.25 + 0.1, epsilon = 1e-15);
        let cert = condbprime_check(&ou_b(), &ThetaSpec::Zero, &v, &diff, 0.1, c0, &small()).unwrap();
        assert!(cert.passed(), "{:?}", cert.counterexample);
        // The supremum of LV/V + Λ is 2αd = 0.25, attained at the origin.
        let low = condbprime_check(&ou_b(), &ThetaSpec::Zero, &v, &diff, 0.1, 0.24, &small()).unwrap();
        assert_eq!(low.counterexample.unwrap().x, vec![0.0]);
    }

    #[test]
    fn theta_below_the_jacobian_fails() {
        let v = LyapunovSpec::ExpQuadratic { kappa: 0.25, beta: vec![1.0] };
        let diff = DiffusionModel::diagonal(vec![0.5]);
        let cert = condbprime_check(&ou_b(), &ThetaSpec::constant(-10.0), &v, &diff, 0.1, 100.0, &small()).unwrap();
        let c = cert.counterexample.unwrap();
        assert_eq!(c.inequality, "jacobian");
        assert_eq!((c.lhs, c.rhs), (-1.0, -10.0));
    }

    #[test]
    fn symmetrized_eigenvalue_matches_closed_form() {
        let b = DriftModel::Burgers.galerkin_polynomial(2, 0.0).unwrap();
        let j = b.jacobian(&[1.0, 0.0], 0.0);
        let (p, q, r) = (j[(0, 0)], 0.5 * (j[(0, 1)] + j[(1, 0)]), j[(1, 1)]);
        let exact = 0.5 * (p + r) + (0.25 * (p - r).powi(2) + q * q).sqrt();
        assert_relative_eq!(max_sym_eigenvalue(&j), exact, epsilon = 1e-10);
        let coupled = PolyDrift::new(vec![Polynomial::linear(&[-1.0, 0.5]), Polynomial::linear(&[0.0, -1.0])]).unwrap();
        let v = LyapunovSpec::ExpWeighted { kappa: 0.1 };
        assert!(suggest_c0_bprime(&coupled, 0.0, &v, &DiffusionModel::Zero, 0.1).is_none());
    }
}
