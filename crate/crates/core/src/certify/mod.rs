//! Certificates for the Lyapunov, growth and drift-approximation
//! hypotheses. A pass means no violation over a documented sampler, plus
//! exact verification wherever the closed form is implemented; a fail
//! always carries a point where the inequality is violated.

mod conditions;
mod growth;
mod lyapunov_checks;
mod moments;

pub use conditions::{
    check_condition_a, condbprime_check, max_sym_eigenvalue, suggest_c0_bprime, CondBError,
    CondBEstimate,
};
pub use growth::{growth_check, GrowthForm, GROWTH_POWERS, GROWTH_TREND};
pub use lyapunov_checks::{check_lyapunov, check_lyapunov_exp};
pub use moments::{
    exponential_bound, initial_moment, moment_bound_check, power_bound, Estimate, MomentCheck,
    MomentCheckRow,
};

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{Drift, DriftModel, DiffusionModel};
use crate::error::{FpkError, Result};
use crate::lyapunov::{LyapunovFn, ThetaSpec};
use crate::rng;

/// Relative violation threshold shared by every check.
pub const SAMPLER_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConditionId {
    /// Uniform ellipticity of `A_N`.
    A,
    /// Weighted `L²` mismatch between `B_N` and the approximant `b`.
    B,
    /// Jacobian bound on `b` and the `Λ`-weighted Lyapunov inequality.
    BPrime,
    /// `Γ(V) ≤ M₀V²` and `LV ≤ C₀V − Θ`.
    Lyapunov,
    /// Coefficient growth against `V^{k_i}(1 + δ(Θ)Θ)`.
    Growth,
    /// `LV ≤ V(1 − Θ)`.
    LyapunovExp,
    /// Coefficient growth against `1 + δ(VΘ)VΘ`.
    GrowthExp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Pass,
    Fail,
}

/// A point where `lhs ≤ rhs` fails by more than [`SAMPLER_TOL`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub x: Vec<f64>,
    pub t: f64,
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
}

/// Fitted `|a^{ij}| + |B^i| ≤ C_i·(…)` for one coordinate (1-based).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub coordinate: usize,
    pub c: f64,
    pub k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub condition: ConditionId,
    pub verdict: Verdict,
    pub constants: BTreeMap<String, f64>,
    /// `Θ` (or `θ` for the Jacobian bound) the certificate refers to.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub envelope: Vec<Envelope>,
    /// Closed-form verification was carried out.
    pub analytic: bool,
    pub counterexample: Option<Counterexample>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
    pub points_checked: usize,
}

impl Certificate {
    pub(crate) fn new(condition: ConditionId) -> Self {
        Self {
            condition,
            verdict: Verdict::Pass,
            constants: BTreeMap::new(),
            theta: None,
            envelope: Vec::new(),
            analytic: false,
            counterexample: None,
            sampler: None,
            points_checked: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn constant(&self, name: &str) -> Option<f64> {
        self.constants.get(name).copied()
    }

    pub(crate) fn set(&mut self, name: impl Into<String>, value: f64) {
        self.constants.insert(name.into(), value);
    }

    /// Records the first failure; later ones are ignored.
    pub(crate) fn fail(&mut self, c: Counterexample) {
        if self.counterexample.is_none() {
            self.verdict = Verdict::Fail;
            self.counterexample = Some(c);
        }
    }
}

/// Whether `lhs ≤ rhs` fails by more than the relative tolerance. NaN on
/// either side counts as a failure.
pub fn violates(lhs: f64, rhs: f64) -> bool {
    if lhs.is_nan() || rhs.is_nan() {
        return true;
    }
    if lhs == rhs {
        return false;
    }
    lhs - rhs > SAMPLER_TOL * 1f64.max(lhs.abs()).max(rhs.abs())
}

fn excess(lhs: f64, rhs: f64) -> f64 {
    if lhs.is_nan() || rhs.is_nan() {
        return f64::INFINITY;
    }
    if lhs == rhs {
        return 0.0;
    }
    (lhs - rhs) / 1f64.max(lhs.abs()).max(rhs.abs())
}

/// Points where the hypotheses are falsified: Gaussians at several scales,
/// the origin, and signed axis rays `±10^e·e_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    #[serde(default = "default_points")]
    pub points_per_scale: usize,
    #[serde(default = "default_scales")]
    pub scales: Vec<f64>,
    #[serde(default = "default_rays")]
    pub ray_exponents: Vec<i32>,
    /// Truncation sizes checked; families with a fixed size use their own.
    #[serde(default = "default_dims")]
    pub dims: Vec<usize>,
    /// Times at which time-dependent coefficients are evaluated.
    #[serde(default = "default_times")]
    pub times: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
}

fn default_points() -> usize {
    10_000
}
fn default_scales() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}
fn default_rays() -> Vec<i32> {
    (-2..=2).collect()
}
fn default_dims() -> Vec<usize> {
    vec![2, 4, 8, 16]
}
fn default_times() -> Vec<f64> {
    vec![0.0]
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            points_per_scale: default_points(),
            scales: default_scales(),
            ray_exponents: default_rays(),
            dims: default_dims(),
            times: default_times(),
            seed: 0,
        }
    }
}

/// Domain tag separating sampler streams from simulation streams.
const SAMPLER_DOMAIN: u64 = 0x5a3d_17c1;

impl SamplerSpec {
    pub fn validate(&self) -> Result<()> {
        if self.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(crate::error::invalid("sampler scales must be positive"));
        }
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(crate::error::invalid("sampler needs positive dimensions"));
        }
        if self.times.is_empty() || self.times.iter().any(|t| !t.is_finite()) {
            return Err(crate::error::invalid("sampler needs finite times"));
        }
        if self.ray_exponents.iter().any(|e| e.abs() > 300) {
            return Err(crate::error::invalid("ray exponents must stay within ±300"));
        }
        Ok(())
    }

    /// Same layout, independent stream.
    pub fn fresh(&self) -> Self {
        Self {
            seed: rng::derive_seed(self.seed, 0xf4e5),
            ..self.clone()
        }
    }

    /// Row-major points in `ℝ^n`: the origin, then the rays, then the
    /// Gaussian clouds.
    pub fn points(&self, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        for k in 0..n {
            for &e in &self.ray_exponents {
                for sign in [1.0, -1.0] {
                    let mut x = vec![0.0; n];
                    x[k] = sign * 10f64.powi(e);
                    out.extend(x);
                }
            }
        }
        let seed = rng::derive_seed(self.seed ^ SAMPLER_DOMAIN, n as u64);
        for (s, &scale) in self.scales.iter().enumerate() {
            let mut cloud = vec![0.0; self.points_per_scale * n];
            rng::fill_normals(seed, s as u64, 0, &mut cloud);
            out.extend(cloud.into_iter().map(|z| z * scale));
        }
        out
    }

    /// Magnitude of the outermost rays, if there are any.
    pub(crate) fn outer_ray(&self) -> Option<f64> {
        self.ray_exponents.iter().max().map(|e| 10f64.powi(*e))
    }
}

/// Drift and diffusion families whose truncations are certified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Coefficients {
    pub drift: DriftModel,
    pub diffusion: DiffusionModel,
}

impl Coefficients {
    /// Truncation sizes the sampler visits for these coefficients.
    pub fn dims(&self, sampler: &SamplerSpec) -> Vec<usize> {
        if let DriftModel::CustomPolynomial { drift } = &self.drift {
            return vec![drift.dim()];
        }
        sampler
            .dims
            .iter()
            .copied()
            .filter(|&n| self.at(n).is_ok())
            .collect()
    }

    pub fn at(&self, n: usize) -> Result<(Box<dyn Drift>, DMatrix<f64>)> {
        Ok((self.drift.discretize(n)?, self.diffusion.matrix(n)?))
    }

    pub(crate) fn checked_dims(&self, sampler: &SamplerSpec) -> Result<Vec<usize>> {
        sampler.validate()?;
        let dims = self.dims(sampler);
        if dims.is_empty() {
            return Err(FpkError::DimensionMismatch {
                expected: sampler.dims.first().copied().unwrap_or(0),
                actual: 0,
            });
        }
        Ok(dims)
    }
}

/// Output and scratch buffers for repeated drift evaluations.
pub(crate) struct DriftBuf {
    pub b: Vec<f64>,
    scratch: Vec<f64>,
}

impl DriftBuf {
    pub fn new(d: &dyn Drift) -> Self {
        Self {
            b: vec![0.0; d.dim()],
            scratch: vec![0.0; d.scratch_len()],
        }
    }

    pub fn eval(&mut self, d: &dyn Drift, x: &[f64], t: f64) -> &[f64] {
        d.eval(x, t, &mut self.b, &mut self.scratch);
        &self.b
    }
}

/// `LV(x, t) = Σ a^{ij}∂_i∂_jV + Σ B^i∂_iV`, exponent clamped on overflow.
pub fn apply_generator(v: &LyapunovFn, drift: &dyn Drift, a: &DMatrix<f64>, x: &[f64], t: f64) -> f64 {
    v.generator(x, &drift.eval_vec(x, t), a)
}

/// `(M_k, N_k)` with `M_k = k(C₀ + (k−1)M₀)` and `N_k = M_k e^{M_k} + 1`.
pub fn constants(k: u32, c0: f64, m0: f64) -> (f64, f64) {
    let kf = f64::from(k);
    let mk = kf * (c0 + (kf - 1.0) * m0);
    (mk, mk * mk.exp() + 1.0)
}

/// One inequality `lhs ≤ rhs` evaluated at a point.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Ineq {
    pub name: &'static str,
    pub lhs: f64,
    pub rhs: f64,
}

/// Evaluates `eval` at every point (in parallel) and returns the worst
/// violation. Ties go to the earliest point so the result does not depend
/// on scheduling.
pub(crate) fn falsify<S, I, F>(
    n: usize,
    t: f64,
    points: &[f64],
    init: I,
    eval: F,
) -> Option<Counterexample>
where
    I: Fn() -> S + Sync + Send,
    F: Fn(&mut S, &[f64], &mut Vec<Ineq>) + Sync + Send,
{
    let worst = points
        .par_chunks(n)
        .enumerate()
        .map_init(
            || (init(), Vec::new()),
            |(s, buf), (i, x)| {
                buf.clear();
                eval(s, x, buf);
                buf.iter()
                    .filter(|q| violates(q.lhs, q.rhs))
                    .map(|q| (excess(q.lhs, q.rhs), i, *q))
                    .fold(None, |acc: Option<(f64, usize, Ineq)>, c| match acc {
                        Some(a) if a.0 >= c.0 => Some(a),
                        _ => Some(c),
                    })
            },
        )
        .reduce(
            || None,
            |a, b| match (a, b) {
                (Some(a), Some(b)) => {
                    if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) {
                        Some(b)
                    } else {
                        Some(a)
                    }
                }
                (a, None) => a,
                (None, b) => b,
            },
        );
    worst.map(|(_, i, q)| Counterexample {
        x: points[i * n..(i + 1) * n].to_vec(),
        t,
        inequality: q.name.to_string(),
        lhs: q.lhs,
        rhs: q.rhs,
    })
}

/// First `c·e_k`, `c = 10^j`, where `check` reports a violation.
pub(crate) fn ray_witness(
    n: usize,
    k: usize,
    check: impl Fn(&[f64]) -> Option<Counterexample>,
) -> Option<Counterexample> {
    (0..=8).find_map(|j| {
        let mut x = vec![0.0; n];
        x[k] = 10f64.powi(j);
        check(&x)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn constants_examples() {
        let (m1, n1) = constants(1, 1.0, 0.0);
        assert_eq!(m1, 1.0);
        assert_relative_eq!(n1, 3.718_281_828_459_045, epsilon = 1e-12);
        assert_eq!(constants(2, 0.0, 0.0), (0.0, 1.0));
        let (m2, n2) = constants(2, 1.0, 1.0);
        assert_eq!(m2, 4.0);
        assert_relative_eq!(n2, 219.392_600_132_576_94, max_relative = 1e-12);
    }

    // Independent form: M_k as a sum of k equal terms, exp by its series.
    fn reference(k: u32, c0: f64, m0: f64) -> (f64, f64) {
        let per = c0 + f64::from(k - 1) * m0;
        let mk: f64 = (0..k).map(|_| per).sum();
        let mut e = 1.0;
        let mut term = 1.0;
        for i in 1..200 {
            term *= mk / f64::from(i);
            e += term;
        }
        (mk, 1.0 + mk * e)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]
        #[test]
        fn constants_match_reference(k in 1u32..6, c0 in 0.0f64..3.0, m0 in 0.0f64..2.0) {
            let (m, n) = constants(k, c0, m0);
            let (mr, nr) = reference(k, c0, m0);
            prop_assert!((m - mr).abs() <= 1e-12 * mr.abs().max(1.0));
            prop_assert!((n - nr).abs() <= 1e-10 * nr.abs().max(1.0));
        }
    }

    #[test]
    fn sampler_layout() {
        let s = SamplerSpec {
            points_per_scale: 10,
            ..SamplerSpec::default()
        };
        let p = s.points(3);
        assert_eq!(p.len(), 3 * (1 + 3 * 5 * 2 + 30));
        assert!(p[..3].iter().all(|v| *v == 0.0));
        assert_eq!(&p[3..6], &[0.01, 0.0, 0.0]);
        assert_eq!(p, s.points(3));
        assert_ne!(p, s.fresh().points(3));
        assert_eq!(s.outer_ray(), Some(100.0));
    }

    #[test]
    fn tolerance_is_relative() {
        assert!(!violates(1.0 + 1e-12, 1.0));
        assert!(violates(1.0 + 1e-6, 1.0));
        assert!(!violates(1e12 + 1.0, 1e12));
        assert!(violates(f64::NAN, 0.0));
    }

    #[test]
    fn falsify_reports_the_worst_point() {
        let pts = vec![0.0, 1.0, 3.0, 2.0];
        let c = falsify(1, 0.0, &pts, || (), |_, x, out| {
            out.push(Ineq {
                name: "x <= 0.5",
                lhs: x[0],
                rhs: 0.5,
            })
        })
        .unwrap();
        assert_eq!(c.x, vec![3.0]);
        assert!(falsify(1, 0.0, &pts, || (), |_, x, out| out.push(Ineq {
            name: "x <= 3",
            lhs: x[0],
            rhs: 3.0
        }))
        .is_none());
    }

    #[test]
    fn certificate_json_round_trip() {
        let mut c = Certificate::new(ConditionId::BPrime);
        c.set("C0", 1.5);
        c.fail(Counterexample {
            x: vec![1.0],
            t: 0.0,
            inequality: "jacobian".into(),
            lhs: 1.0,
            rhs: 0.0,
        });
        c.sampler = Some(SamplerSpec::default());
        let s = serde_json::to_string(&c).unwrap();
        assert!(s.contains("\"b-prime\"") && s.contains("\"fail\""));
        let back: Certificate = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
    }
}
