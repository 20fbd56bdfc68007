//! Statistics accumulated along a forward run: Lyapunov moments and the
//! weak-formulation residual.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::drift::{Drift, Polynomial};
use crate::error::{invalid, FpkError, Result};
use crate::lyapunov::{LyapunovFn, LyapunovSpec, ThetaFn, ThetaSpec};

use super::grid::GridDensity;

/// The measure `μ_t` at one time level.
pub enum MeasureView<'a> {
    /// Equally weighted particles, row-major. `noise` holds the increments
    /// `√(2A·dt)ξ` of the step that produced this level (absent at `t = 0`).
    Particles {
        dim: usize,
        positions: &'a [f64],
        noise: Option<&'a [f64]>,
    },
    Grid(&'a GridDensity),
}

impl MeasureView<'_> {
    pub fn dim(&self) -> usize {
        match self {
            MeasureView::Particles { dim, .. } => *dim,
            MeasureView::Grid(g) => g.dim(),
        }
    }
}

/// Receives every time level of a forward run.
pub trait Observer {
    fn observe(&mut self, t: f64, view: &MeasureView<'_>) -> Result<()>;

    /// Called right after [`Observer::observe`] at checkpoint levels.
    fn checkpoint(&mut self, _t: f64) -> Result<()> {
        Ok(())
    }
}

/// Mean and standard error of per-atom values.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Evaluates `f` on every particle in parallel, writing `width` values per
/// particle into `out`. `init` builds per-worker scratch.
pub(crate) fn per_particle<I, T, F>(
    dim: usize,
    positions: &[f64],
    width: usize,
    out: &mut Vec<f64>,
    init: I,
    f: F,
) where
    I: Fn() -> T + Sync + Send,
    F: Fn(&mut T, usize, &[f64], &mut [f64]) + Sync + Send,
{
    let p = positions.len() / dim;
    out.resize(p * width, 0.0);
    out.par_chunks_mut(width)
        .zip(positions.par_chunks(dim))
        .enumerate()
        .for_each_init(init, |scratch, (i, (o, x))| f(scratch, i, x, o));
}

/// Which `k` to track and with which `V`, `Θ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MomentSpec {
    pub v: LyapunovSpec,
    pub theta: ThetaSpec,
    pub ks: Vec<u32>,
    #[serde(default)]
    pub form: MomentForm,
}

/// Which combination of moment and dissipation integral is tracked.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentForm {
    /// `∫V^k dμ_t + k∫₀ᵗ∫V^{k−1}Θ dμ_s ds`, for polynomial-type `V`.
    #[default]
    Power,
    /// `∫V^k dμ_t + ∫₀ᵗ∫V^kΘ dμ_s ds`, for exponential `V`.
    Exponential,
}

/// One row of the moment report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub t: f64,
    pub k: u32,
    /// `∫V^k dμ_t`.
    pub moment: f64,
    /// `k∫₀ᵗ∫V^{k−1}Θ dμ_s ds`, or `∫₀ᵗ∫V^kΘ dμ_s ds` in the exponential
    /// form.
    pub running_integral: f64,
    /// Standard error of `moment + running_integral`.
    pub stderr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MomentReport {
    pub rows: Vec<MomentRow>,
}

impl MomentReport {
    pub fn for_k(&self, k: u32) -> impl Iterator<Item = &MomentRow> {
        self.rows.iter().filter(move |r| r.k == k)
    }
}

/// Tracks `∫V^k dμ_t` and `k∫∫V^{k−1}Θ` with trapezoidal time integration at
/// every level. Particle runs integrate along each path so the standard error
/// covers the sum.
pub struct MomentTracker {
    v: LyapunovFn,
    theta: ThetaFn,
    ks: Vec<u32>,
    form: MomentForm,
    t_last: Option<f64>,
    last: Vec<f64>,
    cur: Vec<f64>,
    integral: Vec<f64>,
    report: MomentReport,
}

impl MomentTracker {
    pub fn new(spec: &MomentSpec, n: usize) -> Result<Self> {
        if spec.ks.is_empty() || spec.ks.contains(&0) {
            return Err(invalid("moment orders k must be >= 1"));
        }
        Ok(Self {
            v: spec.v.on(n)?,
            theta: spec.theta.on(n)?,
            ks: spec.ks.clone(),
            form: spec.form,
            t_last: None,
            last: Vec::new(),
            cur: Vec::new(),
            integral: Vec::new(),
            report: MomentReport::default(),
        })
    }

    pub fn report(&self) -> &MomentReport {
        &self.report
    }

    pub fn into_report(self) -> MomentReport {
        self.report
    }

    /// Writes `V^k` then the dissipation integrand for each tracked `k`.
    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let vx = self.v.value(x);
        let th = self.theta.value(x);
        let nk = self.ks.len();
        for (i, &k) in self.ks.iter().enumerate() {
            out[i] = vx.powi(k as i32);
            out[nk + i] = match self.form {
                MomentForm::Power => vx.powi(k as i32 - 1) * th,
                MomentForm::Exponential => out[i] * th,
            };
        }
    }
}

impl Observer for MomentTracker {
    fn observe(&mut self, t: f64, view: &MeasureView<'_>) -> Result<()> {
        let nk = self.ks.len();
        let width = 2 * nk;
        let mut cur = std::mem::take(&mut self.cur);
        match view {
            MeasureView::Particles { dim, positions, .. } => {
                per_particle(*dim, positions, width, &mut cur, || (), |_, _, x, o| {
                    self.eval(x, o)
                });
            }
            MeasureView::Grid(g) => {
                cur.clear();
                cur.resize(width, 0.0);
                let mut buf = vec![0.0; width];
                for (idx, m) in g.masses().iter().enumerate() {
                    if *m == 0.0 {
                        continue;
                    }
                    self.eval(&g.center(idx), &mut buf);
                    for (c, b) in cur.iter_mut().zip(&buf) {
                        *c += m * b;
                    }
                }
            }
        }
        self.cur = cur;
        if self.integral.len() != self.cur.len() / width * nk {
            self.integral = vec![0.0; self.cur.len() / width * nk];
        }
        if let Some(t0) = self.t_last {
            let h = 0.5 * (t - t0);
            for ((acc, last), cur) in self
                .integral
                .chunks_mut(nk)
                .zip(self.last.chunks(width))
                .zip(self.cur.chunks(width))
            {
                for i in 0..nk {
                    acc[i] += h * (last[nk + i] + cur[nk + i]);
                }
            }
        }
        std::mem::swap(&mut self.last, &mut self.cur);
        self.t_last = Some(t);
        Ok(())
    }

    fn checkpoint(&mut self, t: f64) -> Result<()> {
        let nk = self.ks.len();
        let width = 2 * nk;
        let atoms = self.last.len() / width;
        for (i, &k) in self.ks.iter().enumerate() {
            let kf = match self.form {
                MomentForm::Power => k as f64,
                MomentForm::Exponential => 1.0,
            };
            let moments: Vec<f64> = self.last.chunks(width).map(|r| r[i]).collect();
            let integrals: Vec<f64> = self.integral.chunks(nk).map(|r| kf * r[i]).collect();
            let (moment, running_integral, stderr) = if atoms == 1 {
                (moments[0], integrals[0], 0.0)
            } else {
                let sums: Vec<f64> = moments.iter().zip(&integrals).map(|(a, b)| a + b).collect();
                let (m, _) = mean_stderr(&moments);
                let (r, _) = mean_stderr(&integrals);
                let (_, se) = mean_stderr(&sums);
                (m, r, se)
            };
            if !(moment.is_finite() && running_integral.is_finite()) {
                return Err(invalid(format!("moment k = {k} overflowed at t = {t}")));
            }
            self.report.rows.push(MomentRow {
                t,
                k,
                moment,
                running_integral,
                stderr,
            });
        }
        Ok(())
    }
}

/// Septic smoothstep `35u⁴ − 84u⁵ + 70u⁶ − 20u⁷` and its first two
/// derivatives, clamped to `[0, 1]`.
fn smoothstep7(u: f64) -> (f64, f64, f64) {
    if u <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if u >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    let v = 1.0 - u;
    let s = u.powi(4) * (35.0 - 84.0 * u + 70.0 * u * u - 20.0 * u.powi(3));
    let d1 = 140.0 * u.powi(3) * v.powi(3);
    let d2 = 420.0 * u * u * v * v * (1.0 - 2.0 * u);
    (s, d1, d2)
}

/// `φ(x) = p(x)·w(x)`: a polynomial in at most three coordinates times a
/// smooth radial bump in those coordinates (`w = 1` for `r ≤ R/2`, `w = 0`
/// for `r ≥ R`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    poly: Polynomial,
    coords: Vec<usize>,
    radius: f64,
}

/// Maximum number of coordinates a test function may depend on.
pub const MAX_TEST_COORDS: usize = 3;

impl TestFunction {
    pub fn new(poly: Polynomial, radius: f64) -> Result<Self> {
        if poly.degree() > 4 {
            return Err(invalid("test polynomial degree must be <= 4"));
        }
        let mut coords = poly.used_coords();
        if coords.is_empty() {
            coords.push(0);
        }
        if coords.len() > MAX_TEST_COORDS {
            return Err(invalid("test function may use at most 3 coordinates"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(invalid("bump radius must be positive"));
        }
        Ok(Self {
            poly,
            coords,
            radius,
        })
    }

    /// `c·x_k²` windowed by the bump.
    pub fn windowed_square(dim: usize, k: usize, radius: f64) -> Result<Self> {
        Self::new(Polynomial::power(dim, k, 2, 1.0), radius)
    }

    pub fn dim(&self) -> usize {
        self.poly.dim()
    }

    pub fn coords(&self) -> &[usize] {
        &self.coords
    }

    /// `(w, ∂w/∂x_c, ∂²w/∂x_c∂x_d)` over the bump coordinates.
    fn bump(&self, x: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let s = self.coords.len();
        let r2: f64 = self.coords.iter().map(|&c| x[c] * x[c]).sum();
        let r = r2.sqrt();
        let half = 0.5 * self.radius;
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        if r <= half {
            return (1.0, g, h);
        }
        if r >= self.radius {
            return (0.0, g, h);
        }
        let (sv, d1, d2) = smoothstep7((r - half) / half);
        let w = 1.0 - sv;
        let w1 = -d1 / half;
        let w2 = -d2 / (half * half);
        for a in 0..s {
            let xa = x[self.coords[a]];
            g[a] = w1 * xa / r;
            for b in 0..s {
                let xb = x[self.coords[b]];
                let delta = if a == b { 1.0 } else { 0.0 };
                h[a][b] = w2 * xa * xb / r2 + w1 * (delta / r - xa * xb / (r2 * r));
            }
        }
        (w, g, h)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let (w, _, _) = self.bump(x);
        if w == 0.0 {
            0.0
        } else {
            w * self.poly.eval(x)
        }
    }

    /// `φ`, `∂_cφ` and `∂_c∂_dφ` over [`TestFunction::coords`].
    pub fn local(&self, x: &[f64]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let s = self.coords.len();
        let (w, wg, wh) = self.bump(x);
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        if w == 0.0 {
            return (0.0, g, h);
        }
        let p = self.poly.eval(x);
        let mut pg = [0.0; 3];
        for a in 0..s {
            pg[a] = self.poly.partial(x, self.coords[a]);
            g[a] = w * pg[a] + p * wg[a];
        }
        for a in 0..s {
            for b in 0..s {
                let ph = self.poly.second_partial(x, self.coords[a], self.coords[b]);
                h[a][b] = w * ph + pg[a] * wg[b] + wg[a] * pg[b] + p * wh[a][b];
            }
        }
        (w * p, g, h)
    }

    /// `φ(x)`, `Lφ(x)` for drift value `b` and diffusion `a`, and the local
    /// gradient.
    pub fn generator(&self, x: &[f64], b: &[f64], a: &DMatrix<f64>) -> (f64, f64, [f64; 3]) {
        let (v, g, h) = self.local(x);
        let mut l = 0.0;
        for (ai, &ci) in self.coords.iter().enumerate() {
            l += b[ci] * g[ai];
            for (bi, &cj) in self.coords.iter().enumerate() {
                l += a[(ci, cj)] * h[ai][bi];
            }
        }
        (v, l, g)
    }
}

/// One checkpoint of the weak residual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualRow {
    pub t: f64,
    /// `∫φdμ_t − ∫φdν − ∫₀ᵗ∫Lφ dμ_s ds`.
    pub residual: f64,
    pub stderr: f64,
    /// Same with the discrete Itô martingale `Σ∇φ(X_n)·ΔW_n` subtracted per
    /// path (zero mean, much smaller variance). Equal to `residual` for grids.
    pub residual_cv: f64,
    pub stderr_cv: f64,
}

/// Accumulates the weak-formulation defect of a forward run for one
/// time-independent test function.
pub struct WeakResidual<'a> {
    phi: TestFunction,
    drift: &'a dyn Drift,
    a: DMatrix<f64>,
    t_last: Option<f64>,
    /// Per atom: `φ(X_0)`, `φ(X_t)`, last `Lφ`, `∫Lφ`, martingale sum.
    state: Vec<f64>,
    /// Per atom: last local gradient (3 entries).
    grad: Vec<f64>,
    cur: Vec<f64>,
    rows: Vec<ResidualRow>,
}

const W_PHI0: usize = 0;
const W_PHI: usize = 1;
const W_LPHI: usize = 2;
const W_INT: usize = 3;
const W_CV: usize = 4;
const W_WIDTH: usize = 5;

impl<'a> WeakResidual<'a> {
    pub fn new(phi: TestFunction, drift: &'a dyn Drift, a: DMatrix<f64>) -> Result<Self> {
        if phi.dim() != drift.dim() || a.nrows() != drift.dim() {
            return Err(FpkError::DimensionMismatch {
                expected: drift.dim(),
                actual: phi.dim(),
            });
        }
        Ok(Self {
            phi,
            drift,
            a,
            t_last: None,
            state: Vec::new(),
            grad: Vec::new(),
            cur: Vec::new(),
            rows: Vec::new(),
        })
    }

    pub fn rows(&self) -> &[ResidualRow] {
        &self.rows
    }

    /// `max_t |residual|` over checkpoints (plain estimator).
    pub fn max_residual(&self) -> f64 {
        self.rows.iter().map(|r| r.residual.abs()).fold(0.0, f64::max)
    }

    /// `max_t |residual_cv|` over checkpoints.
    pub fn max_residual_cv(&self) -> f64 {
        self.rows.iter().map(|r| r.residual_cv.abs()).fold(0.0, f64::max)
    }
}

impl Observer for WeakResidual<'_> {
    fn observe(&mut self, t: f64, view: &MeasureView<'_>) -> Result<()> {
        let (phi, drift, a) = (&self.phi, self.drift, &self.a);
        let n = drift.dim();
        let init = || (vec![0.0; n], vec![0.0; drift.scratch_len()]);
        let eval = |(b, scratch): &mut (Vec<f64>, Vec<f64>), x: &[f64], o: &mut [f64]| {
            drift.eval(x, t, b, scratch);
            let (v, l, g) = phi.generator(x, b, a);
            o[0] = v;
            o[1] = l;
            o[2..5].copy_from_slice(&g);
        };
        match view {
            MeasureView::Particles { dim, positions, .. } => {
                per_particle(*dim, positions, 5, &mut self.cur, init, |s, _, x, o| eval(s, x, o));
            }
            MeasureView::Grid(g) => {
                // Grids integrate against masses: keep a single aggregated atom.
                self.cur.clear();
                self.cur.resize(5, 0.0);
                let mut buf = [0.0; 5];
                let mut scratch = init();
                for (idx, m) in g.masses().iter().enumerate() {
                    if *m == 0.0 {
                        continue;
                    }
                    eval(&mut scratch, &g.center(idx), &mut buf);
                    self.cur[0] += m * buf[0];
                    self.cur[1] += m * buf[1];
                }
            }
        }
        let atoms = self.cur.len() / 5;
        let noise = match view {
            MeasureView::Particles { noise, .. } => *noise,
            MeasureView::Grid(_) => None,
        };
        let first = self.t_last.is_none();
        if first {
            self.state = vec![0.0; atoms * W_WIDTH];
            self.grad = vec![0.0; atoms * 3];
        }
        let h = self.t_last.map_or(0.0, |t0| 0.5 * (t - t0));
        let coords = self.phi.coords().to_vec();
        self.state
            .par_chunks_mut(W_WIDTH)
            .zip(self.grad.par_chunks_mut(3))
            .zip(self.cur.par_chunks(5))
            .enumerate()
            .for_each(|(i, ((s, g), c))| {
                if first {
                    s[W_PHI0] = c[0];
                } else {
                    s[W_INT] += h * (s[W_LPHI] + c[1]);
                    if let Some(dw) = noise {
                        let row = &dw[i * n..(i + 1) * n];
                        s[W_CV] += coords
                            .iter()
                            .enumerate()
                            .map(|(a, &k)| g[a] * row[k])
                            .sum::<f64>();
                    }
                }
                s[W_PHI] = c[0];
                s[W_LPHI] = c[1];
                g.copy_from_slice(&c[2..5]);
            });
        self.t_last = Some(t);
        Ok(())
    }

    fn checkpoint(&mut self, t: f64) -> Result<()> {
        let plain: Vec<f64> = self
            .state
            .chunks(W_WIDTH)
            .map(|s| s[W_PHI] - s[W_PHI0] - s[W_INT])
            .collect();
        let cv: Vec<f64> = self
            .state
            .chunks(W_WIDTH)
            .zip(&plain)
            .map(|(s, p)| p - s[W_CV])
            .collect();
        let (residual, stderr) = mean_stderr(&plain);
        let (residual_cv, stderr_cv) = mean_stderr(&cv);
        self.rows.push(ResidualRow {
            t,
            residual,
            stderr,
            residual_cv,
            stderr_cv,
        });
        Ok(())
    }
}
