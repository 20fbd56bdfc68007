//! Backward Kolmogorov solves on a box and the duality checks built on them.
//!
//! `∂_s f + ζ(x)(Σ a^{kk}∂_k²f + Σ b^k∂_k f) = 0` on `[0, T] × [−L, L]^N`,
//! `f(T) = ψ`, marched in reversed time with an exponentially fitted
//! (Il'in) three-point stencil per axis and mirror ghosts at the walls. The
//! stencil has non-negative off-diagonal weights for every Péclet number,
//! so an explicit step below the stability limit is a convex combination of
//! neighbouring values and the discrete maximum principle holds.

pub mod duality;
pub mod eta;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::drift::{from_matrix, Drift, PolyDrift, Polynomial};
use crate::error::{invalid, FpkError, Result};
use crate::lyapunov::LyapunovSpec;
use crate::solver::grid::bernoulli;
use crate::solver::TestFunction;

pub use duality::{DualityObserver, DualityReport};
pub use eta::{Cutoff, CutoffEta};

/// Largest state dimension the backward grid accepts.
pub const MAX_BACKWARD_DIM: usize = 3;

/// Largest node count of a backward grid.
pub const MAX_BACKWARD_NODES: usize = 1 << 24;

/// Default tolerance of the discrete maximum principle.
pub const MAX_PRINCIPLE_TOL: f64 = 1e-8;

/// Default slack of the gradient bound check.
pub const GRADIENT_BOUND_SLACK: f64 = 1.05;

/// Terminal datum `ψ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TerminalSpec {
    /// Polynomial of degree ≤ 4 in at most three coordinates times a smooth
    /// radial bump of radius `radius`.
    PolynomialBump { polynomial: Polynomial, radius: f64 },
    /// `exp(−|x − c|²/(2w²))`.
    Gaussian { center: Vec<f64>, width: f64 },
}

#[derive(Clone, Debug, PartialEq)]
enum TerminalKind {
    Bump(TestFunction),
    Gaussian { center: Vec<f64>, width: f64 },
}

/// Resolved `ψ` with its normalization factor.
#[derive(Clone, Debug, PartialEq)]
pub struct Terminal {
    kind: TerminalKind,
    dim: usize,
    scale: f64,
}

impl Terminal {
    pub fn new(spec: &TerminalSpec, dim: usize) -> Result<Self> {
        let kind = match spec {
            TerminalSpec::PolynomialBump { polynomial, radius } => {
                if polynomial.dim() != dim {
                    return Err(FpkError::DimensionMismatch {
                        expected: dim,
                        actual: polynomial.dim(),
                    });
                }
                TerminalKind::Bump(TestFunction::new(polynomial.clone(), *radius)?)
            }
            TerminalSpec::Gaussian { center, width } => {
                if center.len() != dim {
                    return Err(FpkError::DimensionMismatch {
                        expected: dim,
                        actual: center.len(),
                    });
                }
                if !(*width > 0.0 && width.is_finite()) {
                    return Err(invalid("gaussian terminal width must be positive"));
                }
                TerminalKind::Gaussian {
                    center: center.clone(),
                    width: *width,
                }
            }
        };
        Ok(Self {
            kind,
            dim,
            scale: 1.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.scale
            * match &self.kind {
                TerminalKind::Bump(phi) => phi.value(x),
                TerminalKind::Gaussian { center, width } => {
                    let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                    (-r2 / (2.0 * width * width)).exp()
                }
            }
    }

    /// Writes `∇ψ(x)` into `out` and returns `ψ(x)`.
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) -> f64 {
        out.fill(0.0);
        let v = match &self.kind {
            TerminalKind::Bump(phi) => {
                let (v, g, _) = phi.local(x);
                for (a, &c) in phi.coords().iter().enumerate() {
                    out[c] = g[a];
                }
                v
            }
            TerminalKind::Gaussian { center, width } => {
                let w2 = width * width;
                let r2: f64 = x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum();
                let v = (-r2 / (2.0 * w2)).exp();
                for ((o, a), c) in out.iter_mut().zip(x).zip(center) {
                    *o = -v * (a - c) / w2;
                }
                v
            }
        };
        for o in out.iter_mut() {
            *o *= self.scale;
        }
        self.scale * v
    }
}

/// Data of one backward solve.
#[derive(Clone, Debug, PartialEq)]
pub struct BackwardProblem {
    /// Approximant drift `b`.
    pub drift: PolyDrift,
    /// Constant diffusion `A_N`; must be diagonal for the monotone stencil.
    pub diffusion: DMatrix<f64>,
    pub terminal: TerminalSpec,
    /// Rescale `ψ` so that its maximum over the grid nodes is 1.
    pub normalize: bool,
    /// Terminal time `T`.
    pub horizon: f64,
    pub cutoff: Option<Cutoff>,
}

/// Discretization of a backward solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackwardConfig {
    pub half_width: f64,
    /// Nodes per axis, walls included.
    pub nodes: usize,
    /// Requested step; defaults to the explicit stability limit.
    #[serde(default)]
    pub dt: Option<f64>,
    /// Implicitness: 0 explicit, 1 backward Euler.
    #[serde(default)]
    pub theta: f64,
    /// Approximate number of stored time levels besides `s = T`.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Shrink a requested step that violates the stability limit instead of
    /// failing.
    #[serde(default = "default_true")]
    pub auto_substep: bool,
}

fn default_levels() -> usize {
    100
}

fn default_true() -> bool {
    true
}

impl BackwardConfig {
    pub fn new(half_width: f64, nodes: usize) -> Self {
        Self {
            half_width,
            nodes,
            dt: None,
            theta: 0.0,
            levels: default_levels(),
            auto_substep: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(invalid("half_width must be positive"));
        }
        if self.nodes < 3 {
            return Err(invalid("backward grid needs at least 3 nodes per axis"));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(invalid("dt must be positive"));
            }
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(FpkError::NonMonotone(format!(
                "theta = {} outside [0, 1]",
                self.theta
            )));
        }
        if self.levels == 0 {
            return Err(invalid("levels must be positive"));
        }
        Ok(())
    }
}

/// Grid solution `f(x, s)` at stored time levels.
#[derive(Clone, Debug)]
pub struct BackwardSolution {
    dim: usize,
    nodes: usize,
    half_width: f64,
    spacing: f64,
    horizon: f64,
    strides: [usize; MAX_BACKWARD_DIM],
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    terminal: Terminal,
    psi_max: f64,
    grad_psi_max: f64,
    f_max: f64,
    dt: f64,
    steps: u64,
}

impl BackwardSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nodes_per_axis(&self) -> usize {
        self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Stored times, ascending from 0 to `T`.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn level(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn terminal(&self) -> &Terminal {
        &self.terminal
    }

    /// `max|ψ|` over the nodes.
    pub fn psi_max(&self) -> f64 {
        self.psi_max
    }

    /// `max|∇ψ|` over the nodes.
    pub fn grad_psi_max(&self) -> f64 {
        self.grad_psi_max
    }

    /// `max|f|` over all computed levels, not only the stored ones.
    pub fn f_max(&self) -> f64 {
        self.f_max
    }

    pub fn satisfies_max_principle(&self, tol: f64) -> bool {
        self.f_max <= self.psi_max * (1.0 + tol)
    }

    fn index_of(&self, idx: usize, k: usize) -> usize {
        (idx / self.strides[k]) % self.nodes
    }

    pub fn coordinate(&self, i: usize) -> f64 {
        -self.half_width + i as f64 * self.spacing
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        (0..self.dim)
            .map(|k| self.coordinate(self.index_of(idx, k)))
            .collect()
    }

    /// True when all coordinates of node `idx` are strictly inside the box.
    pub fn is_interior(&self, idx: usize) -> bool {
        (0..self.dim).all(|k| {
            let i = self.index_of(idx, k);
            i > 0 && i + 1 < self.nodes
        })
    }

    /// Central-difference gradient at a node of level `level` (one-sided on
    /// the walls).
    pub fn node_gradient(&self, level: usize, idx: usize, out: &mut [f64]) {
        let f = &self.values[level];
        for (k, o) in out.iter_mut().enumerate().take(self.dim) {
            let i = self.index_of(idx, k);
            let s = self.strides[k];
            *o = if i == 0 {
                (f[idx + s] - f[idx]) / self.spacing
            } else if i + 1 == self.nodes {
                (f[idx] - f[idx - s]) / self.spacing
            } else {
                (f[idx + s] - f[idx - s]) / (2.0 * self.spacing)
            };
        }
    }

    /// Bracketing levels and the weight of the later one.
    fn time_stencil(&self, s: f64) -> (usize, usize, f64) {
        let last = self.times.len() - 1;
        if s <= self.times[0] {
            return (0, 0, 0.0);
        }
        if s >= self.times[last] {
            return (last, last, 0.0);
        }
        let j = self.times.partition_point(|&t| t <= s) - 1;
        let w = (s - self.times[j]) / (self.times[j + 1] - self.times[j]);
        (j, j + 1, w)
    }

    /// Lower corner and per-axis weights of the cell containing `x`, after
    /// clamping into the box. The flag is false when clamping happened.
    fn space_stencil(&self, x: &[f64]) -> (usize, [f64; MAX_BACKWARD_DIM], bool) {
        let mut base = 0;
        let mut w = [0.0; MAX_BACKWARD_DIM];
        let mut inside = true;
        for k in 0..self.dim {
            let mut u = (x[k] + self.half_width) / self.spacing;
            let top = (self.nodes - 1) as f64;
            if !(0.0..=top).contains(&u) {
                inside = false;
                u = if u.is_nan() { 0.0 } else { u.clamp(0.0, top) };
            }
            let i = (u.floor() as usize).min(self.nodes - 2);
            w[k] = u - i as f64;
            base += i * self.strides[k];
        }
        (base, w, inside)
    }

    fn corners(&self) -> usize {
        1 << self.dim
    }

    fn corner(&self, base: usize, w: &[f64; MAX_BACKWARD_DIM], c: usize) -> (usize, f64) {
        let mut idx = base;
        let mut weight = 1.0;
        for (k, wk) in w.iter().enumerate().take(self.dim) {
            if c >> k & 1 == 1 {
                idx += self.strides[k];
                weight *= wk;
            } else {
                weight *= 1.0 - wk;
            }
        }
        (idx, weight)
    }

    /// Multilinear interpolation of `f` in space and linear in time.
    pub fn value(&self, x: &[f64], s: f64) -> f64 {
        let (j0, j1, wt) = self.time_stencil(s);
        let (base, w, _) = self.space_stencil(x);
        let mut v = 0.0;
        for c in 0..self.corners() {
            let (idx, wc) = self.corner(base, &w, c);
            v += wc * ((1.0 - wt) * self.values[j0][idx] + wt * self.values[j1][idx]);
        }
        v
    }

    /// Multilinear interpolation of the node gradients. Returns false when
    /// `x` lies outside the box, in which case the nearest face is used.
    pub fn gradient(&self, x: &[f64], s: f64, out: &mut [f64]) -> bool {
        let (j0, j1, wt) = self.time_stencil(s);
        let (base, w, inside) = self.space_stencil(x);
        let mut g0 = [0.0; MAX_BACKWARD_DIM];
        let mut g1 = [0.0; MAX_BACKWARD_DIM];
        out[..self.dim].fill(0.0);
        for c in 0..self.corners() {
            let (idx, wc) = self.corner(base, &w, c);
            self.node_gradient(j0, idx, &mut g0);
            if wt > 0.0 {
                self.node_gradient(j1, idx, &mut g1);
            }
            for k in 0..self.dim {
                out[k] += wc * ((1.0 - wt) * g0[k] + wt * g1[k]);
            }
        }
        inside
    }
}

/// Per-node, per-axis stencil weights `(c⁺, c⁻)` for `ζ(a∂² + b∂)`.
fn stencil_weights(a: f64, b: f64, h: f64) -> (f64, f64) {
    if a <= 0.0 {
        (b.max(0.0) / h, (-b).max(0.0) / h)
    } else {
        // a_eff = a·Pe·coth(Pe), Pe = bh/(2a), written through x/(eˣ−1).
        let z = b * h / a;
        let d = a / (h * h);
        (d * bernoulli(-z), d * bernoulli(z))
    }
}

/// Marches `f` from `s = T` down to `s = 0`.
pub fn solve_backward(problem: &BackwardProblem, config: &BackwardConfig) -> Result<BackwardSolution> {
    config.validate()?;
    let n = problem.drift.dim();
    if n > MAX_BACKWARD_DIM {
        return Err(FpkError::SizeExceeded {
            requested: n,
            max: MAX_BACKWARD_DIM,
        });
    }
    let a = &problem.diffusion;
    if a.nrows() != n || a.ncols() != n {
        return Err(FpkError::DimensionMismatch {
            expected: n,
            actual: a.nrows(),
        });
    }
    from_matrix(a.clone())?;
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    for i in 0..n {
        for j in 0..n {
            if i != j && a[(i, j)].abs() > 1e-14 * scale {
                return Err(FpkError::NonMonotone(
                    "backward stencil needs a diagonal diffusion".into(),
                ));
            }
        }
    }
    if !(problem.horizon > 0.0 && problem.horizon.is_finite()) {
        return Err(invalid("terminal time must be positive"));
    }
    if let Some(c) = &problem.cutoff {
        c.validate()?;
    }
    let m = config.nodes;
    let total = m
        .checked_pow(n as u32)
        .filter(|&t| t <= MAX_BACKWARD_NODES)
        .ok_or(FpkError::SizeExceeded {
            requested: m.saturating_pow(n as u32),
            max: MAX_BACKWARD_NODES,
        })?;
    let mut terminal = Terminal::new(&problem.terminal, n)?;
    let mut sol = BackwardSolution {
        dim: n,
        nodes: m,
        half_width: config.half_width,
        spacing: 2.0 * config.half_width / (m - 1) as f64,
        horizon: problem.horizon,
        strides: [1, m, m * m],
        times: Vec::new(),
        values: Vec::new(),
        terminal: terminal.clone(),
        psi_max: 0.0,
        grad_psi_max: 0.0,
        f_max: 0.0,
        dt: 0.0,
        steps: 0,
    };
    let h = sol.spacing;

    // Terminal values and their recorded norms.
    let mut f = vec![0.0; total];
    let mut grad = vec![0.0; n];
    let mut raw_max: f64 = 0.0;
    for (idx, v) in f.iter_mut().enumerate() {
        *v = terminal.value(&sol.node(idx));
        raw_max = raw_max.max(v.abs());
    }
    if problem.normalize && raw_max > 0.0 {
        terminal.scale = 1.0 / raw_max;
        for v in f.iter_mut() {
            *v *= terminal.scale;
        }
    }
    for idx in 0..total {
        let x = sol.node(idx);
        let v = terminal.gradient(&x, &mut grad);
        sol.psi_max = sol.psi_max.max(v.abs());
        sol.grad_psi_max = sol.grad_psi_max.max(grad.iter().map(|g| g * g).sum::<f64>().sqrt());
    }
    sol.terminal = terminal;

    // Stencil weights and mirrored neighbours.
    let eta = CutoffEta::new();
    let mut cp = vec![0.0; total * n];
    let mut cm = vec![0.0; total * n];
    let mut up = vec![0u32; total * n];
    let mut lo = vec![0u32; total * n];
    let mut diag = vec![0.0; total];
    let mut b = vec![0.0; n];
    let mut scratch = vec![0.0; problem.drift.scratch_len()];
    for idx in 0..total {
        let x = sol.node(idx);
        problem.drift.eval(&x, 0.0, &mut b, &mut scratch);
        let zeta = problem.cutoff.map_or(1.0, |c| c.value(&eta, &x));
        for k in 0..n {
            let (p, q) = stencil_weights(a[(k, k)], b[k], h);
            let (p, q) = (zeta * p, zeta * q);
            let s = sol.strides[k];
            let i = sol.index_of(idx, k);
            let u = if i + 1 == m { idx - s } else { idx + s };
            let l = if i == 0 { idx + s } else { idx - s };
            cp[idx * n + k] = p;
            cm[idx * n + k] = q;
            up[idx * n + k] = u as u32;
            lo[idx * n + k] = l as u32;
            diag[idx] += p + q;
        }
    }
    let dmax = diag.iter().copied().fold(0.0, f64::max);
    let theta = config.theta;
    let limit = if theta < 1.0 && dmax > 0.0 {
        1.0 / ((1.0 - theta) * dmax)
    } else {
        f64::INFINITY
    };
    let mut dt = config.dt.unwrap_or(if limit.is_finite() {
        limit
    } else {
        problem.horizon / 100.0
    });
    if dt > limit * (1.0 + 1e-12) {
        if !config.auto_substep {
            return Err(FpkError::Cfl { dt, limit });
        }
        dt = limit;
    }
    let steps = ((problem.horizon / dt) * (1.0 - 1e-12)).ceil().max(1.0) as u64;
    let dt = problem.horizon / steps as f64;
    sol.dt = dt;
    sol.steps = steps;
    let stride = (steps / config.levels as u64).max(1);

    let mut stored = vec![(problem.horizon, f.clone())];
    sol.f_max = f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut g = vec![0.0; total];
    let ex = (1.0 - theta) * dt;
    let im = theta * dt;
    for step in 1..=steps {
        for idx in 0..total {
            let fi = f[idx];
            let mut acc = 0.0;
            for k in 0..n {
                let j = idx * n + k;
                acc += cp[j] * (f[up[j] as usize] - fi) + cm[j] * (f[lo[j] as usize] - fi);
            }
            g[idx] = fi + ex * acc;
        }
        if im > 0.0 {
            gauss_seidel(&mut f, &g, &cp, &cm, &up, &lo, &diag, n, im);
        } else {
            std::mem::swap(&mut f, &mut g);
        }
        sol.f_max = f.iter().fold(sol.f_max, |m, v| m.max(v.abs()));
        if step % stride == 0 || step == steps {
            let s = problem.horizon * (1.0 - step as f64 / steps as f64);
            stored.push((s.max(0.0), f.clone()));
        }
    }
    stored.reverse();
    let (times, values) = stored.into_iter().unzip();
    sol.times = times;
    sol.values = values;
    Ok(sol)
}

/// Solves `(1 + im·D) f − im·Σ(c⁺f_up + c⁻f_lo) = rhs` in place, starting
/// from `rhs`. The matrix is an M-matrix so the sweep converges.
#[allow(clippy::too_many_arguments)]
fn gauss_seidel(
    f: &mut [f64],
    rhs: &[f64],
    cp: &[f64],
    cm: &[f64],
    up: &[u32],
    lo: &[u32],
    diag: &[f64],
    n: usize,
    im: f64,
) {
    const MAX_SWEEPS: usize = 10_000;
    f.copy_from_slice(rhs);
    let size = rhs.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for _ in 0..MAX_SWEEPS {
        let mut change: f64 = 0.0;
        for idx in 0..f.len() {
            let mut acc = rhs[idx];
            for k in 0..n {
                let j = idx * n + k;
                acc += im * (cp[j] * f[up[j] as usize] + cm[j] * f[lo[j] as usize]);
            }
            let v = acc / (1.0 + im * diag[idx]);
            change = change.max((v - f[idx]).abs());
            f[idx] = v;
        }
        if change <= 1e-14 * size {
            return;
        }
    }
    log::warn!("implicit backward step did not converge in {MAX_SWEEPS} sweeps");
}

/// Outcome of the gradient bound check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientBound {
    pub pass: bool,
    /// Largest `|∇f|² / (e^{(C₀+1)(T−s)}·V(x)·max|∇ψ|²)`.
    pub worst_ratio: f64,
    pub worst_s: f64,
    pub worst_x: Vec<f64>,
    pub slack: f64,
}

/// Checks `|∇f(x,s)|² ≤ e^{(C₀+1)(T−s)}·V(x)·max|∇ψ|²` at every interior
/// node of every stored level, up to the factor `slack`.
pub fn gradient_bound_check(
    sol: &BackwardSolution,
    v: &LyapunovSpec,
    c0: f64,
    slack: f64,
) -> Result<GradientBound> {
    let v = v.on(sol.dim())?;
    let g2 = sol.grad_psi_max().powi(2);
    let mut worst = GradientBound {
        pass: true,
        worst_ratio: 0.0,
        worst_s: sol.horizon(),
        worst_x: vec![0.0; sol.dim()],
        slack,
    };
    let mut grad = [0.0; MAX_BACKWARD_DIM];
    let log_v: Vec<f64> = (0..sol.len()).map(|i| v.log_value(&sol.node(i))).collect();
    for (level, &s) in sol.times().iter().enumerate() {
        let log_growth = (c0 + 1.0) * (sol.horizon() - s);
        for (idx, lv) in log_v.iter().enumerate() {
            if !sol.is_interior(idx) {
                continue;
            }
            sol.node_gradient(level, idx, &mut grad);
            let n2: f64 = grad[..sol.dim()].iter().map(|g| g * g).sum();
            if n2 == 0.0 {
                continue;
            }
            // Work in logs: V may be astronomically large.
            let ratio = (n2.ln() - g2.ln() - log_growth - lv).exp();
            if ratio > worst.worst_ratio {
                worst.worst_ratio = ratio;
                worst.worst_s = s;
                worst.worst_x = sol.node(idx);
            }
        }
    }
    worst.pass = worst.worst_ratio <= slack;
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::Monomial;
    use approx::assert_abs_diff_eq;

    fn gaussian_problem(drift: PolyDrift, a: f64, horizon: f64) -> BackwardProblem {
        BackwardProblem {
            drift,
            diffusion: DMatrix::from_element(1, 1, a),
            terminal: TerminalSpec::Gaussian {
                center: vec![0.5],
                width: 0.7,
            },
            normalize: false,
            horizon,
            cutoff: None,
        }
    }

    fn ou_problem(nodes_half_width: f64) -> (BackwardProblem, BackwardConfig) {
        let p = gaussian_problem(PolyDrift::linear_decay(&[1.0]), 1.0, 1.0);
        (p, BackwardConfig::new(nodes_half_width, 65))
    }

    #[test]
    fn zero_coefficients_keep_terminal_datum() {
        let p = BackwardProblem {
            diffusion: DMatrix::zeros(1, 1),
            ..gaussian_problem(PolyDrift::linear_decay(&[0.0]), 0.0, 1.0)
        };
        let sol = solve_backward(&p, &BackwardConfig::new(4.0, 101)).unwrap();
        for lvl in 0..sol.times().len() {
            for (idx, v) in sol.level(lvl).iter().enumerate() {
                assert_eq!(*v, sol.terminal().value(&sol.node(idx)));
            }
        }
    }

    #[test]
    fn heat_kernel_oracle() {
        // f(·,0) = ψ * N(0, 2aT) for b = 0.
        let (a, t, w) = (1.0, 0.5, 0.7);
        let p = gaussian_problem(PolyDrift::linear_decay(&[0.0]), a, t);
        let sol = solve_backward(&p, &BackwardConfig::new(8.0, 512)).unwrap();
        let s2 = w * w + 2.0 * a * t;
        let mut err: f64 = 0.0;
        for idx in 0..sol.len() {
            let x = sol.node(idx)[0];
            let exact = w / s2.sqrt() * (-(x - 0.5f64).powi(2) / (2.0 * s2)).exp();
            err = err.max((sol.level(0)[idx] - exact).abs());
        }
        assert!(err < 1e-3, "sup error {err}");
        assert_eq!(sol.times()[0], 0.0);
        assert_eq!(*sol.times().last().unwrap(), t);
    }

    #[test]
    fn maximum_principle_with_strong_advection() {
        let drift = PolyDrift::new(vec![Polynomial::new(
            1,
            vec![Monomial {
                coeff: -5.0,
                powers: vec![3],
            }],
        )
        .unwrap()])
        .unwrap();
        let p = BackwardProblem {
            normalize: true,
            ..gaussian_problem(drift, 0.01, 1.0)
        };
        let sol = solve_backward(&p, &BackwardConfig::new(3.0, 201)).unwrap();
        assert_abs_diff_eq!(sol.psi_max(), 1.0, epsilon = 1e-12);
        assert!(sol.satisfies_max_principle(MAX_PRINCIPLE_TOL));
        for t in 0..sol.times().len() {
            assert!(sol.level(t).iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn theta_schemes_match_ou_oracle() {
        // dX = −X ds + √2 dW: f(x,0) = E ψ(X_T^x) with X_T ~ N(xe^{−T}, 1 − e^{−2T}).
        let (p, cfg) = ou_problem(6.0);
        let cfg = BackwardConfig { nodes: 129, ..cfg };
        let limit = solve_backward(&p, &cfg).unwrap().dt();
        let (c, w) = (0.5, 0.7);
        let v = 1.0 - (-2.0f64).exp();
        let m = (-1.0f64).exp();
        for theta in [0.0, 0.5, 1.0] {
            let sol = solve_backward(
                &p,
                &BackwardConfig {
                    theta,
                    dt: Some(0.25 * limit),
                    ..cfg.clone()
                },
            )
            .unwrap();
            // The mirror walls perturb f only near |x| = L.
            let err = (0..sol.len())
                .filter(|&i| sol.node(i)[0].abs() <= 3.0)
                .map(|i| {
                    let x = sol.node(i)[0];
                    let s2 = w * w + v;
                    let exact = w / s2.sqrt() * (-(x * m - c).powi(2) / (2.0 * s2)).exp();
                    (sol.level(0)[i] - exact).abs()
                })
                .fold(0.0, f64::max);
            assert!(err < 2e-3, "theta {theta}: {err}");
            assert!(sol.satisfies_max_principle(MAX_PRINCIPLE_TOL));
        }
    }

    #[test]
    fn cfl_and_monotonicity_errors() {
        let (p, cfg) = ou_problem(6.0);
        let bad = BackwardConfig {
            dt: Some(1.0),
            auto_substep: false,
            ..cfg.clone()
        };
        assert!(matches!(solve_backward(&p, &bad), Err(FpkError::Cfl { .. })));
        let off = BackwardProblem {
            drift: PolyDrift::linear_decay(&[1.0, 1.0]),
            diffusion: DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]),
            terminal: TerminalSpec::Gaussian {
                center: vec![0.0, 0.0],
                width: 1.0,
            },
            ..p.clone()
        };
        assert!(matches!(solve_backward(&off, &cfg), Err(FpkError::NonMonotone(_))));
        let th = BackwardConfig { theta: 1.5, ..cfg };
        assert!(matches!(solve_backward(&p, &th), Err(FpkError::NonMonotone(_))));
        let big = BackwardProblem {
            drift: PolyDrift::linear_decay(&[1.0; 4]),
            diffusion: DMatrix::identity(4, 4),
            ..p
        };
        assert!(matches!(
            solve_backward(&big, &BackwardConfig::new(1.0, 5)),
            Err(FpkError::SizeExceeded { .. })
        ));
    }

    #[test]
    fn refinement_ratio() {
        // Sup differences between successive halvings shrink by ≥ 1.8.
        let p = gaussian_problem(PolyDrift::linear_decay(&[1.0]), 1.0, 1.0);
        let sols: Vec<_> = [65, 129, 257]
            .iter()
            .map(|&m| solve_backward(&p, &BackwardConfig::new(6.0, m)).unwrap())
            .collect();
        let diff = |c: &BackwardSolution, f: &BackwardSolution| {
            (0..c.len())
                .map(|i| (c.level(0)[i] - f.level(0)[2 * i]).abs())
                .fold(0.0, f64::max)
        };
        let d1 = diff(&sols[0], &sols[1]);
        let d2 = diff(&sols[1], &sols[2]);
        assert!(d1 / d2 >= 1.8, "{d1} {d2}");
    }

    #[test]
    fn interpolation_reproduces_nodes_and_linears() {
        let p = BackwardProblem {
            diffusion: DMatrix::zeros(2, 2),
            drift: PolyDrift::linear_decay(&[0.0, 0.0]),
            terminal: TerminalSpec::PolynomialBump {
                polynomial: Polynomial::linear(&[1.0, -2.0]),
                radius: 100.0,
            },
            normalize: false,
            horizon: 1.0,
            cutoff: None,
        };
        let sol = solve_backward(&p, &BackwardConfig::new(2.0, 9)).unwrap();
        let mut g = [0.0; 2];
        assert!(sol.gradient(&[0.3, -0.7], 0.4, &mut g));
        assert_abs_diff_eq!(g[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.value(&[0.3, -0.7], 0.4), 1.7, epsilon = 1e-12);
        assert!(!sol.gradient(&[5.0, 0.0], 0.0, &mut g));
        assert_abs_diff_eq!(sol.value(&[5.0, 0.0], 0.0), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn gradient_bound_trivial_and_wrong_constant() {
        let frozen = BackwardProblem {
            diffusion: DMatrix::zeros(1, 1),
            normalize: true,
            ..gaussian_problem(PolyDrift::linear_decay(&[0.0]), 0.0, 1.0)
        };
        let sol = solve_backward(&frozen, &BackwardConfig::new(4.0, 401)).unwrap();
        let v = LyapunovSpec::ExpQuadratic {
            kappa: 0.1,
            beta: vec![1.0],
        };
        let ok = gradient_bound_check(&sol, &v, 0.0, GRADIENT_BOUND_SLACK).unwrap();
        assert!(ok.pass, "{ok:?}");
        let p = BackwardProblem {
            normalize: true,
            ..gaussian_problem(PolyDrift::linear_decay(&[1.0]), 1.0, 1.0)
        };
        let sol = solve_backward(&p, &BackwardConfig::new(6.0, 257)).unwrap();
        let bad = gradient_bound_check(&sol, &v, -10.0, GRADIENT_BOUND_SLACK).unwrap();
        assert!(!bad.pass && bad.worst_ratio > 1.0);
    }

    #[test]
    fn cutoff_freezes_far_field() {
        let p = BackwardProblem {
            cutoff: Some(Cutoff { kappa: 1.0, m: 2.0 }),
            ..gaussian_problem(PolyDrift::linear_decay(&[1.0]), 1.0, 1.0)
        };
        let sol = solve_backward(&p, &BackwardConfig::new(4.0, 81)).unwrap();
        // ζ = 0 for 1 + x² ≥ 4.
        for idx in 0..sol.len() {
            let x = sol.node(idx);
            if 1.0 + x[0] * x[0] > 4.0 + 0.2 {
                assert_eq!(sol.level(0)[idx], sol.terminal().value(&x));
            }
        }
        assert!(sol.satisfies_max_principle(MAX_PRINCIPLE_TOL));
    }
}
