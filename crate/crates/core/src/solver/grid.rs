//! Finite-volume density solver for `N ≤ 2`.
//!
//! The flux across each face is the exponentially fitted
//! (Scharfetter–Gummel / Chang–Cooper) combination of drift and diffusion,
//! which is positivity preserving, exactly conservative and reproduces the
//! discrete Gibbs state of a gradient drift. Walls carry zero flux.

use statrs::function::erf::erf;

use crate::drift::{DiffusionMatrix, Drift};
use crate::error::{invalid, FpkError, Result};

use super::initial::InitialLaw;

/// Mass allowed in the outermost cells before a leak warning.
pub const BOUNDARY_MASS_TOL: f64 = 1e-6;

/// `x / (eˣ − 1)`.
pub(crate) fn bernoulli(x: f64) -> f64 {
    if x.abs() < 1e-6 {
        1.0 - x / 2.0 + x * x / 12.0
    } else {
        x / x.exp_m1()
    }
}

/// Cell masses on the box `[−L, L]^N`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity {
    dim: usize,
    half_width: f64,
    cells: usize,
    /// Row-major with the first coordinate fastest.
    masses: Vec<f64>,
    t: f64,
}

impl GridDensity {
    pub fn new(dim: usize, half_width: f64, cells: usize, masses: Vec<f64>, t: f64) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(FpkError::SizeExceeded {
                requested: dim,
                max: 2,
            });
        }
        if !(half_width > 0.0 && half_width.is_finite()) || cells < 2 {
            return Err(invalid("grid needs a positive box and at least 2 cells"));
        }
        if masses.len() != cells.pow(dim as u32) {
            return Err(FpkError::DimensionMismatch {
                expected: cells.pow(dim as u32),
                actual: masses.len(),
            });
        }
        if masses.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
            return Err(invalid("cell masses must be finite and nonnegative"));
        }
        Ok(Self {
            dim,
            half_width,
            cells,
            masses,
            t,
        })
    }

    /// Discretizes `ν` by exact cell probabilities (Gaussian), nearest cell
    /// (point mass, split evenly when on a face) or histogram (samples).
    pub fn from_law(law: &InitialLaw, dim: usize, half_width: f64, cells: usize) -> Result<Self> {
        let mut g = Self::new(dim, half_width, cells, vec![0.0; cells.pow(dim as u32)], 0.0)?;
        let law = law.resolve()?;
        law.validate()?;
        match &law {
            InitialLaw::Gaussian { .. } => {
                let per_axis: Vec<Vec<f64>> = (0..dim)
                    .map(|k| g.axis_probabilities(law.mean(k), law.variance(k)))
                    .collect();
                for idx in 0..g.masses.len() {
                    let (i, j) = g.split(idx);
                    let mut m = per_axis[0][i];
                    if dim == 2 {
                        m *= per_axis[1][j];
                    }
                    g.masses[idx] = m;
                }
            }
            InitialLaw::PointMass { .. } => {
                let per_axis: Vec<Vec<f64>> =
                    (0..dim).map(|k| g.axis_probabilities(law.mean(k), 0.0)).collect();
                for idx in 0..g.masses.len() {
                    let (i, j) = g.split(idx);
                    g.masses[idx] = per_axis[0][i] * if dim == 2 { per_axis[1][j] } else { 1.0 };
                }
            }
            InitialLaw::Samples { points } => {
                let w = 1.0 / points.len() as f64;
                for p in points {
                    let i = g.locate(p.first().copied().unwrap_or(0.0));
                    let j = if dim == 2 {
                        g.locate(p.get(1).copied().unwrap_or(0.0))
                    } else {
                        0
                    };
                    g.masses[i + j * cells] += w;
                }
            }
            InitialLaw::File { .. } => unreachable!("resolved above"),
        }
        let total: f64 = g.masses.iter().sum();
        if total <= 0.0 {
            return Err(invalid("initial law has no mass inside the grid box"));
        }
        g.masses.iter_mut().for_each(|m| *m /= total);
        Ok(g)
    }

    /// Cell probabilities of `N(mean, var)` along one axis, with the tails
    /// folded into the outer cells. `var = 0` is a point mass.
    fn axis_probabilities(&self, mean: f64, var: f64) -> Vec<f64> {
        let m = self.cells;
        let h = self.spacing();
        let cdf = |x: f64| {
            if var > 0.0 {
                0.5 * (1.0 + erf((x - mean) / (2.0 * var).sqrt()))
            } else if x > mean {
                1.0
            } else if x < mean {
                0.0
            } else {
                0.5
            }
        };
        (0..m)
            .map(|i| {
                let lo = if i == 0 { 0.0 } else { cdf(-self.half_width + i as f64 * h) };
                let hi = if i + 1 == m {
                    1.0
                } else {
                    cdf(-self.half_width + (i + 1) as f64 * h)
                };
                (hi - lo).max(0.0)
            })
            .collect()
    }

    fn locate(&self, x: f64) -> usize {
        let i = ((x + self.half_width) / self.spacing()).floor();
        (i.max(0.0) as usize).min(self.cells - 1)
    }

    fn split(&self, idx: usize) -> (usize, usize) {
        (idx % self.cells, idx / self.cells)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells_per_axis(&self) -> usize {
        self.cells
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.cells as f64
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Centre of axis cell `i`.
    pub fn center_1d(&self, i: usize) -> f64 {
        -self.half_width + (i as f64 + 0.5) * self.spacing()
    }

    /// Centre of cell `idx` (length `dim`).
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let (i, j) = self.split(idx);
        if self.dim == 1 {
            vec![self.center_1d(i)]
        } else {
            vec![self.center_1d(i), self.center_1d(j)]
        }
    }

    /// Mass in the outermost layer of cells.
    pub fn boundary_mass(&self) -> f64 {
        let m = self.cells;
        (0..self.masses.len())
            .filter(|&idx| {
                let (i, j) = self.split(idx);
                i == 0 || i == m - 1 || (self.dim == 2 && (j == 0 || j == m - 1))
            })
            .map(|idx| self.masses[idx])
            .sum()
    }

    /// `∫ f dμ` with `μ` concentrated at cell centres.
    pub fn integrate<F: Fn(&[f64]) -> f64>(&self, f: F) -> f64 {
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, m)| **m != 0.0)
            .map(|(idx, m)| m * f(&self.center(idx)))
            .sum()
    }

    /// Marginal masses along `axis`.
    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cells];
        for (idx, m) in self.masses.iter().enumerate() {
            let (i, j) = self.split(idx);
            out[if axis == 0 { i } else { j }] += m;
        }
        out
    }

    /// Piecewise-linear CDF of the marginal along `axis`.
    pub fn marginal_cdf(&self, axis: usize) -> impl Fn(f64) -> f64 {
        let masses = self.marginal(axis);
        let mut edges = Vec::with_capacity(masses.len() + 1);
        let mut acc = 0.0;
        edges.push(0.0);
        for m in &masses {
            acc += m;
            edges.push(acc);
        }
        let total = acc;
        let lo = -self.half_width;
        let h = self.spacing();
        let cells = self.cells;
        move |x: f64| {
            let s = (x - lo) / h;
            if s <= 0.0 {
                return 0.0;
            }
            if s >= cells as f64 {
                return 1.0;
            }
            let i = s.floor() as usize;
            let f = s - i as f64;
            (edges[i] + f * (edges[i + 1] - edges[i])) / total
        }
    }

    pub fn mean(&self, axis: usize) -> f64 {
        self.integrate(|x| x[axis])
    }

    pub fn variance(&self, axis: usize) -> f64 {
        let m = self.mean(axis);
        self.integrate(|x| (x[axis] - m).powi(2))
    }

    /// `Σ |m_c − ∫_c ρ|` against a reference density given by its CDF per
    /// axis (1-D only).
    pub fn l1_distance_to_cdf<F: Fn(f64) -> f64>(&self, cdf: F) -> Result<f64> {
        if self.dim != 1 {
            return Err(invalid("L1 distance to a CDF needs a 1-D grid"));
        }
        let h = self.spacing();
        let mut tail = cdf(-self.half_width) + 1.0 - cdf(self.half_width);
        let mut d = 0.0;
        for (i, m) in self.masses.iter().enumerate() {
            let a = -self.half_width + i as f64 * h;
            let p = cdf(a + h) - cdf(a);
            d += (m - p).abs();
        }
        tail = tail.max(0.0);
        Ok(d + tail)
    }
}

/// Grid resolution and box for [`GridSolver`].
#[derive(Clone, Copy, Debug)]
pub struct GridSpec {
    pub half_width: f64,
    pub cells: usize,
    /// Allow automatic substeps below the stability limit.
    pub auto_substep: bool,
}

/// Explicit conservative stepper bound to one drift and diffusion.
pub struct GridSolver<'a> {
    drift: &'a dyn Drift,
    /// Diagonal diffusion `a^{kk}`.
    diag: Vec<f64>,
    spec: GridSpec,
    /// Face coefficients `(forward, backward)` per axis and face, cached for
    /// autonomous drifts.
    cache: Option<Vec<Vec<(f64, f64)>>>,
    leak_warned: bool,
}

impl<'a> GridSolver<'a> {
    pub fn new(drift: &'a dyn Drift, diff: &DiffusionMatrix, spec: GridSpec) -> Result<Self> {
        let dim = drift.dim();
        if !(1..=2).contains(&dim) {
            return Err(FpkError::SizeExceeded {
                requested: dim,
                max: 2,
            });
        }
        if diff.dim() != dim {
            return Err(FpkError::DimensionMismatch {
                expected: dim,
                actual: diff.dim(),
            });
        }
        if !diff.is_diagonal() {
            return Err(FpkError::NonMonotone(
                "grid backend needs a diagonal diffusion matrix".into(),
            ));
        }
        let diag = (0..dim).map(|i| diff.a[(i, i)]).collect();
        let mut s = Self {
            drift,
            diag,
            spec,
            cache: None,
            leak_warned: false,
        };
        if drift.is_autonomous() {
            s.cache = Some(s.face_coefficients(0.0));
        }
        Ok(s)
    }

    fn spacing(&self) -> f64 {
        2.0 * self.spec.half_width / self.spec.cells as f64
    }

    /// For every axis, the coefficients `(c⁺, c⁻)` of each interior face such
    /// that the mass flux from cell `i` to `i+1` is `c⁺ m_i − c⁻ m_{i+1}`.
    /// Faces are indexed as the cell on their low side.
    fn face_coefficients(&self, t: f64) -> Vec<Vec<(f64, f64)>> {
        let dim = self.drift.dim();
        let m = self.spec.cells;
        let h = self.spacing();
        let lo = -self.spec.half_width;
        let total = m.pow(dim as u32);
        let mut scratch = vec![0.0; self.drift.scratch_len()];
        let mut b = vec![0.0; dim];
        let mut x = vec![0.0; dim];
        (0..dim)
            .map(|axis| {
                let a = self.diag[axis];
                (0..total)
                    .map(|idx| {
                        let (i, j) = (idx % m, idx / m);
                        let along = if axis == 0 { i } else { j };
                        if along + 1 == m {
                            return (0.0, 0.0);
                        }
                        let c = |k: usize| lo + (k as f64 + 0.5) * h;
                        x[0] = c(i);
                        if dim == 2 {
                            x[1] = c(j);
                        }
                        x[axis] = lo + (along + 1) as f64 * h;
                        self.drift.eval(&x, t, &mut b, &mut scratch);
                        let v = b[axis];
                        if a > 0.0 {
                            let z = v * h / a;
                            let k = a / (h * h);
                            (k * bernoulli(-z), k * bernoulli(z))
                        } else {
                            (v.max(0.0) / h, (-v).max(0.0) / h)
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Largest stable explicit step for the given coefficients.
    fn stable_dt(coeffs: &[Vec<(f64, f64)>], dim: usize, m: usize) -> f64 {
        let total = m.pow(dim as u32);
        let stride = |axis: usize| if axis == 0 { 1 } else { m };
        let mut worst: f64 = 0.0;
        for idx in 0..total {
            let mut out = 0.0;
            for (axis, c) in coeffs.iter().enumerate() {
                let along = if axis == 0 { idx % m } else { idx / m };
                out += c[idx].0;
                if along > 0 {
                    out += c[idx - stride(axis)].1;
                }
            }
            worst = worst.max(out);
        }
        if worst > 0.0 {
            1.0 / worst
        } else {
            f64::INFINITY
        }
    }

    /// Explicit stability limit at time `t`.
    pub fn stability_limit(&self, t: f64) -> f64 {
        let m = self.spec.cells;
        match &self.cache {
            Some(c) => Self::stable_dt(c, self.drift.dim(), m),
            None => Self::stable_dt(&self.face_coefficients(t), self.drift.dim(), m),
        }
    }

    /// Advances `g` by `dt`, substepping below the stability limit when
    /// allowed.
    pub fn step(&mut self, g: &mut GridDensity, dt: f64) -> Result<()> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if g.cells != self.spec.cells || g.dim != self.drift.dim() {
            return Err(invalid("grid density does not match the solver"));
        }
        let owned;
        let coeffs = match &self.cache {
            Some(c) => c,
            None => {
                owned = self.face_coefficients(g.t);
                &owned
            }
        };
        let dim = g.dim;
        let m = g.cells;
        let limit = Self::stable_dt(coeffs, dim, m);
        let substeps = if dt <= limit {
            1
        } else if self.spec.auto_substep {
            (dt / limit).ceil() as usize
        } else {
            return Err(FpkError::Cfl { dt, limit });
        };
        let h = dt / substeps as f64;
        let mut delta = vec![0.0; g.masses.len()];
        for _ in 0..substeps {
            delta.fill(0.0);
            for (axis, c) in coeffs.iter().enumerate() {
                let stride = if axis == 0 { 1 } else { m };
                for idx in 0..g.masses.len() {
                    let along = if axis == 0 { idx % m } else { idx / m };
                    if along + 1 < m {
                        let f = c[idx].0 * g.masses[idx] - c[idx].1 * g.masses[idx + stride];
                        delta[idx] -= f;
                        delta[idx + stride] += f;
                    }
                }
            }
            for (v, d) in g.masses.iter_mut().zip(&delta) {
                *v += h * d;
            }
        }
        // Round-off can leave tiny negatives.
        for v in &mut g.masses {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        g.t += dt;
        let leak = g.boundary_mass();
        if leak > BOUNDARY_MASS_TOL && !self.leak_warned {
            self.leak_warned = true;
            log::warn!(
                "grid boundary mass {leak:.2e} exceeds {BOUNDARY_MASS_TOL:.0e} at t = {:.4}; enlarge the box",
                g.t
            );
        }
        Ok(())
    }

    pub fn leak_warned(&self) -> bool {
        self.leak_warned
    }
}
