//! Duality identity and energy estimate evaluated along a forward run.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::drift::{from_matrix, Drift};
use crate::error::{invalid, FpkError, Result};
use crate::solver::observe::{mean_stderr, per_particle};
use crate::solver::{MeasureView, Observer};

use super::{BackwardSolution, MAX_BACKWARD_DIM};

/// Result of one duality evaluation. All integrals are expectations over
/// the forward measure, estimated per path with trapezoids in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    /// `|∫ψdμ_T − ∫f(·,0)dν − ∫₀ᵀ∫⟨B−b,∇f⟩dμ_s ds|`, which vanishes up to
    /// discretization for any `b`.
    pub gap: f64,
    pub stderr: f64,
    /// `|∫ψdμ_T − ∫f(·,0)dν|`, the quantity controlled by the drift mismatch.
    pub mismatch_gap: f64,
    pub mismatch_stderr: f64,
    /// `∫₀ᵀ∫|A^{−1/2}(B−b)|²dμ_s ds`.
    pub eps: f64,
    pub eps_stderr: f64,
    /// `2√(ε(2+ε))`.
    pub bound: f64,
    /// `∫₀ᵀ∫|√A∇f|²dμ_s ds`.
    pub energy: f64,
    pub energy_stderr: f64,
    /// Atom-steps that fell outside the backward grid.
    pub outside: u64,
    pub particles: usize,
}

impl DualityReport {
    /// Energy estimate `∫∫|√A∇f|² ≤ 2 + ε` within three standard errors.
    pub fn energy_holds(&self, eps: f64) -> bool {
        self.energy <= 2.0 + eps + 3.0 * self.energy_stderr
    }

    /// Mismatch gap within `2√(ε(2+ε))` plus three standard errors.
    pub fn bound_holds(&self) -> bool {
        self.mismatch_gap <= self.bound + 3.0 * self.mismatch_stderr
            && self.gap <= self.bound + 3.0 * self.stderr
    }
}

/// `2√(ε(2+ε))`.
pub fn holmgren_bound(eps: f64) -> f64 {
    2.0 * (eps * (2.0 + eps)).sqrt()
}

const S_F0: usize = 0;
const S_PSI: usize = 1;
const S_MIS: usize = 2;
const S_MIS_INT: usize = 3;
const S_EN: usize = 4;
const S_EN_INT: usize = 5;
const S_EPS: usize = 6;
const S_EPS_INT: usize = 7;
const S_CV: usize = 8;
const S_WIDTH: usize = 9;

// Per-atom evaluation: value, mismatch, energy, eps, outside flag, gradient.
const C_GRAD: usize = 5;

/// Observer accumulating the duality identity for a backward solution
/// whose coordinates are the first `N` coordinates of the forward state.
pub struct DualityObserver<'a> {
    sol: &'a BackwardSolution,
    forward: &'a dyn Drift,
    approx: &'a dyn Drift,
    a: DMatrix<f64>,
    a_inv_sqrt: DMatrix<f64>,
    t_last: Option<f64>,
    state: Vec<f64>,
    grad: Vec<f64>,
    cur: Vec<f64>,
    outside: u64,
}

impl<'a> DualityObserver<'a> {
    /// `forward` is the drift of the forward run, `approx` the drift `b`
    /// used in the backward solve and `a` the forward diffusion.
    pub fn new(
        sol: &'a BackwardSolution,
        forward: &'a dyn Drift,
        approx: &'a dyn Drift,
        a: &DMatrix<f64>,
    ) -> Result<Self> {
        let n = sol.dim();
        if approx.dim() != n {
            return Err(FpkError::DimensionMismatch {
                expected: n,
                actual: approx.dim(),
            });
        }
        if forward.dim() < n || a.nrows() != forward.dim() {
            return Err(FpkError::DimensionMismatch {
                expected: forward.dim(),
                actual: a.nrows(),
            });
        }
        let block = a.view((0, 0), (n, n)).into_owned();
        let a_inv_sqrt = from_matrix(block.clone())?.inverse_sqrt()?;
        Ok(Self {
            sol,
            forward,
            approx,
            a: block,
            a_inv_sqrt,
            t_last: None,
            state: Vec::new(),
            grad: Vec::new(),
            cur: Vec::new(),
            outside: 0,
        })
    }

    fn eval_atom(&self, t: f64, first: bool, x: &[f64], scratch: &mut Scratch, o: &mut [f64]) {
        let n = self.sol.dim();
        let y = &x[..n];
        self.forward.eval(x, t, &mut scratch.big, &mut scratch.big_s);
        self.approx.eval(y, t, &mut scratch.small, &mut scratch.small_s);
        let mut g = [0.0; MAX_BACKWARD_DIM];
        let inside = self.sol.gradient(y, t, &mut g);
        let mut d = DVector::zeros(n);
        let mut mis = 0.0;
        for k in 0..n {
            d[k] = scratch.big[k] - scratch.small[k];
            mis += d[k] * g[k];
        }
        let gv = DVector::from_column_slice(&g[..n]);
        o[0] = if first {
            self.sol.value(y, t)
        } else {
            self.sol.terminal().value(y)
        };
        o[1] = mis;
        o[2] = gv.dot(&(&self.a * &gv));
        o[3] = (&self.a_inv_sqrt * d).norm_squared();
        o[4] = if inside { 0.0 } else { 1.0 };
        o[C_GRAD..C_GRAD + n].copy_from_slice(&g[..n]);
    }

    /// Summary after the run has reached the terminal time.
    pub fn report(&self) -> Result<DualityReport> {
        let t = self
            .t_last
            .ok_or_else(|| invalid("duality observer saw no time level"))?;
        let horizon = self.sol.horizon();
        if (t - horizon).abs() > 1e-9 * horizon.max(1.0) {
            return Err(invalid(format!(
                "forward run ended at {t}, backward terminal time is {horizon}"
            )));
        }
        let col = |f: &dyn Fn(&[f64]) -> f64| -> Vec<f64> { self.state.chunks(S_WIDTH).map(f).collect() };
        let (defect, stderr) =
            mean_stderr(&col(&|s| s[S_PSI] - s[S_F0] - s[S_MIS_INT] - s[S_CV]));
        let (mismatch, mismatch_stderr) = mean_stderr(&col(&|s| s[S_PSI] - s[S_F0] - s[S_CV]));
        let (eps, eps_stderr) = mean_stderr(&col(&|s| s[S_EPS_INT]));
        let (energy, energy_stderr) = mean_stderr(&col(&|s| s[S_EN_INT]));
        Ok(DualityReport {
            gap: defect.abs(),
            stderr,
            mismatch_gap: mismatch.abs(),
            mismatch_stderr,
            eps,
            eps_stderr,
            bound: holmgren_bound(eps),
            energy,
            energy_stderr,
            outside: self.outside,
            particles: self.state.len() / S_WIDTH,
        })
    }
}

struct Scratch {
    big: Vec<f64>,
    big_s: Vec<f64>,
    small: Vec<f64>,
    small_s: Vec<f64>,
}

impl Observer for DualityObserver<'_> {
    fn observe(&mut self, t: f64, view: &MeasureView<'_>) -> Result<()> {
        let n = self.sol.dim();
        let width = C_GRAD + n;
        let first = self.t_last.is_none();
        let init = || Scratch {
            big: vec![0.0; self.forward.dim()],
            big_s: vec![0.0; self.forward.scratch_len()],
            small: vec![0.0; n],
            small_s: vec![0.0; self.approx.scratch_len()],
        };
        let mut cur = std::mem::take(&mut self.cur);
        let noise = match view {
            MeasureView::Particles {
                dim,
                positions,
                noise,
            } => {
                if *dim != self.forward.dim() {
                    return Err(FpkError::DimensionMismatch {
                        expected: self.forward.dim(),
                        actual: *dim,
                    });
                }
                per_particle(*dim, positions, width, &mut cur, init, |s, _, x, o| {
                    self.eval_atom(t, first, x, s, o)
                });
                noise.map(|z| (z, *dim))
            }
            MeasureView::Grid(g) => {
                // One aggregated atom: every term is linear in the measure.
                cur.clear();
                cur.resize(width, 0.0);
                let mut buf = vec![0.0; width];
                let mut s = init();
                for (idx, m) in g.masses().iter().enumerate() {
                    if *m == 0.0 {
                        continue;
                    }
                    self.eval_atom(t, first, &g.center(idx), &mut s, &mut buf);
                    for (c, b) in cur.iter_mut().zip(&buf).take(5) {
                        *c += m * b;
                    }
                }
                None
            }
        };
        let atoms = cur.len() / width;
        if first {
            self.state = vec![0.0; atoms * S_WIDTH];
            self.grad = vec![0.0; atoms * n];
        }
        let h = self.t_last.map_or(0.0, |t0| 0.5 * (t - t0));
        for (i, ((s, g), c)) in self
            .state
            .chunks_mut(S_WIDTH)
            .zip(self.grad.chunks_mut(n))
            .zip(cur.chunks(width))
            .enumerate()
        {
            if first {
                s[S_F0] = c[0];
            } else {
                s[S_PSI] = c[0];
                s[S_MIS_INT] += h * (s[S_MIS] + c[1]);
                s[S_EN_INT] += h * (s[S_EN] + c[2]);
                s[S_EPS_INT] += h * (s[S_EPS] + c[3]);
                if let Some((z, dim)) = noise {
                    let row = &z[i * dim..i * dim + n];
                    s[S_CV] += g.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
                }
            }
            s[S_MIS] = c[1];
            s[S_EN] = c[2];
            s[S_EPS] = c[3];
            g.copy_from_slice(&c[C_GRAD..C_GRAD + n]);
            self.outside += c[4] as u64;
        }
        self.cur = cur;
        self.t_last = Some(t);
        Ok(())
    }
}
