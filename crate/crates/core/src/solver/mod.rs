//! Forward solvers for `∂_t μ = L*μ`, `μ_0 = ν`: a particle (Euler–Maruyama)
//! backend for any `N` and a finite-volume backend for `N ≤ 2`.

pub mod grid;
pub mod initial;
pub mod marginal;
pub mod observe;
pub mod particle;

pub use grid::{GridDensity, GridSolver, GridSpec};
pub use initial::InitialLaw;
pub use marginal::{ks_null_sd, marginal, Marginal};
pub use observe::{
    MeasureView, MomentForm, MomentReport, MomentRow, MomentSpec, MomentTracker, Observer,
    ResidualRow,
    TestFunction, WeakResidual,
};
pub use particle::{em_step, ParticleEnsemble, DEFAULT_GUARD_RADIUS};

use serde::{Deserialize, Serialize};

use crate::drift::{DiffusionMatrix, Drift};
use crate::error::{invalid, FpkError, Result};

fn default_guard() -> f64 {
    DEFAULT_GUARD_RADIUS
}

/// Time stepping and sampling parameters shared by both backends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub dt: f64,
    /// Final time `T₀`.
    pub horizon: f64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    pub initial: InitialLaw,
    /// Output times; empty means the horizon only.
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_guard")]
    pub guard_radius: f64,
    #[serde(default)]
    pub moments: Option<MomentSpec>,
}

fn default_particles() -> usize {
    10_000
}

impl SolveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt must be positive"));
        }
        if !(self.horizon.is_finite() && self.horizon >= self.dt) {
            return Err(invalid("horizon must be finite and at least dt"));
        }
        if self.particles == 0 {
            return Err(invalid("particles must be positive"));
        }
        if self
            .checkpoints
            .iter()
            .any(|c| !(c.is_finite() && *c >= 0.0 && *c <= self.horizon * (1.0 + 1e-12)))
        {
            return Err(invalid("checkpoints must lie in [0, horizon]"));
        }
        self.initial.validate()
    }

    /// Number of steps; the last one is shortened to land on the horizon.
    pub fn steps(&self) -> u64 {
        (self.horizon / self.dt - 1e-9).ceil().max(1.0) as u64
    }

    /// Time of level `n`.
    pub fn time_of(&self, n: u64) -> f64 {
        if n >= self.steps() {
            self.horizon
        } else {
            n as f64 * self.dt
        }
    }

    /// Step indices at which checkpoints are taken (sorted, unique).
    pub fn checkpoint_steps(&self) -> Vec<u64> {
        let steps = self.steps();
        let mut idx: Vec<u64> = if self.checkpoints.is_empty() {
            vec![steps]
        } else {
            self.checkpoints
                .iter()
                .map(|&c| {
                    if c >= self.horizon - 1e-9 * self.dt {
                        steps
                    } else {
                        ((c / self.dt).round() as u64).min(steps)
                    }
                })
                .collect()
        };
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Result of a particle run.
#[derive(Clone, Debug)]
pub struct ForwardRun {
    pub checkpoints: Vec<ParticleEnsemble>,
    pub moments: Option<MomentReport>,
    pub last: ParticleEnsemble,
}

/// Runs the particle backend from `ν`, taking moment statistics when the
/// configuration asks for them.
pub fn solve_forward(config: &SolveConfig, drift: &dyn Drift, diff: &DiffusionMatrix) -> Result<ForwardRun> {
    let mut tracker = match &config.moments {
        Some(spec) => Some(MomentTracker::new(spec, drift.dim())?),
        None => None,
    };
    let mut observers: Vec<&mut dyn Observer> = Vec::new();
    if let Some(t) = tracker.as_mut() {
        observers.push(t);
    }
    let mut run = solve_forward_observed(config, drift, diff, &mut observers)?;
    drop(observers);
    run.moments = tracker.map(MomentTracker::into_report);
    Ok(run)
}

/// As [`solve_forward`] with caller-supplied observers, which see every time
/// level including `t = 0`. Noise increments are always recorded.
pub fn solve_forward_observed(
    config: &SolveConfig,
    drift: &dyn Drift,
    diff: &DiffusionMatrix,
    observers: &mut [&mut dyn Observer],
) -> Result<ForwardRun> {
    config.validate()?;
    let n = drift.dim();
    if diff.dim() != n {
        return Err(FpkError::DimensionMismatch {
            expected: n,
            actual: diff.dim(),
        });
    }
    let mut ens = ParticleEnsemble::sample(&config.initial, n, config.particles, config.seed)?;
    let steps = config.steps();
    let marks = config.checkpoint_steps();
    let mut checkpoints = Vec::with_capacity(marks.len());
    let mut noise = if observers.is_empty() {
        Vec::new()
    } else {
        vec![0.0; ens.positions().len()]
    };
    let visit = |ens: &ParticleEnsemble,
                 noise: Option<&[f64]>,
                 observers: &mut [&mut dyn Observer],
                 checkpoints: &mut Vec<ParticleEnsemble>,
                 level: u64|
     -> Result<()> {
        let view = MeasureView::Particles {
            dim: n,
            positions: ens.positions(),
            noise,
        };
        for o in observers.iter_mut() {
            o.observe(ens.t(), &view)?;
        }
        if marks.binary_search(&level).is_ok() {
            for o in observers.iter_mut() {
                o.checkpoint(ens.t())?;
            }
            checkpoints.push(ens.clone());
        }
        Ok(())
    };
    visit(&ens, None, observers, &mut checkpoints, 0)?;
    let map = particle::NoiseMap::new(diff, config.dt);
    let mut short_map = None;
    for level in 1..=steps {
        let t0 = config.time_of(level - 1);
        let h = config.time_of(level) - t0;
        let m = if (h - config.dt).abs() <= 1e-12 * config.dt {
            &map
        } else {
            short_map.get_or_insert_with(|| particle::NoiseMap::new(diff, h))
        };
        let buf = if noise.is_empty() {
            None
        } else {
            Some(&mut noise[..])
        };
        particle::em_step_with(&mut ens, drift, m, h, config.seed, config.guard_radius, buf)?;
        let nz = if noise.is_empty() { None } else { Some(&noise[..]) };
        visit(&ens, nz, observers, &mut checkpoints, level)?;
    }
    Ok(ForwardRun {
        checkpoints,
        moments: None,
        last: ens,
    })
}

/// Box and resolution for the grid backend.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub half_width: f64,
    pub cells: usize,
    #[serde(default = "default_true")]
    pub auto_substep: bool,
}

fn default_true() -> bool {
    true
}

/// Result of a grid run.
#[derive(Clone, Debug)]
pub struct GridRun {
    pub checkpoints: Vec<GridDensity>,
    pub moments: Option<MomentReport>,
    pub last: GridDensity,
    /// Largest mass seen in the boundary layer of cells.
    pub max_boundary_mass: f64,
}

pub fn grid_solve_forward(
    config: &SolveConfig,
    grid: &GridConfig,
    drift: &dyn Drift,
    diff: &DiffusionMatrix,
) -> Result<GridRun> {
    let mut tracker = match &config.moments {
        Some(spec) => Some(MomentTracker::new(spec, drift.dim())?),
        None => None,
    };
    let mut observers: Vec<&mut dyn Observer> = Vec::new();
    if let Some(t) = tracker.as_mut() {
        observers.push(t);
    }
    let mut run = grid_solve_forward_observed(config, grid, drift, diff, &mut observers)?;
    drop(observers);
    run.moments = tracker.map(MomentTracker::into_report);
    Ok(run)
}

pub fn grid_solve_forward_observed(
    config: &SolveConfig,
    grid: &GridConfig,
    drift: &dyn Drift,
    diff: &DiffusionMatrix,
    observers: &mut [&mut dyn Observer],
) -> Result<GridRun> {
    config.validate()?;
    let n = drift.dim();
    let spec = GridSpec {
        half_width: grid.half_width,
        cells: grid.cells,
        auto_substep: grid.auto_substep,
    };
    let mut solver = GridSolver::new(drift, diff, spec)?;
    let mut g = GridDensity::from_law(&config.initial, n, grid.half_width, grid.cells)?;
    let marks = config.checkpoint_steps();
    let mut checkpoints = Vec::new();
    let mut max_boundary_mass = g.boundary_mass();
    let visit = |g: &GridDensity,
                 observers: &mut [&mut dyn Observer],
                 checkpoints: &mut Vec<GridDensity>,
                 level: u64|
     -> Result<()> {
        let view = MeasureView::Grid(g);
        for o in observers.iter_mut() {
            o.observe(g.t(), &view)?;
        }
        if marks.binary_search(&level).is_ok() {
            for o in observers.iter_mut() {
                o.checkpoint(g.t())?;
            }
            checkpoints.push(g.clone());
        }
        Ok(())
    };
    visit(&g, observers, &mut checkpoints, 0)?;
    for level in 1..=config.steps() {
        let h = config.time_of(level) - config.time_of(level - 1);
        solver.step(&mut g, h)?;
        max_boundary_mass = max_boundary_mass.max(g.boundary_mass());
        visit(&g, observers, &mut checkpoints, level)?;
    }
    Ok(GridRun {
        checkpoints,
        moments: None,
        last: g,
        max_boundary_mass,
    })
}
