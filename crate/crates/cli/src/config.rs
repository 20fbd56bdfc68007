//! Run configuration: TOML on the way in, JSON inside manifests.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use fpk_core::backward::{BackwardConfig, TerminalSpec};
use fpk_core::certify::{ConditionId, SamplerSpec, GROWTH_POWERS};
use fpk_core::drift::{DiffusionModel, DriftModel, PolyDrift};
use fpk_core::lyapunov::{LyapunovSpec, ThetaSpec};
use fpk_core::solver::{GridConfig, InitialLaw, MomentForm, SolveConfig, DEFAULT_GUARD_RADIUS};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    GridSolve,
    Backward,
    Duality,
    Certify,
    Moments,
    Convergence,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::GridSolve => "grid-solve",
            Experiment::Backward => "backward",
            Experiment::Duality => "duality",
            Experiment::Certify => "certify",
            Experiment::Moments => "moments",
            Experiment::Convergence => "convergence",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` takes precedence.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Galerkin truncation `N` of the forward problem.
    #[serde(default = "one")]
    pub modes: usize,
    pub drift: DriftModel,
    pub diffusion: DiffusionModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub backward: Option<BackwardSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certify: Option<CertifySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
}

fn one() -> usize {
    1
}

fn default_particles() -> usize {
    10_000
}

fn default_guard() -> f64 {
    DEFAULT_GUARD_RADIUS
}

fn default_true() -> bool {
    true
}

fn default_stride() -> usize {
    1
}

fn default_levels() -> usize {
    100
}

fn default_q() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "default_particles")]
    pub particles: usize,
    pub initial: InitialLaw,
    #[serde(default)]
    pub checkpoints: Vec<f64>,
    #[serde(default = "default_guard")]
    pub guard_radius: f64,
}

/// The drift `b` of the backward problem.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Approximant {
    /// `b = B_N`, the Galerkin polynomial of the configured drift.
    Galerkin,
    /// `b^k = −r_k x_k`; rates default to `(kπ)²`.
    Linear {
        #[serde(default)]
        rates: Option<Vec<f64>>,
    },
    /// `b = B_N − s(B_N − b_lin)` with Laplacian `b_lin`.
    Blend { s: f64 },
    Custom { drift: PolyDrift },
}

impl Default for Approximant {
    fn default() -> Self {
        Approximant::Galerkin
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackwardSection {
    pub terminal: TerminalSpec,
    pub half_width: f64,
    pub nodes: usize,
    /// Terminal time; duality runs use the solver horizon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<f64>,
    /// Dimension of the backward problem; defaults to `modes`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub modes: Option<usize>,
    #[serde(default)]
    pub approximant: Approximant,
    #[serde(default = "default_true")]
    pub normalize: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    /// Implicitness: 0 explicit, 1 backward Euler.
    #[serde(default)]
    pub theta: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// Every `stride`-th stored level goes to the CSV.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

impl BackwardSection {
    pub fn grid(&self) -> BackwardConfig {
        BackwardConfig {
            half_width: self.half_width,
            nodes: self.nodes,
            dt: self.dt,
            theta: self.theta,
            levels: self.levels,
            auto_substep: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub v: LyapunovSpec,
    /// `Θ`; exponential `V` on the built-in drifts can derive it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<ThetaSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub m0: Option<f64>,
    #[serde(default)]
    pub ks: Vec<u32>,
    #[serde(default)]
    pub form: MomentForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifySection {
    pub conditions: Vec<ConditionId>,
    /// Exponent `q` of the growth condition.
    #[serde(default = "default_q")]
    pub q: f64,
    /// `δ` in the `Λ`-weighted inequality.
    #[serde(default)]
    pub delta: f64,
    /// Jacobian bound `θ` on `b`.
    #[serde(default = "zero_theta")]
    pub jacobian_bound: ThetaSpec,
    /// Approximant for condition (B) and the Jacobian check.
    #[serde(default)]
    pub approximant: Approximant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approximant_modes: Option<usize>,
    /// Condition (B) passes when `ε + 3·stderr` stays below this.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_target: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerSpec>,
}

fn zero_theta() -> ThetaSpec {
    ThetaSpec::Zero
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    pub sizes: Vec<usize>,
    pub reference: usize,
}

impl RunConfig {
    /// Parses TOML, checking the schema version before the full schema so
    /// that old files get a version message rather than field errors.
    pub fn from_toml(text: &str) -> Result<Self> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| anyhow::anyhow!("config parse error: {e}"))?;
        check_version(raw.get("schema_version").and_then(toml::Value::as_integer))?;
        let cfg: RunConfig = toml::from_str(text).map_err(|e| anyhow::anyhow!("config parse error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_manifest_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value =
            serde_json::from_str(text).map_err(|e| anyhow::anyhow!("manifest parse error: {e}"))?;
        let config = raw
            .get("config")
            .context("manifest has no \"config\" object")?
            .clone();
        check_version(config.get("schema_version").and_then(serde_json::Value::as_i64))?;
        let cfg: RunConfig =
            serde_json::from_value(config).map_err(|e| anyhow::anyhow!("manifest config error: {e}"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// `.json` files are read as manifests, everything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let cfg = if is_json {
            Self::from_manifest_json(&text)
        } else {
            Self::from_toml(&text)
        };
        cfg.with_context(|| format!("in {}", path.display()))
    }

    pub fn solve_config(&self) -> Result<SolveConfig> {
        let s = self.solver.as_ref().context("this experiment needs a [solver] table")?;
        Ok(SolveConfig {
            dt: s.dt,
            horizon: s.horizon,
            particles: s.particles,
            seed: self.seed,
            initial: s.initial.clone(),
            checkpoints: s.checkpoints.clone(),
            guard_radius: s.guard_radius,
            moments: None,
        })
    }

    pub fn lyapunov(&self) -> Result<&LyapunovSection> {
        self.lyapunov.as_ref().context("this experiment needs a [lyapunov] table")
    }

    pub fn backward(&self) -> Result<&BackwardSection> {
        self.backward.as_ref().context("this experiment needs a [backward] table")
    }

    pub fn validate(&self) -> Result<()> {
        if self.modes == 0 {
            bail!("modes must be positive");
        }
        self.drift.validate()?;
        self.diffusion.matrix(self.modes)?;
        if let Some(s) = &self.solver {
            self.solve_config()?.validate()?;
            if !(s.guard_radius > 0.0) {
                bail!("guard_radius must be positive");
            }
        }
        if let Some(l) = &self.lyapunov {
            l.v.validate()?;
            if l.ks.iter().any(|&k| k == 0) {
                bail!("moment orders ks must be at least 1");
            }
        }
        if let Some(b) = &self.backward {
            b.grid().validate()?;
            if b.horizon.is_some_and(|h| !(h > 0.0 && h.is_finite())) {
                bail!("backward horizon must be positive");
            }
            if let Approximant::Blend { s } = b.approximant {
                if !(0.0..=1.0).contains(&s) {
                    bail!("blend parameter s must lie in [0, 1]");
                }
            }
        }
        if let Some(c) = &self.certify {
            if !GROWTH_POWERS.contains(&c.q) {
                bail!("growth exponent q must be one of {GROWTH_POWERS:?}");
            }
            if let Some(sampler) = &c.sampler {
                sampler.validate()?;
            }
        }
        let need = |present: bool, table: &str| -> Result<()> {
            if present {
                Ok(())
            } else {
                bail!("experiment {} needs a [{table}] table", self.experiment.name())
            }
        };
        match self.experiment {
            Experiment::Simulate => need(self.solver.is_some(), "solver")?,
            Experiment::GridSolve => {
                need(self.solver.is_some(), "solver")?;
                need(self.grid.is_some(), "grid")?;
            }
            Experiment::Backward => need(self.backward.is_some(), "backward")?,
            Experiment::Duality => {
                need(self.solver.is_some(), "solver")?;
                need(self.backward.is_some(), "backward")?;
            }
            Experiment::Certify => need(self.certify.is_some(), "certify")?,
            Experiment::Moments => {
                need(self.solver.is_some(), "solver")?;
                need(self.lyapunov.is_some(), "lyapunov")?;
                let l = self.lyapunov()?;
                if l.ks.is_empty() {
                    bail!("moments needs at least one order in lyapunov.ks");
                }
                match l.form {
                    MomentForm::Power => {
                        if l.c0.is_none() || l.m0.is_none() || l.theta.is_none() {
                            bail!("power-form moment bounds need lyapunov.c0, lyapunov.m0 and lyapunov.theta");
                        }
                    }
                    MomentForm::Exponential => {
                        if self.solver.as_ref().is_some_and(|s| s.horizon > 1.0) {
                            bail!("exponential-form moment bounds cover horizons up to 1");
                        }
                        if l.ks != [1] {
                            bail!("exponential-form moment bounds are stated for k = 1 only");
                        }
                    }
                }
            }
            Experiment::Convergence => {
                need(self.solver.is_some(), "solver")?;
                need(self.convergence.is_some(), "convergence")?;
                let c = self.convergence.as_ref().expect("checked");
                if c.sizes.is_empty() || c.sizes.iter().any(|&n| n == 0 || n >= c.reference) {
                    bail!("convergence sizes must be nonempty and below the reference size");
                }
                self.diffusion.matrix(c.reference)?;
            }
        }
        Ok(())
    }
}

fn check_version(found: Option<i64>) -> Result<()> {
    match found {
        Some(v) if v == i64::from(SCHEMA_VERSION) => Ok(()),
        Some(v) => bail!("unsupported schema_version {v}; this build reads schema_version = {SCHEMA_VERSION}"),
        None => bail!("missing schema_version; add schema_version = {SCHEMA_VERSION}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_configs_parse_and_survive_a_json_round_trip() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.extension().is_some_and(|e| e == "toml") {
                let cfg = RunConfig::load(&path).unwrap();
                let manifest = serde_json::json!({ "config": cfg });
                let back = RunConfig::from_manifest_json(&manifest.to_string()).unwrap();
                assert_eq!(back, cfg, "{}", path.display());
                seen += 1;
            }
        }
        assert!(seen >= 8);
    }

    #[test]
    fn sections_required_by_the_experiment() {
        let base = "schema_version = 1\nexperiment = \"moments\"\n[drift]\nfamily = \"burgers\"\n\
                    [diffusion]\nkind = \"power-law\"\nscale = 1.0\npower = 2.0\n";
        let e = RunConfig::from_toml(base).unwrap_err();
        assert!(e.to_string().contains("needs a [solver] table"), "{e}");
        let long = format!(
            "{base}[solver]\ndt = 0.01\nhorizon = 2.0\ninitial = {{ kind = \"point-mass\" }}\n\
             [lyapunov]\nv = {{ family = \"exp-quadratic\", kappa = 0.25, beta = [1.0] }}\nks = [1]\nform = \"exponential\"\n"
        );
        let e = RunConfig::from_toml(&long).unwrap_err();
        assert!(e.to_string().contains("horizons up to 1"), "{e}");
    }
}
