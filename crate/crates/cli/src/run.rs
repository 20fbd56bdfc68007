//! Experiment orchestration.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde_json::json;

use fpk_core::backward::duality::holmgren_bound;
use fpk_core::backward::{
    gradient_bound_check, solve_backward, BackwardProblem, BackwardSolution, DualityObserver, DualityReport,
    TerminalSpec, GRADIENT_BOUND_SLACK, MAX_BACKWARD_DIM,
};
use fpk_core::certify::{
    check_condition_a, check_lyapunov, check_lyapunov_exp, condbprime_check, exponential_bound, growth_check,
    initial_moment, moment_bound_check, power_bound, suggest_c0_bprime, Certificate, Coefficients, CondBError,
    ConditionId, GrowthForm, SamplerSpec,
};
use fpk_core::drift::{diffusion_matrix, Drift, PolyDrift};
use fpk_core::io::{write_backward, write_grid, write_moments, write_particles};
use fpk_core::lyapunov::ThetaSpec;
use fpk_core::solver::{
    grid_solve_forward, ks_null_sd, marginal, solve_forward, solve_forward_observed, MomentForm, MomentSpec,
    Observer,
};

use crate::config::{Approximant, Experiment, RunConfig};
use crate::output::Artifacts;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    CertificateFailed,
}

impl Status {
    fn from_pass(pass: bool) -> Self {
        if pass {
            Status::Ok
        } else {
            Status::CertificateFailed
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::CertificateFailed => "certificate-failed",
        }
    }
}

pub struct Outcome {
    pub status: Status,
    pub prefix: String,
    pub manifest: std::path::PathBuf,
}

pub fn run(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    let mut arts = Artifacts::new(out, cfg.experiment.name())?;
    let (status, summary) = match cfg.experiment {
        Experiment::Simulate => simulate(cfg, &mut arts),
        Experiment::GridSolve => grid_solve(cfg, &mut arts),
        Experiment::Backward => backward(cfg, &mut arts),
        Experiment::Duality => duality(cfg, &mut arts),
        Experiment::Certify => certify(cfg, &mut arts),
        Experiment::Moments => moments(cfg, &mut arts),
        Experiment::Convergence => convergence(cfg, &mut arts),
    }
    .with_context(|| format!("experiment {} failed", cfg.experiment.name()))?;
    let prefix = arts.prefix().to_string();
    let manifest = arts.finish(cfg, status.label(), summary)?;
    Ok(Outcome {
        status,
        prefix,
        manifest,
    })
}

fn laplacian_rates(n: usize) -> Vec<f64> {
    (1..=n).map(|k| (k as f64 * PI).powi(2)).collect()
}

fn approximant_poly(cfg: &RunConfig, approx: &Approximant, n: usize) -> Result<PolyDrift> {
    let galerkin = || -> Result<PolyDrift> {
        if !cfg.drift.discretize(n)?.is_autonomous() {
            bail!("the Galerkin approximant needs an autonomous drift");
        }
        Ok(cfg.drift.galerkin_polynomial(n, 0.0)?)
    };
    Ok(match approx {
        Approximant::Galerkin => galerkin()?,
        Approximant::Linear { rates } => {
            let rates = rates.clone().unwrap_or_else(|| laplacian_rates(n));
            if rates.len() != n {
                bail!("linear approximant has {} rates for {n} modes", rates.len());
            }
            PolyDrift::linear_decay(&rates).with_saturation(None)
        }
        Approximant::Blend { s } => galerkin()?.blend(&PolyDrift::linear_decay(&laplacian_rates(n)), *s)?,
        Approximant::Custom { drift } => {
            if drift.dim() != n {
                bail!("custom approximant has dimension {}, expected {n}", drift.dim());
            }
            drift.clone()
        }
    })
}

fn coefficients(cfg: &RunConfig) -> Coefficients {
    Coefficients {
        drift: cfg.drift.clone(),
        diffusion: cfg.diffusion.clone(),
    }
}

/// The configured sampler, or the default one seeded from the run with
/// the given truncations.
fn sampler(cfg: &RunConfig, dims: Option<Vec<usize>>) -> SamplerSpec {
    if let Some(s) = cfg.certify.as_ref().and_then(|c| c.sampler.clone()) {
        return s;
    }
    let mut s = SamplerSpec {
        seed: cfg.seed,
        ..SamplerSpec::default()
    };
    if let Some(d) = dims {
        s.dims = d;
    }
    s
}

fn moment_spec(cfg: &RunConfig) -> Result<Option<MomentSpec>> {
    let Some(l) = &cfg.lyapunov else { return Ok(None) };
    if l.ks.is_empty() {
        return Ok(None);
    }
    let theta = l.theta.clone().context("moment tracking needs lyapunov.theta")?;
    Ok(Some(MomentSpec {
        v: l.v.clone(),
        theta,
        ks: l.ks.clone(),
        form: l.form,
    }))
}

fn simulate(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let n = cfg.modes;
    let drift = cfg.drift.discretize(n)?;
    let diff = diffusion_matrix(&cfg.diffusion, n)?;
    let mut sc = cfg.solve_config()?;
    sc.moments = moment_spec(cfg)?;
    let run = solve_forward(&sc, drift.as_ref(), &diff)?;
    write_particles(arts.file("particles.csv")?, &run.checkpoints)?;
    if let Some(m) = &run.moments {
        write_moments(arts.file("moments.csv")?, m, None)?;
    }
    let last = &run.last;
    let summary = json!({
        "t": last.t(),
        "particles": last.len(),
        "mean": (0..n).map(|k| last.mean(k)).collect::<Vec<_>>(),
        "variance": (0..n).map(|k| last.variance(k)).collect::<Vec<_>>(),
    });
    Ok((Status::Ok, summary))
}

fn grid_solve(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let n = cfg.modes;
    let drift = cfg.drift.discretize(n)?;
    let diff = diffusion_matrix(&cfg.diffusion, n)?;
    let mut sc = cfg.solve_config()?;
    sc.moments = moment_spec(cfg)?;
    let grid = cfg.grid.as_ref().context("grid-solve needs a [grid] table")?;
    let run = grid_solve_forward(&sc, grid, drift.as_ref(), &diff)?;
    write_grid(arts.file("grid.csv")?, &run.checkpoints)?;
    if let Some(m) = &run.moments {
        write_moments(arts.file("moments.csv")?, m, None)?;
    }
    let summary = json!({
        "t": run.last.t(),
        "total_mass": run.last.total_mass(),
        "max_boundary_mass": run.max_boundary_mass,
        "mean": (0..n).map(|k| run.last.mean(k)).collect::<Vec<_>>(),
    });
    Ok((Status::Ok, summary))
}

/// Pads a Gaussian terminal centre with zeros up to `n` coordinates, as
/// initial laws are padded.
fn terminal_for(spec: &TerminalSpec, n: usize) -> TerminalSpec {
    match spec {
        TerminalSpec::Gaussian { center, width } if center.len() < n => {
            let mut center = center.clone();
            center.resize(n, 0.0);
            TerminalSpec::Gaussian { center, width: *width }
        }
        other => other.clone(),
    }
}

/// Backward problem of the configured dimension with its approximant drift.
fn backward_solution(cfg: &RunConfig, horizon: f64) -> Result<(PolyDrift, BackwardSolution)> {
    let b = cfg.backward()?;
    let n = b.modes.unwrap_or(cfg.modes);
    let drift = approximant_poly(cfg, &b.approximant, n)?;
    let problem = BackwardProblem {
        drift: drift.clone(),
        diffusion: cfg.diffusion.matrix(n)?,
        terminal: terminal_for(&b.terminal, n),
        normalize: b.normalize,
        horizon,
        cutoff: None,
    };
    let sol = solve_backward(&problem, &b.grid())?;
    Ok((drift, sol))
}

const MAX_PRINCIPLE_TOL: f64 = 1e-8;

fn backward(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let b = cfg.backward()?;
    let horizon = b
        .horizon
        .or(cfg.solver.as_ref().map(|s| s.horizon))
        .context("backward needs backward.horizon")?;
    let (_, sol) = backward_solution(cfg, horizon)?;
    write_backward(arts.file("backward.csv")?, &sol, b.stride)?;
    let max_principle = sol.satisfies_max_principle(MAX_PRINCIPLE_TOL);
    let mut pass = max_principle;
    let mut summary = json!({
        "f_max": sol.f_max(),
        "psi_max": sol.psi_max(),
        "max_principle": max_principle,
        "steps": sol.steps(),
        "dt": sol.dt(),
    });
    if let Some(l) = &cfg.lyapunov {
        if let Some(c0) = l.c0 {
            let g = gradient_bound_check(&sol, &l.v, c0, GRADIENT_BOUND_SLACK)?;
            pass &= g.pass;
            summary["gradient_bound"] = serde_json::to_value(&g)?;
        }
    }
    Ok((Status::from_pass(pass), summary))
}

fn duality(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let sc = cfg.solve_config()?;
    let forward = cfg.drift.discretize(cfg.modes)?;
    let diff = diffusion_matrix(&cfg.diffusion, cfg.modes)?;
    let (approx, sol) = backward_solution(cfg, sc.horizon)?;
    let mut obs = DualityObserver::new(&sol, forward.as_ref(), &approx, &diff.a)?;
    solve_forward_observed(&sc, forward.as_ref(), &diff, &mut [&mut obs])?;
    let report = obs.report()?;
    arts.json("duality.json", &report)?;
    let bound_holds = report.bound_holds();
    let energy_holds = report.energy_holds(report.eps);
    let summary = json!({
        "gap": report.gap,
        "mismatch_gap": report.mismatch_gap,
        "eps": report.eps,
        "bound": report.bound,
        "bound_holds": bound_holds,
        "energy": report.energy,
        "energy_holds": energy_holds,
        "max_principle": sol.satisfies_max_principle(MAX_PRINCIPLE_TOL),
    });
    Ok((Status::from_pass(bound_holds && energy_holds), summary))
}

fn certify(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let c = cfg.certify.as_ref().context("certify needs a [certify] table")?;
    let coef = coefficients(cfg);
    let sampler = sampler(cfg, None);
    let mut certs: Vec<Certificate> = Vec::new();
    for &cond in &c.conditions {
        let cert = match cond {
            ConditionId::A => check_condition_a(&cfg.diffusion, &coef.dims(&sampler))?,
            ConditionId::B => {
                let target = c.eps_target.context("condition b needs certify.eps_target")?;
                let sc = cfg.solve_config()?;
                let forward = cfg.drift.discretize(cfg.modes)?;
                let diff = diffusion_matrix(&cfg.diffusion, cfg.modes)?;
                let n = c.approximant_modes.unwrap_or(cfg.modes);
                let approx = approximant_poly(cfg, &c.approximant, n)?;
                let mut obs = CondBError::new(forward.as_ref(), &approx, &diff.a)?;
                solve_forward_observed(&sc, forward.as_ref(), &diff, &mut [&mut obs])?;
                obs.estimate()?.certificate(target)
            }
            ConditionId::BPrime => {
                let l = cfg.lyapunov()?;
                let n = c.approximant_modes.unwrap_or(cfg.modes);
                let approx = approximant_poly(cfg, &c.approximant, n)?;
                let c0 = match l.c0 {
                    Some(c0) => c0,
                    None => constant_theta(&c.jacobian_bound)
                        .and_then(|th| suggest_c0_bprime(&approx, th, &l.v, &cfg.diffusion, c.delta))
                        .context("b-prime needs lyapunov.c0 (no closed-form suggestion applies)")?,
                };
                condbprime_check(&approx, &c.jacobian_bound, &l.v, &cfg.diffusion, c.delta, c0, &sampler)?
            }
            ConditionId::Lyapunov => {
                let l = cfg.lyapunov()?;
                let theta = l.theta.as_ref().context("lyapunov needs lyapunov.theta")?;
                let c0 = l.c0.context("lyapunov needs lyapunov.c0")?;
                let m0 = l.m0.context("lyapunov needs lyapunov.m0")?;
                check_lyapunov(&coef, &l.v, theta, c0, m0, &sampler)?
            }
            ConditionId::LyapunovExp => {
                let l = cfg.lyapunov()?;
                check_lyapunov_exp(&coef, &l.v, l.theta.as_ref(), &sampler)?
            }
            ConditionId::Growth | ConditionId::GrowthExp => {
                let l = cfg.lyapunov()?;
                let theta = match &l.theta {
                    Some(t) => t.clone(),
                    None => check_lyapunov_exp(&coef, &l.v, None, &sampler)?
                        .theta
                        .context("growth needs lyapunov.theta")?,
                };
                let form = if cond == ConditionId::Growth {
                    GrowthForm::Theta
                } else {
                    GrowthForm::VTheta
                };
                growth_check(&coef, &l.v, &theta, c.q, form, &sampler)?
            }
        };
        log::info!("condition {cond:?}: {:?}", cert.verdict);
        certs.push(cert);
    }
    arts.json("certificates.json", &certs)?;
    let pass = certs.iter().all(Certificate::passed);
    let mut verdicts = serde_json::Map::new();
    for c in &certs {
        let id = serde_json::to_value(c.condition)?;
        verdicts.insert(id.as_str().unwrap_or_default().to_string(), c.passed().into());
    }
    Ok((Status::from_pass(pass), json!({ "passed": verdicts, "sampler_seed": sampler.seed })))
}

fn constant_theta(theta: &ThetaSpec) -> Option<f64> {
    match theta {
        ThetaSpec::Zero => Some(0.0),
        ThetaSpec::Quadratic { constant, weights } if weights.iter().all(|w| *w == 0.0) => Some(*constant),
        ThetaSpec::H01 { constant, scale } if *scale == 0.0 => Some(*constant),
        _ => None,
    }
}

fn moments(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let n = cfg.modes;
    let l = cfg.lyapunov()?;
    let coef = coefficients(cfg);
    let sampler = sampler(cfg, Some(vec![n]));
    let (cert, theta) = match l.form {
        MomentForm::Exponential => {
            let cert = check_lyapunov_exp(&coef, &l.v, l.theta.as_ref(), &sampler)?;
            let theta = l
                .theta
                .clone()
                .or_else(|| cert.theta.clone())
                .context("no Θ given and none can be derived for this drift")?;
            (cert, theta)
        }
        MomentForm::Power => {
            let theta = l.theta.clone().context("power form needs lyapunov.theta")?;
            let c0 = l.c0.context("power form needs lyapunov.c0")?;
            let m0 = l.m0.context("power form needs lyapunov.m0")?;
            (check_lyapunov(&coef, &l.v, &theta, c0, m0, &sampler)?, theta)
        }
    };
    let mut sc = cfg.solve_config()?;
    sc.moments = Some(MomentSpec {
        v: l.v.clone(),
        theta,
        ks: l.ks.clone(),
        form: l.form,
    });
    let drift = cfg.drift.discretize(n)?;
    let diff = diffusion_matrix(&cfg.diffusion, n)?;
    let run = solve_forward(&sc, drift.as_ref(), &diff)?;
    let report = run.moments.context("moment report missing")?;
    let mut bounds = BTreeMap::new();
    let mut w = BTreeMap::new();
    for &k in &l.ks {
        let wk = initial_moment(&l.v, &sc.initial, n, k)?.value;
        w.insert(k, wk);
        let bound = match l.form {
            MomentForm::Exponential => exponential_bound(wk),
            MomentForm::Power => power_bound(k, l.c0.expect("validated"), l.m0.expect("validated"), wk),
        };
        bounds.insert(k, bound);
    }
    let check = moment_bound_check(&report, l.form, &bounds)?;
    write_moments(arts.file("moments.csv")?, &report, Some(&bounds))?;
    arts.json("certificate.json", &cert)?;
    arts.json("moment-check.json", &check)?;
    let summary = json!({
        "certificate": cert.passed(),
        "bounds_hold": check.pass,
        "initial_moments": w,
        "bounds": bounds,
    });
    Ok((Status::from_pass(cert.passed() && check.pass), summary))
}

pub const CONVERGENCE_HEADER: [&str; 8] =
    ["n", "ks_distance", "ks_null_sd", "eps", "eps_stderr", "bound", "gap", "gap_stderr"];

fn convergence(cfg: &RunConfig, arts: &mut Artifacts) -> Result<(Status, serde_json::Value)> {
    let conv = cfg.convergence.as_ref().context("convergence needs a [convergence] table")?;
    let sc = cfg.solve_config()?;
    let mut sizes = conv.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let reference = conv.reference;
    let big = cfg.drift.discretize(reference)?;
    let diff_ref = diffusion_matrix(&cfg.diffusion, reference)?;
    let small: Vec<Box<dyn Drift>> = sizes
        .iter()
        .map(|&n| cfg.drift.discretize(n))
        .collect::<Result<_, _>>()?;

    // Duality gaps need a backward grid, so only small N get one.
    let mut backward = Vec::new();
    if let Some(b) = &cfg.backward {
        for &n in sizes.iter().filter(|&&n| n <= MAX_BACKWARD_DIM) {
            let drift = approximant_poly(cfg, &b.approximant, n)?;
            let problem = BackwardProblem {
                drift: drift.clone(),
                diffusion: cfg.diffusion.matrix(n)?,
                terminal: terminal_for(&b.terminal, n),
                normalize: b.normalize,
                horizon: sc.horizon,
                cutoff: None,
            };
            backward.push((n, drift, solve_backward(&problem, &b.grid())?));
        }
    }
    let mut cond_b: Vec<CondBError> = small
        .iter()
        .map(|d| CondBError::new(big.as_ref(), d.as_ref(), &diff_ref.a))
        .collect::<Result<_, _>>()?;
    let mut dual: Vec<DualityObserver> = backward
        .iter()
        .map(|(_, drift, sol)| DualityObserver::new(sol, big.as_ref(), drift, &diff_ref.a))
        .collect::<Result<_, _>>()?;
    let reference_run = {
        let mut observers: Vec<&mut dyn Observer> = Vec::new();
        observers.extend(cond_b.iter_mut().map(|o| o as &mut dyn Observer));
        observers.extend(dual.iter_mut().map(|o| o as &mut dyn Observer));
        solve_forward_observed(&sc, big.as_ref(), &diff_ref, &mut observers)?
    };
    let reference_marginal = marginal(&reference_run.last, 0)?;
    let sigma = ks_null_sd(sc.particles, sc.particles);

    let mut rows = Vec::new();
    for (i, &n) in sizes.iter().enumerate() {
        let diff = diffusion_matrix(&cfg.diffusion, n)?;
        let run = solve_forward(&sc, small[i].as_ref(), &diff)?;
        let ks = marginal(&run.last, 0)?.ks_distance(&reference_marginal);
        let est = cond_b[i].estimate()?;
        let gap: Option<DualityReport> = backward
            .iter()
            .position(|(m, _, _)| *m == n)
            .map(|j| dual[j].report())
            .transpose()?;
        rows.push((n, ks, est.eps, est.stderr, gap));
    }

    let mut w = csv::Writer::from_writer(arts.file("convergence.csv")?);
    w.write_record(CONVERGENCE_HEADER)?;
    for (n, ks, eps, se, gap) in &rows {
        let (g, gse) = match gap {
            Some(r) => (format!("{}", r.mismatch_gap), format!("{}", r.mismatch_stderr)),
            None => (String::new(), String::new()),
        };
        w.write_record([
            n.to_string(),
            format!("{ks}"),
            format!("{sigma}"),
            format!("{eps}"),
            format!("{se}"),
            format!("{}", holmgren_bound(*eps)),
            g,
            gse,
        ])?;
    }
    w.flush()?;

    let non_increasing = rows.windows(2).all(|p| p[1].1 <= p[0].1 + 3.0 * sigma);
    let gaps_within_bound = rows
        .iter()
        .filter_map(|r| r.4.as_ref())
        .all(DualityReport::bound_holds);
    let summary = json!({
        "reference": reference,
        "sizes": sizes,
        "ks": rows.iter().map(|r| r.1).collect::<Vec<_>>(),
        "ks_null_sd": sigma,
        "ks_non_increasing": non_increasing,
        "gaps_within_bound": gaps_within_bound,
    });
    Ok((Status::Ok, summary))
}
