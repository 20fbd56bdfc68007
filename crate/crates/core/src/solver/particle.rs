//! Particle ensembles and the Euler–Maruyama step.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::drift::{Drift, DiffusionMatrix};
use crate::error::{invalid, FpkError, Result};
use crate::rng;

use super::initial::InitialLaw;

/// Particles per parallel work item.
const CHUNK: usize = 512;

/// Default blow-up guard on `|X|`.
pub const DEFAULT_GUARD_RADIUS: f64 = 1e6;

/// `P` particles in `ℝ^N`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    dim: usize,
    positions: Vec<f64>,
    t: f64,
    /// Number of steps taken; selects the random stream cell.
    step: u64,
}

impl ParticleEnsemble {
    pub fn new(dim: usize, positions: Vec<f64>, t: f64) -> Result<Self> {
        if dim == 0 || positions.is_empty() || positions.len() % dim != 0 {
            return Err(invalid("positions must hold P >= 1 rows of N >= 1 coordinates"));
        }
        if positions.iter().any(|v| !v.is_finite()) {
            return Err(invalid("particle positions must be finite"));
        }
        Ok(Self {
            dim,
            positions,
            t,
            step: 0,
        })
    }

    /// Draws `p` particles from `ν` on `n` coordinates.
    pub fn sample(law: &InitialLaw, n: usize, p: usize, seed: u64) -> Result<Self> {
        if p == 0 || n == 0 {
            return Err(invalid("need at least one particle and one mode"));
        }
        let law = law.resolve()?;
        law.validate()?;
        let mut positions = vec![0.0; n * p];
        positions
            .par_chunks_mut(n)
            .enumerate()
            .try_for_each(|(i, row)| law.sample_into(seed, i as u64, row))?;
        Self::new(n, positions, 0.0)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    /// Coordinate `k` of every particle.
    pub fn coordinate(&self, k: usize) -> Vec<f64> {
        self.positions.iter().skip(k).step_by(self.dim).copied().collect()
    }

    pub fn mean(&self, k: usize) -> f64 {
        self.coordinate(k).iter().sum::<f64>() / self.len() as f64
    }

    /// Unbiased sample variance of coordinate `k`.
    pub fn variance(&self, k: usize) -> f64 {
        let c = self.coordinate(k);
        let m = c.iter().sum::<f64>() / c.len() as f64;
        let ss: f64 = c.iter().map(|v| (v - m).powi(2)).sum();
        ss / (c.len().max(2) - 1) as f64
    }
}

/// Precomputed noise map `ξ ↦ √(2A·dt) ξ`.
#[derive(Clone, Debug)]
pub(crate) enum NoiseMap {
    Zero,
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl NoiseMap {
    pub(crate) fn new(diff: &DiffusionMatrix, dt: f64) -> Self {
        if diff.max_eigenvalue == 0.0 {
            NoiseMap::Zero
        } else if diff.is_diagonal() {
            NoiseMap::Diagonal(
                (0..diff.dim())
                    .map(|i| (2.0 * diff.a[(i, i)] * dt).sqrt())
                    .collect(),
            )
        } else {
            NoiseMap::Full(diff.noise_factor() * dt.sqrt())
        }
    }

    fn apply(&self, xi: &[f64], out: &mut [f64]) {
        match self {
            NoiseMap::Zero => out.fill(0.0),
            NoiseMap::Diagonal(s) => {
                for ((o, s), x) in out.iter_mut().zip(s).zip(xi) {
                    *o = s * x;
                }
            }
            NoiseMap::Full(m) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..xi.len()).map(|j| m[(i, j)] * xi[j]).sum();
                }
            }
        }
    }
}

/// One Euler–Maruyama step `X ← X + B(X, t)dt + √(2A)√dt ξ`.
///
/// Noise for particle `p` at step `n` is drawn from stream cell
/// `(seed, p, n + 1)`, so results do not depend on the thread count. When
/// `noise_out` is given it receives the `P×N` noise increments.
pub fn em_step(
    ens: &mut ParticleEnsemble,
    drift: &dyn Drift,
    diff: &DiffusionMatrix,
    dt: f64,
    seed: u64,
    guard_radius: f64,
    noise_out: Option<&mut [f64]>,
) -> Result<()> {
    let map = NoiseMap::new(diff, dt);
    em_step_with(ens, drift, &map, dt, seed, guard_radius, noise_out)
}

pub(crate) fn em_step_with(
    ens: &mut ParticleEnsemble,
    drift: &dyn Drift,
    map: &NoiseMap,
    dt: f64,
    seed: u64,
    guard_radius: f64,
    noise_out: Option<&mut [f64]>,
) -> Result<()> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt must be positive"));
    }
    let n = ens.dim;
    if drift.dim() != n {
        return Err(FpkError::DimensionMismatch {
            expected: n,
            actual: drift.dim(),
        });
    }
    let t = ens.t;
    let step = ens.step + 1;
    let mut dummy = Vec::new();
    let noise_buf: &mut [f64] = match noise_out {
        Some(buf) => {
            if buf.len() != ens.positions.len() {
                return Err(invalid("noise buffer must hold P×N entries"));
            }
            buf
        }
        None => &mut dummy,
    };
    let record = !noise_buf.is_empty();
    let scratch_len = drift.scratch_len();

    let work = |(c, (rows, noise)): (usize, (&mut [f64], &mut [f64])),
                buf: &mut (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)|
     -> Result<()> {
        let (b, xi, dw, scratch) = buf;
        for (i, row) in rows.chunks_exact_mut(n).enumerate() {
            let p = c * CHUNK + i;
            drift.eval(row, t, b, scratch);
            match map {
                NoiseMap::Zero => dw.fill(0.0),
                _ => {
                    let mut r = rng::cell_rng(seed, p as u64, step);
                    for v in xi.iter_mut() {
                        *v = StandardNormal.sample(&mut r);
                    }
                    map.apply(xi, dw);
                }
            }
            let mut r2 = 0.0;
            for ((x, bi), w) in row.iter_mut().zip(b.iter()).zip(dw.iter()) {
                *x += bi * dt + w;
                r2 += *x * *x;
            }
            if !(r2.sqrt() <= guard_radius) {
                return Err(FpkError::BlowUp {
                    step,
                    particle: p,
                    radius: r2.sqrt(),
                });
            }
            if record {
                noise[i * n..(i + 1) * n].copy_from_slice(dw);
            }
        }
        Ok(())
    };
    let init = || {
        (
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; n],
            vec![0.0; scratch_len],
        )
    };
    let result = if record {
        ens.positions
            .par_chunks_mut(CHUNK * n)
            .zip(noise_buf.par_chunks_mut(CHUNK * n))
            .enumerate()
            .try_for_each_init(init, |buf, item| work(item, buf))
    } else {
        ens.positions
            .par_chunks_mut(CHUNK * n)
            .map(|rows| (rows, &mut [][..]))
            .enumerate()
            .try_for_each_init(init, |buf, item| work(item, buf))
    };
    result?;
    ens.t = t + dt;
    ens.step = step;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drift::{diffusion_matrix, DiffusionModel, DriftModel, PolyDrift};

    #[test]
    fn frozen_without_coefficients() {
        let law = InitialLaw::PointMass { x: vec![0.3, -1.0] };
        let mut ens = ParticleEnsemble::sample(&law, 2, 10, 1).unwrap();
        let before = ens.clone();
        let b = PolyDrift::linear_decay(&[0.0, 0.0]);
        let d = diffusion_matrix(&DiffusionModel::Zero, 2).unwrap();
        em_step(&mut ens, &b, &d, 0.1, 1, DEFAULT_GUARD_RADIUS, None).unwrap();
        assert_eq!(ens.positions(), before.positions());
        assert!((ens.t() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn explicit_euler_arithmetic() {
        let mut ens = ParticleEnsemble::new(1, vec![1.0], 0.0).unwrap();
        let b = DriftModel::Ou {
            rates: Some(vec![1.0]),
        }
        .discretize(1)
        .unwrap();
        let d = diffusion_matrix(&DiffusionModel::Zero, 1).unwrap();
        em_step(&mut ens, &b, &d, 0.1, 0, DEFAULT_GUARD_RADIUS, None).unwrap();
        assert!((ens.positions()[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn guard_and_dt_errors() {
        let mut ens = ParticleEnsemble::new(1, vec![10.0], 0.0).unwrap();
        let b = PolyDrift::linear_decay(&[-100.0]);
        let d = diffusion_matrix(&DiffusionModel::Zero, 1).unwrap();
        let err = em_step(&mut ens, &b, &d, 1.0, 0, 100.0, None);
        assert!(matches!(err, Err(FpkError::BlowUp { .. })));
        let err = em_step(&mut ens, &b, &d, 0.0, 0, 100.0, None);
        assert!(err.unwrap_err().to_string().contains("dt must be positive"));
    }

    #[test]
    fn noise_increments_are_reported() {
        let mut ens = ParticleEnsemble::new(2, vec![0.0; 2000], 0.0).unwrap();
        let b = PolyDrift::linear_decay(&[0.0, 0.0]);
        let d = diffusion_matrix(
            &DiffusionModel::ConstantMatrix {
                rows: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
            },
            2,
        )
        .unwrap();
        let mut noise = vec![0.0; 2000];
        em_step(&mut ens, &b, &d, 0.5, 9, DEFAULT_GUARD_RADIUS, Some(&mut noise)).unwrap();
        assert_eq!(ens.positions(), &noise[..]);
        // Covariance of the increment is 2A·dt = A here.
        let p = 1000.0;
        let c01: f64 = noise.chunks(2).map(|r| r[0] * r[1]).sum::<f64>() / p;
        let c00: f64 = noise.chunks(2).map(|r| r[0] * r[0]).sum::<f64>() / p;
        assert!((c01 - 1.0).abs() < 0.3);
        assert!((c00 - 2.0).abs() < 0.4);
    }
}
