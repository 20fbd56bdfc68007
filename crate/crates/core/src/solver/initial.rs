//! Initial laws `ν` on `ℝ^N`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};
use crate::rng;

/// `ν`, given on as many coordinates as the user supplies; missing
/// coordinates are zero (point mass) or degenerate at zero (Gaussian), so
/// every truncation uses the projection of the same law.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialLaw {
    PointMass {
        #[serde(default)]
        x: Vec<f64>,
    },
    /// Independent Gaussians per mode.
    Gaussian {
        #[serde(default)]
        mean: Vec<f64>,
        variance: Vec<f64>,
    },
    /// Equally weighted atoms, one row per sample.
    Samples { points: Vec<Vec<f64>> },
    /// Samples read from a CSV file with one row per sample.
    File { path: PathBuf },
}

impl InitialLaw {
    pub fn origin() -> Self {
        InitialLaw::PointMass { x: Vec::new() }
    }

    /// Loads `File` laws into `Samples`; other variants are returned as is.
    pub fn resolve(&self) -> Result<InitialLaw> {
        match self {
            InitialLaw::File { path } => {
                let mut reader = csv::ReaderBuilder::new()
                    .has_headers(false)
                    .comment(Some(b'#'))
                    .trim(csv::Trim::All)
                    .from_path(path)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                let mut points = Vec::new();
                for rec in reader.records() {
                    let rec = rec.map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                    let row = rec
                        .iter()
                        .map(|f| f.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>();
                    match row {
                        Ok(r) => points.push(r),
                        // A header line is allowed.
                        Err(_) if points.is_empty() => continue,
                        Err(e) => return Err(invalid(format!("{}: {e}", path.display()))),
                    }
                }
                let law = InitialLaw::Samples { points };
                law.validate()?;
                Ok(law)
            }
            other => Ok(other.clone()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            InitialLaw::PointMass { x } if !finite(x) => {
                Err(invalid("point mass location must be finite"))
            }
            InitialLaw::Gaussian { mean, variance } => {
                if !finite(mean) || variance.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(invalid("Gaussian needs finite mean and nonnegative variance"));
                }
                if variance.is_empty() {
                    return Err(invalid("Gaussian needs at least one variance"));
                }
                Ok(())
            }
            InitialLaw::Samples { points } => {
                if points.is_empty() {
                    return Err(invalid("sample law needs at least one point"));
                }
                if points.iter().any(|p| !finite(p)) {
                    return Err(invalid("sample points must be finite"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Coordinate `k` of the point mass (or Gaussian mean), zero if absent.
    pub fn mean(&self, k: usize) -> f64 {
        match self {
            InitialLaw::PointMass { x } => x.get(k).copied().unwrap_or(0.0),
            InitialLaw::Gaussian { mean, .. } => mean.get(k).copied().unwrap_or(0.0),
            InitialLaw::Samples { points } => {
                points.iter().map(|p| p.get(k).copied().unwrap_or(0.0)).sum::<f64>()
                    / points.len() as f64
            }
            InitialLaw::File { .. } => 0.0,
        }
    }

    /// Variance of coordinate `k` for Gaussian laws; a single entry is
    /// broadcast to every mode.
    pub fn variance(&self, k: usize) -> f64 {
        match self {
            InitialLaw::Gaussian { variance, .. } if variance.len() == 1 => variance[0],
            InitialLaw::Gaussian { variance, .. } => variance.get(k).copied().unwrap_or(0.0),
            _ => 0.0,
        }
    }

    /// Writes the `n`-coordinate initial position of particle `p` into `out`.
    /// `Samples` laws cycle through their points.
    pub fn sample_into(&self, seed: u64, p: u64, out: &mut [f64]) -> Result<()> {
        match self {
            InitialLaw::PointMass { .. } => {
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.mean(k);
                }
            }
            InitialLaw::Gaussian { .. } => {
                rng::fill_normals(seed, p, 0, out);
                for (k, o) in out.iter_mut().enumerate() {
                    *o = self.mean(k) + self.variance(k).sqrt() * *o;
                }
            }
            InitialLaw::Samples { points } => {
                let row = &points[p as usize % points.len()];
                for (k, o) in out.iter_mut().enumerate() {
                    *o = row.get(k).copied().unwrap_or(0.0);
                }
            }
            InitialLaw::File { .. } => {
                return Err(FpkError::Invalid(
                    "file initial laws must be resolved before sampling".into(),
                ))
            }
        }
        Ok(())
    }
}
