//! Constant diffusion matrices `A_N = (a^{ij})` and their square roots.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, FpkError, Result};

/// Eigenvalues below this are treated as zero.
pub const DEGENERACY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DiffusionModel {
    Zero,
    /// `a^{kk} = α_k`.
    Diagonal { alpha: Vec<f64> },
    /// `α_k = scale · k^{−power}`, any number of modes.
    PowerLaw { scale: f64, power: f64 },
    /// Explicit symmetric matrix, given by rows.
    ConstantMatrix { rows: Vec<Vec<f64>> },
}

impl DiffusionModel {
    pub fn diagonal(alpha: Vec<f64>) -> Self {
        DiffusionModel::Diagonal { alpha }
    }

    /// Leading `n×n` block of `A`.
    pub fn matrix(&self, n: usize) -> Result<DMatrix<f64>> {
        match self {
            DiffusionModel::Zero => Ok(DMatrix::zeros(n, n)),
            DiffusionModel::Diagonal { alpha } => {
                if alpha.len() < n {
                    return Err(FpkError::SizeExceeded {
                        requested: n,
                        max: alpha.len(),
                    });
                }
                Ok(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(
                    &alpha[..n],
                )))
            }
            DiffusionModel::PowerLaw { scale, power } => {
                Ok(DMatrix::from_fn(n, n, |i, j| {
                    if i == j {
                        scale * ((i + 1) as f64).powf(-power)
                    } else {
                        0.0
                    }
                }))
            }
            DiffusionModel::ConstantMatrix { rows } => {
                let size = rows.len();
                if rows.iter().any(|r| r.len() != size) {
                    return Err(invalid("diffusion matrix must be square"));
                }
                if size < n {
                    return Err(FpkError::SizeExceeded {
                        requested: n,
                        max: size,
                    });
                }
                Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
            }
        }
    }

    /// Whether `A` is diagonal for every truncation.
    pub fn is_diagonal(&self) -> bool {
        match self {
            DiffusionModel::ConstantMatrix { rows } => rows.iter().enumerate().all(|(i, r)| {
                r.iter().enumerate().all(|(j, v)| i == j || *v == 0.0)
            }),
            _ => true,
        }
    }
}

/// `A_N` together with its spectral data.
#[derive(Clone, Debug)]
pub struct DiffusionMatrix {
    pub a: DMatrix<f64>,
    /// Symmetric square root, `σσ = A`.
    pub sigma: DMatrix<f64>,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub degenerate: bool,
    eigen: SymmetricEigen<f64, nalgebra::Dyn>,
}

impl DiffusionMatrix {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// Largest `γ` with `γ|y|² ≤ ⟨Ay, y⟩ ≤ γ⁻¹|y|²`.
    pub fn gamma(&self) -> f64 {
        if self.max_eigenvalue <= 0.0 {
            return 0.0;
        }
        self.min_eigenvalue.min(1.0 / self.max_eigenvalue)
    }

    pub fn trace(&self) -> f64 {
        self.a.trace()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| (0..n).all(|j| i == j || self.a[(i, j)] == 0.0))
    }

    /// Noise factor `√(2A)` for the generator `Σ a^{ij}∂_i∂_j + B·∇`.
    pub fn noise_factor(&self) -> DMatrix<f64> {
        &self.sigma * std::f64::consts::SQRT_2
    }

    /// `A^{−1/2}`; fails when `A` is singular.
    pub fn inverse_sqrt(&self) -> Result<DMatrix<f64>> {
        if self.degenerate {
            return Err(FpkError::SingularDiffusion(self.min_eigenvalue));
        }
        let d = self.eigen.eigenvalues.map(|l| 1.0 / l.sqrt());
        let v = &self.eigen.eigenvectors;
        Ok(v * DMatrix::from_diagonal(&d) * v.transpose())
    }

    /// `A^{−1}`; fails when `A` is singular.
    pub fn inverse(&self) -> Result<DMatrix<f64>> {
        let s = self.inverse_sqrt()?;
        Ok(&s * &s)
    }
}

pub fn diffusion_matrix(model: &DiffusionModel, n: usize) -> Result<DiffusionMatrix> {
    let a = model.matrix(n)?;
    from_matrix(a)
}

pub(crate) fn from_matrix(a: DMatrix<f64>) -> Result<DiffusionMatrix> {
    let n = a.nrows();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(invalid("diffusion entries must be finite"));
    }
    let scale = a.amax().max(1.0);
    let asym = (&a - a.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(FpkError::Asymmetric(asym));
    }
    if n == 0 {
        return Err(invalid("diffusion matrix must be non-empty"));
    }
    let sym = (&a + a.transpose()) * 0.5;
    let mut eigen = SymmetricEigen::new(sym.clone());
    let min = eigen.eigenvalues.min();
    if min < -1e-12 * scale {
        return Err(FpkError::NotNonnegative(min));
    }
    eigen.eigenvalues.apply(|l| *l = l.max(0.0));
    let min_eigenvalue = eigen.eigenvalues.min();
    let max_eigenvalue = eigen.eigenvalues.max();
    let root = eigen.eigenvalues.map(f64::sqrt);
    let v = &eigen.eigenvectors;
    let sigma = v * DMatrix::from_diagonal(&root) * v.transpose();
    Ok(DiffusionMatrix {
        a: sym,
        sigma,
        min_eigenvalue,
        max_eigenvalue,
        degenerate: min_eigenvalue < DEGENERACY_TOL,
        eigen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn identity() {
        let d = diffusion_matrix(&DiffusionModel::diagonal(vec![1.0, 1.0]), 2).unwrap();
        assert_eq!(d.a, DMatrix::identity(2, 2));
        assert!((d.sigma.clone() - DMatrix::identity(2, 2)).amax() < 1e-15);
        assert_eq!(d.gamma(), 1.0);
        assert!(!d.degenerate);
    }

    #[test]
    fn zero_is_degenerate() {
        let d = diffusion_matrix(&DiffusionModel::Zero, 3).unwrap();
        assert_eq!(d.a, DMatrix::zeros(3, 3));
        assert!(d.degenerate);
        assert!(matches!(d.inverse_sqrt(), Err(FpkError::SingularDiffusion(_))));
    }

    #[test]
    fn two_by_two() {
        let m = DiffusionModel::ConstantMatrix {
            rows: vec![vec![2.0, 1.0], vec![1.0, 2.0]],
        };
        let d = diffusion_matrix(&m, 2).unwrap();
        assert_abs_diff_eq!(d.min_eigenvalue, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.max_eigenvalue, 3.0, epsilon = 1e-12);
        assert!((&d.sigma * &d.sigma - &d.a).amax() < 1e-12);
        let inv = d.inverse().unwrap();
        assert!((&inv * &d.a - DMatrix::identity(2, 2)).amax() < 1e-12);
        assert!(!m.is_diagonal());
    }

    #[test]
    fn errors() {
        let asym = DiffusionModel::ConstantMatrix {
            rows: vec![vec![1.0, 0.5], vec![0.0, 1.0]],
        };
        assert!(matches!(diffusion_matrix(&asym, 2), Err(FpkError::Asymmetric(_))));
        let neg = DiffusionModel::ConstantMatrix {
            rows: vec![vec![1.0, 2.0], vec![2.0, 1.0]],
        };
        assert!(matches!(diffusion_matrix(&neg, 2), Err(FpkError::NotNonnegative(_))));
        assert!(matches!(
            diffusion_matrix(&DiffusionModel::diagonal(vec![1.0]), 2),
            Err(FpkError::SizeExceeded { .. })
        ));
    }

    #[test]
    fn leading_block() {
        let d = diffusion_matrix(
            &DiffusionModel::PowerLaw {
                scale: 1.0,
                power: 2.0,
            },
            3,
        )
        .unwrap();
        assert_abs_diff_eq!(d.a[(2, 2)], 1.0 / 9.0, epsilon = 1e-15);
        assert_abs_diff_eq!(d.trace(), 1.0 + 0.25 + 1.0 / 9.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn sqrt_reproduces_matrix(entries in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let b = DMatrix::from_column_slice(4, 4, &entries);
            let a = &b * b.transpose();
            let d = from_matrix(a.clone()).unwrap();
            prop_assert!((&d.sigma * &d.sigma - &a).amax() < 1e-10);
            prop_assert!(d.min_eigenvalue >= 0.0);
        }
    }
}
