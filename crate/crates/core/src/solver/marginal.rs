//! One-dimensional marginals and Kolmogorov–Smirnov distances.

use crate::error::{invalid, Result};

use super::particle::ParticleEnsemble;

/// Sorted sample of one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Marginal {
    sorted: Vec<f64>,
}

impl Marginal {
    pub fn from_samples(mut samples: Vec<f64>) -> Result<Self> {
        if samples.is_empty() || samples.iter().any(|v| v.is_nan()) {
            return Err(invalid("marginal needs a non-empty sample without NaN"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    /// Empirical `P(X ≤ x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.len() as f64
    }

    /// Fractions in `bins` equal bins of `[lo, hi)`; values outside are
    /// dropped.
    pub fn histogram(&self, lo: f64, hi: f64, bins: usize) -> Vec<f64> {
        let mut out = vec![0.0; bins];
        let w = (hi - lo) / bins as f64;
        let inv = 1.0 / self.len() as f64;
        for &v in &self.sorted {
            if v >= lo && v < hi {
                let i = (((v - lo) / w) as usize).min(bins - 1);
                out[i] += inv;
            }
        }
        out
    }

    /// Two-sample statistic `sup_x |F_a(x) − F_b(x)|`.
    pub fn ks_distance(&self, other: &Marginal) -> f64 {
        let (a, b) = (&self.sorted, &other.sorted);
        let (na, nb) = (a.len() as f64, b.len() as f64);
        let (mut i, mut j) = (0, 0);
        let mut d: f64 = 0.0;
        while i < a.len() && j < b.len() {
            let x = a[i].min(b[j]);
            while i < a.len() && a[i] <= x {
                i += 1;
            }
            while j < b.len() && b[j] <= x {
                j += 1;
            }
            d = d.max((i as f64 / na - j as f64 / nb).abs());
        }
        d
    }

    /// `sup_x |F_n(x) − F(x)|` against a continuous reference CDF.
    pub fn ks_against<F: Fn(f64) -> f64>(&self, cdf: F) -> f64 {
        let n = self.len() as f64;
        self.sorted
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let f = cdf(x);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max)
    }
}

/// Marginal of coordinate `k` (0-based).
pub fn marginal(ens: &ParticleEnsemble, k: usize) -> Result<Marginal> {
    if k >= ens.dim() {
        return Err(invalid(format!("coordinate {k} out of range")));
    }
    Marginal::from_samples(ens.coordinate(k))
}

/// Null standard deviation of the two-sample KS statistic: the Kolmogorov
/// law has spread ≈ 0.26, scaled by `√((n+m)/(nm))`.
pub fn ks_null_sd(n: usize, m: usize) -> f64 {
    let (n, m) = (n as f64, m as f64);
    0.26 * ((n + m) / (n * m)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use statrs::distribution::{ContinuousCDF, Normal};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n];
        rng::fill_normals(seed, 0, 0, &mut out);
        out
    }

    #[test]
    fn identical_and_disjoint() {
        let a = Marginal::from_samples(vec![1.0, 2.0, 3.0]).unwrap();
        assert_eq!(a.ks_distance(&a), 0.0);
        let z = Marginal::from_samples(vec![0.0; 10]).unwrap();
        let o = Marginal::from_samples(vec![1.0; 10]).unwrap();
        assert_eq!(z.ks_distance(&o), 1.0);
        assert_eq!(o.ks_distance(&z), 1.0);
    }

    #[test]
    fn independent_draws_are_close() {
        let a = Marginal::from_samples(normals(1, 100_000)).unwrap();
        let b = Marginal::from_samples(normals(2, 100_000)).unwrap();
        // 95% quantile of the two-sample statistic: 1.358·√(2/n).
        assert!(a.ks_distance(&b) < 1.358 * (2.0 / 1e5f64).sqrt());
        let n = Normal::new(0.0, 1.0).unwrap();
        assert!(a.ks_against(|x| n.cdf(x)) < 1.358 / (1e5f64).sqrt());
    }

    #[test]
    fn cdf_and_histogram() {
        let m = Marginal::from_samples(vec![0.5, 1.5, 1.5, 2.5]).unwrap();
        assert_eq!(m.cdf(1.5), 0.75);
        assert_eq!(m.cdf(0.0), 0.0);
        assert_eq!(m.histogram(0.0, 3.0, 3), vec![0.25, 0.5, 0.25]);
    }
}
