//! Closed-form Cauchy–Schwarz divergence between planar Gaussian mixtures.

use std::f64::consts::PI;

use nalgebra::{Matrix2, Vector2};

use crate::error::{Result, SlamError};
use crate::ndt::{NdtCell, NdtGrid};
use crate::se2::Pose2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian2 {
    pub weight: f64,
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl Gaussian2 {
    pub fn transformed(&self, pose: &Pose2) -> Gaussian2 {
        let r = pose.rotation();
        Gaussian2 {
            weight: self.weight,
            mean: pose.transform_point(&self.mean),
            cov: r * self.cov * r.transpose(),
        }
    }
}

/// Geometric marginal of the usable cells, equally weighted.
pub fn planar_mixture(grid: &NdtGrid) -> Result<Vec<Gaussian2>> {
    Ok(grid
        .as_gmm()?
        .into_iter()
        .map(|c| Gaussian2 {
            weight: c.weight,
            mean: c.mean.xy(),
            cov: c.covariance.fixed_view::<2, 2>(0, 0).into_owned(),
        })
        .collect())
}

/// Geometric marginals of the given cells, equally weighted.
pub fn planar_mixture_of<'a>(cells: impl IntoIterator<Item = &'a NdtCell>) -> Vec<Gaussian2> {
    let cells: Vec<&NdtCell> = cells.into_iter().collect();
    let w = 1.0 / cells.len() as f64;
    cells
        .iter()
        .map(|c| Gaussian2 {
            weight: w,
            mean: c.xy(),
            cov: c.covariance.fixed_view::<2, 2>(0, 0).into_owned(),
        })
        .collect()
}

/// `ln N(d; 0, s)`.
fn log_normal(d: &Vector2<f64>, s: &Matrix2<f64>) -> f64 {
    let det = s.determinant();
    let inv = Matrix2::new(s[(1, 1)], -s[(0, 1)], -s[(1, 0)], s[(0, 0)]) / det;
    -0.5 * d.dot(&(inv * d)) - (2.0 * PI).ln() - 0.5 * det.ln()
}

/// `ln ∫ p q` for two mixtures, accumulated with log-sum-exp.
fn log_cross(p: &[Gaussian2], q: &[Gaussian2]) -> f64 {
    let mut terms = Vec::with_capacity(p.len() * q.len());
    for a in p {
        for b in q {
            terms.push(a.weight.ln() + b.weight.ln() + log_normal(&(a.mean - b.mean), &(a.cov + b.cov)));
        }
    }
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

/// `-ln ∫pq + ½ ln ∫p² + ½ ln ∫q²`; zero for identical mixtures.
pub fn cauchy_schwarz_divergence(p: &[Gaussian2], q: &[Gaussian2]) -> Result<f64> {
    if p.is_empty() || q.is_empty() {
        return Err(SlamError::NoUsableCells);
    }
    let valid = |g: &Gaussian2| g.weight > 0.0 && g.cov.determinant() > 0.0;
    if !p.iter().chain(q).all(valid) {
        return Err(SlamError::SingularCovariance);
    }
    let d = -log_cross(p, q) + 0.5 * log_cross(p, p) + 0.5 * log_cross(q, q);
    Ok(if d.is_nan() { f64::INFINITY } else { d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn density(mix: &[Gaussian2], x: &Vector2<f64>) -> f64 {
        mix.iter()
            .map(|g| g.weight * log_normal(&(x - g.mean), &g.cov).exp())
            .sum()
    }

    /// Midpoint-rule integration of the three overlap integrals.
    fn grid_divergence(p: &[Gaussian2], q: &[Gaussian2]) -> f64 {
        let (lo, hi, n) = (-12.0, 12.0, 1200);
        let h = (hi - lo) / n as f64;
        let (mut pq, mut pp, mut qq) = (0.0, 0.0, 0.0);
        for i in 0..n {
            for j in 0..n {
                let x = Vector2::new(lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h);
                let (a, b) = (density(p, &x), density(q, &x));
                pq += a * b;
                pp += a * a;
                qq += b * b;
            }
        }
        -(pq * h * h).ln() + 0.5 * (pp * h * h).ln() + 0.5 * (qq * h * h).ln()
    }

    fn random_mixture(rng: &mut ChaCha8Rng, n: usize) -> Vec<Gaussian2> {
        (0..n)
            .map(|_| {
                let a: f64 = rng.random_range(0.3..1.5);
                let b: f64 = rng.random_range(0.3..1.5);
                let th: f64 = rng.random_range(0.0..PI);
                let r = Matrix2::new(th.cos(), -th.sin(), th.sin(), th.cos());
                Gaussian2 {
                    weight: 1.0 / n as f64,
                    mean: Vector2::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
                    cov: r * Matrix2::new(a * a, 0.0, 0.0, b * b) * r.transpose(),
                }
            })
            .collect()
    }

    fn unit(x: f64, y: f64) -> Gaussian2 {
        Gaussian2 {
            weight: 1.0,
            mean: Vector2::new(x, y),
            cov: Matrix2::identity(),
        }
    }

    #[test]
    fn identical_and_permuted_mixtures() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = random_mixture(&mut rng, 4);
        assert!(cauchy_schwarz_divergence(&p, &p).unwrap().abs() < 1e-12);
        let mut perm = p.clone();
        perm.reverse();
        assert!(cauchy_schwarz_divergence(&p, &perm).unwrap().abs() < 1e-12);
    }

    #[test]
    fn separated_gaussians_match_grid_oracle() {
        let p = [unit(0.0, 0.0)];
        let q = [unit(5.0, 0.0)];
        let d = cauchy_schwarz_divergence(&p, &q).unwrap();
        // Equal covariances: D = |Δμ|² / (4σ²).
        assert!((d - 6.25).abs() < 1e-12);
        assert!(d > 1.0);
        let oracle = grid_divergence(&p, &q);
        assert!((d - oracle).abs() / oracle < 1e-4, "{d} vs {oracle}");
    }

    #[test]
    fn random_mixtures_match_grid_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..3 {
            let p = random_mixture(&mut rng, 3);
            let q = random_mixture(&mut rng, 2);
            let d = cauchy_schwarz_divergence(&p, &q).unwrap();
            let oracle = grid_divergence(&p, &q);
            assert!((d - oracle).abs() <= 1e-4 * oracle.abs().max(1e-3), "{d} vs {oracle}");
        }
    }

    #[test]
    fn symmetric_and_non_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let n = rng.random_range(1..4);
            let m = rng.random_range(1..4);
            let p = random_mixture(&mut rng, n);
            let q = random_mixture(&mut rng, m);
            let a = cauchy_schwarz_divergence(&p, &q).unwrap();
            let b = cauchy_schwarz_divergence(&q, &p).unwrap();
            assert!((a - b).abs() < 1e-9);
            assert!(a >= -1e-9);
        }
    }

    #[test]
    fn empty_mixture_is_an_error() {
        assert!(cauchy_schwarz_divergence(&[], &[unit(0.0, 0.0)]).is_err());
    }
}
