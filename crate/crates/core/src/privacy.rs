//! Gaussian mechanism calibration for the feature-sharing step.
//!
//! A party that releases SRHT random features of a block whose column ranges
//! are bounded by `theta` achieves (epsilon, delta)-distributed differential
//! privacy by adding i.i.d. Gaussian noise with standard deviation
//! `w2 * theta / epsilon * sqrt(2 (ln(1/(2 delta)) + epsilon))`, where `w2`
//! is the l2-sensitivity of the projection (1 for the SRHT used here).

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

/// Calibrated per-party noise level together with the quantities it was
/// derived from.
#[derive(Debug, Clone, Copy)]
pub struct PrivacyBudget {
    epsilon: f64,
    delta: f64,
    sensitivity_w2: f64,
    theta: f64,
    sigma: f64,
}

impl PrivacyBudget {
    /// Calibrates sigma from (epsilon, delta, theta, w2).
    ///
    /// The guarantee is stated as a strict inequality on sigma; this sets
    /// sigma to the boundary value. Multiplying the result by any factor
    /// greater than one strengthens the guarantee.
    pub fn calibrated(epsilon: f64, delta: f64, theta: f64, sensitivity_w2: f64) -> Result<Self> {
        let sigma = noise_sigma(epsilon, delta, theta, sensitivity_w2)?;
        Ok(Self {
            epsilon,
            delta,
            sensitivity_w2,
            theta,
            sigma,
        })
    }

    /// Degenerate budget carrying a caller-chosen sigma. Used for the
    /// no-privacy (sigma = 0) sharing path and for diagnostics that sweep
    /// sigma directly; such budgets make no calibration claim.
    pub fn fixed_sigma(sigma: f64) -> Result<Self> {
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(invalid(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        Ok(Self {
            epsilon: f64::INFINITY,
            delta: 0.0,
            sensitivity_w2: 1.0,
            theta: 0.0,
            sigma,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn sensitivity_w2(&self) -> f64 {
        self.sensitivity_w2
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }
}

/// Largest column range max_j (max_i X_ij - min_i X_ij) of a nonempty matrix.
pub fn column_range_bound(x: &DMatrix<f64>) -> Result<f64> {
    if x.nrows() == 0 || x.ncols() == 0 {
        return Err(invalid("column range bound requires a nonempty matrix"));
    }
    let mut bound: f64 = 0.0;
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in col.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        bound = bound.max(hi - lo);
    }
    Ok(bound)
}

/// Noise standard deviation `w2 * theta / epsilon * sqrt(2 (ln(1/(2 delta)) + epsilon))`.
pub fn noise_sigma(epsilon: f64, delta: f64, theta: f64, sensitivity_w2: f64) -> Result<f64> {
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(invalid(format!(
            "epsilon must be finite and > 0, got {epsilon}"
        )));
    }
    if !delta.is_finite() || delta <= 0.0 || delta >= 0.5 {
        return Err(invalid(format!("delta must lie in (0, 0.5), got {delta}")));
    }
    if !theta.is_finite() || theta < 0.0 {
        return Err(invalid(format!(
            "theta must be finite and >= 0, got {theta}"
        )));
    }
    if !sensitivity_w2.is_finite() || sensitivity_w2 < 0.0 {
        return Err(invalid(format!(
            "sensitivity w2 must be finite and >= 0, got {sensitivity_w2}"
        )));
    }
    Ok(sensitivity_w2 * theta / epsilon * (2.0 * ((1.0 / (2.0 * delta)).ln() + epsilon)).sqrt())
}

/// Adds i.i.d. Normal(0, sigma^2) noise to every entry, deterministic in
/// `seed`. With sigma = 0 the input is returned unchanged bit for bit.
pub fn gaussian_perturb(z: &DMatrix<f64>, sigma: f64, seed: u64) -> Result<DMatrix<f64>> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(invalid(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(z.clone());
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut out = z.clone();
    for v in out.iter_mut() {
        let w: f64 = rng.sample(StandardNormal);
        *v += sigma * w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn column_range_examples() {
        let single = DMatrix::from_column_slice(3, 1, &[-1.0, 0.0, 3.0]);
        assert_eq!(column_range_bound(&single).unwrap(), 4.0);

        let constant = DMatrix::from_element(5, 3, 2.5);
        assert_eq!(column_range_bound(&constant).unwrap(), 0.0);

        assert!(column_range_bound(&DMatrix::<f64>::zeros(0, 0)).is_err());
    }

    #[test]
    fn sigma_known_values() {
        // Climate column at epsilon = 1 and cancer column at epsilon = 20.
        let s = noise_sigma(1.0, 0.05, 8.51, 1.0).unwrap();
        assert!((s - 21.88).abs() / 21.88 < 0.005, "sigma {s}");
        let s = noise_sigma(20.0, 0.05, 10.92, 1.0).unwrap();
        assert!((s - 3.65).abs() / 3.65 < 0.005, "sigma {s}");
        assert_eq!(noise_sigma(1.0, 0.05, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sigma_rejects_bad_parameters() {
        assert!(noise_sigma(0.0, 0.05, 1.0, 1.0).is_err());
        assert!(noise_sigma(-1.0, 0.05, 1.0, 1.0).is_err());
        assert!(noise_sigma(f64::INFINITY, 0.05, 1.0, 1.0).is_err());
        assert!(noise_sigma(1.0, 0.5, 1.0, 1.0).is_err());
        assert!(noise_sigma(1.0, 0.0, 1.0, 1.0).is_err());
        assert!(noise_sigma(1.0, 0.05, -1.0, 1.0).is_err());
    }

    #[test]
    fn sigma_monotone_in_epsilon_and_theta() {
        let grid = [0.1, 0.25, 0.5, 0.75, 1.0, 2.0, 5.0, 10.0, 20.0];
        let mut prev = f64::INFINITY;
        for &eps in &grid {
            let s = noise_sigma(eps, 0.05, 7.41, 1.0).unwrap();
            assert!(s < prev, "sigma not decreasing at epsilon {eps}");
            prev = s;
        }
        let mut prev = -1.0;
        for theta in [0.0, 1.0, 2.0, 5.0, 10.0] {
            let s = noise_sigma(1.0, 0.05, theta, 1.0).unwrap();
            assert!(s >= prev);
            prev = s;
        }
    }

    #[test]
    fn perturb_zero_sigma_is_identity() {
        let z = DMatrix::from_fn(3, 4, |i, j| (i * 7 + j) as f64 * 0.37);
        let out = gaussian_perturb(&z, 0.0, 123).unwrap();
        assert_eq!(z, out);
        assert!(gaussian_perturb(&z, -1.0, 0).is_err());
    }

    #[test]
    fn perturb_deterministic_in_seed() {
        let z = DMatrix::from_element(10, 10, 1.0);
        let a = gaussian_perturb(&z, 2.0, 77).unwrap();
        let b = gaussian_perturb(&z, 2.0, 77).unwrap();
        let c = gaussian_perturb(&z, 2.0, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn perturb_residual_moments() {
        let n = 100_000;
        let z = DMatrix::<f64>::zeros(n, 1);
        let out = gaussian_perturb(&z, 2.0, 5).unwrap();
        let mean = out.iter().sum::<f64>() / n as f64;
        let var = out.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let std = var.sqrt();
        // |mean| < 4 sigma / sqrt(N)
        assert!(mean.abs() < 4.0 * 2.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((1.98..=2.02).contains(&std), "std {std}");
    }

    #[test]
    fn budget_constructors() {
        let b = PrivacyBudget::calibrated(1.0, 0.05, 8.51, 1.0).unwrap();
        assert!((b.sigma() - 21.88).abs() / 21.88 < 0.005);
        assert_eq!(b.epsilon(), 1.0);
        let z = PrivacyBudget::fixed_sigma(0.0).unwrap();
        assert_eq!(z.sigma(), 0.0);
        assert!(PrivacyBudget::fixed_sigma(-0.5).is_err());
        assert!(PrivacyBudget::calibrated(1.0, 0.7, 1.0, 1.0).is_err());
    }
}
