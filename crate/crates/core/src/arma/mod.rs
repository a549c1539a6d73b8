//! ARMA modelling of interval series: differencing, correlograms, order
//! selection and the one-off batch initialiser.
//!
//! Sign convention follows `Φ(B) x_t = Θ(B) ε_t` with
//! `Φ(z) = 1 - φ₁z - … - φ_p z^p` and `Θ(z) = 1 - θ₁z - … - θ_q z^q`, so
//! `x_t = Σ φ_i x_{t-i} + ε_t - Σ θ_j ε_{t-j}`.

mod fit;
mod select;
mod stats;

pub use fit::{css_residuals, fit_batch, FittedModel, NelderMead};
pub use select::{
    aic, choose_differencing, cut_lag, select_orders, select_orders_detailed, OrderSelection,
    SelectionCase, MIN_SELECTION_LEN,
};
pub use stats::{
    difference, integrate, mean, pacf_from_acf, sample_acf, sample_pacf, undifference, variance,
    DiffRecord,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SsteError};
use crate::ingestion::UserId;

pub const DEFAULT_P_MAX: usize = 5;
pub const DEFAULT_Q_MAX: usize = 5;
pub const MAX_DIFFERENCING: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArmaOrders {
    pub p: usize,
    pub q: usize,
    pub d: usize,
}

impl ArmaOrders {
    pub fn new(p: usize, q: usize, d: usize) -> Self {
        ArmaOrders { p, q, d }
    }

    /// Minimum series length (after differencing) accepted by [`fit_batch`].
    pub fn min_fit_len(&self) -> usize {
        4 * (self.p + self.q) + 10
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmaParams {
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
}

impl ArmaParams {
    /// Checks `sigma2 > 0` and that `Φ(z)` has no root on the unit circle.
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(SsteError::invalid("sigma2", "must be a finite value > 0"));
        }
        let m = max_inverse_root_modulus(&self.phi);
        if (m - 1.0).abs() <= 1e-6 {
            return Err(SsteError::UnstableAr { modulus: m });
        }
        Ok(())
    }

    /// Measurement-noise variance `(1 + Σθ²)·σ²`.
    pub fn measurement_variance(&self) -> f64 {
        (1.0 + self.theta.iter().map(|t| t * t).sum::<f64>()) * self.sigma2
    }
}

/// Largest modulus among the inverse roots of `Φ(z)`, i.e. the eigenvalues of
/// the AR companion matrix. Values below one mean a stationary AR part.
pub fn max_inverse_root_modulus(phi: &[f64]) -> f64 {
    let p = phi.len();
    if p == 0 {
        return 0.0;
    }
    if p == 1 {
        return phi[0].abs();
    }
    let mut companion = DMatrix::<f64>::zeros(p, p);
    for (j, &c) in phi.iter().enumerate() {
        companion[(0, j)] = c;
    }
    for i in 1..p {
        companion[(i, i - 1)] = 1.0;
    }
    companion
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn is_stationary(phi: &[f64]) -> bool {
    max_inverse_root_modulus(phi) < 1.0
}

/// Whether every inverse root of `1 - Σ c_i z^i` has modulus below `radius`.
/// Runs the step-down (Schur–Cohn) recursion on the rescaled coefficients,
/// which is much cheaper than an eigenvalue solve.
pub fn roots_within(coeffs: &[f64], radius: f64) -> bool {
    let mut a: Vec<f64> = coeffs
        .iter()
        .enumerate()
        .map(|(i, c)| c / radius.powi(i as i32 + 1))
        .collect();
    while let Some(&k) = a.last() {
        if !(k.abs() < 1.0) {
            return false;
        }
        let m = a.len() - 1;
        let denom = 1.0 - k * k;
        let next: Vec<f64> = (0..m).map(|i| (a[i] + k * a[m - 1 - i]) / denom).collect();
        a = next;
    }
    true
}

/// One line of the fitted-model JSONL export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub user: UserId,
    pub p: usize,
    pub q: usize,
    pub d: usize,
    pub phi: Vec<f64>,
    pub theta: Vec<f64>,
    pub sigma2: f64,
    pub mean: f64,
}

impl ModelRecord {
    pub fn new(user: UserId, model: &FittedModel) -> Self {
        ModelRecord {
            user,
            p: model.orders.p,
            q: model.orders.q,
            d: model.orders.d,
            phi: model.params.phi.clone(),
            theta: model.params.theta.clone(),
            sigma2: model.params.sigma2,
            mean: model.mean,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_down_agrees_with_companion_roots() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        for _ in 0..5000 {
            let p = rng.random_range(1..=5);
            let c: Vec<f64> = (0..p).map(|_| rng.random_range(-1.5..1.5)).collect();
            let m = max_inverse_root_modulus(&c);
            for r in [0.95, 1.0] {
                // skip polynomials whose roots sit on the boundary to rounding
                if (m - r).abs() > 1e-9 {
                    assert_eq!(roots_within(&c, r), m < r, "{c:?} modulus {m}");
                    checked += 1;
                }
            }
        }
        assert!(checked > 9000);
        assert!(roots_within(&[], 0.5));
    }

    #[test]
    fn stationarity_of_simple_polynomials() {
        assert!(is_stationary(&[0.6]));
        assert!(!is_stationary(&[1.2]));
        assert!(is_stationary(&[0.5, 0.3]));
        assert!(!is_stationary(&[0.5, 0.6]));
        // x_t = x_{t-2}: inverse roots ±1
        assert!((max_inverse_root_modulus(&[0.0, 1.0]) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn unit_root_params_rejected() {
        let p = ArmaParams {
            phi: vec![1.0],
            theta: vec![],
            sigma2: 1.0,
        };
        assert!(matches!(p.validate(), Err(SsteError::UnstableAr { .. })));
        let p = ArmaParams {
            phi: vec![0.5],
            theta: vec![],
            sigma2: 0.0,
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn measurement_variance_sums_theta_squares() {
        let p = ArmaParams {
            phi: vec![],
            theta: vec![0.5, 0.5],
            sigma2: 2.0,
        };
        assert_eq!(p.measurement_variance(), 3.0);
    }
}
