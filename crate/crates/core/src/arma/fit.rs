//! Batch ARMA estimation: Hannan–Rissanen regression refined by minimising
//! the conditional sum of squares with Nelder–Mead.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::stats::{difference, mean, variance};
use super::{is_stationary, roots_within, ArmaOrders, ArmaParams};
use crate::error::{Result, SsteError};

/// Largest inverse-root modulus the local search may reach.
const MAX_ROOT_MODULUS: f64 = 0.999;
// MA roots near the unit circle make the online residual recursion integrate
// any coefficient error with gain 1/(1 - sum theta); keep a margin.
const MAX_MA_ROOT_MODULUS: f64 = 0.95;

/// A batch-fitted model on the `d`-times-differenced, mean-centred series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub orders: ArmaOrders,
    pub params: ArmaParams,
    /// Mean of the differenced series, removed before fitting.
    pub mean: f64,
    /// False when the local search hit its iteration cap; `params` then hold
    /// the best point it reached.
    pub converged: bool,
}

impl FittedModel {
    /// Model that always predicts `mean`.
    pub fn mean_only(mean: f64, sigma2: f64) -> Self {
        FittedModel {
            orders: ArmaOrders::new(0, 0, 0),
            params: ArmaParams {
                phi: vec![],
                theta: vec![],
                sigma2,
            },
            mean,
            converged: true,
        }
    }
}

pub fn fit_batch(values: &[f64], orders: ArmaOrders) -> Result<FittedModel> {
    let (diffed, _) = difference(values, orders.d)?;
    let needed = orders.min_fit_len();
    if diffed.len() < needed {
        return Err(SsteError::InsufficientHistory {
            needed,
            got: diffed.len(),
        });
    }
    let mu = mean(&diffed);
    let z: Vec<f64> = diffed.iter().map(|v| v - mu).collect();
    let var = variance(&z);
    let scale = z.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(mu.abs());
    if var <= (1e-12 * scale.max(f64::MIN_POSITIVE)).powi(2) {
        return Err(SsteError::DegenerateSeries);
    }
    let (p, q) = (orders.p, orders.q);
    let floor = var * f64::EPSILON;

    let (hr_phi, hr_theta) = hannan_rissanen(&z, p, q)?;
    let (mut phi, mut theta, mut converged) = (hr_phi.clone(), hr_theta.clone(), true);
    if q > 0 {
        let mut x0: Vec<f64> = hr_phi.iter().chain(&hr_theta).copied().collect();
        // restricted to the stationary and invertible region, away from its edge
        let objective = |x: &[f64]| {
            if roots_within(&x[..p], MAX_ROOT_MODULUS) && roots_within(&x[p..], MAX_MA_ROOT_MODULUS)
            {
                css_sum(&z, &x[..p], &x[p..])
            } else {
                f64::INFINITY
            }
        };
        // pull an inadmissible regression start towards the origin
        for _ in 0..100 {
            if objective(&x0).is_finite() {
                break;
            }
            x0.iter_mut().for_each(|v| *v *= 0.9);
        }
        let search = NelderMead {
            max_iter: 200 * (p + q),
            ftol: 1e-10,
            xtol: 1e-7,
        };
        // the simplex never worsens its best vertex, so even an unconverged
        // search improves on the starting point
        let (best, _, ok) = search.minimize(objective, &x0, 0.1);
        phi = best[..p].to_vec();
        theta = best[p..].to_vec();
        converged = ok;
    }
    // the residual recursion needs an invertible MA polynomial as well
    let admissible =
        |phi: &[f64], theta: &[f64]| is_stationary(phi) && roots_within(theta, MAX_MA_ROOT_MODULUS);
    if !admissible(&phi, &theta) {
        if admissible(&hr_phi, &hr_theta) {
            phi = hr_phi;
            theta = hr_theta;
        } else {
            phi = vec![0.0; p];
            theta = vec![0.0; q];
        }
    }

    let baseline = css_sum(&z, &vec![0.0; p], &[]);
    let mut sigma2 = css_sum(&z, &phi, &theta);
    if !(sigma2 <= baseline) {
        phi = vec![0.0; p];
        theta = vec![0.0; q];
        sigma2 = baseline;
    }
    Ok(FittedModel {
        orders,
        params: ArmaParams {
            phi,
            theta,
            sigma2: sigma2.max(floor),
        },
        mean: mu,
        converged,
    })
}

/// Conditional residuals: zero for `t < p`, then
/// `e_t = z_t - Σ φ_i z_{t-i} + Σ θ_j e_{t-j}` with zero pre-sample residuals.
pub fn css_residuals(z: &[f64], phi: &[f64], theta: &[f64]) -> Vec<f64> {
    let p = phi.len();
    let mut e = vec![0.0; z.len()];
    for t in p..z.len() {
        let mut v = z[t];
        for (i, c) in phi.iter().enumerate() {
            v -= c * z[t - 1 - i];
        }
        for (j, c) in theta.iter().enumerate() {
            if t > j {
                v += c * e[t - 1 - j];
            }
        }
        e[t] = v;
    }
    e
}

/// Mean squared conditional residual over `t >= p`; infinite on overflow.
fn css_sum(z: &[f64], phi: &[f64], theta: &[f64]) -> f64 {
    let p = phi.len();
    let e = css_residuals(z, phi, theta);
    let ss = e[p..].iter().map(|v| v * v).sum::<f64>() / (z.len() - p) as f64;
    if ss.is_finite() {
        ss
    } else {
        f64::INFINITY
    }
}

fn least_squares(x: DMatrix<f64>, y: DVector<f64>) -> Result<Vec<f64>> {
    let svd = x.svd(true, true);
    let coef = svd
        .solve(&y, 1e-12)
        .map_err(|_| SsteError::DegenerateSeries)?;
    Ok(coef.iter().copied().collect())
}

/// Two-stage regression: a long AR fit supplies residual proxies, then `z_t`
/// is regressed on its own lags and the lagged proxies.
fn hannan_rissanen(z: &[f64], p: usize, q: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = z.len();
    if p + q == 0 {
        return Ok((vec![], vec![]));
    }
    let (proxies, start) = if q == 0 {
        (vec![0.0; n], p)
    } else {
        let m = ((10.0 * (n as f64).log10()) as usize)
            .min((n - 1) / 3)
            .max(p.max(q) + 1);
        let rows = n - m;
        let x = DMatrix::from_fn(rows, m, |r, c| z[m + r - 1 - c]);
        let y = DVector::from_fn(rows, |r, _| z[m + r]);
        let long_ar = least_squares(x, y)?;
        let mut e = vec![0.0; n];
        for t in m..n {
            e[t] = z[t]
                - long_ar
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * z[t - 1 - i])
                    .sum::<f64>();
        }
        (e, (m + q).max(p))
    };
    let rows = n - start;
    let x = DMatrix::from_fn(rows, p + q, |r, c| {
        let t = start + r;
        if c < p {
            z[t - 1 - c]
        } else {
            proxies[t - 1 - (c - p)]
        }
    });
    let y = DVector::from_fn(rows, |r, _| z[start + r]);
    let coef = least_squares(x, y)?;
    Ok((coef[..p].to_vec(), coef[p..].iter().map(|b| -b).collect()))
}

/// Derivative-free simplex minimiser.
#[derive(Debug, Clone, Copy)]
pub struct NelderMead {
    pub max_iter: usize,
    /// Stop once the spread of simplex values falls below `ftol·(|f_best| + ftol)`,
    pub ftol: f64,
    /// or the simplex diameter falls below `xtol`.
    pub xtol: f64,
}

impl Default for NelderMead {
    fn default() -> Self {
        NelderMead {
            max_iter: 1000,
            ftol: 1e-10,
            xtol: 1e-7,
        }
    }
}

impl NelderMead {
    /// Returns `(argmin, min, converged)`.
    pub fn minimize(
        &self,
        f: impl Fn(&[f64]) -> f64,
        x0: &[f64],
        step: f64,
    ) -> (Vec<f64>, f64, bool) {
        let k = x0.len();
        if k == 0 {
            return (vec![], f(x0), true);
        }
        let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(k + 1);
        simplex.push((x0.to_vec(), f(x0)));
        for i in 0..k {
            let mut x = x0.to_vec();
            x[i] += if x[i].abs() > 1e-8 {
                step * x[i].abs().max(0.5)
            } else {
                step
            };
            let fx = f(&x);
            simplex.push((x, fx));
        }
        let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
        for _ in 0..self.max_iter {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (best, worst) = (simplex[0].1, simplex[k].1);
            let diameter = simplex[1..]
                .iter()
                .map(|(x, _)| {
                    x.iter()
                        .zip(&simplex[0].0)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                })
                .fold(0.0, f64::max);
            if (worst - best).abs() <= self.ftol * (best.abs() + self.ftol) || diameter <= self.xtol
            {
                return (simplex[0].0.clone(), best, true);
            }
            let centroid: Vec<f64> = (0..k)
                .map(|j| simplex[..k].iter().map(|(x, _)| x[j]).sum::<f64>() / k as f64)
                .collect();
            let towards = |coef: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[k].0)
                    .map(|(c, w)| c + coef * (w - c))
                    .collect()
            };
            let xr = towards(-alpha);
            let fr = f(&xr);
            if fr < simplex[0].1 {
                let xe = towards(-gamma);
                let fe = f(&xe);
                simplex[k] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[k - 1].1 {
                simplex[k] = (xr, fr);
            } else {
                let (xc, fc) = if fr < worst {
                    let xc = towards(-rho);
                    let fc = f(&xc);
                    (xc, fc)
                } else {
                    let xc = towards(rho);
                    let fc = f(&xc);
                    (xc, fc)
                };
                if fc < worst.min(fr) {
                    simplex[k] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for (x, fx) in simplex.iter_mut().skip(1) {
                        for (xi, bi) in x.iter_mut().zip(&x_best) {
                            *xi = bi + sigma * (*xi - bi);
                        }
                        *fx = f(x);
                    }
                }
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let (x, fx) = simplex.swap_remove(0);
        (x, fx, false)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_arma_stream;

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 1.0).powi(2) + 10.0 * (x[1] + 2.0).powi(2);
        let (x, fx, ok) = NelderMead::default().minimize(f, &[0.0, 0.0], 0.5);
        assert!(ok);
        assert!(
            (x[0] - 1.0).abs() < 1e-4 && (x[1] + 2.0).abs() < 1e-4,
            "{x:?}"
        );
        assert!(fx < 1e-8);
    }

    #[test]
    fn recovers_ar1() {
        let x = generate_arma_stream(&[0.6], &[], 1.0, 2000, 11, &[]).unwrap();
        let m = fit_batch(&x, ArmaOrders::new(1, 0, 0)).unwrap();
        assert!((0.5..=0.7).contains(&m.params.phi[0]), "{:?}", m.params);
    }

    #[test]
    fn recovers_ma1() {
        let x = generate_arma_stream(&[], &[0.7], 1.0, 2000, 12, &[]).unwrap();
        let m = fit_batch(&x, ArmaOrders::new(0, 1, 0)).unwrap();
        assert!(m.converged);
        assert!((0.6..=0.8).contains(&m.params.theta[0]), "{:?}", m.params);
    }

    #[test]
    fn white_noise_ar1_is_near_zero() {
        let x = generate_arma_stream(&[], &[], 4.0, 2000, 13, &[]).unwrap();
        let m = fit_batch(&x, ArmaOrders::new(1, 0, 0)).unwrap();
        assert!(m.params.phi[0].abs() <= 0.1);
        assert!((m.params.sigma2 - 4.0).abs() <= 0.4, "{}", m.params.sigma2);
    }

    #[test]
    fn too_short_and_degenerate() {
        assert!(matches!(
            fit_batch(&[1.0; 12], ArmaOrders::new(1, 0, 0)),
            Err(SsteError::InsufficientHistory { needed: 14, .. })
        ));
        assert!(matches!(
            fit_batch(&[3.0; 40], ArmaOrders::new(1, 0, 0)),
            Err(SsteError::DegenerateSeries)
        ));
    }

    #[test]
    fn residual_variance_bounded_by_mean_only_model() {
        for seed in 0..10 {
            let x = generate_arma_stream(&[0.3], &[0.5], 1.0, 200, seed, &[]).unwrap();
            for (p, q) in [(1, 0), (0, 1), (2, 2), (3, 1)] {
                let m = fit_batch(&x, ArmaOrders::new(p, q, 0)).unwrap();
                let z: Vec<f64> = x.iter().map(|v| v - m.mean).collect();
                let mean_only = z[p..].iter().map(|v| v * v).sum::<f64>() / (z.len() - p) as f64;
                assert!(m.params.sigma2 <= mean_only * (1.0 + 1e-12));
            }
        }
    }
}
