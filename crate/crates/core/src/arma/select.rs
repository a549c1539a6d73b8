//! Order selection from correlogram cut-off behaviour, with an AIC grid
//! search when neither correlogram clearly cuts off.

use super::fit::fit_batch;
use super::stats::{difference, mean, pacf_from_acf, sample_acf, variance};
use super::{ArmaOrders, MAX_DIFFERENCING};
use crate::error::{Result, SsteError};

/// Shortest series accepted by [`select_orders`].
pub const MIN_SELECTION_LEN: usize = 20;

/// Which branch of the identification procedure produced the orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SelectionCase {
    /// ACF cuts off at q, PACF tails off.
    MovingAverage,
    /// PACF cuts off at p, ACF tails off.
    Autoregressive,
    /// Both tail off (or the pattern is ambiguous): AIC grid search.
    Aic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderSelection {
    pub orders: ArmaOrders,
    pub case: SelectionCase,
    pub acf_cut: usize,
    pub pacf_cut: usize,
    pub max_lag: usize,
}

/// Gaussian AIC up to an additive constant: `n·ln(σ̂²) + 2k`.
pub fn aic(sigma2_hat: f64, n: usize, k: usize) -> f64 {
    n as f64 * sigma2_hat.ln() + 2.0 * k as f64
}

/// Smallest lag `k` such that every lag after `k` lies inside a
/// Bonferroni-adjusted 95% band for the remaining lags. `values[0]` is lag 1.
pub fn cut_lag(values: &[f64], n: usize) -> usize {
    let big_l = values.len();
    (0..big_l)
        .find(|&k| {
            let band = bonferroni_z(big_l - k) / (n as f64).sqrt();
            values[k..].iter().all(|v| v.abs() <= band)
        })
        .unwrap_or(big_l)
}

/// Two-sided normal quantile at family-wise level 0.05 over `m` tests.
fn bonferroni_z(m: usize) -> f64 {
    inverse_normal_upper(0.05 / (2.0 * m as f64))
}

/// Upper-tail standard normal quantile for small tail probability `a`
/// (Acklam's rational approximation, |error| < 1.2e-9).
fn inverse_normal_upper(a: f64) -> f64 {
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    // Lower-tail region formula evaluated at `a`, negated.
    let q = (-2.0 * a.ln()).sqrt();
    let num = ((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5];
    let den = (((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0;
    -(num / den)
}

fn mean_is_stable(values: &[f64]) -> bool {
    let half = values.len() / 2;
    let (a, b) = values.split_at(half);
    if a.is_empty() || b.is_empty() {
        return true;
    }
    let pooled = ((variance(a) + variance(b)) / 2.0).sqrt();
    (mean(a) - mean(b)).abs() < 0.5 * pooled || (pooled == 0.0 && mean(a) == mean(b))
}

/// Smallest `d` in `0..=2` whose differenced series has lag-1 autocorrelation
/// below 0.9 and a stable mean across its two halves; 2 if none qualifies.
pub fn choose_differencing(values: &[f64]) -> Result<usize> {
    for d in 0..=MAX_DIFFERENCING {
        let (z, _) = difference(values, d)?;
        let r1 = match sample_acf(&z, 1) {
            Ok(r) => r[1],
            Err(SsteError::DegenerateSeries) if d > 0 => return Ok(d),
            Err(e) => return Err(e),
        };
        if r1 < 0.9 && mean_is_stable(&z) {
            return Ok(d);
        }
    }
    Ok(MAX_DIFFERENCING)
}

pub fn select_orders(values: &[f64], p_max: usize, q_max: usize) -> Result<ArmaOrders> {
    Ok(select_orders_detailed(values, p_max, q_max)?.orders)
}

pub fn select_orders_detailed(
    values: &[f64],
    p_max: usize,
    q_max: usize,
) -> Result<OrderSelection> {
    if values.len() < MIN_SELECTION_LEN {
        return Err(SsteError::InsufficientHistory {
            needed: MIN_SELECTION_LEN,
            got: values.len(),
        });
    }
    if p_max + q_max == 0 {
        return Err(SsteError::invalid(
            "p_max/q_max",
            "at least one must be positive",
        ));
    }
    let d = choose_differencing(values)?;
    let (z, _) = difference(values, d)?;
    let n = z.len();
    let max_lag = (n / 4).clamp(1, 20);
    let acf = sample_acf(&z, max_lag)?;
    let pacf = pacf_from_acf(&acf);
    let acf_cut = cut_lag(&acf[1..], n);
    let pacf_cut = cut_lag(&pacf, n);

    // A correlogram tails off when it stays significant to the last lag, or
    // decays over clearly more lags than the other one.
    let tails = |own: usize, other: usize| own == max_lag || own >= other + 2;
    let (case, orders) = if (1..=q_max).contains(&acf_cut) && tails(pacf_cut, acf_cut) {
        (SelectionCase::MovingAverage, ArmaOrders::new(0, acf_cut, d))
    } else if (1..=p_max).contains(&pacf_cut) && tails(acf_cut, pacf_cut) {
        (
            SelectionCase::Autoregressive,
            ArmaOrders::new(pacf_cut, 0, d),
        )
    } else {
        (SelectionCase::Aic, aic_grid(&z, p_max, q_max, d)?)
    };
    tracing::debug!(?orders, ?case, acf_cut, pacf_cut, "orders selected");
    Ok(OrderSelection {
        orders,
        case,
        acf_cut,
        pacf_cut,
        max_lag,
    })
}

/// Grid search over `(p, q) ≠ (0, 0)`; ties go to the smaller `p + q`, then smaller `p`.
fn aic_grid(z: &[f64], p_max: usize, q_max: usize, d: usize) -> Result<ArmaOrders> {
    let n = z.len();
    let mut best: Option<(f64, usize, usize)> = None;
    for p in 0..=p_max {
        for q in 0..=q_max {
            let orders = ArmaOrders::new(p, q, 0);
            if p + q == 0 || n < orders.min_fit_len() {
                continue;
            }
            let Ok(fit) = fit_batch(z, orders) else {
                continue;
            };
            let score = aic(fit.params.sigma2, n, p + q + 1);
            let better = match best {
                None => true,
                Some((s, bp, bq)) => score
                    .total_cmp(&s)
                    .then((p + q).cmp(&(bp + bq)))
                    .then(p.cmp(&bp))
                    .is_lt(),
            };
            if better {
                best = Some((score, p, q));
            }
        }
    }
    best.map(|(_, p, q)| ArmaOrders::new(p, q, d))
        .ok_or(SsteError::InsufficientHistory {
            needed: ArmaOrders::new(1, 0, 0).min_fit_len(),
            got: n,
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::generate_arma_stream;

    #[test]
    fn aic_examples() {
        assert!(aic(2.0, 100, 2) < aic(2.0, 100, 3));
        assert!(aic(1.0, 100, 2) < aic(2.0, 100, 2));
        assert_eq!(aic(1.0, 100, 0), 0.0);
    }

    #[test]
    fn normal_quantiles() {
        assert!((inverse_normal_upper(0.025) - 1.959_963_985).abs() < 1e-6);
        assert!((inverse_normal_upper(0.05 / 40.0) - 3.023_341_24).abs() < 1e-5);
    }

    #[test]
    fn cut_lag_of_clean_patterns() {
        let n = 10_000;
        assert_eq!(cut_lag(&[0.5, 0.0, 0.0, 0.0], n), 1);
        assert_eq!(cut_lag(&[0.0, 0.0, 0.0], n), 0);
        assert_eq!(cut_lag(&[0.5, 0.4, 0.3, 0.2], n), 4);
        assert_eq!(cut_lag(&[0.5, 0.01, 0.3, 0.0], n), 3);
    }

    #[test]
    fn short_and_degenerate_series_rejected() {
        assert!(matches!(
            select_orders(&[1.0; 10], 5, 5),
            Err(SsteError::InsufficientHistory { .. })
        ));
        assert!(matches!(
            select_orders(&[1.0; 40], 5, 5),
            Err(SsteError::DegenerateSeries)
        ));
    }

    #[test]
    fn random_walk_gets_differenced() {
        let steps = generate_arma_stream(&[], &[], 1.0, 500, 3, &[]).unwrap();
        let walk: Vec<f64> = steps
            .iter()
            .scan(0.0, |acc, s| {
                *acc += s;
                Some(*acc)
            })
            .collect();
        assert!(choose_differencing(&walk).unwrap() >= 1);
        assert_eq!(choose_differencing(&steps).unwrap(), 0);
    }

    #[test]
    fn selection_is_deterministic() {
        let x = generate_arma_stream(&[0.5], &[0.4], 1.0, 600, 9, &[]).unwrap();
        assert_eq!(
            select_orders_detailed(&x, 3, 3).unwrap(),
            select_orders_detailed(&x, 3, 3).unwrap()
        );
    }

    fn hit_rate(phi: &[f64], theta: &[f64], want: (usize, usize)) -> usize {
        (0..50)
            .filter(|&seed| {
                let x = generate_arma_stream(phi, theta, 1.0, 2000, 1000 + seed, &[]).unwrap();
                let o = select_orders(&x, 5, 5).unwrap();
                (o.p, o.q, o.d) == (want.0, want.1, 0)
            })
            .count()
    }

    #[test]
    fn identifies_ma1() {
        let hits = hit_rate(&[], &[0.7], (0, 1));
        assert!(hits >= 40, "{hits}/50");
    }

    #[test]
    fn identifies_ar2() {
        let hits = hit_rate(&[0.5, 0.3], &[], (2, 0));
        assert!(hits >= 40, "{hits}/50");
    }

    #[test]
    fn arma11_goes_through_aic() {
        let aic_cases = (0..21)
            .filter(|&seed| {
                let x = generate_arma_stream(&[0.5], &[0.4], 1.0, 2000, 500 + seed, &[]).unwrap();
                select_orders_detailed(&x, 5, 5).unwrap().case == SelectionCase::Aic
            })
            .count();
        assert!(aic_cases > 10, "{aic_cases}/21");
    }
}
