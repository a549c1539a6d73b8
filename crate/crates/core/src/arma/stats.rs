//! Differencing and sample correlograms.

use crate::error::{Result, SsteError};

/// Leading values dropped by each differencing pass, needed to integrate back.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffRecord {
    pub d: usize,
    /// `initial[k]` is the first element of the series after `k` passes.
    pub initial: Vec<f64>,
}

/// Applies the first-difference operator `d` times.
pub fn difference(values: &[f64], d: usize) -> Result<(Vec<f64>, DiffRecord)> {
    if values.len() <= d {
        return Err(SsteError::InsufficientHistory {
            needed: d + 1,
            got: values.len(),
        });
    }
    let mut current = values.to_vec();
    let mut initial = Vec::with_capacity(d);
    for _ in 0..d {
        initial.push(current[0]);
        current = current.windows(2).map(|w| w[1] - w[0]).collect();
    }
    Ok((current, DiffRecord { d, initial }))
}

/// Inverse of [`difference`]: rebuilds the original series.
pub fn integrate(diffs: &[f64], record: &DiffRecord) -> Vec<f64> {
    let mut current = diffs.to_vec();
    for &start in record.initial.iter().rev() {
        let mut next = Vec::with_capacity(current.len() + 1);
        next.push(start);
        let mut acc = start;
        for &v in &current {
            acc += v;
            next.push(acc);
        }
        current = next;
    }
    current
}

/// Maps a one-step prediction of the `d`-times-differenced series back to the
/// original scale, given the most recent original values (oldest first; at
/// least `d` of them).
pub fn undifference(predicted: f64, d: usize, recent: &[f64]) -> f64 {
    if d == 0 {
        return predicted;
    }
    assert!(
        recent.len() >= d,
        "need {d} recent values, got {}",
        recent.len()
    );
    // x_{t+1} = Δ^d x_{t+1} - Σ_{k=1..d} (-1)^k C(d,k) x_{t+1-k}
    let mut x = predicted;
    let mut binom = 1.0;
    for k in 1..=d {
        binom = binom * (d + 1 - k) as f64 / k as f64;
        let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
        x += sign * binom * recent[recent.len() - k];
    }
    x
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population variance.
pub fn variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / values.len() as f64
}

fn is_degenerate(values: &[f64], gamma0: f64) -> bool {
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    gamma0 <= (1e-12 * scale.max(f64::MIN_POSITIVE)).powi(2)
}

/// Sample autocorrelations at lags `0..=max_lag` with the biased (1/n) autocovariance.
pub fn sample_acf(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 || n < max_lag + 1 {
        return Err(SsteError::InsufficientHistory {
            needed: (max_lag + 1).max(2),
            got: n,
        });
    }
    let m = mean(values);
    let centered: Vec<f64> = values.iter().map(|v| v - m).collect();
    let gamma = |k: usize| {
        centered[..n - k]
            .iter()
            .zip(&centered[k..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let gamma0 = gamma(0);
    if is_degenerate(values, gamma0) {
        return Err(SsteError::DegenerateSeries);
    }
    Ok((0..=max_lag)
        .map(|k| if k == 0 { 1.0 } else { gamma(k) / gamma0 })
        .collect())
}

/// Partial autocorrelations at lags `1..=acf.len()-1` by the Durbin–Levinson recursion.
pub fn pacf_from_acf(acf: &[f64]) -> Vec<f64> {
    let max_lag = acf.len().saturating_sub(1);
    let mut out = Vec::with_capacity(max_lag);
    let mut phi: Vec<f64> = Vec::with_capacity(max_lag);
    let mut v = 1.0;
    for k in 1..=max_lag {
        let num = acf[k]
            - phi
                .iter()
                .enumerate()
                .map(|(j, c)| c * acf[k - 1 - j])
                .sum::<f64>();
        let a = if v > 0.0 {
            (num / v).clamp(-1.0, 1.0)
        } else {
            0.0
        };
        let prev = phi.clone();
        for j in 0..phi.len() {
            phi[j] = prev[j] - a * prev[prev.len() - 1 - j];
        }
        phi.push(a);
        v *= 1.0 - a * a;
        out.push(a);
    }
    out
}

/// Partial autocorrelations at lags `1..=max_lag`.
pub fn sample_pacf(values: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    Ok(pacf_from_acf(&sample_acf(values, max_lag)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn difference_examples() {
        let x = [1.0, 3.0, 6.0, 10.0];
        assert_eq!(difference(&x, 1).unwrap().0, vec![2.0, 3.0, 4.0]);
        assert_eq!(difference(&x, 2).unwrap().0, vec![1.0, 1.0]);
        assert_eq!(difference(&x, 0).unwrap().0, x.to_vec());
        assert!(difference(&x[..2], 2).is_err());
    }

    #[test]
    fn undifference_examples() {
        assert_eq!(undifference(4.0, 1, &[10.0]), 14.0);
        assert_eq!(undifference(7.5, 0, &[]), 7.5);
        assert_eq!(undifference(1.0, 2, &[6.0, 10.0]), 15.0);
        // oracle: differencing [6, 10, 15] twice gives [1]
        assert_eq!(difference(&[6.0, 10.0, 15.0], 2).unwrap().0, vec![1.0]);
    }

    #[test]
    fn acf_lag_zero_is_one() {
        let r = sample_acf(&[1.0, 4.0, 2.0, 8.0, 5.0], 2).unwrap();
        assert_eq!(r[0], 1.0);
    }

    #[test]
    fn alternating_series_has_negative_lag_one() {
        let x = [1.0, -1.0, 1.0, -1.0, 1.0, -1.0];
        let r = sample_acf(&x, 1).unwrap();
        // direct definition: mean 0, gamma0 = 1, gamma1 = -5/6
        assert!((r[1] - (-5.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_series_is_degenerate() {
        assert!(matches!(
            sample_acf(&[5.0, 5.0, 5.0], 1),
            Err(SsteError::DegenerateSeries)
        ));
        assert!(matches!(
            sample_acf(&[0.1; 10], 2),
            Err(SsteError::DegenerateSeries)
        ));
    }

    #[test]
    fn too_short_for_lag() {
        assert!(sample_acf(&[1.0, 2.0], 2).is_err());
        assert!(sample_acf(&[1.0], 0).is_err());
    }

    #[test]
    fn pacf_lag_one_equals_acf() {
        let x = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0, 3.0];
        let r = sample_acf(&x, 3).unwrap();
        let p = sample_pacf(&x, 3).unwrap();
        assert_eq!(p[0], r[1]);
    }

    proptest! {
        #[test]
        fn difference_round_trip(x in prop::collection::vec(-1e3f64..1e3, 3..30), d in 0usize..3) {
            let (dx, rec) = difference(&x, d).unwrap();
            let back = integrate(&dx, &rec);
            prop_assert_eq!(back.len(), x.len());
            for (a, b) in back.iter().zip(&x) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn correlograms_are_bounded(x in prop::collection::vec(-1e3f64..1e3, 12..60)) {
            if let Ok(r) = sample_acf(&x, 10) {
                prop_assert!(r.iter().all(|v| (-1.0..=1.0).contains(v)));
                prop_assert!(pacf_from_acf(&r).iter().all(|v| (-1.0..=1.0).contains(v)));
            }
        }
    }
}
