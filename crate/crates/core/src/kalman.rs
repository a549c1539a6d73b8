//! Online tracking of the AR coefficient vector with a Kalman filter.
//!
//! The coefficient vector is the filter state and follows a random walk with
//! covariance `Q = δ·I`; each new interval is a scalar measurement whose
//! measurement vector `H` holds the `p` most recent (differenced,
//! mean-centred) observations and whose noise variance is `(1 + Σθ²)·σ²`.
//! The MA coefficients and `σ²` stay at their batch values.

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::arma::{difference, undifference, FittedModel};
use crate::error::{Result, SsteError};
use crate::ingestion::{read_file, write_file, UserId};

pub const DEFAULT_INTERVAL_FLOOR: f64 = 60.0;

/// Gain denominators below this skip the coefficient update for that step.
const MIN_INNOVATION_VARIANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KalmanConfig {
    /// `δ` in `Q = δ·I`.
    pub process_noise: f64,
    /// Lower bound in seconds applied to predicted intervals when forming event times.
    pub interval_floor: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        KalmanConfig {
            process_noise: 0.0,
            interval_floor: DEFAULT_INTERVAL_FLOOR,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.process_noise >= 0.0) || !self.process_noise.is_finite() {
            return Err(SsteError::invalid(
                "process_noise",
                "must be finite and >= 0",
            ));
        }
        if !self.interval_floor.is_finite() {
            return Err(SsteError::invalid("interval_floor", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimePrediction {
    /// Predicted next interval in seconds (unclamped).
    pub interval_hat: f64,
    /// Predicted occurrence time in epoch seconds.
    pub event_time_hat: i64,
    /// Whether `interval_floor` replaced a smaller predicted interval.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    phi_hat: DVector<f64>,
    cov: DMatrix<f64>,
    process_noise: f64,
    interval_floor: f64,
    r_meas: f64,
    theta: Vec<f64>,
    /// Most recent last; length `q`.
    residuals: VecDeque<f64>,
    /// Most recent last; length `p`. Differenced, mean-centred scale.
    history: VecDeque<f64>,
    /// Most recent last; length `d`. Original interval scale.
    originals: VecDeque<f64>,
    mean: f64,
    d: usize,
}

/// Anything that can produce one-step interval forecasts and absorb the
/// realised value afterwards.
pub trait IntervalPredictor {
    fn predict_interval(&self) -> f64;
    fn observe(&mut self, x_new: f64) -> Result<()>;
}

impl KalmanState {
    /// Starts tracking from a batch fit. `warmup` holds intervals on the
    /// original scale; its tail fills the observation buffer.
    pub fn init(model: &FittedModel, warmup: &[f64], config: &KalmanConfig) -> Result<Self> {
        config.validate()?;
        model.params.validate()?;
        let (p, q, d) = (model.orders.p, model.orders.q, model.orders.d);
        if model.params.phi.len() != p || model.params.theta.len() != q {
            return Err(SsteError::invalid(
                "model",
                "coefficient counts disagree with orders",
            ));
        }
        if warmup.len() < p + d || warmup.len() < d {
            return Err(SsteError::InsufficientHistory {
                needed: p + d,
                got: warmup.len(),
            });
        }
        let z: Vec<f64> = if warmup.len() > d {
            difference(warmup, d)?
                .0
                .into_iter()
                .map(|v| v - model.mean)
                .collect()
        } else {
            Vec::new()
        };
        Ok(KalmanState {
            phi_hat: DVector::from_column_slice(&model.params.phi),
            cov: DMatrix::from_element(p, p, 1.0),
            process_noise: config.process_noise,
            interval_floor: config.interval_floor,
            r_meas: model.params.measurement_variance(),
            theta: model.params.theta.clone(),
            // no one-step predictions exist yet, so the residuals start at zero
            residuals: std::iter::repeat_n(0.0, q).collect(),
            history: tail_padded(&z, p),
            originals: warmup[warmup.len() - d..].iter().copied().collect(),
            mean: model.mean,
            d,
        })
    }

    pub fn p(&self) -> usize {
        self.phi_hat.len()
    }

    pub fn q(&self) -> usize {
        self.theta.len()
    }

    pub fn phi_hat(&self) -> &[f64] {
        self.phi_hat.as_slice()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn r_meas(&self) -> f64 {
        self.r_meas
    }

    pub fn residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.residuals.iter().copied()
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// `H`: most recent observation first.
    fn measurement_vector(&self) -> DVector<f64> {
        DVector::from_iterator(self.history.len(), self.history.iter().rev().copied())
    }

    /// One-step prediction on the differenced, centred scale.
    fn predict_centered(&self) -> f64 {
        let ar = self.phi_hat.dot(&self.measurement_vector());
        let ma: f64 = self
            .theta
            .iter()
            .zip(self.residuals.iter().rev())
            .map(|(t, e)| t * e)
            .sum();
        ar - ma
    }

    fn to_centered(&self, x_new: f64) -> f64 {
        let mut w = x_new;
        let mut binom = 1.0;
        for k in 1..=self.d {
            binom = binom * (self.d + 1 - k) as f64 / k as f64;
            let sign = if k % 2 == 1 { -1.0 } else { 1.0 };
            w += sign * binom * self.originals[self.originals.len() - k];
        }
        w - self.mean
    }

    /// Pushes a realised interval into the buffers, recording its innovation
    /// against the prediction made before it was seen.
    fn absorb(&mut self, x_new: f64, z: f64, prior: f64) {
        push_bounded(&mut self.history, z, self.phi_hat.len());
        push_bounded(&mut self.residuals, z - prior, self.theta.len());
        push_bounded(&mut self.originals, x_new, self.d);
    }

    /// One Kalman step on the coefficient vector followed by the buffer
    /// update. On a non-finite intermediate the state is left untouched.
    pub fn learn_by_kf(&mut self, x_new: f64) -> Result<()> {
        if !x_new.is_finite() {
            return Err(SsteError::invalid("x_new", "observation must be finite"));
        }
        let z = self.to_centered(x_new);
        let prior = self.predict_centered();
        let p = self.p();
        if p > 0 {
            let h = self.measurement_vector();
            let predicted_cov = &self.cov + DMatrix::identity(p, p) * self.process_noise;
            let ph = &predicted_cov * &h;
            let s = h.dot(&ph) + self.r_meas;
            if !s.is_finite() || !z.is_finite() {
                return Err(SsteError::NonFinite);
            }
            let (phi, cov) = if s < MIN_INNOVATION_VARIANCE {
                (self.phi_hat.clone(), predicted_cov)
            } else {
                let gain = ph / s;
                let cov = (DMatrix::identity(p, p) - &gain * h.transpose()) * &predicted_cov;
                let cov = (&cov + cov.transpose()) * 0.5;
                let phi = &self.phi_hat + &gain * (z - h.dot(&self.phi_hat));
                (phi, cov)
            };
            if !(phi.iter().all(|v| v.is_finite())
                && cov.iter().all(|v| v.is_finite())
                && z.is_finite())
            {
                return Err(SsteError::NonFinite);
            }
            self.phi_hat = phi;
            self.cov = cov;
        }
        self.absorb(x_new, z, prior);
        Ok(())
    }

    /// Observes `x_new` (the interval ending at `last_event_time`), updates
    /// the coefficients, and predicts the next event time.
    pub fn predict_time(&mut self, last_event_time: i64, x_new: f64) -> Result<TimePrediction> {
        self.learn_by_kf(x_new)?;
        Ok(self.time_prediction(last_event_time))
    }

    /// Event-time forecast from the current state without updating it.
    pub fn time_prediction(&self, last_event_time: i64) -> TimePrediction {
        let interval_hat = IntervalPredictor::predict_interval(self);
        let clamped = !(interval_hat >= self.interval_floor);
        let step = if clamped {
            self.interval_floor
        } else {
            interval_hat
        };
        TimePrediction {
            interval_hat,
            event_time_hat: last_event_time + step.round() as i64,
            clamped,
        }
    }

    pub fn snapshot(&self, user: UserId) -> KalmanSnapshot {
        let p = self.p();
        KalmanSnapshot {
            user,
            phi_hat: self.phi_hat.iter().copied().collect(),
            p_matrix: (0..p)
                .map(|i| (0..p).map(|j| self.cov[(i, j)]).collect())
                .collect(),
            theta: self.theta.clone(),
            r_meas: self.r_meas,
            residuals: self.residuals.iter().copied().collect(),
            history: self.history.iter().copied().collect(),
            mean: self.mean,
            d: self.d,
            originals: self.originals.iter().copied().collect(),
            process_noise: self.process_noise,
            interval_floor: self.interval_floor,
        }
    }

    pub fn from_snapshot(s: &KalmanSnapshot) -> Result<Self> {
        let p = s.phi_hat.len();
        let bad = |m: &str| Err(SsteError::invalid("snapshot", m.to_string()));
        if s.p_matrix.len() != p || s.p_matrix.iter().any(|row| row.len() != p) {
            return bad("P must be p x p");
        }
        if s.history.len() != p || s.residuals.len() != s.theta.len() || s.originals.len() != s.d {
            return bad("buffer lengths disagree with orders");
        }
        if !(s.r_meas > 0.0) {
            return bad("r_meas must be > 0");
        }
        Ok(KalmanState {
            phi_hat: DVector::from_column_slice(&s.phi_hat),
            cov: DMatrix::from_fn(p, p, |i, j| s.p_matrix[i][j]),
            process_noise: s.process_noise,
            interval_floor: s.interval_floor,
            r_meas: s.r_meas,
            theta: s.theta.clone(),
            residuals: s.residuals.iter().copied().collect(),
            history: s.history.iter().copied().collect(),
            originals: s.originals.iter().copied().collect(),
            mean: s.mean,
            d: s.d,
        })
    }
}

impl IntervalPredictor for KalmanState {
    /// `Φ̂ᵀH − Σ θᵢ ε_{t−i+1}` plus the series mean, undifferenced to the
    /// original interval scale.
    fn predict_interval(&self) -> f64 {
        let w = self.predict_centered() + self.mean;
        let recent: Vec<f64> = self.originals.iter().copied().collect();
        undifference(w, self.d, &recent)
    }

    fn observe(&mut self, x_new: f64) -> Result<()> {
        self.learn_by_kf(x_new)
    }
}

/// Batch-fitted comparator whose coefficients never change.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenPredictor(KalmanState);

impl FrozenPredictor {
    pub fn new(state: KalmanState) -> Self {
        FrozenPredictor(state)
    }
}

impl IntervalPredictor for FrozenPredictor {
    fn predict_interval(&self) -> f64 {
        self.0.predict_interval()
    }

    fn observe(&mut self, x_new: f64) -> Result<()> {
        if !x_new.is_finite() {
            return Err(SsteError::invalid("x_new", "observation must be finite"));
        }
        let z = self.0.to_centered(x_new);
        let prior = self.0.predict_centered();
        self.0.absorb(x_new, z, prior);
        Ok(())
    }
}

/// JSON form of a [`KalmanState`], used to resume streaming prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KalmanSnapshot {
    pub user: UserId,
    pub phi_hat: Vec<f64>,
    #[serde(rename = "P")]
    pub p_matrix: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    pub r_meas: f64,
    pub residuals: Vec<f64>,
    pub history: Vec<f64>,
    pub mean: f64,
    pub d: usize,
    /// Last `d` original-scale intervals, needed to difference new observations.
    #[serde(default)]
    pub originals: Vec<f64>,
    #[serde(default)]
    pub process_noise: f64,
    #[serde(default = "default_floor")]
    pub interval_floor: f64,
}

fn default_floor() -> f64 {
    DEFAULT_INTERVAL_FLOOR
}

pub fn write_snapshots(path: &Path, snapshots: &[KalmanSnapshot]) -> Result<()> {
    let mut out = String::new();
    for s in snapshots {
        out.push_str(&serde_json::to_string(s)?);
        out.push('\n');
    }
    write_file(path, &out)
}

pub fn read_snapshots(path: &Path) -> Result<Vec<KalmanSnapshot>> {
    read_file(path)?
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| SsteError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn tail_padded(values: &[f64], len: usize) -> VecDeque<f64> {
    let mut out: VecDeque<f64> =
        std::iter::repeat_n(0.0, len.saturating_sub(values.len())).collect();
    out.extend(&values[values.len().saturating_sub(len)..]);
    out
}

fn push_bounded(buf: &mut VecDeque<f64>, v: f64, cap: usize) {
    if cap == 0 {
        return;
    }
    if buf.len() == cap {
        buf.pop_front();
    }
    buf.push_back(v);
}
