//! Train/test protocol: walk-forward interval MSE for the adaptive and the
//! frozen predictor, error traces, and Accuracy@TopN of the region ranking.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arma::{
    fit_batch, mean, select_orders, variance, ArmaOrders, FittedModel, DEFAULT_P_MAX, DEFAULT_Q_MAX,
};
use crate::detection::{event_sequences, DetectionParams, EventSequence, Sste};
use crate::error::{Result, SsteError};
use crate::ingestion::{write_file, CheckinSequence, FriendshipGraph, UserId};
use crate::kalman::{FrozenPredictor, IntervalPredictor, KalmanConfig, KalmanState};
use crate::location::{rank, LocationContext, LocationPrediction, RegionMap, DEFAULT_HALF_LIFE};

/// Users with fewer events cannot be split and fitted.
pub const MIN_EVENTS: usize = 4;
/// Shortest test segment for which an error trace is reported.
pub const MIN_TRACE_STEPS: usize = 60;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub train_proportions: Vec<f64>,
    pub xi_values: Vec<f64>,
    pub top_n_values: Vec<usize>,
    pub detection: DetectionParams,
    pub alpha: f64,
    pub half_life: f64,
    pub kalman: KalmanConfig,
    pub p_max: usize,
    pub q_max: usize,
    /// Training proportion at which error traces are recorded.
    pub trace_proportion: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            train_proportions: (2..=9).map(|i| i as f64 / 10.0).collect(),
            xi_values: (0..=10).map(|i| i as f64 / 10.0).collect(),
            top_n_values: vec![1, 5, 10, 20, 50],
            detection: DetectionParams::default(),
            alpha: 0.0,
            half_life: DEFAULT_HALF_LIFE,
            kalman: KalmanConfig::default(),
            p_max: DEFAULT_P_MAX,
            q_max: DEFAULT_Q_MAX,
            trace_proportion: 0.2,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_proportions.is_empty()
            || self
                .train_proportions
                .iter()
                .any(|p| !(*p > 0.0 && *p < 1.0))
            || self.train_proportions.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(SsteError::invalid(
                "train_proportions",
                "must be non-empty, strictly increasing, inside (0, 1)",
            ));
        }
        if !(self.trace_proportion > 0.0 && self.trace_proportion < 1.0) {
            return Err(SsteError::invalid(
                "trace_proportion",
                "must be inside (0, 1)",
            ));
        }
        if self.xi_values.is_empty() || self.xi_values.iter().any(|x| !(0.0..=1.0).contains(x)) {
            return Err(SsteError::invalid(
                "xi_values",
                "must be non-empty, inside [0, 1]",
            ));
        }
        if self.top_n_values.is_empty() || self.top_n_values.contains(&0) {
            return Err(SsteError::invalid(
                "top_n_values",
                "must be non-empty and positive",
            ));
        }
        if !(self.alpha >= 0.0) {
            return Err(SsteError::invalid("alpha", "must be >= 0"));
        }
        if !(self.half_life > 0.0) {
            return Err(SsteError::invalid("half_life", "must be > 0"));
        }
        if self.p_max + self.q_max == 0 {
            return Err(SsteError::invalid(
                "p_max/q_max",
                "at least one must be positive",
            ));
        }
        self.detection.validate()?;
        self.kalman.validate()
    }
}

/// Temporal prefix of `⌈proportion·n⌉` events (at least 2, leaving at least
/// one) as training data and the rest as test data.
pub fn split_sequence(seq: &EventSequence, proportion: f64) -> Result<(&[Sste], &[Sste])> {
    if !(proportion > 0.0 && proportion < 1.0) {
        return Err(SsteError::invalid("proportion", "must be inside (0, 1)"));
    }
    let n = seq.events.len();
    if n < MIN_EVENTS {
        return Err(SsteError::InsufficientHistory {
            needed: MIN_EVENTS,
            got: n,
        });
    }
    let k = ((proportion * n as f64).ceil() as usize).clamp(2, n - 1);
    Ok(seq.events.split_at(k))
}

/// Batch model for an interval series: order selection and fit when the
/// series is long enough, otherwise AR(1), otherwise the mean alone.
pub fn fit_interval_model(values: &[f64], p_max: usize, q_max: usize) -> Result<FittedModel> {
    if values.is_empty() {
        return Err(SsteError::InsufficientHistory { needed: 1, got: 0 });
    }
    let selected = match select_orders(values, p_max, q_max) {
        Ok(orders) => fit_batch(values, orders),
        Err(e) => Err(e),
    };
    let fallback = || match fit_batch(values, ArmaOrders::new(1, 0, 0)) {
        Ok(m) => m,
        Err(_) => {
            let mu = mean(values);
            let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
            FittedModel::mean_only(mu, variance(values).max(scale * scale * 1e-12))
        }
    };
    match selected {
        Ok(m) => Ok(m),
        Err(SsteError::InsufficientHistory { .. } | SsteError::DegenerateSeries) => Ok(fallback()),
        Err(e) => Err(e),
    }
}

/// One-step errors of both predictors over a test segment.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkForward {
    pub model: FittedModel,
    /// Adaptive predictions of each test interval, made before it was seen.
    pub predicted: Vec<f64>,
    pub sq_err_kf: Vec<f64>,
    pub sq_err_frozen: Vec<f64>,
}

impl WalkForward {
    pub fn mse_kf(&self) -> f64 {
        mean(&self.sq_err_kf)
    }

    pub fn mse_frozen(&self) -> f64 {
        mean(&self.sq_err_frozen)
    }
}

/// Fits on `train`, then walks through `test`: each step first absorbs the
/// newest known interval (the last training interval at the first step) and
/// then predicts the next one.
pub fn walk_forward(train: &[f64], test: &[f64], cfg: &ExperimentConfig) -> Result<WalkForward> {
    let model = fit_interval_model(train, cfg.p_max, cfg.q_max)?;
    let (&newest, warmup) = train
        .split_last()
        .expect("fit_interval_model rejects empty input");
    let mut kf = KalmanState::init(&model, warmup, &cfg.kalman)?;
    let mut frozen = FrozenPredictor::new(kf.clone());
    kf.learn_by_kf(newest)?;
    frozen.observe(newest)?;
    let mut out = WalkForward {
        model,
        predicted: Vec::with_capacity(test.len()),
        sq_err_kf: Vec::with_capacity(test.len()),
        sq_err_frozen: Vec::with_capacity(test.len()),
    };
    for &x in test {
        let a = kf.predict_interval();
        let b = frozen.predict_interval();
        out.predicted.push(a);
        out.sq_err_kf.push((a - x).powi(2));
        out.sq_err_frozen.push((b - x).powi(2));
        kf.learn_by_kf(x)?;
        frozen.observe(x)?;
    }
    Ok(out)
}

/// Everything evaluation reads.
#[derive(Debug, Clone, Copy)]
pub struct EvalInputs<'a> {
    pub checkins: &'a CheckinSequence,
    pub graph: &'a FriendshipGraph,
    pub map: &'a RegionMap,
    /// Detected events.
    pub events: &'a [Sste],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub proportion: f64,
    pub mse_kf: f64,
    pub mse_frozen: f64,
    pub mse_kf_hours2: f64,
    pub mse_frozen_hours2: f64,
    pub n_users: usize,
    pub n_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyRow {
    pub proportion: f64,
    pub xi: f64,
    pub top_n: usize,
    pub accuracy: f64,
    pub n_predictions: usize,
    pub abstentions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub step: usize,
    pub sq_err_kf: f64,
    pub sq_err_frozen: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub user: UserId,
    pub proportion: Option<f64>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_users: usize,
    pub n_eligible: usize,
    pub mse: Vec<MseRow>,
    pub accuracy: Vec<AccuracyRow>,
    pub traces: BTreeMap<UserId, Vec<TraceStep>>,
    pub exclusions: Vec<Exclusion>,
}

/// Per-user, per-proportion outcome.
#[derive(Debug, Clone, Default)]
struct UserCell {
    mse: Option<(f64, f64, usize)>,
    /// hits[xi index][top_n index]
    hits: Vec<Vec<usize>>,
    n_predictions: usize,
    abstentions: usize,
}

type UserOutcome = Result<(UserCell, Option<Vec<TraceStep>>)>;

/// Users skipped by [`predict_all`] and why.
pub type Skipped = Vec<(UserId, SsteError)>;

fn intervals(events: &[Sste]) -> Vec<f64> {
    events
        .windows(2)
        .map(|w| (w[1].time - w[0].time) as f64)
        .collect()
}

fn evaluate_user(
    inputs: &EvalInputs,
    ctx: &LocationContext,
    seq: &EventSequence,
    proportion: f64,
    cfg: &ExperimentConfig,
) -> Result<(UserCell, Option<Vec<TraceStep>>)> {
    let (train, test) = split_sequence(seq, proportion)?;
    let all = intervals(&seq.events);
    let n_train = train.len() - 1;
    let walk = walk_forward(&all[..n_train], &all[n_train..], cfg)?;

    let max_n = *cfg.top_n_values.iter().max().expect("validated non-empty");
    let mut cell = UserCell {
        hits: vec![vec![0; cfg.top_n_values.len()]; cfg.xi_values.len()],
        ..UserCell::default()
    };
    for (k, target) in test.iter().enumerate() {
        let idx = train.len() + k;
        let last = seq.events[idx - 1].time;
        let step = walk.predicted[k].max(cfg.kalman.interval_floor);
        let tau_hat = last + step.round() as i64;
        // nothing from the target event itself may enter the scores
        let first_member = target
            .member_checkins
            .iter()
            .map(|&i| inputs.checkins.records()[i].time)
            .min()
            .unwrap_or(target.time);
        let cutoff = tau_hat.min(first_member).min(target.time);
        // temporal counts come from the training events only
        let truth = inputs.map.assign(&target.coords);
        cell.n_predictions += 1;
        let scores = match ctx.score_candidates(&seq.user, train, tau_hat, cutoff) {
            Ok(s) => s,
            Err(SsteError::NoCandidates { .. }) => {
                cell.abstentions += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        for (xi_i, &xi) in cfg.xi_values.iter().enumerate() {
            let ranked = rank(&scores, xi, max_n)?;
            if let Some(pos) = ranked.iter().position(|r| r.region == truth) {
                for (n_i, &n) in cfg.top_n_values.iter().enumerate() {
                    if pos < n {
                        cell.hits[xi_i][n_i] += 1;
                    }
                }
            }
        }
    }
    cell.mse = Some((walk.mse_kf(), walk.mse_frozen(), walk.sq_err_kf.len()));
    let trace = (proportion == cfg.trace_proportion && walk.sq_err_kf.len() >= MIN_TRACE_STEPS)
        .then(|| {
            walk.sq_err_kf
                .iter()
                .zip(&walk.sq_err_frozen)
                .enumerate()
                .map(|(i, (&a, &b))| TraceStep {
                    step: i + 1,
                    sq_err_kf: a,
                    sq_err_frozen: b,
                })
                .collect()
        });
    Ok((cell, trace))
}

/// Runs the full protocol on detected events.
pub fn evaluate(inputs: &EvalInputs, cfg: &ExperimentConfig) -> Result<EvalReport> {
    cfg.validate()?;
    let sequences = event_sequences(inputs.events);
    let mut exclusions = Vec::new();
    let mut eligible = Vec::new();
    for (user, seq) in &sequences {
        if seq.len() < MIN_EVENTS {
            tracing::info!(%user, events = seq.len(), "user excluded: too few events");
            exclusions.push(Exclusion {
                user: user.clone(),
                proportion: None,
                reason: format!("{} events, need {MIN_EVENTS}", seq.len()),
            });
        } else {
            eligible.push(seq);
        }
    }
    if eligible.is_empty() {
        return Err(SsteError::InsufficientHistory {
            needed: MIN_EVENTS,
            got: sequences
                .values()
                .map(EventSequence::len)
                .max()
                .unwrap_or(0),
        });
    }
    let ctx = LocationContext::new(
        inputs.checkins,
        inputs.graph,
        inputs.map,
        cfg.alpha,
        cfg.half_life,
    )?;
    let mut proportions = cfg.train_proportions.clone();
    if !proportions.contains(&cfg.trace_proportion) {
        proportions.push(cfg.trace_proportion);
    }

    let results: Vec<(UserId, Vec<(f64, UserOutcome)>)> = eligible
        .par_iter()
        .map(|seq| {
            let per: Vec<_> = proportions
                .iter()
                .map(|&p| (p, evaluate_user(inputs, &ctx, seq, p, cfg)))
                .collect();
            (seq.user.clone(), per)
        })
        .collect();

    let mut traces = BTreeMap::new();
    let mut cells: BTreeMap<u64, Vec<UserCell>> = BTreeMap::new();
    for (user, per) in results {
        for (p, outcome) in per {
            match outcome {
                Ok((cell, trace)) => {
                    if let Some(t) = trace {
                        traces.insert(user.clone(), t);
                    }
                    cells.entry(p.to_bits()).or_default().push(cell);
                }
                Err(e) => {
                    tracing::info!(%user, proportion = p, error = %e, "user excluded at proportion");
                    exclusions.push(Exclusion {
                        user: user.clone(),
                        proportion: Some(p),
                        reason: e.to_string(),
                    });
                }
            }
        }
    }

    let mut mse = Vec::new();
    let mut accuracy = Vec::new();
    for &p in &cfg.train_proportions {
        let cs = cells.get(&p.to_bits()).map(Vec::as_slice).unwrap_or(&[]);
        let per_user: Vec<(f64, f64, usize)> = cs.iter().filter_map(|c| c.mse).collect();
        let kf: Vec<f64> = per_user.iter().map(|m| m.0).collect();
        let fr: Vec<f64> = per_user.iter().map(|m| m.1).collect();
        let (mse_kf, mse_frozen) = if per_user.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (mean(&kf), mean(&fr))
        };
        mse.push(MseRow {
            proportion: p,
            mse_kf,
            mse_frozen,
            mse_kf_hours2: mse_kf / 3600f64.powi(2),
            mse_frozen_hours2: mse_frozen / 3600f64.powi(2),
            n_users: per_user.len(),
            n_steps: per_user.iter().map(|m| m.2).sum(),
        });
        let n_predictions: usize = cs.iter().map(|c| c.n_predictions).sum();
        let abstentions: usize = cs.iter().map(|c| c.abstentions).sum();
        for (xi_i, &xi) in cfg.xi_values.iter().enumerate() {
            for (n_i, &top_n) in cfg.top_n_values.iter().enumerate() {
                let hits: usize = cs.iter().map(|c| c.hits[xi_i][n_i]).sum();
                accuracy.push(AccuracyRow {
                    proportion: p,
                    xi,
                    top_n,
                    accuracy: if n_predictions > 0 {
                        hits as f64 / n_predictions as f64
                    } else {
                        0.0
                    },
                    n_predictions,
                    abstentions,
                });
            }
        }
    }
    Ok(EvalReport {
        n_users: sequences.len(),
        n_eligible: eligible.len(),
        mse,
        accuracy,
        traces,
        exclusions,
    })
}

/// Forecasts the time and region of a user's next event from the whole
/// history: batch fit, filter through every known interval, then rank the
/// candidate regions at the predicted time.
pub fn predict_next(
    ctx: &LocationContext,
    seq: &EventSequence,
    cfg: &ExperimentConfig,
    xi: f64,
    top_n: usize,
) -> Result<LocationPrediction> {
    if seq.len() < MIN_EVENTS {
        return Err(SsteError::InsufficientHistory {
            needed: MIN_EVENTS,
            got: seq.len(),
        });
    }
    let values = intervals(&seq.events);
    let model = fit_interval_model(&values, cfg.p_max, cfg.q_max)?;
    let (&newest, warmup) = values.split_last().expect("at least three intervals");
    let mut kf = KalmanState::init(&model, warmup, &cfg.kalman)?;
    let last = seq.events.last().expect("non-empty").time;
    let tp = kf.predict_time(last, newest)?;
    let scores =
        ctx.score_candidates(&seq.user, &seq.events, tp.event_time_hat, tp.event_time_hat)?;
    Ok(LocationPrediction {
        user: seq.user.clone(),
        interval_hat: tp.interval_hat,
        clamped: tp.clamped,
        tau_hat: tp.event_time_hat,
        predictions: rank(&scores, xi, top_n)?,
    })
}

/// [`predict_next`] for every user with events. Users without enough
/// history or without candidate regions are returned separately.
pub fn predict_all(
    ctx: &LocationContext,
    events: &[Sste],
    cfg: &ExperimentConfig,
    xi: f64,
    top_n: usize,
) -> Result<(Vec<LocationPrediction>, Skipped)> {
    let sequences = event_sequences(events);
    let results: Vec<_> = sequences
        .par_iter()
        .map(|(user, seq)| (user, predict_next(ctx, seq, cfg, xi, top_n)))
        .collect();
    let mut predictions = Vec::new();
    let mut skipped = Vec::new();
    for (user, r) in results {
        match r {
            Ok(p) => predictions.push(p),
            Err(e @ (SsteError::InsufficientHistory { .. } | SsteError::NoCandidates { .. })) => {
                skipped.push((user.clone(), e))
            }
            Err(e) => return Err(e),
        }
    }
    Ok((predictions, skipped))
}

/// One JSON object per line.
pub fn predictions_to_jsonl(predictions: &[LocationPrediction]) -> Result<String> {
    let mut out = String::new();
    for p in predictions {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

impl EvalReport {
    pub fn accuracy_at(&self, proportion: f64, xi: f64, top_n: usize) -> Option<f64> {
        self.accuracy
            .iter()
            .find(|r| r.proportion == proportion && r.xi == xi && r.top_n == top_n)
            .map(|r| r.accuracy)
    }

    pub fn mse_csv(&self) -> String {
        let mut out = String::from(
            "proportion,mse_kf,mse_frozen,mse_kf_hours2,mse_frozen_hours2,n_users,n_steps\n",
        );
        for r in &self.mse {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.proportion,
                r.mse_kf,
                r.mse_frozen,
                r.mse_kf_hours2,
                r.mse_frozen_hours2,
                r.n_users,
                r.n_steps
            ));
        }
        out
    }

    pub fn accuracy_csv(&self) -> String {
        let mut out = String::from("proportion,xi,top_n,accuracy,n_predictions,abstentions\n");
        for r in &self.accuracy {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.proportion, r.xi, r.top_n, r.accuracy, r.n_predictions, r.abstentions
            ));
        }
        out
    }

    pub fn trace_csv(trace: &[TraceStep]) -> String {
        let mut out = String::from("step,sq_err_kf,sq_err_frozen\n");
        for s in trace {
            out.push_str(&format!("{},{},{}\n", s.step, s.sq_err_kf, s.sq_err_frozen));
        }
        out
    }

    /// Writes `report.json`, `mse_by_proportion.csv`, `accuracy_by_xi_n.csv`
    /// and one `convergence_<user>.csv` per traced user.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|source| SsteError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_file(
            &dir.join("report.json"),
            &(serde_json::to_string_pretty(self)? + "\n"),
        )?;
        write_file(&dir.join("mse_by_proportion.csv"), &self.mse_csv())?;
        write_file(&dir.join("accuracy_by_xi_n.csv"), &self.accuracy_csv())?;
        for (user, trace) in &self.traces {
            write_file(
                &dir.join(format!("convergence_{user}.csv")),
                &Self::trace_csv(trace),
            )?;
        }
        Ok(())
    }
}
