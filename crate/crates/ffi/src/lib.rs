//! C ABI over `sste_core`.
//!
//! Objects cross the boundary as opaque handles: each constructor writes a
//! pointer through an out-parameter and each handle type has a matching
//! `sste_*_free`. Every fallible call returns an [`SsteStatus`]; the message
//! of the most recent failure on the calling thread is available from
//! [`sste_last_error_message`]. Strings returned through `char **` are owned
//! by the caller and released with [`sste_string_free`].
//!
//! Panics never unwind into the caller; they are reported as
//! `SSTE_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use sste_core::arma::{fit_batch, ArmaOrders, FittedModel};
use sste_core::detection::{detect_sstes, read_events, write_events, DetectionParams, Sste};
use sste_core::evaluation::{
    fit_interval_model, predict_all, predictions_to_jsonl, ExperimentConfig,
};
use sste_core::geo::LatLon;
use sste_core::ingestion::{
    parse_checkins, parse_friendship, CheckinSequence, FriendshipGraph, UserId,
};
use sste_core::kalman::{IntervalPredictor, KalmanConfig, KalmanSnapshot, KalmanState};
use sste_core::location::{parse_sites, LocationContext, RegionMap};
use sste_core::SsteError;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsteStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    InsufficientHistory = 5,
    Numeric = 6,
    NoCandidates = 7,
    Panic = 99,
}

/// Next-event time forecast.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsteTimePrediction {
    /// Predicted interval in seconds, before the floor is applied.
    pub interval_hat: f64,
    /// Predicted event time in epoch seconds.
    pub event_time_hat: i64,
    /// Whether the interval floor replaced a smaller prediction.
    pub clamped: bool,
}

/// A batch-fitted interval model.
pub struct SsteModel(FittedModel);

/// Kalman-filter state tracking one user's AR coefficients.
pub struct SsteFilter(KalmanState);

/// Check-ins and the friendship graph.
pub struct SsteDataset {
    checkins: CheckinSequence,
    graph: FriendshipGraph,
}

/// Detected events.
pub struct SsteEvents(Vec<Sste>);

/// Region sites for location ranking.
pub struct SsteRegions(RegionMap);

struct Failure {
    status: SsteStatus,
    message: String,
}

impl Failure {
    fn null(name: &str) -> Self {
        Failure {
            status: SsteStatus::NullPointer,
            message: format!("`{name}` is null"),
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Failure {
            status: SsteStatus::InvalidArgument,
            message: message.into(),
        }
    }
}

impl From<SsteError> for Failure {
    fn from(e: SsteError) -> Self {
        let status = match &e {
            SsteError::Io { .. } => SsteStatus::Io,
            SsteError::Parse { .. } | SsteError::Json(_) => SsteStatus::Parse,
            SsteError::InvalidParameter { .. } | SsteError::FutureCheckin { .. } => {
                SsteStatus::InvalidArgument
            }
            SsteError::InsufficientHistory { .. } | SsteError::DegenerateSeries => {
                SsteStatus::InsufficientHistory
            }
            SsteError::UnstableAr { .. } | SsteError::NonFinite => SsteStatus::Numeric,
            SsteError::NoCandidates { .. } => SsteStatus::NoCandidates,
        };
        Failure {
            status,
            message: e.to_string(),
        }
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure {
            status: SsteStatus::Parse,
            message: e.to_string(),
        }
    }
}

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult<()>) -> SsteStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SsteStatus::Ok,
        Ok(Err(failure)) => {
            set_last_error(&failure.message);
            failure.status
        }
        Err(payload) => {
            let what = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            set_last_error(&format!("panic: {what}"));
            SsteStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn get_mut<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| Failure::null(name))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn text<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::invalid(format!("`{name}` is not valid UTF-8")))
}

fn check_out<T>(out: *mut T, name: &str) -> FfiResult<()> {
    if out.is_null() {
        Err(Failure::null(name))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> FfiResult<*mut c_char> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure::invalid("output contains a NUL byte"))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sste_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL if none failed.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sste_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. NULL is ignored.
///
/// # Safety
/// `s` must be NULL or a string returned through a `char **` out-parameter of
/// this library that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn sste_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Selects ARMA orders (up to `p_max`, `q_max`) for an interval series and
/// fits them; short or constant series fall back to AR(1) or the mean.
///
/// # Safety
/// `values` must point to `n` readable doubles (or may be NULL when `n` is 0);
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn sste_model_fit(
    values: *const f64,
    n: usize,
    p_max: usize,
    q_max: usize,
    out: *mut *mut SsteModel,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let values = slice(values, n, "values")?;
        let model = fit_interval_model(values, p_max, q_max)?;
        out.write(Box::into_raw(Box::new(SsteModel(model))));
        Ok(())
    })
}

/// Fits fixed orders `(p, q)` after differencing `d` times.
///
/// # Safety
/// As for [`sste_model_fit`].
#[no_mangle]
pub unsafe extern "C" fn sste_model_fit_orders(
    values: *const f64,
    n: usize,
    p: usize,
    q: usize,
    d: usize,
    out: *mut *mut SsteModel,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let values = slice(values, n, "values")?;
        let model = fit_batch(values, ArmaOrders::new(p, q, d))?;
        out.write(Box::into_raw(Box::new(SsteModel(model))));
        Ok(())
    })
}

/// Writes the model orders. Any of the out-pointers may be NULL.
///
/// # Safety
/// `model` must be a live handle; non-NULL out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn sste_model_orders(
    model: *const SsteModel,
    p: *mut usize,
    q: *mut usize,
    d: *mut usize,
) -> SsteStatus {
    guard(|| {
        let m = &get(model, "model")?.0;
        for (dst, v) in [(p, m.orders.p), (q, m.orders.q), (d, m.orders.d)] {
            if !dst.is_null() {
                dst.write(v);
            }
        }
        Ok(())
    })
}

/// The fitted model as a JSON object (orders, phi, theta, sigma2, mean).
///
/// # Safety
/// `model` must be a live handle and `out` writable. Free the string with
/// [`sste_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sste_model_to_json(
    model: *const SsteModel,
    out: *mut *mut c_char,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let m = &get(model, "model")?.0;
        out.write(into_c_string(serde_json::to_string(m)?)?);
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sste_model_free(model: *mut SsteModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Starts a filter from a fitted model. `warmup` holds the intervals the
/// model was fitted on (at least `p + d` of them); `process_noise` is the
/// `delta` in `Q = delta*I` and `interval_floor` the smallest interval used
/// for event times.
///
/// # Safety
/// `model` must be a live handle, `warmup` must point to `n` doubles, and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_new(
    model: *const SsteModel,
    warmup: *const f64,
    n: usize,
    process_noise: f64,
    interval_floor: f64,
    out: *mut *mut SsteFilter,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let m = &get(model, "model")?.0;
        let warmup = slice(warmup, n, "warmup")?;
        let config = KalmanConfig {
            process_noise,
            interval_floor,
        };
        config.validate()?;
        let state = KalmanState::init(m, warmup, &config)?;
        out.write(Box::into_raw(Box::new(SsteFilter(state))));
        Ok(())
    })
}

/// Absorbs an observed interval and updates the AR coefficients. On failure
/// the state is unchanged.
///
/// # Safety
/// `filter` must be a live handle not used concurrently from another thread.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_learn(filter: *mut SsteFilter, x: f64) -> SsteStatus {
    guard(|| {
        let f = &mut get_mut(filter, "filter")?.0;
        if !x.is_finite() {
            return Err(Failure::invalid("observation must be finite"));
        }
        f.learn_by_kf(x)?;
        Ok(())
    })
}

/// One-step interval forecast from the current state.
///
/// # Safety
/// `filter` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_predict_interval(
    filter: *const SsteFilter,
    out: *mut f64,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let f = &get(filter, "filter")?.0;
        out.write(f.predict_interval());
        Ok(())
    })
}

/// Absorbs `x_new`, the interval that ended at `last_event_time`, and
/// forecasts the next event time.
///
/// # Safety
/// `filter` must be a live handle not used concurrently; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_predict_time(
    filter: *mut SsteFilter,
    last_event_time: i64,
    x_new: f64,
    out: *mut SsteTimePrediction,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let f = &mut get_mut(filter, "filter")?.0;
        if !x_new.is_finite() {
            return Err(Failure::invalid("observation must be finite"));
        }
        let tp = f.predict_time(last_event_time, x_new)?;
        out.write(SsteTimePrediction {
            interval_hat: tp.interval_hat,
            event_time_hat: tp.event_time_hat,
            clamped: tp.clamped,
        });
        Ok(())
    })
}

/// Copies up to `capacity` current AR coefficients into `buf` and writes the
/// total count to `len`. Pass `capacity` 0 to query the count only.
///
/// # Safety
/// `filter` must be a live handle, `buf` must have room for `capacity`
/// doubles (may be NULL when `capacity` is 0), and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_phi(
    filter: *const SsteFilter,
    buf: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> SsteStatus {
    guard(|| {
        check_out(len, "len")?;
        let phi = get(filter, "filter")?.0.phi_hat();
        if capacity > 0 {
            check_out(buf, "buf")?;
            let n = capacity.min(phi.len());
            ptr::copy_nonoverlapping(phi.as_ptr(), buf, n);
        }
        len.write(phi.len());
        Ok(())
    })
}

/// Serialises the state as a JSON snapshot labelled with `user`.
///
/// # Safety
/// `filter` must be a live handle, `user` a NUL-terminated UTF-8 string and
/// `out` writable. Free the string with [`sste_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sste_filter_to_json(
    filter: *const SsteFilter,
    user: *const c_char,
    out: *mut *mut c_char,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let f = &get(filter, "filter")?.0;
        let user = text(user, "user")?;
        let snapshot = f.snapshot(UserId::new(user));
        out.write(into_c_string(serde_json::to_string(&snapshot)?)?);
        Ok(())
    })
}

/// Restores a filter from a snapshot produced by [`sste_filter_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_from_json(
    json: *const c_char,
    out: *mut *mut SsteFilter,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let snapshot: KalmanSnapshot = serde_json::from_str(text(json, "json")?)?;
        let state = KalmanState::from_snapshot(&snapshot)?;
        out.write(Box::into_raw(Box::new(SsteFilter(state))));
        Ok(())
    })
}

/// # Safety
/// `filter` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sste_filter_free(filter: *mut SsteFilter) {
    if !filter.is_null() {
        drop(Box::from_raw(filter));
    }
}

/// Loads `checkins.csv` (`user_id,timestamp,lat,lon`) and `friends.csv`
/// (`user_id_a,user_id_b`).
///
/// # Safety
/// Both paths must be NUL-terminated UTF-8 strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_dataset_load(
    checkins_path: *const c_char,
    friends_path: *const c_char,
    out: *mut *mut SsteDataset,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let checkins = parse_checkins(Path::new(text(checkins_path, "checkins_path")?))?;
        let graph = parse_friendship(Path::new(text(friends_path, "friends_path")?))?;
        out.write(Box::into_raw(Box::new(SsteDataset { checkins, graph })));
        Ok(())
    })
}

/// Number of check-ins in the dataset; 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sste_dataset_checkin_count(dataset: *const SsteDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.checkins.len())
}

/// # Safety
/// `dataset` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sste_dataset_free(dataset: *mut SsteDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Detects events: friends' check-ins within `epsilon_time` seconds and
/// `epsilon_dist` meters of each other, at least `min_participants` people.
///
/// # Safety
/// `dataset` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_detect(
    dataset: *const SsteDataset,
    epsilon_time: i64,
    epsilon_dist: f64,
    min_participants: usize,
    out: *mut *mut SsteEvents,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let ds = get(dataset, "dataset")?;
        let params = DetectionParams {
            epsilon_time,
            epsilon_dist,
            min_participants,
        };
        let events = detect_sstes(&ds.checkins, &ds.graph, &params)?;
        out.write(Box::into_raw(Box::new(SsteEvents(events))));
        Ok(())
    })
}

/// Reads events from a JSONL file written by [`sste_events_write`].
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_events_read(
    path: *const c_char,
    out: *mut *mut SsteEvents,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let events = read_events(Path::new(text(path, "path")?))?;
        out.write(Box::into_raw(Box::new(SsteEvents(events))));
        Ok(())
    })
}

/// Writes events as JSONL.
///
/// # Safety
/// `events` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn sste_events_write(
    events: *const SsteEvents,
    path: *const c_char,
) -> SsteStatus {
    guard(|| {
        let ev = get(events, "events")?;
        write_events(Path::new(text(path, "path")?), &ev.0)?;
        Ok(())
    })
}

/// Number of events; 0 for NULL.
///
/// # Safety
/// `events` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sste_events_len(events: *const SsteEvents) -> usize {
    events.as_ref().map_or(0, |e| e.0.len())
}

/// # Safety
/// `events` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sste_events_free(events: *mut SsteEvents) {
    if !events.is_null() {
        drop(Box::from_raw(events));
    }
}

/// Loads region sites from `sites.csv` (`site_id,lat,lon`).
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_regions_load(
    path: *const c_char,
    out: *mut *mut SsteRegions,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let map = parse_sites(Path::new(text(path, "path")?))?;
        out.write(Box::into_raw(Box::new(SsteRegions(map))));
        Ok(())
    })
}

/// Region of a coordinate: the nearest site, ties to the lowest id.
///
/// # Safety
/// `regions` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sste_regions_assign(
    regions: *const SsteRegions,
    lat: f64,
    lon: f64,
    out: *mut u32,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let map = &get(regions, "regions")?.0;
        let p = LatLon::new(lat, lon);
        if !p.is_valid() {
            return Err(Failure::invalid(format!(
                "invalid coordinate ({lat}, {lon})"
            )));
        }
        out.write(map.assign(&p));
        Ok(())
    })
}

/// # Safety
/// `regions` must be NULL or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sste_regions_free(regions: *mut SsteRegions) {
    if !regions.is_null() {
        drop(Box::from_raw(regions));
    }
}

/// Predicts every user's next event time and top `top_n` regions with blend
/// weight `xi`, using default model, filter and scoring settings. Writes one
/// JSON object per line; users with too little history are left out.
///
/// # Safety
/// All handles must be live and `out` writable. Free the string with
/// [`sste_string_free`].
#[no_mangle]
pub unsafe extern "C" fn sste_predict_jsonl(
    dataset: *const SsteDataset,
    events: *const SsteEvents,
    regions: *const SsteRegions,
    xi: f64,
    top_n: usize,
    out: *mut *mut c_char,
) -> SsteStatus {
    guard(|| {
        check_out(out, "out")?;
        let ds = get(dataset, "dataset")?;
        let ev = get(events, "events")?;
        let map = &get(regions, "regions")?.0;
        let cfg = ExperimentConfig::default();
        let ctx = LocationContext::new(&ds.checkins, &ds.graph, map, cfg.alpha, cfg.half_life)?;
        let (predictions, _) = predict_all(&ctx, &ev.0, &cfg, xi, top_n)?;
        out.write(into_c_string(predictions_to_jsonl(&predictions)?)?);
        Ok(())
    })
}
