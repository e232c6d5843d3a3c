//! C ABI over the railsim network, checkpoint and forecasting primitives.
//!
//! Every handle is opaque and owned by the caller once returned; release it with the matching
//! `*_free` function. Functions return a [`RailsimStatus`]; on failure the message is kept per
//! thread and can be copied out with [`railsim_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use railsim::checkpoint::{load_checkpoint, Checkpoint};
use railsim::data::{ingest_csv, snapshots_at, OperationalLog};
use railsim::experiment::embedded_desk_network;
use railsim::forecast::{forecast_with_policy, point_forecast, ForecastConfig, ForecastEnsemble};
use railsim::network::{RailNetwork, EMBEDDING_DIM};
use railsim::rollout::{Environment, Sampling};
use railsim::schedule::Timetable;
use railsim::training::drift_weight;
use railsim::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RailsimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Data = 4,
    Checkpoint = 5,
    Dimension = 6,
    OutOfRange = 7,
    Panic = 8,
}

/// Rail network with spectral coordinates.
pub struct RailsimNetwork(RailNetwork);

/// Trained policy with its normalization statistics.
pub struct RailsimPolicy(Checkpoint);

/// Operational log.
pub struct RailsimLog(OperationalLog);

/// Completed forecast ensemble.
pub struct RailsimForecast {
    ensemble: ForecastEnsemble,
    cells: Vec<(usize, usize)>,
}

/// One forecast (train, station) cell.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RailsimForecastCell {
    /// Index of the train within the forecast.
    pub train_index: u32,
    /// 1-based itinerary index of the station.
    pub station_index: u32,
    pub scheduled: i64,
    /// Median predicted delay in seconds.
    pub median_delay: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> RailsimStatus {
    match e {
        Error::Io { .. } | Error::MissingInput(_) => RailsimStatus::Io,
        Error::CorruptCheckpoint(_) | Error::LayoutVersion { .. } => RailsimStatus::Checkpoint,
        Error::Dimension { .. } => RailsimStatus::Dimension,
        Error::Data(_) | Error::Csv(_) => RailsimStatus::Data,
        _ => RailsimStatus::InvalidArgument,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (RailsimStatus, String)>) -> RailsimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            RailsimStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RailsimStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (RailsimStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (RailsimStatus, String) {
    (RailsimStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, (RailsimStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (RailsimStatus::InvalidArgument, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, (RailsimStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), (RailsimStatus, String)> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Copies the calling thread's last error message into `buf` (NUL-terminated, truncated to
/// `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn railsim_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Drift weight `1 / (1 + alpha * psi^beta)`.
#[no_mangle]
pub extern "C" fn railsim_drift_weight(psi: u32, alpha: f64, beta: f64) -> f64 {
    drift_weight(psi as usize, alpha, beta)
}

/// Builds the 30-station desk network with its embedding.
///
/// # Safety
/// `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn railsim_network_desk(out: *mut *mut RailsimNetwork) -> RailsimStatus {
    guard(|| put(out, RailsimNetwork(embedded_desk_network().map_err(lib_err)?)))
}

/// Loads a network description file and computes its embedding.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn railsim_network_load(path: *const c_char, out: *mut *mut RailsimNetwork) -> RailsimStatus {
    guard(|| {
        let mut net = RailNetwork::load(path_arg(path)?).map_err(lib_err)?;
        net.spectral_embedding(EMBEDDING_DIM).map_err(lib_err)?;
        put(out, RailsimNetwork(net))
    })
}

/// # Safety
/// `net` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn railsim_network_free(net: *mut RailsimNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// Number of stations, or 0 for a null handle.
///
/// # Safety
/// `net` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_network_station_count(net: *const RailsimNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.len())
}

/// Writes the 8 embedding coordinates of station `index` to `out`.
///
/// # Safety
/// `net` must be a live handle; `out` must be valid for 8 doubles.
#[no_mangle]
pub unsafe extern "C" fn railsim_network_embedding(
    net: *const RailsimNetwork,
    index: usize,
    out: *mut f64,
) -> RailsimStatus {
    guard(|| {
        let net = handle(net, "network")?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let row = net
            .0
            .station_embedding(index)
            .ok_or((RailsimStatus::OutOfRange, format!("station {index} out of range")))?;
        ptr::copy_nonoverlapping(row.as_ptr(), out, EMBEDDING_DIM);
        Ok(())
    })
}

/// Loads a policy checkpoint.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn railsim_policy_load(path: *const c_char, out: *mut *mut RailsimPolicy) -> RailsimStatus {
    guard(|| put(out, RailsimPolicy(load_checkpoint(path_arg(path)?).map_err(lib_err)?)))
}

/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_policy_free(policy: *mut RailsimPolicy) {
    if !policy.is_null() {
        drop(Box::from_raw(policy));
    }
}

/// Input width of the policy, or 0 for a null handle.
///
/// # Safety
/// `policy` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_policy_input_dim(policy: *const RailsimPolicy) -> usize {
    policy.as_ref().map_or(0, |p| p.0.policy.input_dim())
}

/// Writes the policy's raw outputs for one feature vector: 3 action probabilities for an
/// action head, or the delay increments of a regression head. `out_len` receives the count.
///
/// # Safety
/// `features` must hold `len` doubles; `out` must hold `cap` doubles; `out_len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn railsim_policy_evaluate(
    policy: *const RailsimPolicy,
    features: *const f64,
    len: usize,
    out: *mut f64,
    cap: usize,
    out_len: *mut usize,
) -> RailsimStatus {
    guard(|| {
        let p = &handle(policy, "policy")?.0.policy;
        if features.is_null() || out.is_null() || out_len.is_null() {
            return Err(null("buffer"));
        }
        let x = std::slice::from_raw_parts(features, len);
        let y = match p.head() {
            railsim::policy::Head::Softmax3 => p.action_probs(x).map_err(lib_err)?.to_vec(),
            railsim::policy::Head::Linear(_) => p.raw_output(x).map_err(lib_err)?,
        };
        *out_len = y.len();
        if y.len() > cap {
            return Err((RailsimStatus::Dimension, format!("need {} output slots", y.len())));
        }
        ptr::copy_nonoverlapping(y.as_ptr(), out, y.len());
        Ok(())
    })
}

/// Loads an operational log CSV; incoherent trains are dropped.
///
/// # Safety
/// `path` must be a NUL-terminated string; `net` a live handle; `out` valid for a pointer write.
#[no_mangle]
pub unsafe extern "C" fn railsim_log_load(
    path: *const c_char,
    net: *const RailsimNetwork,
    out: *mut *mut RailsimLog,
) -> RailsimStatus {
    guard(|| {
        let net = handle(net, "network")?;
        let report = ingest_csv(path_arg(path)?).map_err(lib_err)?;
        put(out, RailsimLog(report.log.with_lines(&net.0)))
    })
}

/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_log_free(log: *mut RailsimLog) {
    if !log.is_null() {
        drop(Box::from_raw(log));
    }
}

/// Number of trains, or 0 for a null handle.
///
/// # Safety
/// `log` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_log_train_count(log: *const RailsimLog) -> usize {
    log.as_ref().map_or(0, |l| l.0.len())
}

/// Monte Carlo forecast from the logged snapshot at `clock`, with copy-forward completion.
///
/// # Safety
/// All handles must be live; `out` must be valid for a pointer write.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn railsim_forecast(
    policy: *const RailsimPolicy,
    net: *const RailsimNetwork,
    log: *const RailsimLog,
    clock: i64,
    n_trajectories: u32,
    horizon: i64,
    stations: u32,
    seed: u64,
    out: *mut *mut RailsimForecast,
) -> RailsimStatus {
    guard(|| {
        let ckpt = &handle(policy, "policy")?.0;
        let net = &handle(net, "network")?.0;
        let log = &handle(log, "log")?.0;
        let timetable = Timetable::from_log(&log.trains);
        let env = Environment {
            network: net,
            norm: &ckpt.stats,
            timetable: &timetable,
        };
        let snapshot = snapshots_at(log, &[clock]).remove(0);
        let cfg = ForecastConfig {
            n_trajectories: n_trajectories as usize,
            horizon,
            stations: stations as usize,
            stall_clamp: false,
            sampling: Sampling::Sample,
        };
        let mut ensemble = forecast_with_policy(&ckpt.policy, &env, &snapshot, &cfg, seed, 0).map_err(lib_err)?;
        ensemble.extract_delays();
        let cells = ensemble
            .trains
            .iter()
            .enumerate()
            .flat_map(|(t, f)| (0..f.delays.len()).map(move |s| (t, s)))
            .collect();
        put(out, RailsimForecast { ensemble, cells })
    })
}

/// # Safety
/// `fc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_forecast_free(fc: *mut RailsimForecast) {
    if !fc.is_null() {
        drop(Box::from_raw(fc));
    }
}

/// Number of (train, station) cells, or 0 for a null handle.
///
/// # Safety
/// `fc` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn railsim_forecast_cell_count(fc: *const RailsimForecast) -> usize {
    fc.as_ref().map_or(0, |f| f.cells.len())
}

/// Reads cell `i`.
///
/// # Safety
/// `fc` must be a live handle; `out` must be valid for a write.
#[no_mangle]
pub unsafe extern "C" fn railsim_forecast_cell(
    fc: *const RailsimForecast,
    i: usize,
    out: *mut RailsimForecastCell,
) -> RailsimStatus {
    guard(|| {
        let fc = handle(fc, "forecast")?;
        if out.is_null() {
            return Err(null("output cell"));
        }
        let &(t, s) = fc
            .cells
            .get(i)
            .ok_or((RailsimStatus::OutOfRange, format!("cell {i} out of range")))?;
        let f = &fc.ensemble.trains[t];
        let samples: Vec<f64> = f.delays[s].iter().map(|&d| d as f64).collect();
        *out = RailsimForecastCell {
            train_index: t as u32,
            station_index: f.station_index(s) as u32,
            scheduled: f.scheduled(s),
            median_delay: point_forecast(&samples).map_err(lib_err)?,
        };
        Ok(())
    })
}

/// Copies the id of train `t` into `buf` (NUL-terminated, truncated to `len`). Returns the full
/// id length in bytes, or 0 when out of range.
///
/// # Safety
/// `fc` must be a live handle; `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn railsim_forecast_train_id(
    fc: *const RailsimForecast,
    t: usize,
    buf: *mut c_char,
    len: usize,
) -> usize {
    let Some(f) = fc.as_ref().and_then(|f| f.ensemble.trains.get(t)) else {
        return 0;
    };
    let id = f.train_id().as_bytes();
    if !buf.is_null() && len > 0 {
        let n = id.len().min(len - 1);
        ptr::copy_nonoverlapping(id.as_ptr(), buf as *mut u8, n);
        *buf.add(n) = 0;
    }
    id.len()
}
