//! C ABI for the epidrift library: opaque handles, integer status codes
//! and a thread-local last-error message.
//!
//! Ownership rules: every `*_new`/`*_run`/`*_simulate` result must be
//! released with the matching `*_free`; accessors borrow and never take
//! ownership. All functions are safe to call from any single thread;
//! handles must not be shared across threads without external locking.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::ptr;

use epidrift::dynamics::{DriverKind, TimeGrid};
use epidrift::ekf::ekf_loglik;
use epidrift::error::Error;
use epidrift::mcmc::{run_pmmh, ChainOutput, PfTarget, PmmhConfig, ProposalCovariance};
use epidrift::model::{constrained_coordinates, ParamSet, PriorSpec, UnconstrainedVector};
use epidrift::observation::ObservationSeries;
use epidrift::pfilter::{run_particle_filter, ResampleScheme};
use epidrift::studies::simulate_truth;

/// Status codes returned by fallible calls.
pub const EPD_OK: i32 = 0;
/// Invalid arguments or configuration.
pub const EPD_ERR_CONFIG: i32 = 2;
/// Numerical failure.
pub const EPD_ERR_NUMERICAL: i32 = 3;
/// Degenerate inference (e.g. the filter collapsed).
pub const EPD_ERR_DEGENERATE: i32 = 4;
/// A required pointer was null.
pub const EPD_ERR_NULL: i32 = 5;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(e: &Error) -> i32 {
    let msg = CString::new(e.to_string()).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(msg));
    e.exit_code()
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

/// Message of the most recent error on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn epd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr())
    })
}

/// A single-group SEIR model with its weekly grid.
pub struct EpdModel {
    params: ParamSet,
    grid: TimeGrid,
}

/// Weekly case counts.
pub struct EpdSeries {
    obs: ObservationSeries,
}

/// PMMH output: constrained draws plus diagnostics.
pub struct EpdChain {
    out: ChainOutput,
    constrained: Vec<Vec<f64>>,
}

/// Create a single-group SEIR model handle with a BM contact-rate driver.
/// `init_fracs` points at (E0, I0, R0). Returns null on invalid input
/// (see `epd_last_error_message`).
///
/// # Safety
/// `init_fracs` must point at three readable doubles.
#[no_mangle]
pub unsafe extern "C" fn epd_model_new_seir(
    latent_rate: f64,
    recovery_rate: f64,
    sigma: f64,
    obs_sd: f64,
    beta0: f64,
    init_fracs: *const f64,
    reporting: f64,
    population: f64,
    n_weeks: usize,
    substeps: usize,
) -> *mut EpdModel {
    clear_error();
    if init_fracs.is_null() {
        set_error(&Error::invalid("init_fracs", "null pointer"));
        return ptr::null_mut();
    }
    let fr = std::slice::from_raw_parts(init_fracs, 3);
    let params = ParamSet {
        latent_rate,
        recovery_rate,
        sigma,
        obs_sd,
        beta0,
        init_fracs: [fr[0], fr[1], fr[2]],
        reporting,
        population,
        group2: None,
    };
    if let Err(e) = params.validate() {
        set_error(&e);
        return ptr::null_mut();
    }
    if n_weeks == 0 {
        set_error(&Error::invalid("n_weeks", "must be >= 1"));
        return ptr::null_mut();
    }
    let grid = TimeGrid::weekly(n_weeks, substeps);
    Box::into_raw(Box::new(EpdModel { params, grid }))
}

/// Release a model handle.
///
/// # Safety
/// `model` must come from `epd_model_new_seir` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn epd_model_free(model: *mut EpdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Simulate weekly observations from the model. Returns null on failure.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_model_simulate(model: *const EpdModel, seed: u64) -> *mut EpdSeries {
    clear_error();
    let Some(m) = model.as_ref() else {
        set_error(&Error::invalid("model", "null pointer"));
        return ptr::null_mut();
    };
    let cfg = sim_config(m, seed);
    match simulate_truth(&cfg) {
        Ok((_, _, obs)) => Box::into_raw(Box::new(EpdSeries { obs })),
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

fn sim_config(m: &EpdModel, seed: u64) -> epidrift::config::RunConfig {
    epidrift::config::RunConfig {
        experiment: "ffi".into(),
        driver: DriverKind::Bm,
        truth_driver: None,
        two_level: None,
        n_weeks: m.grid.n_obs(),
        delta: None,
        substeps: Some(m.grid.substeps),
        n_particles: 1,
        n_iter: 1,
        burnin: None,
        path_thin: 0,
        seed,
        truth: m.params.clone(),
        priors: PriorSpec::all_point_mass(&m.params),
    }
}

/// Build a series handle from raw weekly counts (times in days).
///
/// # Safety
/// `times` and `cases` must point at `len` readable doubles each.
#[no_mangle]
pub unsafe extern "C" fn epd_series_new(
    times: *const f64,
    cases: *const f64,
    len: usize,
) -> *mut EpdSeries {
    clear_error();
    if times.is_null() || cases.is_null() {
        set_error(&Error::invalid("series", "null pointer"));
        return ptr::null_mut();
    }
    let times = std::slice::from_raw_parts(times, len).to_vec();
    let values: Vec<Vec<f64>> =
        std::slice::from_raw_parts(cases, len).iter().map(|&y| vec![y]).collect();
    let obs = ObservationSeries { times, values, reporting_applied: true };
    if let Err(e) = obs.validate() {
        set_error(&e);
        return ptr::null_mut();
    }
    Box::into_raw(Box::new(EpdSeries { obs }))
}

/// Number of observations in a series.
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_series_len(series: *const EpdSeries) -> usize {
    series.as_ref().map_or(0, |s| s.obs.n_obs())
}

/// Observation time in days at index `i` (NaN when out of range).
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_series_time(series: *const EpdSeries, i: usize) -> f64 {
    series
        .as_ref()
        .and_then(|s| s.obs.times.get(i).copied())
        .unwrap_or(f64::NAN)
}

/// Case count at index `i` (NaN when out of range).
///
/// # Safety
/// `series` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_series_value(series: *const EpdSeries, i: usize) -> f64 {
    series
        .as_ref()
        .and_then(|s| s.obs.values.get(i).map(|v| v[0]))
        .unwrap_or(f64::NAN)
}

/// Release a series handle.
///
/// # Safety
/// `series` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn epd_series_free(series: *mut EpdSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Particle-filter log-likelihood of the series under the model.
///
/// # Safety
/// All handles must be live; `out_loglik` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epd_loglik_pf(
    model: *const EpdModel,
    series: *const EpdSeries,
    n_particles: usize,
    seed: u64,
    out_loglik: *mut f64,
) -> i32 {
    clear_error();
    let (Some(m), Some(s)) = (model.as_ref(), series.as_ref()) else {
        return EPD_ERR_NULL;
    };
    if out_loglik.is_null() {
        return EPD_ERR_NULL;
    }
    match run_particle_filter(&m.params, DriverKind::Bm, &s.obs, n_particles, &m.grid, seed) {
        Ok(r) => {
            *out_loglik = r.loglik();
            EPD_OK
        }
        Err(e) => set_error(&e),
    }
}

/// EKF log-likelihood of the series under the model.
///
/// # Safety
/// All handles must be live; `out_loglik` must be writable.
#[no_mangle]
pub unsafe extern "C" fn epd_loglik_ekf(
    model: *const EpdModel,
    series: *const EpdSeries,
    out_loglik: *mut f64,
) -> i32 {
    clear_error();
    let (Some(m), Some(s)) = (model.as_ref(), series.as_ref()) else {
        return EPD_ERR_NULL;
    };
    if out_loglik.is_null() {
        return EPD_ERR_NULL;
    }
    match ekf_loglik(&m.params, DriverKind::Bm, &m.grid, &s.obs) {
        Ok(r) => {
            *out_loglik = r.loglik;
            EPD_OK
        }
        Err(e) => set_error(&e),
    }
}

/// Run adaptive PMMH under the informative SEIR priors, starting from the
/// model's parameters. Returns null on failure.
///
/// # Safety
/// All handles must be live.
#[no_mangle]
pub unsafe extern "C" fn epd_pmmh_run(
    model: *const EpdModel,
    series: *const EpdSeries,
    n_particles: usize,
    n_iter: usize,
    seed: u64,
) -> *mut EpdChain {
    clear_error();
    let (Some(m), Some(s)) = (model.as_ref(), series.as_ref()) else {
        set_error(&Error::invalid("handle", "null pointer"));
        return ptr::null_mut();
    };
    let spec = PriorSpec::informative_seir(m.params.reporting, m.params.population);
    let target = PfTarget {
        spec: &spec,
        driver: DriverKind::Bm,
        grid: &m.grid,
        data: &s.obs,
        n_particles,
        resample: ResampleScheme::Systematic,
    };
    let mut cfg = PmmhConfig::new(n_iter, seed);
    cfg.path_thin = 0;
    let run = run_pmmh(
        &target,
        &spec,
        &m.params,
        &ProposalCovariance::identity(spec.dim()),
        &cfg,
    );
    match run {
        Ok(out) => {
            let constrained: Result<Vec<Vec<f64>>, Error> = out
                .draws
                .iter()
                .map(|d| constrained_coordinates(&UnconstrainedVector(d.clone()), &spec))
                .collect();
            match constrained {
                Ok(constrained) => Box::into_raw(Box::new(EpdChain { out, constrained })),
                Err(e) => {
                    set_error(&e);
                    ptr::null_mut()
                }
            }
        }
        Err(e) => {
            set_error(&e);
            ptr::null_mut()
        }
    }
}

/// Number of stored iterations.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_chain_len(chain: *const EpdChain) -> usize {
    chain.as_ref().map_or(0, |c| c.constrained.len())
}

/// Number of sampled coordinates.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_chain_dim(chain: *const EpdChain) -> usize {
    chain.as_ref().map_or(0, |c| c.constrained.first().map_or(0, Vec::len))
}

/// Constrained value of coordinate `coord` at iteration `iter` (NaN when
/// out of range).
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_chain_draw(
    chain: *const EpdChain,
    iter: usize,
    coord: usize,
) -> f64 {
    chain
        .as_ref()
        .and_then(|c| c.constrained.get(iter))
        .and_then(|r| r.get(coord).copied())
        .unwrap_or(f64::NAN)
}

/// Post-burn-in acceptance rate.
///
/// # Safety
/// `chain` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn epd_chain_acc_rate(chain: *const EpdChain) -> f64 {
    chain.as_ref().map_or(f64::NAN, |c| c.out.acc_rate_post())
}

/// Release a chain handle.
///
/// # Safety
/// `chain` must come from `epd_pmmh_run` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn epd_chain_free(chain: *mut EpdChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}
