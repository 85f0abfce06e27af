//! C ABI for the sls sampler, monitor and pilot.
//!
//! Objects are opaque handles created by `*_new`/`*_build` and released by
//! the matching `*_free`. Every fallible call returns an [`SlsStatus`]; on
//! failure [`sls_last_error_message`] describes the error of the calling
//! thread. Panics are caught at the boundary and reported as
//! `SLS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use sls::estimation::block_ls;
use sls::monitor::{Monitor, MonitorStep};
use sls::pilot::{build_pilot_with, PilotOptions};
use sls::sampler::EventKind;
use sls::special::{chi2_quantile, normal_quantile};
use sls::timeseries::{ArSimulator, Sample};
use sls::{
    ArProcessSpec, BlockEstimate, Innovation, PilotModel, Sampler, SamplerConfig, SlsError,
    StartRule, VarianceConvention,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlsStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Abort = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlsStartRule {
    Leverage = 0,
    Uniform = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlsEventKind {
    /// The lag window is still filling; no leverage was computed.
    Warming = 0,
    None = 1,
    BlockStarted = 2,
    BlockCompleted = 3,
    SafeguardAbort = 4,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlsSamplerConfig {
    pub threshold_c: f64,
    pub seed: u64,
    /// 0 selects the library default.
    pub max_block_len: usize,
    /// Values <= 0 select 1.
    pub leverage_scale: f64,
}

/// Outcome of one sampler step. Block fields are set for
/// `SLS_EVENT_KIND_BLOCK_COMPLETED` (and `block_start` for started/abort).
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlsEvent {
    pub kind: SlsEventKind,
    pub index: u64,
    pub leverage: f64,
    pub block_start: u64,
    pub block_stop: u64,
    pub block_len: usize,
    pub acc_info: f64,
    pub sigma_hat_sq: f64,
    pub rank: usize,
    pub degenerate: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlsMonitorStep {
    /// False while the lag window is warming up.
    pub active: bool,
    pub index: u64,
    pub leverage: f64,
    pub has_verdict: bool,
    pub aborted: bool,
    pub start: u64,
    pub stop: u64,
    pub chi2: f64,
    pub threshold: f64,
    pub alarm: bool,
    pub degenerate: bool,
    pub acc_info: f64,
}

pub struct SlsPilot {
    inner: Arc<PilotModel>,
}

pub struct SlsSampler {
    inner: Sampler,
    last_beta: Vec<f64>,
}

pub struct SlsMonitor {
    inner: Monitor,
    last_beta: Vec<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &SlsError) -> SlsStatus {
    match err.exit_code() {
        2 => SlsStatus::Config,
        4 => SlsStatus::Abort,
        _ => SlsStatus::Data,
    }
}

/// Runs `f`, mapping errors and panics to a status and the thread's last
/// error message.
fn guard(f: impl FnOnce() -> Result<(), SlsStatus>) -> SlsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SlsStatus::Ok,
        Ok(Err(s)) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            SlsStatus::Panic
        }
    }
}

fn lib<T>(r: sls::Result<T>) -> Result<T, SlsStatus> {
    r.map_err(|e| {
        set_error(e.to_string());
        status_of(&e)
    })
}

fn null() -> SlsStatus {
    set_error("null pointer argument".into());
    SlsStatus::NullPointer
}

unsafe fn slice<'a>(data: *const f64, len: usize) -> Result<&'a [f64], SlsStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn slice_mut<'a>(data: *mut f64, len: usize) -> Result<&'a mut [f64], SlsStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if data.is_null() {
        return Err(null());
    }
    Ok(std::slice::from_raw_parts_mut(data, len))
}

unsafe fn out_ref<'a, T>(p: *mut T) -> Result<&'a mut T, SlsStatus> {
    p.as_mut().ok_or_else(null)
}

fn sampler_config(cfg: &SlsSamplerConfig) -> SamplerConfig {
    let mut c = SamplerConfig::new(cfg.threshold_c, cfg.seed);
    if cfg.max_block_len > 0 {
        c = c.with_max_block_len(cfg.max_block_len);
    }
    if cfg.leverage_scale > 0.0 {
        c = c.with_leverage_scale(cfg.leverage_scale);
    }
    c
}

fn copy_beta(
    beta: &[f64],
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> Result<(), SlsStatus> {
    if let Some(l) = unsafe { len_out.as_mut() } {
        *l = beta.len();
    }
    if cap < beta.len() {
        set_error(format!("buffer holds {cap} values, need {}", beta.len()));
        return Err(SlsStatus::Config);
    }
    unsafe { slice_mut(out, beta.len()) }?.copy_from_slice(beta);
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sls_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sls_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Fits a pilot on `n` samples. `order` 0 selects the order by BIC up to
/// `p_max`.
///
/// # Safety
/// `data` must point to `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_build(
    data: *const f64,
    n: usize,
    p_max: usize,
    order: usize,
    out: *mut *mut SlsPilot,
) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        let xs = slice(data, n)?;
        let opts = if order == 0 {
            PilotOptions::bic(p_max)
        } else {
            PilotOptions::fixed(order)
        };
        let model = lib(build_pilot_with(xs, &opts))?;
        *out = Box::into_raw(Box::new(SlsPilot {
            inner: Arc::new(model),
        }));
        Ok(())
    })
}

/// Parses a pilot from the JSON produced by [`sls_pilot_to_json`].
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_from_json(
    json: *const c_char,
    out: *mut *mut SlsPilot,
) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        if json.is_null() {
            return Err(null());
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| {
            set_error(format!("pilot json is not UTF-8: {e}"));
            SlsStatus::Data
        })?;
        let model: PilotModel = serde_json::from_str(text).map_err(|e| {
            set_error(format!("bad pilot json: {e}"));
            SlsStatus::Config
        })?;
        *out = Box::into_raw(Box::new(SlsPilot {
            inner: Arc::new(model),
        }));
        Ok(())
    })
}

/// Serializes a pilot; release the result with [`sls_string_free`].
///
/// # Safety
/// `pilot` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_to_json(
    pilot: *const SlsPilot,
    out: *mut *mut c_char,
) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        let pilot = pilot.as_ref().ok_or_else(null)?;
        let text = serde_json::to_string(&*pilot.inner).map_err(|e| {
            set_error(e.to_string());
            SlsStatus::Data
        })?;
        *out = CString::new(text).unwrap_or_default().into_raw();
        Ok(())
    })
}

/// Order of the pilot model, or 0 for NULL.
///
/// # Safety
/// `pilot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_order(pilot: *const SlsPilot) -> usize {
    pilot.as_ref().map_or(0, |p| p.inner.order())
}

/// Baseline noise variance, or NaN for NULL.
///
/// # Safety
/// `pilot` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_sigma0_sq(pilot: *const SlsPilot) -> f64 {
    pilot.as_ref().map_or(f64::NAN, |p| p.inner.sigma0_sq())
}

/// Copies `β̂₀` into `out` (capacity `cap`).
///
/// # Safety
/// `pilot` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_beta0(
    pilot: *const SlsPilot,
    out: *mut f64,
    cap: usize,
) -> SlsStatus {
    guard(|| {
        let pilot = pilot.as_ref().ok_or_else(null)?;
        let beta: Vec<f64> = pilot.inner.beta0().iter().copied().collect();
        copy_beta(&beta, out, cap, ptr::null_mut())
    })
}

/// # Safety
/// `pilot` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sls_pilot_free(pilot: *mut SlsPilot) {
    if !pilot.is_null() {
        drop(Box::from_raw(pilot));
    }
}

/// Creates a sampler. `q` is the uniform start probability; a negative `q`
/// matches the pilot's mean capped leverage. The pilot handle may be freed
/// afterwards.
///
/// # Safety
/// `pilot` and `cfg` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_new(
    pilot: *const SlsPilot,
    cfg: *const SlsSamplerConfig,
    rule: SlsStartRule,
    q: f64,
    out: *mut *mut SlsSampler,
) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        let pilot = pilot.as_ref().ok_or_else(null)?;
        let cfg = cfg.as_ref().ok_or_else(null)?;
        let rule = match rule {
            SlsStartRule::Leverage => StartRule::Leverage,
            SlsStartRule::Uniform if q < 0.0 => StartRule::matched_uniform(&pilot.inner),
            SlsStartRule::Uniform => StartRule::Uniform { q },
        };
        let inner = lib(Sampler::new(pilot.inner.clone(), sampler_config(cfg), rule))?;
        *out = Box::into_raw(Box::new(SlsSampler {
            inner,
            last_beta: Vec::new(),
        }));
        Ok(())
    })
}

/// Feeds a pilot-history sample into the lag window.
///
/// # Safety
/// `sampler` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_prime(
    sampler: *mut SlsSampler,
    index: u64,
    value: f64,
) -> SlsStatus {
    guard(|| {
        let s = sampler.as_mut().ok_or_else(null)?;
        lib(s.inner.prime(Sample::new(index, value)))
    })
}

fn empty_event(index: u64) -> SlsEvent {
    SlsEvent {
        kind: SlsEventKind::Warming,
        index,
        leverage: 0.0,
        block_start: 0,
        block_stop: 0,
        block_len: 0,
        acc_info: 0.0,
        sigma_hat_sq: 0.0,
        rank: 0,
        degenerate: false,
    }
}

fn fill_estimate(ev: &mut SlsEvent, est: &BlockEstimate) {
    ev.sigma_hat_sq = est.sigma_hat_sq;
    ev.rank = est.rank;
    ev.degenerate = est.degenerate;
}

/// Processes one live sample. On block completion the block is fitted and
/// its coefficients are available from [`sls_sampler_block_beta`].
///
/// # Safety
/// `sampler` must be a live handle; `event` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_step(
    sampler: *mut SlsSampler,
    index: u64,
    value: f64,
    event: *mut SlsEvent,
) -> SlsStatus {
    guard(|| {
        let s = sampler.as_mut().ok_or_else(null)?;
        let event = out_ref(event)?;
        let mut ev = empty_event(index);
        if let Some(e) = lib(s.inner.step(Sample::new(index, value)))? {
            ev.leverage = e.leverage;
            match e.kind {
                EventKind::None => ev.kind = SlsEventKind::None,
                EventKind::BlockStarted { start } => {
                    ev.kind = SlsEventKind::BlockStarted;
                    ev.block_start = start;
                }
                EventKind::BlockCompleted(block) => {
                    let est = block_ls(&block, VarianceConvention::default());
                    ev.kind = SlsEventKind::BlockCompleted;
                    ev.block_start = block.start;
                    ev.block_stop = block.stop;
                    ev.block_len = block.len();
                    ev.acc_info = block.acc_info;
                    fill_estimate(&mut ev, &est);
                    s.last_beta = est.beta_hat.iter().copied().collect();
                }
                EventKind::SafeguardAbort { start, buffered } => {
                    ev.kind = SlsEventKind::SafeguardAbort;
                    ev.block_start = start;
                    ev.block_len = buffered;
                }
            }
        }
        *event = ev;
        Ok(())
    })
}

/// Copies `β̂` of the last completed block. `len_out`, when non-NULL,
/// receives the number of coefficients (0 before any block).
///
/// # Safety
/// `sampler` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_block_beta(
    sampler: *const SlsSampler,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> SlsStatus {
    guard(|| {
        let s = sampler.as_ref().ok_or_else(null)?;
        copy_beta(&s.last_beta, out, cap, len_out)
    })
}

/// Sampler state in bytes, excluding the active block buffer.
///
/// # Safety
/// `sampler` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_resident_bytes(sampler: *const SlsSampler) -> usize {
    sampler.as_ref().map_or(0, |s| s.inner.resident_bytes())
}

/// # Safety
/// `sampler` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sls_sampler_free(sampler: *mut SlsSampler) {
    if !sampler.is_null() {
        drop(Box::from_raw(sampler));
    }
}

/// Creates a leverage-driven monitor alarming at level `alpha`.
///
/// # Safety
/// `pilot` and `cfg` must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_monitor_new(
    pilot: *const SlsPilot,
    cfg: *const SlsSamplerConfig,
    alpha: f64,
    out: *mut *mut SlsMonitor,
) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        let pilot = pilot.as_ref().ok_or_else(null)?;
        let cfg = cfg.as_ref().ok_or_else(null)?;
        let inner = lib(Monitor::new(
            pilot.inner.clone(),
            sampler_config(cfg),
            alpha,
        ))?;
        *out = Box::into_raw(Box::new(SlsMonitor {
            inner,
            last_beta: Vec::new(),
        }));
        Ok(())
    })
}

/// # Safety
/// `monitor` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn sls_monitor_prime(
    monitor: *mut SlsMonitor,
    index: u64,
    value: f64,
) -> SlsStatus {
    guard(|| {
        let m = monitor.as_mut().ok_or_else(null)?;
        lib(m.inner.prime(Sample::new(index, value)))
    })
}

/// # Safety
/// `monitor` must be a live handle; `step` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_monitor_step(
    monitor: *mut SlsMonitor,
    index: u64,
    value: f64,
    step: *mut SlsMonitorStep,
) -> SlsStatus {
    guard(|| {
        let m = monitor.as_mut().ok_or_else(null)?;
        let step = out_ref(step)?;
        let mut out = SlsMonitorStep {
            active: false,
            index,
            leverage: 0.0,
            has_verdict: false,
            aborted: false,
            start: 0,
            stop: 0,
            chi2: 0.0,
            threshold: m.inner.threshold(),
            alarm: false,
            degenerate: false,
            acc_info: 0.0,
        };
        if let Some(MonitorStep {
            leverage,
            verdict,
            aborted,
            ..
        }) = lib(m.inner.step(Sample::new(index, value)))?
        {
            out.active = true;
            out.leverage = leverage;
            out.aborted = aborted;
            if let Some(v) = verdict {
                out.has_verdict = true;
                out.start = v.start;
                out.stop = v.stop;
                out.chi2 = v.chi2;
                out.alarm = v.alarm;
                out.degenerate = v.degenerate;
                out.acc_info = v.acc_info;
                m.last_beta = v.beta_hat;
            }
        }
        *step = out;
        Ok(())
    })
}

/// Copies `β̂` of the last scored block.
///
/// # Safety
/// `monitor` must be a live handle; `out` must hold `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn sls_monitor_block_beta(
    monitor: *const SlsMonitor,
    out: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> SlsStatus {
    guard(|| {
        let m = monitor.as_ref().ok_or_else(null)?;
        copy_beta(&m.last_beta, out, cap, len_out)
    })
}

/// # Safety
/// `monitor` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sls_monitor_free(monitor: *mut SlsMonitor) {
    if !monitor.is_null() {
        drop(Box::from_raw(monitor));
    }
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_chi2_quantile(dof: u32, p: f64, out: *mut f64) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = lib(chi2_quantile(dof, p))?;
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sls_normal_quantile(p: f64, out: *mut f64) -> SlsStatus {
    guard(|| {
        let out = out_ref(out)?;
        *out = lib(normal_quantile(p))?;
        Ok(())
    })
}

/// Simulates `n` values of an AR(p) stream. `df` <= 0 gives Gaussian
/// innovations with standard deviation `sigma`, otherwise Student-t with
/// `df` degrees of freedom rescaled to standard deviation `sigma`.
///
/// # Safety
/// `coeffs` must hold `p` doubles and `out` `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn sls_simulate_ar(
    coeffs: *const f64,
    p: usize,
    sigma: f64,
    df: f64,
    seed: u64,
    out: *mut f64,
    n: usize,
) -> SlsStatus {
    guard(|| {
        let beta = slice(coeffs, p)?.to_vec();
        let out = slice_mut(out, n)?;
        let innovation = if df > 0.0 {
            Innovation::StudentT { df, scale: sigma }
        } else {
            Innovation::Gaussian { sigma }
        };
        let mut sim = lib(ArSimulator::new(&ArProcessSpec::new(
            beta, innovation, seed,
        )))?;
        sim.fill(out);
        Ok(())
    })
}
