//! C ABI over `turbsr`.
//!
//! States cross the boundary as opaque [`TsrFlowState`] handles created by the
//! `tsr_flow_state_*`, `tsr_favre_coarsen` and `tsr_tricubic_upsample`
//! functions and released with [`tsr_flow_state_free`]. Every fallible call
//! returns a [`TsrStatus`]; on failure [`tsr_last_error_message`] describes the
//! error for the calling thread. Channel index 0 is density, 1..=3 the velocity
//! components. Buffers are `nx * ny * nz` doubles, z fastest.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use turbsr::coarsen::{favre_filter, FilterSpec};
use turbsr::field::{compute_stats, ChannelStats, FlowState, GridSpec, ScalarField3D};
use turbsr::io::{read_momentum_state, write_momentum_state};
use turbsr::metrics::{evaluate_pair, nrmse_scalars, ssim3d, MetricReport, SsimConfig};
use turbsr::tricubic::{coef_matrix, flops, upsample_state, FlopsMode};
use turbsr::{Error, ErrorCode};

/// Result of every fallible call. Values 1..=18 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsrStatus {
    Ok = 0,
    InvalidGrid = 1,
    GridMismatch = 2,
    InvalidAxis = 3,
    NonFinite = 4,
    NonPositiveDensity = 5,
    InvalidStats = 6,
    EmptyInput = 7,
    SizeMismatch = 8,
    Io = 9,
    Metadata = 10,
    MissingChannel = 11,
    Manifest = 12,
    InvalidFactor = 13,
    DomainTooSmall = 14,
    OutOfCell = 15,
    ZeroTruth = 16,
    NonCubic = 17,
    InvalidArgument = 18,
    NullPointer = 100,
    Panic = 101,
}

impl From<ErrorCode> for TsrStatus {
    fn from(c: ErrorCode) -> Self {
        match c {
            ErrorCode::Ok => TsrStatus::Ok,
            ErrorCode::InvalidGrid => TsrStatus::InvalidGrid,
            ErrorCode::GridMismatch => TsrStatus::GridMismatch,
            ErrorCode::InvalidAxis => TsrStatus::InvalidAxis,
            ErrorCode::NonFinite => TsrStatus::NonFinite,
            ErrorCode::NonPositiveDensity => TsrStatus::NonPositiveDensity,
            ErrorCode::InvalidStats => TsrStatus::InvalidStats,
            ErrorCode::EmptyInput => TsrStatus::EmptyInput,
            ErrorCode::SizeMismatch => TsrStatus::SizeMismatch,
            ErrorCode::Io => TsrStatus::Io,
            ErrorCode::Metadata => TsrStatus::Metadata,
            ErrorCode::MissingChannel => TsrStatus::MissingChannel,
            ErrorCode::Manifest => TsrStatus::Manifest,
            ErrorCode::InvalidFactor => TsrStatus::InvalidFactor,
            ErrorCode::DomainTooSmall => TsrStatus::DomainTooSmall,
            ErrorCode::OutOfCell => TsrStatus::OutOfCell,
            ErrorCode::ZeroTruth => TsrStatus::ZeroTruth,
            ErrorCode::NonCubic => TsrStatus::NonCubic,
            ErrorCode::InvalidArgument => TsrStatus::InvalidArgument,
        }
    }
}

/// Opaque flow state handle.
pub struct TsrFlowState {
    inner: FlowState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrChannelStats {
    pub rho_mean: f64,
    pub rho_std: f64,
    pub vel_mean: f64,
    pub vel_std: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrSsimConfig {
    pub window: usize,
    pub c1: f64,
    pub c2: f64,
}

/// Scalar metrics of one pair. Subgrid entries are NaN when the coarse grid
/// is too small to evaluate them.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TsrMetricReport {
    pub ssim_rho_u: f64,
    pub ssim_sgs: f64,
    pub nrmse_rho_u: f64,
    pub nrmse_sgs: f64,
    pub nrmse_ek: f64,
    pub nrmse_eps: f64,
    pub ek_true: f64,
    pub ek_pred: f64,
    pub eps_true: f64,
    pub eps_pred: f64,
}

impl From<MetricReport> for TsrMetricReport {
    fn from(r: MetricReport) -> Self {
        Self {
            ssim_rho_u: r.ssim_rho_u,
            ssim_sgs: r.ssim_sgs.unwrap_or(f64::NAN),
            nrmse_rho_u: r.nrmse_rho_u,
            nrmse_sgs: r.nrmse_sgs.unwrap_or(f64::NAN),
            nrmse_ek: r.nrmse_ek,
            nrmse_eps: r.nrmse_eps,
            ek_true: r.ek_true,
            ek_pred: r.ek_pred,
            eps_true: r.eps_true,
            eps_pred: r.eps_pred,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

enum Failure {
    Core(Error),
    Null(&'static str),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TsrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TsrStatus::Ok,
        Ok(Err(Failure::Core(e))) => {
            let status = e.code().into();
            set_last_error(e.to_string());
            status
        }
        Ok(Err(Failure::Null(what))) => {
            set_last_error(format!("null pointer: {what}"));
            TsrStatus::NullPointer
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            TsrStatus::Panic
        }
    }
}

unsafe fn state_ref<'a>(p: *const TsrFlowState, what: &'static str) -> Result<&'a FlowState, Failure> {
    p.as_ref().map(|s| &s.inner).ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn c_str<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidArgument(format!("{what} is not valid UTF-8")).into())
}

unsafe fn put<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

fn boxed(state: FlowState) -> *mut TsrFlowState {
    Box::into_raw(Box::new(TsrFlowState { inner: state }))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tsr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

const ALL_STATUSES: [TsrStatus; 21] = [
    TsrStatus::Ok,
    TsrStatus::InvalidGrid,
    TsrStatus::GridMismatch,
    TsrStatus::InvalidAxis,
    TsrStatus::NonFinite,
    TsrStatus::NonPositiveDensity,
    TsrStatus::InvalidStats,
    TsrStatus::EmptyInput,
    TsrStatus::SizeMismatch,
    TsrStatus::Io,
    TsrStatus::Metadata,
    TsrStatus::MissingChannel,
    TsrStatus::Manifest,
    TsrStatus::InvalidFactor,
    TsrStatus::DomainTooSmall,
    TsrStatus::OutOfCell,
    TsrStatus::ZeroTruth,
    TsrStatus::NonCubic,
    TsrStatus::InvalidArgument,
    TsrStatus::NullPointer,
    TsrStatus::Panic,
];

/// Static name of a status code, e.g. `"E_SIZE_MISMATCH"`; `"E_UNKNOWN"` for
/// values outside [`TsrStatus`].
#[no_mangle]
pub extern "C" fn tsr_status_name(status: i32) -> *const c_char {
    let Some(status) = ALL_STATUSES.iter().find(|&&s| s as i32 == status) else {
        return c"E_UNKNOWN".as_ptr();
    };
    let name: &'static CStr = match status {
        TsrStatus::Ok => c"OK",
        TsrStatus::InvalidGrid => c"E_INVALID_GRID",
        TsrStatus::GridMismatch => c"E_GRID_MISMATCH",
        TsrStatus::InvalidAxis => c"E_INVALID_AXIS",
        TsrStatus::NonFinite => c"E_NON_FINITE",
        TsrStatus::NonPositiveDensity => c"E_NON_POSITIVE_DENSITY",
        TsrStatus::InvalidStats => c"E_INVALID_STATS",
        TsrStatus::EmptyInput => c"E_EMPTY_INPUT",
        TsrStatus::SizeMismatch => c"E_SIZE_MISMATCH",
        TsrStatus::Io => c"E_IO",
        TsrStatus::Metadata => c"E_METADATA",
        TsrStatus::MissingChannel => c"E_MISSING_CHANNEL",
        TsrStatus::Manifest => c"E_MANIFEST",
        TsrStatus::InvalidFactor => c"E_INVALID_FACTOR",
        TsrStatus::DomainTooSmall => c"E_DOMAIN_TOO_SMALL",
        TsrStatus::OutOfCell => c"E_OUT_OF_CELL",
        TsrStatus::ZeroTruth => c"E_ZERO_TRUTH",
        TsrStatus::NonCubic => c"E_NON_CUBIC",
        TsrStatus::InvalidArgument => c"E_INVALID_ARGUMENT",
        TsrStatus::NullPointer => c"E_NULL_POINTER",
        TsrStatus::Panic => c"E_PANIC",
    };
    name.as_ptr()
}

/// Builds a state from four caller-owned buffers (copied).
///
/// # Safety
/// Each buffer must hold `nx * ny * nz` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_create(
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    rho: *const f64,
    u: *const f64,
    v: *const f64,
    w: *const f64,
    out: *mut *mut TsrFlowState,
) -> TsrStatus {
    guard(|| {
        let grid = GridSpec::new(nx, ny, nz, dx)?;
        let n = grid.len();
        let field = |p, what, unit: &str| -> Result<ScalarField3D, Failure> {
            Ok(ScalarField3D::new(grid, slice(p, n, what)?.to_vec(), unit)?)
        };
        let state = FlowState::new(
            field(rho, "rho", "kgm-3")?,
            [field(u, "u", "ms-1")?, field(v, "v", "ms-1")?, field(w, "w", "ms-1")?],
        )?;
        put(out, boxed(state), "out")
    })
}

/// Reads `<VAR>_id<hash>.dat` channel files from `dir`.
///
/// # Safety
/// `dir` and `hash` must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_load(
    dir: *const c_char,
    hash: *const c_char,
    nx: usize,
    ny: usize,
    nz: usize,
    dx: f64,
    out: *mut *mut TsrFlowState,
) -> TsrStatus {
    guard(|| {
        let grid = GridSpec::new(nx, ny, nz, dx)?;
        let state = read_momentum_state(c_str(dir, "dir")?, c_str(hash, "hash")?, grid)?;
        put(out, boxed(state), "out")
    })
}

/// Writes the four channels of `state` into `dir` (created if missing).
///
/// # Safety
/// `state` must be a live handle; `dir` and `hash` NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_save(
    state: *const TsrFlowState,
    dir: *const c_char,
    hash: *const c_char,
) -> TsrStatus {
    guard(|| {
        write_momentum_state(state_ref(state, "state")?, c_str(dir, "dir")?, c_str(hash, "hash")?)?;
        Ok(())
    })
}

/// Releases a handle. NULL is ignored.
///
/// # Safety
/// `state` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_free(state: *mut TsrFlowState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Extents into `dims[0..3]` and spacing into `dx` (either may be NULL).
///
/// # Safety
/// `state` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_dims(
    state: *const TsrFlowState,
    dims: *mut usize,
    dx: *mut f64,
) -> TsrStatus {
    guard(|| {
        let g = state_ref(state, "state")?.grid();
        if !dims.is_null() {
            std::slice::from_raw_parts_mut(dims, 3).copy_from_slice(&g.dims());
        }
        if !dx.is_null() {
            dx.write(g.dx);
        }
        Ok(())
    })
}

/// Copies channel `channel` (0 = density, 1..=3 = velocity) into `buf`.
///
/// # Safety
/// `state` must be a live handle; `buf` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn tsr_flow_state_channel(
    state: *const TsrFlowState,
    channel: u32,
    buf: *mut f64,
    len: usize,
) -> TsrStatus {
    guard(|| {
        let s = state_ref(state, "state")?;
        let values = s
            .channels()
            .get(channel as usize)
            .ok_or_else(|| Error::InvalidArgument(format!("channel {channel} not in 0..=3")))?
            .values();
        if len != values.len() {
            return Err(Error::InvalidArgument(format!("buffer of {len} for {} voxels", values.len())).into());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(values);
        Ok(())
    })
}

/// Favre-filtered coarse state.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_favre_coarsen(
    state: *const TsrFlowState,
    factor: usize,
    out: *mut *mut TsrFlowState,
) -> TsrStatus {
    guard(|| {
        let coarse = favre_filter(state_ref(state, "state")?, FilterSpec::new(factor)?)?;
        put(out, boxed(coarse), "out")
    })
}

/// Tricubic upsampling of every channel by `factor`.
///
/// # Safety
/// `state` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_tricubic_upsample(
    state: *const TsrFlowState,
    factor: usize,
    out: *mut *mut TsrFlowState,
) -> TsrStatus {
    guard(|| {
        let fine = upsample_state(state_ref(state, "state")?, factor)?;
        put(out, boxed(fine), "out")
    })
}

/// Pooled normalization statistics over `n` states.
///
/// # Safety
/// `states` must point to `n` live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_compute_stats(
    states: *const *const TsrFlowState,
    n: usize,
    out: *mut TsrChannelStats,
) -> TsrStatus {
    guard(|| {
        if states.is_null() {
            return Err(Failure::Null("states"));
        }
        let refs = std::slice::from_raw_parts(states, n)
            .iter()
            .map(|&p| state_ref(p, "states[i]"))
            .collect::<Result<Vec<_>, _>>()?;
        let s = compute_stats(refs)?;
        put(
            out,
            TsrChannelStats {
                rho_mean: s.rho_mean,
                rho_std: s.rho_std,
                vel_mean: s.vel_mean,
                vel_std: s.vel_std,
            },
            "out",
        )
    })
}

#[no_mangle]
pub extern "C" fn tsr_ssim_config_default() -> TsrSsimConfig {
    let d = SsimConfig::default();
    TsrSsimConfig {
        window: d.window,
        c1: d.c1,
        c2: d.c2,
    }
}

unsafe fn ssim_config(p: *const TsrSsimConfig) -> SsimConfig {
    p.as_ref().map_or_else(SsimConfig::default, |c| SsimConfig {
        window: c.window,
        c1: c.c1,
        c2: c.c2,
    })
}

/// Full metric report. `stats` NULL normalizes with statistics of `truth`;
/// `ssim` NULL uses the default window and constants.
///
/// # Safety
/// Handles must be live; non-NULL pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_evaluate(
    pred: *const TsrFlowState,
    truth: *const TsrFlowState,
    factor: usize,
    stats: *const TsrChannelStats,
    ssim: *const TsrSsimConfig,
    out: *mut TsrMetricReport,
) -> TsrStatus {
    guard(|| {
        let p = state_ref(pred, "pred")?;
        let t = state_ref(truth, "truth")?;
        let stats = match stats.as_ref() {
            Some(s) => ChannelStats {
                rho_mean: s.rho_mean,
                rho_std: s.rho_std,
                vel_mean: s.vel_mean,
                vel_std: s.vel_std,
            },
            None => compute_stats([t])?,
        };
        let report = evaluate_pair(p, t, FilterSpec::new(factor)?, &stats, &ssim_config(ssim))?;
        put(out, report.into(), "out")
    })
}

/// SSIM of two `nx * ny * nz` buffers.
///
/// # Safety
/// `a` and `b` must hold `nx * ny * nz` doubles; `cfg` may be NULL; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_ssim3d(
    a: *const f64,
    b: *const f64,
    nx: usize,
    ny: usize,
    nz: usize,
    cfg: *const TsrSsimConfig,
    out: *mut f64,
) -> TsrStatus {
    guard(|| {
        let grid = GridSpec::new(nx, ny, nz, 1.0)?;
        let fa = ScalarField3D::new(grid, slice(a, grid.len(), "a")?.to_vec(), "")?;
        let fb = ScalarField3D::new(grid, slice(b, grid.len(), "b")?.to_vec(), "")?;
        put(out, ssim3d(&fa, &fb, &ssim_config(cfg))?, "out")
    })
}

/// `sum (truth - pred)^2 / sum truth^2`, square-rooted when `sqrt` is true.
///
/// # Safety
/// `pred` and `truth` must hold `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsr_nrmse(
    pred: *const f64,
    truth: *const f64,
    len: usize,
    sqrt: bool,
    out: *mut f64,
) -> TsrStatus {
    guard(|| {
        let v = nrmse_scalars(slice(pred, len, "pred")?, slice(truth, len, "truth")?, sqrt)?;
        put(out, v, "out")
    })
}

/// Tricubic reconstruction cost of an `nx * ny * nz` output; 0 for an invalid grid.
#[no_mangle]
pub extern "C" fn tsr_flops(nx: usize, ny: usize, nz: usize, n_channels: usize, dense: bool) -> u64 {
    let mode = if dense { FlopsMode::Dense } else { FlopsMode::Sparse };
    GridSpec::new(nx, ny, nz, 1.0).map_or(0, |g| flops(&g, n_channels, mode))
}

/// Zero entries of the integer tricubic coefficient matrix.
#[no_mangle]
pub extern "C" fn tsr_tricubic_zero_count() -> usize {
    coef_matrix().zero_count()
}
