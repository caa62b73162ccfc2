//! C ABI over `fpscale`.
//!
//! Every function returns an [`FpsStatus`]; results go through out-pointers.
//! On failure, [`fps_last_error`] copies the message for the calling thread.
//! Handles from `*_new`/`*_parse`/`*_preset` are released with the matching
//! `*_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fpscale::blockquant::{quantize_dequantize, ScalingStrategy, Tensor2D};
use fpscale::implications::{self, ComputeBudget};
use fpscale::lawmodels::{self, LawConstants};
use fpscale::{Error, FpFormat};

/// Status codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ParseError = 3,
    NumericError = 4,
    IoError = 5,
    Panic = 6,
}

/// Scale-sharing strategy for [`fps_quantize_dequantize`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FpsStrategy {
    Block = 0,
    Channel = 1,
    Tensor = 2,
}

/// Opaque minifloat format.
pub struct FpsFormat(FpFormat);

/// Opaque set of law constants.
pub struct FpsConstants(LawConstants);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FpsStatus {
    match e {
        Error::Parse { .. } => FpsStatus::ParseError,
        Error::Io(_) => FpsStatus::IoError,
        Error::Underdetermined(_)
        | Error::InsufficientSpan(_)
        | Error::NoCriticalPoint(_)
        | Error::InvalidConstants(_)
        | Error::Numeric(_) => FpsStatus::NumericError,
        _ => FpsStatus::InvalidArgument,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FpsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FpsStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            FpsStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            FpsStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    unsafe { p.as_ref() }.ok_or(Fail::Null(what))
}

unsafe fn write<T>(p: *mut T, v: T, what: &'static str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { p.write(v) };
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| Fail::Lib(Error::InvalidInput(format!("{what} is not UTF-8"))))
}

fn finite(v: f64, what: &str) -> Result<f64, Fail> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Fail::Lib(Error::Numeric(format!("{what} is not finite"))))
    }
}

/// Copies the calling thread's last error message, NUL-terminated and
/// truncated to `len` bytes. Returns the full message length plus one.
///
/// # Safety
/// `buf` must be null or valid for `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn fps_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len() + 1
    })
}

/// Parses a format name such as `E4M3` (case-insensitive).
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_format_parse(name: *const c_char, out: *mut *mut FpsFormat) -> FpsStatus {
    guard(|| {
        let fmt: FpFormat = unsafe { str_arg(name, "name") }?.parse()?;
        unsafe { write(out, Box::into_raw(Box::new(FpsFormat(fmt))), "out") }
    })
}

/// Builds the format with `e` exponent and `m` mantissa bits.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_format_new(e: u32, m: u32, out: *mut *mut FpsFormat) -> FpsStatus {
    guard(|| {
        let fmt = FpFormat::new(e, m)?;
        unsafe { write(out, Box::into_raw(Box::new(FpsFormat(fmt))), "out") }
    })
}

/// # Safety
/// `fmt` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fps_format_free(fmt: *mut FpsFormat) {
    if !fmt.is_null() {
        drop(unsafe { Box::from_raw(fmt) });
    }
}

/// Largest finite magnitude of the format.
///
/// # Safety
/// `fmt` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_format_fp_max(fmt: *const FpsFormat, out: *mut f64) -> FpsStatus {
    guard(|| {
        let fmt = unsafe { deref(fmt, "fmt") }?;
        unsafe { write(out, fmt.0.fp_max(), "out") }
    })
}

/// Rounds `x` to the nearest representable value, saturating at the range.
///
/// # Safety
/// `fmt` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_quantize_scalar(fmt: *const FpsFormat, x: f64, out: *mut f64) -> FpsStatus {
    guard(|| {
        let fmt = unsafe { deref(fmt, "fmt") }?;
        let q = fpscale::quantize_scalar(x, fmt.0)?;
        unsafe { write(out, q, "out") }
    })
}

/// Quantizes and dequantizes a row-major `rows x cols` tensor into `out`.
/// `block` is the block size for [`FpsStrategy::Block`] and ignored otherwise.
///
/// # Safety
/// `data` and `out` must each hold `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn fps_quantize_dequantize(
    fmt: *const FpsFormat,
    data: *const f64,
    rows: usize,
    cols: usize,
    strategy: FpsStrategy,
    block: usize,
    out: *mut f64,
) -> FpsStatus {
    guard(|| {
        let fmt = unsafe { deref(fmt, "fmt") }?;
        if data.is_null() {
            return Err(Fail::Null("data"));
        }
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let len = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Shape("rows * cols overflows".into()))?;
        let input = unsafe { std::slice::from_raw_parts(data, len) }.to_vec();
        let t = Tensor2D::new(rows, cols, input)?;
        let strat = match strategy {
            FpsStrategy::Block => ScalingStrategy::BlockWise(block),
            FpsStrategy::Channel => ScalingStrategy::ChannelWise,
            FpsStrategy::Tensor => ScalingStrategy::TensorWise,
        };
        let q = quantize_dequantize(&t, fmt.0, strat)?;
        unsafe { std::slice::from_raw_parts_mut(out, len) }.copy_from_slice(q.dequantized.data());
        Ok(())
    })
}

/// Loads a named built-in preset.
///
/// # Safety
/// `name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_constants_preset(name: *const c_char, out: *mut *mut FpsConstants) -> FpsStatus {
    guard(|| {
        let name = unsafe { str_arg(name, "name") }?;
        let c = LawConstants::preset(name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        unsafe { write(out, Box::into_raw(Box::new(FpsConstants(c))), "out") }
    })
}

/// Parses preset text (`key = value` per line).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_constants_parse(text: *const c_char, out: *mut *mut FpsConstants) -> FpsStatus {
    guard(|| {
        let c = LawConstants::parse_preset(unsafe { str_arg(text, "text") }?)?;
        unsafe { write(out, Box::into_raw(Box::new(FpsConstants(c))), "out") }
    })
}

/// Reads a preset file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_constants_from_file(path: *const c_char, out: *mut *mut FpsConstants) -> FpsStatus {
    guard(|| {
        let path = unsafe { str_arg(path, "path") }?;
        let text = std::fs::read_to_string(path).map_err(Error::from)?;
        let c = LawConstants::parse_preset(&text)?;
        unsafe { write(out, Box::into_raw(Box::new(FpsConstants(c))), "out") }
    })
}

/// # Safety
/// `c` must be null or come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn fps_constants_free(c: *mut FpsConstants) {
    if !c.is_null() {
        drop(unsafe { Box::from_raw(c) });
    }
}

/// Copies `n, alpha, d, beta, epsilon, gamma, delta, nu` into `out[0..8]`.
///
/// # Safety
/// `c` must be a live handle; `out` must hold 8 doubles.
#[no_mangle]
pub unsafe extern "C" fn fps_constants_values(c: *const FpsConstants, out: *mut f64) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        unsafe { std::slice::from_raw_parts_mut(out, 8) }.copy_from_slice(&c.0.to_array());
        Ok(())
    })
}

/// Unified loss at model size `n`, tokens `d`, layout `e`/`m`, block `log2b`.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_capybara_loss(
    c: *const FpsConstants,
    n: f64,
    d: f64,
    e: f64,
    m: f64,
    log2b: f64,
    out: *mut f64,
) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        let l = finite(lawmodels::capybara_loss(n, d, e, m, log2b, &c.0), "loss")?;
        unsafe { write(out, l, "out") }
    })
}

/// Full-precision loss at model size `n` and tokens `d`.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_chinchilla_loss(c: *const FpsConstants, n: f64, d: f64, out: *mut f64) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        let l = finite(lawmodels::chinchilla_loss(n, d, &c.0), "loss")?;
        unsafe { write(out, l, "out") }
    })
}

/// Token count minimizing the unified loss at fixed `n`.
///
/// # Safety
/// `c` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_critical_data_size(
    c: *const FpsConstants,
    n: f64,
    e: f64,
    m: f64,
    log2b: f64,
    out: *mut f64,
) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        let d = implications::critical_data_size(n, e, m, log2b, &c.0)?;
        unsafe { write(out, d, "out") }
    })
}

/// Integer exponent/mantissa split for `bits` total bits.
///
/// # Safety
/// `c` must be a live handle; `e` and `m` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_optimal_layout(
    c: *const FpsConstants,
    bits: u32,
    e: *mut u32,
    m: *mut u32,
) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        if e.is_null() || m.is_null() {
            return Err(Fail::Null("e/m"));
        }
        let (ee, mm) = implications::optimal_layout_int(bits, &c.0)?;
        unsafe {
            e.write(ee);
            m.write(mm);
        }
        Ok(())
    })
}

/// Compute-optimal precision, model size and tokens for budget `flops`
/// with cost `k * N * D * P`.
///
/// # Safety
/// `c` must be a live handle; `p`, `n` and `d` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fps_p_opt_joint(
    c: *const FpsConstants,
    flops: f64,
    k: f64,
    log2b: f64,
    p: *mut f64,
    n: *mut f64,
    d: *mut f64,
) -> FpsStatus {
    guard(|| {
        let c = unsafe { deref(c, "constants") }?;
        if p.is_null() || n.is_null() || d.is_null() {
            return Err(Fail::Null("p/n/d"));
        }
        let mut budget = ComputeBudget::new(flops);
        budget.k = k;
        let o = implications::p_opt_joint(&budget, log2b, &c.0)?;
        unsafe {
            p.write(o.p);
            n.write(o.n);
            d.write(o.d);
        }
        Ok(())
    })
}
