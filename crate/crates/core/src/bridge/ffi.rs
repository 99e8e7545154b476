//! Exported C symbols. Declarations live in `include/tnwp.h`.
//!
//! Every function returns an `int32_t` status, catches panics before they
//! reach the caller, and records a detail string retrievable with
//! [`tnwp_last_error_detail`].

use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use super::{
    init_logging, last_error_detail, model_adjoint, model_delete, model_forward,
    model_forward_batch, model_new, model_tangent, set_last_error, BridgeError, BridgeResult,
    ModelHandle, StatusCode,
};
use crate::exec::Execution;
use crate::tensor::numel;

/// Highest rank accepted for an extents array.
const MAX_RANK: i64 = 8;

fn run(name: &str, body: impl FnOnce() -> BridgeResult<()>) -> i32 {
    init_logging();
    let outcome = catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<&str>()
            .map(|s| s.to_string())
            .or_else(|| payload.downcast_ref::<String>().cloned())
            .unwrap_or_else(|| "unknown panic".to_string());
        Err(BridgeError::new(StatusCode::InternalError, format!("internal error: {msg}")))
    });
    match outcome {
        Ok(()) => {
            set_last_error("");
            StatusCode::Ok.code()
        }
        Err(e) => {
            log::error!("{name}: {}", e.detail);
            set_last_error(&e.detail);
            e.status.code()
        }
    }
}

fn invalid(detail: impl Into<String>) -> BridgeError {
    BridgeError::new(StatusCode::InvalidArgument, detail)
}

unsafe fn read_str<'a>(what: &str, ptr: *const c_char) -> BridgeResult<&'a str> {
    if ptr.is_null() {
        return Err(invalid(format!("{what} is NULL")));
    }
    CStr::from_ptr(ptr)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn read_extents(what: &str, ptr: *const i64, rank: i64) -> BridgeResult<Vec<usize>> {
    if ptr.is_null() {
        return Err(invalid(format!("{what} extents pointer is NULL")));
    }
    if !(1..=MAX_RANK).contains(&rank) {
        return Err(invalid(format!("{what} rank {rank} outside 1..={MAX_RANK}")));
    }
    std::slice::from_raw_parts(ptr, rank as usize)
        .iter()
        .enumerate()
        .map(|(d, &e)| {
            usize::try_from(e)
                .map_err(|_| invalid(format!("{what} extent {d} is negative ({e})")))
        })
        .collect()
}

unsafe fn read_buffer<'a>(what: &str, ptr: *const f64, extents: &[usize]) -> BridgeResult<&'a [f64]> {
    let len = numel(extents);
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(invalid(format!("{what} buffer is NULL")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_buffer<'a>(what: &str, ptr: *mut f64, extents: &[usize]) -> BridgeResult<&'a mut [f64]> {
    let len = numel(extents);
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(invalid(format!("{what} buffer is NULL")));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

/// Loads the model at `path` on `device` and stores its handle in
/// `out_handle`. `out_handle` is written only on success.
///
/// # Safety
/// `path` and `device` must be NUL-terminated strings or NULL; `out_handle`
/// must be writable or NULL.
#[no_mangle]
pub unsafe extern "C" fn tnwp_model_new(
    path: *const c_char,
    device: *const c_char,
    out_handle: *mut u64,
) -> i32 {
    run("tnwp_model_new", || {
        if out_handle.is_null() {
            return Err(invalid("out_handle is NULL"));
        }
        let path = read_str("path", path)?;
        let device = read_str("device", device)?;
        let h = model_new(Path::new(path), device)?;
        *out_handle = h.to_raw();
        Ok(())
    })
}

/// Forward inference on one column-major sample.
///
/// # Safety
/// Each buffer must hold as many values as its extents describe; each
/// extents pointer must hold `rank` values.
#[no_mangle]
pub unsafe extern "C" fn tnwp_model_forward(
    handle: u64,
    x: *const f64,
    x_extents: *const i64,
    x_rank: i64,
    y: *mut f64,
    y_extents: *const i64,
    y_rank: i64,
) -> i32 {
    run("tnwp_model_forward", || {
        let xe = read_extents("x", x_extents, x_rank)?;
        let ye = read_extents("y", y_extents, y_rank)?;
        let x = read_buffer("x", x, &xe)?;
        let y = write_buffer("y", y, &ye)?;
        model_forward(ModelHandle::from_raw(handle), x, &xe, y, &ye)
    })
}

/// Tangent-linear evaluation `dy = J(x) · dx`.
///
/// # Safety
/// As [`tnwp_model_forward`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tnwp_model_tangent(
    handle: u64,
    x: *const f64,
    x_extents: *const i64,
    x_rank: i64,
    dx: *const f64,
    dx_extents: *const i64,
    dx_rank: i64,
    dy: *mut f64,
    dy_extents: *const i64,
    dy_rank: i64,
) -> i32 {
    run("tnwp_model_tangent", || {
        let xe = read_extents("x", x_extents, x_rank)?;
        let dxe = read_extents("dx", dx_extents, dx_rank)?;
        let dye = read_extents("dy", dy_extents, dy_rank)?;
        let x = read_buffer("x", x, &xe)?;
        let dx = read_buffer("dx", dx, &dxe)?;
        let dy = write_buffer("dy", dy, &dye)?;
        model_tangent(ModelHandle::from_raw(handle), x, &xe, dx, &dxe, dy, &dye)
    })
}

/// Adjoint evaluation `xstar = J(x)ᵀ · ystar`.
///
/// # Safety
/// As [`tnwp_model_forward`].
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tnwp_model_adjoint(
    handle: u64,
    x: *const f64,
    x_extents: *const i64,
    x_rank: i64,
    ystar: *const f64,
    ystar_extents: *const i64,
    ystar_rank: i64,
    xstar: *mut f64,
    xstar_extents: *const i64,
    xstar_rank: i64,
) -> i32 {
    run("tnwp_model_adjoint", || {
        let xe = read_extents("x", x_extents, x_rank)?;
        let ye = read_extents("ystar", ystar_extents, ystar_rank)?;
        let xse = read_extents("xstar", xstar_extents, xstar_rank)?;
        let x = read_buffer("x", x, &xe)?;
        let ystar = read_buffer("ystar", ystar, &ye)?;
        let xstar = write_buffer("xstar", xstar, &xse)?;
        model_adjoint(ModelHandle::from_raw(handle), x, &xe, ystar, &ye, xstar, &xse)
    })
}

/// Batched forward inference; the batch is the last extent of `xs` and `ys`.
///
/// # Safety
/// As [`tnwp_model_forward`]. With `batch == 0` the buffers are not read.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn tnwp_model_forward_batch(
    handle: u64,
    xs: *const f64,
    xs_extents: *const i64,
    xs_rank: i64,
    ys: *mut f64,
    ys_extents: *const i64,
    ys_rank: i64,
    batch: i64,
    chunk: i64,
) -> i32 {
    run("tnwp_model_forward_batch", || {
        let batch = usize::try_from(batch).map_err(|_| invalid(format!("batch {batch} is negative")))?;
        let chunk = usize::try_from(chunk)
            .ok()
            .filter(|&c| c >= 1)
            .ok_or_else(|| invalid(format!("chunk {chunk} must be at least 1")))?;
        if batch == 0 {
            // still reject stale handles
            return model_forward_batch(
                ModelHandle::from_raw(handle),
                &[],
                &[],
                &mut [],
                &[],
                0,
                chunk,
                Execution::default(),
            );
        }
        let xe = read_extents("xs", xs_extents, xs_rank)?;
        let ye = read_extents("ys", ys_extents, ys_rank)?;
        let xs = read_buffer("xs", xs, &xe)?;
        let ys = write_buffer("ys", ys, &ye)?;
        model_forward_batch(
            ModelHandle::from_raw(handle),
            xs,
            &xe,
            ys,
            &ye,
            batch,
            chunk,
            Execution::default(),
        )
    })
}

/// Releases the model behind `handle` immediately.
///
/// # Safety
/// Always safe to call; stale handles return `BadHandle`.
#[no_mangle]
pub unsafe extern "C" fn tnwp_model_delete(handle: u64) -> i32 {
    run("tnwp_model_delete", || model_delete(ModelHandle::from_raw(handle)))
}

/// Copies the calling thread's last error detail into `buffer`, truncated
/// to `capacity - 1` bytes and NUL-terminated. Always returns 0.
///
/// # Safety
/// `buffer` must be writable for `capacity` bytes, or NULL.
#[no_mangle]
pub unsafe extern "C" fn tnwp_last_error_detail(buffer: *mut c_char, capacity: i64) -> i32 {
    let _ = catch_unwind(|| {
        if buffer.is_null() || capacity <= 0 {
            return;
        }
        let detail = last_error_detail();
        let bytes = detail.as_bytes();
        let n = bytes.len().min(capacity as usize - 1);
        let out = std::slice::from_raw_parts_mut(buffer as *mut u8, n + 1);
        out[..n].copy_from_slice(&bytes[..n]);
        out[n] = 0;
    });
    StatusCode::Ok.code()
}
