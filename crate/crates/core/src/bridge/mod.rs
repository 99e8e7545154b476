//! In-process coupling boundary.
//!
//! A host model loads a network once with [`model_new`], drives it through
//! forward, tangent and adjoint calls on column-major buffers, and releases it
//! with [`model_delete`]. The safe functions here back the exported C symbols
//! in [`ffi`]; every failure is reduced to a [`StatusCode`] plus a per-thread
//! detail string.
//!
//! Models live in a global [`HandleRegistry`] as `Arc`s. A call clones the
//! `Arc` under a short read lock and then runs without holding the lock, so a
//! concurrent delete either waits for registration to finish or makes later
//! lookups fail with `BadHandle`; in-flight calls keep their model alive until
//! they return.

pub mod ffi;

use std::cell::RefCell;
use std::fmt;
use std::path::Path;
use std::sync::{Arc, Once, RwLock};

use crate::autodiff::{forward, infer};
use crate::error::Error;
use crate::exec::Execution;
use crate::model::{check_shapes, load_model, ModelGraph};
use crate::tensor::{numel, relayout_into, Layout, Tensor};

/// Integer result of every boundary call.
#[repr(i32)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatusCode {
    Ok = 0,
    BadHandle = 1,
    ShapeMismatch = 2,
    IoError = 3,
    DeviceUnavailable = 4,
    InvalidArgument = 5,
    InternalError = 6,
}

impl StatusCode {
    pub fn code(self) -> i32 {
        self as i32
    }

    pub fn from_code(code: i32) -> Option<Self> {
        Some(match code {
            0 => StatusCode::Ok,
            1 => StatusCode::BadHandle,
            2 => StatusCode::ShapeMismatch,
            3 => StatusCode::IoError,
            4 => StatusCode::DeviceUnavailable,
            5 => StatusCode::InvalidArgument,
            6 => StatusCode::InternalError,
            _ => return None,
        })
    }
}

/// A failed boundary call: the status returned plus the detail text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BridgeError {
    pub status: StatusCode,
    pub detail: String,
}

impl BridgeError {
    pub fn new(status: StatusCode, detail: impl Into<String>) -> Self {
        BridgeError {
            status,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for BridgeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}: {}", self.status, self.detail)
    }
}

impl std::error::Error for BridgeError {}

impl From<Error> for BridgeError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ShapeMismatch { .. } | Error::LengthMismatch { .. } | Error::LayerShape { .. } => {
                StatusCode::ShapeMismatch
            }
            Error::InvalidInput(_) => StatusCode::InvalidArgument,
            Error::Io(_) | Error::Format(_) | Error::InvalidLayer { .. } => StatusCode::IoError,
        };
        BridgeError::new(status, e.to_string())
    }
}

pub type BridgeResult<T> = std::result::Result<T, BridgeError>;

/// Execution device requested by the host.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Device {
    Cpu,
}

impl Device {
    /// `"cpu"` is served; `"gpu"` is recognised but has no backend.
    pub fn parse(name: &str) -> BridgeResult<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cpu" => Ok(Device::Cpu),
            "gpu" => Err(BridgeError::new(
                StatusCode::DeviceUnavailable,
                "device \"gpu\" is not available in this build; use \"cpu\"",
            )),
            other => Err(BridgeError::new(
                StatusCode::InvalidArgument,
                format!("unknown device {other:?}; expected \"cpu\" or \"gpu\""),
            )),
        }
    }
}

/// Opaque model token: slot id in the low 32 bits, slot generation in the
/// high 32 bits. Raw value 0 is never issued.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ModelHandle {
    id: u32,
    generation: u32,
}

impl ModelHandle {
    pub fn id(self) -> u32 {
        self.id
    }

    pub fn generation(self) -> u32 {
        self.generation
    }

    pub fn to_raw(self) -> u64 {
        (u64::from(self.generation) << 32) | u64::from(self.id)
    }

    pub fn from_raw(raw: u64) -> Self {
        ModelHandle {
            id: raw as u32,
            generation: (raw >> 32) as u32,
        }
    }
}

#[derive(Debug)]
pub struct LoadedModel {
    pub graph: ModelGraph,
    pub device: Device,
}

#[derive(Debug, Default)]
struct Slot {
    generation: u32,
    model: Option<Arc<LoadedModel>>,
}

/// Slot table of live models. Freed slots are reused with a bumped
/// generation, so handles to deleted models never validate again.
#[derive(Debug, Default)]
pub struct HandleRegistry {
    slots: Vec<Slot>,
    free: Vec<usize>,
    live: usize,
}

impl HandleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: LoadedModel) -> ModelHandle {
        let index = match self.free.pop() {
            Some(index) => index,
            None => {
                self.slots.push(Slot::default());
                self.slots.len() - 1
            }
        };
        let slot = &mut self.slots[index];
        slot.generation = slot.generation.wrapping_add(1).max(1);
        slot.model = Some(Arc::new(model));
        self.live += 1;
        ModelHandle {
            id: index as u32 + 1,
            generation: slot.generation,
        }
    }

    fn slot_index(&self, h: ModelHandle) -> Option<usize> {
        let index = (h.id as usize).checked_sub(1)?;
        let slot = self.slots.get(index)?;
        (slot.generation == h.generation && slot.model.is_some()).then_some(index)
    }

    pub fn get(&self, h: ModelHandle) -> Option<Arc<LoadedModel>> {
        self.slot_index(h).and_then(|i| self.slots[i].model.clone())
    }

    /// Drops the registry's reference to the model. Returns false for
    /// unknown, stale or already deleted handles.
    pub fn remove(&mut self, h: ModelHandle) -> bool {
        match self.slot_index(h) {
            Some(index) => {
                self.slots[index].model = None;
                self.free.push(index);
                self.live -= 1;
                true
            }
            None => false,
        }
    }

    pub fn live_count(&self) -> usize {
        self.live
    }
}

static REGISTRY: RwLock<HandleRegistry> = RwLock::new(HandleRegistry {
    slots: Vec::new(),
    free: Vec::new(),
    live: 0,
});

fn registry_read() -> std::sync::RwLockReadGuard<'static, HandleRegistry> {
    REGISTRY.read().unwrap_or_else(|p| p.into_inner())
}

fn registry_write() -> std::sync::RwLockWriteGuard<'static, HandleRegistry> {
    REGISTRY.write().unwrap_or_else(|p| p.into_inner())
}

/// Number of models currently registered with the global boundary.
pub fn live_model_count() -> usize {
    registry_read().live_count()
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

pub(crate) fn set_last_error(detail: &str) {
    LAST_ERROR.with(|e| {
        let mut e = e.borrow_mut();
        e.clear();
        e.push_str(detail);
    });
}

/// Detail text of the calling thread's most recent boundary call; empty
/// after a success.
pub fn last_error_detail() -> String {
    LAST_ERROR.with(|e| e.borrow().clone())
}

static LOG_INIT: Once = Once::new();

/// Configures stderr diagnostics from `TNWP_LOG` (`off`, `error` or `debug`).
pub fn init_logging() {
    LOG_INIT.call_once(|| {
        let level = match std::env::var("TNWP_LOG").as_deref() {
            Ok("error") => "error",
            Ok("debug") => "debug",
            _ => "off",
        };
        let _ = env_logger::Builder::new()
            .parse_filters(level)
            .target(env_logger::Target::Stderr)
            .try_init();
    });
}

fn lookup(h: ModelHandle) -> BridgeResult<Arc<LoadedModel>> {
    registry_read().get(h).ok_or_else(|| {
        BridgeError::new(
            StatusCode::BadHandle,
            format!(
                "handle {:#x} (id {}, generation {}) does not name a live model",
                h.to_raw(),
                h.id,
                h.generation
            ),
        )
    })
}

/// Loads a model container and registers it.
pub fn model_new(path: &Path, device: &str) -> BridgeResult<ModelHandle> {
    let device = Device::parse(device)?;
    let graph = load_model(path).map_err(|e| {
        let mut err = BridgeError::from(e);
        if err.status != StatusCode::IoError {
            err.status = StatusCode::IoError;
        }
        err.detail = format!("loading {}: {}", path.display(), err.detail);
        err
    })?;
    check_shapes(&graph)?;
    let handle = registry_write().insert(LoadedModel { graph, device });
    log::debug!(
        "loaded {} as handle {:#x}",
        path.display(),
        handle.to_raw()
    );
    Ok(handle)
}

/// Releases a model. The registry reference is dropped before returning;
/// calls already holding the model finish first.
pub fn model_delete(h: ModelHandle) -> BridgeResult<()> {
    if registry_write().remove(h) {
        log::debug!("deleted handle {:#x}", h.to_raw());
        Ok(())
    } else {
        Err(BridgeError::new(
            StatusCode::BadHandle,
            format!("handle {:#x} is not live (never issued or already deleted)", h.to_raw()),
        ))
    }
}

/// Checks host extents against the model's declared extents.
pub(crate) fn check_extents(what: &str, expected: &[usize], actual: &[usize]) -> BridgeResult<()> {
    if expected.len() != actual.len() {
        return Err(BridgeError::new(
            StatusCode::ShapeMismatch,
            format!(
                "{what}: rank {} does not match expected rank {} (expected extents {expected:?}, got {actual:?})",
                actual.len(),
                expected.len()
            ),
        ));
    }
    if let Some(dim) = (0..expected.len()).find(|&d| expected[d] != actual[d]) {
        return Err(BridgeError::new(
            StatusCode::ShapeMismatch,
            format!(
                "{what}: dimension {dim} has extent {}, expected {} (expected extents {expected:?}, got {actual:?})",
                actual[dim], expected[dim]
            ),
        ));
    }
    Ok(())
}

fn check_buffer(what: &str, len: usize, extents: &[usize]) -> BridgeResult<()> {
    if len != numel(extents) {
        return Err(BridgeError::new(
            StatusCode::ShapeMismatch,
            format!(
                "{what}: buffer holds {len} values but extents {extents:?} describe {}",
                numel(extents)
            ),
        ));
    }
    Ok(())
}

fn ingest(what: &str, buf: &[f64], extents: &[usize], expected: &[usize]) -> BridgeResult<Tensor> {
    check_extents(what, expected, extents)?;
    check_buffer(what, buf.len(), extents)?;
    let mut data = vec![0.0; buf.len()];
    relayout_into(buf, extents, Layout::ColMajor, Layout::RowMajor, &mut data)?;
    Ok(Tensor::new(extents.to_vec(), data)?)
}

fn egress(t: &Tensor, out: &mut [f64]) {
    relayout_into(t.data(), t.shape(), Layout::RowMajor, Layout::ColMajor, out)
        .expect("output extents validated before the call");
}

fn prepare_output(what: &str, len: usize, extents: &[usize], expected: &[usize]) -> BridgeResult<()> {
    check_extents(what, expected, extents)?;
    check_buffer(what, len, extents)
}

/// `y = M(x)` on column-major buffers. `y` is untouched on failure.
pub fn model_forward(
    h: ModelHandle,
    x: &[f64],
    x_extents: &[usize],
    y: &mut [f64],
    y_extents: &[usize],
) -> BridgeResult<()> {
    let model = lookup(h)?;
    let g = &model.graph;
    let x = ingest("x", x, x_extents, g.input_shape())?;
    prepare_output("y", y.len(), y_extents, g.output_shape())?;
    let out = infer(g, &x)?;
    egress(&out, y);
    Ok(())
}

/// `dy = J(x) · dx` on column-major buffers.
#[allow(clippy::too_many_arguments)]
pub fn model_tangent(
    h: ModelHandle,
    x: &[f64],
    x_extents: &[usize],
    dx: &[f64],
    dx_extents: &[usize],
    dy: &mut [f64],
    dy_extents: &[usize],
) -> BridgeResult<()> {
    let model = lookup(h)?;
    let g = &model.graph;
    let x = ingest("x", x, x_extents, g.input_shape())?;
    let dx = ingest("dx", dx, dx_extents, g.input_shape())?;
    prepare_output("dy", dy.len(), dy_extents, g.output_shape())?;
    let (_, trace) = forward(g, &x)?;
    let out = trace.tangent(&dx)?;
    egress(&out, dy);
    Ok(())
}

/// `xstar = J(x)ᵀ · ystar` on column-major buffers.
#[allow(clippy::too_many_arguments)]
pub fn model_adjoint(
    h: ModelHandle,
    x: &[f64],
    x_extents: &[usize],
    ystar: &[f64],
    ystar_extents: &[usize],
    xstar: &mut [f64],
    xstar_extents: &[usize],
) -> BridgeResult<()> {
    let model = lookup(h)?;
    let g = &model.graph;
    let x = ingest("x", x, x_extents, g.input_shape())?;
    let ystar = ingest("ystar", ystar, ystar_extents, g.output_shape())?;
    prepare_output("xstar", xstar.len(), xstar_extents, g.input_shape())?;
    let (_, trace) = forward(g, &x)?;
    let out = trace.adjoint(&ystar)?;
    egress(&out, xstar);
    Ok(())
}

/// Forward pass over `batch` columns appended as the last, slowest-varying
/// dimension of column-major `xs` and `ys`.
///
/// Columns are processed `chunk` at a time; every column runs the same
/// single-sample code path, so the result does not depend on `chunk` or on
/// `exec`. Scratch memory is per chunk and dropped as soon as the chunk is
/// written out.
#[allow(clippy::too_many_arguments)]
pub fn model_forward_batch(
    h: ModelHandle,
    xs: &[f64],
    xs_extents: &[usize],
    ys: &mut [f64],
    ys_extents: &[usize],
    batch: usize,
    chunk: usize,
    exec: Execution,
) -> BridgeResult<()> {
    let model = lookup(h)?;
    if chunk == 0 {
        return Err(BridgeError::new(
            StatusCode::InvalidArgument,
            "chunk must be at least 1",
        ));
    }
    if batch == 0 {
        return Ok(());
    }
    let g = &model.graph;
    let in_shape = g.input_shape();
    let out_shape = g.output_shape();
    let mut expected_in = in_shape.to_vec();
    expected_in.push(batch);
    let mut expected_out = out_shape.to_vec();
    expected_out.push(batch);
    check_extents("xs", &expected_in, xs_extents)?;
    check_buffer("xs", xs.len(), xs_extents)?;
    prepare_output("ys", ys.len(), ys_extents, &expected_out)?;
    if let Some(bad) = xs.iter().position(|v| !v.is_finite()) {
        return Err(BridgeError::new(
            StatusCode::InvalidArgument,
            format!(
                "xs contains a non-finite value in column {}",
                bad / g.input_len()
            ),
        ));
    }

    let n_in = g.input_len();
    let n_out = g.output_len();
    exec.for_each_chunk_pair(xs, n_in * chunk, ys, n_out * chunk, |_, xs_chunk, ys_chunk| {
        let mut row_major = vec![0.0; n_in];
        for (x_col, y_col) in xs_chunk.chunks_exact(n_in).zip(ys_chunk.chunks_exact_mut(n_out)) {
            relayout_into(x_col, in_shape, Layout::ColMajor, Layout::RowMajor, &mut row_major)
                .expect("column extents validated");
            let x = Tensor::new(in_shape.to_vec(), row_major.clone()).expect("column length");
            let y = infer(g, &x).expect("inputs validated");
            egress(&y, y_col);
        }
    });
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_identity_model;

    fn loaded() -> LoadedModel {
        LoadedModel {
            graph: build_identity_model(2),
            device: Device::Cpu,
        }
    }

    #[test]
    fn handles_never_revalidate_after_delete() {
        let mut reg = HandleRegistry::new();
        let a = reg.insert(loaded());
        assert_ne!(a.to_raw(), 0);
        assert!(reg.get(a).is_some());
        assert!(reg.remove(a));
        assert!(!reg.remove(a));
        assert!(reg.get(a).is_none());
        let b = reg.insert(loaded());
        assert_eq!(b.id(), a.id());
        assert_ne!(b.generation(), a.generation());
        assert!(reg.get(a).is_none());
        assert!(reg.get(b).is_some());
        assert_eq!(reg.live_count(), 1);
    }

    #[test]
    fn zero_and_unissued_handles_are_rejected() {
        let mut reg = HandleRegistry::new();
        assert!(reg.get(ModelHandle::from_raw(0)).is_none());
        assert!(reg.get(ModelHandle::from_raw(77)).is_none());
        assert!(!reg.remove(ModelHandle::from_raw(0)));
    }

    #[test]
    fn raw_round_trip() {
        let h = ModelHandle {
            id: 7,
            generation: 3,
        };
        assert_eq!(ModelHandle::from_raw(h.to_raw()), h);
        assert_eq!(h.to_raw(), (3 << 32) | 7);
    }

    #[test]
    fn device_vocabulary() {
        assert_eq!(Device::parse("cpu"), Ok(Device::Cpu));
        assert_eq!(Device::parse("gpu").unwrap_err().status, StatusCode::DeviceUnavailable);
        assert_eq!(Device::parse("tpu").unwrap_err().status, StatusCode::InvalidArgument);
    }

    #[test]
    fn extent_mismatch_names_dimension() {
        let err = check_extents("x", &[11, 89], &[11, 88]).unwrap_err();
        assert_eq!(err.status, StatusCode::ShapeMismatch);
        assert!(err.detail.contains("dimension 1"), "{}", err.detail);
        assert!(err.detail.contains("[11, 89]") && err.detail.contains("[11, 88]"));
    }

    #[test]
    fn status_codes_are_stable() {
        for code in 0..7 {
            assert_eq!(StatusCode::from_code(code).unwrap().code(), code);
        }
        assert_eq!(StatusCode::from_code(7), None);
    }
}
