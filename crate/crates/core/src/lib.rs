//! Feed-forward neural-network inference with tangent-linear and adjoint
//! evaluation, packaged for in-process coupling with column-major host
//! models through a flat C boundary.
//!
//! - [`tensor`]: row-major tensors, column-major conversion, kernels
//! - [`model`]: layer graph, binary container, topology builders
//! - [`autodiff`]: forward pass, JVP/VJP sweeps, Jacobian assembly
//! - [`bridge`]: handle registry and the exported `tnwp_*` symbols

pub mod autodiff;
pub mod bridge;
pub mod error;
pub mod exec;
pub mod model;
pub mod rng;
pub mod tensor;

pub use autodiff::{
    adjoint, forward, infer, jacobian, scalar_loss_adjoint, tangent, Differentiable,
    ForwardTrace, JacobianMatrix, Linearization,
};
pub use error::{Error, Result};
pub use exec::Execution;
pub use model::{check_shapes, load_model, save_model, Layer, ModelGraph};
pub use rng::SeededRng;
pub use tensor::{colmajor_to_rowmajor, rowmajor_to_colmajor, Layout, Tensor};
