//! Command implementations behind the `tnwp` binary: derivative verification,
//! fixture generation, batch benchmarking, the variational assimilation demo
//! and expected-values files for the host harness.

pub mod bench;
pub mod expected;
pub mod fdvar;
pub mod fixtures;
pub mod verify;
