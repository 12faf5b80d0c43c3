//! Core of the state-representation-learning benchmark.
//!
//! Everything in this crate is a pure computation over in-memory data:
//! goal-based robot environments with a deterministic software rasterizer,
//! a small reverse-mode autodiff engine, the state encoders and their
//! losses, representation-quality metrics, and a clipped-surrogate policy
//! learner. File formats, threading and the command-line front end live in
//! the `srlbench` crate.
//!
//! The crate is `no_std` and only needs `alloc`. Parallelism is injected
//! through the [`Exec`](exec::Exec) trait so results never depend on the
//! number of worker threads.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod autodiff;
pub mod env;
pub mod exec;
pub mod linalg;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod raster;
pub mod real;
pub mod rl;
pub mod rng;
pub mod samples;
pub mod srl;

pub use exec::{Exec, Serial};
pub use real::Real;
