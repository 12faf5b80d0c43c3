//! Std companion to `srl-core`: thread pools, on-disk formats, the
//! benchmark harness and the visualization server.

pub mod bench;
pub mod checkpoint;
pub mod dataset;
pub mod envfile;
pub mod image;
pub mod pool;
pub mod report;
pub mod server;

pub use srl_core as core;
