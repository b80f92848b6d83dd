//! Threads, clocks, workloads and file formats around `ratescope-core`.

pub mod clock;
pub mod error;
pub mod live;
pub mod mm1;
pub mod overhead;
pub mod trace;
pub mod workload;

pub use error::{Error, Result};
