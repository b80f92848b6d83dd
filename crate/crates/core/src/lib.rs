//! Online estimation of the non-blocking service rate of a compute stage that
//! reads from (or writes to) a bounded queue.
//!
//! The crate is `no_std` (it needs `alloc`) and contains everything that does
//! not touch the operating system:
//!
//! * [`timebase`]: the time-reference abstraction, read-latency measurement and
//!   sampling-period calibration against an injectable [`timebase::BlockageProbe`].
//! * [`ique`]: a bounded SPSC ring buffer whose ends count non-blocking
//!   transactions, harvested by a monitor through atomic copy-and-zero.
//! * [`streamstat`]: Welford moments, the Gaussian and Laplacian-of-Gaussian
//!   kernels, valid-region convolution and the Gaussian 95th-quantile.
//! * [`monitor`]: the service-rate heuristic as a deterministic state machine fed
//!   one [`ique::TransactionSnapshot`] per sampling period.
//! * [`qmodel`]: M/M/1 observation probabilities for non-blocking reads/writes.
//!
//! Threads, the platform clock, the workload generator and all file formats live
//! in the `ratescope` companion crate.
#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

mod error;
pub mod ique;
pub mod monitor;
pub mod qmodel;
pub mod streamstat;
pub mod timebase;

pub use error::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;
