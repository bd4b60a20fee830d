//! Distributed kernel ridge regression with communication rounds.
//!
//! The crate simulates a set of local machines, each holding one shard of a
//! regression sample, and a global coordinator that combines their messages.
//! Without communication the coordinator returns the size-weighted average of
//! the local kernel ridge estimators (divide-and-conquer KRR). With `L`
//! communication rounds the average is refined by Newton-Raphson steps built
//! from a globally synthesized gradient and local Hessian solves.
//!
//! | Module | Purpose |
//! |--------|---------|
//! | [`kernel`] | Mercer kernels, Gram and cross-Gram matrices |
//! | [`data`] | synthetic regression tasks and even partitions |
//! | [`krr`] | single-machine kernel ridge regression |
//! | [`distributed`] | local machines, coordinator, communication ledger, oracle |
//! | [`metrics`] | MSE criteria, thresholds, effective dimension, diagnostics |
//! | [`experiments`] | configuration, trial harness, complexity model, CSV output |
//!
//! ```
//! use dkrr::data::{generate, partition_even, seeded_rng, SyntheticTask, Target};
//! use dkrr::distributed::{predict_dkrr, run_dkrr};
//! use dkrr::kernel::Kernel;
//!
//! let task = SyntheticTask::new(Target::G1, 0.2).unwrap();
//! let train = generate(&task, 200, true, &mut seeded_rng(7, 0)).unwrap();
//! let partition = partition_even(train.len(), 4, &mut seeded_rng(7, 1)).unwrap();
//! let run = run_dkrr(&train, &partition, &Kernel::Min, 1e-3, 2).unwrap();
//! let preds = predict_dkrr(&run.model, &run.locals, train.inputs(), &Kernel::Min).unwrap();
//! assert_eq!(preds.len(), 200);
//! ```

pub mod data;
pub mod distributed;
pub mod error;
pub mod experiments;
pub mod kernel;
pub mod krr;
pub mod linalg;
pub mod metrics;
pub mod points;

pub use error::{Error, Result};
pub use kernel::Kernel;
pub use points::Points;
