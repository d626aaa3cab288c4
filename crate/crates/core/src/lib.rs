//! Kernel-based importance sampling for off-policy evaluation of
//! deterministic policies over continuous actions, with locally learned
//! Mahalanobis kernel metrics.
//!
//! The crate is `no_std` and only needs an allocator. Everything here is a
//! pure function of its inputs plus an explicit, seeded RNG; file formats,
//! the experiment harness and the CLI live in the `kmis` crate.
//!
//! Pipeline for one estimate:
//!
//! 1. fit a [`reward_model::RewardModel`] on the logged data,
//! 2. take the action Hessian of its mean at every `(s_i, pi(s_i))`,
//! 3. turn each Hessian into a unit-determinant metric with
//!    [`metric::regularized_metric`] and factor it with
//!    [`metric::transform_matrix`],
//! 4. run [`estimators::kernel_is`] on the transformed kernel inputs.
//!
//! [`estimators::kmis_estimate`] wires those steps together.
#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod bandwidth;
pub mod domains;
pub mod error;
pub mod estimators;
pub mod metric;
pub mod numerics;
pub mod policies;
pub mod reward_model;

pub use error::{Error, Result};
