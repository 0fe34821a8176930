//! Renewal-equation epidemic model with piecewise-constant reproduction
//! numbers.
//!
//! The crate is `no_std` (with `alloc`) and covers the numerical core:
//! generation-interval discretisation, the renewal recursion and death
//! convolution, forward simulation, the three phase priors, the MCMC
//! sampler, posterior summaries and predictive model comparison.
#![no_std]

extern crate alloc;

pub mod epi;
pub mod error;
pub mod inference;
pub mod phases;
pub mod selection;
pub mod simulate;
pub mod special;
pub mod summary;

pub use error::{Error, Result};
