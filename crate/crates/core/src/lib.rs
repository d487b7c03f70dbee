//! Involutive MCMC kernels.
//!
//! Every sampler in this crate is a configuration of one generic step:
//! draw an auxiliary point `v ~ V(q, ·)`, map the pair `(q, v)` through a
//! family of involutions `S_0 = I, S_1, …, S_p`, and select one of the images
//! with probabilities `α̂_0, …, α̂_p`. See [`involutive::master_step`].

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod diagnostics;
pub mod discrete;
pub mod error;
pub mod hilbert;
pub mod integrators;
pub mod involutive;
pub mod rng;
pub mod samplers;

pub use error::McmcError;
pub use hilbert::CovarianceSpectrum;
pub use integrators::PhasePoint;
pub use involutive::{master_step, ChainState, Image, KernelSpec, StepRecord};
pub use rng::{stream, Purpose, RngStream};
pub use samplers::{ChainRecord, Reference, TargetModel};

pub type Result<T, E = McmcError> = std::result::Result<T, E>;
