#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod advection_diffusion;
pub mod bmds;
pub mod ctmc;
