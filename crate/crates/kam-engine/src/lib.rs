//! Finite-dimensional KAM iteration for Hamiltonian PDEs on the circle.

// `!(x < y)` is used on purpose so that NaN fails validation; index loops
// mirror the component formulas.
#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::too_many_arguments
)]

pub mod cli;
pub mod error;
pub mod flow;
pub mod hamiltonian;
pub mod homological;
pub mod kam;
pub mod resonance;
pub mod spaces;
pub mod wave;
