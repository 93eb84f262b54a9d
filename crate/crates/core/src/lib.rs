//! Simulation and measurement-feedback synthesis for a two-node network of
//! Gaussian oscillators connected by travelling fields.
//!
//! The pipeline is: [`quadnet`] builds the delay-tagged quadrature models,
//! [`lqgsynth`] designs the LQG controller on the delay-free lossless model,
//! [`closedloop`] wires plant and controller together with transport delays,
//! [`spectra`] evaluates the EPR power spectra `V+` and `V-`, and [`ddestab`]
//! locates the rightmost characteristic roots of the delayed closed loop.
//! [`scenario`] strings these together for the reference cases.

// `!(x < y)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod closedloop;
pub mod ddestab;
pub mod error;
pub mod lqgsynth;
pub mod par;
pub mod quadnet;
pub mod scenario;
pub mod solvers;
pub mod spectra;
pub mod statespace;

pub use error::{Error, Result};
pub use quadnet::NetworkParams;
pub use statespace::{DelayTerm, DelayedStateSpace};
