//! Graph convolutional neural ODEs, `dH/dt = ReLU(A·H·W)`, trained with
//! adjoint gradients computed by closed-form matrix products instead of
//! unrolled Jacobians or an autograd tape.
//!
//! * [`linalg`]: dense matrices, roll/unroll.
//! * [`jacobian`]: explicit unrolled Jacobians and finite-difference oracles.
//! * [`adjoint`]: the vectorized vector-Jacobian products.
//! * [`ode`]: forward and backward fixed-step integration.
//! * [`training`]: loss, gradient checks, gradient descent.
//! * [`cli`]: file formats and the `gcde` command-line workflows.

pub mod adjoint;
pub mod cli;
pub mod error;
pub mod fixtures;
pub mod format;
pub mod jacobian;
pub mod linalg;
pub mod ode;
pub mod training;

pub use error::{GcdeError, Result};
pub use linalg::{Matrix, UnrollOrder, Vector};
pub use ode::{BackwardMode, BackwardResult, GcdeModel, SolverConfig, SolverMethod, Trajectory};
