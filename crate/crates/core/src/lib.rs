//! Finite-volume solvers for doubly-degenerate nonlinear parabolic equations
//!
//!   du/dt + div F(u) = laplace(Phi(u)) + f
//!
//! The diffusion nonlinearity `Phi` may have `Phi' = 0` (slow diffusion) or become
//! multivalued/singular (fast diffusion). The solver reformulates the problem through
//! an auxiliary variable `s` with `u = b(s)`, `w = B(s)`, where `b` and `B` are Lipschitz
//! with `0 <= b', B' <= 1` and `b' + B' >= 1`. The time-discrete systems are linearized
//! with the Newton, L-, M- or adaptive M-scheme and solved on uniform rectangular grids
//! with a two-point flux approximation.

pub mod adaptive;
pub mod discrete_ops;
pub mod error;
pub mod io;
pub mod mesh;
pub mod nonlinearity;
pub mod problems;
pub mod schemes;

pub use error::DdsError;
