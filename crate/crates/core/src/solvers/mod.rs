//! Dense Riccati and Lyapunov solvers.

pub mod care;
pub mod lyapunov;
mod schur;

pub use care::{solve_care, CareProblem, CareSolution};
pub use lyapunov::solve_lyapunov;
pub use schur::spectral_abscissa;
pub(crate) use schur::eigenvalues;
