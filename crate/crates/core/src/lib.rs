//! Tensor-ring (TR) completion.
//!
//! A TR tensor of order `d` is stored as the mode-2 unfoldings `W_1, ..., W_d`
//! of its cores; `W_k` has `n_k` rows and `r_k * r_{k+1}` columns, with the
//! rank index taken cyclically. Completion fits such a point to a sparse set of
//! observed entries by minimizing
//!
//! ```text
//! f(W) = 1/(2p) * sum_{i in Omega} (tau(W)(i) - A(i))^2 + lambda/2 * ||W||_F^2
//! ```
//!
//! with Riemannian gradient descent, Riemannian conjugate gradient (both under a
//! metric preconditioned by the per-mode Gram matrices of the subchain
//! unfoldings) or alternating least squares.

pub mod datagen;
pub mod error;
pub mod linesearch;
pub mod metric;
pub mod metrics;
pub mod objective;
pub mod ring;
pub mod seed;
pub(crate) mod small;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use metric::{gram_subchain, MetricState};
pub use objective::{ObjectiveConfig, Residual, SparseSample};
pub use ring::{TangentVector, TrPoint, TrRank};
pub use solvers::{Algorithm, RunRecord, SolverConfig, StepRule, StoppingCriteria, Termination};
pub use tensor::{DenseTensor, MultiIndex, Shape};
