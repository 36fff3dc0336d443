//! Gauss-Newton-Polyak subgradient methods for `min h(c(x))`.
//!
//! The crate is organised around a small oracle contract ([`composite`]) that
//! problems implement and solvers consume. The solver never sees the
//! subgradient `v` of `h` itself, only its pullback `∇c(x)ᵀv` and the
//! Gauss-Newton operator `Z ↦ ∇c(x)ᵀ∇c(x)Z`, so problems whose image space is
//! huge (order-`n` tensors) stay cheap.
//!
//! - [`linalg`]: dense helpers, seeded randomness, minimum-norm CG.
//! - [`composite`]: oracle trait, solver configuration and run traces.
//! - [`tensor`]: low-rank symmetric tensor sensing with an `ℓ₁` loss.
//! - [`solvers`]: GNP, restarted GNP, Polyak and scaled subgradient baselines.
//! - [`diagnostics`]: finite differences, Jacobian rank, sharpness, rates.
//! - `explicit` (feature `oracle`): brute-force tensor and Jacobian constructions used as
//!   independent reference implementations.

pub mod composite;
pub mod diagnostics;
mod error;
#[cfg(any(test, feature = "oracle"))]
pub mod explicit;
pub mod linalg;
pub mod solvers;
pub mod tensor;

pub use composite::{CompositeOracle, PullbackBundle, RunRecord, SolverConfig, TraceRow};
pub use error::{Error, Result};
pub use linalg::{DenseMatrix, RandomStream, SelfAdjointAction};
pub use tensor::{SensingOracle, TensorSensingInstance};
