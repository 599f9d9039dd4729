//! Structure-preserving finite-volume simulation of fitness-driven
//! cross-diffusion systems
//!
//! ```text
//! ∂ₜuᵢ = −div(uᵢ∇fᵢ) + uᵢfᵢ,   f = m − A u,   uᵢ∇fᵢ·ν = 0 on ∂Ω
//! ```
//!
//! together with the gradient-flow bookkeeping used to audit runs: entropy,
//! dissipation, the entropy–dissipation balance, decay-rate fits, extinction
//! steady states, and the critical entropy.

pub mod diagnostics;
pub mod error;
pub mod expr;
pub mod functionals;
pub mod grid;
pub mod io;
pub mod model;
pub mod par;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{CellField, FaceField, Grid};
pub use model::{ExtinctionPattern, ProblemData};
pub use solver::{SolverConfig, Trajectory};

/// Crate version, echoed into run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
