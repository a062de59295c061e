//! Spectral-Galerkin drift-implicit Euler–Maruyama for parabolic SPDEs
//!
//! ```text
//! dX(t) = A X(t) dt + B(t, X(t)) dW(t),   X(0) = ξ,   t ∈ [0, 1]
//! ```
//!
//! driven by a Q-Wiener process whose `ℓ`-th scalar component is sampled on
//! its own uniform grid with `n_ℓ` steps. The scheme runs on the union of
//! those grids. Alongside the integrator the crate evaluates both sides of
//! the discrete maximal `L²`-regularity estimate
//!
//! ```text
//! Σ_η E‖conv(τ_η)‖²_{D(A^{ι+1/2})} Δτ_η ≤ 2 E Σ_ℓ Σ_i ‖B(t_{i−1,ℓ}, X(t_{i−1,ℓ})) √q_ℓ h_ℓ‖²_{D(A^ι)} Δt_{i,ℓ}
//! ```
//!
//! exactly (Itô-isometry moments for state-independent `B`) or by Monte Carlo.
//!
//! Indexing: modes `j` and levels `ℓ` are zero-based in the API; merged
//! steps `η ∈ 0..=N` and level steps `i ∈ 0..=n_ℓ` use their natural range.
//! CSV output is one-based for `j` and `ℓ`.

pub mod analysis;
pub mod diffusion;
pub mod ensemble;
pub mod error;
pub mod noise;
pub mod resolvent;
pub mod solver;
pub mod spectral;
pub mod timegrid;

pub use diffusion::{
    AdditiveDiagonal, CallbackOperator, ConstantDense, Coupling, DiffusionOperator, LinearDiagonal,
};
pub use error::{Error, Result};
pub use noise::{LevelIncrements, NoiseStream};
pub use resolvent::ResolventTable;
pub use solver::{Problem, SolverInput, Trajectory};
pub use spectral::{Eigensystem, PowerLawSpec, SpectralVector};
pub use timegrid::{LevelGrids, MergedGrid, QuasiUniformGrids};
