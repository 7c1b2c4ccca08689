//! Numerical toolkit for retarded functional differential equations with
//! mixed discrete and distributed delays.
//!
//! The crate integrates systems of the form
//! `ẋ(t) = g(t, x(t-τ₀), …, x(t-τ_ℓ), ν(t))` with
//! `ν(t) = ∫_{-Δ}^0 G(t, s, x_t(s)) ds`, starting from pair-form initial
//! conditions `(ξ₀, φ)` whose history `φ` may be discontinuous. On top of the
//! solver it provides a computable weak-* metric on histories and sampling
//! experiments that probe boundedness of reachability sets and convergence of
//! solutions under weakly-* convergent initial conditions.
//!
//! Modules:
//! - [`history`]: piecewise-polynomial histories, trajectories, concatenation
//! - [`weakstar`]: L¹ probe family, truncated weak-* norm and metric
//! - [`system`]: system definitions, expression DSL, catalog
//! - [`quadrature`]: breakpoint-aware composite Gauss-Legendre rules
//! - [`solver`]: method of steps with per-step Picard iteration
//! - [`reach`]: reachability sampling and convergence experiments
//! - [`verify`]: executable acceptance and property checks
//! - [`cli`]: command implementations behind the `rfde` binary

pub mod history;
pub(crate) mod kvfile;
pub mod quadrature;
pub mod system;
pub mod weakstar;

pub use history::{concat, ExtendedPath, HistoryError, InitialCondition, PiecewisePoly};
