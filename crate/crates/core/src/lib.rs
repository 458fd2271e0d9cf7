//! Costate-free minimum-energy optimal control for mechanical systems.
//!
//! The optimal control of `q̈ = f(q, q̇, t) + u` with cost `½∫uᵀu dt` is
//! obtained from a second-order ODE in the control itself, without costates.
//! The classical costate formulation is kept as an oracle.

pub mod bvp;
pub mod cases;
pub mod control_ode;
pub mod costate_oracle;
pub mod error;
pub mod fd;
pub mod helmholtz;
pub mod invariants;
pub mod lagrangian;
pub mod model;

pub use bvp::{BoundarySpec, ShootingOptions, ShootingResult};
pub use cases::{CaseConfig, MassSpringParams, MsdParams, TwoBodyParams};
pub use control_ode::{ExtendedDerivative, ExtendedState, Trajectory};
pub use costate_oracle::{CostateState, CostateTrajectory, EquivalenceReport};
pub use error::{Error, Result};
pub use helmholtz::{ConditionForm, HelmholtzReport, Multiplier};
pub use invariants::{ConservedQuantity, DriftReport, GeneratorSpec};
pub use lagrangian::{ExtendedLagrangian, LagrangianForm, LagrangianPartials, OCLagrangian, Wrt};
pub use model::{GHSplit, MechanicalSystem, Partials, SamplePoint, SampleBox, SecondPartials};
