//! D-optimal angular placement of a sensor swarm for received-strength
//! source localization.
//!
//! The optimizer maximizes the Fisher information determinant over the
//! sensors' horizontal angles, subject to all angles lying in `[0, β_max]`,
//! by alternating a closed-form log-det proximal step with a
//! majorize-minimize projection onto the feasible arc.

pub mod admm;
pub mod error;
pub mod estimator;
pub mod experiments;
pub mod fim;
pub mod model;
pub mod numerics;
pub mod rng;

pub use admm::{optimize, AdmmOptions, AdmmOutcome, IterationRecord};
pub use error::{Error, Result};
pub use fim::{fim_full, FimSummary};
pub use model::{Placement, Scenario, SourceParams, Variant};
