//! Particle simulation of the magnetized Vlasov-Poisson system with a
//! harness that measures the functionals and inequalities of its
//! moment-propagation and uniqueness theory.

pub mod bounds;
pub mod diagnostics;
pub mod ensemble;
pub mod error;
pub mod fields;
pub mod integrator;
pub mod uniqueness;
pub mod vec3;

pub use diagnostics::{BoundReport, DiagnosticsSeries, DiagnosticsSettings, ImpliedConstantReport};
pub use ensemble::{Domain, InitialDataSpec, InitialKind, ParticleEnsemble, RngSeed};
pub use error::{Error, Result};
pub use fields::{DensityGrid, ElectricModel, FieldModel, GridSpec, MagneticModel};
pub use integrator::{ProbePolicy, ProbeTrajectory, Scheme, SimState};
pub use uniqueness::CoupledRun;
pub use vec3::Vec3;
