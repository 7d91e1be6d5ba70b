//! Coupled Vlasov / power-law fluid simulator on the periodic unit box.
//!
//! Particles carry the kinetic distribution, the fluid is a pseudo-spectral
//! Galerkin field, and the two exchange momentum through a drag force.

pub mod cic;
pub mod coupling;
pub mod diagnostics;
pub mod error;
pub mod field;
pub mod fluid;
pub mod grid;
pub mod kinetic;
pub mod sum;
pub mod weak;

pub use error::{Result, SimError};
pub use field::{PhysicalField, SpectralField};
pub use fluid::{CflLimits, FluidIntegrator, FluidState, PowerLaw, Vec3};
pub use grid::GridSpec;
pub use kinetic::{InitialData, ParticleEnsemble};
pub use coupling::{DragMollification, MomentFields, PicardReport, StepStatus, Stepper, SystemState};
pub use diagnostics::{DecayFit, DecayMode, DiagnosticsRow};
