//! Dense template registration.

pub mod energies;
pub mod register;

pub use energies::{chamfer_energy, regularizer_energies, RegularizerValues, Regularizers};
pub use register::{
    register_template, rmse_to_surface, DeformationState, EnergyBreakdown, Registration, RegistrationConfig,
    StageConfig, StageDiagnostics,
};
