//! Few-particle systems whose non-potential forces are projected onto a
//! non-holonomic constraint so that a chosen function of the Hamiltonian is
//! a stationary solution of the Liouville equation.

pub mod beta;
pub mod distribution;
pub mod dos;
pub mod dynamics;
pub mod error;
pub mod forces;
pub mod phase;
pub mod quadrature;
pub mod stats;
pub mod thermo;

pub use beta::BetaFamily;
pub use distribution::{
    compare_histogram, partition_function, pushforward_invariance, stationarity_residual, DensityModel,
    EnergyWindow, HistogramComparison, PhaseSampler, PushforwardReport, Residual,
};
pub use dynamics::{
    isokinetic_step, project_to_surface, run_ensemble, run_trajectory, run_trajectory_streaming, step, Ensemble,
    InitialSampler, IntegratorSpec, Method, Sample, Trajectory, TrajectoryStats,
};
pub use error::{Error, Result};
pub use forces::{BaseForce, ConstrainedSystem, ConstraintGradients};
pub use phase::{PhaseState, Potential, SystemModel};
pub use thermo::{
    entropy, first_law_residual, heat_increment, internal_energy, thermodynamic_force, LawResiduals, ThermoPoint,
    ThermoSetup,
};
