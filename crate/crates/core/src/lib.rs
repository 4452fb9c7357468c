//! Stochastic mode reduction for a triad model with one slow mode `x`
//! coupled to a fast chaotic bath `y_1..y_n`.
//!
//! The crate provides the full model, the microcanonical fast subsystem and
//! the bath constant `M` estimated from it, the reduced `(x, E)` SDE, and
//! the statistics used to compare them.

pub mod bath;
pub mod error;
pub mod experiment;
pub mod integrate;
pub mod model;
pub mod reduced;
pub mod stats;

pub use bath::{estimate_m, run_fast_subsystem, BathOptions, BathStatistics, CompatibilityReport, FastRunOptions};
pub use error::{Error, Result};
pub use experiment::{
    reproduce, run_ensemble, simulate_to_dir, ExperimentConfig, FigureId, ModelKind, ReproduceOptions, Scale,
    StatsBundle, PUBLISHED_M,
};
pub use integrate::{integrate_trajectory, RngStream, Scheme, SdeModel, StepperConfig, TimeSeries};
pub use model::{
    builtin_paper_model, validate_conservation, FastSubsystem, FullModel, ModelParams, SystemState, TriadCoefficients,
    TriadSystem, ValidationReport, XyyTriad, YyyTriad,
};
pub use reduced::{EFloorPolicy, MProvenance, ReducedModel, ReducedParams, ReducedState};
