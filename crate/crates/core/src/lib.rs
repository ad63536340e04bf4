//! Simulation and analysis toolkit for a multistable slow-fast model of
//! seizure dynamics.
//!
//! * [`model`]: parameters, vector field, attractor catalog.
//! * [`forcing`] and [`integrator`]: exogenous inputs and fixed-step RK4.
//! * [`analysis`]: region-of-attraction predicates, recovery-rate bound,
//!   excitability estimator, recovery time.
//! * [`probe`]: periodic pulse probing and early-warning detection.
//! * [`control`]: event-latched feedback.
//! * [`scenario`]: scenario files, the built-in scenario registry, sweeps and
//!   Monte-Carlo basin estimates.

pub mod analysis;
pub mod control;
pub mod forcing;
pub mod integrator;
pub mod model;
pub mod probe;
pub mod scenario;

pub use analysis::{
    check_envelope, estimate_sigma, mu_bound, recovery_time, region_membership, RegionLabel,
    RegionMembership,
};
pub use control::ControlPolicy;
pub use forcing::{Channel, ForcingProgram, Impulse, NoiseSpec, Pulse};
pub use integrator::{simulate, IntegratorConfig, IntegratorError, SimulationOutput, Trajectory};
pub use model::{attractor_catalog, f_value, vector_field, ModelParams, SystemState};
pub use probe::{DetectionRecord, ProbeSchedule};
pub use scenario::{run_scenario, RunContext, RunSummary, Scenario, ScenarioError, ScenarioRegistry, ScenarioSpec};
