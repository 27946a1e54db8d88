//! Closed-loop simulation of the nonlinear plant with local observers,
//! injected sensor faults and online reconfiguration.

pub mod control;
mod engine;
pub mod log;
pub mod scenario;

pub use control::{controller_gains, nominal_controller, place_poles, ControllerConfig};
pub use engine::{active_at_diagnosis, diagnosis_inputs, measure, run_scenario, run_scenario_file, Measurement};
pub use log::{Event, EventKind, RecoveryVerdict, TrajectoryLog};
pub use scenario::{desk_plant, desk_scenario, Disturbance, OutputPaths, PlantSource, Scenario};
