//! Sample-by-sample execution of a schedule with operator corrections.

mod simulate;
mod strategy;

pub use self::simulate::{
    scripted_operator, simulate_execution, Adversary, AdversaryMode, AgentStep, Decision, ExecutionTrace,
    NoCorrection, OperatorModel, Simulation, SimulationSummary, StepRecord, Supervisor, DIVERGENCE_FACTOR,
};
pub use self::strategy::{coordinate, high_conf_step, response_step, speed_factors, Speed};
