//! Closed-loop co-simulation: terrain, plant, controller and run logging.

mod controller;
mod log;
mod plant;
mod scenario;
mod terrain;

pub use controller::{arms_offset, ControlOutput, Controller, ControllerConfig, ForwardCommand, TaskGains};
pub use log::{CsvTable, RunLog, RunSample, CSV_VERSION_LINE};
pub use plant::{ContactState, Integrator, Load, Plant, PlantConfig, SensorReading};
pub use scenario::{build_plant, run_scenario, Scenario, ScenarioConfig, ScenarioResult, SpeedProfile};
pub use terrain::{make_terrain, TerrainKind, TerrainParams, TerrainProfile, MAX_SLOPE};

use thiserror::Error;

use crate::dynamics::DynamicsError;
use crate::estimation::EstimationError;
use crate::icc::IccError;
use crate::impedance::ImpedanceError;
use crate::friction_comp::FrictionCompError;
use crate::wbc::WbcError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("controller failed at tick {tick}: {source}")]
    Solver {
        tick: usize,
        #[source]
        source: WbcError,
    },
    #[error(transparent)]
    Estimation(#[from] EstimationError),
    #[error(transparent)]
    Icc(#[from] IccError),
    #[error(transparent)]
    Impedance(#[from] ImpedanceError),
    #[error(transparent)]
    FrictionComp(#[from] FrictionCompError),
    #[error("simulation fault: {0}")]
    Fault(String),
}
