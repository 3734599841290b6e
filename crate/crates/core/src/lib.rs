//! Core of the single-line-diagram workbench: the component graph, per-unit
//! base resolution, AC power flow, state estimation, solver traces and the
//! `.sld` project format.

pub mod estimation;
pub mod fixtures;
pub mod network;
pub mod perunit;
pub mod persistence;
pub mod powerflow;
pub mod service;
pub mod trace;

pub use estimation::{EstimationError, MeasurementSet, StateEstimate};
pub use network::{ComponentId, Mode, Network, NetworkError, PortRef};
pub use perunit::{BaseAssignment, PerUnitError, PerUnitReport};
pub use powerflow::{BusSystem, PowerFlowError, PowerFlowSolution};
pub use trace::SolveTrace;
