//! Prepared inputs shared by the solver benchmarks.

use sld_core::estimation::{self, MeasurementSet};
use sld_core::powerflow::{extract_bus_system, newton_raphson, AdmittanceMatrix, BusSystem, NewtonRaphsonConfig, SlackPolicy};
use sld_core::{fixtures, Network};

/// The 14-bus power-flow case, reduced and with its admittance matrix.
pub struct PowerFlowCase {
    pub net: Network,
    pub sys: BusSystem,
    pub ybus: AdmittanceMatrix,
}

pub fn power_flow_case() -> PowerFlowCase {
    let net = fixtures::ieee14();
    let sys = extract_bus_system(&net, SlackPolicy::Required).expect("fixture reduces");
    let ybus = sys.ybus().expect("fixture admittance");
    PowerFlowCase { net, sys, ybus }
}

/// The 14-bus case fully metered from its own power-flow solution.
pub struct EstimationCase {
    pub net: Network,
    pub sys: BusSystem,
    pub ybus: AdmittanceMatrix,
    pub set: MeasurementSet,
}

pub fn estimation_case() -> EstimationCase {
    let pf = power_flow_case();
    let (sol, _) = newton_raphson(&pf.ybus, &pf.sys.buses, &pf.sys.branches, &NewtonRaphsonConfig::default())
        .expect("fixture solves");
    let net = fixtures::metered(&pf.net, &pf.sys, &sol).expect("fixture meters");
    let sys = extract_bus_system(&net, SlackPolicy::ReferenceFallback).expect("metered case reduces");
    let ybus = sys.ybus().expect("metered admittance");
    let set = estimation::meters_to_measurements(&net, &sys).expect("meters attach");
    EstimationCase { net, sys, ybus, set }
}
