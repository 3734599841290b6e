//! AC power flow: bus/branch reduction, admittance matrix, Gauss-Seidel and
//! Newton-Raphson solvers.
//!
//! Matrices are dense. The target scale is desk-sized systems of at most a
//! few hundred buses; a sparse backend would slot in behind
//! [`AdmittanceMatrix`].

pub mod equations;
pub mod extract;
mod gauss_seidel;
mod newton;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Serialize;
use thiserror::Error;

use crate::network::{ComponentId, PortRef, Violation};
pub use extract::{extract_bus_system, NodeKey, SlackPolicy};
pub use gauss_seidel::{gauss_seidel, GaussSeidelConfig};
pub use newton::{newton_raphson, NewtonRaphsonConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

/// One electrical bus. Injections are per-unit, generation minus load.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusRecord {
    pub index: usize,
    pub kind: BusKind,
    pub p_sched: f64,
    pub q_sched: f64,
    pub v_set: f64,
    /// Radians.
    pub theta_set: f64,
    /// Constant-admittance load or charging at the bus, per-unit.
    pub shunt: Complex64,
    pub p_load: f64,
    pub q_load: f64,
    /// Generator reactive limits, per-unit.
    pub q_min: Option<f64>,
    pub q_max: Option<f64>,
    /// Components whose terminals merged into this bus.
    pub members: Vec<ComponentId>,
    pub bus_bars: Vec<ComponentId>,
}

impl BusRecord {
    /// A bare PQ bus with no injection, for building systems by hand.
    pub fn pq(index: usize, p_sched: f64, q_sched: f64) -> Self {
        Self {
            index,
            kind: BusKind::Pq,
            p_sched,
            q_sched,
            v_set: 1.0,
            theta_set: 0.0,
            shunt: Complex64::new(0.0, 0.0),
            p_load: (-p_sched).max(0.0),
            q_load: (-q_sched).max(0.0),
            q_min: None,
            q_max: None,
            members: Vec::new(),
            bus_bars: Vec::new(),
        }
    }

    pub fn slack(index: usize, v_set: f64, theta_set: f64) -> Self {
        Self { kind: BusKind::Slack, v_set, theta_set, ..Self::pq(index, 0.0, 0.0) }
    }

    pub fn pv(index: usize, p_sched: f64, v_set: f64) -> Self {
        Self { kind: BusKind::Pv, v_set, ..Self::pq(index, p_sched, 0.0) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "id", rename_all = "lowercase")]
pub enum BranchOrigin {
    Line(ComponentId),
    Transformer(ComponentId),
    /// Built directly, not from a drawn component.
    Synthetic,
}

/// Pi-model branch between two distinct buses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Branch {
    pub from: usize,
    pub to: usize,
    pub series_admittance: Complex64,
    pub shunt_susceptance_half: f64,
    pub origin: BranchOrigin,
}

impl Branch {
    pub fn from_impedance(from: usize, to: usize, r: f64, x: f64, b_total: f64) -> Self {
        Self {
            from,
            to,
            series_admittance: 1.0 / Complex64::new(r, x),
            shunt_susceptance_half: b_total / 2.0,
            origin: BranchOrigin::Synthetic,
        }
    }
}

/// Buses and branches reduced from a drawn network.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BusSystem {
    pub buses: Vec<BusRecord>,
    pub branches: Vec<Branch>,
    pub base_mva: f64,
    /// Which bus each electrical terminal belongs to.
    #[serde(skip)]
    pub node_bus: BTreeMap<NodeKey, usize>,
    pub warnings: Vec<String>,
}

impl BusSystem {
    pub fn new(buses: Vec<BusRecord>, branches: Vec<Branch>) -> Self {
        Self {
            buses,
            branches,
            base_mva: crate::network::DEFAULT_BASE_MVA,
            node_bus: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    pub fn bus_count(&self) -> usize {
        self.buses.len()
    }

    /// Admittance matrix including bus shunts.
    pub fn ybus(&self) -> Result<AdmittanceMatrix, PowerFlowError> {
        let mut y = build_ybus(&self.branches, self.buses.len())?;
        for b in &self.buses {
            y.entries[(b.index, b.index)] += b.shunt;
        }
        Ok(y)
    }

    pub fn bus_of_port(&self, port: &PortRef) -> Option<usize> {
        self.node_bus.get(&NodeKey::of_port(port)).copied()
    }

    pub fn branch_of_line(&self, line: ComponentId) -> Option<usize> {
        self.branches
            .iter()
            .position(|b| b.origin == BranchOrigin::Line(line))
    }

    pub fn slack_buses(&self) -> Vec<usize> {
        self.buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .map(|b| b.index)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    pub n: usize,
    pub entries: DMatrix<Complex64>,
}

impl AdmittanceMatrix {
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.entries[(i, j)]
    }

    /// Conductance and susceptance parts, row-major, for tracing.
    pub fn split_row_major(&self) -> (Vec<f64>, Vec<f64>) {
        let mut g = Vec::with_capacity(self.n * self.n);
        let mut b = Vec::with_capacity(self.n * self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                g.push(self.entries[(i, j)].re);
                b.push(self.entries[(i, j)].im);
            }
        }
        (g, b)
    }
}

/// Stamp pi-model branches into an n-bus admittance matrix.
pub fn build_ybus(branches: &[Branch], n: usize) -> Result<AdmittanceMatrix, PowerFlowError> {
    let mut y = DMatrix::from_element(n, n, Complex64::new(0.0, 0.0));
    for (k, br) in branches.iter().enumerate() {
        if br.from >= n || br.to >= n {
            return Err(PowerFlowError::IndexOutOfRange { branch: k, n });
        }
        let ys = br.series_admittance;
        let yh = Complex64::new(0.0, br.shunt_susceptance_half);
        y[(br.from, br.from)] += ys + yh;
        y[(br.to, br.to)] += ys + yh;
        y[(br.from, br.to)] -= ys;
        y[(br.to, br.from)] -= ys;
    }
    Ok(AdmittanceMatrix { n, entries: y })
}

/// Scheduled minus calculated injection: ΔP for every non-slack bus, then
/// ΔQ for every PQ bus, each in bus order.
pub fn power_mismatch(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
    buses: &[BusRecord],
) -> Result<Vec<f64>, PowerFlowError> {
    check_dims(v, theta, ybus, buses)?;
    let (p, q) = equations::injections(ybus, v, theta);
    let mut out: Vec<f64> = buses
        .iter()
        .filter(|b| b.kind != BusKind::Slack)
        .map(|b| b.p_sched - p[b.index])
        .collect();
    out.extend(
        buses
            .iter()
            .filter(|b| b.kind == BusKind::Pq)
            .map(|b| b.q_sched - q[b.index]),
    );
    Ok(out)
}

pub(crate) fn check_dims(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
    buses: &[BusRecord],
) -> Result<(), PowerFlowError> {
    let n = ybus.n;
    if v.len() != n || theta.len() != n || buses.len() != n {
        return Err(PowerFlowError::DimensionMismatch {
            expected: n,
            found: v.len().max(theta.len()).max(buses.len()),
        });
    }
    if buses.iter().enumerate().any(|(i, b)| b.index != i) {
        return Err(PowerFlowError::DimensionMismatch { expected: n, found: buses.len() });
    }
    Ok(())
}

pub(crate) fn inf_norm(x: &[f64]) -> f64 {
    x.iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchFlow {
    pub branch: usize,
    pub origin: BranchOrigin,
    pub from: usize,
    pub to: usize,
    pub p_from: f64,
    pub q_from: f64,
    pub p_to: f64,
    pub q_to: f64,
    pub p_loss: f64,
    pub q_loss: f64,
}

/// Terminal flows of every branch for the given state.
pub fn compute_branch_flows(v: &[f64], theta: &[f64], branches: &[Branch]) -> Vec<BranchFlow> {
    branches
        .iter()
        .enumerate()
        .map(|(k, br)| {
            let (p_from, q_from) = equations::branch_flow(br, v, theta, equations::End::From);
            let (p_to, q_to) = equations::branch_flow(br, v, theta, equations::End::To);
            BranchFlow {
                branch: k,
                origin: br.origin,
                from: br.from,
                to: br.to,
                p_from,
                q_from,
                p_to,
                q_to,
                p_loss: p_from + p_to,
                q_loss: q_from + q_to,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerFlowSolution {
    pub v: Vec<f64>,
    /// Radians.
    pub theta: Vec<f64>,
    pub p_calc: Vec<f64>,
    pub q_calc: Vec<f64>,
    pub branch_flows: Vec<BranchFlow>,
    pub converged: bool,
    pub iterations_run: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub(crate) fn assemble(
        v: Vec<f64>,
        theta: Vec<f64>,
        ybus: &AdmittanceMatrix,
        branches: &[Branch],
        converged: bool,
        iterations_run: usize,
        max_mismatch: f64,
    ) -> Self {
        let (p_calc, q_calc) = equations::injections(ybus, &v, &theta);
        let branch_flows = compute_branch_flows(&v, &theta, branches);
        Self {
            v,
            theta,
            p_calc,
            q_calc,
            branch_flows,
            converged,
            iterations_run,
            max_mismatch,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PowerFlowError {
    #[error("{}", .0.iter().map(|v| v.name()).collect::<Vec<_>>().join(", "))]
    Extraction(Vec<Violation>),
    #[error("IndexOutOfRange: branch {branch} references a bus >= {n}")]
    IndexOutOfRange { branch: usize, n: usize },
    #[error("DimensionMismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("SingularDiagonal: Y[{bus}][{bus}] is zero")]
    SingularDiagonal { bus: usize },
    #[error("SingularJacobian at iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("Diverged: mismatch grew for {0} consecutive iterations")]
    Diverged(usize),
    #[error("InvalidConfig: {0}")]
    InvalidConfig(String),
    #[error("NoSlack: the bus list has no slack bus")]
    NoSlack,
}

impl PowerFlowError {
    pub fn name(&self) -> &'static str {
        match self {
            PowerFlowError::Extraction(v) => v.first().map_or("Extraction", Violation::name),
            PowerFlowError::IndexOutOfRange { .. } => "IndexOutOfRange",
            PowerFlowError::DimensionMismatch { .. } => "DimensionMismatch",
            PowerFlowError::SingularDiagonal { .. } => "SingularDiagonal",
            PowerFlowError::SingularJacobian { .. } => "SingularJacobian",
            PowerFlowError::Diverged(_) => "Diverged",
            PowerFlowError::InvalidConfig(_) => "InvalidConfig",
            PowerFlowError::NoSlack => "NoSlack",
        }
    }
}

/// Initial state: setpoints for slack and PV buses, 1.0∠0 elsewhere.
pub(crate) fn initial_state(buses: &[BusRecord]) -> (Vec<f64>, Vec<f64>) {
    let v = buses
        .iter()
        .map(|b| if b.kind == BusKind::Pq { 1.0 } else { b.v_set })
        .collect();
    let theta = buses
        .iter()
        .map(|b| if b.kind == BusKind::Slack { b.theta_set } else { 0.0 })
        .collect();
    (v, theta)
}

pub(crate) fn ybus_payload(ybus: &AdmittanceMatrix) -> crate::trace::Payload {
    let (g, b) = ybus.split_row_major();
    crate::trace::Payload::new()
        .matrix("G", ybus.n, ybus.n, g, "pu")
        .matrix("B", ybus.n, ybus.n, b, "pu")
}

#[cfg(test)]
mod tests;
