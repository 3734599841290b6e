//! State estimation from meter readings: measurement model, Jacobian,
//! weighted-least-squares and fast-decoupled estimators, residual analysis.

mod solvers;

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use serde::Serialize;
use thiserror::Error;

use crate::network::spec::{ComponentSpec, MeteredQuantity};
use crate::network::{AttachKind, ComponentId, Network, NetworkError};
use crate::powerflow::equations::{self, End};
use crate::powerflow::extract::NodeKey;
use crate::powerflow::{AdmittanceMatrix, Branch, BusSystem};

pub use solvers::{fdse_estimate, wls_estimate, EstimatorConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum MeasurementKind {
    Pflow,
    Qflow,
    Pinj,
    Qinj,
    Vmag,
}

impl MeasurementKind {
    pub fn is_flow(self) -> bool {
        matches!(self, MeasurementKind::Pflow | MeasurementKind::Qflow)
    }

    /// Belongs to the active-power (angle) partition.
    pub fn is_active(self) -> bool {
        matches!(self, MeasurementKind::Pflow | MeasurementKind::Pinj)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "at", rename_all = "lowercase")]
pub enum Location {
    Branch { branch: usize, end: End },
    Bus { bus: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Measurement {
    pub kind: MeasurementKind,
    pub location: Location,
    /// Per-unit.
    pub value: f64,
    pub sigma: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meter: Option<ComponentId>,
}

impl Measurement {
    pub fn new(kind: MeasurementKind, location: Location, value: f64, sigma: f64) -> Self {
        Self { kind, location, value, sigma, meter: None }
    }

    pub fn weight(&self) -> f64 {
        1.0 / (self.sigma * self.sigma)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimationError {
    #[error("NoMeasurements: the measurement set is empty")]
    NoMeasurements,
    #[error("{0}")]
    Network(#[from] NetworkError),
    #[error("MeterOnConnectingLine: meter {meter} is nearest to zero-impedance line {line}")]
    MeterOnConnectingLine { meter: ComponentId, line: ComponentId },
    #[error("InvalidMeasurement: {0}")]
    InvalidMeasurement(String),
    #[error("DimensionMismatch: {0}")]
    DimensionMismatch(String),
    #[error("UnobservableSystem: {0}")]
    UnobservableSystem(String),
    #[error("Diverged: objective grew for {0} consecutive iterations")]
    Diverged(usize),
    #[error("OrderingViolation: no estimate available yet")]
    OrderingViolation,
}

impl EstimationError {
    pub fn name(&self) -> &'static str {
        match self {
            EstimationError::NoMeasurements => "NoMeasurements",
            EstimationError::Network(e) => e.name(),
            EstimationError::MeterOnConnectingLine { .. } => "MeterOnConnectingLine",
            EstimationError::InvalidMeasurement(_) => "InvalidMeasurement",
            EstimationError::DimensionMismatch(_) => "DimensionMismatch",
            EstimationError::UnobservableSystem(_) => "UnobservableSystem",
            EstimationError::Diverged(_) => "Diverged",
            EstimationError::OrderingViolation => "OrderingViolation",
        }
    }
}

/// Ordered measurements; the implied weight matrix is `diag(1/sigma²)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MeasurementSet {
    measurements: Vec<Measurement>,
}

impl MeasurementSet {
    /// Checks every kind/location pairing and sigma against an `n`-bus
    /// system with `branches` branches.
    pub fn new(measurements: Vec<Measurement>, n: usize, branches: usize) -> Result<Self, EstimationError> {
        for (k, m) in measurements.iter().enumerate() {
            if !(m.sigma.is_finite() && m.sigma > 0.0) {
                return Err(EstimationError::InvalidMeasurement(format!("measurement {k}: sigma must be > 0")));
            }
            if !m.value.is_finite() {
                return Err(EstimationError::InvalidMeasurement(format!("measurement {k}: value must be finite")));
            }
            let ok = match m.location {
                Location::Branch { branch, .. } => m.kind.is_flow() && branch < branches,
                Location::Bus { bus } => !m.kind.is_flow() && bus < n,
            };
            if !ok {
                return Err(EstimationError::InvalidMeasurement(format!(
                    "measurement {k}: {:?} cannot sit at {:?}",
                    m.kind, m.location
                )));
            }
        }
        Ok(Self { measurements })
    }

    pub fn len(&self) -> usize {
        self.measurements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measurements.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Measurement> {
        self.measurements.iter()
    }

    pub fn as_slice(&self) -> &[Measurement] {
        &self.measurements
    }

    pub fn values(&self) -> Vec<f64> {
        self.measurements.iter().map(|m| m.value).collect()
    }
}

/// Column layout of the state vector `[θ (non-reference buses); V (all)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateLayout {
    pub n: usize,
    /// Column of each bus angle, `None` for reference buses.
    pub angle_col: Vec<Option<usize>>,
    pub references: BTreeSet<usize>,
}

impl StateLayout {
    pub fn new(n: usize, references: &[usize]) -> Self {
        let references: BTreeSet<usize> = references.iter().copied().collect();
        let mut next = 0;
        let angle_col = (0..n)
            .map(|i| {
                (!references.contains(&i)).then(|| {
                    next += 1;
                    next - 1
                })
            })
            .collect();
        Self { n, angle_col, references }
    }

    pub fn angle_count(&self) -> usize {
        self.n - self.references.len()
    }

    pub fn dim(&self) -> usize {
        self.angle_count() + self.n
    }

    pub fn v_col(&self, bus: usize) -> usize {
        self.angle_count() + bus
    }
}

fn check_state(v: &[f64], theta: &[f64], ybus: &AdmittanceMatrix, branches: &[Branch]) -> Result<(), EstimationError> {
    if v.len() != ybus.n || theta.len() != ybus.n {
        return Err(EstimationError::DimensionMismatch(format!(
            "state has {}/{} entries for {} buses",
            v.len(),
            theta.len(),
            ybus.n
        )));
    }
    if let Some(k) = branches.iter().position(|b| b.from >= ybus.n || b.to >= ybus.n) {
        return Err(EstimationError::DimensionMismatch(format!("branch {k} references a missing bus")));
    }
    Ok(())
}

fn check_set(set: &MeasurementSet, n: usize, branches: &[Branch]) -> Result<(), EstimationError> {
    for m in set.iter() {
        let ok = match m.location {
            Location::Branch { branch, .. } => branch < branches.len(),
            Location::Bus { bus } => bus < n,
        };
        if !ok {
            return Err(EstimationError::DimensionMismatch(format!("{:?} outside the system", m.location)));
        }
    }
    Ok(())
}

/// Predicted value of each measurement at state `(v, theta)`.
pub fn measurement_function(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
    branches: &[Branch],
    set: &MeasurementSet,
) -> Result<Vec<f64>, EstimationError> {
    check_state(v, theta, ybus, branches)?;
    check_set(set, ybus.n, branches)?;
    let (p, q) = equations::injections(ybus, v, theta);
    Ok(set
        .iter()
        .map(|m| match (m.kind, m.location) {
            (MeasurementKind::Pinj, Location::Bus { bus }) => p[bus],
            (MeasurementKind::Qinj, Location::Bus { bus }) => q[bus],
            (MeasurementKind::Vmag, Location::Bus { bus }) => v[bus],
            (MeasurementKind::Pflow, Location::Branch { branch, end }) => {
                equations::branch_flow(&branches[branch], v, theta, end).0
            }
            (MeasurementKind::Qflow, Location::Branch { branch, end }) => {
                equations::branch_flow(&branches[branch], v, theta, end).1
            }
            _ => unreachable!("MeasurementSet checks kind/location pairs"),
        })
        .collect())
}

/// `∂h/∂[θ; V]` with reference-bus angle columns removed.
pub fn measurement_jacobian(
    v: &[f64],
    theta: &[f64],
    ybus: &AdmittanceMatrix,
    branches: &[Branch],
    set: &MeasurementSet,
    layout: &StateLayout,
) -> Result<DMatrix<f64>, EstimationError> {
    check_state(v, theta, ybus, branches)?;
    check_set(set, ybus.n, branches)?;
    if layout.n != ybus.n {
        return Err(EstimationError::DimensionMismatch(format!(
            "layout for {} buses, system has {}",
            layout.n, ybus.n
        )));
    }
    let n = ybus.n;
    let (p, q) = equations::injections(ybus, v, theta);
    let mut h = DMatrix::zeros(set.len(), layout.dim());
    for (r, m) in set.iter().enumerate() {
        let put = |bus: usize, d_theta: f64, d_v: f64, h: &mut DMatrix<f64>| {
            if let Some(c) = layout.angle_col[bus] {
                h[(r, c)] += d_theta;
            }
            h[(r, layout.v_col(bus))] += d_v;
        };
        match (m.kind, m.location) {
            (MeasurementKind::Vmag, Location::Bus { bus }) => put(bus, 0.0, 1.0, &mut h),
            (MeasurementKind::Pinj | MeasurementKind::Qinj, Location::Bus { bus }) => {
                for j in 0..n {
                    let y = ybus.get(bus, j);
                    if j != bus && y.re == 0.0 && y.im == 0.0 {
                        continue;
                    }
                    let (dp_dt, dp_dv, dq_dt, dq_dv) = equations::injection_partials(ybus, v, theta, &p, &q, bus, j);
                    if m.kind == MeasurementKind::Pinj {
                        put(j, dp_dt, dp_dv, &mut h);
                    } else {
                        put(j, dq_dt, dq_dv, &mut h);
                    }
                }
            }
            (kind, Location::Branch { branch, end }) => {
                let br = &branches[branch];
                let (k, far) = equations::branch_ends(br, end);
                let (dp, dq) = equations::branch_flow_partials(br, v, theta, end);
                let d = if kind == MeasurementKind::Pflow { dp } else { dq };
                put(k, d[0], d[2], &mut h);
                put(far, d[1], d[3], &mut h);
            }
            _ => unreachable!("MeasurementSet checks kind/location pairs"),
        }
    }
    Ok(h)
}

/// Turn every meter into measurements. A meter belongs to the nearest line
/// or bus-bar; on a line it reads the flow into the line at the nearer
/// end, on a bus-bar the bus injection.
pub fn meters_to_measurements(net: &Network, sys: &BusSystem) -> Result<MeasurementSet, EstimationError> {
    let mut out = Vec::new();
    for c in net.components() {
        let ComponentSpec::Meter(spec) = &c.spec else { continue };
        let at = c.placement.position;
        let target = net.nearest_attachable(at, &[AttachKind::Line, AttachKind::BusBar])?;
        let (flow_at, bus) = if let Some(line) = net.line(target) {
            let branch = sys
                .branch_of_line(line.id)
                .ok_or(EstimationError::MeterOnConnectingLine { meter: c.id, line: line.id })?;
            let a = line.route.first().map(|s| s.from).expect("routed line");
            let b = line.route.last().map(|s| s.to).expect("routed line");
            let end = if at.distance(a) <= at.distance(b) { End::From } else { End::To };
            let near = equations::branch_ends(&sys.branches[branch], end).0;
            (Some((branch, end)), near)
        } else {
            let bus = sys.node_bus[&NodeKey { component: target, terminal: 0 }];
            (None, bus)
        };
        for (&quantity, reading) in &spec.readings {
            let kind = match (quantity, flow_at.is_some()) {
                (MeteredQuantity::P, true) => MeasurementKind::Pflow,
                (MeteredQuantity::Q, true) => MeasurementKind::Qflow,
                (MeteredQuantity::P, false) => MeasurementKind::Pinj,
                (MeteredQuantity::Q, false) => MeasurementKind::Qinj,
                (MeteredQuantity::Vmag, _) => MeasurementKind::Vmag,
            };
            let location = match (kind, flow_at) {
                (MeasurementKind::Pflow | MeasurementKind::Qflow, Some((branch, end))) => {
                    Location::Branch { branch, end }
                }
                _ => Location::Bus { bus },
            };
            out.push(Measurement {
                kind,
                location,
                value: reading.value,
                sigma: reading.sigma_or_default(quantity),
                meter: Some(c.id),
            });
        }
    }
    if out.is_empty() {
        return Err(EstimationError::NoMeasurements);
    }
    MeasurementSet::new(out, sys.bus_count(), sys.branches.len())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateEstimate {
    pub v: Vec<f64>,
    /// Radians; reference angles are exactly 0.
    pub theta: Vec<f64>,
    /// `z - h(x̂)` in measurement order.
    pub residuals: Vec<f64>,
    /// `Σ residual² / sigma²`.
    pub objective: f64,
    pub converged: bool,
    pub iterations_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualEntry {
    pub index: usize,
    pub kind: MeasurementKind,
    pub location: Location,
    pub measured: f64,
    pub estimated: f64,
    pub residual: f64,
    pub normalized: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meter: Option<ComponentId>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
    /// Index of the largest `|normalized|` residual.
    pub largest: Option<usize>,
}

/// Residuals of `estimate` against `set`. `None` means no estimate has been
/// produced yet.
pub fn residual_report(estimate: Option<&StateEstimate>, set: &MeasurementSet) -> Result<ResidualReport, EstimationError> {
    let est = estimate.ok_or(EstimationError::OrderingViolation)?;
    if est.residuals.len() != set.len() {
        return Err(EstimationError::DimensionMismatch(format!(
            "{} residuals for {} measurements",
            est.residuals.len(),
            set.len()
        )));
    }
    let entries: Vec<ResidualEntry> = set
        .iter()
        .zip(&est.residuals)
        .enumerate()
        .map(|(index, (m, &r))| ResidualEntry {
            index,
            kind: m.kind,
            location: m.location,
            measured: m.value,
            estimated: m.value - r,
            residual: r,
            normalized: r / m.sigma,
            meter: m.meter,
        })
        .collect();
    let largest = entries
        .iter()
        .max_by(|a, b| a.normalized.abs().total_cmp(&b.normalized.abs()))
        .map(|e| e.index);
    Ok(ResidualReport { entries, largest })
}

#[cfg(test)]
mod tests;
