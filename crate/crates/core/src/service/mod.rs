//! Headless entry points shared by the command line and the HTTP service:
//! one solve routine over a validated network, and a transport-agnostic
//! JSON request router.

mod api;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::estimation::{self, EstimatorConfig};
use crate::network::{ComponentId, Mode, Network, Violation};
use crate::perunit;
use crate::persistence::{self, ProjectDocument};
use crate::powerflow::{
    self, extract_bus_system, BranchOrigin, BusSystem, GaussSeidelConfig, NewtonRaphsonConfig,
    SlackPolicy,
};
use crate::trace::{render_text, SolveTrace, DEFAULT_PRECISION};

pub use api::{Response, Service};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gs,
    Nr,
    Wls,
    Fdse,
}

impl Method {
    pub fn mode(self) -> Mode {
        match self {
            Method::Gs | Method::Nr => Mode::PowerFlow,
            Method::Wls | Method::Fdse => Mode::StateEstimation,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Gs => "gs",
            Method::Nr => "nr",
            Method::Wls => "wls",
            Method::Fdse => "fdse",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gs" | "gauss-seidel" => Ok(Method::Gs),
            "nr" | "newton-raphson" => Ok(Method::Nr),
            "wls" => Ok(Method::Wls),
            "fdse" | "fd-se" => Ok(Method::Fdse),
            other => Err(format!("unknown method `{other}`")),
        }
    }
}

/// Solver overrides; anything left `None` takes the solver default.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    #[serde(default)]
    pub method: Option<Method>,
    #[serde(default)]
    pub iterations: Option<usize>,
    #[serde(default)]
    pub tolerance: Option<f64>,
    #[serde(default)]
    pub acceleration: Option<f64>,
    /// Decimal places of the rendered trace.
    #[serde(default)]
    pub precision: Option<usize>,
}

/// Where a stateless solve gets its project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProjectSource {
    Path { path: PathBuf },
    Inline { document: ProjectDocument },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRequest {
    pub project: ProjectSource,
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(flatten)]
    pub options: SolveOptions,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Invalid,
    Failed,
}

impl Status {
    /// Process exit code of the command line for this outcome.
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Invalid => 2,
            Status::Failed => 3,
        }
    }
}

/// Machine-readable error: a module error name and a human message.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>, message: impl Into<String>) -> Self {
        Self { error: error.into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationRecord {
    pub name: String,
    pub detail: Value,
}

impl From<&Violation> for ViolationRecord {
    fn from(v: &Violation) -> Self {
        Self { name: v.name().into(), detail: serde_json::to_value(v).expect("violations serialize") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlayValue {
    pub name: String,
    pub value: f64,
    pub unit: String,
}

/// Display values for one drawn object.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlayEntry {
    pub component: ComponentId,
    /// Ready-made canvas label.
    pub text: String,
    pub values: Vec<OverlayValue>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Overlay {
    pub entries: Vec<OverlayEntry>,
}

impl Overlay {
    fn push(&mut self, component: ComponentId, values: Vec<(&str, f64, &str)>, text: String) {
        self.entries.push(OverlayEntry {
            component,
            text,
            values: values
                .into_iter()
                .map(|(n, v, u)| OverlayValue { name: n.into(), value: v, unit: u.into() })
                .collect(),
        });
    }

    pub fn entry(&self, id: ComponentId) -> Option<&OverlayEntry> {
        self.entries.iter().find(|e| e.component == id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResponse {
    pub status: Status,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    pub violations: Vec<ViolationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solution: Option<Value>,
    /// Present exactly when `status` is ok.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub overlay: Option<Overlay>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_text: Option<String>,
}

impl SolveResponse {
    fn bare(status: Status, mode: Mode, method: Option<Method>) -> Self {
        Self {
            status,
            mode,
            method,
            violations: Vec::new(),
            error: None,
            solution: None,
            overlay: None,
            trace_text: None,
        }
    }

    fn invalid(mode: Mode, method: Option<Method>, error: ErrorBody) -> Self {
        Self { error: Some(error), ..Self::bare(Status::Invalid, mode, method) }
    }

    fn failed(mode: Mode, method: Option<Method>, error: ErrorBody) -> Self {
        Self { error: Some(error), ..Self::bare(Status::Failed, mode, method) }
    }
}

/// Resolve the method for the network's mode, rejecting mismatches.
pub fn method_for(mode: Mode, method: Option<Method>) -> Result<Option<Method>, ErrorBody> {
    match (mode, method) {
        (Mode::PerUnit, None) => Ok(None),
        (Mode::PerUnit, Some(m)) => Err(ErrorBody::new(
            "MethodModeMismatch",
            format!("per-unit mode takes no method, got `{m}`"),
        )),
        (Mode::PowerFlow, None) => Ok(Some(Method::Nr)),
        (Mode::StateEstimation, None) => Ok(Some(Method::Wls)),
        (mode, Some(m)) if m.mode() == mode => Ok(Some(m)),
        (mode, Some(m)) => Err(ErrorBody::new(
            "MethodModeMismatch",
            format!("method `{m}` belongs to {} mode, not {mode}", m.mode()),
        )),
    }
}

fn finish(
    mut resp: SolveResponse,
    converged: bool,
    solution: Value,
    overlay: Overlay,
    trace: &SolveTrace,
    precision: usize,
) -> SolveResponse {
    resp.solution = Some(solution);
    resp.trace_text = Some(render_text(trace, precision));
    if converged {
        resp.overlay = Some(overlay);
    } else {
        resp.status = Status::Failed;
        resp.error = Some(ErrorBody::new("NotConverged", "iteration limit reached before tolerance"));
    }
    resp
}

/// Validate `net` and run the solver of its mode.
pub fn solve(net: &Network, options: &SolveOptions) -> SolveResponse {
    let mode = net.mode();
    let method = match method_for(mode, options.method) {
        Ok(m) => m,
        Err(e) => return SolveResponse::invalid(mode, options.method, e),
    };
    let violations = net.validate();
    if !violations.is_empty() {
        let mut resp = SolveResponse::bare(Status::Invalid, mode, method);
        resp.violations = violations.iter().map(ViolationRecord::from).collect();
        return resp;
    }
    let precision = options.precision.unwrap_or(DEFAULT_PRECISION);
    let resp = SolveResponse::bare(Status::Ok, mode, method);
    match (mode, method) {
        (Mode::PerUnit, _) => match perunit::solve_per_unit(net) {
            Ok((report, trace)) => {
                let overlay = per_unit_overlay(&report);
                let solution = serde_json::to_value(&report).expect("report serializes");
                finish(resp, true, solution, overlay, &trace, precision)
            }
            Err(e) => SolveResponse::failed(mode, method, ErrorBody::new(e.name(), e.to_string())),
        },
        (Mode::PowerFlow, Some(m)) => solve_power_flow(net, m, options, resp, precision),
        (Mode::StateEstimation, Some(m)) => solve_estimation(net, m, options, resp, precision),
        _ => unreachable!("method_for pairs every solving mode with a method"),
    }
}

fn solve_power_flow(
    net: &Network,
    method: Method,
    options: &SolveOptions,
    resp: SolveResponse,
    precision: usize,
) -> SolveResponse {
    let fail = |e: powerflow::PowerFlowError| {
        SolveResponse::failed(Mode::PowerFlow, Some(method), ErrorBody::new(e.name(), e.to_string()))
    };
    let sys = match extract_bus_system(net, SlackPolicy::Required) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let y = match sys.ybus() {
        Ok(y) => y,
        Err(e) => return fail(e),
    };
    let result = match method {
        Method::Gs => {
            let mut cfg = GaussSeidelConfig::default();
            cfg.max_iterations = options.iterations.unwrap_or(cfg.max_iterations);
            cfg.tolerance = options.tolerance.unwrap_or(cfg.tolerance);
            cfg.acceleration = options.acceleration.unwrap_or(cfg.acceleration);
            powerflow::gauss_seidel(&y, &sys.buses, &sys.branches, &cfg)
        }
        _ => {
            let mut cfg = NewtonRaphsonConfig::default();
            cfg.max_iterations = options.iterations.unwrap_or(cfg.max_iterations);
            cfg.tolerance = options.tolerance.unwrap_or(cfg.tolerance);
            powerflow::newton_raphson(&y, &sys.buses, &sys.branches, &cfg)
        }
    };
    match result {
        Ok((sol, trace)) => {
            let overlay = state_overlay(&sys, &sol.v, &sol.theta);
            let converged = sol.converged;
            let solution = json!({ "buses": sys.buses, "branches": sys.branches, "warnings": sys.warnings, "result": sol });
            finish(resp, converged, solution, overlay, &trace, precision)
        }
        Err(e) => fail(e),
    }
}

fn solve_estimation(
    net: &Network,
    method: Method,
    options: &SolveOptions,
    resp: SolveResponse,
    precision: usize,
) -> SolveResponse {
    let fail = |name: &str, msg: String| {
        SolveResponse::failed(Mode::StateEstimation, Some(method), ErrorBody::new(name, msg))
    };
    let sys = match extract_bus_system(net, SlackPolicy::ReferenceFallback) {
        Ok(s) => s,
        Err(e) => return fail(e.name(), e.to_string()),
    };
    let y = match sys.ybus() {
        Ok(y) => y,
        Err(e) => return fail(e.name(), e.to_string()),
    };
    let set = match estimation::meters_to_measurements(net, &sys) {
        Ok(s) => s,
        Err(e) => return fail(e.name(), e.to_string()),
    };
    let mut cfg = if method == Method::Fdse { EstimatorConfig::fdse() } else { EstimatorConfig::wls() };
    cfg.max_iterations = options.iterations.unwrap_or(cfg.max_iterations);
    cfg.tolerance = options.tolerance.unwrap_or(cfg.tolerance);
    let refs = sys.slack_buses();
    let result = if method == Method::Fdse {
        estimation::fdse_estimate(&set, &y, &sys.branches, &refs, None, &cfg)
    } else {
        estimation::wls_estimate(&set, &y, &sys.branches, &refs, None, &cfg)
    };
    match result {
        Ok((est, trace)) => {
            let report = estimation::residual_report(Some(&est), &set).expect("estimate matches its set");
            let mut overlay = state_overlay(&sys, &est.v, &est.theta);
            let mut per_meter: std::collections::BTreeMap<ComponentId, Vec<&estimation::ResidualEntry>> =
                Default::default();
            for e in &report.entries {
                if let Some(meter) = e.meter {
                    per_meter.entry(meter).or_default().push(e);
                }
            }
            for (meter, entries) in per_meter {
                let mut values = Vec::new();
                let mut text = Vec::new();
                for e in entries {
                    let name = format!("{:?}", e.kind);
                    values.push((format!("{name} measured"), e.measured, "pu"));
                    values.push((format!("{name} residual"), e.residual, "pu"));
                    values.push((format!("{name} normalized"), e.normalized, ""));
                    text.push(format!("{name} {:.4} (r {:+.2e})", e.measured, e.residual));
                }
                overlay.push(meter, values.iter().map(|(n, v, u)| (n.as_str(), *v, *u)).collect(), text.join(", "));
            }
            let converged = est.converged;
            let solution = json!({ "buses": sys.buses, "measurements": set, "estimate": est, "residuals": report });
            finish(resp, converged, solution, overlay, &trace, precision)
        }
        Err(e) => fail(e.name(), e.to_string()),
    }
}

/// Bus voltages on every bus-bar and terminal flows on every branch.
fn state_overlay(sys: &BusSystem, v: &[f64], theta: &[f64]) -> Overlay {
    let mut overlay = Overlay::default();
    for bus in &sys.buses {
        let (m, a) = (v[bus.index], theta[bus.index].to_degrees());
        for &bar in &bus.bus_bars {
            overlay.push(bar, vec![("V", m, "pu"), ("angle", a, "deg")], format!("{m:.4}∠{a:.2}°"));
        }
    }
    for f in powerflow::compute_branch_flows(v, theta, &sys.branches) {
        let id = match f.origin {
            BranchOrigin::Line(id) | BranchOrigin::Transformer(id) => id,
            BranchOrigin::Synthetic => continue,
        };
        overlay.push(
            id,
            vec![("P from", f.p_from, "pu"), ("Q from", f.q_from, "pu"), ("P to", f.p_to, "pu"), ("Q to", f.q_to, "pu")],
            format!("{:.4}+j{:.4}", f.p_from, f.q_from),
        );
    }
    overlay
}

fn per_unit_overlay(report: &perunit::PerUnitReport) -> Overlay {
    let mut overlay = Overlay::default();
    for e in &report.entries {
        let text = e
            .values
            .iter()
            .map(|v| format!("{} {:.4} pu", v.name, v.per_unit))
            .collect::<Vec<_>>()
            .join(", ");
        overlay.push(e.component, e.values.iter().map(|v| (v.name.as_str(), v.per_unit, "pu")).collect(), text);
    }
    overlay
}

/// Load a project for a stateless solve.
pub fn load_source(source: &ProjectSource, mode: Option<Mode>) -> Result<Network, persistence::PersistenceError> {
    match source {
        ProjectSource::Path { path } => persistence::load_project(path, mode),
        ProjectSource::Inline { document } => document.clone().into_network(mode),
    }
}

/// Solve a request end to end. Loading problems make the response invalid.
pub fn solve_request(req: &SolveRequest) -> SolveResponse {
    match load_source(&req.project, req.mode) {
        Ok(net) => solve(&net, &req.options),
        Err(e) => SolveResponse::invalid(
            req.mode.unwrap_or(Mode::PowerFlow),
            req.options.method,
            ErrorBody::new(e.name(), e.to_string()),
        ),
    }
}
