//! JSON request routing for the diagram front end. Transport-agnostic:
//! the HTTP server hands over method, path and body and writes back the
//! returned status and body.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{load_source, solve, solve_request, ErrorBody, ProjectSource, SolveOptions, SolveRequest, ViolationRecord};
use crate::network::spec::ComponentKind;
use crate::network::{ComponentId, ComponentSpec, LineSpec, Mode, Network, NetworkError, Placement, Point, PortRef, RouteChanges};
use crate::persistence::{self, ComponentRecord, LineRecord, ProjectDocument};

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub status: u16,
    pub body: Value,
}

impl Response {
    fn ok(body: impl Serialize) -> Self {
        Self { status: 200, body: serde_json::to_value(body).expect("responses serialize") }
    }

    fn created(body: impl Serialize) -> Self {
        Self { status: 201, ..Self::ok(body) }
    }

    fn error(status: u16, name: &str, message: impl Into<String>) -> Self {
        Self::ok(ErrorBody::new(name, message)).with_status(status)
    }

    fn with_status(mut self, status: u16) -> Self {
        self.status = status;
        self
    }

    fn unknown_session() -> Self {
        Self::error(404, "UnknownSession", "no such session")
    }

    fn unknown_route(method: &str, path: &str) -> Self {
        Self::error(404, "UnknownRoute", format!("no route for {method} {path}"))
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::error(400, "ParseError", message)
    }
}

impl From<NetworkError> for Response {
    fn from(e: NetworkError) -> Self {
        let status = match e {
            NetworkError::UnknownComponent(_) => 404,
            NetworkError::BusBarConnected(_)
            | NetworkError::PortOccupied { .. }
            | NetworkError::LineToLineConnection(_) => 409,
            _ => 422,
        };
        Response::error(status, e.name(), e.to_string())
    }
}

/// What an edit changed, so the canvas can patch itself.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Delta {
    pub created: Vec<ComponentId>,
    pub removed: Vec<ComponentId>,
    pub updated: Vec<ComponentId>,
    pub routes: RouteChanges,
    /// Current records of created and updated components.
    pub components: Vec<ComponentRecord>,
    pub lines: Vec<LineRecord>,
}

impl Delta {
    fn snapshot(mut self, net: &Network) -> Self {
        let touched: BTreeSet<ComponentId> =
            self.created.iter().chain(&self.updated).chain(self.routes.keys()).copied().collect();
        let doc = ProjectDocument::from_network(net);
        self.components = doc.components.into_iter().filter(|c| touched.contains(&c.id)).collect();
        self.lines = doc.lines.into_iter().filter(|l| touched.contains(&l.id)).collect();
        self
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum NewSession {
    Source(ProjectSource),
    Blank { mode: Mode },
}

#[derive(Deserialize)]
struct NewComponent {
    kind: ComponentKind,
    #[serde(default)]
    spec: Option<Value>,
    #[serde(default)]
    properties: Option<BTreeMap<String, String>>,
    placement: Placement,
    #[serde(default)]
    label: String,
}

#[derive(Deserialize)]
struct NewLine {
    end_a: PortRef,
    end_b: PortRef,
    #[serde(default)]
    spec: Option<LineSpec>,
    #[serde(default)]
    properties: Option<BTreeMap<String, String>>,
    #[serde(default)]
    label: String,
}

#[derive(Deserialize)]
struct Target {
    to: Point,
}

#[derive(Deserialize)]
struct SavePath {
    path: PathBuf,
}

#[derive(Deserialize)]
struct ModeChange {
    mode: Mode,
}

#[derive(Deserialize)]
struct SessionSolve {
    #[serde(default)]
    mode: Option<Mode>,
    #[serde(flatten)]
    options: SolveOptions,
}

type Session = Arc<Mutex<Network>>;

/// In-memory editing sessions keyed by a numeric id. Edits within a
/// session are serialized; solves work on a snapshot.
#[derive(Debug, Default)]
pub struct Service {
    sessions: Mutex<BTreeMap<u64, Session>>,
    next_session: Mutex<u64>,
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> Result<T, Response> {
    let text = if body.trim().is_empty() { "{}" } else { body };
    serde_json::from_str(text).map_err(|e| Response::bad_request(e.to_string()))
}

fn component_id(segment: &str) -> Result<ComponentId, Response> {
    segment.parse::<u64>().map(ComponentId).map_err(|_| Response::bad_request(format!("bad component id `{segment}`")))
}

fn network_summary(id: u64, net: &Network) -> Value {
    json!({
        "session": id,
        "catalog": net.mode().catalog(),
        "project": ProjectDocument::from_network(net),
    })
}

impl Service {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session lock").len()
    }

    /// Dispatch one request. `path` excludes any query string.
    pub fn handle(&self, method: &str, path: &str, body: &str) -> Response {
        let parts: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        let result = match (method, parts.as_slice()) {
            ("GET", ["catalog"]) => Ok(Response::ok(catalog())),
            ("POST", ["solve"]) => parse::<SolveRequest>(body).map(|req| Response::ok(solve_request(&req))),
            ("POST", ["sessions"]) => self.open(body),
            (_, ["sessions", sid, rest @ ..]) => match sid.parse::<u64>() {
                Ok(sid) => self.session_route(method, sid, rest, body),
                Err(_) => Err(Response::unknown_session()),
            },
            _ => Err(Response::unknown_route(method, path)),
        };
        result.unwrap_or_else(|e| e)
    }

    fn open(&self, body: &str) -> Result<Response, Response> {
        let net = match parse::<NewSession>(body)? {
            NewSession::Blank { mode } => Network::new(mode),
            NewSession::Source(src) => {
                load_source(&src, None).map_err(|e| Response::error(422, e.name(), e.to_string()))?
            }
        };
        let id = {
            let mut next = self.next_session.lock().expect("session lock");
            *next += 1;
            *next
        };
        let summary = network_summary(id, &net);
        self.sessions.lock().expect("session lock").insert(id, Arc::new(Mutex::new(net)));
        Ok(Response::created(summary))
    }

    fn session_route(&self, method: &str, sid: u64, rest: &[&str], body: &str) -> Result<Response, Response> {
        let session = {
            let mut sessions = self.sessions.lock().expect("session lock");
            if method == "DELETE" && rest.is_empty() {
                return sessions
                    .remove(&sid)
                    .map(|_| Response::ok(json!({ "closed": sid })))
                    .ok_or_else(Response::unknown_session);
            }
            sessions.get(&sid).cloned().ok_or_else(Response::unknown_session)?
        };
        if let ("POST", ["solve"]) = (method, rest) {
            let req: SessionSolve = parse(body)?;
            let mut snapshot = session.lock().expect("session lock").clone();
            if let Some(m) = req.mode {
                snapshot.set_mode(m)?;
            }
            return Ok(Response::ok(solve(&snapshot, &req.options)));
        }
        let mut guard = session.lock().expect("session lock");
        let net = &mut *guard;
        match (method, rest) {
            ("GET", []) => Ok(Response::ok(network_summary(sid, net))),
            ("GET", ["validate"]) => {
                let v: Vec<ViolationRecord> = net.validate().iter().map(ViolationRecord::from).collect();
                Ok(Response::ok(json!({ "valid": v.is_empty(), "violations": v })))
            }
            ("POST", ["save"]) => {
                let SavePath { path } = parse(body)?;
                persistence::save_project(net, &path).map_err(|e| Response::error(422, e.name(), e.to_string()))?;
                Ok(Response::ok(json!({ "saved": path })))
            }
            ("POST", ["mode"]) => {
                let ModeChange { mode } = parse(body)?;
                net.set_mode(mode)?;
                Ok(Response::ok(network_summary(sid, net)))
            }
            ("POST", ["components"]) => add_component(net, body),
            ("POST", ["lines"]) => add_line(net, body),
            ("DELETE", ["components", cid]) => {
                let removed = net.remove_component(component_id(cid)?)?;
                let delta = Delta { removed: removed.into_iter().collect(), ..Delta::default() };
                Ok(Response::ok(delta))
            }
            ("POST", ["components", cid, "rotate"]) => {
                let id = component_id(cid)?;
                let (_, routes) = net.rotate_component(id)?;
                Ok(Response::ok(Delta { updated: vec![id], routes, ..Delta::default() }.snapshot(net)))
            }
            ("POST", ["components", cid, "move"]) => {
                let id = component_id(cid)?;
                let Target { to } = parse(body)?;
                let routes = net.move_component(id, to)?;
                Ok(Response::ok(Delta { updated: vec![id], routes, ..Delta::default() }.snapshot(net)))
            }
            ("POST", ["components", cid, "copy"]) => {
                let Target { to } = parse(body)?;
                let new = net.copy_component(component_id(cid)?, to)?;
                Ok(Response::created(Delta { created: vec![new], ..Delta::default() }.snapshot(net)))
            }
            ("PUT", ["components", cid, "properties"]) => {
                let id = component_id(cid)?;
                let props: BTreeMap<String, String> = parse(body)?;
                if net.line(id).is_some() {
                    net.set_line_properties(id, &props)?;
                } else {
                    net.set_properties(id, &props)?;
                }
                Ok(Response::ok(Delta { updated: vec![id], ..Delta::default() }.snapshot(net)))
            }
            _ => Err(Response::unknown_route(method, &format!("/sessions/{sid}/{}", rest.join("/")))),
        }
    }
}

fn add_component(net: &mut Network, body: &str) -> Result<Response, Response> {
    let req: NewComponent = parse(body)?;
    let spec = match (req.spec, req.properties) {
        (Some(spec), None) => serde_json::from_value::<ComponentSpec>(json!({ "kind": req.kind, "spec": spec }))
            .map_err(|e| Response::bad_request(e.to_string()))?,
        (None, Some(props)) => ComponentSpec::from_properties(req.kind, &props).map_err(NetworkError::from)?,
        _ => return Err(Response::bad_request("give exactly one of `spec` or `properties`")),
    };
    let id = net.add_labeled(spec, req.placement, req.label)?;
    Ok(Response::created(Delta { created: vec![id], ..Delta::default() }.snapshot(net)))
}

fn add_line(net: &mut Network, body: &str) -> Result<Response, Response> {
    let req: NewLine = parse(body)?;
    let spec = match (req.spec, req.properties) {
        (Some(spec), None) => spec,
        (None, Some(props)) => LineSpec::from_properties(&props).map_err(NetworkError::from)?,
        (None, None) => LineSpec::connecting(),
        _ => return Err(Response::bad_request("give at most one of `spec` or `properties`")),
    };
    let id = net.add_labeled_line(req.end_a, req.end_b, spec, req.label)?;
    Ok(Response::created(Delta { created: vec![id], ..Delta::default() }.snapshot(net)))
}

/// Component kinds available per mode.
pub fn catalog() -> Value {
    let modes: BTreeMap<&str, Vec<ComponentKind>> =
        [Mode::PerUnit, Mode::PowerFlow, Mode::StateEstimation].into_iter().map(|m| (m.name(), m.catalog())).collect();
    json!({ "modes": modes, "methods": { "power-flow": ["nr", "gs"], "state-estimation": ["wls", "fdse"], "per-unit": [] } })
}
