//! The single-line-diagram graph: components, connection ports and lines.
//!
//! Every mutating operation either succeeds completely or leaves the
//! network untouched, so a line endpoint always resolves to a live
//! component.

pub mod geometry;
pub mod spec;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use geometry::{Placement, Point, Rotation, Segment, CANVAS_SIZE};
pub use spec::{ComponentKind, ComponentSpec, LineSpec};
pub use validate::Violation;

use geometry::{polyline_distance, point_segment_distance, reroute_line, route_line, RouteError};
use spec::PropertyError;

/// Half thickness of a drawn bus-bar; points this close to the bar's
/// centre line are enclosed by it.
pub const BUS_HALF_WIDTH: f64 = 3.0;

/// Default system power base for power-flow and estimation projects, MVA.
pub const DEFAULT_BASE_MVA: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ComponentId(pub u64);

impl fmt::Display for ComponentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Port {
    /// One of the small port rectangles of a device.
    #[serde(rename = "port")]
    Indexed(u8),
    /// Any point enclosed by a bus-bar.
    #[serde(rename = "point")]
    BusPoint(Point),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortRef {
    pub component: ComponentId,
    #[serde(flatten)]
    pub port: Port,
}

impl PortRef {
    pub fn indexed(component: ComponentId, index: u8) -> Self {
        Self { component, port: Port::Indexed(index) }
    }

    pub fn bus_point(component: ComponentId, x: f64, y: f64) -> Self {
        Self { component, port: Port::BusPoint(Point::new(x, y)) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    PerUnit,
    PowerFlow,
    StateEstimation,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::PerUnit => "per-unit",
            Mode::PowerFlow => "power-flow",
            Mode::StateEstimation => "state-estimation",
        }
    }

    /// Generators and the per-unit base exist only in per-unit mode;
    /// meters only in state-estimation mode.
    pub fn allows(self, kind: ComponentKind) -> bool {
        match kind {
            ComponentKind::Generator | ComponentKind::PuBase => self == Mode::PerUnit,
            ComponentKind::Meter => self == Mode::StateEstimation,
            ComponentKind::Transformer | ComponentKind::Load | ComponentKind::BusBar => true,
        }
    }

    pub fn catalog(self) -> Vec<ComponentKind> {
        ComponentKind::ALL.into_iter().filter(|k| self.allows(*k)).collect()
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "per-unit" | "perunit" | "pu" => Ok(Mode::PerUnit),
            "power-flow" | "powerflow" | "pf" => Ok(Mode::PowerFlow),
            "state-estimation" | "stateestimation" | "se" => Ok(Mode::StateEstimation),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub id: ComponentId,
    pub label: String,
    pub spec: ComponentSpec,
    pub placement: Placement,
}

impl Component {
    pub fn kind(&self) -> ComponentKind {
        self.spec.kind()
    }

    /// End points of a bus-bar's centre line.
    pub fn bar_segment(&self) -> Option<(Point, Point)> {
        match &self.spec {
            ComponentSpec::BusBar(b) => {
                let half = b.length / 2.0;
                Some((
                    self.placement.local_to_canvas(-half, 0.0),
                    self.placement.local_to_canvas(half, 0.0),
                ))
            }
            _ => None,
        }
    }

    /// Canvas position of indexed port `index`.
    pub fn port_position(&self, index: u8) -> Option<Point> {
        let (dx, dy) = match (self.kind(), index) {
            (ComponentKind::Generator, 0) => (20.0, 0.0),
            (ComponentKind::Load, 0) => (0.0, -20.0),
            (ComponentKind::Transformer, 0) => (-30.0, 0.0),
            (ComponentKind::Transformer, 1) => (30.0, 0.0),
            _ => return None,
        };
        Some(self.placement.local_to_canvas(dx, dy))
    }

    pub fn encloses(&self, p: Point) -> bool {
        self.bar_segment()
            .is_some_and(|(a, b)| point_segment_distance(p, a, b) <= BUS_HALF_WIDTH)
    }

    /// Distance from `p` to the drawn geometry: the bar for bus-bars, the
    /// placement point otherwise.
    pub fn distance_to(&self, p: Point) -> f64 {
        match self.bar_segment() {
            Some((a, b)) => point_segment_distance(p, a, b),
            None => self.placement.position.distance(p),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub id: ComponentId,
    pub label: String,
    pub end_a: PortRef,
    pub end_b: PortRef,
    pub spec: LineSpec,
    pub route: Vec<Segment>,
}

impl Line {
    pub fn touches(&self, id: ComponentId) -> bool {
        self.end_a.component == id || self.end_b.component == id
    }
}

/// Which kinds of object `nearest_attachable` may return.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttachKind {
    Line,
    BusBar,
    /// Generators, transformers and loads.
    Device,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("ModeUnavailable: {kind} is not available in {mode} mode")]
    ModeUnavailable { kind: ComponentKind, mode: Mode },
    #[error("InvalidSpec: {0}")]
    InvalidSpec(String),
    #[error("InvalidProperties: {0}")]
    InvalidProperties(#[from] PropertyError),
    #[error("DanglingEndpoint: {0:?} does not resolve to a connection port")]
    DanglingEndpoint(PortRef),
    #[error("LineToLineConnection: {0} is a line; connect lines through a bus")]
    LineToLineConnection(ComponentId),
    #[error("PortOccupied: port {port} of {component} already has a line")]
    PortOccupied { component: ComponentId, port: u8 },
    #[error("SelfConnection: both ends of the line are on {0}")]
    SelfConnection(ComponentId),
    #[error("UnknownComponent: {0}")]
    UnknownComponent(ComponentId),
    #[error("BusBarConnected: bus-bar {0} cannot be rotated while lines are attached")]
    BusBarConnected(ComponentId),
    #[error("OutOfBounds: ({x}, {y}) is outside the canvas")]
    OutOfBounds { x: f64, y: f64 },
    #[error("LineNotCopyable: {0} is a line")]
    LineNotCopyable(ComponentId),
    #[error("LineNotPlaceable: {0} is a line and follows its endpoints")]
    LineNotPlaceable(ComponentId),
    #[error("NoCandidates: nothing to attach to")]
    NoCandidates,
    #[error("InvalidRoute: line {0} would have coincident endpoints")]
    InvalidRoute(ComponentId),
}

impl NetworkError {
    pub fn name(&self) -> &'static str {
        match self {
            NetworkError::ModeUnavailable { .. } => "ModeUnavailable",
            NetworkError::InvalidSpec(_) => "InvalidSpec",
            NetworkError::InvalidProperties(_) => "InvalidProperties",
            NetworkError::DanglingEndpoint(_) => "DanglingEndpoint",
            NetworkError::LineToLineConnection(_) => "LineToLineConnection",
            NetworkError::PortOccupied { .. } => "PortOccupied",
            NetworkError::SelfConnection(_) => "SelfConnection",
            NetworkError::UnknownComponent(_) => "UnknownComponent",
            NetworkError::BusBarConnected(_) => "BusBarConnected",
            NetworkError::OutOfBounds { .. } => "OutOfBounds",
            NetworkError::LineNotCopyable(_) => "LineNotCopyable",
            NetworkError::LineNotPlaceable(_) => "LineNotPlaceable",
            NetworkError::NoCandidates => "NoCandidates",
            NetworkError::InvalidRoute(_) => "InvalidRoute",
        }
    }
}

/// Lines whose route changed, keyed by line id.
pub type RouteChanges = BTreeMap<ComponentId, Vec<Segment>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    mode: Mode,
    base_mva: f64,
    next_id: u64,
    components: BTreeMap<ComponentId, Component>,
    lines: BTreeMap<ComponentId, Line>,
}

impl Network {
    pub fn new(mode: Mode) -> Self {
        Self {
            mode,
            base_mva: DEFAULT_BASE_MVA,
            next_id: 1,
            components: BTreeMap::new(),
            lines: BTreeMap::new(),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// System power base used when solving in power-flow and
    /// state-estimation modes. Per-unit mode takes its base from the
    /// per-unit base component instead.
    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn set_base_mva(&mut self, mva: f64) -> Result<(), NetworkError> {
        if !(mva.is_finite() && mva > 0.0) {
            return Err(NetworkError::InvalidSpec("system base must be > 0".into()));
        }
        self.base_mva = mva;
        Ok(())
    }

    /// Switch operating mode. Fails if any component is unavailable in
    /// the new mode.
    pub fn set_mode(&mut self, mode: Mode) -> Result<(), NetworkError> {
        if let Some(c) = self.components.values().find(|c| !mode.allows(c.kind())) {
            return Err(NetworkError::ModeUnavailable { kind: c.kind(), mode });
        }
        self.mode = mode;
        Ok(())
    }

    /// The id the next created object will receive.
    pub fn next_id(&self) -> ComponentId {
        ComponentId(self.next_id)
    }

    pub fn components(&self) -> impl Iterator<Item = &Component> {
        self.components.values()
    }

    pub fn lines(&self) -> impl Iterator<Item = &Line> {
        self.lines.values()
    }

    pub fn component(&self, id: ComponentId) -> Option<&Component> {
        self.components.get(&id)
    }

    pub fn line(&self, id: ComponentId) -> Option<&Line> {
        self.lines.get(&id)
    }

    pub fn contains(&self, id: ComponentId) -> bool {
        self.components.contains_key(&id) || self.lines.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty() && self.lines.is_empty()
    }

    pub fn components_of(&self, kind: ComponentKind) -> impl Iterator<Item = &Component> {
        self.components.values().filter(move |c| c.kind() == kind)
    }

    pub fn incident_lines(&self, id: ComponentId) -> impl Iterator<Item = &Line> {
        self.lines.values().filter(move |l| l.touches(id))
    }

    fn fresh_id(&mut self) -> ComponentId {
        let id = ComponentId(self.next_id);
        self.next_id += 1;
        id
    }

    pub fn add_component(
        &mut self,
        spec: ComponentSpec,
        placement: Placement,
    ) -> Result<ComponentId, NetworkError> {
        self.add_labeled(spec, placement, String::new())
    }

    pub fn add_labeled(
        &mut self,
        spec: ComponentSpec,
        placement: Placement,
        label: impl Into<String>,
    ) -> Result<ComponentId, NetworkError> {
        let kind = spec.kind();
        if !self.mode.allows(kind) {
            return Err(NetworkError::ModeUnavailable { kind, mode: self.mode });
        }
        spec.validate().map_err(NetworkError::InvalidSpec)?;
        check_bounds(placement.position)?;
        let id = self.fresh_id();
        self.components.insert(
            id,
            Component { id, label: label.into(), spec, placement },
        );
        Ok(id)
    }

    /// Canvas position of a port reference, if it resolves to a live port.
    pub fn resolve_port(&self, port: &PortRef) -> Option<Point> {
        let c = self.components.get(&port.component)?;
        match port.port {
            Port::Indexed(i) => c.port_position(i),
            Port::BusPoint(p) => (c.kind() == ComponentKind::BusBar && c.encloses(p)).then_some(p),
        }
    }

    fn check_endpoint(&self, end: &PortRef, line: Option<ComponentId>) -> Result<Point, NetworkError> {
        if self.lines.contains_key(&end.component) {
            return Err(NetworkError::LineToLineConnection(end.component));
        }
        let p = self
            .resolve_port(end)
            .ok_or(NetworkError::DanglingEndpoint(*end))?;
        if let Port::Indexed(i) = end.port {
            let taken = self.lines.values().any(|l| {
                Some(l.id) != line
                    && [l.end_a, l.end_b]
                        .iter()
                        .any(|e| e.component == end.component && e.port == Port::Indexed(i))
            });
            if taken {
                return Err(NetworkError::PortOccupied { component: end.component, port: i });
            }
        }
        Ok(p)
    }

    pub fn add_line(&mut self, a: PortRef, b: PortRef, spec: LineSpec) -> Result<ComponentId, NetworkError> {
        self.add_labeled_line(a, b, spec, String::new())
    }

    pub fn add_labeled_line(
        &mut self,
        a: PortRef,
        b: PortRef,
        spec: LineSpec,
        label: impl Into<String>,
    ) -> Result<ComponentId, NetworkError> {
        let pa = self.check_endpoint(&a, None)?;
        let pb = self.check_endpoint(&b, None)?;
        if a.component == b.component {
            return Err(NetworkError::SelfConnection(a.component));
        }
        spec.validate().map_err(NetworkError::InvalidSpec)?;
        let route = route_line(pa, pb).map_err(|RouteError::InvalidRoute| {
            NetworkError::InvalidRoute(ComponentId(self.next_id))
        })?;
        let id = self.fresh_id();
        self.lines.insert(
            id,
            Line { id, label: label.into(), end_a: a, end_b: b, spec, route },
        );
        Ok(id)
    }

    /// Delete a component together with every line attached to it.
    /// Returns the ids of everything removed.
    pub fn remove_component(&mut self, id: ComponentId) -> Result<BTreeSet<ComponentId>, NetworkError> {
        if self.lines.remove(&id).is_some() {
            return Ok(BTreeSet::from([id]));
        }
        if self.components.remove(&id).is_none() {
            return Err(NetworkError::UnknownComponent(id));
        }
        let mut removed = BTreeSet::from([id]);
        self.lines.retain(|lid, l| {
            let hit = l.touches(id);
            if hit {
                removed.insert(*lid);
            }
            !hit
        });
        Ok(removed)
    }

    /// Advance the component a quarter turn clockwise and redraw its lines.
    pub fn rotate_component(&mut self, id: ComponentId) -> Result<(Placement, RouteChanges), NetworkError> {
        let c = self.placeable(id)?;
        if c.kind() == ComponentKind::BusBar && self.incident_lines(id).next().is_some() {
            return Err(NetworkError::BusBarConnected(id));
        }
        let mut moved = c.clone();
        moved.placement.rotation = moved.placement.rotation.clockwise();
        let changes = self.reroute_for(&moved, 0.0, 0.0)?;
        let placement = moved.placement;
        self.commit(moved, changes.clone());
        Ok((placement, changes))
    }

    /// Move a component; attached lines are redrawn with at most three pieces.
    pub fn move_component(&mut self, id: ComponentId, to: Point) -> Result<RouteChanges, NetworkError> {
        check_bounds(to)?;
        let c = self.placeable(id)?;
        let (dx, dy) = (to.x - c.placement.position.x, to.y - c.placement.position.y);
        let mut moved = c.clone();
        moved.placement.position = to;
        let changes = self.reroute_for(&moved, dx, dy)?;
        self.commit(moved, changes.clone());
        Ok(changes)
    }

    /// Paste a copy of a component at `to`. Lines are never copied.
    pub fn copy_component(&mut self, id: ComponentId, to: Point) -> Result<ComponentId, NetworkError> {
        if self.lines.contains_key(&id) {
            return Err(NetworkError::LineNotCopyable(id));
        }
        let src = self
            .components
            .get(&id)
            .ok_or(NetworkError::UnknownComponent(id))?;
        check_bounds(to)?;
        let placement = Placement { position: to, rotation: src.placement.rotation };
        let (spec, label) = (src.spec.clone(), src.label.clone());
        self.add_labeled(spec, placement, label)
    }

    /// Replace a component's spec from properties-window strings.
    pub fn set_properties(
        &mut self,
        id: ComponentId,
        props: &BTreeMap<String, String>,
    ) -> Result<ComponentSpec, NetworkError> {
        if self.lines.contains_key(&id) {
            return Err(NetworkError::LineNotPlaceable(id));
        }
        let c = self
            .components
            .get(&id)
            .ok_or(NetworkError::UnknownComponent(id))?;
        let spec = ComponentSpec::from_properties(c.kind(), props)?;
        self.set_spec(id, spec.clone())?;
        Ok(spec)
    }

    /// Replace a component's typed spec.
    pub fn set_spec(&mut self, id: ComponentId, spec: ComponentSpec) -> Result<(), NetworkError> {
        let c = self
            .components
            .get(&id)
            .ok_or(NetworkError::UnknownComponent(id))?;
        if spec.kind() != c.kind() {
            return Err(NetworkError::InvalidSpec(format!(
                "cannot turn a {} into a {}",
                c.kind(),
                spec.kind()
            )));
        }
        spec.validate().map_err(NetworkError::InvalidSpec)?;
        if let ComponentSpec::BusBar(_) = &spec {
            // Shortening a bar must not strand attachment points.
            let mut probe = c.clone();
            probe.spec = spec.clone();
            let strands = self.incident_lines(id).any(|l| {
                [l.end_a, l.end_b].iter().any(|e| match e.port {
                    Port::BusPoint(p) if e.component == id => !probe.encloses(p),
                    _ => false,
                })
            });
            if strands {
                return Err(NetworkError::InvalidSpec(
                    "new bus-bar length leaves attached lines outside the bar".into(),
                ));
            }
        }
        self.components.get_mut(&id).expect("checked above").spec = spec;
        Ok(())
    }

    /// Replace a line's spec from properties-window strings.
    pub fn set_line_properties(
        &mut self,
        id: ComponentId,
        props: &BTreeMap<String, String>,
    ) -> Result<LineSpec, NetworkError> {
        let spec = LineSpec::from_properties(props)?;
        spec.validate().map_err(NetworkError::InvalidSpec)?;
        let line = self
            .lines
            .get_mut(&id)
            .ok_or(NetworkError::UnknownComponent(id))?;
        line.spec = spec;
        Ok(spec)
    }

    pub fn set_label(&mut self, id: ComponentId, label: impl Into<String>) -> Result<(), NetworkError> {
        let label = label.into();
        if let Some(l) = self.lines.get_mut(&id) {
            l.label = label;
        } else if let Some(c) = self.components.get_mut(&id) {
            c.label = label;
        } else {
            return Err(NetworkError::UnknownComponent(id));
        }
        Ok(())
    }

    /// The candidate whose drawn geometry is closest to `point`; ties go
    /// to the lowest id.
    pub fn nearest_attachable(&self, point: Point, kinds: &[AttachKind]) -> Result<ComponentId, NetworkError> {
        let mut best: Option<(f64, ComponentId)> = None;
        let mut consider = |d: f64, id: ComponentId| {
            // Iteration is in ascending id order across each map, but the two
            // maps interleave, so compare ids explicitly on ties.
            match best {
                Some((bd, bid)) if d > bd || (d == bd && id > bid) => {}
                _ => best = Some((d, id)),
            }
        };
        if kinds.contains(&AttachKind::Line) {
            for l in self.lines.values() {
                consider(polyline_distance(&l.route, point), l.id);
            }
        }
        for c in self.components.values() {
            let wanted = match c.kind() {
                ComponentKind::BusBar => kinds.contains(&AttachKind::BusBar),
                ComponentKind::Generator | ComponentKind::Transformer | ComponentKind::Load => {
                    kinds.contains(&AttachKind::Device)
                }
                ComponentKind::Meter | ComponentKind::PuBase => false,
            };
            if wanted {
                consider(c.distance_to(point), c.id);
            }
        }
        best.map(|(_, id)| id).ok_or(NetworkError::NoCandidates)
    }

    /// Distance from `point` to the drawn geometry of `id`.
    pub fn distance_to(&self, id: ComponentId, point: Point) -> Option<f64> {
        if let Some(l) = self.lines.get(&id) {
            return Some(polyline_distance(&l.route, point));
        }
        self.components.get(&id).map(|c| c.distance_to(point))
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate::validate(self)
    }

    fn placeable(&self, id: ComponentId) -> Result<&Component, NetworkError> {
        if self.lines.contains_key(&id) {
            return Err(NetworkError::LineNotPlaceable(id));
        }
        self.components
            .get(&id)
            .ok_or(NetworkError::UnknownComponent(id))
    }

    /// New routes for every line attached to `moved`, whose bus attachment
    /// points (if it is a bar) shift by (dx, dy).
    fn reroute_for(&self, moved: &Component, dx: f64, dy: f64) -> Result<RouteChanges, NetworkError> {
        let mut changes = RouteChanges::new();
        for l in self.incident_lines(moved.id) {
            let end = |e: &PortRef| -> Point {
                if e.component == moved.id {
                    match e.port {
                        Port::Indexed(i) => moved.port_position(i).expect("live port"),
                        Port::BusPoint(p) => p.offset(dx, dy),
                    }
                } else {
                    self.resolve_port(e).expect("live port")
                }
            };
            let route = reroute_line(end(&l.end_a), end(&l.end_b))
                .map_err(|_| NetworkError::InvalidRoute(l.id))?;
            changes.insert(l.id, route);
        }
        Ok(changes)
    }

    fn commit(&mut self, moved: Component, changes: RouteChanges) {
        let id = moved.id;
        for (lid, route) in changes {
            let line = self.lines.get_mut(&lid).expect("incident line");
            if line.end_a.component == id {
                if let Port::BusPoint(_) = line.end_a.port {
                    line.end_a.port = Port::BusPoint(route[0].from);
                }
            }
            if line.end_b.component == id {
                if let Port::BusPoint(_) = line.end_b.port {
                    line.end_b.port = Port::BusPoint(route[route.len() - 1].to);
                }
            }
            line.route = route;
        }
        self.components.insert(id, moved);
    }

    /// Insert pre-built objects, used by the project loader. Callers must
    /// run [`Network::check_structure`] afterwards.
    pub(crate) fn from_parts(
        mode: Mode,
        base_mva: f64,
        next_id: u64,
        components: Vec<Component>,
        lines: Vec<Line>,
    ) -> Self {
        Self {
            mode,
            base_mva,
            next_id,
            components: components.into_iter().map(|c| (c.id, c)).collect(),
            lines: lines.into_iter().map(|l| (l.id, l)).collect(),
        }
    }

    /// Structural invariants only (ids, ports, routes, mode availability),
    /// without the solver prerequisites checked by [`Network::validate`].
    pub fn check_structure(&self) -> Vec<Violation> {
        validate::structural(self)
    }
}

fn check_bounds(p: Point) -> Result<(), NetworkError> {
    if p.in_canvas() {
        Ok(())
    } else {
        Err(NetworkError::OutOfBounds { x: p.x, y: p.y })
    }
}
