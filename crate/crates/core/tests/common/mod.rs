//! Random editing sessions over the component graph.

#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sld_core::fixtures;
use sld_core::network::geometry::route_is_consistent;
use sld_core::network::spec::ComponentKind;
use sld_core::network::{ComponentId, ComponentSpec, LineSpec, Mode, Network, NetworkError, Placement, Point, PortRef, Rotation};

/// One spec per placeable kind, taken from the per-unit chain fixture.
pub fn templates() -> Vec<ComponentSpec> {
    let (chain, _) = fixtures::three_region_chain();
    let mut seen = BTreeSet::new();
    chain.components().filter(|c| seen.insert(c.kind())).map(|c| c.spec.clone()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Add,
    Connect,
    Remove,
    Rotate,
    Move,
    Copy,
    Edit,
}

pub struct Fuzzer {
    pub rng: StdRng,
    pub net: Network,
    templates: Vec<ComponentSpec>,
    /// Soft cap on live components; removals become likelier past it.
    pub cap: usize,
    /// Rotations of connected bus-bars attempted (and refused) so far.
    pub refused_rotations: usize,
}

fn random_point(rng: &mut StdRng) -> Point {
    Point::new(rng.random_range(200.0..9800.0), rng.random_range(200.0..9800.0))
}

fn random_line_spec(rng: &mut StdRng) -> LineSpec {
    if rng.random_bool(0.3) {
        LineSpec::connecting()
    } else {
        LineSpec::pu(rng.random_range(0.0..0.1), rng.random_range(0.01..0.5), rng.random_range(0.0..0.1))
    }
}

impl Fuzzer {
    pub fn new(seed: u64) -> Self {
        Self { rng: StdRng::seed_from_u64(seed), net: Network::new(Mode::PerUnit), templates: templates(), cap: 40, refused_rotations: 0 }
    }

    fn pick_component(&mut self, kinds: Option<&[ComponentKind]>) -> Option<ComponentId> {
        let ids: Vec<ComponentId> =
            self.net.components().filter(|c| kinds.is_none_or(|k| k.contains(&c.kind()))).map(|c| c.id).collect();
        (!ids.is_empty()).then(|| ids[self.rng.random_range(0..ids.len())])
    }

    fn pick_any(&mut self) -> Option<ComponentId> {
        let ids: Vec<ComponentId> = self.net.components().map(|c| c.id).chain(self.net.lines().map(|l| l.id)).collect();
        (!ids.is_empty()).then(|| ids[self.rng.random_range(0..ids.len())])
    }

    /// A plausible endpoint on `id`: a point along a bar or a port index.
    fn endpoint(&mut self, id: ComponentId) -> PortRef {
        let c = self.net.component(id).expect("live component");
        if let Some((a, b)) = c.bar_segment() {
            let t: f64 = self.rng.random_range(0.0..=1.0);
            return PortRef::bus_point(id, a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
        }
        let ports = c.kind().indexed_ports().max(1) as u8;
        PortRef::indexed(id, self.rng.random_range(0..ports))
    }

    pub fn pick_op(&mut self) -> OpKind {
        let crowded = self.net.components().count() > self.cap;
        let roll = self.rng.random_range(0..100);
        match roll {
            _ if crowded && roll < 30 => OpKind::Remove,
            0..20 => OpKind::Add,
            20..50 => OpKind::Connect,
            50..58 => OpKind::Remove,
            58..70 => OpKind::Rotate,
            70..82 => OpKind::Move,
            82..90 => OpKind::Copy,
            _ => OpKind::Edit,
        }
    }

    /// Apply one random edit, checking its local contract.
    pub fn step(&mut self) -> Result<OpKind, String> {
        let op = self.pick_op();
        let before = self.net.clone();
        let outcome: Result<(), NetworkError> = match op {
            OpKind::Add => {
                let spec = self.templates[self.rng.random_range(0..self.templates.len())].clone();
                let p = random_point(&mut self.rng);
                let placement = Placement { position: p, rotation: Rotation::try_from(90 * self.rng.random_range(0..4u16)).unwrap() };
                self.net.add_component(spec, placement).map(|_| ())
            }
            OpKind::Connect => {
                let connectable = [ComponentKind::BusBar, ComponentKind::Generator, ComponentKind::Load, ComponentKind::Transformer];
                let (Some(a), Some(b)) = (self.pick_component(Some(&connectable)), self.pick_component(Some(&connectable))) else {
                    return Ok(op);
                };
                let ea = self.endpoint(a);
                // sometimes aim at a line or a non-port to exercise rejection
                let first_line = self.net.lines().next().map(|l| l.id);
                let eb = match (self.rng.random_range(0..10), first_line) {
                    (0, Some(line)) => PortRef::indexed(line, 0),
                    (1, _) => PortRef::bus_point(b, -5.0, -5.0),
                    _ => self.endpoint(b),
                };
                let spec = random_line_spec(&mut self.rng);
                self.net.add_line(ea, eb, spec).map(|_| ())
            }
            OpKind::Remove => {
                let Some(id) = self.pick_any() else { return Ok(op) };
                let mut expected: BTreeSet<ComponentId> =
                    self.net.incident_lines(id).map(|l| l.id).collect();
                expected.insert(id);
                let removed = self.net.remove_component(id).map_err(|e| format!("remove {id}: {e}"))?;
                if removed != expected {
                    return Err(format!("remove {id}: got {removed:?}, expected {expected:?}"));
                }
                Ok(())
            }
            OpKind::Rotate => {
                let Some(id) = self.pick_component(None) else { return Ok(op) };
                let connected_bar =
                    self.net.component(id).unwrap().kind() == ComponentKind::BusBar && self.net.incident_lines(id).next().is_some();
                let r = self.net.rotate_component(id).map(|_| ());
                if connected_bar {
                    if r != Err(NetworkError::BusBarConnected(id)) {
                        return Err(format!("rotating connected bar {id} gave {r:?}"));
                    }
                    self.refused_rotations += 1;
                }
                r
            }
            OpKind::Move => {
                let Some(id) = self.pick_component(None) else { return Ok(op) };
                let to = random_point(&mut self.rng);
                self.net.move_component(id, to).map(|_| ())
            }
            OpKind::Copy => {
                let Some(id) = self.pick_any() else { return Ok(op) };
                let to = random_point(&mut self.rng);
                self.net.copy_component(id, to).map(|_| ())
            }
            OpKind::Edit => {
                let Some(id) = self.pick_any() else { return Ok(op) };
                if self.net.line(id).is_some() {
                    let spec = random_line_spec(&mut self.rng);
                    self.net.set_line_properties(id, &spec.to_properties()).map(|_| ())
                } else {
                    let mut props = self.net.component(id).unwrap().spec.to_properties();
                    if props.contains_key("length") {
                        let len: f64 = self.rng.random_range(10.0..600.0);
                        props.insert("length".into(), format!("{len}"));
                    }
                    self.net.set_properties(id, &props).map(|_| ())
                }
            }
        };
        if outcome.is_err() && self.net != before {
            return Err(format!("{op:?} failed with {outcome:?} but changed the network"));
        }
        check_graph(&self.net)?;
        Ok(op)
    }
}

/// No dangling lines, no line-to-line links, and every route runs
/// orthogonally between its two resolved ports.
pub fn check_graph(net: &Network) -> Result<(), String> {
    let violations = net.check_structure();
    if !violations.is_empty() {
        return Err(format!("structure: {violations:?}"));
    }
    for l in net.lines() {
        let a = net.resolve_port(&l.end_a).ok_or_else(|| format!("line {} end a dangles", l.id))?;
        let b = net.resolve_port(&l.end_b).ok_or_else(|| format!("line {} end b dangles", l.id))?;
        if net.line(l.end_a.component).is_some() || net.line(l.end_b.component).is_some() {
            return Err(format!("line {} attaches to a line", l.id));
        }
        if !route_is_consistent(&l.route, a, b) {
            return Err(format!("line {} route {:?} does not join {a:?} and {b:?}", l.id, l.route));
        }
    }
    Ok(())
}

/// A network built by `steps` random edits from `seed`.
pub fn random_network(seed: u64, steps: usize) -> Network {
    let mut f = Fuzzer::new(seed);
    for _ in 0..steps {
        f.step().expect("fuzz step keeps the graph valid");
    }
    f.net
}
