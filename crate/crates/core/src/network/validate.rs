use std::collections::BTreeMap;

use serde::Serialize;

use super::geometry::route_is_consistent;
use super::spec::{ComponentKind, Phase};
use super::{ComponentId, Mode, Network, Port};
use crate::powerflow::extract::{self, SlackPolicy};

/// A broken invariant or unmet solver prerequisite. Violations are data:
/// a draft project may carry several of them.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "violation")]
pub enum Violation {
    DanglingLine { line: ComponentId },
    LineToLineConnection { line: ComponentId },
    PortConflict { component: ComponentId, port: u8 },
    InvalidRoute { line: ComponentId },
    ModeUnavailable { component: ComponentId, kind: ComponentKind },
    InvalidSpec { component: ComponentId, reason: String },
    OutOfBounds { component: ComponentId },
    IdCounterBehind { next_id: u64, max_id: u64 },
    UnsupportedPhase { component: ComponentId },
    NoBuses,
    NoSlackDesignated,
    MultipleSlack { buses: Vec<ComponentId> },
    IslandWithoutSlack { buses: Vec<ComponentId> },
    NonPerUnitQuantity { component: ComponentId },
    MissingPUBase,
    MultiplePUBase { components: Vec<ComponentId> },
    NoMeasurements,
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::DanglingLine { .. } => "DanglingLine",
            Violation::LineToLineConnection { .. } => "LineToLineConnection",
            Violation::PortConflict { .. } => "PortConflict",
            Violation::InvalidRoute { .. } => "InvalidRoute",
            Violation::ModeUnavailable { .. } => "ModeUnavailable",
            Violation::InvalidSpec { .. } => "InvalidSpec",
            Violation::OutOfBounds { .. } => "OutOfBounds",
            Violation::IdCounterBehind { .. } => "IdCounterBehind",
            Violation::UnsupportedPhase { .. } => "UnsupportedPhase",
            Violation::NoBuses => "NoBuses",
            Violation::NoSlackDesignated => "NoSlackDesignated",
            Violation::MultipleSlack { .. } => "MultipleSlack",
            Violation::IslandWithoutSlack { .. } => "IslandWithoutSlack",
            Violation::NonPerUnitQuantity { .. } => "NonPerUnitQuantity",
            Violation::MissingPUBase => "MissingPUBase",
            Violation::MultiplePUBase { .. } => "MultiplePUBase",
            Violation::NoMeasurements => "NoMeasurements",
        }
    }
}

pub(super) fn structural(net: &Network) -> Vec<Violation> {
    let mut out = Vec::new();
    let max_id = net
        .components
        .keys()
        .chain(net.lines.keys())
        .map(|id| id.0)
        .max()
        .unwrap_or(0);
    if net.next_id <= max_id {
        out.push(Violation::IdCounterBehind { next_id: net.next_id, max_id });
    }
    for c in net.components.values() {
        if !net.mode.allows(c.kind()) {
            out.push(Violation::ModeUnavailable { component: c.id, kind: c.kind() });
        }
        if let Err(reason) = c.spec.validate() {
            out.push(Violation::InvalidSpec { component: c.id, reason });
        }
        if !c.placement.position.in_canvas() {
            out.push(Violation::OutOfBounds { component: c.id });
        }
    }
    let mut port_use: BTreeMap<(ComponentId, u8), usize> = BTreeMap::new();
    for l in net.lines.values() {
        let ends = [l.end_a, l.end_b];
        if ends.iter().any(|e| net.lines.contains_key(&e.component)) {
            out.push(Violation::LineToLineConnection { line: l.id });
            continue;
        }
        let resolved: Vec<_> = ends.iter().map(|e| net.resolve_port(e)).collect();
        let (Some(pa), Some(pb)) = (resolved[0], resolved[1]) else {
            out.push(Violation::DanglingLine { line: l.id });
            continue;
        };
        if l.end_a.component == l.end_b.component || !route_is_consistent(&l.route, pa, pb) {
            out.push(Violation::InvalidRoute { line: l.id });
        }
        if let Err(reason) = l.spec.validate() {
            out.push(Violation::InvalidSpec { component: l.id, reason });
        }
        for e in ends {
            if let Port::Indexed(i) = e.port {
                *port_use.entry((e.component, i)).or_default() += 1;
            }
        }
    }
    for ((component, port), n) in port_use {
        if n > 1 {
            out.push(Violation::PortConflict { component, port });
        }
    }
    out
}

pub(super) fn validate(net: &Network) -> Vec<Violation> {
    let mut out = structural(net);
    for c in net.components.values() {
        if c.spec.phase() == Some(Phase::Single) {
            out.push(Violation::UnsupportedPhase { component: c.id });
        }
    }
    match net.mode {
        Mode::PowerFlow => {
            out.extend(extract::diagnose(net, SlackPolicy::Required).1);
        }
        Mode::StateEstimation => {
            out.extend(extract::diagnose(net, SlackPolicy::ReferenceFallback).1);
            if net.components_of(ComponentKind::Meter).next().is_none() {
                out.push(Violation::NoMeasurements);
            }
        }
        Mode::PerUnit => {
            let bases: Vec<ComponentId> = net.components_of(ComponentKind::PuBase).map(|c| c.id).collect();
            match bases.len() {
                0 => out.push(Violation::MissingPUBase),
                1 => {}
                _ => out.push(Violation::MultiplePUBase { components: bases }),
            }
        }
    }
    out
}
