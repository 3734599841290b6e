//! Per-unit base resolution.
//!
//! The network splits into electrical regions wherever a transformer sits.
//! The per-unit base component fixes the system power base and the voltage
//! base of the region closest to it; voltage bases then propagate through
//! each transformer by its rated voltage ratio.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::network::spec::{
    ComponentKind, ComponentSpec, ImpedanceUnit, LoadSpec, Quantity, Unit,
};
use crate::network::{AttachKind, ComponentId, Network, NetworkError};
use crate::powerflow::extract::{terminals, NodeKey, UnionFind};
use crate::trace::{Outcome, Payload, SolveTrace, PHASE_SETUP};

/// Relative tolerance for two voltage bases to be considered equal.
pub const BASE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PerUnitError {
    #[error("MissingPUBase: no per-unit base component")]
    MissingPUBase,
    #[error("MultiplePUBase: {0:?}")]
    MultiplePUBase(Vec<ComponentId>),
    #[error("InconsistentBase: region {region} reached with {existing} V and {implied} V")]
    InconsistentBase { region: usize, existing: f64, implied: f64 },
    #[error("UnreachedRegion: region {region} ({members:?}) has no path to the base")]
    UnreachedRegion { region: usize, members: Vec<ComponentId> },
    #[error("NonPositiveBase: bases must be > 0")]
    NonPositiveBase,
    #[error("{0}")]
    Network(#[from] NetworkError),
}

impl PerUnitError {
    pub fn name(&self) -> &'static str {
        match self {
            PerUnitError::MissingPUBase => "MissingPUBase",
            PerUnitError::MultiplePUBase(_) => "MultiplePUBase",
            PerUnitError::InconsistentBase { .. } => "InconsistentBase",
            PerUnitError::UnreachedRegion { .. } => "UnreachedRegion",
            PerUnitError::NonPositiveBase => "NonPositiveBase",
            PerUnitError::Network(e) => e.name(),
        }
    }
}

/// `v_base² / s_base`, in ohms for volts and volt-amperes.
pub fn impedance_base(v_base: f64, s_base: f64) -> Result<f64, PerUnitError> {
    if !(v_base > 0.0 && s_base > 0.0) || !v_base.is_finite() || !s_base.is_finite() {
        return Err(PerUnitError::NonPositiveBase);
    }
    Ok(v_base * v_base / s_base)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElectricalRegion {
    pub id: usize,
    pub members: BTreeSet<ComponentId>,
    /// Volts.
    pub v_base: f64,
    /// Ohms.
    pub z_base: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaseAssignment {
    /// Volt-amperes.
    pub s_base: f64,
    pub anchor: ComponentId,
    pub anchor_region: usize,
    pub regions: Vec<ElectricalRegion>,
    #[serde(skip)]
    pub node_region: BTreeMap<NodeKey, usize>,
}

impl BaseAssignment {
    pub fn region_of(&self, component: ComponentId, terminal: u8) -> Option<&ElectricalRegion> {
        self.node_region
            .get(&NodeKey { component, terminal })
            .map(|&r| &self.regions[r])
    }
}

struct RegionGraph {
    node_region: BTreeMap<NodeKey, usize>,
    members: Vec<BTreeSet<ComponentId>>,
    /// (primary region, secondary region, secondary/primary ratio)
    edges: Vec<(usize, usize, f64)>,
}

fn region_graph(net: &Network) -> RegionGraph {
    let nodes = terminals(net);
    let index: BTreeMap<NodeKey, usize> = nodes.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut uf = UnionFind::new(nodes.len());
    for l in net.lines() {
        if let (Some(&a), Some(&b)) = (
            index.get(&NodeKey::of_port(&l.end_a)),
            index.get(&NodeKey::of_port(&l.end_b)),
        ) {
            uf.union(a, b);
        }
    }
    let mut root_region = BTreeMap::new();
    let mut node_region = BTreeMap::new();
    let mut members: Vec<BTreeSet<ComponentId>> = Vec::new();
    for (i, key) in nodes.iter().enumerate() {
        let root = uf.find(i);
        let r = *root_region.entry(root).or_insert_with(|| {
            members.push(BTreeSet::new());
            members.len() - 1
        });
        node_region.insert(*key, r);
        members[r].insert(key.component);
    }
    for l in net.lines() {
        if let Some(&r) = node_region.get(&NodeKey::of_port(&l.end_a)) {
            members[r].insert(l.id);
        }
    }
    let mut edges = Vec::new();
    for c in net.components_of(ComponentKind::Transformer) {
        if let ComponentSpec::Transformer(t) = &c.spec {
            let a = node_region[&NodeKey { component: c.id, terminal: 0 }];
            let b = node_region[&NodeKey { component: c.id, terminal: 1 }];
            edges.push((a, b, t.secondary.voltage.si() / t.primary.voltage.si()));
        }
    }
    RegionGraph { node_region, members, edges }
}

fn pu_base(net: &Network) -> Result<(ComponentId, crate::network::spec::PuBaseSpec, crate::network::Point), PerUnitError> {
    let bases: Vec<_> = net.components_of(ComponentKind::PuBase).collect();
    match bases.as_slice() {
        [] => Err(PerUnitError::MissingPUBase),
        [c] => match &c.spec {
            ComponentSpec::PuBase(spec) => Ok((c.id, spec.clone(), c.placement.position)),
            _ => unreachable!(),
        },
        many => Err(PerUnitError::MultiplePUBase(many.iter().map(|c| c.id).collect())),
    }
}

/// Assign a voltage base to every electrical region.
pub fn resolve_bases(net: &Network) -> Result<BaseAssignment, PerUnitError> {
    let (_, spec, at) = pu_base(net)?;
    let s_base = spec.base_power.si();
    impedance_base(spec.base_voltage.si(), s_base)?;

    let anchor = net.nearest_attachable(at, &[AttachKind::Line, AttachKind::BusBar, AttachKind::Device])?;
    let anchor_node = match net.line(anchor) {
        Some(l) => NodeKey::of_port(&l.end_a),
        None => NodeKey { component: anchor, terminal: 0 },
    };
    let graph = region_graph(net);
    let anchor_region = graph.node_region[&anchor_node];

    let nr = graph.members.len();
    let mut v_base: Vec<Option<f64>> = vec![None; nr];
    v_base[anchor_region] = Some(spec.base_voltage.si());
    let mut queue = VecDeque::from([anchor_region]);
    while let Some(r) = queue.pop_front() {
        let here = v_base[r].expect("queued regions have a base");
        for &(a, b, ratio) in &graph.edges {
            let targets = [(a == r, b, here * ratio), (b == r, a, here / ratio)];
            for (applies, other, implied) in targets {
                if !applies {
                    continue;
                }
                match v_base[other] {
                    None => {
                        v_base[other] = Some(implied);
                        queue.push_back(other);
                    }
                    Some(existing) => {
                        if ((existing - implied) / existing).abs() > BASE_TOLERANCE {
                            return Err(PerUnitError::InconsistentBase { region: other, existing, implied });
                        }
                    }
                }
            }
        }
    }

    let mut regions = Vec::with_capacity(nr);
    for (id, members) in graph.members.into_iter().enumerate() {
        let Some(v) = v_base[id] else {
            return Err(PerUnitError::UnreachedRegion { region: id, members: members.into_iter().collect() });
        };
        regions.push(ElectricalRegion { id, members, v_base: v, z_base: impedance_base(v, s_base)? });
    }
    Ok(BaseAssignment {
        s_base,
        anchor,
        anchor_region,
        regions,
        node_region: graph.node_region,
    })
}

/// One converted quantity: `per_unit = original * scale`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerUnitValue {
    pub name: String,
    pub original: f64,
    pub unit: String,
    pub scale: f64,
    pub per_unit: f64,
}

impl PerUnitValue {
    fn new(name: &str, original: f64, unit: &str, scale: f64) -> Self {
        Self {
            name: name.into(),
            original,
            unit: unit.into(),
            scale,
            per_unit: original * scale,
        }
    }

    /// Back to the original units.
    pub fn to_original(&self) -> f64 {
        self.per_unit / self.scale
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerUnitEntry {
    pub component: ComponentId,
    pub kind: String,
    pub regions: Vec<usize>,
    pub values: Vec<PerUnitValue>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerUnitReport {
    pub s_base: f64,
    pub regions: Vec<ElectricalRegion>,
    pub entries: Vec<PerUnitEntry>,
}

impl PerUnitReport {
    pub fn entry(&self, id: ComponentId) -> Option<&PerUnitEntry> {
        self.entries.iter().find(|e| e.component == id)
    }
}

impl PerUnitEntry {
    pub fn value(&self, name: &str) -> Option<&PerUnitValue> {
        self.values.iter().find(|v| v.name == name)
    }
}

/// Per-unit value of a physical voltage in a region.
pub fn voltage_to_pu(q: &Quantity, region: &ElectricalRegion) -> f64 {
    q.si() / region.v_base
}

fn quantity_value(name: &str, q: &Quantity, si_base: f64) -> PerUnitValue {
    if q.unit == Unit::Pu {
        PerUnitValue::new(name, q.value, "pu", 1.0)
    } else {
        // keep `original` in the quantity's own unit
        PerUnitValue::new(name, q.value, q.unit.symbol(), q.unit.scale() / si_base)
    }
}

/// Re-express every component on the system base.
pub fn convert_to_per_unit(net: &Network, bases: &BaseAssignment) -> PerUnitReport {
    let s_base = bases.s_base;
    let region = |id: ComponentId, t: u8| bases.region_of(id, t).expect("every terminal has a region");
    let mut entries = Vec::new();
    for c in net.components() {
        let mut values = Vec::new();
        let mut regions = Vec::new();
        match &c.spec {
            ComponentSpec::Generator(g) => {
                let r = region(c.id, 0);
                regions.push(r.id);
                values.push(quantity_value("rated voltage", &g.rated_voltage, r.v_base));
                values.push(quantity_value("rated power", &g.rated_power, s_base));
                if let Some(z) = g.impedance {
                    let k = (s_base / g.rated_power.si()) * (g.rated_voltage.si() / r.v_base).powi(2);
                    values.push(PerUnitValue::new("resistance", z.r, "pu (own base)", k));
                    values.push(PerUnitValue::new("reactance", z.x, "pu (own base)", k));
                }
            }
            ComponentSpec::Transformer(t) => {
                let (rp, rs) = (region(c.id, 0), region(c.id, 1));
                regions.extend([rp.id, rs.id]);
                values.push(quantity_value("primary voltage", &t.primary.voltage, rp.v_base));
                values.push(quantity_value("secondary voltage", &t.secondary.voltage, rs.v_base));
                values.push(quantity_value("rated power", &t.rated_power, s_base));
                if let Some(z) = t.impedance {
                    let k = (s_base / t.rated_power.si()) * (t.primary.voltage.si() / rp.v_base).powi(2);
                    values.push(PerUnitValue::new("resistance", z.r, "pu (own base)", k));
                    values.push(PerUnitValue::new("reactance", z.x, "pu (own base)", k));
                }
            }
            ComponentSpec::Load(load) => {
                let r = region(c.id, 0);
                regions.push(r.id);
                match load {
                    LoadSpec::Power { p, q } => {
                        values.push(quantity_value("real power", p, s_base));
                        values.push(quantity_value("reactive power", q, s_base));
                    }
                    LoadSpec::Rlc { r: res, x_l, x_c } => {
                        for (name, q) in [("resistance", res), ("inductive reactance", x_l), ("capacitive reactance", x_c)] {
                            if let Some(q) = q {
                                values.push(quantity_value(name, q, r.z_base));
                            }
                        }
                    }
                }
            }
            ComponentSpec::BusBar(_) => {
                let r = region(c.id, 0);
                regions.push(r.id);
                values.push(PerUnitValue::new("base voltage", r.v_base, "V", 1.0 / r.v_base));
            }
            ComponentSpec::PuBase(b) => {
                values.push(quantity_value("base power", &b.base_power, s_base));
                values.push(quantity_value("base voltage", &b.base_voltage, bases.regions[bases.anchor_region].v_base));
            }
            ComponentSpec::Meter(_) => continue,
        }
        entries.push(PerUnitEntry { component: c.id, kind: c.kind().name().into(), regions, values });
    }
    for l in net.lines() {
        let r = region(l.end_a.component, NodeKey::of_port(&l.end_a).terminal);
        let values = match l.spec.unit {
            ImpedanceUnit::Pu => vec![
                PerUnitValue::new("resistance", l.spec.r, "pu", 1.0),
                PerUnitValue::new("reactance", l.spec.x, "pu", 1.0),
                PerUnitValue::new("charging", l.spec.b, "pu", 1.0),
            ],
            ImpedanceUnit::Ohm => vec![
                PerUnitValue::new("resistance", l.spec.r, "ohm", 1.0 / r.z_base),
                PerUnitValue::new("reactance", l.spec.x, "ohm", 1.0 / r.z_base),
                PerUnitValue::new("charging", l.spec.b, "S", r.z_base),
            ],
        };
        entries.push(PerUnitEntry { component: l.id, kind: "line".into(), regions: vec![r.id], values });
    }
    entries.sort_by_key(|e| e.component);
    PerUnitReport { s_base, regions: bases.regions.clone(), entries }
}

/// Resolve bases and convert, recording each step.
pub fn solve_per_unit(net: &Network) -> Result<(PerUnitReport, SolveTrace), PerUnitError> {
    let mut trace = SolveTrace::new("per-unit", Vec::new());
    let bases = resolve_bases(net)?;
    trace.push(
        PHASE_SETUP,
        Payload::new()
            .scalar("S base", bases.s_base / 1e6, "MVA")
            .text("anchor", bases.anchor.to_string())
            .scalar("anchor region", bases.anchor_region as f64, ""),
        "system base and anchor",
    );
    for r in &bases.regions {
        let members: Vec<String> = r.members.iter().map(|m| m.to_string()).collect();
        trace.push(
            PHASE_SETUP,
            Payload::new()
                .scalar("V base", r.v_base / 1e3, "kV")
                .scalar("Z base", r.z_base, "ohm")
                .text("members", members.join(" ")),
            format!("region {}", r.id),
        );
    }
    let report = convert_to_per_unit(net, &bases);
    for e in &report.entries {
        let names: Vec<String> = e.values.iter().map(|v| v.name.clone()).collect();
        let pu: Vec<f64> = e.values.iter().map(|v| v.per_unit).collect();
        trace.push(
            "conversion",
            Payload::new().vector("per-unit", &pu, "pu").text("quantities", names.join(", ")),
            format!("{} {}", e.kind, e.component),
        );
    }
    trace
        .finalize(Outcome {
            converged: true,
            iterations: 0,
            summary: format!("{} regions, {} components converted", report.regions.len(), report.entries.len()),
        })
        .expect("open trace");
    Ok((report, trace))
}
