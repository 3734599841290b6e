//! Reduction of a drawn network to buses and branches.
//!
//! Every electrical terminal (a bus-bar, a device port) is a node. Nodes
//! joined by connecting lines, or by a transformer without impedance,
//! collapse into one bus. Lines with impedance and transformers with
//! impedance become branches.

use std::collections::{BTreeMap, BTreeSet};

use num_complex::Complex64;
use serde::Serialize;

use super::{Branch, BranchOrigin, BusKind, BusRecord, BusSystem, PowerFlowError};
use crate::network::spec::{
    BusDesignation, ComponentKind, ComponentSpec, ImpedanceUnit, LoadSpec, Quantity, Unit,
};
use crate::network::{ComponentId, Network, Port, PortRef, Violation};

/// An electrical terminal: a component and one of its ports. Bus-bars have
/// a single terminal 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct NodeKey {
    pub component: ComponentId,
    pub terminal: u8,
}

impl NodeKey {
    pub fn of_port(port: &PortRef) -> NodeKey {
        let terminal = match port.port {
            Port::Indexed(i) => i,
            Port::BusPoint(_) => 0,
        };
        NodeKey { component: port.component, terminal }
    }
}

/// How buses without a designated slack are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlackPolicy {
    /// Power flow: each island needs a slack, or a PV bus to promote.
    Required,
    /// Estimation: an island without a slack uses its lowest bus as the
    /// angle reference.
    ReferenceFallback,
}

pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // keep the smaller index as root so class order is stable
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

/// Electrical terminals of every connectable component, in id order.
pub(crate) fn terminals(net: &Network) -> Vec<NodeKey> {
    let mut nodes = Vec::new();
    for c in net.components() {
        let count = match c.kind() {
            ComponentKind::BusBar => 1,
            k => k.indexed_ports(),
        };
        for t in 0..count {
            nodes.push(NodeKey { component: c.id, terminal: t as u8 });
        }
    }
    nodes
}

fn to_pu_power(q: &Quantity, base_mva: f64) -> f64 {
    match q.unit {
        Unit::Pu => q.value,
        _ => q.si() / (base_mva * 1e6),
    }
}

/// Extract buses and branches, collecting every problem found instead of
/// stopping at the first.
pub fn diagnose(net: &Network, policy: SlackPolicy) -> (Option<BusSystem>, Vec<Violation>) {
    let mut issues = Vec::new();
    let base_mva = net.base_mva();
    let nodes = terminals(net);
    let index: BTreeMap<NodeKey, usize> = nodes.iter().enumerate().map(|(i, k)| (*k, i)).collect();
    let mut uf = UnionFind::new(nodes.len());

    for l in net.lines() {
        if l.spec.is_connecting() {
            if let (Some(&a), Some(&b)) = (
                index.get(&NodeKey::of_port(&l.end_a)),
                index.get(&NodeKey::of_port(&l.end_b)),
            ) {
                uf.union(a, b);
            }
        }
    }
    for c in net.components_of(ComponentKind::Transformer) {
        if let ComponentSpec::Transformer(t) = &c.spec {
            if t.impedance.map_or(true, |z| z.is_zero()) {
                let a = index[&NodeKey { component: c.id, terminal: 0 }];
                let b = index[&NodeKey { component: c.id, terminal: 1 }];
                uf.union(a, b);
            }
        }
    }

    // Bus numbering follows the smallest terminal of each class.
    let mut class_bus: BTreeMap<usize, usize> = BTreeMap::new();
    let mut node_bus: BTreeMap<NodeKey, usize> = BTreeMap::new();
    for (i, key) in nodes.iter().enumerate() {
        let root = uf.find(i);
        let next = class_bus.len();
        let bus = *class_bus.entry(root).or_insert(next);
        node_bus.insert(*key, bus);
    }
    let n = class_bus.len();
    if net.components_of(ComponentKind::BusBar).next().is_none() {
        issues.push(Violation::NoBuses);
    }

    let mut buses: Vec<BusRecord> = (0..n)
        .map(|index| BusRecord {
            index,
            kind: BusKind::Pq,
            p_sched: 0.0,
            q_sched: 0.0,
            v_set: 1.0,
            theta_set: 0.0,
            shunt: Complex64::new(0.0, 0.0),
            p_load: 0.0,
            q_load: 0.0,
            q_min: None,
            q_max: None,
            members: Vec::new(),
            bus_bars: Vec::new(),
        })
        .collect();
    for (key, &bus) in &node_bus {
        if !buses[bus].members.contains(&key.component) {
            buses[bus].members.push(key.component);
        }
    }

    let mut slack_claims: BTreeMap<usize, Vec<ComponentId>> = BTreeMap::new();
    let mut any_designation = false;
    for c in net.components() {
        let Some(&bus) = node_bus.get(&NodeKey { component: c.id, terminal: 0 }) else {
            continue;
        };
        match &c.spec {
            ComponentSpec::BusBar(b) => {
                buses[bus].bus_bars.push(c.id);
                match &b.designation {
                    Some(BusDesignation::Slack { v_set, angle_deg }) => {
                        any_designation = true;
                        slack_claims.entry(bus).or_default().push(c.id);
                        let rec = &mut buses[bus];
                        if rec.kind != BusKind::Slack {
                            rec.kind = BusKind::Slack;
                            rec.v_set = *v_set;
                            rec.theta_set = angle_deg.to_radians();
                        }
                    }
                    Some(BusDesignation::Pv { p_gen, v_set, q_min, q_max }) => {
                        any_designation = true;
                        let rec = &mut buses[bus];
                        rec.p_sched += to_pu_power(p_gen, base_mva);
                        if rec.kind == BusKind::Pq {
                            rec.kind = BusKind::Pv;
                            rec.v_set = *v_set;
                        }
                        rec.q_min = q_min.map(|q| to_pu_power(&q, base_mva));
                        rec.q_max = q_max.map(|q| to_pu_power(&q, base_mva));
                    }
                    None => {}
                }
            }
            ComponentSpec::Load(LoadSpec::Power { p, q }) => {
                let (p, q) = (to_pu_power(p, base_mva), to_pu_power(q, base_mva));
                let rec = &mut buses[bus];
                rec.p_sched -= p;
                rec.q_sched -= q;
                rec.p_load += p;
                rec.q_load += q;
            }
            ComponentSpec::Load(LoadSpec::Rlc { r, x_l, x_c }) => {
                let elems = [r, x_l, x_c];
                if elems.iter().any(|q| q.is_some_and(|q| q.unit != Unit::Pu)) {
                    issues.push(Violation::NonPerUnitQuantity { component: c.id });
                    continue;
                }
                let mut y = Complex64::new(0.0, 0.0);
                if let Some(r) = r {
                    y += 1.0 / r.value;
                }
                if let Some(x) = x_l {
                    y += Complex64::new(0.0, -1.0 / x.value);
                }
                if let Some(x) = x_c {
                    y += Complex64::new(0.0, 1.0 / x.value);
                }
                buses[bus].shunt += y;
            }
            _ => {}
        }
    }
    for claims in slack_claims.values() {
        if claims.len() > 1 {
            issues.push(Violation::MultipleSlack { buses: claims.clone() });
        }
    }

    let mut branches = Vec::new();
    let mut push_branch = |buses: &mut Vec<BusRecord>, from: usize, to: usize, z: Complex64, b_half: f64, origin| {
        if from == to {
            // Shorted out by connecting lines: only the charging remains.
            buses[from].shunt += Complex64::new(0.0, 2.0 * b_half);
        } else {
            branches.push(Branch {
                from,
                to,
                series_admittance: 1.0 / z,
                shunt_susceptance_half: b_half,
                origin,
            });
        }
    };
    for l in net.lines() {
        if l.spec.is_connecting() {
            continue;
        }
        if l.spec.unit != ImpedanceUnit::Pu {
            issues.push(Violation::NonPerUnitQuantity { component: l.id });
            continue;
        }
        let (Some(&from), Some(&to)) = (
            node_bus.get(&NodeKey::of_port(&l.end_a)),
            node_bus.get(&NodeKey::of_port(&l.end_b)),
        ) else {
            continue;
        };
        push_branch(
            &mut buses,
            from,
            to,
            Complex64::new(l.spec.r, l.spec.x),
            l.spec.b / 2.0,
            BranchOrigin::Line(l.id),
        );
    }
    for c in net.components_of(ComponentKind::Transformer) {
        let ComponentSpec::Transformer(t) = &c.spec else { continue };
        let Some(z) = t.impedance.filter(|z| !z.is_zero()) else { continue };
        // own-base impedance moved to the system base at nominal voltage
        let scale = base_mva * 1e6 / t.rated_power.si();
        let from = node_bus[&NodeKey { component: c.id, terminal: 0 }];
        let to = node_bus[&NodeKey { component: c.id, terminal: 1 }];
        push_branch(
            &mut buses,
            from,
            to,
            Complex64::new(z.r, z.x) * scale,
            0.0,
            BranchOrigin::Transformer(c.id),
        );
    }

    let mut warnings = Vec::new();
    assign_slacks(&mut buses, &branches, policy, any_designation, &mut issues, &mut warnings);

    let system = BusSystem {
        buses,
        branches,
        base_mva,
        node_bus,
        warnings,
    };
    if issues.is_empty() {
        (Some(system), issues)
    } else {
        (None, issues)
    }
}

fn assign_slacks(
    buses: &mut [BusRecord],
    branches: &[Branch],
    policy: SlackPolicy,
    any_designation: bool,
    issues: &mut Vec<Violation>,
    warnings: &mut Vec<String>,
) {
    if policy == SlackPolicy::Required && !any_designation {
        issues.push(Violation::NoSlackDesignated);
        return;
    }
    for island in islands(buses.len(), branches) {
        let slacks = island.iter().filter(|&&b| buses[b].kind == BusKind::Slack).count();
        if slacks > 0 {
            continue;
        }
        let pv = island.iter().copied().find(|&b| buses[b].kind == BusKind::Pv);
        match (pv, policy) {
            (Some(b), _) => {
                buses[b].kind = BusKind::Slack;
                warnings.push(format!(
                    "no slack designated; bus {} (first with a voltage setpoint) used as slack",
                    b + 1
                ));
            }
            (None, SlackPolicy::ReferenceFallback) => {
                let b = island[0];
                buses[b].kind = BusKind::Slack;
                buses[b].v_set = 1.0;
                warnings.push(format!("no slack designated; bus {} used as angle reference", b + 1));
            }
            (None, SlackPolicy::Required) => {
                let ids = island
                    .iter()
                    .flat_map(|&b| buses[b].members.iter().copied())
                    .collect();
                issues.push(Violation::IslandWithoutSlack { buses: ids });
            }
        }
    }
}

/// Connected groups of buses, each sorted, ordered by their first bus.
pub fn islands(n: usize, branches: &[Branch]) -> Vec<Vec<usize>> {
    let mut uf = UnionFind::new(n);
    for br in branches {
        uf.union(br.from, br.to);
    }
    let mut groups: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
    for b in 0..n {
        let r = uf.find(b);
        groups.entry(r).or_default().insert(b);
    }
    let mut out: Vec<Vec<usize>> = groups.into_values().map(|s| s.into_iter().collect()).collect();
    out.sort_by_key(|g| g[0]);
    out
}

/// Reduce `net` to a bus system, failing on the first blocking problem.
pub fn extract_bus_system(net: &Network, policy: SlackPolicy) -> Result<BusSystem, PowerFlowError> {
    match diagnose(net, policy) {
        (Some(sys), _) => Ok(sys),
        (None, issues) => Err(PowerFlowError::Extraction(issues)),
    }
}
