//! Reference networks built programmatically: the IEEE 14-bus test system,
//! small power-flow cases and a three-region per-unit chain.

use crate::network::spec::{
    BusBarSpec, BusDesignation, ComponentSpec, GeneratorSpec, Impedance, LoadSpec, MeterReading,
    MeterSpec, MeteredQuantity, Phase, PuBaseSpec, Quantity, TransformerSpec, Unit, Winding,
    WindingConnection,
};
use crate::network::{
    AttachKind, ComponentId, LineSpec, Mode, Network, NetworkError, Placement, Point, PortRef,
};
use crate::powerflow::equations::{self, End};
use crate::powerflow::{BranchOrigin, BusSystem, PowerFlowSolution};

const BAR_LENGTH: f64 = 300.0;
const SLOT_SPACING: f64 = 25.0;

/// Builds a network of horizontal bus-bars, handing out distinct attachment
/// points along each bar. Bars are laid out so that no two share a row or
/// a column.
struct BarLayout {
    net: Network,
    bars: Vec<(ComponentId, Point)>,
    used: Vec<usize>,
}

impl BarLayout {
    fn new(mode: Mode) -> Self {
        Self { net: Network::new(mode), bars: Vec::new(), used: Vec::new() }
    }

    fn bar(&mut self, at: Point, designation: Option<BusDesignation>, label: &str) -> usize {
        let id = self
            .net
            .add_labeled(
                ComponentSpec::BusBar(BusBarSpec { length: BAR_LENGTH, designation }),
                Placement::at(at.x, at.y),
                label,
            )
            .expect("bus-bar inside the canvas");
        self.bars.push((id, at));
        self.used.push(0);
        self.bars.len() - 1
    }

    /// Next free point along bar `k`.
    fn slot(&mut self, k: usize) -> (PortRef, Point) {
        let (id, at) = self.bars[k];
        let n = self.used[k];
        self.used[k] += 1;
        let x = at.x - BAR_LENGTH / 2.0 + SLOT_SPACING * (n as f64 + 1.0);
        assert!(x < at.x + BAR_LENGTH / 2.0, "bus-bar {k} out of attachment slots");
        // keep parallel runs leaving one bar apart
        let y = at.y + 0.4 * (n as f64 - 5.0);
        (PortRef::bus_point(id, x, y), Point::new(x, y))
    }

    fn branch(&mut self, a: usize, b: usize, spec: LineSpec) -> ComponentId {
        let (pa, _) = self.slot(a);
        let (pb, _) = self.slot(b);
        self.net.add_line(pa, pb, spec).expect("fixture line")
    }

    fn load(&mut self, k: usize, p_mw: f64, q_mvar: f64) -> ComponentId {
        self.load_spec(k, LoadSpec::Power {
            p: Quantity::new(p_mw, Unit::MW),
            q: Quantity::new(q_mvar, Unit::MVAr),
        })
    }

    fn load_spec(&mut self, k: usize, spec: LoadSpec) -> ComponentId {
        let (port, p) = self.slot(k);
        let id = self
            .net
            .add_component(ComponentSpec::Load(spec), Placement::at(p.x, p.y + 100.0))
            .expect("fixture load");
        self.net
            .add_line(PortRef::indexed(id, 0), port, LineSpec::connecting())
            .expect("load connection");
        id
    }

    fn transformer(&mut self, a: usize, b: usize, spec: TransformerSpec) -> ComponentId {
        let (pa, at) = self.slot(a);
        let (pb, _) = self.slot(b);
        let id = self
            .net
            .add_component(ComponentSpec::Transformer(spec), Placement::at(at.x + 60.0, at.y - 150.0))
            .expect("fixture transformer");
        self.net.add_line(pa, PortRef::indexed(id, 0), LineSpec::connecting()).expect("primary");
        self.net.add_line(PortRef::indexed(id, 1), pb, LineSpec::connecting()).expect("secondary");
        id
    }
}

fn mw(v: f64) -> Quantity {
    Quantity::new(v, Unit::MW)
}

fn kv(v: f64) -> Quantity {
    Quantity::new(v, Unit::KV)
}

fn mva(v: f64) -> Quantity {
    Quantity::new(v, Unit::MVA)
}

fn transformer(x: f64, primary_kv: f64, secondary_kv: f64) -> TransformerSpec {
    TransformerSpec {
        rated_power: mva(100.0),
        phase: Phase::Three,
        primary: Winding { voltage: kv(primary_kv), connection: WindingConnection::Wye },
        secondary: Winding { voltage: kv(secondary_kv), connection: WindingConnection::Wye },
        impedance: Some(Impedance { r: 0.0, x }),
    }
}

/// Series data of the IEEE 14-bus lines: (from, to, r, x, b), 1-based.
pub const IEEE14_LINES: [(usize, usize, f64, f64, f64); 17] = [
    (1, 2, 0.01938, 0.05917, 0.0528),
    (1, 5, 0.05403, 0.22304, 0.0492),
    (2, 3, 0.04699, 0.19797, 0.0438),
    (2, 4, 0.05811, 0.17632, 0.034),
    (2, 5, 0.05695, 0.17388, 0.0346),
    (3, 4, 0.06701, 0.17103, 0.0128),
    (4, 5, 0.01335, 0.04211, 0.0),
    (6, 11, 0.09498, 0.1989, 0.0),
    (6, 12, 0.12291, 0.25581, 0.0),
    (6, 13, 0.06615, 0.13027, 0.0),
    (7, 8, 0.0, 0.17615, 0.0),
    (7, 9, 0.0, 0.11001, 0.0),
    (9, 10, 0.03181, 0.0845, 0.0),
    (9, 14, 0.12711, 0.27038, 0.0),
    (10, 11, 0.08205, 0.19207, 0.0),
    (12, 13, 0.22092, 0.19988, 0.0),
    (13, 14, 0.17093, 0.34802, 0.0),
];

/// IEEE 14-bus transformers: (from, to, x), 1-based. Off-nominal taps are
/// not modelled.
pub const IEEE14_TRANSFORMERS: [(usize, usize, f64); 3] =
    [(4, 7, 0.20912), (4, 9, 0.55618), (5, 6, 0.25202)];

/// IEEE 14-bus demand in MW / MVAr, indexed by bus - 1.
pub const IEEE14_LOADS: [(f64, f64); 14] = [
    (0.0, 0.0),
    (21.7, 12.7),
    (94.2, 19.0),
    (47.8, -3.9),
    (7.6, 1.6),
    (11.2, 7.5),
    (0.0, 0.0),
    (0.0, 0.0),
    (29.5, 16.6),
    (9.0, 5.8),
    (3.5, 1.8),
    (6.1, 1.6),
    (13.5, 5.8),
    (14.9, 5.0),
];

/// Nominal voltage level of each IEEE 14-bus bus, kV.
const IEEE14_KV: [f64; 14] = [
    132.0, 132.0, 132.0, 132.0, 132.0, 33.0, 1.0, 11.0, 33.0, 33.0, 33.0, 33.0, 33.0, 33.0,
];

fn ieee14_designation(bus: usize) -> Option<BusDesignation> {
    let pv = |p: f64, v: f64| {
        Some(BusDesignation::Pv { p_gen: mw(p), v_set: v, q_min: None, q_max: None })
    };
    match bus {
        1 => Some(BusDesignation::Slack { v_set: 1.06, angle_deg: 0.0 }),
        2 => pv(40.0, 1.045),
        3 => pv(0.0, 1.01),
        6 => pv(0.0, 1.07),
        8 => pv(0.0, 1.09),
        _ => None,
    }
}

const STEP: f64 = 620.0;

fn diagonal(k: usize) -> Point {
    Point::new(700.0 + STEP * k as f64, 700.0 + STEP * k as f64)
}

fn ieee14_build(split: bool) -> Network {
    let mut g = BarLayout::new(Mode::PowerFlow);
    for bus in 1..=14 {
        g.bar(diagonal(bus - 1), ieee14_designation(bus), &format!("Bus {bus}"));
    }
    // the split half of bus 4 takes every second attachment at that bus
    let half = split.then(|| {
        let k = g.bar(diagonal(3).offset(STEP / 2.0, STEP / 2.0), None, "Bus 4b");
        let (a, _) = g.slot(3);
        let (b, _) = g.slot(k);
        g.net.add_line(a, b, LineSpec::connecting()).expect("bus tie");
        k
    });
    let mut at4 = 0;
    let mut bar = |bus: usize| {
        if bus == 4 {
            at4 += 1;
            if let Some(k) = half.filter(|_| at4 % 2 == 0) {
                return k;
            }
        }
        bus - 1
    };
    let lines: Vec<_> = IEEE14_LINES.iter().map(|&(f, t, r, x, b)| (bar(f), bar(t), r, x, b)).collect();
    let transformers: Vec<_> = IEEE14_TRANSFORMERS.iter().map(|&(f, t, x)| (bar(f), bar(t), f, t, x)).collect();
    let load4 = bar(4);
    for (f, t, r, x, b) in lines {
        g.branch(f, t, LineSpec::pu(r, x, b));
    }
    for (f, t, fb, tb, x) in transformers {
        g.transformer(f, t, transformer(x, IEEE14_KV[fb - 1], IEEE14_KV[tb - 1]));
    }
    for (k, &(p, q)) in IEEE14_LOADS.iter().enumerate() {
        if p != 0.0 || q != 0.0 {
            g.load(if k == 3 { load4 } else { k }, p, q);
        }
    }
    // 19 MVAr shunt capacitor at bus 9
    g.load_spec(8, LoadSpec::Rlc { r: None, x_l: None, x_c: Some(Quantity::new(1.0 / 0.19, Unit::Pu)) });
    g.net
}

/// The IEEE 14-bus system in power-flow mode, one bus-bar per bus.
pub fn ieee14() -> Network {
    ieee14_build(false)
}

/// [`ieee14`] with bus 4 drawn as two bus-bars joined by a connecting line.
pub fn ieee14_split() -> Network {
    ieee14_build(true)
}

/// Two buses: slack and a PQ load over one line.
pub fn two_bus() -> Network {
    let mut g = BarLayout::new(Mode::PowerFlow);
    let a = g.bar(diagonal(0), Some(BusDesignation::Slack { v_set: 1.0, angle_deg: 0.0 }), "A");
    let b = g.bar(diagonal(2), None, "B");
    g.branch(a, b, LineSpec::pu(0.02, 0.06, 0.03));
    g.load(b, 50.0, 20.0);
    g.net
}

/// Five buses with one slack, one PV and three PQ buses.
pub fn five_bus() -> Network {
    let mut g = BarLayout::new(Mode::PowerFlow);
    let b1 = g.bar(diagonal(0), Some(BusDesignation::Slack { v_set: 1.06, angle_deg: 0.0 }), "North");
    let b2 = g.bar(
        diagonal(2),
        Some(BusDesignation::Pv { p_gen: mw(40.0), v_set: 1.0, q_min: None, q_max: None }),
        "South",
    );
    let b3 = g.bar(diagonal(4), None, "Lake");
    let b4 = g.bar(diagonal(6), None, "Main");
    let b5 = g.bar(diagonal(8), None, "Elm");
    for (f, t, r, x, b) in [
        (b1, b2, 0.02, 0.06, 0.06),
        (b1, b3, 0.08, 0.24, 0.05),
        (b2, b3, 0.06, 0.18, 0.04),
        (b2, b4, 0.06, 0.18, 0.04),
        (b2, b5, 0.04, 0.12, 0.03),
        (b3, b4, 0.01, 0.03, 0.02),
        (b4, b5, 0.08, 0.24, 0.05),
    ] {
        g.branch(f, t, LineSpec::pu(r, x, b));
    }
    g.load(b2, 20.0, 10.0);
    g.load(b3, 45.0, 15.0);
    g.load(b4, 40.0, 5.0);
    g.load(b5, 60.0, 10.0);
    g.net
}

/// Ids of the interesting parts of [`three_region_chain`].
#[derive(Debug, Clone, Copy)]
pub struct ChainIds {
    pub generator: ComponentId,
    pub step_up: ComponentId,
    pub hv_bus: ComponentId,
    pub hv_line: ComponentId,
    pub hv_bus_far: ComponentId,
    pub step_down: ComponentId,
    pub load: ComponentId,
    pub pu_base: ComponentId,
}

/// Generator (13.8 kV) → step-up 13.8/138 kV → 138 kV line of 19.044 Ω →
/// step-down 138/69 kV (50 MVA, 0.08 pu) → load, in per-unit mode with a
/// 100 MVA, 13.8 kV base next to the generator.
pub fn three_region_chain() -> (Network, ChainIds) {
    let mut g = BarLayout::new(Mode::PerUnit);
    let generator = g
        .net
        .add_component(
            ComponentSpec::Generator(GeneratorSpec {
                rated_power: mva(100.0),
                phase: Phase::Three,
                rated_voltage: kv(13.8),
                impedance: Some(Impedance { r: 0.0, x: 0.2 }),
            }),
            Placement::at(500.0, 1000.0),
        )
        .expect("generator");
    let step_up = g
        .net
        .add_component(
            ComponentSpec::Transformer(TransformerSpec {
                rated_power: mva(100.0),
                phase: Phase::Three,
                primary: Winding { voltage: kv(13.8), connection: WindingConnection::Delta },
                secondary: Winding { voltage: kv(138.0), connection: WindingConnection::Wye },
                impedance: Some(Impedance { r: 0.0, x: 0.1 }),
            }),
            Placement::at(700.0, 1000.0),
        )
        .expect("step-up");
    g.net
        .add_line(PortRef::indexed(generator, 0), PortRef::indexed(step_up, 0), LineSpec::connecting())
        .expect("generator connection");
    let hv = g.bar(Point::new(1200.0, 1000.0), None, "HV 1");
    let hv_far = g.bar(Point::new(2200.0, 1000.0), None, "HV 2");
    let (p, _) = g.slot(hv);
    g.net.add_line(PortRef::indexed(step_up, 1), p, LineSpec::connecting()).expect("step-up secondary");
    let (pa, _) = g.slot(hv);
    let (pb, _) = g.slot(hv_far);
    let hv_line = g
        .net
        .add_line(pa, pb, LineSpec { r: 1.9044, x: 19.044, b: 0.0, unit: crate::network::spec::ImpedanceUnit::Ohm })
        .expect("hv line");
    let step_down = g
        .net
        .add_component(
            ComponentSpec::Transformer(TransformerSpec {
                rated_power: mva(50.0),
                phase: Phase::Three,
                primary: Winding { voltage: kv(138.0), connection: WindingConnection::Wye },
                secondary: Winding { voltage: kv(69.0), connection: WindingConnection::Delta },
                impedance: Some(Impedance { r: 0.0, x: 0.08 }),
            }),
            Placement::at(2700.0, 1000.0),
        )
        .expect("step-down");
    let (p, _) = g.slot(hv_far);
    g.net.add_line(p, PortRef::indexed(step_down, 0), LineSpec::connecting()).expect("step-down primary");
    let load = g
        .net
        .add_component(
            ComponentSpec::Load(LoadSpec::Power { p: mw(30.0), q: Quantity::new(10.0, Unit::MVAr) }),
            Placement::at(2900.0, 1100.0),
        )
        .expect("load");
    g.net
        .add_line(PortRef::indexed(step_down, 1), PortRef::indexed(load, 0), LineSpec::connecting())
        .expect("load connection");
    let pu_base = g
        .net
        .add_component(
            ComponentSpec::PuBase(PuBaseSpec { base_power: mva(100.0), phase: Phase::Three, base_voltage: kv(13.8) }),
            Placement::at(480.0, 950.0),
        )
        .expect("pu base");
    let ids = ChainIds {
        generator,
        step_up,
        hv_bus: g.bars[hv].0,
        hv_line,
        hv_bus_far: g.bars[hv_far].0,
        step_down,
        load,
        pu_base,
    };
    (g.net, ids)
}

/// First point along `route` (walking from its start) that attaches to
/// `line` and lies nearer to `near` than to `far`.
fn spot_on_line(net: &Network, line: ComponentId, route: &[Point], near: Point, far: Point) -> Option<Point> {
    for pair in route.windows(2) {
        let (a, b) = (pair[0], pair[1]);
        let len = a.distance(b);
        let mut s = 5.0;
        while s < len {
            let p = Point::new(a.x + (b.x - a.x) * s / len, a.y + (b.y - a.y) * s / len);
            if p.distance(near) < p.distance(far)
                && net.nearest_attachable(p, &[AttachKind::Line, AttachKind::BusBar]) == Ok(line)
            {
                return Some(p);
            }
            s += 5.0;
        }
    }
    None
}

/// Copy a solved power-flow network into state-estimation mode with a
/// noiseless meter set taken from `solution`: a P/Q/V meter on every
/// bus-bar and a P/Q meter near both ends of every line branch.
pub fn metered(net: &Network, sys: &BusSystem, solution: &PowerFlowSolution) -> Result<Network, NetworkError> {
    let mut out = net.clone();
    out.set_mode(Mode::StateEstimation)?;
    let reading = |value: f64| MeterReading { value, sigma: None };
    for c in net.components() {
        let Some((a, _)) = c.bar_segment() else { continue };
        let bus = sys.node_bus[&crate::powerflow::extract::NodeKey { component: c.id, terminal: 0 }];
        let readings = [
            (MeteredQuantity::P, reading(solution.p_calc[bus])),
            (MeteredQuantity::Q, reading(solution.q_calc[bus])),
            (MeteredQuantity::Vmag, reading(solution.v[bus])),
        ]
        .into_iter()
        .collect();
        out.add_component(ComponentSpec::Meter(MeterSpec { readings }), Placement::at(a.x, a.y))?;
    }
    for br in &sys.branches {
        let BranchOrigin::Line(id) = br.origin else { continue };
        let line = net.line(id).expect("branch line exists");
        let mut route: Vec<Point> = line.route.iter().map(|s| s.from).collect();
        route.push(line.route.last().expect("routed").to);
        let (start, end) = (route[0], *route.last().expect("routed"));
        let reversed: Vec<Point> = route.iter().rev().copied().collect();
        for (side, path, near, far) in [(End::From, &route, start, end), (End::To, &reversed, end, start)] {
            let Some(at) = spot_on_line(net, id, path, near, far) else { continue };
            let (p, q) = equations::branch_flow(br, &solution.v, &solution.theta, side);
            let readings = [(MeteredQuantity::P, reading(p)), (MeteredQuantity::Q, reading(q))].into_iter().collect();
            out.add_component(ComponentSpec::Meter(MeterSpec { readings }), Placement::at(at.x, at.y))?;
        }
    }
    Ok(out)
}
