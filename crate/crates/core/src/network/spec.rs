//! Component specifications, engineering units and the single-string
//! property syntax used by the properties window (`"100 MVA 3-ph"`).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Unit {
    V,
    #[serde(rename = "kV")]
    KV,
    VA,
    #[serde(rename = "kVA")]
    KVA,
    MVA,
    W,
    MW,
    VAr,
    MVAr,
    #[serde(rename = "ohm")]
    Ohm,
    #[serde(rename = "pu")]
    Pu,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dimension {
    Voltage,
    ApparentPower,
    ActivePower,
    ReactivePower,
    Impedance,
    PerUnit,
}

const UNIT_TABLE: [Unit; 11] = [
    Unit::V,
    Unit::KV,
    Unit::VA,
    Unit::KVA,
    Unit::MVA,
    Unit::W,
    Unit::MW,
    Unit::VAr,
    Unit::MVAr,
    Unit::Ohm,
    Unit::Pu,
];

impl Unit {
    pub fn symbol(self) -> &'static str {
        match self {
            Unit::V => "V",
            Unit::KV => "kV",
            Unit::VA => "VA",
            Unit::KVA => "kVA",
            Unit::MVA => "MVA",
            Unit::W => "W",
            Unit::MW => "MW",
            Unit::VAr => "VAr",
            Unit::MVAr => "MVAr",
            Unit::Ohm => "ohm",
            Unit::Pu => "pu",
        }
    }

    /// Multiplier to the SI base unit (V, VA, W, VAr, ohm). 1 for `pu`.
    pub fn scale(self) -> f64 {
        match self {
            Unit::V | Unit::VA | Unit::W | Unit::VAr | Unit::Ohm | Unit::Pu => 1.0,
            Unit::KV | Unit::KVA => 1e3,
            Unit::MVA | Unit::MW | Unit::MVAr => 1e6,
        }
    }

    pub fn dimension(self) -> Dimension {
        match self {
            Unit::V | Unit::KV => Dimension::Voltage,
            Unit::VA | Unit::KVA | Unit::MVA => Dimension::ApparentPower,
            Unit::W | Unit::MW => Dimension::ActivePower,
            Unit::VAr | Unit::MVAr => Dimension::ReactivePower,
            Unit::Ohm => Dimension::Impedance,
            Unit::Pu => Dimension::PerUnit,
        }
    }

    /// Case-insensitive lookup in the fixed unit table.
    pub fn parse(token: &str) -> Option<Unit> {
        UNIT_TABLE
            .iter()
            .copied()
            .find(|u| u.symbol().eq_ignore_ascii_case(token))
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A magnitude with its engineering unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub value: f64,
    pub unit: Unit,
}

impl Quantity {
    pub const fn new(value: f64, unit: Unit) -> Self {
        Self { value, unit }
    }

    /// Value in SI base units (or per-unit for `pu`).
    pub fn si(&self) -> f64 {
        self.value * self.unit.scale()
    }

    pub fn is_per_unit(&self) -> bool {
        self.unit == Unit::Pu
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.value, self.unit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Phase {
    #[default]
    #[serde(rename = "3-ph")]
    Three,
    #[serde(rename = "1-ph")]
    Single,
}

impl Phase {
    pub fn symbol(self) -> &'static str {
        match self {
            Phase::Three => "3-ph",
            Phase::Single => "1-ph",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindingConnection {
    Delta,
    Wye,
}

impl WindingConnection {
    pub fn symbol(self) -> &'static str {
        match self {
            WindingConnection::Delta => "delta",
            WindingConnection::Wye => "wye",
        }
    }
}

// ---------------------------------------------------------------------------
// property-string tokenizer

/// One slot of a property-string schema.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Magnitude,
    Unit,
    /// A keyword drawn from a fixed list, e.g. `3-ph` or `delta`.
    Qualifier {
        allowed: &'static [&'static str],
        optional: bool,
    },
}

pub const PHASE_QUALIFIERS: &[&str] = &["3-ph", "1-ph"];
pub const WINDING_QUALIFIERS: &[&str] = &["delta", "wye"];
pub const BUS_TYPE_QUALIFIERS: &[&str] = &["slack", "pv", "pq"];

#[derive(Debug, Clone, PartialEq)]
pub enum Token {
    Magnitude(f64),
    Unit(Unit),
    Qualifier(String),
}

impl fmt::Display for Token {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Token::Magnitude(v) => write!(f, "{v}"),
            Token::Unit(u) => f.write_str(u.symbol()),
            Token::Qualifier(q) => f.write_str(q),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("MalformedMagnitude: `{0}` is not a decimal number")]
    MalformedMagnitude(String),
    #[error("UnknownUnit: `{0}`")]
    UnknownUnit(String),
    #[error("ArityMismatch: expected {expected} tokens, found {found}")]
    ArityMismatch { expected: String, found: usize },
    #[error("UnknownQualifier: `{found}` (expected one of {allowed})")]
    UnknownQualifier { found: String, allowed: String },
    #[error("WrongUnit: {unit} is not valid here")]
    WrongUnit { unit: Unit },
}

/// Split `raw` on whitespace and coerce each token into the matching slot.
pub fn parse_property_string(raw: &str, schema: &[Slot]) -> Result<Vec<Token>, ParseError> {
    let parts: Vec<&str> = raw.split_whitespace().collect();
    let required = schema
        .iter()
        .filter(|s| !matches!(s, Slot::Qualifier { optional: true, .. }))
        .count();
    if parts.len() < required || parts.len() > schema.len() {
        let expected = if required == schema.len() {
            required.to_string()
        } else {
            format!("{required}..={}", schema.len())
        };
        return Err(ParseError::ArityMismatch {
            expected,
            found: parts.len(),
        });
    }
    let mut tokens = Vec::with_capacity(parts.len());
    for (slot, part) in schema.iter().zip(parts.iter()) {
        let tok = match slot {
            Slot::Magnitude => Token::Magnitude(parse_magnitude(part)?),
            Slot::Unit => Token::Unit(
                Unit::parse(part).ok_or_else(|| ParseError::UnknownUnit(part.to_string()))?,
            ),
            Slot::Qualifier { allowed, .. } => {
                let found = allowed
                    .iter()
                    .find(|a| a.eq_ignore_ascii_case(part))
                    .ok_or_else(|| ParseError::UnknownQualifier {
                        found: part.to_string(),
                        allowed: allowed.join("|"),
                    })?;
                Token::Qualifier(found.to_string())
            }
        };
        tokens.push(tok);
    }
    Ok(tokens)
}

/// Inverse of [`parse_property_string`].
pub fn render_tokens(tokens: &[Token]) -> String {
    tokens
        .iter()
        .map(Token::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

fn parse_magnitude(s: &str) -> Result<f64, ParseError> {
    // f64::from_str accepts "inf" and "nan"; those are not decimal numbers.
    let looks_decimal = s
        .chars()
        .all(|c| c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E'))
        && s.chars().any(|c| c.is_ascii_digit());
    match s.parse::<f64>() {
        Ok(v) if looks_decimal && v.is_finite() => Ok(v),
        _ => Err(ParseError::MalformedMagnitude(s.to_string())),
    }
}

// ---------------------------------------------------------------------------
// component specs

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ComponentKind {
    Generator,
    Transformer,
    Load,
    BusBar,
    Meter,
    PuBase,
}

impl ComponentKind {
    pub const ALL: [ComponentKind; 6] = [
        ComponentKind::Generator,
        ComponentKind::Transformer,
        ComponentKind::Load,
        ComponentKind::BusBar,
        ComponentKind::Meter,
        ComponentKind::PuBase,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ComponentKind::Generator => "generator",
            ComponentKind::Transformer => "transformer",
            ComponentKind::Load => "load",
            ComponentKind::BusBar => "bus-bar",
            ComponentKind::Meter => "meter",
            ComponentKind::PuBase => "pu-base",
        }
    }

    /// Number of indexed connection ports. Bus-bars accept any enclosed
    /// point instead; meters and the per-unit base are placement-only.
    pub fn indexed_ports(self) -> usize {
        match self {
            ComponentKind::Generator | ComponentKind::Load => 1,
            ComponentKind::Transformer => 2,
            ComponentKind::BusBar | ComponentKind::Meter | ComponentKind::PuBase => 0,
        }
    }

    pub fn is_connectable(self) -> bool {
        !matches!(self, ComponentKind::Meter | ComponentKind::PuBase)
    }
}

impl fmt::Display for ComponentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Series impedance `r + jx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Impedance {
    pub r: f64,
    pub x: f64,
}

impl Impedance {
    pub fn is_zero(&self) -> bool {
        self.r == 0.0 && self.x == 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub rated_power: Quantity,
    #[serde(default)]
    pub phase: Phase,
    pub rated_voltage: Quantity,
    /// Per-unit on the machine's own rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance: Option<Impedance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Winding {
    pub voltage: Quantity,
    pub connection: WindingConnection,
}

/// Two-winding transformer. Port 0 is the primary winding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerSpec {
    pub rated_power: Quantity,
    #[serde(default)]
    pub phase: Phase,
    pub primary: Winding,
    pub secondary: Winding,
    /// Per-unit on the transformer's own rating.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impedance: Option<Impedance>,
}

/// A load is given either by its P/Q demand or by parallel R, X_L and X_C
/// elements at nominal frequency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum LoadSpec {
    Power {
        p: Quantity,
        q: Quantity,
    },
    Rlc {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        r: Option<Quantity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_l: Option<Quantity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        x_c: Option<Quantity>,
    },
}

/// Solve-time role of a bus-bar in power flow and state estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum BusDesignation {
    Slack {
        v_set: f64,
        #[serde(default)]
        angle_deg: f64,
    },
    Pv {
        p_gen: Quantity,
        v_set: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q_min: Option<Quantity>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        q_max: Option<Quantity>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusBarSpec {
    pub length: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub designation: Option<BusDesignation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImpedanceUnit {
    #[default]
    Pu,
    Ohm,
}

/// Series impedance and total charging susceptance of a line. Values are
/// per-unit, or ohm/siemens when `unit` is `ohm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineSpec {
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub unit: ImpedanceUnit,
}

impl LineSpec {
    pub fn pu(r: f64, x: f64, b: f64) -> Self {
        Self { r, x, b, unit: ImpedanceUnit::Pu }
    }

    pub fn connecting() -> Self {
        Self::pu(0.0, 0.0, 0.0)
    }

    /// Zero series impedance and no charging: electrically a short.
    pub fn is_connecting(&self) -> bool {
        self.r == 0.0 && self.x == 0.0 && self.b == 0.0
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.r.is_finite() && self.x.is_finite() && self.b.is_finite()) {
            return Err("line parameters must be finite".into());
        }
        if self.r < 0.0 {
            return Err("line resistance must be non-negative".into());
        }
        if self.r == 0.0 && self.x == 0.0 && self.b != 0.0 {
            return Err("a zero-impedance line cannot carry charging susceptance".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MeteredQuantity {
    P,
    Q,
    #[serde(rename = "V")]
    Vmag,
}

impl MeteredQuantity {
    pub fn symbol(self) -> &'static str {
        match self {
            MeteredQuantity::P => "P",
            MeteredQuantity::Q => "Q",
            MeteredQuantity::Vmag => "V",
        }
    }

    pub fn default_sigma(self) -> f64 {
        match self {
            MeteredQuantity::P | MeteredQuantity::Q => 0.01,
            MeteredQuantity::Vmag => 0.004,
        }
    }
}

/// Reading of one metered quantity, per-unit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeterReading {
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

impl MeterReading {
    pub fn sigma_or_default(&self, q: MeteredQuantity) -> f64 {
        self.sigma.unwrap_or_else(|| q.default_sigma())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeterSpec {
    pub readings: BTreeMap<MeteredQuantity, MeterReading>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PuBaseSpec {
    pub base_power: Quantity,
    #[serde(default)]
    pub phase: Phase,
    pub base_voltage: Quantity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "spec", rename_all = "kebab-case")]
pub enum ComponentSpec {
    Generator(GeneratorSpec),
    Transformer(TransformerSpec),
    Load(LoadSpec),
    BusBar(BusBarSpec),
    Meter(MeterSpec),
    PuBase(PuBaseSpec),
}

fn positive(q: &Quantity, what: &str, dims: &[Dimension]) -> Result<(), String> {
    if !dims.contains(&q.unit.dimension()) {
        return Err(format!("{what}: unit {} not allowed", q.unit));
    }
    if !(q.value.is_finite() && q.value > 0.0) {
        return Err(format!("{what} must be > 0"));
    }
    Ok(())
}

fn finite(q: &Quantity, what: &str, dims: &[Dimension]) -> Result<(), String> {
    if !dims.contains(&q.unit.dimension()) {
        return Err(format!("{what}: unit {} not allowed", q.unit));
    }
    if !q.value.is_finite() {
        return Err(format!("{what} must be finite"));
    }
    Ok(())
}

fn finite_impedance(z: &Option<Impedance>) -> Result<(), String> {
    if let Some(z) = z {
        if !(z.r.is_finite() && z.x.is_finite()) || z.r < 0.0 {
            return Err("impedance must be finite with r >= 0".into());
        }
    }
    Ok(())
}

const VOLTAGE: &[Dimension] = &[Dimension::Voltage];
const RATING: &[Dimension] = &[Dimension::ApparentPower];
const ACTIVE: &[Dimension] = &[Dimension::ActivePower, Dimension::PerUnit];
const REACTIVE: &[Dimension] = &[Dimension::ReactivePower, Dimension::PerUnit];
const OHMIC: &[Dimension] = &[Dimension::Impedance, Dimension::PerUnit];

impl ComponentSpec {
    pub fn kind(&self) -> ComponentKind {
        match self {
            ComponentSpec::Generator(_) => ComponentKind::Generator,
            ComponentSpec::Transformer(_) => ComponentKind::Transformer,
            ComponentSpec::Load(_) => ComponentKind::Load,
            ComponentSpec::BusBar(_) => ComponentKind::BusBar,
            ComponentSpec::Meter(_) => ComponentKind::Meter,
            ComponentSpec::PuBase(_) => ComponentKind::PuBase,
        }
    }

    /// Type-level invariants of each spec.
    pub fn validate(&self) -> Result<(), String> {
        match self {
            ComponentSpec::Generator(g) => {
                positive(&g.rated_power, "rated power", RATING)?;
                positive(&g.rated_voltage, "rated voltage", VOLTAGE)?;
                finite_impedance(&g.impedance)
            }
            ComponentSpec::Transformer(t) => {
                positive(&t.rated_power, "rated power", RATING)?;
                positive(&t.primary.voltage, "primary voltage", VOLTAGE)?;
                positive(&t.secondary.voltage, "secondary voltage", VOLTAGE)?;
                finite_impedance(&t.impedance)
            }
            ComponentSpec::Load(LoadSpec::Power { p, q }) => {
                finite(p, "real power", ACTIVE)?;
                finite(q, "reactive power", REACTIVE)
            }
            ComponentSpec::Load(LoadSpec::Rlc { r, x_l, x_c }) => {
                if r.is_none() && x_l.is_none() && x_c.is_none() {
                    return Err("RLC load needs at least one element".into());
                }
                for (q, what) in [(r, "resistance"), (x_l, "inductive reactance"), (x_c, "capacitive reactance")] {
                    if let Some(q) = q {
                        positive(q, what, OHMIC)?;
                    }
                }
                Ok(())
            }
            ComponentSpec::BusBar(b) => {
                if !(b.length.is_finite() && b.length > 0.0) {
                    return Err("bus-bar length must be > 0".into());
                }
                match &b.designation {
                    Some(BusDesignation::Slack { v_set, angle_deg }) => {
                        if !(v_set.is_finite() && *v_set > 0.0 && angle_deg.is_finite()) {
                            return Err("slack setpoint must be finite with |V| > 0".into());
                        }
                    }
                    Some(BusDesignation::Pv { p_gen, v_set, q_min, q_max }) => {
                        finite(p_gen, "generation", ACTIVE)?;
                        if !(v_set.is_finite() && *v_set > 0.0) {
                            return Err("voltage setpoint must be > 0".into());
                        }
                        for q in [q_min, q_max].into_iter().flatten() {
                            finite(q, "reactive limit", REACTIVE)?;
                        }
                    }
                    None => {}
                }
                Ok(())
            }
            ComponentSpec::Meter(m) => {
                if m.readings.is_empty() {
                    return Err("meter must measure at least one quantity".into());
                }
                for (q, r) in &m.readings {
                    if !r.value.is_finite() {
                        return Err(format!("meter reading {} must be finite", q.symbol()));
                    }
                    if let Some(s) = r.sigma {
                        if !(s.is_finite() && s > 0.0) {
                            return Err(format!("standard deviation of {} must be > 0", q.symbol()));
                        }
                    }
                }
                Ok(())
            }
            ComponentSpec::PuBase(b) => {
                positive(&b.base_power, "base power", RATING)?;
                positive(&b.base_voltage, "base voltage", VOLTAGE)
            }
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match self {
            ComponentSpec::Generator(g) => Some(g.phase),
            ComponentSpec::Transformer(t) => Some(t.phase),
            ComponentSpec::PuBase(b) => Some(b.phase),
            _ => None,
        }
    }

    /// Render the spec as the properties-window strings, one per field.
    pub fn to_properties(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            out.insert(k.to_string(), v);
        };
        let put_z = |put: &mut dyn FnMut(&str, String), z: &Option<Impedance>| {
            if let Some(z) = z {
                put("resistance", format!("{} pu", z.r));
                put("reactance", format!("{} pu", z.x));
            }
        };
        match self {
            ComponentSpec::Generator(g) => {
                put("rated power", format!("{} {}", g.rated_power, g.phase.symbol()));
                put("rated voltage", g.rated_voltage.to_string());
                put_z(&mut put, &g.impedance);
            }
            ComponentSpec::Transformer(t) => {
                put("rated power", format!("{} {}", t.rated_power, t.phase.symbol()));
                put("primary", format!("{} {}", t.primary.voltage, t.primary.connection.symbol()));
                put(
                    "secondary",
                    format!("{} {}", t.secondary.voltage, t.secondary.connection.symbol()),
                );
                put_z(&mut put, &t.impedance);
            }
            ComponentSpec::Load(LoadSpec::Power { p, q }) => {
                put("real power", p.to_string());
                put("reactive power", q.to_string());
            }
            ComponentSpec::Load(LoadSpec::Rlc { r, x_l, x_c }) => {
                if let Some(r) = r {
                    put("resistance", r.to_string());
                }
                if let Some(x) = x_l {
                    put("inductive reactance", x.to_string());
                }
                if let Some(x) = x_c {
                    put("capacitive reactance", x.to_string());
                }
            }
            ComponentSpec::BusBar(b) => {
                put("length", b.length.to_string());
                match &b.designation {
                    None => {}
                    Some(BusDesignation::Slack { v_set, angle_deg }) => {
                        put("bus type", "slack".into());
                        put("voltage setpoint", format!("{v_set} pu"));
                        put("angle", angle_deg.to_string());
                    }
                    Some(BusDesignation::Pv { p_gen, v_set, q_min, q_max }) => {
                        put("bus type", "pv".into());
                        put("voltage setpoint", format!("{v_set} pu"));
                        put("generation", p_gen.to_string());
                        if let Some(q) = q_min {
                            put("q min", q.to_string());
                        }
                        if let Some(q) = q_max {
                            put("q max", q.to_string());
                        }
                    }
                }
            }
            ComponentSpec::Meter(m) => {
                for (q, r) in &m.readings {
                    put(q.symbol(), format!("{} pu", r.value));
                    if let Some(s) = r.sigma {
                        put(&format!("sigma {}", q.symbol()), format!("{s} pu"));
                    }
                }
            }
            ComponentSpec::PuBase(b) => {
                put("base power", format!("{} {}", b.base_power, b.phase.symbol()));
                put("base voltage", b.base_voltage.to_string());
            }
        }
        out
    }

    /// Parse properties-window strings into a typed spec of `kind`.
    pub fn from_properties(
        kind: ComponentKind,
        props: &BTreeMap<String, String>,
    ) -> Result<ComponentSpec, PropertyError> {
        let reader = PropertyReader { props };
        let spec = match kind {
            ComponentKind::Generator => {
                let (rated_power, phase) = reader.rating("rated power")?;
                ComponentSpec::Generator(GeneratorSpec {
                    rated_power,
                    phase,
                    rated_voltage: reader.quantity("rated voltage")?,
                    impedance: reader.impedance()?,
                })
            }
            ComponentKind::Transformer => {
                let (rated_power, phase) = reader.rating("rated power")?;
                ComponentSpec::Transformer(TransformerSpec {
                    rated_power,
                    phase,
                    primary: reader.winding("primary")?,
                    secondary: reader.winding("secondary")?,
                    impedance: reader.impedance()?,
                })
            }
            ComponentKind::Load => {
                if reader.has("real power") || reader.has("reactive power") {
                    ComponentSpec::Load(LoadSpec::Power {
                        p: reader.quantity("real power")?,
                        q: reader.quantity("reactive power")?,
                    })
                } else {
                    ComponentSpec::Load(LoadSpec::Rlc {
                        r: reader.optional_quantity("resistance")?,
                        x_l: reader.optional_quantity("inductive reactance")?,
                        x_c: reader.optional_quantity("capacitive reactance")?,
                    })
                }
            }
            ComponentKind::BusBar => {
                let length = reader.magnitude("length")?;
                let designation = match reader.optional_keyword("bus type", BUS_TYPE_QUALIFIERS)? {
                    None => None,
                    Some(t) if t == "pq" => None,
                    Some(t) if t == "slack" => Some(BusDesignation::Slack {
                        v_set: reader.pu("voltage setpoint")?,
                        angle_deg: reader.optional_magnitude("angle")?.unwrap_or(0.0),
                    }),
                    Some(_) => Some(BusDesignation::Pv {
                        p_gen: reader.quantity("generation")?,
                        v_set: reader.pu("voltage setpoint")?,
                        q_min: reader.optional_quantity("q min")?,
                        q_max: reader.optional_quantity("q max")?,
                    }),
                };
                ComponentSpec::BusBar(BusBarSpec { length, designation })
            }
            ComponentKind::Meter => {
                let mut readings = BTreeMap::new();
                for q in [MeteredQuantity::P, MeteredQuantity::Q, MeteredQuantity::Vmag] {
                    if reader.has(q.symbol()) {
                        let value = reader.pu(q.symbol())?;
                        let sigma_key = format!("sigma {}", q.symbol());
                        let sigma = if reader.has(&sigma_key) {
                            Some(reader.pu(&sigma_key)?)
                        } else {
                            None
                        };
                        readings.insert(q, MeterReading { value, sigma });
                    }
                }
                ComponentSpec::Meter(MeterSpec { readings })
            }
            ComponentKind::PuBase => {
                let (base_power, phase) = reader.rating("base power")?;
                ComponentSpec::PuBase(PuBaseSpec {
                    base_power,
                    phase,
                    base_voltage: reader.quantity("base voltage")?,
                })
            }
        };
        if let Some(unknown) = props.keys().find(|k| !spec.to_properties_keys().contains(k)) {
            return Err(PropertyError::UnknownProperty(unknown.clone()));
        }
        Ok(spec)
    }

    fn to_properties_keys(&self) -> Vec<String> {
        self.to_properties().into_keys().collect()
    }
}

impl LineSpec {
    pub fn to_properties(&self) -> BTreeMap<String, String> {
        let unit = match self.unit {
            ImpedanceUnit::Pu => Unit::Pu,
            ImpedanceUnit::Ohm => Unit::Ohm,
        };
        let mut out = BTreeMap::new();
        out.insert("resistance".into(), format!("{} {unit}", self.r));
        out.insert("reactance".into(), format!("{} {unit}", self.x));
        out.insert("charging".into(), self.b.to_string());
        out
    }

    pub fn from_properties(props: &BTreeMap<String, String>) -> Result<LineSpec, PropertyError> {
        let reader = PropertyReader { props };
        let r = reader.quantity("resistance")?;
        let x = reader.quantity("reactance")?;
        let unit = match (r.unit, x.unit) {
            (Unit::Pu, Unit::Pu) => ImpedanceUnit::Pu,
            (Unit::Ohm, Unit::Ohm) => ImpedanceUnit::Ohm,
            _ => {
                return Err(PropertyError::Invalid {
                    property: "reactance".into(),
                    reason: "resistance and reactance must both be pu or both ohm".into(),
                })
            }
        };
        let b = reader.optional_magnitude("charging")?.unwrap_or(0.0);
        if let Some(unknown) = props
            .keys()
            .find(|k| !["resistance", "reactance", "charging"].contains(&k.as_str()))
        {
            return Err(PropertyError::UnknownProperty(unknown.clone()));
        }
        Ok(LineSpec { r: r.value, x: x.value, b, unit })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PropertyError {
    #[error("property `{property}`: {source}")]
    Parse {
        property: String,
        #[source]
        source: ParseError,
    },
    #[error("MissingProperty: `{0}`")]
    Missing(String),
    #[error("UnknownProperty: `{0}`")]
    UnknownProperty(String),
    #[error("property `{property}`: {reason}")]
    Invalid { property: String, reason: String },
}

struct PropertyReader<'a> {
    props: &'a BTreeMap<String, String>,
}

impl PropertyReader<'_> {
    fn has(&self, key: &str) -> bool {
        self.props.contains_key(key)
    }

    fn tokens(&self, key: &str, schema: &[Slot]) -> Result<Option<Vec<Token>>, PropertyError> {
        match self.props.get(key) {
            None => Ok(None),
            Some(raw) => parse_property_string(raw, schema)
                .map(Some)
                .map_err(|source| PropertyError::Parse {
                    property: key.to_string(),
                    source,
                }),
        }
    }

    fn required(&self, key: &str, schema: &[Slot]) -> Result<Vec<Token>, PropertyError> {
        self.tokens(key, schema)?
            .ok_or_else(|| PropertyError::Missing(key.to_string()))
    }

    fn quantity(&self, key: &str) -> Result<Quantity, PropertyError> {
        let t = self.required(key, &[Slot::Magnitude, Slot::Unit])?;
        Ok(quantity_from(&t))
    }

    fn optional_quantity(&self, key: &str) -> Result<Option<Quantity>, PropertyError> {
        Ok(self
            .tokens(key, &[Slot::Magnitude, Slot::Unit])?
            .map(|t| quantity_from(&t)))
    }

    fn pu(&self, key: &str) -> Result<f64, PropertyError> {
        let q = self.quantity(key)?;
        if q.unit != Unit::Pu {
            return Err(PropertyError::Parse {
                property: key.to_string(),
                source: ParseError::WrongUnit { unit: q.unit },
            });
        }
        Ok(q.value)
    }

    fn magnitude(&self, key: &str) -> Result<f64, PropertyError> {
        self.optional_magnitude(key)?
            .ok_or_else(|| PropertyError::Missing(key.to_string()))
    }

    fn optional_magnitude(&self, key: &str) -> Result<Option<f64>, PropertyError> {
        Ok(self.tokens(key, &[Slot::Magnitude])?.map(|t| match t[0] {
            Token::Magnitude(v) => v,
            _ => unreachable!(),
        }))
    }

    fn optional_keyword(
        &self,
        key: &str,
        allowed: &'static [&'static str],
    ) -> Result<Option<String>, PropertyError> {
        Ok(self
            .tokens(key, &[Slot::Qualifier { allowed, optional: false }])?
            .map(|t| t[0].to_string()))
    }

    fn rating(&self, key: &str) -> Result<(Quantity, Phase), PropertyError> {
        let t = self.required(
            key,
            &[
                Slot::Magnitude,
                Slot::Unit,
                Slot::Qualifier { allowed: PHASE_QUALIFIERS, optional: true },
            ],
        )?;
        let phase = match t.get(2) {
            Some(Token::Qualifier(q)) if q == "1-ph" => Phase::Single,
            _ => Phase::Three,
        };
        Ok((quantity_from(&t), phase))
    }

    fn winding(&self, key: &str) -> Result<Winding, PropertyError> {
        let t = self.required(
            key,
            &[
                Slot::Magnitude,
                Slot::Unit,
                Slot::Qualifier { allowed: WINDING_QUALIFIERS, optional: false },
            ],
        )?;
        let connection = match &t[2] {
            Token::Qualifier(q) if q == "delta" => WindingConnection::Delta,
            _ => WindingConnection::Wye,
        };
        Ok(Winding { voltage: quantity_from(&t), connection })
    }

    fn impedance(&self) -> Result<Option<Impedance>, PropertyError> {
        match (self.has("resistance"), self.has("reactance")) {
            (false, false) => Ok(None),
            _ => Ok(Some(Impedance {
                r: self.pu("resistance")?,
                x: self.pu("reactance")?,
            })),
        }
    }
}

fn quantity_from(tokens: &[Token]) -> Quantity {
    match (&tokens[0], &tokens[1]) {
        (Token::Magnitude(v), Token::Unit(u)) => Quantity::new(*v, *u),
        _ => unreachable!("schema guarantees magnitude then unit"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RATING_SCHEMA: &[Slot] = &[
        Slot::Magnitude,
        Slot::Unit,
        Slot::Qualifier { allowed: PHASE_QUALIFIERS, optional: false },
    ];

    #[test]
    fn splits_rated_power_string() {
        let t = parse_property_string("100 MVA 3-ph", RATING_SCHEMA).unwrap();
        assert_eq!(
            t,
            vec![
                Token::Magnitude(100.0),
                Token::Unit(Unit::MVA),
                Token::Qualifier("3-ph".into())
            ]
        );
    }

    #[test]
    fn two_slot_voltage() {
        let t = parse_property_string("13.8 kV", &[Slot::Magnitude, Slot::Unit]).unwrap();
        assert_eq!(t, vec![Token::Magnitude(13.8), Token::Unit(Unit::KV)]);
    }

    #[test]
    fn rejects_non_numeric_magnitude() {
        assert_eq!(
            parse_property_string("abc MVA", &[Slot::Magnitude, Slot::Unit]),
            Err(ParseError::MalformedMagnitude("abc".into()))
        );
        assert!(matches!(
            parse_property_string("inf MVA", &[Slot::Magnitude, Slot::Unit]),
            Err(ParseError::MalformedMagnitude(_))
        ));
    }

    #[test]
    fn units_case_insensitive_and_fixed() {
        assert_eq!(Unit::parse("mva"), Some(Unit::MVA));
        assert_eq!(Unit::parse("KV"), Some(Unit::KV));
        assert_eq!(Unit::parse("mvar"), Some(Unit::MVAr));
        assert_eq!(
            parse_property_string("5 GW", &[Slot::Magnitude, Slot::Unit]),
            Err(ParseError::UnknownUnit("GW".into()))
        );
    }

    #[test]
    fn arity_checked() {
        assert!(matches!(
            parse_property_string("100", &[Slot::Magnitude, Slot::Unit]),
            Err(ParseError::ArityMismatch { found: 1, .. })
        ));
        assert!(matches!(
            parse_property_string("1 kV 2 3", &[Slot::Magnitude, Slot::Unit]),
            Err(ParseError::ArityMismatch { found: 4, .. })
        ));
    }

    #[test]
    fn transformer_properties_round_trip() {
        let mut props = BTreeMap::new();
        props.insert("rated power".to_string(), "100 MVA 3-ph".to_string());
        props.insert("primary".to_string(), "13.8 kV delta".to_string());
        props.insert("secondary".to_string(), "138 kV wye".to_string());
        props.insert("reactance".to_string(), "0.08 pu".to_string());
        props.insert("resistance".to_string(), "0 pu".to_string());
        let spec = ComponentSpec::from_properties(ComponentKind::Transformer, &props).unwrap();
        let ComponentSpec::Transformer(t) = &spec else { panic!() };
        assert_eq!(t.rated_power, Quantity::new(100.0, Unit::MVA));
        assert_eq!(t.primary.connection, WindingConnection::Delta);
        assert_eq!(t.secondary.voltage.si(), 138e3);
        assert_eq!(spec.to_properties(), props);
    }

    #[test]
    fn single_phase_qualifier_is_stored() {
        let mut props = BTreeMap::new();
        props.insert("base power".to_string(), "10 kVA 1-ph".to_string());
        props.insert("base voltage".to_string(), "240 V".to_string());
        let spec = ComponentSpec::from_properties(ComponentKind::PuBase, &props).unwrap();
        assert_eq!(spec.phase(), Some(Phase::Single));
    }

    #[test]
    fn unknown_property_rejected() {
        let mut props = BTreeMap::new();
        props.insert("length".to_string(), "80".to_string());
        props.insert("colour".to_string(), "red".to_string());
        assert_eq!(
            ComponentSpec::from_properties(ComponentKind::BusBar, &props),
            Err(PropertyError::UnknownProperty("colour".into()))
        );
    }

    #[test]
    fn spec_invariants() {
        let bad = ComponentSpec::BusBar(BusBarSpec { length: 0.0, designation: None });
        assert!(bad.validate().is_err());
        let bad = ComponentSpec::Meter(MeterSpec { readings: BTreeMap::new() });
        assert!(bad.validate().is_err());
        assert!(LineSpec::pu(-0.1, 0.1, 0.0).validate().is_err());
        assert!(LineSpec::connecting().is_connecting());
    }
}
