//! The `.sld` project file: a UTF-8 JSON document.
//!
//! Every component carries both its canonical property strings and the
//! parsed spec. On load the two must agree, and the rebuilt network must
//! pass the structural checks before it is handed out.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{
    Component, ComponentId, ComponentSpec, Line, LineSpec, Mode, Network, Placement, PortRef, Segment,
};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PersistenceError {
    #[error("ParseError: {0}")]
    ParseError(String),
    #[error("UnsupportedVersion: file version {found}, this build reads {FORMAT_VERSION}")]
    UnsupportedVersion { found: u64 },
    #[error("InvariantViolation: {}", .0.join("; "))]
    InvariantViolation(Vec<String>),
    #[error("IoFailure: {0}")]
    IoFailure(String),
}

impl PersistenceError {
    pub fn name(&self) -> &'static str {
        match self {
            PersistenceError::ParseError(_) => "ParseError",
            PersistenceError::UnsupportedVersion { .. } => "UnsupportedVersion",
            PersistenceError::InvariantViolation(_) => "InvariantViolation",
            PersistenceError::IoFailure(_) => "IoFailure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRecord {
    pub id: ComponentId,
    #[serde(default)]
    pub label: String,
    pub placement: Placement,
    pub properties: BTreeMap<String, String>,
    /// `kind` and `spec` keys.
    #[serde(flatten)]
    pub spec: ComponentSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineRecord {
    pub id: ComponentId,
    #[serde(default)]
    pub label: String,
    pub end_a: PortRef,
    pub end_b: PortRef,
    pub properties: BTreeMap<String, String>,
    pub spec: LineSpec,
    pub route: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectDocument {
    pub version: u32,
    pub mode: Mode,
    pub base_mva: f64,
    pub next_id: u64,
    pub components: Vec<ComponentRecord>,
    pub lines: Vec<LineRecord>,
}

impl ProjectDocument {
    pub fn from_network(net: &Network) -> Self {
        Self {
            version: FORMAT_VERSION,
            mode: net.mode(),
            base_mva: net.base_mva(),
            next_id: net.next_id().0,
            components: net
                .components()
                .map(|c| ComponentRecord {
                    id: c.id,
                    label: c.label.clone(),
                    placement: c.placement,
                    properties: c.spec.to_properties(),
                    spec: c.spec.clone(),
                })
                .collect(),
            lines: net
                .lines()
                .map(|l| LineRecord {
                    id: l.id,
                    label: l.label.clone(),
                    end_a: l.end_a,
                    end_b: l.end_b,
                    properties: l.spec.to_properties(),
                    spec: l.spec,
                    route: l.route.clone(),
                })
                .collect(),
        }
    }

    /// Rebuild and re-validate the network. `mode` overrides the stored
    /// mode.
    pub fn into_network(self, mode: Option<Mode>) -> Result<Network, PersistenceError> {
        let mut problems = Vec::new();
        let mut seen = BTreeSet::new();
        for id in self.components.iter().map(|c| c.id).chain(self.lines.iter().map(|l| l.id)) {
            if !seen.insert(id) {
                problems.push(format!("duplicate id {id}"));
            }
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            problems.push("base_mva must be > 0".into());
        }
        let mut components = Vec::with_capacity(self.components.len());
        for c in self.components {
            match ComponentSpec::from_properties(c.spec.kind(), &c.properties) {
                Ok(parsed) if parsed == c.spec => {}
                Ok(_) => problems.push(format!("component {}: properties disagree with spec", c.id)),
                Err(e) => problems.push(format!("component {}: {e}", c.id)),
            }
            components.push(Component { id: c.id, label: c.label, spec: c.spec, placement: c.placement });
        }
        let mut lines = Vec::with_capacity(self.lines.len());
        for l in self.lines {
            match LineSpec::from_properties(&l.properties) {
                Ok(parsed) if parsed == l.spec => {}
                Ok(_) => problems.push(format!("line {}: properties disagree with spec", l.id)),
                Err(e) => problems.push(format!("line {}: {e}", l.id)),
            }
            lines.push(Line { id: l.id, label: l.label, end_a: l.end_a, end_b: l.end_b, spec: l.spec, route: l.route });
        }
        if !problems.is_empty() {
            return Err(PersistenceError::InvariantViolation(problems));
        }
        let mut net = Network::from_parts(self.mode, self.base_mva, self.next_id, components, lines);
        if let Some(m) = mode {
            net.set_mode(m).map_err(|e| PersistenceError::InvariantViolation(vec![e.to_string()]))?;
        }
        let violations = net.check_structure();
        if !violations.is_empty() {
            return Err(PersistenceError::InvariantViolation(
                violations.iter().map(|v| format!("{}: {v:?}", v.name())).collect(),
            ));
        }
        Ok(net)
    }
}

/// Canonical text of a project. Same network, same bytes.
pub fn to_string(net: &Network) -> String {
    let mut s = serde_json::to_string_pretty(&ProjectDocument::from_network(net)).expect("documents serialize");
    s.push('\n');
    s
}

#[derive(Deserialize)]
struct VersionProbe {
    version: u64,
}

pub fn from_str(text: &str, mode: Option<Mode>) -> Result<Network, PersistenceError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| PersistenceError::ParseError(e.to_string()))?;
    let probe: VersionProbe =
        serde_json::from_value(value.clone()).map_err(|e| PersistenceError::ParseError(e.to_string()))?;
    if probe.version != u64::from(FORMAT_VERSION) {
        return Err(PersistenceError::UnsupportedVersion { found: probe.version });
    }
    let doc: ProjectDocument = serde_json::from_value(value).map_err(|e| PersistenceError::ParseError(e.to_string()))?;
    doc.into_network(mode)
}

pub fn save_project(net: &Network, path: impl AsRef<Path>) -> Result<(), PersistenceError> {
    std::fs::write(path.as_ref(), to_string(net))
        .map_err(|e| PersistenceError::IoFailure(format!("{}: {e}", path.as_ref().display())))
}

pub fn load_project(path: impl AsRef<Path>, mode: Option<Mode>) -> Result<Network, PersistenceError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| PersistenceError::IoFailure(format!("{}: {e}", path.as_ref().display())))?;
    from_str(&text, mode)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::powerflow::extract::{extract_bus_system, SlackPolicy};

    #[test]
    fn fixture_round_trips() {
        let net = fixtures::ieee14();
        let text = to_string(&net);
        let back = from_str(&text, None).unwrap();
        assert_eq!(back, net);
        assert_eq!(to_string(&back), text);
        assert_eq!(extract_bus_system(&back, SlackPolicy::Required).unwrap().bus_count(), 14);
    }

    #[test]
    fn empty_project() {
        let net = Network::new(Mode::PowerFlow);
        let text = to_string(&net);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["components"], serde_json::json!([]));
        assert_eq!(v["lines"], serde_json::json!([]));
        assert_eq!(from_str(&text, None).unwrap(), net);
    }

    #[test]
    fn rejects_bad_files() {
        let text = to_string(&fixtures::two_bus());
        assert_eq!(from_str(&text[..text.len() / 2], None).unwrap_err().name(), "ParseError");
        let v999 = text.replacen("\"version\": 1", "\"version\": 999", 1);
        assert_eq!(from_str(&v999, None).unwrap_err(), PersistenceError::UnsupportedVersion { found: 999 });

        let mut doc: ProjectDocument = serde_json::from_str(&text).unwrap();
        doc.lines[0].end_b.component = ComponentId(4242);
        let err = from_str(&serde_json::to_string(&doc).unwrap(), None).unwrap_err();
        assert_eq!(err.name(), "InvariantViolation");
    }

    #[test]
    fn properties_must_match_spec() {
        let mut doc = ProjectDocument::from_network(&fixtures::two_bus());
        doc.lines[0].properties.insert("reactance".into(), "0.5 pu".into());
        assert_eq!(doc.into_network(None).unwrap_err().name(), "InvariantViolation");
    }

    #[test]
    fn mode_override() {
        let text = to_string(&fixtures::ieee14());
        let net = from_str(&text, Some(Mode::StateEstimation)).unwrap();
        assert_eq!(net.mode(), Mode::StateEstimation);
        let (chain, _) = fixtures::three_region_chain();
        let err = from_str(&to_string(&chain), Some(Mode::PowerFlow)).unwrap_err();
        assert_eq!(err.name(), "InvariantViolation");
    }

    #[test]
    fn io_failure() {
        let err = load_project("/nonexistent/dir/x.sld", None).unwrap_err();
        assert_eq!(err.name(), "IoFailure");
    }
}
