//! Grid topology description, switch fusion and the weighted electrical
//! graph consumed by feature propagation and the GNN layers.

mod fusion;
mod graph;

pub use fusion::{fuse_switch_buses, FusedBuses};
pub use graph::{build_electrical_graph, normalized_adjacency, ElectricalGraph, SparseMatrix};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("failed to read grid file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed grid file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid grid: {0}")]
    Validation(String),
    #[error("electrical graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("line {0} has zero impedance")]
    ZeroImpedance(u32),
    #[error("node {0} has zero degree")]
    IsolatedNode(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bus {
    pub id: u32,
    pub nominal_kv: f64,
    pub kind: BusKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BranchKind {
    Line,
    Transformer,
    Switch,
}

/// A two-terminal element. Impedances are in ohms referred to the
/// from-bus voltage level. Transformers may carry an impedance, which only
/// the power-flow solver uses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Branch {
    pub id: u32,
    #[serde(rename = "from")]
    pub from_bus: u32,
    #[serde(rename = "to")]
    pub to_bus: u32,
    pub kind: BranchKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_ohm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub closed: Option<bool>,
    #[serde(default = "default_true")]
    pub in_service: bool,
}

fn default_true() -> bool {
    true
}

impl Branch {
    pub fn line(id: u32, from_bus: u32, to_bus: u32, r_ohm: f64, x_ohm: f64) -> Self {
        Self {
            id,
            from_bus,
            to_bus,
            kind: BranchKind::Line,
            r_ohm: Some(r_ohm),
            x_ohm: Some(x_ohm),
            closed: None,
            in_service: true,
        }
    }

    pub fn switch(id: u32, from_bus: u32, to_bus: u32, closed: bool) -> Self {
        Self {
            id,
            from_bus,
            to_bus,
            kind: BranchKind::Switch,
            r_ohm: None,
            x_ohm: None,
            closed: Some(closed),
            in_service: true,
        }
    }

    pub fn transformer(id: u32, from_bus: u32, to_bus: u32) -> Self {
        Self {
            id,
            from_bus,
            to_bus,
            kind: BranchKind::Transformer,
            r_ohm: None,
            x_ohm: None,
            closed: None,
            in_service: true,
        }
    }

    /// Magnitude of the series impedance in ohms.
    pub fn impedance_magnitude(&self) -> Option<f64> {
        match (self.r_ohm, self.x_ohm) {
            (Some(r), Some(x)) => Some(r.hypot(x)),
            _ => None,
        }
    }

    pub fn is_closed_switch(&self) -> bool {
        self.kind == BranchKind::Switch && self.in_service && self.closed == Some(true)
    }

    pub fn is_open_switch(&self) -> bool {
        self.kind == BranchKind::Switch && self.in_service && self.closed != Some(true)
    }

    /// Whether the branch electrically joins its endpoints.
    pub fn conducts(&self) -> bool {
        match self.kind {
            BranchKind::Switch => self.is_closed_switch(),
            _ => self.in_service,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridTopology {
    pub buses: Vec<Bus>,
    pub branches: Vec<Branch>,
}

impl GridTopology {
    /// Builds and validates a topology.
    pub fn new(buses: Vec<Bus>, branches: Vec<Branch>) -> Result<Self, GridError> {
        let topology = Self { buses, branches };
        topology.validate()?;
        Ok(topology)
    }

    pub fn from_json(text: &str) -> Result<Self, GridError> {
        let topology: Self = serde_json::from_str(text)?;
        topology.validate()?;
        Ok(topology)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("topology serializes")
    }

    pub fn bus(&self, id: u32) -> Option<&Bus> {
        self.buses.iter().find(|b| b.id == id)
    }

    pub fn branch(&self, id: u32) -> Option<&Branch> {
        self.branches.iter().find(|b| b.id == id)
    }

    pub fn slack_bus(&self) -> Option<&Bus> {
        self.buses.iter().find(|b| b.kind == BusKind::Slack)
    }

    /// Position of each bus id in `buses`.
    pub fn bus_index(&self) -> HashMap<u32, usize> {
        self.buses
            .iter()
            .enumerate()
            .map(|(i, b)| (b.id, i))
            .collect()
    }

    pub fn open_switches(&self) -> impl Iterator<Item = &Branch> {
        self.branches.iter().filter(|b| b.is_open_switch())
    }

    /// Checks every structural invariant, including connectivity of the
    /// conducting subgraph.
    pub fn validate(&self) -> Result<(), GridError> {
        let invalid = |msg: String| Err(GridError::Validation(msg));
        if self.buses.is_empty() {
            return invalid("grid has no buses".into());
        }
        let mut ids = HashSet::new();
        for bus in &self.buses {
            if !ids.insert(bus.id) {
                return invalid(format!("duplicate bus id {}", bus.id));
            }
            if !(bus.nominal_kv.is_finite() && bus.nominal_kv > 0.0) {
                return invalid(format!("bus {} has non-positive nominal_kv", bus.id));
            }
        }
        let slack_count = self
            .buses
            .iter()
            .filter(|b| b.kind == BusKind::Slack)
            .count();
        if slack_count != 1 {
            return invalid(format!(
                "expected exactly one slack bus, found {slack_count}"
            ));
        }
        let mut branch_ids = HashSet::new();
        for br in &self.branches {
            if !branch_ids.insert(br.id) {
                return invalid(format!("duplicate branch id {}", br.id));
            }
            for end in [br.from_bus, br.to_bus] {
                if !ids.contains(&end) {
                    return invalid(format!("branch {} references unknown bus {end}", br.id));
                }
            }
            if br.from_bus == br.to_bus {
                return invalid(format!("branch {} is a self-loop", br.id));
            }
            let non_negative = |v: Option<f64>| v.is_none_or(|v| v.is_finite() && v >= 0.0);
            if !non_negative(br.r_ohm) || !non_negative(br.x_ohm) {
                return invalid(format!(
                    "branch {} has a negative or non-finite impedance",
                    br.id
                ));
            }
            match br.kind {
                BranchKind::Line => {
                    let (Some(r), Some(x)) = (br.r_ohm, br.x_ohm) else {
                        return invalid(format!("line {} lacks r_ohm/x_ohm", br.id));
                    };
                    if r + x <= 0.0 {
                        return Err(GridError::ZeroImpedance(br.id));
                    }
                    if br.closed.is_some() {
                        return invalid(format!("line {} carries a switch state", br.id));
                    }
                }
                BranchKind::Switch => {
                    if br.r_ohm.is_some() || br.x_ohm.is_some() {
                        return invalid(format!("switch {} carries impedance fields", br.id));
                    }
                    if br.closed.is_none() {
                        return invalid(format!("switch {} lacks a closed flag", br.id));
                    }
                }
                BranchKind::Transformer => {
                    if br.r_ohm.is_some() != br.x_ohm.is_some() {
                        return invalid(format!("transformer {} has partial impedance", br.id));
                    }
                    if br.closed.is_some() {
                        return invalid(format!("transformer {} carries a switch state", br.id));
                    }
                }
            }
        }
        let components = self.conducting_components();
        if components > 1 {
            return Err(GridError::Disconnected { components });
        }
        Ok(())
    }

    /// Number of connected components of the conducting subgraph.
    pub fn conducting_components(&self) -> usize {
        let index = self.bus_index();
        let mut sets = DisjointSets::new(self.buses.len());
        for br in self.branches.iter().filter(|b| b.conducts()) {
            if let (Some(&a), Some(&b)) = (index.get(&br.from_bus), index.get(&br.to_bus)) {
                sets.union(a, b);
            }
        }
        sets.count()
    }

    /// Hop distances from the slack bus over conducting branches, keyed by
    /// bus id. Unreachable buses are absent.
    pub fn hops_from_slack(&self) -> BTreeMap<u32, usize> {
        let mut adjacency: HashMap<u32, Vec<u32>> = HashMap::new();
        for br in self.branches.iter().filter(|b| b.conducts()) {
            adjacency.entry(br.from_bus).or_default().push(br.to_bus);
            adjacency.entry(br.to_bus).or_default().push(br.from_bus);
        }
        let mut hops = BTreeMap::new();
        let Some(slack) = self.slack_bus() else {
            return hops;
        };
        let mut queue = std::collections::VecDeque::from([slack.id]);
        hops.insert(slack.id, 0);
        while let Some(bus) = queue.pop_front() {
            let d = hops[&bus];
            for &next in adjacency.get(&bus).into_iter().flatten() {
                if let std::collections::btree_map::Entry::Vacant(e) = hops.entry(next) {
                    e.insert(d + 1);
                    queue.push_back(next);
                }
            }
        }
        hops
    }
}

/// Reads and validates a grid file.
pub fn load_grid(path: impl AsRef<Path>) -> Result<GridTopology, GridError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| GridError::Io {
        path: path.display().to_string(),
        source,
    })?;
    GridTopology::from_json(&text)
}

/// Union-find with path halving and union by size.
#[derive(Debug, Clone)]
pub(crate) struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
    count: usize,
}

impl DisjointSets {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
            count: n,
        }
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub(crate) fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        self.count -= 1;
        true
    }

    pub(crate) fn count(&self) -> usize {
        self.count
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture(name: &str) -> std::path::PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("fixtures")
            .join(name)
    }

    #[test]
    fn loads_two_bus_grid() {
        let grid = load_grid(fixture("two_bus.json")).unwrap();
        assert_eq!(grid.buses.len(), 2);
        assert_eq!(grid.branches.len(), 1);
    }

    #[test]
    fn loads_thirty_bus_fixture() {
        let grid = load_grid(fixture("feeder30.json")).unwrap();
        assert_eq!(grid.buses.len(), 30);
        let lines = grid
            .branches
            .iter()
            .filter(|b| b.kind == BranchKind::Line)
            .count();
        assert_eq!(lines, 29);
        assert_eq!(grid.open_switches().count(), 4);
    }

    #[test]
    fn rejects_unknown_endpoint() {
        let text = r#"{"buses":[{"id":1,"nominal_kv":10.0,"kind":"slack"},
            {"id":2,"nominal_kv":10.0,"kind":"load"}],
            "branches":[{"id":1,"from":1,"to":99,"kind":"line","r_ohm":1.0,"x_ohm":1.0}]}"#;
        let err = GridTopology::from_json(text).unwrap_err();
        assert!(
            matches!(err, GridError::Validation(ref m) if m.contains("99")),
            "{err}"
        );
    }

    #[test]
    fn rejects_unknown_keys() {
        let text =
            r#"{"buses":[{"id":1,"nominal_kv":10.0,"kind":"slack","extra":1}],"branches":[]}"#;
        assert!(matches!(
            GridTopology::from_json(text),
            Err(GridError::Parse(_))
        ));
        let text =
            r#"{"buses":[{"id":1,"nominal_kv":10.0,"kind":"slack"}],"branches":[],"name":"x"}"#;
        assert!(matches!(
            GridTopology::from_json(text),
            Err(GridError::Parse(_))
        ));
    }

    #[test]
    fn rejects_missing_slack_and_disconnection() {
        let buses = vec![
            Bus {
                id: 1,
                nominal_kv: 10.0,
                kind: BusKind::Load,
            },
            Bus {
                id: 2,
                nominal_kv: 10.0,
                kind: BusKind::Load,
            },
        ];
        let err = GridTopology::new(buses.clone(), vec![Branch::line(1, 1, 2, 1.0, 1.0)]);
        assert!(matches!(err, Err(GridError::Validation(_))));

        let mut buses = buses;
        buses[0].kind = BusKind::Slack;
        let err = GridTopology::new(buses.clone(), vec![Branch::switch(1, 1, 2, false)]);
        assert!(matches!(
            err,
            Err(GridError::Disconnected { components: 2 })
        ));
        GridTopology::new(buses, vec![Branch::switch(1, 1, 2, true)]).unwrap();
    }

    #[test]
    fn rejects_zero_impedance_line_and_switch_impedance() {
        let buses = vec![
            Bus {
                id: 1,
                nominal_kv: 10.0,
                kind: BusKind::Slack,
            },
            Bus {
                id: 2,
                nominal_kv: 10.0,
                kind: BusKind::Load,
            },
        ];
        let err = GridTopology::new(buses.clone(), vec![Branch::line(1, 1, 2, 0.0, 0.0)]);
        assert!(matches!(err, Err(GridError::ZeroImpedance(1))));
        let mut sw = Branch::switch(1, 1, 2, true);
        sw.r_ohm = Some(0.1);
        sw.x_ohm = Some(0.1);
        assert!(matches!(
            GridTopology::new(buses, vec![sw]),
            Err(GridError::Validation(_))
        ));
    }

    #[test]
    fn json_round_trip_preserves_topology() {
        let grid = load_grid(fixture("mv15.json")).unwrap();
        let again = GridTopology::from_json(&grid.to_json()).unwrap();
        assert_eq!(grid, again);
    }

    #[test]
    fn hops_follow_conducting_branches() {
        let grid = load_grid(fixture("feeder30.json")).unwrap();
        let hops = grid.hops_from_slack();
        assert_eq!(hops.len(), 30);
        assert_eq!(hops[&0], 0);
        assert_eq!(hops[&1], 1);
        assert_eq!(hops[&5], 5);
    }
}
