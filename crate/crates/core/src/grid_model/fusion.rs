use super::GridTopology;
use std::collections::{BTreeMap, BTreeSet};

/// Outcome of collapsing closed bus-to-bus switches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FusedBuses {
    /// Bus sets fused into one node; only groups with two or more buses.
    pub groups: Vec<BTreeSet<u32>>,
    /// Every bus id mapped to its node index.
    pub bus_to_node: BTreeMap<u32, usize>,
    pub node_count: usize,
}

impl FusedBuses {
    /// Bus ids of each node, indexed by node.
    pub fn node_members(&self) -> Vec<Vec<u32>> {
        let mut members = vec![Vec::new(); self.node_count];
        for (&bus, &node) in &self.bus_to_node {
            members[node].push(bus);
        }
        members
    }
}

/// Fuses buses joined by closed switches.
///
/// Works on the auxiliary graph whose nodes are buses and whose edges are
/// closed, in-service switches. Degree-one buses are repeatedly folded into
/// their only neighbour, which lowers that neighbour's degree in turn, until
/// each component has shrunk to one surviving bus. Closed-switch loops never
/// expose a degree-one bus; those are broken by contracting one edge of the
/// loop and the peeling resumes.
pub fn fuse_switch_buses(topology: &GridTopology) -> FusedBuses {
    let index = topology.bus_index();
    let n = topology.buses.len();

    let mut adjacency: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for br in topology.branches.iter().filter(|b| b.is_closed_switch()) {
        let (a, b) = (index[&br.from_bus], index[&br.to_bus]);
        adjacency[a].insert(b);
        adjacency[b].insert(a);
    }

    // absorbed_into[v] = the bus v was folded into
    let mut absorbed_into: Vec<Option<usize>> = vec![None; n];
    let mut leaves: Vec<usize> = (0..n).rev().filter(|&v| adjacency[v].len() == 1).collect();

    loop {
        while let Some(leaf) = leaves.pop() {
            if adjacency[leaf].len() != 1 {
                continue;
            }
            let neighbour = *adjacency[leaf].iter().next().unwrap();
            adjacency[leaf].clear();
            adjacency[neighbour].remove(&leaf);
            absorbed_into[leaf] = Some(neighbour);
            if adjacency[neighbour].len() == 1 {
                leaves.push(neighbour);
            }
        }
        // Only loops remain: contract the lowest remaining edge.
        let Some(u) = (0..n).find(|&v| !adjacency[v].is_empty()) else {
            break;
        };
        let v = *adjacency[u].iter().next().unwrap();
        let moved = std::mem::take(&mut adjacency[v]);
        for w in moved {
            adjacency[w].remove(&v);
            if w != u {
                adjacency[w].insert(u);
                adjacency[u].insert(w);
            }
        }
        adjacency[u].remove(&v);
        absorbed_into[v] = Some(u);
        for w in std::iter::once(u).chain(adjacency[u].iter().copied()) {
            if adjacency[w].len() == 1 {
                leaves.push(w);
            }
        }
    }

    let root = |mut v: usize| {
        while let Some(next) = absorbed_into[v] {
            v = next;
        }
        v
    };

    // Nodes are numbered by the earliest bus of each group in bus order.
    let mut node_of_root: BTreeMap<usize, usize> = BTreeMap::new();
    let mut bus_to_node = BTreeMap::new();
    let mut members: Vec<BTreeSet<u32>> = Vec::new();
    for (pos, bus) in topology.buses.iter().enumerate() {
        let r = root(pos);
        let next = node_of_root.len();
        let node = *node_of_root.entry(r).or_insert(next);
        if node == members.len() {
            members.push(BTreeSet::new());
        }
        members[node].insert(bus.id);
        bus_to_node.insert(bus.id, node);
    }
    let node_count = members.len();
    FusedBuses {
        groups: members.into_iter().filter(|g| g.len() > 1).collect(),
        bus_to_node,
        node_count,
    }
}
