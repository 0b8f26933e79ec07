use super::{fuse_switch_buses, BranchKind, DisjointSets, GridError, GridTopology};
use std::collections::BTreeMap;

/// Undirected weighted graph over fused buses.
///
/// Edges are stored once with `u < v`. Weights are admittance magnitudes in
/// siemens, or 1 for the unweighted representation.
#[derive(Debug, Clone, PartialEq)]
pub struct ElectricalGraph {
    pub node_count: usize,
    pub edges: Vec<(usize, usize, f64)>,
    pub bus_to_node: BTreeMap<u32, usize>,
    pub slack_node: usize,
}

impl ElectricalGraph {
    /// Builds a graph from raw edges, merging parallel edges by summing
    /// their weights. Rejects self-loops, non-positive weights and
    /// disconnected graphs. The bus map is the identity over node indices.
    pub fn from_edges(
        node_count: usize,
        edges: impl IntoIterator<Item = (usize, usize, f64)>,
        slack_node: usize,
    ) -> Result<Self, GridError> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (u, v, w) in edges {
            if u == v {
                return Err(GridError::Validation(format!("self-loop on node {u}")));
            }
            if u >= node_count || v >= node_count {
                return Err(GridError::Validation(format!(
                    "edge ({u}, {v}) out of range"
                )));
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(GridError::Validation(format!(
                    "edge ({u}, {v}) has weight {w}"
                )));
            }
            *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += w;
        }
        if slack_node >= node_count {
            return Err(GridError::Validation("slack node out of range".into()));
        }
        let graph = Self {
            node_count,
            edges: merged.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
            bus_to_node: (0..node_count).map(|i| (i as u32, i)).collect(),
            slack_node,
        };
        let components = graph.component_count();
        if components > 1 {
            return Err(GridError::Disconnected { components });
        }
        Ok(graph)
    }

    pub fn component_count(&self) -> usize {
        let mut sets = DisjointSets::new(self.node_count);
        for &(u, v, _) in &self.edges {
            sets.union(u, v);
        }
        sets.count()
    }

    /// Weighted degree of each node.
    pub fn degrees(&self) -> Vec<f64> {
        let mut deg = vec![0.0; self.node_count];
        for &(u, v, w) in &self.edges {
            deg[u] += w;
            deg[v] += w;
        }
        deg
    }

    /// Neighbour lists `(neighbour, weight)` per node.
    pub fn adjacency_lists(&self) -> Vec<Vec<(usize, f64)>> {
        let mut adj = vec![Vec::new(); self.node_count];
        for &(u, v, w) in &self.edges {
            adj[u].push((v, w));
            adj[v].push((u, w));
        }
        adj
    }

    /// Same graph with every weight set to one.
    pub fn unweighted(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.2 = 1.0;
        }
        g
    }

    /// Relabels nodes so that old node `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.node_count);
        let mut edges: Vec<_> = self
            .edges
            .iter()
            .map(|&(u, v, w)| {
                let (a, b) = (perm[u], perm[v]);
                (a.min(b), a.max(b), w)
            })
            .collect();
        edges.sort_by_key(|e| (e.0, e.1));
        Self {
            node_count: self.node_count,
            edges,
            bus_to_node: self
                .bus_to_node
                .iter()
                .map(|(&b, &n)| (b, perm[n]))
                .collect(),
            slack_node: perm[self.slack_node],
        }
    }
}

/// Builds the fused electrical graph of a topology.
///
/// Lines weigh `1/|r + jx|` (or 1 when `use_admittance` is false).
/// Transformers weigh the median line admittance (or 1). Parallel edges
/// between the same fused pair add up; edges that fusion turns into
/// self-loops are dropped.
pub fn build_electrical_graph(
    topology: &GridTopology,
    use_admittance: bool,
) -> Result<ElectricalGraph, GridError> {
    let fused = fuse_switch_buses(topology);
    let mut line_admittances = Vec::new();
    for br in topology
        .branches
        .iter()
        .filter(|b| b.kind == BranchKind::Line && b.in_service)
    {
        let z = br.impedance_magnitude().unwrap_or(0.0);
        if z <= 0.0 || !z.is_finite() {
            return Err(GridError::ZeroImpedance(br.id));
        }
        line_admittances.push(1.0 / z);
    }
    let transformer_weight = if use_admittance {
        median(&mut line_admittances.clone()).unwrap_or(1.0)
    } else {
        1.0
    };

    let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for br in topology.branches.iter().filter(|b| b.in_service) {
        let weight = match br.kind {
            BranchKind::Line if use_admittance => 1.0 / br.impedance_magnitude().unwrap(),
            BranchKind::Line => 1.0,
            BranchKind::Transformer => transformer_weight,
            BranchKind::Switch => continue,
        };
        let (u, v) = (
            fused.bus_to_node[&br.from_bus],
            fused.bus_to_node[&br.to_bus],
        );
        if u == v {
            continue;
        }
        *merged.entry((u.min(v), u.max(v))).or_insert(0.0) += weight;
    }

    let slack = topology
        .slack_bus()
        .ok_or_else(|| GridError::Validation("no slack bus".into()))?;
    let graph = ElectricalGraph {
        node_count: fused.node_count,
        edges: merged.into_iter().map(|((u, v), w)| (u, v, w)).collect(),
        slack_node: fused.bus_to_node[&slack.id],
        bus_to_node: fused.bus_to_node,
    };
    let components = graph.component_count();
    if components > 1 {
        return Err(GridError::Disconnected { components });
    }
    Ok(graph)
}

fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let mid = values.len() / 2;
    Some(if values.len().is_multiple_of(2) {
        0.5 * (values[mid - 1] + values[mid])
    } else {
        values[mid]
    })
}

/// Square sparse matrix in compressed-row form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    /// Assembles from `(row, col, value)` triplets, summing duplicates.
    pub fn from_triplets(
        n: usize,
        triplets: impl IntoIterator<Item = (usize, usize, f64)>,
    ) -> Self {
        let mut entries: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (i, j, v) in triplets {
            *entries.entry((i, j)).or_insert(0.0) += v;
        }
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(entries.len());
        let mut values = Vec::with_capacity(entries.len());
        for (&(i, j), &v) in &entries {
            row_ptr[i + 1] += 1;
            col_idx.push(j);
            values.push(v);
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|&(c, _)| c == j).map_or(0.0, |(_, v)| v)
    }

    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| self.row(i).map(move |(j, v)| (i, j, v)))
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut dense = vec![vec![0.0; self.n]; self.n];
        for (i, j, v) in self.triplets() {
            dense[i][j] = v;
        }
        dense
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }
}

/// `D^(-1/2) (A [+ I]) D^(-1/2)` with `D` the weighted degree of the
/// (optionally self-looped) adjacency.
pub fn normalized_adjacency(
    graph: &ElectricalGraph,
    add_self_loops: bool,
) -> Result<SparseMatrix, GridError> {
    let mut degree = graph.degrees();
    if add_self_loops {
        degree.iter_mut().for_each(|d| *d += 1.0);
    }
    if let Some(node) = degree.iter().position(|&d| d <= 0.0) {
        return Err(GridError::IsolatedNode(node));
    }
    let inv_sqrt: Vec<f64> = degree.iter().map(|d| d.sqrt().recip()).collect();
    let mut triplets = Vec::with_capacity(2 * graph.edges.len() + graph.node_count);
    for &(u, v, w) in &graph.edges {
        let value = w * inv_sqrt[u] * inv_sqrt[v];
        triplets.push((u, v, value));
        triplets.push((v, u, value));
    }
    if add_self_loops {
        triplets.extend((0..graph.node_count).map(|i| (i, i, inv_sqrt[i] * inv_sqrt[i])));
    }
    Ok(SparseMatrix::from_triplets(graph.node_count, triplets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::{load_grid, Branch, Bus, BusKind};
    use proptest::prelude::*;

    fn buses(n: u32) -> Vec<Bus> {
        (0..n)
            .map(|id| Bus {
                id,
                nominal_kv: 10.0,
                kind: if id == 0 {
                    BusKind::Slack
                } else {
                    BusKind::Load
                },
            })
            .collect()
    }

    #[test]
    fn admittance_weight_is_inverse_impedance_magnitude() {
        let grid = GridTopology::new(buses(2), vec![Branch::line(1, 0, 1, 3.0, 4.0)]).unwrap();
        let g = build_electrical_graph(&grid, true).unwrap();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].2 - 0.2).abs() < 1e-15);
        let g = build_electrical_graph(&grid, false).unwrap();
        assert_eq!(g.edges[0].2, 1.0);
    }

    #[test]
    fn parallel_lines_merge_like_nodal_admittance() {
        let grid = GridTopology::new(
            buses(2),
            vec![
                Branch::line(1, 0, 1, 3.0, 4.0),
                Branch::line(2, 0, 1, 0.0, 1.0 / 0.3),
            ],
        )
        .unwrap();
        let g = build_electrical_graph(&grid, true).unwrap();
        // nodal assembly: off-diagonal magnitude of the summed branch admittances
        let oracle: f64 = grid
            .branches
            .iter()
            .map(|b| 1.0 / b.r_ohm.unwrap().hypot(b.x_ohm.unwrap()))
            .sum();
        assert_eq!(g.edges.len(), 1);
        assert!((g.edges[0].2 - oracle).abs() < 1e-12);
        assert!((g.edges[0].2 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn transformers_take_median_line_admittance() {
        let mut branches = vec![
            Branch::line(1, 1, 2, 1.0, 0.0),
            Branch::line(2, 2, 3, 0.5, 0.0),
            Branch::line(3, 3, 4, 0.25, 0.0),
        ];
        branches.push(Branch::transformer(4, 0, 1));
        let grid = GridTopology::new(buses(5), branches).unwrap();
        let g = build_electrical_graph(&grid, true).unwrap();
        let trafo = g.edges.iter().find(|e| (e.0, e.1) == (0, 1)).unwrap();
        assert!((trafo.2 - 2.0).abs() < 1e-12);
        let g = build_electrical_graph(&grid, false).unwrap();
        assert!(g.edges.iter().all(|e| e.2 == 1.0));
    }

    #[test]
    fn fused_switches_never_become_edges() {
        let grid = load_grid(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/mv15.json")).unwrap();
        let g = build_electrical_graph(&grid, true).unwrap();
        assert_eq!(g.node_count, 14);
        assert!(g
            .edges
            .iter()
            .all(|&(u, v, w)| u != v && w.is_finite() && w > 0.0));
        assert_eq!(g.bus_to_node[&13], g.bus_to_node[&14]);
    }

    #[test]
    fn out_of_service_lines_are_removed() {
        let mut grid = GridTopology::new(
            buses(3),
            vec![
                Branch::line(1, 0, 1, 1.0, 1.0),
                Branch::line(2, 1, 2, 1.0, 1.0),
                Branch::line(3, 0, 2, 1.0, 1.0),
            ],
        )
        .unwrap();
        grid.branches[2].in_service = false;
        let g = build_electrical_graph(&grid, false).unwrap();
        assert_eq!(g.edges.len(), 2);
        grid.branches[1].in_service = false;
        assert!(matches!(
            build_electrical_graph(&grid, false),
            Err(GridError::Disconnected { components: 2 })
        ));
    }

    #[test]
    fn single_node_with_self_loop_is_identity() {
        let g = ElectricalGraph::from_edges(1, [], 0).unwrap();
        let a = normalized_adjacency(&g, true).unwrap();
        assert_eq!(a.to_dense(), vec![vec![1.0]]);
        assert!(matches!(
            normalized_adjacency(&g, false),
            Err(GridError::IsolatedNode(0))
        ));
    }

    #[test]
    fn two_nodes_without_self_loops() {
        let g = ElectricalGraph::from_edges(2, [(0, 1, 1.0)], 0).unwrap();
        let a = normalized_adjacency(&g, false).unwrap();
        assert_eq!(a.to_dense(), vec![vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    fn dense_oracle(n: usize, edges: &[(usize, usize, f64)], self_loops: bool) -> Vec<Vec<f64>> {
        let mut a = vec![vec![0.0; n]; n];
        for &(u, v, w) in edges {
            a[u][v] += w;
            a[v][u] += w;
        }
        if self_loops {
            (0..n).for_each(|i| a[i][i] += 1.0);
        }
        let d: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
        (0..n)
            .map(|i| (0..n).map(|j| a[i][j] / (d[i] * d[j]).sqrt()).collect())
            .collect()
    }

    #[test]
    fn path_with_self_loops_matches_dense_construction() {
        let edges = [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)];
        let g = ElectricalGraph::from_edges(4, edges, 0).unwrap();
        let sparse = normalized_adjacency(&g, true).unwrap().to_dense();
        let dense = dense_oracle(4, &edges, true);
        for i in 0..4 {
            for j in 0..4 {
                assert!((sparse[i][j] - dense[i][j]).abs() < 1e-15);
            }
        }
    }

    fn spectral_radius(a: &SparseMatrix) -> f64 {
        let mut x: Vec<f64> = (0..a.n).map(|i| 1.0 + (i as f64 * 0.37).sin()).collect();
        let mut estimate = 0.0;
        for _ in 0..2000 {
            // power iteration on A^2 avoids oscillation from eigenvalue -1
            let y = a.mul_vec(&a.mul_vec(&x));
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let prev = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            estimate = (norm / prev).sqrt();
            x = y.iter().map(|v| v / norm).collect();
        }
        estimate
    }

    fn random_connected_graph() -> impl Strategy<Value = (usize, Vec<(usize, usize, f64)>)> {
        (2usize..50).prop_flat_map(|n| {
            let tree = proptest::collection::vec((0usize..1000, 0.01f64..10.0), n - 1);
            let extra = proptest::collection::vec((0..n, 0..n, 0.01f64..10.0), 0..n);
            (tree, extra).prop_map(move |(tree, extra)| {
                let mut edges: Vec<_> = tree
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, w))| (p % (i + 1), i + 1, w))
                    .collect();
                edges.extend(extra.into_iter().filter(|e| e.0 != e.1));
                (n, edges)
            })
        })
    }

    proptest! {
        #[test]
        fn normalized_adjacency_is_symmetric_and_contractive(
            (n, edges) in random_connected_graph(),
            self_loops in any::<bool>(),
        ) {
            let g = ElectricalGraph::from_edges(n, edges, 0).unwrap();
            let a = normalized_adjacency(&g, self_loops).unwrap();
            for (i, j, v) in a.triplets() {
                prop_assert!((v - a.get(j, i)).abs() < 1e-12);
            }
            prop_assert!(spectral_radius(&a) <= 1.0 + 1e-9);
        }
    }
}
