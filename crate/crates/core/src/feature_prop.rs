//! Feature propagation: missing node features are filled in by diffusing
//! the observed ones over the graph, with observed rows held fixed as
//! boundary conditions.
//!
//! The diffusion step is `X ← D⁻¹ A X` on the weighted adjacency (no
//! self-loops) followed by resetting observed rows. Its fixed point is the
//! discrete harmonic interpolation of the observed values, which obeys the
//! maximum principle.

use crate::grid_model::{DisjointSets, ElectricalGraph};
use crate::nn_core::Tensor;
use crate::scenario_gen::ObservabilityMask;
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PropagationError {
    #[error("feature matrix has {rows} rows but the graph has {nodes} nodes")]
    RowMismatch { rows: usize, nodes: usize },
    #[error("mask covers {mask} nodes but the graph has {nodes}")]
    MaskMismatch { mask: usize, nodes: usize },
    #[error("boundary-value system is singular")]
    Singular,
    #[error("invalid propagation config: {0}")]
    BadConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-6,
            max_iterations: 1000,
        }
    }
}

/// Result of [`propagate_features_traced`].
#[derive(Debug, Clone, PartialEq)]
pub struct Propagation {
    pub features: Tensor,
    pub iterations: usize,
    pub converged: bool,
    /// Max-abs change of each sweep.
    pub changes: Vec<f64>,
}

fn check_inputs(
    graph: &ElectricalGraph,
    features: &Tensor,
    mask: &ObservabilityMask,
) -> Result<(), PropagationError> {
    if features.rows() != graph.node_count {
        return Err(PropagationError::RowMismatch {
            rows: features.rows(),
            nodes: graph.node_count,
        });
    }
    if mask.node_count() != graph.node_count {
        return Err(PropagationError::MaskMismatch {
            mask: mask.node_count(),
            nodes: graph.node_count,
        });
    }
    Ok(())
}

/// Interpolates unobserved rows of `features`. Observed rows are returned
/// unchanged.
pub fn propagate_features(
    graph: &ElectricalGraph,
    features: &Tensor,
    mask: &ObservabilityMask,
    config: &PropagationConfig,
) -> Result<Tensor, PropagationError> {
    propagate_features_traced(graph, features, mask, config).map(|p| p.features)
}

pub fn propagate_features_traced(
    graph: &ElectricalGraph,
    features: &Tensor,
    mask: &ObservabilityMask,
    config: &PropagationConfig,
) -> Result<Propagation, PropagationError> {
    check_inputs(graph, features, mask)?;
    if config.tolerance.is_nan() || config.tolerance <= 0.0 {
        return Err(PropagationError::BadConfig("tolerance must be positive"));
    }
    if config.max_iterations == 0 {
        return Err(PropagationError::BadConfig(
            "max_iterations must be at least 1",
        ));
    }
    let cols = features.cols();
    let n = graph.node_count;
    if mask.is_empty() {
        return Ok(Propagation {
            features: Tensor::zeros(n, cols),
            iterations: 0,
            converged: true,
            changes: Vec::new(),
        });
    }

    let mut x = Tensor::zeros(n, cols);
    for i in mask.observed_nodes() {
        x.row_mut(i).copy_from_slice(features.row(i));
    }

    // Unobserved nodes cut off from every observation get the observed mean.
    let mut sets = DisjointSets::new(n);
    for &(u, v, _) in &graph.edges {
        sets.union(u, v);
    }
    let mut anchored = vec![false; n];
    for i in mask.observed_nodes() {
        let root = sets.find(i);
        anchored[root] = true;
    }
    let free: Vec<usize> = (0..n)
        .filter(|&i| !mask.observed[i])
        .filter(|&i| {
            let root = sets.find(i);
            anchored[root]
        })
        .collect();
    let stranded: Vec<usize> = (0..n)
        .filter(|&i| !mask.observed[i] && !free.contains(&i))
        .collect();
    if !stranded.is_empty() {
        log::warn!(
            "{} unobserved nodes unreachable from any observation; using the observed mean",
            stranded.len()
        );
        let count = mask.observed_count() as f64;
        let mean: Vec<f64> = (0..cols)
            .map(|c| {
                mask.observed_nodes()
                    .map(|i| features.get(i, c))
                    .sum::<f64>()
                    / count
            })
            .collect();
        for &i in &stranded {
            x.row_mut(i).copy_from_slice(&mean);
        }
    }

    // Row-normalised transition weights of the free nodes.
    let adjacency = graph.adjacency_lists();
    let transitions: Vec<Vec<(usize, f64)>> = free
        .iter()
        .map(|&i| {
            let degree: f64 = adjacency[i].iter().map(|&(_, w)| w).sum();
            adjacency[i].iter().map(|&(j, w)| (j, w / degree)).collect()
        })
        .collect();

    let mut changes = Vec::new();
    let mut converged = free.is_empty();
    let mut iterations = 0;
    let mut next = vec![0.0; free.len() * cols];
    while !converged && iterations < config.max_iterations {
        next.iter_mut().for_each(|v| *v = 0.0);
        for (k, row) in transitions.iter().enumerate() {
            let out = &mut next[k * cols..(k + 1) * cols];
            for &(j, p) in row {
                for (o, &v) in out.iter_mut().zip(x.row(j)) {
                    *o += p * v;
                }
            }
        }
        let mut change: f64 = 0.0;
        for (k, &i) in free.iter().enumerate() {
            for (c, &v) in next[k * cols..(k + 1) * cols].iter().enumerate() {
                change = change.max((v - x.get(i, c)).abs());
                x.set(i, c, v);
            }
        }
        iterations += 1;
        changes.push(change);
        converged = change < config.tolerance;
    }
    Ok(Propagation {
        features: x,
        iterations,
        converged,
        changes,
    })
}

/// Exact solution of the same boundary-value problem by a dense linear
/// solve of `(I − P_uu) X_u = P_uk X_k`. Intended for small graphs.
pub fn dirichlet_solve_oracle(
    graph: &ElectricalGraph,
    features: &Tensor,
    mask: &ObservabilityMask,
) -> Result<Tensor, PropagationError> {
    check_inputs(graph, features, mask)?;
    let n = graph.node_count;
    let cols = features.cols();
    let unknown: Vec<usize> = (0..n).filter(|&i| !mask.observed[i]).collect();
    let mut position = vec![usize::MAX; n];
    for (k, &i) in unknown.iter().enumerate() {
        position[i] = k;
    }
    let m = unknown.len();
    let mut x = features.clone();
    if m == 0 {
        return Ok(x);
    }
    let adjacency = graph.adjacency_lists();
    let mut system = DMatrix::<f64>::identity(m, m);
    let mut rhs = DMatrix::<f64>::zeros(m, cols);
    for (k, &i) in unknown.iter().enumerate() {
        let degree: f64 = adjacency[i].iter().map(|&(_, w)| w).sum();
        if degree <= 0.0 {
            return Err(PropagationError::Singular);
        }
        for &(j, w) in &adjacency[i] {
            let p = w / degree;
            if mask.observed[j] {
                for c in 0..cols {
                    rhs[(k, c)] += p * features.get(j, c);
                }
            } else {
                system[(k, position[j])] -= p;
            }
        }
    }
    let lu = system.lu();
    for c in 0..cols {
        let column = DVector::from_iterator(m, (0..m).map(|k| rhs[(k, c)]));
        let solved = lu
            .solve(&column)
            .filter(|s| s.iter().all(|v| v.is_finite()))
            .ok_or(PropagationError::Singular)?;
        for (k, &i) in unknown.iter().enumerate() {
            x.set(i, c, solved[k]);
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario_gen::sample_observability_mask;
    use proptest::prelude::*;

    fn mask(observed: &[bool]) -> ObservabilityMask {
        ObservabilityMask {
            observed: observed.to_vec(),
            fraction: 0.5,
            anchor: None,
        }
    }

    fn tight() -> PropagationConfig {
        PropagationConfig {
            tolerance: 1e-12,
            max_iterations: 100_000,
        }
    }

    #[test]
    fn fully_observed_is_identity() {
        let g = ElectricalGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 2.0)], 0).unwrap();
        let x = Tensor::column(vec![0.3, -1.0, 2.0]);
        let m = mask(&[true, true, true]);
        assert_eq!(
            propagate_features(&g, &x, &m, &PropagationConfig::default()).unwrap(),
            x
        );
        assert_eq!(dirichlet_solve_oracle(&g, &x, &m).unwrap(), x);
    }

    #[test]
    fn single_boundary_spreads_everywhere() {
        let g = ElectricalGraph::from_edges(2, [(0, 1, 1.0)], 0).unwrap();
        let x = Tensor::column(vec![0.7, 0.0]);
        let out = propagate_features(&g, &x, &mask(&[true, false]), &PropagationConfig::default())
            .unwrap();
        assert!((out.get(1, 0) - 0.7).abs() < 1e-6);

        let star =
            ElectricalGraph::from_edges(4, [(0, 1, 1.0), (0, 2, 3.0), (0, 3, 0.5)], 0).unwrap();
        let x = Tensor::column(vec![1.25, 0.0, 0.0, 0.0]);
        let solved =
            dirichlet_solve_oracle(&star, &x, &mask(&[true, false, false, false])).unwrap();
        assert!(solved.data().iter().all(|&v| (v - 1.25).abs() < 1e-12));
    }

    #[test]
    fn path_midpoint() {
        let g = ElectricalGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)], 0).unwrap();
        let x = Tensor::column(vec![0.0, 0.0, 1.0]);
        let m = mask(&[true, false, true]);
        let out = propagate_features(&g, &x, &m, &PropagationConfig::default()).unwrap();
        assert!((out.get(1, 0) - 0.5).abs() < 1e-6);

        // 1x1 Dirichlet system: x_m = (w_am·0 + w_mb·1) / (w_am + w_mb)
        let g = ElectricalGraph::from_edges(3, [(0, 1, 0.2), (1, 2, 0.8)], 0).unwrap();
        let direct = (0.2 * 0.0 + 0.8 * 1.0) / (0.2 + 0.8);
        let out = propagate_features(&g, &x, &m, &PropagationConfig::default()).unwrap();
        assert!((out.get(1, 0) - direct).abs() < 1e-5);
        let oracle = dirichlet_solve_oracle(&g, &x, &m).unwrap();
        assert!((oracle.get(1, 0) - direct).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_gives_zeros() {
        let g = ElectricalGraph::from_edges(2, [(0, 1, 1.0)], 0).unwrap();
        let x = Tensor::column(vec![3.0, 4.0]);
        let out = propagate_features(
            &g,
            &x,
            &mask(&[false, false]),
            &PropagationConfig::default(),
        )
        .unwrap();
        assert_eq!(out, Tensor::zeros(2, 1));
    }

    #[test]
    fn unreachable_nodes_take_observed_mean() {
        // hand-built disconnected graph: the second component has no observation
        let g = ElectricalGraph {
            node_count: 4,
            edges: vec![(0, 1, 1.0), (2, 3, 1.0)],
            bus_to_node: (0..4).map(|i| (i as u32, i)).collect(),
            slack_node: 0,
        };
        let x = Tensor::column(vec![2.0, 4.0, 0.0, 0.0]);
        let out = propagate_features(
            &g,
            &x,
            &mask(&[true, true, false, false]),
            &PropagationConfig::default(),
        )
        .unwrap();
        assert_eq!(out.data(), &[2.0, 4.0, 3.0, 3.0]);
        assert_eq!(
            dirichlet_solve_oracle(&g, &x, &mask(&[true, true, false, false])),
            Err(PropagationError::Singular)
        );
    }

    #[test]
    fn rejects_mismatched_rows() {
        let g = ElectricalGraph::from_edges(2, [(0, 1, 1.0)], 0).unwrap();
        let err = propagate_features(
            &g,
            &Tensor::zeros(3, 1),
            &mask(&[true, false]),
            &PropagationConfig::default(),
        );
        assert_eq!(
            err,
            Err(PropagationError::RowMismatch { rows: 3, nodes: 2 })
        );
    }

    fn random_instance() -> impl Strategy<Value = (ElectricalGraph, Tensor, ObservabilityMask)> {
        (3usize..40, any::<u64>(), 0.1f64..0.9).prop_flat_map(|(n, seed, fraction)| {
            let tree = proptest::collection::vec((0usize..1000, 0.05f64..5.0), n - 1);
            let extra = proptest::collection::vec((0..n, 0..n, 0.05f64..5.0), 0..n);
            let values = proptest::collection::vec(-2.0f64..2.0, 2 * n);
            (tree, extra, values).prop_map(move |(tree, extra, values)| {
                let mut edges: Vec<_> = tree
                    .iter()
                    .enumerate()
                    .map(|(i, &(p, w))| (p % (i + 1), i + 1, w))
                    .collect();
                edges.extend(extra.into_iter().filter(|e| e.0 != e.1));
                let g = ElectricalGraph::from_edges(n, edges, 0).unwrap();
                let mut m = sample_observability_mask(n, fraction, seed).unwrap();
                m.observed[seed as usize % n] = true;
                (g, Tensor::new(n, 2, values).unwrap(), m)
            })
        })
    }

    proptest! {
        #[test]
        fn matches_oracle_and_keeps_boundary((g, x, m) in random_instance()) {
            let run = propagate_features_traced(&g, &x, &m, &tight()).unwrap();
            let oracle = dirichlet_solve_oracle(&g, &x, &m).unwrap();
            prop_assert!(run.features.max_abs_diff(&oracle) < 1e-5);
            for i in m.observed_nodes() {
                prop_assert_eq!(run.features.row(i), x.row(i));
            }
            for c in 0..2 {
                let observed: Vec<f64> = m.observed_nodes().map(|i| x.get(i, c)).collect();
                let lo = observed.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = observed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                for i in 0..g.node_count {
                    let v = run.features.get(i, c);
                    prop_assert!(v >= lo - 1e-9 && v <= hi + 1e-9);
                }
            }
            prop_assert!(run.changes.windows(2).skip(1).all(|w| w[1] <= w[0] + 1e-15));
        }
    }
}
