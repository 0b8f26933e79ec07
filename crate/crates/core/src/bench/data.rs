use super::BenchError;
use crate::exec::Execution;
use crate::feature_prop::{propagate_features, PropagationConfig};
use crate::gnn::{MessageGraph, IN_CHANNELS, OUT_CHANNELS};
use crate::grid_model::{build_electrical_graph, BusKind, ElectricalGraph, GridTopology};
use crate::nn_core::Tensor;
use crate::powerflow::{
    generate_time_series, LoadProfile, PowerFlowError, Snapshot, VoltageSolution,
};
use crate::scenario_gen::{
    make_topology_variants, sample_anchored_mask, ObservabilityMask, VariantRecord,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Time series of solved snapshots on one topology.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphData {
    pub id: String,
    pub topology: GridTopology,
    pub snapshots: Vec<Snapshot>,
}

impl GraphData {
    pub fn generate(
        id: &str,
        topology: GridTopology,
        steps: usize,
        profile: &LoadProfile,
        seed: u64,
        execution: Execution,
    ) -> Result<Self, PowerFlowError> {
        let snapshots = generate_time_series(&topology, id, steps, profile, seed, execution)?;
        Ok(Self {
            id: id.to_string(),
            topology,
            snapshots,
        })
    }

    /// Chronological halves; the first half gets the smaller share for odd
    /// lengths.
    pub fn halves(&self) -> (&[Snapshot], &[Snapshot]) {
        self.snapshots.split_at(self.snapshots.len() / 2)
    }
}

/// A grid's base-topology series plus one series per topology variant.
#[derive(Debug, Clone, PartialEq)]
pub struct GridData {
    pub base: GraphData,
    pub variants: Vec<(VariantRecord, GraphData)>,
}

impl GridData {
    /// Solves the base series and one series per generated variant, all
    /// driven by the same load schedule.
    pub fn generate(
        topology: &GridTopology,
        steps: usize,
        profile: &LoadProfile,
        seed: u64,
        execution: Execution,
    ) -> Result<Self, PowerFlowError> {
        let base = GraphData::generate("base", topology.clone(), steps, profile, seed, execution)?;
        let mut variants = Vec::new();
        for v in make_topology_variants(topology) {
            let record = VariantRecord::from(&v);
            let data =
                GraphData::generate(&v.variant_id, v.topology, steps, profile, seed, execution)?;
            variants.push((record, data));
        }
        Ok(Self { base, variants })
    }
}

/// Node-level ground truth `[v_real, v_imag]` in per-unit.
pub fn node_targets(
    graph: &ElectricalGraph,
    voltages: &VoltageSolution,
) -> Result<Tensor, BenchError> {
    let mut out = Tensor::zeros(graph.node_count, OUT_CHANNELS);
    for (bus, &node) in &graph.bus_to_node {
        let v = voltages
            .voltages
            .get(bus)
            .ok_or_else(|| BenchError::Data(format!("no voltage for bus {bus}")))?;
        let (re, im) = v.rectangular();
        out.set(node, 0, re);
        out.set(node, 1, im);
    }
    Ok(out)
}

/// Model input `[v_real, v_imag, observed_flag]`. Unobserved voltages are
/// filled by feature propagation when `use_fp` is set and left at zero
/// otherwise.
pub fn node_features(
    graph: &ElectricalGraph,
    targets: &Tensor,
    mask: &ObservabilityMask,
    use_fp: bool,
    propagation: &PropagationConfig,
) -> Result<Tensor, BenchError> {
    let n = graph.node_count;
    if targets.rows() != n || mask.node_count() != n {
        return Err(BenchError::Data(format!(
            "graph has {n} nodes, targets {} rows, mask {} nodes",
            targets.rows(),
            mask.node_count()
        )));
    }
    let voltages = if use_fp {
        propagate_features(graph, targets, mask, propagation)?
    } else {
        let mut v = Tensor::zeros(n, OUT_CHANNELS);
        for i in mask.observed_nodes() {
            v.row_mut(i).copy_from_slice(targets.row(i));
        }
        v
    };
    let mut x = Tensor::zeros(n, IN_CHANNELS);
    for i in 0..n {
        x.set(i, 0, voltages.get(i, 0));
        x.set(i, 1, voltages.get(i, 1));
        x.set(i, 2, if mask.observed[i] { 1.0 } else { 0.0 });
    }
    Ok(x)
}

/// Buses carrying a voltage measurement. Sampled once per grid, so every
/// topology variant of that grid is observed through the same sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BusObservation {
    pub observed: BTreeSet<u32>,
    pub fraction: f64,
}

impl BusObservation {
    /// The slack bus is always observed; `round(fraction × (buses − 1))`
    /// further buses are drawn uniformly.
    pub fn sample(topology: &GridTopology, fraction: f64, seed: u64) -> Result<Self, BenchError> {
        let slack = topology
            .buses
            .iter()
            .position(|b| b.kind == BusKind::Slack)
            .ok_or_else(|| BenchError::Data("grid has no slack bus".into()))?;
        let mask = sample_anchored_mask(topology.buses.len(), fraction, Some(slack), seed)?;
        let observed = mask
            .observed_nodes()
            .map(|i| topology.buses[i].id)
            .collect();
        Ok(Self { observed, fraction })
    }

    /// A fused node is observed when any of its buses is.
    pub fn node_mask(&self, graph: &ElectricalGraph) -> ObservabilityMask {
        let mut observed = vec![false; graph.node_count];
        for (bus, &node) in &graph.bus_to_node {
            if self.observed.contains(bus) {
                observed[node] = true;
            }
        }
        ObservabilityMask {
            observed,
            fraction: self.fraction,
            anchor: Some(graph.slack_node),
        }
    }
}

/// Node mask of `topology` under a bus observation sampled on the same grid.
pub fn observability_mask(
    topology: &GridTopology,
    fraction: f64,
    seed: u64,
) -> Result<ObservabilityMask, BenchError> {
    let graph = build_electrical_graph(topology, false)?;
    Ok(BusObservation::sample(topology, fraction, seed)?.node_mask(&graph))
}

/// Snapshots of one topology observed through one mask.
#[derive(Debug, Clone, Copy)]
pub struct DataPart<'a> {
    pub topology: &'a GridTopology,
    pub snapshots: &'a [Snapshot],
    pub mask: &'a ObservabilityMask,
}

/// Disjoint union of every snapshot graph in a set of parts, with stacked
/// features and targets.
#[derive(Debug, Clone)]
pub struct Batch {
    pub graph: MessageGraph,
    pub features: Tensor,
    pub targets: Tensor,
    /// Rows whose voltage features carry a value (observed or propagated).
    pub has_value: Vec<bool>,
}

/// Per-channel affine map of voltages to zero mean and unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: [f64; OUT_CHANNELS],
    pub scale: [f64; OUT_CHANNELS],
}

impl Standardizer {
    pub fn identity() -> Self {
        Self {
            mean: [0.0; OUT_CHANNELS],
            scale: [1.0; OUT_CHANNELS],
        }
    }

    /// Statistics of the rows of `targets`; a constant channel keeps unit scale.
    pub fn fit(targets: &Tensor) -> Self {
        let n = targets.rows().max(1) as f64;
        let mut s = Self::identity();
        for c in 0..OUT_CHANNELS {
            let mean = (0..targets.rows()).map(|r| targets.get(r, c)).sum::<f64>() / n;
            let var = (0..targets.rows())
                .map(|r| (targets.get(r, c) - mean).powi(2))
                .sum::<f64>()
                / n;
            s.mean[c] = mean;
            s.scale[c] = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        }
        s
    }

    pub fn forward(&self, voltages: &Tensor) -> Tensor {
        let mut out = voltages.clone();
        for r in 0..out.rows() {
            for c in 0..OUT_CHANNELS {
                out.set(r, c, (out.get(r, c) - self.mean[c]) / self.scale[c]);
            }
        }
        out
    }

    pub fn inverse(&self, normalized: &Tensor) -> Tensor {
        let mut out = normalized.clone();
        for r in 0..out.rows() {
            for c in 0..OUT_CHANNELS {
                out.set(r, c, out.get(r, c) * self.scale[c] + self.mean[c]);
            }
        }
        out
    }
}

impl Batch {
    pub fn build(
        parts: &[DataPart<'_>],
        use_fp: bool,
        use_adm: bool,
        propagation: &PropagationConfig,
    ) -> Result<Self, BenchError> {
        let mut graphs = Vec::new();
        let mut features = Vec::new();
        let mut targets = Vec::new();
        let mut has_value = Vec::new();
        for part in parts {
            let filled = use_fp && !part.mask.is_empty();
            let graph = build_electrical_graph(part.topology, use_adm)?;
            let message = MessageGraph::new(&graph, use_adm)?;
            for snapshot in part.snapshots {
                let y = node_targets(&graph, &snapshot.voltages)?;
                let x = node_features(&graph, &y, part.mask, use_fp, propagation)?;
                features.extend_from_slice(x.data());
                targets.extend_from_slice(y.data());
                has_value.extend(part.mask.observed.iter().map(|&o| o || filled));
            }
            graphs.push((message, part.snapshots.len()));
        }
        if targets.is_empty() {
            return Err(BenchError::Data("no snapshots to batch".into()));
        }
        let repeated: Vec<MessageGraph> =
            graphs.iter().map(|(g, copies)| g.repeat(*copies)).collect();
        let graph = MessageGraph::concat(&repeated.iter().collect::<Vec<_>>());
        let rows = graph.node_count;
        Ok(Self {
            graph,
            features: Tensor::new(rows, IN_CHANNELS, features)?,
            targets: Tensor::new(rows, OUT_CHANNELS, targets)?,
            has_value,
        })
    }

    /// Voltage feature channels mapped through `s`; rows without a value
    /// stay at zero.
    pub fn standardized_features(&self, s: &Standardizer) -> Tensor {
        let mut x = self.features.clone();
        for (r, &present) in self.has_value.iter().enumerate() {
            if present {
                for c in 0..OUT_CHANNELS {
                    x.set(r, c, (x.get(r, c) - s.mean[c]) / s.scale[c]);
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::load_grid;
    use crate::scenario_gen::sample_observability_mask;

    fn feeder() -> GridTopology {
        load_grid(format!(
            "{}/fixtures/feeder30.json",
            env!("CARGO_MANIFEST_DIR")
        ))
        .unwrap()
    }

    #[test]
    fn features_copy_observed_and_flag() {
        let topo = feeder();
        let data = GraphData::generate(
            "base",
            topo.clone(),
            2,
            &LoadProfile::default(),
            1,
            Execution::Sequential,
        )
        .unwrap();
        let graph = build_electrical_graph(&topo, true).unwrap();
        let y = node_targets(&graph, &data.snapshots[0].voltages).unwrap();
        let mask = sample_observability_mask(graph.node_count, 0.5, 3).unwrap();
        for use_fp in [false, true] {
            let x =
                node_features(&graph, &y, &mask, use_fp, &PropagationConfig::default()).unwrap();
            for i in 0..graph.node_count {
                let flag = x.get(i, 2);
                if mask.observed[i] {
                    assert_eq!(flag, 1.0);
                    assert_eq!(&x.row(i)[..2], y.row(i));
                } else {
                    assert_eq!(flag, 0.0);
                    if !use_fp {
                        assert_eq!(&x.row(i)[..2], &[0.0, 0.0]);
                    }
                }
            }
        }
    }

    #[test]
    fn batch_stacks_snapshots() {
        let topo = feeder();
        let data = GraphData::generate(
            "base",
            topo.clone(),
            3,
            &LoadProfile::default(),
            1,
            Execution::Sequential,
        )
        .unwrap();
        let mask = observability_mask(&topo, 0.5, 0).unwrap();
        let part = DataPart {
            topology: &topo,
            snapshots: &data.snapshots,
            mask: &mask,
        };
        let batch = Batch::build(&[part, part], true, true, &PropagationConfig::default()).unwrap();
        assert_eq!(batch.graph.node_count, 6 * 30);
        assert_eq!(batch.features.shape(), [180, 3]);
        assert_eq!(batch.targets.row(30), batch.targets.row(120));

        let s = Standardizer::fit(&batch.targets);
        let z = s.forward(&batch.targets);
        let back = s.inverse(&z);
        assert!(back.max_abs_diff(&batch.targets) < 1e-12);
        let refit = Standardizer::fit(&z);
        assert!(refit.mean.iter().all(|m| m.abs() < 1e-9));
        assert!(refit.scale.iter().all(|v| (v - 1.0).abs() < 1e-9));
    }

    #[test]
    fn standardizing_leaves_missing_rows_at_zero() {
        let topo = feeder();
        let data = GraphData::generate(
            "base",
            topo.clone(),
            1,
            &LoadProfile::default(),
            1,
            Execution::Sequential,
        )
        .unwrap();
        let mask = observability_mask(&topo, 0.3, 2).unwrap();
        let part = DataPart {
            topology: &topo,
            snapshots: &data.snapshots,
            mask: &mask,
        };
        let batch = Batch::build(&[part], false, false, &PropagationConfig::default()).unwrap();
        let s = Standardizer {
            mean: [1.0, 0.0],
            scale: [0.01, 0.01],
        };
        let x = batch.standardized_features(&s);
        for r in 0..x.rows() {
            if mask.observed[r] {
                assert!((x.get(r, 0) - (batch.features.get(r, 0) - 1.0) / 0.01).abs() < 1e-9);
            } else {
                assert_eq!(&x.row(r)[..2], &[0.0, 0.0]);
            }
            assert_eq!(x.get(r, 2), batch.features.get(r, 2));
        }
    }

    #[test]
    fn bus_observation_is_shared_by_variants() {
        let topo = feeder();
        let obs = BusObservation::sample(&topo, 0.5, 4).unwrap();
        assert_eq!(obs.observed.len(), 1 + 15);
        assert!(obs.observed.contains(&topo.slack_bus().unwrap().id));
        for v in make_topology_variants(&topo) {
            let graph = build_electrical_graph(&v.topology, false).unwrap();
            let mask = obs.node_mask(&graph);
            for (bus, &node) in &graph.bus_to_node {
                if obs.observed.contains(bus) {
                    assert!(mask.observed[node]);
                }
            }
            assert!(mask.observed[graph.slack_node]);
        }
    }

    #[test]
    fn variants_follow_open_switches() {
        let data = GridData::generate(
            &feeder(),
            2,
            &LoadProfile::default(),
            5,
            Execution::Sequential,
        )
        .unwrap();
        assert_eq!(data.variants.len(), 4);
        assert!(data.variants.iter().all(|(_, d)| d.snapshots.len() == 2));
    }
}
