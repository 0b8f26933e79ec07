use super::GnnError;
use crate::grid_model::{normalized_adjacency, ElectricalGraph};
use std::sync::Arc;

/// Edge index lists and per-edge coefficients derived from an
/// [`ElectricalGraph`], in the forms the four layer kinds consume.
///
/// All edge lists are directed `src → dst`. When edge weights are off, every
/// stored admittance is replaced by one before anything is derived, so the
/// layers cannot observe the stored values.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub node_count: usize,
    pub use_edge_weights: bool,
    /// Both directions of every edge, no self-loops.
    pub src: Arc<[usize]>,
    pub dst: Arc<[usize]>,
    /// Raw weight of each directed edge.
    pub weight: Vec<f64>,
    /// Weight divided by the destination's weighted degree.
    pub mean_weight: Vec<f64>,
    /// Both directions plus one self-loop per node.
    pub loop_src: Arc<[usize]>,
    pub loop_dst: Arc<[usize]>,
    /// Symmetric-normalised coefficient with self-loops, per looped edge.
    pub gcn_coef: Vec<f64>,
    /// Log of the looped edge weight (self-loops weigh one).
    pub log_weight: Vec<f64>,
}

impl MessageGraph {
    pub fn new(graph: &ElectricalGraph, use_edge_weights: bool) -> Result<Self, GnnError> {
        let graph = if use_edge_weights {
            graph.clone()
        } else {
            graph.unweighted()
        };
        let n = graph.node_count;
        let mut src = Vec::with_capacity(2 * graph.edges.len());
        let mut dst = Vec::with_capacity(2 * graph.edges.len());
        let mut weight = Vec::with_capacity(2 * graph.edges.len());
        for &(u, v, w) in &graph.edges {
            src.extend([u, v]);
            dst.extend([v, u]);
            weight.extend([w, w]);
        }
        let degree = graph.degrees();
        let mean_weight = dst
            .iter()
            .zip(&weight)
            .map(|(&d, &w)| w / degree[d])
            .collect();

        let normalized = normalized_adjacency(&graph, true)?;
        let mut loop_src = Vec::with_capacity(normalized.nnz());
        let mut loop_dst = Vec::with_capacity(normalized.nnz());
        let mut gcn_coef = Vec::with_capacity(normalized.nnz());
        let mut log_weight = Vec::with_capacity(normalized.nnz());
        for (i, j, c) in normalized.triplets() {
            loop_dst.push(i);
            loop_src.push(j);
            gcn_coef.push(c);
        }
        let mut raw = std::collections::HashMap::new();
        for ((&s, &d), &w) in src.iter().zip(&dst).zip(&weight) {
            raw.insert((s, d), w);
        }
        for (&s, &d) in loop_src.iter().zip(&loop_dst) {
            let w = if s == d { 1.0 } else { raw[&(s, d)] };
            log_weight.push(w.ln());
        }
        Ok(Self {
            node_count: n,
            use_edge_weights,
            src: src.into(),
            dst: dst.into(),
            weight,
            mean_weight,
            loop_src: loop_src.into(),
            loop_dst: loop_dst.into(),
            gcn_coef,
            log_weight,
        })
    }

    /// Disjoint union; node indices of later parts are offset.
    pub fn concat(parts: &[&MessageGraph]) -> Self {
        let use_edge_weights = parts.first().is_some_and(|p| p.use_edge_weights);
        let mut out = MessageGraph {
            node_count: 0,
            use_edge_weights,
            src: Arc::from(Vec::new()),
            dst: Arc::from(Vec::new()),
            weight: Vec::new(),
            mean_weight: Vec::new(),
            loop_src: Arc::from(Vec::new()),
            loop_dst: Arc::from(Vec::new()),
            gcn_coef: Vec::new(),
            log_weight: Vec::new(),
        };
        let (mut src, mut dst, mut loop_src, mut loop_dst) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for part in parts {
            let offset = out.node_count;
            src.extend(part.src.iter().map(|i| i + offset));
            dst.extend(part.dst.iter().map(|i| i + offset));
            loop_src.extend(part.loop_src.iter().map(|i| i + offset));
            loop_dst.extend(part.loop_dst.iter().map(|i| i + offset));
            out.weight.extend_from_slice(&part.weight);
            out.mean_weight.extend_from_slice(&part.mean_weight);
            out.gcn_coef.extend_from_slice(&part.gcn_coef);
            out.log_weight.extend_from_slice(&part.log_weight);
            out.node_count += part.node_count;
        }
        out.src = src.into();
        out.dst = dst.into();
        out.loop_src = loop_src.into();
        out.loop_dst = loop_dst.into();
        out
    }

    /// `copies` disjoint copies of this graph.
    pub fn repeat(&self, copies: usize) -> Self {
        Self::concat(&vec![self; copies])
    }
}
