//! Forward rules of the four message-passing layers, written against the
//! tape so that every layer is differentiable end to end.

use super::MessageGraph;
use crate::nn_core::{NnError, Tape, Tensor, Var};

pub const GAT_NEGATIVE_SLOPE: f64 = 0.2;

/// `Â H W + b` with `Â = D̂^(-1/2) (A + I) D̂^(-1/2)`.
pub fn gcn_layer(
    tape: &mut Tape,
    h: Var,
    graph: &MessageGraph,
    w: Var,
    b: Var,
) -> Result<Var, NnError> {
    let xw = tape.matmul(h, w)?;
    let messages = tape.gather(xw, graph.loop_src.clone())?;
    let coef = tape.constant(Tensor::column(graph.gcn_coef.clone()));
    let scaled = tape.mul(messages, coef)?;
    let aggregated = tape.segment_sum(scaled, graph.loop_dst.clone(), graph.node_count)?;
    tape.add(aggregated, b)
}

/// Single-head graph attention over in-neighbours plus a self-loop.
///
/// `attention` has shape `(2·out, 1)`; its first half scores the
/// destination, its second half the source. With edge weights on, the log
/// of the edge weight is added to each logit.
pub fn gat_layer(
    tape: &mut Tape,
    h: Var,
    graph: &MessageGraph,
    w: Var,
    attention: Var,
    b: Var,
) -> Result<Var, NnError> {
    let (z, alpha) = gat_attention(tape, h, graph, w, attention)?;
    let z_src = tape.gather(z, graph.loop_src.clone())?;
    let weighted = tape.mul(z_src, alpha)?;
    let aggregated = tape.segment_sum(weighted, graph.loop_dst.clone(), graph.node_count)?;
    tape.add(aggregated, b)
}

/// Projected features and per-edge attention coefficients of a GAT layer.
pub fn gat_attention(
    tape: &mut Tape,
    h: Var,
    graph: &MessageGraph,
    w: Var,
    attention: Var,
) -> Result<(Var, Var), NnError> {
    let z = tape.matmul(h, w)?;
    let z_dst = tape.gather(z, graph.loop_dst.clone())?;
    let z_src = tape.gather(z, graph.loop_src.clone())?;
    let pair = tape.concat(&[z_dst, z_src])?;
    let raw = tape.matmul(pair, attention)?;
    let mut logits = tape.leaky_relu(raw, GAT_NEGATIVE_SLOPE);
    if graph.use_edge_weights {
        let bias = tape.constant(Tensor::column(graph.log_weight.clone()));
        logits = tape.add(logits, bias)?;
    }
    let alpha = tape.neighbor_softmax(logits, graph.loop_dst.clone(), graph.node_count)?;
    Ok((z, alpha))
}

/// Parameters of the two-layer GIN update MLP.
#[derive(Debug, Clone, Copy)]
pub struct GinMlp {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

/// `MLP((1 + ε) h_i + Σ_j w_ij h_j)`, with `w_ij = 1` when weights are off.
pub fn gin_layer(
    tape: &mut Tape,
    h: Var,
    graph: &MessageGraph,
    epsilon: Var,
    mlp: GinMlp,
) -> Result<Var, NnError> {
    let neighbours = tape.gather(h, graph.src.clone())?;
    let scale = tape.constant(Tensor::column(graph.weight.clone()));
    let weighted = tape.mul(neighbours, scale)?;
    let aggregated = tape.segment_sum(weighted, graph.dst.clone(), graph.node_count)?;
    let one = tape.constant(Tensor::scalar(1.0));
    let self_scale = tape.add(epsilon, one)?;
    let own = tape.mul(h, self_scale)?;
    let combined = tape.add(own, aggregated)?;
    let hidden = tape.matmul(combined, mlp.w1)?;
    let hidden = tape.add(hidden, mlp.b1)?;
    let hidden = tape.relu(hidden);
    let out = tape.matmul(hidden, mlp.w2)?;
    tape.add(out, mlp.b2)
}

/// `W_self h_i + W_neigh mean_j h_j + b`; the mean is weighted by
/// admittance when weights are on and is zero for isolated nodes.
pub fn sage_layer(
    tape: &mut Tape,
    h: Var,
    graph: &MessageGraph,
    w_self: Var,
    w_neigh: Var,
    b: Var,
) -> Result<Var, NnError> {
    let neighbours = tape.gather(h, graph.src.clone())?;
    let mean = if graph.use_edge_weights {
        let scale = tape.constant(Tensor::column(graph.mean_weight.clone()));
        let weighted = tape.mul(neighbours, scale)?;
        tape.segment_sum(weighted, graph.dst.clone(), graph.node_count)?
    } else {
        tape.segment_mean(neighbours, graph.dst.clone(), graph.node_count)?
    };
    let own = tape.matmul(h, w_self)?;
    let other = tape.matmul(mean, w_neigh)?;
    let sum = tape.add(own, other)?;
    tape.add(sum, b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_model::ElectricalGraph;

    fn rows(data: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(data).unwrap()
    }

    fn single_node() -> MessageGraph {
        MessageGraph::new(&ElectricalGraph::from_edges(1, [], 0).unwrap(), false).unwrap()
    }

    fn pair(weight: f64, use_weights: bool) -> MessageGraph {
        let g = ElectricalGraph::from_edges(2, [(0, 1, weight)], 0).unwrap();
        MessageGraph::new(&g, use_weights).unwrap()
    }

    #[test]
    fn gcn_single_node_is_identity() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![0.3, -2.0]]));
        let w = tape.constant(Tensor::identity(2));
        let b = tape.constant(Tensor::zeros(1, 2));
        let out = gcn_layer(&mut tape, h, &single_node(), w, b).unwrap();
        assert_eq!(tape.value(out), &rows(&[vec![0.3, -2.0]]));
    }

    #[test]
    fn gcn_two_nodes_halves_neighbour() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![4.0, 2.0], vec![0.0, 0.0]]));
        let w = tape.constant(Tensor::identity(2));
        let b = tape.constant(Tensor::zeros(1, 2));
        let out = gcn_layer(&mut tape, h, &pair(1.0, false), w, b).unwrap();
        // Â = [[1/2, 1/2], [1/2, 1/2]] with unit self-loops and degree 2
        let got = tape.value(out).row(1);
        assert!((got[0] - 2.0).abs() < 1e-12 && (got[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gat_self_loop_only_is_projection() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![1.0, 2.0]]));
        let w = tape.constant(rows(&[vec![0.5, 1.0], vec![-1.0, 3.0]]));
        let a = tape.constant(Tensor::column(vec![0.1, 0.2, 0.3, 0.4]));
        let b = tape.constant(Tensor::zeros(1, 2));
        let out = gat_layer(&mut tape, h, &single_node(), w, a, b).unwrap();
        assert_eq!(tape.value(out).data(), &[-1.5, 7.0]);
    }

    #[test]
    fn gat_symmetric_pair_splits_evenly() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![1.0, 2.0], vec![1.0, 2.0]]));
        let w = tape.constant(Tensor::identity(2));
        let a = tape.constant(Tensor::column(vec![0.1, -0.7, 0.3, 0.4]));
        let (_, alpha) = gat_attention(&mut tape, h, &pair(1.0, false), w, a).unwrap();
        assert!(tape
            .value(alpha)
            .data()
            .iter()
            .all(|&x| (x - 0.5).abs() < 1e-15));
    }

    fn identity_mlp(tape: &mut Tape, dim: usize) -> GinMlp {
        GinMlp {
            w1: tape.constant(Tensor::identity(dim)),
            b1: tape.constant(Tensor::zeros(1, dim)),
            w2: tape.constant(Tensor::identity(dim)),
            b2: tape.constant(Tensor::zeros(1, dim)),
        }
    }

    #[test]
    fn gin_sums_neighbours() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![1.0, 2.0], vec![3.0, 0.5]]));
        let eps = tape.constant(Tensor::scalar(0.0));
        let mlp = identity_mlp(&mut tape, 2);
        let out = gin_layer(&mut tape, h, &pair(1.0, false), eps, mlp).unwrap();
        assert_eq!(tape.value(out).row(0), &[4.0, 2.5]);

        let isolated = tape.constant(rows(&[vec![1.5, 0.25]]));
        let out = gin_layer(&mut tape, isolated, &single_node(), eps, mlp).unwrap();
        assert_eq!(tape.value(out).row(0), &[1.5, 0.25]);
    }

    #[test]
    fn gin_weighted_neighbour_is_scaled() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![0.0], vec![3.0]]));
        let eps = tape.constant(Tensor::scalar(0.0));
        let mlp = identity_mlp(&mut tape, 1);
        let weighted = gin_layer(&mut tape, h, &pair(0.2, true), eps, mlp).unwrap();
        let plain = gin_layer(&mut tape, h, &pair(0.2, false), eps, mlp).unwrap();
        assert!((tape.value(weighted).get(0, 0) - 0.2 * tape.value(plain).get(0, 0)).abs() < 1e-15);
    }

    #[test]
    fn sage_without_neighbours_uses_self_term() {
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![2.0]]));
        let ws = tape.constant(rows(&[vec![1.5]]));
        let wn = tape.constant(rows(&[vec![100.0]]));
        let b = tape.constant(rows(&[vec![0.25]]));
        let out = sage_layer(&mut tape, h, &single_node(), ws, wn, b).unwrap();
        assert_eq!(tape.value(out).get(0, 0), 3.25);
    }

    #[test]
    fn sage_mean_ignores_duplicate_neighbours() {
        // node 0 sees two neighbours with identical features, node 3 sees one
        let star =
            ElectricalGraph::from_edges(4, [(0, 1, 1.0), (0, 2, 1.0), (2, 3, 1.0)], 0).unwrap();
        let g = MessageGraph::new(&star, false).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![0.0], vec![5.0], vec![5.0], vec![0.0]]));
        let ws = tape.constant(rows(&[vec![0.0]]));
        let wn = tape.constant(rows(&[vec![1.0]]));
        let b = tape.constant(rows(&[vec![0.0]]));
        let out = sage_layer(&mut tape, h, &g, ws, wn, b).unwrap();
        assert_eq!(tape.value(out).get(0, 0), tape.value(out).get(3, 0));
    }

    #[test]
    fn sage_weighted_mean_interpolates() {
        let star = ElectricalGraph::from_edges(3, [(0, 1, 0.2), (0, 2, 0.8)], 0).unwrap();
        let g = MessageGraph::new(&star, true).unwrap();
        let mut tape = Tape::new();
        let h = tape.constant(rows(&[vec![0.0], vec![1.0], vec![6.0]]));
        let ws = tape.constant(rows(&[vec![0.0]]));
        let wn = tape.constant(rows(&[vec![1.0]]));
        let b = tape.constant(rows(&[vec![0.0]]));
        let out = sage_layer(&mut tape, h, &g, ws, wn, b).unwrap();
        // (0.2·1 + 0.8·6) / (0.2 + 0.8)
        assert!((tape.value(out).get(0, 0) - 5.0).abs() < 1e-12);
    }
}
