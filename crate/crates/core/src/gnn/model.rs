use super::layers::{gat_layer, gcn_layer, gin_layer, sage_layer, GinMlp};
use super::{GnnError, LayerKind, MessageGraph, ModelConfig};
use crate::grid_model::ElectricalGraph;
use crate::nn_core::{ParamStore, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

const READOUT_STREAM: u64 = 1000;

/// Parameter slots of one layer inside the model's [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerParams {
    Gcn {
        w: usize,
        b: usize,
    },
    Gat {
        w: usize,
        attention: usize,
        b: usize,
    },
    Gin {
        epsilon: usize,
        w1: usize,
        b1: usize,
        w2: usize,
        b2: usize,
    },
    Sage {
        w_self: usize,
        w_neigh: usize,
        b: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GnnModel {
    pub config: ModelConfig,
    pub in_channels: usize,
    pub out_channels: usize,
    pub params: ParamStore,
    layers: Vec<LayerParams>,
    readout_w: usize,
    readout_b: usize,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.gen_range(-limit..=limit))
        .collect();
    Tensor::new(fan_in, fan_out, data).expect("glorot shape")
}

fn layer_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stack of `config.layers` layers with ReLU in between and a linear
/// readout to `out_channels`.
pub fn build_model(
    config: ModelConfig,
    in_channels: usize,
    out_channels: usize,
) -> Result<GnnModel, GnnError> {
    config.validate()?;
    if in_channels == 0 || out_channels == 0 {
        return Err(GnnError::InvalidConfig(
            "channel counts must be positive".into(),
        ));
    }
    let hidden = config.hidden_dim;
    let mut params = ParamStore::new();
    let mut layers = Vec::with_capacity(config.layers);
    for l in 0..config.layers {
        let fan_in = if l == 0 { in_channels } else { hidden };
        let mut rng = layer_rng(config.seed, l as u64 + 1);
        let name = |p: &str| format!("layer{l}.{p}");
        let slots = match config.kind {
            LayerKind::Gcn => LayerParams::Gcn {
                w: params.push(name("w"), glorot(&mut rng, fan_in, hidden)),
                b: params.push(name("b"), Tensor::zeros(1, hidden)),
            },
            LayerKind::Gat => LayerParams::Gat {
                w: params.push(name("w"), glorot(&mut rng, fan_in, hidden)),
                attention: params.push(name("attention"), glorot(&mut rng, 2 * hidden, 1)),
                b: params.push(name("b"), Tensor::zeros(1, hidden)),
            },
            LayerKind::Gin => LayerParams::Gin {
                epsilon: params.push(name("epsilon"), Tensor::scalar(0.0)),
                w1: params.push(name("w1"), glorot(&mut rng, fan_in, hidden)),
                b1: params.push(name("b1"), Tensor::zeros(1, hidden)),
                w2: params.push(name("w2"), glorot(&mut rng, hidden, hidden)),
                b2: params.push(name("b2"), Tensor::zeros(1, hidden)),
            },
            LayerKind::GraphSage => LayerParams::Sage {
                w_self: params.push(name("w_self"), glorot(&mut rng, fan_in, hidden)),
                w_neigh: params.push(name("w_neigh"), glorot(&mut rng, fan_in, hidden)),
                b: params.push(name("b"), Tensor::zeros(1, hidden)),
            },
        };
        layers.push(slots);
    }
    let mut rng = layer_rng(config.seed, READOUT_STREAM);
    let readout_w = params.push("readout.w", glorot(&mut rng, hidden, out_channels));
    let readout_b = params.push("readout.b", Tensor::zeros(1, out_channels));
    Ok(GnnModel {
        config,
        in_channels,
        out_channels,
        params,
        layers,
        readout_w,
        readout_b,
    })
}

impl GnnModel {
    pub fn count_parameters(&self) -> usize {
        self.params.count()
    }

    pub fn layer_params(&self) -> &[LayerParams] {
        &self.layers
    }

    /// Puts every parameter on the tape as a differentiable leaf, in store order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.param(p.value.clone()))
            .collect()
    }

    /// Forward pass over bound parameters.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        graph: &MessageGraph,
        x: Var,
    ) -> Result<Var, GnnError> {
        let rows = tape.value(x).rows();
        if rows != graph.node_count {
            return Err(GnnError::RowMismatch {
                expected: graph.node_count,
                got: rows,
            });
        }
        let mut h = x;
        for (l, layer) in self.layers.iter().enumerate() {
            h = match *layer {
                LayerParams::Gcn { w, b } => gcn_layer(tape, h, graph, vars[w], vars[b])?,
                LayerParams::Gat { w, attention, b } => {
                    gat_layer(tape, h, graph, vars[w], vars[attention], vars[b])?
                }
                LayerParams::Gin {
                    epsilon,
                    w1,
                    b1,
                    w2,
                    b2,
                } => {
                    let mlp = GinMlp {
                        w1: vars[w1],
                        b1: vars[b1],
                        w2: vars[w2],
                        b2: vars[b2],
                    };
                    gin_layer(tape, h, graph, vars[epsilon], mlp)?
                }
                LayerParams::Sage { w_self, w_neigh, b } => {
                    sage_layer(tape, h, graph, vars[w_self], vars[w_neigh], vars[b])?
                }
            };
            if l + 1 < self.layers.len() {
                h = tape.relu(h);
            }
        }
        let out = tape.matmul(h, vars[self.readout_w])?;
        Ok(tape.add(out, vars[self.readout_b])?)
    }

    /// Output rows match the rows of `features`.
    pub fn predict_on(&self, graph: &MessageGraph, features: &Tensor) -> Result<Tensor, GnnError> {
        if features.cols() != self.in_channels {
            return Err(GnnError::InvalidConfig(format!(
                "model expects {} input channels, got {}",
                self.in_channels,
                features.cols()
            )));
        }
        let mut tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.constant(p.value.clone()))
            .collect();
        let x = tape.constant(features.clone());
        let out = self.forward(&mut tape, &vars, graph, x)?;
        Ok(tape.value(out).clone())
    }

    /// Builds the message graph with the model's edge-weight setting.
    pub fn predict(&self, graph: &ElectricalGraph, features: &Tensor) -> Result<Tensor, GnnError> {
        let message = MessageGraph::new(graph, self.config.use_adm)?;
        self.predict_on(&message, features)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        self.params.save(path)
    }

    /// Rebuilds the architecture from `config` and loads matching weights.
    pub fn load_checkpoint(
        config: ModelConfig,
        in_channels: usize,
        out_channels: usize,
        text: &str,
    ) -> Result<Self, GnnError> {
        let mut model = build_model(config, in_channels, out_channels)?;
        let stored = ParamStore::from_checkpoint(text)?;
        model.params.load_from(&stored)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gnn::{IN_CHANNELS, OUT_CHANNELS};

    #[test]
    fn gcn_single_layer_count() {
        let model = build_model(
            ModelConfig::new(LayerKind::Gcn, 1),
            IN_CHANNELS,
            OUT_CHANNELS,
        )
        .unwrap();
        let h = model.config.hidden_dim;
        assert_eq!(model.count_parameters(), IN_CHANNELS * h + h + (h * 2 + 2));
    }

    #[test]
    fn same_seed_same_init() {
        for kind in LayerKind::ALL {
            let cfg = ModelConfig {
                seed: 9,
                ..ModelConfig::new(kind, 3)
            };
            let a = build_model(cfg, 3, 2).unwrap();
            let b = build_model(cfg, 3, 2).unwrap();
            assert_eq!(a, b);
            let c = build_model(ModelConfig { seed: 10, ..cfg }, 3, 2).unwrap();
            assert_ne!(a.params, c.params);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = ModelConfig::new(LayerKind::Gin, 2);
        let model = build_model(cfg, 3, 2).unwrap();
        let text = model.params.to_checkpoint();
        let loaded = GnnModel::load_checkpoint(cfg, 3, 2, &text).unwrap();
        assert_eq!(loaded, model);
        let other = ModelConfig::new(LayerKind::Gcn, 2);
        assert!(GnnModel::load_checkpoint(other, 3, 2, &text).is_err());
    }

    #[test]
    fn predict_shape_and_finite() {
        let g = ElectricalGraph::from_edges(4, [(0, 1, 0.5), (1, 2, 2.0), (2, 3, 1.0)], 0).unwrap();
        let x = Tensor::from_rows(&[
            vec![1.0, 0.0, 1.0],
            vec![0.98, -0.01, 0.0],
            vec![0.97, -0.02, 1.0],
            vec![0.0, 0.0, 0.0],
        ])
        .unwrap();
        for kind in LayerKind::ALL {
            for use_adm in [false, true] {
                let cfg = ModelConfig {
                    use_adm,
                    ..ModelConfig::new(kind, 4)
                };
                let out = build_model(cfg, 3, 2).unwrap().predict(&g, &x).unwrap();
                assert_eq!(out.shape(), [4, 2]);
                assert!(out.all_finite());
            }
        }
        let model = build_model(ModelConfig::new(LayerKind::Gcn, 1), 3, 2).unwrap();
        assert!(matches!(
            model.predict(&g, &Tensor::zeros(3, 3)),
            Err(GnnError::RowMismatch {
                expected: 4,
                got: 3
            })
        ));
    }
}
