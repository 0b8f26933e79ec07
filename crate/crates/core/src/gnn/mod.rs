//! Message-passing layers (GCN, GAT, GIN, GraphSAGE) and the configurable
//! model stack used for voltage estimation.

pub mod layers;
mod message;
mod model;

pub use message::MessageGraph;
pub use model::{build_model, GnnModel, LayerParams};

use crate::grid_model::GridError;
use crate::nn_core::{NnError, Tensor};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

/// Deepest stack accepted by [`ModelConfig::validate`].
pub const MAX_LAYERS: usize = 10;
pub const DEFAULT_HIDDEN_DIM: usize = 4;
/// Input layout `[v_real, v_imag, observed_flag]`.
pub const IN_CHANNELS: usize = 3;
/// Output layout `[v_real, v_imag]`.
pub const OUT_CHANNELS: usize = 2;

#[derive(Debug, Error)]
pub enum GnnError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("feature matrix has {got} rows, graph has {expected} nodes")]
    RowMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "GCN")]
    Gcn,
    #[serde(rename = "GAT")]
    Gat,
    #[serde(rename = "GIN")]
    Gin,
    #[serde(rename = "GraphSAGE")]
    GraphSage,
}

impl LayerKind {
    pub const ALL: [LayerKind; 4] = [
        LayerKind::Gcn,
        LayerKind::Gat,
        LayerKind::Gin,
        LayerKind::GraphSage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Gcn => "GCN",
            LayerKind::Gat => "GAT",
            LayerKind::Gin => "GIN",
            LayerKind::GraphSage => "GraphSAGE",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LayerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "gcn" => Ok(LayerKind::Gcn),
            "gat" => Ok(LayerKind::Gat),
            "gin" => Ok(LayerKind::Gin),
            "sage" | "graphsage" => Ok(LayerKind::GraphSage),
            _ => Err(format!(
                "unknown model '{s}', expected one of gcn, gat, gin, graphsage"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: LayerKind,
    pub layers: usize,
    pub hidden_dim: usize,
    pub use_fp: bool,
    pub use_adm: bool,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(kind: LayerKind, layers: usize) -> Self {
        Self {
            kind,
            layers,
            hidden_dim: DEFAULT_HIDDEN_DIM,
            use_fp: false,
            use_adm: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), GnnError> {
        if self.layers == 0 || self.layers > MAX_LAYERS {
            return Err(GnnError::InvalidConfig(format!(
                "layers must be in 1..={MAX_LAYERS}, got {}",
                self.layers
            )));
        }
        if self.hidden_dim == 0 {
            return Err(GnnError::InvalidConfig(
                "hidden_dim must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Mean over channels of the population variance across nodes.
pub fn smoothness_metric(outputs: &Tensor) -> f64 {
    let (n, c) = (outputs.rows(), outputs.cols());
    if n == 0 || c == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for ch in 0..c {
        let mean = (0..n).map(|i| outputs.get(i, ch)).sum::<f64>() / n as f64;
        total += (0..n)
            .map(|i| (outputs.get(i, ch) - mean).powi(2))
            .sum::<f64>()
            / n as f64;
    }
    (total / c as f64).max(0.0)
}
