//! Training, evaluation and the grid-search harness over the five transfer
//! scenarios, plus the analyses run on its results table.

pub mod analysis;
pub mod data;
pub mod results;
pub mod scenario;
pub mod train;

pub use analysis::{
    aggregate_augmentations, correlation_matrix, truncate_results, CorrelationMatrix,
};
pub use data::{Batch, DataPart, GraphData, GridData};
pub use results::{BenchmarkResult, ResultsTable, RESULTS_HEADER};
pub use scenario::{
    baseline_mse, grid_search, in_distribution_mse, run_scenario, BenchOptions, ScenarioData,
    ScenarioOutcome, SearchOutcome, SearchSpace, OD_LEVELS,
};
pub use train::{evaluate_mse, train_model, TrainOptions, TrainedModel};

use crate::feature_prop::PropagationError;
use crate::gnn::GnnError;
use crate::grid_model::GridError;
use crate::nn_core::NnError;
use crate::scenario_gen::ScenarioError;
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Gnn(#[from] GnnError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Propagation(#[from] PropagationError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("missing dataset for scenario {0}")]
    MissingDataset(ScenarioKind),
    #[error("loss became non-finite at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("{0}")]
    Data(String),
    #[error("results format: {0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<NnError> for BenchError {
    fn from(e: NnError) -> Self {
        BenchError::Gnn(GnnError::Nn(e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ScenarioKind {
    Od,
    Tc1,
    Tc2,
    Pq2Mv,
    Mv2Pq,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Od,
        ScenarioKind::Tc1,
        ScenarioKind::Tc2,
        ScenarioKind::Pq2Mv,
        ScenarioKind::Mv2Pq,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Od => "OD",
            ScenarioKind::Tc1 => "TC1",
            ScenarioKind::Tc2 => "TC2",
            ScenarioKind::Pq2Mv => "PQ2MV",
            ScenarioKind::Mv2Pq => "MV2PQ",
        }
    }

    /// Needs a second grid.
    pub fn is_heterogeneous(self) -> bool {
        matches!(self, ScenarioKind::Pq2Mv | ScenarioKind::Mv2Pq)
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                format!("unknown scenario '{s}', expected one of od, tc1, tc2, pq2mv, mv2pq")
            })
    }
}
