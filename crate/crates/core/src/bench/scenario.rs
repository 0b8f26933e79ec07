use super::data::{Batch, BusObservation, DataPart, GraphData, GridData};
use super::results::{round_sig6, BenchmarkResult, ResultsTable};
use super::train::{evaluate_batch, train_on_batch, TrainOptions, TrainedModel};
use super::{BenchError, ScenarioKind};
use crate::exec::Execution;
use crate::gnn::{LayerKind, ModelConfig, DEFAULT_HIDDEN_DIM, MAX_LAYERS};
use crate::grid_model::build_electrical_graph;
use crate::scenario_gen::{degrade_observability, split_variants, ObservabilityMask};

pub const OD_LEVELS: [f64; 6] = [0.5, 0.4, 0.3, 0.2, 0.1, 0.0];

/// Datasets a sweep can draw on. `mv` is only needed for the transfer
/// scenarios between grids.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioData {
    pub pq: GridData,
    pub mv: Option<GridData>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub train: TrainOptions,
    /// Observed share of the non-slack buses.
    pub observability: f64,
    pub mask_seed: u64,
    pub split_seed: u64,
    /// Levels evaluated by OD, starting at the training level.
    pub od_levels: Vec<f64>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            train: TrainOptions::default(),
            observability: 0.5,
            mask_seed: 0,
            split_seed: 0,
            od_levels: OD_LEVELS.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub result: BenchmarkResult,
    /// `(level, mse)` per observability level; OD only.
    pub od_curve: Vec<(f64, f64)>,
}

struct Observed<'a> {
    data: &'a GraphData,
    mask: ObservabilityMask,
}

impl<'a> Observed<'a> {
    fn new(data: &'a GraphData, sensors: &BusObservation) -> Result<Self, BenchError> {
        if data.snapshots.len() < 2 {
            return Err(BenchError::Data(format!(
                "dataset '{}' needs at least two snapshots",
                data.id
            )));
        }
        let mask = sensors.node_mask(&build_electrical_graph(&data.topology, false)?);
        Ok(Self { data, mask })
    }

    fn first_half(&self) -> DataPart<'_> {
        DataPart {
            topology: &self.data.topology,
            snapshots: self.data.halves().0,
            mask: &self.mask,
        }
    }

    fn second_half(&self) -> DataPart<'_> {
        DataPart {
            topology: &self.data.topology,
            snapshots: self.data.halves().1,
            mask: &self.mask,
        }
    }
}

fn train(
    config: ModelConfig,
    parts: &[DataPart<'_>],
    options: &BenchOptions,
) -> Result<TrainedModel, BenchError> {
    let batch = Batch::build(
        parts,
        config.use_fp,
        config.use_adm,
        &options.train.propagation,
    )?;
    train_on_batch(config, &batch, &options.train)
}

fn evaluate(
    trained: &TrainedModel,
    parts: &[DataPart<'_>],
    options: &BenchOptions,
) -> Result<f64, BenchError> {
    let config = trained.model.config;
    let batch = Batch::build(
        parts,
        config.use_fp,
        config.use_adm,
        &options.train.propagation,
    )?;
    evaluate_batch(trained, &batch)
}

fn sensors(grid: &GridData, options: &BenchOptions) -> Result<BusObservation, BenchError> {
    BusObservation::sample(
        &grid.base.topology,
        options.observability,
        options.mask_seed,
    )
}

fn variant_split(
    grid: &GridData,
    options: &BenchOptions,
) -> Result<(Vec<GraphData>, Vec<GraphData>), BenchError> {
    let variants: Vec<GraphData> = grid.variants.iter().map(|(_, d)| d.clone()).collect();
    Ok(split_variants(&variants, 0.5, options.split_seed)?)
}

fn transfer_grids(
    kind: ScenarioKind,
    data: &ScenarioData,
) -> Result<(&GridData, &GridData), BenchError> {
    let mv = data.mv.as_ref().ok_or(BenchError::MissingDataset(kind))?;
    Ok(match kind {
        ScenarioKind::Pq2Mv => (&data.pq, mv),
        _ => (mv, &data.pq),
    })
}

/// Checks that `data` holds what `kind` needs.
pub fn check_prerequisites(kind: ScenarioKind, data: &ScenarioData) -> Result<(), BenchError> {
    match kind {
        ScenarioKind::Od => Ok(()),
        ScenarioKind::Tc1 | ScenarioKind::Tc2 if data.pq.variants.len() < 2 => {
            Err(BenchError::MissingDataset(kind))
        }
        ScenarioKind::Tc1 | ScenarioKind::Tc2 => Ok(()),
        ScenarioKind::Pq2Mv | ScenarioKind::Mv2Pq => transfer_grids(kind, data).map(|_| ()),
    }
}

/// In-distribution MSE: trained on the first chronological half of the
/// base series, evaluated on the second half.
pub fn in_distribution_mse(
    data: &GridData,
    config: ModelConfig,
    options: &BenchOptions,
) -> Result<f64, BenchError> {
    let base = Observed::new(&data.base, &sensors(data, options)?)?;
    let trained = train(config, &[base.first_half()], options)?;
    evaluate(&trained, &[base.second_half()], options)
}

/// Trains `config` for one scenario and evaluates it on that scenario's
/// test data.
pub fn run_scenario(
    kind: ScenarioKind,
    data: &ScenarioData,
    config: ModelConfig,
    options: &BenchOptions,
) -> Result<ScenarioOutcome, BenchError> {
    check_prerequisites(kind, data)?;
    let mut od_curve = Vec::new();
    let (mse, n_params) = match kind {
        ScenarioKind::Od => {
            let base = Observed::new(&data.pq.base, &sensors(&data.pq, options)?)?;
            let trained = train(config, &[base.first_half()], options)?;
            for &level in &options.od_levels {
                let mask = degrade_observability(&base.mask, level, options.mask_seed)?;
                let part = DataPart {
                    mask: &mask,
                    ..base.second_half()
                };
                od_curve.push((level, evaluate(&trained, &[part], options)?));
            }
            if od_curve.is_empty() {
                return Err(BenchError::Data("no observability levels given".into()));
            }
            let mean = od_curve.iter().map(|&(_, m)| m).sum::<f64>() / od_curve.len() as f64;
            (mean, trained.model.count_parameters())
        }
        ScenarioKind::Tc1 | ScenarioKind::Tc2 => {
            let sensors = sensors(&data.pq, options)?;
            let (train_variants, test_variants) = variant_split(&data.pq, options)?;
            let tests = test_variants
                .iter()
                .map(|d| Observed::new(d, &sensors))
                .collect::<Result<Vec<_>, _>>()?;
            let test_parts: Vec<_> = tests.iter().map(Observed::second_half).collect();
            let trained = if kind == ScenarioKind::Tc1 {
                let base = Observed::new(&data.pq.base, &sensors)?;
                train(config, &[base.first_half()], options)?
            } else {
                let trains = train_variants
                    .iter()
                    .map(|d| Observed::new(d, &sensors))
                    .collect::<Result<Vec<_>, _>>()?;
                let parts: Vec<_> = trains.iter().map(Observed::first_half).collect();
                train(config, &parts, options)?
            };
            (
                evaluate(&trained, &test_parts, options)?,
                trained.model.count_parameters(),
            )
        }
        ScenarioKind::Pq2Mv | ScenarioKind::Mv2Pq => {
            let (source, target) = transfer_grids(kind, data)?;
            let source = Observed::new(&source.base, &sensors(source, options)?)?;
            let target = Observed::new(&target.base, &sensors(target, options)?)?;
            let trained = train(config, &[source.first_half()], options)?;
            (
                evaluate(&trained, &[target.second_half()], options)?,
                trained.model.count_parameters(),
            )
        }
    };
    if !(mse.is_finite() && mse >= 0.0) {
        return Err(BenchError::Data(format!("{kind} produced mse {mse}")));
    }
    let result = BenchmarkResult {
        scenario: kind,
        model: config.kind,
        layers: config.layers,
        fp: config.use_fp,
        adm: config.use_adm,
        mse: round_sig6(mse),
        n_params,
        seed: config.seed,
    };
    Ok(ScenarioOutcome { result, od_curve })
}

/// Cartesian hyperparameter space.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchSpace {
    pub models: Vec<LayerKind>,
    pub layers: Vec<usize>,
    pub fp: Vec<bool>,
    pub adm: Vec<bool>,
    pub hidden_dim: usize,
}

impl SearchSpace {
    /// Four models, depths 1 to 10, both augmentation flags.
    pub fn full() -> Self {
        Self {
            models: LayerKind::ALL.to_vec(),
            layers: (1..=MAX_LAYERS).collect(),
            fp: vec![false, true],
            adm: vec![false, true],
            hidden_dim: DEFAULT_HIDDEN_DIM,
        }
    }

    pub fn configs(&self, seed: u64) -> Vec<ModelConfig> {
        let mut out = Vec::new();
        for &kind in &self.models {
            for &layers in &self.layers {
                for &use_fp in &self.fp {
                    for &use_adm in &self.adm {
                        out.push(ModelConfig {
                            kind,
                            layers,
                            hidden_dim: self.hidden_dim,
                            use_fp,
                            use_adm,
                            seed,
                        });
                    }
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.models.len() * self.layers.len() * self.fp.len() * self.adm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Best in-distribution MSE over every configuration and seed.
pub fn baseline_mse(
    data: &GridData,
    space: &SearchSpace,
    seeds: &[u64],
    options: &BenchOptions,
    execution: Execution,
) -> Result<f64, BenchError> {
    let configs: Vec<ModelConfig> = seeds.iter().flat_map(|&s| space.configs(s)).collect();
    if configs.is_empty() {
        return Err(BenchError::Data("empty search space".into()));
    }
    let scores = execution.map(&configs, |&c| in_distribution_mse(data, c, options));
    let mut best = f64::INFINITY;
    for score in scores {
        best = best.min(score?);
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchFailure {
    pub scenario: ScenarioKind,
    pub config: ModelConfig,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub table: ResultsTable,
    pub failures: Vec<SearchFailure>,
    /// OD level curves keyed like the table rows.
    pub od_curves: Vec<(BenchmarkResult, Vec<(f64, f64)>)>,
}

/// One result per (scenario, configuration, seed). A failing configuration
/// is logged and recorded in `failures` without stopping the sweep.
pub fn grid_search(
    scenarios: &[ScenarioKind],
    space: &SearchSpace,
    seeds: &[u64],
    data: &ScenarioData,
    options: &BenchOptions,
    execution: Execution,
) -> Result<SearchOutcome, BenchError> {
    if space.is_empty() || seeds.is_empty() {
        return Err(BenchError::Data("empty search space".into()));
    }
    for &kind in scenarios {
        check_prerequisites(kind, data)?;
    }
    let mut work = Vec::new();
    for &kind in scenarios {
        for &seed in seeds {
            work.extend(space.configs(seed).into_iter().map(|c| (kind, c)));
        }
    }
    let outcomes = execution.map(&work, |&(kind, config)| {
        run_scenario(kind, data, config, options)
    });
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    let mut od_curves = Vec::new();
    for ((scenario, config), outcome) in work.into_iter().zip(outcomes) {
        match outcome {
            Ok(o) => {
                if scenario == ScenarioKind::Od {
                    od_curves.push((o.result.clone(), o.od_curve));
                }
                rows.push(o.result);
            }
            Err(e) => {
                log::error!("{scenario} {config:?} failed: {e}");
                failures.push(SearchFailure {
                    scenario,
                    config,
                    error: e.to_string(),
                });
            }
        }
    }
    od_curves.sort_by_key(|(r, _)| r.key());
    Ok(SearchOutcome {
        table: ResultsTable::new(rows)?,
        failures,
        od_curves,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_space_has_160_configs() {
        let space = SearchSpace::full();
        assert_eq!(space.len(), 160);
        assert_eq!(space.configs(0).len(), 160);
        let smoke = SearchSpace {
            models: vec![LayerKind::Gcn],
            layers: vec![1, 2],
            ..SearchSpace::full()
        };
        assert_eq!(smoke.configs(3).len(), 8);
    }
}
