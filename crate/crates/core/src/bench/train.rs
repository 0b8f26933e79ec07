use super::data::{Batch, DataPart, Standardizer};
use super::BenchError;
use crate::feature_prop::PropagationConfig;
use crate::gnn::{build_model, GnnModel, ModelConfig, IN_CHANNELS, OUT_CHANNELS};
use crate::nn_core::{AdamConfig, AdamState, Tape, Tensor};
use std::sync::Arc;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub epochs: usize,
    pub adam: AdamConfig,
    pub propagation: PropagationConfig,
}

impl Default for TrainOptions {
    fn default() -> Self {
        Self {
            epochs: 200,
            adam: AdamConfig::default(),
            propagation: PropagationConfig::default(),
        }
    }
}

/// A model together with the voltage standardization it was trained under.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: GnnModel,
    pub standardizer: Standardizer,
    /// Full-batch loss in standardized units before each update.
    pub loss_history: Vec<f64>,
}

impl TrainedModel {
    /// Voltage estimates in per-unit for every row of `batch`.
    pub fn predict(&self, batch: &Batch) -> Result<Tensor, BenchError> {
        let x = batch.standardized_features(&self.standardizer);
        let z = self.model.predict_on(&batch.graph, &x)?;
        Ok(self.standardizer.inverse(&z))
    }
}

/// Full-batch Adam on the MSE over every node of every snapshot.
///
/// Voltages are standardized with the per-channel statistics of the
/// training targets before they reach the model.
pub fn train_on_batch(
    config: ModelConfig,
    batch: &Batch,
    options: &TrainOptions,
) -> Result<TrainedModel, BenchError> {
    let standardizer = Standardizer::fit(&batch.targets);
    let features = batch.standardized_features(&standardizer);
    let targets = standardizer.forward(&batch.targets);
    let mut model = build_model(config, IN_CHANNELS, OUT_CHANNELS)?;
    let mut params = model.params.tensors();
    let mut adam = AdamState::new(options.adam, &params);
    let all_rows: Arc<[bool]> = vec![true; batch.graph.node_count].into();
    let mut loss_history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        let mut tape = Tape::new();
        let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
        let x = tape.constant(features.clone());
        let y = tape.constant(targets.clone());
        let out = model.forward(&mut tape, &vars, &batch.graph, x)?;
        let loss = tape.mse_loss(out, y, all_rows.clone())?;
        let value = tape.value(loss).get(0, 0);
        if !value.is_finite() {
            return Err(BenchError::NonFiniteLoss { epoch });
        }
        loss_history.push(value);
        let grads = tape.backward(loss)?;
        let grads: Vec<_> = vars
            .iter()
            .zip(&params)
            .map(|(&v, p)| grads.get_or_zeros(v, p))
            .collect();
        adam.step(&mut params, &grads)?;
    }
    model.params.set_tensors(params);
    Ok(TrainedModel {
        model,
        standardizer,
        loss_history,
    })
}

pub fn train_model(
    config: ModelConfig,
    parts: &[DataPart<'_>],
    options: &TrainOptions,
) -> Result<TrainedModel, BenchError> {
    let batch = Batch::build(parts, config.use_fp, config.use_adm, &options.propagation)?;
    train_on_batch(config, &batch, options)
}

/// Mean squared error over both voltage channels, all nodes and all
/// snapshots, with inputs built as in training.
pub fn evaluate_mse(
    trained: &TrainedModel,
    parts: &[DataPart<'_>],
    propagation: &PropagationConfig,
) -> Result<f64, BenchError> {
    let config = trained.model.config;
    let batch = Batch::build(parts, config.use_fp, config.use_adm, propagation)?;
    evaluate_batch(trained, &batch)
}

pub fn evaluate_batch(trained: &TrainedModel, batch: &Batch) -> Result<f64, BenchError> {
    let pred = trained.predict(batch)?;
    let sq: f64 = pred
        .data()
        .iter()
        .zip(batch.targets.data())
        .map(|(p, t)| (p - t).powi(2))
        .sum();
    Ok(sq / batch.targets.len() as f64)
}
