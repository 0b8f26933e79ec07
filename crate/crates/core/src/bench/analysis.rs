use super::results::{BenchmarkResult, ResultsTable};
use super::ScenarioKind;
use crate::gnn::LayerKind;
use std::collections::BTreeMap;

pub fn truncate_results(table: &ResultsTable, max_layers: usize) -> ResultsTable {
    ResultsTable {
        rows: table
            .rows
            .iter()
            .filter(|r| r.layers <= max_layers)
            .cloned()
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentationRow {
    pub scenario: ScenarioKind,
    pub fp: bool,
    pub adm: bool,
    pub mean_mse: f64,
    pub count: usize,
}

/// Mean MSE per scenario and `(fp, adm)` combination, averaged over models
/// and depths.
pub fn aggregate_augmentations(table: &ResultsTable) -> Vec<AugmentationRow> {
    let mut groups: BTreeMap<(ScenarioKind, bool, bool), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let g = groups.entry((r.scenario, r.fp, r.adm)).or_default();
        g.0 += r.mse;
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|((scenario, fp, adm), (sum, count))| AugmentationRow {
            scenario,
            fp,
            adm,
            mean_mse: sum / count as f64,
            count,
        })
        .collect()
}

/// Pearson coefficient; `None` when either column has zero variance or
/// fewer than two values.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return None;
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
    /// Configurations present in every scenario.
    pub observations: usize,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.labels.iter().position(|l| l == a)?;
        let j = self.labels.iter().position(|l| l == b)?;
        self.values[i][j]
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("column");
        for l in &self.labels {
            out.push(',');
            out.push_str(l);
        }
        out.push('\n');
        for (label, row) in self.labels.iter().zip(&self.values) {
            out.push_str(label);
            for v in row {
                out.push(',');
                if let Some(v) = v {
                    out.push_str(&format!("{v:.6}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

type ConfigKey = (LayerKind, usize, bool, bool, u64);

fn config_key(r: &BenchmarkResult) -> ConfigKey {
    (r.model, r.layers, r.fp, r.adm, r.seed)
}

/// Columns of the correlation analysis: `n_params`, `fp`, `adm` and one
/// `mse_<scenario>` per scenario, over configurations present in every
/// scenario. Booleans are encoded 0/1.
pub fn correlation_columns(table: &ResultsTable) -> (Vec<String>, Vec<Vec<f64>>) {
    let scenarios = table.scenarios();
    let mut by_config: BTreeMap<ConfigKey, (usize, BTreeMap<ScenarioKind, f64>)> = BTreeMap::new();
    for r in &table.rows {
        let e = by_config
            .entry(config_key(r))
            .or_insert((r.n_params, BTreeMap::new()));
        e.1.insert(r.scenario, r.mse);
    }
    let mut labels = vec!["n_params".to_string(), "fp".to_string(), "adm".to_string()];
    labels.extend(
        scenarios
            .iter()
            .map(|s| format!("mse_{}", s.name().to_ascii_lowercase())),
    );
    let mut columns = vec![Vec::new(); labels.len()];
    for (key, (n_params, mses)) in &by_config {
        if mses.len() != scenarios.len() {
            continue;
        }
        columns[0].push(*n_params as f64);
        columns[1].push(f64::from(u8::from(key.2)));
        columns[2].push(f64::from(u8::from(key.3)));
        for (k, s) in scenarios.iter().enumerate() {
            columns[3 + k].push(mses[s]);
        }
    }
    (labels, columns)
}

pub fn correlation_matrix(table: &ResultsTable) -> CorrelationMatrix {
    let (labels, columns) = correlation_columns(table);
    let m = labels.len();
    let mut values = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i..m {
            let r = pearson(&columns[i], &columns[j]).map(|r| if i == j { 1.0 } else { r });
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    CorrelationMatrix {
        observations: columns.first().map_or(0, Vec::len),
        labels,
        values,
    }
}

/// One point per row for a parameters-versus-MSE plot.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint {
    pub scenario: ScenarioKind,
    pub model: LayerKind,
    pub layers: usize,
    pub n_params: usize,
    pub mse: f64,
}

pub fn params_vs_mse(table: &ResultsTable) -> Vec<ParamPoint> {
    table
        .rows
        .iter()
        .map(|r| ParamPoint {
            scenario: r.scenario,
            model: r.model,
            layers: r.layers,
            n_params: r.n_params,
            mse: r.mse,
        })
        .collect()
}

/// Mean MSE over all configurations at each depth, per scenario.
pub fn depth_means(table: &ResultsTable) -> Vec<(ScenarioKind, usize, f64)> {
    let mut groups: BTreeMap<(ScenarioKind, usize), (f64, usize)> = BTreeMap::new();
    for r in &table.rows {
        let g = groups.entry((r.scenario, r.layers)).or_default();
        g.0 += r.mse;
        g.1 += 1;
    }
    groups
        .into_iter()
        .map(|((s, l), (sum, n))| (s, l, sum / n as f64))
        .collect()
}
