use super::CliError;
use crate::bench::ScenarioKind;
use crate::gnn::{LayerKind, MAX_LAYERS};
use serde::Deserialize;
use std::path::{Path, PathBuf};

/// Values a TOML config file may supply. Keys mirror the long flags;
/// a flag given on the command line wins over the file.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Settings {
    pub grid: Option<PathBuf>,
    pub steps: Option<usize>,
    pub seed: Option<u64>,
    pub repeats: Option<u64>,
    pub out: Option<PathBuf>,
    pub name: Option<String>,
    pub data: Option<PathBuf>,
    pub mv_data: Option<PathBuf>,
    pub results: Option<PathBuf>,
    pub scenarios: Option<String>,
    pub models: Option<String>,
    pub layers: Option<String>,
    pub fp: Option<String>,
    pub adm: Option<String>,
    pub jobs: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub epochs: Option<usize>,
    pub lr: Option<f64>,
    pub observability: Option<f64>,
    pub mask_seed: Option<u64>,
    pub split_seed: Option<u64>,
    pub max_layers: Option<usize>,
    pub baseline: Option<bool>,
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }
}

fn items(spec: &str) -> impl Iterator<Item = &str> {
    spec.split(',').map(str::trim).filter(|s| !s.is_empty())
}

fn non_empty<T>(v: Vec<T>, what: &str) -> Result<Vec<T>, CliError> {
    if v.is_empty() {
        Err(CliError::Usage(format!("empty {what} list")))
    } else {
        Ok(v)
    }
}

pub fn parse_models(spec: &str) -> Result<Vec<LayerKind>, CliError> {
    let mut out = Vec::new();
    for item in items(spec) {
        let kind: LayerKind = item.parse().map_err(CliError::Usage)?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    non_empty(out, "model")
}

pub fn parse_scenarios(spec: &str) -> Result<Vec<ScenarioKind>, CliError> {
    let mut out = Vec::new();
    for item in items(spec) {
        let kind: ScenarioKind = item.parse().map_err(CliError::Usage)?;
        if !out.contains(&kind) {
            out.push(kind);
        }
    }
    non_empty(out, "scenario")
}

/// Depth list such as `1-3`, `2,5,8` or `1-3,7`.
pub fn parse_layers(spec: &str) -> Result<Vec<usize>, CliError> {
    let bad = |s: &str| {
        CliError::Usage(format!(
            "invalid layer spec '{s}', expected depths in 1..={MAX_LAYERS}"
        ))
    };
    let depth = |s: &str| -> Result<usize, CliError> {
        let d: usize = s.trim().parse().map_err(|_| bad(s))?;
        if (1..=MAX_LAYERS).contains(&d) {
            Ok(d)
        } else {
            Err(bad(s))
        }
    };
    let mut out = Vec::new();
    for item in items(spec) {
        let range = match item.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (depth(a)?, depth(b)?);
                if a > b {
                    return Err(bad(item));
                }
                a..=b
            }
            None => {
                let d = depth(item)?;
                d..=d
            }
        };
        for d in range {
            if !out.contains(&d) {
                out.push(d);
            }
        }
    }
    out.sort_unstable();
    non_empty(out, "layer")
}

/// Boolean axis: `both`, or a list of `true`/`false`.
pub fn parse_flags(spec: &str, what: &str) -> Result<Vec<bool>, CliError> {
    if spec.trim().eq_ignore_ascii_case("both") {
        return Ok(vec![false, true]);
    }
    let mut out = Vec::new();
    for item in items(spec) {
        let v = match item.to_ascii_lowercase().as_str() {
            "true" | "yes" | "on" | "1" => true,
            "false" | "no" | "off" | "0" => false,
            _ => {
                return Err(CliError::Usage(format!(
                    "invalid --{what} value '{item}', expected true, false or both"
                )))
            }
        };
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out.sort_unstable();
    non_empty(out, what)
}
