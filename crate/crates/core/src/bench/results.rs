use super::{BenchError, ScenarioKind};
use crate::gnn::LayerKind;
use std::io::{Read, Write};

pub const RESULTS_HEADER: [&str; 8] = [
    "scenario", "model", "layers", "fp", "adm", "mse", "n_params", "seed",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub scenario: ScenarioKind,
    pub model: LayerKind,
    pub layers: usize,
    pub fp: bool,
    pub adm: bool,
    pub mse: f64,
    pub n_params: usize,
    pub seed: u64,
}

pub type ResultKey = (ScenarioKind, LayerKind, usize, bool, bool, u64);

impl BenchmarkResult {
    pub fn key(&self) -> ResultKey {
        (
            self.scenario,
            self.model,
            self.layers,
            self.fp,
            self.adm,
            self.seed,
        )
    }
}

/// Formats like C's `%.6g`.
pub fn format_sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        strip_zeros(&format!("{x:.decimals$}")).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", strip_zeros(mantissa), exp.abs())
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// The value `x` takes after a write and read through results.csv.
pub fn round_sig6(x: f64) -> f64 {
    format_sig6(x).parse().unwrap_or(x)
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn parse_bool(s: &str) -> Result<bool, BenchError> {
    match s {
        "True" => Ok(true),
        "False" => Ok(false),
        _ => Err(BenchError::Format(format!(
            "expected True or False, got '{s}'"
        ))),
    }
}

/// Rows in canonical order: scenario, model, layers, fp, adm, seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResultsTable {
    pub rows: Vec<BenchmarkResult>,
}

impl ResultsTable {
    /// Sorts rows and rejects duplicate keys.
    pub fn new(mut rows: Vec<BenchmarkResult>) -> Result<Self, BenchError> {
        rows.sort_by_key(|r| r.key());
        if let Some(w) = rows.windows(2).find(|w| w[0].key() == w[1].key()) {
            return Err(BenchError::Format(format!(
                "duplicate result row {:?}",
                w[0].key()
            )));
        }
        Ok(Self { rows })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn scenarios(&self) -> Vec<ScenarioKind> {
        let mut s: Vec<_> = self.rows.iter().map(|r| r.scenario).collect();
        s.dedup();
        s
    }

    pub fn for_scenario(&self, scenario: ScenarioKind) -> impl Iterator<Item = &BenchmarkResult> {
        self.rows.iter().filter(move |r| r.scenario == scenario)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(RESULTS_HEADER)?;
        for r in &self.rows {
            w.write_record([
                r.scenario.name().to_string(),
                r.model.name().to_string(),
                r.layers.to_string(),
                py_bool(r.fp).to_string(),
                py_bool(r.adm).to_string(),
                format_sig6(r.mse),
                r.n_params.to_string(),
                r.seed.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self, BenchError> {
        let mut r = csv::Reader::from_reader(reader);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != RESULTS_HEADER {
            return Err(BenchError::Format(format!(
                "unexpected header {}",
                header.join(",")
            )));
        }
        let mut rows = Vec::new();
        for record in r.records() {
            let record = record?;
            let field = |i: usize| record.get(i).unwrap_or("");
            let int = |i: usize| {
                field(i).parse::<u64>().map_err(|_| {
                    BenchError::Format(format!("bad {} '{}'", RESULTS_HEADER[i], field(i)))
                })
            };
            let mse: f64 = field(5)
                .parse()
                .map_err(|_| BenchError::Format(format!("bad mse '{}'", field(5))))?;
            if !(mse.is_finite() && mse >= 0.0) {
                return Err(BenchError::Format(format!(
                    "mse must be finite and non-negative, got {mse}"
                )));
            }
            rows.push(BenchmarkResult {
                scenario: field(0).parse().map_err(BenchError::Format)?,
                model: field(1).parse().map_err(BenchError::Format)?,
                layers: int(2)? as usize,
                fp: parse_bool(field(3))?,
                adm: parse_bool(field(4))?,
                mse,
                n_params: int(6)? as usize,
                seed: int(7)?,
            });
        }
        Self::new(rows)
    }
}
