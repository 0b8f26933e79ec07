//! Command-line front end: dataset generation, single scenarios, grid
//! searches and result reports.

pub mod config;
pub mod dataset;

use crate::bench::analysis::{
    aggregate_augmentations, correlation_matrix, depth_means, params_vs_mse, truncate_results,
};
use crate::bench::results::format_sig6;
use crate::bench::scenario::{
    baseline_mse, grid_search, run_scenario, BenchOptions, ScenarioData, SearchSpace,
};
use crate::bench::{
    BenchError, BenchmarkResult, GridData, ResultsTable, ScenarioKind, TrainOptions,
};
use crate::exec::Execution;
use crate::feature_prop::PropagationError;
use crate::gnn::{GnnError, LayerKind, ModelConfig, DEFAULT_HIDDEN_DIM};
use crate::grid_model::{load_grid, GridError};
use crate::nn_core::AdamConfig;
use crate::powerflow::{LoadProfile, PowerFlowError};
use clap::{Args, Parser, Subcommand};
use config::{parse_flags, parse_layers, parse_models, parse_scenarios, Settings};
use dataset::{read_grid_data, unix_now, write_grid_data, RunManifest};
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_NUMERICAL: i32 = 4;

pub const DEFAULT_STEPS: usize = 96;
pub const DEFAULT_MAX_REPORT_LAYERS: usize = 7;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numerical: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
            CliError::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl From<PowerFlowError> for CliError {
    fn from(e: PowerFlowError) -> Self {
        match e {
            PowerFlowError::NotConverged { .. } | PowerFlowError::SingularJacobian { .. } => {
                CliError::Numerical(e.to_string())
            }
            PowerFlowError::NoSteps | PowerFlowError::BadTolerance => {
                CliError::Usage(e.to_string())
            }
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GridError> for CliError {
    fn from(e: GridError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::NonFiniteLoss { .. }
            | BenchError::Gnn(GnnError::Nn(_))
            | BenchError::Propagation(PropagationError::Singular) => {
                CliError::Numerical(e.to_string())
            }
            BenchError::Gnn(GnnError::InvalidConfig(_)) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "gridstate",
    version,
    about = "Graph neural state estimation benchmarks for distribution grids"
)]
pub struct Cli {
    /// TOML file whose keys mirror the long flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve a load time series on a grid and its topology variants.
    GenData(GenDataArgs),
    /// Train and evaluate one configuration on one scenario.
    RunScenario(RunScenarioArgs),
    /// Sweep the hyperparameter space over several scenarios.
    GridSearch(GridSearchArgs),
    /// Derive the augmentation, correlation and depth analyses from results.csv.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Dataset directory name under --out; defaults to the grid file stem.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Data and training flags shared by the model-running commands.
#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Second grid's dataset, needed by PQ2MV and MV2PQ.
    #[arg(long)]
    pub mv_data: Option<PathBuf>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Observed share of non-slack buses.
    #[arg(long)]
    pub observability: Option<f64>,
    #[arg(long)]
    pub mask_seed: Option<u64>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunScenarioArgs {
    #[arg(long)]
    pub scenarios: Option<String>,
    #[arg(long)]
    pub models: Option<String>,
    #[arg(long)]
    pub layers: Option<String>,
    #[arg(long)]
    pub fp: Option<String>,
    #[arg(long)]
    pub adm: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    /// Comma list of od, tc1, tc2, pq2mv, mv2pq.
    #[arg(long)]
    pub scenarios: Option<String>,
    /// Comma list of gcn, gat, gin, graphsage.
    #[arg(long)]
    pub models: Option<String>,
    /// Depths such as 1-10 or 1,2,5.
    #[arg(long)]
    pub layers: Option<String>,
    /// true, false or both.
    #[arg(long)]
    pub fp: Option<String>,
    /// true, false or both.
    #[arg(long)]
    pub adm: Option<String>,
    /// First model seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive model seeds per configuration.
    #[arg(long)]
    pub repeats: Option<u64>,
    /// Also write the in-distribution baseline over the same space.
    #[arg(long)]
    pub baseline: bool,
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub results: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Depth cut applied before aggregating augmentations.
    #[arg(long)]
    pub max_layers: Option<usize>,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .try_init();
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let settings = match &cli.config {
        Some(p) => Settings::load(p)?,
        None => Settings::default(),
    };
    let config = cli.config.as_ref().map(|p| p.display().to_string());
    match &cli.command {
        Command::GenData(a) => gen_data(a, &settings, config),
        Command::RunScenario(a) => run_one(a, &settings, config),
        Command::GridSearch(a) => search(a, &settings, config),
        Command::Report(a) => report(a, &settings, config),
    }
}

fn execution(jobs: Option<usize>) -> Result<Execution, CliError> {
    match jobs {
        Some(0) => Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(1) => Ok(Execution::Sequential),
        _ => Ok(Execution::default()),
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn manifest(command: &str, config: Option<String>, seed: Option<u64>, out: &Path) -> RunManifest {
    RunManifest {
        command: command.to_string(),
        config,
        seed,
        output_dir: out.display().to_string(),
        started_unix: unix_now(),
        finished_unix: 0,
        artifacts: Vec::new(),
    }
}

fn gen_data(a: &GenDataArgs, s: &Settings, config: Option<String>) -> Result<(), CliError> {
    let grid = a
        .grid
        .clone()
        .or(s.grid.clone())
        .ok_or_else(|| CliError::Usage("--grid is required".into()))?;
    let steps = a.steps.or(s.steps).unwrap_or(DEFAULT_STEPS);
    if steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let out = a
        .out
        .clone()
        .or(s.out.clone())
        .unwrap_or_else(|| PathBuf::from("data"));
    let name = match a.name.clone().or(s.name.clone()) {
        Some(n) => n,
        None => grid
            .file_stem()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "grid".into()),
    };
    let exec = execution(a.jobs.or(s.jobs))?;
    let dir = out.join(name);
    let run = manifest("gen-data", config, Some(seed), &dir);
    let topology = load_grid(&grid)?;
    let data = exec.with_jobs(a.jobs.or(s.jobs), || {
        GridData::generate(&topology, steps, &LoadProfile::default(), seed, exec)
    })?;
    let files = write_grid_data(&dir, &data)?;
    run.write(&files)?;
    log::info!(
        "wrote {} snapshots and {} variants to {}",
        data.base.snapshots.len(),
        data.variants.len(),
        dir.display()
    );
    Ok(())
}

/// Everything needed to train: datasets, options and execution mode.
struct TrainSetup {
    data: ScenarioData,
    options: BenchOptions,
    hidden_dim: usize,
    jobs: Option<usize>,
    exec: Execution,
    out: Option<PathBuf>,
}

fn train_setup(a: &TrainArgs, s: &Settings) -> Result<TrainSetup, CliError> {
    let hidden_dim = a.hidden_dim.or(s.hidden_dim).unwrap_or(DEFAULT_HIDDEN_DIM);
    let epochs = a
        .epochs
        .or(s.epochs)
        .unwrap_or(TrainOptions::default().epochs);
    let lr = a.lr.or(s.lr).unwrap_or(AdamConfig::default().lr);
    if hidden_dim == 0 || epochs == 0 {
        return Err(CliError::Usage(
            "--hidden-dim and --epochs must be at least 1".into(),
        ));
    }
    if !(lr.is_finite() && lr > 0.0) {
        return Err(CliError::Usage(format!("--lr must be positive, got {lr}")));
    }
    let defaults = BenchOptions::default();
    let observability = a
        .observability
        .or(s.observability)
        .unwrap_or(defaults.observability);
    if !(0.0..=1.0).contains(&observability) {
        return Err(CliError::Usage(format!(
            "--observability must lie in [0, 1], got {observability}"
        )));
    }
    let options = BenchOptions {
        train: TrainOptions {
            epochs,
            adam: AdamConfig {
                lr,
                ..AdamConfig::default()
            },
            ..TrainOptions::default()
        },
        observability,
        mask_seed: a.mask_seed.or(s.mask_seed).unwrap_or(defaults.mask_seed),
        split_seed: a.split_seed.or(s.split_seed).unwrap_or(defaults.split_seed),
        od_levels: defaults
            .od_levels
            .into_iter()
            .filter(|&l| l <= observability)
            .collect(),
    };
    let data_dir = a
        .data
        .clone()
        .or(s.data.clone())
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let pq = read_grid_data(&data_dir)?;
    let mv = a
        .mv_data
        .clone()
        .or(s.mv_data.clone())
        .map(|p| read_grid_data(&p))
        .transpose()?;
    let jobs = a.jobs.or(s.jobs);
    Ok(TrainSetup {
        data: ScenarioData { pq, mv },
        options,
        hidden_dim,
        jobs,
        exec: execution(jobs)?,
        out: a.out.clone().or(s.out.clone()),
    })
}

fn single<T: Copy>(values: Vec<T>, flag: &str) -> Result<T, CliError> {
    match values[..] {
        [v] => Ok(v),
        _ => Err(CliError::Usage(format!(
            "run-scenario takes exactly one --{flag} value"
        ))),
    }
}

fn results_row(r: &BenchmarkResult) -> String {
    ResultsTable {
        rows: vec![r.clone()],
    }
    .to_csv_string()
}

fn od_curves_csv(curves: &[(BenchmarkResult, Vec<(f64, f64)>)]) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(["model", "layers", "fp", "adm", "seed", "level", "mse"])
        .map_err(err)?;
    for (r, curve) in curves {
        for &(level, mse) in curve {
            w.write_record([
                r.model.name().to_string(),
                r.layers.to_string(),
                py_bool(r.fp).into(),
                py_bool(r.adm).into(),
                r.seed.to_string(),
                format!("{level}"),
                format_sig6(mse),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn py_bool(b: bool) -> &'static str {
    if b {
        "True"
    } else {
        "False"
    }
}

fn run_one(a: &RunScenarioArgs, s: &Settings, config: Option<String>) -> Result<(), CliError> {
    let scenario = single(
        parse_scenarios(
            a.scenarios
                .as_deref()
                .or(s.scenarios.as_deref())
                .unwrap_or("od"),
        )?,
        "scenarios",
    )?;
    let kind = single(
        parse_models(a.models.as_deref().or(s.models.as_deref()).unwrap_or("gcn"))?,
        "models",
    )?;
    let layers = single(
        parse_layers(a.layers.as_deref().or(s.layers.as_deref()).unwrap_or("2"))?,
        "layers",
    )?;
    let use_fp = single(
        parse_flags(a.fp.as_deref().or(s.fp.as_deref()).unwrap_or("false"), "fp")?,
        "fp",
    )?;
    let use_adm = single(
        parse_flags(
            a.adm.as_deref().or(s.adm.as_deref()).unwrap_or("false"),
            "adm",
        )?,
        "adm",
    )?;
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let setup = train_setup(&a.train, s)?;
    let model = ModelConfig {
        kind,
        layers,
        hidden_dim: setup.hidden_dim,
        use_fp,
        use_adm,
        seed,
    };
    model
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let outcome = run_scenario(scenario, &setup.data, model, &setup.options)?;
    let row = results_row(&outcome.result);
    print!("{row}");
    if let Some(out) = setup.out {
        create_dir(&out)?;
        let run = manifest("run-scenario", config, Some(seed), &out);
        let mut files = vec![out.join("results.csv")];
        write_text(&files[0], &row)?;
        if scenario == ScenarioKind::Od {
            let path = out.join("od_curves.csv");
            write_text(
                &path,
                &od_curves_csv(&[(outcome.result, outcome.od_curve)])?,
            )?;
            files.push(path);
        }
        run.write(&files)?;
    }
    Ok(())
}

fn default_scenarios(data: &ScenarioData) -> Vec<ScenarioKind> {
    ScenarioKind::ALL
        .into_iter()
        .filter(|k| !k.is_heterogeneous() || data.mv.is_some())
        .collect()
}

fn search(a: &GridSearchArgs, s: &Settings, config: Option<String>) -> Result<(), CliError> {
    let models = match a.models.as_deref().or(s.models.as_deref()) {
        Some(spec) => parse_models(spec)?,
        None => LayerKind::ALL.to_vec(),
    };
    let layers = parse_layers(
        a.layers
            .as_deref()
            .or(s.layers.as_deref())
            .unwrap_or("1-10"),
    )?;
    let fp = parse_flags(a.fp.as_deref().or(s.fp.as_deref()).unwrap_or("both"), "fp")?;
    let adm = parse_flags(
        a.adm.as_deref().or(s.adm.as_deref()).unwrap_or("both"),
        "adm",
    )?;
    let seed = a.seed.or(s.seed).unwrap_or(0);
    let repeats = a.repeats.or(s.repeats).unwrap_or(1);
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let scenario_spec = a.scenarios.clone().or(s.scenarios.clone());
    let setup = train_setup(&a.train, s)?;
    let scenarios = match scenario_spec {
        Some(spec) => parse_scenarios(&spec)?,
        None => default_scenarios(&setup.data),
    };
    let space = SearchSpace {
        models,
        layers,
        fp,
        adm,
        hidden_dim: setup.hidden_dim,
    };
    let seeds: Vec<u64> = (seed..seed + repeats).collect();
    let out = setup
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results"));
    let run = manifest("grid-search", config, Some(seed), &out);
    let outcome = setup.exec.with_jobs(setup.jobs, || {
        grid_search(
            &scenarios,
            &space,
            &seeds,
            &setup.data,
            &setup.options,
            setup.exec,
        )
    })?;
    if outcome.table.is_empty() {
        return Err(CliError::Numerical(format!(
            "every configuration failed ({} failures)",
            outcome.failures.len()
        )));
    }
    for f in &outcome.failures {
        log::warn!("{} {:?}: {}", f.scenario, f.config, f.error);
    }
    create_dir(&out)?;
    let mut files = vec![out.join("results.csv")];
    write_text(&files[0], &outcome.table.to_csv_string())?;
    if !outcome.od_curves.is_empty() {
        let path = out.join("od_curves.csv");
        write_text(&path, &od_curves_csv(&outcome.od_curves)?)?;
        files.push(path);
    }
    if a.baseline || s.baseline.unwrap_or(false) {
        let best = setup.exec.with_jobs(setup.jobs, || {
            baseline_mse(&setup.data.pq, &space, &seeds, &setup.options, setup.exec)
        })?;
        let path = out.join("baseline.json");
        write_text(
            &path,
            &format!(
                "{{\n  \"baseline_mse\": {best:e},\n  \"configs\": {}\n}}\n",
                space.len() * seeds.len()
            ),
        )?;
        files.push(path);
    }
    run.write(&files)?;
    eprintln!(
        "{} rows, {} failures -> {}",
        outcome.table.len(),
        outcome.failures.len(),
        out.display()
    );
    Ok(())
}

fn csv_text(
    header: &[&str],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<String, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
    Ok(String::from_utf8_lossy(&bytes).into_owned())
}

fn report(a: &ReportArgs, s: &Settings, config: Option<String>) -> Result<(), CliError> {
    let results = a
        .results
        .clone()
        .or(s.results.clone())
        .ok_or_else(|| CliError::Usage("--results is required".into()))?;
    let out = a
        .out
        .clone()
        .or(s.out.clone())
        .unwrap_or_else(|| PathBuf::from("report"));
    let max_layers = a
        .max_layers
        .or(s.max_layers)
        .unwrap_or(DEFAULT_MAX_REPORT_LAYERS);
    let file = fs::File::open(&results)
        .map_err(|e| CliError::Data(format!("{}: {e}", results.display())))?;
    let table = ResultsTable::read_csv(file)?;
    if table.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no results",
            results.display()
        )));
    }
    let run = manifest("report", config, None, &out);
    create_dir(&out)?;
    let aug = aggregate_augmentations(&truncate_results(&table, max_layers))
        .into_iter()
        .map(|r| {
            vec![
                r.scenario.name().into(),
                py_bool(r.fp).into(),
                py_bool(r.adm).into(),
                format_sig6(r.mean_mse),
                r.count.to_string(),
            ]
        });
    let points = params_vs_mse(&table).into_iter().map(|p| {
        vec![
            p.scenario.name().into(),
            p.model.name().into(),
            p.layers.to_string(),
            p.n_params.to_string(),
            format_sig6(p.mse),
        ]
    });
    let depths = depth_means(&table)
        .into_iter()
        .map(|(s, l, m)| vec![s.name().into(), l.to_string(), format_sig6(m)]);
    let outputs = [
        (
            "augmentation.csv",
            csv_text(&["scenario", "fp", "adm", "mean_mse", "count"], aug)?,
        ),
        (
            "correlation.csv",
            correlation_matrix(&table).to_csv_string(),
        ),
        (
            "params_vs_mse.csv",
            csv_text(&["scenario", "model", "layers", "n_params", "mse"], points)?,
        ),
        (
            "depth_means.csv",
            csv_text(&["scenario", "layers", "mean_mse"], depths)?,
        ),
    ];
    let mut files = Vec::new();
    for (name, text) in outputs {
        let path = out.join(name);
        write_text(&path, &text)?;
        files.push(path);
    }
    run.write(&files)?;
    Ok(())
}
