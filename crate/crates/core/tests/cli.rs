use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gridstate"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("fixtures")
        .join(format!("{name}.json"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(cwd: &Path, steps: &str, out: &str) -> Output {
    run(
        &[
            "gen-data",
            "--grid",
            fixture("feeder30").to_str().unwrap(),
            "--steps",
            steps,
            "--out",
            out,
        ],
        cwd,
    )
}

fn checksums(manifest: &Path) -> Vec<(String, String)> {
    let v: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(manifest).unwrap()).unwrap();
    v["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| {
            (
                a["path"].as_str().unwrap().to_string(),
                a["sha256"].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn gen_data_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "96", "a").status.success());
    assert!(gen(dir.path(), "96", "b").status.success());
    let a = checksums(&dir.path().join("a/feeder30/manifest.json"));
    assert_eq!(a, checksums(&dir.path().join("b/feeder30/manifest.json")));
    assert_eq!(a.len(), 3 + 2 * 4);
    let lines = fs::read_to_string(dir.path().join("a/feeder30/snapshots.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 96);
    let variants: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("a/feeder30/variants.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(variants.as_array().unwrap().len(), 4);
}

#[test]
fn zero_steps_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = gen(dir.path(), "0", "d");
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("--steps"));
}

#[test]
fn unknown_model_lists_valid_names() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &["grid-search", "--data", "d", "--models", "gcn,transformer"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(
        stderr(&o).contains("gcn, gat, gin, graphsage"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn missing_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(
        &[
            "grid-search",
            "--data",
            "absent",
            "--models",
            "gcn",
            "--layers",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn transfer_without_second_grid_names_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "4", "d").status.success());
    let o = run(
        &[
            "grid-search",
            "--data",
            "d/feeder30",
            "--scenarios",
            "mv2pq",
            "--models",
            "gcn",
            "--layers",
            "1",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("MV2PQ"));
}

#[test]
fn grid_search_output_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "8", "d").status.success());
    let args = |out: &str| {
        vec![
            "grid-search",
            "--data",
            "d/feeder30",
            "--scenarios",
            "tc1,tc2",
            "--models",
            "gcn",
            "--layers",
            "1-3",
            "--epochs",
            "10",
            "--out",
            out,
        ]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>()
    };
    for out in ["r1", "r2"] {
        let o = bin()
            .args(args(out))
            .current_dir(dir.path())
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = fs::read(dir.path().join("r1/results.csv")).unwrap();
    assert_eq!(a, fs::read(dir.path().join("r2/results.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("scenario,model,layers,fp,adm,mse,n_params,seed")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(
        rows.iter().filter(|l| l.starts_with("TC1,GCN,")).count(),
        12
    );
    assert_eq!(
        rows.iter().filter(|l| l.starts_with("TC2,GCN,")).count(),
        12
    );
    assert_eq!(rows.len(), 24);
}

#[test]
fn config_file_supplies_defaults_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.toml"),
        format!(
            "grid = {:?}\nsteps = 5\nout = \"from-file\"\nname = \"g\"\n",
            fixture("feeder30").to_str().unwrap()
        ),
    )
    .unwrap();
    let o = run(
        &["--config", "run.toml", "gen-data", "--steps", "3"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = fs::read_to_string(dir.path().join("from-file/g/snapshots.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 3);
    fs::write(dir.path().join("bad.toml"), "colour = 1\n").unwrap();
    assert_eq!(
        run(&["--config", "bad.toml", "gen-data"], dir.path())
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn run_scenario_prints_one_row() {
    let dir = tempfile::tempdir().unwrap();
    assert!(gen(dir.path(), "6", "d").status.success());
    let o = run(
        &[
            "run-scenario",
            "--data",
            "d/feeder30",
            "--scenarios",
            "od",
            "--models",
            "gin",
            "--layers",
            "2",
            "--epochs",
            "5",
            "--out",
            "one",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 2);
    assert!(stdout
        .lines()
        .nth(1)
        .unwrap()
        .starts_with("OD,GIN,2,False,False,"));
    assert_eq!(
        fs::read_to_string(dir.path().join("one/od_curves.csv"))
            .unwrap()
            .lines()
            .count(),
        7
    );
    let o = run(
        &[
            "run-scenario",
            "--data",
            "d/feeder30",
            "--models",
            "gcn,gat",
        ],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_handles_single_row_and_empty_input() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("one.csv"),
        "scenario,model,layers,fp,adm,mse,n_params,seed\nTC1,GCN,1,False,True,0.5,26,0\n",
    )
    .unwrap();
    let o = run(
        &["report", "--results", "one.csv", "--out", "rep"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let corr = fs::read_to_string(dir.path().join("rep/correlation.csv")).unwrap();
    assert!(
        corr.lines()
            .skip(1)
            .all(|l| l.split(',').skip(1).all(|v| v.is_empty())),
        "{corr}"
    );
    for f in [
        "augmentation.csv",
        "params_vs_mse.csv",
        "depth_means.csv",
        "manifest.json",
    ] {
        assert!(dir.path().join("rep").join(f).exists(), "{f}");
    }
    fs::write(
        dir.path().join("empty.csv"),
        "scenario,model,layers,fp,adm,mse,n_params,seed\n",
    )
    .unwrap();
    assert_eq!(
        run(&["report", "--results", "empty.csv"], dir.path())
            .status
            .code(),
        Some(3)
    );
}
