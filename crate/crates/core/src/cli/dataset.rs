use super::CliError;
use crate::bench::{GraphData, GridData};
use crate::grid_model::GridTopology;
use crate::powerflow::Snapshot;
use crate::scenario_gen::VariantRecord;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

pub const GRID_FILE: &str = "grid.json";
pub const SNAPSHOTS_FILE: &str = "snapshots.jsonl";
pub const VARIANTS_FILE: &str = "variants.json";
pub const VARIANTS_DIR: &str = "variants";
pub const MANIFEST_FILE: &str = "manifest.json";

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn write_series(dir: &Path, data: &GraphData, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| data_err(dir, e))?;
    let grid = dir.join(GRID_FILE);
    fs::write(&grid, data.topology.to_json()).map_err(|e| data_err(&grid, e))?;
    written.push(grid);
    let path = dir.join(SNAPSHOTS_FILE);
    let file = fs::File::create(&path).map_err(|e| data_err(&path, e))?;
    let mut out = BufWriter::new(file);
    for s in &data.snapshots {
        serde_json::to_writer(&mut out, s).map_err(|e| data_err(&path, e))?;
        out.write_all(b"\n").map_err(|e| data_err(&path, e))?;
    }
    out.flush().map_err(|e| data_err(&path, e))?;
    written.push(path);
    Ok(())
}

fn read_series(dir: &Path, id: &str) -> Result<GraphData, CliError> {
    let grid = dir.join(GRID_FILE);
    let text = fs::read_to_string(&grid).map_err(|e| data_err(&grid, e))?;
    let topology = GridTopology::from_json(&text).map_err(|e| data_err(&grid, e))?;
    let path = dir.join(SNAPSHOTS_FILE);
    let file = fs::File::open(&path).map_err(|e| data_err(&path, e))?;
    let mut snapshots = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| data_err(&path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Snapshot = serde_json::from_str(&line)
            .map_err(|e| data_err(&path, format!("line {}: {e}", i + 1)))?;
        snapshots.push(s);
    }
    if snapshots.is_empty() {
        return Err(data_err(&path, "no snapshots"));
    }
    Ok(GraphData {
        id: id.to_string(),
        topology,
        snapshots,
    })
}

/// Writes `<dir>/{grid.json, snapshots.jsonl, variants.json}` and one
/// `variants/<id>/` directory per variant. Returns the files written.
pub fn write_grid_data(dir: &Path, data: &GridData) -> Result<Vec<PathBuf>, CliError> {
    let mut written = Vec::new();
    write_series(dir, &data.base, &mut written)?;
    let records: Vec<&VariantRecord> = data.variants.iter().map(|(r, _)| r).collect();
    let path = dir.join(VARIANTS_FILE);
    let text = serde_json::to_string_pretty(&records).map_err(|e| data_err(&path, e))?;
    fs::write(&path, text).map_err(|e| data_err(&path, e))?;
    written.push(path);
    for (record, series) in &data.variants {
        write_series(
            &dir.join(VARIANTS_DIR).join(&record.variant_id),
            series,
            &mut written,
        )?;
    }
    Ok(written)
}

pub fn read_grid_data(dir: &Path) -> Result<GridData, CliError> {
    let base = read_series(dir, "base")?;
    let path = dir.join(VARIANTS_FILE);
    let text = fs::read_to_string(&path).map_err(|e| data_err(&path, e))?;
    let records: Vec<VariantRecord> =
        serde_json::from_str(&text).map_err(|e| data_err(&path, e))?;
    let mut variants = Vec::with_capacity(records.len());
    for record in records {
        let series = read_series(
            &dir.join(VARIANTS_DIR).join(&record.variant_id),
            &record.variant_id,
        )?;
        variants.push((record, series));
    }
    Ok(GridData { base, variants })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
}

/// Record of one command run and the files it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub output_dir: String,
    pub started_unix: u64,
    pub finished_unix: u64,
    pub artifacts: Vec<Artifact>,
}

pub fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| data_err(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

impl RunManifest {
    /// Checksums every file in `files`, stored relative to `output_dir`,
    /// and writes `manifest.json` there.
    pub fn write(mut self, files: &[PathBuf]) -> Result<PathBuf, CliError> {
        let root = PathBuf::from(&self.output_dir);
        for f in files {
            let rel = f.strip_prefix(&root).unwrap_or(f);
            self.artifacts.push(Artifact {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: sha256_file(f)?,
            });
        }
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        self.finished_unix = unix_now();
        let path = root.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self).map_err(|e| data_err(&path, e))?;
        fs::write(&path, text).map_err(|e| data_err(&path, e))?;
        Ok(path)
    }
}
