use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use d2d_core::Dataset;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{BenchConfig, ExperimentSpec};

/// A CSV table held in memory. Cells are preformatted so a rerun writes
/// identical bytes.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self {
            columns: columns.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    /// Looks up `column` in the first row whose first cell equals `key`.
    pub fn get(&self, key: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|name| name == column)?;
        self.rows.iter().find(|r| r[0] == key).and_then(|r| r[c].parse().ok())
    }

    pub fn column(&self, column: &str) -> Vec<f64> {
        let Some(c) = self.columns.iter().position(|name| name == column) else {
            return Vec::new();
        };
        self.rows.iter().map(|r| r[c].parse().unwrap_or(f64::NAN)).collect()
    }

    pub fn to_csv(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
    }
}

/// Full-precision number formatting for CSV cells.
pub fn num(v: f64) -> String {
    format!("{v}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub hash: String,
    pub instances: usize,
    pub topologies: usize,
    pub seed: u64,
}

impl DatasetInfo {
    pub fn of(ds: &Dataset) -> Self {
        Self {
            hash: ds.content_hash(),
            instances: ds.len(),
            topologies: ds.topology_count(),
            seed: ds.seed,
        }
    }
}

/// Everything needed to rerun an experiment and check its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: ExperimentSpec,
    pub tool_version: String,
    pub config: BenchConfig,
    pub datasets: BTreeMap<String, DatasetInfo>,
    pub checkpoints: BTreeMap<String, String>,
    pub parameter_counts: BTreeMap<String, usize>,
    /// SHA-256 of each deterministic output file.
    pub outputs: BTreeMap<String, String>,
}

impl Manifest {
    pub fn new(spec: ExperimentSpec, config: &BenchConfig) -> Self {
        Self {
            spec,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.clone(),
            datasets: BTreeMap::new(),
            checkpoints: BTreeMap::new(),
            parameter_counts: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn dataset(&mut self, role: &str, ds: &Dataset) {
        self.spec.seeds.insert(format!("dataset.{role}"), ds.seed);
        self.datasets.insert(role.to_string(), DatasetInfo::of(ds));
    }

    pub fn load(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let text = fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading manifest {}", path.as_ref().display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn file_hash(path: impl AsRef<Path>) -> anyhow::Result<String> {
    let bytes = fs::read(path.as_ref()).with_context(|| format!("reading {}", path.as_ref().display()))?;
    Ok(sha256_hex(&bytes))
}

/// Outputs of one experiment run.
#[derive(Debug, Clone)]
pub struct Report {
    pub manifest: Manifest,
    /// Deterministic files: CSV tables, SVG plots, checkpoints, text.
    pub files: BTreeMap<String, Vec<u8>>,
    /// Files that hold wall-clock measurements and are excluded from the
    /// output hashes.
    pub timing: BTreeMap<String, Vec<u8>>,
    pub tables: BTreeMap<String, Table>,
}

impl Report {
    pub fn new(manifest: Manifest) -> Self {
        Self {
            manifest,
            files: BTreeMap::new(),
            timing: BTreeMap::new(),
            tables: BTreeMap::new(),
        }
    }

    pub fn table(&mut self, name: &str, table: Table) -> anyhow::Result<()> {
        self.files.insert(format!("{name}.csv"), table.to_csv()?);
        self.tables.insert(name.to_string(), table);
        Ok(())
    }

    pub fn file(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.insert(name.to_string(), bytes);
    }

    pub fn output_hashes(&self) -> BTreeMap<String, String> {
        self.files.iter().map(|(k, v)| (k.clone(), sha256_hex(v))).collect()
    }

    /// Writes every file plus `manifest.json` under `dir`.
    pub fn write(&mut self, dir: impl AsRef<Path>) -> anyhow::Result<PathBuf> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        self.manifest.outputs = self.output_hashes();
        for (name, bytes) in self.files.iter().chain(&self.timing) {
            let path = dir.join(name);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)?;
            }
            fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        }
        let manifest_path = dir.join("manifest.json");
        fs::write(&manifest_path, serde_json::to_vec_pretty(&self.manifest)?)?;
        Ok(manifest_path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_lookup_and_csv() {
        let mut t = Table::new(["method", "n20"]);
        t.push(vec!["wmmse".into(), num(84.5)]);
        assert_eq!(t.get("wmmse", "n20"), Some(84.5));
        assert_eq!(t.get("tgt", "n20"), None);
        assert_eq!(String::from_utf8(t.to_csv().unwrap()).unwrap(), "method,n20\nwmmse,84.5\n");
    }

    #[test]
    fn numbers_round_trip() {
        let v = 0.1 + 0.2;
        assert_eq!(num(v).parse::<f64>().unwrap(), v);
    }

    #[test]
    fn report_writes_manifest_with_hashes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = BenchConfig::default();
        let mut r = Report::new(Manifest::new(ExperimentSpec::new("demo", &cfg), &cfg));
        let mut t = Table::new(["a"]);
        t.push(vec!["1".into()]);
        r.table("demo", t).unwrap();
        r.timing.insert("timing.json".into(), b"{}".to_vec());
        let path = r.write(dir.path()).unwrap();
        let m = Manifest::load(&path).unwrap();
        assert_eq!(m.outputs.len(), 1);
        assert_eq!(m.outputs["demo.csv"], file_hash(dir.path().join("demo.csv")).unwrap());
        assert!(dir.path().join("timing.json").exists());
    }
}
