//! On-disk artifact bundles: one directory per table with JSON/JSONL files
//! and a manifest written last.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::artifacts::{insights_from_jsonl, insights_to_jsonl, premises_from_jsonl, premises_to_jsonl, Insight, Premise};
use crate::bayesnet::BayesNet;
use crate::benchgen::{items_from_jsonl, items_to_jsonl, BenchmarkItem};
use crate::eval::{records_from_jsonl, records_to_jsonl, EvalRecord, Report};
use crate::ingest::{Codebook, DiscreteTable};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PREDICTIONS_DIR: &str = "predictions";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Artifact {
    Codebook,
    Discrete,
    BayesNet,
    Premises,
    Insights,
    Benchmark,
    Predictions,
    Report,
}

impl Artifact {
    pub const ALL: [Artifact; 8] = [
        Artifact::Codebook,
        Artifact::Discrete,
        Artifact::BayesNet,
        Artifact::Premises,
        Artifact::Insights,
        Artifact::Benchmark,
        Artifact::Predictions,
        Artifact::Report,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            Artifact::Codebook => "codebook.json",
            Artifact::Discrete => "discrete.csv",
            Artifact::BayesNet => "bayesnet.json",
            Artifact::Premises => "premises.jsonl",
            Artifact::Insights => "insights.jsonl",
            Artifact::Benchmark => "benchmark.jsonl",
            Artifact::Predictions => PREDICTIONS_DIR,
            Artifact::Report => "report.json",
        }
    }
}

impl std::fmt::Display for Artifact {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.file_name())
    }
}

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),
    #[error("{path}: format version {found}, this build reads version {FORMAT_VERSION}")]
    Version { path: PathBuf, found: u32 },
    #[error("{path}: malformed manifest: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("{artifact} is not present in {dir}")]
    Missing { artifact: Artifact, dir: PathBuf },
    #[error("{path}: {reason}")]
    Invalid { artifact: Artifact, path: PathBuf, reason: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub table: String,
    /// Per-stage configuration, keyed by stage name.
    pub config: BTreeMap<String, Value>,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_hash: String,
    /// Seconds since the Unix epoch; taken from `SOURCE_DATE_EPOCH` when set.
    pub created: u64,
    /// SHA-256 of each artifact file, keyed by path relative to the bundle.
    pub files: BTreeMap<String, String>,
}

pub fn config_hash(config: &BTreeMap<String, Value>) -> String {
    let canonical = serde_json::to_string(config).expect("config serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn timestamp() -> u64 {
    std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
}

/// Everything a bundle may hold. Absent fields are left untouched on save
/// and were not requested on load.
#[derive(Clone, Debug, Default)]
pub struct ArtifactBundle {
    pub table: String,
    pub config: BTreeMap<String, Value>,
    pub codebook: Option<Codebook>,
    pub discrete: Option<DiscreteTable>,
    pub net: Option<BayesNet>,
    pub premises: Option<Vec<Premise>>,
    pub insights: Option<Vec<Insight>>,
    pub benchmark: Option<Vec<BenchmarkItem>>,
    /// Prediction dumps keyed by file stem (e.g. the method name).
    pub predictions: BTreeMap<String, Vec<EvalRecord>>,
    pub report: Option<Report>,
}

impl ArtifactBundle {
    pub fn new(table: impl Into<String>) -> Self {
        Self {
            table: table.into(),
            ..Default::default()
        }
    }

    fn require_codebook(&self, artifact: Artifact, dir: &Path) -> Result<&Codebook, StorageError> {
        self.codebook.as_ref().ok_or_else(|| StorageError::Invalid {
            artifact,
            path: dir.join(artifact.file_name()),
            reason: "writing this artifact needs the codebook in the bundle".into(),
        })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StorageError + '_ {
    move |source| StorageError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes through a temporary sibling and renames it into place, so readers
/// never observe a half-written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, StorageError> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(StorageError::MissingManifest(dir.to_path_buf()));
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    parse_manifest(&text, &path)
}

/// Decodes manifest text, checking the format version and config hash.
/// `path` only labels errors.
pub fn parse_manifest(text: &str, path: &Path) -> Result<Manifest, StorageError> {
    let path = path.to_path_buf();
    let value: Value = serde_json::from_str(text).map_err(|e| StorageError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let found = value["format_version"].as_u64().ok_or_else(|| StorageError::Manifest {
        path: path.clone(),
        reason: "format_version missing".into(),
    })?;
    if found != FORMAT_VERSION as u64 {
        return Err(StorageError::Version {
            path,
            found: found as u32,
        });
    }
    let manifest: Manifest = serde_json::from_value(value).map_err(|e| StorageError::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.config_hash != config_hash(&manifest.config) {
        return Err(StorageError::Manifest {
            path,
            reason: "config_hash does not match config".into(),
        });
    }
    Ok(manifest)
}

/// Saves every present artifact, then rewrites the manifest, merging stage
/// configuration and file hashes with any manifest already in `dir`.
pub fn save_bundle(bundle: &ArtifactBundle, dir: &Path) -> Result<Manifest, StorageError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let previous = match read_manifest(dir) {
        Ok(m) => Some(m),
        Err(StorageError::MissingManifest(_)) => None,
        Err(e) => return Err(e),
    };
    let mut files = BTreeMap::new();
    let mut config = BTreeMap::new();
    if let Some(prev) = previous {
        files = prev.files;
        config = prev.config;
    }
    files.retain(|name, _| dir.join(name).is_file());
    config.extend(bundle.config.clone());

    let mut write = |rel: String, bytes: Vec<u8>| -> Result<(), StorageError> {
        write_atomic(&dir.join(&rel), &bytes)?;
        files.insert(rel, hex::encode(Sha256::digest(&bytes)));
        Ok(())
    };
    if let Some(cb) = &bundle.codebook {
        write(Artifact::Codebook.file_name().into(), cb.to_json().into_bytes())?;
    }
    if let Some(d) = &bundle.discrete {
        write(Artifact::Discrete.file_name().into(), d.to_csv().into_bytes())?;
    }
    if let Some(net) = &bundle.net {
        write(Artifact::BayesNet.file_name().into(), net.to_json().into_bytes())?;
    }
    if let Some(p) = &bundle.premises {
        write(Artifact::Premises.file_name().into(), premises_to_jsonl(p).into_bytes())?;
    }
    if let Some(i) = &bundle.insights {
        write(Artifact::Insights.file_name().into(), insights_to_jsonl(i).into_bytes())?;
    }
    if let Some(items) = &bundle.benchmark {
        let cb = bundle.require_codebook(Artifact::Benchmark, dir)?;
        write(Artifact::Benchmark.file_name().into(), items_to_jsonl(items, cb).into_bytes())?;
    }
    for (stem, records) in &bundle.predictions {
        write(format!("{PREDICTIONS_DIR}/{stem}.jsonl"), records_to_jsonl(records).into_bytes())?;
    }
    if let Some(r) = &bundle.report {
        write(Artifact::Report.file_name().into(), r.to_json().into_bytes())?;
    }

    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        table: bundle.table.clone(),
        config_hash: config_hash(&config),
        config,
        created: timestamp(),
        files,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())?;
    Ok(manifest)
}

fn read_artifact(dir: &Path, artifact: Artifact) -> Result<(PathBuf, String), StorageError> {
    let path = dir.join(artifact.file_name());
    if !path.is_file() {
        return Err(StorageError::Missing {
            artifact,
            dir: dir.to_path_buf(),
        });
    }
    let text = fs::read_to_string(&path).map_err(io_err(&path))?;
    Ok((path, text))
}

fn invalid(artifact: Artifact, path: &Path) -> impl FnOnce(String) -> StorageError + '_ {
    move |reason| StorageError::Invalid {
        artifact,
        path: path.to_path_buf(),
        reason,
    }
}

/// Loads and validates the requested artifacts. Artifacts that are parsed
/// against the codebook pull it in as well.
pub fn load_bundle(dir: &Path, need: &[Artifact]) -> Result<ArtifactBundle, StorageError> {
    let manifest = read_manifest(dir)?;
    let mut bundle = ArtifactBundle::new(manifest.table.clone());
    bundle.config = manifest.config;
    let wants = |a: Artifact| need.contains(&a);
    let needs_codebook = [Artifact::Codebook, Artifact::Discrete, Artifact::Benchmark].into_iter().any(wants);

    if needs_codebook {
        let (path, text) = read_artifact(dir, Artifact::Codebook)?;
        let cb = Codebook::from_json(&text).map_err(|e| invalid(Artifact::Codebook, &path)(e.to_string()))?;
        bundle.codebook = Some(cb);
    }
    if wants(Artifact::Discrete) {
        let (path, text) = read_artifact(dir, Artifact::Discrete)?;
        let cb = bundle.codebook.as_ref().expect("loaded above");
        let table = DiscreteTable::from_csv(&manifest.table, text.as_bytes(), cb)
            .map_err(|e| invalid(Artifact::Discrete, &path)(e.to_string()))?;
        bundle.discrete = Some(table);
    }
    if wants(Artifact::BayesNet) {
        let (path, text) = read_artifact(dir, Artifact::BayesNet)?;
        let net = BayesNet::from_json(&text).map_err(|e| invalid(Artifact::BayesNet, &path)(e.to_string()))?;
        bundle.net = Some(net);
    }
    if wants(Artifact::Premises) {
        let (path, text) = read_artifact(dir, Artifact::Premises)?;
        bundle.premises = Some(premises_from_jsonl(&text).map_err(|e| invalid(Artifact::Premises, &path)(e.to_string()))?);
    }
    if wants(Artifact::Insights) {
        let (path, text) = read_artifact(dir, Artifact::Insights)?;
        bundle.insights = Some(insights_from_jsonl(&text).map_err(|e| invalid(Artifact::Insights, &path)(e.to_string()))?);
    }
    if wants(Artifact::Benchmark) {
        let (path, text) = read_artifact(dir, Artifact::Benchmark)?;
        let cb = bundle.codebook.as_ref().expect("loaded above");
        bundle.benchmark =
            Some(items_from_jsonl(&text, cb).map_err(|e| invalid(Artifact::Benchmark, &path)(e.to_string()))?);
    }
    if wants(Artifact::Predictions) {
        let pdir = dir.join(PREDICTIONS_DIR);
        if !pdir.is_dir() {
            return Err(StorageError::Missing {
                artifact: Artifact::Predictions,
                dir: dir.to_path_buf(),
            });
        }
        let mut entries: Vec<PathBuf> = fs::read_dir(&pdir)
            .map_err(io_err(&pdir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                !name.starts_with('.') && name.ends_with(".jsonl")
            })
            .collect();
        entries.sort();
        for path in entries {
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let records = records_from_jsonl(&text).map_err(|e| invalid(Artifact::Predictions, &path)(e.to_string()))?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            bundle.predictions.insert(stem, records);
        }
    }
    if wants(Artifact::Report) {
        let (path, text) = read_artifact(dir, Artifact::Report)?;
        bundle.report = Some(Report::from_json(&text).map_err(|e| invalid(Artifact::Report, &path)(e.to_string()))?);
    }
    Ok(bundle)
}

/// Compares every file hash recorded in the manifest with the bytes on disk.
pub fn verify_checksums(dir: &Path) -> Result<(), StorageError> {
    let manifest = read_manifest(dir)?;
    for (rel, expected) in &manifest.files {
        let path = dir.join(rel);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        if hex::encode(Sha256::digest(&bytes)) != *expected {
            return Err(StorageError::Manifest {
                path: dir.join(MANIFEST_FILE),
                reason: format!("{rel} changed since the manifest was written"),
            });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::artifacts::generate_rendered_premises;
    use crate::bayesnet::synthetic::{numeric_codebook, toy_chain};
    use serde_json::json;

    fn toy_bundle() -> ArtifactBundle {
        let net = toy_chain();
        let cb = numeric_codebook(&net);
        let mut b = ArtifactBundle::new("chain");
        b.premises = Some(generate_rendered_premises(&net, &cb).unwrap());
        b.codebook = Some(cb);
        b.net = Some(net);
        b.config.insert("learn".into(), json!({"max_parents": 4, "seed": 1}));
        b
    }

    #[test]
    fn round_trip_and_byte_stability() {
        let dir = tempfile::tempdir().unwrap();
        let b = toy_bundle();
        let m1 = save_bundle(&b, dir.path()).unwrap();
        let first = fs::read(dir.path().join("bayesnet.json")).unwrap();
        let m2 = save_bundle(&b, dir.path()).unwrap();
        assert_eq!(first, fs::read(dir.path().join("bayesnet.json")).unwrap());
        assert_eq!(m1.files, m2.files);
        assert_eq!(m1.config_hash, config_hash(&b.config));

        let loaded = load_bundle(dir.path(), &[Artifact::BayesNet, Artifact::Premises, Artifact::Codebook]).unwrap();
        assert_eq!(loaded.net.unwrap().to_json(), b.net.as_ref().unwrap().to_json());
        assert_eq!(loaded.premises, b.premises);
        assert_eq!(loaded.codebook, b.codebook);
        verify_checksums(dir.path()).unwrap();
    }

    #[test]
    fn loads_only_requested() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&toy_bundle(), dir.path()).unwrap();
        fs::write(dir.path().join("premises.jsonl"), "not json\n").unwrap();
        let b = load_bundle(dir.path(), &[Artifact::BayesNet]).unwrap();
        assert!(b.net.is_some() && b.premises.is_none());
        assert!(matches!(
            load_bundle(dir.path(), &[Artifact::Premises]),
            Err(StorageError::Invalid { artifact: Artifact::Premises, .. })
        ));
        assert!(matches!(
            load_bundle(dir.path(), &[Artifact::Report]),
            Err(StorageError::Missing { artifact: Artifact::Report, .. })
        ));
    }

    #[test]
    fn manifest_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_bundle(dir.path(), &[]), Err(StorageError::MissingManifest(_))));
        save_bundle(&toy_bundle(), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replace("\"format_version\": 1", "\"format_version\": 2");
        fs::write(&path, text).unwrap();
        assert!(matches!(load_bundle(dir.path(), &[]), Err(StorageError::Version { found: 2, .. })));
    }

    #[test]
    fn corrupted_row_names_node_and_row() {
        let dir = tempfile::tempdir().unwrap();
        save_bundle(&toy_bundle(), dir.path()).unwrap();
        let path = dir.path().join("bayesnet.json");
        let text = fs::read_to_string(&path).unwrap().replacen("0.7", "0.9", 1);
        fs::write(&path, text).unwrap();
        let err = load_bundle(dir.path(), &[Artifact::BayesNet]).unwrap_err().to_string();
        assert!(err.contains("B") && err.contains("row"), "{err}");
    }

    #[test]
    fn stale_temp_files_are_ignored() {
        let dir = tempfile::tempdir().unwrap();
        let mut b = toy_bundle();
        let item_free: Vec<EvalRecord> = Vec::new();
        b.predictions.insert("random".into(), item_free);
        save_bundle(&b, dir.path()).unwrap();
        fs::write(dir.path().join("predictions/.random.jsonl.tmp-1"), "garbage").unwrap();
        let loaded = load_bundle(dir.path(), &[Artifact::Predictions]).unwrap();
        assert_eq!(loaded.predictions.len(), 1);
    }
}
