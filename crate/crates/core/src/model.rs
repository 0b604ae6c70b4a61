//! Canonical data types shared by every pipeline stage, plus their file formats.
//!
//! Datasets are exchanged as Alpaca-style JSONL (`instruction`/`input`/`output`
//! only). Provenance lives in a sidecar metadata file so emitted datasets stay
//! trainer-compatible. Principle pools are a single JSON object.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Placeholder some generators emit for "no input".
pub const NO_INPUT_SENTINEL: &str = "<noinput>";

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("line {line}: malformed JSON: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: schema error: {message}")]
    Schema { line: usize, message: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("invalid file encoding: {0}")]
    Encoding(String),
    #[error("pool integrity error: {0}")]
    Integrity(String),
    #[error("invalid instance: {0}")]
    InvalidInstance(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Seed,
    InitialExpansion,
    Generated,
}

/// One instruction-tuning record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub origin: Origin,
    pub source_request_id: Option<String>,
}

impl TaskInstance {
    /// Builds a normalized instance, enforcing the type invariants.
    pub fn new(
        instruction: &str,
        input: &str,
        output: &str,
        origin: Origin,
        source_request_id: Option<String>,
    ) -> Result<Self, ModelError> {
        let instruction = instruction.trim().to_string();
        if instruction.is_empty() {
            return Err(ModelError::InvalidInstance("instruction is empty".into()));
        }
        if origin == Origin::Generated && source_request_id.is_none() {
            return Err(ModelError::InvalidInstance(
                "generated instance without source request id".into(),
            ));
        }
        Ok(Self {
            instruction,
            input: normalize_input(input),
            output: output.trim().to_string(),
            origin,
            source_request_id,
        })
    }

    pub fn seed(instruction: &str, input: &str, output: &str) -> Result<Self, ModelError> {
        Self::new(instruction, input, output, Origin::Seed, None)
    }

    /// The Alpaca triple as it appears on disk.
    pub fn record(&self) -> AlpacaRecord {
        AlpacaRecord {
            instruction: self.instruction.clone(),
            input: self.input.clone(),
            output: self.output.clone(),
        }
    }
}

/// Removes every occurrence of the no-input sentinel and trims. Idempotent.
pub fn normalize_input(input: &str) -> String {
    let mut s = input.to_string();
    while s.contains(NO_INPUT_SENTINEL) {
        s = s.replace(NO_INPUT_SENTINEL, "");
    }
    s.trim().to_string()
}

/// On-disk row: keys exactly `instruction`, `input`, `output`, in that order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlpacaRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLabel {
    Seed,
    Initial,
    Final,
}

impl DatasetLabel {
    fn default_origin(self) -> Origin {
        match self {
            DatasetLabel::Seed => Origin::Seed,
            DatasetLabel::Initial => Origin::InitialExpansion,
            DatasetLabel::Final => Origin::Generated,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DatasetLabel::Seed => "seed",
            DatasetLabel::Initial => "initial",
            DatasetLabel::Final => "final",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub items: Vec<TaskInstance>,
    pub label: DatasetLabel,
}

impl Dataset {
    pub fn new(label: DatasetLabel, items: Vec<TaskInstance>) -> Result<Self, ModelError> {
        if label == DatasetLabel::Seed {
            if let Some(bad) = items.iter().position(|i| i.origin != Origin::Seed) {
                return Err(ModelError::InvalidInstance(format!(
                    "seed dataset item {bad} has non-seed origin"
                )));
            }
        }
        Ok(Self { items, label })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Deserialize)]
struct RawRecord {
    instruction: Option<serde_json::Value>,
    input: Option<serde_json::Value>,
    output: Option<serde_json::Value>,
}

fn field_text(
    value: Option<serde_json::Value>,
    key: &str,
    line: usize,
) -> Result<Option<String>, ModelError> {
    match value {
        None | Some(serde_json::Value::Null) => Ok(None),
        Some(serde_json::Value::String(s)) => Ok(Some(s)),
        Some(other) => Err(ModelError::Schema {
            line,
            message: format!("\"{key}\" must be a string, found {other}"),
        }),
    }
}

fn record_to_instance(
    raw: RawRecord,
    line: usize,
    label: DatasetLabel,
) -> Result<TaskInstance, ModelError> {
    let instruction = field_text(raw.instruction, "instruction", line)?.ok_or_else(|| {
        ModelError::Schema {
            line,
            message: "missing \"instruction\" key".into(),
        }
    })?;
    let input = field_text(raw.input, "input", line)?.unwrap_or_default();
    let output = field_text(raw.output, "output", line)?.ok_or_else(|| ModelError::Schema {
        line,
        message: "missing \"output\" key".into(),
    })?;
    let origin = label.default_origin();
    let source = (origin == Origin::Generated).then(|| format!("import:{line}"));
    TaskInstance::new(&instruction, &input, &output, origin, source).map_err(|e| {
        ModelError::Schema {
            line,
            message: e.to_string(),
        }
    })
}

/// Parses a JSONL file or a single JSON array of Alpaca objects.
///
/// Origins are assigned from `expected_label`; use [`apply_sidecar`] to restore
/// recorded provenance.
pub fn parse_instances_file(
    bytes: &[u8],
    expected_label: DatasetLabel,
) -> Result<Dataset, ModelError> {
    let text = std::str::from_utf8(bytes).map_err(|e| ModelError::Encoding(e.to_string()))?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(text);
    let mut items = Vec::new();
    if text.trim_start().starts_with('[') {
        let values: Vec<serde_json::Value> =
            serde_json::from_str(text).map_err(|e| ModelError::Parse {
                line: e.line(),
                message: e.to_string(),
            })?;
        for (idx, value) in values.into_iter().enumerate() {
            let raw: RawRecord = serde_json::from_value(value).map_err(|e| ModelError::Schema {
                line: idx + 1,
                message: e.to_string(),
            })?;
            items.push(record_to_instance(raw, idx + 1, expected_label)?);
        }
    } else {
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord = serde_json::from_str(line).map_err(|e| ModelError::Parse {
                line: idx + 1,
                message: e.to_string(),
            })?;
            items.push(record_to_instance(raw, idx + 1, expected_label)?);
        }
    }
    if items.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    Dataset::new(expected_label, items)
}

/// JSONL with keys exactly `instruction`, `input`, `output`; one line per instance.
pub fn serialize_dataset(dataset: &Dataset) -> Vec<u8> {
    let mut out = Vec::new();
    for item in &dataset.items {
        // Serializing three strings cannot fail.
        let line = serde_json::to_string(&item.record()).expect("string record serializes");
        out.extend_from_slice(line.as_bytes());
        out.push(b'\n');
    }
    out
}

/// Per-instance provenance written next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarEntry {
    pub origin: Origin,
    pub source_request_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSidecar {
    pub label: DatasetLabel,
    pub count: usize,
    pub items: Vec<SidecarEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub yield_stats: Option<serde_json::Value>,
}

impl DatasetSidecar {
    pub fn for_dataset(dataset: &Dataset) -> Self {
        Self {
            label: dataset.label,
            count: dataset.len(),
            items: dataset
                .items
                .iter()
                .map(|i| SidecarEntry {
                    origin: i.origin,
                    source_request_id: i.source_request_id.clone(),
                })
                .collect(),
            yield_stats: None,
        }
    }
}

/// Restores provenance from a sidecar. Fails if the counts disagree.
pub fn apply_sidecar(dataset: &mut Dataset, sidecar: &DatasetSidecar) -> Result<(), ModelError> {
    if sidecar.items.len() != dataset.items.len() {
        return Err(ModelError::Integrity(format!(
            "sidecar has {} entries, dataset has {}",
            sidecar.items.len(),
            dataset.items.len()
        )));
    }
    for (item, meta) in dataset.items.iter_mut().zip(&sidecar.items) {
        if meta.origin == Origin::Generated && meta.source_request_id.is_none() {
            return Err(ModelError::Integrity(
                "generated sidecar entry without source request id".into(),
            ));
        }
        item.origin = meta.origin;
        item.source_request_id = meta.source_request_id.clone();
    }
    dataset.label = sidecar.label;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowLevelPrinciple {
    pub text: String,
    #[serde(default)]
    pub reasoning_excerpt: String,
    pub subset_index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipleCluster {
    pub member_indices: Vec<usize>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HighLevelPrinciple {
    pub text: String,
    pub cluster_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PrinciplePool {
    pub low_level: Vec<LowLevelPrinciple>,
    pub clusters: Vec<PrincipleCluster>,
    pub high_level: Vec<HighLevelPrinciple>,
    #[serde(rename = "N")]
    pub n: usize,
}

impl PrinciplePool {
    /// A pool holding only high-level statements, e.g. hand-written principles.
    pub fn from_statements<S: AsRef<str>>(texts: &[S]) -> Result<Self, ModelError> {
        let high_level = texts
            .iter()
            .enumerate()
            .map(|(i, t)| HighLevelPrinciple {
                text: t.as_ref().trim().to_string(),
                cluster_index: i,
            })
            .collect::<Vec<_>>();
        let pool = Self {
            low_level: Vec::new(),
            clusters: Vec::new(),
            n: high_level.len(),
            high_level,
        };
        pool.check()?;
        Ok(pool)
    }

    pub fn check(&self) -> Result<(), ModelError> {
        if self.n == 0 {
            return Err(ModelError::Integrity("pool has no high-level principles".into()));
        }
        if self.n != self.high_level.len() {
            return Err(ModelError::Integrity(format!(
                "N = {} but {} high-level principles",
                self.n,
                self.high_level.len()
            )));
        }
        let manual = self.clusters.is_empty() && self.low_level.is_empty();
        if !manual && self.n != self.clusters.len() {
            return Err(ModelError::Integrity(format!(
                "N = {} but {} clusters",
                self.n,
                self.clusters.len()
            )));
        }
        if let Some(h) = self.high_level.iter().find(|h| h.text.trim().is_empty()) {
            return Err(ModelError::Integrity(format!(
                "empty high-level principle for cluster {}",
                h.cluster_index
            )));
        }
        for (ci, cluster) in self.clusters.iter().enumerate() {
            if cluster.member_indices.is_empty() {
                return Err(ModelError::Integrity(format!("cluster {ci} has no members")));
            }
            if let Some(&bad) = cluster
                .member_indices
                .iter()
                .find(|&&m| m >= self.low_level.len())
            {
                return Err(ModelError::Integrity(format!(
                    "cluster {ci} references missing low-level principle {bad}"
                )));
            }
        }
        if !self.clusters.is_empty() {
            let mut covered = vec![false; self.low_level.len()];
            for m in self.clusters.iter().flat_map(|c| &c.member_indices) {
                covered[*m] = true;
            }
            if let Some(missing) = covered.iter().position(|c| !c) {
                return Err(ModelError::Integrity(format!(
                    "low-level principle {missing} belongs to no cluster"
                )));
            }
        }
        Ok(())
    }

    pub fn statements(&self) -> impl Iterator<Item = &str> {
        self.high_level.iter().map(|h| h.text.as_str())
    }

    /// Copy of the pool with high-level principle `index` (and its cluster) removed.
    pub fn without_principle(&self, index: usize) -> Result<Self, ModelError> {
        if index >= self.n {
            return Err(ModelError::Integrity(format!(
                "principle index {index} out of range for N = {}",
                self.n
            )));
        }
        if self.n == 1 {
            return Err(ModelError::Integrity(
                "cannot remove the only principle of a pool".into(),
            ));
        }
        let mut high_level = self.high_level.clone();
        high_level.remove(index);
        for (i, h) in high_level.iter_mut().enumerate() {
            h.cluster_index = i;
        }
        let (low_level, clusters) = if self.clusters.is_empty() {
            (self.low_level.clone(), Vec::new())
        } else {
            let mut clusters = self.clusters.clone();
            clusters.remove(index);
            // Keep only low-level principles still covered, re-packing indices.
            let mut keep = vec![false; self.low_level.len()];
            for m in clusters.iter().flat_map(|c| &c.member_indices) {
                keep[*m] = true;
            }
            let mut remap = vec![usize::MAX; self.low_level.len()];
            let mut low_level = Vec::new();
            for (i, p) in self.low_level.iter().enumerate() {
                if keep[i] {
                    remap[i] = low_level.len();
                    low_level.push(p.clone());
                }
            }
            for c in &mut clusters {
                for m in &mut c.member_indices {
                    *m = remap[*m];
                }
            }
            (low_level, clusters)
        };
        let pool = Self {
            low_level,
            clusters,
            n: high_level.len(),
            high_level,
        };
        pool.check()?;
        Ok(pool)
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum HighLevelEntry {
    Text(String),
    Full(HighLevelPrinciple),
}

#[derive(Deserialize)]
struct PoolFile {
    #[serde(default)]
    low_level: Vec<LowLevelPrinciple>,
    #[serde(default)]
    clusters: Vec<PrincipleCluster>,
    high_level: Vec<HighLevelEntry>,
    #[serde(rename = "N")]
    n: Option<usize>,
}

pub fn save_pool(pool: &PrinciplePool) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(pool).expect("pool serializes");
    bytes.push(b'\n');
    bytes
}

pub fn load_pool(bytes: &[u8]) -> Result<PrinciplePool, ModelError> {
    let file: PoolFile = serde_json::from_slice(bytes).map_err(|e| ModelError::Parse {
        line: e.line(),
        message: e.to_string(),
    })?;
    let high_level: Vec<HighLevelPrinciple> = file
        .high_level
        .into_iter()
        .enumerate()
        .map(|(i, e)| match e {
            HighLevelEntry::Text(text) => HighLevelPrinciple {
                text,
                cluster_index: i,
            },
            HighLevelEntry::Full(h) => h,
        })
        .collect();
    let pool = PrinciplePool {
        n: file.n.unwrap_or(high_level.len()),
        low_level: file.low_level,
        clusters: file.clusters,
        high_level,
    };
    pool.check()?;
    Ok(pool)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeSnippet {
    pub id: String,
    pub body: String,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl KnowledgeSnippet {
    pub fn new(id: impl Into<String>, body: impl Into<String>) -> Result<Self, ModelError> {
        let body = body.into();
        if body.trim().is_empty() {
            return Err(ModelError::InvalidInstance("knowledge snippet body is empty".into()));
        }
        Ok(Self {
            id: id.into(),
            body,
            tags: Vec::new(),
        })
    }
}

/// Token counts per role, as reported by the endpoints.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleUsage {
    pub requests: u64,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

impl RoleUsage {
    pub fn total_tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

/// Reproducibility record of a run. Stored as `manifest.json` in the run directory.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub rng_seed: u64,
    pub config_hash: String,
    /// Stage name -> SHA-256 of the stage's output file.
    #[serde(default)]
    pub stage_outputs: BTreeMap<String, String>,
    /// Role name (`reflector`, `generator`, `embedder`) -> usage.
    #[serde(default)]
    pub usage_by_role: BTreeMap<String, RoleUsage>,
    /// Stage name -> completion time in unix seconds.
    #[serde(default)]
    pub timestamps: BTreeMap<String, u64>,
    /// Stage name -> wall-clock seconds spent in the stage.
    #[serde(default)]
    pub stage_seconds: BTreeMap<String, f64>,
    #[serde(default)]
    pub notes: BTreeMap<String, serde_json::Value>,
}

impl RunManifest {
    pub fn new(rng_seed: u64, config_hash: impl Into<String>) -> Self {
        Self {
            rng_seed,
            config_hash: config_hash.into(),
            ..Self::default()
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("manifest serializes");
        bytes.push(b'\n');
        bytes
    }

    /// Digest of the reproducible part: wall-clock timestamps and durations are left out.
    pub fn content_digest(&self) -> String {
        let mut m = self.clone();
        m.timestamps.clear();
        m.stage_seconds.clear();
        digest_json(&m)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        serde_json::from_slice(bytes).map_err(|e| ModelError::Parse {
            line: e.line(),
            message: e.to_string(),
        })
    }
}

/// Hex SHA-256 of raw bytes.
pub fn digest_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 over canonical JSON (object keys sorted, no whitespace).
pub fn digest_json<T: Serialize>(value: &T) -> String {
    // serde_json::Value uses a BTreeMap, so re-encoding through it sorts keys.
    let canonical = serde_json::to_value(value).expect("value serializes");
    digest_bytes(canonical.to_string().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noinput_sentinel_normalizes_to_empty() {
        let line = br#"{"instruction":"Name the highest peak.","input":"<noinput>","output":"Mount Everest."}"#;
        let ds = parse_instances_file(line, DatasetLabel::Seed).unwrap();
        assert_eq!(ds.items[0].input, "");
        assert_eq!(ds.items[0].output, "Mount Everest.");
    }

    #[test]
    fn missing_input_is_empty() {
        let line = br#"{"instruction":"Say hi.","output":"Hi."}"#;
        let ds = parse_instances_file(line, DatasetLabel::Seed).unwrap();
        assert_eq!(ds.items[0].input, "");
    }

    #[test]
    fn empty_array_is_empty_dataset_error() {
        assert!(matches!(
            parse_instances_file(b"[]", DatasetLabel::Seed),
            Err(ModelError::EmptyDataset)
        ));
        assert!(matches!(
            parse_instances_file(b"\n\n", DatasetLabel::Seed),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn jsonl_preserves_order() {
        let text = concat!(
            r#"{"instruction":"a","input":"","output":"1"}"#,
            "\n",
            r#"{"instruction":"b","input":"x","output":"2"}"#,
            "\n",
            r#"{"instruction":"c","input":"","output":"3"}"#,
            "\n"
        );
        let ds = parse_instances_file(text.as_bytes(), DatasetLabel::Seed).unwrap();
        let names: Vec<_> = ds.items.iter().map(|i| i.instruction.as_str()).collect();
        assert_eq!(names, ["a", "b", "c"]);
    }

    #[test]
    fn malformed_json_reports_line() {
        let text = "{\"instruction\":\"a\",\"output\":\"1\"}\n{broken\n";
        match parse_instances_file(text.as_bytes(), DatasetLabel::Seed) {
            Err(ModelError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_instruction_is_schema_error() {
        let text = r#"{"input":"","output":"1"}"#;
        assert!(matches!(
            parse_instances_file(text.as_bytes(), DatasetLabel::Seed),
            Err(ModelError::Schema { line: 1, .. })
        ));
    }

    #[test]
    fn blank_instruction_is_rejected() {
        let text = r#"{"instruction":"   ","input":"","output":"1"}"#;
        assert!(parse_instances_file(text.as_bytes(), DatasetLabel::Seed).is_err());
    }

    #[test]
    fn serialize_writes_empty_input_not_sentinel() {
        let ds = Dataset::new(
            DatasetLabel::Seed,
            vec![
                TaskInstance::seed("Add 2+2.", "<noinput>", "4").unwrap(),
                TaskInstance::seed("Echo.", "hello", "hello").unwrap(),
            ],
        )
        .unwrap();
        let bytes = serialize_dataset(&ds);
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.contains(r#""input":"""#));
        assert!(!text.contains(NO_INPUT_SENTINEL));
        assert!(text.starts_with(r#"{"instruction":"Add 2+2.","input":"","output":"4"}"#));
    }

    #[test]
    fn generated_requires_source() {
        assert!(TaskInstance::new("x", "", "y", Origin::Generated, None).is_err());
        assert!(TaskInstance::new("x", "", "y", Origin::Generated, Some("gen-1".into())).is_ok());
    }

    #[test]
    fn seed_dataset_rejects_other_origins() {
        let item = TaskInstance::new("x", "", "y", Origin::InitialExpansion, None).unwrap();
        assert!(Dataset::new(DatasetLabel::Seed, vec![item]).is_err());
    }

    #[test]
    fn pool_n_mismatch_is_integrity_error() {
        let text = r#"{"high_level":["a","b"],"N":3}"#;
        assert!(matches!(load_pool(text.as_bytes()), Err(ModelError::Integrity(_))));
    }

    #[test]
    fn manual_pool_loads_with_empty_clusters() {
        let text = r#"{"high_level":["Be concise.","Be accurate.","Cite sources."]}"#;
        let pool = load_pool(text.as_bytes()).unwrap();
        assert_eq!(pool.n, 3);
        assert!(pool.low_level.is_empty());
        assert!(pool.clusters.is_empty());
        assert_eq!(pool.high_level[2].cluster_index, 2);
    }

    #[test]
    fn pool_with_uncovered_principle_fails() {
        let pool = PrinciplePool {
            low_level: vec![
                LowLevelPrinciple {
                    text: "a".into(),
                    reasoning_excerpt: String::new(),
                    subset_index: 0,
                    embedding: None,
                },
                LowLevelPrinciple {
                    text: "b".into(),
                    reasoning_excerpt: String::new(),
                    subset_index: 0,
                    embedding: None,
                },
            ],
            clusters: vec![PrincipleCluster {
                member_indices: vec![0],
                centroid: vec![0.0],
            }],
            high_level: vec![HighLevelPrinciple {
                text: "A".into(),
                cluster_index: 0,
            }],
            n: 1,
        };
        assert!(pool.check().is_err());
    }

    #[test]
    fn without_principle_repacks() {
        let pool = PrinciplePool::from_statements(&["a", "b", "c"]).unwrap();
        let smaller = pool.without_principle(1).unwrap();
        assert_eq!(smaller.n, 2);
        let texts: Vec<_> = smaller.statements().collect();
        assert_eq!(texts, ["a", "c"]);
        assert!(pool.without_principle(3).is_err());
        let single = PrinciplePool::from_statements(&["only"]).unwrap();
        assert!(single.without_principle(0).is_err());
    }

    #[test]
    fn digest_json_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"b":1,"a":2}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"a":2,"b":1}"#).unwrap();
        assert_eq!(digest_json(&a), digest_json(&b));
        assert_eq!(digest_bytes(b"").len(), 64);
    }
}
