//! Stage commands. Each reads and writes files in a run directory, so stages
//! can be run, inspected and edited one at a time.
//!
//! Run directory layout:
//!
//! ```text
//! initial.jsonl, initial.meta.json, expand_rejections.csv
//! pool.json
//! dataset.jsonl, dataset.meta.json, rejections.csv
//! report.txt, report.json
//! manifest.json, ledger.jsonl, usage.csv, mock_transcript.jsonl
//! ablations/<mode>/...
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde_json::json;
use thiserror::Error;
use tracing::{info, warn};

use crate::accounting::{
    length_stats, psi_run_carbon, reference_estimates, render_report, CarbonEstimate, Role,
    UsageLedger,
};
use crate::config::{AblationSpec, PipelineConfig};
use crate::gateway::{Gateway, GatewayError, HttpTransport, MockScript, MockTransport, Transport};
use crate::instances::{generate_dataset, Collected, GenerationInputs, InstanceError};
use crate::model::{
    apply_sidecar, digest_bytes, load_pool, parse_instances_file, save_pool, serialize_dataset,
    Dataset, DatasetLabel, DatasetSidecar, KnowledgeSnippet, PrinciplePool, RunManifest,
    TaskInstance,
};
use crate::principles::{
    build_pool, expand_seed, PoolMode, PoolOutcome, PoolTemplates, PrincipleError,
};
use crate::prompts::{PromptTemplate, TemplateKind};

pub const INITIAL_FILE: &str = "initial.jsonl";
pub const POOL_FILE: &str = "pool.json";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEDGER_FILE: &str = "ledger.jsonl";
pub const TRANSCRIPT_FILE: &str = "mock_transcript.jsonl";

#[derive(Debug, Error)]
pub enum CmdError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("stage failed: {0}")]
    Stage(String),
    #[error("yield shortfall: {0}")]
    Shortfall(String),
}

impl CmdError {
    /// 0 success, 1 stage failure, 2 configuration or input failure, 3 shortfall.
    pub fn exit_code(&self) -> i32 {
        match self {
            CmdError::Stage(_) => 1,
            CmdError::Config(_) | CmdError::Input(_) => 2,
            CmdError::Shortfall(_) => 3,
        }
    }
}

fn from_gateway(e: GatewayError) -> CmdError {
    match e {
        GatewayError::Config { .. } => CmdError::Config(e.to_string()),
        other => CmdError::Stage(other.to_string()),
    }
}

fn from_principle(e: PrincipleError) -> CmdError {
    match e {
        PrincipleError::Precondition(m) => CmdError::Input(m),
        PrincipleError::Gateway { stage, source } => match from_gateway(source) {
            CmdError::Config(m) => CmdError::Config(format!("{stage}: {m}")),
            other => CmdError::Stage(format!("{stage}: {other}")),
        },
        PrincipleError::Instance(e) => from_instance(e),
        other => CmdError::Stage(other.to_string()),
    }
}

fn from_instance(e: InstanceError) -> CmdError {
    match e {
        InstanceError::Gateway(g) => from_gateway(g),
        InstanceError::Precondition(m) => CmdError::Input(m),
        InstanceError::Shortfall { .. } => CmdError::Shortfall(e.to_string()),
        other => CmdError::Stage(other.to_string()),
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CmdError {
    CmdError::Stage(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CmdError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| io_err(path, e))
}

fn read_input(path: &Path, what: &str) -> Result<Vec<u8>, CmdError> {
    fs::read(path).map_err(|e| CmdError::Input(format!("cannot read {what} {}: {e}", path.display())))
}

/// Reads knowledge snippets from a directory: `.json` files hold one snippet
/// object or an array of them, `.jsonl` files one object per line, and any
/// other file is a single snippet whose id is the file stem.
pub fn load_knowledge_dir(dir: &Path) -> Result<Vec<KnowledgeSnippet>, CmdError> {
    let entries = fs::read_dir(dir)
        .map_err(|e| CmdError::Input(format!("cannot read knowledge dir {}: {e}", dir.display())))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    paths.sort();
    let bad = |p: &Path, m: String| CmdError::Input(format!("{}: {m}", p.display()));
    let mut out = Vec::new();
    for path in paths {
        let bytes = read_input(&path, "knowledge file")?;
        let text = String::from_utf8(bytes).map_err(|e| bad(&path, e.to_string()))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("json") => {
                let value: serde_json::Value =
                    serde_json::from_str(&text).map_err(|e| bad(&path, e.to_string()))?;
                let list = if value.is_array() { value } else { json!([value]) };
                let snippets: Vec<KnowledgeSnippet> =
                    serde_json::from_value(list).map_err(|e| bad(&path, e.to_string()))?;
                out.extend(snippets);
            }
            Some("jsonl") => {
                for line in text.lines().filter(|l| !l.trim().is_empty()) {
                    out.push(serde_json::from_str(line).map_err(|e| bad(&path, e.to_string()))?);
                }
            }
            _ => {
                let id = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                out.push(KnowledgeSnippet::new(id, text.trim()).map_err(|e| bad(&path, e.to_string()))?);
            }
        }
    }
    if let Some(s) = out.iter().find(|s| s.body.trim().is_empty()) {
        return Err(CmdError::Input(format!("knowledge snippet {} is empty", s.id)));
    }
    Ok(out)
}

pub struct Templates {
    pub expansion: PromptTemplate,
    pub reflection: PromptTemplate,
    pub summarization: PromptTemplate,
    pub generation: PromptTemplate,
}

impl Templates {
    fn load(config: &PipelineConfig) -> Result<Self, CmdError> {
        let one = |kind: TemplateKind, path: &Option<PathBuf>| match path {
            None => Ok(PromptTemplate::default_for(kind)),
            Some(p) => {
                let body = fs::read_to_string(p).map_err(|e| {
                    CmdError::Config(format!("cannot read template {}: {e}", p.display()))
                })?;
                PromptTemplate::parse(kind, &body)
                    .map_err(|e| CmdError::Config(format!("{}: {e}", p.display())))
            }
        };
        let t = &config.paths.templates;
        Ok(Self {
            expansion: one(TemplateKind::Expansion, &t.expansion)?,
            reflection: one(TemplateKind::Reflection, &t.reflection)?,
            summarization: one(TemplateKind::Summarization, &t.summarization)?,
            generation: one(TemplateKind::Generation, &t.generation)?,
        })
    }
}

/// Which transport the gateway talks through.
pub enum Backend {
    Http,
    Mock(MockScript),
}

/// One command invocation against a run directory.
pub struct Runner {
    pub config: PipelineConfig,
    pub run_dir: PathBuf,
    pub force: bool,
    gateway: Gateway,
    mock: Option<Arc<MockTransport>>,
    transcript_flushed: usize,
    knowledge: Vec<KnowledgeSnippet>,
    templates: Templates,
    manifest: RunManifest,
    config_hash: String,
}

impl Runner {
    pub fn new(config: PipelineConfig, backend: Backend, force: bool) -> Result<Self, CmdError> {
        config.validate().map_err(CmdError::Config)?;
        let run_dir = config
            .paths
            .output_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("psi_run"));
        fs::create_dir_all(&run_dir).map_err(|e| io_err(&run_dir, e))?;
        let mut endpoints = config.endpoints.clone();
        let (transport, mock): (Arc<dyn Transport>, _) = match backend {
            Backend::Http => (Arc::new(HttpTransport::new()), None),
            Backend::Mock(script) => {
                // Offline runs need no credentials, and the script fixes the vector size.
                for e in [&mut endpoints.reflector, &mut endpoints.generator, &mut endpoints.embedder] {
                    e.require_api_key = false;
                }
                endpoints.embedder.dimension = None;
                let m = Arc::new(MockTransport::new(script));
                (m.clone(), Some(m))
            }
        };
        let ledger_path = run_dir.join(LEDGER_FILE);
        let ledger = if ledger_path.exists() {
            let bytes = read_input(&ledger_path, "ledger")?;
            UsageLedger::from_jsonl(&bytes)
                .map_err(|e| CmdError::Input(format!("{}: {e}", ledger_path.display())))?
        } else {
            UsageLedger::new()
        };
        let gateway = Gateway::new(
            transport,
            endpoints,
            config.retry,
            config.parallelism,
        )
        .with_ledger(Arc::new(ledger));
        let knowledge = match &config.paths.knowledge_dir {
            Some(dir) => load_knowledge_dir(dir)?,
            None => Vec::new(),
        };
        gateway.register_private(&knowledge);
        let config_hash = config.content_hash();
        let manifest_path = run_dir.join(MANIFEST_FILE);
        let mut manifest = if manifest_path.exists() {
            RunManifest::from_bytes(&read_input(&manifest_path, "manifest")?)
                .map_err(|e| CmdError::Input(format!("{}: {e}", manifest_path.display())))?
        } else {
            RunManifest::new(config.rng_seed, config_hash.clone())
        };
        manifest.rng_seed = config.rng_seed;
        manifest.config_hash = config_hash.clone();
        let templates = Templates::load(&config)?;
        Ok(Self {
            config,
            run_dir,
            force,
            gateway,
            mock,
            transcript_flushed: 0,
            knowledge,
            templates,
            manifest,
            config_hash,
        })
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    pub fn knowledge(&self) -> &[KnowledgeSnippet] {
        &self.knowledge
    }

    pub fn mock(&self) -> Option<&Arc<MockTransport>> {
        self.mock.as_ref()
    }

    fn path(&self, name: &str) -> PathBuf {
        self.run_dir.join(name)
    }

    /// True when `file` is this stage's recorded output for the same
    /// configuration, so the stage can be skipped.
    fn stage_done(&self, stage: &str, file: &Path, variant: &str) -> Result<bool, CmdError> {
        if self.force || !file.exists() {
            return Ok(false);
        }
        let bytes = fs::read(file).map_err(|e| io_err(file, e))?;
        let same_bytes = self.manifest.stage_outputs.get(stage) == Some(&digest_bytes(&bytes));
        let same_config = self
            .manifest
            .notes
            .get(&format!("config.{stage}"))
            .and_then(|v| v.as_str())
            == Some(self.stage_hash(variant).as_str());
        if same_bytes && same_config {
            info!(stage, file = %file.display(), "stage output up to date, skipping");
            return Ok(true);
        }
        Err(CmdError::Config(format!(
            "{} exists but was not produced by this configuration; pass --force to overwrite",
            file.display()
        )))
    }

    fn stage_hash(&self, variant: &str) -> String {
        if variant.is_empty() {
            self.config_hash.clone()
        } else {
            digest_bytes(format!("{}:{variant}", self.config_hash).as_bytes())
        }
    }

    fn record_stage(&mut self, stage: &str, file: &Path, variant: &str, started: Instant) -> Result<(), CmdError> {
        let bytes = fs::read(file).map_err(|e| io_err(file, e))?;
        self.manifest
            .stage_outputs
            .insert(stage.to_string(), digest_bytes(&bytes));
        self.manifest
            .timestamps
            .insert(stage.to_string(), crate::accounting::unix_now());
        self.manifest
            .stage_seconds
            .insert(stage.to_string(), started.elapsed().as_secs_f64());
        self.manifest
            .notes
            .insert(format!("config.{stage}"), json!(self.stage_hash(variant)));
        Ok(())
    }

    /// Writes the manifest, ledger, usage CSV and any new mock transcript lines.
    pub fn persist(&mut self) -> Result<(), CmdError> {
        let ledger = self.gateway.ledger();
        self.manifest.usage_by_role = ledger
            .totals()
            .into_iter()
            .map(|(role, usage)| (role.as_str().to_string(), usage))
            .collect();
        write_file(&self.path(LEDGER_FILE), &ledger.to_jsonl())?;
        write_file(&self.path("usage.csv"), &ledger.to_csv())?;
        write_file(&self.path(MANIFEST_FILE), &self.manifest.to_bytes())?;
        if let Some(mock) = &self.mock {
            let transcript = mock.sorted_transcript();
            let path = self.path(TRANSCRIPT_FILE);
            let mut f = fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&path)
                .map_err(|e| io_err(&path, e))?;
            for r in transcript.iter().skip(self.transcript_flushed) {
                let line = serde_json::to_string(r).expect("transcript serializes");
                writeln!(f, "{line}").map_err(|e| io_err(&path, e))?;
            }
            self.transcript_flushed = transcript.len();
        }
        Ok(())
    }

    fn load_seed(&self) -> Result<Dataset, CmdError> {
        let path = self
            .config
            .paths
            .seed_file
            .clone()
            .ok_or_else(|| CmdError::Config("no seed file configured (--seed)".into()))?;
        let bytes = read_input(&path, "seed file")?;
        parse_instances_file(&bytes, DatasetLabel::Seed)
            .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))
    }

    fn load_dataset(&self, path: &Path, label: DatasetLabel) -> Result<Dataset, CmdError> {
        let bytes = read_input(path, "dataset")?;
        let mut ds = parse_instances_file(&bytes, label)
            .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))?;
        let meta = sidecar_path(path);
        if meta.exists() {
            let sidecar: DatasetSidecar = serde_json::from_slice(&read_input(&meta, "sidecar")?)
                .map_err(|e| CmdError::Input(format!("{}: {e}", meta.display())))?;
            if let Err(e) = apply_sidecar(&mut ds, &sidecar) {
                warn!(file = %meta.display(), error = %e, "sidecar ignored");
            }
        }
        Ok(ds)
    }

    fn load_initial(&self) -> Result<Dataset, CmdError> {
        let path = self.path(INITIAL_FILE);
        if !path.exists() {
            return Err(CmdError::Input(format!(
                "{} not found; run `psi expand` first or pass --wo-initial",
                path.display()
            )));
        }
        self.load_dataset(&path, DatasetLabel::Initial)
    }

    /// In-context examples and dedup exclusions: the initial dataset, else the seed.
    fn reference_instances(&self) -> Result<Vec<TaskInstance>, CmdError> {
        let initial = self.path(INITIAL_FILE);
        if initial.exists() {
            return Ok(self.load_dataset(&initial, DatasetLabel::Initial)?.items);
        }
        if self.config.paths.seed_file.is_some() {
            return Ok(self.load_seed()?.items);
        }
        Ok(Vec::new())
    }

    fn load_pool_file(&self, path: &Path) -> Result<PrinciplePool, CmdError> {
        load_pool(&read_input(path, "pool")?)
            .map_err(|e| CmdError::Input(format!("{}: {e}", path.display())))
    }

    /// Expands the seed into the initial dataset.
    pub fn expand(&mut self) -> Result<PathBuf, CmdError> {
        let out = self.path(INITIAL_FILE);
        if self.stage_done("initial", &out, "")? {
            return Ok(out);
        }
        let started = Instant::now();
        let seed = self.load_seed()?;
        let mut gen_cfg = self.config.generation.clone();
        gen_cfg.max_requests = self.config.expansion_max_requests;
        let result = expand_seed(
            &self.gateway,
            &seed,
            &self.knowledge,
            &self.templates.expansion,
            self.config.target_initial_size,
            &gen_cfg,
        );
        let (dataset, collected) = match result {
            Ok(r) => r,
            Err(PrincipleError::Instance(InstanceError::Shortfall { achieved, target, partial, .. })) => {
                let mut items = seed.items.clone();
                items.extend(partial.items.iter().cloned());
                let ds = Dataset::new(DatasetLabel::Initial, items).map_err(|e| CmdError::Stage(e.to_string()))?;
                let partial_path = self.path("initial.partial.jsonl");
                self.write_dataset(&partial_path, &ds, Some(&partial))?;
                self.persist()?;
                return Err(CmdError::Shortfall(format!(
                    "expansion kept {achieved} of {target} needed instances; partial output in {}",
                    partial_path.display()
                )));
            }
            Err(e) => {
                self.persist()?;
                return Err(from_principle(e));
            }
        };
        self.write_dataset(&out, &dataset, collected.as_ref())?;
        if let Some(c) = &collected {
            write_file(&self.path("expand_rejections.csv"), &c.rejections_csv())?;
            self.manifest
                .notes
                .insert("yield.initial".into(), json!(c.totals()));
        }
        self.record_stage("initial", &out, "", started)?;
        self.persist()?;
        info!(size = dataset.len(), file = %out.display(), "initial dataset written");
        Ok(out)
    }

    fn write_dataset(&self, path: &Path, ds: &Dataset, collected: Option<&Collected>) -> Result<(), CmdError> {
        write_file(path, &serialize_dataset(ds))?;
        let mut sidecar = DatasetSidecar::for_dataset(ds);
        if let Some(c) = collected {
            sidecar.yield_stats = Some(json!({"totals": c.totals(), "per_request": c.stats}));
        }
        let mut bytes = serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes");
        bytes.push(b'\n');
        write_file(&sidecar_path(path), &bytes)
    }

    fn build_pool_with(&self, source: &Dataset, mode: PoolMode) -> Result<PoolOutcome, CmdError> {
        let templates = PoolTemplates {
            reflection: &self.templates.reflection,
            summarization: &self.templates.summarization,
        };
        let mut cfg = self.config.principles.clone();
        cfg.max_tokens = cfg.max_tokens.min(self.config.endpoints.reflector.max_tokens);
        build_pool(&self.gateway, source, &templates, &cfg, mode, self.config.rng_seed, &|_| true)
            .map_err(from_principle)
    }

    fn pool_note(outcome: &PoolOutcome) -> serde_json::Value {
        json!({
            "subsets": outcome.subsets.len(),
            "low_level": outcome.pool.low_level.len(),
            "k_star": outcome.k_star,
            "N": outcome.pool.n,
            "reasks": outcome.reasks,
        })
    }

    /// Builds the principle pool from the initial dataset (or the seed with `wo_initial`).
    pub fn principles(&mut self, wo_initial: bool, wo_cluster: bool) -> Result<PathBuf, CmdError> {
        let out = self.path(POOL_FILE);
        let variant = format!("wo_initial={wo_initial},wo_cluster={wo_cluster}");
        if self.stage_done("pool", &out, &variant)? {
            return Ok(out);
        }
        let started = Instant::now();
        let source = if wo_initial { self.load_seed()? } else { self.load_initial()? };
        let mode = if wo_cluster { PoolMode::NoClustering } else { PoolMode::Full };
        let outcome = self.build_pool_with(&source, mode);
        let outcome = match outcome {
            Ok(o) => o,
            Err(e) => {
                self.persist()?;
                return Err(e);
            }
        };
        info!(
            subsets = outcome.subsets.len(),
            low_level = outcome.pool.low_level.len(),
            n = outcome.pool.n,
            "principle pool built"
        );
        write_file(&out, &save_pool(&outcome.pool))?;
        self.manifest.notes.insert("pool".into(), Self::pool_note(&outcome));
        self.record_stage("pool", &out, &variant, started)?;
        self.persist()?;
        Ok(out)
    }

    /// Generates one dataset into `dir`. Shortfall writes `dataset.partial.jsonl`.
    fn generate_into(
        &mut self,
        stage: &str,
        dir: &Path,
        pool: &PrinciplePool,
        examples: &[TaskInstance],
        target: usize,
        request_prefix: &str,
    ) -> Result<PathBuf, CmdError> {
        let out = dir.join(DATASET_FILE);
        let variant = format!("target={target},pool={}", digest_bytes(&save_pool(pool)));
        if self.stage_done(stage, &out, &variant)? {
            return Ok(out);
        }
        let started = Instant::now();
        let mut cfg = self.config.generation.clone();
        cfg.max_tokens = cfg.max_tokens.min(self.config.endpoints.generator.max_tokens);
        let inputs = GenerationInputs {
            template: &self.templates.generation,
            pool,
            knowledge: &self.knowledge,
            examples,
            exclude: examples,
            target_size: target,
            request_prefix,
        };
        let result = generate_dataset(&self.gateway, &inputs, &cfg);
        let (dataset, collected) = match result {
            Ok(r) => r,
            Err(InstanceError::Shortfall { achieved, target, partial, .. }) => {
                let ds = Dataset::new(DatasetLabel::Final, partial.items.clone())
                    .map_err(|e| CmdError::Stage(e.to_string()))?;
                let partial_path = dir.join("dataset.partial.jsonl");
                self.write_dataset(&partial_path, &ds, Some(&partial))?;
                write_file(&dir.join("rejections.csv"), &partial.rejections_csv())?;
                self.persist()?;
                return Err(CmdError::Shortfall(format!(
                    "kept {achieved} of {target} instances; partial output in {}",
                    partial_path.display()
                )));
            }
            Err(e) => {
                self.persist()?;
                return Err(from_instance(e));
            }
        };
        let dataset = if self.config.merge_initial {
            let mut items = examples.to_vec();
            items.extend(dataset.items);
            Dataset::new(DatasetLabel::Final, items).map_err(|e| CmdError::Stage(e.to_string()))?
        } else {
            dataset
        };
        self.write_dataset(&out, &dataset, Some(&collected))?;
        write_file(&dir.join("rejections.csv"), &collected.rejections_csv())?;
        self.manifest
            .notes
            .insert(format!("yield.{stage}"), json!(collected.totals()));
        self.record_stage(stage, &out, &variant, started)?;
        self.persist()?;
        info!(stage, size = dataset.len(), requests = collected.requests(), "dataset written");
        Ok(out)
    }

    /// Generates the final dataset from `pool_path` (default: the run's pool) and writes the report.
    pub fn generate(&mut self, pool_path: Option<&Path>) -> Result<PathBuf, CmdError> {
        let pool_path = pool_path.map(Path::to_path_buf).unwrap_or_else(|| self.path(POOL_FILE));
        if !pool_path.exists() {
            return Err(CmdError::Input(format!(
                "{} not found; run `psi principles` first",
                pool_path.display()
            )));
        }
        let pool = self.load_pool_file(&pool_path)?;
        let examples = self.reference_instances()?;
        let dir = self.run_dir.clone();
        let target = self.config.target_dataset_size;
        let out = self.generate_into("dataset", &dir, &pool, &examples, target, "gen")?;
        self.report()?;
        Ok(out)
    }

    /// Runs one ablation, writing under `ablations/<mode>/`. Returns the dataset files.
    pub fn ablate(&mut self, spec: &AblationSpec) -> Result<Vec<PathBuf>, CmdError> {
        let base = self.path("ablations").join(spec.dir_name());
        let target = self.config.target_dataset_size;
        let mut outputs = Vec::new();
        match spec {
            AblationSpec::WoInitial | AblationSpec::WoSample | AblationSpec::WoCluster => {
                let (source, mode) = match spec {
                    AblationSpec::WoInitial => (self.load_seed()?, PoolMode::Full),
                    AblationSpec::WoSample => (
                        self.load_initial()?,
                        PoolMode::SingleReflection {
                            budget: self.config.wo_sample_budget,
                        },
                    ),
                    _ => (self.load_initial()?, PoolMode::NoClustering),
                };
                let stage = format!("ablation.{}.pool", spec.dir_name());
                let pool_path = base.join(POOL_FILE);
                let pool = if self.stage_done(&stage, &pool_path, "")? {
                    self.load_pool_file(&pool_path)?
                } else {
                    let started = Instant::now();
                    let outcome = match self.build_pool_with(&source, mode) {
                        Ok(o) => o,
                        Err(e) => {
                            self.persist()?;
                            return Err(e);
                        }
                    };
                    write_file(&pool_path, &save_pool(&outcome.pool))?;
                    self.manifest.notes.insert(stage.clone(), Self::pool_note(&outcome));
                    self.record_stage(&stage, &pool_path, "", started)?;
                    self.persist()?;
                    outcome.pool
                };
                let stage = format!("ablation.{}.dataset", spec.dir_name());
                outputs.push(self.generate_into(&stage, &base, &pool, &source.items, target, "gen")?);
            }
            AblationSpec::LeaveOneOut { index } => {
                let pool = self.base_pool()?;
                let indices: Vec<usize> = match index {
                    Some(i) if *i >= pool.n => {
                        return Err(CmdError::Input(format!(
                            "principle index {i} out of range for N = {}",
                            pool.n
                        )))
                    }
                    Some(i) => vec![*i],
                    None => (0..pool.n).collect(),
                };
                let examples = self.reference_instances()?;
                for i in indices {
                    let reduced = pool
                        .without_principle(i)
                        .map_err(|e| CmdError::Input(e.to_string()))?;
                    let dir = base.join(format!("loo_{i}"));
                    write_file(&dir.join(POOL_FILE), &save_pool(&reduced))?;
                    let stage = format!("ablation.leave_one_out.{i}");
                    outputs.push(self.generate_into(&stage, &dir, &reduced, &examples, target, &format!("loo{i}-gen"))?);
                }
            }
            AblationSpec::SizeSweep { sizes } => {
                if sizes.is_empty() || sizes.contains(&0) {
                    return Err(CmdError::Config("size sweep needs positive sizes".into()));
                }
                let pool = self.base_pool()?;
                let examples = self.reference_instances()?;
                for &size in sizes {
                    let dir = base.join(format!("size_{size}"));
                    let stage = format!("ablation.size_sweep.{size}");
                    outputs.push(self.generate_into(&stage, &dir, &pool, &examples, size, &format!("size{size}-gen"))?);
                }
            }
        }
        self.persist()?;
        Ok(outputs)
    }

    fn base_pool(&self) -> Result<PrinciplePool, CmdError> {
        let path = self.path(POOL_FILE);
        if !path.exists() {
            return Err(CmdError::Input(format!(
                "{} not found; this ablation reuses the run's pool",
                path.display()
            )));
        }
        self.load_pool_file(&path)
    }

    /// Renders `report.txt` and `report.json` from the manifest and ledger.
    pub fn report(&mut self) -> Result<String, CmdError> {
        if !self.path(MANIFEST_FILE).exists() {
            self.persist()?;
        }
        report_from_dir(&self.run_dir, &self.config)
    }
}

fn sidecar_path(dataset: &Path) -> PathBuf {
    let stem = dataset
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dataset.with_file_name(format!("{stem}.meta.json"))
}

/// This run's carbon estimate: hosted reflector requests plus local generation,
/// either measured or nameplate power times hours.
pub fn run_estimate(manifest: &RunManifest, ledger: &UsageLedger, config: &PipelineConfig) -> CarbonEstimate {
    let acc = &config.accounting;
    let reflector_requests = ledger.totals()[&Role::Reflector].requests as f64;
    if let Some(kwh) = acc.measured_kwh {
        let energy = reflector_requests * acc.wh_per_request / 1000.0 + kwh;
        return CarbonEstimate::from_energy(
            energy,
            acc.carbon_intensity,
            format!("{reflector_requests} reflector requests x {} Wh + {kwh} kWh measured", acc.wh_per_request),
        );
    }
    let hours = acc.gpu_hours.unwrap_or_else(|| {
        manifest
            .stage_seconds
            .iter()
            .filter(|(stage, _)| *stage == "initial" || stage.contains("dataset") || stage.starts_with("ablation.leave") || stage.starts_with("ablation.size"))
            .map(|(_, s)| s)
            .sum::<f64>()
            / 3600.0
    });
    psi_run_carbon(reflector_requests, acc.wh_per_request, acc.gpu_watts, hours, acc.carbon_intensity)
}

/// Re-renders the report of a run directory. Idempotent.
pub fn report_from_dir(run_dir: &Path, config: &PipelineConfig) -> Result<String, CmdError> {
    let manifest_path = run_dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(CmdError::Input(format!("{} not found", manifest_path.display())));
    }
    let manifest = RunManifest::from_bytes(&read_input(&manifest_path, "manifest")?)
        .map_err(|e| CmdError::Input(format!("{}: {e}", manifest_path.display())))?;
    let ledger_path = run_dir.join(LEDGER_FILE);
    let ledger = if ledger_path.exists() {
        UsageLedger::from_jsonl(&read_input(&ledger_path, "ledger")?)
            .map_err(|e| CmdError::Input(format!("{}: {e}", ledger_path.display())))?
    } else {
        UsageLedger::new()
    };
    let dataset_path = run_dir.join(DATASET_FILE);
    let lengths = if dataset_path.exists() {
        let ds = parse_instances_file(&read_input(&dataset_path, "dataset")?, DatasetLabel::Final)
            .map_err(|e| CmdError::Input(format!("{}: {e}", dataset_path.display())))?;
        Some(
            length_stats(&ds, config.accounting.length_bin_width)
                .map_err(|e| CmdError::Stage(e.to_string()))?,
        )
    } else {
        None
    };
    let mut estimates = vec![("PSI (this run)".to_string(), run_estimate(&manifest, &ledger, config))];
    estimates.extend(
        reference_estimates()
            .into_iter()
            .map(|(label, e)| (format!("{label} (reference)"), e)),
    );
    let report = render_report(&manifest, &ledger, &estimates, lengths.as_ref());
    write_file(&run_dir.join("report.txt"), report.text.as_bytes())?;
    let mut json_bytes = serde_json::to_vec_pretty(&report.json).expect("report serializes");
    json_bytes.push(b'\n');
    write_file(&run_dir.join("report.json"), &json_bytes)?;
    Ok(report.text)
}
