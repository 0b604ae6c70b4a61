//! Pipeline configuration: a JSON file with defaults for every field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::accounting::{DEFAULT_CARBON_INTENSITY, DEFAULT_WH_PER_REQUEST};
use crate::gateway::{Endpoints, RetryPolicy};
use crate::instances::GenerationConfig;
use crate::model::digest_json;
use crate::principles::PrincipleConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AccountingConfig {
    pub wh_per_request: f64,
    pub carbon_intensity: f64,
    pub gpu_watts: f64,
    /// Generator GPU hours; when unset, generation wall-clock time is used.
    pub gpu_hours: Option<f64>,
    /// Measured generator energy, preferred over the nameplate estimate.
    pub measured_kwh: Option<f64>,
    pub length_bin_width: usize,
}

impl Default for AccountingConfig {
    fn default() -> Self {
        Self {
            wh_per_request: DEFAULT_WH_PER_REQUEST,
            carbon_intensity: DEFAULT_CARBON_INTENSITY,
            gpu_watts: 250.0,
            gpu_hours: None,
            measured_kwh: None,
            length_bin_width: 25,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub seed_file: Option<PathBuf>,
    pub knowledge_dir: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    /// Replacement prompt templates; the built-in ones are used when unset.
    pub templates: TemplatePaths,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePaths {
    pub expansion: Option<PathBuf>,
    pub reflection: Option<PathBuf>,
    pub summarization: Option<PathBuf>,
    pub generation: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub endpoints: Endpoints,
    pub target_initial_size: usize,
    pub target_dataset_size: usize,
    pub principles: PrincipleConfig,
    pub generation: GenerationConfig,
    /// Expansion shares the generation settings except for this request budget.
    pub expansion_max_requests: Option<usize>,
    pub rng_seed: u64,
    pub parallelism: usize,
    pub retry: RetryPolicy,
    pub accounting: AccountingConfig,
    pub paths: Paths,
    /// Instances given to the single reflection of the no-sampling ablation.
    pub wo_sample_budget: usize,
    /// Prepend the initial dataset to the generated one when writing it out.
    pub merge_initial: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            endpoints: Endpoints::default(),
            target_initial_size: 100,
            target_dataset_size: 20_000,
            principles: PrincipleConfig::default(),
            generation: GenerationConfig::default(),
            expansion_max_requests: None,
            rng_seed: 0,
            parallelism: 8,
            retry: RetryPolicy::default(),
            accounting: AccountingConfig::default(),
            paths: Paths::default(),
            wo_sample_budget: 16,
            merge_initial: false,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self, String> {
        let cfg: Self = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let bytes =
            std::fs::read(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Self::from_json(&bytes).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn to_json(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec_pretty(self).expect("config serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("target_initial_size", self.target_initial_size),
            ("target_dataset_size", self.target_dataset_size),
            ("principles.subsets", self.principles.subsets),
            ("principles.subset_size", self.principles.subset_size),
            ("generation.tasks_per_request", self.generation.tasks_per_request),
            ("parallelism", self.parallelism),
            ("wo_sample_budget", self.wo_sample_budget),
            ("principles.cluster.k_max", self.principles.cluster.k_max),
            ("principles.cluster.target_dim", self.principles.cluster.target_dim),
            ("principles.cluster.n_init", self.principles.cluster.n_init),
            ("accounting.length_bin_width", self.accounting.length_bin_width),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("{name} must be positive"));
        }
        let t = self.generation.dedup_threshold;
        if !(t > 0.0 && t <= 1.0) {
            return Err(format!("generation.dedup_threshold {t} not in (0, 1]"));
        }
        let cluster = &self.principles.cluster;
        for (name, v) in [
            ("principles.cluster.tau", cluster.tau),
            ("principles.cluster.variance_kept", cluster.variance_kept),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} {v} not in (0, 1]"));
            }
        }
        if !(cluster.min_support >= 0.0 && cluster.min_support.is_finite()) {
            return Err("principles.cluster.min_support must be a nonnegative number".into());
        }
        for (name, v) in [
            ("accounting.wh_per_request", self.accounting.wh_per_request),
            ("accounting.carbon_intensity", self.accounting.carbon_intensity),
            ("accounting.gpu_watts", self.accounting.gpu_watts),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("{name} must be a nonnegative number"));
            }
        }
        Ok(())
    }

    /// Digest of everything that affects stage outputs. File locations are
    /// left out so identical runs in different directories hash alike.
    pub fn content_hash(&self) -> String {
        let mut c = self.clone();
        c.paths.seed_file = None;
        c.paths.knowledge_dir = None;
        c.paths.output_dir = None;
        digest_json(&c)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum AblationSpec {
    /// Principles from the seed alone, without initial expansion.
    WoInitial,
    /// One reflection over a context-sized slice instead of sampled subsets.
    WoSample,
    /// Low-level principles used directly, without clustering and summarization.
    WoCluster,
    /// One dataset per removed principle; `index` restricts to a single one.
    LeaveOneOut { index: Option<usize> },
    SizeSweep { sizes: Vec<usize> },
}

impl AblationSpec {
    pub fn dir_name(&self) -> &'static str {
        match self {
            AblationSpec::WoInitial => "wo_initial",
            AblationSpec::WoSample => "wo_sample",
            AblationSpec::WoCluster => "wo_cluster",
            AblationSpec::LeaveOneOut { .. } => "leave_one_out",
            AblationSpec::SizeSweep { .. } => "size_sweep",
        }
    }
}
