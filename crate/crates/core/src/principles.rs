//! Multi-level principle generation: seed expansion, subset sampling,
//! low-level reflection and high-level summarization.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::cluster::{cluster_principles, ClusterConfig, ClusterError};
use crate::gateway::{ChatRequest, ChatRole, Gateway, GatewayError, Speaker};
use crate::instances::{collect_instances, Collected, CollectionPlan, GenerationConfig, InstanceError};
use crate::model::{
    Dataset, DatasetLabel, HighLevelPrinciple, KnowledgeSnippet, LowLevelPrinciple, ModelError,
    Origin, PrincipleCluster, PrinciplePool, TaskInstance,
};
use crate::prompts::{format_subset, numbered_list, Placeholder, PromptTemplate, TemplateError};
use crate::rouge::DedupIndex;

#[derive(Debug, Error)]
pub enum PrincipleError {
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("{stage}: {source}")]
    Gateway {
        stage: &'static str,
        #[source]
        source: GatewayError,
    },
    #[error("reflection for subset {subset_index} could not be parsed after re-ask")]
    ReflectionParse { subset_index: usize, raw: String },
    #[error("summarization of cluster {cluster_index} returned no principle")]
    Summarization { cluster_index: usize, raw: String },
    #[error("clustering: {0}")]
    Cluster(#[from] ClusterError),
    #[error("expansion: {0}")]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn gateway_err(stage: &'static str) -> impl Fn(GatewayError) -> PrincipleError {
    move |source| PrincipleError::Gateway { stage, source }
}

/// Grows the seed to `target_size` with generator output. Seed items come
/// first; generated items are validated and deduplicated against everything
/// before them. Returns `None` stats when no request was needed.
pub fn expand_seed(
    gateway: &Gateway,
    seed: &Dataset,
    knowledge: &[KnowledgeSnippet],
    template: &PromptTemplate,
    target_size: usize,
    config: &GenerationConfig,
) -> Result<(Dataset, Option<Collected>), PrincipleError> {
    if seed.is_empty() {
        return Err(PrincipleError::Precondition("seed dataset is empty".into()));
    }
    if target_size < seed.len() {
        return Err(PrincipleError::Precondition(format!(
            "target size {target_size} is below the seed size {}",
            seed.len()
        )));
    }
    let mut items = seed.items.clone();
    if target_size == seed.len() {
        return Ok((Dataset::new(DatasetLabel::Initial, items)?, None));
    }
    let mut dedup = DedupIndex::new();
    for t in &seed.items {
        dedup.insert(&t.instruction);
    }
    let plan = CollectionPlan {
        template,
        principles: None,
        knowledge,
        examples: &seed.items,
        target: target_size - seed.len(),
        config,
        request_prefix: "expand",
        origin: Origin::InitialExpansion,
    };
    let collected = collect_instances(gateway, &plan, &mut dedup)?;
    items.extend(collected.items.iter().cloned());
    Ok((Dataset::new(DatasetLabel::Initial, items)?, Some(collected)))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubsetSample {
    pub index: usize,
    pub instance_indices: Vec<usize>,
}

/// `count` subsets of `size` distinct indices below `population`. Subsets are
/// drawn independently, so an index may recur across subsets.
pub fn sample_subsets(
    population: usize,
    count: usize,
    size: usize,
    rng_seed: u64,
) -> Result<Vec<SubsetSample>, PrincipleError> {
    if count == 0 || size == 0 {
        return Err(PrincipleError::Precondition(
            "subset count and size must be positive".into(),
        ));
    }
    if size > population {
        return Err(PrincipleError::Precondition(format!(
            "subset size {size} exceeds dataset size {population}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    Ok((0..count)
        .map(|index| SubsetSample {
            index,
            instance_indices: rand::seq::index::sample(&mut rng, population, size).into_vec(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Reflection {
    pub reasoning: String,
    pub insights: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Section {
    Reasoning,
    Insights,
}

fn section_header(line: &str) -> Option<(Section, &str)> {
    let s = line.trim_start().trim_start_matches(['#', '*', '_', ' ']);
    let lower = s.to_ascii_lowercase();
    let (section, len) = if lower.starts_with("reasoning") {
        (Section::Reasoning, "reasoning".len())
    } else if lower.starts_with("insights") {
        (Section::Insights, "insights".len())
    } else {
        return None;
    };
    let rest = s[len..].trim_start_matches(['*', '_']);
    let after = rest.strip_prefix(':')?;
    Some((section, after.trim_start_matches(['*', '_']).trim()))
}

/// Bullet (`-`, `*`, `•`, `+`) or numbered (`1.`, `1)`) item text.
fn list_item(line: &str) -> Option<&str> {
    let t = line.trim();
    for marker in ["- ", "* ", "• ", "+ "] {
        if let Some(rest) = t.strip_prefix(marker) {
            return Some(rest.trim());
        }
    }
    let digits = t.bytes().take_while(u8::is_ascii_digit).count();
    if digits > 0 {
        let rest = &t[digits..];
        if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
            if r.is_empty() || r.starts_with(char::is_whitespace) {
                return Some(r.trim());
            }
        }
    }
    None
}

/// Splits a reflector reply into its reasoning and insight list. Fails when
/// there is no Insights header or it lists nothing.
pub fn parse_reflection(text: &str) -> Option<Reflection> {
    let mut section = None;
    let mut saw_insights = false;
    let mut reasoning: Vec<String> = Vec::new();
    let mut insights: Vec<String> = Vec::new();
    let push_insight = |insights: &mut Vec<String>, line: &str, continuation: bool| {
        let line = line.trim();
        if line.is_empty() {
            return;
        }
        match list_item(line) {
            Some(item) if !item.is_empty() => insights.push(item.to_string()),
            Some(_) => {}
            None => match insights.last_mut() {
                Some(last) if continuation => {
                    last.push(' ');
                    last.push_str(line);
                }
                _ => insights.push(line.to_string()),
            },
        }
    };
    for line in text.lines() {
        if let Some((s, inline)) = section_header(line) {
            section = Some(s);
            match s {
                Section::Reasoning => {
                    if !inline.is_empty() {
                        reasoning.push(inline.to_string());
                    }
                }
                Section::Insights => {
                    saw_insights = true;
                    push_insight(&mut insights, inline, false);
                }
            }
            continue;
        }
        match section {
            Some(Section::Reasoning) => {
                if !line.trim().is_empty() {
                    reasoning.push(line.trim().to_string());
                }
            }
            Some(Section::Insights) => push_insight(&mut insights, line, true),
            None => {}
        }
    }
    if !saw_insights || insights.is_empty() {
        return None;
    }
    Some(Reflection {
        reasoning: reasoning.join("\n"),
        insights,
    })
}

pub const REASK_MESSAGE: &str = "Your reply did not follow the required format. Answer again using exactly:\n\nReasoning: <discussion>\n\nInsights:\n- <principle>\n- <principle>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrincipleConfig {
    pub subsets: usize,
    pub subset_size: usize,
    pub reflection_temperature: f64,
    pub summarization_temperature: f64,
    pub max_tokens: u32,
    pub cluster: ClusterConfig,
}

impl Default for PrincipleConfig {
    fn default() -> Self {
        Self {
            subsets: 10,
            subset_size: 10,
            reflection_temperature: 0.7,
            summarization_temperature: 0.3,
            max_tokens: 2048,
            cluster: ClusterConfig::default(),
        }
    }
}

/// How the reflection inputs are drawn and how principles are grouped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolMode {
    #[default]
    Full,
    /// One reflection over the first `budget` instances instead of T subsets.
    SingleReflection { budget: usize },
    /// Low-level principles are used verbatim as the pool.
    NoClustering,
}

pub fn render_reflection_prompt(
    template: &PromptTemplate,
    subset: &[&TaskInstance],
) -> Result<String, PrincipleError> {
    if subset.is_empty() {
        return Err(PrincipleError::Precondition("reflection subset is empty".into()));
    }
    let data = format_subset(subset);
    Ok(template.render(&[(Placeholder::Instructions, data.as_str())])?)
}

pub fn render_summarization_prompt<S: AsRef<str>>(
    template: &PromptTemplate,
    members: &[S],
) -> Result<String, PrincipleError> {
    if members.is_empty() {
        return Err(PrincipleError::Precondition("cluster has no members".into()));
    }
    let list = format!("\n{}", numbered_list(members));
    Ok(template.render(&[(Placeholder::LowLevelPrinciples, list.as_str())])?)
}

fn reflection_request(id: String, prompt: String, cfg: &PrincipleConfig) -> ChatRequest {
    ChatRequest::user(ChatRole::Reflector, id, prompt, cfg.reflection_temperature, cfg.max_tokens)
}

fn to_principles(subset_index: usize, r: Reflection) -> Vec<LowLevelPrinciple> {
    let excerpt: String = r.reasoning.chars().take(400).collect();
    r.insights
        .into_iter()
        .map(|text| LowLevelPrinciple {
            text,
            reasoning_excerpt: excerpt.clone(),
            subset_index,
            embedding: None,
        })
        .collect()
}

/// Runs one reflection per subset (concurrently), re-asking once for any reply
/// that does not parse. Results are ordered by subset index.
pub fn reflect_subsets(
    gateway: &Gateway,
    template: &PromptTemplate,
    subsets: &[Vec<&TaskInstance>],
    cfg: &PrincipleConfig,
) -> Result<(Vec<LowLevelPrinciple>, usize), PrincipleError> {
    let requests = subsets
        .iter()
        .enumerate()
        .map(|(i, s)| {
            Ok(reflection_request(format!("reflect-{i:04}"), render_reflection_prompt(template, s)?, cfg))
        })
        .collect::<Result<Vec<_>, PrincipleError>>()?;
    let mut parsed: Vec<Option<Reflection>> = Vec::with_capacity(requests.len());
    let mut raw: Vec<String> = Vec::with_capacity(requests.len());
    for r in gateway.chat_many(&requests) {
        let text = r.map_err(gateway_err("reflection"))?.text;
        parsed.push(parse_reflection(&text));
        raw.push(text);
    }
    let retry: Vec<usize> = (0..parsed.len()).filter(|&i| parsed[i].is_none()).collect();
    let reasks: Vec<ChatRequest> = retry
        .iter()
        .map(|&i| {
            let mut req = requests[i].clone();
            req.request_id = format!("{}-r1", req.request_id);
            req.messages.push((Speaker::Assistant, raw[i].clone()));
            req.messages.push((Speaker::User, REASK_MESSAGE.to_string()));
            req
        })
        .collect();
    for (&i, r) in retry.iter().zip(gateway.chat_many(&reasks)) {
        let text = r.map_err(gateway_err("reflection"))?.text;
        match parse_reflection(&text) {
            Some(p) => parsed[i] = Some(p),
            None => return Err(PrincipleError::ReflectionParse { subset_index: i, raw: text }),
        }
    }
    let principles = parsed
        .into_iter()
        .enumerate()
        .flat_map(|(i, p)| to_principles(i, p.expect("parsed or returned")))
        .collect();
    Ok((principles, retry.len()))
}

/// Single-subset form of [`reflect_subsets`].
pub fn reflect_low_level(
    gateway: &Gateway,
    template: &PromptTemplate,
    subset_index: usize,
    subset: &[&TaskInstance],
    cfg: &PrincipleConfig,
) -> Result<Vec<LowLevelPrinciple>, PrincipleError> {
    let (mut principles, _) = reflect_subsets(gateway, template, &[subset.to_vec()], cfg)?;
    for p in &mut principles {
        p.subset_index = subset_index;
    }
    Ok(principles)
}

/// Drops a leading `Principle:` label (with markdown adornment) and trims.
pub fn strip_principle_label(text: &str) -> String {
    let t = text.trim();
    let bare = t.trim_start_matches(['#', '*', '_', ' ']);
    if bare.get(..9).is_some_and(|h| h.eq_ignore_ascii_case("principle")) {
        let rest = bare[9..].trim_start_matches(['*', '_']);
        if let Some(after) = rest.strip_prefix(':') {
            return after.trim_start_matches(['*', '_']).trim().to_string();
        }
    }
    t.to_string()
}

fn summarization_request(
    template: &PromptTemplate,
    cluster_index: usize,
    members: &[&str],
    cfg: &PrincipleConfig,
) -> Result<ChatRequest, PrincipleError> {
    Ok(ChatRequest::user(
        ChatRole::Reflector,
        format!("summarize-{cluster_index:04}"),
        render_summarization_prompt(template, members)?,
        cfg.summarization_temperature,
        cfg.max_tokens,
    ))
}

pub fn summarize_cluster(
    gateway: &Gateway,
    template: &PromptTemplate,
    cluster_index: usize,
    members: &[&str],
    cfg: &PrincipleConfig,
) -> Result<HighLevelPrinciple, PrincipleError> {
    let req = summarization_request(template, cluster_index, members, cfg)?;
    let reply = gateway.chat_complete(&req).map_err(gateway_err("summarization"))?;
    finish_summary(cluster_index, reply.text)
}

fn finish_summary(cluster_index: usize, raw: String) -> Result<HighLevelPrinciple, PrincipleError> {
    let text = strip_principle_label(&raw);
    if text.is_empty() {
        return Err(PrincipleError::Summarization { cluster_index, raw });
    }
    Ok(HighLevelPrinciple { text, cluster_index })
}

/// Pool plus what it took to build it.
#[derive(Debug, Clone)]
pub struct PoolOutcome {
    pub pool: PrinciplePool,
    pub subsets: Vec<SubsetSample>,
    pub reasks: usize,
    pub k_star: usize,
}

pub struct PoolTemplates<'a> {
    pub reflection: &'a PromptTemplate,
    pub summarization: &'a PromptTemplate,
}

/// Reflection → embedding → soft clustering → summarization.
///
/// `keep` is an operator hook applied to the initial dataset before sampling,
/// for filtering or anonymizing instances; pass `|_| true` for none.
pub fn build_pool(
    gateway: &Gateway,
    initial: &Dataset,
    templates: &PoolTemplates<'_>,
    cfg: &PrincipleConfig,
    mode: PoolMode,
    rng_seed: u64,
    keep: &dyn Fn(&TaskInstance) -> bool,
) -> Result<PoolOutcome, PrincipleError> {
    let items: Vec<&TaskInstance> = initial.items.iter().filter(|t| keep(t)).collect();
    if items.is_empty() {
        return Err(PrincipleError::Precondition("no instances left for reflection".into()));
    }
    let subsets = match mode {
        PoolMode::SingleReflection { budget } => {
            if budget == 0 {
                return Err(PrincipleError::Precondition("context budget must be positive".into()));
            }
            vec![SubsetSample {
                index: 0,
                instance_indices: (0..budget.min(items.len())).collect(),
            }]
        }
        _ => sample_subsets(items.len(), cfg.subsets, cfg.subset_size, rng_seed)?,
    };
    let drawn: Vec<Vec<&TaskInstance>> = subsets
        .iter()
        .map(|s| s.instance_indices.iter().map(|&i| items[i]).collect())
        .collect();
    let (mut low_level, reasks) = reflect_subsets(gateway, templates.reflection, &drawn, cfg)?;
    info!(subsets = subsets.len(), low_level = low_level.len(), reasks, "reflection complete");

    if mode == PoolMode::NoClustering {
        let clusters = (0..low_level.len())
            .map(|i| PrincipleCluster {
                member_indices: vec![i],
                centroid: Vec::new(),
            })
            .collect();
        let high_level: Vec<HighLevelPrinciple> = low_level
            .iter()
            .enumerate()
            .map(|(i, p)| HighLevelPrinciple {
                text: p.text.clone(),
                cluster_index: i,
            })
            .collect();
        let pool = PrinciplePool {
            n: high_level.len(),
            low_level,
            clusters,
            high_level,
        };
        pool.check()?;
        let k_star = pool.n;
        return Ok(PoolOutcome { pool, subsets, reasks, k_star });
    }

    let texts: Vec<String> = low_level.iter().map(|p| p.text.clone()).collect();
    let vectors = gateway
        .embed(&texts, "embed-0000")
        .map_err(gateway_err("embedding"))?;
    let points: Vec<Vec<f64>> = vectors.into_iter().map(|v| v.values).collect();
    for (p, v) in low_level.iter_mut().zip(&points) {
        p.embedding = Some(v.clone());
    }
    let outcome = cluster_principles(&points, &cfg.cluster, rng_seed)?;
    info!(k_star = outcome.k_star, clusters = outcome.clusters.len(), "clustering complete");

    let requests = outcome
        .clusters
        .iter()
        .enumerate()
        .map(|(c, cluster)| {
            let members: Vec<&str> = cluster
                .member_indices
                .iter()
                .map(|&m| low_level[m].text.as_str())
                .collect();
            summarization_request(templates.summarization, c, &members, cfg)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let high_level = gateway
        .chat_many(&requests)
        .into_iter()
        .enumerate()
        .map(|(c, r)| finish_summary(c, r.map_err(gateway_err("summarization"))?.text))
        .collect::<Result<Vec<_>, _>>()?;
    let pool = PrinciplePool {
        n: high_level.len(),
        low_level,
        clusters: outcome.clusters,
        high_level,
    };
    pool.check()?;
    Ok(PoolOutcome {
        pool,
        subsets,
        reasks,
        k_star: outcome.k_star,
    })
}
