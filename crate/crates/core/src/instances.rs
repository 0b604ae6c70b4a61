//! Principle-guided instance generation: prompt rendering, response parsing,
//! validation, near-duplicate filtering and dataset assembly.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::info;

use crate::gateway::{ChatRequest, ChatRole, FinishReason, Gateway, GatewayError};
use crate::model::{Dataset, DatasetLabel, KnowledgeSnippet, ModelError, Origin, TaskInstance};
use crate::prompts::{format_task_block, numbered_list, Placeholder, PromptTemplate, TemplateError};
use crate::rouge::DedupIndex;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("no parseable tasks in response ({} bytes)", raw.len())]
    Parse { raw: String, skips: Vec<BlockSkip> },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("yield shortfall: {achieved} of {target} instances after {requests} requests")]
    Shortfall {
        achieved: usize,
        target: usize,
        requests: usize,
        partial: Box<Collected>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Inputs for one generation prompt.
#[derive(Debug, Clone, Default)]
pub struct GenerationBatchSpec<'a> {
    /// High-level principle texts; `None` renders a template without a principles slot.
    pub principles: Option<&'a [String]>,
    pub knowledge: &'a [KnowledgeSnippet],
    pub tasks_per_request: usize,
    pub in_context_examples: &'a [TaskInstance],
}

/// Renders the generation (or expansion) prompt. Pure: equal inputs give equal bytes.
///
/// Knowledge is appended under `Reference material:` unless the template places
/// it with `{KNOWLEDGE}`; in-context examples follow as completed task blocks.
pub fn render_generation_prompt(
    template: &PromptTemplate,
    spec: &GenerationBatchSpec<'_>,
) -> Result<String, InstanceError> {
    if spec.tasks_per_request == 0 {
        return Err(InstanceError::Precondition("tasks_per_request must be ≥ 1".into()));
    }
    let slots = template.placeholders();
    let principles = match spec.principles {
        Some([]) => {
            return Err(InstanceError::Precondition("principle pool is empty".into()))
        }
        Some(p) => numbered_list(p),
        None => String::new(),
    };
    let knowledge_text = spec
        .knowledge
        .iter()
        .map(|k| format!("- {}", k.body.trim()))
        .collect::<Vec<_>>()
        .join("\n");
    let n_tasks = spec.tasks_per_request.to_string();
    let mut bindings: Vec<(Placeholder, &str)> = vec![(Placeholder::NTasks, n_tasks.as_str())];
    if spec.principles.is_some() {
        bindings.push((Placeholder::Principles, principles.as_str()));
    }
    bindings.push((Placeholder::Knowledge, knowledge_text.as_str()));
    let mut out = template.render(&bindings)?;
    if !spec.knowledge.is_empty() && !slots.contains(&Placeholder::Knowledge) {
        if !out.ends_with('\n') {
            out.push('\n');
        }
        out.push_str("\nReference material:\n");
        out.push_str(&knowledge_text);
        out.push('\n');
    }
    if !spec.in_context_examples.is_empty() {
        if !out.ends_with('\n') {
            out.push('\n');
        }
        let blocks: Vec<String> = spec
            .in_context_examples
            .iter()
            .enumerate()
            .map(|(i, t)| format_task_block(i + 1, t))
            .collect();
        out.push('\n');
        out.push_str(&blocks.join("\n\n"));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedTask {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSkip {
    pub block_index: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedTasks {
    pub tasks: Vec<ParsedTask>,
    /// Block index of each task in `tasks`.
    pub block_indices: Vec<usize>,
    pub skips: Vec<BlockSkip>,
}

impl ParsedTasks {
    pub fn into_instances(
        self,
        origin: Origin,
        request_id: &str,
    ) -> Result<Vec<TaskInstance>, ModelError> {
        self.tasks
            .into_iter()
            .map(|t| {
                TaskInstance::new(
                    &t.instruction,
                    &t.input,
                    &t.output,
                    origin,
                    Some(request_id.to_string()),
                )
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Instruction,
    Input,
    Output,
}

#[derive(Default)]
struct Block {
    instruction: Option<String>,
    input: Option<String>,
    output: Option<String>,
}

impl Block {
    fn slot(&mut self, f: Field) -> &mut Option<String> {
        match f {
            Field::Instruction => &mut self.instruction,
            Field::Input => &mut self.input,
            Field::Output => &mut self.output,
        }
    }
}

/// Strips list numbering, heading marks and emphasis from the front of a line.
fn strip_line_prefix(line: &str) -> &str {
    let mut s = line.trim_start();
    loop {
        let before = s;
        s = s.trim_start_matches(['#', '*', '_', '>', '-', ' ', '\t']);
        let digits = s.bytes().take_while(u8::is_ascii_digit).count();
        if digits > 0 {
            let rest = &s[digits..];
            if let Some(r) = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')')) {
                s = r;
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Recognizes `Instruction:`, `**Input:**`, `1. Output:`, `### Instruction` and the like.
fn header(line: &str) -> Option<(Field, &str)> {
    let s = strip_line_prefix(line);
    let lower = s.to_ascii_lowercase();
    let (field, len) = [
        ("instruction", Field::Instruction),
        ("input", Field::Input),
        ("output", Field::Output),
    ]
    .into_iter()
    .find_map(|(name, f)| lower.starts_with(name).then_some((f, name.len())))?;
    let rest = s[len..].trim_start_matches(['*', '_']);
    if let Some(after) = rest.strip_prefix(':') {
        return Some((field, after.trim_start_matches(['*', '_']).trim()));
    }
    // Heading form without a colon: the whole line is just the word.
    let heading_only = rest.trim_matches(['*', '_', '#', ' ']).is_empty();
    (heading_only && line.trim_start().starts_with('#')).then_some((field, ""))
}

fn is_separator(line: &str) -> bool {
    let t = line.trim();
    if t.is_empty() {
        return false;
    }
    let stripped = t.trim_matches(['#', '*', '-', '=', '_', ' ']);
    if stripped.is_empty() {
        return true;
    }
    // "Task 3", "### Task 3:" style headings
    let lower = stripped.to_ascii_lowercase();
    lower
        .strip_prefix("task")
        .map(|r| r.trim().trim_end_matches(':').bytes().all(|b| b.is_ascii_digit()))
        .unwrap_or(false)
}

/// Extracts Instruction/Input/Output blocks. Malformed blocks are skipped with a
/// reason; zero usable tasks is an error carrying the raw text.
pub fn parse_generated_tasks(text: &str) -> Result<ParsedTasks, InstanceError> {
    let mut blocks: Vec<Block> = Vec::new();
    let mut current: Option<Field> = None;
    for line in text.lines() {
        if let Some((field, inline)) = header(line) {
            if field == Field::Instruction || blocks.is_empty() {
                blocks.push(Block::default());
            }
            let block = blocks.last_mut().expect("block exists");
            let slot = block.slot(field);
            if slot.is_some() {
                // Repeated header inside one block starts a new one.
                blocks.push(Block::default());
            }
            *blocks.last_mut().expect("block exists").slot(field) = Some(inline.to_string());
            current = Some(field);
            continue;
        }
        if is_separator(line) {
            current = None;
            continue;
        }
        if let (Some(field), Some(block)) = (current, blocks.last_mut()) {
            let slot = block.slot(field).get_or_insert_with(String::new);
            if !slot.is_empty() || !line.trim().is_empty() {
                if !slot.is_empty() {
                    slot.push('\n');
                }
                slot.push_str(line.trim_end());
            }
        }
    }
    let mut parsed = ParsedTasks::default();
    for (i, b) in blocks.into_iter().enumerate() {
        let reason = match (&b.instruction, &b.output) {
            (None, _) => Some("missing_instruction"),
            (Some(ins), _) if ins.trim().is_empty() => Some("empty_instruction"),
            (_, None) => Some("missing_output"),
            _ => None,
        };
        if let Some(reason) = reason {
            parsed.skips.push(BlockSkip {
                block_index: i,
                reason: reason.into(),
            });
            continue;
        }
        parsed.tasks.push(ParsedTask {
            instruction: b.instruction.unwrap_or_default().trim().to_string(),
            input: crate::model::normalize_input(&b.input.unwrap_or_default()),
            output: b.output.unwrap_or_default().trim().to_string(),
        });
        parsed.block_indices.push(i);
    }
    if parsed.tasks.is_empty() {
        return Err(InstanceError::Parse {
            raw: text.to_string(),
            skips: parsed.skips,
        });
    }
    Ok(parsed)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationRule {
    NonemptyInstruction,
    NonemptyOutput,
    TextOnlyCapability,
    SentenceLimit,
    OutputWordLimit,
}

impl ValidationRule {
    pub fn reason(&self) -> &'static str {
        match self {
            ValidationRule::NonemptyInstruction => "empty_instruction",
            ValidationRule::NonemptyOutput => "empty_output",
            ValidationRule::TextOnlyCapability => "non_text_capability",
            ValidationRule::SentenceLimit => "too_many_sentences",
            ValidationRule::OutputWordLimit => "output_too_long",
        }
    }
}

/// Word forms that signal a task a text-only model cannot carry out.
pub const NON_TEXT_TERMS: &[&str] = &[
    "draw", "draws", "drawing", "drawn", "image", "images", "audio", "wake", "wakes", "waking",
    "remind", "reminds", "reminder", "reminders", "reminded",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValidationRules {
    pub rules: Vec<ValidationRule>,
    pub max_output_words: usize,
    pub max_sentences: usize,
    pub denylist: Vec<String>,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            rules: vec![
                ValidationRule::NonemptyInstruction,
                ValidationRule::NonemptyOutput,
                ValidationRule::TextOnlyCapability,
                ValidationRule::SentenceLimit,
                ValidationRule::OutputWordLimit,
            ],
            max_output_words: 150,
            max_sentences: 2,
            denylist: NON_TEXT_TERMS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Accepted,
    Rejected(&'static str),
}

/// Counts sentence terminators (`.`, `!`, `?`) that end a word; runs like `?!` count once.
pub fn sentence_count(text: &str) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let mut count = 0;
    let mut i = 0;
    while i < chars.len() {
        if matches!(chars[i], '.' | '!' | '?') {
            let mut j = i;
            while j + 1 < chars.len() && matches!(chars[j + 1], '.' | '!' | '?') {
                j += 1;
            }
            let next = chars.get(j + 1);
            if next.is_none_or(|c| c.is_whitespace() || matches!(c, '"' | '\'' | ')')) {
                count += 1;
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    count
}

impl ValidationRules {
    fn holds(&self, rule: &ValidationRule, t: &TaskInstance) -> bool {
        match rule {
            ValidationRule::NonemptyInstruction => !t.instruction.trim().is_empty(),
            ValidationRule::NonemptyOutput => !t.output.trim().is_empty(),
            ValidationRule::TextOnlyCapability => !t
                .instruction
                .split(|c: char| !c.is_alphanumeric())
                .map(str::to_lowercase)
                .any(|w| self.denylist.contains(&w)),
            ValidationRule::SentenceLimit => sentence_count(&t.instruction) <= self.max_sentences,
            ValidationRule::OutputWordLimit => {
                t.output.split_whitespace().count() <= self.max_output_words
            }
        }
    }

    /// Conjunction of all rules; the first failing rule names the rejection.
    pub fn validate(&self, instance: &TaskInstance) -> Verdict {
        match self.rules.iter().find(|r| !self.holds(r, instance)) {
            Some(rule) => Verdict::Rejected(rule.reason()),
            None => Verdict::Accepted,
        }
    }
}

pub fn validate_instance(instance: &TaskInstance, rules: &ValidationRules) -> Verdict {
    rules.validate(instance)
}

/// How many tasks each stage let through for one request.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestStats {
    pub request_id: String,
    pub requested: usize,
    pub parsed: usize,
    pub validated: usize,
    pub deduped: usize,
    pub kept: usize,
    pub finish_reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rejection {
    pub request_id: String,
    pub block_index: usize,
    pub stage: String,
    pub reason: String,
    pub instruction: String,
}

/// Instances collected by a generation loop, with per-request accounting.
#[derive(Debug, Clone, PartialEq)]
pub struct Collected {
    pub items: Vec<TaskInstance>,
    pub stats: Vec<RequestStats>,
    pub rejections: Vec<Rejection>,
}

impl Collected {
    pub fn requests(&self) -> usize {
        self.stats.len()
    }

    pub fn totals(&self) -> RequestStats {
        let mut t = RequestStats {
            request_id: "total".into(),
            ..RequestStats::default()
        };
        for s in &self.stats {
            t.requested += s.requested;
            t.parsed += s.parsed;
            t.validated += s.validated;
            t.deduped += s.deduped;
            t.kept += s.kept;
        }
        t
    }

    pub fn rejections_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["request_id", "block_index", "stage", "reason", "instruction"])
            .expect("in-memory csv");
        for r in &self.rejections {
            w.write_record([
                r.request_id.as_str(),
                &r.block_index.to_string(),
                &r.stage,
                &r.reason,
                &r.instruction,
            ])
            .expect("in-memory csv");
        }
        w.into_inner().expect("in-memory csv")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub tasks_per_request: usize,
    pub temperature: f64,
    pub max_tokens: u32,
    pub dedup_threshold: f64,
    pub in_context_examples: usize,
    pub knowledge_per_request: usize,
    /// Request budget; `None` means five times the minimum number of requests.
    pub max_requests: Option<usize>,
    pub rules: ValidationRules,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            tasks_per_request: 20,
            temperature: 0.7,
            max_tokens: 2048,
            dedup_threshold: 0.7,
            in_context_examples: 3,
            knowledge_per_request: 2,
            max_requests: None,
            rules: ValidationRules::default(),
        }
    }
}

impl GenerationConfig {
    pub fn request_budget(&self, target: usize) -> usize {
        self.max_requests
            .unwrap_or_else(|| 5 * target.div_ceil(self.tasks_per_request.max(1)))
            .max(1)
    }
}

/// Everything the shared request loop needs.
pub struct CollectionPlan<'a> {
    pub template: &'a PromptTemplate,
    pub principles: Option<&'a [String]>,
    pub knowledge: &'a [KnowledgeSnippet],
    pub examples: &'a [TaskInstance],
    pub target: usize,
    pub config: &'a GenerationConfig,
    pub request_prefix: &'a str,
    pub origin: Origin,
}

fn rotate<T: Clone>(items: &[T], request: usize, per_request: usize) -> Vec<T> {
    if items.is_empty() || per_request == 0 {
        return Vec::new();
    }
    let take = per_request.min(items.len());
    (0..take)
        .map(|j| items[(request * take + j) % items.len()].clone())
        .collect()
}

/// Issues generator requests in waves until `target` instances survive
/// validation and deduplication, or the request budget runs out.
///
/// Waves are sized from the remaining need, and results are reduced in request
/// order, so output does not depend on thread scheduling.
pub fn collect_instances(
    gateway: &Gateway,
    plan: &CollectionPlan<'_>,
    dedup: &mut DedupIndex,
) -> Result<Collected, InstanceError> {
    let cfg = plan.config;
    if !(cfg.dedup_threshold > 0.0 && cfg.dedup_threshold <= 1.0) {
        return Err(InstanceError::Precondition(format!(
            "dedup threshold {} not in (0, 1]",
            cfg.dedup_threshold
        )));
    }
    let budget = cfg.request_budget(plan.target);
    let mut out = Collected {
        items: Vec::new(),
        stats: Vec::new(),
        rejections: Vec::new(),
    };
    let mut issued = 0usize;
    while out.items.len() < plan.target && issued < budget {
        let remaining = plan.target - out.items.len();
        let wave = gateway
            .parallelism()
            .min(remaining.div_ceil(cfg.tasks_per_request.max(1)))
            .min(budget - issued)
            .max(1);
        let mut requests = Vec::with_capacity(wave);
        for r in issued..issued + wave {
            let examples = rotate(plan.examples, r, cfg.in_context_examples);
            let knowledge = rotate(plan.knowledge, r, cfg.knowledge_per_request);
            let prompt = render_generation_prompt(
                plan.template,
                &GenerationBatchSpec {
                    principles: plan.principles,
                    knowledge: &knowledge,
                    tasks_per_request: cfg.tasks_per_request,
                    in_context_examples: &examples,
                },
            )?;
            requests.push(ChatRequest::user(
                ChatRole::Generator,
                format!("{}-{r:06}", plan.request_prefix),
                prompt,
                cfg.temperature,
                cfg.max_tokens,
            ));
        }
        issued += wave;
        let responses = gateway.chat_many(&requests);
        for (request, response) in requests.iter().zip(responses) {
            let response = response?;
            absorb_response(&mut out, plan, dedup, &request.request_id, &response.text, response.finish_reason);
        }
        info!(
            prefix = plan.request_prefix,
            issued,
            kept = out.items.len(),
            target = plan.target,
            "generation wave complete"
        );
    }
    if out.items.len() < plan.target {
        return Err(InstanceError::Shortfall {
            achieved: out.items.len(),
            target: plan.target,
            requests: issued,
            partial: Box::new(out),
        });
    }
    Ok(out)
}

fn absorb_response(
    out: &mut Collected,
    plan: &CollectionPlan<'_>,
    dedup: &mut DedupIndex,
    request_id: &str,
    text: &str,
    finish: FinishReason,
) {
    let cfg = plan.config;
    let mut stats = RequestStats {
        request_id: request_id.to_string(),
        requested: cfg.tasks_per_request,
        finish_reason: format!("{finish:?}").to_lowercase(),
        ..RequestStats::default()
    };
    let reject = |out: &mut Collected, block: usize, stage: &str, reason: &str, ins: &str| {
        out.rejections.push(Rejection {
            request_id: request_id.to_string(),
            block_index: block,
            stage: stage.into(),
            reason: reason.into(),
            instruction: ins.into(),
        });
    };
    let parsed = match parse_generated_tasks(text) {
        Ok(p) => p,
        Err(_) => {
            reject(out, 0, "parse", "unparseable_response", "");
            out.stats.push(stats);
            return;
        }
    };
    for s in &parsed.skips {
        reject(out, s.block_index, "parse", &s.reason, "");
    }
    let mut tasks: Vec<(usize, ParsedTask)> =
        parsed.block_indices.into_iter().zip(parsed.tasks).collect();
    if finish == FinishReason::Length {
        if let Some((block, t)) = tasks.pop() {
            reject(out, block, "parse", "truncated", &t.instruction);
        }
    }
    stats.parsed = tasks.len();
    for (block, task) in tasks {
        let instance = match TaskInstance::new(
            &task.instruction,
            &task.input,
            &task.output,
            plan.origin,
            Some(request_id.to_string()),
        ) {
            Ok(i) => i,
            Err(_) => {
                reject(out, block, "validate", "empty_instruction", &task.instruction);
                continue;
            }
        };
        if let Verdict::Rejected(reason) = cfg.rules.validate(&instance) {
            reject(out, block, "validate", reason, &instance.instruction);
            continue;
        }
        stats.validated += 1;
        if out.items.len() >= plan.target {
            reject(out, block, "overflow", "target_reached", &instance.instruction);
            continue;
        }
        if dedup.max_similarity(&instance.instruction, cfg.dedup_threshold) >= cfg.dedup_threshold {
            stats.deduped += 1;
            reject(out, block, "dedup", "near_duplicate", &instance.instruction);
            continue;
        }
        dedup.insert(&instance.instruction);
        stats.kept += 1;
        out.items.push(instance);
    }
    out.stats.push(stats);
}

/// Inputs for one dataset generation run.
pub struct GenerationInputs<'a> {
    pub template: &'a PromptTemplate,
    pub pool: &'a crate::model::PrinciplePool,
    pub knowledge: &'a [KnowledgeSnippet],
    /// In-context examples, rotated round-robin across requests.
    pub examples: &'a [TaskInstance],
    /// Instances whose instructions seed the dedup pool (typically the initial dataset).
    pub exclude: &'a [TaskInstance],
    pub target_size: usize,
    /// Request ids are `{request_prefix}-{index:06}`.
    pub request_prefix: &'a str,
}

/// Generates `target_size` principle-guided instances.
pub fn generate_dataset(
    gateway: &Gateway,
    inputs: &GenerationInputs<'_>,
    config: &GenerationConfig,
) -> Result<(Dataset, Collected), InstanceError> {
    inputs.pool.check()?;
    if inputs.target_size == 0 {
        return Err(InstanceError::Precondition("target size must be positive".into()));
    }
    let principles: Vec<String> = inputs.pool.statements().map(str::to_string).collect();
    let mut dedup = DedupIndex::new();
    for t in inputs.exclude {
        dedup.insert(&t.instruction);
    }
    let plan = CollectionPlan {
        template: inputs.template,
        principles: Some(&principles),
        knowledge: inputs.knowledge,
        examples: inputs.examples,
        target: inputs.target_size,
        config,
        request_prefix: inputs.request_prefix,
        origin: Origin::Generated,
    };
    let collected = collect_instances(gateway, &plan, &mut dedup)?;
    let dataset = Dataset::new(DatasetLabel::Final, collected.items.clone())?;
    Ok((dataset, collected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompts::TemplateKind;

    fn instance(ins: &str, out: &str) -> TaskInstance {
        TaskInstance::seed(ins, "", out).unwrap()
    }

    #[test]
    fn parses_single_block_with_sentinel() {
        let p = parse_generated_tasks("1. Instruction: Add 2+2.\nInput: <noinput>\nOutput: 4.").unwrap();
        assert_eq!(p.tasks.len(), 1);
        assert_eq!(p.tasks[0].instruction, "Add 2+2.");
        assert_eq!(p.tasks[0].input, "");
        assert_eq!(p.tasks[0].output, "4.");
    }

    #[test]
    fn block_without_output_is_skipped() {
        let text = "1. Instruction: A?\nInput: x\n\n2. Instruction: B?\nInput: y\nOutput: z";
        let p = parse_generated_tasks(text).unwrap();
        assert_eq!(p.tasks.len(), 1);
        assert_eq!(p.tasks[0].instruction, "B?");
        assert_eq!(p.skips, vec![BlockSkip { block_index: 0, reason: "missing_output".into() }]);
    }

    #[test]
    fn zero_tasks_is_error() {
        assert!(matches!(parse_generated_tasks("Sorry, I cannot."), Err(InstanceError::Parse { .. })));
        assert!(parse_generated_tasks("").is_err());
    }

    #[test]
    fn multiline_fields_and_numbered_headers() {
        let text = "###\n1. Instruction: Sort the list.\n1. Input:\n3, 1, 2\n1. Output:\n1, 2, 3\nDone.\n\n###\n2. Instruction: Say hi.\n2. Input:\n<noinput>\n2. Output:\nHi.\n";
        let p = parse_generated_tasks(text).unwrap();
        assert_eq!(p.tasks.len(), 2);
        assert_eq!(p.tasks[0].input, "3, 1, 2");
        assert_eq!(p.tasks[0].output, "1, 2, 3\nDone.");
        assert_eq!(p.tasks[1].input, "");
    }

    #[test]
    fn sentence_counting() {
        assert_eq!(sentence_count("Add 2+2."), 1);
        assert_eq!(sentence_count("What is 3.14 rounded?"), 1);
        assert_eq!(sentence_count("Read this. Then answer. Now!"), 3);
        assert_eq!(sentence_count("Really?! Yes."), 2);
        assert_eq!(sentence_count("no punctuation"), 0);
    }

    #[test]
    fn validation_rules() {
        let rules = ValidationRules::default();
        assert_eq!(rules.validate(&instance("Name a color.", "")), Verdict::Rejected("empty_output"));
        assert_eq!(
            rules.validate(&instance("Set a reminder for 5pm.", "Okay.")),
            Verdict::Rejected("non_text_capability")
        );
        assert_eq!(
            rules.validate(&instance("Draw a cat.", "ok")),
            Verdict::Rejected("non_text_capability")
        );
        assert_eq!(rules.validate(&instance("List drawbacks of coal.", "Smog.")), Verdict::Accepted);
        assert_eq!(
            rules.validate(&instance("One. Two. Three.", "x")),
            Verdict::Rejected("too_many_sentences")
        );
        let long = vec!["word"; 151].join(" ");
        assert_eq!(rules.validate(&instance("Explain.", &long)), Verdict::Rejected("output_too_long"));
        let ok = vec!["word"; 150].join(" ");
        assert_eq!(rules.validate(&instance("Explain.", &ok)), Verdict::Accepted);
        assert_eq!(
            validate_instance(&instance("What is the capital of France?", "Paris."), &rules),
            Verdict::Accepted
        );
    }

    #[test]
    fn render_without_knowledge_has_no_reference_section() {
        let t = PromptTemplate::default_for(TemplateKind::Generation);
        let principles = vec!["Be concise.".to_string(), "Be accurate.".to_string()];
        let spec = GenerationBatchSpec {
            principles: Some(&principles),
            knowledge: &[],
            tasks_per_request: 20,
            in_context_examples: &[],
        };
        let a = render_generation_prompt(&t, &spec).unwrap();
        let b = render_generation_prompt(&t, &spec).unwrap();
        assert_eq!(a, b);
        assert!(!a.contains("Reference material:"));
        assert!(a.contains("\n1. Be concise.\n2. Be accurate.\n"));
    }

    #[test]
    fn render_appends_knowledge_and_examples() {
        let t = PromptTemplate::default_for(TemplateKind::Generation);
        let principles = vec!["P".to_string()];
        let k = [KnowledgeSnippet::new("k1", "Aspirin thins blood.").unwrap()];
        let ex = [instance("Add 2+2.", "4")];
        let out = render_generation_prompt(
            &t,
            &GenerationBatchSpec {
                principles: Some(&principles),
                knowledge: &k,
                tasks_per_request: 5,
                in_context_examples: &ex,
            },
        )
        .unwrap();
        assert!(out.contains("List of 5 tasks:\n\nReference material:\n- Aspirin thins blood.\n\n1. Instruction: Add 2+2.\n1. Input:\n<noinput>\n1. Output:\n4\n"));
    }

    #[test]
    fn render_rejects_empty_pool() {
        let t = PromptTemplate::default_for(TemplateKind::Generation);
        let spec = GenerationBatchSpec {
            principles: Some(&[]),
            knowledge: &[],
            tasks_per_request: 20,
            in_context_examples: &[],
        };
        assert!(render_generation_prompt(&t, &spec).is_err());
    }

    #[test]
    fn rotation_wraps() {
        let items = [1, 2, 3, 4];
        assert_eq!(rotate(&items, 0, 3), vec![1, 2, 3]);
        assert_eq!(rotate(&items, 1, 3), vec![4, 1, 2]);
        assert_eq!(rotate(&items, 0, 9), vec![1, 2, 3, 4]);
        assert!(rotate::<i32>(&[], 3, 3).is_empty());
    }
}
