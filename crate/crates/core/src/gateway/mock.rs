//! Scripted transport for offline runs and tests.
//!
//! Replies are a pure function of the request (role, prompt text, request id and
//! attempt number), so concurrent runs stay bit-deterministic. A script is a
//! JSON document:
//!
//! ```json
//! {
//!   "chat": [
//!     {"role": "reflector", "contains": "Low-level principles:", "reply": {"kind": "first_item"}},
//!     {"role": "reflector", "reply": {"kind": "text", "texts": ["Reasoning: ...\nInsights:\n- ..."]}},
//!     {"role": "generator", "reply": {"kind": "synthetic_tasks", "count": 20}}
//!   ],
//!   "embedding": {"dim": 8, "rules": [{"contains": "concise", "vector": [10, 0, 0, 0, 0, 0, 0, 0]}],
//!                 "fallback": "hash", "jitter": 0.05}
//! }
//! ```
//!
//! The first chat rule whose filters match is used. `text` replies rotate by the
//! first numeric segment of the request id (`reflect-0003` picks entry 3 mod len).

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{
    ChatCall, ChatCompletionResponse, ChatRole, EmbedCall, EmbeddingDatum, EmbeddingResponse,
    TokenUsage, Transport, TransportError, WireUsage,
};
use crate::accounting::Role;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockScript {
    pub chat: Vec<ScriptRule>,
    pub embedding: EmbeddingScript,
}

impl MockScript {
    pub fn from_json(bytes: &[u8]) -> Result<Self, serde_json::Error> {
        serde_json::from_slice(bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptRule {
    pub role: Option<ChatRole>,
    /// Substring the last message must contain.
    pub contains: Option<String>,
    pub request_prefix: Option<String>,
    pub reply: MockReply,
    /// Reported usage; when absent, whitespace word counts are used.
    pub usage: Option<TokenUsage>,
    pub finish_reason: Option<String>,
    /// Number of leading attempts per request id that fail with `fail_status`.
    pub fail_first: u32,
    pub fail_status: u16,
}

impl Default for ScriptRule {
    fn default() -> Self {
        Self {
            role: None,
            contains: None,
            request_prefix: None,
            reply: MockReply::Echo,
            usage: None,
            finish_reason: None,
            fail_first: 0,
            fail_status: 503,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockReply {
    Text {
        texts: Vec<String>,
    },
    /// Numbered Instruction/Input/Output blocks built from pseudo-words.
    SyntheticTasks {
        count: usize,
        /// Vary content by request id; `false` returns the same tasks every time.
        #[serde(default = "default_true")]
        vary: bool,
        #[serde(default)]
        seed: u64,
    },
    /// Text of the first `1.` item in the prompt.
    FirstItem,
    /// The last message verbatim.
    Echo,
    Status {
        code: u16,
    },
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbeddingScript {
    pub dim: usize,
    pub rules: Vec<EmbeddingRule>,
    pub fallback: EmbeddingFallback,
    /// Half-width of deterministic uniform noise added to rule vectors.
    pub jitter: f64,
}

impl Default for EmbeddingScript {
    fn default() -> Self {
        Self {
            dim: 8,
            rules: Vec::new(),
            fallback: EmbeddingFallback::Hash,
            jitter: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRule {
    pub contains: String,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingFallback {
    /// Pseudo-random vector in [-1, 1]^dim derived from the text.
    Hash,
    /// `[char_count, 0, 0, ...]`.
    Length,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordedRequest {
    pub role: Role,
    pub request_id: String,
    pub attempt: u32,
    /// JSON body as sent.
    pub body: String,
}

pub struct MockTransport {
    script: MockScript,
    attempts: Mutex<HashMap<String, u32>>,
    transcript: Mutex<Vec<RecordedRequest>>,
}

fn text_seed(text: &str) -> u64 {
    let digest = Sha256::digest(text.as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn request_ordinal(request_id: &str) -> usize {
    request_id
        .split('-')
        .find(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()))
        .and_then(|s| s.parse().ok())
        .unwrap_or(0)
}

fn word_count(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

const SYLLABLES: [&str; 20] = [
    "ba", "ke", "lo", "mi", "nu", "pe", "ra", "si", "to", "vu", "da", "fe", "go", "hi", "ju",
    "ka", "le", "mo", "ni", "po",
];
const VERBS: [&str; 10] = [
    "Explain", "Describe", "Summarize", "Classify", "Compare", "Define", "Translate", "List",
    "Rewrite", "Evaluate",
];

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    (0..3).map(|_| SYLLABLES[rng.gen_range(0..SYLLABLES.len())]).collect()
}

fn words(rng: &mut ChaCha8Rng, n: usize) -> String {
    (0..n).map(|_| pseudo_word(rng)).collect::<Vec<_>>().join(" ")
}

/// Numbered task blocks in the `N. Instruction:` / `N. Input:` / `N. Output:` layout.
pub(crate) fn synthetic_tasks(count: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for k in 1..=count {
        let verb = VERBS[rng.gen_range(0..VERBS.len())];
        let instruction = format!("{verb} the {}.", words(&mut rng, 5));
        let input = if k % 3 == 0 {
            "<noinput>".to_string()
        } else {
            words(&mut rng, 4)
        };
        let output = format!("{}.", words(&mut rng, 6));
        out.push_str(&format!(
            "{k}. Instruction: {instruction}\n{k}. Input:\n{input}\n{k}. Output:\n{output}\n\n###\n"
        ));
    }
    out
}

fn first_numbered_item(text: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .find_map(|l| l.strip_prefix("1. "))
        .map(|s| s.trim().to_string())
}

impl MockTransport {
    pub fn new(script: MockScript) -> Self {
        Self {
            script,
            attempts: Mutex::new(HashMap::new()),
            transcript: Mutex::new(Vec::new()),
        }
    }

    /// Every request received, in arrival order.
    pub fn transcript(&self) -> Vec<RecordedRequest> {
        self.transcript.lock().expect("transcript lock").clone()
    }

    /// Transcript sorted by request id then attempt, independent of thread timing.
    pub fn sorted_transcript(&self) -> Vec<RecordedRequest> {
        let mut t = self.transcript();
        t.sort_by(|a, b| (&a.request_id, a.attempt).cmp(&(&b.request_id, b.attempt)));
        t
    }

    fn next_attempt(&self, request_id: &str) -> u32 {
        let mut attempts = self.attempts.lock().expect("attempt lock");
        let n = attempts.entry(request_id.to_string()).or_insert(0);
        *n += 1;
        *n
    }

    fn record(&self, role: Role, request_id: &str, attempt: u32, body: String) {
        self.transcript
            .lock()
            .expect("transcript lock")
            .push(RecordedRequest {
                role,
                request_id: request_id.to_string(),
                attempt,
                body,
            });
    }

    fn embed_one(&self, text: &str) -> Vec<f64> {
        let script = &self.script.embedding;
        if let Some(rule) = script.rules.iter().find(|r| text.contains(&r.contains)) {
            let mut v = rule.vector.clone();
            if script.jitter > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(text_seed(text));
                for x in &mut v {
                    *x += rng.gen_range(-script.jitter..=script.jitter);
                }
            }
            return v;
        }
        match script.fallback {
            EmbeddingFallback::Length => {
                let mut v = vec![0.0; script.dim.max(1)];
                v[0] = text.chars().count() as f64;
                v
            }
            EmbeddingFallback::Hash => {
                let mut rng = ChaCha8Rng::seed_from_u64(text_seed(text));
                (0..script.dim.max(1))
                    .map(|_| rng.gen_range(-1.0..=1.0))
                    .collect()
            }
        }
    }
}

impl Transport for MockTransport {
    fn chat(&self, call: &ChatCall<'_>) -> Result<ChatCompletionResponse, TransportError> {
        let attempt = self.next_attempt(call.request_id);
        let body = serde_json::to_string(call.body).expect("body serializes");
        self.record(call.role.ledger_role(), call.request_id, attempt, body);

        let last = call
            .body
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or("");
        let rule = self
            .script
            .chat
            .iter()
            .find(|r| {
                r.role.is_none_or(|role| role == call.role)
                    && r.contains.as_deref().is_none_or(|c| last.contains(c))
                    && r
                        .request_prefix
                        .as_deref()
                        .is_none_or(|p| call.request_id.starts_with(p))
            })
            .ok_or_else(|| TransportError::Http {
                status: 404,
                body: format!("no mock rule matches {}", call.request_id),
            })?;
        if attempt <= rule.fail_first {
            return Err(TransportError::Http {
                status: rule.fail_status,
                body: format!("scripted failure {attempt}"),
            });
        }
        let text = match &rule.reply {
            MockReply::Text { texts } => {
                if texts.is_empty() {
                    String::new()
                } else {
                    texts[request_ordinal(call.request_id) % texts.len()].clone()
                }
            }
            MockReply::SyntheticTasks { count, vary, seed } => {
                let s = if *vary {
                    text_seed(call.request_id) ^ seed
                } else {
                    *seed
                };
                synthetic_tasks(*count, s)
            }
            MockReply::FirstItem => first_numbered_item(last).unwrap_or_default(),
            MockReply::Echo => last.to_string(),
            MockReply::Status { code } => {
                return Err(TransportError::Http {
                    status: *code,
                    body: "scripted status".into(),
                })
            }
        };
        let usage = rule.usage.unwrap_or_else(|| TokenUsage {
            prompt_tokens: call
                .body
                .messages
                .iter()
                .map(|m| word_count(&m.content))
                .sum(),
            completion_tokens: word_count(&text),
        });
        Ok(ChatCompletionResponse::single(
            text,
            rule.finish_reason.as_deref().unwrap_or("stop"),
            WireUsage {
                prompt_tokens: usage.prompt_tokens,
                completion_tokens: usage.completion_tokens,
            },
        ))
    }

    fn embed(&self, call: &EmbedCall<'_>) -> Result<EmbeddingResponse, TransportError> {
        let attempt = self.next_attempt(call.request_id);
        let body = serde_json::to_string(call.body).expect("body serializes");
        self.record(Role::Embedder, call.request_id, attempt, body);
        let data = call
            .body
            .input
            .iter()
            .enumerate()
            .map(|(index, text)| EmbeddingDatum {
                index,
                embedding: self.embed_one(text),
            })
            .collect();
        Ok(EmbeddingResponse {
            data,
            usage: Some(WireUsage {
                prompt_tokens: call.body.input.iter().map(|t| word_count(t)).sum(),
                completion_tokens: 0,
            }),
        })
    }
}
