//! ROUGE-L F1 over case-folded whitespace tokens, and a near-duplicate filter
//! built on it.

use std::collections::HashMap;

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Length of the longest common subsequence of two token sequences.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn f1_from_lcs(lcs: usize, m: usize, n: usize) -> f64 {
    if lcs == 0 || m + n == 0 {
        return 0.0;
    }
    let p = lcs as f64 / m as f64;
    let r = lcs as f64 / n as f64;
    2.0 * p * r / (p + r)
}

pub fn rouge_l_tokens(a: &[String], b: &[String]) -> f64 {
    f1_from_lcs(lcs_len(a, b), a.len(), b.len())
}

/// ROUGE-L F1 in [0, 1]. Zero when either side has no tokens.
pub fn rouge_l_f1(a: &str, b: &str) -> f64 {
    rouge_l_tokens(&tokenize(a), &tokenize(b))
}

/// Accepted texts, indexed by token so a new candidate is only compared
/// against entries that could possibly reach the threshold.
#[derive(Debug, Default, Clone)]
pub struct DedupIndex {
    docs: Vec<Vec<String>>,
    postings: HashMap<String, Vec<usize>>,
}

impl DedupIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn insert(&mut self, text: &str) {
        let tokens = tokenize(text);
        let id = self.docs.len();
        let mut seen: Vec<&String> = Vec::new();
        for t in &tokens {
            if !seen.contains(&t) {
                seen.push(t);
                self.postings.entry(t.clone()).or_default().push(id);
            }
        }
        self.docs.push(tokens);
    }

    /// Highest ROUGE-L F1 of `text` against any entry (0 when empty), stopping
    /// early once `stop_at` is reached.
    pub fn max_similarity(&self, text: &str, stop_at: f64) -> f64 {
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return 0.0;
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for t in &tokens {
            *counts.entry(t.as_str()).or_default() += 1;
        }
        // Multiset overlap is an upper bound on the LCS.
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for (tok, &c) in &counts {
            if let Some(ids) = self.postings.get(*tok) {
                for &id in ids {
                    let in_doc = self.docs[id].iter().filter(|t| t.as_str() == *tok).count();
                    *overlap.entry(id).or_default() += c.min(in_doc);
                }
            }
        }
        let mut candidates: Vec<(usize, usize)> = overlap.into_iter().collect();
        candidates.sort_unstable();
        let mut best = 0.0f64;
        for (id, bound) in candidates {
            let doc = &self.docs[id];
            if f1_from_lcs(bound, tokens.len(), doc.len()) <= best {
                continue;
            }
            best = best.max(rouge_l_tokens(&tokens, doc));
            if best >= stop_at {
                break;
            }
        }
        best
    }
}

/// Keeps each candidate, in order, iff its similarity to every pool entry and
/// every previously kept candidate is below `threshold`. Returns kept indices.
pub fn dedup_filter<S: AsRef<str>>(candidates: &[S], pool: &mut DedupIndex, threshold: f64) -> Vec<usize> {
    let mut kept = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        if pool.max_similarity(c.as_ref(), threshold) < threshold {
            pool.insert(c.as_ref());
            kept.push(i);
        }
    }
    kept
}

/// Highest pairwise similarity in a list, with the pair. Brute force.
pub fn max_pairwise(texts: &[String]) -> Option<(usize, usize, f64)> {
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| tokenize(t)).collect();
    let mut best: Option<(usize, usize, f64)> = None;
    for i in 0..tokens.len() {
        for j in (i + 1)..tokens.len() {
            let s = rouge_l_tokens(&tokens[i], &tokens[j]);
            if best.is_none_or(|b| s > b.2) {
                best = Some((i, j, s));
            }
        }
    }
    best
}
