use std::collections::HashMap;

use crate::encoders::{PAD, UNK};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Lowercases and splits on whitespace and punctuation; every punctuation
/// character becomes a token of its own. The literal `<unk>` is kept whole
/// so rendered instances re-tokenize to the same ids.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut out = Vec::new();
    let mut word = String::new();
    let mut rest = lower.as_str();
    while let Some(c) = rest.chars().next() {
        if rest.starts_with(UNK_TOKEN) {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            out.push(UNK_TOKEN.to_string());
            rest = &rest[UNK_TOKEN.len()..];
            continue;
        }
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            if !word.is_empty() {
                out.push(std::mem::take(&mut word));
            }
            if !c.is_whitespace() {
                out.push(c.to_string());
            }
        }
        rest = &rest[c.len_utf8()..];
    }
    if !word.is_empty() {
        out.push(word);
    }
    out
}

/// Dense token ids with `<pad>` = 0 and `<unk>` = 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    /// Reserved ids followed by `tokens` in order; duplicates and reserved
    /// names are skipped.
    pub fn from_tokens<S: Into<String>>(tokens: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for t in [PAD_TOKEN, UNK_TOKEN] {
            v.push(t.to_string());
        }
        for t in tokens {
            let t = t.into();
            if !v.index.contains_key(&t) {
                v.push(t);
            }
        }
        v
    }

    fn push(&mut self, t: String) {
        self.index.insert(t.clone(), self.tokens.len());
        self.tokens.push(t);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        self.tokens.get(id).map_or(UNK_TOKEN, String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Space-joined tokens; `encode(decode(ids)) == ids` for ids other than pad.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().map(|&i| if i == PAD { UNK_TOKEN } else { self.token(i) }).collect::<Vec<_>>().join(" ")
    }
}

/// Keeps the `max_size - 2` most frequent tokens (ties broken
/// lexicographically) after case folding.
pub fn build_vocab<I, S>(corpus: I, max_size: usize) -> Vocabulary
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for tok in corpus {
        let t = tok.as_ref().to_lowercase();
        if t == PAD_TOKEN || t == UNK_TOKEN {
            continue;
        }
        *counts.entry(t).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(max_size.saturating_sub(2));
    Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t))
}
