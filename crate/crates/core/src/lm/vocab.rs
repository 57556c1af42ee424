use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_TOKEN: &str = "<unk>";
pub const PAD_TOKEN: &str = "<pad>";
pub const EOS_TOKEN: &str = "<eos>";

/// Token inventory. Corpus tokens come first in order of first occurrence,
/// followed by `<unk>`, `<pad>`, `<eos>` as the last three ids. The model
/// relies on that layout to locate the padding and end-of-sequence ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    char_level: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    #[serde(default)]
    char_level: bool,
}

impl Vocab {
    fn from_tokens(mut tokens: Vec<String>, char_level: bool) -> Self {
        tokens.extend([UNK_TOKEN, PAD_TOKEN, EOS_TOKEN].map(String::from));
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Vocab {
            tokens,
            index,
            char_level,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        self.tokens.len() - 3
    }

    pub fn pad_id(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn eos_id(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn is_char_level(&self) -> bool {
        self.char_level
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Total: unknown strings map to `<unk>`.
    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_id())
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str, append_eos: bool) -> Vec<usize> {
        let mut ids: Vec<usize> = if self.char_level {
            let mut buf = [0u8; 4];
            text.chars()
                .map(|c| self.lookup(c.encode_utf8(&mut buf)))
                .collect()
        } else {
            text.split_whitespace().map(|t| self.lookup(t)).collect()
        };
        if append_eos {
            ids.push(self.eos_id());
        }
        ids
    }

    /// Inverse of [`tokenize`](Self::tokenize), dropping `<eos>` and `<pad>`.
    pub fn decode(&self, ids: &[usize]) -> String {
        let sep = if self.char_level { "" } else { " " };
        ids.iter()
            .filter(|&&i| i != self.eos_id() && i != self.pad_id())
            .map(|&i| self.token(i).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(sep)
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            tokens: self.tokens[..self.tokens.len() - 3].to_vec(),
            char_level: self.char_level,
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(s)?;
        let mut seen = std::collections::HashSet::new();
        for t in &file.tokens {
            if [UNK_TOKEN, PAD_TOKEN, EOS_TOKEN].contains(&t.as_str()) || !seen.insert(t) {
                return Err(Error::InvalidConfig(format!(
                    "vocab token `{t}` is reserved or duplicated"
                )));
            }
        }
        Ok(Vocab::from_tokens(file.tokens, file.char_level))
    }
}

/// Build a vocabulary from raw texts. Tokens seen fewer than `min_count` times
/// are left out and will map to `<unk>`.
pub fn build_vocab<S: AsRef<str>>(
    corpus: &[S],
    min_count: usize,
    char_level: bool,
) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut order: Vec<String> = Vec::new();
    let mut bump = |tok: String| {
        let c = counts.entry(tok.clone()).or_insert(0);
        if *c == 0 {
            order.push(tok);
        }
        *c += 1;
    };
    for text in corpus {
        let text = text.as_ref();
        if char_level {
            text.chars().for_each(|c| bump(c.to_string()));
        } else {
            text.split_whitespace().for_each(|t| bump(t.to_string()));
        }
    }
    let reserved = [UNK_TOKEN, PAD_TOKEN, EOS_TOKEN];
    let kept = order
        .into_iter()
        .filter(|t| counts[t] >= min_count.max(1) && !reserved.contains(&t.as_str()))
        .collect();
    Ok(Vocab::from_tokens(kept, char_level))
}
