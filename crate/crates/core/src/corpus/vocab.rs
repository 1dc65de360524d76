use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;

pub const SPECIALS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Bidirectional token/index map. Indices 0..4 are reserved for
/// [`SPECIALS`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, t)| (t, i))
            .collect();
        Self {
            tokens,
            index,
            counts: vec![0; SPECIALS.len()],
        }
    }

    /// Builds a vocabulary from whitespace-tokenised lines.
    ///
    /// Tokens are ranked by count, ties broken lexicographically, and the
    /// table is cut at `max_size` entries including the specials. Tokens
    /// that are cut, or seen fewer than `min_count` times, are counted
    /// under `<unk>`.
    pub fn build<S: AsRef<str>>(lines: &[S], max_size: usize, min_count: u64) -> Result<Self> {
        if lines.is_empty() {
            return Err(Error::Data(
                "cannot build a vocabulary from an empty corpus".into(),
            ));
        }
        let mut vocab = Self::with_specials();
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                *freq.entry(tok).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = Vec::with_capacity(freq.len());
        for (tok, n) in freq {
            match vocab.index.get(tok) {
                Some(&special) => vocab.counts[special] += n,
                None => ranked.push((tok, n)),
            }
        }
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));

        let room = max_size.saturating_sub(SPECIALS.len());
        for (rank, (tok, n)) in ranked.into_iter().enumerate() {
            if rank < room && n >= min_count {
                vocab.index.insert(tok.to_string(), vocab.tokens.len());
                vocab.tokens.push(tok.to_string());
                vocab.counts.push(n);
            } else {
                vocab.counts[UNK] += n;
            }
        }
        Ok(vocab)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn index_of(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, index: usize) -> &str {
        self.tokens.get(index).map_or(SPECIALS[UNK], String::as_str)
    }

    /// Training-corpus count of the token at `index` (zero for a loaded
    /// vocabulary).
    pub fn count(&self, index: usize) -> u64 {
        self.counts.get(index).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `[<s>, body..., </s>]`
    pub fn encode_sentence(&self, text: &str) -> Vec<usize> {
        self.encode_tokens(text.split_whitespace())
    }

    pub fn encode_tokens<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<usize> {
        let mut out = vec![BOS];
        out.extend(tokens.into_iter().map(|t| self.index_of(t)));
        out.push(EOS);
        out
    }

    /// Surface tokens up to the first `</s>`, skipping `<s>` and padding.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .take_while(|&&i| i != EOS)
            .filter(|&&i| i != BOS && i != PAD)
            .map(|&i| self.token(i).to_string())
            .collect()
    }

    pub fn decode_line(&self, ids: &[usize]) -> String {
        self.decode(ids).join(" ")
    }

    /// One token per line in index order; the first four lines are the
    /// specials.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
        let tokens: Vec<String> = text.lines().map(str::to_string).collect();
        if tokens.len() < SPECIALS.len() || tokens.iter().zip(SPECIALS).any(|(t, s)| t != s) {
            return Err(Error::Data(format!(
                "{}: vocabulary must start with the {} special tokens",
                path.as_ref().display(),
                SPECIALS.len()
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.split_whitespace().count() != 1 {
                return Err(Error::Data(format!(
                    "{}:{}: invalid token {t:?}",
                    path.as_ref().display(),
                    i + 1
                )));
            }
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Data(format!(
                    "{}: duplicate token {t:?}",
                    path.as_ref().display()
                )));
            }
        }
        let counts = vec![0; tokens.len()];
        Ok(Self {
            tokens,
            index,
            counts,
        })
    }
}
