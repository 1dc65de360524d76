//! Parallel corpora, vocabularies, batching and synthetic tasks.
//!
//! Corpus files are UTF-8 with one sentence per line; the source and target
//! files of a corpus are aligned by line number. Tokenisation is a plain
//! whitespace split, so pre-segmented (e.g. subword) text loads unchanged.

mod synthetic;
mod vocab;

pub use synthetic::{make_synthetic_task, token_name, SyntheticKind, SyntheticTask};
pub use vocab::{Vocabulary, BOS, EOS, PAD, SPECIALS, UNK};

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::rng::seeded;

pub type TokenPair = (Vec<String>, Vec<String>);

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParallelCorpus {
    pub pairs: Vec<TokenPair>,
    pub source_path: Option<PathBuf>,
    pub target_path: Option<PathBuf>,
}

pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

pub fn read_lines(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let text = fs::read_to_string(path.as_ref()).map_err(|e| Error::io(&path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn write_lines<S: AsRef<str>>(path: impl AsRef<Path>, lines: &[S]) -> Result<()> {
    let mut text = String::new();
    for l in lines {
        text.push_str(l.as_ref());
        text.push('\n');
    }
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path, e))
}

impl ParallelCorpus {
    /// Pairs up lines; pairs with an empty side are dropped.
    pub fn from_lines<S: AsRef<str>>(source: &[S], target: &[S]) -> Result<Self> {
        if source.len() != target.len() {
            return Err(Error::Data(format!(
                "source has {} lines but target has {}",
                source.len(),
                target.len()
            )));
        }
        let pairs = source
            .iter()
            .zip(target)
            .map(|(s, t)| (tokenize(s.as_ref()), tokenize(t.as_ref())))
            .filter(|(s, t)| !s.is_empty() && !t.is_empty())
            .collect();
        Ok(Self {
            pairs,
            source_path: None,
            target_path: None,
        })
    }

    pub fn load(source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<Self> {
        let src = read_lines(&source)?;
        let tgt = read_lines(&target)?;
        let mut corpus = Self::from_lines(&src, &tgt).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!(
                "{} / {}: {msg}",
                source.as_ref().display(),
                target.as_ref().display()
            )),
            other => other,
        })?;
        corpus.source_path = Some(source.as_ref().to_path_buf());
        corpus.target_path = Some(target.as_ref().to_path_buf());
        Ok(corpus)
    }

    pub fn save(&self, source: impl AsRef<Path>, target: impl AsRef<Path>) -> Result<()> {
        let src: Vec<String> = self.pairs.iter().map(|(s, _)| s.join(" ")).collect();
        let tgt: Vec<String> = self.pairs.iter().map(|(_, t)| t.join(" ")).collect();
        write_lines(source, &src)?;
        write_lines(target, &tgt)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn source_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|(s, _)| s.join(" ")).collect()
    }

    pub fn target_lines(&self) -> Vec<String> {
        self.pairs.iter().map(|(_, t)| t.join(" ")).collect()
    }

    /// Index-encodes every pair with `[<s>, ..., </s>]` framing.
    pub fn encode(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<EncodedPair> {
        self.pairs
            .iter()
            .map(|(s, t)| EncodedPair {
                source: src_vocab.encode_tokens(s.iter().map(String::as_str)),
                target: tgt_vocab.encode_tokens(t.iter().map(String::as_str)),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedPair {
    pub source: Vec<usize>,
    pub target: Vec<usize>,
}

/// Groups example indices into batches of similar source length.
///
/// Examples are shuffled, stably sorted by length, cut into batches of
/// `batch_size`, and the batch order is shuffled. Every index appears in
/// exactly one batch.
pub fn make_batches(lengths: &[usize], batch_size: usize, seed: u64) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..lengths.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| lengths[i]);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size).map(<[usize]>::to_vec).collect();
    batches.shuffle(&mut rng);
    batches
}

/// Pads sequences to a common length with [`PAD`].
pub fn pad_batch(seqs: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let width = seqs.iter().map(Vec::len).max().unwrap_or(0);
    seqs.iter()
        .map(|s| {
            let mut p = s.clone();
            p.resize(width, PAD);
            p
        })
        .collect()
}
