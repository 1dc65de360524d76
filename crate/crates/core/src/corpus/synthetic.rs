use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use super::ParallelCorpus;
use crate::error::{Error, Result};
use crate::rng::seeded;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Copy,
    Reverse,
    /// Token-wise substitution through a fixed random bijection.
    Lexicon,
}

impl FromStr for SyntheticKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "copy" => Ok(Self::Copy),
            "reverse" => Ok(Self::Reverse),
            "lexicon" => Ok(Self::Lexicon),
            other => Err(format!(
                "unknown synthetic task {other:?} (copy, reverse, lexicon)"
            )),
        }
    }
}

impl fmt::Display for SyntheticKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Copy => "copy",
            Self::Reverse => "reverse",
            Self::Lexicon => "lexicon",
        })
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticTask {
    pub corpus: ParallelCorpus,
    /// For the lexicon task, `lexicon[i]` is the target type for source type `i`.
    pub lexicon: Option<Vec<usize>>,
}

pub fn token_name(i: usize) -> String {
    format!("w{i}")
}

/// Generates `n_pairs` random sentences over `vocab_size` token types with
/// lengths drawn uniformly from `min_len..=max_len`.
pub fn make_synthetic_task(
    kind: SyntheticKind,
    vocab_size: usize,
    (min_len, max_len): (usize, usize),
    n_pairs: usize,
    seed: u64,
) -> Result<SyntheticTask> {
    if vocab_size < 2 {
        return Err(Error::Config(format!(
            "synthetic vocab_size must be at least 2, got {vocab_size}"
        )));
    }
    if n_pairs < 1 {
        return Err(Error::Config("synthetic n_pairs must be at least 1".into()));
    }
    if min_len < 1 || min_len > max_len {
        return Err(Error::Config(format!(
            "invalid synthetic length range {min_len}..={max_len}"
        )));
    }
    let mut rng = seeded(seed);
    let lexicon = (kind == SyntheticKind::Lexicon).then(|| {
        let mut perm: Vec<usize> = (0..vocab_size).collect();
        perm.shuffle(&mut rng);
        perm
    });

    let mut pairs = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let len = rng.random_range(min_len..=max_len);
        let src: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab_size)).collect();
        let tgt: Vec<usize> = match kind {
            SyntheticKind::Copy => src.clone(),
            SyntheticKind::Reverse => src.iter().rev().copied().collect(),
            SyntheticKind::Lexicon => {
                let map = lexicon.as_ref().expect("lexicon drawn above");
                src.iter().map(|&t| map[t]).collect()
            }
        };
        pairs.push((
            src.into_iter().map(token_name).collect(),
            tgt.into_iter().map(token_name).collect(),
        ));
    }
    Ok(SyntheticTask {
        corpus: ParallelCorpus {
            pairs,
            source_path: None,
            target_path: None,
        },
        lexicon,
    })
}
