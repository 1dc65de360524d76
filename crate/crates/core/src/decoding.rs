//! Beam search over any incremental scorer.
//!
//! Hypotheses are ranked by length-normalised log-probability (sum over
//! emitted tokens divided by their number, the end token included).
//! Finished hypotheses stay in the beam, frozen, and keep competing with
//! live ones. Equal scores are ordered by the lexicographically smaller
//! token sequence, then by the shorter one.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::Seq2SeqModel;
use crate::tensor::TensorError;

/// Incremental next-token scorer.
pub trait StepModel {
    type State: Clone;

    fn initial_state(&mut self) -> Result<Self::State>;

    /// Log-probabilities of every next token after consuming `token`.
    fn step(&mut self, state: &Self::State, token: usize) -> Result<(Vec<f64>, Self::State)>;

    fn bos(&self) -> usize;

    fn eos(&self) -> usize;
}

#[derive(Debug, Clone)]
pub struct Hypothesis<S> {
    /// Emitted tokens, without the start token.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    pub finished: bool,
    pub state: S,
}

impl<S> Hypothesis<S> {
    pub fn score(&self) -> f64 {
        if self.tokens.is_empty() {
            0.0
        } else {
            self.log_prob / self.tokens.len() as f64
        }
    }

    /// Tokens up to, not including, the end token.
    pub fn body(&self) -> &[usize] {
        if self.finished {
            &self.tokens[..self.tokens.len() - 1]
        } else {
            &self.tokens
        }
    }
}

/// Beam ordering: best first.
fn rank(a_score: f64, a_tokens: &[usize], b_score: f64, b_tokens: &[usize]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then_with(|| a_tokens.cmp(b_tokens))
        .then_with(|| a_tokens.len().cmp(&b_tokens.len()))
}

#[derive(Debug, Clone)]
pub struct BeamResult<S> {
    pub best: Hypothesis<S>,
    /// Final beam, best first.
    pub beam: Vec<Hypothesis<S>>,
}

struct Candidate {
    parent: usize,
    token: Option<usize>,
    tokens: Vec<usize>,
    log_prob: f64,
    score: f64,
}

pub fn beam_search<M: StepModel>(
    model: &mut M,
    beam_width: usize,
    max_len: usize,
) -> Result<BeamResult<M::State>> {
    if beam_width == 0 || max_len == 0 {
        return Err(Error::Config(format!(
            "beam_width and max_len must be positive, got {beam_width} and {max_len}"
        )));
    }
    let eos = model.eos();
    let bos = model.bos();
    let mut beam = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        finished: false,
        state: model.initial_state()?,
    }];

    for _ in 0..max_len {
        if beam.iter().all(|h| h.finished) {
            break;
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        let mut next_states: Vec<Option<M::State>> = vec![None; beam.len()];
        for (i, hyp) in beam.iter().enumerate() {
            if hyp.finished {
                candidates.push(Candidate {
                    parent: i,
                    token: None,
                    tokens: hyp.tokens.clone(),
                    log_prob: hyp.log_prob,
                    score: hyp.score(),
                });
                continue;
            }
            let prev = hyp.tokens.last().copied().unwrap_or(bos);
            let (log_probs, state) = model.step(&hyp.state, prev)?;
            next_states[i] = Some(state);
            let len = (hyp.tokens.len() + 1) as f64;
            // Only the best `beam_width` extensions of one parent can survive.
            let mut order: Vec<usize> = (0..log_probs.len()).collect();
            let cmp = |a: &usize, b: &usize| log_probs[*b].total_cmp(&log_probs[*a]).then(a.cmp(b));
            if order.len() > beam_width {
                order.select_nth_unstable_by(beam_width - 1, cmp);
                order.truncate(beam_width);
            }
            for v in order {
                let mut tokens = hyp.tokens.clone();
                tokens.push(v);
                let log_prob = hyp.log_prob + log_probs[v];
                candidates.push(Candidate {
                    parent: i,
                    token: Some(v),
                    tokens,
                    log_prob,
                    score: log_prob / len,
                });
            }
        }
        candidates.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
        candidates.truncate(beam_width);
        beam = candidates
            .into_iter()
            .map(|c| {
                let parent = &beam[c.parent];
                Hypothesis {
                    finished: parent.finished || c.token == Some(eos),
                    state: next_states[c.parent]
                        .clone()
                        .unwrap_or_else(|| parent.state.clone()),
                    tokens: c.tokens,
                    log_prob: c.log_prob,
                }
            })
            .collect();
    }

    let best = beam
        .iter()
        .filter(|h| h.finished)
        .min_by(|a, b| rank(a.score(), &a.tokens, b.score(), &b.tokens))
        .or_else(|| beam.first())
        .cloned()
        .ok_or(TensorError::Empty("beam"))?;
    Ok(BeamResult { best, beam })
}

/// Beam search with width 1.
pub fn greedy<M: StepModel>(model: &mut M, max_len: usize) -> Result<Hypothesis<M::State>> {
    Ok(beam_search(model, 1, max_len)?.best)
}

/// Decodes one framed source sentence and returns the target body tokens.
pub fn translate(
    model: &Seq2SeqModel,
    source: &[usize],
    beam_width: usize,
    max_len: usize,
) -> Result<Vec<usize>> {
    let mut session = model.session(source)?;
    let result = beam_search(&mut session, beam_width, max_len)?;
    Ok(result.best.body().to_vec())
}
