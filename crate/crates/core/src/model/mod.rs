//! The attentional encoder-decoder network.
//!
//! Each decoding step runs the decoder stack on the embedding of the
//! previous target token, attends with the new state `s_i`, and predicts
//! `log softmax(W_o [s_i; c_i] + b_o)`. The context enters only the output
//! layer; it is not fed back into the recurrence.

mod checkpoint;
mod config;

pub use checkpoint::{
    checkpoint_size, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointError, MAGIC,
};
pub use config::{ModelConfig, MODEL_KEYS};

use crate::attention::{AttentionHead, AttentionOutput, HeadShape, PreparedSource};
use crate::corpus::{BOS, EOS, PAD};
use crate::decoding::StepModel;
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::recurrent::{BiLstmEncoder, LstmCell, LstmStack, StackState, INIT_BOUND};
use crate::rng::{derive_seed, seeded, uniform_vec, SplitMix64};
use crate::tensor::{self, Graph, ParamId, ParamStore, Tensor, TensorError, Var};

/// Affine maps from an encoder summary to one decoder layer's `(h0, c0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bridge {
    pub w_h: ParamId,
    pub b_h: ParamId,
    pub w_c: ParamId,
    pub b_c: ParamId,
}

#[derive(Debug, Clone)]
pub struct Seq2SeqModel {
    pub config: ModelConfig,
    pub params: ParamStore,
    /// `[V_src x E]`
    pub source_embedding: ParamId,
    /// `[V_tgt x E]`
    pub target_embedding: ParamId,
    pub encoder: BiLstmEncoder,
    pub bridges: Vec<Bridge>,
    pub decoder: LstmStack,
    pub attention: AttentionHead,
    /// `[V_tgt x (D_s + D_h)]`
    pub output_weight: ParamId,
    pub output_bias: ParamId,
}

fn uniform(store: &mut ParamStore, name: &str, shape: &[usize], rng: &mut SplitMix64) -> ParamId {
    let n = shape.iter().product();
    let t = Tensor::new(shape.to_vec(), uniform_vec(rng, n, INIT_BOUND)).expect("shape");
    store.add(name, t)
}

/// One decoder step's outputs.
#[derive(Debug, Clone)]
pub struct StepOutput {
    pub logits: Var,
    pub state: StackState,
    pub attention: AttentionOutput,
}

/// Result of a teacher-forced pass.
#[derive(Debug, Clone)]
pub struct TeacherForced {
    /// Mean cross-entropy over predicted (non-pad) target positions.
    pub loss: Var,
    /// Unnormalised scores per predicted position.
    pub logits: Vec<Var>,
    /// `log P(gold_i | ...)` per predicted position.
    pub gold_log_probs: Vec<f64>,
    /// Attention weights per predicted position.
    pub attention: Vec<Vec<f64>>,
}

impl Seq2SeqModel {
    /// Builds a freshly initialised model. Each component draws from its
    /// own stream derived from `seed`, so models that differ only in the
    /// attention kind share every other initial weight.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let mut store = ParamStore::new();
        let rng = |tag: u64| seeded(derive_seed(seed, &[tag]));

        let source_embedding = uniform(
            &mut store,
            "embed.source",
            &[c.source_vocab, c.embed_dim],
            &mut rng(1),
        );
        let target_embedding = uniform(
            &mut store,
            "embed.target",
            &[c.target_vocab, c.embed_dim],
            &mut rng(2),
        );
        let encoder = BiLstmEncoder::new(
            &mut store,
            "encoder",
            c.embed_dim,
            c.direction_dim(),
            c.encoder_layers,
            &mut rng(3),
        );
        let mut bridge_rng = rng(4);
        let (ds, dh) = (c.state_dim(), c.source_dim());
        let bridges = (0..c.decoder_layers)
            .map(|l| Bridge {
                w_h: uniform(
                    &mut store,
                    &format!("bridge.{l}.w_h"),
                    &[ds, dh],
                    &mut bridge_rng,
                ),
                b_h: store.add(format!("bridge.{l}.b_h"), Tensor::zeros(&[ds])),
                w_c: uniform(
                    &mut store,
                    &format!("bridge.{l}.w_c"),
                    &[ds, dh],
                    &mut bridge_rng,
                ),
                b_c: store.add(format!("bridge.{l}.b_c"), Tensor::zeros(&[ds])),
            })
            .collect();
        let decoder = LstmStack::new(
            &mut store,
            "decoder",
            c.embed_dim,
            ds,
            c.decoder_layers,
            &mut rng(5),
        );
        let output_weight = uniform(
            &mut store,
            "output.weight",
            &[c.target_vocab, ds + dh],
            &mut rng(6),
        );
        let output_bias = store.add("output.bias", Tensor::zeros(&[c.target_vocab]));
        let attention = AttentionHead::new(
            &mut store,
            c.attention_kind,
            c.scorer,
            Self::head_shape(c),
            &mut rng(7),
        )
        .map_err(Error::Config)?;

        Ok(Self {
            config,
            params: store,
            source_embedding,
            target_embedding,
            encoder,
            bridges,
            decoder,
            attention,
            output_weight,
            output_bias,
        })
    }

    fn head_shape(c: &ModelConfig) -> HeadShape {
        HeadShape {
            state_dim: c.state_dim(),
            source_dim: c.source_dim(),
            inner_dim: c.inner_dim(),
            project_state: c.project_state,
        }
    }

    /// Number of trainable scalars a model with `config` has.
    pub fn param_count(config: &ModelConfig) -> usize {
        let c = config;
        let (e, d, ds, dh) = (
            c.embed_dim,
            c.direction_dim(),
            c.state_dim(),
            c.source_dim(),
        );
        let embeddings = (c.source_vocab + c.target_vocab) * e;
        let encoder = (0..c.encoder_layers)
            .map(|l| 2 * LstmCell::param_count(if l == 0 { e } else { 2 * d }, d))
            .sum::<usize>();
        let bridges = c.decoder_layers * 2 * (ds * dh + ds);
        let decoder = (0..c.decoder_layers)
            .map(|l| LstmCell::param_count(if l == 0 { e } else { ds }, ds))
            .sum::<usize>();
        let output = c.target_vocab * (ds + dh + 1);
        let attention = AttentionHead::param_count(c.attention_kind, c.scorer, Self::head_shape(c));
        embeddings + encoder + bridges + decoder + output + attention
    }

    pub fn graph(&self) -> Graph<'_> {
        Graph::new(&self.params)
    }

    fn check_token(&self, token: usize, vocab: usize, side: &str) -> Result<()> {
        if token >= vocab {
            return Err(Error::Data(format!(
                "{side} token index {token} outside vocabulary of size {vocab}"
            )));
        }
        Ok(())
    }

    /// Encodes a framed source sequence. Trailing [`PAD`] tokens are
    /// masked out.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        source: &[usize],
        mode: &mut Mode,
    ) -> Result<PreparedSource> {
        if source.is_empty() {
            return Err(TensorError::Empty("source sequence").into());
        }
        let table = g.param(self.source_embedding);
        let mut inputs = Vec::with_capacity(source.len());
        for &t in source {
            self.check_token(t, self.config.source_vocab, "source")?;
            let x = g.gather_row(table, t)?;
            inputs.push(mode.dropout(g, x)?);
        }
        let mask: Vec<bool> = source.iter().map(|&t| t != PAD).collect();
        let encoded = self.encoder.encode(g, &inputs, &mask, mode)?;
        Ok(self.attention.prepare(g, &encoded)?)
    }

    /// Decoder start state computed from the encoder summaries.
    pub fn initial_state(
        &self,
        g: &mut Graph<'_>,
        prepared: &PreparedSource,
    ) -> Result<StackState> {
        let summaries = &prepared.source.summaries;
        let mut layers = Vec::with_capacity(self.bridges.len());
        for (l, b) in self.bridges.iter().enumerate() {
            let summary = summaries[l.min(summaries.len() - 1)];
            let affine = |g: &mut Graph<'_>, w: ParamId, bias: ParamId| -> Result<Var> {
                let w = g.param(w);
                let bias = g.param(bias);
                let y = g.matvec(w, summary)?;
                Ok(g.add(y, bias)?)
            };
            let h = affine(g, b.w_h, b.b_h)?;
            let c = affine(g, b.w_c, b.b_c)?;
            layers.push((h, c));
        }
        Ok(StackState { layers })
    }

    /// `W_o [s; c] + b_o`
    pub fn output_logits(&self, g: &mut Graph<'_>, s: Var, c: Var) -> Result<Var> {
        let w = g.param(self.output_weight);
        let b = g.param(self.output_bias);
        let sc = g.concat(&[s, c])?;
        let y = g.matvec(w, sc)?;
        Ok(g.add(y, b)?)
    }

    /// Log-probabilities over the target vocabulary.
    pub fn output_distribution(&self, g: &mut Graph<'_>, s: Var, c: Var) -> Result<Var> {
        let logits = self.output_logits(g, s, c)?;
        Ok(g.log_softmax(logits)?)
    }

    /// One decoder step consuming `prev_token`.
    pub fn decoder_step(
        &self,
        g: &mut Graph<'_>,
        prepared: &PreparedSource,
        state: &StackState,
        prev_token: usize,
        step: usize,
        mode: &mut Mode,
    ) -> Result<StepOutput> {
        self.check_token(prev_token, self.config.target_vocab, "target")?;
        let table = g.param(self.target_embedding);
        let x = g.gather_row(table, prev_token)?;
        let x = mode.dropout(g, x)?;
        let (s, state) = self.decoder.step(g, x, state, mode)?;
        let attention = self.attention.attend(g, prepared, s, step)?;
        let logits = self.output_logits(g, s, attention.context)?;
        Ok(StepOutput {
            logits,
            state,
            attention,
        })
    }

    /// Teacher-forced pass over framed sequences (`[<s>, ..., </s>]`, with
    /// optional trailing padding). The decoder consumes `target[i-1]` and is
    /// scored on `target[i]` for every non-pad `target[i]`, `i >= 1`.
    pub fn forward_teacher_forced(
        &self,
        g: &mut Graph<'_>,
        source: &[usize],
        target: &[usize],
        mode: &mut Mode,
    ) -> Result<TeacherForced> {
        let steps = target.iter().skip(1).take_while(|&&t| t != PAD).count();
        if target.is_empty() || steps == 0 {
            return Err(TensorError::Empty("target sequence").into());
        }
        let prepared = self.encode(g, source, mode)?;
        let mut state = self.initial_state(g, &prepared)?;
        let mut losses = Vec::with_capacity(steps);
        let mut logits = Vec::with_capacity(steps);
        let mut gold_log_probs = Vec::with_capacity(steps);
        let mut attention = Vec::with_capacity(steps);
        for i in 1..=steps {
            let gold = target[i];
            self.check_token(gold, self.config.target_vocab, "target")?;
            let out = self.decoder_step(g, &prepared, &state, target[i - 1], i - 1, mode)?;
            let ce = g.cross_entropy(out.logits, gold)?;
            gold_log_probs.push(-g.value(ce).item());
            attention.push(g.value(out.attention.weights).data().to_vec());
            losses.push(ce);
            logits.push(out.logits);
            state = out.state;
        }
        let total = g.add_n(&losses)?;
        let loss = g.scale(total, 1.0 / steps as f64);
        Ok(TeacherForced {
            loss,
            logits,
            gold_log_probs,
            attention,
        })
    }

    /// Evaluation-mode loss of one pair, without gradients.
    pub fn loss(&self, source: &[usize], target: &[usize]) -> Result<f64> {
        let mut g = self.graph();
        let tf = self.forward_teacher_forced(&mut g, source, target, &mut Mode::Eval)?;
        Ok(g.value(tf.loss).item())
    }

    /// Starts incremental decoding of one source sentence.
    pub fn session(&self, source: &[usize]) -> Result<DecodeSession<'_>> {
        let mut graph = self.graph();
        let prepared = self.encode(&mut graph, source, &mut Mode::Eval)?;
        let initial = self.initial_state(&mut graph, &prepared)?;
        Ok(DecodeSession {
            model: self,
            graph,
            prepared,
            initial,
        })
    }
}

/// Evaluation-mode decoder bound to one encoded source sentence.
pub struct DecodeSession<'m> {
    model: &'m Seq2SeqModel,
    graph: Graph<'m>,
    prepared: PreparedSource,
    initial: StackState,
}

/// Decoder state of one hypothesis.
#[derive(Debug, Clone)]
pub struct SessionState {
    stack: StackState,
    step: usize,
    /// Attention weights of the step that produced this state.
    pub attention: Vec<f64>,
}

impl StepModel for DecodeSession<'_> {
    type State = SessionState;

    fn initial_state(&mut self) -> Result<SessionState> {
        Ok(SessionState {
            stack: self.initial.clone(),
            step: 0,
            attention: Vec::new(),
        })
    }

    fn step(&mut self, state: &SessionState, token: usize) -> Result<(Vec<f64>, SessionState)> {
        let out = self.model.decoder_step(
            &mut self.graph,
            &self.prepared,
            &state.stack,
            token,
            state.step,
            &mut Mode::Eval,
        )?;
        let log_probs = tensor::log_softmax(self.graph.value(out.logits).data());
        let attention = self.graph.value(out.attention.weights).data().to_vec();
        Ok((
            log_probs,
            SessionState {
                stack: out.state,
                step: state.step + 1,
                attention,
            },
        ))
    }

    fn bos(&self) -> usize {
        BOS
    }

    fn eos(&self) -> usize {
        EOS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{AttentionKind, ScorerKind};

    pub(crate) fn tiny(kind: AttentionKind) -> ModelConfig {
        ModelConfig {
            attention_kind: kind,
            embed_dim: 5,
            model_dim: 6,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_dim: Some(4),
            dropout: 0.0,
            max_decode_len: 8,
            source_vocab: 9,
            target_vocab: 11,
            ..ModelConfig::default()
        }
    }

    fn zero_all(model: &mut Seq2SeqModel) {
        let ids: Vec<ParamId> = model.params.ids().collect();
        for id in ids {
            model.params.value_mut(id).data_mut().fill(0.0);
        }
    }

    #[test]
    fn parameter_count_matches_store_and_hand_count() {
        for kind in [AttentionKind::Sa, AttentionKind::Mqt, AttentionKind::Aqt] {
            for scorer in [ScorerKind::Additive, ScorerKind::Dot] {
                let cfg = ModelConfig {
                    scorer,
                    ..tiny(kind)
                };
                let m = Seq2SeqModel::new(cfg.clone(), 1).unwrap();
                assert_eq!(m.params.scalar_count(), Seq2SeqModel::param_count(&cfg));
            }
        }
        // E=5, d=3, D=6, A=4, V=9/11, two layers each, additive SA.
        let lstm = |i: usize, h: usize| 4 * h * (i + h + 1);
        let expected = (9 + 11) * 5
            + 2 * lstm(5, 3)
            + 2 * lstm(6, 3)
            + 2 * 2 * (6 * 6 + 6)
            + lstm(5, 6)
            + lstm(6, 6)
            + 11 * (6 + 6 + 1)
            + 4 * (6 + 6 + 2);
        assert_eq!(
            Seq2SeqModel::param_count(&tiny(AttentionKind::Sa)),
            expected
        );
        assert_eq!(
            Seq2SeqModel::param_count(&tiny(AttentionKind::Mqt)),
            expected + 1
        );
        assert_eq!(
            Seq2SeqModel::param_count(&tiny(AttentionKind::Aqt)),
            expected + 6
        );
    }

    #[test]
    fn mismatched_widths_fail_at_build_time() {
        let cfg = ModelConfig {
            encoder_direction_dim: Some(4),
            ..tiny(AttentionKind::Mqt)
        };
        assert!(matches!(
            Seq2SeqModel::new(cfg.clone(), 0),
            Err(Error::Config(_))
        ));
        let cfg = ModelConfig {
            project_state: true,
            ..cfg
        };
        let m = Seq2SeqModel::new(cfg.clone(), 0).unwrap();
        assert_eq!(m.params.scalar_count(), Seq2SeqModel::param_count(&cfg));
        assert!(m.loss(&[1, 4, 2], &[1, 5, 2]).unwrap().is_finite());
        let sa = ModelConfig {
            attention_kind: AttentionKind::Sa,
            project_state: false,
            ..cfg
        };
        assert!(Seq2SeqModel::new(sa, 0).is_ok());
    }

    #[test]
    fn zero_model_outputs_uniform_distribution() {
        let mut m = Seq2SeqModel::new(tiny(AttentionKind::Sa), 3).unwrap();
        zero_all(&mut m);
        let mut g = m.graph();
        let s = g.input(Tensor::vector(vec![0.3; 6]));
        let c = g.input(Tensor::vector(vec![-0.7; 6]));
        let lp = m.output_distribution(&mut g, s, c).unwrap();
        for &v in g.value(lp).data() {
            assert!((v + (11f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn output_distribution_matches_loop_evaluation() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Sa), 4).unwrap();
        let sv: Vec<f64> = (0..6).map(|i| (i as f64 * 0.37).sin()).collect();
        let cv: Vec<f64> = (0..6).map(|i| (i as f64 * 0.91).cos()).collect();
        let mut g = m.graph();
        let s = g.input(Tensor::vector(sv.clone()));
        let c = g.input(Tensor::vector(cv.clone()));
        let lp = m.output_distribution(&mut g, s, c).unwrap();
        let got = g.value(lp).data().to_vec();

        let w = m.params.value(m.output_weight);
        let b = m.params.value(m.output_bias);
        let x: Vec<f64> = sv.iter().chain(&cv).copied().collect();
        let mut logits = vec![0.0; 11];
        for (r, out) in logits.iter_mut().enumerate() {
            let mut acc = b.data()[r];
            for (k, xv) in x.iter().enumerate() {
                acc += w.get2(r, k) * xv;
            }
            *out = acc;
        }
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        for (a, l) in got.iter().zip(&logits) {
            assert!((a - (l - z.ln())).abs() < 1e-12);
        }
        let total: f64 = got.iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_model_loss_is_log_vocab() {
        for kind in [AttentionKind::Sa, AttentionKind::Mqt, AttentionKind::Aqt] {
            let mut m = Seq2SeqModel::new(tiny(kind), 5).unwrap();
            zero_all(&mut m);
            let loss = m.loss(&[1, 4, 5, 6, 2], &[1, 7, 8, 2]).unwrap();
            assert!((loss - (11f64).ln()).abs() < 1e-12, "{kind}: {loss}");
        }
    }

    #[test]
    fn target_padding_does_not_change_the_loss() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Mqt), 6).unwrap();
        let a = m.loss(&[1, 4, 5, 2], &[1, 7, 8, 2]).unwrap();
        let b = m.loss(&[1, 4, 5, 2], &[1, 7, 8, 2, PAD, PAD]).unwrap();
        assert_eq!(a, b);
        let c = m.loss(&[1, 4, 5, 2, PAD], &[1, 7, 8, 2]).unwrap();
        assert!((a - c).abs() < 1e-12);
    }

    #[test]
    fn empty_sequences_are_rejected() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Sa), 0).unwrap();
        assert!(m.loss(&[], &[1, 4, 2]).is_err());
        assert!(m.loss(&[1, 2], &[]).is_err());
        assert!(m.loss(&[1, 2], &[1]).is_err());
        assert!(matches!(
            m.loss(&[1, 99, 2], &[1, 4, 2]),
            Err(Error::Data(_))
        ));
    }

    #[test]
    fn sequence_log_probability_is_sum_of_stepwise_decoding() {
        let m = Seq2SeqModel::new(tiny(AttentionKind::Aqt), 8).unwrap();
        let src = [1, 4, 6, 3, 2];
        let tgt = [1, 9, 4, 10, 2];
        let mut g = m.graph();
        let tf = m
            .forward_teacher_forced(&mut g, &src, &tgt, &mut Mode::Eval)
            .unwrap();
        let mean = g.value(tf.loss).item();

        let mut session = m.session(&src).unwrap();
        let mut state = session.initial_state().unwrap();
        let mut total = 0.0;
        for i in 1..tgt.len() {
            let (lp, next) = session.step(&state, tgt[i - 1]).unwrap();
            total += lp[tgt[i]];
            state = next;
        }
        let summed: f64 = tf.gold_log_probs.iter().sum();
        assert!((summed - total).abs() < 1e-12);
        assert!((mean + total / 4.0).abs() < 1e-12);
    }

    #[test]
    fn disabled_pair_term_keeps_soft_attention_ranking() {
        let sa = Seq2SeqModel::new(tiny(AttentionKind::Sa), 21).unwrap();
        let mut mqt = Seq2SeqModel::new(tiny(AttentionKind::Mqt), 21).unwrap();
        let w_s = mqt.attention.pair.as_ref().unwrap().w_s;
        mqt.params.value_mut(w_s).data_mut().fill(0.0);
        for (id, name, value) in sa.params.iter() {
            assert_eq!(
                mqt.params.value(mqt.params.find(name).unwrap()),
                value,
                "{name}"
            );
            let _ = id;
        }
        let src = [1, 4, 8, 5, 6, 2];
        let tgt = [1, 3, 9, 10, 4, 2];
        let argmax = |w: &[f64]| {
            w.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0
        };
        let mut g1 = sa.graph();
        let a = sa
            .forward_teacher_forced(&mut g1, &src, &tgt, &mut Mode::Eval)
            .unwrap();
        let mut g2 = mqt.graph();
        let b = mqt
            .forward_teacher_forced(&mut g2, &src, &tgt, &mut Mode::Eval)
            .unwrap();
        for (wa, wb) in a.attention.iter().zip(&b.attention) {
            assert_eq!(argmax(wa), argmax(wb));
        }
    }

    #[test]
    fn dropout_only_acts_in_training() {
        let cfg = ModelConfig {
            dropout: 0.5,
            ..tiny(AttentionKind::Sa)
        };
        let m = Seq2SeqModel::new(cfg, 2).unwrap();
        let e1 = m.loss(&[1, 4, 2], &[1, 5, 2]).unwrap();
        let e2 = m.loss(&[1, 4, 2], &[1, 5, 2]).unwrap();
        assert_eq!(e1, e2);
        let mut g = m.graph();
        let mut mode = Mode::train(0.5, 9);
        let t = m
            .forward_teacher_forced(&mut g, &[1, 4, 2], &[1, 5, 2], &mut mode)
            .unwrap();
        assert_ne!(g.value(t.loss).item(), e1);
    }
}
