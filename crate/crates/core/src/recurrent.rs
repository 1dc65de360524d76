//! LSTM cells, a stacked unidirectional decoder and a stacked bidirectional
//! encoder.
//!
//! Gate layout inside the fused weight matrices is `[input, forget,
//! candidate, output]`, each block `hidden_dim` rows tall.

use crate::dropout::Mode;
use crate::rng::{uniform_vec, SplitMix64};
use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var};

/// Bound of the uniform weight initialisation.
pub const INIT_BOUND: f64 = 0.08;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[4H x input_dim]`
    pub w_input: ParamId,
    /// `[4H x H]`
    pub w_hidden: ParamId,
    /// `[4H]`
    pub bias: ParamId,
}

impl LstmCell {
    /// Registers a cell. Weights are uniform in `±INIT_BOUND`, biases zero
    /// except the forget block, which starts at 1.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let rows = 4 * hidden_dim;
        let w_input = store.add(
            format!("{name}.w_input"),
            Tensor::new(
                vec![rows, input_dim],
                uniform_vec(rng, rows * input_dim, INIT_BOUND),
            )
            .expect("shape"),
        );
        let w_hidden = store.add(
            format!("{name}.w_hidden"),
            Tensor::new(
                vec![rows, hidden_dim],
                uniform_vec(rng, rows * hidden_dim, INIT_BOUND),
            )
            .expect("shape"),
        );
        let mut bias = vec![0.0; rows];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::vector(bias));
        Self {
            input_dim,
            hidden_dim,
            w_input,
            w_hidden,
            bias,
        }
    }

    pub fn param_count(input_dim: usize, hidden_dim: usize) -> usize {
        4 * hidden_dim * (input_dim + hidden_dim + 1)
    }

    /// One recurrence step; returns the new `(h, c)`.
    pub fn step(&self, g: &mut Graph<'_>, x: Var, h_prev: Var, c_prev: Var) -> Result<(Var, Var)> {
        let hd = self.hidden_dim;
        for (v, want) in [(x, self.input_dim), (h_prev, hd), (c_prev, hd)] {
            let shape = g.shape(v);
            if shape != [want] {
                return Err(TensorError::Shape {
                    op: "lstm_step",
                    left: vec![want],
                    right: shape.to_vec(),
                });
            }
        }
        let (wi, wh, b) = (
            g.param(self.w_input),
            g.param(self.w_hidden),
            g.param(self.bias),
        );
        let zx = g.matvec(wi, x)?;
        let zh = g.matvec(wh, h_prev)?;
        let z = g.add_n(&[zx, zh, b])?;

        let i_pre = g.slice(z, 0, hd)?;
        let f_pre = g.slice(z, hd, hd)?;
        let g_pre = g.slice(z, 2 * hd, hd)?;
        let o_pre = g.slice(z, 3 * hd, hd)?;
        let input_gate = g.sigmoid(i_pre);
        let forget_gate = g.sigmoid(f_pre);
        let candidate = g.tanh(g_pre);
        let output_gate = g.sigmoid(o_pre);

        let kept = g.mul(forget_gate, c_prev)?;
        let written = g.mul(input_gate, candidate)?;
        let c = g.add(kept, written)?;
        let squashed = g.tanh(c);
        let h = g.mul(output_gate, squashed)?;
        Ok((h, c))
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> (Var, Var) {
        let h = g.input(Tensor::zeros(&[self.hidden_dim]));
        let c = g.input(Tensor::zeros(&[self.hidden_dim]));
        (h, c)
    }
}

/// Per-layer `(h, c)` of a stacked LSTM.
#[derive(Debug, Clone, PartialEq)]
pub struct StackState {
    pub layers: Vec<(Var, Var)>,
}

impl StackState {
    /// Hidden state of the top layer.
    pub fn top(&self) -> Var {
        self.layers.last().expect("non-empty stack").0
    }
}

/// Stacked unidirectional LSTM used as the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmStack {
    pub layers: Vec<LstmCell>,
}

impl LstmStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let inp = if l == 0 { input_dim } else { hidden_dim };
                LstmCell::new(store, &format!("{name}.{l}"), inp, hidden_dim, rng)
            })
            .collect();
        Self { layers }
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers[0].hidden_dim
    }

    pub fn zero_state(&self, g: &mut Graph<'_>) -> StackState {
        StackState {
            layers: self.layers.iter().map(|c| c.zero_state(g)).collect(),
        }
    }

    /// Advances every layer by one step. Returns the top hidden state and
    /// the new state. Dropout from `mode` is applied to the input of each
    /// layer above the first.
    pub fn step(
        &self,
        g: &mut Graph<'_>,
        x: Var,
        state: &StackState,
        mode: &mut Mode,
    ) -> Result<(Var, StackState)> {
        if state.layers.len() != self.layers.len() {
            return Err(TensorError::Shape {
                op: "decode_step",
                left: vec![self.layers.len()],
                right: vec![state.layers.len()],
            });
        }
        let mut input = x;
        let mut next = Vec::with_capacity(self.layers.len());
        for (l, (cell, &(h, c))) in self.layers.iter().zip(&state.layers).enumerate() {
            if l > 0 {
                input = mode.dropout(g, input)?;
            }
            let (h2, c2) = cell.step(g, input, h, c)?;
            next.push((h2, c2));
            input = h2;
        }
        Ok((input, StackState { layers: next }))
    }
}

/// Encoder output: one row of `states` per source position.
///
/// `states` has shape `[N, D_h]`; row `j` is `h_j = [forward_j; backward_j]`
/// of the top layer. Rows of invalid (padding) positions are zero and must
/// not be read by attention.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    pub states: Var,
    pub mask: Vec<bool>,
    /// Per encoder layer: `[final forward state; first-position backward
    /// state]`, the two ends of the sequence summaries.
    pub summaries: Vec<Var>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn valid_len(&self) -> usize {
        self.mask.iter().filter(|&&v| v).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmEncoder {
    pub forward: Vec<LstmCell>,
    pub backward: Vec<LstmCell>,
}

impl BiLstmEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        direction_dim: usize,
        num_layers: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let mut forward = Vec::with_capacity(num_layers);
        let mut backward = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let inp = if l == 0 { input_dim } else { 2 * direction_dim };
            forward.push(LstmCell::new(
                store,
                &format!("{name}.fwd.{l}"),
                inp,
                direction_dim,
                rng,
            ));
            backward.push(LstmCell::new(
                store,
                &format!("{name}.bwd.{l}"),
                inp,
                direction_dim,
                rng,
            ));
        }
        Self { forward, backward }
    }

    pub fn direction_dim(&self) -> usize {
        self.forward[0].hidden_dim
    }

    /// Width of an encoding, `2 x direction_dim`.
    pub fn output_dim(&self) -> usize {
        2 * self.direction_dim()
    }

    /// Encodes embedded tokens. `mask[j]` marks real tokens; padding must
    /// come after every real token. Both directions only see the real
    /// prefix, so padded and unpadded inputs give identical valid rows.
    pub fn encode(
        &self,
        g: &mut Graph<'_>,
        inputs: &[Var],
        mask: &[bool],
        mode: &mut Mode,
    ) -> Result<EncodedSource> {
        if inputs.len() != mask.len() {
            return Err(TensorError::Shape {
                op: "encode",
                left: vec![inputs.len()],
                right: vec![mask.len()],
            });
        }
        let len = mask.iter().take_while(|&&v| v).count();
        if len == 0 {
            return Err(TensorError::Empty("encode"));
        }
        if mask[len..].iter().any(|&v| v) {
            return Err(TensorError::InvalidMask);
        }

        let mut layer_inputs: Vec<Var> = inputs[..len].to_vec();
        let mut summaries = Vec::with_capacity(self.forward.len());
        for (l, (fcell, bcell)) in self.forward.iter().zip(&self.backward).enumerate() {
            if l > 0 {
                for x in &mut layer_inputs {
                    *x = mode.dropout(g, *x)?;
                }
            }
            let fwd = run_direction(g, fcell, layer_inputs.iter().copied())?;
            let mut bwd = run_direction(g, bcell, layer_inputs.iter().rev().copied())?;
            bwd.reverse();
            summaries.push(g.concat(&[fwd[len - 1], bwd[0]])?);
            layer_inputs = fwd
                .iter()
                .zip(&bwd)
                .map(|(&f, &b)| g.concat(&[f, b]))
                .collect::<Result<_>>()?;
        }

        let mut rows = layer_inputs;
        if len < mask.len() {
            let pad = g.input(Tensor::zeros(&[self.output_dim()]));
            rows.resize(mask.len(), pad);
        }
        let states = g.stack_rows(&rows)?;
        Ok(EncodedSource {
            states,
            mask: mask.to_vec(),
            summaries,
        })
    }
}

fn run_direction(
    g: &mut Graph<'_>,
    cell: &LstmCell,
    inputs: impl Iterator<Item = Var>,
) -> Result<Vec<Var>> {
    let (mut h, mut c) = cell.zero_state(g);
    let mut out = Vec::new();
    for x in inputs {
        (h, c) = cell.step(g, x, h, c)?;
        out.push(h);
    }
    Ok(out)
}
