//! Attention over encoded source positions.
//!
//! Two families share this module:
//!
//! * soft attention (`Sa`): a categorical distribution `softmax(alpha_i)`
//!   over positions, where `alpha_ij` comes from an alignment scorer;
//! * attention density matrices (`Mqt`, `Aqt`): a symmetric `N x N` score
//!   matrix `Psi_i` whose diagonal holds the scorer output `alpha_ij` and
//!   whose off-diagonal entries score *pairs* of positions. The weights are
//!   `omega_i = softmax(mean_j Psi_i[j][k])` and the context is
//!   `c_i = sum_k omega_ik h_k`.
//!
//! Pair scores are built from the pair tensor `L[j][k] = tanh(h_j + h_k)`,
//! which depends only on the source and is therefore computed once per
//! sentence. Per decoding step the multiplicative scheme contracts it with
//! the decoder state, `M[j][k] = w_s <L[j][k], s_i>`, and the additive
//! scheme computes `M[j][k] = <tanh(L[j][k] + s_i), w_s>`. Both `L` and
//! `M` are evaluated over the upper triangle only.
//!
//! Positive semi-definiteness and unit trace are deliberately not imposed
//! on `Psi_i`.

use std::fmt;
use std::str::FromStr;

use crate::recurrent::{EncodedSource, INIT_BOUND};
use crate::rng::{uniform_vec, SplitMix64};
use crate::tensor::{Graph, ParamId, ParamStore, Result, Tensor, TensorError, Var, MASK_NEG};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    /// Classical soft attention.
    Sa,
    /// Density matrix with multiplicative pair scores.
    Mqt,
    /// Density matrix with additive pair scores.
    Aqt,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::Sa => "sa",
            AttentionKind::Mqt => "mqt",
            AttentionKind::Aqt => "aqt",
        }
    }

    pub fn uses_density_matrix(self) -> bool {
        !matches!(self, AttentionKind::Sa)
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AttentionKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "sa" => Ok(AttentionKind::Sa),
            "mqt" => Ok(AttentionKind::Mqt),
            "aqt" => Ok(AttentionKind::Aqt),
            other => Err(format!(
                "unknown attention kind '{other}' (expected sa, mqt or aqt)"
            )),
        }
    }
}

/// Scorer for the per-position alignment `alpha_ij` (the ADM diagonal).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScorerKind {
    /// `u^T tanh(W s_i + V h_j + b)`
    Additive,
    /// `<s_i, h_j>`
    Dot,
}

impl ScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScorerKind::Additive => "additive",
            ScorerKind::Dot => "dot",
        }
    }
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScorerKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "additive" => Ok(ScorerKind::Additive),
            "dot" => Ok(ScorerKind::Dot),
            other => Err(format!(
                "unknown scorer '{other}' (expected additive or dot)"
            )),
        }
    }
}

/// Parameters of the additive alignment scorer.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    /// `[A x D_s]`
    pub w_state: ParamId,
    /// `[D_h x A]`, applied as `H V`.
    pub v_source: ParamId,
    /// `[A]`
    pub bias: ParamId,
    /// `[A]`
    pub u: ParamId,
}

impl AlignmentParams {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        state_dim: usize,
        source_dim: usize,
        inner_dim: usize,
        rng: &mut SplitMix64,
    ) -> Self {
        let mut mat = |store: &mut ParamStore, suffix: &str, r: usize, c: usize| {
            store.add(
                format!("{name}.{suffix}"),
                Tensor::new(vec![r, c], uniform_vec(rng, r * c, INIT_BOUND)).expect("shape"),
            )
        };
        let w_state = mat(store, "w_state", inner_dim, state_dim);
        let v_source = mat(store, "v_source", source_dim, inner_dim);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(&[inner_dim]));
        let u = store.add(
            format!("{name}.u"),
            Tensor::vector(uniform_vec(rng, inner_dim, INIT_BOUND)),
        );
        Self {
            w_state,
            v_source,
            bias,
            u,
        }
    }

    /// `H V`, shape `[N x A]`. Independent of the decoder state.
    pub fn project_source(&self, g: &mut Graph<'_>, states: Var) -> Result<Var> {
        let v = g.param(self.v_source);
        g.matmul(states, v)
    }

    /// Scores from a precomputed [`project_source`](Self::project_source).
    pub fn scores_projected(&self, g: &mut Graph<'_>, s: Var, projected: Var) -> Result<Var> {
        let w = g.param(self.w_state);
        let b = g.param(self.bias);
        let u = g.param(self.u);
        let ws = g.matvec(w, s)?;
        let shift = g.add(ws, b)?;
        let pre = g.add_row_broadcast(projected, shift)?;
        let act = g.tanh(pre);
        g.matvec(act, u)
    }
}

/// Adds the `-inf` surrogate at masked positions.
fn apply_mask(g: &mut Graph<'_>, scores: Var, mask: &[bool]) -> Result<Var> {
    if mask.iter().all(|&v| v) {
        return Ok(scores);
    }
    let offsets = mask
        .iter()
        .map(|&v| if v { 0.0 } else { MASK_NEG })
        .collect();
    let offsets = g.input(Tensor::vector(offsets));
    g.add(scores, offsets)
}

/// Raw additive alignment scores `alpha_ij` for every source position.
/// Masked positions carry the `-inf` surrogate.
pub fn additive_scores(
    g: &mut Graph<'_>,
    s: Var,
    src: &EncodedSource,
    params: &AlignmentParams,
) -> Result<Var> {
    let projected = params.project_source(g, src.states)?;
    let raw = params.scores_projected(g, s, projected)?;
    apply_mask(g, raw, &src.mask)
}

/// Dot-product alignment scores `<s, h_j>`, masked like
/// [`additive_scores`].
pub fn dot_scores(g: &mut Graph<'_>, s: Var, src: &EncodedSource) -> Result<Var> {
    let raw = g.matvec(src.states, s)?;
    apply_mask(g, raw, &src.mask)
}

/// Classical soft attention from raw scores: returns `(c_i, a_i)`.
pub fn soft_attention_from_scores(
    g: &mut Graph<'_>,
    scores: Var,
    src: &EncodedSource,
) -> Result<(Var, Var)> {
    let weights = g.softmax(scores, Some(&src.mask))?;
    let context = g.vecmat(weights, src.states)?;
    Ok((context, weights))
}

/// Soft attention with the additive scorer: returns `(c_i, a_i)`.
pub fn soft_attention_context(
    g: &mut Graph<'_>,
    s: Var,
    src: &EncodedSource,
    params: &AlignmentParams,
) -> Result<(Var, Var)> {
    let scores = additive_scores(g, s, src, params)?;
    soft_attention_from_scores(g, scores, src)
}

/// `L[j][k] = tanh(h_j + h_k)`, upper triangle only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairTensor {
    /// Packed `[N(N+1)/2 x D]` value; see [`crate::tensor::Graph::pair_tanh`].
    pub packed: Var,
    pub n: usize,
    pub dim: usize,
}

impl PairTensor {
    /// Feature vector of pair `(j, k)`; `(k, j)` aliases the same storage.
    pub fn pair<'a>(&self, g: &'a Graph<'_>, j: usize, k: usize) -> &'a [f64] {
        let idx = crate::tensor::packed_index(self.n, j, k);
        g.value(self.packed).row(idx)
    }
}

pub fn build_pair_tensor(g: &mut Graph<'_>, src: &EncodedSource) -> Result<PairTensor> {
    let packed = g.pair_tanh(src.states)?;
    let shape = g.shape(src.states);
    Ok(PairTensor {
        packed,
        n: shape[0],
        dim: shape[1],
    })
}

/// Multiplicative pair scores, `M[j][k] = w_s <L[j][k], s>` (`w_s` scalar).
pub fn mqt_offdiagonals(g: &mut Graph<'_>, pairs: &PairTensor, s: Var, w_s: Var) -> Result<Var> {
    g.mqt(pairs.packed, s, w_s)
}

/// Additive pair scores, `M[j][k] = <tanh(L[j][k] + s), w_s>` (`w_s`
/// a vector). Since `L` is itself a `tanh`, entries are
/// `tanh(tanh(h_j + h_k) + s)` contracted with `w_s`.
pub fn aqt_offdiagonals(g: &mut Graph<'_>, pairs: &PairTensor, s: Var, w_s: Var) -> Result<Var> {
    g.aqt(pairs.packed, s, w_s)
}

/// Per-step attention density matrix `Psi_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDensityMatrix {
    pub psi: Var,
    pub step: usize,
    pub mask: Vec<bool>,
}

/// Lays out `Psi_i`: the diagonal from `diag_scores`, off-diagonal entries
/// from the symmetric `m`. The diagonal of `m` is dropped.
pub fn build_adm(
    g: &mut Graph<'_>,
    diag_scores: Var,
    m: Var,
    mask: &[bool],
    step: usize,
) -> Result<AttentionDensityMatrix> {
    let n = g.shape(m).first().copied().unwrap_or(0);
    if mask.len() != n {
        return Err(TensorError::Shape {
            op: "build_adm",
            left: vec![n],
            right: vec![mask.len()],
        });
    }
    let psi = g.set_diagonal(m, diag_scores)?;
    Ok(AttentionDensityMatrix {
        psi,
        step,
        mask: mask.to_vec(),
    })
}

/// `omega_i = softmax_k(mean_{valid j} Psi_i[j][k])` over valid `k`, and
/// `c_i = H omega_i`. Returns `(c_i, omega_i)`.
pub fn adm_context(
    g: &mut Graph<'_>,
    adm: &AttentionDensityMatrix,
    src: &EncodedSource,
) -> Result<(Var, Var)> {
    if adm.mask != src.mask {
        return Err(TensorError::InvalidMask);
    }
    let means = g.mean_over_rows(adm.psi, Some(&adm.mask))?;
    let weights = g.softmax(means, Some(&adm.mask))?;
    let context = g.vecmat(weights, src.states)?;
    Ok((context, weights))
}

/// Pair-scoring parameters of the density-matrix variants.
#[derive(Debug, Clone, PartialEq)]
pub struct PairParams {
    /// `[1]` for MQT, `[D_h]` for AQT.
    pub w_s: ParamId,
}

/// One attention head as used by the decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionHead {
    pub kind: AttentionKind,
    pub scorer: ScorerKind,
    pub alignment: Option<AlignmentParams>,
    pub pair: Option<PairParams>,
    /// Optional `[D_h x D_s]` map bringing the decoder state into the
    /// encoding space for the dot scorer and the pair schemes.
    pub projection: Option<ParamId>,
}

/// Shapes needed to build an [`AttentionHead`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadShape {
    pub state_dim: usize,
    pub source_dim: usize,
    pub inner_dim: usize,
    pub project_state: bool,
}

impl AttentionHead {
    /// Fails with a description when the decoder state and encodings have
    /// different widths, the configuration needs them equal, and no
    /// projection was requested.
    pub fn new(
        store: &mut ParamStore,
        kind: AttentionKind,
        scorer: ScorerKind,
        shape: HeadShape,
        rng: &mut SplitMix64,
    ) -> std::result::Result<Self, String> {
        let needs_match = kind.uses_density_matrix() || scorer == ScorerKind::Dot;
        if needs_match && shape.state_dim != shape.source_dim && !shape.project_state {
            return Err(format!(
                "{kind} attention with the {scorer} scorer needs decoder width {} to equal \
                 encoding width {} (or enable project_state)",
                shape.state_dim, shape.source_dim
            ));
        }
        let alignment = (scorer == ScorerKind::Additive).then(|| {
            AlignmentParams::new(
                store,
                "attention.align",
                shape.state_dim,
                shape.source_dim,
                shape.inner_dim,
                rng,
            )
        });
        let projection = (needs_match && shape.project_state).then(|| {
            let (r, c) = (shape.source_dim, shape.state_dim);
            store.add(
                "attention.projection",
                Tensor::new(vec![r, c], uniform_vec(rng, r * c, INIT_BOUND)).expect("shape"),
            )
        });
        let pair = match kind {
            AttentionKind::Sa => None,
            AttentionKind::Mqt => Some(PairParams {
                w_s: store.add(
                    "attention.w_s",
                    Tensor::vector(uniform_vec(rng, 1, INIT_BOUND)),
                ),
            }),
            AttentionKind::Aqt => Some(PairParams {
                w_s: store.add(
                    "attention.w_s",
                    Tensor::vector(uniform_vec(rng, shape.source_dim, INIT_BOUND)),
                ),
            }),
        };
        Ok(Self {
            kind,
            scorer,
            alignment,
            pair,
            projection,
        })
    }

    /// Number of scalars the head registers for `shape`.
    pub fn param_count(kind: AttentionKind, scorer: ScorerKind, shape: HeadShape) -> usize {
        let needs_match = kind.uses_density_matrix() || scorer == ScorerKind::Dot;
        let align = match scorer {
            ScorerKind::Additive => shape.inner_dim * (shape.state_dim + shape.source_dim + 2),
            ScorerKind::Dot => 0,
        };
        let proj = if needs_match && shape.project_state {
            shape.source_dim * shape.state_dim
        } else {
            0
        };
        let pair = match kind {
            AttentionKind::Sa => 0,
            AttentionKind::Mqt => 1,
            AttentionKind::Aqt => shape.source_dim,
        };
        align + proj + pair
    }

    /// Source-only precomputation shared by every decoding step.
    pub fn prepare(&self, g: &mut Graph<'_>, src: &EncodedSource) -> Result<PreparedSource> {
        let projected = match &self.alignment {
            Some(a) => Some(a.project_source(g, src.states)?),
            None => None,
        };
        let pairs = if self.kind.uses_density_matrix() {
            Some(build_pair_tensor(g, src)?)
        } else {
            None
        };
        Ok(PreparedSource {
            source: src.clone(),
            projected,
            pairs,
        })
    }

    /// Attention for decoder state `s` at decoding step `step`.
    pub fn attend(
        &self,
        g: &mut Graph<'_>,
        prepared: &PreparedSource,
        s: Var,
        step: usize,
    ) -> Result<AttentionOutput> {
        let src = &prepared.source;
        let s_src = match self.projection {
            Some(p) => {
                let p = g.param(p);
                g.matvec(p, s)?
            }
            None => s,
        };
        let raw = match (&self.alignment, prepared.projected) {
            (Some(a), Some(projected)) => a.scores_projected(g, s, projected)?,
            _ => g.matvec(src.states, s_src)?,
        };
        let scores = apply_mask(g, raw, &src.mask)?;

        match (self.kind, &self.pair, &prepared.pairs) {
            (AttentionKind::Sa, _, _) => {
                let (context, weights) = soft_attention_from_scores(g, scores, src)?;
                Ok(AttentionOutput {
                    context,
                    weights,
                    scores,
                    adm: None,
                })
            }
            (kind, Some(pair), Some(pairs)) => {
                let w = g.param(pair.w_s);
                let m = match kind {
                    AttentionKind::Mqt => mqt_offdiagonals(g, pairs, s_src, w)?,
                    _ => aqt_offdiagonals(g, pairs, s_src, w)?,
                };
                let adm = build_adm(g, scores, m, &src.mask, step)?;
                let (context, weights) = adm_context(g, &adm, src)?;
                Ok(AttentionOutput {
                    context,
                    weights,
                    scores,
                    adm: Some(adm),
                })
            }
            _ => Err(TensorError::Empty("attention pair state")),
        }
    }
}

/// Source-side values reused across decoding steps.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSource {
    pub source: EncodedSource,
    /// `H V` of the additive scorer.
    pub projected: Option<Var>,
    pub pairs: Option<PairTensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub context: Var,
    /// `a_i` for soft attention, `omega_i` for density matrices.
    pub weights: Var,
    /// Masked alignment scores `alpha_i`.
    pub scores: Var,
    pub adm: Option<AttentionDensityMatrix>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn source(g: &mut Graph<'_>, rows: &[Vec<f64>], mask: &[bool]) -> EncodedSource {
        let states = g.input(Tensor::from_rows(rows).unwrap());
        EncodedSource {
            states,
            mask: mask.to_vec(),
            summaries: Vec::new(),
        }
    }

    fn random_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..n).map(|_| uniform_vec(&mut rng, d, 1.0)).collect()
    }

    #[test]
    fn kinds_parse_case_insensitively() {
        assert_eq!("MQT".parse::<AttentionKind>().unwrap(), AttentionKind::Mqt);
        assert_eq!("sa".parse::<AttentionKind>().unwrap(), AttentionKind::Sa);
        assert!("bahdanau".parse::<AttentionKind>().is_err());
        assert_eq!("dot".parse::<ScorerKind>().unwrap(), ScorerKind::Dot);
    }

    #[test]
    fn zero_u_gives_zero_scores() {
        let mut store = ParamStore::new();
        let p = AlignmentParams::new(&mut store, "a", 3, 4, 5, &mut seeded(1));
        store.value_mut(p.u).data_mut().fill(0.0);
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(3, 4, 2), &[true; 3]);
        let s = g.input(Tensor::vector(vec![0.4, -0.1, 0.9]));
        let scores = additive_scores(&mut g, s, &src, &p).unwrap();
        assert_eq!(g.value(scores).data(), &[0.0; 3]);
    }

    #[test]
    fn single_position_gets_all_the_weight() {
        let mut store = ParamStore::new();
        let p = AlignmentParams::new(&mut store, "a", 3, 4, 5, &mut seeded(1));
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(1, 4, 2), &[true]);
        let s = g.input(Tensor::vector(vec![0.4, -0.1, 0.9]));
        let (_, a) = soft_attention_context(&mut g, s, &src, &p).unwrap();
        assert_eq!(g.value(a).data(), &[1.0]);
    }

    #[test]
    fn masked_scores_carry_the_surrogate() {
        let mut store = ParamStore::new();
        let p = AlignmentParams::new(&mut store, "a", 3, 4, 5, &mut seeded(1));
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(3, 4, 2), &[true, true, false]);
        let s = g.input(Tensor::vector(vec![0.4, -0.1, 0.9]));
        let scores = additive_scores(&mut g, s, &src, &p).unwrap();
        assert!(g.value(scores).data()[2] < -1e29);
        let (_, a) = soft_attention_context(&mut g, s, &src, &p).unwrap();
        assert_eq!(g.value(a).data()[2], 0.0);
    }

    #[test]
    fn all_masked_source_is_an_error() {
        let mut store = ParamStore::new();
        let p = AlignmentParams::new(&mut store, "a", 3, 4, 5, &mut seeded(1));
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(2, 4, 2), &[false, false]);
        let s = g.input(Tensor::vector(vec![0.4, -0.1, 0.9]));
        assert_eq!(
            soft_attention_context(&mut g, s, &src, &p).unwrap_err(),
            TensorError::InvalidMask
        );
    }

    #[test]
    fn equal_scores_average_the_encodings() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let rows = vec![vec![1.0, 0.0], vec![0.0, 3.0], vec![2.0, 6.0]];
        let src = source(&mut g, &rows, &[true; 3]);
        let scores = g.input(Tensor::vector(vec![0.5; 3]));
        let (c, _) = soft_attention_from_scores(&mut g, scores, &src).unwrap();
        let c = g.value(c).data();
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!((c[1] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn dominant_score_selects_its_encoding() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let rows = random_rows(4, 3, 5);
        let src = source(&mut g, &rows, &[true; 4]);
        let scores = g.input(Tensor::vector(vec![0.1, 40.0, -0.3, 0.2]));
        let (c, _) = soft_attention_from_scores(&mut g, scores, &src).unwrap();
        for (a, b) in g.value(c).data().iter().zip(&rows[1]) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn pair_tensor_basics() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let zero = source(&mut g, &vec![vec![0.0; 3]; 3], &[true; 3]);
        let l0 = build_pair_tensor(&mut g, &zero).unwrap();
        assert!(g.value(l0.packed).data().iter().all(|&v| v == 0.0));

        let rows = random_rows(4, 3, 7);
        let src = source(&mut g, &rows, &[true; 4]);
        let l = build_pair_tensor(&mut g, &src).unwrap();
        for (j, row) in rows.iter().enumerate() {
            let diag: Vec<f64> = row.iter().map(|x| (2.0 * x).tanh()).collect();
            assert_eq!(l.pair(&g, j, j), diag.as_slice());
            for k in 0..4 {
                assert_eq!(l.pair(&g, j, k), l.pair(&g, k, j));
                assert!(l.pair(&g, j, k).iter().all(|v| v.abs() < 1.0));
            }
        }
    }

    #[test]
    fn zero_weight_or_state_gives_zero_pair_scores() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(3, 4, 7), &[true; 3]);
        let l = build_pair_tensor(&mut g, &src).unwrap();
        let s = g.input(Tensor::vector(vec![0.3, -0.2, 0.5, 0.1]));
        let zero_s = g.input(Tensor::vector(vec![0.0; 4]));
        let w = g.input(Tensor::vector(vec![0.7]));
        let zero_w = g.input(Tensor::vector(vec![0.0]));
        let zero_wv = g.input(Tensor::vector(vec![0.0; 4]));
        for m in [
            mqt_offdiagonals(&mut g, &l, s, zero_w).unwrap(),
            mqt_offdiagonals(&mut g, &l, zero_s, w).unwrap(),
            aqt_offdiagonals(&mut g, &l, s, zero_wv).unwrap(),
        ] {
            assert!(g.value(m).data().iter().all(|&v| v == 0.0));
        }
        let zero_src = source(&mut g, &vec![vec![0.0; 4]; 3], &[true; 3]);
        let l0 = build_pair_tensor(&mut g, &zero_src).unwrap();
        let wv = g.input(Tensor::vector(vec![0.5; 4]));
        let m = aqt_offdiagonals(&mut g, &l0, zero_s, wv).unwrap();
        assert!(g.value(m).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adm_layout() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let diag = g.input(Tensor::vector(vec![1.5, -2.0]));
        let m = g.input(Tensor::matrix(2, 2, vec![9.0, 0.25, 0.25, 9.0]).unwrap());
        let adm = build_adm(&mut g, diag, m, &[true, true], 0).unwrap();
        assert_eq!(g.value(adm.psi).data(), &[1.5, 0.25, 0.25, -2.0]);

        let zero = g.input(Tensor::zeros(&[2, 2]));
        let adm = build_adm(&mut g, diag, zero, &[true, true], 1).unwrap();
        assert_eq!(g.value(adm.psi).data(), &[1.5, 0.0, 0.0, -2.0]);
    }

    #[test]
    fn constant_adm_gives_uniform_weights() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let rows = random_rows(4, 3, 9);
        let mask = [true, true, true, false];
        let src = source(&mut g, &rows, &mask);
        let diag = g.input(Tensor::vector(vec![0.4; 4]));
        let m = g.input(Tensor::matrix(4, 4, vec![0.4; 16]).unwrap());
        let adm = build_adm(&mut g, diag, m, &mask, 0).unwrap();
        let (c, w) = adm_context(&mut g, &adm, &src).unwrap();
        let w = g.value(w).data();
        for &x in &w[..3] {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(w[3], 0.0);
        for (d, cv) in g.value(c).data().iter().enumerate() {
            let mean = (rows[0][d] + rows[1][d] + rows[2][d]) / 3.0;
            assert!((cv - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn head_requires_matching_widths_for_pair_schemes() {
        let mut store = ParamStore::new();
        let shape = HeadShape {
            state_dim: 6,
            source_dim: 4,
            inner_dim: 3,
            project_state: false,
        };
        let err = AttentionHead::new(
            &mut store,
            AttentionKind::Mqt,
            ScorerKind::Additive,
            shape,
            &mut seeded(1),
        )
        .unwrap_err();
        assert!(err.contains("project_state"));
        assert!(AttentionHead::new(
            &mut store,
            AttentionKind::Sa,
            ScorerKind::Additive,
            shape,
            &mut seeded(1)
        )
        .is_ok());
        let projected = HeadShape {
            project_state: true,
            ..shape
        };
        let mut store = ParamStore::new();
        let head = AttentionHead::new(
            &mut store,
            AttentionKind::Aqt,
            ScorerKind::Additive,
            projected,
            &mut seeded(1),
        )
        .unwrap();
        assert!(head.projection.is_some());
        assert_eq!(
            store.scalar_count(),
            AttentionHead::param_count(AttentionKind::Aqt, ScorerKind::Additive, projected)
        );
    }

    #[test]
    fn head_with_projection_attends_with_mismatched_widths() {
        let mut store = ParamStore::new();
        let shape = HeadShape {
            state_dim: 5,
            source_dim: 4,
            inner_dim: 3,
            project_state: true,
        };
        let head = AttentionHead::new(
            &mut store,
            AttentionKind::Mqt,
            ScorerKind::Dot,
            shape,
            &mut seeded(3),
        )
        .unwrap();
        let mut g = Graph::new(&store);
        let src = source(&mut g, &random_rows(3, 4, 1), &[true; 3]);
        let prepared = head.prepare(&mut g, &src).unwrap();
        let s = g.input(Tensor::vector(vec![0.1, 0.2, 0.3, 0.4, 0.5]));
        let out = head.attend(&mut g, &prepared, s, 0).unwrap();
        assert_eq!(g.shape(out.context), &[4]);
        let total: f64 = g.value(out.weights).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
