//! Plain-loop reimplementations of the attention computations, and a
//! random instance generator to drive both them and the library.

use admnmt::attention::{
    additive_scores, adm_context, aqt_offdiagonals, build_adm, build_pair_tensor, mqt_offdiagonals,
    soft_attention_from_scores, AlignmentParams,
};
use admnmt::recurrent::EncodedSource;
use admnmt::tensor::{Graph, ParamStore, Tensor};
use rand::Rng;

/// One attention problem: `n` positions of which the first `valid` are
/// real, widths `d` (state and encoding) and `a` (alignment).
#[derive(Debug, Clone)]
pub struct Instance {
    pub n: usize,
    pub valid: usize,
    pub d: usize,
    pub a: usize,
    pub h: Vec<Vec<f64>>,
    pub s: Vec<f64>,
    pub w_state: Vec<Vec<f64>>,
    pub v_source: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub u: Vec<f64>,
    pub w_mqt: f64,
    pub w_aqt: Vec<f64>,
}

fn draw(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

impl Instance {
    pub fn random(rng: &mut impl Rng) -> Self {
        let n = rng.random_range(1..=7);
        let valid = rng.random_range(1..=n);
        let d = rng.random_range(1..=5);
        let a = rng.random_range(1..=4);
        let h = (0..n)
            .map(|j| {
                if j < valid {
                    draw(rng, d, 1.5)
                } else {
                    vec![0.0; d]
                }
            })
            .collect();
        Self {
            n,
            valid,
            d,
            a,
            h,
            s: draw(rng, d, 1.5),
            w_state: (0..a).map(|_| draw(rng, d, 1.0)).collect(),
            v_source: (0..d).map(|_| draw(rng, a, 1.0)).collect(),
            bias: draw(rng, a, 0.5),
            u: draw(rng, a, 2.0),
            w_mqt: rng.random_range(-2.0..=2.0),
            w_aqt: draw(rng, d, 2.0),
        }
    }

    pub fn mask(&self) -> Vec<bool> {
        (0..self.n).map(|j| j < self.valid).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Soft,
    Mqt,
    Aqt,
}

/// What the library computes for an instance.
#[derive(Debug, Clone)]
pub struct Computed {
    pub scores: Vec<f64>,
    /// Row-major `n x n`; empty for soft attention.
    pub offdiag: Vec<f64>,
    pub psi: Vec<f64>,
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
}

fn rows(v: &[Vec<f64>]) -> Tensor {
    Tensor::from_rows(v).unwrap()
}

pub fn library(inst: &Instance, scheme: Scheme) -> Computed {
    let mut store = ParamStore::new();
    let align = AlignmentParams {
        w_state: store.add("w_state", rows(&inst.w_state)),
        v_source: store.add("v_source", rows(&inst.v_source)),
        bias: store.add("bias", Tensor::vector(inst.bias.clone())),
        u: store.add("u", Tensor::vector(inst.u.clone())),
    };
    let w_id = match scheme {
        Scheme::Aqt => store.add("w_s", Tensor::vector(inst.w_aqt.clone())),
        _ => store.add("w_s", Tensor::vector(vec![inst.w_mqt])),
    };
    let mut g = Graph::new(&store);
    let src = EncodedSource {
        states: g.input(rows(&inst.h)),
        mask: inst.mask(),
        summaries: Vec::new(),
    };
    let s = g.input(Tensor::vector(inst.s.clone()));
    let scores = additive_scores(&mut g, s, &src, &align).unwrap();
    let read = |g: &Graph<'_>, v| g.value(v).data().to_vec();
    if scheme == Scheme::Soft {
        let (c, w) = soft_attention_from_scores(&mut g, scores, &src).unwrap();
        return Computed {
            scores: read(&g, scores),
            offdiag: Vec::new(),
            psi: Vec::new(),
            weights: read(&g, w),
            context: read(&g, c),
        };
    }
    let pairs = build_pair_tensor(&mut g, &src).unwrap();
    let w = g.param(w_id);
    let m = match scheme {
        Scheme::Mqt => mqt_offdiagonals(&mut g, &pairs, s, w).unwrap(),
        _ => aqt_offdiagonals(&mut g, &pairs, s, w).unwrap(),
    };
    let adm = build_adm(&mut g, scores, m, &src.mask, 0).unwrap();
    let (c, weights) = adm_context(&mut g, &adm, &src).unwrap();
    Computed {
        scores: read(&g, scores),
        offdiag: read(&g, m),
        psi: read(&g, adm.psi),
        weights: read(&g, weights),
        context: read(&g, c),
    }
}

/// `u . tanh(W s + V^T h_j + b)` for each valid position.
pub fn loop_scores(inst: &Instance) -> Vec<f64> {
    (0..inst.valid)
        .map(|j| {
            let mut total = 0.0;
            for r in 0..inst.a {
                let mut pre = inst.bias[r];
                for i in 0..inst.d {
                    pre += inst.w_state[r][i] * inst.s[i];
                    pre += inst.h[j][i] * inst.v_source[i][r];
                }
                total += inst.u[r] * pre.tanh();
            }
            total
        })
        .collect()
}

fn pair_feature(inst: &Instance, j: usize, k: usize, i: usize) -> f64 {
    (inst.h[j][i] + inst.h[k][i]).tanh()
}

/// Pair scores over all positions, row-major.
pub fn loop_offdiag(inst: &Instance, scheme: Scheme) -> Vec<f64> {
    let mut out = vec![0.0; inst.n * inst.n];
    for j in 0..inst.n {
        for k in 0..inst.n {
            let mut acc = 0.0;
            for i in 0..inst.d {
                let l = pair_feature(inst, j, k, i);
                acc += match scheme {
                    Scheme::Mqt => l * inst.s[i],
                    Scheme::Aqt => inst.w_aqt[i] * (l + inst.s[i]).tanh(),
                    Scheme::Soft => 0.0,
                };
            }
            if scheme == Scheme::Mqt {
                acc *= inst.w_mqt;
            }
            out[j * inst.n + k] = acc;
        }
    }
    out
}

fn loop_softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|x| x / z).collect()
}

fn mix(inst: &Instance, weights: &[f64]) -> Vec<f64> {
    (0..inst.d)
        .map(|i| (0..weights.len()).map(|k| weights[k] * inst.h[k][i]).sum())
        .collect()
}

/// Soft attention over the valid prefix: `(weights, context)`.
pub fn loop_soft(inst: &Instance) -> (Vec<f64>, Vec<f64>) {
    let w = loop_softmax(&loop_scores(inst));
    let c = mix(inst, &w);
    (w, c)
}

/// Density-matrix attention over the valid prefix: `(weights, context)`.
pub fn loop_adm(inst: &Instance, scheme: Scheme) -> (Vec<f64>, Vec<f64>) {
    let scores = loop_scores(inst);
    let m = loop_offdiag(inst, scheme);
    let v = inst.valid;
    let means: Vec<f64> = (0..v)
        .map(|k| {
            let col: f64 = (0..v)
                .map(|j| if j == k { scores[k] } else { m[j * inst.n + k] })
                .sum();
            col / v as f64
        })
        .collect();
    let w = loop_softmax(&means);
    let c = mix(inst, &w);
    (w, c)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
