//! Randomised invariants across tensor, attention, decoding and
//! evaluation.

mod common;

use admnmt::decoding::{beam_search, StepModel};
use admnmt::evaluation::{frequency_deviation, BandKind, DEFAULT_BANDS};
use admnmt::rng::seeded;
use admnmt::tensor::{log_softmax, softmax, Gradients, ParamStore, Tensor};
use common::oracle::{
    library, loop_adm, loop_offdiag, loop_scores, loop_soft, max_abs_diff, Instance, Scheme,
};
use proptest::prelude::*;

fn instance(seed: u64) -> Instance {
    Instance::random(&mut seeded(seed))
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn softmax_is_a_distribution(xs in prop::collection::vec(-50.0f64..50.0, 1..12)) {
        let p = softmax(&xs, None).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn density_matrix_is_symmetric_with_scores_on_the_diagonal(seed in any::<u64>()) {
        let inst = instance(seed);
        for scheme in [Scheme::Mqt, Scheme::Aqt] {
            let out = library(&inst, scheme);
            let n = inst.n;
            for j in 0..n {
                prop_assert_eq!(out.psi[j * n + j], out.scores[j]);
                for k in 0..n {
                    prop_assert_eq!(out.psi[j * n + k], out.psi[k * n + j]);
                }
            }
        }
    }

    #[test]
    fn weights_are_a_distribution_over_real_positions(seed in any::<u64>()) {
        let inst = instance(seed);
        for scheme in [Scheme::Soft, Scheme::Mqt, Scheme::Aqt] {
            let w = library(&inst, scheme).weights;
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(w.iter().all(|&v| v >= 0.0));
            prop_assert!(w[inst.valid..].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn zero_pair_weight_gives_tempered_soft_attention(seed in any::<u64>()) {
        let mut inst = instance(seed);
        inst.w_mqt = 0.0;
        inst.w_aqt.iter_mut().for_each(|w| *w = 0.0);
        for scheme in [Scheme::Mqt, Scheme::Aqt] {
            let out = library(&inst, scheme);
            let valid = &out.scores[..inst.valid];
            let tempered: Vec<f64> = valid.iter().map(|a| a / inst.valid as f64).collect();
            let expected = softmax(&tempered, None).unwrap();
            prop_assert!(max_abs_diff(&out.weights[..inst.valid], &expected) < 1e-12);
            prop_assert_eq!(argmax(&out.weights), argmax(valid));
        }
    }

    #[test]
    fn pair_scores_survive_exchanging_two_encodings(seed in any::<u64>(), a in 0usize..7, b in 0usize..7) {
        let inst = instance(seed);
        let (a, b) = (a % inst.valid, b % inst.valid);
        let mut swapped = inst.clone();
        swapped.h.swap(a, b);
        let n = inst.n;
        let perm = |j: usize| if j == a { b } else if j == b { a } else { j };
        for scheme in [Scheme::Mqt, Scheme::Aqt] {
            let m = library(&inst, scheme).offdiag;
            let m2 = library(&swapped, scheme).offdiag;
            prop_assert_eq!(m[a * n + b], m2[a * n + b]);
            for j in 0..n {
                for k in 0..n {
                    prop_assert_eq!(m2[j * n + k], m[perm(j) * n + perm(k)]);
                }
            }
        }
    }

    #[test]
    fn library_agrees_with_loop_oracles(seed in any::<u64>()) {
        let inst = instance(seed);
        let v = inst.valid;
        let soft = library(&inst, Scheme::Soft);
        prop_assert!(max_abs_diff(&soft.scores[..v], &loop_scores(&inst)) < 1e-12);
        let (w, c) = loop_soft(&inst);
        prop_assert!(max_abs_diff(&soft.weights[..v], &w) < 1e-12);
        prop_assert!(max_abs_diff(&soft.context, &c) < 1e-12);
        for scheme in [Scheme::Mqt, Scheme::Aqt] {
            let out = library(&inst, scheme);
            let m = loop_offdiag(&inst, scheme);
            for j in 0..inst.n {
                for k in (0..inst.n).filter(|&k| k != j) {
                    prop_assert!((out.psi[j * inst.n + k] - m[j * inst.n + k]).abs() < 1e-12);
                }
            }
            let (w, c) = loop_adm(&inst, scheme);
            prop_assert!(max_abs_diff(&out.weights[..v], &w) < 1e-12);
            prop_assert!(max_abs_diff(&out.context, &c) < 1e-12);
        }
    }

    #[test]
    fn clipping_bounds_the_global_norm(
        values in prop::collection::vec(-100.0f64..100.0, 1..20),
        clip in 0.01f64..10.0,
    ) {
        let mut store = ParamStore::new();
        let id = store.add("p", Tensor::zeros(&[values.len()]));
        let mut grads = Gradients::zeros_like(&store);
        grads.get_mut(id).data_mut().copy_from_slice(&values);
        grads.clip_global_norm(clip);
        prop_assert!(grads.global_norm() <= clip + 1e-12);
    }
}

/// Scripted next-token distributions: `tables[step][previous token]`.
#[derive(Debug)]
struct Table {
    tables: Vec<Vec<Vec<f64>>>,
    eos: usize,
}

impl StepModel for Table {
    type State = usize;

    fn initial_state(&mut self) -> admnmt::Result<usize> {
        Ok(0)
    }

    fn step(&mut self, &step: &usize, token: usize) -> admnmt::Result<(Vec<f64>, usize)> {
        let row = if step == 0 { 0 } else { token };
        Ok((self.tables[step][row].clone(), step + 1))
    }

    fn bos(&self) -> usize {
        usize::MAX
    }

    fn eos(&self) -> usize {
        self.eos
    }
}

fn table_strategy() -> impl Strategy<Value = Table> {
    (2usize..5, 1usize..5).prop_flat_map(|(vocab, depth)| {
        let row = prop::collection::vec(-4.0f64..4.0, vocab);
        let step = prop::collection::vec(row, vocab);
        (prop::collection::vec(step, depth), 0..vocab).prop_map(|(raw, eos)| Table {
            tables: raw
                .into_iter()
                .map(|rows| rows.iter().map(|r| log_softmax(r)).collect())
                .collect(),
            eos,
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn beam_respects_length_and_returns_its_best(mut model in table_strategy(), width in 1usize..6) {
        let max_len = model.tables.len();
        let result = beam_search(&mut model, width, max_len).unwrap();
        prop_assert!(result.beam.iter().all(|h| h.tokens.len() <= max_len));
        prop_assert!(result.best.tokens.len() <= max_len);
        if result.best.finished {
            for h in result.beam.iter().filter(|h| h.finished) {
                prop_assert!(result.best.score() >= h.score());
            }
        }
    }

    #[test]
    fn frequency_deviation_ignores_line_order(
        lines in prop::collection::vec(prop::collection::vec(0usize..12, 1..6), 2..8),
        rotate in 1usize..7,
    ) {
        let text: Vec<String> = lines
            .iter()
            .map(|l| l.iter().map(|t| format!("w{t}")).collect::<Vec<_>>().join(" "))
            .collect();
        let outs: Vec<String> = text.iter().map(|l| l.replace("w1", "w2")).collect();
        let mut shuffled_refs = text.clone();
        shuffled_refs.rotate_left(rotate % text.len());
        let mut shuffled_outs = outs.clone();
        shuffled_outs.reverse();
        for kind in [BandKind::RelativeFrequency, BandKind::TypePercentile] {
            let a = frequency_deviation(&text, &text, &outs, &DEFAULT_BANDS, kind).unwrap();
            let b = frequency_deviation(&text, &shuffled_refs, &shuffled_outs, &DEFAULT_BANDS, kind).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
