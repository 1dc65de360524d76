#![allow(dead_code)]

pub mod oracle;

use admnmt::rng::{seeded, uniform_vec};
use admnmt::tensor::{Graph, ParamId, ParamStore, Tensor, Var};
use admnmt::training::gradcheck::central_difference;
use admnmt::training::relative_error;

pub const FD_STEP: f64 = 1e-5;

/// A store of named leaves filled uniformly from `[-2, 2]`.
pub fn random_leaves(shapes: &[&[usize]], seed: u64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = seeded(seed);
    let mut store = ParamStore::new();
    let ids = shapes
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let n = shape.iter().product();
            let t = Tensor::new(shape.to_vec(), uniform_vec(&mut rng, n, 2.0)).unwrap();
            store.add(format!("x{i}"), t)
        })
        .collect();
    (store, ids)
}

/// Collapses a tensor-valued output to a scalar with fixed pseudo-random
/// weights so that no output coordinate is privileged.
pub fn weigh(g: &mut Graph<'_>, out: Var, seed: u64) -> Var {
    let n = g.value(out).len();
    let mut rng = seeded(seed ^ 0xA5A5);
    let w = uniform_vec(&mut rng, n, 1.0);
    let prod = g.mul_const(out, w).unwrap();
    g.sum(prod)
}

/// Largest relative error between tape and central-difference gradients
/// over every scalar of every leaf.
pub fn max_gradient_error<F>(store: &ParamStore, ids: &[ParamId], f: F) -> f64
where
    F: Fn(&mut Graph<'_>, &[Var]) -> Var,
{
    let grads = {
        let mut g = Graph::new(store);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let root = f(&mut g, &vars);
        g.backward(root).unwrap()
    };
    let eval = |p: &ParamStore| {
        let mut g = Graph::new(p);
        let vars: Vec<Var> = ids.iter().map(|&id| g.param(id)).collect();
        let root = f(&mut g, &vars);
        Ok::<_, admnmt::Error>(g.value(root).item())
    };
    let mut probe = store.clone();
    let mut worst: f64 = 0.0;
    for &id in ids {
        for index in 0..store.value(id).len() {
            let numeric = central_difference(&mut probe, id, index, FD_STEP, &eval).unwrap();
            let analytic = grads.get(id).data()[index];
            worst = worst.max(relative_error(analytic, numeric));
        }
    }
    worst
}
