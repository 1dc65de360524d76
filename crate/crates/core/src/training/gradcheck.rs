//! Finite-difference verification of tape gradients.

use rand::Rng;

use crate::corpus::{make_synthetic_task, EncodedPair, SyntheticKind, Vocabulary};
use crate::dropout::Mode;
use crate::error::Result;
use crate::model::{ModelConfig, Seq2SeqModel};
use crate::rng::seeded;
use crate::tensor::{Gradients, ParamId, ParamStore};

/// `|a - n| / max(|a|, |n|, 1e-8)`, defined as 0 when both are 0.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    if analytic == 0.0 && numeric == 0.0 {
        return 0.0;
    }
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central difference of `f` with respect to one scalar of `store`. The
/// scalar is restored afterwards.
pub fn central_difference<F>(
    store: &mut ParamStore,
    id: ParamId,
    index: usize,
    step: f64,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let original = store.value(id).data()[index];
    store.value_mut(id).data_mut()[index] = original + step;
    let plus = f(store);
    store.value_mut(id).data_mut()[index] = original - step;
    let minus = f(store);
    store.value_mut(id).data_mut()[index] = original;
    Ok((plus? - minus?) / (2.0 * step))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub entries: Vec<GradEntry>,
    pub max_rel_error: f64,
    pub mean_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn from_entries(entries: Vec<GradEntry>, tolerance: f64) -> Self {
        let max_rel_error = entries.iter().map(|e| e.rel_error).fold(0.0, f64::max);
        let mean_rel_error = if entries.is_empty() {
            0.0
        } else {
            entries.iter().map(|e| e.rel_error).sum::<f64>() / entries.len() as f64
        };
        Self {
            passed: max_rel_error < tolerance,
            entries,
            max_rel_error,
            mean_rel_error,
            tolerance,
        }
    }
}

/// Redraws every parameter uniformly from `[-scale, scale]`. Freshly
/// initialised models have gradients near the finite-difference noise
/// floor deep in the stack; probing at a larger scale keeps them measurable.
pub fn redraw_params(store: &mut ParamStore, scale: f64, seed: u64) {
    let mut rng = seeded(seed);
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for x in store.value_mut(id).data_mut() {
            *x = rng.random_range(-scale..=scale);
        }
    }
}

/// Mean evaluation-mode loss over `batch` and its gradient.
pub fn batch_loss_and_grad(
    model: &Seq2SeqModel,
    batch: &[EncodedPair],
) -> Result<(f64, Gradients)> {
    let mut total = Gradients::zeros_like(&model.params);
    let mut loss = 0.0;
    for pair in batch {
        let mut g = model.graph();
        let tf =
            model.forward_teacher_forced(&mut g, &pair.source, &pair.target, &mut Mode::Eval)?;
        loss += g.value(tf.loss).item();
        total.accumulate(&g.backward(tf.loss)?)?;
    }
    let scale = 1.0 / batch.len().max(1) as f64;
    total.scale(scale);
    Ok((loss * scale, total))
}

fn batch_loss(model: &Seq2SeqModel, params: &ParamStore, batch: &[EncodedPair]) -> Result<f64> {
    let mut loss = 0.0;
    for pair in batch {
        let mut g = crate::tensor::Graph::new(params);
        let tf =
            model.forward_teacher_forced(&mut g, &pair.source, &pair.target, &mut Mode::Eval)?;
        loss += g.value(tf.loss).item();
    }
    Ok(loss / batch.len().max(1) as f64)
}

/// Compares tape gradients of the mean batch loss with central
/// differences on `samples` scalars. Parameter tensors are visited
/// round-robin so every tensor is probed; the element inside each tensor
/// is drawn uniformly from a stream seeded by `seed`.
pub fn gradcheck(
    model: &mut Seq2SeqModel,
    batch: &[EncodedPair],
    samples: usize,
    step: f64,
    tolerance: f64,
    seed: u64,
) -> Result<GradcheckReport> {
    let (_, grads) = batch_loss_and_grad(model, batch)?;
    let ids: Vec<ParamId> = model.params.ids().collect();
    let mut rng = seeded(seed);
    let mut params = std::mem::take(&mut model.params);
    let mut entries = Vec::with_capacity(samples);
    let mut result = Ok(());
    for s in 0..samples {
        let id = ids[s % ids.len()];
        let index = rng.random_range(0..params.value(id).len());
        let numeric = central_difference(&mut params, id, index, step, |p| {
            batch_loss(model, p, batch)
        });
        match numeric {
            Ok(numeric) => {
                let analytic = grads.get(id).data()[index];
                entries.push(GradEntry {
                    name: params.name(id).to_string(),
                    index,
                    analytic,
                    numeric,
                    rel_error: relative_error(analytic, numeric),
                });
            }
            Err(e) => {
                result = Err(e);
                break;
            }
        }
    }
    model.params = params;
    result?;
    Ok(GradcheckReport::from_entries(entries, tolerance))
}

/// Two short framed reverse-task pairs over a 7-token vocabulary; sources
/// are at most 5 tokens long.
pub fn toy_batch(seed: u64) -> Result<Vec<EncodedPair>> {
    let task = make_synthetic_task(SyntheticKind::Reverse, 3, (2, 3), 2, seed)?;
    let vocab = Vocabulary::build(&["w0 w1 w2"], 7, 1)?;
    Ok(task.corpus.encode(&vocab, &vocab))
}

/// Settings of a self-contained check on a toy model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToyCheck {
    /// Embedding, state and alignment width.
    pub dim: usize,
    /// Parameters are redrawn from `[-init_scale, init_scale]`.
    pub init_scale: f64,
    pub samples: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
}

/// Builds a dropout-free toy model with the architecture of `base` (layer
/// counts, attention kind, scorer) and checks it on [`toy_batch`].
pub fn toy_gradcheck(base: &ModelConfig, check: &ToyCheck) -> Result<GradcheckReport> {
    let config = ModelConfig {
        embed_dim: check.dim,
        model_dim: check.dim,
        encoder_direction_dim: None,
        attention_dim: Some(check.dim),
        dropout: 0.0,
        source_vocab: 7,
        target_vocab: 7,
        ..base.clone()
    };
    let mut model = Seq2SeqModel::new(config, check.seed)?;
    redraw_params(&mut model.params, check.init_scale, check.seed);
    let batch = toy_batch(check.seed)?;
    gradcheck(
        &mut model,
        &batch,
        check.samples,
        check.step,
        check.tolerance,
        check.seed,
    )
}
