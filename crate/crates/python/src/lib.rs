//! Python bindings: vocabularies, models, training, decoding and the
//! evaluation metrics. Sentences cross the boundary as framed index lists
//! (`[<s>, ..., </s>]`), the same form `Vocabulary.encode` produces.

use std::collections::BTreeMap;

use admnmt::attention::AttentionKind;
use admnmt::corpus::{make_synthetic_task, EncodedPair, SyntheticKind};
use admnmt::decoding::translate;
use admnmt::dropout::Mode;
use admnmt::evaluation::{
    corpus_bleu as bleu_impl, frequency_deviation as freq_impl, parse_bands,
    token_accuracy as acc_impl, tokenize_lines, BandKind,
};
use admnmt::model::{load_checkpoint, save_checkpoint, ModelConfig, Seq2SeqModel};
use admnmt::training::{
    self, toy_gradcheck, OptimizerKind, OptimizerState, ToyCheck, TrainSchedule,
};
use admnmt::Error;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyTuple};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        Error::Config(_) | Error::Data(_) | Error::Checkpoint(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn parse_or_value_error<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

/// Token inventory with the four reserved entries `<pad> <s> </s> <unk>`.
#[pyclass(module = "admnmt", name = "Vocabulary")]
struct Vocabulary {
    inner: admnmt::corpus::Vocabulary,
}

#[pymethods]
impl Vocabulary {
    /// Most frequent tokens of whitespace-tokenised `lines`.
    #[staticmethod]
    #[pyo3(signature = (lines, max_size = 50_000, min_count = 1))]
    fn build(lines: Vec<String>, max_size: usize, min_count: u64) -> PyResult<Self> {
        let inner =
            admnmt::corpus::Vocabulary::build(&lines, max_size, min_count).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = admnmt::corpus::Vocabulary::load(path).map_err(to_py)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Vocabulary(size={})", self.inner.len())
    }

    /// Framed indices of a whitespace-tokenised sentence.
    fn encode(&self, line: &str) -> Vec<usize> {
        self.inner.encode_sentence(line)
    }

    /// Text up to the first end token, markers dropped.
    fn decode(&self, ids: Vec<usize>) -> String {
        self.inner.decode_line(&ids)
    }

    fn token(&self, index: usize) -> String {
        self.inner.token(index).to_string()
    }

    /// Index of `token`, or the unknown index.
    fn index(&self, token: &str) -> usize {
        self.inner.index_of(token)
    }

    fn count(&self, index: usize) -> u64 {
        self.inner.count(index)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }
}

/// Random `(sources, targets)` line lists for the copy, reverse or
/// lexicon task.
#[pyfunction]
#[pyo3(signature = (kind, vocab_size, n_pairs, min_len = 3, max_len = 10, seed = 1))]
fn synthetic_task(
    kind: &str,
    vocab_size: usize,
    n_pairs: usize,
    min_len: usize,
    max_len: usize,
    seed: u64,
) -> PyResult<(Vec<String>, Vec<String>)> {
    let kind: SyntheticKind = parse_or_value_error(kind)?;
    let task =
        make_synthetic_task(kind, vocab_size, (min_len, max_len), n_pairs, seed).map_err(to_py)?;
    Ok((task.corpus.source_lines(), task.corpus.target_lines()))
}

/// Applies `key=value` overrides; values are passed through `str()`.
fn configure(config: &mut ModelConfig, options: Option<&Bound<'_, PyDict>>) -> PyResult<()> {
    let Some(options) = options else {
        return Ok(());
    };
    for (key, value) in options.iter() {
        let key: String = key.extract()?;
        let text = if let Ok(b) = value.extract::<bool>() {
            b.to_string()
        } else if value.is_none() {
            "auto".to_string()
        } else {
            value.str()?.to_string()
        };
        if !config.set(&key, &text).map_err(to_py)? {
            return Err(PyValueError::new_err(format!(
                "unknown model option {key:?}"
            )));
        }
    }
    Ok(())
}

fn pairs_from(data: Vec<(Vec<usize>, Vec<usize>)>) -> Vec<EncodedPair> {
    data.into_iter()
        .map(|(source, target)| EncodedPair { source, target })
        .collect()
}

/// Encoder-decoder translation model with soft or density-matrix
/// attention.
#[pyclass(module = "admnmt", name = "Model")]
struct Model {
    inner: Seq2SeqModel,
}

#[pymethods]
impl Model {
    /// Extra keyword options are model settings such as `model_dim=64`
    /// or `dropout=0.0`.
    #[new]
    #[pyo3(signature = (source_vocab, target_vocab, attention_kind = "sa", seed = 1, **options))]
    fn new(
        source_vocab: usize,
        target_vocab: usize,
        attention_kind: &str,
        seed: u64,
        options: Option<&Bound<'_, PyDict>>,
    ) -> PyResult<Self> {
        let mut config = ModelConfig {
            attention_kind: parse_or_value_error(attention_kind)?,
            source_vocab,
            target_vocab,
            ..ModelConfig::default()
        };
        configure(&mut config, options)?;
        let inner = Seq2SeqModel::new(config, seed).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: load_checkpoint(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        save_checkpoint(&self.inner, path).map_err(to_py)
    }

    /// Settings as text, keyed by option name.
    fn config(&self) -> BTreeMap<&'static str, String> {
        self.inner.config.entries().into_iter().collect()
    }

    fn param_count(&self) -> usize {
        self.inner.params.scalar_count()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner.config;
        format!(
            "Model(attention_kind={}, model_dim={}, params={})",
            c.attention_kind,
            c.model_dim,
            self.inner.params.scalar_count()
        )
    }

    /// Mean per-token cross-entropy of `target` given `source`, without
    /// dropout.
    fn loss(&self, source: Vec<usize>, target: Vec<usize>) -> PyResult<f64> {
        self.inner.loss(&source, &target).map_err(to_py)
    }

    /// Target body indices (no markers) found by beam search.
    #[pyo3(signature = (source, beam_width = 10, max_len = None))]
    fn translate(
        &self,
        source: Vec<usize>,
        beam_width: usize,
        max_len: Option<usize>,
    ) -> PyResult<Vec<usize>> {
        let max_len = max_len.unwrap_or(self.inner.config.max_decode_len);
        translate(&self.inner, &source, beam_width, max_len).map_err(to_py)
    }

    /// Attention weights over source positions, one row per predicted
    /// target token, under teacher forcing.
    fn attention(&self, source: Vec<usize>, target: Vec<usize>) -> PyResult<Vec<Vec<f64>>> {
        let mut g = self.inner.graph();
        let tf = self
            .inner
            .forward_teacher_forced(&mut g, &source, &target, &mut Mode::Eval)
            .map_err(to_py)?;
        Ok(tf.attention)
    }

    /// Trains on `(source, target)` index pairs and returns one dict per
    /// epoch. Optimiser moments start fresh on every call.
    #[pyo3(signature = (
        pairs, epochs = 1, batch_size = 32, optimizer = "adam", lr = None,
        clip_norm = 5.0, seed = 1, dev = None, dev_beam = 1,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        pairs: Vec<(Vec<usize>, Vec<usize>)>,
        epochs: usize,
        batch_size: usize,
        optimizer: &str,
        lr: Option<f64>,
        clip_norm: f64,
        seed: u64,
        dev: Option<Vec<(Vec<usize>, Vec<usize>)>>,
        dev_beam: usize,
    ) -> PyResult<Vec<Bound<'py, PyDict>>> {
        let kind: OptimizerKind = parse_or_value_error(optimizer)?;
        let mut opt =
            OptimizerState::new(kind, lr.unwrap_or(kind.default_lr()), &self.inner.params);
        let schedule = TrainSchedule {
            epochs,
            batch_size,
            seed,
            clip_norm,
            checkpoint_every: 0,
            dev_every: usize::from(dev.is_some()),
            dev_beam,
            wall_clock: true,
        };
        let data = pairs_from(pairs);
        let dev = dev.map(pairs_from);
        let model = &mut self.inner;
        let records = py
            .detach(|| {
                training::train(
                    model,
                    &data,
                    dev.as_deref(),
                    &schedule,
                    &mut opt,
                    None,
                    |_| Ok(()),
                )
            })
            .map_err(to_py)?;
        records
            .iter()
            .map(|r| {
                let d = PyDict::new(py);
                d.set_item("epoch", r.epoch)?;
                d.set_item("mean_loss", r.mean_loss)?;
                d.set_item("dev_bleu", r.dev_bleu)?;
                d.set_item("wall_seconds", r.wall_seconds)?;
                Ok(d)
            })
            .collect()
    }
}

/// Corpus BLEU (0-100) of hypothesis lines against one reference line
/// each.
#[pyfunction]
#[pyo3(signature = (hypotheses, references, max_order = 4, smooth = false))]
fn corpus_bleu(
    hypotheses: Vec<String>,
    references: Vec<String>,
    max_order: usize,
    smooth: bool,
) -> PyResult<f64> {
    let report = bleu_impl(
        &tokenize_lines(&hypotheses),
        &tokenize_lines(&references),
        max_order,
        smooth,
    )
    .map_err(to_py)?;
    Ok(report.bleu)
}

/// Share of reference tokens matched at the same position, in `[0, 1]`.
#[pyfunction]
fn token_accuracy(hypotheses: Vec<String>, references: Vec<String>) -> PyResult<f64> {
    acc_impl(&tokenize_lines(&hypotheses), &tokenize_lines(&references)).map_err(to_py)
}

/// Per-band `(lo, hi, reference_freq, model_freq, deviation)` rows;
/// `deviation` is `None` for bands with no reference tokens.
#[pyfunction]
#[pyo3(signature = (training_target, references, outputs, bands = "0-30", kind = "frequency"))]
fn frequency_deviation<'py>(
    py: Python<'py>,
    training_target: Vec<String>,
    references: Vec<String>,
    outputs: Vec<String>,
    bands: &str,
    kind: &str,
) -> PyResult<Vec<Bound<'py, PyTuple>>> {
    let kind: BandKind = parse_or_value_error(kind)?;
    let bands = parse_bands(bands).map_err(to_py)?;
    let report = freq_impl(&training_target, &references, &outputs, &bands, kind).map_err(to_py)?;
    report
        .rows
        .iter()
        .map(|r| {
            PyTuple::new(
                py,
                [
                    r.band.lo.into_pyobject(py)?.into_any(),
                    r.band.hi.into_pyobject(py)?.into_any(),
                    r.reference_freq.into_pyobject(py)?.into_any(),
                    r.model_freq.into_pyobject(py)?.into_any(),
                    r.deviation.into_pyobject(py)?.into_any(),
                ],
            )
        })
        .collect()
}

/// Finite-difference check of a small model of the given attention kind.
/// The default tolerance is 1e-5 for soft attention and 1e-4 otherwise.
/// Returns `(max_rel_error, mean_rel_error, passed)`.
#[pyfunction]
#[pyo3(signature = (
    attention_kind = "sa", dim = 8, init_scale = 0.8, samples = 20, step = 1e-5,
    tolerance = None, seed = 1,
))]
#[allow(clippy::too_many_arguments)]
fn gradcheck(
    attention_kind: &str,
    dim: usize,
    init_scale: f64,
    samples: usize,
    step: f64,
    tolerance: Option<f64>,
    seed: u64,
) -> PyResult<(f64, f64, bool)> {
    let base = ModelConfig {
        attention_kind: parse_or_value_error(attention_kind)?,
        ..ModelConfig::default()
    };
    let soft = base.attention_kind == AttentionKind::Sa;
    let tolerance = tolerance.unwrap_or(if soft { 1e-5 } else { 1e-4 });
    let check = ToyCheck {
        dim,
        init_scale,
        samples,
        step,
        tolerance,
        seed,
    };
    let r = toy_gradcheck(&base, &check).map_err(to_py)?;
    Ok((r.max_rel_error, r.mean_rel_error, r.passed))
}

#[pymodule]
#[pyo3(name = "admnmt")]
fn admnmt_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Vocabulary>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(synthetic_task, m)?)?;
    m.add_function(wrap_pyfunction!(corpus_bleu, m)?)?;
    m.add_function(wrap_pyfunction!(token_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(frequency_deviation, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    Ok(())
}
