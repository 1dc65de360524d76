//! Optimisers, the epoch loop and gradient checking.

pub mod gradcheck;
mod optim;

pub use gradcheck::{
    gradcheck, redraw_params, relative_error, toy_batch, toy_gradcheck, GradEntry, GradcheckReport,
    ToyCheck,
};
pub use optim::{OptimizerKind, OptimizerState};

use std::path::Path;
use std::time::Instant;

use crate::corpus::{make_batches, EncodedPair};
use crate::decoding::translate;
use crate::dropout::Mode;
use crate::error::{Error, Result};
use crate::evaluation::corpus_bleu;
use crate::model::{save_checkpoint, Seq2SeqModel};
use crate::rng::derive_seed;
use crate::tensor::Gradients;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Write a checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    /// Score the dev set every this many epochs; 0 disables.
    pub dev_every: usize,
    /// Beam width used for dev decoding.
    pub dev_beam: usize,
    /// Record elapsed time in the log; when off, `wall_seconds=0` keeps
    /// logs byte-identical across runs.
    pub wall_clock: bool,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            epochs: 12,
            batch_size: 32,
            seed: 1,
            clip_norm: 5.0,
            checkpoint_every: 1,
            dev_every: 1,
            dev_beam: 1,
            wall_clock: true,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return Err(Error::Config(format!(
                "clip_norm must be positive, got {}",
                self.clip_norm
            )));
        }
        if self.dev_beam < 1 {
            return Err(Error::Config("dev_beam must be at least 1".into()));
        }
        Ok(())
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_loss: f64,
    pub dev_bleu: Option<f64>,
    pub wall_seconds: f64,
}

impl EpochRecord {
    /// `epoch=3 mean_loss=0.412 dev_bleu=27.5 wall_seconds=12.3`; an
    /// unscored epoch writes `dev_bleu=none`.
    pub fn to_line(&self) -> String {
        let bleu = self
            .dev_bleu
            .map_or_else(|| "none".to_string(), |b| format!("{b:.4}"));
        format!(
            "epoch={} mean_loss={:.6} dev_bleu={bleu} wall_seconds={:.3}",
            self.epoch, self.mean_loss, self.wall_seconds
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed log line {line:?}"));
        let mut rec = EpochRecord {
            epoch: 0,
            mean_loss: f64::NAN,
            dev_bleu: None,
            wall_seconds: 0.0,
        };
        let mut seen = 0;
        for field in line.split_whitespace() {
            let (k, v) = field.split_once('=').ok_or_else(bad)?;
            match k {
                "epoch" => rec.epoch = v.parse().map_err(|_| bad())?,
                "mean_loss" => rec.mean_loss = v.parse().map_err(|_| bad())?,
                "dev_bleu" if v == "none" => rec.dev_bleu = None,
                "dev_bleu" => rec.dev_bleu = Some(v.parse().map_err(|_| bad())?),
                "wall_seconds" => rec.wall_seconds = v.parse().map_err(|_| bad())?,
                _ => return Err(bad()),
            }
            seen += 1;
        }
        if seen != 4 {
            return Err(bad());
        }
        Ok(rec)
    }
}

fn check_vocab(model: &Seq2SeqModel, pairs: &[EncodedPair]) -> Result<()> {
    let (vs, vt) = (model.config.source_vocab, model.config.target_vocab);
    for (i, p) in pairs.iter().enumerate() {
        if p.source.iter().any(|&t| t >= vs) || p.target.iter().any(|&t| t >= vt) {
            return Err(Error::Config(format!(
                "example {i} uses token indices beyond the model vocabularies ({vs}, {vt})"
            )));
        }
    }
    Ok(())
}

/// One optimiser update on the mean loss of `batch`. `seeds[i]` drives the
/// dropout masks of `batch[i]`. Returns the per-example losses.
pub fn train_step(
    model: &mut Seq2SeqModel,
    batch: &[&EncodedPair],
    seeds: &[u64],
    clip_norm: f64,
    optimizer: &mut OptimizerState,
) -> Result<Vec<f64>> {
    let mut grads = Gradients::zeros_like(&model.params);
    let mut losses = Vec::with_capacity(batch.len());
    for (pair, &seed) in batch.iter().zip(seeds) {
        let mut mode = if model.config.dropout > 0.0 {
            Mode::train(model.config.dropout, seed)
        } else {
            Mode::Eval
        };
        let mut g = model.graph();
        let tf = model.forward_teacher_forced(&mut g, &pair.source, &pair.target, &mut mode)?;
        losses.push(g.value(tf.loss).item());
        grads.accumulate(&g.backward(tf.loss)?)?;
    }
    grads.scale(1.0 / batch.len().max(1) as f64);
    grads.clip_global_norm(clip_norm);
    optimizer.update(&mut model.params, &grads)?;
    Ok(losses)
}

/// Body tokens (between the sentinels) of a framed sequence.
pub fn body(framed: &[usize]) -> &[usize] {
    let end = framed.len().saturating_sub(1).max(1);
    framed.get(1..end).unwrap_or(&[])
}

/// Corpus BLEU of beam-decoded sources against their targets.
pub fn dev_bleu(model: &Seq2SeqModel, dev: &[EncodedPair], beam: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(dev.len());
    let mut refs = Vec::with_capacity(dev.len());
    for p in dev {
        hyps.push(translate(
            model,
            &p.source,
            beam,
            model.config.max_decode_len,
        )?);
        refs.push(body(&p.target).to_vec());
    }
    Ok(corpus_bleu(&hyps, &refs, 4, false)?.bleu)
}

/// Trains for `schedule.epochs` epochs. `on_epoch` sees every record as
/// soon as it is complete.
pub fn train(
    model: &mut Seq2SeqModel,
    data: &[EncodedPair],
    dev: Option<&[EncodedPair]>,
    schedule: &TrainSchedule,
    optimizer: &mut OptimizerState,
    checkpoint_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord) -> Result<()>,
) -> Result<Vec<EpochRecord>> {
    schedule.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training corpus is empty".into()));
    }
    check_vocab(model, data)?;
    if let Some(dev) = dev {
        check_vocab(model, dev)?;
    }
    let lengths: Vec<usize> = data.iter().map(|p| p.source.len()).collect();
    let start = Instant::now();
    let mut records = Vec::with_capacity(schedule.epochs);
    for epoch in 1..=schedule.epochs {
        let mut losses = vec![0.0; data.len()];
        for batch in make_batches(
            &lengths,
            schedule.batch_size,
            derive_seed(schedule.seed, &[epoch as u64]),
        ) {
            let pairs: Vec<&EncodedPair> = batch.iter().map(|&i| &data[i]).collect();
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| derive_seed(schedule.seed, &[epoch as u64, i as u64]))
                .collect();
            let batch_losses = train_step(model, &pairs, &seeds, schedule.clip_norm, optimizer)?;
            for (&i, l) in batch.iter().zip(batch_losses) {
                losses[i] = l;
            }
        }
        let mean_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let dev_bleu = match dev {
            Some(dev)
                if schedule.dev_every > 0 && epoch % schedule.dev_every == 0 && !dev.is_empty() =>
            {
                Some(dev_bleu(model, dev, schedule.dev_beam)?)
            }
            _ => None,
        };
        if let Some(dir) = checkpoint_dir {
            if schedule.checkpoint_every > 0 && epoch % schedule.checkpoint_every == 0 {
                save_checkpoint(model, dir.join(format!("epoch{epoch:03}.ckpt")))?;
            }
        }
        let record = EpochRecord {
            epoch,
            mean_loss,
            dev_bleu,
            wall_seconds: if schedule.wall_clock {
                start.elapsed().as_secs_f64()
            } else {
                0.0
            },
        };
        on_epoch(&record)?;
        records.push(record);
    }
    Ok(records)
}
