//! The `admnmt` command-line tool.
//!
//! Every command reads the same flat key table. Values come from the
//! defaults, then an optional `--config` file of `key=value` lines, then
//! `--key value` flags. The fully resolved table is echoed to
//! `<out_dir>/<command>.config` before any work starts.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Arg, ArgMatches, Command};

use crate::attention::AttentionKind;
use crate::corpus::{
    make_synthetic_task, read_lines, write_lines, EncodedPair, ParallelCorpus, SyntheticKind,
    Vocabulary,
};
use crate::decoding::translate;
use crate::error::Error;
use crate::evaluation::{
    corpus_bleu, frequency_deviation, parse_bands, token_accuracy, tokenize_lines, BandKind,
};
use crate::model::{load_checkpoint, save_checkpoint, ModelConfig, Seq2SeqModel};
use crate::training::{
    toy_gradcheck, train, OptimizerKind, OptimizerState, ToyCheck, TrainSchedule,
};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_MODEL: i32 = 4;
pub const EXIT_CHECK_FAILED: i32 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: msg.into(),
        }
    }

    fn model(msg: impl Into<String>) -> Self {
        Self {
            code: EXIT_MODEL,
            message: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) => EXIT_USAGE,
            Error::Data(_) | Error::Io { .. } => EXIT_DATA,
            Error::Checkpoint(_) | Error::Tensor(_) | Error::UninitializedGradient(_) => EXIT_MODEL,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub struct Key {
    pub name: &'static str,
    pub default: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, default: &'static str, help: &'static str) -> Key {
    Key {
        name,
        default,
        help,
    }
}

/// Every configuration key with its default. An empty default means
/// "unset"; `auto` means "derived from other keys".
pub const KEYS: &[Key] = &[
    key("seed", "1", "run seed; all randomness derives from it"),
    key(
        "out_dir",
        "admnmt-out",
        "directory for outputs and the config echo",
    ),
    // model
    key("attention_kind", "sa", "sa, mqt or aqt"),
    key("scorer", "additive", "alignment scorer: additive or dot"),
    key("embed_dim", "256", "word embedding width"),
    key("model_dim", "256", "decoder width"),
    key(
        "encoder_direction_dim",
        "auto",
        "per-direction encoder width (auto = model_dim/2)",
    ),
    key("encoder_layers", "2", "BiLSTM encoder layers"),
    key("decoder_layers", "2", "LSTM decoder layers"),
    key(
        "attention_dim",
        "auto",
        "additive scorer inner width (auto = model_dim)",
    ),
    key(
        "project_state",
        "false",
        "learn a decoder-to-encoding projection",
    ),
    key("dropout", "0.2", "dropout rate during training"),
    key("max_decode_len", "50", "maximum decoded length"),
    // training
    key("train_src", "", "training source file"),
    key("train_tgt", "", "training target file"),
    key("dev_src", "", "dev source file"),
    key("dev_tgt", "", "dev target file"),
    key(
        "src_vocab_size",
        "50000",
        "source vocabulary cap, specials included",
    ),
    key(
        "tgt_vocab_size",
        "50000",
        "target vocabulary cap, specials included",
    ),
    key(
        "min_count",
        "1",
        "minimum training count for a vocabulary entry",
    ),
    key("epochs", "12", "training epochs"),
    key("batch_size", "32", "examples per update"),
    key("optimizer", "adam", "adam or sgd"),
    key(
        "lr",
        "auto",
        "learning rate (auto = 1e-3 for adam, 1.0 for sgd)",
    ),
    key("clip_norm", "5.0", "global gradient-norm clip"),
    key(
        "checkpoint_every",
        "1",
        "epochs between checkpoints (0 = only final)",
    ),
    key(
        "dev_every",
        "1",
        "epochs between dev BLEU evaluations (0 = never)",
    ),
    key("dev_beam", "1", "beam width for dev decoding"),
    key(
        "wall_clock",
        "true",
        "record elapsed seconds in the training log",
    ),
    // translation
    key("checkpoint", "", "model checkpoint file"),
    key(
        "src_vocab",
        "auto",
        "source vocabulary file (auto = next to checkpoint)",
    ),
    key(
        "tgt_vocab",
        "auto",
        "target vocabulary file (auto = next to checkpoint)",
    ),
    key("input", "", "source sentences to translate"),
    key(
        "output",
        "auto",
        "translation output file (auto = <out_dir>/translations.txt)",
    ),
    key("beam_width", "10", "beam width"),
    key(
        "max_len",
        "auto",
        "maximum output length (auto = model max_decode_len)",
    ),
    // evaluation
    key("hypotheses", "", "system output file"),
    key("references", "", "reference file"),
    key("max_order", "4", "largest BLEU n-gram order"),
    key("smoothing", "off", "BLEU smoothing: off or add_one"),
    key("format", "table", "report format: table or records"),
    // gradient check
    key("samples", "20", "parameters probed by the gradient check"),
    key("fd_step", "1e-5", "finite-difference step"),
    key(
        "tolerance",
        "auto",
        "max relative error (auto = 1e-5 for sa, 1e-4 otherwise)",
    ),
    key(
        "toy_dim",
        "8",
        "embedding and model width of the gradient-check model",
    ),
    key(
        "toy_init",
        "0.8",
        "parameters of the gradient-check model are drawn from [-toy_init, toy_init]",
    ),
    // frequency analysis
    key("outputs", "", "model output file for frequency analysis"),
    key("bands", "0-30", "comma-separated lo-hi bands in percent"),
    key("band_kind", "frequency", "frequency or percentile"),
    // synthetic data
    key("task", "copy", "copy, reverse or lexicon"),
    key("synth_vocab", "20", "number of synthetic token types"),
    key("length_range", "3-8", "sentence length range lo-hi"),
    key("n_pairs", "2000", "number of synthetic pairs"),
    key("prefix", "synth", "file prefix for synthetic corpora"),
];

pub const COMMANDS: &[(&str, &str)] = &[
    ("train", "train a model and write checkpoints and a log"),
    ("translate", "translate a file with a trained checkpoint"),
    ("evaluate", "report corpus BLEU and token accuracy"),
    (
        "gradcheck",
        "compare tape gradients with finite differences",
    ),
    (
        "analyze-freq",
        "rare-word frequency deviation of model outputs",
    ),
    ("synth", "generate a synthetic parallel corpus"),
];

/// Fully resolved key table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<&'static str, String>,
}

fn lookup(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: KEYS
                .iter()
                .map(|k| (k.name, k.default.to_string()))
                .collect(),
        }
    }
}

impl RunConfig {
    pub fn set(&mut self, name: &str, value: &str) -> CliResult<()> {
        let k =
            lookup(name).ok_or_else(|| CliError::usage(format!("unknown config key {name:?}")))?;
        self.values.insert(k.name, value.to_string());
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment line.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> CliResult<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                CliError::usage(format!("{origin}:{}: expected key=value", n + 1))
            })?;
            self.set(k.trim(), v.trim())
                .map_err(|e| CliError::usage(format!("{origin}:{}: {}", n + 1, e.message)))?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> &str {
        self.values
            .get(name)
            .map(String::as_str)
            .expect("key in table")
    }

    fn parse<T: std::str::FromStr>(&self, name: &str) -> CliResult<T> {
        let v = self.get(name);
        v.parse()
            .map_err(|_| CliError::usage(format!("invalid value {v:?} for {name}")))
    }

    fn path(&self, name: &str) -> CliResult<PathBuf> {
        match self.get(name) {
            "" => Err(CliError::usage(format!("missing required key {name}"))),
            p => Ok(PathBuf::from(p)),
        }
    }

    fn optional_path(&self, name: &str) -> Option<PathBuf> {
        Some(self.get(name))
            .filter(|p| !p.is_empty())
            .map(PathBuf::from)
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(self.get("out_dir"))
    }

    /// Model hyper-parameters; vocabulary sizes are filled in later.
    pub fn model_config(&self) -> CliResult<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for k in crate::model::MODEL_KEYS
            .iter()
            .filter(|k| lookup(k).is_some())
        {
            cfg.set(k, self.get(k))
                .map_err(|e| CliError::usage(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn schedule(&self) -> CliResult<TrainSchedule> {
        let s = TrainSchedule {
            epochs: self.parse("epochs")?,
            batch_size: self.parse("batch_size")?,
            seed: self.parse("seed")?,
            clip_norm: self.parse("clip_norm")?,
            checkpoint_every: self.parse("checkpoint_every")?,
            dev_every: self.parse("dev_every")?,
            dev_beam: self.parse("dev_beam")?,
            wall_clock: self.parse("wall_clock")?,
        };
        s.validate()?;
        Ok(s)
    }

    /// Replaces `auto` values that do not depend on a loaded model.
    fn resolve(&mut self) -> CliResult<()> {
        if self.get("lr") == "auto" {
            let kind: OptimizerKind = self.get("optimizer").parse().map_err(CliError::usage)?;
            self.values.insert("lr", format!("{:?}", kind.default_lr()));
        }
        if self.get("tolerance") == "auto" {
            let kind: AttentionKind = self
                .get("attention_kind")
                .parse()
                .map_err(CliError::usage)?;
            let tol = if kind == AttentionKind::Sa {
                "1e-5"
            } else {
                "1e-4"
            };
            self.values.insert("tolerance", tol.to_string());
        }
        if self.get("output") == "auto" {
            let out = self.out_dir().join("translations.txt");
            self.values.insert("output", out.display().to_string());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for k in KEYS {
            let _ = writeln!(out, "{}={}", k.name, self.get(k.name));
        }
        out
    }
}

pub fn command() -> Command {
    let mut root = Command::new("admnmt")
        .about("Attentional sequence-to-sequence translation with attention density matrices")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config")
                .long("config")
                .value_name("FILE")
                .help("key=value configuration file"),
        );
        for k in KEYS {
            let help = if k.default.is_empty() {
                k.help.to_string()
            } else {
                format!("{} [default: {}]", k.help, k.default)
            };
            sub = sub.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve_config(matches: &ArgMatches) -> CliResult<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = matches.get_one::<String>("config") {
        let text = fs::read_to_string(path).map_err(|e| CliError::from(Error::io(path, e)))?;
        cfg.apply_text(&text, path)?;
    }
    for k in KEYS {
        if let Some(v) = matches.get_one::<String>(k.name) {
            cfg.set(k.name, v)?;
        }
    }
    cfg.resolve()?;
    Ok(cfg)
}

fn echo_config(cfg: &RunConfig, command: &str) -> CliResult<()> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).map_err(|e| CliError::from(Error::io(&dir, e)))?;
    let path = dir.join(format!("{command}.config"));
    fs::write(&path, cfg.to_text()).map_err(|e| CliError::from(Error::io(&path, e)))?;
    Ok(())
}

/// Runs the tool on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let result = resolve_config(sub).and_then(|cfg| {
        echo_config(&cfg, name)?;
        match name {
            "train" => cmd_train(&cfg),
            "translate" => cmd_translate(&cfg),
            "evaluate" => cmd_evaluate(&cfg),
            "gradcheck" => cmd_gradcheck(&cfg),
            "analyze-freq" => cmd_analyze_freq(&cfg),
            "synth" => cmd_synth(&cfg),
            other => Err(CliError {
                code: EXIT_OTHER,
                message: format!("unhandled command {other}"),
            }),
        }
    });
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("admnmt {name}: {}", e.message);
            e.code
        }
    }
}

fn load_pairs(cfg: &RunConfig, src: &str, tgt: &str) -> CliResult<Option<ParallelCorpus>> {
    match (cfg.optional_path(src), cfg.optional_path(tgt)) {
        (Some(s), Some(t)) => Ok(Some(ParallelCorpus::load(s, t)?)),
        (None, None) => Ok(None),
        _ => Err(CliError::usage(format!(
            "{src} and {tgt} must be given together"
        ))),
    }
}

pub fn cmd_train(cfg: &RunConfig) -> CliResult<()> {
    let schedule = cfg.schedule()?;
    let corpus = load_pairs(cfg, "train_src", "train_tgt")?
        .ok_or_else(|| CliError::usage("train needs train_src and train_tgt"))?;
    if corpus.is_empty() {
        return Err(Error::Data("training corpus has no usable pairs".into()).into());
    }
    let dev = load_pairs(cfg, "dev_src", "dev_tgt")?;
    let min_count = cfg.parse("min_count")?;
    let src_vocab = Vocabulary::build(
        &corpus.source_lines(),
        cfg.parse("src_vocab_size")?,
        min_count,
    )?;
    let tgt_vocab = Vocabulary::build(
        &corpus.target_lines(),
        cfg.parse("tgt_vocab_size")?,
        min_count,
    )?;

    let mut model_cfg = cfg.model_config()?;
    model_cfg.source_vocab = src_vocab.len();
    model_cfg.target_vocab = tgt_vocab.len();
    let mut model = Seq2SeqModel::new(model_cfg, schedule.seed)?;

    let out = cfg.out_dir();
    src_vocab.save(out.join("src.vocab"))?;
    tgt_vocab.save(out.join("tgt.vocab"))?;

    let data = corpus.encode(&src_vocab, &tgt_vocab);
    let dev_data: Option<Vec<EncodedPair>> = dev.map(|d| d.encode(&src_vocab, &tgt_vocab));
    let kind: OptimizerKind = cfg.get("optimizer").parse().map_err(CliError::usage)?;
    let mut optimizer = OptimizerState::new(kind, cfg.parse("lr")?, &model.params);

    let log_path = out.join("train.log");
    let mut log = String::new();
    train(
        &mut model,
        &data,
        dev_data.as_deref(),
        &schedule,
        &mut optimizer,
        Some(&out),
        |rec| {
            let line = rec.to_line();
            println!("{line}");
            log.push_str(&line);
            log.push('\n');
            fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))
        },
    )?;
    save_checkpoint(&model, out.join("model.ckpt"))?;
    Ok(())
}

fn vocab_path(cfg: &RunConfig, key: &str, checkpoint: &Path, file: &str) -> PathBuf {
    match cfg.get(key) {
        "auto" => checkpoint.parent().unwrap_or(Path::new(".")).join(file),
        p => PathBuf::from(p),
    }
}

pub fn cmd_translate(cfg: &RunConfig) -> CliResult<()> {
    let ckpt = cfg.path("checkpoint")?;
    let input = cfg.path("input")?;
    let model = load_checkpoint(&ckpt)?;
    let src_vocab = Vocabulary::load(vocab_path(cfg, "src_vocab", &ckpt, "src.vocab"))?;
    let tgt_vocab = Vocabulary::load(vocab_path(cfg, "tgt_vocab", &ckpt, "tgt.vocab"))?;
    if src_vocab.len() != model.config.source_vocab || tgt_vocab.len() != model.config.target_vocab
    {
        return Err(CliError::model(format!(
            "vocabulary sizes ({}, {}) do not match the checkpoint ({}, {})",
            src_vocab.len(),
            tgt_vocab.len(),
            model.config.source_vocab,
            model.config.target_vocab
        )));
    }
    let beam: usize = cfg.parse("beam_width")?;
    let max_len = match cfg.get("max_len") {
        "auto" => model.config.max_decode_len,
        _ => cfg.parse("max_len")?,
    };
    let mut out_lines = Vec::new();
    for line in read_lines(&input)? {
        let src = src_vocab.encode_sentence(&line);
        let ids = translate(&model, &src, beam, max_len)?;
        out_lines.push(tgt_vocab.decode_line(&ids));
    }
    write_lines(cfg.path("output")?, &out_lines)?;
    Ok(())
}

fn report_format(cfg: &RunConfig) -> CliResult<bool> {
    match cfg.get("format") {
        "table" => Ok(false),
        "records" => Ok(true),
        other => Err(CliError::usage(format!(
            "unknown format {other:?} (table, records)"
        ))),
    }
}

pub fn cmd_evaluate(cfg: &RunConfig) -> CliResult<()> {
    let hyp_lines = read_lines(cfg.path("hypotheses")?)?;
    let ref_lines = read_lines(cfg.path("references")?)?;
    let add_one = match cfg.get("smoothing") {
        "off" => false,
        "add_one" => true,
        other => {
            return Err(CliError::usage(format!(
                "unknown smoothing {other:?} (off, add_one)"
            )))
        }
    };
    let records = report_format(cfg)?;
    let hyps = tokenize_lines(&hyp_lines);
    let refs = tokenize_lines(&ref_lines);
    let report = corpus_bleu(&hyps, &refs, cfg.parse("max_order")?, add_one)?;
    let accuracy = token_accuracy(&hyps, &refs)?;
    if records {
        println!("{} token_accuracy={:.6}", report.to_record(), accuracy);
    } else {
        print!("{}", report.to_table());
        println!("{:<16}{:>10.2}", "token_accuracy%", 100.0 * accuracy);
    }
    Ok(())
}

pub fn cmd_gradcheck(cfg: &RunConfig) -> CliResult<()> {
    let check = ToyCheck {
        dim: cfg.parse("toy_dim")?,
        init_scale: cfg.parse("toy_init")?,
        samples: cfg.parse("samples")?,
        step: cfg.parse("fd_step")?,
        tolerance: cfg.parse("tolerance")?,
        seed: cfg.parse("seed")?,
    };
    let report = toy_gradcheck(&cfg.model_config()?, &check)?;
    let mut text = format!(
        "{:<28}{:>7}{:>16}{:>16}{:>12}\n",
        "parameter", "index", "analytic", "numeric", "rel_error"
    );
    for e in &report.entries {
        let _ = writeln!(
            text,
            "{:<28}{:>7}{:>16.8e}{:>16.8e}{:>12.3e}",
            e.name, e.index, e.analytic, e.numeric, e.rel_error
        );
    }
    let _ = writeln!(
        text,
        "max_rel_error={:.3e} mean_rel_error={:.3e} tolerance={:e} result={}",
        report.max_rel_error,
        report.mean_rel_error,
        report.tolerance,
        if report.passed { "pass" } else { "fail" }
    );
    print!("{text}");
    let path = cfg.out_dir().join("gradcheck.txt");
    fs::write(&path, &text).map_err(|e| CliError::from(Error::io(&path, e)))?;
    if report.passed {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_CHECK_FAILED,
            message: format!(
                "max relative error {:.3e} exceeds {:e}",
                report.max_rel_error, report.tolerance
            ),
        })
    }
}

pub fn cmd_analyze_freq(cfg: &RunConfig) -> CliResult<()> {
    let train_lines = read_lines(cfg.path("train_tgt")?)?;
    let refs = read_lines(cfg.path("references")?)?;
    let outs = read_lines(cfg.path("outputs")?)?;
    let bands = parse_bands(cfg.get("bands"))?;
    let kind: BandKind = cfg.get("band_kind").parse().map_err(CliError::usage)?;
    let records = report_format(cfg)?;
    let report = frequency_deviation(&train_lines, &refs, &outs, &bands, kind)?;
    if records {
        print!("{}", report.to_records());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

fn parse_range(s: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("invalid length_range {s:?} (expected lo-hi)"));
    let (lo, hi) = s.split_once('-').ok_or_else(bad)?;
    Ok((
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

pub fn cmd_synth(cfg: &RunConfig) -> CliResult<()> {
    let kind: SyntheticKind = cfg.get("task").parse().map_err(CliError::usage)?;
    let task = make_synthetic_task(
        kind,
        cfg.parse("synth_vocab")?,
        parse_range(cfg.get("length_range"))?,
        cfg.parse("n_pairs")?,
        cfg.parse("seed")?,
    )?;
    let out = cfg.out_dir();
    let prefix = cfg.get("prefix");
    task.corpus.save(
        out.join(format!("{prefix}.src")),
        out.join(format!("{prefix}.tgt")),
    )?;
    if let Some(lexicon) = task.lexicon {
        let lines: Vec<String> = lexicon
            .iter()
            .enumerate()
            .map(|(s, t)| {
                format!(
                    "{} {}",
                    crate::corpus::token_name(s),
                    crate::corpus::token_name(*t)
                )
            })
            .collect();
        write_lines(out.join(format!("{prefix}.lexicon")), &lines)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn key_table_has_unique_names_and_covers_model_keys() {
        let mut names: Vec<&str> = KEYS.iter().map(|k| k.name).collect();
        names.sort_unstable();
        let n = names.len();
        names.dedup();
        assert_eq!(names.len(), n);
        for k in crate::model::MODEL_KEYS {
            if k != "source_vocab" && k != "target_vocab" {
                assert!(lookup(k).is_some(), "{k}");
            }
        }
    }

    #[test]
    fn file_values_then_flags() {
        let mut cfg = RunConfig::default();
        cfg.apply_text("# comment\nepochs = 3\n\nseed=9\n", "f")
            .unwrap();
        assert_eq!(cfg.get("epochs"), "3");
        cfg.set("epochs", "4").unwrap();
        assert_eq!(cfg.schedule().unwrap().epochs, 4);
        assert_eq!(cfg.schedule().unwrap().seed, 9);
        assert_eq!(cfg.apply_text("bogus=1", "f").unwrap_err().code, EXIT_USAGE);
        assert_eq!(cfg.apply_text("epochs", "f").unwrap_err().code, EXIT_USAGE);
    }

    #[test]
    fn resolution_fills_auto_values() {
        let mut cfg = RunConfig::default();
        cfg.set("optimizer", "sgd").unwrap();
        cfg.set("attention_kind", "mqt").unwrap();
        cfg.resolve().unwrap();
        assert_eq!(cfg.get("lr"), "1.0");
        assert_eq!(cfg.get("tolerance"), "1e-4");
        let echoed = cfg.to_text();
        let mut again = RunConfig::default();
        again.apply_text(&echoed, "echo").unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn model_config_from_keys() {
        let mut cfg = RunConfig::default();
        cfg.set("attention_kind", "aqt").unwrap();
        cfg.set("model_dim", "64").unwrap();
        let m = cfg.model_config().unwrap();
        assert_eq!(m.attention_kind, AttentionKind::Aqt);
        assert_eq!(m.direction_dim(), 32);
        cfg.set("dropout", "x").unwrap();
        assert!(cfg.model_config().is_err());
    }

    #[test]
    fn length_ranges() {
        assert_eq!(parse_range("3-8").unwrap(), (3, 8));
        assert!(parse_range("3").is_err());
    }
}
