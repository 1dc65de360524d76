//! Corpus BLEU and the rare-word frequency-deviation diagnostic.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BleuReport {
    /// 0..=100
    pub bleu: f64,
    /// Modified precision per order, `precisions[n - 1]` for order `n`.
    pub precisions: Vec<f64>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Single-reference corpus BLEU with clipped n-gram precision and the
/// brevity penalty. With `add_one`, orders 2 and up use `(m + 1) / (c + 1)`.
pub fn corpus_bleu<T: Hash + Eq>(
    hypotheses: &[Vec<T>],
    references: &[Vec<T>],
    max_order: usize,
    add_one: bool,
) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_order == 0 {
        return Err(Error::Config("BLEU max_order must be positive".into()));
    }
    let mut matches = vec![0usize; max_order];
    let mut totals = vec![0usize; max_order];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=max_order {
            let rc = ngram_counts(r, n);
            for (gram, count) in ngram_counts(h, n) {
                matches[n - 1] += count.min(rc.get(gram).copied().unwrap_or(0));
                totals[n - 1] += count;
            }
        }
    }
    let precisions: Vec<f64> = (0..max_order)
        .map(|i| {
            if add_one && i > 0 {
                (matches[i] + 1) as f64 / (totals[i] + 1) as f64
            } else if totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / totals[i] as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let log_mean = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_order as f64;
        100.0 * brevity_penalty * log_mean.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Share of reference positions whose token the hypothesis reproduces at
/// the same position.
pub fn token_accuracy<T: PartialEq>(hypotheses: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if hypotheses.len() != references.len() {
        return Err(Error::Data(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    let total: usize = references.iter().map(Vec::len).sum();
    if total == 0 {
        return Ok(0.0);
    }
    let correct: usize = hypotheses
        .iter()
        .zip(references)
        .map(|(h, r)| r.iter().zip(h).filter(|(a, b)| a == b).count())
        .sum();
    Ok(correct as f64 / total as f64)
}

/// Whitespace-tokenises lines for [`corpus_bleu`].
pub fn tokenize_lines<S: AsRef<str>>(lines: &[S]) -> Vec<Vec<&str>> {
    lines
        .iter()
        .map(|l| l.as_ref().split_whitespace().collect())
        .collect()
}

impl BleuReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<16}{:>10.2}", "BLEU", self.bleu);
        for (i, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(out, "{:<16}{:>10.4}", format!("precision_{}", i + 1), p);
        }
        let _ = writeln!(
            out,
            "{:<16}{:>10.4}",
            "brevity_penalty", self.brevity_penalty
        );
        let _ = writeln!(out, "{:<16}{:>10}", "hyp_len", self.hyp_len);
        let _ = writeln!(out, "{:<16}{:>10}", "ref_len", self.ref_len);
        out
    }

    pub fn to_record(&self) -> String {
        let mut out = format!("bleu={:.4}", self.bleu);
        for (i, p) in self.precisions.iter().enumerate() {
            let _ = write!(out, " p{}={:.6}", i + 1, p);
        }
        let _ = write!(
            out,
            " bp={:.6} hyp_len={} ref_len={}",
            self.brevity_penalty, self.hyp_len, self.ref_len
        );
        out
    }
}

/// How word types are assigned to bands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandKind {
    /// Band bounds are training relative frequencies in percent.
    RelativeFrequency,
    /// Band bounds are percentile ranks in percent: types sorted by
    /// descending training count, the type at rank `r` of `T` sits at
    /// `100 r / T`.
    TypePercentile,
}

impl std::str::FromStr for BandKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "frequency" => Ok(Self::RelativeFrequency),
            "percentile" => Ok(Self::TypePercentile),
            other => Err(format!(
                "unknown band kind {other:?} (frequency, percentile)"
            )),
        }
    }
}

/// Half-open interval `(lo, hi]` in percent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub lo: f64,
    pub hi: f64,
}

impl Band {
    pub fn contains(&self, x: f64) -> bool {
        x > self.lo && x <= self.hi
    }
}

/// Parses `lo-hi` bands separated by commas, e.g. `0-1,1-30`.
pub fn parse_bands(text: &str) -> Result<Vec<Band>> {
    let bands = text
        .split(',')
        .map(|part| {
            let (lo, hi) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| Error::Config(format!("band {part:?} is not lo-hi")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("invalid band bound {s:?}")))
            };
            Ok(Band {
                lo: parse(lo)?,
                hi: parse(hi)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    validate_bands(&bands)?;
    Ok(bands)
}

fn validate_bands(bands: &[Band]) -> Result<()> {
    if bands.is_empty() {
        return Err(Error::Config("at least one band is required".into()));
    }
    for (i, b) in bands.iter().enumerate() {
        if !(b.lo >= 0.0 && b.lo < b.hi && b.hi <= 100.0) {
            return Err(Error::Config(format!(
                "band ({}, {}] is not within [0, 100]",
                b.lo, b.hi
            )));
        }
        if i > 0 && bands[i - 1].hi != b.lo {
            return Err(Error::Config(
                "bands must be contiguous and increasing".into(),
            ));
        }
    }
    Ok(())
}

pub const DEFAULT_BANDS: [Band; 1] = [Band { lo: 0.0, hi: 30.0 }];

#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub band: Band,
    /// Share of reference tokens in the band, percent.
    pub reference_freq: f64,
    /// Share of model-output tokens in the band, percent.
    pub model_freq: f64,
    /// `100 (model - reference) / reference`; `None` when the band has no
    /// reference tokens.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyDeviationReport {
    pub kind: BandKind,
    pub rows: Vec<BandRow>,
}

/// Token-weighted frequency deviation of model outputs from references,
/// per training-frequency band. Positive deviation means the model
/// over-produces the band's words.
pub fn frequency_deviation<S: AsRef<str>>(
    training_target: &[S],
    references: &[S],
    outputs: &[S],
    bands: &[Band],
    kind: BandKind,
) -> Result<FrequencyDeviationReport> {
    if training_target.is_empty() || references.is_empty() || outputs.is_empty() {
        return Err(Error::Data(
            "frequency analysis needs nonempty inputs".into(),
        ));
    }
    validate_bands(bands)?;
    let mut counts: HashMap<&str, usize> = HashMap::new();
    let mut total = 0usize;
    for line in training_target {
        for tok in line.as_ref().split_whitespace() {
            *counts.entry(tok).or_insert(0) += 1;
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Data("training target corpus has no tokens".into()));
    }
    let position: HashMap<&str, f64> = match kind {
        BandKind::RelativeFrequency => counts
            .iter()
            .map(|(&t, &c)| (t, 100.0 * c as f64 / total as f64))
            .collect(),
        BandKind::TypePercentile => {
            let mut types: Vec<(&str, usize)> = counts.iter().map(|(&t, &c)| (t, c)).collect();
            types.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
            let n = types.len() as f64;
            types
                .iter()
                .enumerate()
                .map(|(r, &(t, _))| (t, 100.0 * (r + 1) as f64 / n))
                .collect()
        }
    };
    let band_of = |tok: &str| {
        position
            .get(tok)
            .and_then(|&x| bands.iter().position(|b| b.contains(x)))
    };
    let shares = |lines: &[S]| -> Vec<f64> {
        let mut per_band = vec![0usize; bands.len()];
        let mut n = 0usize;
        for line in lines {
            for tok in line.as_ref().split_whitespace() {
                n += 1;
                if let Some(b) = band_of(tok) {
                    per_band[b] += 1;
                }
            }
        }
        per_band
            .into_iter()
            .map(|c| {
                if n == 0 {
                    0.0
                } else {
                    100.0 * c as f64 / n as f64
                }
            })
            .collect()
    };
    let reference = shares(references);
    let model = shares(outputs);
    let rows = bands
        .iter()
        .zip(reference.into_iter().zip(model))
        .map(|(&band, (r, m))| BandRow {
            band,
            reference_freq: r,
            model_freq: m,
            deviation: (r > 0.0).then(|| 100.0 * (m - r) / r),
        })
        .collect();
    Ok(FrequencyDeviationReport { kind, rows })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |d| format!("{d:.2}"))
}

impl FrequencyDeviationReport {
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<16}{:>12}{:>12}{:>12}\n",
            "band(%]", "ref_freq%", "model_freq%", "deviation%"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16}{:>12.3}{:>12.3}{:>12}",
                format!("({}, {}]", r.band.lo, r.band.hi),
                r.reference_freq,
                r.model_freq,
                pct(r.deviation)
            );
        }
        out
    }

    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let _ = writeln!(
                out,
                "band_lo={} band_hi={} reference_freq={:.6} model_freq={:.6} deviation={}",
                r.band.lo,
                r.band.hi,
                r.reference_freq,
                r.model_freq,
                r.deviation
                    .map_or_else(|| "undefined".to_string(), |d| format!("{d:.6}"))
            );
        }
        out
    }
}
