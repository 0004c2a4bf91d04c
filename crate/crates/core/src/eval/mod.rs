//! Rating and selection metrics, parallel evaluation and reports.

mod report;

pub use report::{render_html, render_text, SelectionView};

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::data::Document;
use crate::error::{Error, Result};
use crate::model::{Model, Policies};
use crate::rollout::{rollout, Context, Decode, PredictorRewards};
use crate::trainer::EpochRewards;

const NORMALIZE_EPS: f64 = 1e-3;

fn check_pairs(preds: &[usize], golds: &[usize]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::domain("no predictions to score"));
    }
    if preds.len() != golds.len() {
        return Err(Error::domain(format!(
            "{} predictions but {} gold ratings",
            preds.len(),
            golds.len()
        )));
    }
    Ok(())
}

pub fn accuracy(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_pairs(preds, golds)?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

/// Mean squared error on the integer rating values.
pub fn mse(preds: &[usize], golds: &[usize]) -> Result<f64> {
    check_pairs(preds, golds)?;
    let total: f64 = preds
        .iter()
        .zip(golds)
        .map(|(&p, &g)| (p as f64 - g as f64).powi(2))
        .sum();
    Ok(total / preds.len() as f64)
}

/// Confusion counts for a binary selection, accumulated over a split.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SelectionCounts {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelectionScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl SelectionCounts {
    pub fn add(&mut self, predicted: &[bool], gold: &[bool]) -> Result<()> {
        if predicted.len() != gold.len() {
            return Err(Error::shape(
                "selection_metrics",
                format!("predicted {}", predicted.len()),
                format!("gold {}", gold.len()),
            ));
        }
        for (&p, &g) in predicted.iter().zip(gold) {
            match (p, g) {
                (true, true) => self.true_pos += 1,
                (true, false) => self.false_pos += 1,
                (false, true) => self.false_neg += 1,
                (false, false) => {}
            }
        }
        Ok(())
    }

    /// Nothing predicted counts as precision 1 only when nothing was gold.
    pub fn scores(&self) -> SelectionScores {
        let predicted = self.true_pos + self.false_pos;
        let gold = self.true_pos + self.false_neg;
        let precision = match (predicted, gold) {
            (0, 0) => 1.0,
            (0, _) => 0.0,
            _ => self.true_pos as f64 / predicted as f64,
        };
        let recall = if gold == 0 {
            1.0
        } else {
            self.true_pos as f64 / gold as f64
        };
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SelectionScores {
            precision,
            recall,
            f1,
        }
    }
}

/// Micro-averaged scores over pairs of flat masks.
pub fn selection_metrics<'a, I>(pairs: I) -> Result<SelectionScores>
where
    I: IntoIterator<Item = (&'a [bool], &'a [bool])>,
{
    let mut counts = SelectionCounts::default();
    for (p, g) in pairs {
        counts.add(p, g)?;
    }
    Ok(counts.scores())
}

/// Min-max maps a series onto `[1e-3, 1 - 1e-3]`.
pub fn normalize_rewards(series: &[f64]) -> Result<Vec<f64>> {
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite value in reward series".into()));
    }
    let lo = series.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = series.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if series.len() < 2 || lo == hi {
        return Err(Error::domain("degenerate reward series"));
    }
    Ok(series
        .iter()
        .map(|&x| {
            let t = (x - lo) / (hi - lo);
            // interpolating from both ends keeps the endpoints exact
            ((1.0 - t) * NORMALIZE_EPS + t * (1.0 - NORMALIZE_EPS)).clamp(NORMALIZE_EPS, 1.0 - NORMALIZE_EPS)
        })
        .collect())
}

/// Per-epoch reward record with both series normalised when possible.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RewardRecord {
    #[serde(flatten)]
    pub raw: EpochRewards,
    pub high_normalized: Option<f64>,
    pub low_normalized: Option<f64>,
}

pub fn reward_records(curve: &[EpochRewards]) -> Vec<RewardRecord> {
    let high: Vec<f64> = curve.iter().map(|e| e.high).collect();
    let low: Vec<f64> = curve.iter().map(|e| e.low).collect();
    let high = normalize_rewards(&high).ok();
    let low = normalize_rewards(&low).ok();
    curve
        .iter()
        .enumerate()
        .map(|(k, e)| RewardRecord {
            raw: e.clone(),
            high_normalized: high.as_ref().map(|s| s[k]),
            low_normalized: low.as_ref().map(|s| s[k]),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// Selections and prediction for one `(document, aspect)` query.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryOutcome {
    pub document: String,
    pub aspect: String,
    pub gold: usize,
    pub predicted: usize,
    pub fallback: bool,
    pub clauses: Vec<bool>,
    pub words: Vec<Vec<bool>>,
}

impl QueryOutcome {
    /// Word selections with discarded clauses zeroed.
    pub fn effective_words(&self) -> Vec<bool> {
        self.clauses
            .iter()
            .zip(&self.words)
            .flat_map(|(&c, w)| w.iter().map(move |&x| c && x))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AspectResult {
    pub aspect: String,
    pub queries: usize,
    pub accuracy: f64,
    pub mse: f64,
    pub fallbacks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalResult {
    pub decode: DecodeMode,
    pub classes: usize,
    pub queries: usize,
    pub accuracy: f64,
    pub mse: f64,
    pub fallbacks: usize,
    pub clause_selection: Option<SelectionScores>,
    pub word_selection: Option<SelectionScores>,
    pub per_aspect: Vec<AspectResult>,
    #[serde(skip)]
    pub outcomes: Vec<QueryOutcome>,
}

/// Rolls out every query of one document. `rng` drives sampling and
/// fallback draws.
pub fn evaluate_document(
    model: &Model,
    policies: &Policies,
    config: &Config,
    doc: &Document,
    mode: DecodeMode,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<QueryOutcome>> {
    let ex = model.encode(doc)?;
    let vectors = model.clause_vectors(&ex)?;
    ex.queries
        .iter()
        .map(|q| {
            let ctx = Context {
                model,
                config,
                clause_vectors: &vectors,
                words: &ex.clauses,
                aspect: &model.aspects[q.aspect].embedding,
                gold: q.rating,
            };
            let ep = match mode {
                DecodeMode::Greedy => rollout(ctx, policies, &mut Decode::<ChaCha8Rng>::Greedy, &PredictorRewards)?,
                DecodeMode::Sample => rollout(ctx, policies, &mut Decode::Sample(&mut *rng), &PredictorRewards)?,
            };
            let (predicted, fallback) = ep.predict(model, rng)?;
            Ok(QueryOutcome {
                document: ex.id.clone(),
                aspect: model.aspects[q.aspect].name.clone(),
                gold: q.rating,
                predicted,
                fallback,
                clauses: ep.options(),
                words: ep.word_masks(&ex.clauses),
            })
        })
        .collect()
}

/// Evaluates documents on up to `threads` workers. Document `k` uses
/// stream `k` of a generator seeded with `seed`, so results do not
/// depend on the thread count.
pub fn evaluate(
    model: &Model,
    policies: &Policies,
    config: &Config,
    docs: &[&Document],
    mode: DecodeMode,
    threads: usize,
    seed: u64,
) -> Result<EvalResult> {
    if threads == 0 {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::State(format!("thread pool: {e}")))?;
    let per_doc: Vec<Vec<QueryOutcome>> = pool.install(|| {
        docs.par_iter()
            .enumerate()
            .map(|(k, doc)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(k as u64);
                evaluate_document(model, policies, config, doc, mode, &mut rng)
            })
            .collect::<Result<_>>()
    })?;
    let outcomes: Vec<QueryOutcome> = per_doc.into_iter().flatten().collect();
    summarize(model, docs, outcomes, mode)
}

fn summarize(model: &Model, docs: &[&Document], outcomes: Vec<QueryOutcome>, mode: DecodeMode) -> Result<EvalResult> {
    let preds: Vec<usize> = outcomes.iter().map(|o| o.predicted).collect();
    let golds: Vec<usize> = outcomes.iter().map(|o| o.gold).collect();

    let mut clause_counts = SelectionCounts::default();
    let mut word_counts = SelectionCounts::default();
    let (mut clause_gold, mut word_gold) = (false, false);
    let mut at = 0;
    for doc in docs {
        for label in &doc.aspects {
            let o = &outcomes[at];
            at += 1;
            if let Some(mask) = &label.gold_clause_mask {
                clause_counts.add(&o.clauses, mask)?;
                clause_gold = true;
            }
            if let Some(masks) = &label.gold_word_masks {
                if masks.len() != o.words.len() {
                    return Err(Error::shape(
                        "selection_metrics",
                        format!("{} clauses", o.words.len()),
                        format!("{} word masks", masks.len()),
                    ));
                }
                let flat: Vec<bool> = masks.iter().flatten().copied().collect();
                word_counts.add(&o.effective_words(), &flat)?;
                word_gold = true;
            }
        }
    }

    let mut per_aspect = Vec::new();
    for a in &model.aspects {
        let hits: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.aspect == a.name).collect();
        if hits.is_empty() {
            continue;
        }
        let p: Vec<usize> = hits.iter().map(|o| o.predicted).collect();
        let g: Vec<usize> = hits.iter().map(|o| o.gold).collect();
        per_aspect.push(AspectResult {
            aspect: a.name.clone(),
            queries: hits.len(),
            accuracy: accuracy(&p, &g)?,
            mse: mse(&p, &g)?,
            fallbacks: hits.iter().filter(|o| o.fallback).count(),
        });
    }

    Ok(EvalResult {
        decode: mode,
        classes: model.classes(),
        queries: outcomes.len(),
        accuracy: accuracy(&preds, &golds)?,
        mse: mse(&preds, &golds)?,
        fallbacks: outcomes.iter().filter(|o| o.fallback).count(),
        clause_selection: clause_gold.then(|| clause_counts.scores()),
        word_selection: word_gold.then(|| word_counts.scores()),
        per_aspect,
        outcomes,
    })
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "lowercase")]
enum MetricsLine<'a> {
    Summary(&'a EvalResult),
    Query(&'a QueryOutcome),
}

/// One summary record followed by one record per query.
pub fn metrics_jsonl(result: &EvalResult) -> String {
    let mut out = String::new();
    let mut push = |line: MetricsLine<'_>| {
        out.push_str(&serde_json::to_string(&line).expect("metrics serialise"));
        out.push('\n');
    };
    push(MetricsLine::Summary(result));
    result.outcomes.iter().for_each(|o| push(MetricsLine::Query(o)));
    out
}

pub fn summary_table(result: &EvalResult) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "ratings 1-{}, {} queries, {} decode",
        result.classes,
        result.queries,
        match result.decode {
            DecodeMode::Greedy => "greedy",
            DecodeMode::Sample => "sample",
        }
    );
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8} {:>9}", "aspect", "queries", "acc", "mse", "fallback");
    for a in &result.per_aspect {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8.4} {:>8.4} {:>9}",
            a.aspect, a.queries, a.accuracy, a.mse, a.fallbacks
        );
    }
    let _ = writeln!(
        s,
        "{:<16} {:>8} {:>8.4} {:>8.4} {:>9}",
        "all", result.queries, result.accuracy, result.mse, result.fallbacks
    );
    for (name, scores) in [("clauses", result.clause_selection), ("words", result.word_selection)] {
        if let Some(sc) = scores {
            let _ = writeln!(
                s,
                "selection {name:<8} P {:.4}  R {:.4}  F1 {:.4}",
                sc.precision, sc.recall, sc.f1
            );
        }
    }
    s
}

#[cfg(test)]
mod tests;
