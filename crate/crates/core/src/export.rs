//! Score, ROC and attention exports.
//!
//! Everything here is plain data: CSV for tables, JSON for records and
//! JSON lines for attention traces. All writers refuse non-finite numbers.

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionTrace;
use crate::error::{Error, Result};
use crate::model::LineOutput;
use crate::pipeline::{AucSummary, RocCurve, ScoredEvent};
use crate::tokenizer::{TokenMode, TokenSequence, Vocabulary, WORD_SLOTS};

fn finite(what: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Streams scored lines as `line_id,user,day,raw,centered,red` rows.
pub struct ScoreWriter<W: Write> {
    out: csv::Writer<W>,
    rows: usize,
}

impl<W: Write> ScoreWriter<W> {
    pub fn new(w: W) -> Self {
        ScoreWriter {
            out: csv::Writer::from_writer(w),
            rows: 0,
        }
    }

    pub fn write(&mut self, scores: &[ScoredEvent]) -> Result<()> {
        for s in scores {
            finite("raw score", s.raw)?;
            finite("centered score", s.centered)?;
            self.out.serialize(s)?;
            self.rows += 1;
        }
        Ok(())
    }

    /// Flushes and returns the number of rows written.
    pub fn finish(mut self) -> Result<usize> {
        if self.rows == 0 {
            self.out
                .write_record(["line_id", "user", "day", "raw", "centered", "red"])?;
        }
        self.out.flush()?;
        Ok(self.rows)
    }
}

pub fn write_scores_csv<W: Write>(w: W, scores: &[ScoredEvent]) -> Result<()> {
    let mut out = ScoreWriter::new(w);
    out.write(scores)?;
    out.finish()?;
    Ok(())
}

pub fn read_scores_csv<R: Read>(r: R) -> Result<Vec<ScoredEvent>> {
    let mut rows = csv::Reader::from_reader(r);
    Ok(rows
        .deserialize()
        .collect::<std::result::Result<Vec<ScoredEvent>, _>>()?)
}

#[derive(Debug, Serialize)]
struct RocRow {
    fpr: f64,
    tpr: f64,
}

/// `fpr,tpr` in sweep order, from `(0,0)` to `(1,1)`.
pub fn write_roc_csv<W: Write>(w: W, roc: &RocCurve) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for &(fpr, tpr) in &roc.points {
        out.serialize(RocRow { fpr, tpr })?;
    }
    out.flush()?;
    Ok(())
}

/// Evaluation summary written by `eval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    pub auc: f64,
    pub lines: usize,
    pub red: usize,
    /// Statistic swept by the ROC: `centered` or `raw`.
    pub statistic: String,
    pub days: Vec<u32>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub seeds: Option<AucSummary>,
}

impl AucReport {
    pub fn new(scores: &[ScoredEvent], roc: &RocCurve, mode: TokenMode) -> Self {
        let mut days: Vec<u32> = scores.iter().map(|s| s.day).collect();
        days.sort_unstable();
        days.dedup();
        AucReport {
            auc: roc.auc,
            lines: scores.len(),
            red: scores.iter().filter(|s| s.red).count(),
            statistic: match mode {
                TokenMode::Word => "centered".into(),
                TokenMode::Char => "raw".into(),
            },
            days,
            seeds: None,
        }
    }
}

pub fn write_traces_jsonl<'a, W, I>(mut w: W, traces: I) -> Result<usize>
where
    W: Write,
    I: IntoIterator<Item = &'a AttentionTrace>,
{
    let mut n = 0;
    for t in traces {
        serde_json::to_writer(&mut w, t)?;
        w.write_all(b"\n")?;
        n += 1;
    }
    w.flush()?;
    Ok(n)
}

pub fn read_traces_jsonl<R: BufRead>(r: R) -> Result<Vec<AttentionTrace>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let t: AttentionTrace = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i as u64 + 1,
            msg: e.to_string(),
        })?;
        out.push(t);
    }
    Ok(out)
}

/// Label of token position `j` of a line: `sos`, a word slot name or
/// `eos` in word mode, the position itself in char mode.
pub fn position_label(mode: TokenMode, j: usize) -> String {
    match mode {
        TokenMode::Word if j == 0 => "sos".into(),
        TokenMode::Word if j <= WORD_SLOTS.len() => WORD_SLOTS[j - 1].into(),
        TokenMode::Word if j == WORD_SLOTS.len() + 1 => "eos".into(),
        _ => j.to_string(),
    }
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapCell {
    /// Position of the predicted token.
    pub predicted: usize,
    /// Position whose state is attended to.
    pub attended: usize,
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation over the lines with this cell.
    pub std: f64,
}

/// Mean and standard deviation of attention weights per (predicted,
/// attended) pair. The first token has no earlier states, so no row is
/// ever keyed by it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttentionHeatmap {
    pub lines: usize,
    pub cells: Vec<HeatmapCell>,
}

impl AttentionHeatmap {
    pub fn from_traces<'a, I>(traces: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a AttentionTrace>,
    {
        let mut acc: std::collections::BTreeMap<(usize, usize), Moments> = Default::default();
        let mut lines = 0;
        for t in traces {
            t.validate()?;
            lines += 1;
            for step in &t.steps {
                for (j, &w) in step.weights.iter().enumerate() {
                    acc.entry((step.position, j)).or_default().push(w);
                }
            }
        }
        let cells = acc
            .into_iter()
            .map(|((predicted, attended), m)| HeatmapCell {
                predicted,
                attended,
                count: m.n,
                mean: m.mean,
                std: (m.m2 / m.n as f64).max(0.0).sqrt(),
            })
            .collect();
        Ok(AttentionHeatmap { lines, cells })
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Sum of mean weights in each predicted-position row.
    pub fn row_sums(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for c in &self.cells {
            match out.last_mut() {
                Some((p, s)) if *p == c.predicted => *s += c.mean,
                _ => out.push((c.predicted, c.mean)),
            }
        }
        out
    }

    /// `predicted,predicted_label,attended,attended_label,count,mean,std`.
    pub fn write_csv<W: Write>(&self, w: W, mode: TokenMode) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "predicted",
            "predicted_label",
            "attended",
            "attended_label",
            "count",
            "mean",
            "std",
        ])?;
        for c in &self.cells {
            out.write_record([
                c.predicted.to_string(),
                position_label(mode, c.predicted),
                c.attended.to_string(),
                position_label(mode, c.attended),
                c.count.to_string(),
                finite("heatmap mean", c.mean)?.to_string(),
                finite("heatmap std", c.std)?.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseToken {
    /// Position `t` of the predicted token.
    pub position: usize,
    pub label: String,
    pub true_token: String,
    pub predicted_token: String,
    /// Model probability of the true token.
    pub probability: f64,
    pub nll: f64,
    /// Attention weights `d(t)` over positions `0 .. t-1`; empty without attention.
    pub attention: Vec<f64>,
}

/// Everything needed to draw one line's prediction and attention view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    pub line_id: u64,
    pub user: String,
    pub day: u32,
    pub red: bool,
    pub raw_score: f64,
    pub tokens: Vec<CaseToken>,
}

fn argmax(p: &[f64]) -> usize {
    p.iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

impl CaseStudy {
    /// `out` must have been captured with distributions, from a non-tiered model.
    pub fn build(seq: &TokenSequence, out: &LineOutput, vocab: &Vocabulary) -> Result<Self> {
        if seq.line_id != out.line_id {
            return Err(Error::Contract(format!(
                "line {} paired with output {}",
                seq.line_id, out.line_id
            )));
        }
        let dists = out
            .distributions
            .as_ref()
            .ok_or_else(|| Error::Contract("case study needs captured distributions".into()))?;
        if out.trace.as_ref().is_some_and(|t| t.tiered) {
            return Err(Error::Contract(
                "case studies cover per-token attention only".into(),
            ));
        }
        let name = |id: usize| vocab.token(id).unwrap_or("?").to_string();
        let tokens = dists
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let t = k + 1;
                let truth = seq.ids[t];
                let attention = out
                    .trace
                    .as_ref()
                    .and_then(|tr| tr.steps.iter().find(|s| s.position == t))
                    .map(|s| s.weights.clone())
                    .unwrap_or_default();
                Ok(CaseToken {
                    position: t,
                    label: position_label(vocab.mode(), t),
                    true_token: name(truth),
                    predicted_token: name(argmax(p)),
                    probability: finite("probability", p[truth])?,
                    nll: finite("token nll", out.token_nll[k])?,
                    attention,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(CaseStudy {
            line_id: seq.line_id,
            user: seq.user.clone(),
            day: seq.day,
            red: seq.red,
            raw_score: finite("line score", out.loss)?,
            tokens,
        })
    }
}

/// How lines are picked for case studies.
#[derive(Debug, Clone, PartialEq)]
pub enum CaseSelection {
    Lines(Vec<u64>),
    /// The `k` highest raw scores.
    TopScores(usize),
    Red,
}

/// Indices into `seqs` chosen by `sel`. Unknown line ids are a lookup error.
pub fn select_cases(
    seqs: &[TokenSequence],
    scores: &[f64],
    sel: &CaseSelection,
) -> Result<Vec<usize>> {
    match sel {
        CaseSelection::Lines(ids) => ids
            .iter()
            .map(|id| {
                seqs.iter()
                    .position(|s| s.line_id == *id)
                    .ok_or_else(|| Error::Lookup(format!("line {id}")))
            })
            .collect(),
        CaseSelection::TopScores(k) => {
            let mut idx: Vec<usize> = (0..seqs.len()).collect();
            idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            idx.truncate(*k);
            Ok(idx)
        }
        CaseSelection::Red => Ok((0..seqs.len()).filter(|&i| seqs[i].red).collect()),
    }
}
