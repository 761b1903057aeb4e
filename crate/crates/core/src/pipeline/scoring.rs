use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LanguageModel, LineOutput};
use crate::tokenizer::{TokenMode, TokenSequence};

/// One scored log line. `raw` is the line's negative log-likelihood in
/// nats; `centered` is `raw` minus the mean raw score of the same user on
/// the same day (word mode), or `raw` itself (char mode).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEvent {
    pub line_id: u64,
    pub user: String,
    pub day: u32,
    pub raw: f64,
    pub centered: f64,
    pub red: bool,
}

impl ScoredEvent {
    pub fn new(seq: &TokenSequence, raw: f64) -> Self {
        ScoredEvent {
            line_id: seq.line_id,
            user: seq.user.clone(),
            day: seq.day,
            raw,
            centered: raw,
            red: seq.red,
        }
    }

    /// The statistic swept by the ROC: centered in word mode, raw in char mode.
    pub fn detection_score(&self, mode: TokenMode) -> f64 {
        match mode {
            TokenMode::Word => self.centered,
            TokenMode::Char => self.raw,
        }
    }
}

/// Maps forward failures to a scoring error carrying the line id.
pub(crate) fn scoring_error(line_id: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::Scoring {
            line_id,
            msg: format!("non-finite value in {msg}"),
        },
        other => other,
    }
}

/// Raw anomaly score of one line under a non-tiered model: the summed
/// negative log-likelihood of every interior token and EOS.
pub fn score_line(seq: &TokenSequence, model: &LanguageModel) -> Result<f64> {
    let out = model
        .score_batch(&[seq], false)
        .map_err(|e| scoring_error(seq.line_id, e))?;
    checked_loss(&out[0])
}

pub(crate) fn checked_loss(out: &LineOutput) -> Result<f64> {
    if !out.loss.is_finite() {
        return Err(Error::Scoring {
            line_id: out.line_id,
            msg: format!("score {}", out.loss),
        });
    }
    Ok(out.loss)
}

/// Subtracts each `(user, day)` group's mean raw score.
pub fn center_user_scores(scores: &mut [ScoredEvent]) {
    let mut groups: HashMap<(&str, u32), (f64, usize)> = HashMap::new();
    for s in scores.iter() {
        let e = groups.entry((s.user.as_str(), s.day)).or_insert((0.0, 0));
        e.0 += s.raw;
        e.1 += 1;
    }
    let means: HashMap<(String, u32), f64> = groups
        .into_iter()
        .map(|((u, d), (sum, n))| ((u.to_string(), d), sum / n as f64))
        .collect();
    for s in scores.iter_mut() {
        s.centered = s.raw - means[&(s.user.clone(), s.day)];
    }
}

/// Centers in word mode and copies raw scores through in char mode.
pub fn finalize_scores(scores: &mut [ScoredEvent], mode: TokenMode) {
    match mode {
        TokenMode::Word => center_user_scores(scores),
        TokenMode::Char => scores.iter_mut().for_each(|s| s.centered = s.raw),
    }
}
