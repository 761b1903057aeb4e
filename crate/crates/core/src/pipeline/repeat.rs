use serde::{Deserialize, Serialize};

use super::cycle::{run_stream, DayCycleState, TrainConfig};
use super::roc::{auc_roc, RocCurve};
use super::scoring::ScoredEvent;
use crate::error::{Error, Result};
use crate::model::{LanguageModel, ModelConfig};
use crate::tokenizer::{TokenMode, TokenSequence};

/// AUC statistics over repeated runs. `std` is the sample standard
/// deviation (`n - 1` denominator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucSummary {
    pub runs: usize,
    pub mean: f64,
    pub max: f64,
    pub min: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

impl AucSummary {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::Contract(format!(
                "{} runs; at least 2 are needed",
                values.len()
            )));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(AucSummary {
            runs: values.len(),
            mean,
            max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().cloned().fold(f64::INFINITY, f64::min),
            std: var.sqrt(),
            values: values.to_vec(),
        })
    }

    /// Table row in `Mean Max Min Std. Dev.` order.
    pub fn table_row(&self, label: &str) -> String {
        format!(
            "{label:<24} {:.4} {:.4} {:.4} {:.4}",
            self.mean, self.max, self.min, self.std
        )
    }
}

/// A complete experiment: model shape, training schedule and tokenization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub mode: TokenMode,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub seed: u64,
    /// Scores of every evaluated day, in input order.
    pub scores: Vec<ScoredEvent>,
    pub roc: RocCurve,
    pub peak_retained: usize,
}

/// ROC over the detection statistic of `scores`.
pub fn roc_for(scores: &[ScoredEvent], mode: TokenMode) -> Result<RocCurve> {
    let s: Vec<f64> = scores.iter().map(|e| e.detection_score(mode)).collect();
    let l: Vec<bool> = scores.iter().map(|e| e.red).collect();
    auc_roc(&s, &l)
}

impl Experiment {
    /// Runs the day cycle over `days` from a model initialized with `seed`.
    pub fn run(&self, seed: u64, days: &[(u32, Vec<TokenSequence>)]) -> Result<ExperimentOutcome> {
        let model = LanguageModel::new(self.model.clone(), seed)?;
        let mut state = DayCycleState::new(model, self.train.clone(), self.mode, seed)?;
        let mut scores = Vec::new();
        run_stream(
            &mut state,
            days.iter().map(|(d, e)| Ok((*d, e.clone()))),
            false,
            |r| {
                scores.extend(r.scores);
                Ok(())
            },
        )?;
        let roc = roc_for(&scores, self.mode)?;
        Ok(ExperimentOutcome {
            seed,
            scores,
            roc,
            peak_retained: state.peak_retained(),
        })
    }
}

/// Runs `run` once per seed and aggregates the resulting AUCs.
pub fn repeat_runs<F>(seeds: &[u64], mut run: F) -> Result<AucSummary>
where
    F: FnMut(u64) -> Result<f64>,
{
    if seeds.len() < 2 {
        return Err(Error::Contract(format!(
            "{} seeds; at least 2 are needed",
            seeds.len()
        )));
    }
    let values = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    AucSummary::from_values(&values)
}
