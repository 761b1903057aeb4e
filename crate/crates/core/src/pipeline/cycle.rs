use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::scoring::{checked_loss, finalize_scores, scoring_error, ScoredEvent};
use crate::error::{Error, Result};
use crate::model::{group_by_user, ContextTable, LanguageModel, LineOutput, TierStream};
use crate::numerics::{AdamConfig, AdamState};
use crate::tokenizer::{TokenMode, TokenSequence};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Lines per minibatch, or user streams per batch for tiered models.
    pub batch_size: usize,
    /// Global gradient-norm ceiling applied before every update.
    pub clip_norm: f64,
    pub adam: AdamConfig,
    /// Lines per user per truncated-backpropagation window (tiered only).
    pub tbptt_window: usize,
    /// Shuffle non-tiered minibatches with the state's seeded generator.
    pub shuffle: bool,
    /// Worker threads for non-tiered scoring.
    pub eval_threads: usize,
    /// Score and train at the same time instead of in sequence.
    pub concurrent: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            clip_norm: 5.0,
            adam: AdamConfig::default(),
            tbptt_window: 3,
            shuffle: true,
            eval_threads: 1,
            concurrent: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.tbptt_window == 0 || self.eval_threads == 0 {
            return Err(Error::Config(
                "batch size, window and thread count must be positive".into(),
            ));
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.clip_norm) || !positive(self.adam.lr) {
            return Err(Error::Config(
                "clip norm and learning rate must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainStats {
    pub updates: usize,
    pub mean_loss: f64,
    pub max_grad_norm: f64,
}

#[derive(Debug, Clone)]
pub struct DayReport {
    pub day: u32,
    /// Empty on the first day, which is only trained on.
    pub scores: Vec<ScoredEvent>,
    /// Per-line outputs with distributions and traces, when captured.
    pub outputs: Vec<LineOutput>,
    pub train: TrainStats,
    /// Hash of the frozen parameters the day was scored with.
    pub eval_hash: String,
}

/// Two parameter copies plus optimizer state: the frozen copy scores the
/// current day while the live copy trains on it.
#[derive(Debug, Clone)]
pub struct DayCycleState {
    pub eval: LanguageModel,
    pub train: LanguageModel,
    pub adam: AdamState,
    pub eval_contexts: ContextTable,
    pub train_contexts: ContextTable,
    pub config: TrainConfig,
    pub mode: TokenMode,
    last_day: Option<u32>,
    rng: ChaCha8Rng,
    retained: usize,
    peak_retained: usize,
}

impl DayCycleState {
    pub fn new(
        model: LanguageModel,
        config: TrainConfig,
        mode: TokenMode,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params, config.adam);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        let dim = model.config.upper_hidden_dim;
        Ok(DayCycleState {
            eval: model.clone(),
            train: model,
            adam,
            eval_contexts: ContextTable::new(dim),
            train_contexts: ContextTable::new(dim),
            config,
            mode,
            last_day: None,
            rng,
            retained: 0,
            peak_retained: 0,
        })
    }

    pub fn last_day(&self) -> Option<u32> {
        self.last_day
    }

    /// Most lines held at once across all days processed so far.
    pub fn peak_retained(&self) -> usize {
        self.peak_retained
    }

    pub fn retained(&self) -> usize {
        self.retained
    }

    /// Scores, trains on and then drops one day of lines.
    pub fn run_day_cycle(
        &mut self,
        day: u32,
        events: Vec<TokenSequence>,
        capture: bool,
    ) -> Result<DayReport> {
        if let Some(last) = self.last_day {
            if day <= last {
                return Err(Error::Sequencing { last, got: day });
            }
        }
        if let Some(s) = events.iter().find(|s| s.day != day) {
            return Err(Error::Sequencing {
                last: day,
                got: s.day,
            });
        }
        self.retained = events.len();
        self.peak_retained = self.peak_retained.max(self.retained);
        let first = self.last_day.is_none();
        let eval_hash = self.eval.params.content_hash();

        let (outputs, train) = if first {
            (Vec::new(), self.train_day(&events)?)
        } else if self.config.concurrent {
            let DayCycleState {
                eval,
                train,
                adam,
                eval_contexts,
                train_contexts,
                config,
                rng,
                ..
            } = self;
            let scorer = Scorer {
                model: eval,
                config,
            };
            std::thread::scope(|s| {
                let handle = s.spawn(|| scorer.score(&events, eval_contexts, capture));
                let stats = train_lines(train, adam, train_contexts, config, rng, &events);
                let outputs = handle.join().expect("scoring thread panicked");
                Ok::<_, Error>((outputs?, stats?))
            })?
        } else {
            let outputs = Scorer {
                model: &self.eval,
                config: &self.config,
            }
            .score(&events, &mut self.eval_contexts, capture)?;
            (outputs, self.train_day(&events)?)
        };

        let mut scores = events
            .iter()
            .zip(&outputs)
            .map(|(seq, out)| Ok(ScoredEvent::new(seq, checked_loss(out)?)))
            .collect::<Result<Vec<_>>>()?;
        finalize_scores(&mut scores, self.mode);
        let outputs = if capture { outputs } else { Vec::new() };

        drop(events);
        self.retained = 0;
        self.eval.params.copy_from(&self.train.params)?;
        self.eval_contexts = self.train_contexts.clone();
        self.last_day = Some(day);
        Ok(DayReport {
            day,
            scores,
            outputs,
            train,
            eval_hash,
        })
    }

    /// Scores lines with the frozen copy without touching any state.
    pub fn score_frozen(&self, events: &[TokenSequence], capture: bool) -> Result<Vec<LineOutput>> {
        let mut contexts = self.eval_contexts.clone();
        Scorer {
            model: &self.eval,
            config: &self.config,
        }
        .score(events, &mut contexts, capture)
    }

    fn train_day(&mut self, events: &[TokenSequence]) -> Result<TrainStats> {
        train_lines(
            &mut self.train,
            &mut self.adam,
            &mut self.train_contexts,
            &self.config,
            &mut self.rng,
            events,
        )
    }
}

struct Scorer<'a> {
    model: &'a LanguageModel,
    config: &'a TrainConfig,
}

impl Scorer<'_> {
    fn score(
        &self,
        events: &[TokenSequence],
        contexts: &mut ContextTable,
        capture: bool,
    ) -> Result<Vec<LineOutput>> {
        let refs: Vec<&TokenSequence> = events.iter().collect();
        let bs = self.config.batch_size;
        if self.model.config.kind.is_tiered() {
            return self
                .model
                .score_tiered(contexts, &refs, bs, capture)
                .map_err(|e| first_line_error(&refs, e));
        }
        let batches: Vec<&[&TokenSequence]> = refs.chunks(bs).collect();
        let score_batches = |bs: &[&[&TokenSequence]]| -> Result<Vec<LineOutput>> {
            let mut out = Vec::new();
            for b in bs {
                out.extend(
                    self.model
                        .score_batch(b, capture)
                        .map_err(|e| first_line_error(b, e))?,
                );
            }
            Ok(out)
        };
        let threads = self.config.eval_threads.min(batches.len()).max(1);
        if threads == 1 {
            return score_batches(&batches);
        }
        let per = batches.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = batches
                .chunks(per)
                .map(|part| s.spawn(move || score_batches(part)))
                .collect();
            let mut out = Vec::with_capacity(events.len());
            for h in handles {
                out.extend(h.join().expect("scoring thread panicked")?);
            }
            Ok(out)
        })
    }
}

fn first_line_error(batch: &[&TokenSequence], e: Error) -> Error {
    scoring_error(batch.first().map_or(0, |s| s.line_id), e)
}

fn apply_update(
    model: &mut LanguageModel,
    adam: &mut AdamState,
    config: &TrainConfig,
    mut grads: crate::numerics::Gradients,
    stats: &mut TrainStats,
    loss: f64,
) -> Result<()> {
    let norm = grads.clip_global_norm(config.clip_norm);
    adam.step(&mut model.params, &grads)?;
    stats.updates += 1;
    stats.mean_loss += loss;
    stats.max_grad_norm = stats.max_grad_norm.max(norm);
    Ok(())
}

/// One epoch over the day's lines.
fn train_lines(
    model: &mut LanguageModel,
    adam: &mut AdamState,
    contexts: &mut ContextTable,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
    events: &[TokenSequence],
) -> Result<TrainStats> {
    let mut stats = TrainStats::default();
    if events.is_empty() {
        return Ok(stats);
    }
    if model.config.kind.is_tiered() {
        let refs: Vec<&TokenSequence> = events.iter().collect();
        let groups = group_by_user(&refs);
        for chunk in groups.chunks(config.batch_size) {
            let longest = chunk.iter().map(Vec::len).max().unwrap_or(0);
            for start in (0..longest).step_by(config.tbptt_window) {
                let streams: Vec<TierStream> = chunk
                    .iter()
                    .filter(|g| g.len() > start)
                    .map(|g| {
                        let end = (start + config.tbptt_window).min(g.len());
                        let lines: Vec<&TokenSequence> =
                            g[start..end].iter().map(|&i| refs[i]).collect();
                        TierStream {
                            context: contexts.get(&lines[0].user),
                            lines,
                        }
                    })
                    .collect();
                let (loss, grads, next) = model.window_gradients(&streams)?;
                apply_update(model, adam, config, grads, &mut stats, loss)?;
                for ctx in next {
                    contexts.set(ctx);
                }
            }
        }
    } else {
        let mut order: Vec<usize> = (0..events.len()).collect();
        if config.shuffle {
            order.shuffle(rng);
        }
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TokenSequence> = chunk.iter().map(|&i| &events[i]).collect();
            let (loss, grads) = model.batch_gradients(&batch)?;
            apply_update(model, adam, config, grads, &mut stats, loss)?;
        }
    }
    stats.mean_loss /= stats.updates as f64;
    Ok(stats)
}

/// Runs the day cycle over a stream of whole days, handing each report to
/// `sink` before the next day is read.
pub fn run_stream<I, F>(
    state: &mut DayCycleState,
    days: I,
    capture: bool,
    mut sink: F,
) -> Result<()>
where
    I: IntoIterator<Item = Result<(u32, Vec<TokenSequence>)>>,
    F: FnMut(DayReport) -> Result<()>,
{
    for item in days {
        let (day, events) = item?;
        let report = state.run_day_cycle(day, events, capture)?;
        sink(report)?;
    }
    Ok(())
}
