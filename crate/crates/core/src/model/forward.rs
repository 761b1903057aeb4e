use crate::attention::{attend_nodes, AttentionTrace, TraceStep};
use crate::error::{Error, Result};
use crate::numerics::{Graph, NodeId, Tensor};
use crate::tokenizer::TokenSequence;

use super::{LanguageModel, ModelKind};

/// One prediction step `k` across the batch.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// `B x 1` token negative log-likelihoods; zero on rows without a target.
    pub ce: NodeId,
    pub targets: Vec<Option<usize>>,
    /// `B x k` attention weights over `s_0 .. s_{k-1}`, for `k >= 1`.
    pub weights: Option<NodeId>,
}

/// Graph nodes produced by [`forward_batch`] for a batch of lines.
#[derive(Debug, Clone)]
pub struct BatchForward {
    pub line_ids: Vec<u64>,
    /// Token count (`ids.len()`) of each row.
    pub lens: Vec<usize>,
    pub steps: Vec<StepOutput>,
    /// Lower-tier states per position; filled for tiered models only.
    pub states: Vec<NodeId>,
    /// `[mean or attention; final]` line summary for tiered models.
    pub summary: Option<NodeId>,
    /// `B x T_max` tiered-attention weights, zero on padded positions.
    pub tier_weights: Option<NodeId>,
}

/// Per-line results pulled out of a [`BatchForward`].
#[derive(Debug, Clone, PartialEq)]
pub struct LineOutput {
    pub line_id: u64,
    /// `-log p(x_t)` for `t = 1 .. n+1`.
    pub token_nll: Vec<f64>,
    /// Sum of `token_nll`, the line's negative log-likelihood.
    pub loss: f64,
    /// Predictive distribution at each step, when captured.
    pub distributions: Option<Vec<Vec<f64>>>,
    pub trace: Option<AttentionTrace>,
}

pub type LineForward = LineOutput;

fn padded_ids(seqs: &[&TokenSequence], k: usize) -> Vec<usize> {
    seqs.iter()
        .map(|s| {
            *s.ids
                .get(k)
                .unwrap_or_else(|| s.ids.last().expect("non-empty"))
        })
        .collect()
}

fn position_mask(lens: &[usize], k: usize) -> Option<Tensor> {
    if lens.iter().all(|&l| k < l) {
        return None;
    }
    Some(
        Tensor::matrix(
            lens.len(),
            1,
            lens.iter()
                .map(|&l| if k < l { 1.0 } else { 0.0 })
                .collect(),
        )
        .expect("column"),
    )
}

/// Builds the forward computation for a batch of lines. Rows are
/// right-padded to the longest line; padded steps carry no target and
/// padded positions get zero weight in every summary. Parameter values are
/// taken from the graph's store, which must share `model`'s layout.
///
/// `context` is the `B x upper_hidden` context for tiered models and must
/// be `None` otherwise.
pub fn forward_batch(
    g: &mut Graph,
    model: &LanguageModel,
    seqs: &[&TokenSequence],
    context: Option<NodeId>,
) -> Result<BatchForward> {
    let cfg = &model.config;
    let lay = &model.layout;
    let b = seqs.len();
    if b == 0 {
        return Err(Error::Contract("empty batch".into()));
    }
    if let Some(s) = seqs.iter().find(|s| s.ids.len() < 3) {
        return Err(Error::Contract(format!(
            "line {} has no interior tokens",
            s.line_id
        )));
    }
    let tiered = cfg.kind.is_tiered();
    if tiered != context.is_some() {
        return Err(Error::Contract(format!(
            "context vector given for {} model: {}",
            cfg.kind.as_str(),
            !tiered
        )));
    }
    let lens: Vec<usize> = seqs.iter().map(|s| s.ids.len()).collect();
    let max_len = *lens.iter().max().expect("non-empty");
    let h = cfg.hidden_dim;

    let emb = g.param(lay.embedding);
    let mut inputs = Vec::with_capacity(max_len);
    for k in 0..max_len {
        let x = g.gather(emb, &padded_ids(seqs, k))?;
        inputs.push(match context {
            Some(ctx) => g.concat_cols(&[x, ctx])?,
            None => x,
        });
    }

    // Non-tiered models never need the state after EOS.
    let n_fwd = if tiered { max_len } else { max_len - 1 };
    let zeros = g.constant(Tensor::zeros(&[b, h]));
    let mut fwd = Vec::with_capacity(n_fwd);
    let (mut hs, mut cs) = (zeros, zeros);
    for x in &inputs[..n_fwd] {
        (hs, cs) = lay.forward.step(g, *x, hs, cs)?;
        fwd.push(hs);
    }

    // bwd[k] = g_k for k in low..=max_len, with g_{max_len} = 0.
    let mut bwd: Vec<Option<NodeId>> = vec![None; max_len + 1];
    if cfg.kind.is_bidirectional() {
        let p = lay.backward.as_ref().ok_or_else(|| {
            Error::Config("bidirectional model without backward parameters".into())
        })?;
        let low = if tiered { 0 } else { 2.min(max_len) };
        bwd[max_len] = Some(zeros);
        let (mut hb, mut cb) = (zeros, zeros);
        for k in (low..max_len).rev() {
            let (hn, cn) = p.step(g, inputs[k], hb, cb)?;
            match position_mask(&lens, k) {
                Some(m) => {
                    let m = g.constant(m);
                    hb = g.scale_rows(m, hn)?;
                    cb = g.scale_rows(m, cn)?;
                }
                None => (hb, cb) = (hn, cn),
            }
            bwd[k] = Some(hb);
        }
    }

    let head_w = g.param(lay.out_w);
    let head_b = g.param(lay.out_b);
    let head_wb = lay.out_wb.map(|id| g.param(id));
    let mut values = Vec::new();
    let mut keys = Vec::new();
    let mut steps = Vec::with_capacity(max_len - 1);
    for k in 0..max_len - 1 {
        let targets: Vec<Option<usize>> = seqs
            .iter()
            .map(|s| (k + 1 < s.ids.len()).then(|| s.ids[k + 1]))
            .collect();
        let mut weights = None;
        let features = match &lay.attention {
            Some(att) => {
                let a = if k == 0 {
                    g.constant(Tensor::zeros(&[b, att.value_dim()]))
                } else {
                    let v = att.value(g, fwd[k - 1])?;
                    keys.push(att.key(g, v)?);
                    values.push(v);
                    let q = att.query(g, fwd[k], k + 1, b)?;
                    let (a, d) = attend_nodes(g, &values, &keys, q, None)?;
                    weights = Some(d);
                    a
                };
                g.concat_cols(&[fwd[k], a])?
            }
            None => fwd[k],
        };
        let mut logits = g.matmul(features, head_w)?;
        if let Some(wb) = head_wb {
            let gb = bwd[k + 2].expect("backward state computed");
            let back = g.matmul(gb, wb)?;
            logits = g.add(logits, back)?;
        }
        let logits = g.add_row(logits, head_b)?;
        let ce = g.cross_entropy(logits, &targets)?;
        steps.push(StepOutput {
            ce,
            targets,
            weights,
        });
    }

    let mut out = BatchForward {
        line_ids: seqs.iter().map(|s| s.line_id).collect(),
        lens,
        steps,
        states: Vec::new(),
        summary: None,
        tier_weights: None,
    };
    if tiered {
        let states = (0..max_len)
            .map(|k| match bwd[k] {
                Some(gk) => g.concat_cols(&[fwd[k], gk]),
                None => Ok(fwd[k]),
            })
            .collect::<Result<Vec<_>>>()?;
        let (summary, weights) = super::tiered::summarize(g, model, &states, &out.lens)?;
        out.states = states;
        out.summary = Some(summary);
        out.tier_weights = weights;
    }
    Ok(out)
}

impl BatchForward {
    pub fn rows(&self) -> usize {
        self.lens.len()
    }

    /// Number of predicted tokens across the batch.
    pub fn num_tokens(&self) -> usize {
        self.lens.iter().map(|l| l - 1).sum()
    }

    /// Scalar node holding the summed token NLL of every row.
    pub fn total_nll(&self, g: &mut Graph) -> Result<NodeId> {
        let mut total: Option<NodeId> = None;
        for step in &self.steps {
            let s = g.sum(step.ce)?;
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        total.ok_or_else(|| Error::Contract("no prediction steps".into()))
    }

    /// Extracts row `r`. Distributions and traces are only collected when
    /// `capture` is set.
    pub fn line(&self, g: &Graph, r: usize, capture: bool) -> LineOutput {
        let len = self.lens[r];
        let n = len - 1;
        let token_nll: Vec<f64> = self.steps[..n]
            .iter()
            .map(|s| g.value(s.ce).get(r, 0))
            .collect();
        let loss = token_nll.iter().sum();
        let distributions = capture.then(|| {
            self.steps[..n]
                .iter()
                .map(|s| {
                    g.probabilities(s.ce)
                        .expect("cross-entropy node")
                        .row_slice(r)
                        .to_vec()
                })
                .collect()
        });
        let trace = if !capture {
            None
        } else if let Some(tw) = self.tier_weights {
            let w = g.value(tw).row_slice(r)[..len].to_vec();
            Some(AttentionTrace {
                line_id: self.line_ids[r],
                tiered: true,
                steps: vec![TraceStep {
                    position: len,
                    weights: w,
                }],
            })
        } else if self.steps.iter().any(|s| s.weights.is_some()) {
            let steps = self.steps[..n]
                .iter()
                .enumerate()
                .filter_map(|(k, s)| {
                    s.weights.map(|d| TraceStep {
                        position: k + 1,
                        weights: g.value(d).row_slice(r).to_vec(),
                    })
                })
                .collect();
            Some(AttentionTrace {
                line_id: self.line_ids[r],
                tiered: false,
                steps,
            })
        } else {
            None
        };
        LineOutput {
            line_id: self.line_ids[r],
            token_nll,
            loss,
            distributions,
            trace,
        }
    }
}

fn single_line(model: &LanguageModel, seq: &TokenSequence) -> Result<LineOutput> {
    let mut g = Graph::new(&model.params);
    let out = forward_batch(&mut g, model, &[seq], None)?;
    Ok(out.line(&g, 0, true))
}

/// Forward-only event model over one line, with distributions and any
/// attention trace captured.
pub fn em_forward(seq: &TokenSequence, model: &LanguageModel) -> Result<LineOutput> {
    if model.config.kind != ModelKind::Em {
        return Err(Error::Config(format!(
            "em_forward on a {} model",
            model.config.kind.as_str()
        )));
    }
    single_line(model, seq)
}

/// Bidirectional event model over one line.
pub fn bem_forward(seq: &TokenSequence, model: &LanguageModel) -> Result<LineOutput> {
    if model.config.kind != ModelKind::Bem
        || model.layout.backward.is_none()
        || model.layout.out_wb.is_none()
    {
        return Err(Error::Config(format!(
            "bem_forward needs backward parameters ({} model)",
            model.config.kind.as_str()
        )));
    }
    single_line(model, seq)
}

impl LanguageModel {
    /// Scores a batch of lines with a non-tiered model.
    pub fn score_batch(&self, seqs: &[&TokenSequence], capture: bool) -> Result<Vec<LineOutput>> {
        if self.config.kind.is_tiered() {
            return Err(Error::Contract(
                "tiered models score through per-user contexts".into(),
            ));
        }
        let mut g = Graph::new(&self.params);
        let out = forward_batch(&mut g, self, seqs, None)?;
        Ok((0..out.rows()).map(|r| out.line(&g, r, capture)).collect())
    }

    /// Mean token NLL of a non-tiered batch and its gradient.
    pub fn batch_gradients(
        &self,
        seqs: &[&TokenSequence],
    ) -> Result<(f64, crate::numerics::Gradients)> {
        if self.config.kind.is_tiered() {
            return Err(Error::Contract(
                "tiered models train through per-user windows".into(),
            ));
        }
        let mut g = Graph::new(&self.params);
        let out = forward_batch(&mut g, self, seqs, None)?;
        let total = out.total_nll(&mut g)?;
        let loss = g.scale(total, 1.0 / out.num_tokens() as f64)?;
        Ok((g.value(loss).data()[0], g.backward(loss)?))
    }
}
