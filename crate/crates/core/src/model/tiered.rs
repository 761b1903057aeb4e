use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::attention::TieredAttentionParams;
use crate::error::{Error, Result};
use crate::numerics::{Gradients, Graph, NodeId, ParamStore, Tensor};
use crate::tokenizer::TokenSequence;

use super::forward::{forward_batch, BatchForward, LineOutput};
use super::{LanguageModel, LstmParams};

/// Upper-tier LSTM state for one user, carried across that user's lines.
/// `h` is the context vector handed to the user's next line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserContext {
    pub user: String,
    pub h: Tensor,
    pub c: Tensor,
}

impl UserContext {
    pub fn new(user: impl Into<String>, dim: usize) -> Self {
        UserContext {
            user: user.into(),
            h: Tensor::zeros(&[1, dim]),
            c: Tensor::zeros(&[1, dim]),
        }
    }
}

/// Contexts of every user seen so far; unseen users start at zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ContextTable {
    dim: usize,
    users: BTreeMap<String, UserContext>,
}

impl ContextTable {
    pub fn new(dim: usize) -> Self {
        ContextTable {
            dim,
            users: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn get(&self, user: &str) -> UserContext {
        self.users
            .get(user)
            .cloned()
            .unwrap_or_else(|| UserContext::new(user, self.dim))
    }

    pub fn set(&mut self, ctx: UserContext) {
        self.users.insert(ctx.user.clone(), ctx);
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserContext> {
        self.users.values()
    }
}

pub enum SummaryMode<'a> {
    /// `[mean(h_1..h_T); h_T]`.
    MeanFinal,
    /// `[a; h_T]` with `a` the tiered-attention average.
    Attention {
        w_query: &'a Tensor,
        w_key: &'a Tensor,
    },
}

/// Summary of one line's lower-tier states (`T x L_k`, one per row).
pub fn line_summary(states: &Tensor, mode: SummaryMode) -> Result<Tensor> {
    let (t, _) = states.dims2()?;
    let mut store = ParamStore::new();
    let tier = match mode {
        SummaryMode::MeanFinal => None,
        SummaryMode::Attention { w_query, w_key } => Some(TieredAttentionParams {
            w_query: store.register("q", w_query.clone()),
            w_key: store.register("k", w_key.clone()),
        }),
    };
    let mut g = Graph::new(&store);
    let rows: Vec<NodeId> = (0..t)
        .map(|r| g.constant(Tensor::row(states.row_slice(r).to_vec())))
        .collect();
    let (s, _) = summarize_with(&mut g, tier.as_ref(), &rows, &[t])?;
    Ok(g.value(s).clone())
}

fn weight_matrix(lens: &[usize], t: usize, f: impl Fn(usize, usize) -> f64) -> Tensor {
    let mut data = vec![0.0; lens.len() * t];
    for (row, &len) in data.chunks_mut(t).zip(lens) {
        for (j, w) in row[..len].iter_mut().enumerate() {
            *w = f(len, j);
        }
    }
    Tensor::matrix(lens.len(), t, data).expect("positive extents")
}

fn summarize_with(
    g: &mut Graph,
    tier: Option<&TieredAttentionParams>,
    states: &[NodeId],
    lens: &[usize],
) -> Result<(NodeId, Option<NodeId>)> {
    let t = states.len();
    let onehot = g.constant(weight_matrix(
        lens,
        t,
        |len, j| if j + 1 == len { 1.0 } else { 0.0 },
    ));
    let last = g.weighted_sum(onehot, states)?;
    let (avg, weights) = match tier {
        Some(p) => {
            let keep: Vec<bool> = lens
                .iter()
                .flat_map(|&len| (0..t).map(move |j| j < len))
                .collect();
            let (a, d) = p.apply(g, states, last, Some(&keep))?;
            (a, Some(d))
        }
        None => {
            let mean = g.constant(weight_matrix(lens, t, |len, _| 1.0 / len as f64));
            (g.weighted_sum(mean, states)?, None)
        }
    };
    Ok((g.concat_cols(&[avg, last])?, weights))
}

pub(super) fn summarize(
    g: &mut Graph,
    model: &LanguageModel,
    states: &[NodeId],
    lens: &[usize],
) -> Result<(NodeId, Option<NodeId>)> {
    summarize_with(g, model.layout.tier_attention.as_ref(), states, lens)
}

/// Feeds one line summary through the upper tier, updating `ctx`, and
/// returns the context vector for the user's next line.
pub fn tiered_step(
    store: &ParamStore,
    upper: &LstmParams,
    summary: &Tensor,
    ctx: &mut UserContext,
    user: &str,
) -> Result<Tensor> {
    if ctx.user != user {
        return Err(Error::Contract(format!(
            "context of {} used for a line of {user}",
            ctx.user
        )));
    }
    let (h, c) = super::lstm_step(store, upper, summary, &ctx.h, &ctx.c)?;
    ctx.h = h.clone();
    ctx.c = c;
    Ok(h)
}

/// One user's consecutive lines processed from a starting context.
#[derive(Debug, Clone)]
pub struct TierStream<'a> {
    pub context: UserContext,
    pub lines: Vec<&'a TokenSequence>,
}

#[derive(Debug, Clone)]
pub struct TieredRound {
    /// Stream index of each batch row.
    pub streams: Vec<usize>,
    pub out: BatchForward,
}

#[derive(Debug, Clone)]
pub struct TieredForward {
    pub rounds: Vec<TieredRound>,
    /// Upper-tier `(h, c)` of each stream after its last line, `1 x U`.
    pub final_state: Vec<(NodeId, NodeId)>,
}

impl TieredForward {
    pub fn total_nll(&self, g: &mut Graph) -> Result<(NodeId, usize)> {
        let mut total = None;
        let mut tokens = 0;
        for round in &self.rounds {
            let s = round.out.total_nll(g)?;
            tokens += round.out.num_tokens();
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        Ok((
            total.ok_or_else(|| Error::Contract("no lines".into()))?,
            tokens,
        ))
    }

    /// Final contexts as plain values, one per stream.
    pub fn contexts(&self, g: &Graph, streams: &[TierStream]) -> Vec<UserContext> {
        streams
            .iter()
            .zip(&self.final_state)
            .map(|(s, &(h, c))| UserContext {
                user: s.context.user.clone(),
                h: g.value(h).clone(),
                c: g.value(c).clone(),
            })
            .collect()
    }
}

/// Runs every stream's lines in order. Round `j` batches the `j`-th line
/// of each stream that has one; each line sees the context produced by its
/// user's previous line, never its own.
pub fn tiered_forward(
    g: &mut Graph,
    model: &LanguageModel,
    streams: &[TierStream],
) -> Result<TieredForward> {
    let upper = model.layout.upper.as_ref().ok_or_else(|| {
        Error::Config(format!(
            "{} model has no upper tier",
            model.config.kind.as_str()
        ))
    })?;
    for s in streams {
        if let Some(line) = s.lines.iter().find(|l| l.user != s.context.user) {
            return Err(Error::Contract(format!(
                "line {} of {} in the stream of {}",
                line.line_id, line.user, s.context.user
            )));
        }
    }
    let mut state: Vec<(NodeId, NodeId)> = streams
        .iter()
        .map(|s| {
            (
                g.constant(s.context.h.clone()),
                g.constant(s.context.c.clone()),
            )
        })
        .collect();
    let n_rounds = streams.iter().map(|s| s.lines.len()).max().unwrap_or(0);
    let mut rounds = Vec::with_capacity(n_rounds);
    for j in 0..n_rounds {
        let active: Vec<usize> = (0..streams.len())
            .filter(|&i| streams[i].lines.len() > j)
            .collect();
        let hs: Vec<NodeId> = active.iter().map(|&i| state[i].0).collect();
        let cs: Vec<NodeId> = active.iter().map(|&i| state[i].1).collect();
        let h = g.stack_rows(&hs)?;
        let c = g.stack_rows(&cs)?;
        let seqs: Vec<&TokenSequence> = active.iter().map(|&i| streams[i].lines[j]).collect();
        let out = forward_batch(g, model, &seqs, Some(h))?;
        let summary = out.summary.expect("tiered forward produces a summary");
        let (hn, cn) = upper.step(g, summary, h, c)?;
        for (row, &i) in active.iter().enumerate() {
            state[i] = (
                g.slice_rows(hn, row, row + 1)?,
                g.slice_rows(cn, row, row + 1)?,
            );
        }
        rounds.push(TieredRound {
            streams: active,
            out,
        });
    }
    Ok(TieredForward {
        rounds,
        final_state: state,
    })
}

/// Groups lines by user, keeping each user's lines in input order and the
/// users in order of first appearance. Returns indices into `seqs`.
pub fn group_by_user(seqs: &[&TokenSequence]) -> Vec<Vec<usize>> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, s) in seqs.iter().enumerate() {
        let g = *slot.entry(s.user.as_str()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[g].push(i);
    }
    groups
}

impl LanguageModel {
    /// Scores lines with a tiered model, advancing `contexts`. Users are
    /// batched up to `max_streams` at a time; each user's lines are scored
    /// in input order. Output is aligned with `seqs`.
    pub fn score_tiered(
        &self,
        contexts: &mut ContextTable,
        seqs: &[&TokenSequence],
        max_streams: usize,
        capture: bool,
    ) -> Result<Vec<LineOutput>> {
        let groups = group_by_user(seqs);
        let mut results: Vec<Option<LineOutput>> = vec![None; seqs.len()];
        for chunk in groups.chunks(max_streams.max(1)) {
            let rounds = chunk.iter().map(Vec::len).max().unwrap_or(0);
            for j in 0..rounds {
                let members: Vec<&Vec<usize>> = chunk.iter().filter(|g| g.len() > j).collect();
                let streams: Vec<TierStream> = members
                    .iter()
                    .map(|g| {
                        let line = seqs[g[j]];
                        TierStream {
                            context: contexts.get(&line.user),
                            lines: vec![line],
                        }
                    })
                    .collect();
                let mut g = Graph::new(&self.params);
                let fwd = tiered_forward(&mut g, self, &streams)?;
                let round = &fwd.rounds[0];
                for (row, &si) in round.streams.iter().enumerate() {
                    results[members[si][j]] = Some(round.out.line(&g, row, capture));
                }
                for ctx in fwd.contexts(&g, &streams) {
                    contexts.set(ctx);
                }
            }
        }
        Ok(results
            .into_iter()
            .map(|r| r.expect("every line scored"))
            .collect())
    }

    /// Mean token NLL over a truncated window of per-user streams, its
    /// gradient, and the detached contexts after the window.
    pub fn window_gradients(
        &self,
        streams: &[TierStream],
    ) -> Result<(f64, Gradients, Vec<UserContext>)> {
        let mut g = Graph::new(&self.params);
        let fwd = tiered_forward(&mut g, self, streams)?;
        let (total, tokens) = fwd.total_nll(&mut g)?;
        let loss = g.scale(total, 1.0 / tokens as f64)?;
        let grads = g.backward(loss)?;
        Ok((g.value(loss).data()[0], grads, fwd.contexts(&g, streams)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionKind;
    use crate::model::tests::toy;
    use crate::model::ModelKind;
    use crate::numerics::gradcheck::check_gradients;

    const STEP: f64 = 1e-3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn line(user: &str, ids: &[usize], line_id: u64) -> TokenSequence {
        let mut all = vec![1];
        all.extend_from_slice(ids);
        all.push(2);
        TokenSequence {
            ids: all,
            user: user.into(),
            day: 1,
            red: false,
            line_id,
        }
    }

    fn window_loss(
        model: &LanguageModel,
        store: &ParamStore,
        streams: &[TierStream],
    ) -> Result<(f64, Gradients)> {
        let mut g = Graph::new(store);
        let fwd = tiered_forward(&mut g, model, streams)?;
        let (total, _) = fwd.total_nll(&mut g)?;
        Ok((g.value(total).data()[0], g.backward(total)?))
    }

    #[test]
    fn tiered_gradients() {
        let a = [
            line("A", &[3, 4, 5, 6], 0),
            line("A", &[7, 8], 1),
            line("A", &[9, 3, 4, 0], 2),
        ];
        let b = [line("B", &[5, 5, 6, 11], 3), line("B", &[10, 4, 3], 4)];
        for kind in [
            ModelKind::TEm,
            ModelKind::TBem,
            ModelKind::TaEm,
            ModelKind::TaBem,
        ] {
            let model = LanguageModel::new(toy(kind, AttentionKind::None), 21).unwrap();
            let mut ctx_a = UserContext::new("A", 8);
            ctx_a
                .h
                .data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.3);
            let streams = vec![
                TierStream {
                    context: ctx_a,
                    lines: a.iter().collect(),
                },
                TierStream {
                    context: UserContext::new("B", 8),
                    lines: b.iter().collect(),
                },
            ];
            let (_, grads) = window_loss(&model, &model.params, &streams).unwrap();
            let report = check_gradients(&model.params, &grads, STEP, |s| {
                Ok(window_loss(&model, s, &streams)?.0)
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "{kind:?}: {report:?}");
        }
    }

    #[test]
    fn summary_cases() {
        let h = Tensor::row(vec![0.5, -1.0, 2.0]);
        let s = line_summary(&h, SummaryMode::MeanFinal).unwrap();
        assert_eq!(s.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

        let same = Tensor::from_rows(&vec![vec![0.3, 0.7, -0.1]; 4]).unwrap();
        let s = line_summary(&same, SummaryMode::MeanFinal).unwrap();
        for (x, y) in s.data()[..3].iter().zip(same.row_slice(0)) {
            assert!((x - y).abs() < 1e-15);
        }

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = Tensor::matrix(5, 3, (0..15).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let s = line_summary(&v, SummaryMode::MeanFinal).unwrap();
        for c in 0..3 {
            let mean = (0..5).map(|r| v.get(r, c)).sum::<f64>() / 5.0;
            assert!((s.data()[c] - mean).abs() < 1e-12);
            assert_eq!(s.data()[3 + c], v.get(4, c));
        }
        let wq = Tensor::matrix(3, 2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6]).unwrap();
        let s = line_summary(
            &h,
            SummaryMode::Attention {
                w_query: &wq,
                w_key: &wq,
            },
        )
        .unwrap();
        assert_eq!(s.data(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_line_sees_zero_context() {
        let model = LanguageModel::new(toy(ModelKind::TEm, AttentionKind::None), 2).unwrap();
        let mut table = ContextTable::new(8);
        assert_eq!(table.get("A").h.data(), &[0.0; 8]);
        let l = line("A", &[3, 4], 0);
        model.score_tiered(&mut table, &[&l], 64, false).unwrap();
        assert_eq!(table.get("A").h.len(), 8);
        assert!(table.get("A").h.data().iter().any(|&x| x != 0.0));
    }

    #[test]
    fn tiered_step_checks_user() {
        let model = LanguageModel::new(toy(ModelKind::TEm, AttentionKind::None), 2).unwrap();
        let upper = model.layout.upper.as_ref().unwrap();
        let mut ctx = UserContext::new("A", 8);
        let summary = Tensor::row(vec![0.1; 16]);
        let h = tiered_step(&model.params, upper, &summary, &mut ctx, "A").unwrap();
        assert_eq!(h.len(), 8);
        assert_eq!(ctx.h, h);
        assert!(matches!(
            tiered_step(&model.params, upper, &summary, &mut ctx, "B"),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn interleaved_users_match_separate_runs() {
        for kind in [ModelKind::TBem, ModelKind::TaEm] {
            let model = LanguageModel::new(toy(kind, AttentionKind::None), 12).unwrap();
            let lines = [
                line("A", &[3, 4, 5], 0),
                line("B", &[6, 7], 1),
                line("A", &[8, 9, 10, 11], 2),
                line("B", &[3], 3),
                line("A", &[4, 4], 4),
            ];
            let all: Vec<&TokenSequence> = lines.iter().collect();
            let joint = model
                .score_tiered(&mut ContextTable::new(8), &all, 64, true)
                .unwrap();
            let only = |u: &str| -> Vec<LineOutput> {
                let mine: Vec<&TokenSequence> = lines.iter().filter(|l| l.user == u).collect();
                model
                    .score_tiered(&mut ContextTable::new(8), &mine, 64, true)
                    .unwrap()
            };
            let (a, b) = (only("A"), only("B"));
            assert_eq!(joint[0], a[0]);
            assert_eq!(joint[2], a[1]);
            assert_eq!(joint[4], a[2]);
            assert_eq!(joint[1], b[0]);
            assert_eq!(joint[3], b[1]);
            let one_at_a_time = model
                .score_tiered(&mut ContextTable::new(8), &all, 1, true)
                .unwrap();
            assert_eq!(joint, one_at_a_time);
        }
    }

    #[test]
    fn tier_trace_covers_every_position() {
        let model = LanguageModel::new(toy(ModelKind::TaBem, AttentionKind::None), 12).unwrap();
        let l = [line("A", &[3, 4, 5], 7), line("A", &[3], 8)];
        let out = model
            .score_tiered(&mut ContextTable::new(8), &[&l[0], &l[1]], 64, true)
            .unwrap();
        let t = out[0].trace.as_ref().unwrap();
        t.validate().unwrap();
        assert_eq!(t.steps[0].weights.len(), 5);
        assert_eq!(out[1].trace.as_ref().unwrap().steps[0].weights.len(), 3);
    }
}
