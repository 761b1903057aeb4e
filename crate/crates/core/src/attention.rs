//! Dot-product attention over previous hidden states.
//!
//! Keys are `tanh(V W_key)`, weights are `softmax(q K^T)` and the attention
//! vector is the weighted sum of value rows. The per-token variants differ
//! only in where the query comes from:
//!
//! * `Fixed`: one learned vector shared by every step.
//! * `Syntax`: one learned vector per prediction position.
//! * `Semantic1`: `tanh(h W_query)` of the current hidden state.
//! * `Semantic2`: the second half of the current hidden state, with the
//!   first halves of earlier states as values.
//!
//! Tiered attention replaces the mean of lower-tier states in the line
//! summary with a weighted average whose query is `tanh(h_last W_query)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::init::glorot_uniform;
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionKind {
    None,
    Fixed,
    Syntax,
    Semantic1,
    Semantic2,
}

impl AttentionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionKind::None => "none",
            AttentionKind::Fixed => "fixed",
            AttentionKind::Syntax => "syntax",
            AttentionKind::Semantic1 => "semantic1",
            AttentionKind::Semantic2 => "semantic2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionKind::None),
            "fixed" => Ok(AttentionKind::Fixed),
            "syntax" => Ok(AttentionKind::Syntax),
            "semantic1" => Ok(AttentionKind::Semantic1),
            "semantic2" => Ok(AttentionKind::Semantic2),
            other => Err(Error::Config(format!(
                "unknown attention variant {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryParams {
    Fixed(ParamId),
    Syntax {
        table: ParamId,
        max_positions: usize,
    },
    Semantic1(ParamId),
    Semantic2,
}

/// Weights captured at one prediction. For per-token heads `position` is
/// the 1-based index `t` of the predicted token and `weights` has `t - 1`
/// entries; for the tiered summary it is the line length `T` and `weights`
/// has `T` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub position: usize,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionTrace {
    pub line_id: u64,
    pub tiered: bool,
    pub steps: Vec<TraceStep>,
}

impl AttentionTrace {
    /// Checks that every weight vector is a probability vector of the
    /// expected length.
    pub fn validate(&self) -> Result<()> {
        for step in &self.steps {
            let expected = if self.tiered {
                step.position
            } else {
                step.position.saturating_sub(1)
            };
            if step.weights.len() != expected || expected == 0 {
                return Err(Error::Contract(format!(
                    "line {}: {} weights at position {}",
                    self.line_id,
                    step.weights.len(),
                    step.position
                )));
            }
            let total: f64 = step.weights.iter().sum();
            if step.weights.iter().any(|w| w.is_nan() || *w < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(Error::Contract(format!(
                    "line {}: weights at position {} are not a distribution",
                    self.line_id, step.position
                )));
            }
        }
        Ok(())
    }
}

/// Parameters of a per-token attention head attached to the event model.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub kind: AttentionKind,
    pub w_key: ParamId,
    pub query: QueryParams,
    hidden_dim: usize,
    value_dim: usize,
}

impl AttentionParams {
    /// Registers the head's parameters. Semantic 2 carves query and value
    /// out of the hidden state, so its key width is `hidden / 2` and
    /// `attention_dim` is unused.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        kind: AttentionKind,
        hidden_dim: usize,
        attention_dim: usize,
        max_positions: usize,
    ) -> Result<Option<Self>> {
        let (value_dim, key_dim) = match kind {
            AttentionKind::None => return Ok(None),
            AttentionKind::Semantic2 => {
                if !hidden_dim.is_multiple_of(2) {
                    return Err(Error::Config(format!(
                        "semantic2 needs an even hidden size, got {hidden_dim}"
                    )));
                }
                (hidden_dim / 2, hidden_dim / 2)
            }
            _ => (hidden_dim, attention_dim),
        };
        let w_key = store.register("attention.w_key", glorot_uniform(rng, value_dim, key_dim));
        let query = match kind {
            AttentionKind::Fixed => QueryParams::Fixed(
                store.register("attention.query", glorot_uniform(rng, 1, key_dim)),
            ),
            AttentionKind::Syntax => QueryParams::Syntax {
                table: store.register(
                    "attention.query_table",
                    glorot_uniform(rng, max_positions, key_dim),
                ),
                max_positions,
            },
            AttentionKind::Semantic1 => QueryParams::Semantic1(store.register(
                "attention.w_query",
                glorot_uniform(rng, hidden_dim, key_dim),
            )),
            AttentionKind::Semantic2 => QueryParams::Semantic2,
            AttentionKind::None => unreachable!(),
        };
        Ok(Some(AttentionParams {
            kind,
            w_key,
            query,
            hidden_dim,
            value_dim,
        }))
    }

    /// Width of the attention vector fed to the output head.
    pub fn value_dim(&self) -> usize {
        self.value_dim
    }

    /// The part of a hidden state that serves as a value row.
    pub fn value(&self, g: &mut Graph, state: NodeId) -> Result<NodeId> {
        match self.query {
            QueryParams::Semantic2 => g.slice_cols(state, 0, self.value_dim),
            _ => Ok(state),
        }
    }

    pub fn key(&self, g: &mut Graph, value: NodeId) -> Result<NodeId> {
        let w = g.param(self.w_key);
        let proj = g.matmul(value, w)?;
        g.tanh(proj)
    }

    /// Query rows (`batch x key_dim`) for prediction position `t`
    /// (1-based index of the predicted token), given the current states.
    pub fn query(&self, g: &mut Graph, state: NodeId, t: usize, batch: usize) -> Result<NodeId> {
        match self.query {
            QueryParams::Fixed(q) => {
                let q = g.param(q);
                g.gather(q, &vec![0; batch])
            }
            QueryParams::Syntax {
                table,
                max_positions,
            } => {
                if t == 0 || t > max_positions {
                    return Err(Error::Range {
                        position: t,
                        max: max_positions,
                    });
                }
                let table = g.param(table);
                g.gather(table, &vec![t - 1; batch])
            }
            QueryParams::Semantic1(w) => {
                let w = g.param(w);
                let proj = g.matmul(state, w)?;
                g.tanh(proj)
            }
            QueryParams::Semantic2 => g.slice_cols(state, self.value_dim, self.hidden_dim),
        }
    }
}

/// Weights and attention vector from precomputed keys.
/// Returns `(a, d)` with `a: batch x value_dim` and `d: batch x n`.
pub fn attend_nodes(
    g: &mut Graph,
    values: &[NodeId],
    keys: &[NodeId],
    query: NodeId,
    keep: Option<&[bool]>,
) -> Result<(NodeId, NodeId)> {
    if values.is_empty() {
        return Err(Error::Contract("attention over zero values".into()));
    }
    let scores = g.row_dots(query, keys)?;
    let d = match keep {
        Some(mask) => g.softmax_rows_masked(scores, mask)?,
        None => g.softmax_rows(scores)?,
    };
    let a = g.weighted_sum(d, values)?;
    Ok((a, d))
}

fn rows_as_nodes(g: &mut Graph, m: &Tensor) -> Vec<NodeId> {
    (0..m.rows())
        .map(|r| g.constant(Tensor::row(m.row_slice(r).to_vec())))
        .collect()
}

fn as_row(t: &Tensor) -> Tensor {
    Tensor::row(t.data().to_vec())
}

/// `K = tanh(V W_key)`, `d = softmax(q K^T)`, `a = d V` for a single line,
/// with `V` holding one previous state per row.
pub fn attend(values: &Tensor, query: &Tensor, w_key: &Tensor) -> Result<(Tensor, Tensor)> {
    let empty = ParamStore::new();
    let mut g = Graph::new(&empty);
    let rows = rows_as_nodes(&mut g, values);
    let w = g.constant(w_key.clone());
    let keys = rows
        .iter()
        .map(|&v| {
            let p = g.matmul(v, w)?;
            g.tanh(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let q = g.constant(as_row(query));
    let (a, d) = attend_nodes(&mut g, &rows, &keys, q, None)?;
    Ok((g.value(a).clone(), g.value(d).clone()))
}

pub fn query_fixed(store: &ParamStore, params: &AttentionParams) -> Result<Tensor> {
    match params.query {
        QueryParams::Fixed(q) => Ok(store.get(q).clone()),
        _ => Err(Error::Contract("not a fixed-query head".into())),
    }
}

/// Row of the syntax query table for prediction position `t` (1-based).
pub fn query_syntax(store: &ParamStore, params: &AttentionParams, t: usize) -> Result<Tensor> {
    match params.query {
        QueryParams::Syntax {
            table,
            max_positions,
        } => {
            if t == 0 || t > max_positions {
                return Err(Error::Range {
                    position: t,
                    max: max_positions,
                });
            }
            Ok(Tensor::row(store.get(table).row_slice(t - 1).to_vec()))
        }
        _ => Err(Error::Contract("not a syntax-query head".into())),
    }
}

/// `q = tanh(h W_query)`.
pub fn query_semantic1(hidden: &Tensor, w_query: &Tensor) -> Result<Tensor> {
    let p = crate::numerics::tensor::matmul(&as_row(hidden), w_query)?;
    Ok(crate::numerics::tensor::tanh(&p))
}

/// Splits a hidden state into `(value half, query half)`.
pub fn split_semantic2(hidden: &Tensor) -> Result<(Tensor, Tensor)> {
    let n = hidden.len();
    if !n.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "semantic2 needs an even hidden size, got {n}"
        )));
    }
    let d = hidden.data();
    Ok((
        Tensor::row(d[..n / 2].to_vec()),
        Tensor::row(d[n / 2..].to_vec()),
    ))
}

/// Parameters of the line-summary attention used by tiered models.
#[derive(Debug, Clone, PartialEq)]
pub struct TieredAttentionParams {
    pub w_query: ParamId,
    pub w_key: ParamId,
}

impl TieredAttentionParams {
    /// Both matrices are `state_dim x attention_dim` so that `q K^T` is
    /// defined with keys `tanh(V W_key)`.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        state_dim: usize,
        attention_dim: usize,
    ) -> Self {
        TieredAttentionParams {
            w_query: store.register(
                "tier_attention.w_query",
                glorot_uniform(rng, state_dim, attention_dim),
            ),
            w_key: store.register(
                "tier_attention.w_key",
                glorot_uniform(rng, state_dim, attention_dim),
            ),
        }
    }

    /// `q = tanh(h_last W_query)`, `K = tanh(V W_key)`, `d = softmax(q K^T)`,
    /// `a = d V` over the `states` (one node per position). `keep[r * n + j]`
    /// marks valid positions for padded batches.
    pub fn apply(
        &self,
        g: &mut Graph,
        states: &[NodeId],
        last: NodeId,
        keep: Option<&[bool]>,
    ) -> Result<(NodeId, NodeId)> {
        let wq = g.param(self.w_query);
        let wk = g.param(self.w_key);
        let qp = g.matmul(last, wq)?;
        let q = g.tanh(qp)?;
        let keys = states
            .iter()
            .map(|&s| {
                let p = g.matmul(s, wk)?;
                g.tanh(p)
            })
            .collect::<Result<Vec<_>>>()?;
        attend_nodes(g, states, &keys, q, keep)
    }
}

/// Tiered attention for a single line: `V` holds the `T` lower-tier states.
pub fn tiered_attention(
    values: &Tensor,
    last: &Tensor,
    w_query: &Tensor,
    w_key: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let mut store = ParamStore::new();
    let params = TieredAttentionParams {
        w_query: store.register("q", w_query.clone()),
        w_key: store.register("k", w_key.clone()),
    };
    let mut g = Graph::new(&store);
    let rows = rows_as_nodes(&mut g, values);
    let last = g.constant(as_row(last));
    let (a, d) = params.apply(&mut g, &rows, last, None)?;
    Ok((g.value(a).clone(), g.value(d).clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
    }

    #[test]
    fn single_value_gets_all_weight() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = random(&mut rng, 1, 5);
        let (a, d) = attend(&v, &random(&mut rng, 1, 3), &random(&mut rng, 5, 3)).unwrap();
        assert_eq!(d.data(), &[1.0]);
        assert_eq!(a.data(), v.data());
    }

    #[test]
    fn zero_query_is_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random(&mut rng, 4, 5);
        let (a, d) = attend(&v, &Tensor::row(vec![0.0; 3]), &random(&mut rng, 5, 3)).unwrap();
        assert!(d.data().iter().all(|&w| w == 0.25));
        for c in 0..5 {
            let mean = (0..4).map(|r| v.get(r, c)).sum::<f64>() / 4.0;
            assert!((a.data()[c] - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_vector_is_explicit_weighted_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = random(&mut rng, 6, 5);
        let q = random(&mut rng, 1, 3);
        let w = random(&mut rng, 5, 3);
        let (a, d) = attend(&v, &q, &w).unwrap();
        // oracle: keys and weights by hand
        let mut scores = Vec::new();
        for r in 0..6 {
            let mut s = 0.0;
            for j in 0..3 {
                let mut k = 0.0;
                for i in 0..5 {
                    k += v.get(r, i) * w.get(i, j);
                }
                s += q.data()[j] * k.tanh();
            }
            scores.push(s);
        }
        let m = scores.iter().cloned().fold(f64::MIN, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for (w, s) in d.data().iter().zip(&scores) {
            assert!((w - (s - m).exp() / z).abs() < 1e-12);
        }
        for c in 0..5 {
            let explicit: f64 = (0..6).map(|r| d.data()[r] * v.get(r, c)).sum();
            assert!((a.data()[c] - explicit).abs() < 1e-12);
        }
    }

    #[test]
    fn semantic1_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random(&mut rng, 6, 4);
        let q0 = query_semantic1(&Tensor::row(vec![0.0; 6]), &w).unwrap();
        assert!(q0.data().iter().all(|&x| x == 0.0));
        let q = query_semantic1(&Tensor::row(vec![5.0; 6]), &w).unwrap();
        assert!(q.data().iter().all(|x| x.abs() < 1.0));
    }

    #[test]
    fn semantic2_split() {
        let h = Tensor::row((0..128).map(|i| i as f64 * 0.1).collect());
        let (v, q) = split_semantic2(&h).unwrap();
        assert_eq!((v.len(), q.len()), (64, 64));
        let back = crate::numerics::tensor::concat(&[&v, &q]).unwrap();
        assert_eq!(back, h);
        assert!(matches!(
            split_semantic2(&Tensor::row(vec![0.0; 7])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn fixed_and_syntax_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut fstore = ParamStore::new();
        let fixed =
            AttentionParams::register(&mut fstore, &mut rng, AttentionKind::Fixed, 8, 4, 11)
                .unwrap()
                .unwrap();
        assert_eq!(query_fixed(&fstore, &fixed).unwrap().len(), 4);
        let mut store = ParamStore::new();
        let syntax =
            AttentionParams::register(&mut store, &mut rng, AttentionKind::Syntax, 8, 4, 11)
                .unwrap()
                .unwrap();
        assert_eq!(
            query_syntax(&store, &syntax, 3).unwrap(),
            query_syntax(&store, &syntax, 3).unwrap()
        );
        assert_ne!(
            query_syntax(&store, &syntax, 3).unwrap(),
            query_syntax(&store, &syntax, 4).unwrap()
        );
        assert!(matches!(
            query_syntax(&store, &syntax, 12),
            Err(Error::Range {
                position: 12,
                max: 11
            })
        ));
        assert!(
            AttentionParams::register(&mut store, &mut rng, AttentionKind::None, 8, 4, 11)
                .unwrap()
                .is_none()
        );
    }

    #[test]
    fn tiered_attention_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let wq = random(&mut rng, 5, 3);
        let wk = random(&mut rng, 5, 3);
        let h1 = random(&mut rng, 1, 5);
        let (a, d) = tiered_attention(&h1, &h1, &wq, &wk).unwrap();
        assert_eq!(d.data(), &[1.0]);
        assert_eq!(a.data(), h1.data());

        let same = Tensor::from_rows(&vec![h1.data().to_vec(); 4]).unwrap();
        let (a, _) = tiered_attention(&same, &h1, &wq, &wk).unwrap();
        for (x, y) in a.data().iter().zip(h1.data()) {
            assert!((x - y).abs() < 1e-15);
        }

        let v = random(&mut rng, 6, 5);
        let last = Tensor::row(v.row_slice(5).to_vec());
        let (a, d) = tiered_attention(&v, &last, &wq, &wk).unwrap();
        assert_eq!(d.len(), 6);
        for c in 0..5 {
            let explicit: f64 = (0..6).map(|r| d.data()[r] * v.get(r, c)).sum();
            assert!((a.data()[c] - explicit).abs() < 1e-12);
        }
    }
}
