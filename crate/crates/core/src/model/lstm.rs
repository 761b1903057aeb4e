use rand::Rng;

use crate::error::{dim_err, Result};
use crate::numerics::init::glorot_uniform;
use crate::numerics::{Graph, NodeId, ParamId, ParamStore, Tensor};

/// Single-layer LSTM cell. Gate pre-activations are computed jointly as
/// `x W_x + h W_h + b` and split into input, forget, candidate and output
/// blocks of `hidden_dim` columns each, in that order.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    /// Glorot-uniform weights, forget-gate bias 1, other biases 0.
    pub fn register<R: Rng>(
        store: &mut ParamStore,
        rng: &mut R,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
    ) -> Self {
        let w_x = store.register(
            format!("{prefix}.w_x"),
            glorot_uniform(rng, input_dim, 4 * hidden_dim),
        );
        let w_h = store.register(
            format!("{prefix}.w_h"),
            glorot_uniform(rng, hidden_dim, 4 * hidden_dim),
        );
        let mut bias = vec![0.0; 4 * hidden_dim];
        bias[hidden_dim..2 * hidden_dim].fill(1.0);
        let b = store.register(format!("{prefix}.b"), Tensor::row(bias));
        LstmParams {
            w_x,
            w_h,
            b,
            input_dim,
            hidden_dim,
        }
    }

    /// One step for a batch of rows; `x` is `B x input_dim`, `h` and `c`
    /// are `B x hidden_dim`.
    pub fn step(&self, g: &mut Graph, x: NodeId, h: NodeId, c: NodeId) -> Result<(NodeId, NodeId)> {
        let hd = self.hidden_dim;
        let wx = g.param(self.w_x);
        let wh = g.param(self.w_h);
        let b = g.param(self.b);
        let zx = g.matmul(x, wx)?;
        let zh = g.matmul(h, wh)?;
        let z = g.add(zx, zh)?;
        let z = g.add_row(z, b)?;
        let i = g.slice_cols(z, 0, hd)?;
        let f = g.slice_cols(z, hd, 2 * hd)?;
        let cand = g.slice_cols(z, 2 * hd, 3 * hd)?;
        let o = g.slice_cols(z, 3 * hd, 4 * hd)?;
        let i = g.sigmoid(i)?;
        let f = g.sigmoid(f)?;
        let cand = g.tanh(cand)?;
        let o = g.sigmoid(o)?;
        let keep = g.mul(f, c)?;
        let write = g.mul(i, cand)?;
        let c_new = g.add(keep, write)?;
        let squashed = g.tanh(c_new)?;
        let h_new = g.mul(o, squashed)?;
        Ok((h_new, c_new))
    }
}

/// Evaluates one cell step on plain tensors: returns `(h, c)`.
pub fn lstm_step(
    store: &ParamStore,
    params: &LstmParams,
    x: &Tensor,
    h_prev: &Tensor,
    c_prev: &Tensor,
) -> Result<(Tensor, Tensor)> {
    if x.len() != params.input_dim
        || h_prev.len() != params.hidden_dim
        || c_prev.len() != params.hidden_dim
    {
        return Err(dim_err(format!(
            "lstm_step: x {}, h {}, c {} for input {} hidden {}",
            x.len(),
            h_prev.len(),
            c_prev.len(),
            params.input_dim,
            params.hidden_dim
        )));
    }
    let mut g = Graph::new(store);
    let x = g.constant(Tensor::row(x.data().to_vec()));
    let h = g.constant(Tensor::row(h_prev.data().to_vec()));
    let c = g.constant(Tensor::row(c_prev.data().to_vec()));
    let (h, c) = params.step(&mut g, x, h, c)?;
    Ok((g.value(h).clone(), g.value(c).clone()))
}
