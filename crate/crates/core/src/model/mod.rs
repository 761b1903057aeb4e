//! LSTM event language models.
//!
//! A log line is a token sequence `x_0 = SOS, x_1 .. x_n, x_{n+1} = EOS`.
//! The forward LSTM state after consuming `x_0 .. x_k` is `s_k`, and step
//! `k` predicts `x_{k+1}`. The bidirectional variants add a right-to-left
//! LSTM whose state `g_k` covers `x_k .. x_{n+1}`; they predict `x_{k+1}`
//! from `s_k` and `g_{k+2}`. Tiered variants feed a per-user context vector
//! from an upper-tier LSTM into every lower-tier input.

mod forward;
mod lstm;
mod tiered;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{AttentionKind, AttentionParams, TieredAttentionParams};
use crate::error::{Error, Result};
use crate::numerics::init::glorot_uniform;
use crate::numerics::{ParamId, ParamStore, Tensor};

pub use forward::{
    bem_forward, em_forward, forward_batch, BatchForward, LineForward, LineOutput, StepOutput,
};
pub use lstm::{lstm_step, LstmParams};
pub use tiered::{
    group_by_user, line_summary, tiered_forward, tiered_step, ContextTable, SummaryMode,
    TierStream, TieredForward, TieredRound, UserContext,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "em")]
    Em,
    #[serde(rename = "bem")]
    Bem,
    #[serde(rename = "t-em")]
    TEm,
    #[serde(rename = "t-bem")]
    TBem,
    #[serde(rename = "ta-em")]
    TaEm,
    #[serde(rename = "ta-bem")]
    TaBem,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Em,
        ModelKind::Bem,
        ModelKind::TEm,
        ModelKind::TBem,
        ModelKind::TaEm,
        ModelKind::TaBem,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Em => "em",
            ModelKind::Bem => "bem",
            ModelKind::TEm => "t-em",
            ModelKind::TBem => "t-bem",
            ModelKind::TaEm => "ta-em",
            ModelKind::TaBem => "ta-bem",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown model kind {s:?}")))
    }

    pub fn is_bidirectional(self) -> bool {
        matches!(self, ModelKind::Bem | ModelKind::TBem | ModelKind::TaBem)
    }

    pub fn is_tiered(self) -> bool {
        matches!(
            self,
            ModelKind::TEm | ModelKind::TBem | ModelKind::TaEm | ModelKind::TaBem
        )
    }

    pub fn has_tier_attention(self) -> bool {
        matches!(self, ModelKind::TaEm | ModelKind::TaBem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub attention: AttentionKind,
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub upper_hidden_dim: usize,
    /// Rows of the syntax query table; prediction positions beyond it are
    /// a range error.
    pub max_positions: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.attention != AttentionKind::None && self.kind != ModelKind::Em {
            return Err(Error::Config(format!(
                "attention {} is only available for the em model, not {}",
                self.attention.as_str(),
                self.kind.as_str()
            )));
        }
        if self.vocab_size < 2 {
            return Err(Error::Config(format!(
                "vocabulary of {} tokens",
                self.vocab_size
            )));
        }
        let dims = [
            ("embedding", self.embedding_dim),
            ("hidden", self.hidden_dim),
            ("attention", self.attention_dim),
            ("upper hidden", self.upper_hidden_dim),
            ("max positions", self.max_positions),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, d)| *d == 0) {
            return Err(Error::Config(format!("{name} size must be positive")));
        }
        if self.attention == AttentionKind::Semantic2 && !self.hidden_dim.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "semantic2 needs an even hidden size, got {}",
                self.hidden_dim
            )));
        }
        Ok(())
    }

    /// Width of one lower-tier state: `s_k`, or `[s_k; g_k]` when bidirectional.
    pub fn lower_state_dim(&self) -> usize {
        if self.kind.is_bidirectional() {
            2 * self.hidden_dim
        } else {
            self.hidden_dim
        }
    }

    pub fn context_dim(&self) -> usize {
        if self.kind.is_tiered() {
            self.upper_hidden_dim
        } else {
            0
        }
    }
}

/// Where each parameter lives in the model's [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub embedding: ParamId,
    pub forward: LstmParams,
    pub backward: Option<LstmParams>,
    /// Output weights applied to `s_k`, or to `[s_k; a_k]` with attention.
    pub out_w: ParamId,
    /// Output weights applied to the backward state.
    pub out_wb: Option<ParamId>,
    pub out_b: ParamId,
    pub attention: Option<AttentionParams>,
    pub tier_attention: Option<TieredAttentionParams>,
    pub upper: Option<LstmParams>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamStore,
}

impl LanguageModel {
    /// Builds a freshly initialized model; `seed` fully determines the
    /// initial parameter values.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let c = &config;
        let embedding = store.register(
            "embedding",
            glorot_uniform(&mut rng, c.vocab_size, c.embedding_dim),
        );
        let lower_in = c.embedding_dim + c.context_dim();
        let forward =
            LstmParams::register(&mut store, &mut rng, "lstm_fwd", lower_in, c.hidden_dim);
        let backward = c.kind.is_bidirectional().then(|| {
            LstmParams::register(&mut store, &mut rng, "lstm_bwd", lower_in, c.hidden_dim)
        });
        let attention = AttentionParams::register(
            &mut store,
            &mut rng,
            c.attention,
            c.hidden_dim,
            c.attention_dim,
            c.max_positions,
        )?;
        let head_in = c.hidden_dim + attention.as_ref().map_or(0, AttentionParams::value_dim);
        let out_w = store.register("out.w", glorot_uniform(&mut rng, head_in, c.vocab_size));
        let out_wb = c.kind.is_bidirectional().then(|| {
            store.register(
                "out.w_b",
                glorot_uniform(&mut rng, c.hidden_dim, c.vocab_size),
            )
        });
        let out_b = store.register("out.b", Tensor::zeros(&[1, c.vocab_size]));
        let lk = c.lower_state_dim();
        let tier_attention = c
            .kind
            .has_tier_attention()
            .then(|| TieredAttentionParams::register(&mut store, &mut rng, lk, c.attention_dim));
        let upper = c.kind.is_tiered().then(|| {
            LstmParams::register(
                &mut store,
                &mut rng,
                "lstm_upper",
                2 * lk,
                c.upper_hidden_dim,
            )
        });
        let layout = ModelLayout {
            embedding,
            forward,
            backward,
            out_w,
            out_wb,
            out_b,
            attention,
            tier_attention,
            upper,
        };
        Ok(LanguageModel {
            config,
            layout,
            params: store,
        })
    }
}
