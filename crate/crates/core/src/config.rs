//! Run configuration loaded from TOML.
//!
//! ```toml
//! seed = 1
//!
//! [model]
//! kind = "em"            # em, bem, t-em, t-bem, ta-em, ta-bem
//! attention = "semantic1"  # none, fixed, syntax, semantic1, semantic2
//! tokenization = "word"  # word, char
//!
//! [train]
//! batch_size = 64
//!
//! [paths]
//! auth = "auth.txt"
//! redteam = "redteam.txt"
//! out_dir = "out"
//! ```
//!
//! Every omitted key takes its default; [`RunConfig::resolved_toml`] prints
//! the fully expanded form.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attention::AttentionKind;
use crate::error::{io_at, Error, Result};
use crate::model::{ModelConfig, ModelKind};
use crate::numerics::AdamConfig;
use crate::pipeline::TrainConfig;
use crate::synthgen::GenConfig;
use crate::tokenizer::vocab::DEFAULT_THRESHOLD;
use crate::tokenizer::{MachineFilter, TokenMode, WORD_SLOTS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub attention: AttentionKind,
    pub tokenization: TokenMode,
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub attention_dim: usize,
    pub upper_hidden_dim: usize,
    /// Syntax-attention table rows; 0 picks the tokenization's default.
    pub max_positions: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: ModelKind::Em,
            attention: AttentionKind::None,
            tokenization: TokenMode::Word,
            embedding_dim: 128,
            hidden_dim: 128,
            attention_dim: 128,
            upper_hidden_dim: 128,
            max_positions: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub clip_norm: f64,
    pub tbptt_window: usize,
    pub shuffle: bool,
    pub eval_threads: usize,
    pub concurrent: bool,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.adam.lr,
            beta1: t.adam.beta1,
            beta2: t.adam.beta2,
            eps: t.adam.eps,
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            tbptt_window: t.tbptt_window,
            shuffle: t.shuffle,
            eval_threads: t.eval_threads,
            concurrent: t.concurrent,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub vocab_threshold: u64,
    /// `default`, `none`, or a regular expression over source-user names.
    pub machine_filter: String,
    /// Day whose lines build the word vocabulary.
    pub vocab_day: u32,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            vocab_threshold: DEFAULT_THRESHOLD,
            machine_filter: "default".into(),
            vocab_day: 0,
        }
    }
}

/// File locations; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub auth: PathBuf,
    pub redteam: PathBuf,
    pub vocab: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            auth: "auth.txt".into(),
            redteam: "redteam.txt".into(),
            vocab: "vocab.json".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelSection,
    pub train: TrainSection,
    pub data: DataSection,
    pub paths: PathsSection,
    pub synth: GenConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            model: ModelSection::default(),
            train: TrainSection::default(),
            data: DataSection::default(),
            paths: PathsSection::default(),
            synth: GenConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads and validates `path`, resolving relative paths against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_toml(&std::fs::read_to_string(path).map_err(|e| io_at(path, e))?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.auth,
            &mut cfg.paths.redteam,
            &mut cfg.paths.vocab,
            &mut cfg.paths.out_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        // vocab size is only known once the vocabulary exists
        self.model_config(3)?;
        self.train_config().validate()?;
        self.synth.validate()?;
        MachineFilter::from_spec(&self.data.machine_filter)?;
        if self.data.vocab_threshold == 0 {
            return Err(Error::Config(
                "vocabulary threshold must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn max_positions(&self) -> usize {
        match (self.model.max_positions, self.model.tokenization) {
            (0, TokenMode::Word) => WORD_SLOTS.len() + 1,
            (0, TokenMode::Char) => 512,
            (n, _) => n,
        }
    }

    pub fn model_config(&self, vocab_size: usize) -> Result<ModelConfig> {
        let m = &self.model;
        let cfg = ModelConfig {
            kind: m.kind,
            attention: m.attention,
            vocab_size,
            embedding_dim: m.embedding_dim,
            hidden_dim: m.hidden_dim,
            attention_dim: m.attention_dim,
            upper_hidden_dim: m.upper_hidden_dim,
            max_positions: self.max_positions(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            clip_norm: t.clip_norm,
            adam: AdamConfig {
                lr: t.lr,
                beta1: t.beta1,
                beta2: t.beta2,
                eps: t.eps,
            },
            tbptt_window: t.tbptt_window,
            shuffle: t.shuffle,
            eval_threads: t.eval_threads,
            concurrent: t.concurrent,
        }
    }

    pub fn machine_filter(&self) -> MachineFilter {
        MachineFilter::from_spec(&self.data.machine_filter).expect("validated at load")
    }

    /// The configuration with every default written out.
    pub fn resolved_toml(&self) -> Result<String> {
        let mut resolved = self.clone();
        resolved.model.max_positions = self.max_positions();
        Ok(toml::to_string(&resolved)?)
    }
}
