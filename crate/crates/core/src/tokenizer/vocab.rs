use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::event::RawEvent;
use crate::error::{io_at, Error, Result};

/// Token slots of a word-tokenized line: the two user fields split at `@`
/// into name and domain, followed by the remaining six fields.
pub const WORD_SLOTS: [&str; 10] = [
    "source_user",
    "source_domain",
    "destination_user",
    "destination_domain",
    "source_pc",
    "destination_pc",
    "auth_type",
    "logon_type",
    "auth_orientation",
    "outcome",
];

pub const DEFAULT_THRESHOLD: u64 = 40;

/// Printable ASCII, `0x20..=0x7E`.
pub const CHAR_RANGE: std::ops::RangeInclusive<u8> = 0x20..=0x7e;

const OOV: &str = "<oov>";
const SOS: &str = "<sos>";
const EOS: &str = "<eos>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenMode {
    Word,
    Char,
}

impl TokenMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TokenMode::Word => "word",
            TokenMode::Char => "char",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Vocabulary {
    mode: TokenMode,
    /// id -> token, specials included.
    tokens: Vec<String>,
    oov_id: Option<usize>,
    sos_id: usize,
    eos_id: usize,
    threshold: Option<u64>,
    /// Word mode: per-slot value counts observed while building.
    counts: Vec<BTreeMap<String, u64>>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.tokens == other.tokens
            && self.oov_id == other.oov_id
            && self.sos_id == other.sos_id
            && self.eos_id == other.eos_id
            && self.threshold == other.threshold
            && self.counts == other.counts
    }
}

/// Splits a `name@domain` user field.
pub(crate) fn split_user(field: &str) -> Result<(&str, &str)> {
    field
        .split_once('@')
        .ok_or_else(|| Error::Tokenize(format!("user field {field:?} has no '@'")))
}

/// The ten word-mode token strings of an event, in slot order.
pub fn word_values(event: &RawEvent) -> Result<[&str; 10]> {
    if event.fields.len() != 8 {
        return Err(Error::Parse {
            line: 0,
            msg: format!("expected 8 fields, got {}", event.fields.len()),
        });
    }
    let f = &event.fields;
    let (su, sd) = split_user(&f[0])?;
    let (du, dd) = split_user(&f[1])?;
    Ok([su, sd, du, dd, &f[2], &f[3], &f[4], &f[5], &f[6], &f[7]])
}

impl Vocabulary {
    /// Counts every value per slot and admits a value once its count in
    /// some single slot reaches `threshold`. Ids: specials first, then
    /// admitted values in lexicographic order.
    pub fn build<'a, I>(events: I, threshold: u64) -> Result<Self>
    where
        I: IntoIterator<Item = &'a RawEvent>,
    {
        if threshold == 0 {
            return Err(Error::Config(
                "vocabulary threshold must be at least 1".into(),
            ));
        }
        let mut counts: Vec<BTreeMap<String, u64>> = vec![BTreeMap::new(); WORD_SLOTS.len()];
        let mut seen = 0usize;
        for ev in events {
            for (slot, value) in word_values(ev)?.iter().enumerate() {
                *counts[slot].entry((*value).to_string()).or_default() += 1;
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(Error::EmptyVocab);
        }
        let mut admitted: Vec<&String> = counts
            .iter()
            .flat_map(|m| m.iter().filter(|(_, &c)| c >= threshold).map(|(v, _)| v))
            .collect();
        admitted.sort();
        admitted.dedup();
        let mut tokens = vec![OOV.to_string(), SOS.to_string(), EOS.to_string()];
        tokens.extend(admitted.into_iter().cloned());
        let mut v = Vocabulary {
            mode: TokenMode::Word,
            tokens,
            oov_id: Some(0),
            sos_id: 1,
            eos_id: 2,
            threshold: Some(threshold),
            counts,
            index: HashMap::new(),
        };
        v.rebuild_index();
        Ok(v)
    }

    /// The 95 printable ASCII characters followed by SOS and EOS.
    pub fn chars() -> Self {
        let mut tokens: Vec<String> = CHAR_RANGE.map(|b| (b as char).to_string()).collect();
        let sos_id = tokens.len();
        tokens.push(SOS.to_string());
        tokens.push(EOS.to_string());
        let mut v = Vocabulary {
            mode: TokenMode::Char,
            tokens,
            oov_id: None,
            sos_id,
            eos_id: sos_id + 1,
            threshold: None,
            counts: Vec::new(),
            index: HashMap::new(),
        };
        v.rebuild_index();
        v
    }

    fn rebuild_index(&mut self) {
        let specials = [Some(self.sos_id), Some(self.eos_id), self.oov_id];
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .filter(|(i, _)| !specials.contains(&Some(*i)))
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn oov_id(&self) -> Option<usize> {
        self.oov_id
    }

    pub fn sos_id(&self) -> usize {
        self.sos_id
    }

    pub fn eos_id(&self) -> usize {
        self.eos_id
    }

    pub fn threshold(&self) -> Option<u64> {
        self.threshold
    }

    /// Id of an in-vocabulary, non-special token.
    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_special(&self, id: usize) -> bool {
        id == self.sos_id || id == self.eos_id || Some(id) == self.oov_id
    }

    /// Word mode: how often `value` was seen in `slot` while building.
    pub fn count(&self, slot: usize, value: &str) -> u64 {
        self.counts
            .get(slot)
            .and_then(|m| m.get(value))
            .copied()
            .unwrap_or(0)
    }

    /// Word mode: the largest single-slot count of `value`.
    pub fn max_slot_count(&self, value: &str) -> u64 {
        (0..self.counts.len())
            .map(|s| self.count(s, value))
            .max()
            .unwrap_or(0)
    }

    fn word_id(&self, value: &str) -> usize {
        self.id(value)
            .unwrap_or_else(|| self.oov_id.expect("word vocabularies carry an OOV id"))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| io_at(path, e))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut v: Vocabulary =
            serde_json::from_str(&std::fs::read_to_string(path).map_err(|e| io_at(path, e))?)?;
        v.rebuild_index();
        Ok(v)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut v: Vocabulary = serde_json::from_str(text)?;
        v.rebuild_index();
        Ok(v)
    }
}

/// One tokenized log line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    /// SOS, interior tokens, EOS.
    pub ids: Vec<usize>,
    pub user: String,
    pub day: u32,
    pub red: bool,
    /// Line number of the originating event in its source.
    pub line_id: u64,
}

impl TokenSequence {
    /// Number of next-token predictions the line yields (interior + EOS).
    pub fn num_predictions(&self) -> usize {
        self.ids.len() - 1
    }
}

pub fn tokenize_word(event: &RawEvent, vocab: &Vocabulary, line_id: u64) -> Result<TokenSequence> {
    if vocab.mode != TokenMode::Word {
        return Err(Error::Contract(
            "word tokenization needs a word vocabulary".into(),
        ));
    }
    let mut ids = Vec::with_capacity(WORD_SLOTS.len() + 2);
    ids.push(vocab.sos_id);
    ids.extend(word_values(event)?.iter().map(|v| vocab.word_id(v)));
    ids.push(vocab.eos_id);
    Ok(TokenSequence {
        ids,
        user: event.source_user().to_string(),
        day: event.day(),
        red: event.red,
        line_id,
    })
}

pub fn tokenize_char(event: &RawEvent, vocab: &Vocabulary, line_id: u64) -> Result<TokenSequence> {
    if vocab.mode != TokenMode::Char {
        return Err(Error::Contract(
            "char tokenization needs a char vocabulary".into(),
        ));
    }
    if event.fields.len() != 8 {
        return Err(Error::Parse {
            line: line_id,
            msg: format!("expected 8 fields, got {}", event.fields.len()),
        });
    }
    let joined = event.joined_fields();
    let mut ids = Vec::with_capacity(joined.len() + 2);
    ids.push(vocab.sos_id);
    for b in joined.bytes() {
        if !CHAR_RANGE.contains(&b) {
            return Err(Error::Tokenize(format!(
                "byte 0x{b:02x} is not printable ASCII (line {line_id})"
            )));
        }
        ids.push((b - CHAR_RANGE.start()) as usize);
    }
    ids.push(vocab.eos_id);
    Ok(TokenSequence {
        ids,
        user: event.source_user().to_string(),
        day: event.day(),
        red: event.red,
        line_id,
    })
}

pub fn tokenize(event: &RawEvent, vocab: &Vocabulary, line_id: u64) -> Result<TokenSequence> {
    match vocab.mode {
        TokenMode::Word => tokenize_word(event, vocab, line_id),
        TokenMode::Char => tokenize_char(event, vocab, line_id),
    }
}
