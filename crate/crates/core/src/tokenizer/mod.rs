//! Log-line parsing and word/character tokenization.

pub mod event;
pub mod seqfile;
pub mod vocab;

pub use event::{
    read_red_keys, DayGroups, LanlReader, MachineFilter, RawEvent, RedKey, FIELD_NAMES,
};
pub use vocab::{
    tokenize, tokenize_char, tokenize_word, TokenMode, TokenSequence, Vocabulary, WORD_SLOTS,
};
