//! Text container for tokenized lines.
//!
//! ```text
//! # sysloglm-tokens v1 mode=word vocab=412
//! <line id>\t<user>\t<day>\t<red 0|1>\t<id> <id> ...
//! ```

use std::io::{BufRead, Write};

use super::vocab::{TokenMode, TokenSequence};
use crate::error::{Error, Result};

pub const SEQ_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeqFileHeader {
    pub mode: TokenMode,
    pub vocab_size: usize,
}

pub fn write_sequences<W: Write>(
    mut out: W,
    header: &SeqFileHeader,
    seqs: &[TokenSequence],
) -> Result<()> {
    writeln!(
        out,
        "# sysloglm-tokens v{SEQ_FORMAT_VERSION} mode={} vocab={}",
        header.mode.as_str(),
        header.vocab_size
    )?;
    for s in seqs {
        let ids: Vec<String> = s.ids.iter().map(usize::to_string).collect();
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            s.line_id,
            s.user,
            s.day,
            u8::from(s.red),
            ids.join(" ")
        )?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(reader: R) -> Result<(SeqFileHeader, Vec<TokenSequence>)> {
    let mut lines = reader.lines();
    let head = lines.next().ok_or(Error::Parse {
        line: 1,
        msg: "missing header".into(),
    })??;
    let header = parse_header(&head)?;
    let mut seqs = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        let no = i as u64 + 2;
        let bad = |msg: &str| Error::Parse {
            line: no,
            msg: msg.to_string(),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        let ids = cols[4]
            .split(' ')
            .map(|t| t.parse::<usize>().map_err(|_| bad("bad token id")))
            .collect::<Result<Vec<_>>>()?;
        if ids.len() < 2 || ids.iter().any(|&id| id >= header.vocab_size) {
            return Err(bad("token ids out of range"));
        }
        seqs.push(TokenSequence {
            line_id: cols[0].parse().map_err(|_| bad("bad line id"))?,
            user: cols[1].to_string(),
            day: cols[2].parse().map_err(|_| bad("bad day"))?,
            red: match cols[3] {
                "0" => false,
                "1" => true,
                _ => return Err(bad("red flag must be 0 or 1")),
            },
            ids,
        });
    }
    Ok((header, seqs))
}

fn parse_header(line: &str) -> Result<SeqFileHeader> {
    let bad = |msg: String| Error::Parse { line: 1, msg };
    let rest = line
        .strip_prefix("# sysloglm-tokens v")
        .ok_or_else(|| bad("not a token sequence file".into()))?;
    let mut parts = rest.split(' ');
    let version: u32 = parts
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("bad version".into()))?;
    if version != SEQ_FORMAT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let mut mode = None;
    let mut vocab_size = None;
    for kv in parts {
        match kv.split_once('=') {
            Some(("mode", "word")) => mode = Some(TokenMode::Word),
            Some(("mode", "char")) => mode = Some(TokenMode::Char),
            Some(("vocab", n)) => vocab_size = n.parse().ok(),
            _ => return Err(bad(format!("unexpected header item {kv:?}"))),
        }
    }
    Ok(SeqFileHeader {
        mode: mode.ok_or_else(|| bad("missing mode".into()))?,
        vocab_size: vocab_size.ok_or_else(|| bad("missing vocab".into()))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip(rows in proptest::collection::vec(
            (any::<u64>(), "[A-Z][0-9]{1,3}@DOM[0-9]", 0u32..60, any::<bool>(), proptest::collection::vec(0usize..50, 2..14)),
            0..8,
        )) {
            let seqs: Vec<TokenSequence> = rows
                .into_iter()
                .map(|(line_id, user, day, red, ids)| TokenSequence { ids, user, day, red, line_id })
                .collect();
            let header = SeqFileHeader { mode: TokenMode::Word, vocab_size: 50 };
            let mut buf = Vec::new();
            write_sequences(&mut buf, &header, &seqs).unwrap();
            let (h, back) = read_sequences(buf.as_slice()).unwrap();
            prop_assert_eq!(h, header);
            prop_assert_eq!(back, seqs);
        }
    }

    #[test]
    fn rejects_wrong_version_and_range() {
        assert!(read_sequences("# sysloglm-tokens v9 mode=word vocab=3\n".as_bytes()).is_err());
        assert!(read_sequences(
            "# sysloglm-tokens v1 mode=word vocab=3\n0\tU\t1\t0\t1 5 2\n".as_bytes()
        )
        .is_err());
    }
}
