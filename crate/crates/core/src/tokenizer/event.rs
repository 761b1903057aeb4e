//! Authentication events in the LANL `auth` layout and the red-team key file.

use std::collections::HashSet;
use std::io::BufRead;

use regex::Regex;

use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

/// The eight schema fields that follow the timestamp.
pub const FIELD_NAMES: [&str; 8] = [
    "source_user",
    "destination_user",
    "source_pc",
    "destination_pc",
    "auth_type",
    "logon_type",
    "auth_orientation",
    "outcome",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEvent {
    pub seconds: i64,
    pub fields: Vec<String>,
    /// Ground truth, for evaluation only.
    pub red: bool,
}

impl RawEvent {
    pub fn new(seconds: i64, fields: Vec<String>) -> Result<Self> {
        if fields.len() != FIELD_NAMES.len() {
            return Err(Error::Parse {
                line: 0,
                msg: format!(
                    "expected {} fields, got {}",
                    FIELD_NAMES.len(),
                    fields.len()
                ),
            });
        }
        Ok(RawEvent {
            seconds,
            fields,
            red: false,
        })
    }

    /// Parses `time,src user@domain,dst user@domain,src pc,dst pc,auth type,logon type,orientation,outcome`.
    pub fn parse_lanl(line: &str, line_no: u64) -> Result<Self> {
        let line = line.trim_end_matches(['\r', '\n']);
        let mut cols = line.split(',');
        let time = cols.next().unwrap_or_default();
        let seconds = time.trim().parse::<i64>().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad timestamp {time:?}"),
        })?;
        let fields: Vec<String> = cols.map(str::to_string).collect();
        if fields.len() != FIELD_NAMES.len() {
            return Err(Error::Parse {
                line: line_no,
                msg: format!(
                    "expected {} columns, got {}",
                    FIELD_NAMES.len() + 1,
                    fields.len() + 1
                ),
            });
        }
        Ok(RawEvent {
            seconds,
            fields,
            red: false,
        })
    }

    pub fn to_lanl_line(&self) -> String {
        let mut s = self.seconds.to_string();
        for f in &self.fields {
            s.push(',');
            s.push_str(f);
        }
        s
    }

    /// Day index, `floor(seconds / 86400)`.
    pub fn day(&self) -> u32 {
        self.seconds.div_euclid(SECONDS_PER_DAY) as u32
    }

    pub fn source_user(&self) -> &str {
        &self.fields[0]
    }

    pub fn source_user_name(&self) -> &str {
        let u = self.source_user();
        u.split_once('@').map_or(u, |(name, _)| name)
    }

    /// The comma-joined schema fields without the timestamp.
    pub fn joined_fields(&self) -> String {
        self.fields.join(",")
    }

    pub fn red_key(&self) -> RedKey {
        RedKey {
            seconds: self.seconds,
            user: self.fields[0].clone(),
            source_pc: self.fields[2].clone(),
            destination_pc: self.fields[3].clone(),
        }
    }
}

/// One row of the red-team file: `time,user@domain,source pc,destination pc`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RedKey {
    pub seconds: i64,
    pub user: String,
    pub source_pc: String,
    pub destination_pc: String,
}

impl RedKey {
    pub fn parse(line: &str, line_no: u64) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end_matches(['\r', '\n']).split(',').collect();
        if cols.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("red key needs 4 columns, got {}", cols.len()),
            });
        }
        let seconds = cols[0].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad timestamp {:?}", cols[0]),
        })?;
        Ok(RedKey {
            seconds,
            user: cols[1].to_string(),
            source_pc: cols[2].to_string(),
            destination_pc: cols[3].to_string(),
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.seconds, self.user, self.source_pc, self.destination_pc
        )
    }
}

pub fn read_red_keys<R: BufRead>(reader: R) -> Result<HashSet<RedKey>> {
    let mut keys = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        keys.insert(RedKey::parse(&line, i as u64 + 1)?);
    }
    Ok(keys)
}

/// Decides which events come from machine accounts and are discarded.
#[derive(Debug, Clone)]
pub enum MachineFilter {
    /// Source-user names ending in `$` or of the form `C<digits>`.
    Default,
    /// Keep everything.
    Nothing,
    /// Drop source-user names matching the expression.
    Pattern(Regex),
}

impl MachineFilter {
    pub fn from_spec(spec: &str) -> Result<Self> {
        match spec {
            "default" => Ok(MachineFilter::Default),
            "none" => Ok(MachineFilter::Nothing),
            pattern => Regex::new(pattern)
                .map(MachineFilter::Pattern)
                .map_err(|e| Error::Config(format!("machine filter pattern: {e}"))),
        }
    }

    pub fn is_machine(&self, event: &RawEvent) -> bool {
        let name = event.source_user_name();
        match self {
            MachineFilter::Default => {
                name.ends_with('$')
                    || (name.len() > 1
                        && name.starts_with('C')
                        && name[1..].bytes().all(|b| b.is_ascii_digit()))
            }
            MachineFilter::Nothing => false,
            MachineFilter::Pattern(re) => re.is_match(name),
        }
    }

    pub fn keep(&self, event: &RawEvent) -> bool {
        !self.is_machine(event)
    }
}

/// Streams `(line id, event)` pairs from a LANL auth file, labelling red
/// events and skipping machine accounts. Line ids are 0-based line numbers
/// of the input, so they stay stable under filtering.
pub struct LanlReader<R> {
    lines: std::io::Lines<R>,
    next_id: u64,
    red: HashSet<RedKey>,
    filter: MachineFilter,
}

impl<R: BufRead> LanlReader<R> {
    pub fn new(reader: R, red: HashSet<RedKey>, filter: MachineFilter) -> Self {
        LanlReader {
            lines: reader.lines(),
            next_id: 0,
            red,
            filter,
        }
    }
}

impl<R: BufRead> Iterator for LanlReader<R> {
    type Item = Result<(u64, RawEvent)>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            let id = self.next_id;
            self.next_id += 1;
            if line.trim().is_empty() {
                continue;
            }
            let mut ev = match RawEvent::parse_lanl(&line, id + 1) {
                Ok(ev) => ev,
                Err(e) => return Some(Err(e)),
            };
            if !self.filter.keep(&ev) {
                continue;
            }
            ev.red = self.red.contains(&ev.red_key());
            return Some(Ok((id, ev)));
        }
    }
}

/// Groups a time-ordered event stream into whole days, holding at most one
/// day in memory.
pub struct DayGroups<I> {
    inner: I,
    pending: Option<(u64, RawEvent)>,
}

impl<I> DayGroups<I> {
    pub fn new(inner: I) -> Self {
        DayGroups {
            inner,
            pending: None,
        }
    }
}

impl<I: Iterator<Item = Result<(u64, RawEvent)>>> Iterator for DayGroups<I> {
    type Item = Result<(u32, Vec<(u64, RawEvent)>)>;

    fn next(&mut self) -> Option<Self::Item> {
        let first = match self.pending.take() {
            Some(p) => p,
            None => match self.inner.next()? {
                Ok(p) => p,
                Err(e) => return Some(Err(e)),
            },
        };
        let day = first.1.day();
        let mut events = vec![first];
        loop {
            match self.inner.next() {
                None => break,
                Some(Err(e)) => return Some(Err(e)),
                Some(Ok(p)) if p.1.day() == day => events.push(p),
                Some(Ok(p)) => {
                    if p.1.day() < day {
                        return Some(Err(Error::Sequencing {
                            last: day,
                            got: p.1.day(),
                        }));
                    }
                    self.pending = Some(p);
                    break;
                }
            }
        }
        Some(Ok((day, events)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const LINE: &str = "90061,U12@DOM1,U13@DOM1,C1,C2,Kerberos,Network,LogOn,Success";

    #[test]
    fn parse_and_format_round_trip() {
        let ev = RawEvent::parse_lanl(LINE, 1).unwrap();
        assert_eq!(ev.seconds, 90061);
        assert_eq!(ev.day(), 1);
        assert_eq!(ev.fields.len(), 8);
        assert_eq!(ev.to_lanl_line(), LINE);
        assert_eq!(ev.source_user_name(), "U12");
    }

    #[test]
    fn schema_mismatch_is_parse_error() {
        assert!(matches!(
            RawEvent::parse_lanl("1,a,b,c", 7),
            Err(Error::Parse { line: 7, .. })
        ));
        assert!(matches!(
            RawEvent::parse_lanl("x,a,b,c,d,e,f,g,h", 1),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn machine_filter_default_pattern() {
        let f = MachineFilter::Default;
        let mk = |u: &str| {
            RawEvent::new(
                0,
                vec![
                    u.into(),
                    "x@y".into(),
                    "C1".into(),
                    "C2".into(),
                    "a".into(),
                    "b".into(),
                    "c".into(),
                    "d".into(),
                ],
            )
            .unwrap()
        };
        assert!(!f.keep(&mk("C625$@DOM1")));
        assert!(!f.keep(&mk("C625@DOM1")));
        assert!(f.keep(&mk("U12@DOM1")));
        assert!(f.keep(&mk("ANONYMOUS LOGON@C586")));
        assert!(MachineFilter::Nothing.keep(&mk("C625$@DOM1")));
        let custom = MachineFilter::from_spec("^SVC").unwrap();
        assert!(!custom.keep(&mk("SVC1@DOM1")));
    }

    #[test]
    fn reader_labels_and_groups_days() {
        let text = format!(
            "{LINE}\n90062,C9$@DOM1,C9$@DOM1,C9,C9,?,Network,LogOn,Success\n\n200000,U1@DOM1,U1@DOM1,C3,C4,NTLM,Network,LogOn,Success\n"
        );
        let red: HashSet<_> = [RedKey::parse("200000,U1@DOM1,C3,C4", 1).unwrap()].into();
        let reader = LanlReader::new(text.as_bytes(), red, MachineFilter::Default);
        let days: Vec<_> = DayGroups::new(reader).collect::<Result<_>>().unwrap();
        assert_eq!(days.len(), 2);
        assert_eq!(days[0].0, 1);
        assert_eq!(days[0].1.len(), 1);
        assert_eq!(days[1].1[0].0, 3);
        assert!(days[1].1[0].1.red);
        assert!(!days[0].1[0].1.red);
    }

    #[test]
    fn out_of_order_day_rejected() {
        let text = "200000,U1@DOM1,U1@DOM1,C3,C4,NTLM,Network,LogOn,Success\n10,U1@DOM1,U1@DOM1,C3,C4,NTLM,Network,LogOn,Success\n";
        let reader = LanlReader::new(text.as_bytes(), HashSet::new(), MachineFilter::Nothing);
        let out: Vec<_> = DayGroups::new(reader).collect();
        assert!(matches!(out[0], Err(Error::Sequencing { .. })));
    }
}
