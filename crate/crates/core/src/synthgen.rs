//! Deterministic synthetic authentication logs with labelled red events.
//!
//! Every user has a habitual profile: a preferred source workstation, a
//! small personal set of servers they log into with Zipf-distributed
//! frequencies, and a habitual authentication package. Red events come
//! from a user authenticating between machines outside that profile,
//! mostly over NTLM. Output is a pure function of the configuration and
//! the day index.

use std::io::Write;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::event::SECONDS_PER_DAY;
use crate::tokenizer::{tokenize, RawEvent, TokenMode, TokenSequence, Vocabulary};

/// Per-field probabilities below this are clamped in the profile likelihood.
pub const LIKELIHOOD_FLOOR: f64 = 1e-6;

const AUTH_TYPES: [&str; 3] = ["Kerberos", "Negotiate", "NTLM"];
const ORIENTATIONS: [(&str, f64); 3] = [("LogOn", 0.8), ("TGS", 0.15), ("LogOff", 0.05)];
const LOCAL_LOGONS: [(&str, f64); 2] = [("Interactive", 0.6), ("Unlock", 0.4)];
const REMOTE_LOGONS: [(&str, f64); 2] = [("Network", 0.95), ("Batch", 0.05)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_users: usize,
    pub n_pcs: usize,
    pub n_days: usize,
    pub lines_per_day: usize,
    pub red_count_per_day: usize,
    /// Days before this index carry no red events.
    pub first_red_day: usize,
    pub seed: u64,
    /// The first `n_servers` PCs are shared servers; the rest are workstations.
    pub n_servers: usize,
    /// Size of each user's personal server set.
    pub personal_servers: usize,
    pub zipf_exponent: f64,
    /// Probability that a benign event starts at the user's own workstation.
    pub preferred_source_prob: f64,
    /// Probability that a benign event is a logon to the source machine itself.
    pub local_logon_prob: f64,
    pub failure_rate: f64,
    /// Share of benign events using the user's non-habitual Kerberos/Negotiate package.
    pub alt_auth_prob: f64,
    /// Share of benign events using NTLM.
    pub ntlm_prob: f64,
    pub domain: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_users: 50,
            n_pcs: 200,
            n_days: 2,
            lines_per_day: 5000,
            red_count_per_day: 25,
            first_red_day: 1,
            seed: 7,
            n_servers: 20,
            personal_servers: 5,
            zipf_exponent: 1.0,
            preferred_source_prob: 0.9,
            local_logon_prob: 0.15,
            failure_rate: 0.02,
            alt_auth_prob: 0.08,
            ntlm_prob: 0.02,
            domain: "DOM1".into(),
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_users == 0 || self.n_days == 0 || self.lines_per_day == 0 {
            return fail("users, days and lines per day must be positive".into());
        }
        if self.red_count_per_day >= self.lines_per_day {
            return fail(format!(
                "{} red lines in a day of {}",
                self.red_count_per_day, self.lines_per_day
            ));
        }
        if self.personal_servers == 0 || self.personal_servers > self.n_servers {
            return fail(format!(
                "{} personal servers out of {}",
                self.personal_servers, self.n_servers
            ));
        }
        // each user needs its own workstation plus room for red machines
        if self.n_pcs < self.n_servers + self.n_users + 2 {
            return fail(format!(
                "{} PCs for {} servers and {} users",
                self.n_pcs, self.n_servers, self.n_users
            ));
        }
        let probs = [
            self.preferred_source_prob,
            self.local_logon_prob,
            self.failure_rate,
            self.alt_auth_prob,
            self.ntlm_prob,
            self.alt_auth_prob + self.ntlm_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return fail("probabilities must lie in [0, 1]".into());
        }
        if self.zipf_exponent.is_nan() || self.zipf_exponent < 0.0 {
            return fail("zipf exponent must be non-negative".into());
        }
        Ok(())
    }

    pub fn pc_name(&self, i: usize) -> String {
        format!("C{i}")
    }

    pub fn user_name(&self, i: usize) -> String {
        format!("U{i}@{}", self.domain)
    }
}

/// A user's habitual behaviour.
#[derive(Debug, Clone, PartialEq)]
pub struct UserProfile {
    pub user: usize,
    pub workstation: usize,
    pub servers: Vec<usize>,
    /// Zipf weights over `servers`, summing to 1.
    pub server_weights: Vec<f64>,
    /// Index into the auth types of the habitual package.
    pub habitual_auth: usize,
}

impl UserProfile {
    pub fn knows(&self, pc: usize) -> bool {
        pc == self.workstation || self.servers.contains(&pc)
    }
}

/// Profiles depend on the seed only, so they are stable across days.
pub fn profiles(cfg: &GenConfig) -> Result<Vec<UserProfile>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let workstations = sample(&mut rng, cfg.n_pcs - cfg.n_servers, cfg.n_users);
    let norm: f64 = (1..=cfg.personal_servers)
        .map(|k| (k as f64).powf(-cfg.zipf_exponent))
        .sum();
    let server_weights: Vec<f64> = (1..=cfg.personal_servers)
        .map(|k| (k as f64).powf(-cfg.zipf_exponent) / norm)
        .collect();
    Ok((0..cfg.n_users)
        .map(|u| UserProfile {
            user: u,
            workstation: cfg.n_servers + workstations.index(u),
            servers: sample(&mut rng, cfg.n_servers, cfg.personal_servers).into_vec(),
            server_weights: server_weights.clone(),
            habitual_auth: rng.gen_range(0..2),
        })
        .collect())
}

fn pick<'a, R: Rng>(rng: &mut R, table: &[(&'a str, f64)]) -> &'a str {
    let total: f64 = table.iter().map(|(_, p)| p).sum();
    let mut x = rng.gen::<f64>() * total;
    for (v, p) in table {
        if x < *p {
            return v;
        }
        x -= p;
    }
    table[table.len() - 1].0
}

fn prob_of(table: &[(&str, f64)], v: &str) -> f64 {
    table.iter().find(|(k, _)| *k == v).map_or(0.0, |(_, p)| *p)
}

fn auth_table(cfg: &GenConfig, p: &UserProfile) -> [(&'static str, f64); 3] {
    let habitual = AUTH_TYPES[p.habitual_auth];
    let other = AUTH_TYPES[1 - p.habitual_auth];
    [
        (habitual, 1.0 - cfg.alt_auth_prob - cfg.ntlm_prob),
        (other, cfg.alt_auth_prob),
        ("NTLM", cfg.ntlm_prob),
    ]
}

fn event(
    cfg: &GenConfig,
    seconds: i64,
    user: usize,
    src: usize,
    dst: usize,
    fields: [&str; 4],
) -> RawEvent {
    let name = cfg.user_name(user);
    let mut ev = RawEvent::new(
        seconds,
        vec![
            name.clone(),
            name,
            cfg.pc_name(src),
            cfg.pc_name(dst),
            fields[0].into(),
            fields[1].into(),
            fields[2].into(),
            fields[3].into(),
        ],
    )
    .expect("eight fields");
    ev.red = false;
    ev
}

fn benign<R: Rng>(cfg: &GenConfig, p: &UserProfile, seconds: i64, rng: &mut R) -> RawEvent {
    let server = WeightedIndex::new(&p.server_weights).expect("positive weights");
    let src = if rng.gen_bool(cfg.preferred_source_prob) {
        p.workstation
    } else {
        p.servers[server.sample(rng)]
    };
    let local = rng.gen_bool(cfg.local_logon_prob);
    let dst = if local {
        src
    } else {
        p.servers[server.sample(rng)]
    };
    let auth = pick(rng, &auth_table(cfg, p));
    let logon = pick(rng, if local { &LOCAL_LOGONS } else { &REMOTE_LOGONS });
    let orientation = pick(rng, &ORIENTATIONS);
    let outcome = if rng.gen_bool(cfg.failure_rate) {
        "Fail"
    } else {
        "Success"
    };
    event(
        cfg,
        seconds,
        p.user,
        src,
        dst,
        [auth, logon, orientation, outcome],
    )
}

fn red<R: Rng>(cfg: &GenConfig, p: &UserProfile, seconds: i64, rng: &mut R) -> RawEvent {
    let outside = |rng: &mut R, not: Option<usize>| loop {
        let pc = rng.gen_range(0..cfg.n_pcs);
        if !p.knows(pc) && Some(pc) != not {
            return pc;
        }
    };
    let src = outside(rng, None);
    let dst = outside(rng, Some(src));
    let auth = if rng.gen_bool(0.8) {
        "NTLM"
    } else {
        AUTH_TYPES[1 - p.habitual_auth]
    };
    let outcome = if rng.gen_bool(0.9) { "Success" } else { "Fail" };
    let mut ev = event(
        cfg,
        seconds,
        p.user,
        src,
        dst,
        [auth, "Network", "LogOn", outcome],
    );
    ev.red = true;
    ev
}

/// All events of day `day`, sorted by timestamp, with `red_count_per_day`
/// red events at uniformly random positions from `first_red_day` on.
pub fn generate_day(cfg: &GenConfig, day: usize) -> Result<Vec<RawEvent>> {
    if day >= cfg.n_days {
        return Err(Error::Config(format!(
            "day {day} of a {}-day corpus",
            cfg.n_days
        )));
    }
    let profiles = profiles(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(day as u64 + 1);
    let start = day as i64 * SECONDS_PER_DAY;
    let mut times: Vec<i64> = (0..cfg.lines_per_day)
        .map(|_| start + rng.gen_range(0..SECONDS_PER_DAY))
        .collect();
    times.sort_unstable();
    let n_red = if day >= cfg.first_red_day {
        cfg.red_count_per_day
    } else {
        0
    };
    let mut is_red = vec![false; cfg.lines_per_day];
    for i in sample(&mut rng, cfg.lines_per_day, n_red) {
        is_red[i] = true;
    }
    Ok(times
        .iter()
        .zip(is_red)
        .map(|(&t, r)| {
            let p = &profiles[rng.gen_range(0..cfg.n_users)];
            if r {
                red(cfg, p, t, &mut rng)
            } else {
                benign(cfg, p, t, &mut rng)
            }
        })
        .collect())
}

/// `log P(event)` under the benign distribution of the event's user, with
/// every field probability floored at [`LIKELIHOOD_FLOOR`].
pub fn profile_log_likelihood(
    cfg: &GenConfig,
    profiles: &[UserProfile],
    ev: &RawEvent,
) -> Result<f64> {
    let parse_idx = |s: &str, prefix: char| -> Result<usize> {
        s.strip_prefix(prefix)
            .and_then(|n| n.split('@').next())
            .and_then(|n| n.parse().ok())
            .ok_or_else(|| Error::Parse {
                line: 0,
                msg: format!("unexpected name {s:?}"),
            })
    };
    let p = profiles
        .get(parse_idx(ev.source_user(), 'U')?)
        .ok_or_else(|| Error::Lookup(format!("no profile for {}", ev.source_user())))?;
    let src = parse_idx(&ev.fields[2], 'C')?;
    let dst = parse_idx(&ev.fields[3], 'C')?;
    let server_p = |pc: usize| -> f64 {
        p.servers
            .iter()
            .zip(&p.server_weights)
            .filter(|(s, _)| **s == pc)
            .map(|(_, w)| *w)
            .sum()
    };
    let p_src = if src == p.workstation {
        cfg.preferred_source_prob
    } else {
        (1.0 - cfg.preferred_source_prob) * server_p(src)
    };
    let local = src == dst;
    let p_dst = if local {
        cfg.local_logon_prob
    } else {
        (1.0 - cfg.local_logon_prob) * server_p(dst)
    };
    let p_auth = prob_of(&auth_table(cfg, p), &ev.fields[4]);
    let p_logon = prob_of(
        if local { &LOCAL_LOGONS } else { &REMOTE_LOGONS },
        &ev.fields[5],
    );
    let p_orient = prob_of(&ORIENTATIONS, &ev.fields[6]);
    let p_outcome = match ev.fields[7].as_str() {
        "Success" => 1.0 - cfg.failure_rate,
        "Fail" => cfg.failure_rate,
        _ => 0.0,
    };
    let same_user = if ev.fields[1] == ev.fields[0] {
        1.0
    } else {
        0.0
    };
    Ok([
        p_src, p_dst, p_auth, p_logon, p_orient, p_outcome, same_user,
    ]
    .iter()
    .map(|q| q.max(LIKELIHOOD_FLOOR).ln())
    .sum())
}

/// LANL auth lines and the red-team key lines for `events`.
pub fn emit_lanl_format(events: &[RawEvent]) -> (Vec<String>, Vec<String>) {
    let lines = events.iter().map(RawEvent::to_lanl_line).collect();
    let keys = events
        .iter()
        .filter(|e| e.red)
        .map(|e| e.red_key().to_line())
        .collect();
    (lines, keys)
}

/// Writes every configured day to `auth` and the red keys to `red`.
pub fn write_corpus<A: Write, B: Write>(cfg: &GenConfig, mut auth: A, mut red: B) -> Result<usize> {
    let mut total = 0;
    for day in 0..cfg.n_days {
        let (lines, keys) = emit_lanl_format(&generate_day(cfg, day)?);
        for l in &lines {
            writeln!(auth, "{l}")?;
        }
        for k in &keys {
            writeln!(red, "{k}")?;
        }
        total += lines.len();
    }
    auth.flush()?;
    red.flush()?;
    Ok(total)
}

pub type TokenizedDay = (u32, Vec<TokenSequence>);

/// Tokenized days plus the vocabulary built from the first day at `threshold`.
pub fn tokenized_corpus(
    cfg: &GenConfig,
    mode: TokenMode,
    threshold: u64,
) -> Result<(Vocabulary, Vec<TokenizedDay>)> {
    let days = (0..cfg.n_days)
        .map(|d| generate_day(cfg, d))
        .collect::<Result<Vec<_>>>()?;
    let vocab = match mode {
        TokenMode::Word => Vocabulary::build(&days[0], threshold)?,
        TokenMode::Char => Vocabulary::chars(),
    };
    let mut line_id = 0u64;
    let mut out = Vec::with_capacity(days.len());
    for (d, events) in days.iter().enumerate() {
        let seqs = events
            .iter()
            .map(|e| {
                line_id += 1;
                tokenize(e, &vocab, line_id - 1)
            })
            .collect::<Result<Vec<_>>>()?;
        out.push((d as u32, seqs));
    }
    Ok((vocab, out))
}
