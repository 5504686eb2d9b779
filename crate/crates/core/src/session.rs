//! Per-user session transcripts and the merged multi-user event stream.
//!
//! A transcript is JSONL, one event per line:
//!
//! ```text
//! {"user": 1, "t": 0, "kind": "query", "query": "positive achievements hubble telescope"}
//! {"user": 1, "t": 62, "kind": "judgment", "docno": "FT921-7107"}
//! ```
//!
//! `t` is seconds as a number, or a wall-clock `"HH:MM:SS"` string. The
//! judgment `docno` is only a hint: during replay the engine substitutes the
//! first relevant document on the simulated user's own list.

use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};

pub type UserId = u32;

pub const ANY_DOC: &str = "ANY";

/// Who an event belongs to. Group events sort ahead of any single user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Group,
    User(UserId),
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Group => f.write_str("group"),
            Actor::User(u) => write!(f, "{u}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum DocHint {
    Any,
    Docno(String),
}

impl DocHint {
    fn parse(s: Option<String>) -> Self {
        match s {
            None => DocHint::Any,
            Some(s) if s == ANY_DOC => DocHint::Any,
            Some(s) => DocHint::Docno(s),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            DocHint::Any => ANY_DOC,
            DocHint::Docno(d) => d,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Query(String),
    Judgment(DocHint),
}

impl EventKind {
    fn order(&self) -> u8 {
        match self {
            EventKind::Query(_) => 0,
            EventKind::Judgment(_) => 1,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Query(_) => "query",
            EventKind::Judgment(_) => "judgment",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub actor: Actor,
    pub t: f64,
    pub kind: EventKind,
    /// Source line in the transcript, 0 for generated events.
    #[serde(default)]
    pub line: usize,
}

impl SimEvent {
    pub fn query(user: UserId, t: f64, text: impl Into<String>) -> Self {
        Self { actor: Actor::User(user), t, kind: EventKind::Query(text.into()), line: 0 }
    }

    pub fn judgment(user: UserId, t: f64, hint: Option<&str>) -> Self {
        Self {
            actor: Actor::User(user),
            t,
            kind: EventKind::Judgment(DocHint::parse(hint.map(str::to_string))),
            line: 0,
        }
    }

    pub fn is_query(&self) -> bool {
        matches!(self.kind, EventKind::Query(_))
    }

    fn sort_key(&self) -> (f64, Actor, u8) {
        (self.t, self.actor, self.kind.order())
    }
}

/// One user's events, time-ordered and starting with a query.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionScript {
    user: UserId,
    events: Vec<SimEvent>,
}

impl SessionScript {
    pub fn new(user: UserId, events: Vec<SimEvent>) -> Result<Self> {
        validate(user, &events)?;
        Ok(Self { user, events })
    }

    pub fn user(&self) -> UserId {
        self.user
    }

    pub fn events(&self) -> &[SimEvent] {
        &self.events
    }

    pub fn start(&self) -> f64 {
        self.events[0].t
    }

    pub fn initial_query(&self) -> &str {
        match &self.events[0].kind {
            EventKind::Query(q) => q,
            EventKind::Judgment(_) => unreachable!("validated: first event is a query"),
        }
    }

    pub fn n_queries(&self) -> usize {
        self.events.iter().filter(|e| e.is_query()).count()
    }

    pub fn n_judgments(&self) -> usize {
        self.events.len() - self.n_queries()
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            let rec = match &e.kind {
                EventKind::Query(q) => json!({"user": self.user, "t": e.t, "kind": "query", "query": q}),
                EventKind::Judgment(h) => json!({"user": self.user, "t": e.t, "kind": "judgment", "docno": h.as_str()}),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

fn validate(user: UserId, events: &[SimEvent]) -> Result<()> {
    let fail = |e: &SimEvent, i: usize, message: String| Error::Script {
        line: if e.line > 0 { e.line } else { i + 1 },
        message,
    };
    let Some(first) = events.first() else {
        return Err(Error::Script { line: 0, message: "script has no events".into() });
    };
    if !first.is_query() {
        return Err(fail(first, 0, "first event must be a query".into()));
    }
    let mut prev = f64::NEG_INFINITY;
    for (i, e) in events.iter().enumerate() {
        if e.actor != Actor::User(user) {
            return Err(fail(e, i, format!("event for {} in script of user {user}", e.actor)));
        }
        if !e.t.is_finite() || e.t < 0.0 {
            return Err(fail(e, i, format!("invalid time {}", e.t)));
        }
        if e.t < prev {
            return Err(fail(e, i, format!("time {} goes backwards (previous {prev})", e.t)));
        }
        if let EventKind::Query(q) = &e.kind {
            if q.trim().is_empty() {
                return Err(fail(e, i, "query event without query text".into()));
            }
        }
        prev = e.t;
    }
    Ok(())
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawTime {
    Seconds(f64),
    Clock(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEvent {
    user: UserId,
    t: RawTime,
    kind: String,
    #[serde(default)]
    query: Option<String>,
    #[serde(default)]
    docno: Option<String>,
}

fn parse_clock(s: &str) -> Option<f64> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() != 3 {
        return None;
    }
    let h: u32 = parts[0].parse().ok()?;
    let m: u32 = parts[1].parse().ok()?;
    let sec: f64 = parts[2].parse().ok()?;
    if m >= 60 || !(0.0..60.0).contains(&sec) {
        return None;
    }
    Some(f64::from(h * 3600 + m * 60) + sec)
}

pub fn parse_script<R: BufRead>(reader: R) -> Result<SessionScript> {
    let mut events = Vec::new();
    let mut user = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fail = |message: String| Error::Script { line: line_no, message };
        let raw: RawEvent = serde_json::from_str(&line).map_err(|e| fail(e.to_string()))?;
        let t = match raw.t {
            RawTime::Seconds(t) => t,
            RawTime::Clock(c) => parse_clock(&c).ok_or_else(|| fail(format!("bad clock time {c:?}")))?,
        };
        let kind = match raw.kind.as_str() {
            "query" => EventKind::Query(raw.query.ok_or_else(|| fail("query event without query text".into()))?),
            "judgment" => EventKind::Judgment(DocHint::parse(raw.docno)),
            other => return Err(fail(format!("unknown event kind {other:?}"))),
        };
        user.get_or_insert(raw.user);
        events.push(SimEvent { actor: Actor::User(raw.user), t, kind, line: line_no });
    }
    let user = user.ok_or(Error::Script { line: 0, message: "script has no events".into() })?;
    SessionScript::new(user, events)
}

/// Synchronised group of scripts plus their merged event stream.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupScript {
    scripts: Vec<SessionScript>,
    shared_query: Option<String>,
    merged: Vec<SimEvent>,
}

impl GroupScript {
    pub fn scripts(&self) -> &[SessionScript] {
        &self.scripts
    }

    pub fn shared_query(&self) -> Option<&str> {
        self.shared_query.as_deref()
    }

    pub fn merged(&self) -> &[SimEvent] {
        &self.merged
    }

    pub fn users(&self) -> Vec<UserId> {
        self.scripts.iter().map(SessionScript::user).collect()
    }

    /// Drops every event for which `keep` returns false. Used to build
    /// ablations such as removing one member's judgments.
    pub fn filtered<F: FnMut(&SimEvent) -> bool>(&self, mut keep: F) -> Self {
        Self {
            scripts: self.scripts.clone(),
            shared_query: self.shared_query.clone(),
            merged: self.merged.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }
}

/// Aligns every script so its initial query happens at `t = 0`, then merges.
///
/// With `shared_query`, the individual opening queries are replaced by a
/// single group query at `t = 0`.
pub fn synchronize(scripts: Vec<SessionScript>, shared_query: Option<&str>) -> Result<GroupScript> {
    if scripts.len() < 2 {
        return Err(Error::TooFewScripts(scripts.len()));
    }
    let mut seen = std::collections::HashSet::new();
    for s in &scripts {
        if !seen.insert(s.user) {
            return Err(Error::DuplicateUser(s.user));
        }
    }
    let shifted: Vec<SessionScript> = scripts
        .into_iter()
        .map(|s| {
            let start = s.start();
            let events = s.events.into_iter().map(|e| SimEvent { t: e.t - start, ..e }).collect();
            SessionScript { user: s.user, events }
        })
        .collect();
    let mut group =
        GroupScript { scripts: shifted, shared_query: shared_query.map(str::to_string), merged: Vec::new() };
    group.merged = merge_streams(&group);
    Ok(group)
}

/// Time-ordered union of the group's events. Ties go to the lower user id,
/// then to queries over judgments; each user's own order is preserved.
pub fn merge_streams(g: &GroupScript) -> Vec<SimEvent> {
    let skip = usize::from(g.shared_query.is_some());
    let mut cursors: Vec<&[SimEvent]> = g.scripts.iter().map(|s| &s.events[skip..]).collect();
    let total: usize = cursors.iter().map(|c| c.len()).sum();
    let mut out = Vec::with_capacity(total + skip);
    if let Some(q) = &g.shared_query {
        out.push(SimEvent { actor: Actor::Group, t: 0.0, kind: EventKind::Query(q.clone()), line: 0 });
    }
    loop {
        let next =
            cursors.iter().enumerate().filter_map(|(i, c)| c.first().map(|e| (i, e))).min_by(|(_, a), (_, b)| {
                let (ta, ua, ka) = a.sort_key();
                let (tb, ub, kb) = b.sort_key();
                ta.total_cmp(&tb).then(ua.cmp(&ub)).then(ka.cmp(&kb))
            });
        let Some((i, e)) = next else { break };
        out.push(e.clone());
        cursors[i] = &cursors[i][1..];
    }
    out
}
