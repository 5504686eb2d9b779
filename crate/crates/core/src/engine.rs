//! Event-driven replay of a merged group session.
//!
//! Each query event resets a user's base query; each judgment event picks the
//! first qualifying document on the judging user's current list, feeds it
//! back into query expansion and re-ranks. Division-of-labour filters are
//! re-applied to every list after every event, and the group is scored.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::eval::{mean_over_timeline, GroupScorePoint, Qrels};
use crate::feedback::{
    authority_estimate, expand, search, Bm25Params, FeedbackMode, FeedbackParams, JudgmentSet, QueryModel, RankedList,
};
use crate::index::InvertedIndex;
use crate::session::{Actor, EventKind, GroupScript, SimEvent, UserId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DolPolicy {
    #[default]
    None,
    /// Hide every document bookmarked by any group member.
    JudgedFilter,
    /// A document shown to several members stays only where it ranks best.
    TopkDedup,
}

impl DolPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::JudgedFilter => "judged_filter",
            Self::TopkDedup => "topk_dedup",
        }
    }
}

impl fmt::Display for DolPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DolPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Self::None),
            "judged_filter" => Ok(Self::JudgedFilter),
            "topk_dedup" => Ok(Self::TopkDedup),
            other => Err(Error::UnknownPolicy(other.to_string())),
        }
    }
}

/// Where authority weights for weighted collaborative feedback come from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuthoritySource {
    /// Smoothed precision of each user's judgments against the qrels,
    /// refreshed after every judgment.
    #[default]
    Oracle,
    Static(BTreeMap<UserId, f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PolicyConfig {
    pub dol: DolPolicy,
    pub sok: FeedbackMode,
    /// Probability that a judgment lands on a non-relevant document.
    pub p_err: f64,
    /// Per-user error rates that take precedence over `p_err`.
    pub p_err_users: BTreeMap<UserId, f64>,
    /// Defaults to true for every mode except `single`.
    pub rerank_partner_on_judgment: Option<bool>,
    pub depth: usize,
    pub cutoffs: Vec<usize>,
    pub seed: u64,
    pub bm25: Bm25Params,
    pub feedback: FeedbackParams,
    pub authority: AuthoritySource,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            dol: DolPolicy::None,
            sok: FeedbackMode::Single,
            p_err: 0.0,
            p_err_users: BTreeMap::new(),
            rerank_partner_on_judgment: None,
            depth: 1000,
            cutoffs: vec![10, 20, 30],
            seed: 0,
            bm25: Bm25Params::default(),
            feedback: FeedbackParams::default(),
            authority: AuthoritySource::Oracle,
        }
    }
}

impl PolicyConfig {
    pub fn new(dol: DolPolicy, sok: FeedbackMode) -> Self {
        Self { dol, sok, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for p in std::iter::once(&self.p_err).chain(self.p_err_users.values()) {
            if !(0.0..=1.0).contains(p) {
                return bad(format!("p_err {p} outside [0, 1]"));
            }
        }
        if self.depth == 0 {
            return bad("depth must be at least 1".into());
        }
        if self.cutoffs.iter().any(|&c| c == 0 || c > self.depth) {
            return bad(format!("cutoffs {:?} must lie in 1..={}", self.cutoffs, self.depth));
        }
        Ok(())
    }

    pub fn p_err_for(&self, user: UserId) -> f64 {
        self.p_err_users.get(&user).copied().unwrap_or(self.p_err)
    }

    pub fn rerank_partner(&self) -> bool {
        self.rerank_partner_on_judgment.unwrap_or(self.sok != FeedbackMode::Single)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgedDoc {
    pub docno: String,
    pub truly_relevant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserState {
    pub user: UserId,
    /// Base query before feedback; `None` until the user's first query.
    pub q0: Option<QueryModel>,
    pub qmodel: QueryModel,
    pub judged: Vec<JudgedDoc>,
    pub current_list: RankedList,
    pub authority: f64,
}

impl UserState {
    fn new(user: UserId) -> Self {
        Self {
            user,
            q0: None,
            qmodel: QueryModel::empty(),
            judged: Vec::new(),
            current_list: RankedList::default(),
            authority: 0.5,
        }
    }

    pub fn has_judged(&self, docno: &str) -> bool {
        self.judged.iter().any(|j| j.docno == docno)
    }
}

/// Result of replaying one judgment event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum JudgmentOutcome {
    Judged {
        docno: String,
        truly_relevant: bool,
        /// 0-based position in the judging user's list at judgment time.
        rank: usize,
    },
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub actor: Actor,
    pub kind: String,
    pub outcome: String,
    pub judged_docno: Option<String>,
    pub truly_relevant: Option<bool>,
    pub rank: Option<usize>,
    pub score_at: BTreeMap<usize, usize>,
}

impl TraceRecord {
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("t".into(), self.t.into());
        m.insert(
            "user".into(),
            match self.actor {
                Actor::Group => Value::from("group"),
                Actor::User(u) => Value::from(u),
            },
        );
        m.insert("kind".into(), self.kind.clone().into());
        m.insert("outcome".into(), self.outcome.clone().into());
        m.insert("judged_docno".into(), self.judged_docno.clone().into());
        m.insert("truly_relevant".into(), self.truly_relevant.into());
        for (c, s) in &self.score_at {
            m.insert(format!("score@{c}"), (*s).into());
        }
        Value::Object(m)
    }
}

#[derive(Debug, Clone)]
pub struct EngineState {
    pub users: BTreeMap<UserId, UserState>,
    pub judgments: JudgmentSet,
    pub clock: f64,
    pub rng: ChaCha8Rng,
    pub trace: Vec<TraceRecord>,
    pub timeline: Vec<GroupScorePoint>,
}

impl EngineState {
    pub fn new(users: &[UserId], seed: u64) -> Self {
        let mut judgments = JudgmentSet::new();
        for &u in users {
            judgments.ensure_user(u);
        }
        Self {
            users: users.iter().map(|&u| (u, UserState::new(u))).collect(),
            judgments,
            clock: 0.0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            trace: Vec::new(),
            timeline: Vec::new(),
        }
    }

    pub fn lists(&self) -> BTreeMap<UserId, RankedList> {
        self.users.iter().map(|(&u, s)| (u, s.current_list.clone())).collect()
    }

    fn group_judged(&self) -> HashSet<String> {
        self.users.values().flat_map(|s| s.judged.iter().map(|j| j.docno.clone())).collect()
    }
}

/// Applies a division-of-labour policy in place. Removed entries leave no
/// holes: lower-ranked documents move up.
pub fn apply_dol(policy: DolPolicy, lists: &mut BTreeMap<UserId, RankedList>, group_judged: &HashSet<String>) {
    match policy {
        DolPolicy::None => {}
        DolPolicy::JudgedFilter => {
            for list in lists.values_mut() {
                list.retain(|e| !group_judged.contains(&e.docno));
            }
        }
        DolPolicy::TopkDedup => {
            // Users are visited in ascending id order, so on equal ranks the
            // lower id keeps the document.
            let mut owner: HashMap<String, (usize, UserId)> = HashMap::new();
            for (&u, list) in lists.iter() {
                for (rank, e) in list.entries.iter().enumerate() {
                    owner
                        .entry(e.docno.clone())
                        .and_modify(|best| {
                            if rank < best.0 {
                                *best = (rank, u);
                            }
                        })
                        .or_insert((rank, u));
                }
            }
            for (&u, list) in lists.iter_mut() {
                list.retain(|e| owner.get(&e.docno).is_none_or(|&(_, o)| o == u));
            }
        }
    }
}

/// Picks the document a simulated user bookmarks.
///
/// Scans the user's list top-down past documents they already judged. With
/// probability `1 - p_err` the first relevant document is taken, otherwise
/// the first non-relevant one. `None` means nothing qualifies.
pub fn substitute_judgment(
    user: &UserState,
    qrels: &Qrels,
    rng: &mut ChaCha8Rng,
    p_err: f64,
    depth: usize,
) -> JudgmentOutcome {
    let mistake = if p_err <= 0.0 {
        false
    } else if p_err >= 1.0 {
        true
    } else {
        rng.random_bool(p_err)
    };
    let want_relevant = !mistake;
    user.current_list
        .entries
        .iter()
        .take(depth)
        .enumerate()
        .filter(|(_, e)| !user.has_judged(&e.docno))
        .find(|(_, e)| qrels.is_relevant(&e.docno) == want_relevant)
        .map_or(JudgmentOutcome::Skip, |(rank, e)| JudgmentOutcome::Judged {
            docno: e.docno.clone(),
            truly_relevant: want_relevant,
            rank,
        })
}

/// Single-threaded simulator over a shared, immutable index and qrels.
pub struct Simulator<'a> {
    index: &'a InvertedIndex,
    qrels: &'a Qrels,
    policy: &'a PolicyConfig,
    state: EngineState,
}

impl<'a> Simulator<'a> {
    pub fn new(users: &[UserId], index: &'a InvertedIndex, qrels: &'a Qrels, policy: &'a PolicyConfig) -> Result<Self> {
        policy.validate()?;
        let mut state = EngineState::new(users, policy.seed);
        if let AuthoritySource::Static(weights) = &policy.authority {
            for (u, s) in state.users.iter_mut() {
                s.authority = *weights.get(u).ok_or(Error::MissingAuthority(*u))?;
            }
        }
        Ok(Self { index, qrels, policy, state })
    }

    pub fn state(&self) -> &EngineState {
        &self.state
    }

    pub fn into_state(self) -> EngineState {
        self.state
    }

    fn authority_map(&self) -> BTreeMap<UserId, f64> {
        self.state.users.iter().map(|(&u, s)| (u, s.authority)).collect()
    }

    fn refresh(&mut self, user: UserId) -> Result<()> {
        let authority = self.authority_map();
        let exclude_owned = match self.policy.dol {
            DolPolicy::JudgedFilter => self.state.group_judged(),
            _ => HashSet::new(),
        };
        let exclude: HashSet<&str> = exclude_owned.iter().map(String::as_str).collect();
        let state = self.state.users.get_mut(&user).ok_or(Error::UnknownUser(user))?;
        let Some(q0) = &state.q0 else { return Ok(()) };
        let q =
            expand(q0, &self.state.judgments, self.index, self.policy.sok, user, &authority, &self.policy.feedback)?;
        state.current_list = search(self.index, self.policy.bm25, &q, self.policy.depth, &exclude);
        state.qmodel = q;
        Ok(())
    }

    fn reapply_dol(&mut self) {
        if self.policy.dol == DolPolicy::None {
            return;
        }
        let judged = self.state.group_judged();
        let mut lists: BTreeMap<UserId, RankedList> =
            self.state.users.iter_mut().map(|(&u, s)| (u, std::mem::take(&mut s.current_list))).collect();
        apply_dol(self.policy.dol, &mut lists, &judged);
        for (u, list) in lists {
            self.state.users.get_mut(&u).expect("same key set").current_list = list;
        }
    }

    fn set_query(&mut self, user: UserId, text: &str) -> Result<()> {
        let state = self.state.users.get_mut(&user).ok_or(Error::UnknownUser(user))?;
        state.q0 = Some(QueryModel::from_text(text));
        self.refresh(user)
    }

    pub fn step(&mut self, event: &SimEvent) -> Result<&TraceRecord> {
        if let Actor::User(u) = event.actor {
            if !self.state.users.contains_key(&u) {
                return Err(Error::UnknownUser(u));
            }
        }
        self.state.clock = event.t;
        let mut record = TraceRecord {
            t: event.t,
            actor: event.actor,
            kind: event.kind.name().to_string(),
            outcome: "query".to_string(),
            judged_docno: None,
            truly_relevant: None,
            rank: None,
            score_at: BTreeMap::new(),
        };

        match (&event.kind, event.actor) {
            (EventKind::Query(text), Actor::Group) => {
                let users: Vec<UserId> = self.state.users.keys().copied().collect();
                for u in users {
                    self.set_query(u, text)?;
                }
            }
            (EventKind::Query(text), Actor::User(u)) => self.set_query(u, text)?,
            (EventKind::Judgment(_), Actor::Group) => {
                return Err(Error::Config("judgment events must belong to a single user".into()));
            }
            (EventKind::Judgment(_), Actor::User(u)) => {
                let user = &self.state.users[&u];
                let outcome = if user.q0.is_none() {
                    JudgmentOutcome::Skip
                } else {
                    let p_err = self.policy.p_err_for(u);
                    substitute_judgment(user, self.qrels, &mut self.state.rng, p_err, self.policy.depth)
                };
                match outcome {
                    JudgmentOutcome::Skip => record.outcome = "skip".to_string(),
                    JudgmentOutcome::Judged { docno, truly_relevant, rank } => {
                        record.outcome = "judged".to_string();
                        record.judged_docno = Some(docno.clone());
                        record.truly_relevant = Some(truly_relevant);
                        record.rank = Some(rank);
                        self.state.judgments.insert(u, docno.clone(), true);
                        let user = self.state.users.get_mut(&u).expect("checked above");
                        user.judged.push(JudgedDoc { docno, truly_relevant });
                        if let AuthoritySource::Oracle = self.policy.authority {
                            user.authority = authority_estimate(&self.state.judgments, self.qrels, u);
                        }
                        self.refresh(u)?;
                        if self.policy.rerank_partner() {
                            let partners: Vec<UserId> = self.state.users.keys().copied().filter(|&p| p != u).collect();
                            for p in partners {
                                self.refresh(p)?;
                            }
                        }
                    }
                }
            }
        }

        self.reapply_dol();
        let point =
            GroupScorePoint::measure(event.t, &self.state.lists(), self.qrels, &self.policy.cutoffs, self.policy.depth);
        record.score_at = point.score_at.clone();
        self.state.timeline.push(point);
        self.state.trace.push(record);
        Ok(self.state.trace.last().expect("just pushed"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub trace: Vec<TraceRecord>,
    pub timeline: Vec<GroupScorePoint>,
    pub final_lists: BTreeMap<UserId, RankedList>,
    pub final_queries: BTreeMap<UserId, QueryModel>,
    pub n_skips: usize,
}

impl SimulationResult {
    pub fn final_point(&self) -> Option<&GroupScorePoint> {
        self.timeline.last()
    }

    pub fn final_score(&self, cutoff: usize) -> usize {
        self.final_point().and_then(|p| p.score(cutoff)).unwrap_or(0)
    }

    pub fn mean_score(&self, cutoff: usize) -> f64 {
        mean_over_timeline(&self.timeline, cutoff)
    }

    pub fn write_trace<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for r in &self.trace {
            serde_json::to_writer(&mut w, &r.to_json())?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn run_simulation(
    group: &GroupScript,
    index: &InvertedIndex,
    qrels: &Qrels,
    policy: &PolicyConfig,
) -> Result<SimulationResult> {
    let users = group.users();
    let mut sim = Simulator::new(&users, index, qrels, policy)?;
    for event in group.merged() {
        sim.step(event)?;
    }
    let mut state = sim.into_state();
    if state.timeline.is_empty() {
        state.timeline.push(GroupScorePoint::measure(0.0, &state.lists(), qrels, &policy.cutoffs, policy.depth));
    }
    let n_skips = state.trace.iter().filter(|r| r.outcome == "skip").count();
    Ok(SimulationResult {
        final_lists: state.lists(),
        final_queries: state.users.iter().map(|(&u, s)| (u, s.qmodel.clone())).collect(),
        trace: state.trace,
        timeline: state.timeline,
        n_skips,
    })
}
