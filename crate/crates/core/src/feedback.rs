//! BM25 ranking and Rocchio-style query expansion from one or more users'
//! relevance judgments.
//!
//! Every user's judged-relevant documents are turned into a centroid of
//! L2-normalised `ln(1 + tf) * idf` vectors. The expansion modes differ only in
//! how those per-user centroids are combined:
//!
//! * `single`: the expanding user's own centroid.
//! * `collaborative`: the mean centroid over every user with judgments.
//! * `collaborative_weighted`: as above, weighted by per-user authority.
//! * `complementary`: own centroid minus the partners' centroid, pushing the
//!   query away from what the rest of the group already found.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Qrels;
use crate::index::{tokenize, DocOrd, InvertedIndex, TermId};
use crate::session::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// How collaborative modes merge the group's judgments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Combination {
    /// Combine one centroid per user.
    #[default]
    PerUser,
    /// Average over the pooled multiset of every user's judged documents.
    Pooled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeedbackParams {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub max_terms: usize,
    pub combination: Combination,
}

impl Default for FeedbackParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.75, delta: 0.25, max_terms: 20, combination: Combination::PerUser }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Single,
    Collaborative,
    CollaborativeWeighted,
    Complementary,
}

impl FeedbackMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Single => "single",
            Self::Collaborative => "collaborative",
            Self::CollaborativeWeighted => "collaborative_weighted",
            Self::Complementary => "complementary",
        }
    }
}

impl fmt::Display for FeedbackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeedbackMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(Self::Single),
            "collaborative" => Ok(Self::Collaborative),
            "collaborative_weighted" => Ok(Self::CollaborativeWeighted),
            "complementary" => Ok(Self::Complementary),
            other => Err(Error::UnknownMode(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryOrigin {
    Initial,
    Expanded,
}

/// A weighted bag of terms. Weights are always strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryModel {
    weights: BTreeMap<String, f64>,
    origin: QueryOrigin,
}

impl QueryModel {
    /// Each distinct token weighted by its number of occurrences.
    pub fn from_text(text: &str) -> Self {
        let mut weights = BTreeMap::new();
        for tok in tokenize(text) {
            *weights.entry(tok).or_insert(0.0) += 1.0;
        }
        Self { weights, origin: QueryOrigin::Initial }
    }

    pub fn from_weights<I, S>(weights: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let weights = weights.into_iter().map(|(t, w)| (t.into(), w)).filter(|(_, w)| *w > 0.0).collect();
        Self { weights, origin: QueryOrigin::Initial }
    }

    pub fn empty() -> Self {
        Self { weights: BTreeMap::new(), origin: QueryOrigin::Initial }
    }

    pub fn weights(&self) -> &BTreeMap<String, f64> {
        &self.weights
    }

    pub fn weight(&self, term: &str) -> f64 {
        self.weights.get(term).copied().unwrap_or(0.0)
    }

    pub fn origin(&self) -> QueryOrigin {
        self.origin
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0, "query weights must stay positive");
        Self { weights: self.weights.iter().map(|(t, w)| (t.clone(), w * factor)).collect(), origin: self.origin }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub docno: String,
    pub score: f64,
}

/// Scores are non-increasing; equal scores are ordered by docno.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn new(entries: Vec<RankedEntry>) -> Self {
        Self { entries }
    }

    /// Builds a list with descending dummy scores, mostly for tests.
    pub fn from_docnos<I, S>(docnos: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let docnos: Vec<String> = docnos.into_iter().map(Into::into).collect();
        let n = docnos.len();
        Self {
            entries: docnos
                .into_iter()
                .enumerate()
                .map(|(i, docno)| RankedEntry { docno, score: (n - i) as f64 })
                .collect(),
        }
    }

    pub fn depth(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn docnos(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.docno.as_str())
    }

    pub fn top(&self, cutoff: usize) -> impl Iterator<Item = &str> {
        self.docnos().take(cutoff)
    }

    /// 0-based rank of `docno`, if present.
    pub fn rank_of(&self, docno: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.docno == docno)
    }

    pub fn retain<F: FnMut(&RankedEntry) -> bool>(&mut self, f: F) {
        self.entries.retain(f);
    }
}

/// Per-user relevance judgments in the order they were made.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct JudgmentSet {
    by_user: BTreeMap<UserId, Vec<(String, bool)>>,
}

impl JudgmentSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a judgment; returns `false` if this user already judged the doc.
    pub fn insert(&mut self, user: UserId, docno: impl Into<String>, relevant: bool) -> bool {
        let docno = docno.into();
        let list = self.by_user.entry(user).or_default();
        if list.iter().any(|(d, _)| *d == docno) {
            return false;
        }
        list.push((docno, relevant));
        true
    }

    pub fn ensure_user(&mut self, user: UserId) {
        self.by_user.entry(user).or_default();
    }

    pub fn user(&self, user: UserId) -> &[(String, bool)] {
        self.by_user.get(&user).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn users(&self) -> impl Iterator<Item = UserId> + '_ {
        self.by_user.keys().copied()
    }

    pub fn contains(&self, user: UserId, docno: &str) -> bool {
        self.user(user).iter().any(|(d, _)| d == docno)
    }

    /// Every docno judged by any user.
    pub fn all_docnos(&self) -> HashSet<&str> {
        self.by_user.values().flatten().map(|(d, _)| d.as_str()).collect()
    }

    pub fn is_empty(&self) -> bool {
        self.by_user.values().all(Vec::is_empty)
    }
}

pub fn idf(index: &InvertedIndex, df: usize) -> f64 {
    let n = index.n_docs() as f64;
    let df = df as f64;
    (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
}

fn term_score(index: &InvertedIndex, params: Bm25Params, idf: f64, tf: u32, doc: DocOrd) -> f64 {
    let tf = f64::from(tf);
    let len = f64::from(index.doc_len(doc));
    let avg = index.avg_doc_len();
    let norm = if avg > 0.0 { len / avg } else { 0.0 };
    idf * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm))
}

/// BM25 score of one document, each term's contribution scaled by its query weight.
pub fn score(index: &InvertedIndex, params: Bm25Params, q: &QueryModel, doc: DocOrd) -> f64 {
    let terms = index.doc_terms(doc);
    let mut total = 0.0;
    for (term, weight) in &q.weights {
        let Some(id) = index.term_id(term) else { continue };
        if let Ok(pos) = terms.binary_search_by_key(&id, |&(t, _)| t) {
            let idf = idf(index, index.df(id));
            total += weight * term_score(index, params, idf, terms[pos].1, doc);
        }
    }
    total
}

/// Top `depth` documents with a positive score, skipping anything in `exclude`.
pub fn search(
    index: &InvertedIndex,
    params: Bm25Params,
    q: &QueryModel,
    depth: usize,
    exclude: &HashSet<&str>,
) -> RankedList {
    let mut acc = vec![0.0f64; index.n_docs()];
    let mut touched = vec![false; index.n_docs()];
    for (term, weight) in &q.weights {
        let Some(id) = index.term_id(term) else { continue };
        let idf = idf(index, index.df(id));
        for p in index.postings(id) {
            acc[p.doc as usize] += weight * term_score(index, params, idf, p.tf, p.doc);
            touched[p.doc as usize] = true;
        }
    }
    let mut hits: Vec<(DocOrd, f64)> = acc
        .into_iter()
        .enumerate()
        .filter(|&(d, s)| touched[d] && s > 0.0)
        .map(|(d, s)| (d as DocOrd, s))
        .filter(|&(d, _)| !exclude.contains(index.docno(d)))
        .collect();
    let by_rank =
        |a: &(DocOrd, f64), b: &(DocOrd, f64)| b.1.total_cmp(&a.1).then_with(|| index.docno(a.0).cmp(index.docno(b.0)));
    if hits.len() > depth {
        hits.select_nth_unstable_by(depth, by_rank);
        hits.truncate(depth);
    }
    hits.sort_unstable_by(by_rank);
    RankedList {
        entries: hits.into_iter().map(|(d, score)| RankedEntry { docno: index.docno(d).to_string(), score }).collect(),
    }
}

type SparseVec = BTreeMap<TermId, f64>;

/// L2-normalised `ln(1 + tf) * idf` vector of a document.
fn doc_vector(index: &InvertedIndex, doc: DocOrd) -> SparseVec {
    let mut v: SparseVec = index
        .doc_terms(doc)
        .iter()
        .map(|&(t, tf)| (t, (1.0 + f64::from(tf)).ln() * idf(index, index.df(t))))
        .filter(|&(_, w)| w > 0.0)
        .collect();
    let norm = v.values().map(|w| w * w).sum::<f64>().sqrt();
    if norm > 0.0 {
        for w in v.values_mut() {
            *w /= norm;
        }
    }
    v
}

fn relevant_vectors(index: &InvertedIndex, judged: &[(String, bool)]) -> Vec<SparseVec> {
    judged
        .iter()
        .filter(|(_, rel)| *rel)
        .filter_map(|(docno, _)| index.ordinal(docno))
        .map(|d| doc_vector(index, d))
        .collect()
}

/// Weighted mean of sparse vectors; `None` when there is nothing to average.
fn weighted_mean(vectors: &[(f64, SparseVec)]) -> Option<SparseVec> {
    let total: f64 = vectors.iter().map(|(w, _)| w).sum();
    if vectors.is_empty() || total <= 0.0 {
        return None;
    }
    let mut out = SparseVec::new();
    for (w, v) in vectors {
        for (&t, &x) in v {
            *out.entry(t).or_insert(0.0) += w * x;
        }
    }
    for x in out.values_mut() {
        *x /= total;
    }
    Some(out)
}

/// Centroid of one user's judged-relevant documents.
fn user_centroid(index: &InvertedIndex, judged: &[(String, bool)]) -> Option<SparseVec> {
    let vecs: Vec<(f64, SparseVec)> = relevant_vectors(index, judged).into_iter().map(|v| (1.0, v)).collect();
    weighted_mean(&vecs)
}

fn group_centroid(
    index: &InvertedIndex,
    judgments: &JudgmentSet,
    users: &[UserId],
    weight_of: impl Fn(UserId) -> f64,
    combination: Combination,
) -> Option<SparseVec> {
    match combination {
        Combination::PerUser => {
            let centroids: Vec<(f64, SparseVec)> = users
                .iter()
                .filter_map(|&u| user_centroid(index, judgments.user(u)).map(|c| (weight_of(u), c)))
                .collect();
            weighted_mean(&centroids)
        }
        Combination::Pooled => {
            let pooled: Vec<(f64, SparseVec)> = users
                .iter()
                .flat_map(|&u| {
                    let w = weight_of(u);
                    relevant_vectors(index, judgments.user(u)).into_iter().map(move |v| (w, v))
                })
                .collect();
            weighted_mean(&pooled)
        }
    }
}

fn has_relevant(index: &InvertedIndex, judged: &[(String, bool)]) -> bool {
    judged.iter().any(|(d, rel)| *rel && index.ordinal(d).is_some())
}

/// Expands `q0` with relevance feedback according to `mode`.
///
/// The original query terms always survive: if subtraction would push one to
/// zero or below it is kept at a tiny fraction of its original weight.
pub fn expand(
    q0: &QueryModel,
    judgments: &JudgmentSet,
    index: &InvertedIndex,
    mode: FeedbackMode,
    self_user: UserId,
    authority: &BTreeMap<UserId, f64>,
    params: &FeedbackParams,
) -> Result<QueryModel> {
    let active: Vec<UserId> = judgments.users().filter(|&u| has_relevant(index, judgments.user(u))).collect();

    let (positive, negative) = match mode {
        FeedbackMode::Single => (user_centroid(index, judgments.user(self_user)), None),
        FeedbackMode::Collaborative => (group_centroid(index, judgments, &active, |_| 1.0, params.combination), None),
        FeedbackMode::CollaborativeWeighted => {
            let mut total = 0.0;
            for &u in &active {
                let w = *authority.get(&u).ok_or(Error::MissingAuthority(u))?;
                if w.is_nan() || w < 0.0 {
                    return Err(Error::Config(format!("authority weight for user {u} must be >= 0, got {w}")));
                }
                total += w;
            }
            if !active.is_empty() && total <= 0.0 {
                return Err(Error::ZeroAuthority);
            }
            let weight_of = |u: UserId| authority.get(&u).copied().unwrap_or(0.0);
            (group_centroid(index, judgments, &active, weight_of, params.combination), None)
        }
        FeedbackMode::Complementary => {
            let partners: Vec<UserId> = active.iter().copied().filter(|&u| u != self_user).collect();
            let negative = if params.delta != 0.0 {
                group_centroid(index, judgments, &partners, |_| 1.0, Combination::PerUser)
            } else {
                None
            };
            (user_centroid(index, judgments.user(self_user)), negative)
        }
    };

    if positive.is_none() && negative.is_none() {
        return Ok(q0.clone());
    }

    let mut weights: BTreeMap<String, f64> = q0.weights.iter().map(|(t, w)| (t.clone(), params.alpha * w)).collect();
    if let Some(c) = &positive {
        for (&t, &x) in c {
            *weights.entry(index.term(t).to_string()).or_insert(0.0) += params.beta * x;
        }
    }
    if let Some(c) = &negative {
        for (&t, &x) in c {
            *weights.entry(index.term(t).to_string()).or_insert(0.0) -= params.delta * x;
        }
    }

    let mut kept: BTreeMap<String, f64> = BTreeMap::new();
    let mut candidates: Vec<(String, f64)> = Vec::new();
    for (term, w) in weights {
        match q0.weights.get(&term) {
            Some(&orig) => {
                let floor = orig * 1e-6;
                kept.insert(term, if w > floor { w } else { floor });
            }
            None if w > 0.0 => candidates.push((term, w)),
            None => {}
        }
    }
    candidates.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let room = params.max_terms.saturating_sub(kept.len());
    kept.extend(candidates.into_iter().take(room));

    Ok(QueryModel { weights: kept, origin: QueryOrigin::Expanded })
}

/// Laplace-smoothed precision of a user's judgments against ground truth.
pub fn authority_estimate(judgments: &JudgmentSet, qrels: &Qrels, user: UserId) -> f64 {
    let judged = judgments.user(user);
    let hits = judged.iter().filter(|(d, _)| qrels.is_relevant(d)).count();
    (hits as f64 + 1.0) / (judged.len() as f64 + 2.0)
}
