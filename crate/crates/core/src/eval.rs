//! Ground truth and group metrics.
//!
//! The group score counts the distinct relevant documents that appear in the
//! top `cutoff` of at least one member's list. Mean AP over members is
//! provided alongside it; it cannot see overlap between members' lists.

use std::collections::{BTreeMap, HashSet};
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feedback::RankedList;
use crate::session::UserId;

/// Binary relevance for a single topic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Qrels {
    pub topic: String,
    relevant: HashSet<String>,
}

impl Qrels {
    pub fn new<I, S>(topic: impl Into<String>, relevant: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self { topic: topic.into(), relevant: relevant.into_iter().map(Into::into).collect() }
    }

    pub fn is_relevant(&self, docno: &str) -> bool {
        self.relevant.contains(docno)
    }

    pub fn len(&self) -> usize {
        self.relevant.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relevant.is_empty()
    }

    pub fn relevant(&self) -> impl Iterator<Item = &str> {
        self.relevant.iter().map(String::as_str)
    }
}

/// Parses `topic iter docno rel` lines for every topic.
pub fn load_all_qrels<R: BufRead>(reader: R) -> Result<BTreeMap<String, Qrels>> {
    let mut out: BTreeMap<String, Qrels> = BTreeMap::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        let malformed = |message: String| Error::Qrels { line: i + 1, message };
        let [topic, _iter, docno, rel] = fields[..] else {
            return Err(malformed(format!("expected 4 fields, found {}", fields.len())));
        };
        let rel: i64 = rel.parse().map_err(|_| malformed(format!("relevance {rel:?} is not an integer")))?;
        let entry = out.entry(topic.to_string()).or_insert_with(|| Qrels::new(topic, Vec::<String>::new()));
        if rel > 0 {
            entry.relevant.insert(docno.to_string());
        }
    }
    Ok(out)
}

/// Relevant documents for one topic. A topic absent from the file yields
/// an empty set.
pub fn load_qrels<R: BufRead>(reader: R, topic: &str) -> Result<Qrels> {
    let mut all = load_all_qrels(reader)?;
    Ok(all.remove(topic).unwrap_or_else(|| Qrels::new(topic, Vec::<String>::new())))
}

pub fn relevant_at(list: &RankedList, qrels: &Qrels, cutoff: usize) -> usize {
    list.top(cutoff).filter(|d| qrels.is_relevant(d)).count()
}

pub fn group_score<'a, I>(lists: I, qrels: &Qrels, cutoff: usize) -> usize
where
    I: IntoIterator<Item = &'a RankedList>,
{
    let mut found: HashSet<&str> = HashSet::new();
    for list in lists {
        found.extend(list.top(cutoff).filter(|d| qrels.is_relevant(d)));
    }
    found.len()
}

pub fn average_precision(list: &RankedList, qrels: &Qrels, depth: usize) -> f64 {
    if qrels.is_empty() {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, docno) in list.top(depth).enumerate() {
        if qrels.is_relevant(docno) {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    sum / qrels.len() as f64
}

pub fn mean_group_ap<'a, I>(lists: I, qrels: &Qrels, depth: usize) -> f64
where
    I: IntoIterator<Item = &'a RankedList>,
{
    let aps: Vec<f64> = lists.into_iter().map(|l| average_precision(l, qrels, depth)).collect();
    if aps.is_empty() {
        0.0
    } else {
        aps.iter().sum::<f64>() / aps.len() as f64
    }
}

/// Group state at one moment of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScorePoint {
    pub t: f64,
    pub score_at: BTreeMap<usize, usize>,
    pub ap_per_user: BTreeMap<UserId, f64>,
    pub mean_ap: f64,
}

impl GroupScorePoint {
    pub fn measure(
        t: f64,
        lists: &BTreeMap<UserId, RankedList>,
        qrels: &Qrels,
        cutoffs: &[usize],
        depth: usize,
    ) -> Self {
        let score_at = cutoffs.iter().map(|&c| (c, group_score(lists.values(), qrels, c))).collect();
        let ap_per_user: BTreeMap<UserId, f64> =
            lists.iter().map(|(&u, l)| (u, average_precision(l, qrels, depth))).collect();
        let mean_ap = mean_group_ap(lists.values(), qrels, depth);
        Self { t, score_at, ap_per_user, mean_ap }
    }

    pub fn score(&self, cutoff: usize) -> Option<usize> {
        self.score_at.get(&cutoff).copied()
    }
}

/// Mean of the group score at `cutoff` over every point of a timeline.
pub fn mean_over_timeline(points: &[GroupScorePoint], cutoff: usize) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let total: usize = points.iter().filter_map(|p| p.score(cutoff)).sum();
    total as f64 / points.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn qrels_parsing() {
        let text = "303 0 FT921-7107 1\n303 0 FT921-0001 0\n304 0 LA010189-0001 2\n\n";
        let q = load_qrels(text.as_bytes(), "303").unwrap();
        assert!(q.is_relevant("FT921-7107"));
        assert!(!q.is_relevant("FT921-0001"));
        assert_eq!(q.len(), 1);
        assert!(load_qrels(text.as_bytes(), "999").unwrap().is_empty());

        match load_qrels("303 0 X 1\n303 X\n".as_bytes(), "303") {
            Err(Error::Qrels { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(load_qrels("303 0 X yes\n".as_bytes(), "303"), Err(Error::Qrels { line: 1, .. })));
    }

    #[test]
    fn group_score_examples() {
        let qrels = Qrels::new("t", ["A", "B", "C", "D", "E"]);
        let u1 = RankedList::from_docnos(["A", "x1", "B", "C"]);
        let u2 = RankedList::from_docnos(["B", "C", "x2", "D"]);
        assert_eq!(group_score([&u1, &u2], &qrels, 10), 4);
        assert_eq!(group_score([&u1, &u1], &qrels, 10), relevant_at(&u1, &qrels, 10));

        let a = RankedList::from_docnos(["A", "B", "C"]);
        let b = RankedList::from_docnos(["D", "E"]);
        assert_eq!(group_score([&a, &b], &qrels, 10), 5);
        assert_eq!(group_score([&a, &b], &qrels, 1), 2);
    }

    #[test]
    fn ap_examples() {
        let qa = Qrels::new("t", ["A"]);
        assert_eq!(average_precision(&RankedList::from_docnos(["A", "x", "y"]), &qa, 1000), 1.0);
        let qab = Qrels::new("t", ["A", "B"]);
        let ap = average_precision(&RankedList::from_docnos(["A", "x", "B"]), &qab, 1000);
        assert!((ap - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((ap - 0.833_333_333_333_333_4).abs() < 1e-9);
        assert_eq!(average_precision(&RankedList::from_docnos(["x", "y"]), &qab, 1000), 0.0);
        assert_eq!(average_precision(&RankedList::from_docnos(["A"]), &Qrels::default(), 10), 0.0);
    }

    #[test]
    fn mean_ap_examples() {
        // AP 0.4 and 0.6 from 5-relevant qrels: 2 hits at ranks 1,2 vs 3 hits at ranks 1..3.
        let q = Qrels::new("t", ["a", "b", "c", "d", "e"]);
        let l1 = RankedList::from_docnos(["a", "b"]);
        let l2 = RankedList::from_docnos(["a", "b", "c"]);
        assert!((average_precision(&l1, &q, 10) - 0.4).abs() < 1e-12);
        assert!((average_precision(&l2, &q, 10) - 0.6).abs() < 1e-12);
        assert!((mean_group_ap([&l1, &l2], &q, 10) - 0.5).abs() < 1e-12);
        assert_eq!(mean_group_ap([&l1, &l1], &q, 10), average_precision(&l1, &q, 10));
    }

    #[test]
    fn overlap_is_invisible_to_mean_ap() {
        let q = Qrels::new("t", ["A", "B", "C", "D"]);
        let overlapping = [RankedList::from_docnos(["A", "B", "x"]), RankedList::from_docnos(["A", "B", "y"])];
        let diverse = [RankedList::from_docnos(["A", "B", "x"]), RankedList::from_docnos(["C", "D", "y"])];
        assert_eq!(mean_group_ap(&overlapping, &q, 10), mean_group_ap(&diverse, &q, 10));
        assert_eq!(group_score(&overlapping, &q, 10), 2);
        assert_eq!(group_score(&diverse, &q, 10), 4);
    }

    fn lists_strategy() -> impl Strategy<Value = Vec<RankedList>> {
        prop::collection::vec(prop::sample::subsequence((0..40).collect::<Vec<u32>>(), 0..25), 1..4).prop_map(|ls| {
            ls.into_iter().map(|l| RankedList::from_docnos(l.into_iter().rev().map(|d| format!("d{d}")))).collect()
        })
    }

    proptest! {
        #[test]
        fn group_score_bounds(lists in lists_strategy(), cutoff in 1usize..30) {
            let q = Qrels::new("t", (0..40).step_by(3).map(|d| format!("d{d}")));
            let per_user: Vec<usize> = lists.iter().map(|l| relevant_at(l, &q, cutoff)).collect();
            let gs = group_score(&lists, &q, cutoff);
            prop_assert!(gs >= *per_user.iter().max().unwrap());
            prop_assert!(gs <= per_user.iter().sum::<usize>());
            prop_assert!(gs <= lists.len() * cutoff && gs <= q.len());
            let mut rev = lists.clone();
            rev.reverse();
            prop_assert_eq!(gs, group_score(&rev, &q, cutoff));
            if lists.len() == 1 {
                prop_assert_eq!(gs, per_user[0]);
            }
            prop_assert!(group_score(&lists, &q, cutoff + 1) >= gs);
        }

        #[test]
        fn ap_in_unit_interval(lists in lists_strategy()) {
            let q = Qrels::new("t", (0..40).step_by(4).map(|d| format!("d{d}")));
            for l in &lists {
                let ap = average_precision(l, &q, 1000);
                prop_assert!((0.0..=1.0).contains(&ap));
                let perfect = l.top(q.len()).all(|d| q.is_relevant(d)) && relevant_at(l, &q, 1000) == q.len();
                prop_assert_eq!(ap == 1.0, perfect);
            }
        }
    }
}
