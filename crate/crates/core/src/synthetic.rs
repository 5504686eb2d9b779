//! Seeded synthetic test collections.
//!
//! Each topic owns a Zipf-weighted vocabulary split into general terms and
//! several aspect vocabularies. Relevant documents mix general and aspect
//! terms with background noise; distractor documents reuse the general terms
//! (so they match the topic query) but carry their own vocabulary instead of
//! an aspect. The remaining documents are background text.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, LogNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{relevant_at, Qrels};
use crate::feedback::{search, Bm25Params, QueryModel};
use crate::index::{Document, InvertedIndex};
use crate::session::{SessionScript, SimEvent, UserId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub relevant_per_topic: usize,
    /// Zipf exponent shared by the background and topic term mixtures.
    pub skew: f64,
    pub doc_len_mean: f64,
    pub doc_len_sd: f64,
    /// Size of each topic's general vocabulary.
    pub topic_terms: usize,
    pub aspects_per_topic: usize,
    /// Size of each aspect (and each distractor) vocabulary.
    pub aspect_terms: usize,
    /// Fraction of a relevant document's tokens drawn from its topic.
    pub topic_share: f64,
    /// Within topic tokens, the fraction taken from the aspect vocabulary.
    pub aspect_share: f64,
    pub distractors_per_topic: usize,
    pub query_terms: usize,
    pub users: usize,
    pub judgments_per_user: usize,
    pub mean_gap_seconds: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 1000,
            vocab_size: 3000,
            n_topics: 5,
            relevant_per_topic: 20,
            skew: 1.0,
            doc_len_mean: 120.0,
            doc_len_sd: 40.0,
            topic_terms: 30,
            aspects_per_topic: 4,
            aspect_terms: 25,
            topic_share: 0.3,
            aspect_share: 0.5,
            distractors_per_topic: 40,
            query_terms: 3,
            users: 2,
            judgments_per_user: 6,
            mean_gap_seconds: 90.0,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    /// The collection used by the acceptance suite and the sample config:
    /// 1000 documents, 5 topics of 100 relevant and 100 distractor documents.
    pub fn acceptance() -> Self {
        Self {
            relevant_per_topic: 100,
            distractors_per_topic: 100,
            topic_share: 0.4,
            aspects_per_topic: 4,
            ..Self::default()
        }
    }

    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Spec(m));
        let counts = [
            ("n_docs", self.n_docs),
            ("vocab_size", self.vocab_size),
            ("n_topics", self.n_topics),
            ("relevant_per_topic", self.relevant_per_topic),
            ("topic_terms", self.topic_terms),
            ("aspects_per_topic", self.aspects_per_topic),
            ("aspect_terms", self.aspect_terms),
            ("query_terms", self.query_terms),
            ("users", self.users),
        ];
        for (name, v) in counts {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.relevant_per_topic >= self.n_docs {
            return bad("relevant_per_topic must be smaller than n_docs".into());
        }
        let topical = self.n_topics * (self.relevant_per_topic + self.distractors_per_topic);
        if topical > self.n_docs {
            return bad(format!("{topical} topical documents do not fit in {} documents", self.n_docs));
        }
        if self.query_terms > self.topic_terms {
            return bad("query_terms cannot exceed topic_terms".into());
        }
        for (name, v) in [("topic_share", self.topic_share), ("aspect_share", self.aspect_share)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.skew >= 0.0) || !(self.doc_len_mean >= 1.0) || !(self.doc_len_sd >= 0.0) {
            return bad("skew, doc_len_mean and doc_len_sd must be non-negative (mean >= 1)".into());
        }
        if !(self.mean_gap_seconds > 0.0) {
            return bad("mean_gap_seconds must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topic {
    pub id: String,
    pub query: String,
}

#[derive(Debug, Clone)]
pub struct SyntheticCollection {
    pub docs: Vec<Document>,
    pub qrels: BTreeMap<String, Qrels>,
    pub topics: Vec<Topic>,
    pub scripts: BTreeMap<String, Vec<SessionScript>>,
}

/// Paths written by [`SyntheticCollection::write_to`].
#[derive(Debug, Clone)]
pub struct SyntheticFiles {
    pub corpus: PathBuf,
    pub qrels: PathBuf,
    pub topics: PathBuf,
    pub scripts: BTreeMap<String, Vec<PathBuf>>,
}

struct Mixture {
    terms: Vec<String>,
    dist: WeightedIndex<f64>,
}

impl Mixture {
    fn zipf(terms: Vec<String>, skew: f64) -> Self {
        let weights: Vec<f64> = (1..=terms.len()).map(|r| (r as f64).powf(-skew)).collect();
        let dist = WeightedIndex::new(weights).expect("non-empty positive weights");
        Self { terms, dist }
    }

    fn sample<'a, R: Rng>(&'a self, rng: &mut R) -> &'a str {
        &self.terms[self.dist.sample(rng)]
    }
}

#[derive(Clone, Copy)]
enum Kind {
    Relevant { topic: usize, aspect: usize },
    Distractor { topic: usize, slot: usize },
    Background,
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn topic_id(k: usize) -> String {
    format!("{}", k + 1)
}

pub fn generate_synthetic_collection(spec: &SyntheticSpec) -> Result<SyntheticCollection> {
    spec.validate()?;
    let mut rng = sub_rng(spec.seed, 0);

    let background = Mixture::zipf((0..spec.vocab_size).map(|i| format!("w{i}")).collect(), spec.skew);
    let general: Vec<Mixture> = (0..spec.n_topics)
        .map(|k| Mixture::zipf((0..spec.topic_terms).map(|j| format!("t{k}g{j}")).collect(), spec.skew))
        .collect();
    let aspects: Vec<Vec<Mixture>> = (0..spec.n_topics)
        .map(|k| {
            (0..spec.aspects_per_topic)
                .map(|a| Mixture::zipf((0..spec.aspect_terms).map(|j| format!("t{k}a{a}x{j}")).collect(), spec.skew))
                .collect()
        })
        .collect();
    // Distractors come in a handful of off-topic flavours per topic.
    let n_flavours = spec.aspects_per_topic.max(1);
    let flavours: Vec<Vec<Mixture>> = (0..spec.n_topics)
        .map(|k| {
            (0..n_flavours)
                .map(|f| Mixture::zipf((0..spec.aspect_terms).map(|j| format!("t{k}d{f}x{j}")).collect(), spec.skew))
                .collect()
        })
        .collect();

    let mut kinds = Vec::with_capacity(spec.n_docs);
    for topic in 0..spec.n_topics {
        for i in 0..spec.relevant_per_topic {
            kinds.push(Kind::Relevant { topic, aspect: i % spec.aspects_per_topic });
        }
        for slot in 0..spec.distractors_per_topic {
            kinds.push(Kind::Distractor { topic, slot: slot % n_flavours });
        }
    }
    kinds.resize(spec.n_docs, Kind::Background);
    kinds.shuffle(&mut rng);

    let sigma2 = (1.0 + (spec.doc_len_sd / spec.doc_len_mean).powi(2)).ln();
    let lengths =
        LogNormal::new(spec.doc_len_mean.ln() - sigma2 / 2.0, sigma2.sqrt()).map_err(|e| Error::Spec(e.to_string()))?;

    let mut docs = Vec::with_capacity(spec.n_docs);
    let mut qrels: BTreeMap<String, Vec<String>> = (0..spec.n_topics).map(|k| (topic_id(k), Vec::new())).collect();
    let width = spec.n_docs.to_string().len().max(5);
    for (i, kind) in kinds.iter().enumerate() {
        let docno = format!("SYN-{i:0width$}");
        let len = (lengths.sample(&mut rng).round() as usize).max(5);
        let mut words: Vec<&str> = Vec::with_capacity(len);
        for _ in 0..len {
            let w = match *kind {
                Kind::Relevant { topic, aspect } if rng.random_bool(spec.topic_share) => {
                    if rng.random_bool(spec.aspect_share) {
                        aspects[topic][aspect].sample(&mut rng)
                    } else {
                        general[topic].sample(&mut rng)
                    }
                }
                Kind::Distractor { topic, slot } if rng.random_bool(spec.topic_share) => {
                    if rng.random_bool(spec.aspect_share) {
                        flavours[topic][slot].sample(&mut rng)
                    } else {
                        general[topic].sample(&mut rng)
                    }
                }
                _ => background.sample(&mut rng),
            };
            words.push(w);
        }
        if let Kind::Relevant { topic, .. } = *kind {
            qrels.get_mut(&topic_id(topic)).expect("all topics present").push(docno.clone());
        }
        docs.push(Document::new(docno, words.join(" ")));
    }

    let topics: Vec<Topic> = (0..spec.n_topics)
        .map(|k| Topic { id: topic_id(k), query: general[k].terms[..spec.query_terms].join(" ") })
        .collect();
    let qrels: BTreeMap<String, Qrels> = qrels.into_iter().map(|(t, docs)| (t.clone(), Qrels::new(t, docs))).collect();

    let index = InvertedIndex::build(docs.clone())?;
    for topic in &topics {
        let list = search(&index, Bm25Params::default(), &QueryModel::from_text(&topic.query), 30, &Default::default());
        if relevant_at(&list, &qrels[&topic.id], 30) == 0 {
            return Err(Error::Spec(format!(
                "topic {} query {:?} finds no relevant document in the top 30",
                topic.id, topic.query
            )));
        }
    }

    let mut scripts = BTreeMap::new();
    for (k, topic) in topics.iter().enumerate() {
        scripts.insert(topic.id.clone(), synthetic_scripts(spec, &topic.query, spec.seed, k as u64)?);
    }

    Ok(SyntheticCollection { docs, qrels, topics, scripts })
}

/// One transcript per user: the shared opening query at `t = 0` followed by
/// judgments with exponentially distributed gaps.
pub fn synthetic_scripts(spec: &SyntheticSpec, query: &str, seed: u64, stream: u64) -> Result<Vec<SessionScript>> {
    let gaps = Exp::new(1.0 / spec.mean_gap_seconds).map_err(|e| Error::Spec(e.to_string()))?;
    (1..=spec.users as UserId)
        .map(|user| {
            let mut rng = sub_rng(seed, 1 + stream * 1024 + u64::from(user));
            let mut t = 0.0;
            let mut events = vec![SimEvent::query(user, 0.0, query)];
            for _ in 0..spec.judgments_per_user {
                t += gaps.sample(&mut rng);
                // Whole milliseconds keep the JSON text exact.
                let t_ms = (t * 1000.0).round() / 1000.0;
                events.push(SimEvent::judgment(user, t_ms, None));
            }
            SessionScript::new(user, events)
        })
        .collect()
}

impl SyntheticCollection {
    pub fn index(&self) -> Result<InvertedIndex> {
        InvertedIndex::build(self.docs.clone())
    }

    pub fn write_to(&self, dir: &Path) -> Result<SyntheticFiles> {
        fs::create_dir_all(dir.join("scripts"))?;
        let corpus = dir.join("corpus.jsonl");
        let mut w = BufWriter::new(fs::File::create(&corpus)?);
        for d in &self.docs {
            serde_json::to_writer(&mut w, d)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;

        let qrels_path = dir.join("qrels.txt");
        let mut w = BufWriter::new(fs::File::create(&qrels_path)?);
        for (topic, q) in &self.qrels {
            let mut rel: Vec<&str> = q.relevant().collect();
            rel.sort_unstable();
            for d in rel {
                writeln!(w, "{topic} 0 {d} 1")?;
            }
        }
        w.flush()?;

        let topics_path = dir.join("topics.tsv");
        let mut w = BufWriter::new(fs::File::create(&topics_path)?);
        for t in &self.topics {
            writeln!(w, "{}\t{}", t.id, t.query)?;
        }
        w.flush()?;

        let mut scripts = BTreeMap::new();
        for (topic, list) in &self.scripts {
            let mut paths = Vec::new();
            for s in list {
                let p = dir.join("scripts").join(format!("topic{topic}_user{}.jsonl", s.user()));
                let mut w = BufWriter::new(fs::File::create(&p)?);
                s.write_jsonl(&mut w)?;
                w.flush()?;
                paths.push(p);
            }
            scripts.insert(topic.clone(), paths);
        }
        Ok(SyntheticFiles { corpus, qrels: qrels_path, topics: topics_path, scripts })
    }
}

/// Reads a `topic<TAB>query` file.
pub fn read_topics<R: BufRead>(reader: R) -> Result<Vec<Topic>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (id, query) = line
            .split_once('\t')
            .ok_or_else(|| Error::Config(format!("topics line {}: expected `id<TAB>query`", i + 1)))?;
        out.push(Topic { id: id.trim().to_string(), query: query.trim().to_string() });
    }
    Ok(out)
}
