//! Config-driven policy grids with paired independent-search baselines.
//!
//! Every grid point is run for every seed and topic, together with the
//! baseline (`dol = none`, `sok = single`) at the same error rate, seed,
//! scripts, corpus and qrels. Runs are independent and execute in parallel;
//! results are written by a single sink in a fixed order.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{run_simulation, DolPolicy, PolicyConfig, SimulationResult};
use crate::error::{Error, Result};
use crate::eval::{load_all_qrels, Qrels};
use crate::feedback::FeedbackMode;
use crate::index::{load_index, InvertedIndex};
use crate::report::{write_digest, Summary, SummaryRow};
use crate::session::{parse_script, synchronize, GroupScript, UserId};
use crate::synthetic::{read_topics, synthetic_scripts, SyntheticSpec, Topic};

/// Judgment error rate for a run: one rate for everybody, or per user
/// (unlisted users never err).
#[derive(Debug, Clone, PartialEq)]
pub enum ErrorRate {
    Uniform(f64),
    PerUser(BTreeMap<UserId, f64>),
}

impl fmt::Display for ErrorRate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorRate::Uniform(p) => write!(f, "{p}"),
            ErrorRate::PerUser(m) => {
                let parts: Vec<String> = m.iter().map(|(u, p)| format!("u{u}={p}")).collect();
                f.write_str(&parts.join(";"))
            }
        }
    }
}

impl ErrorRate {
    fn apply(&self, policy: &mut PolicyConfig) {
        match self {
            ErrorRate::Uniform(p) => {
                policy.p_err = *p;
                policy.p_err_users.clear();
            }
            ErrorRate::PerUser(m) => {
                policy.p_err = 0.0;
                policy.p_err_users = m.clone();
            }
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum RawErrorRate {
    Uniform(f64),
    PerUser(BTreeMap<String, f64>),
}

impl<'de> Deserialize<'de> for ErrorRate {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match RawErrorRate::deserialize(d)? {
            RawErrorRate::Uniform(p) => Ok(ErrorRate::Uniform(p)),
            RawErrorRate::PerUser(m) => m
                .into_iter()
                .map(|(k, v)| {
                    let user = k.trim_start_matches('u').parse::<UserId>().map_err(serde::de::Error::custom)?;
                    Ok((user, v))
                })
                .collect::<std::result::Result<_, _>>()
                .map(ErrorRate::PerUser),
        }
    }
}

impl Serialize for ErrorRate {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            ErrorRate::Uniform(p) => s.serialize_f64(*p),
            ErrorRate::PerUser(m) => {
                let m: BTreeMap<String, f64> = m.iter().map(|(u, p)| (u.to_string(), *p)).collect();
                m.serialize(s)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyGrid {
    pub dol: Vec<DolPolicy>,
    pub sok: Vec<FeedbackMode>,
    #[serde(default = "default_p_err")]
    pub p_err: Vec<ErrorRate>,
}

fn default_p_err() -> Vec<ErrorRate> {
    vec![ErrorRate::Uniform(0.0)]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScriptSource {
    /// Hand-built or converted transcripts, listed per topic.
    Files {
        files: BTreeMap<String, Vec<PathBuf>>,
        #[serde(default)]
        shared_query: BTreeMap<String, String>,
    },
    /// Scripts generated per (seed, topic) from a topics file.
    Synthetic {
        topics: PathBuf,
        #[serde(default = "default_judgments")]
        judgments_per_user: usize,
        #[serde(default = "default_gap")]
        mean_gap_seconds: f64,
        #[serde(default = "default_users")]
        users: usize,
        #[serde(default = "default_true")]
        shared_query: bool,
    },
}

fn default_judgments() -> usize {
    SyntheticSpec::default().judgments_per_user
}
fn default_gap() -> f64 {
    SyntheticSpec::default().mean_gap_seconds
}
fn default_users() -> usize {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: PathBuf,
    pub qrels: PathBuf,
    pub scripts: ScriptSource,
    /// Restrict to these topics; defaults to every topic with scripts.
    #[serde(default)]
    pub topics: Option<Vec<String>>,
    pub grid: PolicyGrid,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Template for every run: depth, cutoffs, ranking and feedback constants.
    #[serde(default)]
    pub policy: PolicyConfig,
    /// Write one JSONL trace per run.
    #[serde(default = "default_true")]
    pub write_traces: bool,
}

impl ExperimentConfig {
    /// Parses a TOML config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.corpus);
        fix(&mut self.qrels);
        fix(&mut self.output_dir);
        match &mut self.scripts {
            ScriptSource::Files { files, .. } => files.values_mut().flatten().for_each(fix),
            ScriptSource::Synthetic { topics, .. } => fix(topics),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.grid.dol.is_empty() || self.grid.sok.is_empty() || self.grid.p_err.is_empty() {
            return bad("policy grid must not be empty".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        let mut files = vec![&self.corpus, &self.qrels];
        match &self.scripts {
            ScriptSource::Files { files: f, .. } => files.extend(f.values().flatten()),
            ScriptSource::Synthetic { topics, users, .. } => {
                files.push(topics);
                if *users < 2 {
                    return bad("synthetic scripts need at least two users".into());
                }
            }
        }
        for f in files {
            if !f.exists() {
                return bad(format!("{} does not exist", f.display()));
            }
        }
        for p in &self.grid.p_err {
            let mut probe = self.policy.clone();
            p.apply(&mut probe);
            probe.validate()?;
        }
        self.policy.validate()
    }

    fn cutoffs(&self) -> Vec<usize> {
        let mut c = self.policy.cutoffs.clone();
        c.extend([10, 20, 30]);
        c.sort_unstable();
        c.dedup();
        c
    }
}

/// Identifies a grid point.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PolicyKey {
    pub dol: DolPolicy,
    pub sok: FeedbackMode,
    pub p_err: String,
}

impl PolicyKey {
    pub fn new(dol: DolPolicy, sok: FeedbackMode, p_err: impl Into<String>) -> Self {
        Self { dol, sok, p_err: p_err.into() }
    }

    pub fn is_baseline(&self) -> bool {
        self.dol == DolPolicy::None && self.sok == FeedbackMode::Single
    }

    pub fn baseline(&self) -> Self {
        Self { dol: DolPolicy::None, sok: FeedbackMode::Single, p_err: self.p_err.clone() }
    }
}

impl fmt::Display for PolicyKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "dol={} sok={} p_err={}", self.dol, self.sok, self.p_err)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub dol: String,
    pub sok: String,
    pub p_err: String,
    pub seed: u64,
    pub topic: String,
    pub error: String,
}

/// Everything a run needs, loaded once and shared read-only.
pub struct Inputs {
    pub index: InvertedIndex,
    pub qrels: BTreeMap<String, Qrels>,
    pub topics: Vec<String>,
    source: ScriptSource,
    topic_queries: BTreeMap<String, String>,
}

impl Inputs {
    pub fn load(cfg: &ExperimentConfig) -> Result<Self> {
        let index = load_index(&cfg.corpus)?;
        let qrels = load_all_qrels(BufReader::new(fs::File::open(&cfg.qrels)?))?;
        let (mut topics, topic_queries) = match &cfg.scripts {
            ScriptSource::Files { files, .. } => (files.keys().cloned().collect::<Vec<_>>(), BTreeMap::new()),
            ScriptSource::Synthetic { topics, .. } => {
                let list: Vec<Topic> = read_topics(BufReader::new(fs::File::open(topics)?))?;
                (list.iter().map(|t| t.id.clone()).collect(), list.into_iter().map(|t| (t.id, t.query)).collect())
            }
        };
        if let Some(only) = &cfg.topics {
            for t in only {
                if !topics.contains(t) {
                    return Err(Error::Config(format!("topic {t} has no scripts")));
                }
            }
            topics.retain(|t| only.contains(t));
        }
        Ok(Self { index, qrels, topics, source: cfg.scripts.clone(), topic_queries })
    }

    fn qrels_for(&self, topic: &str) -> Qrels {
        self.qrels.get(topic).cloned().unwrap_or_else(|| Qrels::new(topic, Vec::<String>::new()))
    }

    /// Scripts for one (seed, topic) pair; identical for every policy.
    pub fn group(&self, seed: u64, topic: &str) -> Result<GroupScript> {
        match &self.source {
            ScriptSource::Files { files, shared_query } => {
                let scripts = files[topic]
                    .iter()
                    .map(|p| parse_script(BufReader::new(fs::File::open(p)?)))
                    .collect::<Result<Vec<_>>>()?;
                synchronize(scripts, shared_query.get(topic).map(String::as_str))
            }
            ScriptSource::Synthetic { judgments_per_user, mean_gap_seconds, users, shared_query, .. } => {
                let spec = SyntheticSpec {
                    judgments_per_user: *judgments_per_user,
                    mean_gap_seconds: *mean_gap_seconds,
                    users: *users,
                    ..SyntheticSpec::default()
                };
                let query = &self.topic_queries[topic];
                let stream = self.topics.iter().position(|t| t == topic).unwrap_or(0) as u64;
                let scripts = synthetic_scripts(&spec, query, seed, stream)?;
                synchronize(scripts, shared_query.then_some(query.as_str()))
            }
        }
    }
}

struct Job {
    key: PolicyKey,
    policy: PolicyConfig,
    seed: u64,
    topic: String,
}

struct JobOutput {
    result: Result<SimulationResult>,
}

fn trace_name(key: &PolicyKey, seed: u64, topic: &str) -> String {
    let p: String = key.p_err.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '_' }).collect();
    format!("{}__{}__p{}__s{}__t{}.jsonl", key.dol, key.sok, p, seed, topic)
}

/// Builds the ordered run list: per error rate, the baseline then every other
/// grid point, each over all seeds and topics.
fn plan(cfg: &ExperimentConfig, topics: &[String]) -> Vec<Job> {
    let mut jobs = Vec::new();
    for rate in &cfg.grid.p_err {
        let mut keys = vec![(DolPolicy::None, FeedbackMode::Single)];
        for &dol in &cfg.grid.dol {
            for &sok in &cfg.grid.sok {
                if !keys.contains(&(dol, sok)) {
                    keys.push((dol, sok));
                }
            }
        }
        for (dol, sok) in keys {
            let key = PolicyKey::new(dol, sok, rate.to_string());
            for &seed in &cfg.seeds {
                for topic in topics {
                    let mut policy = PolicyConfig { dol, sok, seed, cutoffs: cfg.cutoffs(), ..cfg.policy.clone() };
                    rate.apply(&mut policy);
                    jobs.push(Job { key: key.clone(), policy, seed, topic: topic.clone() });
                }
            }
        }
    }
    jobs
}

/// Runs the grid against already-loaded inputs without touching the disk.
pub fn run_grid(cfg: &ExperimentConfig, inputs: &Inputs) -> (Summary, Vec<(String, SimulationResult)>) {
    let jobs = plan(cfg, &inputs.topics);
    let outputs: Vec<JobOutput> = jobs
        .par_iter()
        .map(|job| {
            let result = inputs.group(job.seed, &job.topic).and_then(|g| {
                let qrels = inputs.qrels_for(&job.topic);
                run_simulation(&g, &inputs.index, &qrels, &job.policy)
            });
            JobOutput { result }
        })
        .collect();

    let mut failed_points: HashSet<PolicyKey> = HashSet::new();
    let mut failures = Vec::new();
    let mut baseline_gs30: HashMap<(String, u64, String), usize> = HashMap::new();
    for (job, out) in jobs.iter().zip(&outputs) {
        match &out.result {
            Ok(res) if job.key.is_baseline() => {
                baseline_gs30.insert((job.key.p_err.clone(), job.seed, job.topic.clone()), res.final_score(30));
            }
            Ok(_) => {}
            Err(e) => {
                failed_points.insert(job.key.clone());
                failures.push(RunFailure {
                    dol: job.key.dol.to_string(),
                    sok: job.key.sok.to_string(),
                    p_err: job.key.p_err.clone(),
                    seed: job.seed,
                    topic: job.topic.clone(),
                    error: e.to_string(),
                });
            }
        }
    }

    let mut rows = Vec::new();
    let mut traces = Vec::new();
    for (job, out) in jobs.into_iter().zip(outputs) {
        if failed_points.contains(&job.key) {
            continue;
        }
        let Ok(res) = out.result else { continue };
        let mean_ap_final = res.final_point().map_or(0.0, |p| p.mean_ap);
        rows.push(SummaryRow {
            dol: job.key.dol.to_string(),
            sok: job.key.sok.to_string(),
            p_err: job.key.p_err.clone(),
            seed: job.seed,
            topic: job.topic.clone(),
            final_gs10: res.final_score(10),
            final_gs20: res.final_score(20),
            final_gs30: res.final_score(30),
            mean_gs30: res.mean_score(30),
            mean_ap_final,
            n_skips: res.n_skips,
            paired_baseline_gs30: baseline_gs30.get(&(job.key.p_err.clone(), job.seed, job.topic.clone())).copied(),
        });
        traces.push((trace_name(&job.key, job.seed, &job.topic), res));
    }
    (Summary { rows, failures }, traces)
}

/// Runs a full experiment and writes `summary.csv`, `digest.txt`, optional
/// `failures.csv` and per-run traces under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Summary> {
    cfg.validate()?;
    let inputs = Inputs::load(cfg)?;
    let (summary, traces) = run_grid(cfg, &inputs);

    fs::create_dir_all(&cfg.output_dir)?;
    if cfg.write_traces {
        let dir = cfg.output_dir.join("traces");
        fs::create_dir_all(&dir)?;
        for (name, res) in &traces {
            let mut w = BufWriter::new(fs::File::create(dir.join(name))?);
            res.write_trace(&mut w)?;
            w.flush()?;
        }
    }
    summary.write_csv(fs::File::create(cfg.output_dir.join("summary.csv"))?)?;
    if !summary.failures.is_empty() {
        summary.write_failures(fs::File::create(cfg.output_dir.join("failures.csv"))?)?;
    }
    write_digest(&summary, fs::File::create(cfg.output_dir.join("digest.txt"))?)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::generate_synthetic_collection;

    fn setup(dir: &Path) -> ExperimentConfig {
        let spec = SyntheticSpec {
            n_docs: 200,
            n_topics: 2,
            relevant_per_topic: 10,
            distractors_per_topic: 10,
            ..SyntheticSpec::default()
        };
        let files = generate_synthetic_collection(&spec).unwrap().write_to(dir).unwrap();
        ExperimentConfig {
            corpus: files.corpus,
            qrels: files.qrels,
            scripts: ScriptSource::Synthetic {
                topics: files.topics,
                judgments_per_user: 3,
                mean_gap_seconds: 60.0,
                users: 2,
                shared_query: true,
            },
            topics: Some(vec!["1".into()]),
            grid: PolicyGrid {
                dol: vec![DolPolicy::JudgedFilter],
                sok: vec![FeedbackMode::Collaborative],
                p_err: vec![ErrorRate::Uniform(0.0)],
            },
            seeds: vec![5],
            output_dir: dir.join("out"),
            policy: PolicyConfig::default(),
            write_traces: true,
        }
    }

    #[test]
    fn single_point_pairs_with_baseline() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = setup(dir.path());
        let summary = run_experiment(&cfg).unwrap();
        assert_eq!(summary.rows.len(), 2);
        assert_eq!((summary.rows[0].dol.as_str(), summary.rows[0].sok.as_str()), ("none", "single"));
        assert_eq!(summary.rows[1].paired_baseline_gs30, Some(summary.rows[0].final_gs30));
        assert_eq!(fs::read_dir(cfg.output_dir.join("traces")).unwrap().count(), 2);

        let first = fs::read(cfg.output_dir.join("summary.csv")).unwrap();
        run_experiment(&cfg).unwrap();
        assert_eq!(fs::read(cfg.output_dir.join("summary.csv")).unwrap(), first);
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = setup(dir.path());
        cfg.grid.sok.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = setup(dir.path());
        cfg.qrels = dir.path().join("missing.txt");
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let mut cfg = setup(dir.path());
        cfg.grid.p_err = vec![ErrorRate::Uniform(2.0)];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn toml_config_parses() {
        let text = r#"
            corpus = "c.jsonl"
            qrels = "q.txt"
            seeds = [1, 2]
            output_dir = "out"

            [scripts]
            kind = "synthetic"
            topics = "topics.tsv"
            judgments_per_user = 4

            [grid]
            dol = ["none", "judged_filter", "topk_dedup"]
            sok = ["single", "collaborative_weighted"]
            p_err = [0.0, { u2 = 0.5 }]

            [policy]
            depth = 500
            [policy.feedback]
            beta = 0.5
        "#;
        let mut cfg: ExperimentConfig = toml::from_str(text).unwrap();
        cfg.resolve_paths(Path::new("/data"));
        assert_eq!(cfg.corpus, Path::new("/data/c.jsonl"));
        assert_eq!(cfg.grid.p_err[1], ErrorRate::PerUser([(2, 0.5)].into_iter().collect()));
        assert_eq!(cfg.grid.p_err[1].to_string(), "u2=0.5");
        assert_eq!(cfg.policy.depth, 500);
        assert_eq!(cfg.policy.feedback.beta, 0.5);
        assert_eq!(cfg.policy.feedback.alpha, 1.0);
        assert!(matches!(cfg.scripts, ScriptSource::Synthetic { judgments_per_user: 4, shared_query: true, .. }));

        let back: ExperimentConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
