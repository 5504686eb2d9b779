use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use scir::engine::{DolPolicy, PolicyConfig};
use scir::experiment::{run_experiment, ErrorRate, ExperimentConfig, PolicyGrid, ScriptSource};
use scir::feedback::FeedbackMode;
use scir::index::{read_corpus, IndexBuilder};
use scir::report::{write_digest, Summary};
use scir::synthetic::{generate_synthetic_collection, SyntheticSpec};

/// Simulated two-user collaborative search: indexing, synthetic collections,
/// policy-grid experiments and reports.
#[derive(Parser)]
#[command(name = "scir", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build an index snapshot from a JSONL corpus.
    BuildIndex {
        /// Corpus file, one {"docno", "text"} object per line.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
        /// Optional file with one stopword per line.
        #[arg(long)]
        stopwords: Option<PathBuf>,
    },
    /// Generate a seeded synthetic collection with qrels, topics and scripts.
    GenSynthetic(GenArgs),
    /// Run an experiment config.
    Run(RunArgs),
    /// Print the digest for an existing summary.csv.
    Report {
        summary: PathBuf,
        /// Write the digest here instead of stdout.
        #[arg(long, short)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, short)]
    out: PathBuf,
    /// TOML file with generator settings; flags below override it.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Start from the acceptance-suite collection.
    #[arg(long, conflicts_with = "spec")]
    acceptance: bool,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    n_topics: Option<usize>,
    #[arg(long)]
    relevant: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    qrels: Option<PathBuf>,
    /// Comma-separated seeds, replacing the config's list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Skip the per-run JSONL traces.
    #[arg(long)]
    no_traces: bool,
}

enum Outcome {
    Ok,
    RunFailures(usize),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::RunFailures(n)) => {
            eprintln!("{n} run(s) failed; see failures.csv");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(command: Command) -> Result<Outcome> {
    match command {
        Command::BuildIndex { corpus, out, stopwords } => build_index(&corpus, &out, stopwords.as_deref()),
        Command::GenSynthetic(args) => gen_synthetic(args),
        Command::Run(args) => run(args),
        Command::Report { summary, out } => report(&summary, out.as_deref()),
    }
}

fn build_index(corpus: &Path, out: &Path, stopwords: Option<&Path>) -> Result<Outcome> {
    let docs =
        read_corpus(BufReader::new(fs::File::open(corpus).with_context(|| format!("opening {}", corpus.display()))?))?;
    let mut builder = IndexBuilder::new();
    if let Some(path) = stopwords {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        builder = builder.stopwords(text.lines().map(str::trim).filter(|l| !l.is_empty()));
    }
    let index = builder.build(docs)?;
    let mut w = BufWriter::new(fs::File::create(out).with_context(|| format!("creating {}", out.display()))?);
    index.write_snapshot(&mut w)?;
    w.flush()?;
    println!("indexed {} documents, {} terms -> {}", index.n_docs(), index.vocab_size(), out.display());
    Ok(Outcome::Ok)
}

fn gen_synthetic(args: GenArgs) -> Result<Outcome> {
    let mut spec = match (&args.spec, args.acceptance) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        (None, true) => SyntheticSpec::acceptance(),
        (None, false) => SyntheticSpec::default(),
    };
    if let Some(v) = args.n_docs {
        spec.n_docs = v;
    }
    if let Some(v) = args.n_topics {
        spec.n_topics = v;
    }
    if let Some(v) = args.relevant {
        spec.relevant_per_topic = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }

    let collection = generate_synthetic_collection(&spec)?;
    let files = collection.write_to(&args.out)?;
    let experiment = sample_experiment(&spec);
    fs::write(args.out.join("experiment.toml"), experiment.to_toml()?)?;
    println!(
        "{} documents, {} topics, {} script files -> {} (run with: scir run -c {})",
        collection.docs.len(),
        collection.topics.len(),
        files.scripts.values().map(Vec::len).sum::<usize>(),
        args.out.display(),
        args.out.join("experiment.toml").display()
    );
    Ok(Outcome::Ok)
}

/// Full policy grid over the generated files, paths relative to the output
/// directory.
fn sample_experiment(spec: &SyntheticSpec) -> ExperimentConfig {
    ExperimentConfig {
        corpus: "corpus.jsonl".into(),
        qrels: "qrels.txt".into(),
        scripts: ScriptSource::Synthetic {
            topics: "topics.tsv".into(),
            judgments_per_user: spec.judgments_per_user,
            mean_gap_seconds: spec.mean_gap_seconds,
            users: spec.users,
            shared_query: true,
        },
        topics: None,
        grid: PolicyGrid {
            dol: vec![DolPolicy::None, DolPolicy::JudgedFilter, DolPolicy::TopkDedup],
            sok: vec![
                FeedbackMode::Single,
                FeedbackMode::Collaborative,
                FeedbackMode::CollaborativeWeighted,
                FeedbackMode::Complementary,
            ],
            p_err: vec![ErrorRate::Uniform(0.0), ErrorRate::PerUser([(1, 0.0), (2, 0.5)].into_iter().collect())],
        },
        seeds: (1..=20).collect(),
        output_dir: "results".into(),
        policy: PolicyConfig::default(),
        write_traces: true,
    }
}

fn run(args: RunArgs) -> Result<Outcome> {
    let mut cfg = ExperimentConfig::load(&args.config).with_context(|| format!("loading {}", args.config.display()))?;
    if let Some(p) = args.corpus {
        cfg.corpus = p;
    }
    if let Some(p) = args.qrels {
        cfg.qrels = p;
    }
    if let Some(s) = args.seeds {
        cfg.seeds = s;
    }
    if let Some(p) = args.output_dir {
        cfg.output_dir = p;
    }
    if args.no_traces {
        cfg.write_traces = false;
    }
    let summary = run_experiment(&cfg)?;
    write_digest(&summary, io::stdout().lock())?;
    println!("\nwrote {}", cfg.output_dir.join("summary.csv").display());
    if summary.failures.is_empty() {
        Ok(Outcome::Ok)
    } else {
        Ok(Outcome::RunFailures(summary.failures.len()))
    }
}

fn report(summary: &Path, out: Option<&Path>) -> Result<Outcome> {
    let summary =
        Summary::read_csv(fs::File::open(summary).with_context(|| format!("opening {}", summary.display()))?)?;
    match out {
        Some(path) => write_digest(&summary, BufWriter::new(fs::File::create(path)?))?,
        None => write_digest(&summary, io::stdout().lock())?,
    }
    Ok(Outcome::Ok)
}
