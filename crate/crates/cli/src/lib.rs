//! `convcoa` command implementations. Every command writes its report to the
//! given output stream; timing values only ever appear on lines that start
//! with `timing.` or in the `bench` table.

pub mod config;

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use convcoa::cks::ContextualKnowledgeSet;
use convcoa::coa::{run_turn, HttpLlm, HttpSearch, LLMClient, MockScript, SearchProvider, Transcript, TurnDeps};
use convcoa::embedding::{EmbeddingProvider, HashEmbedder, RemoteEmbedder};
use convcoa::eval::{bench_latency, evaluate, load_corpus, load_dataset};
use convcoa::hopfield::{configure_mode, HopfieldMode, HopfieldProjections, ModeDims, ModeKind, ProjectionsFile};
use convcoa::store::{build_index, search, Index, IndexConfig};
use convcoa::training::{parse_training_records, train, TrainConfig, TrainingInstance};
use convcoa::verification::conv_mrfs;
use convcoa::{Error, Result};

pub use config::Config;

#[derive(Debug, Parser)]
#[command(name = "convcoa", version, about = "Conversational retrieval-augmented question answering")]
pub struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ProjectionArgs {
    /// Trained projections file; overrides `paths.projections`.
    #[arg(long)]
    pub projections: Option<PathBuf>,
    /// Overrides `hopfield.segments`.
    #[arg(long)]
    pub segments: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Chunk, embed and index a JSONL corpus of {id, title, text} records.
    Ingest {
        corpus: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the top-k chunks for a query.
    Retrieve {
        index: PathBuf,
        query: String,
        #[arg(short, long)]
        k: Option<usize>,
        #[command(flatten)]
        proj: ProjectionArgs,
    },
    /// Train query/key projections on {question, positive_chunk_id} pairs.
    Train {
        index: PathBuf,
        pairs: PathBuf,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
        learning_rate: f64,
        #[arg(long, default_value_t = TrainConfig::default().batch_size)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Conversational loop: one question per stdin line.
    Chat {
        #[arg(long)]
        index: Option<PathBuf>,
        /// Scripted completions and fixture pages instead of live services.
        #[arg(long)]
        mock: Option<PathBuf>,
        #[arg(long, default_value = "conversation")]
        conversation: String,
        /// Overrides `paths.transcripts`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
        #[command(flatten)]
        proj: ProjectionArgs,
    },
    /// Retrieval latency for several segment counts.
    Bench {
        index: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = [1, 2, 4, 8])]
        segments: Vec<usize>,
        /// One query per line.
        #[arg(long)]
        queries: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        projections: Option<PathBuf>,
    },
    /// Faithfulness of an answer against a knowledge-set file.
    Score {
        #[arg(long)]
        answer: String,
        #[arg(long)]
        cks: PathBuf,
        #[arg(long)]
        json: bool,
    },
    /// Retrieval metrics and optional judged exact match over a dataset.
    Eval {
        index: PathBuf,
        dataset: PathBuf,
        #[arg(short, long, default_value_t = 10)]
        k: usize,
        #[arg(long, conflicts_with = "mock_judge")]
        judge_endpoint: Option<String>,
        #[arg(long)]
        mock_judge: Option<PathBuf>,
        #[command(flatten)]
        proj: ProjectionArgs,
    },
}

/// Embedder for `config`, with `dim` taken from the index when there is one.
pub fn make_embedder(config: &Config, dim: Option<usize>) -> Result<Box<dyn EmbeddingProvider>> {
    let dim = dim.unwrap_or(config.embedding.dim);
    Ok(match config.embedding.provider {
        config::ProviderKind::Hash => Box::new(HashEmbedder::new(dim, config.embedding.seed)),
        config::ProviderKind::Remote => {
            let endpoint = config.embedding.endpoint.clone().ok_or_else(|| Error::InvalidConfig {
                code: "MISSING_ENDPOINT",
                message: "remote embedding needs an endpoint".into(),
            })?;
            Box::new(RemoteEmbedder::new(endpoint, config.embedding.model.clone(), dim)?)
        }
    })
}

pub fn load_projections(path: &Path) -> Result<HopfieldProjections> {
    let file: ProjectionsFile = serde_json::from_slice(&std::fs::read(path)?)?;
    HopfieldProjections::try_from(file)
}

/// Projections from a file when given, otherwise built from the configured
/// mode. Pooling and lookup carry learned state and need a file.
pub fn make_projections(config: &Config, dim: usize, file: Option<&Path>) -> Result<HopfieldProjections> {
    let file = file.or(config.paths.projections.as_deref());
    if let Some(path) = file {
        let p = load_projections(path)?;
        if (p.mode != ModeKind::Pooling && p.query_dim() != dim) || p.pattern_dim() != dim {
            return Err(Error::InvalidDimension(format!(
                "projections expect query dim {} and pattern dim {}, index has dim {dim}",
                p.query_dim(),
                p.pattern_dim()
            )));
        }
        return Ok(p);
    }
    let beta = config.hopfield.beta;
    match config.hopfield.mode {
        ModeKind::MemoryRetrieval => Ok(HopfieldProjections::identity(dim).with_beta(beta)),
        ModeKind::Association => Ok(configure_mode(
            HopfieldMode::Association { seed: config.hopfield.seed },
            ModeDims::square(dim),
        )?
        .with_beta(beta)),
        mode => Err(Error::InvalidConfig {
            code: "INVALID_MODE",
            message: format!("hopfield mode {mode:?} needs a projections file"),
        }),
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, bytes)?)
}

/// Parses the config, runs one command and reports per-turn chat failures
/// on `err`.
pub fn run(cli: Cli, input: &mut dyn BufRead, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let config = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Ingest { corpus, out: dest } => ingest(&config, &corpus, dest, out),
        Command::Retrieve { index, query, k, proj } => retrieve(&config, &index, &query, k, &proj, out),
        Command::Train {
            index,
            pairs,
            epochs,
            out: dest,
            learning_rate,
            batch_size,
            seed,
        } => {
            let tc = TrainConfig {
                learning_rate,
                batch_size,
                seed,
                ..TrainConfig::default()
            };
            train_cmd(&config, &index, &pairs, epochs, &dest, tc, out)
        }
        Command::Chat {
            index,
            mock,
            conversation,
            out_dir,
            proj,
        } => chat(&config, index.as_deref(), mock.as_deref(), &conversation, out_dir, &proj, input, out, err),
        Command::Bench {
            index,
            segments,
            queries,
            k,
            projections,
        } => bench(&config, &index, &segments, &queries, k, projections.as_deref(), out),
        Command::Score { answer, cks, json } => score(&config, &answer, &cks, json, out),
        Command::Eval {
            index,
            dataset,
            k,
            judge_endpoint,
            mock_judge,
            proj,
        } => eval_cmd(&config, &index, &dataset, k, judge_endpoint, mock_judge.as_deref(), &proj, out),
    }
}

fn ingest(config: &Config, corpus: &Path, dest: Option<PathBuf>, out: &mut dyn Write) -> Result<()> {
    let dest = dest.or_else(|| config.paths.index.clone()).ok_or_else(|| Error::InvalidConfig {
        code: "MISSING_PATH",
        message: "ingest needs --out or paths.index".into(),
    })?;
    let docs = load_corpus(corpus)?;
    let embedder = make_embedder(config, None)?;
    let index = build_index(
        &docs,
        embedder.as_ref(),
        IndexConfig {
            chunking: config.chunking(),
            quantized: config.retrieval.quantized,
        },
    )?;
    if let Some(dir) = dest.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    index.save(&dest)?;
    writeln!(out, "documents: {}", docs.len())?;
    writeln!(out, "chunks: {}", index.len())?;
    Ok(())
}

fn retrieve(config: &Config, index: &Path, query: &str, k: Option<usize>, proj: &ProjectionArgs, out: &mut dyn Write) -> Result<()> {
    let index = Index::load(index)?;
    let embedder = make_embedder(config, Some(index.dim()))?;
    let projections = make_projections(config, index.dim(), proj.projections.as_deref())?;
    let segments = proj.segments.unwrap_or(config.hopfield.segments);
    let k = k.unwrap_or(config.retrieval.top_k);
    for hit in search(&index, query, k, embedder.as_ref(), &projections, segments)? {
        writeln!(out, "{}\t{:.6}\t{}\t{}", hit.rank, hit.score, hit.chunk_id, hit.text.replace('\n', " "))?;
    }
    Ok(())
}

fn train_cmd(
    config: &Config,
    index: &Path,
    pairs: &Path,
    epochs: usize,
    dest: &Path,
    tc: TrainConfig,
    out: &mut dyn Write,
) -> Result<()> {
    let index = Index::load(index)?;
    let embedder = make_embedder(config, Some(index.dim()))?;
    if embedder.name() != index.provider() {
        return Err(Error::IndexProviderMismatch {
            index: index.provider().to_owned(),
            query: embedder.name().to_owned(),
        });
    }
    let records = parse_training_records(&std::fs::read_to_string(pairs)?)?;
    let questions: Vec<String> = records.iter().map(|r| r.question.clone()).collect();
    let embeddings = embedder.embed_batch(&questions)?;
    let instances: Vec<TrainingInstance> = records
        .into_iter()
        .zip(embeddings)
        .map(|(r, e)| TrainingInstance {
            question_embedding: e,
            positive_id: r.positive_chunk_id,
            negative_ids: r.negative_chunk_ids,
        })
        .collect();
    let mut initial = make_projections(config, index.dim(), None)?;
    // Trained matrices are no longer the identity.
    if initial.mode == ModeKind::MemoryRetrieval {
        initial.mode = ModeKind::Association;
    }
    let outcome = train(&instances, index.bank(), initial, epochs, tc)?;
    for (epoch, loss) in outcome.loss_history.iter().enumerate() {
        writeln!(out, "epoch {} loss {loss:.6}", epoch + 1)?;
    }
    let file = ProjectionsFile::from(&outcome.projections);
    write_file(dest, &serde_json::to_vec(&file)?)?;
    Ok(())
}

struct LiveServices {
    llm: Box<dyn LLMClient>,
    search: Box<dyn SearchProvider>,
}

fn live_services(config: &Config, mock: Option<&Path>) -> Result<LiveServices> {
    if let Some(path) = mock {
        let (llm, search) = MockScript::load(path)?.into_parts();
        return Ok(LiveServices {
            llm: Box::new(llm),
            search: Box::new(search),
        });
    }
    let missing = |what: &str, var: &str| Error::InvalidConfig {
        code: "MISSING_ENDPOINT",
        message: format!("{what} needs an endpoint in the config or {var}"),
    };
    let llm_endpoint = config.llm.endpoint.clone().ok_or_else(|| missing("llm", config::ENV_LLM_ENDPOINT))?;
    let search_endpoint = config
        .search
        .endpoint
        .clone()
        .ok_or_else(|| missing("search", config::ENV_SEARCH_ENDPOINT))?;
    Ok(LiveServices {
        llm: Box::new(HttpLlm::new(llm_endpoint, config.llm.model.clone(), config.llm.temperature)?),
        search: Box::new(HttpSearch::new(search_endpoint)?),
    })
}

/// Transcript and knowledge-set paths of a conversation.
pub fn conversation_files(dir: &Path, conversation: &str) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("{conversation}.transcript.jsonl")),
        dir.join(format!("{conversation}.cks.json")),
    )
}

#[allow(clippy::too_many_arguments)]
fn chat(
    config: &Config,
    index: Option<&Path>,
    mock: Option<&Path>,
    conversation: &str,
    out_dir: Option<PathBuf>,
    proj: &ProjectionArgs,
    input: &mut dyn BufRead,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<()> {
    let index = index.or(config.paths.index.as_deref()).map(Index::load).transpose()?;
    let dim = index.as_ref().map(Index::dim);
    let embedder = make_embedder(config, dim)?;
    let projections = make_projections(config, embedder.dim(), proj.projections.as_deref())?;
    let mut coa = config.coa();
    if let Some(s) = proj.segments {
        coa.segments = s;
    }
    coa.validate()?;
    let services = live_services(config, mock)?;
    let deps = TurnDeps {
        llm: services.llm.as_ref(),
        search: services.search.as_ref(),
        index: index.as_ref(),
        embedder: embedder.as_ref(),
        projections: &projections,
        config: &coa,
    };
    let dir = out_dir.unwrap_or_else(|| config.paths.transcripts.clone());
    let (transcript_path, cks_path) = conversation_files(&dir, conversation);
    let mut transcript = Transcript::new();
    let mut cks = ContextualKnowledgeSet::new();
    let mut failures = 0usize;
    let mut turns = 0usize;
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        turns += 1;
        match run_turn(&line, &cks, &deps, &mut transcript) {
            Ok(outcome) => {
                writeln!(out, "{}", outcome.answer)?;
                cks = outcome.cks;
            }
            Err(e) => {
                failures += 1;
                writeln!(err, "error: {}: {e}", e.code())?;
            }
        }
        write_file(&transcript_path, transcript.to_jsonl().as_bytes())?;
        write_file(&cks_path, &cks.serialize())?;
        out.flush()?;
    }
    if failures > 0 {
        return Err(Error::TurnFailed(format!("{failures} of {turns} turns failed")));
    }
    Ok(())
}

fn bench(
    config: &Config,
    index: &Path,
    segments: &[usize],
    queries: &Path,
    k: usize,
    projections: Option<&Path>,
    out: &mut dyn Write,
) -> Result<()> {
    let index = Index::load(index)?;
    let embedder = make_embedder(config, Some(index.dim()))?;
    let projections = make_projections(config, index.dim(), projections)?;
    let texts: Vec<String> = std::fs::read_to_string(queries)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect();
    if texts.is_empty() {
        return Err(Error::NoQueries);
    }
    if let Some(&bad) = segments.iter().find(|&&s| s == 0) {
        return Err(Error::InvalidSegmentation {
            segments: bad,
            patterns: index.len(),
        });
    }
    let vectors = embedder.embed_batch(&texts)?;
    let report = bench_latency(&index, &vectors, segments, &projections, k)?;
    write!(out, "{}", report.to_table())?;
    Ok(())
}

fn score(config: &Config, answer: &str, cks: &Path, json: bool, out: &mut dyn Write) -> Result<()> {
    let cks = ContextualKnowledgeSet::parse(&std::fs::read(cks)?)?;
    let report = conv_mrfs(
        &cks.reference_segments(),
        answer,
        &config.weights(),
        config.verification.threshold,
        config.verification.awl_cap,
    )?;
    if json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report)?)?;
        return Ok(());
    }
    writeln!(out, "segment  precision  recall    awl_norm  score")?;
    for s in &report.per_segment {
        writeln!(
            out,
            "{:<7}  {:<9.6}  {:<8.6}  {:<8.6}  {:.6}",
            s.index, s.precision, s.recall, s.awl_norm, s.score
        )?;
    }
    writeln!(out, "max_score: {:.6}", report.max_score)?;
    writeln!(out, "threshold: {:.6}", report.threshold)?;
    writeln!(out, "faithful: {}", report.faithful)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn eval_cmd(
    config: &Config,
    index: &Path,
    dataset: &Path,
    k: usize,
    judge_endpoint: Option<String>,
    mock_judge: Option<&Path>,
    proj: &ProjectionArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let index = Index::load(index)?;
    let embedder = make_embedder(config, Some(index.dim()))?;
    let projections = make_projections(config, index.dim(), proj.projections.as_deref())?;
    let examples = load_dataset(dataset)?;
    let judge: Option<Box<dyn LLMClient>> = match (judge_endpoint, mock_judge) {
        (Some(url), _) => Some(Box::new(HttpLlm::new(url, config.llm.model.clone(), config.llm.temperature)?)),
        (None, Some(path)) => Some(Box::new(MockScript::load(path)?.into_parts().0)),
        (None, None) => None,
    };
    let segments = proj.segments.unwrap_or(config.hopfield.segments);
    let report = evaluate(&index, &examples, embedder.as_ref(), &projections, segments, k, judge.as_deref())?;
    write!(out, "{}", report.to_table())?;
    Ok(())
}
