//! The `semgate` command line.
//!
//! Exit codes: 0 success, 1 operational error, 2 usage error.

use std::ffi::OsString;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::api::{self, AppState, LogSink};
use crate::auth::{AuthEngine, AuthError, Outcome, Verdict};
use crate::config::{ApiConfig, ConfigError};
use crate::eval::{self, EvalError, OverrideGate, SweepConfig};
use crate::fixtures;
use crate::fraud::{FraudError, FraudPipeline, FraudSettings, RetrievalMode};
use crate::llm::{GenerationBias, LlmGateway, ScriptedLlm};
use crate::segment::UserDocument;
use crate::store::{CorpusRecord, EntryFilter, EvidenceStore, ImportOptions, Label, LabelProvenance, StoreError};
use crate::vocab::RedFlagVocabulary;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error(transparent)]
    Store(#[from] StoreError),

    #[error(transparent)]
    Auth(#[from] AuthError),

    #[error(transparent)]
    Fraud(#[from] FraudError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        source: std::io::Error,
    },
}

impl CliError {
    fn io(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> Self {
        let context = context.into();
        move |source| CliError::Io { context, source }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum OutputFormat {
    #[default]
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "semgate", version, about = "Semantic knowledge-factor authentication and scam triage")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Storage directory; overrides the config file.
    #[arg(long, global = true)]
    pub data_dir: Option<PathBuf>,

    /// Use the scripted LLM and offline embedder regardless of configuration.
    #[arg(long, global = true)]
    pub mock: bool,

    #[arg(long, global = true, value_enum, default_value_t = OutputFormat::Text)]
    pub output: OutputFormat,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Store documents.
    #[command(subcommand)]
    Ingest(IngestCommand),
    /// Manage the evidence corpus.
    #[command(subcommand)]
    Corpus(CorpusCommand),
    /// Authentication sessions.
    #[command(subcommand)]
    Auth(AuthCommand),
    /// Scam assessment.
    #[command(subcommand)]
    Fraud(FraudCommand),
    /// Experiments.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Run the HTTP API.
    Serve {
        /// Listen address; overrides the config file.
        #[arg(long)]
        bind: Option<std::net::SocketAddr>,
    },
}

#[derive(Debug, Subcommand)]
pub enum IngestCommand {
    /// Store a user's personal document (replaces any earlier one).
    Doc {
        #[arg(long)]
        user: String,
        #[arg(long)]
        doc_id: Option<String>,
        /// Text file, or `-` for stdin.
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum CorpusCommand {
    /// Import entries from a JSON-lines file.
    Import {
        file: PathBuf,
        /// Accept entries labelled by a model rather than a reviewer.
        #[arg(long)]
        accept_model_labels: bool,
        /// Also import policy documents from this JSON-lines file.
        #[arg(long)]
        policies: Option<PathBuf>,
    },
    /// Add one entry.
    Add {
        #[arg(long)]
        id: String,
        #[arg(long, value_parser = parse_label)]
        label: Label,
        #[arg(long)]
        text: String,
        /// Red-flag tag; repeatable.
        #[arg(long = "tag")]
        tags: Vec<String>,
        #[arg(long, default_value = "cli")]
        source: String,
    },
    /// List entries.
    List {
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, value_parser = parse_label)]
        label: Option<Label>,
        #[arg(long, default_value_t = 50)]
        limit: usize,
        #[arg(long, default_value_t = 0)]
        offset: usize,
    },
}

#[derive(Debug, Subcommand)]
pub enum AuthCommand {
    /// Interactive session: questions on stdout, one answer per stdin line.
    Demo {
        #[arg(long)]
        user: String,
        /// Use this document instead of the stored one.
        #[arg(long)]
        document: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum FraudCommand {
    /// Assess one message (`-` reads stdin).
    Assess {
        message: String,
        #[arg(long)]
        no_rag: bool,
        /// Use the bundled corpus instead of the data directory.
        #[arg(long)]
        bundled_corpus: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BiasArg {
    Spread,
    HeadTail,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// QA records (JSON lines); defaults to the bundled 50-record set.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// `start:end:step`.
    #[arg(long, default_value = "0.70:1.00:0.05", value_parser = parse_grid)]
    pub grid: Grid,
    #[arg(long, default_value_t = eval::DEFAULT_TRIALS)]
    pub trials: u32,
    #[arg(long, default_value_t = eval::DEFAULT_SEED)]
    pub seed: u64,
    /// `tracking` (override gate equals θ) or a fixed value.
    #[arg(long, default_value = "0.97", value_parser = parse_override)]
    pub override_gate: OverrideGate,
    /// Judge with byte-exact comparison instead of the LLM.
    #[arg(long)]
    pub exact_judge: bool,
    /// Write the per-pair decision log (JSON lines) here.
    #[arg(long)]
    pub decisions: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// FAR/FRR threshold sweep; CSV on stdout.
    Sweep(SweepArgs),
    /// Positional-bias distribution of unsegmented generation.
    Bias {
        /// Documents (JSON lines); defaults to the bundled three.
        #[arg(long)]
        documents: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        questions: usize,
        #[arg(long, default_value_t = 4)]
        segments: usize,
        /// Generation bias of the scripted provider (mock only).
        #[arg(long, value_enum, default_value_t = BiasArg::HeadTail)]
        bias: BiasArg,
    },
    /// False positive and false negative rates with and without retrieval.
    Fraud {
        /// Labelled messages (JSON lines); defaults to the bundled 80.
        #[arg(long)]
        messages: Option<PathBuf>,
        /// Use the bundled corpus instead of the data directory.
        #[arg(long)]
        bundled_corpus: bool,
    },
}

fn parse_label(s: &str) -> Result<Label, String> {
    match s {
        "scam" => Ok(Label::Scam),
        "legitimate" => Ok(Label::Legitimate),
        other => Err(format!("label must be scam or legitimate, got {other:?}")),
    }
}

/// Threshold grid parsed from `start:end:step`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid(pub Vec<f64>);

fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| format!("bad number {p:?} in grid")))
        .collect::<Result<_, _>>()?;
    match parts.as_slice() {
        [single] => Ok(Grid(vec![*single])),
        [start, end, step] => eval::threshold_grid(*start, *end, *step)
            .map(Grid)
            .map_err(|e| e.to_string()),
        _ => Err("grid must be start:end:step or a single threshold".into()),
    }
}

fn parse_override(s: &str) -> Result<OverrideGate, String> {
    if s == "tracking" {
        return Ok(OverrideGate::Tracking);
    }
    let v: f64 = s.parse().map_err(|_| format!("expected `tracking` or a number, got {s:?}"))?;
    if !(0.0..=1.0).contains(&v) {
        return Err("override gate must be within [0, 1]".into());
    }
    Ok(OverrideGate::Fixed(v))
}

/// Parse and run; returns the process exit code.
pub fn run<I, T>(args: I, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = write!(stderr, "{e}");
                return 2;
            }
            let text = e.to_string();
            let first = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("invalid arguments");
            let _ = writeln!(stderr, "{first}\nhint: run `semgate --help` for usage");
            return 2;
        }
    };
    match execute(cli, stdin, stdout, stderr) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            if let CliError::Usage(_) = e {
                let _ = writeln!(stderr, "hint: run `semgate --help` for usage");
            }
            e.exit_code()
        }
    }
}

/// Entry point for the binary.
pub fn main_exit_code() -> i32 {
    let stdin = std::io::stdin();
    run(
        std::env::args_os(),
        &mut stdin.lock(),
        &mut std::io::stdout(),
        &mut std::io::stderr(),
    )
}

struct Context {
    config: ApiConfig,
    mock: bool,
    output: OutputFormat,
}

impl Context {
    fn open_store(&self) -> Result<EvidenceStore, CliError> {
        Ok(EvidenceStore::open(
            &self.config.data_dir,
            self.config.embedder(self.mock)?,
            RedFlagVocabulary::bundled(),
        )?)
    }

    fn save(&self, store: &EvidenceStore) -> Result<(), CliError> {
        Ok(store.save(&self.config.data_dir)?)
    }

    fn gateway(&self) -> Result<LlmGateway, CliError> {
        Ok(self.config.gateway(self.config.llm_provider(self.mock)?))
    }

    fn store_for_assessment(&self, bundled: bool) -> Result<EvidenceStore, CliError> {
        if bundled {
            Ok(fixtures::seeded_store(self.config.embedder(self.mock)?)?)
        } else {
            self.open_store()
        }
    }

    fn pipeline(&self, store: EvidenceStore) -> Result<FraudPipeline, CliError> {
        Ok(FraudPipeline::new(
            self.gateway()?,
            Arc::new(store),
            FraudSettings {
                decision_threshold: self.config.decision_threshold,
                retrieval_k: self.config.retrieval_k,
                policy_k: self.config.policy_k,
            },
        )?)
    }

    fn json(&self) -> bool {
        self.output == OutputFormat::Json
    }
}

fn read_input(path: &Path, stdin: &mut dyn BufRead) -> Result<String, CliError> {
    if path.as_os_str() == "-" {
        let mut text = String::new();
        stdin
            .read_to_string(&mut text)
            .map_err(CliError::io("read stdin"))?;
        Ok(text)
    } else {
        std::fs::read_to_string(path).map_err(CliError::io(format!("read {}", path.display())))
    }
}

fn open_reader(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(CliError::io(format!("open {}", path.display())))
}

fn out(stdout: &mut dyn Write, text: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(stdout, "{text}").map_err(CliError::io("write stdout"))
}

fn json_out(stdout: &mut dyn Write, value: &impl serde::Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("output serialises");
    out(stdout, text)
}

fn execute(cli: Cli, stdin: &mut dyn BufRead, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    let mut config = ApiConfig::load(cli.config.as_deref())?;
    if let Some(dir) = cli.data_dir {
        config.data_dir = dir;
    }
    let ctx = Context {
        config,
        mock: cli.mock,
        output: cli.output,
    };
    match cli.command {
        Command::Ingest(IngestCommand::Doc { user, doc_id, file }) => {
            let text = read_input(&file, stdin)?;
            let store = ctx.open_store()?;
            let doc = UserDocument::new(doc_id.unwrap_or_else(|| format!("doc-{user}")), user, text);
            let words = doc.word_count();
            store.put_document(doc.clone())?;
            ctx.save(&store)?;
            if ctx.json() {
                json_out(stdout, &serde_json::json!({ "doc_id": doc.doc_id, "user_id": doc.user_id, "words": words }))
            } else {
                out(stdout, format!("stored {} for {} ({words} words)", doc.doc_id, doc.user_id))
            }
        }
        Command::Corpus(cmd) => corpus(&ctx, cmd, stdout),
        Command::Auth(AuthCommand::Demo { user, document }) => auth_demo(&ctx, &user, document, stdin, stdout),
        Command::Fraud(FraudCommand::Assess {
            message,
            no_rag,
            bundled_corpus,
        }) => {
            let message = if message == "-" {
                read_input(Path::new("-"), stdin)?
            } else {
                message
            };
            let pipeline = ctx.pipeline(ctx.store_for_assessment(bundled_corpus)?)?;
            let mode = if no_rag {
                RetrievalMode::Disabled
            } else {
                RetrievalMode::Enabled
            };
            let a = pipeline.assess_with(message.trim(), mode)?;
            if ctx.json() {
                return json_out(stdout, &a);
            }
            out(stdout, format!("verdict: {} (score {:.2})", a.verdict.as_str(), a.score))?;
            out(stdout, format!("rationale: {}", a.rationale))?;
            let flags: Vec<&str> = a.features.red_flags.iter().map(|f| f.as_str()).collect();
            out(stdout, format!("red flags: {}", if flags.is_empty() { "none".into() } else { flags.join(", ") }))?;
            for id in &a.cited_evidence {
                if let Some(e) = a.evidence.iter().find(|e| &e.entry_id == id) {
                    out(stdout, format!("cited: {id} ({}, similarity {:.3})", e.label.as_str(), e.similarity))?;
                }
            }
            Ok(())
        }
        Command::Eval(cmd) => evaluate(&ctx, cmd, stdout, stderr),
        Command::Serve { bind } => {
            let addr = bind.unwrap_or(ctx.config.bind);
            let state = AppState::from_config(ctx.config, ctx.mock, LogSink::stderr())?;
            let runtime = tokio::runtime::Runtime::new().map_err(CliError::io("start runtime"))?;
            runtime
                .block_on(api::serve(state, addr))
                .map_err(CliError::io(format!("serve on {addr}")))
        }
    }
}

fn corpus(ctx: &Context, cmd: CorpusCommand, stdout: &mut dyn Write) -> Result<(), CliError> {
    let store = ctx.open_store()?;
    match cmd {
        CorpusCommand::Import {
            file,
            accept_model_labels,
            policies,
        } => {
            let ids = store.import_jsonl(open_reader(&file)?, ImportOptions { accept_model_labels })?;
            let policy_count = match policies {
                Some(path) => store.import_policies_jsonl(open_reader(&path)?)?,
                None => 0,
            };
            ctx.save(&store)?;
            if ctx.json() {
                json_out(stdout, &serde_json::json!({ "stored": ids, "policies": policy_count }))
            } else {
                out(stdout, format!("imported {} entries, {policy_count} policies; corpus now {}", ids.len(), store.len()))
            }
        }
        CorpusCommand::Add {
            id,
            label,
            text,
            tags,
            source,
        } => {
            let entry = store.upsert_entry(CorpusRecord {
                entry_id: id,
                text,
                label,
                red_flags: tags,
                source,
                added_at: None,
                labeled_by: LabelProvenance::Human,
            })?;
            ctx.save(&store)?;
            if ctx.json() {
                json_out(stdout, &entry.record())
            } else {
                out(stdout, format!("stored {}", entry.entry_id))
            }
        }
        CorpusCommand::List {
            tag,
            label,
            limit,
            offset,
        } => {
            if let Some(t) = &tag {
                store.vocabulary().parse(t).map_err(StoreError::from)?;
            }
            let (entries, total) = store.list(&EntryFilter { label, tag }, offset, limit);
            let records: Vec<CorpusRecord> = entries.iter().map(|e| e.record()).collect();
            if ctx.json() {
                return json_out(stdout, &serde_json::json!({ "total": total, "entries": records }));
            }
            for r in &records {
                out(stdout, format!("{}\t{}\t{}\t{}", r.entry_id, r.label.as_str(), r.red_flags.join(","), r.text))?;
            }
            out(stdout, format!("{} of {total} entries", records.len()))
        }
    }
}

fn auth_demo(
    ctx: &Context,
    user: &str,
    document: Option<PathBuf>,
    stdin: &mut dyn BufRead,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let store = ctx.open_store()?;
    let doc = match document {
        Some(path) => UserDocument::new("cli", user, read_input(&path, stdin)?),
        None => store
            .document_for_user(user)
            .ok_or_else(|| CliError::Usage(format!("no document stored for {user}; run `semgate ingest doc` first")))?,
    };
    let engine = AuthEngine::new(ctx.gateway()?, store.embedder().clone());
    let mut session = engine.start_session(user, &doc, ctx.config.policy.clone())?;
    let text = !ctx.json();
    let mut transcript = Vec::new();
    loop {
        if text {
            out(
                stdout,
                format!(
                    "round {} of {}: answer {} of {}",
                    session.round_index + 1,
                    session.policy.max_attempts,
                    session.policy.passing_requirement,
                    session.questions_per_round
                ),
            )?;
        }
        while let Some(item) = session.current_item().cloned() {
            if text {
                out(stdout, format!("Q: {}", item.question))?;
                write!(stdout, "> ").and_then(|_| stdout.flush()).map_err(CliError::io("write stdout"))?;
            }
            let mut answer = String::new();
            let read = stdin.read_line(&mut answer).map_err(CliError::io("read answer"))?;
            if read == 0 {
                return Err(CliError::Usage("stdin closed before the session finished".into()));
            }
            let graded = engine.evaluate_answer(&mut session, &item.item_id, answer.trim())?;
            if text {
                out(
                    stdout,
                    format!(
                        "  {} (similarity {:.3})",
                        if graded.outcome == Outcome::Passed { "passed" } else { "failed" },
                        graded.similarity.unwrap_or(0.0)
                    ),
                )?;
            }
            transcript.push(serde_json::json!({
                "round_index": session.round_index,
                "item_id": graded.item_id,
                "outcome": graded.outcome,
                "similarity": graded.similarity,
            }));
        }
        let passes = session.pass_count();
        let verdict = engine.conclude_round(&mut session)?;
        if text {
            out(stdout, format!("{passes} passed: {verdict}"))?;
        }
        if verdict != Verdict::NewRoundRequired {
            break;
        }
    }
    if ctx.json() {
        json_out(
            stdout,
            &serde_json::json!({
                "session_id": session.session_id,
                "verdict": session.verdict,
                "rounds": session.round_index + 1,
                "answers": transcript,
            }),
        )?;
    }
    Ok(())
}

fn evaluate(ctx: &Context, cmd: EvalCommand, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<(), CliError> {
    match cmd {
        EvalCommand::Sweep(args) => {
            let dataset = match &args.dataset {
                Some(path) => eval::load_qa_records(open_reader(path)?)?,
                None => fixtures::qa_records(),
            };
            let judge = if args.exact_judge {
                LlmGateway::new(Arc::new(crate::llm::ExactMatchJudge))
            } else {
                ctx.gateway()?
            };
            let embedder = ctx.config.embedder(ctx.mock)?;
            let config = SweepConfig {
                thresholds: args.grid.0,
                trials: args.trials,
                seed: args.seed,
                override_gate: args.override_gate,
                workers: ctx.config.llm.max_in_flight,
            };
            let report = eval::run_far_frr_sweep(&dataset, &config, &judge, embedder.as_ref())?;
            if let Some(path) = &args.decisions {
                std::fs::write(path, report.decisions_jsonl())
                    .map_err(CliError::io(format!("write {}", path.display())))?;
            }
            if ctx.json() {
                json_out(stdout, &report)
            } else {
                write!(stdout, "{}", report.to_csv()).map_err(CliError::io("write stdout"))?;
                let _ = write!(stderr, "{}", report.reference_summary());
                Ok(())
            }
        }
        EvalCommand::Bias {
            documents,
            questions,
            segments,
            bias,
        } => {
            let docs = match &documents {
                Some(path) => crate::store::parse_jsonl::<UserDocument>(open_reader(path)?)?
                    .into_iter()
                    .map(|(_, d)| d)
                    .collect(),
                None => fixtures::documents(),
            };
            let generator = if ctx.mock || ctx.config.llm.endpoint.is_none() {
                let bias = match bias {
                    BiasArg::Spread => GenerationBias::Spread,
                    BiasArg::HeadTail => GenerationBias::HeadTail,
                };
                ctx.config.gateway(Arc::new(ScriptedLlm::with_bias(bias)))
            } else {
                ctx.gateway()?
            };
            let embedder = ctx.config.embedder(ctx.mock)?;
            let dist = eval::run_bias_analysis(&docs, questions, segments, &generator, embedder.as_ref())?;
            if ctx.json() {
                return json_out(stdout, &dist);
            }
            for (i, p) in dist.segment_percentages.iter().enumerate() {
                out(stdout, format!("segment {}: {p:.1}%", i + 1))?;
            }
            let (edges, middle) = dist.edge_and_middle_share();
            out(stdout, format!("first+last {edges:.1}%, middle {middle:.1}%"))
        }
        EvalCommand::Fraud {
            messages,
            bundled_corpus,
        } => {
            let data = match &messages {
                Some(path) => eval::load_labeled_messages(open_reader(path)?)?,
                None => fixtures::messages(),
            };
            let pipeline = Arc::new(ctx.pipeline(ctx.store_for_assessment(bundled_corpus)?)?);
            let report = eval::run_fraud_eval(&data, &pipeline)?;
            if ctx.json() {
                json_out(stdout, &report.to_json())
            } else {
                write!(stdout, "{}", report.to_table()).map_err(CliError::io("write stdout"))
            }
        }
    }
}
