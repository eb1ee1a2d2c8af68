//! The `detoxkit` command line.
//!
//! Exit codes: 0 on success, 1 for usage or validation errors, 2 for IO
//! and backend failures. Human-readable reports go to standard error;
//! machine-readable JSON goes to the path given by the subcommand, or to
//! standard output when no path is given.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::anova::AnovaError;
use crate::cleaning::CleaningError;
use crate::corpus::{CorpusError, Lang, SourceKind};
use crate::metrics::MetricError;
use crate::prompting::PromptError;
use crate::scorer::BackendError;
use config::{ConfigFile, GlobalFlags, Settings};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Io(_) => 2,
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        if e.is_validation() {
            CliError::Validation(e.to_string())
        } else {
            CliError::Io(e.to_string())
        }
    }
}

impl From<BackendError> for CliError {
    fn from(e: BackendError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<CleaningError> for CliError {
    fn from(e: CleaningError) -> Self {
        match e {
            CleaningError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            CleaningError::Backend(b) => b.into(),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Backend(b) => b.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<PromptError> for CliError {
    fn from(e: PromptError) -> Self {
        match e {
            PromptError::MissingTemplate(_) => CliError::Validation(e.to_string()),
            PromptError::Metric(m) => m.into(),
            PromptError::Backend(b) => b.into(),
            other => CliError::Io(other.to_string()),
        }
    }
}

impl From<AnovaError> for CliError {
    fn from(e: AnovaError) -> Self {
        CliError::Validation(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "detoxkit", version, about = "Multilingual text detoxification toolkit")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Scorer service URL, or `fallback` for the offline scorer.
    #[arg(long, global = true, env = "DETOXKIT_SCORER")]
    pub scorer: Option<String>,
    /// Generation service URL, or the `echo` / `delete` stubs.
    #[arg(long, global = true, env = "DETOXKIT_GENERATOR")]
    pub generator: Option<String>,
    #[arg(long, global = true, env = "DETOXKIT_SEED")]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything on the calling thread.
    #[arg(long, global = true, env = "DETOXKIT_PARALLELISM")]
    pub parallelism: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, env = "DETOXKIT_LOG_LEVEL")]
    pub log_level: Option<String>,
    /// File of `key = value` defaults.
    #[arg(long, global = true, env = "DETOXKIT_CONFIG")]
    pub config: Option<PathBuf>,
    /// Directory of `<lang>.txt` toxic lexicons.
    #[arg(long, global = true, env = "DETOXKIT_LEXICON_DIR")]
    pub lexicon_dir: Option<PathBuf>,
    /// Directory of `<lang>.txt` system prompts overriding the built-in ones.
    #[arg(long, global = true, env = "DETOXKIT_TEMPLATES")]
    pub templates: Option<PathBuf>,
    /// Per-request timeout for remote services, in seconds.
    #[arg(long, global = true, env = "DETOXKIT_TIMEOUT_SECS")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Input layout; TSV rows are `toxic<TAB>neutral`.
    #[arg(long, value_enum, default_value_t = InputFormat::Jsonl)]
    pub format: InputFormat,
    /// Language of TSV input.
    #[arg(long, required_if_eq("format", "tsv"))]
    pub lang: Option<Lang>,
    /// Provenance of TSV input.
    #[arg(long, value_enum, default_value_t = SourceArg::Human)]
    pub source: SourceArg,
    /// TSV input has a header row.
    #[arg(long)]
    pub header: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InputFormat {
    Jsonl,
    Tsv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    Human,
    MachineTranslated,
    Synthetic,
}

impl From<SourceArg> for SourceKind {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Human => SourceKind::Human,
            SourceArg::MachineTranslated => SourceKind::MachineTranslated,
            SourceArg::Synthetic => SourceKind::Synthetic,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum JaccardRule {
    /// Drop pairs with J at or above the threshold.
    Above,
    /// Drop pairs with J at or below the threshold.
    Below,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineMethod {
    Delete,
    Duplicate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    All,
    Genetic,
    Typology,
    Geography,
    Resource,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GoldArg {
    First,
    Average,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Filter a parallel corpus through the four cleaning steps.
    Clean {
        #[command(flatten)]
        input: InputArgs,
        /// Retained pairs; standard output when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-step JSON report.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 5)]
        ngram: usize,
        #[arg(long, default_value_t = 0.90)]
        jaccard_max: f64,
        #[arg(long, value_enum, default_value_t = JaccardRule::Above)]
        jaccard_rule: JaccardRule,
        #[arg(long, default_value_t = 0.85)]
        sem_min_mt: f64,
        #[arg(long, default_value_t = 0.80)]
        sem_min_syn: f64,
    },
    /// Annotate lexicon matches as toxic spans.
    Spans {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Run a lexical baseline and write its rewrites as the neutral side.
    Baseline {
        #[arg(long, value_enum)]
        method: BaselineMethod,
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: PathBuf,
    },
    /// Store each pair's nearest same-language neighbours.
    Enrich {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Render inference chats for each input pair.
    Prompt {
        #[command(flatten)]
        input: InputArgs,
        /// Few-shot pool; defaults to the input itself.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Use stored neighbour ids instead of embedding search.
        #[arg(long)]
        stored_neighbors: bool,
    },
    /// Write masked three-turn training instances.
    ExportTrain {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Skip pairs whose 5-gram Jaccard exceeds this value.
        #[arg(long, default_value_t = 0.9)]
        overlap_max: f64,
    },
    /// Generate candidates and keep the best-scoring one per input.
    Infer {
        #[command(flatten)]
        input: InputArgs,
        /// Few-shot pool; defaults to the input itself.
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// References for reference-based selection.
        #[arg(long)]
        golds: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        /// Per-input candidates and scores.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        n: usize,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Score system outputs against inputs and references.
    Evaluate {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        gens: PathBuf,
        #[arg(long)]
        golds: Option<PathBuf>,
        /// Per-row metrics as JSONL.
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        summary: Option<PathBuf>,
        #[arg(long, default_value_t = 0.4)]
        w_input: f64,
        #[arg(long, default_value_t = 0.6)]
        w_gold: f64,
        #[arg(long, value_enum, default_value_t = GoldArg::First)]
        gold_policy: GoldArg,
    },
    /// One-way ANOVA of per-language scores under language groupings.
    Anova {
        /// `lang<TAB>score` rows.
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, value_enum, default_value_t = SchemeArg::All)]
        scheme: SchemeArg,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-language pair counts.
    Stats {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command, returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let g = cli.global;
    let file = match &g.config {
        Some(path) => ConfigFile::load(path)?,
        None => ConfigFile::default(),
    };
    let flags = GlobalFlags {
        scorer: g.scorer,
        generator: g.generator,
        seed: g.seed,
        parallelism: g.parallelism,
        log_level: g.log_level,
        lexicon_dir: g.lexicon_dir,
        templates: g.templates,
        timeout_secs: g.timeout_secs,
    };
    let settings = Settings::resolve(&flags, &file)?;
    let _ = env_logger::Builder::new()
        .parse_filters(&settings.log_level)
        .format_timestamp(None)
        .try_init();
    log::debug!("settings: {settings:?}");
    with_pool(settings.parallelism, move || commands::dispatch(cli.command, &settings))
}

/// Runs `f` on a pool of `threads` workers, or inline when `threads` is 1.
fn with_pool<F>(threads: usize, f: F) -> Result<(), CliError>
where
    F: FnOnce() -> Result<(), CliError> + Send,
{
    if threads == 1 {
        return crate::par::with_execution(crate::par::Execution::Sequential, f);
    }
    #[cfg(feature = "parallel")]
    {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
        pool.install(f)
    }
    #[cfg(not(feature = "parallel"))]
    {
        f()
    }
}
