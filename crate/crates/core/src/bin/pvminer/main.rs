//! Command-line front end.
//!
//! Exit status: 0 success, 1 validation failure, 2 usage error, 3 I/O or
//! endpoint failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "pvminer", version, about = "Patient-voice annotation extraction toolkit")]
struct Cli {
    /// Codebook TOML file; the built-in codebook is used when omitted.
    #[arg(long, global = true, env = "PVMINER_CODEBOOK")]
    codebook: Option<PathBuf>,

    /// Log more (repeat for debug output).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check a corpus file against the codebook.
    Validate(ValidateArgs),
    /// Multi-label stratified split into named folds.
    Split(SplitArgs),
    /// Generate a synthetic annotated corpus.
    Synthesize(SynthesizeArgs),
    /// Render a prompt to stdout.
    Prompt(PromptArgs),
    /// Request completions for every record of a corpus.
    Run(RunArgs),
    /// Parse completions and score them against gold annotations.
    Evaluate(EvaluateArgs),
    /// Export supervised fine-tuning pairs.
    PrepareSft(PrepareSftArgs),
    /// Print tables from a saved evaluation.
    Report(ReportArgs),
    /// Print the active codebook as TOML.
    Codebook,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    corpus: PathBuf,
    /// Treat direction mismatches as fatal.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct SplitArgs {
    corpus: PathBuf,
    /// Fold ratios as name=ratio pairs summing to 1.
    #[arg(long, default_value = "train=0.8,test=0.2")]
    ratios: String,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// Directory receiving one `<fold>.jsonl` per fold.
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Debug)]
struct SynthesizeArgs {
    #[arg(long, short, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 13)]
    seed: u64,
    /// `long-tail` or a JSON profile file.
    #[arg(long, default_value = "long-tail")]
    profile: String,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum TemplateArg {
    Baseline,
    Engineered,
}

#[derive(Args, Debug)]
struct ShotArgs {
    /// Number of few-shot exemplars.
    #[arg(long, default_value_t = 0)]
    shots: usize,
    /// Corpus the exemplars are drawn from.
    #[arg(long)]
    exemplars: Option<PathBuf>,
    /// Explicit exemplar ids, in order; overrides automatic selection.
    #[arg(long, value_delimiter = ',')]
    exemplar_ids: Vec<String>,
    /// Seed for exemplar selection.
    #[arg(long, default_value_t = 13)]
    seed: u64,
}

#[derive(Args, Debug)]
struct PromptArgs {
    #[arg(long, value_enum, default_value = "engineered")]
    template: TemplateArg,
    #[command(flatten)]
    shots: ShotArgs,
    /// Message direction: Y for provider to patient, N for patient to provider.
    #[arg(long, default_value = "N")]
    direction: String,
    /// Message text; read from stdin when neither this nor --message-file is given.
    #[arg(long, conflicts_with = "message_file")]
    message: Option<String>,
    #[arg(long)]
    message_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EndpointArgs {
    /// Base URL of a chat-completions server, e.g. http://localhost:8000/v1
    #[arg(long, env = "PVMINER_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "PVMINER_MODEL", default_value = "default")]
    model: String,
    #[arg(long, env = "PVMINER_API_KEY", hide_env_values = true)]
    api_key: Option<String>,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 120)]
    timeout: u64,
    #[arg(long, default_value_t = 3)]
    max_attempts: u32,
    #[arg(long, default_value_t = 1024)]
    max_new_tokens: u32,
    /// Context budget; defaults to 8096, or 16384 with exemplars.
    #[arg(long)]
    max_context: Option<u32>,
    #[arg(long, default_value_t = 4)]
    concurrency: usize,
    #[arg(long, env = "PVMINER_CACHE_DIR")]
    cache_dir: Option<PathBuf>,
    /// JSONL of {"id", "completion"} served instead of calling an endpoint.
    #[arg(long, conflicts_with = "endpoint")]
    canned: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "engineered")]
    template: TemplateArg,
    #[command(flatten)]
    shots: ShotArgs,
    #[command(flatten)]
    endpoint: EndpointArgs,
    /// Completions output (JSONL).
    #[arg(long, short)]
    out: PathBuf,
    /// Per-request log (JSONL).
    #[arg(long)]
    run_log: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MatchingArg {
    ManyToOne,
    OneToOne,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Gold corpus.
    gold: PathBuf,
    /// Completions JSONL as written by `run`.
    #[arg(long)]
    completions: PathBuf,
    /// Reject spans that only match after whitespace normalization, and direction mismatches.
    #[arg(long)]
    strict_parse: bool,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
    #[arg(long, value_enum, default_value = "many-to-one")]
    matching: MatchingArg,
    /// Require label agreement for span matches.
    #[arg(long)]
    labeled_spans: bool,
    /// Score the "None" sentinel as a Sub-code class.
    #[arg(long)]
    include_none: bool,
    /// Fail when a gold record has no completion.
    #[arg(long)]
    strict_alignment: bool,
    /// Receives parse_reports.jsonl, eval.json and eval.txt.
    #[arg(long, short)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    max_swaps: usize,
}

#[derive(Args, Debug)]
struct PrepareSftArgs {
    corpus: PathBuf,
    #[arg(long, value_enum, default_value = "engineered")]
    template: TemplateArg,
    /// Append the stop string to every completion.
    #[arg(long)]
    stop_suffix: bool,
    #[arg(long)]
    strict: bool,
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// eval.json written by `evaluate`.
    eval: PathBuf,
    /// parse_reports.jsonl for an outcome and failure-class summary.
    #[arg(long)]
    parse_reports: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    max_swaps: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
