use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufReader, Read, Write};
use std::path::Path;
use std::time::Duration;

use pvminer::codebook::{Codebook, Direction};
use pvminer::corpus::{
    corpus_stats, read_corpus, read_corpus_report, stratified_split, synthesize_corpus, write_corpus_file,
    GoldRecord, Message, Profile, CORPUS_FORMAT_VERSION,
};
use pvminer::infer::{
    batch_run, BatchSpec, CannedBackend, ChatClient, CompletionBackend, DecodingConfig, EndpointConfig,
    InferenceRecordCache, RetryPolicy,
};
use pvminer::meta::Meta;
use pvminer::metrics::{evaluate, EvalOptions, EvalReport, Matching};
use pvminer::parse::{validate_completion, Outcome, ParseReport, Policy, ReportLine};
use pvminer::prompt::{render_instruction, render_prompt, select_exemplars, Exemplar, PromptTemplate, TemplateKind};
use pvminer::sftprep::{build_pairs, export_manifest, PairOptions, MANIFEST_FORMAT_VERSION};

use crate::{
    Cli, Command, EndpointArgs, EvaluateArgs, MatchingArg, PrepareSftArgs, PromptArgs, ReportArgs, RunArgs,
    ShotArgs, SplitArgs, SynthesizeArgs, TemplateArg, ValidateArgs,
};

/// Writes to stdout, ignoring a closed pipe.
macro_rules! say_raw {
    ($($t:tt)*) => {{
        let _ = write!(std::io::stdout().lock(), $($t)*);
    }};
}

macro_rules! say {
    ($($t:tt)*) => {{
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

const COMPLETIONS_FORMAT_VERSION: u32 = 1;
const EVAL_FORMAT_VERSION: u32 = 1;

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Validation(m) | CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn corpus_err(e: pvminer::corpus::CorpusError) -> CliError {
    match e {
        pvminer::corpus::CorpusError::IoFailure(m) => CliError::Io(m),
        other => CliError::Validation(other.to_string()),
    }
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Io(format!("{}: no such file", path.display())))
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(io_err(p)),
        _ => Ok(()),
    }
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    let cb = match &cli.codebook {
        Some(p) => {
            require_file(p)?;
            Codebook::load(p).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?
        }
        None => Codebook::default_pvminer(),
    };
    match &cli.command {
        Command::Validate(a) => validate(&cb, a),
        Command::Split(a) => split(&cb, a),
        Command::Synthesize(a) => synthesize(&cb, a),
        Command::Prompt(a) => prompt(&cb, a),
        Command::Run(a) => run(&cb, a),
        Command::Evaluate(a) => evaluate_cmd(&cb, a),
        Command::PrepareSft(a) => prepare_sft(&cb, a),
        Command::Report(a) => report(a),
        Command::Codebook => {
            say_raw!("{}", cb.to_toml_string());
            Ok(())
        }
    }
}

fn validate(cb: &Codebook, a: &ValidateArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let file = fs::File::open(&a.corpus).map_err(io_err(&a.corpus))?;
    let report = read_corpus_report(BufReader::new(file), cb, a.strict).map_err(corpus_err)?;
    for issue in &report.issues {
        let tag = if issue.fatal { "error" } else { "warning" };
        eprintln!("{}: {tag}: {}", a.corpus.display(), issue.error);
    }
    let stats = corpus_stats(&report.records);
    say!(
        "records: {}  annotations: {}  fatal: {}  warnings: {}",
        report.records.len(),
        stats.annotations,
        report.fatal_count(),
        report.warning_count()
    );
    if report.fatal_count() > 0 {
        return Err(CliError::Validation(format!("{} fatal issue(s)", report.fatal_count())));
    }
    Ok(())
}

fn parse_ratios(s: &str) -> Result<Vec<(String, f64)>> {
    s.split(',')
        .map(|part| {
            let (name, r) = part
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("ratio `{part}` is not name=value")))?;
            let r: f64 = r.trim().parse().map_err(|_| CliError::Usage(format!("ratio `{part}` is not a number")))?;
            Ok((name.trim().to_owned(), r))
        })
        .collect()
}

fn split(cb: &Codebook, a: &SplitArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let ratios = parse_ratios(&a.ratios)?;
    let records = read_corpus(&a.corpus, cb, a.strict).map_err(corpus_err)?;
    let assignment = stratified_split(&records, &ratios, a.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let config = format!("split ratios={} seed={}", a.ratios, a.seed);
    let by_id: BTreeMap<&str, &GoldRecord> = records.iter().map(|r| (r.id(), r)).collect();
    for fold in &assignment.folds {
        let fold_records: Vec<GoldRecord> = fold.ids.iter().map(|id| by_id[id.as_str()].clone()).collect();
        let path = a.out_dir.join(format!("{}.jsonl", fold.name));
        let meta = Meta::new(&format!("corpus-split-{}", fold.name), CORPUS_FORMAT_VERSION, Some(a.seed), &config);
        write_corpus_file(&path, &fold_records, Some(&meta)).map_err(corpus_err)?;
        say!("{}: {} records -> {}", fold.name, fold_records.len(), path.display());
    }
    Ok(())
}

fn synthesize(cb: &Codebook, a: &SynthesizeArgs) -> Result<()> {
    let (profile, profile_src) = if a.profile == "long-tail" {
        (Profile::long_tail(cb), "long-tail".to_owned())
    } else {
        let p = Path::new(&a.profile);
        require_file(p)?;
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let profile = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
        (profile, text)
    };
    let records = synthesize_corpus(cb, &profile, a.n, a.seed).map_err(|e| CliError::Validation(e.to_string()))?;
    create_parent(&a.out)?;
    let config = format!("synthesize n={} profile={profile_src}", a.n);
    let meta = Meta::new("corpus-synthetic", CORPUS_FORMAT_VERSION, Some(a.seed), &config);
    write_corpus_file(&a.out, &records, Some(&meta)).map_err(corpus_err)?;
    say!("{} records -> {}", records.len(), a.out.display());
    Ok(())
}

fn template_of(t: TemplateArg) -> PromptTemplate {
    PromptTemplate::builtin(match t {
        TemplateArg::Baseline => TemplateKind::Baseline,
        TemplateArg::Engineered => TemplateKind::Engineered,
    })
}

fn load_shots(cb: &Codebook, s: &ShotArgs) -> Result<Vec<Exemplar>> {
    if s.shots == 0 && s.exemplar_ids.is_empty() {
        return Ok(Vec::new());
    }
    let path = s
        .exemplars
        .as_ref()
        .ok_or_else(|| CliError::Usage("--exemplars is required for few-shot prompts".into()))?;
    require_file(path)?;
    let pool = read_corpus(path, cb, true).map_err(corpus_err)?;
    let chosen: Vec<&GoldRecord> = if s.exemplar_ids.is_empty() {
        if pool.len() < s.shots {
            return Err(CliError::Usage(format!("{} exemplars requested but the pool has {}", s.shots, pool.len())));
        }
        select_exemplars(&pool, s.shots, s.seed)
    } else {
        s.exemplar_ids
            .iter()
            .map(|id| {
                pool.iter()
                    .find(|r| r.id() == id)
                    .ok_or_else(|| CliError::Usage(format!("exemplar `{id}` not found in {}", path.display())))
            })
            .collect::<Result<_>>()?
    };
    chosen
        .into_iter()
        .map(|r| {
            let ex = Exemplar::from_record(r);
            ex.validate(cb).map_err(|e| CliError::Validation(e.to_string()))?;
            Ok(ex)
        })
        .collect()
}

fn prompt(cb: &Codebook, a: &PromptArgs) -> Result<()> {
    let direction = Direction::parse(&a.direction)
        .ok_or_else(|| CliError::Usage(format!("direction must be Y or N, got `{}`", a.direction)))?;
    let text = match (&a.message, &a.message_file) {
        (Some(m), _) => m.clone(),
        (None, Some(p)) => {
            require_file(p)?;
            fs::read_to_string(p).map_err(io_err(p))?
        }
        (None, None) => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s).map_err(|e| CliError::Io(format!("stdin: {e}")))?;
            s
        }
    };
    let shots = load_shots(cb, &a.shots)?;
    let rendered = render_prompt(&template_of(a.template), cb, &Message::new("prompt", text, direction), &shots);
    let mut out = std::io::stdout().lock();
    out.write_all(rendered.as_bytes()).map_err(|e| CliError::Io(format!("stdout: {e}")))?;
    Ok(())
}

fn decoding_config(e: &EndpointArgs, few_shot: bool) -> DecodingConfig {
    let mut cfg = if few_shot { DecodingConfig::few_shot() } else { DecodingConfig::default() };
    cfg.max_new_tokens = e.max_new_tokens;
    if let Some(c) = e.max_context {
        cfg.max_context_tokens = c;
    }
    cfg
}

/// Reads `{"id", "completion"}` lines, skipping headers.
fn read_completions(path: &Path) -> Result<Vec<(String, String)>> {
    #[derive(serde::Deserialize)]
    struct Line {
        id: String,
        completion: String,
    }
    require_file(path)?;
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || pvminer::meta::is_meta_line(line) {
            continue;
        }
        let l: Line = serde_json::from_str(line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        if !seen.insert(l.id.clone()) {
            return Err(CliError::Validation(format!("{}:{}: duplicate id `{}`", path.display(), i + 1, l.id)));
        }
        out.push((l.id, l.completion));
    }
    Ok(out)
}

/// Canned backend keyed by message text, built from a completions file and the corpus.
fn canned_backend(path: &Path, records: &[GoldRecord]) -> Result<CannedBackend> {
    let by_id: BTreeMap<String, String> = read_completions(path)?.into_iter().collect();
    Ok(records.iter().fold(CannedBackend::new("canned"), |b, r| match by_id.get(r.id()) {
        Some(c) => b.with(r.message.text.clone(), c.clone()),
        None => b,
    }))
}

fn run(cb: &Codebook, a: &RunArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let records = read_corpus(&a.corpus, cb, false).map_err(corpus_err)?;
    let shots = load_shots(cb, &a.shots)?;
    let cfg = decoding_config(&a.endpoint, !shots.is_empty());
    let template = template_of(a.template);
    let backend: Box<dyn CompletionBackend> = match (&a.endpoint.endpoint, &a.endpoint.canned) {
        (_, Some(c)) => Box::new(canned_backend(c, &records)?),
        (Some(url), None) => {
            let mut ep = EndpointConfig::new(url, &a.endpoint.model);
            ep.api_key = a.endpoint.api_key.clone();
            ep.timeout = Duration::from_secs(a.endpoint.timeout);
            ep.retry = RetryPolicy { max_attempts: a.endpoint.max_attempts, ..RetryPolicy::default() };
            Box::new(ChatClient::new(ep).map_err(|e| CliError::Usage(e.to_string()))?)
        }
        (None, None) => return Err(CliError::Usage("either --endpoint or --canned is required".into())),
    };
    let cache = match &a.endpoint.cache_dir {
        Some(d) => Some(InferenceRecordCache::open(d).map_err(|e| CliError::Io(e.to_string()))?),
        None => None,
    };
    let messages: Vec<Message> = records.iter().map(|r| r.message.clone()).collect();
    let spec = BatchSpec {
        template: &template,
        codebook: cb,
        shots: &shots,
        config: &cfg,
        concurrency: a.endpoint.concurrency,
    };
    let mut log_file = match &a.run_log {
        Some(p) => {
            create_parent(p)?;
            Some(fs::File::create(p).map_err(io_err(p))?)
        }
        None => None,
    };
    let result = batch_run(
        &messages,
        &spec,
        backend.as_ref(),
        cache.as_ref(),
        log_file.as_mut().map(|f| f as &mut (dyn Write + Send)),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;

    let config = format!(
        "run template={:?} model={} shots={:?} cfg={}",
        a.template,
        backend.model_id(),
        shots.iter().map(|s| &s.message.id).collect::<Vec<_>>(),
        serde_json::to_string(&cfg).expect("config serializes")
    );
    let meta = Meta::new("completions", COMPLETIONS_FORMAT_VERSION, Some(a.shots.seed), &config);
    let mut buf = format!("{}\n", meta.to_line());
    for m in &messages {
        if let Some(c) = result.completions.get(&m.id) {
            buf.push_str(&serde_json::json!({"id": m.id, "completion": c}).to_string());
            buf.push('\n');
        }
    }
    create_parent(&a.out)?;
    fs::write(&a.out, buf).map_err(io_err(&a.out))?;
    say!(
        "{} completed ({} from cache), {} failed -> {}",
        result.completions.len(),
        result.cache_hits,
        result.failures.len(),
        a.out.display()
    );
    if !result.failures.is_empty() {
        for (id, e) in &result.failures {
            eprintln!("{id}: {e}");
        }
        return Err(CliError::Io(format!("{} request(s) failed", result.failures.len())));
    }
    Ok(())
}

fn evaluate_cmd(cb: &Codebook, a: &EvaluateArgs) -> Result<()> {
    if !(a.threshold > 0.0 && a.threshold <= 1.0) {
        return Err(CliError::Usage(format!("threshold must lie in (0, 1], got {}", a.threshold)));
    }
    require_file(&a.gold)?;
    let gold = read_corpus(&a.gold, cb, false).map_err(corpus_err)?;
    let completions = read_completions(&a.completions)?;
    let policy = if a.strict_parse { Policy::Strict } else { Policy::Lenient };
    let options = EvalOptions {
        threshold: a.threshold,
        matching: match a.matching {
            MatchingArg::ManyToOne => Matching::ManyToOne,
            MatchingArg::OneToOne => Matching::OneToOne,
        },
        labeled_spans: a.labeled_spans,
        include_none_subcode: a.include_none,
        strict_alignment: a.strict_alignment,
    };

    let by_id: BTreeMap<&str, &str> = completions.iter().map(|(i, c)| (i.as_str(), c.as_str())).collect();
    let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id()).collect();
    if a.strict_alignment {
        let mut problems: Vec<String> =
            gold.iter().filter(|g| !by_id.contains_key(g.id())).map(|g| format!("MissingPrediction({})", g.id())).collect();
        problems.extend(by_id.keys().filter(|id| !gold_ids.contains(*id)).map(|id| format!("UnknownRecord({id})")));
        if !problems.is_empty() {
            for p in &problems {
                eprintln!("{p}");
            }
            return Err(CliError::Validation(format!("{} alignment failure(s)", problems.len())));
        }
    } else {
        for id in by_id.keys().filter(|id| !gold_ids.contains(*id)) {
            log::warn!("completion for unknown record `{id}` ignored");
        }
    }

    let reports: Vec<(String, ParseReport)> = gold
        .iter()
        .filter_map(|g| {
            by_id
                .get(g.id())
                .map(|c| (g.id().to_owned(), validate_completion(c, &g.message, cb, policy)))
        })
        .collect();
    let eval = evaluate(&gold, &reports, cb, &options).map_err(|e| CliError::Validation(e.to_string()))?;

    fs::create_dir_all(&a.out_dir).map_err(io_err(&a.out_dir))?;
    let config = format!("evaluate policy={policy:?} options={}", serde_json::to_string(&options).expect("serializes"));
    let meta = Meta::new("parse-reports", 1, None, &config);
    let mut lines = format!("{}\n", meta.to_line());
    for (id, r) in &reports {
        lines.push_str(&ReportLine::new(id, r).to_json());
        lines.push('\n');
    }
    let p = a.out_dir.join("parse_reports.jsonl");
    fs::write(&p, lines).map_err(io_err(&p))?;

    let meta = Meta::new("evaluation", EVAL_FORMAT_VERSION, None, &config);
    let doc = serde_json::json!({"_meta": meta, "report": eval});
    let p = a.out_dir.join("eval.json");
    fs::write(&p, serde_json::to_string_pretty(&doc).expect("serializes") + "\n").map_err(io_err(&p))?;

    let table = eval.to_table(a.max_swaps);
    let p = a.out_dir.join("eval.txt");
    fs::write(&p, &table).map_err(io_err(&p))?;
    say_raw!("{table}");
    print_outcomes(reports.iter().map(|(_, r)| (r.outcome, pvminer::parse::classify_failure(r))));
    Ok(())
}

fn print_outcomes(items: impl Iterator<Item = (Outcome, Option<pvminer::parse::FailureClass>)>) {
    let mut outcomes: BTreeMap<String, usize> = BTreeMap::new();
    let mut classes: BTreeMap<String, usize> = BTreeMap::new();
    for (o, c) in items {
        *outcomes.entry(format!("{o:?}")).or_default() += 1;
        if let Some(c) = c {
            *classes.entry(format!("{c:?}")).or_default() += 1;
        }
    }
    let fmt = |m: &BTreeMap<String, usize>| m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(" ");
    say!("\nparse outcomes: {}", fmt(&outcomes));
    if !classes.is_empty() {
        say!("failure classes: {}", fmt(&classes));
    }
}

fn prepare_sft(cb: &Codebook, a: &PrepareSftArgs) -> Result<()> {
    require_file(&a.corpus)?;
    let records = read_corpus(&a.corpus, cb, a.strict).map_err(corpus_err)?;
    let template = template_of(a.template);
    let instruction = render_instruction(&template, cb, &[]);
    let pairs = build_pairs(&records, cb, &instruction, PairOptions { stop_suffix: a.stop_suffix })
        .map_err(|e| CliError::Validation(e.to_string()))?;
    create_parent(&a.out)?;
    let config = format!("prepare-sft template={:?} stop_suffix={}", a.template, a.stop_suffix);
    let meta = Meta::new("sft-manifest", MANIFEST_FORMAT_VERSION, None, &config);
    export_manifest(&pairs, &a.out, Some(&meta)).map_err(|e| CliError::Io(e.to_string()))?;
    say!("{} pairs -> {}", pairs.len(), a.out.display());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    require_file(&a.eval)?;
    let text = fs::read_to_string(&a.eval).map_err(io_err(&a.eval))?;
    let doc: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", a.eval.display())))?;
    let eval: EvalReport = serde_json::from_value(doc.get("report").cloned().unwrap_or(doc))
        .map_err(|e| CliError::Validation(format!("{}: {e}", a.eval.display())))?;
    say_raw!("{}", eval.to_table(a.max_swaps));
    if let Some(p) = &a.parse_reports {
        require_file(p)?;
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let lines: Vec<ReportLine> = text
            .lines()
            .filter(|l| !l.trim().is_empty() && !pvminer::meta::is_meta_line(l))
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
        print_outcomes(lines.iter().map(|l| (l.outcome, l.failure_class)));
    }
    Ok(())
}
