mod common;

use std::path::Path;
use std::process::{Command, Output};

use pvminer::codebook::{Codebook, Direction};
use pvminer::corpus::{read_corpus, synthesize_corpus, write_corpus_file, Annotation, GoldRecord, Message, Profile, Span};
use pvminer::prompt::TemplateKind;
use pvminer::sftprep::serialize_annotations;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_pvminer"));
    c.env_remove("PVMINER_CODEBOOK").env_remove("PVMINER_ENDPOINT").env_remove("PVMINER_CACHE_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthetic(dir: &Path, n: usize) -> std::path::PathBuf {
    let path = dir.join("corpus.jsonl");
    let o = run(&["synthesize", "-n", &n.to_string(), "--seed", "4", "-o", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    path
}

fn data_lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !pvminer::meta::is_meta_line(l))
        .map(str::to_owned)
        .collect()
}

#[test]
fn validate_clean_corpus() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 30);
    let o = run(&["validate", p(&c)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("fatal: 0"));
}

#[test]
fn validate_ungrounded_span_cites_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    common::write_lines(
        &path,
        &[
            r#"{"id":"a","text":"Hi Dr. Lee","to_pat_yn":"N","annotations":[{"code":"PartnershipPatient","subcode":"salutation","span_text":"Hi Dr. Lee","start":0,"end":10}]}"#.into(),
            r#"{"id":"b","text":"Hi Dr. Lee","to_pat_yn":"N","annotations":[{"code":"PartnershipPatient","subcode":"salutation","span_text":"Hello","start":0,"end":5}]}"#.into(),
        ],
    );
    let o = run(&["validate", p(&path)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("line 2"), "{}", stderr(&o));
}

#[test]
fn validate_direction_mismatch_policy() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dir.jsonl");
    common::write_lines(
        &path,
        &[r#"{"id":"a","text":"Hi Dr. Lee","to_pat_yn":"Y","annotations":[{"code":"PartnershipPatient","subcode":"salutation","span_text":"Hi Dr. Lee","start":0,"end":10}]}"#.into()],
    );
    let o = run(&["validate", p(&path)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("warnings: 1"));
    assert_eq!(code(&run(&["validate", "--strict", p(&path)])), 1);
}

#[test]
fn split_ten_records() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 10);
    let out = dir.path().join("folds");
    let o = run(&["split", p(&c), "--ratios", "train=0.8,test=0.2", "--seed", "1", "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(data_lines(&out.join("train.jsonl")).len(), 8);
    assert_eq!(data_lines(&out.join("test.jsonl")).len(), 2);
    let header = std::fs::read_to_string(out.join("train.jsonl")).unwrap().lines().next().unwrap().to_owned();
    let meta = pvminer::meta::Meta::from_line(&header).unwrap();
    assert_eq!(meta.seed, Some(1));
}

#[test]
fn bad_ratios_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 10);
    let o = run(&["split", p(&c), "--ratios", "train=0.9,test=0.3", "-o", p(dir.path())]);
    assert_eq!(code(&o), 2);
    assert_eq!(code(&run(&["split"])), 2);
    assert_eq!(code(&run(&["validate", p(&dir.path().join("missing.jsonl"))])), 3);
}

#[test]
fn outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = synthetic(a.path(), 60);
    let cbp = synthetic(b.path(), 60);
    assert_eq!(std::fs::read(&ca).unwrap(), std::fs::read(&cbp).unwrap());
    for (d, c) in [(a.path(), &ca), (b.path(), &cbp)] {
        assert_eq!(code(&run(&["split", p(c), "--seed", "7", "-o", p(&d.join("s"))])), 0);
        assert_eq!(code(&run(&["prepare-sft", p(c), "-o", p(&d.join("m.jsonl"))])), 0);
    }
    for f in ["s/train.jsonl", "s/test.jsonl", "m.jsonl"] {
        assert_eq!(std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn prepare_sft_five_records() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 5);
    let m = dir.path().join("manifest.jsonl");
    let o = run(&["prepare-sft", p(&c), "--stop-suffix", "-o", p(&m)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let lines = data_lines(&m);
    assert_eq!(lines.len(), 5);
    let pairs = pvminer::sftprep::read_manifest(&std::fs::read_to_string(&m).unwrap()).unwrap();
    assert!(pairs.iter().all(|p| p.completion.ends_with("JSON_END") && p.boundary == p.query.chars().count()));
}

#[test]
fn prompt_matches_golden() {
    let o = bin()
        .args(["prompt", "--template", "engineered", "--direction", "N", "--message", common::GOLDEN_MESSAGE_N])
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    common::check_golden("engineered_0shot_N.txt", &stdout(&o)).unwrap();
    assert_eq!(o.stdout, common::render_golden(TemplateKind::Engineered, 0, Direction::N).into_bytes());

    let ex = common::fixture("exemplars.jsonl");
    let o = run(&[
        "prompt", "--template", "baseline", "--direction", "Y", "--message", common::GOLDEN_MESSAGE_Y,
        "--exemplars", p(&ex), "--exemplar-ids", "ex-1,ex-2",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    common::check_golden("baseline_2shot_Y.txt", &stdout(&o)).unwrap();
}

#[test]
fn prompt_reads_stdin() {
    use std::io::Write;
    let mut child = bin()
        .args(["prompt", "--template", "engineered", "--direction", "Y"])
        .stdin(std::process::Stdio::piped())
        .stdout(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(common::GOLDEN_MESSAGE_Y.as_bytes()).unwrap();
    let o = child.wait_with_output().unwrap();
    common::check_golden("engineered_0shot_Y.txt", &stdout(&o)).unwrap();
}

fn completions_from(records: &[GoldRecord], path: &Path) {
    let lines: Vec<String> = records
        .iter()
        .map(|r| serde_json::json!({"id": r.id(), "completion": serialize_annotations(&r.annotations)}).to_string())
        .collect();
    common::write_lines(path, &lines);
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 40);
    let records = read_corpus(&c, &Codebook::default_pvminer(), false).unwrap();
    let comp = dir.path().join("pred.jsonl");
    completions_from(&records, &comp);
    let out = dir.path().join("eval");
    let o = run(&["evaluate", p(&c), "--completions", p(&comp), "--strict-alignment", "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = std::fs::read_to_string(out.join("eval.txt")).unwrap();
    for row in table.lines().filter(|l| !l.is_empty() && !l.starts_with("Level") && !l.contains(" P ")) {
        if row.contains("swaps") || row.contains("->") {
            continue;
        }
        let cells: Vec<&str> = row.split_whitespace().collect();
        let n = cells.len();
        assert_eq!(&cells[n - 6..n - 3], &["100.00", "100.00", "100.00"], "{row}");
    }
    assert_eq!(data_lines(&out.join("parse_reports.jsonl")).len(), 40);

    let o = run(&["report", p(&out.join("eval.json")), "--parse-reports", p(&out.join("parse_reports.jsonl"))]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("parse outcomes: Valid=40"));
}

#[test]
fn evaluate_empty_predictions_strict_alignment() {
    let dir = tempfile::tempdir().unwrap();
    let c = synthetic(dir.path(), 6);
    let comp = dir.path().join("empty.jsonl");
    std::fs::write(&comp, "").unwrap();
    let o = run(&["evaluate", p(&c), "--completions", p(&comp), "--strict-alignment", "-o", p(&dir.path().join("e"))]);
    assert_eq!(code(&o), 1);
    assert_eq!(stderr(&o).matches("MissingPrediction(").count(), 6);

    let o = run(&["evaluate", p(&c), "--completions", p(&comp), "-o", p(&dir.path().join("e"))]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("6 record(s) had no prediction"));
}

#[test]
fn evaluate_engineered_counts() {
    // Code level: tp=3, fp=1, fn=2 -> P=75.00 R=60.00 F1=66.67.
    let dir = tempfile::tempdir().unwrap();
    let t1 = "Hi Dr. Lee, I lost my job. Thanks, Ann";
    let t2 = "Hello Ann, the refill went to your pharmacy. Dr. Lee";
    let ann = |t: &str, c: &str, s: &str, span: &str| Annotation::new(c, s, Span::find(t, span).unwrap());
    let gold = vec![
        GoldRecord {
            message: Message::new("g1", t1, Direction::N),
            annotations: vec![
                ann(t1, "PartnershipPatient", "salutation", "Hi Dr. Lee,"),
                ann(t1, "SDOH", "EconomicStability", "I lost my job"),
                ann(t1, "SocioEmotionalBehaviour", "None", "Thanks, Ann"),
            ],
        },
        GoldRecord {
            message: Message::new("g2", t2, Direction::Y),
            annotations: vec![
                ann(t2, "PartnershipProvider", "salutation", "Hello Ann,"),
                ann(t2, "CareCoordinationProvider", "None", "the refill went to your pharmacy"),
            ],
        },
    ];
    let pred = [
        (
            "g1",
            vec![
                ann(t1, "PartnershipPatient", "salutation", "Hi Dr. Lee,"),
                ann(t1, "SDOH", "EconomicStability", "I lost my job"),
            ],
        ),
        (
            "g2",
            vec![
                ann(t2, "PartnershipProvider", "salutation", "Hello Ann,"),
                ann(t2, "SDOH", "HealthCareAccessAndQuality", "your pharmacy"),
            ],
        ),
    ];
    let c = dir.path().join("gold.jsonl");
    write_corpus_file(&c, &gold, None).unwrap();
    let comp = dir.path().join("pred.jsonl");
    let lines: Vec<String> = pred
        .iter()
        .map(|(id, a)| serde_json::json!({"id": id, "completion": serialize_annotations(a)}).to_string())
        .collect();
    common::write_lines(&comp, &lines);
    let out = dir.path().join("e");
    let o = run(&["evaluate", p(&c), "--completions", p(&comp), "-o", p(&out)]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let table = stdout(&o);
    let code_row = table.lines().find(|l| l.starts_with("Code ")).unwrap();
    assert_eq!(code_row.split_whitespace().collect::<Vec<_>>(), ["Code", "75.00", "60.00", "66.67", "3", "1", "2"]);
    // Sub-codes (None excluded): gold {salutation, EconomicStability}, {salutation};
    // pred {salutation, EconomicStability}, {salutation, HealthCareAccessAndQuality}.
    let sub_row = table.lines().find(|l| l.starts_with("Sub-code ")).unwrap();
    assert_eq!(sub_row.split_whitespace().collect::<Vec<_>>(), ["Sub-code", "75.00", "100.00", "85.71", "3", "1", "0"]);
    assert!(table.contains("CareCoordinationProvider -> SDOH"));
}

#[test]
fn run_with_canned_completions_and_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cb = Codebook::default_pvminer();
    let records = synthesize_corpus(&cb, &Profile::long_tail(&cb), 8, 2).unwrap();
    let c = dir.path().join("c.jsonl");
    write_corpus_file(&c, &records, None).unwrap();
    let canned = dir.path().join("canned.jsonl");
    completions_from(&records, &canned);
    let out = dir.path().join("out.jsonl");
    let cache = dir.path().join("cache");
    let args = ["run", p(&c), "--canned", p(&canned), "--cache-dir", p(&cache), "-o", p(&out), "--concurrency", "3"];
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("8 completed (0 from cache)"));
    let first = std::fs::read(&out).unwrap();
    let o = run(&args);
    assert!(stdout(&o).contains("8 completed (8 from cache)"));
    assert_eq!(std::fs::read(&out).unwrap(), first);
    assert_eq!(data_lines(&out).len(), 8);

    assert_eq!(code(&run(&["run", p(&c), "-o", p(&out)])), 2);
}
