//! Micro-averaged precision, recall and F1 for Codes, Sub-codes and evidence
//! spans, plus per-class tables and label swap counts.
//!
//! Label metrics compare per-message label *sets*. Span metrics use relaxed
//! matching: a predicted span is a hit when its token-set Jaccard overlap with
//! some reference span reaches the threshold.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Codebook, NONE_SUBCODE};
use crate::corpus::{Annotation, GoldRecord};
use crate::parse::ParseReport;

pub const DEFAULT_JACCARD_THRESHOLD: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Level {
    Code,
    Subcode,
}

/// Counters plus derived scores. 0/0 ratios are reported as 0 with
/// `degenerate` set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl Prf {
    pub fn from_counts(tp: usize, fp: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let p = ratio(tp, tp + fp);
        let r = ratio(tp, tp + fn_);
        let precision = p.unwrap_or(0.0);
        let recall = r.unwrap_or(0.0);
        let f1 = if precision + recall > 0.0 { 2.0 * precision * recall / (precision + recall) } else { 0.0 };
        Prf { tp, fp, fn_, precision, recall, f1, degenerate: p.is_none() || r.is_none() }
    }

    fn add(&mut self, tp: usize, fp: usize, fn_: usize) {
        *self = Prf::from_counts(self.tp + tp, self.fp + fp, self.fn_ + fn_);
    }
}

impl Default for Prf {
    fn default() -> Self {
        Prf::from_counts(0, 0, 0)
    }
}

/// Tokenization used by span matching.
pub trait Tokenize {
    fn tokens(&self, text: &str) -> BTreeSet<String>;
}

/// Case-folded, whitespace-split tokens with edge punctuation stripped.
///
/// A span made only of punctuation keeps its raw folded tokens so that it
/// can still match itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct SpanTokenizer;

impl Tokenize for SpanTokenizer {
    fn tokens(&self, text: &str) -> BTreeSet<String> {
        let folded = text.to_lowercase();
        let stripped: BTreeSet<String> = folded
            .split_whitespace()
            .map(|t| t.trim_matches(|c: char| c.is_ascii_punctuation() || is_unicode_punct(c)))
            .filter(|t| !t.is_empty())
            .map(str::to_owned)
            .collect();
        if stripped.is_empty() {
            folded.split_whitespace().map(str::to_owned).collect()
        } else {
            stripped
        }
    }
}

fn is_unicode_punct(c: char) -> bool {
    matches!(
        c,
        '\u{2018}'..='\u{201F}' | '\u{2026}' | '\u{2013}' | '\u{2014}' | '\u{00AB}' | '\u{00BB}' | '\u{00BF}' | '\u{00A1}'
    )
}

/// Whitespace split only; no folding, no stripping.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExactTokenizer;

impl Tokenize for ExactTokenizer {
    fn tokens(&self, text: &str) -> BTreeSet<String> {
        text.split_whitespace().map(str::to_owned).collect()
    }
}

/// |a ∩ b| / |a ∪ b|; 0 when both are empty.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matching {
    /// Several predictions may align to the same reference.
    #[default]
    ManyToOne,
    /// Maximum-cardinality bipartite matching.
    OneToOne,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SpanMatch {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    /// (prediction index, reference index, Jaccard) for every aligned prediction.
    pub pairs: Vec<(usize, usize, f64)>,
}

pub fn span_match<T: Tokenize + ?Sized>(
    pred: &[&str],
    refs: &[&str],
    tok: &T,
    threshold: f64,
    matching: Matching,
) -> SpanMatch {
    assert!(threshold > 0.0 && threshold <= 1.0, "threshold must lie in (0, 1]");
    let pt: Vec<_> = pred.iter().map(|s| tok.tokens(s)).collect();
    let rt: Vec<_> = refs.iter().map(|s| tok.tokens(s)).collect();
    // Candidate edges per prediction, best first.
    let edges: Vec<Vec<(usize, f64)>> = pt
        .iter()
        .map(|p| {
            let mut e: Vec<(usize, f64)> = rt
                .iter()
                .enumerate()
                .map(|(j, r)| (j, jaccard(p, r)))
                .filter(|&(_, s)| s >= threshold)
                .collect();
            e.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            e
        })
        .collect();

    let pairs: Vec<(usize, usize, f64)> = match matching {
        Matching::ManyToOne => edges
            .iter()
            .enumerate()
            .filter_map(|(i, e)| e.first().map(|&(j, s)| (i, j, s)))
            .collect(),
        Matching::OneToOne => {
            let owner = bipartite_matching(&edges, rt.len());
            let mut pairs: Vec<_> = owner
                .iter()
                .enumerate()
                .filter_map(|(j, o)| o.map(|i| (i, j, edges[i].iter().find(|e| e.0 == j).unwrap().1)))
                .collect();
            pairs.sort_by_key(|p| p.0);
            pairs
        }
    };
    let covered: BTreeSet<usize> = pairs.iter().map(|p| p.1).collect();
    SpanMatch { tp: pairs.len(), fp: pred.len() - pairs.len(), fn_: refs.len() - covered.len(), pairs }
}

/// Kuhn's augmenting-path matching; returns the owning prediction of each reference.
fn bipartite_matching(edges: &[Vec<(usize, f64)>], n_refs: usize) -> Vec<Option<usize>> {
    fn augment(i: usize, edges: &[Vec<(usize, f64)>], seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for &(j, _) in &edges[i] {
            if seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].map_or(true, |o| augment(o, edges, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; n_refs];
    for i in 0..edges.len() {
        let mut seen = vec![false; n_refs];
        augment(i, edges, &mut seen, &mut owner);
    }
    owner
}

/// Gold and predicted annotations for one message.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalInstance {
    pub id: String,
    pub gold: Vec<Annotation>,
    pub pred: Vec<Annotation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub threshold: f64,
    pub matching: Matching,
    /// Spans only match when their (Code, Sub-code) labels agree too.
    pub labeled_spans: bool,
    /// Score the "None" sentinel as a Sub-code class.
    pub include_none_subcode: bool,
    /// Error on gold records without a prediction instead of scoring them as empty.
    pub strict_alignment: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: DEFAULT_JACCARD_THRESHOLD,
            matching: Matching::ManyToOne,
            labeled_spans: false,
            include_none_subcode: false,
            strict_alignment: false,
        }
    }
}

fn label_set(anns: &[Annotation], level: Level, include_none: bool) -> BTreeSet<&str> {
    anns.iter()
        .filter_map(|a| match level {
            Level::Code => Some(a.code.as_str()),
            Level::Subcode if !include_none && a.subcode.as_str() == NONE_SUBCODE => None,
            Level::Subcode => Some(a.subcode.as_str()),
        })
        .collect()
}

pub fn label_prf(instances: &[EvalInstance], level: Level, options: &EvalOptions) -> Prf {
    let mut prf = Prf::default();
    for inst in instances {
        let g = label_set(&inst.gold, level, options.include_none_subcode);
        let p = label_set(&inst.pred, level, options.include_none_subcode);
        let tp = g.intersection(&p).count();
        prf.add(tp, p.len() - tp, g.len() - tp);
    }
    prf
}

pub fn per_class_prf(instances: &[EvalInstance], level: Level, options: &EvalOptions) -> BTreeMap<String, Prf> {
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for inst in instances {
        let g = label_set(&inst.gold, level, options.include_none_subcode);
        let p = label_set(&inst.pred, level, options.include_none_subcode);
        for l in g.union(&p) {
            let c = counts.entry((*l).to_owned()).or_default();
            match (g.contains(l), p.contains(l)) {
                (true, true) => c.0 += 1,
                (false, true) => c.1 += 1,
                _ => c.2 += 1,
            }
        }
    }
    counts.into_iter().map(|(k, (tp, fp, fn_))| (k, Prf::from_counts(tp, fp, fn_))).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwapCount {
    pub gold: String,
    pub pred: String,
    pub count: usize,
}

/// One count per (g, p) with g in gold∖pred and p in pred∖gold, per instance.
pub fn swap_counts(instances: &[EvalInstance], level: Level, options: &EvalOptions) -> BTreeMap<(String, String), usize> {
    let mut out = BTreeMap::new();
    for inst in instances {
        let g = label_set(&inst.gold, level, options.include_none_subcode);
        let p = label_set(&inst.pred, level, options.include_none_subcode);
        for gl in g.difference(&p) {
            for pl in p.difference(&g) {
                *out.entry(((*gl).to_owned(), (*pl).to_owned())).or_insert(0) += 1;
            }
        }
    }
    out
}

/// Span-level counts over all instances. Span sets are deduplicated per
/// instance, by text or by (Code, Sub-code, text) in labeled mode.
pub fn span_prf<T: Tokenize + ?Sized>(instances: &[EvalInstance], tok: &T, options: &EvalOptions) -> Prf {
    let mut prf = Prf::default();
    for inst in instances {
        if options.labeled_spans {
            let g = spans_by_label(&inst.gold);
            let p = spans_by_label(&inst.pred);
            let empty = BTreeSet::new();
            let keys: BTreeSet<_> = g.keys().chain(p.keys()).collect();
            for k in keys {
                let gs: Vec<&str> = g.get(k).unwrap_or(&empty).iter().copied().collect();
                let ps: Vec<&str> = p.get(k).unwrap_or(&empty).iter().copied().collect();
                let m = span_match(&ps, &gs, tok, options.threshold, options.matching);
                prf.add(m.tp, m.fp, m.fn_);
            }
        } else {
            let gs: Vec<&str> = inst.gold.iter().map(|a| a.span.text.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
            let ps: Vec<&str> = inst.pred.iter().map(|a| a.span.text.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
            let m = span_match(&ps, &gs, tok, options.threshold, options.matching);
            prf.add(m.tp, m.fp, m.fn_);
        }
    }
    prf
}

fn spans_by_label(anns: &[Annotation]) -> BTreeMap<(&str, &str), BTreeSet<&str>> {
    let mut m: BTreeMap<(&str, &str), BTreeSet<&str>> = BTreeMap::new();
    for a in anns {
        m.entry((a.code.as_str(), a.subcode.as_str())).or_default().insert(a.span.text.as_str());
    }
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub code: Prf,
    pub subcode: Prf,
    pub span: Prf,
    pub per_class_code: BTreeMap<String, Prf>,
    pub per_class_subcode: BTreeMap<String, Prf>,
    pub swaps_code: Vec<SwapCount>,
    pub swaps_subcode: Vec<SwapCount>,
    /// Gold records scored with an empty prediction because none was supplied.
    pub missing_predictions: Vec<String>,
    pub options: EvalOptions,
}

fn swaps_vec(m: BTreeMap<(String, String), usize>) -> Vec<SwapCount> {
    let mut v: Vec<SwapCount> = m.into_iter().map(|((gold, pred), count)| SwapCount { gold, pred, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| (&a.gold, &a.pred).cmp(&(&b.gold, &b.pred))));
    v
}

pub fn evaluate_instances(instances: &[EvalInstance], options: &EvalOptions) -> EvalReport {
    EvalReport {
        instances: instances.len(),
        code: label_prf(instances, Level::Code, options),
        subcode: label_prf(instances, Level::Subcode, options),
        span: span_prf(instances, &SpanTokenizer, options),
        per_class_code: per_class_prf(instances, Level::Code, options),
        per_class_subcode: per_class_prf(instances, Level::Subcode, options),
        swaps_code: swaps_vec(swap_counts(instances, Level::Code, options)),
        swaps_subcode: swaps_vec(swap_counts(instances, Level::Subcode, options)),
        missing_predictions: Vec::new(),
        options: *options,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no prediction for record `{0}`")]
    MissingPrediction(String),
    #[error("prediction for unknown record `{0}`")]
    UnknownRecord(String),
}

/// Scores parse reports against gold records, matched by id. Failed parses
/// carry no annotations and so count as empty predictions. Sub-code aliases
/// on either side are canonicalized through `cb`.
pub fn evaluate(
    gold: &[GoldRecord],
    reports: &[(String, ParseReport)],
    cb: &Codebook,
    options: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    let by_id: HashMap<&str, &ParseReport> = reports.iter().map(|(id, r)| (id.as_str(), r)).collect();
    if options.strict_alignment {
        let gold_ids: BTreeSet<&str> = gold.iter().map(|g| g.id()).collect();
        if let Some((id, _)) = reports.iter().find(|(id, _)| !gold_ids.contains(id.as_str())) {
            return Err(EvalError::UnknownRecord(id.clone()));
        }
    }
    let canon = |anns: &[Annotation]| -> Vec<Annotation> {
        anns.iter()
            .map(|a| {
                let sub = cb.canonical_subcode(a.subcode.as_str()).to_owned();
                Annotation { subcode: sub.into(), ..a.clone() }
            })
            .collect()
    };
    let mut missing = Vec::new();
    let mut instances = Vec::with_capacity(gold.len());
    for g in gold {
        let pred = match by_id.get(g.id()) {
            Some(r) => canon(&r.annotations),
            None if options.strict_alignment => return Err(EvalError::MissingPrediction(g.id().to_owned())),
            None => {
                missing.push(g.id().to_owned());
                Vec::new()
            }
        };
        instances.push(EvalInstance { id: g.id().to_owned(), gold: canon(&g.annotations), pred });
    }
    let mut report = evaluate_instances(&instances, options);
    report.missing_predictions = missing;
    Ok(report)
}

/// Percentage with two decimals.
pub fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plain-text tables: overall scores, per-class scores at both levels,
    /// and the most frequent swaps.
    pub fn to_table(&self, max_swaps: usize) -> String {
        let mut out = String::new();
        let row = |out: &mut String, name: &str, p: &Prf| {
            let _ = writeln!(
                out,
                "{name:<40} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}",
                pct(p.precision),
                pct(p.recall),
                pct(p.f1),
                p.tp,
                p.fp,
                p.fn_
            );
        };
        let header = |out: &mut String, title: &str| {
            let _ = writeln!(out, "{title:<40} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}", "P", "R", "F1", "TP", "FP", "FN");
        };
        header(&mut out, "Level");
        row(&mut out, "Code", &self.code);
        row(&mut out, "Sub-code", &self.subcode);
        row(&mut out, "Span", &self.span);
        for (title, table) in [("Code", &self.per_class_code), ("Sub-code", &self.per_class_subcode)] {
            out.push('\n');
            header(&mut out, title);
            for (name, p) in table {
                row(&mut out, name, p);
            }
        }
        for (title, swaps) in [("Code swaps", &self.swaps_code), ("Sub-code swaps", &self.swaps_subcode)] {
            if swaps.is_empty() {
                continue;
            }
            let _ = writeln!(out, "\n{title} (gold -> predicted)");
            for s in swaps.iter().take(max_swaps) {
                let _ = writeln!(out, "{:>6}  {} -> {}", s.count, s.gold, s.pred);
            }
        }
        if !self.missing_predictions.is_empty() {
            let _ = writeln!(out, "\n{} record(s) had no prediction and were scored as empty", self.missing_predictions.len());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn a(code: &str, sub: &str, text: &str) -> Annotation {
        Annotation::new(code, sub, Span { start: 0, end: text.chars().count(), text: text.into() })
    }

    fn inst(gold: Vec<Annotation>, pred: Vec<Annotation>) -> EvalInstance {
        EvalInstance { id: "i".into(), gold, pred }
    }

    fn codes(cs: &[&str]) -> Vec<Annotation> {
        cs.iter().map(|c| a(c, "x", "t")).collect()
    }

    #[test]
    fn half_overlap() {
        let o = EvalOptions::default();
        let p = label_prf(&[inst(codes(&["A", "B"]), codes(&["B", "C"]))], Level::Code, &o);
        assert_eq!((p.precision, p.recall, p.f1), (0.5, 0.5, 0.5));
        assert!(!p.degenerate);
    }

    #[test]
    fn empty_prediction_is_degenerate() {
        let p = label_prf(&[inst(codes(&["A"]), vec![])], Level::Code, &EvalOptions::default());
        assert_eq!((p.precision, p.recall, p.f1), (0.0, 0.0, 0.0));
        assert!(p.degenerate);
    }

    #[test]
    fn jaccard_example() {
        let t = SpanTokenizer;
        let j = jaccard(&t.tokens("need my prescription sent to"), &t.tokens("I need my prescription sent"));
        assert!((j - 4.0 / 6.0).abs() < 1e-12);
        let pred = ["need my prescription sent to"];
        let refs = ["I need my prescription sent"];
        let m = span_match(&pred, &refs, &t, 0.6, Matching::ManyToOne);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 0, 0));
        let m = span_match(&pred, &refs, &t, 0.7, Matching::ManyToOne);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
        let m = span_match(&["pharmacy"], &refs, &t, 0.6, Matching::ManyToOne);
        assert_eq!((m.tp, m.fp, m.fn_), (0, 1, 1));
    }

    #[test]
    fn tokenizer_policy() {
        let t = SpanTokenizer;
        assert!(t.tokens("").is_empty());
        assert_eq!(t.tokens("Thank you, SO much!"), ["much", "so", "thank", "you"].iter().map(|s| s.to_string()).collect());
        assert_eq!(t.tokens("!!!").len(), 1);
    }

    #[test]
    fn many_to_one_vs_one_to_one() {
        let t = SpanTokenizer;
        let pred = ["thank you so much", "thank you so much!"];
        let refs = ["thank you so much"];
        let m = span_match(&pred, &refs, &t, 0.6, Matching::ManyToOne);
        assert_eq!((m.tp, m.fp, m.fn_), (2, 0, 0));
        let m = span_match(&pred, &refs, &t, 0.6, Matching::OneToOne);
        assert_eq!((m.tp, m.fp, m.fn_), (1, 1, 0));
    }

    #[test]
    fn one_to_one_finds_augmenting_path() {
        let t = ExactTokenizer;
        // p0 fits r0 and r1, p1 only r0: maximum matching is 2.
        let pred = ["a b", "a"];
        let refs = ["a", "a b"];
        let m = span_match(&pred, &refs, &t, 0.5, Matching::OneToOne);
        assert_eq!(m.tp, 2);
    }

    #[test]
    fn per_class_and_swaps() {
        let o = EvalOptions::default();
        let i = [inst(codes(&["A"]), codes(&["B"]))];
        let pc = per_class_prf(&i, Level::Code, &o);
        assert_eq!((pc["A"].tp, pc["A"].fn_), (0, 1));
        assert_eq!((pc["B"].tp, pc["B"].fp), (0, 1));
        let s = swap_counts(&[inst(codes(&["A"]), codes(&["B", "C"]))], Level::Code, &o);
        assert_eq!(s.len(), 2);
        assert_eq!(s[&("A".into(), "B".into())], 1);
        assert!(swap_counts(&[inst(codes(&["A", "B"]), codes(&["B", "A"]))], Level::Code, &o).is_empty());
    }

    #[test]
    fn salutation_row() {
        let sal = |n: &str| vec![a("PartnershipPatient", "salutation", n)];
        let mut instances: Vec<EvalInstance> = (0..96).map(|i| inst(sal(&format!("Hi {i}")), sal(&format!("Hi {i}")))).collect();
        instances.push(inst(sal("Hello"), vec![]));
        let pc = per_class_prf(&instances, Level::Subcode, &EvalOptions::default());
        let s = pc["salutation"];
        assert_eq!((pct(s.precision), pct(s.recall), pct(s.f1)), ("100.00".into(), "98.97".into(), "99.48".into()));
    }

    #[test]
    fn none_sentinel_excluded_by_default() {
        let i = [inst(vec![a("SocioEmotionalBehaviour", "None", "t")], vec![])];
        assert_eq!(label_prf(&i, Level::Subcode, &EvalOptions::default()).fn_, 0);
        let o = EvalOptions { include_none_subcode: true, ..Default::default() };
        assert_eq!(label_prf(&i, Level::Subcode, &o).fn_, 1);
    }

    #[test]
    fn labeled_spans_require_label_agreement() {
        let i = [inst(vec![a("A", "x", "hello there")], vec![a("B", "y", "hello there")])];
        let t = SpanTokenizer;
        assert_eq!(span_prf(&i, &t, &EvalOptions::default()).tp, 1);
        let o = EvalOptions { labeled_spans: true, ..Default::default() };
        let p = span_prf(&i, &t, &o);
        assert_eq!((p.tp, p.fp, p.fn_), (0, 1, 1));
    }

    #[test]
    fn evaluate_alignment() {
        let cb = Codebook::default_pvminer();
        let g = GoldRecord {
            message: crate::corpus::Message::new("m1", "t", crate::codebook::Direction::N),
            annotations: vec![a("SDOH", "EconomicStability", "t")],
        };
        let r = evaluate(&[g.clone()], &[], &cb, &EvalOptions::default()).unwrap();
        assert_eq!(r.missing_predictions, vec!["m1"]);
        assert_eq!(r.code.recall, 0.0);
        let strict = EvalOptions { strict_alignment: true, ..Default::default() };
        assert_eq!(evaluate(&[g.clone()], &[], &cb, &strict), Err(EvalError::MissingPrediction("m1".into())));
        let rep = ParseReport { outcome: crate::parse::Outcome::Valid, annotations: g.annotations.clone(), issues: vec![] };
        let r = evaluate(&[g], &[("m1".into(), rep)], &cb, &strict).unwrap();
        assert_eq!((r.code.f1, r.subcode.f1, r.span.f1), (1.0, 1.0, 1.0));
        assert!(r.to_table(5).contains("100.00"));
    }
}
