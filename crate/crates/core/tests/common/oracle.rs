//! Naive re-implementations of the scoring rules, written without reference
//! to the library code: plain vectors, nested loops, no sets.

#![allow(dead_code)]

use pvminer::corpus::Annotation;

pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn scores(&self) -> (f64, f64, f64) {
        let p = if self.tp + self.fp == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fp) as f64 };
        let r = if self.tp + self.fn_ == 0 { 0.0 } else { self.tp as f64 / (self.tp + self.fn_) as f64 };
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        (p, r, f)
    }
}

fn push_unique(v: &mut Vec<String>, s: String) {
    if !v.iter().any(|x| *x == s) {
        v.push(s);
    }
}

pub fn labels(anns: &[Annotation], subcode: bool) -> Vec<String> {
    let mut v = Vec::new();
    for a in anns {
        let l = if subcode { a.subcode.to_string() } else { a.code.to_string() };
        if subcode && l == "None" {
            continue;
        }
        push_unique(&mut v, l);
    }
    v
}

/// Sum of |pred ∩ gold| over Σ|pred| and Σ|gold|.
pub fn label_counts(instances: &[(Vec<Annotation>, Vec<Annotation>)], subcode: bool) -> Counts {
    let (mut inter, mut npred, mut ngold) = (0, 0, 0);
    for (g, p) in instances {
        let g = labels(g, subcode);
        let p = labels(p, subcode);
        npred += p.len();
        ngold += g.len();
        for x in &p {
            if g.contains(x) {
                inter += 1;
            }
        }
    }
    Counts { tp: inter, fp: npred - inter, fn_: ngold - inter }
}

fn is_edge_punct(c: char) -> bool {
    "!\"#$%&'()*+,-./:;<=>?@[\\]^_`{|}~".contains(c)
        || matches!(c as u32, 0x2018..=0x201F | 0x2026 | 0x2013 | 0x2014 | 0xAB | 0xBB | 0xBF | 0xA1)
}

pub fn tokens(s: &str) -> Vec<String> {
    let lower = s.to_lowercase();
    let mut raw: Vec<String> = Vec::new();
    let mut cur = String::new();
    for c in lower.chars() {
        if c.is_whitespace() {
            if !cur.is_empty() {
                raw.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(c);
        }
    }
    if !cur.is_empty() {
        raw.push(cur);
    }
    let mut out = Vec::new();
    for t in &raw {
        let chars: Vec<char> = t.chars().collect();
        let mut a = 0;
        let mut b = chars.len();
        while a < b && is_edge_punct(chars[a]) {
            a += 1;
        }
        while b > a && is_edge_punct(chars[b - 1]) {
            b -= 1;
        }
        if a < b {
            push_unique(&mut out, chars[a..b].iter().collect());
        }
    }
    if out.is_empty() {
        for t in raw {
            push_unique(&mut out, t);
        }
    }
    out
}

pub fn jaccard(a: &str, b: &str) -> f64 {
    let ta = tokens(a);
    let tb = tokens(b);
    let mut inter = 0;
    for x in &ta {
        if tb.contains(x) {
            inter += 1;
        }
    }
    let union = ta.len() + tb.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

/// Many-to-one relaxed span matching over deduplicated span texts.
pub fn span_counts(instances: &[(Vec<Annotation>, Vec<Annotation>)], threshold: f64) -> Counts {
    let mut c = Counts { tp: 0, fp: 0, fn_: 0 };
    for (g, p) in instances {
        let mut gs = Vec::new();
        for a in g {
            push_unique(&mut gs, a.span.text.clone());
        }
        let mut ps = Vec::new();
        for a in p {
            push_unique(&mut ps, a.span.text.clone());
        }
        for x in &ps {
            if gs.iter().any(|r| jaccard(x, r) >= threshold) {
                c.tp += 1;
            } else {
                c.fp += 1;
            }
        }
        for r in &gs {
            if !ps.iter().any(|x| jaccard(x, r) >= threshold) {
                c.fn_ += 1;
            }
        }
    }
    c
}
