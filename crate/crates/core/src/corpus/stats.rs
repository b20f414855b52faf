use serde::{Deserialize, Serialize};

use super::GoldRecord;
use crate::codebook::Direction;

/// Corpus size summary. Word counts split on Unicode whitespace; `sd_words`
/// is the population standard deviation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub messages: usize,
    /// `to_pat_yn = N`.
    pub patient_authored: usize,
    /// `to_pat_yn = Y`.
    pub provider_authored: usize,
    pub tokens: usize,
    pub annotations: usize,
    pub mean_words: f64,
    pub sd_words: f64,
    pub max_words: usize,
}

pub fn corpus_stats(records: &[GoldRecord]) -> CorpusStats {
    if records.is_empty() {
        return CorpusStats::default();
    }
    let lengths: Vec<usize> = records
        .iter()
        .map(|r| r.message.text.split_whitespace().count())
        .collect();
    let n = lengths.len() as f64;
    let tokens: usize = lengths.iter().sum();
    let mean = tokens as f64 / n;
    let var = lengths.iter().map(|&l| (l as f64 - mean).powi(2)).sum::<f64>() / n;
    let provider = records.iter().filter(|r| r.message.direction == Direction::Y).count();
    CorpusStats {
        messages: records.len(),
        patient_authored: records.len() - provider,
        provider_authored: provider,
        tokens,
        annotations: records.iter().map(|r| r.annotations.len()).sum(),
        mean_words: mean,
        sd_words: var.sqrt(),
        max_words: lengths.iter().copied().max().unwrap_or(0),
    }
}
