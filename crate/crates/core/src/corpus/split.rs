//! Multi-label iterative stratification over (Code, Sub-code) pair labels.
//!
//! Labels are processed rarest first. Each record carrying the current label
//! goes to the fold that still wants that label most; ties fall to the fold
//! with the most remaining capacity, then to a seeded coin flip.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::GoldRecord;

const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SplitError {
    #[error("bad fold ratios: {0}")]
    BadRatios(String),
    #[error("cannot split an empty corpus")]
    EmptyCorpus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub name: String,
    pub ratio: f64,
    /// Record ids in corpus order.
    pub ids: Vec<String>,
}

/// Disjoint, exhaustive partition of record ids into named folds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub folds: Vec<Fold>,
}

impl SplitAssignment {
    pub fn fold(&self, name: &str) -> Option<&Fold> {
        self.folds.iter().find(|f| f.name == name)
    }

    /// Fold name for each id.
    pub fn fold_of(&self) -> BTreeMap<&str, &str> {
        self.folds
            .iter()
            .flat_map(|f| f.ids.iter().map(move |id| (id.as_str(), f.name.as_str())))
            .collect()
    }
}

pub fn stratified_split(
    records: &[GoldRecord],
    ratios: &[(String, f64)],
    seed: u64,
) -> Result<SplitAssignment, SplitError> {
    validate_ratios(ratios)?;
    if records.is_empty() {
        return Err(SplitError::EmptyCorpus);
    }
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Label ids are assigned in sorted order so the run never depends on hash order.
    let labels: Vec<Vec<usize>> = {
        let all: BTreeSet<_> = records.iter().flat_map(|r| r.label_pairs()).collect();
        let index: BTreeMap<_, _> = all.into_iter().enumerate().map(|(i, l)| (l, i)).collect();
        records
            .iter()
            .map(|r| r.label_pairs().iter().map(|l| index[l]).collect())
            .collect()
    };
    let n_labels = labels.iter().flatten().max().map_or(0, |m| m + 1);

    let mut label_count = vec![0usize; n_labels];
    for ls in &labels {
        for &l in ls {
            label_count[l] += 1;
        }
    }
    let mut capacity: Vec<f64> = ratios.iter().map(|(_, r)| r * n as f64).collect();
    let mut desire: Vec<Vec<f64>> = label_count
        .iter()
        .map(|&c| ratios.iter().map(|(_, r)| r * c as f64).collect())
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);

    let mut assigned: Vec<Option<usize>> = vec![None; n];
    let mut remaining = label_count.clone();

    loop {
        let Some(label) = (0..n_labels)
            .filter(|&l| remaining[l] > 0)
            .min_by_key(|&l| (remaining[l], l))
        else {
            break;
        };
        for &i in &order {
            if assigned[i].is_some() || !labels[i].contains(&label) {
                continue;
            }
            let fold = pick_fold(&desire[label], &capacity, &mut rng);
            assigned[i] = Some(fold);
            capacity[fold] -= 1.0;
            for &l in &labels[i] {
                desire[l][fold] -= 1.0;
                remaining[l] -= 1;
            }
        }
    }

    for &i in &order {
        if assigned[i].is_none() {
            let fold = pick_fold(&capacity.clone(), &capacity, &mut rng);
            assigned[i] = Some(fold);
            capacity[fold] -= 1.0;
        }
    }

    let mut folds: Vec<Fold> = ratios
        .iter()
        .map(|(name, r)| Fold { name: name.clone(), ratio: *r, ids: Vec::new() })
        .collect();
    for (i, r) in records.iter().enumerate() {
        folds[assigned[i].expect("every record assigned")].ids.push(r.id().to_owned());
    }
    debug_assert_eq!(folds.iter().map(|f| f.ids.len()).sum::<usize>(), n);
    Ok(SplitAssignment { folds })
}

/// Index of the fold with the largest `primary`, then largest `secondary`, then random.
fn pick_fold(primary: &[f64], secondary: &[f64], rng: &mut impl Rng) -> usize {
    let best = primary.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = (0..primary.len())
        .filter(|&j| (primary[j] - best).abs() < EPS)
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    let best2 = tied.iter().map(|&j| secondary[j]).fold(f64::NEG_INFINITY, f64::max);
    let tied2: Vec<usize> = tied
        .into_iter()
        .filter(|&j| (secondary[j] - best2).abs() < EPS)
        .collect();
    if tied2.len() == 1 {
        tied2[0]
    } else {
        tied2[rng.gen_range(0..tied2.len())]
    }
}

fn validate_ratios(ratios: &[(String, f64)]) -> Result<(), SplitError> {
    if ratios.is_empty() {
        return Err(SplitError::BadRatios("no folds given".into()));
    }
    let mut names = BTreeSet::new();
    for (name, r) in ratios {
        if !names.insert(name.as_str()) {
            return Err(SplitError::BadRatios(format!("fold `{name}` given twice")));
        }
        if !r.is_finite() || *r < 0.0 {
            return Err(SplitError::BadRatios(format!("fold `{name}` has ratio {r}")));
        }
    }
    let total: f64 = ratios.iter().map(|(_, r)| r).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SplitError::BadRatios(format!("ratios sum to {total}, expected 1")));
    }
    Ok(())
}
