//! Character n-gram language identification used to audit how much text of
//! the other language leaked into a nominally monolingual shard.

use std::collections::{HashMap, HashSet};

use rayon::prelude::*;
use serde::Serialize;

use super::{CorpusError, CorpusShard, LangTag};

/// Add-constant-smoothed character n-gram log-probability tables for the two
/// configured languages. Both tables share one support (the union of n-grams
/// observed in either language) plus an unknown bucket, so log-odds are
/// well-defined for any input.
#[derive(Debug, Clone)]
pub struct LangIdModel {
    pub order: usize,
    pub smoothing: f64,
    l1: LangProfile,
    l2: LangProfile,
}

#[derive(Debug, Clone)]
struct LangProfile {
    log_probs: HashMap<String, f64>,
    log_unknown: f64,
}

impl LangProfile {
    fn score(&self, line: &str, order: usize) -> f64 {
        let chars: Vec<char> = line.chars().collect();
        if chars.len() < order {
            return 0.0;
        }
        let mut total = 0.0;
        let mut gram = String::with_capacity(order * 4);
        for window in chars.windows(order) {
            gram.clear();
            gram.extend(window.iter());
            total += self.log_probs.get(&gram).copied().unwrap_or(self.log_unknown);
        }
        total
    }

    /// log-sum-exp over the table plus the unknown bucket; 0 for a proper
    /// distribution.
    fn log_total_mass(&self) -> f64 {
        let max = self
            .log_probs
            .values()
            .copied()
            .chain(std::iter::once(self.log_unknown))
            .fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = self
            .log_probs
            .values()
            .map(|&lp| (lp - max).exp())
            .sum::<f64>()
            + (self.log_unknown - max).exp();
        max + sum.ln()
    }
}

fn count_ngrams(shard: &CorpusShard, order: usize) -> HashMap<String, u64> {
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in &shard.documents {
        let chars: Vec<char> = doc.chars().collect();
        for window in chars.windows(order) {
            *counts.entry(window.iter().collect()).or_insert(0) += 1;
        }
    }
    counts
}

fn profile_from_counts(
    counts: &HashMap<String, u64>,
    support: &HashSet<String>,
    smoothing: f64,
) -> LangProfile {
    let total: u64 = support.iter().map(|g| counts.get(g).copied().unwrap_or(0)).sum();
    // smoothed over the shared support plus one unknown bucket
    let denom = total as f64 + smoothing * (support.len() as f64 + 1.0);
    let log_probs = support
        .iter()
        .map(|g| {
            let c = counts.get(g).copied().unwrap_or(0) as f64;
            (g.clone(), ((c + smoothing) / denom).ln())
        })
        .collect();
    LangProfile { log_probs, log_unknown: (smoothing / denom).ln() }
}

/// Train the scanner on one clean shard per language.
pub fn train_language_id(
    l1_shard: &CorpusShard,
    l2_shard: &CorpusShard,
    order: usize,
    smoothing: f64,
) -> Result<LangIdModel, CorpusError> {
    if order < 1 {
        return Err(CorpusError::BadOrder);
    }
    for (shard, name) in [(l1_shard, "L1"), (l2_shard, "L2")] {
        if shard.documents.is_empty() {
            return Err(CorpusError::MissingLanguage(name.into()));
        }
    }
    let c1 = count_ngrams(l1_shard, order);
    let c2 = count_ngrams(l2_shard, order);
    let support: HashSet<String> = c1.keys().chain(c2.keys()).cloned().collect();
    Ok(LangIdModel {
        order,
        smoothing,
        l1: profile_from_counts(&c1, &support, smoothing),
        l2: profile_from_counts(&c2, &support, smoothing),
    })
}

impl LangIdModel {
    /// Log-odds that `line` belongs to the *other* language than `own`.
    /// Positive values favor the other language.
    pub fn log_odds_other(&self, line: &str, own: LangTag) -> f64 {
        let l1 = self.l1.score(line, self.order);
        let l2 = self.l2.score(line, self.order);
        match own {
            LangTag::L1 => l2 - l1,
            LangTag::L2 => l1 - l2,
        }
    }

    /// Classify a line as the language with the higher score.
    pub fn classify(&self, line: &str) -> LangTag {
        if self.l1.score(line, self.order) >= self.l2.score(line, self.order) {
            LangTag::L1
        } else {
            LangTag::L2
        }
    }

    /// Per-language log-sum-exp of the probability tables (0 when proper).
    pub fn normalization_residuals(&self) -> (f64, f64) {
        (self.l1.log_total_mass(), self.l2.log_total_mass())
    }
}

/// Outcome of scanning one shard for other-language lines.
#[derive(Debug, Clone, Serialize)]
pub struct ContaminationReport {
    pub scanned_lines: usize,
    pub flagged_lines: usize,
    pub flagged_fraction: f64,
    /// (line index, log-odds toward the other language) for every line.
    pub per_line_scores: Option<Vec<(usize, f64)>>,
}

/// Flag every line whose log-odds toward the other language exceeds
/// `threshold`. Lines are scored independently, so the scan parallelizes
/// without affecting the result.
pub fn scan_contamination(
    shard: &CorpusShard,
    model: &LangIdModel,
    threshold: f64,
) -> ContaminationReport {
    let scores: Vec<(usize, f64)> = shard
        .documents
        .par_iter()
        .enumerate()
        .map(|(i, line)| (i, model.log_odds_other(line, shard.language)))
        .collect();
    let flagged = scores.iter().filter(|(_, s)| *s > threshold).count();
    let scanned = shard.documents.len();
    ContaminationReport {
        scanned_lines: scanned,
        flagged_lines: flagged,
        flagged_fraction: if scanned == 0 { 0.0 } else { flagged as f64 / scanned as f64 },
        per_line_scores: Some(scores),
    }
}
