//! Statistical contrasts (Bayesian bootstrap, percentile bootstrap intervals)
//! and lexical signatures over reasoning traces.
//!
//! Everything here is deterministic given a seed: each draw's weights come
//! from a substream keyed by (seed, draw index, group label), which also
//! makes the A/B and B/A contrasts exact mirror images.

use std::fs;
use std::path::Path;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seed::{hash_label, stream_rng};

const NS_BAYES_DRAW: u64 = 0x30;
const NS_CI_DRAW: u64 = 0x31;

/// Bayesian bootstrap runs need enough draws for a stable posterior summary.
pub const MIN_DRAWS: u32 = 1000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("empty group: {0}")]
    EmptyGroup(String),
    #[error("need at least {MIN_DRAWS} draws, got {0}")]
    TooFewDraws(u32),
    #[error("confidence level must lie strictly inside (0, 1), got {0}")]
    InvalidLevel(f64),
    #[error("failed to read lexicon: {0}")]
    Io(#[from] std::io::Error),
}

/// Posterior summary of a two-group contrast (A minus B).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContrastResult {
    pub label_a: String,
    pub label_b: String,
    pub median_delta: f64,
    /// Fraction of draws with a strictly positive difference; ties count as
    /// not positive.
    pub p_plus: f64,
    pub draws: u32,
    pub seed: u64,
}

/// Bayesian bootstrap contrast of two groups of per-episode statistics.
///
/// Each draw reweights every group with symmetric unit-concentration
/// Dirichlet weights, takes the weighted means, and records their
/// difference; the result reports the median difference and P(delta > 0).
pub fn bayesian_bootstrap_contrast(
    label_a: &str,
    samples_a: &[f64],
    label_b: &str,
    samples_b: &[f64],
    draws: u32,
    seed: u64,
) -> Result<ContrastResult, AnalysisError> {
    if samples_a.is_empty() {
        return Err(AnalysisError::EmptyGroup(label_a.to_string()));
    }
    if samples_b.is_empty() {
        return Err(AnalysisError::EmptyGroup(label_b.to_string()));
    }
    if draws < MIN_DRAWS {
        return Err(AnalysisError::TooFewDraws(draws));
    }

    let mut deltas = Vec::with_capacity(draws as usize);
    let mut positive = 0u64;
    for draw in 0..u64::from(draws) {
        let mean_a = dirichlet_weighted_mean(samples_a, seed, draw, label_a);
        let mean_b = dirichlet_weighted_mean(samples_b, seed, draw, label_b);
        let delta = mean_a - mean_b;
        if delta > 0.0 {
            positive += 1;
        }
        deltas.push(delta);
    }

    Ok(ContrastResult {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        median_delta: median(&mut deltas),
        p_plus: positive as f64 / f64::from(draws),
        draws,
        seed,
    })
}

/// Unit Dirichlet weights are normalized Exp(1) draws; keying the stream by
/// the group label (not the argument position) makes reversed contrasts use
/// identical weights per group.
fn dirichlet_weighted_mean(samples: &[f64], seed: u64, draw: u64, label: &str) -> f64 {
    let mut rng = stream_rng(seed, &[NS_BAYES_DRAW, draw, hash_label(label), samples.len() as u64]);
    let mut weighted = 0.0;
    let mut total = 0.0;
    for &value in samples {
        let weight = exp1(&mut rng);
        weighted += weight * value;
        total += weight;
    }
    if total > 0.0 {
        weighted / total
    } else {
        samples.iter().sum::<f64>() / samples.len() as f64
    }
}

fn exp1(rng: &mut dyn RngCore) -> f64 {
    let u: f64 = rng.gen(); // [0, 1)
    -(1.0 - u).ln()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// A percentile interval of resampled means.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

/// Percentile bootstrap confidence interval for the mean of `values`.
pub fn bootstrap_ci(values: &[f64], level: f64, draws: u32, seed: u64) -> Result<Interval, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyGroup("values".to_string()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(AnalysisError::InvalidLevel(level));
    }
    let n = values.len();
    let mut means = Vec::with_capacity(draws as usize);
    for draw in 0..u64::from(draws) {
        let mut rng = stream_rng(seed, &[NS_CI_DRAW, draw]);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += values[rng.gen_range(0..n)];
        }
        means.push(sum / n as f64);
    }
    means.sort_by(|a, b| a.total_cmp(b));
    let alpha = 1.0 - level;
    Ok(Interval {
        lower: means[quantile_index(means.len(), alpha / 2.0)],
        upper: means[quantile_index(means.len(), 1.0 - alpha / 2.0)],
    })
}

fn quantile_index(n: usize, q: f64) -> usize {
    ((q * n as f64).ceil() as usize).saturating_sub(1).min(n - 1)
}

/// Keyword sets used for lexical counting. The defaults are the curated
/// cooperation and betrayal vocabularies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordLexicon {
    pub coop_terms: Vec<String>,
    pub defect_terms: Vec<String>,
}

impl Default for KeywordLexicon {
    fn default() -> Self {
        let coop = [
            "cooperation",
            "cooperate",
            "mutual",
            "trust",
            "help",
            "reciprocity",
            "together",
            "align",
            "fair",
            "win-win",
            "support",
        ];
        let defect = [
            "defect",
            "defection",
            "exploit",
            "take advantage",
            "betray",
            "betrayal",
            "trick",
            "selfish",
            "manipulate",
            "cheat",
        ];
        KeywordLexicon {
            coop_terms: coop.iter().map(|s| s.to_string()).collect(),
            defect_terms: defect.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl KeywordLexicon {
    /// Loads a lexicon from two plain-text files, one phrase per line.
    /// Blank lines and leading/trailing whitespace are ignored.
    pub fn from_paths(coop: impl AsRef<Path>, defect: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        Ok(KeywordLexicon {
            coop_terms: read_phrases(coop.as_ref())?,
            defect_terms: read_phrases(defect.as_ref())?,
        })
    }
}

fn read_phrases(path: &Path) -> Result<Vec<String>, AnalysisError> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(str::to_string)
        .collect())
}

/// Keyword frequencies normalized per 100 words.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LexicalSignature {
    pub coop_per_100: f64,
    pub defect_per_100: f64,
    /// `coop_per_100 / defect_per_100`; undefined when no defect terms occur.
    pub ratio: Option<f64>,
    pub total_words: u64,
    pub coop_count: u64,
    pub defect_count: u64,
}

/// Counts lexicon matches over all texts and normalizes per 100 words.
///
/// Matching is whole-token and case-insensitive with no stemming; tokens
/// split on whitespace and punctuation, and multi-word phrases match as
/// contiguous token sequences.
pub fn lexical_signature<'a, I>(texts: I, lexicon: &KeywordLexicon) -> LexicalSignature
where
    I: IntoIterator<Item = &'a str>,
{
    let coop_phrases: Vec<Vec<String>> = lexicon.coop_terms.iter().map(|p| tokenize(p)).collect();
    let defect_phrases: Vec<Vec<String>> = lexicon.defect_terms.iter().map(|p| tokenize(p)).collect();

    let mut total_words = 0u64;
    let mut coop_count = 0u64;
    let mut defect_count = 0u64;
    for text in texts {
        let tokens = tokenize(text);
        total_words += tokens.len() as u64;
        coop_count += count_matches(&tokens, &coop_phrases);
        defect_count += count_matches(&tokens, &defect_phrases);
    }

    let per_100 = |count: u64| {
        if total_words == 0 {
            0.0
        } else {
            count as f64 / total_words as f64 * 100.0
        }
    };
    let coop_per_100 = per_100(coop_count);
    let defect_per_100 = per_100(defect_count);
    LexicalSignature {
        coop_per_100,
        defect_per_100,
        ratio: if defect_per_100 > 0.0 { Some(coop_per_100 / defect_per_100) } else { None },
        total_words,
        coop_count,
        defect_count,
    }
}

fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn count_matches(tokens: &[String], phrases: &[Vec<String>]) -> u64 {
    let mut count = 0u64;
    for phrase in phrases {
        if phrase.is_empty() || phrase.len() > tokens.len() {
            continue;
        }
        count += tokens.windows(phrase.len()).filter(|w| w.iter().eq(phrase.iter())).count() as u64;
    }
    count
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_groups_give_zero_delta_and_zero_p_plus() {
        let a = vec![0.4; 30];
        let b = vec![0.4; 25];
        let result = bayesian_bootstrap_contrast("a", &a, "b", &b, 2000, 7).unwrap();
        assert_eq!(result.median_delta, 0.0);
        assert_eq!(result.p_plus, 0.0);
    }

    #[test]
    fn separated_groups_give_p_plus_one() {
        let a: Vec<f64> = (0..40).map(|i| 0.8 + 0.001 * i as f64).collect();
        let b: Vec<f64> = (0..40).map(|i| 0.1 + 0.001 * i as f64).collect();
        let result = bayesian_bootstrap_contrast("a", &a, "b", &b, 2000, 7).unwrap();
        assert_eq!(result.p_plus, 1.0);
        assert!(result.median_delta > 0.6);
    }

    #[test]
    fn reversing_groups_negates_the_median_exactly() {
        let a: Vec<f64> = (0..50).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let b: Vec<f64> = (0..45).map(|i| ((i * 53) % 90) as f64 / 120.0).collect();
        let ab = bayesian_bootstrap_contrast("a", &a, "b", &b, 4000, 99).unwrap();
        let ba = bayesian_bootstrap_contrast("b", &b, "a", &a, 4000, 99).unwrap();
        assert_eq!(ab.median_delta, -ba.median_delta);
        // With no tied draws, the positive fractions are complementary.
        assert!((ab.p_plus + ba.p_plus - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contrasts_are_deterministic_given_the_seed() {
        let a = vec![0.2, 0.5, 0.9, 0.4];
        let b = vec![0.1, 0.6, 0.3];
        let first = bayesian_bootstrap_contrast("a", &a, "b", &b, 1500, 11).unwrap();
        let second = bayesian_bootstrap_contrast("a", &a, "b", &b, 1500, 11).unwrap();
        assert_eq!(first, second);
        assert!(bayesian_bootstrap_contrast("a", &[], "b", &b, 1500, 11).is_err());
        assert!(matches!(
            bayesian_bootstrap_contrast("a", &a, "b", &b, 10, 11),
            Err(AnalysisError::TooFewDraws(10))
        ));
    }

    #[test]
    fn constant_values_give_a_zero_width_interval() {
        let interval = bootstrap_ci(&[2.5; 40], 0.95, 1000, 3).unwrap();
        assert_eq!(interval.lower, 2.5);
        assert_eq!(interval.upper, 2.5);
    }

    #[test]
    fn balanced_binary_interval_contains_the_mean() {
        let mut values = vec![0.0; 500];
        values.extend(vec![1.0; 500]);
        let interval = bootstrap_ci(&values, 0.95, 2000, 3).unwrap();
        assert!(interval.lower < 0.5 && 0.5 < interval.upper);
        assert!(bootstrap_ci(&values, 1.0, 100, 3).is_err());
        assert!(bootstrap_ci(&[], 0.95, 100, 3).is_err());
    }

    #[test]
    fn lexical_counts_match_hand_enumeration() {
        let lexicon = KeywordLexicon::default();
        // Exactly 100 words, two of them "trust".
        let mut words = vec!["word"; 98];
        words.push("trust");
        words.push("trust");
        let text = words.join(" ");
        let sig = lexical_signature([text.as_str()], &lexicon);
        assert_eq!(sig.total_words, 100);
        assert_eq!(sig.coop_per_100, 2.0);
        assert_eq!(sig.defect_per_100, 0.0);
        assert!(sig.ratio.is_none());
    }

    #[test]
    fn multi_word_phrases_match_contiguously() {
        let lexicon = KeywordLexicon::default();
        let sig = lexical_signature(["exploit take advantage"], &lexicon);
        assert_eq!(sig.total_words, 3);
        assert_eq!(sig.defect_count, 2);
        assert!((sig.defect_per_100 - 66.666_666_666_666_66).abs() < 1e-9);
    }

    #[test]
    fn matching_is_whole_token_without_stemming() {
        let lexicon = KeywordLexicon::default();
        let sig = lexical_signature(["cooperation cooperations defects Defect"], &lexicon);
        assert_eq!(sig.coop_count, 1);
        assert_eq!(sig.defect_count, 1);
        // "win-win" splits into two tokens and still matches as a phrase.
        let hyphen = lexical_signature(["a win-win plan"], &lexicon);
        assert_eq!(hyphen.coop_count, 1);
    }

    #[test]
    fn counts_are_invariant_under_text_order() {
        let lexicon = KeywordLexicon::default();
        let forward = lexical_signature(["trust the process", "never betray anyone"], &lexicon);
        let backward = lexical_signature(["never betray anyone", "trust the process"], &lexicon);
        assert_eq!(forward, backward);
    }

    #[test]
    fn lexicon_loads_from_plain_text() {
        let dir = tempfile::tempdir().unwrap();
        let coop = dir.path().join("coop.txt");
        let defect = dir.path().join("defect.txt");
        std::fs::write(&coop, "alliance\njoint effort\n\n").unwrap();
        std::fs::write(&defect, "backstab\n").unwrap();
        let lexicon = KeywordLexicon::from_paths(&coop, &defect).unwrap();
        assert_eq!(lexicon.coop_terms, vec!["alliance", "joint effort"]);
        let sig = lexical_signature(["a joint effort beats a backstab"], &lexicon);
        assert_eq!(sig.coop_count, 1);
        assert_eq!(sig.defect_count, 1);
    }
}
