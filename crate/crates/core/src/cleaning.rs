//! Four-step cleaning of candidate parallel pairs:
//!
//! 1. lexical divergence: character n-gram Jaccard between a pair's two sides,
//! 2. removal of pairs whose sides are identical after NFC + lower-casing,
//! 3. Hinglish script check (no Devanagari),
//! 4. semantic preservation: embedding cosine for machine-translated and
//!    synthetic pairs.
//!
//! Pairs without a neutral side only take part in step 3. Every step keeps
//! the relative order of retained pairs.

use std::collections::HashSet;

use serde::Serialize;

use crate::corpus::{Lang, ParallelPair, SourceKind};
use crate::embeddings::cosine;
use crate::par;
use crate::scorer::{BackendError, Capability, Scorer};
use crate::text::normalize;

#[derive(Debug, thiserror::Error)]
pub enum CleaningError {
    #[error("invalid cleaning config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Which side of the lexical-divergence threshold is discarded.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LexicalRule {
    /// Drop pairs with `J >= threshold`.
    #[default]
    DiscardAtOrAbove,
    /// Drop pairs with `J <= threshold`, keeping only high-overlap pairs.
    DiscardAtOrBelow,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CleaningConfig {
    pub ngram_order: usize,
    pub jaccard_discard_threshold: f64,
    pub lexical_rule: LexicalRule,
    pub sem_threshold_mt: f64,
    pub sem_threshold_synthetic: f64,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            ngram_order: 5,
            jaccard_discard_threshold: 0.90,
            lexical_rule: LexicalRule::DiscardAtOrAbove,
            sem_threshold_mt: 0.85,
            sem_threshold_synthetic: 0.80,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<(), CleaningError> {
        if self.ngram_order == 0 {
            return Err(CleaningError::InvalidConfig("ngram order must be at least 1".into()));
        }
        for (name, v) in [
            ("jaccard threshold", self.jaccard_discard_threshold),
            ("machine-translated similarity threshold", self.sem_threshold_mt),
            ("synthetic similarity threshold", self.sem_threshold_synthetic),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(CleaningError::InvalidConfig(format!("{name} {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Set of contiguous character n-grams of the normalised text, whitespace
/// included. Text shorter than `n` yields itself as the only gram; empty
/// text yields the empty set.
pub fn char_ngrams(text: &str, n: usize) -> HashSet<String> {
    assert!(n >= 1, "n-gram order must be positive");
    let chars: Vec<char> = normalize(text).chars().collect();
    if chars.is_empty() {
        return HashSet::new();
    }
    if chars.len() < n {
        return HashSet::from([chars.into_iter().collect()]);
    }
    chars.windows(n).map(|w| w.iter().collect()).collect()
}

/// `|a ∩ b| / |a ∪ b|`, with two empty sets counting as identical.
pub fn jaccard(a: &HashSet<String>, b: &HashSet<String>) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 1.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let inter = small.iter().filter(|g| large.contains(*g)).count();
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Jaccard of the two sides' n-gram sets.
pub fn pair_jaccard(toxic: &str, neutral: &str, n: usize) -> f64 {
    jaccard(&char_ngrams(toxic, n), &char_ngrams(neutral, n))
}

fn partition(pairs: Vec<ParallelPair>, keep: &[bool]) -> (Vec<ParallelPair>, Vec<ParallelPair>) {
    let mut retained = Vec::with_capacity(pairs.len());
    let mut dropped = Vec::new();
    for (p, &k) in pairs.into_iter().zip(keep) {
        if k {
            retained.push(p);
        } else {
            dropped.push(p);
        }
    }
    (retained, dropped)
}

pub fn filter_lexical_divergence(pairs: Vec<ParallelPair>, cfg: &CleaningConfig) -> (Vec<ParallelPair>, Vec<ParallelPair>) {
    let missing = pairs.iter().filter(|p| p.neutral.is_none()).count();
    if missing > 0 {
        log::warn!("lexical divergence: {missing} pair(s) without a neutral side skipped");
    }
    let keep = par::map(&pairs, |p| match &p.neutral {
        None => true,
        Some(neutral) => {
            let j = pair_jaccard(&p.toxic, neutral, cfg.ngram_order);
            match cfg.lexical_rule {
                LexicalRule::DiscardAtOrAbove => j < cfg.jaccard_discard_threshold,
                LexicalRule::DiscardAtOrBelow => j > cfg.jaccard_discard_threshold,
            }
        }
    });
    partition(pairs, &keep)
}

pub fn dedup_identical(pairs: Vec<ParallelPair>) -> (Vec<ParallelPair>, Vec<ParallelPair>) {
    let keep = par::map(&pairs, |p| match &p.neutral {
        None => true,
        Some(neutral) => normalize(&p.toxic) != normalize(neutral),
    });
    partition(pairs, &keep)
}

pub fn contains_devanagari(text: &str) -> bool {
    text.chars().any(|c| ('\u{0900}'..='\u{097F}').contains(&c))
}

pub fn filter_hinglish_script(pairs: Vec<ParallelPair>) -> (Vec<ParallelPair>, Vec<ParallelPair>) {
    let keep = par::map(&pairs, |p| {
        p.lang != Lang::Hin || !(contains_devanagari(&p.toxic) || p.neutral.as_deref().is_some_and(contains_devanagari))
    });
    partition(pairs, &keep)
}

fn semantic_threshold(source: SourceKind, cfg: &CleaningConfig) -> Option<f64> {
    match source {
        SourceKind::Human => None,
        SourceKind::MachineTranslated => Some(cfg.sem_threshold_mt),
        SourceKind::Synthetic => Some(cfg.sem_threshold_synthetic),
    }
}

/// Retains a non-human pair only if the cosine of its two sides is strictly
/// above the threshold for its source kind.
pub fn filter_semantic_preservation(
    pairs: Vec<ParallelPair>,
    cfg: &CleaningConfig,
    scorer: &dyn Scorer,
) -> Result<(Vec<ParallelPair>, Vec<ParallelPair>), CleaningError> {
    let checked: Vec<usize> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| p.neutral.is_some() && semantic_threshold(p.source, cfg).is_some())
        .map(|(i, _)| i)
        .collect();
    let mut keep = vec![true; pairs.len()];
    if !checked.is_empty() {
        scorer.require(&[Capability::Embed])?;
        let texts: Vec<String> = checked
            .iter()
            .flat_map(|&i| [pairs[i].toxic.clone(), pairs[i].neutral.clone().unwrap_or_default()])
            .collect();
        let vectors = scorer.embed(&texts)?;
        if vectors.len() != texts.len() {
            return Err(BackendError::Protocol {
                endpoint: scorer.name().to_string(),
                reason: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
            }
            .into());
        }
        for (slot, &i) in checked.iter().enumerate() {
            let sim = cosine(&vectors[2 * slot], &vectors[2 * slot + 1])?;
            let threshold = semantic_threshold(pairs[i].source, cfg).expect("filtered above");
            keep[i] = sim > threshold;
        }
    }
    Ok(partition(pairs, &keep))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CleaningStep {
    LexicalDivergence,
    DedupIdentical,
    HinglishScript,
    SemanticPreservation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepReport {
    pub step: CleaningStep,
    pub dropped: usize,
    pub dropped_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CleaningReport {
    pub input: usize,
    pub steps: Vec<StepReport>,
    pub retained: usize,
}

impl CleaningReport {
    pub fn drop_counts(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.dropped).collect()
    }

    pub fn render(&self) -> String {
        let mut out = format!("input pairs           {:>8}\n", self.input);
        for s in &self.steps {
            let name = serde_json::to_value(s.step).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            out.push_str(&format!("dropped {name:<22}{:>8}\n", s.dropped));
        }
        out.push_str(&format!("retained              {:>8}\n", self.retained));
        out
    }
}

pub fn run_pipeline(
    pairs: Vec<ParallelPair>,
    cfg: &CleaningConfig,
    scorer: &dyn Scorer,
) -> Result<(Vec<ParallelPair>, CleaningReport), CleaningError> {
    cfg.validate()?;
    let input = pairs.len();
    let mut steps = Vec::with_capacity(4);
    let mut record = |step, dropped: Vec<ParallelPair>| {
        steps.push(StepReport {
            step,
            dropped: dropped.len(),
            dropped_ids: dropped.into_iter().map(|p| p.id).collect(),
        });
    };

    let (pairs, dropped) = filter_lexical_divergence(pairs, cfg);
    record(CleaningStep::LexicalDivergence, dropped);
    let (pairs, dropped) = dedup_identical(pairs);
    record(CleaningStep::DedupIdentical, dropped);
    let (pairs, dropped) = filter_hinglish_script(pairs);
    record(CleaningStep::HinglishScript, dropped);
    let (pairs, dropped) = filter_semantic_preservation(pairs, cfg, scorer)?;
    record(CleaningStep::SemanticPreservation, dropped);

    let report = CleaningReport {
        input,
        retained: pairs.len(),
        steps,
    };
    Ok((pairs, report))
}
