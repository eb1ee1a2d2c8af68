//! Style-transfer accuracy, content similarity, and the joint score.
//!
//! ```text
//! STA = (p_gen + mean_i 1[p_gen <= p_ref_i]) / 2
//! SIM = w_input * cos(input, gen) + w_gold * cos(gold, gen)      (0.4 / 0.6)
//! J   = fluency * SIM * STA
//! ```
//!
//! Cosines are clamped to `[0, 1]` before weighting so every score stays in
//! the unit interval. The judge variant multiplies fluency by judge-sourced
//! SIM and STA instead.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Lang;
use crate::embeddings::{cosine, EmbeddingVector};
use crate::par;
use crate::scorer::{BackendError, Capability, Scorer};

#[derive(Debug, thiserror::Error)]
pub enum MetricError {
    #[error("{name} = {value} is outside [0, 1]")]
    OutOfRange { name: &'static str, value: f64 },
    #[error("no reference probabilities; use the reference-free STA")]
    NoReferences,
    #[error("invalid weights ({0}, {1}): must be non-negative and sum to 1")]
    InvalidWeights(f64, f64),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

fn unit(name: &'static str, value: f64) -> Result<f64, MetricError> {
    if (0.0..=1.0).contains(&value) {
        Ok(value)
    } else {
        Err(MetricError::OutOfRange { name, value })
    }
}

pub fn sta(p_gen: f64, p_refs: &[f64]) -> Result<f64, MetricError> {
    unit("p_gen", p_gen)?;
    if p_refs.is_empty() {
        return Err(MetricError::NoReferences);
    }
    let mut hits = 0usize;
    for &p in p_refs {
        if p_gen <= unit("p_ref", p)? {
            hits += 1;
        }
    }
    Ok((p_gen + hits as f64 / p_refs.len() as f64) / 2.0)
}

/// STA when no human references exist: the non-toxicity probability itself.
pub fn sta_reference_free(p_gen: f64) -> f64 {
    p_gen
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricWeights {
    pub w_input: f64,
    pub w_gold: f64,
}

impl Default for MetricWeights {
    fn default() -> Self {
        MetricWeights { w_input: 0.4, w_gold: 0.6 }
    }
}

impl MetricWeights {
    pub fn new(w_input: f64, w_gold: f64) -> Result<Self, MetricError> {
        if w_input < 0.0 || w_gold < 0.0 || ((w_input + w_gold) - 1.0).abs() > 1e-12 {
            return Err(MetricError::InvalidWeights(w_input, w_gold));
        }
        Ok(MetricWeights { w_input, w_gold })
    }

    /// Similarity to the input only, for rows without a reference.
    pub fn input_only() -> Self {
        MetricWeights { w_input: 1.0, w_gold: 0.0 }
    }
}

/// Weighted similarity from raw cosines; each cosine is clamped to `[0, 1]`.
pub fn sim_from_cosines(cos_input: f64, cos_gold: f64, weights: MetricWeights) -> f64 {
    weights.w_input * cos_input.clamp(0.0, 1.0) + weights.w_gold * cos_gold.clamp(0.0, 1.0)
}

/// SIM through the scorer's embeddings. Without a gold reference the
/// input-only weighting applies.
pub fn sim(scorer: &dyn Scorer, input: &str, gold: Option<&str>, gen: &str, weights: MetricWeights) -> Result<f64, MetricError> {
    let mut texts = vec![input.to_string(), gen.to_string()];
    if let Some(g) = gold {
        texts.push(g.to_string());
    }
    let v = scorer.embed(&texts)?;
    let cos_input = cosine(&v[0], &v[1])?;
    Ok(match gold {
        Some(_) => sim_from_cosines(cos_input, cosine(&v[2], &v[1])?, weights),
        None => sim_from_cosines(cos_input, 0.0, MetricWeights::input_only()),
    })
}

pub fn joint(fluency: f64, sim: f64, sta: f64) -> f64 {
    fluency * sim * sta
}

/// Judge variant: judge SIM and STA replace the embedding and classifier terms.
pub fn joint_llm(fluency: f64, sim_llm: f64, sta_llm: f64) -> f64 {
    fluency * sim_llm * sta_llm
}

/// Judge joint score per row, with fluency from the same scorer.
pub fn judge_joint(scorer: &dyn Scorer, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<f64>, MetricError> {
    scorer.require(&[Capability::Judge, Capability::Fluency])?;
    let judged = scorer.judge(inputs, golds, gens)?;
    let fluency = scorer.fluency(inputs, golds, gens)?;
    judged
        .iter()
        .zip(fluency)
        .map(|(j, f)| Ok(joint_llm(unit("fluency", f)?, unit("sim_llm", j.sim)?, unit("sta_llm", j.sta)?)))
        .collect()
}

/// How SIM treats several human references.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldPolicy {
    #[default]
    First,
    Average,
}

/// Everything needed to score one generated output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricInputs {
    pub id: String,
    pub lang: Lang,
    pub input_toxic: String,
    pub output_gen: String,
    /// Human references; empty in reference-free mode.
    pub output_golds: Vec<String>,
    pub p_gen: f64,
    pub p_refs: Vec<f64>,
    pub fluency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub lang: Lang,
    pub sta: f64,
    pub sim: f64,
    pub fluency: f64,
    pub joint: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Averages {
    pub count: usize,
    pub sta: f64,
    pub sim: f64,
    pub fluency: f64,
    pub joint: f64,
}

impl Averages {
    fn of<'a>(rows: impl Iterator<Item = &'a MetricRow>) -> Self {
        let mut acc = Averages::default();
        for r in rows {
            acc.count += 1;
            acc.sta += r.sta;
            acc.sim += r.sim;
            acc.fluency += r.fluency;
            acc.joint += r.joint;
        }
        if acc.count > 0 {
            let n = acc.count as f64;
            acc.sta /= n;
            acc.sim /= n;
            acc.fluency /= n;
            acc.joint /= n;
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub per_lang: BTreeMap<Lang, Averages>,
    pub overall: Averages,
}

impl EvaluationSummary {
    pub fn render(&self) -> String {
        let mut out = format!("{:<8}{:>7}{:>8}{:>8}{:>8}{:>8}\n", "lang", "n", "STA", "SIM", "FL", "J");
        let line = |label: &str, a: &Averages| {
            format!("{label:<8}{:>7}{:>8.3}{:>8.3}{:>8.3}{:>8.3}\n", a.count, a.sta, a.sim, a.fluency, a.joint)
        };
        for (lang, a) in &self.per_lang {
            out.push_str(&line(lang.code(), a));
        }
        out.push_str(&line("overall", &self.overall));
        out
    }
}

/// Per-row metrics and arithmetic-mean aggregates per language and overall.
/// Aggregation runs in row order, so results do not depend on parallelism.
pub fn evaluate_corpus(
    rows: &[MetricInputs],
    scorer: &dyn Scorer,
    weights: MetricWeights,
    gold_policy: GoldPolicy,
) -> Result<(Vec<MetricRow>, EvaluationSummary), MetricError> {
    let mut slot: HashMap<&str, usize> = HashMap::new();
    let mut texts: Vec<String> = Vec::new();
    for r in rows {
        for t in std::iter::once(&r.input_toxic).chain([&r.output_gen]).chain(&r.output_golds) {
            slot.entry(t.as_str()).or_insert_with(|| {
                texts.push(t.clone());
                texts.len() - 1
            });
        }
    }
    let vectors: Vec<EmbeddingVector> = if texts.is_empty() {
        Vec::new()
    } else {
        scorer.require(&[Capability::Embed])?;
        scorer.embed(&texts)?
    };
    if vectors.len() != texts.len() {
        return Err(BackendError::Protocol {
            endpoint: scorer.name().to_string(),
            reason: format!("expected {} vectors, got {}", texts.len(), vectors.len()),
        }
        .into());
    }
    let vec_of = |t: &str| &vectors[slot[t]];

    let metric_rows = par::try_map(rows, |r| -> Result<MetricRow, MetricError> {
        let fluency = unit("fluency", r.fluency)?;
        let gen = vec_of(&r.output_gen);
        let cos_input = cosine(vec_of(&r.input_toxic), gen)?;
        let sim = if r.output_golds.is_empty() {
            sim_from_cosines(cos_input, 0.0, MetricWeights::input_only())
        } else {
            let golds = match gold_policy {
                GoldPolicy::First => &r.output_golds[..1],
                GoldPolicy::Average => &r.output_golds[..],
            };
            let mut cos_gold = 0.0;
            for g in golds {
                cos_gold += cosine(vec_of(g), gen)?.clamp(0.0, 1.0);
            }
            sim_from_cosines(cos_input, cos_gold / golds.len() as f64, weights)
        };
        let sta = if r.p_refs.is_empty() {
            sta_reference_free(unit("p_gen", r.p_gen)?)
        } else {
            sta(r.p_gen, &r.p_refs)?
        };
        Ok(MetricRow {
            id: r.id.clone(),
            lang: r.lang,
            sta,
            sim,
            fluency,
            joint: joint(fluency, sim, sta),
        })
    })?;

    let mut langs: Vec<Lang> = metric_rows.iter().map(|r| r.lang).collect();
    langs.sort();
    langs.dedup();
    let per_lang = langs
        .into_iter()
        .map(|l| (l, Averages::of(metric_rows.iter().filter(|r| r.lang == l))))
        .collect();
    let summary = EvaluationSummary {
        per_lang,
        overall: Averages::of(metric_rows.iter()),
    };
    Ok((metric_rows, summary))
}

/// The text side of one row to be scored.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRequest {
    pub id: String,
    pub lang: Lang,
    pub input_toxic: String,
    pub output_gen: String,
    pub output_golds: Vec<String>,
}

/// Queries the scorer for the non-toxicity of generations and references
/// and for fluency, producing [`MetricInputs`] in request order.
pub fn gather_inputs(requests: Vec<EvalRequest>, scorer: &dyn Scorer) -> Result<Vec<MetricInputs>, MetricError> {
    scorer.require(&[Capability::Toxicity, Capability::Fluency])?;
    let mut p_gen = vec![0.0; requests.len()];
    let mut p_refs: Vec<Vec<f64>> = vec![Vec::new(); requests.len()];

    let mut by_lang: BTreeMap<Lang, Vec<usize>> = BTreeMap::new();
    for (i, r) in requests.iter().enumerate() {
        by_lang.entry(r.lang).or_default().push(i);
    }
    for (lang, idx) in by_lang {
        let mut texts = Vec::new();
        for &i in &idx {
            texts.push(requests[i].output_gen.clone());
            texts.extend(requests[i].output_golds.iter().cloned());
        }
        let probs = scorer.non_toxicity(lang, &texts)?;
        if probs.len() != texts.len() {
            return Err(BackendError::Protocol {
                endpoint: scorer.name().to_string(),
                reason: format!("expected {} probabilities, got {}", texts.len(), probs.len()),
            }
            .into());
        }
        let mut it = probs.into_iter();
        for &i in &idx {
            p_gen[i] = it.next().expect("length checked");
            p_refs[i] = it.by_ref().take(requests[i].output_golds.len()).collect();
        }
    }

    let inputs: Vec<String> = requests.iter().map(|r| r.input_toxic.clone()).collect();
    let golds: Vec<String> = requests.iter().map(|r| r.output_golds.first().cloned().unwrap_or_default()).collect();
    let gens: Vec<String> = requests.iter().map(|r| r.output_gen.clone()).collect();
    let fluency = if requests.is_empty() {
        Vec::new()
    } else {
        scorer.fluency(&inputs, &golds, &gens)?
    };

    Ok(requests
        .into_iter()
        .zip(p_gen)
        .zip(p_refs)
        .zip(fluency)
        .map(|(((r, p_gen), p_refs), fluency)| MetricInputs {
            id: r.id,
            lang: r.lang,
            input_toxic: r.input_toxic,
            output_gen: r.output_gen,
            output_golds: r.output_golds,
            p_gen,
            p_refs,
            fluency,
        })
        .collect())
}
