//! Prompt construction, model-output parsing, training export, and
//! best-of-n candidate selection.
//!
//! A chat has a system turn (language template followed by the few-shot
//! block), a user turn (language tag, toxic sentence, span annotations) and,
//! for training, an assistant turn holding the target JSON. Only the
//! assistant turn contributes to the loss.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::cleaning::pair_jaccard;
use crate::corpus::{Lang, LexiconSet, ParallelPair};
use crate::embeddings::{build_index, knn, NeighborIndex};
use crate::metrics::{evaluate_corpus, gather_inputs, EvalRequest, GoldPolicy, MetricError, MetricInputs, MetricWeights};
use crate::par;
use crate::scorer::{BackendError, Scorer};
use crate::spans::{delete_detoxify, ToxicSpan};
use crate::text::{normalize, slice_chars};

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("no system prompt template for {0}")]
    MissingTemplate(Lang),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("generator returned no candidates for {0}")]
    NoCandidates(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// System-prompt templates keyed by language.
#[derive(Clone, Debug)]
pub struct TemplateStore {
    templates: BTreeMap<Lang, String>,
}

macro_rules! builtin_templates {
    ($($lang:ident => $file:literal),* $(,)?) => {
        [$((Lang::$lang, include_str!(concat!("../templates/", $file)))),*]
    };
}

impl TemplateStore {
    /// The fifteen templates shipped with the crate.
    pub fn builtin() -> Self {
        let templates = builtin_templates! {
            En => "en.txt", Es => "es.txt", De => "de.txt", Zh => "zh.txt", Ar => "ar.txt",
            Hi => "hi.txt", Uk => "uk.txt", Ru => "ru.txt", Am => "am.txt", It => "it.txt",
            Fr => "fr.txt", He => "he.txt", Hin => "hin.txt", Ja => "ja.txt", Tt => "tt.txt",
        };
        TemplateStore {
            templates: templates.into_iter().map(|(l, t)| (l, t.to_string())).collect(),
        }
    }

    pub fn empty() -> Self {
        TemplateStore {
            templates: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, lang: Lang, template: String) {
        self.templates.insert(lang, template);
    }

    /// Replaces templates with any `<lang>.txt` files found in `dir`.
    pub fn overlay_dir(mut self, dir: &Path) -> Result<Self, PromptError> {
        for lang in Lang::ALL {
            let path = dir.join(format!("{lang}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
                self.templates.insert(lang, text);
            }
        }
        Ok(self)
    }

    pub fn get(&self, lang: Lang) -> Option<&str> {
        self.templates.get(&lang).map(String::as_str)
    }
}

pub fn build_system_prompt(lang: Lang, templates: &TemplateStore) -> Result<String, PromptError> {
    templates.get(lang).map(str::to_string).ok_or(PromptError::MissingTemplate(lang))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
    pub loss_masked: bool,
}

impl ChatTurn {
    pub fn new(role: Role, content: String) -> Self {
        ChatTurn {
            role,
            content,
            loss_masked: role != Role::Assistant,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub toxic: String,
    pub neutral: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub id: String,
    pub lang: Lang,
    pub system_prompt: String,
    pub fewshot: Vec<FewShotExample>,
    pub target_toxic: String,
    pub toxic_spans: Vec<ToxicSpan>,
}

/// Same-language few-shot source: a corpus with its neighbour indexes.
pub struct FewShotRetriever<'a> {
    corpus: HashMap<String, &'a ParallelPair>,
    indexes: BTreeMap<Lang, NeighborIndex>,
    scorer: &'a dyn Scorer,
}

impl<'a> FewShotRetriever<'a> {
    /// Indexes the toxic side of every corpus pair.
    pub fn build(corpus: &'a [ParallelPair], scorer: &'a dyn Scorer) -> Result<Self, BackendError> {
        Ok(FewShotRetriever {
            corpus: corpus.iter().map(|p| (p.id.clone(), p)).collect(),
            indexes: build_index(corpus, scorer)?,
            scorer,
        })
    }

    /// Uses the pairs' stored `neighbor_ids` instead of an embedding index.
    pub fn from_stored(corpus: &'a [ParallelPair], scorer: &'a dyn Scorer) -> Self {
        FewShotRetriever {
            corpus: corpus.iter().map(|p| (p.id.clone(), p)).collect(),
            indexes: BTreeMap::new(),
            scorer,
        }
    }

    /// Up to `k` nearest same-language examples that have a neutral side,
    /// in similarity order. The pair itself is never returned.
    pub fn examples(&self, pair: &ParallelPair, k: usize) -> Result<Vec<FewShotExample>, BackendError> {
        let ranked: Vec<String> = match self.indexes.get(&pair.lang) {
            Some(index) => {
                let stored = index
                    .get(&pair.id)
                    .filter(|_| self.corpus.get(&pair.id).is_some_and(|p| p.toxic == pair.toxic));
                let query = match stored {
                    Some(v) => v.clone(),
                    None => self.scorer.embed(std::slice::from_ref(&pair.toxic))?.remove(0),
                };
                knn(index, &query, index.len(), Some(&pair.id))?.into_iter().map(|n| n.id).collect()
            }
            None if self.indexes.is_empty() => pair.neighbor_ids.clone(),
            None => Vec::new(),
        };
        Ok(ranked
            .iter()
            .filter_map(|id| self.corpus.get(id))
            .filter(|p| p.lang == pair.lang && p.id != pair.id)
            .filter_map(|p| {
                p.neutral.as_ref().map(|n| FewShotExample {
                    toxic: p.toxic.clone(),
                    neutral: n.clone(),
                })
            })
            .take(k)
            .collect())
    }
}

pub fn build_prompt(
    pair: &ParallelPair,
    retriever: &FewShotRetriever<'_>,
    k: usize,
    templates: &TemplateStore,
) -> Result<PromptBundle, PromptError> {
    Ok(PromptBundle {
        id: pair.id.clone(),
        lang: pair.lang,
        system_prompt: build_system_prompt(pair.lang, templates)?,
        fewshot: retriever.examples(pair, k)?,
        target_toxic: pair.toxic.clone(),
        toxic_spans: pair.toxic_spans.clone(),
    })
}

fn system_content(bundle: &PromptBundle) -> String {
    let mut s = bundle.system_prompt.trim_end().to_string();
    if !bundle.fewshot.is_empty() {
        s.push_str("\n\nExamples of toxic sentences and their neutral rewrites:\n");
        for (i, ex) in bundle.fewshot.iter().enumerate() {
            s.push_str(&format!("\nExample {}\nToxic: {}\nNeutral: {}\n", i + 1, ex.toxic, ex.neutral));
        }
    }
    s
}

fn user_content(bundle: &PromptBundle) -> String {
    let spans = if bundle.toxic_spans.is_empty() {
        "none".to_string()
    } else {
        bundle
            .toxic_spans
            .iter()
            .map(|s| format!("\"{}\" [{}, {})", slice_chars(&bundle.target_toxic, s.start, s.end), s.start, s.end))
            .collect::<Vec<_>>()
            .join(", ")
    };
    format!("Language: {}\nToxic sentence: {}\nExplicit toxic spans: {}", bundle.lang, bundle.target_toxic, spans)
}

/// System and user turns for inference.
pub fn render_chat(bundle: &PromptBundle) -> Vec<ChatTurn> {
    vec![
        ChatTurn::new(Role::System, system_content(bundle)),
        ChatTurn::new(Role::User, user_content(bundle)),
    ]
}

/// Structured model answer.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelAnswer {
    #[serde(default)]
    pub toxic_elements: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meaning: Option<String>,
    pub detoxified_text: String,
}

/// Three turns for training: inference turns plus the assistant target.
pub fn render_training_chat(bundle: &PromptBundle, target: &ModelAnswer) -> Vec<ChatTurn> {
    let mut turns = render_chat(bundle);
    turns.push(ChatTurn::new(
        Role::Assistant,
        serde_json::to_string(target).expect("answer serialises"),
    ));
    turns
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParsedOutput {
    pub text: String,
    /// Set when no usable JSON object was found and the raw text was kept.
    pub fallback: bool,
    pub diagnostic: Option<String>,
}

/// Extracts `detoxified_text` from the first JSON object in `raw` that has
/// one. Code fences and surrounding prose are tolerated. Never fails:
/// without such an object the trimmed raw text is returned, flagged.
pub fn parse_model_output(raw: &str) -> ParsedOutput {
    let mut diagnostic = None;
    for (pos, _) in raw.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&raw[pos..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(serde_json::Value::Object(obj))) => match obj.get("detoxified_text") {
                Some(serde_json::Value::String(text)) => {
                    return ParsedOutput {
                        text: text.trim().to_string(),
                        fallback: false,
                        diagnostic: None,
                    }
                }
                _ => {
                    diagnostic.get_or_insert_with(|| "JSON object without a string detoxified_text".to_string());
                }
            },
            Some(Err(e)) => {
                diagnostic.get_or_insert_with(|| format!("malformed JSON: {e}"));
            }
            _ => {}
        }
    }
    ParsedOutput {
        text: raw.trim().to_string(),
        fallback: true,
        diagnostic: Some(diagnostic.unwrap_or_else(|| "no JSON object found".to_string())),
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub turns: Vec<ChatTurn>,
}

/// One masked three-turn instance per pair with a neutral side, skipping
/// pairs whose sides are identical after normalisation or whose character
/// 5-gram Jaccard exceeds `overlap_max`.
pub fn export_training_instances(
    pairs: &[ParallelPair],
    retriever: &FewShotRetriever<'_>,
    templates: &TemplateStore,
    k: usize,
    overlap_max: f64,
) -> Result<Vec<TrainingInstance>, PromptError> {
    let eligible: Vec<&ParallelPair> = pairs
        .iter()
        .filter(|p| match &p.neutral {
            None => false,
            Some(n) => normalize(&p.toxic) != normalize(n) && pair_jaccard(&p.toxic, n, 5) <= overlap_max,
        })
        .collect();
    par::try_map(&eligible, |p| {
        let bundle = build_prompt(p, retriever, k, templates)?;
        let target = ModelAnswer {
            toxic_elements: p.toxic_spans.iter().map(|s| slice_chars(&p.toxic, s.start, s.end).to_string()).collect(),
            meaning: None,
            detoxified_text: p.neutral.clone().expect("filtered above"),
        };
        Ok(TrainingInstance {
            turns: render_training_chat(&bundle, &target),
        })
    })
}

/// Chat-completion backend producing raw candidate texts.
pub trait Generator: Send + Sync {
    fn name(&self) -> &str;
    fn generate(&self, bundle: &PromptBundle, n: usize) -> Result<Vec<String>, BackendError>;
}

/// Returns the toxic input unchanged, `n` times.
#[derive(Clone, Copy, Debug, Default)]
pub struct EchoGenerator;

impl Generator for EchoGenerator {
    fn name(&self) -> &str {
        "echo"
    }

    fn generate(&self, bundle: &PromptBundle, n: usize) -> Result<Vec<String>, BackendError> {
        Ok(vec![bundle.target_toxic.clone(); n])
    }
}

/// Answers with the Delete baseline, as JSON, `n` times.
#[derive(Clone, Debug, Default)]
pub struct DeleteGenerator {
    lexicons: LexiconSet,
}

impl DeleteGenerator {
    pub fn new(lexicons: LexiconSet) -> Self {
        DeleteGenerator { lexicons }
    }
}

impl Generator for DeleteGenerator {
    fn name(&self) -> &str {
        "delete"
    }

    fn generate(&self, bundle: &PromptBundle, n: usize) -> Result<Vec<String>, BackendError> {
        let text = delete_detoxify(&bundle.target_toxic, &self.lexicons.get_or_empty(bundle.lang));
        let answer = ModelAnswer {
            toxic_elements: Vec::new(),
            meaning: None,
            detoxified_text: text,
        };
        Ok(vec![serde_json::to_string(&answer).expect("answer serialises"); n])
    }
}

#[derive(Serialize)]
struct GenerationRequest<'a> {
    system: &'a str,
    user: &'a str,
    n: usize,
    lang: Lang,
}

#[derive(Deserialize)]
struct GenerationResponse {
    candidates: Vec<String>,
}

/// `POST {endpoint}` with `{"system","user","n","lang"}`, expecting `{"candidates": [..]}`.
#[derive(Debug)]
pub struct RemoteGenerator {
    endpoint: String,
    agent: ureq::Agent,
}

impl RemoteGenerator {
    pub fn new(endpoint: &str, timeout: Duration) -> Self {
        RemoteGenerator {
            endpoint: endpoint.to_string(),
            agent: ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into(),
        }
    }
}

impl Generator for RemoteGenerator {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn generate(&self, bundle: &PromptBundle, n: usize) -> Result<Vec<String>, BackendError> {
        let turns = render_chat(bundle);
        let request = GenerationRequest {
            system: &turns[0].content,
            user: &turns[1].content,
            n,
            lang: bundle.lang,
        };
        let fail = |reason: String| BackendError::Generator {
            endpoint: self.endpoint.clone(),
            reason,
        };
        let resp: GenerationResponse = self
            .agent
            .post(&self.endpoint)
            .send_json(&request)
            .map_err(|e| fail(e.to_string()))?
            .body_mut()
            .read_json()
            .map_err(|e| fail(e.to_string()))?;
        Ok(resp.candidates)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub id: String,
    pub candidates: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<f64>>,
}

/// Requests `n` candidates and parses each. Short answers are accepted with
/// a warning; an empty answer is an error.
pub fn generate_candidates(bundle: &PromptBundle, generator: &dyn Generator, n: usize) -> Result<CandidateSet, PromptError> {
    let raw = generator.generate(bundle, n)?;
    if raw.is_empty() {
        return Err(PromptError::NoCandidates(bundle.id.clone()));
    }
    if raw.len() < n {
        log::warn!("{}: generator {} returned {} of {n} candidates", bundle.id, generator.name(), raw.len());
    }
    let candidates = raw
        .iter()
        .map(|r| {
            let parsed = parse_model_output(r);
            if let Some(d) = &parsed.diagnostic {
                log::debug!("{}: {d}; using raw text", bundle.id);
            }
            parsed.text
        })
        .collect();
    Ok(CandidateSet {
        id: bundle.id.clone(),
        candidates,
        scores: None,
    })
}

/// Index of the first maximum; NaN never wins.
pub fn argmax_first(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.is_none_or(|b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.or(if scores.is_empty() { None } else { Some(0) })
}

/// What the candidates are scored against.
#[derive(Clone, Debug, PartialEq)]
pub struct SelectionContext {
    pub lang: Lang,
    pub input_toxic: String,
    /// Human references; empty selects reference-free scoring.
    pub golds: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Selection {
    pub text: String,
    pub index: usize,
    pub scores: Vec<f64>,
}

/// Joint score of every candidate, then the first argmax. With references
/// the full metric applies; without, `fluency × SIM(input only) × p_gen`.
pub fn select_best(
    candidates: &CandidateSet,
    ctx: &SelectionContext,
    scorer: &dyn Scorer,
    weights: MetricWeights,
) -> Result<Selection, PromptError> {
    if candidates.candidates.is_empty() {
        return Err(PromptError::NoCandidates(candidates.id.clone()));
    }
    let requests = candidates
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| EvalRequest {
            id: format!("{}#{i}", candidates.id),
            lang: ctx.lang,
            input_toxic: ctx.input_toxic.clone(),
            output_gen: c.clone(),
            output_golds: ctx.golds.clone(),
        })
        .collect();
    let inputs: Vec<MetricInputs> = gather_inputs(requests, scorer)?;
    let (rows, _) = evaluate_corpus(&inputs, scorer, weights, GoldPolicy::First)?;
    let scores: Vec<f64> = rows.iter().map(|r| r.joint).collect();
    let index = argmax_first(&scores).expect("non-empty");
    Ok(Selection {
        text: candidates.candidates[index].clone(),
        index,
        scores,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InferenceRecord {
    pub id: String,
    pub lang: Lang,
    pub candidates: Vec<String>,
    pub scores: Vec<f64>,
    pub chosen: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct InferenceConfig {
    pub k: usize,
    pub n: usize,
    pub weights: MetricWeights,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k: 3,
            n: 3,
            weights: MetricWeights::default(),
        }
    }
}

/// Prompt, generate and select for every input pair. Returns the inputs
/// with `neutral` replaced by the chosen rewrite, plus per-input records.
/// `golds` maps pair ids to references for reference-based selection.
pub fn run_inference(
    inputs: &[ParallelPair],
    retriever: &FewShotRetriever<'_>,
    templates: &TemplateStore,
    generator: &dyn Generator,
    scorer: &dyn Scorer,
    cfg: InferenceConfig,
    golds: &HashMap<String, Vec<String>>,
) -> Result<(Vec<ParallelPair>, Vec<InferenceRecord>), PromptError> {
    let results = par::try_map(inputs, |pair| {
        let bundle = build_prompt(pair, retriever, cfg.k, templates)?;
        let set = generate_candidates(&bundle, generator, cfg.n)?;
        let ctx = SelectionContext {
            lang: pair.lang,
            input_toxic: pair.toxic.clone(),
            golds: golds.get(&pair.id).cloned().unwrap_or_default(),
        };
        let chosen = select_best(&set, &ctx, scorer, cfg.weights)?;
        let mut out = pair.clone();
        out.neutral = Some(chosen.text.clone());
        let record = InferenceRecord {
            id: pair.id.clone(),
            lang: pair.lang,
            candidates: set.candidates,
            scores: chosen.scores,
            chosen: chosen.index,
        };
        Ok::<_, PromptError>((out, record))
    })?;
    Ok(results.into_iter().unzip())
}
