//! Pluggable scorers: sentence embeddings, non-toxicity probability,
//! fluency, and judge scores.
//!
//! Two backends ship. [`FallbackScorer`] is deterministic and offline: a
//! hashed character-trigram embedder, a lexicon-based toxicity estimate and
//! constant fluency. [`RemoteScorer`] speaks the JSON-over-HTTP scorer
//! protocol:
//!
//! | request                                                  | response                          |
//! |----------------------------------------------------------|-----------------------------------|
//! | `GET /manifest`                                          | `{"dim", "capabilities", "models"}` |
//! | `POST /embed {"texts"}`                                  | `{"vectors": [[f64]]}`            |
//! | `POST /toxicity {"texts"}`                               | `{"non_toxicity": [f64]}`         |
//! | `POST /fluency {"inputs","golds","gens"}`                | `{"scores": [f64]}`               |
//! | `POST /judge {"inputs","golds","gens"}`                  | `{"sim": [f64], "sta": [f64]}`    |

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Lang, LexiconSet};
use crate::embeddings::{fallback_embed, EmbeddingVector, FALLBACK_DIM};
use crate::par;
use crate::spans::detect_spans;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("scorer {endpoint} unreachable: {reason}")]
    Unreachable { endpoint: String, reason: String },
    #[error("scorer {endpoint} lacks the {capability} capability")]
    MissingCapability { endpoint: String, capability: Capability },
    #[error("scorer {endpoint} protocol error: {reason}")]
    Protocol { endpoint: String, reason: String },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("generator {endpoint} failed: {reason}")]
    Generator { endpoint: String, reason: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capability {
    Embed,
    Toxicity,
    Fluency,
    Judge,
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::Embed => "embed",
            Capability::Toxicity => "toxicity",
            Capability::Fluency => "fluency",
            Capability::Judge => "judge",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScorerManifest {
    pub dim: usize,
    pub capabilities: Vec<Capability>,
    #[serde(default)]
    pub models: Vec<String>,
}

/// Judge-sourced content similarity and non-toxicity for one row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JudgeScores {
    pub sim: f64,
    pub sta: f64,
}

pub trait Scorer: Send + Sync {
    /// Short label for diagnostics (`fallback` or the endpoint URL).
    fn name(&self) -> &str;

    fn manifest(&self) -> &ScorerManifest;

    /// One vector per text, order preserved.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError>;

    /// Non-toxicity probability in `[0, 1]` per text.
    fn non_toxicity(&self, lang: Lang, texts: &[String]) -> Result<Vec<f64>, BackendError>;

    fn fluency(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<f64>, BackendError>;

    fn judge(&self, _inputs: &[String], _golds: &[String], _gens: &[String]) -> Result<Vec<JudgeScores>, BackendError> {
        Err(self.missing(Capability::Judge))
    }

    fn missing(&self, capability: Capability) -> BackendError {
        BackendError::MissingCapability {
            endpoint: self.name().to_string(),
            capability,
        }
    }

    /// Fails with a diagnostic naming the first absent capability.
    fn require(&self, capabilities: &[Capability]) -> Result<(), BackendError> {
        match capabilities.iter().find(|c| !self.manifest().capabilities.contains(c)) {
            Some(&c) => Err(self.missing(c)),
            None => Ok(()),
        }
    }
}

/// Deterministic offline scorer.
#[derive(Clone, Debug)]
pub struct FallbackScorer {
    lexicons: LexiconSet,
    manifest: ScorerManifest,
}

impl FallbackScorer {
    pub fn new(lexicons: LexiconSet) -> Self {
        FallbackScorer {
            lexicons,
            manifest: ScorerManifest {
                dim: FALLBACK_DIM,
                capabilities: vec![Capability::Embed, Capability::Toxicity, Capability::Fluency],
                models: vec!["fnv1a-char3-256".into(), "lexicon-ratio".into(), "constant-1".into()],
            },
        }
    }

    /// `1 - matched/total`, floored at 0. Tokens are whitespace-separated
    /// words, or non-whitespace characters for Chinese and Japanese. Text
    /// with no tokens scores 1.
    pub fn lexicon_non_toxicity(&self, lang: Lang, text: &str) -> f64 {
        let Some(lexicon) = self.lexicons.get(lang) else {
            return 1.0;
        };
        let spans = detect_spans(text, lexicon);
        let (matched, total) = if lang.is_unsegmented() {
            let covered = spans
                .iter()
                .flat_map(|s| text.chars().skip(s.start).take(s.end - s.start))
                .filter(|c| !c.is_whitespace())
                .count();
            (covered, text.chars().filter(|c| !c.is_whitespace()).count())
        } else {
            (spans.len(), text.split_whitespace().count())
        };
        if total == 0 {
            return 1.0;
        }
        (1.0 - matched as f64 / total as f64).max(0.0)
    }
}

impl Default for FallbackScorer {
    fn default() -> Self {
        FallbackScorer::new(LexiconSet::default())
    }
}

impl Scorer for FallbackScorer {
    fn name(&self) -> &str {
        "fallback"
    }

    fn manifest(&self) -> &ScorerManifest {
        &self.manifest
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        Ok(par::map(texts, |t| fallback_embed(t)))
    }

    fn non_toxicity(&self, lang: Lang, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        Ok(par::map(texts, |t| self.lexicon_non_toxicity(lang, t)))
    }

    fn fluency(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<f64>, BackendError> {
        check_aligned(self.name(), inputs.len(), golds.len(), gens.len())?;
        Ok(vec![1.0; gens.len()])
    }
}

fn check_aligned(endpoint: &str, a: usize, b: usize, c: usize) -> Result<(), BackendError> {
    if a == b && b == c {
        Ok(())
    } else {
        Err(BackendError::Protocol {
            endpoint: endpoint.to_string(),
            reason: format!("misaligned inputs ({a}, {b}, {c})"),
        })
    }
}

#[derive(Serialize)]
struct TextsRequest<'a> {
    texts: &'a [String],
}

#[derive(Serialize)]
struct TripleRequest<'a> {
    inputs: &'a [String],
    golds: &'a [String],
    gens: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
struct ToxicityResponse {
    non_toxicity: Vec<f64>,
}

#[derive(Deserialize)]
struct FluencyResponse {
    scores: Vec<f64>,
}

#[derive(Deserialize)]
struct JudgeResponse {
    sim: Vec<f64>,
    sta: Vec<f64>,
}

/// HTTP client for a scorer service. The manifest is fetched once at
/// connect time and the embedding dimension is fixed from it.
#[derive(Debug)]
pub struct RemoteScorer {
    endpoint: String,
    agent: ureq::Agent,
    manifest: ScorerManifest,
    batch_size: usize,
}

pub const DEFAULT_BATCH_SIZE: usize = 32;

impl RemoteScorer {
    pub fn connect(endpoint: &str, timeout: Duration) -> Result<Self, BackendError> {
        let endpoint = endpoint.trim_end_matches('/').to_string();
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .build()
            .into();
        let manifest: ScorerManifest = agent
            .get(format!("{endpoint}/manifest"))
            .call()
            .map_err(|e| http_error(&endpoint, e))?
            .body_mut()
            .read_json()
            .map_err(|e| http_error(&endpoint, e))?;
        if manifest.capabilities.contains(&Capability::Embed) && manifest.dim == 0 {
            return Err(BackendError::Protocol {
                endpoint,
                reason: "manifest advertises embed with dim 0".into(),
            });
        }
        Ok(RemoteScorer {
            endpoint,
            agent,
            manifest,
            batch_size: DEFAULT_BATCH_SIZE,
        })
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    fn post<Req: Serialize, Resp: for<'de> Deserialize<'de>>(&self, route: &str, body: &Req) -> Result<Resp, BackendError> {
        self.agent
            .post(format!("{}/{route}", self.endpoint))
            .send_json(body)
            .map_err(|e| http_error(&self.endpoint, e))?
            .body_mut()
            .read_json()
            .map_err(|e| http_error(&self.endpoint, e))
    }

    fn length_check(&self, expected: usize, got: usize) -> Result<(), BackendError> {
        if expected == got {
            Ok(())
        } else {
            Err(BackendError::Protocol {
                endpoint: self.endpoint.clone(),
                reason: format!("expected {expected} results, got {got}"),
            })
        }
    }

    fn ensure(&self, capability: Capability) -> Result<(), BackendError> {
        self.require(&[capability])
    }
}

fn http_error(endpoint: &str, err: ureq::Error) -> BackendError {
    match err {
        ureq::Error::StatusCode(code) => BackendError::Protocol {
            endpoint: endpoint.to_string(),
            reason: format!("HTTP status {code}"),
        },
        ureq::Error::Json(e) => BackendError::Protocol {
            endpoint: endpoint.to_string(),
            reason: format!("malformed JSON: {e}"),
        },
        other => BackendError::Unreachable {
            endpoint: endpoint.to_string(),
            reason: other.to_string(),
        },
    }
}

impl Scorer for RemoteScorer {
    fn name(&self) -> &str {
        &self.endpoint
    }

    fn manifest(&self) -> &ScorerManifest {
        &self.manifest
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.ensure(Capability::Embed)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: EmbedResponse = self.post("embed", &TextsRequest { texts: chunk })?;
            self.length_check(chunk.len(), resp.vectors.len())?;
            for v in resp.vectors {
                if v.len() != self.manifest.dim {
                    return Err(BackendError::DimensionMismatch {
                        expected: self.manifest.dim,
                        got: v.len(),
                    });
                }
                out.push(EmbeddingVector::new(v).map_err(|reason| BackendError::Protocol {
                    endpoint: self.endpoint.clone(),
                    reason,
                })?);
            }
        }
        Ok(out)
    }

    fn non_toxicity(&self, _lang: Lang, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        self.ensure(Capability::Toxicity)?;
        let mut out = Vec::with_capacity(texts.len());
        for chunk in texts.chunks(self.batch_size) {
            let resp: ToxicityResponse = self.post("toxicity", &TextsRequest { texts: chunk })?;
            self.length_check(chunk.len(), resp.non_toxicity.len())?;
            out.extend(resp.non_toxicity);
        }
        Ok(out)
    }

    fn fluency(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<f64>, BackendError> {
        self.ensure(Capability::Fluency)?;
        check_aligned(&self.endpoint, inputs.len(), golds.len(), gens.len())?;
        let mut out = Vec::with_capacity(gens.len());
        for start in (0..gens.len()).step_by(self.batch_size) {
            let end = (start + self.batch_size).min(gens.len());
            let resp: FluencyResponse = self.post(
                "fluency",
                &TripleRequest {
                    inputs: &inputs[start..end],
                    golds: &golds[start..end],
                    gens: &gens[start..end],
                },
            )?;
            self.length_check(end - start, resp.scores.len())?;
            out.extend(resp.scores);
        }
        Ok(out)
    }

    fn judge(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<JudgeScores>, BackendError> {
        self.ensure(Capability::Judge)?;
        check_aligned(&self.endpoint, inputs.len(), golds.len(), gens.len())?;
        let mut out = Vec::with_capacity(gens.len());
        for start in (0..gens.len()).step_by(self.batch_size) {
            let end = (start + self.batch_size).min(gens.len());
            let resp: JudgeResponse = self.post(
                "judge",
                &TripleRequest {
                    inputs: &inputs[start..end],
                    golds: &golds[start..end],
                    gens: &gens[start..end],
                },
            )?;
            self.length_check(end - start, resp.sim.len())?;
            self.length_check(end - start, resp.sta.len())?;
            out.extend(resp.sim.into_iter().zip(resp.sta).map(|(sim, sta)| JudgeScores { sim, sta }));
        }
        Ok(out)
    }
}

/// Scorer selected from a `fallback` or URL setting.
#[derive(Debug)]
pub enum ScorerBackend {
    Fallback(FallbackScorer),
    Remote(RemoteScorer),
}

impl ScorerBackend {
    pub fn from_setting(setting: &str, lexicons: LexiconSet, timeout: Duration) -> Result<Self, BackendError> {
        if setting == "fallback" {
            Ok(ScorerBackend::Fallback(FallbackScorer::new(lexicons)))
        } else {
            RemoteScorer::connect(setting, timeout).map(ScorerBackend::Remote)
        }
    }

    fn inner(&self) -> &dyn Scorer {
        match self {
            ScorerBackend::Fallback(s) => s,
            ScorerBackend::Remote(s) => s,
        }
    }
}

impl Scorer for ScorerBackend {
    fn name(&self) -> &str {
        self.inner().name()
    }

    fn manifest(&self) -> &ScorerManifest {
        self.inner().manifest()
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.inner().embed(texts)
    }

    fn non_toxicity(&self, lang: Lang, texts: &[String]) -> Result<Vec<f64>, BackendError> {
        self.inner().non_toxicity(lang, texts)
    }

    fn fluency(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<f64>, BackendError> {
        self.inner().fluency(inputs, golds, gens)
    }

    fn judge(&self, inputs: &[String], golds: &[String], gens: &[String]) -> Result<Vec<JudgeScores>, BackendError> {
        self.inner().judge(inputs, golds, gens)
    }
}
