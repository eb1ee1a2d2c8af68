//! Multilingual text detoxification toolkit: corpus curation, lexicon span
//! detection, few-shot prompting, best-of-n selection, evaluation metrics
//! and cross-language analysis of variance.

pub mod anova;
pub mod cleaning;
pub mod corpus;
pub mod embeddings;
pub mod metrics;
pub mod par;
pub mod prompting;
pub mod scorer;
pub mod spans;
pub mod text;
pub mod cli;
