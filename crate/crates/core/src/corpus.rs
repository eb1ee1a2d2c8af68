//! Corpus data model: parallel pairs, lexicons, score tables, and their
//! on-disk formats.
//!
//! JSONL is the interchange format. One pair per line:
//!
//! ```text
//! {"id":"en-000000","lang":"en","toxic":"...","neutral":"..."|null,
//!  "source":"human","neighbor_ids":[...],"toxic_spans":[{"start":0,"end":5,"term":"..."}]}
//! ```
//!
//! Span offsets count Unicode scalar values, end exclusive. TSV input is
//! accepted for raw two-column (toxic, neutral) sources only.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::spans::ToxicSpan;
use crate::text::normalize;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Invalid {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("duplicate pair id {0:?}")]
    DuplicateId(String),
    #[error("pair {id:?}: {reason}")]
    InvalidPair { id: String, reason: String },
    #[error("unknown language code {0:?}")]
    UnknownLanguage(String),
}

impl CorpusError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        CorpusError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// True for malformed or inconsistent content, false for IO failures.
    pub fn is_validation(&self) -> bool {
        !matches!(self, CorpusError::Io { .. })
    }
}

/// One of the fifteen task languages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Lang {
    En,
    Es,
    De,
    Zh,
    Ar,
    Hi,
    Uk,
    Ru,
    Am,
    It,
    Fr,
    He,
    Hin,
    Ja,
    Tt,
}

impl Lang {
    pub const ALL: [Lang; 15] = [
        Lang::En,
        Lang::Es,
        Lang::De,
        Lang::Zh,
        Lang::Ar,
        Lang::Hi,
        Lang::Uk,
        Lang::Ru,
        Lang::Am,
        Lang::It,
        Lang::Fr,
        Lang::He,
        Lang::Hin,
        Lang::Ja,
        Lang::Tt,
    ];

    pub fn code(self) -> &'static str {
        match self {
            Lang::En => "en",
            Lang::Es => "es",
            Lang::De => "de",
            Lang::Zh => "zh",
            Lang::Ar => "ar",
            Lang::Hi => "hi",
            Lang::Uk => "uk",
            Lang::Ru => "ru",
            Lang::Am => "am",
            Lang::It => "it",
            Lang::Fr => "fr",
            Lang::He => "he",
            Lang::Hin => "hin",
            Lang::Ja => "ja",
            Lang::Tt => "tt",
        }
    }

    pub fn english_name(self) -> &'static str {
        match self {
            Lang::En => "English",
            Lang::Es => "Spanish",
            Lang::De => "German",
            Lang::Zh => "Chinese",
            Lang::Ar => "Arabic",
            Lang::Hi => "Hindi",
            Lang::Uk => "Ukrainian",
            Lang::Ru => "Russian",
            Lang::Am => "Amharic",
            Lang::It => "Italian",
            Lang::Fr => "French",
            Lang::He => "Hebrew",
            Lang::Hin => "Hinglish",
            Lang::Ja => "Japanese",
            Lang::Tt => "Tatar",
        }
    }

    /// Scripts written without whitespace word boundaries.
    pub fn is_unsegmented(self) -> bool {
        matches!(self, Lang::Zh | Lang::Ja)
    }
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Lang {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lang::ALL
            .into_iter()
            .find(|l| l.code() == s)
            .ok_or_else(|| CorpusError::UnknownLanguage(s.to_string()))
    }
}

impl TryFrom<String> for Lang {
    type Error = CorpusError;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Lang> for String {
    fn from(lang: Lang) -> String {
        lang.code().to_string()
    }
}

/// Provenance of a pair. Selects the semantic-preservation threshold during cleaning.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    Human,
    MachineTranslated,
    Synthetic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: String,
    pub lang: Lang,
    pub toxic: String,
    /// `None` for toxicity-only records.
    pub neutral: Option<String>,
    #[serde(default)]
    pub source: SourceKind,
    #[serde(default)]
    pub neighbor_ids: Vec<String>,
    #[serde(default)]
    pub toxic_spans: Vec<ToxicSpan>,
}

impl ParallelPair {
    pub fn new(id: impl Into<String>, lang: Lang, toxic: impl Into<String>, neutral: Option<String>) -> Self {
        ParallelPair {
            id: id.into(),
            lang,
            toxic: toxic.into(),
            neutral,
            source: SourceKind::Human,
            neighbor_ids: Vec::new(),
            toxic_spans: Vec::new(),
        }
    }

    pub fn with_source(mut self, source: SourceKind) -> Self {
        self.source = source;
        self
    }

    /// Checks the invariants that do not depend on other pairs.
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |reason: &str| CorpusError::InvalidPair {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.toxic.trim().is_empty() {
            return Err(bad("empty toxic field"));
        }
        let mut seen = HashSet::new();
        for n in &self.neighbor_ids {
            if n == &self.id {
                return Err(bad("lists itself as a neighbour"));
            }
            if !seen.insert(n.as_str()) {
                return Err(bad(&format!("duplicate neighbour {n:?}")));
            }
        }
        let len = self.toxic.chars().count();
        let mut prev_end = 0;
        for span in &self.toxic_spans {
            if span.start >= span.end || span.end > len || span.start < prev_end {
                return Err(bad(&format!(
                    "span [{}, {}) out of order or out of bounds",
                    span.start, span.end
                )));
            }
            prev_end = span.end;
        }
        Ok(())
    }
}

/// Default id for the `index`-th record of a language: `<lang>-<index:06>`.
pub fn derived_id(lang: Lang, index: usize) -> String {
    format!("{lang}-{index:06}")
}

/// Validates a whole corpus: per-pair invariants, unique ids, and
/// same-language neighbours.
///
/// Neighbour ids that do not resolve inside `pairs` are accepted; they may
/// point into a separate retrieval corpus.
pub fn validate_corpus(pairs: &[ParallelPair]) -> Result<(), CorpusError> {
    let mut by_id: HashMap<&str, Lang> = HashMap::with_capacity(pairs.len());
    for p in pairs {
        p.validate()?;
        if by_id.insert(&p.id, p.lang).is_some() {
            return Err(CorpusError::DuplicateId(p.id.clone()));
        }
    }
    for p in pairs {
        for n in &p.neighbor_ids {
            if let Some(&lang) = by_id.get(n.as_str()) {
                if lang != p.lang {
                    return Err(CorpusError::InvalidPair {
                        id: p.id.clone(),
                        reason: format!("neighbour {n:?} is {lang}, expected {}", p.lang),
                    });
                }
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum PairFormat {
    Jsonl,
    /// Tab-separated `toxic<TAB>neutral` rows. An empty neutral column
    /// becomes a toxicity-only record.
    Tsv {
        lang: Lang,
        source: SourceKind,
        has_header: bool,
    },
}

/// Loose line shape: `id` may be omitted and is then derived.
#[derive(Deserialize)]
struct RawPair {
    id: Option<String>,
    lang: String,
    toxic: String,
    #[serde(default)]
    neutral: Option<String>,
    #[serde(default)]
    source: SourceKind,
    #[serde(default)]
    neighbor_ids: Vec<String>,
    #[serde(default)]
    toxic_spans: Vec<ToxicSpan>,
}

pub fn load_pairs(path: &Path, format: &PairFormat) -> Result<Vec<ParallelPair>, CorpusError> {
    let file = File::open(path).map_err(|e| CorpusError::io(path, e))?;
    read_pairs(BufReader::new(file), path, format)
}

/// Reads pairs from any buffered reader; `origin` only labels diagnostics.
pub fn read_pairs<R: BufRead>(reader: R, origin: &Path, format: &PairFormat) -> Result<Vec<ParallelPair>, CorpusError> {
    let invalid = |line: usize, reason: String| CorpusError::Invalid {
        path: origin.to_path_buf(),
        line,
        reason,
    };
    let mut pairs = Vec::new();
    let mut per_lang: BTreeMap<Lang, usize> = BTreeMap::new();
    let mut ids: HashSet<String> = HashSet::new();

    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| CorpusError::io(origin, e))?;
        let pair = match format {
            PairFormat::Jsonl => {
                if line.trim().is_empty() {
                    continue;
                }
                let raw: RawPair =
                    serde_json::from_str(&line).map_err(|e| invalid(lineno, format!("malformed record: {e}")))?;
                let lang: Lang = raw.lang.parse().map_err(|e: CorpusError| invalid(lineno, e.to_string()))?;
                let n = per_lang.entry(lang).or_default();
                let id = raw.id.unwrap_or_else(|| derived_id(lang, *n));
                *n += 1;
                ParallelPair {
                    id,
                    lang,
                    toxic: raw.toxic,
                    neutral: raw.neutral,
                    source: raw.source,
                    neighbor_ids: raw.neighbor_ids,
                    toxic_spans: raw.toxic_spans,
                }
            }
            PairFormat::Tsv {
                lang,
                source,
                has_header,
            } => {
                if (*has_header && idx == 0) || line.trim().is_empty() {
                    continue;
                }
                let mut cols = line.split('\t');
                let toxic = cols.next().unwrap_or_default().to_string();
                let neutral = cols.next().map(str::to_string).filter(|s| !s.is_empty());
                if cols.next().is_some() {
                    return Err(invalid(lineno, "expected at most two tab-separated columns".into()));
                }
                let n = per_lang.entry(*lang).or_default();
                let id = derived_id(*lang, *n);
                *n += 1;
                ParallelPair {
                    id,
                    lang: *lang,
                    toxic,
                    neutral,
                    source: *source,
                    neighbor_ids: Vec::new(),
                    toxic_spans: Vec::new(),
                }
            }
        };
        pair.validate().map_err(|e| invalid(lineno, e.to_string()))?;
        if !ids.insert(pair.id.clone()) {
            return Err(invalid(lineno, format!("duplicate pair id {:?}", pair.id)));
        }
        pairs.push(pair);
    }
    validate_corpus(&pairs)?;
    Ok(pairs)
}

/// Writes pairs as JSONL and returns the record count. Output bytes depend
/// only on the input content and order.
pub fn write_pairs(pairs: &[ParallelPair], path: &Path) -> Result<usize, CorpusError> {
    let file = File::create(path).map_err(|e| CorpusError::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_pairs_to(pairs, &mut w).map_err(|e| CorpusError::io(path, e))?;
    w.flush().map_err(|e| CorpusError::io(path, e))?;
    Ok(pairs.len())
}

pub fn write_pairs_to<W: Write>(pairs: &[ParallelPair], w: &mut W) -> std::io::Result<()> {
    for p in pairs {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// Per-language set of toxic terms, stored NFC-normalised and lower-cased.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicon {
    pub lang: Lang,
    terms: BTreeSet<String>,
}

impl Lexicon {
    pub fn new<I, S>(lang: Lang, terms: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let terms = terms
            .into_iter()
            .map(|t| normalize(t.as_ref().trim()))
            .filter(|t| !t.is_empty())
            .collect();
        Lexicon { lang, terms }
    }

    pub fn empty(lang: Lang) -> Self {
        Lexicon {
            lang,
            terms: BTreeSet::new(),
        }
    }

    /// `term` must already be normalised.
    pub fn contains(&self, term: &str) -> bool {
        self.terms.contains(term)
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.terms.iter().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Longest term in scalar values.
    pub fn max_term_chars(&self) -> usize {
        self.terms.iter().map(|t| t.chars().count()).max().unwrap_or(0)
    }
}

/// Loads a one-term-per-line lexicon. Blank lines and `#` comments are skipped.
/// An empty result is logged as a warning, not an error.
pub fn load_lexicon(path: &Path, lang: Lang) -> Result<Lexicon, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let lexicon = Lexicon::new(
        lang,
        text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')),
    );
    if lexicon.is_empty() {
        log::warn!("{}: lexicon for {lang} has no usable terms", path.display());
    }
    Ok(lexicon)
}

/// Lexicons keyed by language.
#[derive(Clone, Debug, Default)]
pub struct LexiconSet {
    by_lang: BTreeMap<Lang, Lexicon>,
}

impl LexiconSet {
    pub fn insert(&mut self, lexicon: Lexicon) {
        self.by_lang.insert(lexicon.lang, lexicon);
    }

    pub fn get(&self, lang: Lang) -> Option<&Lexicon> {
        self.by_lang.get(&lang)
    }

    /// Lexicon for `lang`, or an empty one when none was loaded.
    pub fn get_or_empty(&self, lang: Lang) -> std::borrow::Cow<'_, Lexicon> {
        match self.by_lang.get(&lang) {
            Some(l) => std::borrow::Cow::Borrowed(l),
            None => std::borrow::Cow::Owned(Lexicon::empty(lang)),
        }
    }

    pub fn len(&self) -> usize {
        self.by_lang.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_lang.is_empty()
    }

    /// Loads every `<lang>.txt` in `dir`. Other files are ignored.
    pub fn load_dir(dir: &Path) -> Result<Self, CorpusError> {
        let mut set = LexiconSet::default();
        let entries = std::fs::read_dir(dir).map_err(|e| CorpusError::io(dir, e))?;
        let mut paths: Vec<PathBuf> = entries
            .map(|e| e.map(|e| e.path()).map_err(|err| CorpusError::io(dir, err)))
            .collect::<Result<_, _>>()?;
        paths.sort();
        for path in paths {
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            match stem.parse::<Lang>() {
                Ok(lang) => set.insert(load_lexicon(&path, lang)?),
                Err(_) => log::warn!("{}: not a language code, skipped", path.display()),
            }
        }
        Ok(set)
    }
}

/// Per-language pair counts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub per_lang: BTreeMap<Lang, usize>,
    pub total: usize,
}

pub fn corpus_stats(pairs: &[ParallelPair]) -> CorpusStats {
    let mut per_lang: BTreeMap<Lang, usize> = Lang::ALL.iter().map(|&l| (l, 0)).collect();
    for p in pairs {
        *per_lang.entry(p.lang).or_default() += 1;
    }
    CorpusStats {
        total: per_lang.values().sum(),
        per_lang,
    }
}

impl CorpusStats {
    /// Aligned table in the task's language order.
    pub fn render(&self) -> String {
        let mut out = format!("{:<16}{:>8}\n", "Language", "Pairs");
        for lang in Lang::ALL {
            let label = format!("{} ({})", lang.english_name(), lang);
            out.push_str(&format!("{label:<16}{:>8}\n", self.per_lang.get(&lang).copied().unwrap_or(0)));
        }
        out.push_str(&format!("{:<16}{:>8}\n", "Total", self.total));
        out
    }
}

/// Scores keyed by (system name, language), every score in `[0, 1]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ScoreTable {
    rows: BTreeMap<(String, Lang), f64>,
}

impl ScoreTable {
    pub fn insert(&mut self, system: &str, lang: Lang, score: f64) -> Result<(), CorpusError> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CorpusError::InvalidPair {
                id: format!("{system}/{lang}"),
                reason: format!("score {score} outside [0, 1]"),
            });
        }
        self.rows.insert((system.to_string(), lang), score);
        Ok(())
    }

    pub fn get(&self, system: &str, lang: Lang) -> Option<f64> {
        self.rows.get(&(system.to_string(), lang)).copied()
    }

    pub fn systems(&self) -> BTreeSet<&str> {
        self.rows.keys().map(|(s, _)| s.as_str()).collect()
    }

    /// All language scores recorded for `system`.
    pub fn scores_for(&self, system: &str) -> BTreeMap<Lang, f64> {
        self.rows
            .iter()
            .filter(|((s, _), _)| s == system)
            .map(|((_, l), v)| (*l, *v))
            .collect()
    }

    /// Mean over the given languages; `None` if any is missing.
    pub fn mean_over(&self, system: &str, langs: &[Lang]) -> Option<f64> {
        if langs.is_empty() {
            return None;
        }
        let mut sum = 0.0;
        for &l in langs {
            sum += self.get(system, l)?;
        }
        Some(sum / langs.len() as f64)
    }

    /// Parses `system<TAB>lang<TAB>score` rows; `#` lines and blanks skipped.
    pub fn parse_tsv(text: &str, origin: &Path) -> Result<Self, CorpusError> {
        let mut table = ScoreTable::default();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let invalid = |reason: String| CorpusError::Invalid {
                path: origin.to_path_buf(),
                line: idx + 1,
                reason,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            let [system, lang, score] = cols[..] else {
                return Err(invalid(format!("expected 3 columns, found {}", cols.len())));
            };
            let lang: Lang = lang.parse().map_err(|e: CorpusError| invalid(e.to_string()))?;
            let score: f64 = score.parse().map_err(|_| invalid(format!("bad score {score:?}")))?;
            table.insert(system, lang, score).map_err(|e| invalid(e.to_string()))?;
        }
        Ok(table)
    }

    pub fn load_tsv(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::parse_tsv(&text, path)
    }
}
