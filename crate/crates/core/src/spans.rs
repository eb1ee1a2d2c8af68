//! Lexicon-driven detection of explicit toxic terms, and the Delete and
//! Duplicate reference detoxifiers built on it.
//!
//! Space-delimited languages are matched per whitespace token after
//! stripping leading and trailing punctuation. Chinese and Japanese have no
//! whitespace word boundaries, so every substring is a candidate; among
//! overlapping occurrences the longest wins, then the leftmost.
//! Matching is on NFC + lower-case forms only.

use serde::{Deserialize, Serialize};

use crate::corpus::Lexicon;
use crate::text::{is_punctuation, normalize};

/// A matched term. Offsets are scalar-value indices into the original text,
/// `start` inclusive and `end` exclusive.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ToxicSpan {
    pub start: usize,
    pub end: usize,
    pub term: String,
}

pub fn detect_spans(text: &str, lexicon: &Lexicon) -> Vec<ToxicSpan> {
    if lexicon.is_empty() || text.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = text.chars().collect();
    if lexicon.lang.is_unsegmented() {
        substring_spans(&chars, lexicon)
    } else {
        token_spans(&chars, lexicon)
    }
}

fn token_spans(chars: &[char], lexicon: &Lexicon) -> Vec<ToxicSpan> {
    let mut spans = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        if chars[i].is_whitespace() {
            i += 1;
            continue;
        }
        let tok_start = i;
        while i < chars.len() && !chars[i].is_whitespace() {
            i += 1;
        }
        let (mut s, mut e) = (tok_start, i);
        while s < e && is_punctuation(chars[s]) {
            s += 1;
        }
        while e > s && is_punctuation(chars[e - 1]) {
            e -= 1;
        }
        if s == e {
            continue;
        }
        let form = normalize(&chars[s..e].iter().collect::<String>());
        if lexicon.contains(&form) {
            spans.push(ToxicSpan {
                start: s,
                end: e,
                term: form,
            });
        }
    }
    spans
}

fn substring_spans(chars: &[char], lexicon: &Lexicon) -> Vec<ToxicSpan> {
    // Lower-casing and composition can change length, so windows over the
    // original text are allowed to run somewhat past the longest term.
    let max_window = lexicon.max_term_chars() * 2 + 2;
    let mut found = Vec::new();
    for start in 0..chars.len() {
        let mut window = String::new();
        for end in start + 1..=(start + max_window).min(chars.len()) {
            window.push(chars[end - 1]);
            let form = normalize(&window);
            if lexicon.contains(&form) {
                found.push(ToxicSpan { start, end, term: form });
            }
        }
    }
    found.sort_by(|a, b| (b.end - b.start).cmp(&(a.end - a.start)).then(a.start.cmp(&b.start)));
    let mut taken = vec![false; chars.len()];
    let mut spans = Vec::new();
    for span in found {
        if taken[span.start..span.end].iter().any(|&t| t) {
            continue;
        }
        taken[span.start..span.end].iter_mut().for_each(|t| *t = true);
        spans.push(span);
    }
    spans.sort_by_key(|s| s.start);
    spans
}

/// Removes every detected term. Repeats until no match remains, since in
/// unsegmented scripts a removal can join two fragments into a new match.
/// Text without matches is returned unchanged.
pub fn delete_detoxify(text: &str, lexicon: &Lexicon) -> String {
    let mut current = text.to_string();
    loop {
        let spans = detect_spans(&current, lexicon);
        if spans.is_empty() {
            return current;
        }
        current = tidy(&remove_spans(&current, &spans));
    }
}

fn remove_spans(text: &str, spans: &[ToxicSpan]) -> String {
    let mut out = String::with_capacity(text.len());
    let mut next = spans.iter().peekable();
    for (i, c) in text.chars().enumerate() {
        while next.peek().is_some_and(|s| s.end <= i) {
            next.next();
        }
        if next.peek().is_some_and(|s| s.start <= i && i < s.end) {
            continue;
        }
        out.push(c);
    }
    out
}

/// Collapses runs of spaces left by removals and trims the ends.
fn tidy(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut prev_space = false;
    for c in text.chars() {
        if c == ' ' {
            if !prev_space {
                out.push(c);
            }
            prev_space = true;
        } else {
            out.push(c);
            prev_space = false;
        }
    }
    out.trim().to_string()
}

/// The trivial baseline: echoes the source sentence.
pub fn duplicate_detoxify(text: &str) -> String {
    text.to_string()
}
