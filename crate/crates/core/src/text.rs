//! Shared text normalisation.

use unicode_normalization::UnicodeNormalization;
use unicode_properties::{GeneralCategoryGroup, UnicodeGeneralCategory};

/// NFC normalisation followed by Unicode default lower-casing.
pub fn normalize(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

pub fn is_punctuation(c: char) -> bool {
    c.general_category_group() == GeneralCategoryGroup::Punctuation
}

/// Length in Unicode scalar values.
pub fn scalar_len(text: &str) -> usize {
    text.chars().count()
}

/// Slice by scalar-value offsets, end exclusive. Offsets past the end clamp.
pub fn slice_chars(text: &str, start: usize, end: usize) -> &str {
    let mut indices = text.char_indices().map(|(i, _)| i).chain(std::iter::once(text.len()));
    let from = indices.nth(start).unwrap_or(text.len());
    let to = if end > start {
        indices.nth(end - start - 1).unwrap_or(text.len())
    } else {
        from
    };
    &text[from..to]
}
