//! Span-tag wire protocol.
//!
//! Each PII span is wrapped in a three-character, category-specific delimiter
//! (`@@@JOHN SMITH@@@`). The same format is what extractor backends return and
//! what tagged output files contain. All offsets are Unicode scalar-value
//! indices into the delimiter-free text.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const DELIMITER_LEN: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PiiCategory {
    Name,
    Phone,
    Email,
    HomeAddress,
    Alphanumeric,
}

impl PiiCategory {
    pub const ALL: [PiiCategory; 5] = [
        PiiCategory::Name,
        PiiCategory::Phone,
        PiiCategory::Email,
        PiiCategory::HomeAddress,
        PiiCategory::Alphanumeric,
    ];

    /// The character repeated three times to form this category's delimiter.
    pub const fn delimiter_char(self) -> char {
        match self {
            PiiCategory::Name => '@',
            PiiCategory::Phone => '&',
            PiiCategory::Email => '%',
            PiiCategory::HomeAddress => '$',
            PiiCategory::Alphanumeric => '^',
        }
    }

    pub const fn delimiter(self) -> &'static str {
        match self {
            PiiCategory::Name => "@@@",
            PiiCategory::Phone => "&&&",
            PiiCategory::Email => "%%%",
            PiiCategory::HomeAddress => "$$$",
            PiiCategory::Alphanumeric => "^^^",
        }
    }

    pub const fn as_str(self) -> &'static str {
        match self {
            PiiCategory::Name => "name",
            PiiCategory::Phone => "phone",
            PiiCategory::Email => "email",
            PiiCategory::HomeAddress => "home_address",
            PiiCategory::Alphanumeric => "alphanumeric",
        }
    }

    fn from_delimiter_char(c: char) -> Option<Self> {
        PiiCategory::ALL.into_iter().find(|cat| cat.delimiter_char() == c)
    }

    /// Phone and email are owned by the rule recognizers.
    pub const fn is_rule_owned(self) -> bool {
        matches!(self, PiiCategory::Phone | PiiCategory::Email)
    }
}

impl fmt::Display for PiiCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PiiCategory {
    type Err = UnknownCategory;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PiiCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| UnknownCategory(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown PII category {0:?}")]
pub struct UnknownCategory(pub String);

/// One detected entity. `start..end` is a half-open char range into the
/// delimiter-free narrative and `surface` is exactly the text in that range.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PiiSpan {
    pub category: PiiCategory,
    pub start: usize,
    pub end: usize,
    pub surface: String,
}

impl PiiSpan {
    pub fn new(category: PiiCategory, start: usize, end: usize, surface: impl Into<String>) -> Self {
        PiiSpan {
            category,
            start,
            end,
            surface: surface.into(),
        }
    }

    /// Builds a span from a char range of `text`, copying the surface.
    pub fn from_text(category: PiiCategory, text: &str, start: usize, end: usize) -> Self {
        let surface: String = text.chars().skip(start).take(end.saturating_sub(start)).collect();
        PiiSpan::new(category, start, end, surface)
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end <= self.start
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TagError {
    #[error("unbalanced {category} delimiter opened at offset {offset}")]
    UnbalancedDelimiter { category: PiiCategory, offset: usize },
    #[error("{inner} delimiter at offset {offset} inside an open {outer} tag")]
    NestedOrOverlappingTags {
        outer: PiiCategory,
        inner: PiiCategory,
        offset: usize,
    },
    #[error("empty {category} span at offset {offset}")]
    EmptySpan { category: PiiCategory, offset: usize },
    #[error("spans [{first_start},{first_end}) and [{second_start},{second_end}) overlap")]
    OverlappingSpans {
        first_start: usize,
        first_end: usize,
        second_start: usize,
        second_end: usize,
    },
    #[error("span [{start},{end}) out of range for text of length {len}")]
    OffsetOutOfRange { start: usize, end: usize, len: usize },
    #[error("span [{start},{end}) surface {surface:?} does not match text {actual:?}")]
    SurfaceMismatch {
        start: usize,
        end: usize,
        surface: String,
        actual: String,
    },
    #[error("span surface {0:?} contains a delimiter sequence")]
    DelimiterInSurface(String),
    #[error("tagged output would not parse back to the same spans (delimiter characters adjacent to a tag boundary)")]
    AmbiguousBoundary,
}

/// Category of the delimiter starting at `chars[i]`, if any.
fn delimiter_at(chars: &[char], i: usize) -> Option<PiiCategory> {
    let window = chars.get(i..i + DELIMITER_LEN)?;
    let cat = PiiCategory::from_delimiter_char(window[0])?;
    window.iter().all(|&c| c == window[0]).then_some(cat)
}

/// True if `text` contains any of the five delimiter sequences.
pub fn contains_delimiter(text: &str) -> bool {
    let chars: Vec<char> = text.chars().collect();
    (0..chars.len()).any(|i| delimiter_at(&chars, i).is_some())
}

/// Deletes every delimiter sequence, scanning left to right.
pub fn strip_delimiters(tagged: &str) -> String {
    let chars: Vec<char> = tagged.chars().collect();
    let mut out = String::with_capacity(tagged.len());
    let mut i = 0;
    while i < chars.len() {
        if delimiter_at(&chars, i).is_some() {
            i += DELIMITER_LEN;
        } else {
            out.push(chars[i]);
            i += 1;
        }
    }
    out
}

/// Hallucination guard: the tagged text must be the original with only
/// delimiters inserted.
pub fn detag_equals(tagged: &str, original: &str) -> bool {
    strip_delimiters(tagged) == original
}

/// Parses tagged text into the delimiter-free text and its spans, in
/// ascending start order.
pub fn parse_tagged(tagged: &str) -> Result<(String, Vec<PiiSpan>), TagError> {
    let chars: Vec<char> = tagged.chars().collect();
    let mut clean = String::with_capacity(tagged.len());
    let mut clean_len = 0usize;
    let mut spans = Vec::new();
    // (category, raw offset of opening delimiter, clean offset where span starts)
    let mut open: Option<(PiiCategory, usize, usize)> = None;

    let mut i = 0;
    while i < chars.len() {
        let Some(cat) = delimiter_at(&chars, i) else {
            clean.push(chars[i]);
            clean_len += 1;
            i += 1;
            continue;
        };
        match open {
            None => open = Some((cat, i, clean_len)),
            Some((outer, _, start)) if outer == cat => {
                if clean_len == start {
                    return Err(TagError::EmptySpan {
                        category: cat,
                        offset: i,
                    });
                }
                let surface: String = clean.chars().skip(start).collect();
                spans.push(PiiSpan::new(cat, start, clean_len, surface));
                open = None;
            }
            Some((outer, _, _)) => {
                return Err(TagError::NestedOrOverlappingTags {
                    outer,
                    inner: cat,
                    offset: i,
                })
            }
        }
        i += DELIMITER_LEN;
    }

    if let Some((category, offset, _)) = open {
        return Err(TagError::UnbalancedDelimiter { category, offset });
    }
    Ok((clean, spans))
}

/// Wraps each span of `clean_text` in its category delimiter.
///
/// Spans may be given in any order; they are emitted by ascending start. The
/// result is re-parsed before returning so that a successful return always
/// round-trips through [`parse_tagged`].
pub fn serialize_spans(clean_text: &str, spans: &[PiiSpan]) -> Result<String, TagError> {
    let chars: Vec<char> = clean_text.chars().collect();
    let mut ordered: Vec<&PiiSpan> = spans.iter().collect();
    ordered.sort_by_key(|s| (s.start, s.end));

    for span in &ordered {
        if span.start >= span.end || span.end > chars.len() {
            return Err(TagError::OffsetOutOfRange {
                start: span.start,
                end: span.end,
                len: chars.len(),
            });
        }
        let actual: String = chars[span.start..span.end].iter().collect();
        if actual != span.surface {
            return Err(TagError::SurfaceMismatch {
                start: span.start,
                end: span.end,
                surface: span.surface.clone(),
                actual,
            });
        }
        if contains_delimiter(&span.surface) {
            return Err(TagError::DelimiterInSurface(span.surface.clone()));
        }
    }
    for pair in ordered.windows(2) {
        if pair[1].start < pair[0].end {
            return Err(TagError::OverlappingSpans {
                first_start: pair[0].start,
                first_end: pair[0].end,
                second_start: pair[1].start,
                second_end: pair[1].end,
            });
        }
    }

    let mut out = String::with_capacity(clean_text.len() + ordered.len() * 2 * DELIMITER_LEN);
    let mut cursor = 0;
    for span in &ordered {
        out.extend(&chars[cursor..span.start]);
        out.push_str(span.category.delimiter());
        out.extend(&chars[span.start..span.end]);
        out.push_str(span.category.delimiter());
        cursor = span.end;
    }
    out.extend(&chars[cursor..]);

    match parse_tagged(&out) {
        Ok((reclean, respans))
            if reclean == clean_text
                && respans.len() == ordered.len()
                && respans.iter().zip(&ordered).all(|(a, b)| a == *b) =>
        {
            Ok(out)
        }
        _ => Err(TagError::AmbiguousBoundary),
    }
}

/// Lenient scan used when the source narrative itself contains delimiter
/// sequences and strict parsing is meaningless. Returns every
/// `(category, surface)` pair found between two matching delimiters with no
/// other delimiter in between. Callers must ground each surface against the
/// narrative themselves.
pub fn scan_tagged_surfaces(tagged: &str) -> Vec<(PiiCategory, String)> {
    let chars: Vec<char> = tagged.chars().collect();
    let mut found = Vec::new();
    let mut open: Option<(PiiCategory, usize)> = None;
    let mut i = 0;
    while i < chars.len() {
        match delimiter_at(&chars, i) {
            Some(cat) => {
                match open {
                    Some((outer, start)) if outer == cat && start < i => {
                        found.push((cat, chars[start..i].iter().collect()));
                        open = None;
                    }
                    _ => open = Some((cat, i + DELIMITER_LEN)),
                }
                i += DELIMITER_LEN;
            }
            None => i += 1,
        }
    }
    found
}
