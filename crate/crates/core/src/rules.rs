//! Deterministic recognizers for structure-dominant PII.
//!
//! Phone grammar (NANP shape, U.S. only):
//!
//! ```text
//! phone   := [prefix] body
//! prefix  := ("+1" | "1") ("-" | "." | " ")
//! body    := AAA s XXX s NNNN            s in {"-", ".", " ", ""}, same s both places
//!          | "(" AAA ")" t XXX u NNNN    t in {"", " "}, u in {"-", ".", " "}
//! ```
//!
//! `AAA` (area code) and `XXX` (exchange) start with 2-9. A match may not be
//! glued to a letter or digit on either side, nor chained to further digits
//! through a `-` or `.`. Seven-digit local numbers are never matched.
//!
//! Email grammar: `local@domain` where local is `[A-Za-z0-9._%+-]` plus `_`
//! with no leading, trailing or doubled dot, and domain is two or more
//! dot-separated labels whose last label is alphabetic and at least two long.

use serde::{Deserialize, Serialize};

use crate::tagspec::{PiiCategory, PiiSpan};

pub const PHONE_PATTERN_ID: &str = "us_phone_strict_v1";
pub const EMAIL_PATTERN_ID: &str = "email_v1";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub category: PiiCategory,
    pub span: PiiSpan,
    pub pattern_id: String,
}

impl RuleMatch {
    fn new(category: PiiCategory, chars: &[char], start: usize, end: usize, pattern_id: &str) -> Self {
        RuleMatch {
            category,
            span: PiiSpan::new(category, start, end, chars[start..end].iter().collect::<String>()),
            pattern_id: pattern_id.to_string(),
        }
    }

    pub fn surface(&self) -> &str {
        &self.span.surface
    }
}

/// All phone and email matches, phones first.
pub fn find_all(text: &str) -> Vec<RuleMatch> {
    let mut out = find_phones(text);
    out.extend(find_emails(text));
    out
}

pub fn find_phones(text: &str) -> Vec<RuleMatch> {
    let chars: Vec<char> = text.chars().collect();
    let mut matches = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        match longest_phone_at(&chars, i) {
            Some(end) => {
                matches.push(RuleMatch::new(PiiCategory::Phone, &chars, i, end, PHONE_PATTERN_ID));
                i = end;
            }
            None => i += 1,
        }
    }
    matches
}

fn digit(chars: &[char], i: usize) -> bool {
    chars.get(i).is_some_and(|c| c.is_ascii_digit())
}

fn lead_digit(chars: &[char], i: usize) -> bool {
    chars.get(i).is_some_and(|c| ('2'..='9').contains(c))
}

fn digits(chars: &[char], i: usize, n: usize) -> bool {
    (i..i + n).all(|j| digit(chars, j))
}

fn is_char(chars: &[char], i: usize, c: char) -> bool {
    chars.get(i) == Some(&c)
}

/// Positions just past each prefix that can start at `i`, including the empty prefix.
fn prefix_ends(chars: &[char], i: usize) -> Vec<usize> {
    let mut ends = vec![i];
    let after_one = if is_char(chars, i, '+') && is_char(chars, i + 1, '1') {
        Some(i + 2)
    } else if is_char(chars, i, '1') {
        Some(i + 1)
    } else {
        None
    };
    if let Some(p) = after_one {
        if chars.get(p).is_some_and(|c| matches!(c, '-' | '.' | ' ')) {
            ends.push(p + 1);
        }
    }
    ends
}

/// End offsets of every phone body starting at `i`.
fn body_ends(chars: &[char], i: usize) -> Vec<usize> {
    let mut ends = Vec::new();

    // AAA s XXX s NNNN
    if lead_digit(chars, i) && digits(chars, i, 3) {
        for sep in [Some('-'), Some('.'), Some(' '), None] {
            let w = usize::from(sep.is_some());
            let sep_ok = |at: usize| sep.is_none_or(|c| is_char(chars, at, c));
            let x = i + 3 + w;
            if sep_ok(i + 3) && lead_digit(chars, x) && digits(chars, x, 3) && sep_ok(x + 3) && digits(chars, x + 3 + w, 4) {
                ends.push(x + 3 + w + 4);
            }
        }
    }

    // (AAA) t XXX u NNNN
    if is_char(chars, i, '(') && lead_digit(chars, i + 1) && digits(chars, i + 1, 3) && is_char(chars, i + 4, ')') {
        for t in [0usize, 1] {
            if t == 1 && !is_char(chars, i + 5, ' ') {
                continue;
            }
            let x = i + 5 + t;
            if !(lead_digit(chars, x) && digits(chars, x, 3)) {
                continue;
            }
            if chars.get(x + 3).is_some_and(|c| matches!(c, '-' | '.' | ' ')) && digits(chars, x + 4, 4) {
                ends.push(x + 8);
            }
        }
    }
    ends
}

fn boundary_before_ok(chars: &[char], start: usize) -> bool {
    if start == 0 {
        return true;
    }
    let prev = chars[start - 1];
    if prev.is_alphanumeric() || prev == '_' {
        return false;
    }
    !(matches!(prev, '-' | '.') && start >= 2 && chars[start - 2].is_ascii_digit())
}

fn boundary_after_ok(chars: &[char], end: usize) -> bool {
    let Some(&next) = chars.get(end) else {
        return true;
    };
    if next.is_alphanumeric() || next == '_' {
        return false;
    }
    !(matches!(next, '-' | '.') && digit(chars, end + 1))
}

fn longest_phone_at(chars: &[char], i: usize) -> Option<usize> {
    if !boundary_before_ok(chars, i) {
        return None;
    }
    prefix_ends(chars, i)
        .into_iter()
        .flat_map(|p| body_ends(chars, p))
        .filter(|&end| boundary_after_ok(chars, end))
        .max()
}

fn is_local_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '%' | '+' | '-')
}

fn is_domain_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '.' | '-')
}

/// Characters that may not touch either end of an email match.
fn glues_to_email(c: char) -> bool {
    c.is_ascii_alphanumeric() || matches!(c, '_' | '%' | '+' | '-' | '@')
}

fn valid_local(local: &[char]) -> bool {
    !local.is_empty()
        && local[0] != '.'
        && local[local.len() - 1] != '.'
        && !local.windows(2).any(|w| w == ['.', '.'])
        && local.iter().all(|&c| is_local_char(c))
}

fn valid_domain(domain: &[char]) -> bool {
    let labels: Vec<&[char]> = domain.split(|&c| c == '.').collect();
    if labels.len() < 2 {
        return false;
    }
    let label_ok = |l: &[char]| {
        !l.is_empty()
            && l.iter().all(|c| c.is_ascii_alphanumeric() || *c == '-')
            && l[0] != '-'
            && l[l.len() - 1] != '-'
    };
    let tld = labels[labels.len() - 1];
    labels.iter().all(|l| label_ok(l)) && tld.len() >= 2 && tld.iter().all(|c| c.is_ascii_alphabetic())
}

fn email_around(chars: &[char], at: usize) -> Option<(usize, usize)> {
    let mut run_start = at;
    while run_start > 0 && is_local_char(chars[run_start - 1]) {
        run_start -= 1;
    }
    let start = (run_start..at)
        .filter(|&s| s == 0 || !glues_to_email(chars[s - 1]))
        .find(|&s| valid_local(&chars[s..at]))?;

    let mut run_end = at + 1;
    while run_end < chars.len() && is_domain_char(chars[run_end]) {
        run_end += 1;
    }
    let end = (at + 2..=run_end).rev().find(|&e| {
        let after_ok = match chars.get(e) {
            None => true,
            Some(&'.') => !chars.get(e + 1).is_some_and(|c| c.is_ascii_alphanumeric()),
            Some(&c) => !glues_to_email(c),
        };
        after_ok && valid_domain(&chars[at + 1..e])
    })?;
    Some((start, end))
}

pub fn find_emails(text: &str) -> Vec<RuleMatch> {
    let chars: Vec<char> = text.chars().collect();
    let mut matches = Vec::new();
    let mut last_end = 0;
    for at in (0..chars.len()).filter(|&i| chars[i] == '@') {
        if let Some((start, end)) = email_around(&chars, at) {
            if start >= last_end {
                matches.push(RuleMatch::new(PiiCategory::Email, &chars, start, end, EMAIL_PATTERN_ID));
                last_end = end;
            }
        }
    }
    matches
}
