//! Renders final candidate sets as tagged or placeholder-substituted text.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Narrative;
use crate::extractor::CandidateSet;
use crate::tagspec::{self, PiiCategory, PiiSpan, TagError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RedactionMode {
    #[default]
    Tagged,
    Placeholder,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactionStyle {
    pub mode: RedactionMode,
    pub placeholder_map: BTreeMap<PiiCategory, String>,
}

pub fn default_placeholder(category: PiiCategory) -> &'static str {
    match category {
        PiiCategory::Name => "[NAME]",
        PiiCategory::Phone => "[PHONE]",
        PiiCategory::Email => "[EMAIL]",
        PiiCategory::HomeAddress => "[HOME_ADDRESS]",
        PiiCategory::Alphanumeric => "[ID]",
    }
}

impl Default for RedactionStyle {
    fn default() -> Self {
        RedactionStyle::new(RedactionMode::Tagged)
    }
}

impl RedactionStyle {
    pub fn new(mode: RedactionMode) -> Self {
        RedactionStyle {
            mode,
            placeholder_map: PiiCategory::ALL
                .into_iter()
                .map(|c| (c, default_placeholder(c).to_string()))
                .collect(),
        }
    }

    pub fn placeholder(&self, category: PiiCategory) -> &str {
        self.placeholder_map
            .get(&category)
            .map_or_else(|| default_placeholder(category), String::as_str)
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        for cat in PiiCategory::ALL {
            match self.placeholder_map.get(&cat) {
                None => return Err(RenderError::InvalidStyle(format!("no placeholder for {cat}"))),
                Some(p) if tagspec::contains_delimiter(p) => {
                    return Err(RenderError::InvalidStyle(format!("placeholder {p:?} contains a delimiter")))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RenderError {
    #[error("{category} candidate {surface:?} does not occur in narrative {narrative_id:?}")]
    SurfaceNotFound {
        narrative_id: String,
        category: PiiCategory,
        surface: String,
    },
    #[error("invalid redaction style: {0}")]
    InvalidStyle(String),
    #[error(transparent)]
    Tag(#[from] TagError),
}

/// Every occurrence of every final surface, longest surfaces first, skipping
/// occurrences that touch an already claimed region. Returned in text order.
pub fn claim_spans(narrative: &Narrative, final_set: &CandidateSet) -> Result<Vec<PiiSpan>, RenderError> {
    let chars: Vec<char> = narrative.text.chars().collect();
    let mut items: Vec<(PiiCategory, Vec<char>)> = Vec::new();
    for (category, candidate) in final_set.iter() {
        if candidate.surface.is_empty() || !narrative.text.contains(&candidate.surface) {
            return Err(RenderError::SurfaceNotFound {
                narrative_id: narrative.id.clone(),
                category,
                surface: candidate.surface.clone(),
            });
        }
        items.push((category, candidate.surface.chars().collect()));
    }
    items.sort_by(|(ca, a), (cb, b)| b.len().cmp(&a.len()).then(ca.cmp(cb)).then_with(|| a.cmp(b)));

    let mut claimed = vec![false; chars.len()];
    let mut spans = Vec::new();
    for (category, surface) in &items {
        let n = surface.len();
        let mut i = 0;
        while i + n <= chars.len() {
            if chars[i..i + n] == surface[..] && !claimed[i..i + n].iter().any(|&c| c) {
                claimed[i..i + n].iter_mut().for_each(|c| *c = true);
                spans.push(PiiSpan::new(*category, i, i + n, surface.iter().collect::<String>()));
                i += n;
            } else {
                i += 1;
            }
        }
    }
    spans.sort_by_key(|s| s.start);
    Ok(spans)
}

pub fn render(narrative: &Narrative, final_set: &CandidateSet, style: &RedactionStyle) -> Result<String, RenderError> {
    let spans = claim_spans(narrative, final_set)?;
    match style.mode {
        RedactionMode::Tagged => Ok(tagspec::serialize_spans(&narrative.text, &spans)?),
        RedactionMode::Placeholder => {
            let chars: Vec<char> = narrative.text.chars().collect();
            let mut out = String::with_capacity(narrative.text.len());
            let mut cursor = 0;
            for span in &spans {
                out.extend(&chars[cursor..span.start]);
                out.push_str(style.placeholder(span.category));
                cursor = span.end;
            }
            out.extend(&chars[cursor..]);
            Ok(out)
        }
    }
}

/// One line of the redacted output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedactedRecord {
    pub id: String,
    pub redacted_text: String,
    pub pii_found: bool,
}
