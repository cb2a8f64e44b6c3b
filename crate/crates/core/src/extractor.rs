//! Layer 1: the hybrid extractor.
//!
//! Phone and email candidates come only from [`rules`]; name, home-address
//! and alphanumeric candidates come only from the LLM tagger. Home-address
//! and alphanumeric candidates are collected as the union over `k_runs`
//! sampled extraction runs.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Narrative;
use crate::gateway::{build_extraction_prompt, Gateway, GatewayError, PromptError};
use crate::rules;
use crate::tagspec::{self, PiiCategory, PiiSpan};

/// Categories the LLM channel is responsible for in the hybrid extractor.
pub const LLM_CATEGORIES: [PiiCategory; 3] = [PiiCategory::Name, PiiCategory::HomeAddress, PiiCategory::Alphanumeric];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateSource {
    Rule,
    LlmSingle,
    LlmEnsemble,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub surface: String,
    pub source: CandidateSource,
    pub run_votes: u32,
    /// Char offset of the surface's first occurrence in the narrative.
    pub first_offset: usize,
}

/// Char offset of the first occurrence of `needle` in `haystack`.
pub fn first_char_offset(haystack: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    haystack.find(needle).map(|byte| haystack[..byte].chars().count())
}

/// Per-narrative candidates, one deduplicated list per category. All five
/// categories are always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub narrative_id: String,
    pub by_category: BTreeMap<PiiCategory, Vec<Candidate>>,
}

impl CandidateSet {
    pub fn new(narrative_id: impl Into<String>) -> Self {
        CandidateSet {
            narrative_id: narrative_id.into(),
            by_category: PiiCategory::ALL.into_iter().map(|c| (c, Vec::new())).collect(),
        }
    }

    pub fn get(&self, category: PiiCategory) -> &[Candidate] {
        self.by_category.get(&category).map_or(&[], Vec::as_slice)
    }

    pub fn surfaces(&self, category: PiiCategory) -> Vec<String> {
        self.get(category).iter().map(|c| c.surface.clone()).collect()
    }

    pub fn contains(&self, category: PiiCategory, surface: &str) -> bool {
        self.get(category).iter().any(|c| c.surface == surface)
    }

    /// Adds a candidate unless the same surface is already present in
    /// `category`. Returns whether it was added.
    pub fn insert(&mut self, category: PiiCategory, candidate: Candidate) -> bool {
        let list = self.by_category.entry(category).or_default();
        if list.iter().any(|c| c.surface == candidate.surface) {
            return false;
        }
        list.push(candidate);
        true
    }

    pub fn set(&mut self, category: PiiCategory, candidates: Vec<Candidate>) {
        self.by_category.insert(category, candidates);
    }

    pub fn retain(&mut self, category: PiiCategory, mut keep: impl FnMut(&Candidate) -> bool) {
        if let Some(list) = self.by_category.get_mut(&category) {
            list.retain(|c| keep(c));
        }
    }

    /// Sorts every category by first occurrence, then surface.
    pub fn sort(&mut self) {
        for list in self.by_category.values_mut() {
            list.sort_by(|a, b| a.first_offset.cmp(&b.first_offset).then_with(|| a.surface.cmp(&b.surface)));
        }
    }

    pub fn len(&self) -> usize {
        self.by_category.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (PiiCategory, &Candidate)> {
        self.by_category.iter().flat_map(|(cat, list)| list.iter().map(move |c| (*cat, c)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub k_runs: u32,
    pub ensemble_categories: BTreeSet<PiiCategory>,
    pub discard_hallucinated_runs: bool,
    /// Run `i` is sent with seed `seed + i`.
    pub seed: u64,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            k_runs: 5,
            ensemble_categories: [PiiCategory::HomeAddress, PiiCategory::Alphanumeric].into(),
            discard_hallucinated_runs: true,
            seed: 0,
        }
    }
}

impl EnsembleConfig {
    pub fn with_k(k_runs: u32) -> Self {
        EnsembleConfig {
            k_runs,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), ExtractError> {
        if self.k_runs == 0 {
            return Err(ExtractError::InvalidConfig("k_runs must be at least 1".into()));
        }
        Ok(())
    }

    pub fn run_seed(&self, run: u32) -> u64 {
        self.seed.wrapping_add(u64::from(run))
    }
}

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("invalid ensemble config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("all {runs} extraction run(s) failed; last error: {last}")]
    AllRunsFailed { runs: u32, last: String },
}

/// Output of one extraction run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SingleRun {
    pub spans: Vec<PiiSpan>,
    /// The completion was not the narrative with only delimiters inserted,
    /// or its tagging did not parse.
    pub hallucinated: bool,
}

fn ground(text: &str, category: PiiCategory, surface: String) -> Option<PiiSpan> {
    if surface.is_empty() || tagspec::contains_delimiter(&surface) {
        return None;
    }
    let start = first_char_offset(text, &surface)?;
    let end = start + surface.chars().count();
    Some(PiiSpan::new(category, start, end, surface))
}

/// One extraction call, keeping every category the completion tags.
pub fn extract_single_run_all(
    narrative: &Narrative,
    gateway: &Gateway,
    seed: Option<u64>,
    discard_hallucinated: bool,
) -> Result<SingleRun, ExtractError> {
    let request = build_extraction_prompt(&narrative.text)?.with_seed(seed);
    let completion = gateway.complete(&request)?.text;
    let text = &narrative.text;

    if narrative.has_delimiter_collision() {
        // Strict parsing is impossible; accept only surfaces found verbatim.
        let spans = tagspec::scan_tagged_surfaces(&completion)
            .into_iter()
            .filter_map(|(cat, surface)| ground(text, cat, surface))
            .collect();
        return Ok(SingleRun {
            spans,
            hallucinated: false,
        });
    }

    let hallucinated_text = !tagspec::detag_equals(&completion, text);
    let parsed = tagspec::parse_tagged(&completion);
    let hallucinated = hallucinated_text || parsed.is_err();
    let spans = match parsed {
        Ok((_, spans)) if !hallucinated => spans,
        Ok((_, spans)) if !discard_hallucinated => spans
            .into_iter()
            .filter_map(|s| ground(text, s.category, s.surface))
            .collect(),
        _ => Vec::new(),
    };
    Ok(SingleRun { spans, hallucinated })
}

/// One extraction call restricted to the LLM-owned categories.
pub fn extract_single_run(
    narrative: &Narrative,
    gateway: &Gateway,
    seed: Option<u64>,
    discard_hallucinated: bool,
) -> Result<SingleRun, ExtractError> {
    let mut run = extract_single_run_all(narrative, gateway, seed, discard_hallucinated)?;
    run.spans.retain(|s| !s.category.is_rule_owned());
    Ok(run)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub requested_runs: u32,
    pub failed_runs: u32,
    pub hallucinated_runs: u32,
    /// Runs whose spans contributed to the union.
    pub effective_runs: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleFragment {
    /// Candidates for the LLM-owned categories only.
    pub candidates: CandidateSet,
    pub stats: EnsembleStats,
}

/// Union of per-run span lists. Categories in `ensemble` take the union over
/// all runs with per-surface vote counts; the rest take the first run only.
pub fn union_runs(
    narrative: &Narrative,
    runs: &[Vec<PiiSpan>],
    ensemble: &BTreeSet<PiiCategory>,
    k_runs: u32,
) -> CandidateSet {
    let mut set = CandidateSet::new(narrative.id.clone());
    let ensemble_source = if k_runs > 1 {
        CandidateSource::LlmEnsemble
    } else {
        CandidateSource::LlmSingle
    };

    for category in LLM_CATEGORIES {
        let in_ensemble = ensemble.contains(&category);
        let considered = if in_ensemble { runs } else { &runs[..runs.len().min(1)] };
        let mut votes: BTreeMap<&str, u32> = BTreeMap::new();
        for run in considered {
            let distinct: BTreeSet<&str> = run
                .iter()
                .filter(|s| s.category == category)
                .map(|s| s.surface.as_str())
                .collect();
            for surface in distinct {
                *votes.entry(surface).or_default() += 1;
            }
        }
        for (surface, run_votes) in votes {
            let Some(first_offset) = first_char_offset(&narrative.text, surface) else {
                continue;
            };
            let (source, run_votes) = if in_ensemble {
                (ensemble_source, run_votes)
            } else {
                (CandidateSource::LlmSingle, 1)
            };
            set.insert(
                category,
                Candidate {
                    surface: surface.to_string(),
                    source,
                    run_votes,
                    first_offset,
                },
            );
        }
    }
    set.sort();
    set
}

pub fn extract_ensemble(narrative: &Narrative, gateway: &Gateway, cfg: &EnsembleConfig) -> Result<EnsembleFragment, ExtractError> {
    cfg.validate()?;
    let mut stats = EnsembleStats {
        requested_runs: cfg.k_runs,
        ..Default::default()
    };
    let mut runs = Vec::new();
    let mut last_error = None;

    for run in 0..cfg.k_runs {
        match extract_single_run(narrative, gateway, Some(cfg.run_seed(run)), cfg.discard_hallucinated_runs) {
            Ok(single) => {
                if single.hallucinated {
                    stats.hallucinated_runs += 1;
                    log::debug!("narrative {}: run {run} hallucinated", narrative.id);
                    if cfg.discard_hallucinated_runs {
                        continue;
                    }
                }
                runs.push(single.spans);
            }
            Err(ExtractError::Prompt(e)) => return Err(e.into()),
            Err(e) => {
                log::warn!("narrative {}: run {run} failed: {e}", narrative.id);
                stats.failed_runs += 1;
                last_error = Some(e.to_string());
            }
        }
    }

    if stats.failed_runs == cfg.k_runs {
        return Err(ExtractError::AllRunsFailed {
            runs: cfg.k_runs,
            last: last_error.unwrap_or_default(),
        });
    }
    stats.effective_runs = runs.len() as u32;
    Ok(EnsembleFragment {
        candidates: union_runs(narrative, &runs, &cfg.ensemble_categories, cfg.k_runs),
        stats,
    })
}

/// Phone and email candidates from the rule recognizers.
pub fn rule_candidates(narrative: &Narrative) -> CandidateSet {
    let mut set = CandidateSet::new(narrative.id.clone());
    for m in rules::find_all(&narrative.text) {
        set.insert(
            m.category,
            Candidate {
                surface: m.span.surface,
                source: CandidateSource::Rule,
                run_votes: 1,
                first_offset: m.span.start,
            },
        );
    }
    set.sort();
    set
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HybridResult {
    pub candidates: CandidateSet,
    pub stats: EnsembleStats,
    /// LLM candidates removed because a rule match already covers them.
    pub suppressed: usize,
}

/// Rules for phone/email, the ensemble for the LLM-owned categories, merged
/// with rule matches taking priority over overlapping LLM surfaces.
pub fn hybrid_extract(narrative: &Narrative, gateway: &Gateway, cfg: &EnsembleConfig) -> Result<HybridResult, ExtractError> {
    let mut merged = rule_candidates(narrative);
    let fragment = extract_ensemble(narrative, gateway, cfg)?;

    let rule_surfaces: Vec<String> = merged.iter().map(|(_, c)| c.surface.clone()).collect();
    let mut suppressed = 0;
    for category in LLM_CATEGORIES {
        let (kept, dropped): (Vec<Candidate>, Vec<Candidate>) = fragment
            .candidates
            .get(category)
            .iter()
            .cloned()
            .partition(|c| !rule_surfaces.iter().any(|r| r.contains(c.surface.as_str())));
        suppressed += dropped.len();
        merged.set(category, kept);
    }

    Ok(HybridResult {
        candidates: merged,
        stats: fragment.stats,
        suppressed,
    })
}

/// Single LLM run owning all five categories (baseline without rules).
pub fn llm_only_extract(narrative: &Narrative, gateway: &Gateway, seed: Option<u64>, discard: bool) -> Result<CandidateSet, ExtractError> {
    let run = extract_single_run_all(narrative, gateway, seed, discard)?;
    let mut set = CandidateSet::new(narrative.id.clone());
    for span in run.spans {
        let Some(first_offset) = first_char_offset(&narrative.text, &span.surface) else {
            continue;
        };
        set.insert(
            span.category,
            Candidate {
                surface: span.surface,
                source: CandidateSource::LlmSingle,
                run_votes: 1,
                first_offset,
            },
        );
    }
    set.sort();
    Ok(set)
}
