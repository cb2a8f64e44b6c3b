//! Layer 2: evidence-checked review of home-address and alphanumeric
//! candidates.
//!
//! The verifier backend must answer with a JSON object holding exactly one
//! review per candidate, in candidate order, with verbatim evidence for every
//! KEEP or DROP. Responses that break the format are rejected and re-prompted;
//! reviews whose evidence is not found in the narrative are demoted to
//! UNCERTAIN. Every reviewed candidate leaves an [`AuditRecord`].

use std::collections::BTreeSet;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::corpus::Narrative;
use crate::extractor::CandidateSet;
use crate::gateway::{self, Gateway, PromptError};
use crate::tagspec::PiiCategory;

pub const DEFAULT_MAX_REPAIR_ATTEMPTS: usize = 2;

/// The two categories the verifier reviews, in prompt order.
pub const REVIEWED_CATEGORIES: [PiiCategory; 2] = [PiiCategory::HomeAddress, PiiCategory::Alphanumeric];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Keep,
    Drop,
    Uncertain,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Keep => "KEEP",
            Decision::Drop => "DROP",
            Decision::Uncertain => "UNCERTAIN",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "KEEP" => Some(Decision::Keep),
            "DROP" => Some(Decision::Drop),
            "UNCERTAIN" => Some(Decision::Uncertain),
            _ => None,
        }
    }
}

impl fmt::Display for Decision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VerifierReview {
    pub text: String,
    pub decision: Decision,
    pub reason: String,
    pub evidence: String,
}

impl VerifierReview {
    pub fn new(text: impl Into<String>, decision: Decision, reason: impl Into<String>, evidence: impl Into<String>) -> Self {
        VerifierReview {
            text: text.into(),
            decision,
            reason: reason.into(),
            evidence: evidence.into(),
        }
    }

    pub fn uncertain(text: impl Into<String>, reason: impl Into<String>) -> Self {
        VerifierReview::new(text, Decision::Uncertain, reason, "")
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifierOutput {
    pub home_address_reviews: Vec<VerifierReview>,
    pub alphanumeric_reviews: Vec<VerifierReview>,
}

impl VerifierOutput {
    pub fn reviews(&self, category: PiiCategory) -> &[VerifierReview] {
        match category {
            PiiCategory::HomeAddress => &self.home_address_reviews,
            PiiCategory::Alphanumeric => &self.alphanumeric_reviews,
            _ => &[],
        }
    }

    fn reviews_mut(&mut self, category: PiiCategory) -> Option<&mut Vec<VerifierReview>> {
        match category {
            PiiCategory::HomeAddress => Some(&mut self.home_address_reviews),
            PiiCategory::Alphanumeric => Some(&mut self.alphanumeric_reviews),
            _ => None,
        }
    }

    /// Every candidate reviewed as UNCERTAIN with the given reason.
    pub fn all_uncertain(home: &[String], alnum: &[String], reason: &str) -> Self {
        VerifierOutput {
            home_address_reviews: home.iter().map(|t| VerifierReview::uncertain(t.clone(), reason)).collect(),
            alphanumeric_reviews: alnum.iter().map(|t| VerifierReview::uncertain(t.clone(), reason)).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertainAction {
    /// Recall-first: UNCERTAIN candidates stay in the output.
    #[default]
    Keep,
    /// Precision-first: UNCERTAIN candidates are removed.
    Drop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VerifierPolicy {
    pub uncertain_action: UncertainAction,
}

impl VerifierPolicy {
    pub const RECALL_FIRST: VerifierPolicy = VerifierPolicy {
        uncertain_action: UncertainAction::Keep,
    };
    pub const PRECISION_FIRST: VerifierPolicy = VerifierPolicy {
        uncertain_action: UncertainAction::Drop,
    };

    pub fn label(&self) -> &'static str {
        match self.uncertain_action {
            UncertainAction::Keep => "recall-first",
            UncertainAction::Drop => "precision-first",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "recall-first" => Some(Self::RECALL_FIRST),
            "precision-first" => Some(Self::PRECISION_FIRST),
            _ => None,
        }
    }

    pub fn final_action(&self, decision: Decision) -> FinalAction {
        match (decision, self.uncertain_action) {
            (Decision::Keep, _) => FinalAction::Retained,
            (Decision::Drop, _) => FinalAction::Removed,
            (Decision::Uncertain, UncertainAction::Keep) => FinalAction::Retained,
            (Decision::Uncertain, UncertainAction::Drop) => FinalAction::Removed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FinalAction {
    Retained,
    Removed,
}

/// One line of the audit log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub narrative_id: String,
    pub category: PiiCategory,
    #[serde(flatten)]
    pub review: VerifierReview,
    pub policy_applied: String,
    pub final_action: FinalAction,
    pub backend_id: String,
    pub timestamp: DateTime<Utc>,
}

impl AuditRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("audit record serialization is infallible")
    }
}

/// Where audit timestamps come from. `Fixed` makes logs byte-reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AuditClock {
    #[default]
    Wall,
    Fixed(DateTime<Utc>),
}

impl AuditClock {
    pub fn epoch() -> Self {
        AuditClock::Fixed(DateTime::<Utc>::UNIX_EPOCH)
    }

    pub fn now(&self) -> DateTime<Utc> {
        match self {
            AuditClock::Wall => Utc::now(),
            AuditClock::Fixed(t) => *t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("verifier output is not JSON: {0}")]
    NotJson(String),
    #[error("verifier output does not match the schema: {0}")]
    SchemaMismatch(String),
    #[error("verifier reviews are not aligned with the candidates: {0}")]
    AlignmentViolation(String),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

const REVIEW_FIELDS: [&str; 4] = ["text", "decision", "reason", "evidence"];

fn list_key(category: PiiCategory) -> &'static str {
    match category {
        PiiCategory::HomeAddress => "home_address_reviews",
        _ => "alphanumeric_reviews",
    }
}

fn parse_review(key: &str, index: usize, value: &Value) -> Result<VerifierReview, VerifyError> {
    let schema = |msg: String| VerifyError::SchemaMismatch(format!("{key}[{index}]: {msg}"));
    let obj = value.as_object().ok_or_else(|| schema("expected an object".into()))?;
    for field in obj.keys() {
        if !REVIEW_FIELDS.contains(&field.as_str()) {
            return Err(schema(format!("unexpected field `{field}`")));
        }
    }
    let field = |name: &str| -> Result<String, VerifyError> {
        match obj.get(name) {
            Some(Value::String(s)) => Ok(s.clone()),
            Some(_) => Err(schema(format!("`{name}` must be a string"))),
            None => Err(schema(format!("missing `{name}`"))),
        }
    };
    let text = field("text")?;
    let token = field("decision")?;
    let reason = field("reason")?;
    let evidence = field("evidence")?;
    if text.is_empty() {
        return Err(schema("`text` is an empty string".into()));
    }
    let decision = Decision::parse(&token).ok_or_else(|| schema(format!("decision {token:?} is not KEEP, DROP or UNCERTAIN")))?;
    if decision == Decision::Uncertain && !evidence.is_empty() {
        return Err(schema("UNCERTAIN review must have evidence \"\"".into()));
    }
    Ok(VerifierReview {
        text,
        decision,
        reason,
        evidence,
    })
}

fn check_alignment(key: &str, reviews: &[VerifierReview], candidates: &[String]) -> Result<(), VerifyError> {
    let align = |msg: String| VerifyError::AlignmentViolation(format!("{key}: {msg}"));
    let mut seen = BTreeSet::new();
    for r in reviews {
        if !seen.insert(r.text.as_str()) {
            return Err(align(format!("candidate {:?} reviewed more than once", r.text)));
        }
        if !candidates.contains(&r.text) {
            return Err(align(format!("review for {:?}, which is not a candidate", r.text)));
        }
    }
    if reviews.len() != candidates.len() {
        return Err(align(format!("expected {} review(s), got {}", candidates.len(), reviews.len())));
    }
    for (i, (r, c)) in reviews.iter().zip(candidates).enumerate() {
        if r.text != *c {
            return Err(align(format!("review {i} has text {:?}, expected {c:?}", r.text)));
        }
    }
    Ok(())
}

fn check_candidates(home: &[String], alnum: &[String]) -> Result<(), VerifyError> {
    for (list, cands) in [("home_address_candidates", home), ("alphanumeric_candidates", alnum)] {
        if let Some(index) = cands.iter().position(String::is_empty) {
            return Err(PromptError::EmptyCandidateString { list, index }.into());
        }
    }
    Ok(())
}

/// Parses and validates a verifier completion against the candidate lists.
pub fn parse_verifier_output(completion_text: &str, home_candidates: &[String], alnum_candidates: &[String]) -> Result<VerifierOutput, VerifyError> {
    check_candidates(home_candidates, alnum_candidates)?;
    let value: Value = serde_json::from_str(completion_text.trim()).map_err(|e| VerifyError::NotJson(e.to_string()))?;
    let obj: &Map<String, Value> = value
        .as_object()
        .ok_or_else(|| VerifyError::SchemaMismatch("top level must be a JSON object".into()))?;
    for key in obj.keys() {
        if key != "home_address_reviews" && key != "alphanumeric_reviews" {
            return Err(VerifyError::SchemaMismatch(format!("unexpected key `{key}`")));
        }
    }

    let mut output = VerifierOutput::default();
    for (category, candidates) in [
        (PiiCategory::HomeAddress, home_candidates),
        (PiiCategory::Alphanumeric, alnum_candidates),
    ] {
        let key = list_key(category);
        let items = obj
            .get(key)
            .ok_or_else(|| VerifyError::SchemaMismatch(format!("missing key `{key}`")))?
            .as_array()
            .ok_or_else(|| VerifyError::SchemaMismatch(format!("`{key}` must be a list")))?;
        let reviews = items
            .iter()
            .enumerate()
            .map(|(i, v)| parse_review(key, i, v))
            .collect::<Result<Vec<_>, _>>()?;
        check_alignment(key, &reviews, candidates)?;
        *output.reviews_mut(category).expect("reviewed category") = reviews;
    }
    Ok(output)
}

/// A review after the evidence check. `demoted_from` is set when a KEEP or
/// DROP lost its decision because its evidence was not in the narrative.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckedReview {
    pub review: VerifierReview,
    pub demoted_from: Option<Decision>,
}

/// Confirms KEEP/DROP evidence is a verbatim, non-empty substring of the
/// narrative; otherwise demotes the review to UNCERTAIN with empty evidence.
pub fn check_evidence(review: VerifierReview, narrative_text: &str) -> CheckedReview {
    match review.decision {
        Decision::Keep | Decision::Drop if review.evidence.is_empty() || !narrative_text.contains(&review.evidence) => {
            let original = review.decision;
            CheckedReview {
                review: VerifierReview {
                    decision: Decision::Uncertain,
                    reason: format!(
                        "demoted from {original}: evidence not found verbatim in narrative; verifier reason: {}",
                        review.reason
                    ),
                    evidence: String::new(),
                    text: review.text,
                },
                demoted_from: Some(original),
            }
        }
        _ => CheckedReview {
            review,
            demoted_from: None,
        },
    }
}

/// Evidence-checks every review, returning the number demoted.
pub fn check_all_evidence(output: VerifierOutput, narrative_text: &str) -> (VerifierOutput, usize) {
    let mut demoted = 0;
    let mut check = |reviews: Vec<VerifierReview>| -> Vec<VerifierReview> {
        reviews
            .into_iter()
            .map(|r| {
                let checked = check_evidence(r, narrative_text);
                demoted += usize::from(checked.demoted_from.is_some());
                checked.review
            })
            .collect()
    };
    let home = check(output.home_address_reviews);
    let alnum = check(output.alphanumeric_reviews);
    (
        VerifierOutput {
            home_address_reviews: home,
            alphanumeric_reviews: alnum,
        },
        demoted,
    )
}

/// Identifies the run that produced audit records.
#[derive(Debug, Clone, Copy)]
pub struct AuditContext<'a> {
    pub backend_id: &'a str,
    pub clock: AuditClock,
}

/// Applies the policy to aligned reviews. Name, phone and email candidates
/// pass through untouched.
pub fn apply_policy(
    output: &VerifierOutput,
    candidates: &CandidateSet,
    policy: VerifierPolicy,
    ctx: AuditContext<'_>,
) -> Result<(CandidateSet, Vec<AuditRecord>), VerifyError> {
    let mut final_set = candidates.clone();
    let mut audit = Vec::new();
    for category in REVIEWED_CATEGORIES {
        let reviews = output.reviews(category);
        check_alignment(list_key(category), reviews, &candidates.surfaces(category))?;
        let mut removed = BTreeSet::new();
        for review in reviews {
            let final_action = policy.final_action(review.decision);
            if final_action == FinalAction::Removed {
                removed.insert(review.text.clone());
            }
            audit.push(AuditRecord {
                narrative_id: candidates.narrative_id.clone(),
                category,
                review: review.clone(),
                policy_applied: policy.label().to_string(),
                final_action,
                backend_id: ctx.backend_id.to_string(),
                timestamp: ctx.clock.now(),
            });
        }
        final_set.retain(category, |c| !removed.contains(&c.surface));
    }
    Ok((final_set, audit))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerifyOutcome {
    pub final_set: CandidateSet,
    pub audit: Vec<AuditRecord>,
    /// Backend calls made, including repair attempts.
    pub calls: usize,
    pub demoted: usize,
    /// The verifier could not produce a valid answer; every candidate was
    /// treated as UNCERTAIN.
    pub degraded: bool,
}

/// Runs the verifier on the home-address and alphanumeric candidates of one
/// narrative, with up to `max_repair_attempts` re-prompts on invalid output.
pub fn verify_candidates(
    narrative: &Narrative,
    candidates: &CandidateSet,
    gateway: &Gateway,
    policy: VerifierPolicy,
    max_repair_attempts: usize,
    clock: AuditClock,
) -> Result<VerifyOutcome, VerifyError> {
    let home = candidates.surfaces(PiiCategory::HomeAddress);
    let alnum = candidates.surfaces(PiiCategory::Alphanumeric);
    if home.is_empty() && alnum.is_empty() {
        return Ok(VerifyOutcome {
            final_set: candidates.clone(),
            audit: Vec::new(),
            calls: 0,
            demoted: 0,
            degraded: false,
        });
    }

    let ctx = AuditContext {
        backend_id: gateway.backend_id(),
        clock,
    };
    let base = gateway::build_verifier_prompt(&narrative.text, &home, &alnum)?;
    let mut request = base.clone();
    let mut calls = 0;
    let failure = loop {
        calls += 1;
        let completion = match gateway.complete(&request) {
            Ok(resp) => resp.text,
            Err(e) => break format!("verifier backend unavailable: {e}"),
        };
        match parse_verifier_output(&completion, &home, &alnum) {
            Ok(output) => {
                let (checked, demoted) = check_all_evidence(output, &narrative.text);
                let (final_set, audit) = apply_policy(&checked, candidates, policy, ctx)?;
                return Ok(VerifyOutcome {
                    final_set,
                    audit,
                    calls,
                    demoted,
                    degraded: false,
                });
            }
            Err(e) if calls <= max_repair_attempts => {
                log::debug!("narrative {}: verifier attempt {calls} rejected: {e}", narrative.id);
                request = gateway::with_repair_feedback(&base, calls, &e.to_string());
            }
            Err(e) => break format!("verifier output invalid after {calls} attempt(s): {e}"),
        }
    };

    log::warn!("narrative {}: {failure}; treating candidates as UNCERTAIN", narrative.id);
    let fallback = VerifierOutput::all_uncertain(&home, &alnum, &format!("fail-safe: {failure}"));
    let (final_set, audit) = apply_policy(&fallback, candidates, policy, ctx)?;
    Ok(VerifyOutcome {
        final_set,
        audit,
        calls,
        demoted: 0,
        degraded: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::extractor::{Candidate, CandidateSource};

    const CRASH_NARRATIVE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47. NO INJURIES.";
    const CRASH_EVIDENCE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47.";
    const CRASH_REASON: &str = "Crash location address, not a true residence/mailing address of a person.";

    fn crash_site_completion() -> String {
        serde_json::json!({
            "home_address_reviews": [{
                "text": "4647 HIGHWAY 47",
                "decision": "DROP",
                "reason": CRASH_REASON,
                "evidence": CRASH_EVIDENCE,
            }],
            "alphanumeric_reviews": []
        })
        .to_string()
    }

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    fn candidate_set(home: &[&str], alnum: &[&str]) -> CandidateSet {
        let mut set = CandidateSet::new("n1");
        for (cat, list) in [(PiiCategory::HomeAddress, home), (PiiCategory::Alphanumeric, alnum)] {
            for (i, surface) in list.iter().enumerate() {
                set.insert(
                    cat,
                    Candidate {
                        surface: surface.to_string(),
                        source: CandidateSource::LlmEnsemble,
                        run_votes: 1,
                        first_offset: i,
                    },
                );
            }
        }
        set
    }

    #[test]
    fn parses_crash_site_record() {
        let out = parse_verifier_output(&crash_site_completion(), &s(&["4647 HIGHWAY 47"]), &[]).unwrap();
        assert_eq!(
            out.home_address_reviews,
            vec![VerifierReview::new("4647 HIGHWAY 47", Decision::Drop, CRASH_REASON, CRASH_EVIDENCE)]
        );
        assert!(out.alphanumeric_reviews.is_empty());
    }

    #[test]
    fn empty_lists() {
        let out = parse_verifier_output(r#"{"home_address_reviews":[],"alphanumeric_reviews":[]}"#, &[], &[]).unwrap();
        assert_eq!(out, VerifierOutput::default());
    }

    #[test]
    fn text_edit_is_alignment_violation() {
        let completion = crash_site_completion().replace("4647 HIGHWAY 47\"", "4647 HWY 47\"");
        assert!(matches!(
            parse_verifier_output(&completion, &s(&["4647 HIGHWAY 47"]), &[]),
            Err(VerifyError::AlignmentViolation(_))
        ));
    }

    #[test]
    fn schema_errors() {
        let c = s(&["A1"]);
        assert!(matches!(parse_verifier_output("sure! here", &c, &[]), Err(VerifyError::NotJson(_))));
        assert!(matches!(
            parse_verifier_output(r#"{"home_address_reviews":[]}"#, &[], &[]),
            Err(VerifyError::SchemaMismatch(_))
        ));
        assert!(matches!(
            parse_verifier_output(r#"{"home_address_reviews":[],"alphanumeric_reviews":[],"notes":1}"#, &[], &[]),
            Err(VerifyError::SchemaMismatch(_))
        ));
        let bad_token = r#"{"home_address_reviews":[{"text":"A1","decision":"keep","reason":"","evidence":"A1"}],"alphanumeric_reviews":[]}"#;
        assert!(matches!(parse_verifier_output(bad_token, &c, &[]), Err(VerifyError::SchemaMismatch(_))));
        let uncertain_ev = r#"{"home_address_reviews":[{"text":"A1","decision":"UNCERTAIN","reason":"","evidence":"A1"}],"alphanumeric_reviews":[]}"#;
        assert!(matches!(parse_verifier_output(uncertain_ev, &c, &[]), Err(VerifyError::SchemaMismatch(_))));
        assert!(matches!(
            parse_verifier_output("{}", &s(&[""]), &[]),
            Err(VerifyError::Prompt(PromptError::EmptyCandidateString { .. }))
        ));
    }

    #[test]
    fn evidence_check() {
        let review = VerifierReview::new("4647 HIGHWAY 47", Decision::Drop, CRASH_REASON, CRASH_EVIDENCE);
        let checked = check_evidence(review.clone(), CRASH_NARRATIVE);
        assert_eq!(checked.review, review);
        assert_eq!(checked.demoted_from, None);

        let paraphrase = VerifierReview::new("4647 HIGHWAY 47", Decision::Keep, "home", "DRIVER LIVES AT 4647 HIGHWAY 47");
        let checked = check_evidence(paraphrase, CRASH_NARRATIVE);
        assert_eq!(checked.review.decision, Decision::Uncertain);
        assert_eq!(checked.review.evidence, "");
        assert_eq!(checked.demoted_from, Some(Decision::Keep));

        let unsure = VerifierReview::uncertain("X", "no idea");
        assert_eq!(check_evidence(unsure.clone(), CRASH_NARRATIVE).review, unsure);
    }

    #[test]
    fn policy_truth_table() {
        use Decision::*;
        use FinalAction::*;
        let cases = [
            (Keep, VerifierPolicy::RECALL_FIRST, Retained),
            (Drop, VerifierPolicy::RECALL_FIRST, Removed),
            (Uncertain, VerifierPolicy::RECALL_FIRST, Retained),
            (Keep, VerifierPolicy::PRECISION_FIRST, Retained),
            (Drop, VerifierPolicy::PRECISION_FIRST, Removed),
            (Uncertain, VerifierPolicy::PRECISION_FIRST, Removed),
        ];
        for (decision, policy, expected) in cases {
            let cands = candidate_set(&["A1"], &[]);
            let evidence = if decision == Uncertain { "" } else { "A1" };
            let out = VerifierOutput {
                home_address_reviews: vec![VerifierReview::new("A1", decision, "r", evidence)],
                alphanumeric_reviews: vec![],
            };
            let ctx = AuditContext {
                backend_id: "mock",
                clock: AuditClock::epoch(),
            };
            let (final_set, audit) = apply_policy(&out, &cands, policy, ctx).unwrap();
            assert_eq!(audit.len(), 1);
            assert_eq!(audit[0].final_action, expected);
            assert_eq!(final_set.contains(PiiCategory::HomeAddress, "A1"), expected == Retained);
        }
    }

    #[test]
    fn all_keep_is_identity_and_misaligned_output_rejected() {
        let cands = candidate_set(&["A1"], &["B2"]);
        let out = VerifierOutput {
            home_address_reviews: vec![VerifierReview::new("A1", Decision::Keep, "r", "A1")],
            alphanumeric_reviews: vec![VerifierReview::new("B2", Decision::Keep, "r", "B2")],
        };
        let ctx = AuditContext {
            backend_id: "mock",
            clock: AuditClock::epoch(),
        };
        let (final_set, _) = apply_policy(&out, &cands, VerifierPolicy::default(), ctx).unwrap();
        assert_eq!(final_set, cands);

        let partial = VerifierOutput {
            alphanumeric_reviews: vec![],
            ..out
        };
        assert!(matches!(
            apply_policy(&partial, &cands, VerifierPolicy::default(), ctx),
            Err(VerifyError::AlignmentViolation(_))
        ));
    }

    #[test]
    fn audit_line_layout() {
        let record = AuditRecord {
            narrative_id: "n1".into(),
            category: PiiCategory::HomeAddress,
            review: VerifierReview::new("4647 HIGHWAY 47", Decision::Drop, CRASH_REASON, CRASH_EVIDENCE),
            policy_applied: "recall-first".into(),
            final_action: FinalAction::Removed,
            backend_id: "scripted_mock".into(),
            timestamp: DateTime::<Utc>::UNIX_EPOCH,
        };
        let line = record.to_json_line();
        assert_eq!(
            line,
            format!(
                "{{\"narrative_id\":\"n1\",\"category\":\"home_address\",\"text\":\"4647 HIGHWAY 47\",\"decision\":\"DROP\",\"reason\":\"{CRASH_REASON}\",\"evidence\":\"{CRASH_EVIDENCE}\",\"policy_applied\":\"recall-first\",\"final_action\":\"removed\",\"backend_id\":\"scripted_mock\",\"timestamp\":\"1970-01-01T00:00:00Z\"}}"
            )
        );
        let back: AuditRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, record);
    }
}
