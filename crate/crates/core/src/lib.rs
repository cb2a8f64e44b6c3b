//! Auditable de-identification of free-text crash narratives.
//!
//! Structured PII (phone numbers, email addresses) is found by deterministic
//! recognizers in [`rules`]. Context-dependent PII (names, home addresses,
//! alphanumeric identifiers) comes from a chat-completion tagger reached
//! through [`gateway`], optionally run several times with the union of the
//! ambiguous categories collected ([`extractor`]). Home-address and
//! alphanumeric candidates can then be filtered by an evidence-checked
//! verifier ([`verifier`]) that leaves an audit trail. Final candidate sets
//! are rendered by [`redactor`] and scored by [`evalkit`].
//!
//! [`pipeline`] wires the stages together into the presets exposed by the
//! `deid` command-line tool.

pub mod corpus;
pub mod evalkit;
pub mod extractor;
pub mod gateway;
pub mod pipeline;
pub mod redactor;
pub mod rules;
pub mod tagspec;
pub mod verifier;

pub use corpus::{Corpus, GoldAnnotation, Narrative};
pub use evalkit::{MetricScalar, MetricsReport, Ratio, TypeCounts};
pub use extractor::{Candidate, CandidateSet, CandidateSource, EnsembleConfig};
pub use gateway::{BackendConfig, BackendKind, ChatRequest, ChatResponse, Gateway};
pub use pipeline::{PipelineConfig, Preset, RunSummary};
pub use redactor::{RedactionMode, RedactionStyle};
pub use tagspec::{PiiCategory, PiiSpan};
pub use verifier::{AuditRecord, Decision, UncertainAction, VerifierPolicy, VerifierReview};

/// Metrics computed in double precision. This is what reports and the CLI use.
pub type Metrics = evalkit::MetricsReport<f64>;

/// Metrics computed in single precision.
pub type MetricsF32 = evalkit::MetricsReport<f32>;

/// Metrics kept as exact ratios of counts; rounding for display is exact.
pub type ExactMetrics = evalkit::MetricsReport<Ratio>;
