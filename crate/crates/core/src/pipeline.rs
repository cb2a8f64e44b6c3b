//! End-to-end orchestration of the presets.
//!
//! | preset       | phone / email | name      | home address / alphanumeric  | verifier |
//! |--------------|---------------|-----------|------------------------------|----------|
//! | `rules_only` | rules         | -         | -                            | no       |
//! | `llm_single` | LLM           | LLM       | LLM, one run                 | no       |
//! | `hybrid`     | rules         | LLM       | LLM, one run                 | no       |
//! | `hybrid_ev`  | rules         | LLM       | LLM, union of `k_runs` runs  | yes      |

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{self, Corpus, CorpusError, CorpusFormat, Narrative};
use crate::evalkit::{self, EvalError};
use crate::extractor::{self, CandidateSet, EnsembleConfig, EnsembleStats, ExtractError};
use crate::gateway::{BackendConfig, Gateway, GatewayError};
use crate::redactor::{self, RedactedRecord, RedactionMode, RedactionStyle};
use crate::tagspec::PiiCategory;
use crate::verifier::{self, AuditClock, AuditRecord, Decision, VerifierPolicy, DEFAULT_MAX_REPAIR_ATTEMPTS};
use crate::Metrics;

pub const REDACTED_FILE: &str = "redacted.jsonl";
pub const AUDIT_FILE: &str = "audit.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    RulesOnly,
    LlmSingle,
    Hybrid,
    HybridEv,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::RulesOnly, Preset::LlmSingle, Preset::Hybrid, Preset::HybridEv];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::RulesOnly => "rules_only",
            Preset::LlmSingle => "llm_single",
            Preset::Hybrid => "hybrid",
            Preset::HybridEv => "hybrid_ev",
        }
    }

    /// Label used in reports.
    pub fn config_label(self) -> &'static str {
        match self {
            Preset::RulesOnly => "rules_only",
            Preset::LlmSingle => "llm_finetuned",
            Preset::Hybrid => "hybrid",
            Preset::HybridEv => "hybrid_ev",
        }
    }

    pub fn uses_extractor(self) -> bool {
        !matches!(self, Preset::RulesOnly)
    }

    pub fn uses_verifier(self) -> bool {
        matches!(self, Preset::HybridEv)
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| PipelineError::InvalidConfig(format!("unknown preset {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub preset: Preset,
    pub ensemble: EnsembleConfig,
    pub policy: VerifierPolicy,
    pub extractor_backend: Option<BackendConfig>,
    pub verifier_backend: Option<BackendConfig>,
    pub output_style: RedactionStyle,
    pub parallelism: usize,
    pub max_repair_attempts: usize,
    /// Audit timestamps pinned to the Unix epoch so logs are byte-reproducible.
    pub fixed_timestamps: bool,
}

impl PipelineConfig {
    pub fn new(preset: Preset) -> Self {
        PipelineConfig {
            preset,
            ensemble: EnsembleConfig::default(),
            policy: VerifierPolicy::default(),
            extractor_backend: None,
            verifier_backend: None,
            output_style: RedactionStyle::default(),
            parallelism: 4,
            max_repair_attempts: DEFAULT_MAX_REPAIR_ATTEMPTS,
            fixed_timestamps: false,
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let invalid = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        if self.parallelism == 0 {
            return invalid("parallelism must be positive");
        }
        if self.preset.uses_extractor() {
            match &self.extractor_backend {
                None => return invalid(&format!("preset {} requires an extractor backend", self.preset)),
                Some(b) => b.validate()?,
            }
            self.ensemble.validate()?;
        }
        if self.preset.uses_verifier() {
            match &self.verifier_backend {
                None => return invalid("preset hybrid_ev requires a verifier backend"),
                Some(b) => b.validate()?,
            }
        }
        self.output_style.validate().map_err(|e| PipelineError::InvalidConfig(e.to_string()))
    }

    fn audit_clock(&self) -> AuditClock {
        if self.fixed_timestamps {
            AuditClock::epoch()
        } else {
            AuditClock::Wall
        }
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("every backend call failed; {failed} narrative(s) unprocessed")]
    AllBackendsDown { failed: usize },
}

/// Result of pushing one narrative through the preset's stages.
#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeResult {
    pub id: String,
    pub outcome: Result<ProcessedNarrative, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProcessedNarrative {
    /// Candidates before verification.
    pub extracted: CandidateSet,
    pub final_set: CandidateSet,
    pub audit: Vec<AuditRecord>,
    pub ensemble: EnsembleStats,
    pub verifier_calls: usize,
    pub demoted: usize,
    pub degraded: bool,
    pub rendered: String,
    /// Tagged output was impossible (delimiter in source); placeholders used.
    pub placeholder_fallback: bool,
}

struct Stages {
    config: PipelineConfig,
    extractor: Option<Gateway>,
    verifier: Option<Gateway>,
}

impl Stages {
    fn new(config: &PipelineConfig) -> Result<Self, PipelineError> {
        config.validate()?;
        let extractor = match (&config.extractor_backend, config.preset.uses_extractor()) {
            (Some(b), true) => Some(Gateway::from_config(b)?),
            _ => None,
        };
        let verifier = match (&config.verifier_backend, config.preset.uses_verifier()) {
            (Some(b), true) => Some(Gateway::from_config(b)?),
            _ => None,
        };
        Ok(Stages {
            config: config.clone(),
            extractor,
            verifier,
        })
    }

    fn extract(&self, n: &Narrative) -> Result<(CandidateSet, EnsembleStats), ExtractError> {
        let cfg = &self.config.ensemble;
        let gw = || self.extractor.as_ref().expect("extractor gateway configured");
        match self.config.preset {
            Preset::RulesOnly => Ok((extractor::rule_candidates(n), EnsembleStats::default())),
            Preset::LlmSingle => {
                let set = extractor::llm_only_extract(n, gw(), Some(cfg.run_seed(0)), cfg.discard_hallucinated_runs)?;
                Ok((set, EnsembleStats::default()))
            }
            Preset::Hybrid => {
                let single = EnsembleConfig {
                    k_runs: 1,
                    ..cfg.clone()
                };
                let out = extractor::hybrid_extract(n, gw(), &single)?;
                Ok((out.candidates, out.stats))
            }
            Preset::HybridEv => {
                let out = extractor::hybrid_extract(n, gw(), cfg)?;
                Ok((out.candidates, out.stats))
            }
        }
    }

    fn process(&self, n: &Narrative) -> Result<ProcessedNarrative, String> {
        if n.text.is_empty() && self.config.preset.uses_extractor() {
            // Nothing to send; nothing to redact.
            let empty = CandidateSet::new(n.id.clone());
            return Ok(ProcessedNarrative {
                extracted: empty.clone(),
                final_set: empty,
                audit: Vec::new(),
                ensemble: EnsembleStats::default(),
                verifier_calls: 0,
                demoted: 0,
                degraded: false,
                rendered: String::new(),
                placeholder_fallback: false,
            });
        }
        let (extracted, ensemble) = self.extract(n).map_err(|e| e.to_string())?;

        let (final_set, audit, verifier_calls, demoted, degraded) = match &self.verifier {
            Some(gw) => {
                let out = verifier::verify_candidates(
                    n,
                    &extracted,
                    gw,
                    self.config.policy,
                    self.config.max_repair_attempts,
                    self.config.audit_clock(),
                )
                .map_err(|e| e.to_string())?;
                (out.final_set, out.audit, out.calls, out.demoted, out.degraded)
            }
            None => (extracted.clone(), Vec::new(), 0, 0, false),
        };

        let style = &self.config.output_style;
        let tagged_blocked = style.mode == RedactionMode::Tagged && n.has_delimiter_collision();
        let rendered = if tagged_blocked {
            redactor::render(n, &final_set, &RedactionStyle::new(RedactionMode::Placeholder))
        } else {
            redactor::render(n, &final_set, style)
        }
        .map_err(|e| e.to_string())?;

        Ok(ProcessedNarrative {
            extracted,
            final_set,
            audit,
            ensemble,
            verifier_calls,
            demoted,
            degraded,
            rendered,
            placeholder_fallback: tagged_blocked,
        })
    }
}

/// In-memory run over a corpus. Results are in corpus order.
#[derive(Debug, Clone)]
pub struct CorpusRun {
    pub results: Vec<NarrativeResult>,
    pub extractor_backend_id: Option<String>,
    pub verifier_backend_id: Option<String>,
    pub wall_time_ms: u128,
}

impl CorpusRun {
    /// Final candidate sets of processed narratives, keyed by id.
    pub fn predictions(&self) -> BTreeMap<String, CandidateSet> {
        self.results
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok().map(|p| (r.id.clone(), p.final_set.clone())))
            .collect()
    }

    pub fn audit(&self) -> Vec<AuditRecord> {
        self.results
            .iter()
            .filter_map(|r| r.outcome.as_ref().ok())
            .flat_map(|p| p.audit.iter().cloned())
            .collect()
    }

    pub fn redacted(&self) -> Vec<RedactedRecord> {
        self.results
            .iter()
            .filter_map(|r| {
                r.outcome.as_ref().ok().map(|p| RedactedRecord {
                    id: r.id.clone(),
                    redacted_text: p.rendered.clone(),
                    pii_found: !p.final_set.is_empty(),
                })
            })
            .collect()
    }

    pub fn failures(&self) -> Vec<FailedNarrative> {
        self.results
            .iter()
            .filter_map(|r| {
                r.outcome.as_ref().err().map(|reason| FailedNarrative {
                    id: r.id.clone(),
                    reason: reason.clone(),
                })
            })
            .collect()
    }
}

pub fn run_corpus(config: &PipelineConfig, corpus: &Corpus) -> Result<CorpusRun, PipelineError> {
    run_stages(Stages::new(config)?, corpus)
}

/// Like [`run_corpus`] but with caller-supplied gateways in place of the
/// backends named in `config`, which are ignored.
pub fn run_corpus_with(
    config: &PipelineConfig,
    corpus: &Corpus,
    extractor: Option<Gateway>,
    verifier: Option<Gateway>,
) -> Result<CorpusRun, PipelineError> {
    let mut check = config.clone();
    check.extractor_backend = extractor.as_ref().map(|_| BackendConfig::scripted_mock("<injected>"));
    check.verifier_backend = verifier.as_ref().map(|_| BackendConfig::scripted_mock("<injected>"));
    check.validate()?;
    let stages = Stages {
        config: config.clone(),
        extractor: extractor.filter(|_| config.preset.uses_extractor()),
        verifier: verifier.filter(|_| config.preset.uses_verifier()),
    };
    run_stages(stages, corpus)
}

fn run_stages(stages: Stages, corpus: &Corpus) -> Result<CorpusRun, PipelineError> {
    let config = &stages.config;
    let started = Instant::now();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| PipelineError::InvalidConfig(e.to_string()))?;
    let results = pool.install(|| {
        corpus
            .narratives
            .par_iter()
            .map(|n| {
                let outcome = stages.process(n);
                if outcome.is_err() {
                    log::error!("narrative {} unprocessed", n.id);
                }
                NarrativeResult {
                    id: n.id.clone(),
                    outcome,
                }
            })
            .collect()
    });
    Ok(CorpusRun {
        results,
        extractor_backend_id: stages.extractor.as_ref().map(|g| g.backend_id().to_string()),
        verifier_backend_id: stages.verifier.as_ref().map(|g| g.backend_id().to_string()),
        wall_time_ms: started.elapsed().as_millis(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedNarrative {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunCounts {
    pub narratives: usize,
    pub processed: usize,
    pub candidates_by_category: BTreeMap<PiiCategory, usize>,
    pub kept: usize,
    pub dropped: usize,
    pub uncertain: usize,
    pub demoted: usize,
    pub degraded_verifications: usize,
    pub verifier_calls: usize,
    pub hallucinated_runs: u32,
    pub failed_runs: u32,
    pub placeholder_fallbacks: usize,
}

impl RunCounts {
    fn from_run(run: &CorpusRun) -> Self {
        let mut counts = RunCounts {
            narratives: run.results.len(),
            candidates_by_category: PiiCategory::ALL.into_iter().map(|c| (c, 0)).collect(),
            ..Default::default()
        };
        for p in run.results.iter().filter_map(|r| r.outcome.as_ref().ok()) {
            counts.processed += 1;
            for (cat, _) in p.final_set.iter() {
                *counts.candidates_by_category.entry(cat).or_default() += 1;
            }
            for a in &p.audit {
                match a.review.decision {
                    Decision::Keep => counts.kept += 1,
                    Decision::Drop => counts.dropped += 1,
                    Decision::Uncertain => counts.uncertain += 1,
                }
            }
            counts.demoted += p.demoted;
            counts.degraded_verifications += usize::from(p.degraded);
            counts.verifier_calls += p.verifier_calls;
            counts.hallucinated_runs += p.ensemble.hallucinated_runs;
            counts.failed_runs += p.ensemble.failed_runs;
            counts.placeholder_fallbacks += usize::from(p.placeholder_fallback);
        }
        counts
    }
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub config: PipelineConfig,
    pub input: PathBuf,
    pub output_dir: PathBuf,
    pub extractor_backend_id: Option<String>,
    pub verifier_backend_id: Option<String>,
    pub counts: RunCounts,
    pub failed: Vec<FailedNarrative>,
    pub wall_time_ms: u128,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub counts: RunCounts,
    pub failed: Vec<FailedNarrative>,
    pub redacted_path: PathBuf,
    pub audit_path: Option<PathBuf>,
    pub manifest_path: PathBuf,
    pub wall_time_ms: u128,
}

impl RunSummary {
    pub fn succeeded(&self) -> bool {
        self.failed.is_empty()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Runs the preset over `input` and writes the redacted JSONL, the audit log
/// (when the verifier runs) and the manifest into `output_dir`.
pub fn run_pipeline(config: &PipelineConfig, input: &Path, output_dir: &Path) -> Result<RunSummary, PipelineError> {
    config.validate()?;
    let corpus = corpus::load_narratives(input, CorpusFormat::from_path(input))?;
    fs::create_dir_all(output_dir).map_err(io_err(output_dir))?;

    let run = run_corpus(config, &corpus)?;

    let redacted_path = output_dir.join(REDACTED_FILE);
    corpus::write_jsonl(&redacted_path, &run.redacted())?;

    let audit_path = if config.preset.uses_verifier() {
        let path = output_dir.join(AUDIT_FILE);
        corpus::reset_file(&path)?;
        corpus::write_audit_log(&path, &run.audit())?;
        Some(path)
    } else {
        None
    };

    let counts = RunCounts::from_run(&run);
    let failed = run.failures();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        input: input.to_path_buf(),
        output_dir: output_dir.to_path_buf(),
        extractor_backend_id: run.extractor_backend_id.clone(),
        verifier_backend_id: run.verifier_backend_id.clone(),
        counts: counts.clone(),
        failed: failed.clone(),
        wall_time_ms: run.wall_time_ms,
    };
    let manifest_path = output_dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serialization is infallible");
    fs::write(&manifest_path, json + "\n").map_err(io_err(&manifest_path))?;

    if !corpus.is_empty() && failed.len() == corpus.len() && config.preset.uses_extractor() {
        return Err(PipelineError::AllBackendsDown { failed: failed.len() });
    }

    Ok(RunSummary {
        counts,
        failed,
        redacted_path,
        audit_path,
        manifest_path,
        wall_time_ms: run.wall_time_ms,
    })
}

pub fn load_manifest(path: &Path) -> Result<Manifest, PipelineError> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&raw).map_err(|e| PipelineError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Re-runs the configuration recorded in a manifest, into `output_dir` or the
/// manifest's own output directory.
pub fn replay_manifest(path: &Path, output_dir: Option<&Path>) -> Result<RunSummary, PipelineError> {
    let manifest = load_manifest(path)?;
    let out = output_dir.unwrap_or(&manifest.output_dir);
    run_pipeline(&manifest.config, &manifest.input, out)
}

/// Loads `input` with gold annotations from `gold`.
pub fn load_scored_corpus(input: &Path, gold: &Path) -> Result<Corpus, PipelineError> {
    let mut corpus = corpus::load_narratives(input, CorpusFormat::from_path(input))?;
    corpus.attach_gold(corpus::load_gold(gold)?)?;
    Ok(corpus)
}

fn text_report_path(report_path: &Path) -> PathBuf {
    report_path.with_extension("txt")
}

/// Scores one run. Unprocessed narratives count as predicting nothing.
pub fn score_run(config: &PipelineConfig, corpus: &Corpus) -> Result<(Metrics, CorpusRun), PipelineError> {
    let run = run_corpus(config, corpus)?;
    let report = Metrics::score(config.preset.config_label(), corpus, &run.predictions());
    Ok((report, run))
}

/// Runs the pipeline, scores it against `gold`, and writes `report_path`
/// (JSON) plus a plain-text table next to it.
pub fn run_eval(config: &PipelineConfig, input: &Path, gold: &Path, report_path: &Path) -> Result<Metrics, PipelineError> {
    let corpus = load_scored_corpus(input, gold)?;
    let (report, run) = score_run(config, &corpus)?;
    let mut json = report.to_json();
    json["unprocessed"] = serde_json::to_value(run.failures()).expect("serializable");
    let pretty = serde_json::to_string_pretty(&json).expect("serializable") + "\n";
    fs::write(report_path, pretty).map_err(io_err(report_path))?;
    let text_path = text_report_path(report_path);
    fs::write(&text_path, evalkit::metrics_table(std::slice::from_ref(&report))).map_err(io_err(&text_path))?;
    Ok(report)
}

/// Scores several configurations on the same corpus and writes the metrics
/// and ablation tables.
pub fn run_ablation(configs: &[PipelineConfig], input: &Path, gold: &Path, report_path: &Path) -> Result<Vec<Metrics>, PipelineError> {
    let corpus = load_scored_corpus(input, gold)?;
    let reports = configs
        .iter()
        .map(|c| score_run(c, &corpus).map(|(r, _)| r))
        .collect::<Result<Vec<_>, _>>()?;
    let table = evalkit::ablation_table(&reports)?;
    let json = serde_json::Value::Array(reports.iter().map(|r| r.to_json()).collect());
    fs::write(report_path, serde_json::to_string_pretty(&json).expect("serializable") + "\n").map_err(io_err(report_path))?;
    let text_path = text_report_path(report_path);
    let text = format!("{}\n{}", evalkit::metrics_table(&reports), table);
    fs::write(&text_path, text).map_err(io_err(&text_path))?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_round_trip() {
        for p in Preset::ALL {
            assert_eq!(p.as_str().parse::<Preset>().unwrap(), p);
        }
        assert!("hybrid_v".parse::<Preset>().is_err());
    }

    #[test]
    fn config_requirements() {
        assert!(PipelineConfig::new(Preset::RulesOnly).validate().is_ok());
        assert!(PipelineConfig::new(Preset::Hybrid).validate().is_err());
        let mut c = PipelineConfig::new(Preset::HybridEv);
        c.extractor_backend = Some(BackendConfig::scripted_mock("x.jsonl"));
        assert!(c.validate().is_err());
        c.verifier_backend = Some(BackendConfig::scripted_mock("y.jsonl"));
        assert!(c.validate().is_ok());
        c.parallelism = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn rules_only_needs_no_backend() {
        let corpus = Corpus::new(vec![Narrative::new("n1", "EMAILED jsmith@gmail.com TODAY")]).unwrap();
        let run = run_corpus(&PipelineConfig::new(Preset::RulesOnly), &corpus).unwrap();
        assert_eq!(run.redacted()[0].redacted_text, "EMAILED %%%jsmith@gmail.com%%% TODAY");
        assert!(run.extractor_backend_id.is_none());
    }
}
