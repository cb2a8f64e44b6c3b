use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use narrative_deid::pipeline::{self, PipelineError};
use narrative_deid::{BackendConfig, EnsembleConfig, PipelineConfig, Preset, RedactionMode, RedactionStyle, VerifierPolicy};

#[derive(Parser)]
#[command(name = "deid", version, about = "De-identify crash narratives with rules, an LLM tagger and a verifier")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Redact a corpus and write redacted.jsonl, audit.jsonl and manifest.json.
    Run {
        #[command(flatten)]
        opts: PipelineArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a preset and score it against gold annotations.
    Eval {
        #[command(flatten)]
        opts: PipelineArgs,
        #[arg(long)]
        gold: PathBuf,
        /// JSON report path; a text table is written alongside with a .txt extension.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score several presets on the same corpus and print the ablation table to the report.
    Ablate {
        #[command(flatten)]
        opts: PipelineArgs,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated presets, in table order.
        #[arg(long, value_delimiter = ',', default_value = "hybrid,hybrid_ev")]
        presets: Vec<PresetArg>,
    },
    /// Re-run the configuration recorded in a manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory; defaults to the one recorded in the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    #[value(name = "rules_only")]
    RulesOnly,
    #[value(name = "llm_single")]
    LlmSingle,
    #[value(name = "hybrid")]
    Hybrid,
    #[value(name = "hybrid_ev")]
    HybridEv,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::RulesOnly => Preset::RulesOnly,
            PresetArg::LlmSingle => Preset::LlmSingle,
            PresetArg::Hybrid => Preset::Hybrid,
            PresetArg::HybridEv => Preset::HybridEv,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PolicyArg {
    RecallFirst,
    PrecisionFirst,
}

#[derive(Clone, Copy, ValueEnum)]
enum RedactionArg {
    Tagged,
    Placeholder,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum, default_value = "hybrid_ev")]
    preset: PresetArg,
    #[arg(long = "k-ensemble", default_value_t = 5)]
    k_ensemble: u32,
    #[arg(long, value_enum, default_value = "recall-first")]
    policy: PolicyArg,
    #[arg(long)]
    extractor_endpoint: Option<String>,
    #[arg(long)]
    verifier_endpoint: Option<String>,
    /// Model name sent to HTTP endpoints.
    #[arg(long)]
    model: Option<String>,
    /// Scripted mock fixtures used for any stage without an endpoint.
    #[arg(long)]
    mock_fixtures: Option<PathBuf>,
    #[arg(long, default_value_t = 4)]
    parallelism: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "tagged")]
    redaction: RedactionArg,
    #[arg(long, default_value_t = 2)]
    max_repair_attempts: usize,
    /// Pin audit timestamps to the Unix epoch for byte-reproducible logs.
    #[arg(long)]
    fixed_timestamps: bool,
}

impl PipelineArgs {
    fn backend(&self, endpoint: &Option<String>, stage: &str) -> Result<BackendConfig> {
        match (endpoint, &self.mock_fixtures) {
            (Some(url), _) => {
                let mut b = BackendConfig::http(url.clone());
                b.model_name = self.model.clone();
                Ok(b)
            }
            (None, Some(path)) => Ok(BackendConfig::scripted_mock(path.clone())),
            (None, None) => bail!("the {stage} stage needs --{stage}-endpoint or --mock-fixtures"),
        }
    }

    fn config(&self, preset: Preset) -> Result<PipelineConfig> {
        let mut config = PipelineConfig::new(preset);
        config.ensemble = EnsembleConfig {
            seed: self.seed,
            ..EnsembleConfig::with_k(self.k_ensemble)
        };
        config.policy = match self.policy {
            PolicyArg::RecallFirst => VerifierPolicy::RECALL_FIRST,
            PolicyArg::PrecisionFirst => VerifierPolicy::PRECISION_FIRST,
        };
        if preset.uses_extractor() {
            config.extractor_backend = Some(self.backend(&self.extractor_endpoint, "extractor")?);
        }
        if preset.uses_verifier() {
            config.verifier_backend = Some(self.backend(&self.verifier_endpoint, "verifier")?);
        }
        config.output_style = RedactionStyle::new(match self.redaction {
            RedactionArg::Tagged => RedactionMode::Tagged,
            RedactionArg::Placeholder => RedactionMode::Placeholder,
        });
        config.parallelism = self.parallelism;
        config.max_repair_attempts = self.max_repair_attempts;
        config.fixed_timestamps = self.fixed_timestamps;
        config.validate()?;
        Ok(config)
    }
}

fn report_run(result: Result<pipeline::RunSummary, PipelineError>) -> Result<ExitCode> {
    let summary = match result {
        Ok(s) => s,
        Err(PipelineError::AllBackendsDown { failed }) => {
            eprintln!("error: every narrative failed ({failed}); see manifest.json for details");
            return Ok(ExitCode::from(3));
        }
        Err(e) => return Err(e.into()),
    };
    let c = &summary.counts;
    eprintln!(
        "processed {}/{} narratives in {} ms; verifier kept {}, dropped {}, uncertain {}",
        c.processed, c.narratives, summary.wall_time_ms, c.kept, c.dropped, c.uncertain
    );
    if summary.succeeded() {
        return Ok(ExitCode::SUCCESS);
    }
    // Ids only: failure reasons can quote narrative text.
    eprintln!("{} narrative(s) unprocessed:", summary.failed.len());
    for f in &summary.failed {
        eprintln!("  {}", f.id);
    }
    Ok(ExitCode::from(2))
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { opts, out } => {
            let config = opts.config(opts.preset.into())?;
            report_run(pipeline::run_pipeline(&config, &opts.input, &out))
        }
        Command::Eval { opts, gold, out } => {
            let config = opts.config(opts.preset.into())?;
            pipeline::run_eval(&config, &opts.input, &gold, &out)?;
            eprintln!("report written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate {
            opts,
            gold,
            out,
            presets,
        } => {
            let configs = presets
                .into_iter()
                .map(|p| opts.config(p.into()))
                .collect::<Result<Vec<_>>>()?;
            pipeline::run_ablation(&configs, &opts.input, &gold, &out)?;
            eprintln!("ablation written to {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Replay { manifest, out } => {
            let result = pipeline::replay_manifest(&manifest, out.as_deref());
            report_run(result).with_context(|| format!("replaying {}", manifest.display()))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
