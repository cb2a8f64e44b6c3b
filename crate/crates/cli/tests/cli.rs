use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use narrative_deid::gateway::{self, FixtureEntry};

const NARRATIVE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47. NO INJURIES.";
const SURFACE: &str = "4647 HIGHWAY 47";
const EVIDENCE: &str = "UNIT 1 HIT THE DRIVEWAY OF 4647 HIGHWAY 47.";

fn deid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deid")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Input with the crash-site narrative, plus mock fixtures that tag the
/// address and have the verifier drop it.
fn setup(dir: &Path) -> (PathBuf, PathBuf) {
    let input = dir.join("narratives.jsonl");
    fs::write(&input, format!("{{\"id\":\"crash-site\",\"text\":\"{NARRATIVE}\"}}\n")).unwrap();
    let review = format!(
        "{{\"home_address_reviews\":[{{\"text\":\"{SURFACE}\",\"decision\":\"DROP\",\"reason\":\"crash location\",\"evidence\":\"{EVIDENCE}\"}}],\"alphanumeric_reviews\":[]}}"
    );
    let entries = [
        FixtureEntry::new(
            &gateway::build_extraction_prompt(NARRATIVE).unwrap(),
            NARRATIVE.replace(SURFACE, &format!("$$${SURFACE}$$$")),
        ),
        FixtureEntry::new(&gateway::build_verifier_prompt(NARRATIVE, &[SURFACE.to_string()], &[]).unwrap(), review),
    ];
    let fixtures = dir.join("fixtures.jsonl");
    gateway::write_fixtures(&fixtures, &entries).unwrap();
    (input, fixtures)
}

#[test]
fn run_with_mocks() {
    let dir = tempfile::tempdir().unwrap();
    let (input, fixtures) = setup(dir.path());
    let out = dir.path().join("out");
    let o = deid(&["run", "--input", s(&input), "--mock-fixtures", s(&fixtures), "--fixed-timestamps", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty());
    let redacted = fs::read_to_string(out.join("redacted.jsonl")).unwrap();
    assert!(redacted.contains(NARRATIVE));
    let audit = fs::read_to_string(out.join("audit.jsonl")).unwrap();
    assert!(audit.contains("\"decision\":\"DROP\""));
    assert!(audit.contains("1970-01-01"));
    assert!(out.join("manifest.json").exists());

    let again = dir.path().join("again");
    let o = deid(&["replay", "--manifest", s(&out.join("manifest.json")), "--out", s(&again)]);
    assert!(o.status.success());
    assert_eq!(fs::read(out.join("audit.jsonl")).unwrap(), fs::read(again.join("audit.jsonl")).unwrap());
}

#[test]
fn unprocessed_narratives_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let (input, fixtures) = setup(dir.path());
    let secret = "DRIVER JANE ROE SAID NOTHING.";
    let mut text = fs::read_to_string(&input).unwrap();
    text.push_str(&format!("{{\"id\":\"extra\",\"text\":\"{secret}\"}}\n"));
    fs::write(&input, text).unwrap();
    let out = dir.path().join("out");
    let o = deid(&["run", "--input", s(&input), "--mock-fixtures", s(&fixtures), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("extra"));
    assert!(!err.contains("JANE ROE"));
}

#[test]
fn backends_down_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = setup(dir.path());
    let empty = dir.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let o = deid(&["run", "--input", s(&input), "--mock-fixtures", s(&empty), "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn configuration_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let (input, _) = setup(dir.path());
    let o = deid(&["run", "--input", s(&input), "--preset", "hybrid", "--out", s(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("--extractor-endpoint"));
}

#[test]
fn eval_and_ablate_write_reports() {
    let dir = tempfile::tempdir().unwrap();
    let (input, fixtures) = setup(dir.path());
    let gold = dir.path().join("gold.jsonl");
    fs::write(&gold, "").unwrap();

    let report = dir.path().join("report.json");
    let o = deid(&["eval", "--input", s(&input), "--mock-fixtures", s(&fixtures), "--gold", s(&gold), "--out", s(&report)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(fs::read_to_string(&report).unwrap().contains("\"config_label\": \"hybrid_ev\""));

    let ablation = dir.path().join("ablation.json");
    let o = deid(&[
        "ablate", "--input", s(&input), "--mock-fixtures", s(&fixtures), "--gold", s(&gold), "--out", s(&ablation),
        "--presets", "rules_only,hybrid,hybrid_ev",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(ablation.with_extension("txt")).unwrap();
    for label in ["rules_only", "hybrid", "hybrid_ev"] {
        assert!(text.contains(label), "{label} missing from\n{text}");
    }
}
