//! Narrative corpora, gold sidecars and JSONL artifacts.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::tagspec::{self, PiiCategory};
use crate::verifier::AuditRecord;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Narrative {
    pub id: String,
    pub text: String,
}

impl Narrative {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Narrative {
            id: id.into(),
            text: text.into(),
        }
    }

    /// The source text already contains a tag delimiter, so tagged extractor
    /// output for it cannot be parsed unambiguously.
    pub fn has_delimiter_collision(&self) -> bool {
        tagspec::contains_delimiter(&self.text)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GoldAnnotation {
    pub narrative_id: String,
    pub category: PiiCategory,
    pub surface: String,
}

impl GoldAnnotation {
    pub fn new(narrative_id: impl Into<String>, category: PiiCategory, surface: impl Into<String>) -> Self {
        GoldAnnotation {
            narrative_id: narrative_id.into(),
            category,
            surface: surface.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Csv,
}

impl CorpusFormat {
    /// Guesses from the file extension, defaulting to JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => CorpusFormat::Csv,
            _ => CorpusFormat::Jsonl,
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: field `{field}`: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("duplicate narrative id {0:?}")]
    DuplicateId(String),
    #[error("gold annotation on line {line} references unknown narrative {narrative_id:?}")]
    DanglingGold { line: usize, narrative_id: String },
    #[error("gold annotation on line {line}: surface {surface:?} does not occur in narrative {narrative_id:?}")]
    SurfaceNotInNarrative {
        line: usize,
        narrative_id: String,
        surface: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    pub narratives: Vec<Narrative>,
    pub gold: Option<Vec<GoldAnnotation>>,
}

impl Corpus {
    /// Builds a corpus, rejecting duplicate or empty ids.
    pub fn new(narratives: Vec<Narrative>) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for n in &narratives {
            if !seen.insert(n.id.as_str()) {
                return Err(CorpusError::DuplicateId(n.id.clone()));
            }
        }
        Ok(Corpus { narratives, gold: None })
    }

    pub fn len(&self) -> usize {
        self.narratives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.narratives.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Narrative> {
        self.narratives.iter().find(|n| n.id == id)
    }

    /// Attaches gold annotations after checking each one resolves to a
    /// narrative and its surface occurs in that narrative's text.
    pub fn attach_gold(&mut self, gold: Vec<GoldAnnotation>) -> Result<(), CorpusError> {
        let texts: BTreeMap<&str, &str> = self.narratives.iter().map(|n| (n.id.as_str(), n.text.as_str())).collect();
        for (idx, g) in gold.iter().enumerate() {
            let Some(text) = texts.get(g.narrative_id.as_str()) else {
                return Err(CorpusError::DanglingGold {
                    line: idx + 1,
                    narrative_id: g.narrative_id.clone(),
                });
            };
            if g.surface.is_empty() || !text.contains(&g.surface) {
                return Err(CorpusError::SurfaceNotInNarrative {
                    line: idx + 1,
                    narrative_id: g.narrative_id.clone(),
                    surface: g.surface.clone(),
                });
            }
        }
        self.gold = Some(gold);
        Ok(())
    }

    pub fn gold(&self) -> &[GoldAnnotation] {
        self.gold.as_deref().unwrap_or(&[])
    }

    pub fn gold_for<'a>(&'a self, id: &'a str) -> impl Iterator<Item = &'a GoldAnnotation> + 'a {
        self.gold().iter().filter(move |g| g.narrative_id == id)
    }

    /// Number of narratives with at least one gold instance of `category`.
    pub fn narratives_with(&self, category: PiiCategory) -> usize {
        let ids: HashSet<&str> = self
            .gold()
            .iter()
            .filter(|g| g.category == category)
            .map(|g| g.narrative_id.as_str())
            .collect();
        ids.len()
    }

    /// Number of gold instances of `category` across the corpus.
    pub fn instances_of(&self, category: PiiCategory) -> usize {
        self.gold().iter().filter(|g| g.category == category).count()
    }

    /// Narratives with at least one gold annotation of any category.
    pub fn gold_positive_narratives(&self) -> usize {
        let ids: HashSet<&str> = self.gold().iter().map(|g| g.narrative_id.as_str()).collect();
        ids.len()
    }

    /// Ids of narratives whose text contains a tag delimiter.
    pub fn flagged_ids(&self) -> Vec<&str> {
        self.narratives
            .iter()
            .filter(|n| n.has_delimiter_collision())
            .map(|n| n.id.as_str())
            .collect()
    }
}

/// The gold sidecar looked for next to a corpus file: `narratives.jsonl` pairs
/// with `narratives.gold.jsonl`.
pub fn gold_sidecar_path(corpus_path: &Path) -> PathBuf {
    let stem = corpus_path.file_stem().and_then(|s| s.to_str()).unwrap_or("corpus");
    corpus_path.with_file_name(format!("{stem}.gold.jsonl"))
}

/// Loads a corpus and, when a gold sidecar exists beside it, its annotations.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let mut corpus = load_narratives(path, format)?;
    let sidecar = gold_sidecar_path(path);
    if sidecar.is_file() {
        corpus.attach_gold(load_gold(&sidecar)?)?;
    }
    Ok(corpus)
}

/// Loads narratives only; no sidecar lookup.
pub fn load_narratives(path: &Path, format: CorpusFormat) -> Result<Corpus, CorpusError> {
    let narratives = match format {
        CorpusFormat::Jsonl => read_narratives_jsonl(path)?,
        CorpusFormat::Csv => read_narratives_csv(path)?,
    };
    Corpus::new(narratives)
}

fn string_field(obj: &serde_json::Map<String, Value>, field: &str) -> Result<String, String> {
    match obj.get(field) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err("expected a string".to_string()),
        None => Err("missing".to_string()),
    }
}

/// A parsed JSONL object with its 1-based line number.
type NumberedObject = (usize, serde_json::Map<String, Value>);

fn jsonl_objects(path: &Path) -> Result<Vec<NumberedObject>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |field: &str, message: String| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: line_no,
            field: field.to_string(),
            message,
        };
        match serde_json::from_str::<Value>(&line) {
            Ok(Value::Object(obj)) => out.push((line_no, obj)),
            Ok(_) => return Err(malformed("<record>", "expected a JSON object".into())),
            Err(e) => return Err(malformed("<record>", e.to_string())),
        }
    }
    Ok(out)
}

fn read_narratives_jsonl(path: &Path) -> Result<Vec<Narrative>, CorpusError> {
    jsonl_objects(path)?
        .into_iter()
        .map(|(line, obj)| {
            let malformed = |field: &str, message: String| CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                field: field.to_string(),
                message,
            };
            let id = string_field(&obj, "id").map_err(|m| malformed("id", m))?;
            if id.is_empty() {
                return Err(malformed("id", "empty".into()));
            }
            let text = string_field(&obj, "text").map_err(|m| malformed("text", m))?;
            Ok(Narrative { id, text })
        })
        .collect()
}

fn read_narratives_csv(path: &Path) -> Result<Vec<Narrative>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let malformed = |line: usize, field: &str, message: String| CorpusError::Malformed {
        path: path.to_path_buf(),
        line,
        field: field.to_string(),
        message,
    };
    let headers = reader.headers().map_err(|e| malformed(1, "<header>", e.to_string()))?.clone();
    let id_col = headers.iter().position(|h| h == "id").ok_or_else(|| malformed(1, "id", "missing column".into()))?;
    let text_col = headers
        .iter()
        .position(|h| h == "text")
        .ok_or_else(|| malformed(1, "text", "missing column".into()))?;

    let mut narratives = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            malformed(line, "<record>", e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let id = record.get(id_col).ok_or_else(|| malformed(line, "id", "missing".into()))?;
        if id.is_empty() {
            return Err(malformed(line, "id", "empty".into()));
        }
        let text = record.get(text_col).ok_or_else(|| malformed(line, "text", "missing".into()))?;
        narratives.push(Narrative::new(id, text));
    }
    Ok(narratives)
}

pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>, CorpusError> {
    jsonl_objects(path)?
        .into_iter()
        .map(|(line, obj)| {
            let malformed = |field: &str, message: String| CorpusError::Malformed {
                path: path.to_path_buf(),
                line,
                field: field.to_string(),
                message,
            };
            let narrative_id = string_field(&obj, "narrative_id").map_err(|m| malformed("narrative_id", m))?;
            let category = string_field(&obj, "category")
                .map_err(|m| malformed("category", m))?
                .parse::<PiiCategory>()
                .map_err(|e| malformed("category", e.to_string()))?;
            let surface = string_field(&obj, "surface").map_err(|m| malformed("surface", m))?;
            Ok(GoldAnnotation {
                narrative_id,
                category,
                surface,
            })
        })
        .collect()
}

/// Writes `rows` as JSONL, replacing any existing file.
pub fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for row in rows {
        let line = serde_json::to_string(row).expect("record serialization is infallible");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            field: "<record>".into(),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn write_corpus(path: &Path, corpus: &Corpus, format: CorpusFormat) -> Result<(), CorpusError> {
    match format {
        CorpusFormat::Jsonl => write_jsonl(path, &corpus.narratives)?,
        CorpusFormat::Csv => {
            let mut w = csv::Writer::from_path(path).map_err(|e| CorpusError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            })?;
            let csv_io = |e: csv::Error| CorpusError::Io {
                path: path.to_path_buf(),
                source: e.into(),
            };
            w.write_record(["id", "text"]).map_err(csv_io)?;
            for n in &corpus.narratives {
                w.write_record([&n.id, &n.text]).map_err(csv_io)?;
            }
            w.flush().map_err(io_err(path))?;
        }
    }
    if let Some(gold) = &corpus.gold {
        write_jsonl(&gold_sidecar_path(path), gold)?;
    }
    Ok(())
}

/// Appends audit records, one JSON object per line. Serialization is
/// deterministic, so the same records always produce the same bytes.
pub fn write_audit_log(path: &Path, records: &[AuditRecord]) -> Result<(), CorpusError> {
    let file = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for record in records {
        writeln!(w, "{}", record.to_json_line()).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_audit_log(path: &Path) -> Result<Vec<AuditRecord>, CorpusError> {
    read_jsonl(path)
}

/// Removes `path` if present; used to start a fresh audit log per run.
pub fn reset_file(path: &Path) -> Result<(), CorpusError> {
    match fs::remove_file(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(io_err(path)(e)),
    }
}
