//! Scoring against gold annotations.
//!
//! Per-type scoring matches predicted surfaces to gold surfaces as multisets
//! under exact string equality, per narrative and category. Narrative-level
//! scoring is binary: does the narrative contain any PII at all.
//!
//! Ratios are computed in any [`MetricScalar`]: `f64`, `f32`, or the exact
//! [`Ratio`] type, which makes display rounding exact.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Debug, Write as _};

use num_traits::{Num, ToPrimitive};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{Corpus, GoldAnnotation};
use crate::extractor::CandidateSet;
use crate::tagspec::PiiCategory;

/// Exact rational metric value.
pub type Ratio = num_rational::Ratio<u64>;

/// Scalar type metrics are computed in.
pub trait MetricScalar: Num + Clone + PartialOrd + Debug {
    fn from_count(n: u64) -> Self;

    fn to_f64(&self) -> f64;

    /// Rounds half away from zero (half-up for the non-negative values
    /// metrics take) to `places` decimal places.
    fn round_half_up(&self, places: u32) -> Self;
}

impl MetricScalar for f64 {
    fn from_count(n: u64) -> Self {
        n as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }

    fn round_half_up(&self, places: u32) -> Self {
        let scale = 10f64.powi(places as i32);
        (self * scale + 0.5).floor() / scale
    }
}

impl MetricScalar for f32 {
    fn from_count(n: u64) -> Self {
        n as f32
    }

    fn to_f64(&self) -> f64 {
        f64::from(*self)
    }

    fn round_half_up(&self, places: u32) -> Self {
        let scale = 10f32.powi(places as i32);
        (self * scale + 0.5).floor() / scale
    }
}

impl MetricScalar for Ratio {
    fn from_count(n: u64) -> Self {
        Ratio::from_integer(n)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }

    fn round_half_up(&self, places: u32) -> Self {
        let scale = 10u128.pow(places);
        let (n, d) = (u128::from(*self.numer()), u128::from(*self.denom()));
        // floor(n/d * scale + 1/2) == floor((2 n scale + d) / 2d)
        let rounded = (2 * n * scale + d) / (2 * d);
        Ratio::new(rounded as u64, scale as u64)
    }
}

fn ratio<T: MetricScalar>(num: u64, den: u64) -> Option<T> {
    (den > 0).then(|| T::from_count(num) / T::from_count(den))
}

fn harmonic_mean<T: MetricScalar>(p: &T, r: &T) -> T {
    let sum = p.clone() + r.clone();
    if sum == T::zero() {
        return T::zero();
    }
    T::from_count(2) * p.clone() * r.clone() / sum
}

/// Formats an optional metric rounded half-up to two decimals; `-` when undefined.
pub fn display_metric<T: MetricScalar>(value: Option<&T>) -> String {
    match value {
        Some(v) => format!("{:.2}", v.round_half_up(2).to_f64()),
        None => "-".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TypeCounts {
    pub category: PiiCategory,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl TypeCounts {
    pub fn new(category: PiiCategory, tp: u64, fp: u64, fn_: u64) -> Self {
        TypeCounts { category, tp, fp, fn_ }
    }

    pub fn precision<T: MetricScalar>(&self) -> Option<T> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall<T: MetricScalar>(&self) -> Option<T> {
        ratio(self.tp, self.tp + self.fn_)
    }

    /// Harmonic mean of precision and recall; absent unless both are defined.
    pub fn f1<T: MetricScalar>(&self) -> Option<T> {
        Some(harmonic_mean(&self.precision::<T>()?, &self.recall::<T>()?))
    }

    pub fn metrics<T: MetricScalar>(&self) -> TypeMetrics<T> {
        TypeMetrics {
            counts: *self,
            precision: self.precision(),
            recall: self.recall(),
            f1: self.f1(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeMetrics<T> {
    pub counts: TypeCounts,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub f1: Option<T>,
}

/// Confusion counts for the binary "contains any PII" label.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn metrics<T: MetricScalar>(&self) -> NarrativeMetrics<T> {
        let precision: Option<T> = ratio(self.tp, self.tp + self.fp);
        let recall: Option<T> = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (&precision, &recall) {
            (Some(p), Some(r)) => Some(harmonic_mean(p, r)),
            _ => None,
        };
        NarrativeMetrics {
            counts: *self,
            precision,
            recall,
            f1,
            accuracy: ratio(self.tp + self.tn, self.total()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NarrativeMetrics<T> {
    pub counts: BinaryCounts,
    pub precision: Option<T>,
    pub recall: Option<T>,
    pub f1: Option<T>,
    pub accuracy: Option<T>,
}

/// Optional surface normalization before matching. Off by default.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchOptions {
    pub case_insensitive: bool,
    pub collapse_whitespace: bool,
}

impl MatchOptions {
    fn key(&self, surface: &str) -> String {
        let s = if self.collapse_whitespace {
            surface.split_whitespace().collect::<Vec<_>>().join(" ")
        } else {
            surface.to_string()
        };
        if self.case_insensitive {
            s.to_uppercase()
        } else {
            s
        }
    }
}

type Bag = HashMap<(String, PiiCategory, String), u64>;

fn gold_bag(gold: &[GoldAnnotation], opts: MatchOptions) -> Bag {
    let mut bag = Bag::new();
    for g in gold {
        *bag.entry((g.narrative_id.clone(), g.category, opts.key(&g.surface))).or_default() += 1;
    }
    bag
}

fn prediction_bag(predictions: &BTreeMap<String, CandidateSet>, opts: MatchOptions) -> Bag {
    let mut bag = Bag::new();
    for (id, set) in predictions {
        for (category, c) in set.iter() {
            *bag.entry((id.clone(), category, opts.key(&c.surface))).or_default() += 1;
        }
    }
    bag
}

/// TP/FP/FN per category, in [`PiiCategory::ALL`] order. Narratives absent
/// from `predictions` count as predicting nothing.
pub fn score_per_type(gold: &[GoldAnnotation], predictions: &BTreeMap<String, CandidateSet>) -> Vec<TypeCounts> {
    score_per_type_with(gold, predictions, MatchOptions::default())
}

pub fn score_per_type_with(gold: &[GoldAnnotation], predictions: &BTreeMap<String, CandidateSet>, opts: MatchOptions) -> Vec<TypeCounts> {
    let gold = gold_bag(gold, opts);
    let pred = prediction_bag(predictions, opts);
    let mut counts: BTreeMap<PiiCategory, TypeCounts> =
        PiiCategory::ALL.into_iter().map(|c| (c, TypeCounts::new(c, 0, 0, 0))).collect();

    for (key, &g) in &gold {
        let p = pred.get(key).copied().unwrap_or(0);
        let entry = counts.get_mut(&key.1).expect("all categories present");
        let matched = g.min(p);
        entry.tp += matched;
        entry.fn_ += g - matched;
    }
    for (key, &p) in &pred {
        let g = gold.get(key).copied().unwrap_or(0);
        counts.get_mut(&key.1).expect("all categories present").fp += p - g.min(p);
    }
    counts.into_values().collect()
}

/// Binary narrative-level counts over every narrative in `corpus`.
pub fn score_narrative_level(gold: &[GoldAnnotation], predictions: &BTreeMap<String, CandidateSet>, corpus: &Corpus) -> BinaryCounts {
    let mut counts = BinaryCounts::default();
    for n in &corpus.narratives {
        let truth = gold.iter().any(|g| g.narrative_id == n.id);
        let predicted = predictions.get(&n.id).is_some_and(|s| !s.is_empty());
        match (truth, predicted) {
            (true, true) => counts.tp += 1,
            (false, true) => counts.fp += 1,
            (true, false) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport<T> {
    pub config_label: String,
    pub per_type: Vec<TypeMetrics<T>>,
    pub narrative_level: NarrativeMetrics<T>,
}

impl<T: MetricScalar> MetricsReport<T> {
    pub fn from_counts(config_label: impl Into<String>, per_type: &[TypeCounts], narrative: BinaryCounts) -> Self {
        MetricsReport {
            config_label: config_label.into(),
            per_type: per_type.iter().map(TypeCounts::metrics).collect(),
            narrative_level: narrative.metrics(),
        }
    }

    pub fn score(config_label: impl Into<String>, corpus: &Corpus, predictions: &BTreeMap<String, CandidateSet>) -> Self {
        Self::score_with(config_label, corpus, predictions, MatchOptions::default())
    }

    pub fn score_with(
        config_label: impl Into<String>,
        corpus: &Corpus,
        predictions: &BTreeMap<String, CandidateSet>,
        opts: MatchOptions,
    ) -> Self {
        let gold = corpus.gold();
        Self::from_counts(
            config_label,
            &score_per_type_with(gold, predictions, opts),
            score_narrative_level(gold, predictions, corpus),
        )
    }

    pub fn category(&self, category: PiiCategory) -> Option<&TypeMetrics<T>> {
        self.per_type.iter().find(|m| m.counts.category == category)
    }

    pub fn to_json(&self) -> Value {
        let num = |v: &Option<T>| v.as_ref().map(MetricScalar::to_f64);
        json!({
            "config_label": self.config_label,
            "per_type": self.per_type.iter().map(|m| json!({
                "category": m.counts.category,
                "tp": m.counts.tp,
                "fp": m.counts.fp,
                "fn": m.counts.fn_,
                "precision": num(&m.precision),
                "recall": num(&m.recall),
                "f1": num(&m.f1),
            })).collect::<Vec<_>>(),
            "narrative_level": {
                "tp": self.narrative_level.counts.tp,
                "fp": self.narrative_level.counts.fp,
                "fn": self.narrative_level.counts.fn_,
                "tn": self.narrative_level.counts.tn,
                "precision": num(&self.narrative_level.precision),
                "recall": num(&self.narrative_level.recall),
                "f1": num(&self.narrative_level.f1),
                "accuracy": num(&self.narrative_level.accuracy),
            }
        })
    }
}

fn category_title(category: PiiCategory) -> &'static str {
    match category {
        PiiCategory::Name => "Name",
        PiiCategory::Phone => "Phone Number",
        PiiCategory::Email => "Email",
        PiiCategory::HomeAddress => "Home address",
        PiiCategory::Alphanumeric => "Alphanumeric",
    }
}

/// Per-category precision/recall/F1 rows plus a narrative-level overall row.
pub fn metrics_table<T: MetricScalar>(reports: &[MetricsReport<T>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<14} {:<14} {:>9} {:>9} {:>9} {:>9}", "Model", "PII Category", "Precision", "Recall", "F1-score", "Accuracy");
    for report in reports {
        let order = [
            PiiCategory::Name,
            PiiCategory::Phone,
            PiiCategory::Email,
            PiiCategory::Alphanumeric,
            PiiCategory::HomeAddress,
        ];
        for cat in order {
            let Some(m) = report.category(cat) else { continue };
            let _ = writeln!(
                out,
                "{:<14} {:<14} {:>9} {:>9} {:>9} {:>9}",
                report.config_label,
                category_title(cat),
                display_metric(m.precision.as_ref()),
                display_metric(m.recall.as_ref()),
                display_metric(m.f1.as_ref()),
                "-"
            );
        }
        let n = &report.narrative_level;
        let _ = writeln!(
            out,
            "{:<14} {:<14} {:>9} {:>9} {:>9} {:>9}",
            report.config_label,
            "Overall",
            display_metric(n.precision.as_ref()),
            display_metric(n.recall.as_ref()),
            display_metric(n.f1.as_ref()),
            display_metric(n.accuracy.as_ref())
        );
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("an ablation table needs at least two configurations, got {0}")]
    TooFewConfigurations(usize),
}

/// TP/FP/FN for home address and alphanumeric identifiers, one column per
/// configuration, with arrows marking the desirable direction.
pub fn ablation_table<T: MetricScalar>(reports: &[MetricsReport<T>]) -> Result<String, EvalError> {
    if reports.len() < 2 {
        return Err(EvalError::TooFewConfigurations(reports.len()));
    }
    let cats = [(PiiCategory::HomeAddress, "Home Address"), (PiiCategory::Alphanumeric, "Alphanumeric Identifier")];
    let width = reports.iter().map(|r| r.config_label.chars().count()).max().unwrap_or(0).max(6);
    let group = reports.len() * (width + 3) - 3;

    let mut out = String::new();
    let _ = write!(out, "{:<8}", "");
    for (_, title) in cats {
        let _ = write!(out, "| {:<group$} ", title);
    }
    out.push('\n');
    let _ = write!(out, "{:<8}", "");
    for _ in cats {
        let labels: Vec<String> = reports.iter().map(|r| format!("{:<width$}", r.config_label)).collect();
        let _ = write!(out, "| {} ", labels.join(" | "));
    }
    out.push('\n');

    type Pick = fn(&TypeCounts) -> u64;
    let rows: [(&str, Pick); 3] = [("TP (↑)", |c| c.tp), ("FP (↓)", |c| c.fp), ("FN (↓)", |c| c.fn_)];
    for (label, pick) in rows {
        let _ = write!(out, "{label:<8}");
        for (cat, _) in cats {
            let cells: Vec<String> = reports
                .iter()
                .map(|r| {
                    let v = r.category(cat).map_or(0, |m| pick(&m.counts));
                    format!("{v:<width$}")
                })
                .collect();
            let _ = write!(out, "| {} ", cells.join(" | "));
        }
        out.push('\n');
    }
    Ok(out)
}

impl<T: MetricScalar> fmt::Display for MetricsReport<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&metrics_table(std::slice::from_ref(self)))
    }
}
